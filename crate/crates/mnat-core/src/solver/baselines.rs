//! Reference algorithms sharing the solver's RNG and trace plumbing.
//!
//! * [`sat_run`] — standard adversarial training of a single linear model:
//!   attack every sample, step on the mean attacked loss.
//! * [`atm_run`] — adversarial training of a mixture: the same point attack
//!   aimed at the mixture's expected loss, plus multiplicative weight
//!   updates. With one particle it reduces exactly to [`sat_run`].
//! * [`weight_only_run`] — a fixed candidate set whose weights follow
//!   multiplicative updates against either an exhaustive point attack
//!   (oracle) or Langevin draws from the entropy-regularized response
//!   (regularized). Candidate parameters never move.
//! * [`generate_candidates`] — rejection-samples random linear models that
//!   beat a fixed clean-accuracy floor, for the weight-only baselines.
//!
//! The point-attack baselines draw from the same derived RNG streams as
//! each other, so singleton-mixture equivalences hold bit for bit.

use std::time::Instant;

use rayon::prelude::*;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval;
use crate::game::{self, Ball, Dataset, LinearModel, ThreatModel};
use crate::measures::{mw_update, ParticleMixture};
use crate::sampler::{
    best_of_k_attack, pla_sample, sample_uniform_ball, GibbsSpec, PlaConfig, RngStream,
};
use crate::solver;

use super::{batch_losses, EvalConfig, RunTrace, TraceRow};

/// Attack used inside [`sat_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SatAttack {
    /// Evaluate `k` uniform draws plus the clean point, keep the worst.
    BestOfK {
        /// Number of uniform draws.
        k: usize,
    },
    /// Projected gradient ascent on the loss, started at the clean point.
    Ascent {
        /// Ascent steps.
        steps: usize,
        /// Ascent step size.
        step_size: f64,
    },
}

/// Configuration for standard adversarial training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatConfig {
    /// Iterations to run.
    pub iterations: usize,
    /// Gradient step size on the model parameters.
    pub eta: f64,
    /// Inner attack.
    pub attack: SatAttack,
    /// Root seed.
    pub seed: u64,
}

impl Default for SatConfig {
    fn default() -> Self {
        SatConfig {
            iterations: 2000,
            eta: 0.1,
            attack: SatAttack::BestOfK { k: 1000 },
            seed: 0,
        }
    }
}

impl SatConfig {
    fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::invalid("eta must be finite and >= 0"));
        }
        if let SatAttack::Ascent { step_size, .. } = self.attack {
            if !step_size.is_finite() || step_size < 0.0 {
                return Err(Error::invalid("ascent step size must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Result of [`sat_run`].
#[derive(Debug, Clone)]
pub struct SatOutcome {
    /// The trained model.
    pub model: LinearModel,
    /// Periodic robust metrics.
    pub trace: RunTrace,
}

fn ascent_attack(
    theta: &[f64],
    ball: &Ball,
    y: f64,
    steps: usize,
    step_size: f64,
) -> Result<Vec<f64>> {
    let mut x = ball.center.clone();
    let d = x.len();
    let mut g = vec![0.0; d];
    for step in 0..steps {
        g.iter_mut().for_each(|v| *v = 0.0);
        game::add_scaled_grad_x(theta, &x, y, 1.0, &mut g);
        for k in 0..d {
            x[k] += step_size * g[k];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                where_: "ascent attack state".into(),
                iteration: step,
            });
        }
        x = ball.project(&x)?;
    }
    Ok(x)
}

/// Adversarial training of a single linear model: per iteration, attack
/// every sample against the current parameters, then take one gradient
/// step on the mean attacked loss.
pub fn sat_run(
    cfg: &SatConfig,
    dataset: &Dataset,
    threat: &ThreatModel,
    eval_cfg: &EvalConfig<'_>,
) -> Result<SatOutcome> {
    cfg.validate()?;
    eval_cfg.validate()?;
    if let Some(test) = eval_cfg.test {
        if test.dim() != dataset.dim() {
            return Err(Error::invalid("test dataset dimension does not match training data"));
        }
    }
    let stream = RngStream::new(cfg.seed);
    let mut theta = solver::init_particles(&stream, 1, dataset.dim() + 1)
        .pop()
        .expect("one particle requested");
    let balls = threat.balls_for(dataset)?;
    let labels: Vec<f64> = dataset.samples().iter().map(|s| s.label()).collect();
    let n = dataset.len();
    let mut trace = RunTrace::new();
    let start = Instant::now();
    for t in 0..cfg.iterations {
        let theta_ref = &theta;
        let attacked: Vec<(usize, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(usize, Vec<f64>)> {
                let x = match cfg.attack {
                    SatAttack::BestOfK { k } => {
                        let mut rng =
                            stream.derive(solver::ATTACK_PURPOSE, i as u64, t as u64);
                        best_of_k_attack(
                            |x| game::loss_theta(theta_ref, x, labels[i]),
                            &balls[i],
                            k,
                            &mut rng,
                        )?
                        .0
                    }
                    SatAttack::Ascent { steps, step_size } => {
                        ascent_attack(theta_ref, &balls[i], labels[i], steps, step_size)?
                    }
                };
                Ok((i, x))
            })
            .collect::<Result<_>>()?;
        let view = ParticleMixture::new(vec![theta.clone()], vec![1.0])?;
        let (_, game_value) = batch_losses(&view, &attacked, &labels);
        let dim = theta.len();
        let mut grad = vec![0.0; dim];
        let mut gbuf = vec![0.0; dim];
        for (i, x) in &attacked {
            game::grad_theta_into(&theta, x, labels[*i], &mut gbuf);
            for (acc, gk) in grad.iter_mut().zip(&gbuf) {
                *acc += gk;
            }
        }
        let inv_b = 1.0 / attacked.len() as f64;
        for k in 0..dim {
            theta[k] = theta[k] - cfg.eta * inv_b * grad[k];
        }
        if eval_cfg.row_due(t, cfg.iterations) {
            let current = ParticleMixture::new(vec![theta.clone()], vec![1.0])?;
            push_metrics_row(
                &mut trace,
                &current,
                dataset,
                threat,
                eval_cfg,
                &stream,
                t + 1,
                game_value,
                &start,
            )?;
            if eval_cfg.plateaued(&trace) {
                break;
            }
        }
    }
    Ok(SatOutcome { model: LinearModel::from_theta(&theta)?, trace })
}

/// Configuration for adversarial training of mixtures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmConfig {
    /// Iterations to run.
    pub iterations: usize,
    /// Particle count.
    pub particles: usize,
    /// Gradient step size on particle parameters.
    pub eta: f64,
    /// Multiplicative weight step size.
    pub eta_prime: f64,
    /// Draws for the best-of-k attack.
    pub k: usize,
    /// Root seed.
    pub seed: u64,
}

impl Default for AtmConfig {
    fn default() -> Self {
        AtmConfig { iterations: 2000, particles: 20, eta: 0.1, eta_prime: 0.1, k: 1000, seed: 0 }
    }
}

impl AtmConfig {
    fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("particle count must be >= 1"));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::invalid("eta must be finite and >= 0"));
        }
        if !self.eta_prime.is_finite() || self.eta_prime < 0.0 {
            return Err(Error::invalid("eta' must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Result of [`atm_run`].
#[derive(Debug, Clone)]
pub struct AtmOutcome {
    /// The trained mixture (final iterate; this baseline keeps no average).
    pub mixture: ParticleMixture,
    /// Periodic robust metrics.
    pub trace: RunTrace,
}

/// Adversarial training of a mixture: a best-of-k point attack against the
/// mixture's expected loss, a gradient step on every particle, and a
/// multiplicative weight update, each iteration.
pub fn atm_run(
    cfg: &AtmConfig,
    dataset: &Dataset,
    threat: &ThreatModel,
    eval_cfg: &EvalConfig<'_>,
) -> Result<AtmOutcome> {
    cfg.validate()?;
    eval_cfg.validate()?;
    if let Some(test) = eval_cfg.test {
        if test.dim() != dataset.dim() {
            return Err(Error::invalid("test dataset dimension does not match training data"));
        }
    }
    let stream = RngStream::new(cfg.seed);
    let dim = dataset.dim() + 1;
    let mut mixture =
        ParticleMixture::uniform(solver::init_particles(&stream, cfg.particles, dim))?;
    let balls = threat.balls_for(dataset)?;
    let labels: Vec<f64> = dataset.samples().iter().map(|s| s.label()).collect();
    let n = dataset.len();
    let mut trace = RunTrace::new();
    let start = Instant::now();
    for t in 0..cfg.iterations {
        let attacked: Vec<(usize, Vec<f64>)> = {
            let mixture_ref = &mixture;
            (0..n)
                .into_par_iter()
                .map(|i| -> Result<(usize, Vec<f64>)> {
                    let mut rng = stream.derive(solver::ATTACK_PURPOSE, i as u64, t as u64);
                    let (x, _) = best_of_k_attack(
                        |x| mixture_ref.expected_loss(x, labels[i]),
                        &balls[i],
                        cfg.k,
                        &mut rng,
                    )?;
                    Ok((i, x))
                })
                .collect::<Result<_>>()?
        };
        let (lbar, game_value) = batch_losses(&mixture, &attacked, &labels);
        let inv_b = 1.0 / attacked.len() as f64;
        let mut new_thetas = mixture.thetas_flat().to_vec();
        {
            let mixture_ref = &mixture;
            new_thetas.par_chunks_mut(dim).enumerate().for_each(|(j, out)| {
                let theta = mixture_ref.particle(j);
                let mut grad = vec![0.0; dim];
                let mut gbuf = vec![0.0; dim];
                for (i, x) in &attacked {
                    game::grad_theta_into(theta, x, labels[*i], &mut gbuf);
                    for (acc, gk) in grad.iter_mut().zip(&gbuf) {
                        *acc += gk;
                    }
                }
                for k in 0..dim {
                    out[k] = theta[k] - cfg.eta * inv_b * grad[k];
                }
            });
        }
        let new_weights = mw_update(mixture.weights(), &lbar, cfg.eta_prime)?;
        mixture = ParticleMixture::from_flat(new_thetas, dim, new_weights)?;
        if eval_cfg.row_due(t, cfg.iterations) {
            push_metrics_row(
                &mut trace,
                &mixture,
                dataset,
                threat,
                eval_cfg,
                &stream,
                t + 1,
                game_value,
                &start,
            )?;
            if eval_cfg.plateaued(&trace) {
                break;
            }
        }
    }
    Ok(AtmOutcome { mixture, trace })
}

/// Attacker used by the weight-only baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightOnlyMode {
    /// Best-of-k point attack on the mixture's expected loss.
    Oracle,
    /// One Langevin draw per sample from the entropy-regularized response
    /// to the current mixture.
    Regularized,
}

/// Configuration for the weight-only baselines.
#[derive(Debug, Clone)]
pub struct WeightOnlyConfig {
    /// Iterations to run.
    pub iterations: usize,
    /// Multiplicative weight step size.
    pub eta_prime: f64,
    /// Draws for the oracle attack.
    pub k: usize,
    /// Temperature of the regularized response.
    pub beta: f64,
    /// Langevin chain tuning for the regularized response.
    pub pla: PlaConfig,
    /// Root seed.
    pub seed: u64,
}

impl Default for WeightOnlyConfig {
    fn default() -> Self {
        WeightOnlyConfig {
            iterations: 2000,
            eta_prime: 0.1,
            k: 1000,
            beta: 0.01,
            pla: PlaConfig::default(),
            seed: 0,
        }
    }
}

impl WeightOnlyConfig {
    fn validate(&self, mode: WeightOnlyMode) -> Result<()> {
        if !self.eta_prime.is_finite() || self.eta_prime < 0.0 {
            return Err(Error::invalid("eta' must be finite and >= 0"));
        }
        if mode == WeightOnlyMode::Regularized && (!self.beta.is_finite() || self.beta <= 0.0) {
            return Err(Error::invalid("beta must be finite and > 0"));
        }
        Ok(())
    }
}

/// Result of [`weight_only_run`].
#[derive(Debug, Clone)]
pub struct WeightOnlyOutcome {
    /// The candidates with their final weights.
    pub mixture: ParticleMixture,
    /// Periodic robust metrics.
    pub trace: RunTrace,
}

/// Reweights a fixed candidate set against the configured attacker. The
/// candidate parameters never change; only the simplex weights move.
pub fn weight_only_run(
    mode: WeightOnlyMode,
    candidates: &[LinearModel],
    cfg: &WeightOnlyConfig,
    dataset: &Dataset,
    threat: &ThreatModel,
    eval_cfg: &EvalConfig<'_>,
) -> Result<WeightOnlyOutcome> {
    cfg.validate(mode)?;
    eval_cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::invalid("weight-only training needs at least one candidate"));
    }
    let thetas: Vec<Vec<f64>> = candidates.iter().map(|m| m.theta()).collect();
    for theta in &thetas {
        if theta.len() != dataset.dim() + 1 {
            return Err(Error::invalid("candidate dimension does not match the dataset"));
        }
    }
    let stream = RngStream::new(cfg.seed);
    let mut mixture = ParticleMixture::uniform(thetas)?;
    let balls = threat.balls_for(dataset)?;
    let labels: Vec<f64> = dataset.samples().iter().map(|s| s.label()).collect();
    let n = dataset.len();
    let mut trace = RunTrace::new();
    let start = Instant::now();
    for t in 0..cfg.iterations {
        let attacked: Vec<(usize, Vec<f64>)> = {
            let mixture_ref = &mixture;
            (0..n)
                .into_par_iter()
                .map(|i| -> Result<(usize, Vec<f64>)> {
                    let x = match mode {
                        WeightOnlyMode::Oracle => {
                            let mut rng =
                                stream.derive(solver::ATTACK_PURPOSE, i as u64, t as u64);
                            best_of_k_attack(
                                |x| mixture_ref.expected_loss(x, labels[i]),
                                &balls[i],
                                cfg.k,
                                &mut rng,
                            )?
                            .0
                        }
                        WeightOnlyMode::Regularized => {
                            let mut rng =
                                stream.derive(solver::PLA_PURPOSE, i as u64, t as u64);
                            let init = sample_uniform_ball(&balls[i], &mut rng);
                            let spec = GibbsSpec {
                                window: std::slice::from_ref(mixture_ref),
                                sample: dataset.sample(i),
                                ball: &balls[i],
                                beta: cfg.beta,
                            };
                            pla_sample(&spec, &cfg.pla, &init, &mut rng)?
                        }
                    };
                    Ok((i, x))
                })
                .collect::<Result<_>>()?
        };
        let (lbar, game_value) = batch_losses(&mixture, &attacked, &labels);
        let new_weights = mw_update(mixture.weights(), &lbar, cfg.eta_prime)?;
        mixture = mixture.with_weights(new_weights)?;
        if eval_cfg.row_due(t, cfg.iterations) {
            push_metrics_row(
                &mut trace,
                &mixture,
                dataset,
                threat,
                eval_cfg,
                &stream,
                t + 1,
                game_value,
                &start,
            )?;
            if eval_cfg.plateaued(&trace) {
                break;
            }
        }
    }
    Ok(WeightOnlyOutcome { mixture, trace })
}

/// Rejection-samples `count` linear models with every parameter — the
/// weights and the bias — uniform in `[-7, 7]`, keeping only candidates
/// whose clean accuracy on `dataset` strictly exceeds 0.6. Errors after
/// `max_tries` proposals.
///
/// The bias is sampled rather than pinned to zero so the candidate pool
/// can contain models with an offset decision boundary; on laws whose
/// optimal separator does not pass through the origin, zero-bias pools
/// are capped far below the best linear accuracy no matter how the
/// mixing weights are chosen.
pub fn generate_candidates(
    count: usize,
    dataset: &Dataset,
    stream: &RngStream,
    max_tries: usize,
) -> Result<Vec<LinearModel>> {
    let mut rng = stream.derive(solver::CANDIDATE_PURPOSE, 0, 0);
    let d = dataset.dim();
    let n = dataset.len() as f64;
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        if tries >= max_tries {
            return Err(Error::Runtime(format!(
                "candidate generation exhausted {max_tries} proposals with {}/{count} accepted",
                out.len()
            )));
        }
        tries += 1;
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-7.0..=7.0)).collect();
        let b = rng.random_range(-7.0..=7.0);
        let model = LinearModel::new(w, b)?;
        let theta = model.theta();
        let correct = dataset
            .samples()
            .iter()
            .filter(|s| game::predict(&theta, &s.x) == s.y)
            .count();
        if correct as f64 / n > 0.6 {
            out.push(model);
        }
    }
    Ok(out)
}

/// Evaluates robust metrics for `classifier` and appends a trace row at
/// iteration `done`, reusing the run's stream with even tags for train and
/// odd tags for test.
#[allow(clippy::too_many_arguments)]
fn push_metrics_row(
    trace: &mut RunTrace,
    classifier: &ParticleMixture,
    dataset: &Dataset,
    threat: &ThreatModel,
    eval_cfg: &EvalConfig<'_>,
    stream: &RngStream,
    done: usize,
    game_value: f64,
    start: &Instant,
) -> Result<()> {
    let tag = done as u64;
    let train = eval::robust_metrics(classifier, dataset, threat, eval_cfg.k, stream, 2 * tag)?;
    let (test_loss, test_acc) = match eval_cfg.test {
        Some(ds) => {
            let m = eval::robust_metrics(classifier, ds, threat, eval_cfg.k, stream, 2 * tag + 1)?;
            (m.robust_loss, m.robust_accuracy)
        }
        None => (train.robust_loss, train.robust_accuracy),
    };
    trace.push(TraceRow {
        iter: done,
        robust_train_loss: train.robust_loss,
        robust_train_acc: train.robust_accuracy,
        robust_test_loss: test_loss,
        robust_test_acc: test_acc,
        game_value,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}
