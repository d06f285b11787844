//! The particle mixed-Nash training loop.
//!
//! Each iteration `t` performs, in order:
//!
//! 1. draw one approximate Gibbs attack per selected sample with the
//!    projected Langevin chain, targeting the density
//!    `exp(E_{theta ~ mu_bar^(t)}[l] / beta)` over a sliding window of the
//!    averaged classifier (sampling happens *before* the classifier moves,
//!    so no attacker history is needed inside the step);
//! 2. move every particle along the batch-mean loss gradient evaluated at
//!    the attacked points (`theta_j -= (eta/|B|) sum grad_theta l`), using
//!    the pre-update particles;
//! 3. reweight particles multiplicatively with the same batch-mean losses
//!    (`w_j *= exp(-eta' lbar_j)`, renormalized);
//! 4. fold the new mixture into the running classifier average and the
//!    drawn attacks into the running attacker average (Frank-Wolfe step
//!    `avg^(t+1) = (t+1)/(t+2) avg^(t) + 1/(t+2) new`).
//!
//! The averaged pair — not the final iterate — is the algorithm's output
//! and the object the convergence guarantees speak about.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{self, Dataset, ThreatModel};
use crate::measures::{mw_update, AttackAverage, HistoryAverage, ParticleMixture};
use crate::sampler::{pla_sample, sample_uniform_ball, GibbsSpec, RngStream};
use crate::{eval, solver};

use super::{batch_losses, select_batch, EvalConfig, FratConfig, RunTrace, TraceRow};

/// Mutable state of a run: the current mixture and both running averages.
#[derive(Debug, Clone)]
pub struct FratState {
    /// Current mixture `mu^(t)`.
    pub mixture: ParticleMixture,
    /// Snapshots `mu^(0)..mu^(t)`; their mean is `mu_bar^(t)`.
    pub history: HistoryAverage,
    /// Per-sample attack atoms; their mean is `nu_bar^(t)`.
    pub attacks: AttackAverage,
    /// Completed iterations `t`.
    pub iteration: usize,
}

impl FratState {
    /// Draws initial particles and empty averages for a run.
    pub fn init(cfg: &FratConfig, dataset: &Dataset, threat: &ThreatModel) -> Result<Self> {
        cfg.validate()?;
        let stream = RngStream::new(cfg.seed);
        let dim_theta = dataset.dim() + 1;
        let particles = solver::init_particles(&stream, cfg.particles, dim_theta);
        let mixture = ParticleMixture::uniform(particles)?;
        let attacks = AttackAverage::new(threat.balls_for(dataset)?, cfg.attacker_history)?;
        Ok(FratState {
            history: HistoryAverage::new(mixture.clone()),
            mixture,
            attacks,
            iteration: 0,
        })
    }
}

/// Advances the state by one iteration and returns the game value that
/// drove the update: the mixture's mean loss at the attacked points,
/// evaluated before the particles move.
pub fn frat_step(
    state: &mut FratState,
    dataset: &Dataset,
    cfg: &FratConfig,
    stream: &RngStream,
) -> Result<f64> {
    cfg.validate()?;
    let n = dataset.len();
    if state.attacks.n_samples() != n {
        return Err(Error::invalid(format!(
            "state tracks {} samples, dataset has {n}",
            state.attacks.n_samples()
        )));
    }
    if state.mixture.dim_theta() != dataset.dim() + 1 {
        return Err(Error::invalid(format!(
            "mixture dimension {} does not match d_x + 1 = {}",
            state.mixture.dim_theta(),
            dataset.dim() + 1
        )));
    }
    let t = state.iteration;
    let batch = select_batch(n, cfg.minibatch, stream, t);
    let full_batch = batch.len() == n;

    // (1) Attacks against the windowed classifier average, pre-update.
    let attacked: Vec<(usize, Vec<f64>)> = {
        let window = state.history.window(cfg.pla.window);
        let attacks = &state.attacks;
        batch
            .par_iter()
            .map(|&i| -> Result<(usize, Vec<f64>)> {
                let sample = dataset.sample(i);
                let ball = attacks.ball(i);
                let mut rng = stream.derive(solver::PLA_PURPOSE, i as u64, t as u64);
                let init = sample_uniform_ball(ball, &mut rng);
                let spec = GibbsSpec { window, sample, ball, beta: cfg.beta };
                let x = pla_sample(&spec, &cfg.pla, &init, &mut rng)?;
                Ok((i, x))
            })
            .collect::<Result<_>>()?
    };

    // (2)+(3) Particle and weight updates from the pre-update mixture.
    let labels: Vec<f64> = dataset.samples().iter().map(|s| s.label()).collect();
    let (lbar, game_value) = batch_losses(&state.mixture, &attacked, &labels);
    let dim = state.mixture.dim_theta();
    let inv_b = 1.0 / attacked.len() as f64;
    let mut new_thetas = state.mixture.thetas_flat().to_vec();
    let mixture = &state.mixture;
    new_thetas
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(j, out)| {
            let theta = mixture.particle(j);
            let mut grad = vec![0.0; dim];
            let mut gbuf = vec![0.0; dim];
            for (i, x) in &attacked {
                game::grad_theta_into(theta, x, labels[*i], &mut gbuf);
                for (g, b) in grad.iter_mut().zip(&gbuf) {
                    *g += b;
                }
            }
            for k in 0..dim {
                out[k] = theta[k] - cfg.eta * inv_b * grad[k];
            }
        });
    let new_weights = mw_update(state.mixture.weights(), &lbar, cfg.eta_prime)?;
    let next = ParticleMixture::from_flat(new_thetas, dim, new_weights)?;

    // (4) Frank-Wolfe averages.
    state.history.push(next.clone(), t)?;
    if full_batch {
        let atoms: Vec<Vec<f64>> = attacked.iter().map(|(_, x)| x.clone()).collect();
        state.attacks.append(&atoms, t)?;
    } else {
        for (i, x) in attacked {
            state.attacks.append_one(i, x)?;
        }
    }
    state.mixture = next;
    state.iteration = t + 1;
    Ok(game_value)
}

/// A finished run: both averaged strategies plus the evaluation trace.
#[derive(Debug, Clone)]
pub struct FratOutcome {
    /// Classifier snapshots; `history.flatten()` is the averaged strategy.
    pub history: HistoryAverage,
    /// The averaged attacker (atoms retained only if configured).
    pub attacks: AttackAverage,
    /// Periodic robust metrics.
    pub trace: RunTrace,
}

/// Runs the solver for `cfg.iterations` steps, evaluating into the trace
/// at the configured interval (train tags are even, test tags odd, so the
/// two evaluations never share attack randomness).
pub fn frat_run(
    cfg: &FratConfig,
    dataset: &Dataset,
    threat: &ThreatModel,
    eval_cfg: &EvalConfig<'_>,
) -> Result<FratOutcome> {
    eval_cfg.validate()?;
    if let Some(test) = eval_cfg.test {
        if test.dim() != dataset.dim() {
            return Err(Error::invalid("test dataset dimension does not match training data"));
        }
    }
    let stream = RngStream::new(cfg.seed);
    let mut state = FratState::init(cfg, dataset, threat)?;
    let mut trace = RunTrace::new();
    let start = Instant::now();
    for t in 0..cfg.iterations {
        let game_value = frat_step(&mut state, dataset, cfg, &stream)?;
        if eval_cfg.row_due(t, cfg.iterations) {
            let snapshot = state.history.thin(eval_cfg.flatten_cap);
            let done = (t + 1) as u64;
            let train =
                eval::robust_metrics(&snapshot, dataset, threat, eval_cfg.k, &stream, 2 * done)?;
            let (test_loss, test_acc) = match eval_cfg.test {
                Some(ds) => {
                    let m = eval::robust_metrics(
                        &snapshot,
                        ds,
                        threat,
                        eval_cfg.k,
                        &stream,
                        2 * done + 1,
                    )?;
                    (m.robust_loss, m.robust_accuracy)
                }
                None => (train.robust_loss, train.robust_accuracy),
            };
            trace.push(TraceRow {
                iter: t + 1,
                robust_train_loss: train.robust_loss,
                robust_train_acc: train.robust_accuracy,
                robust_test_loss: test_loss,
                robust_test_acc: test_acc,
                game_value,
                wall_ms: start.elapsed().as_millis() as u64,
            })?;
            if eval_cfg.plateaued(&trace) {
                break;
            }
        }
    }
    Ok(FratOutcome { history: state.history, attacks: state.attacks, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{LabeledSample, NormKind};
    use crate::sampler::PlaConfig;
    use rand::prelude::*;
    use rand_distr::StandardNormal;

    fn toy_dataset() -> Dataset {
        Dataset::new(vec![
            LabeledSample::new(vec![-0.8], -1).unwrap(),
            LabeledSample::new(vec![0.9], 1).unwrap(),
        ])
        .unwrap()
    }

    fn toy_config() -> FratConfig {
        FratConfig {
            particles: 2,
            iterations: 3,
            eta: 0.1,
            eta_prime: 0.1,
            beta: 0.05,
            pla: PlaConfig { steps: 5, step_size: 1e-3, noise: 1.0, window: 4 },
            minibatch: 0,
            attacker_history: true,
            seed: 11,
        }
    }

    #[test]
    fn zero_step_sizes_freeze_the_mixture_but_grow_the_averages() {
        let dataset = toy_dataset();
        let threat = ThreatModel { radius: 0.3, norm: NormKind::L2 };
        let cfg = FratConfig { eta: 0.0, eta_prime: 0.0, ..toy_config() };
        let stream = RngStream::new(cfg.seed);
        let mut state = FratState::init(&cfg, &dataset, &threat).unwrap();
        let initial = state.mixture.clone();
        for _ in 0..3 {
            frat_step(&mut state, &dataset, &cfg, &stream).unwrap();
        }
        assert_eq!(state.mixture, initial);
        assert_eq!(state.history.len(), 4);
        assert_eq!(state.attacks.rounds(0), 3);
        assert_eq!(state.iteration, 3);
    }

    #[test]
    fn singleton_mixtures_keep_unit_weight() {
        let dataset = toy_dataset();
        let threat = ThreatModel { radius: 0.3, norm: NormKind::L2 };
        let cfg = FratConfig { particles: 1, ..toy_config() };
        let stream = RngStream::new(cfg.seed);
        let mut state = FratState::init(&cfg, &dataset, &threat).unwrap();
        for _ in 0..3 {
            frat_step(&mut state, &dataset, &cfg, &stream).unwrap();
            assert_eq!(state.mixture.weights(), &[1.0]);
        }
    }

    #[test]
    fn one_step_matches_a_straight_line_reimplementation() {
        let dataset = toy_dataset();
        let threat = ThreatModel { radius: 0.25, norm: NormKind::Linf };
        let cfg = toy_config();
        let stream = RngStream::new(cfg.seed);
        let mut state = FratState::init(&cfg, &dataset, &threat).unwrap();
        let theta0: Vec<Vec<f64>> =
            (0..2).map(|j| state.mixture.particle(j).to_vec()).collect();
        let w0 = state.mixture.weights().to_vec();
        let value = frat_step(&mut state, &dataset, &cfg, &stream).unwrap();

        // Straight-line re-derivation of the update equations. The attack
        // chain replays the same derived randomness: one uniform init in
        // the ball, then one Gaussian noise draw per coordinate per step.
        let n = dataset.len();
        let mut xs = Vec::new();
        for i in 0..n {
            let s = dataset.sample(i);
            let ball = threat.ball_for(s).unwrap();
            let mut rng = stream.derive(solver::PLA_PURPOSE, i as u64, 0);
            let mut x = sample_uniform_ball(&ball, &mut rng);
            for _ in 0..cfg.pla.steps {
                // Window holds only mu^(0): expected gradient under theta0.
                let mut drift = 0.0;
                for (j, th) in theta0.iter().enumerate() {
                    let margin = th[0] * x[0] + th[1];
                    let coeff = -s.label() * game::sigmoid(-s.label() * margin);
                    drift += w0[j] * coeff * th[0];
                }
                let scale = cfg.pla.step_size / (2.0 * cfg.beta);
                let xi: f64 = rng.sample(StandardNormal);
                x[0] += scale * drift + cfg.pla.noise * cfg.pla.step_size.sqrt() * xi;
                x = ball.project(&x).unwrap();
            }
            xs.push(x);
        }
        let mut expect_value = 0.0;
        for (j, th) in theta0.iter().enumerate() {
            let mut grad = vec![0.0; 2];
            let mut lbar = 0.0;
            for (i, x) in xs.iter().enumerate() {
                let y = dataset.sample(i).label();
                let margin = th[0] * x[0] + th[1];
                let coeff = -y * game::sigmoid(-y * margin);
                grad[0] += coeff * x[0];
                grad[1] += coeff;
                lbar += game::softplus(-y * margin);
            }
            lbar /= n as f64;
            expect_value += w0[j] * lbar;
            let expect_theta: Vec<f64> = (0..2)
                .map(|k| th[k] - cfg.eta / n as f64 * grad[k])
                .collect();
            let got = state.mixture.particle(j);
            for k in 0..2 {
                assert!(
                    (got[k] - expect_theta[k]).abs() <= 1e-12,
                    "particle {j} coord {k}: {} vs {}",
                    got[k],
                    expect_theta[k]
                );
            }
        }
        assert!((value - expect_value).abs() <= 1e-12);
        // Weight update: w exp(-eta' lbar), renormalized.
        let mut expect_w = Vec::new();
        for (j, th) in theta0.iter().enumerate() {
            let mut lbar = 0.0;
            for (i, x) in xs.iter().enumerate() {
                let y = dataset.sample(i).label();
                lbar += game::softplus(-y * (th[0] * x[0] + th[1]));
            }
            expect_w.push(w0[j] * (-cfg.eta_prime * lbar / n as f64).exp());
        }
        let z: f64 = expect_w.iter().sum();
        for (j, ew) in expect_w.iter().enumerate() {
            let got = state.mixture.weights()[j];
            assert!(
                (got - ew / z).abs() <= 1e-12,
                "weight {j}: {got} vs {}",
                ew / z
            );
        }
        // The drawn attacks entered the averages verbatim.
        for i in 0..n {
            assert_eq!(state.attacks.latest(i).unwrap(), xs[i].as_slice());
        }
    }

    #[test]
    fn zero_iterations_return_initial_strategies_and_an_empty_trace() {
        let dataset = toy_dataset();
        let threat = ThreatModel { radius: 0.3, norm: NormKind::L2 };
        let cfg = FratConfig { iterations: 0, ..toy_config() };
        let out = frat_run(&cfg, &dataset, &threat, &EvalConfig::default()).unwrap();
        assert!(out.trace.rows().is_empty());
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.attacks.rounds(0), 0);
    }

    #[test]
    fn identical_seeds_reproduce_the_trace_and_attacks_exactly() {
        let dataset = toy_dataset();
        let threat = ThreatModel { radius: 0.3, norm: NormKind::L2 };
        let cfg = FratConfig { iterations: 5, ..toy_config() };
        let eval_cfg = EvalConfig { interval: 2, k: 20, flatten_cap: 10, ..EvalConfig::default() };
        let a = frat_run(&cfg, &dataset, &threat, &eval_cfg).unwrap();
        let b = frat_run(&cfg, &dataset, &threat, &eval_cfg).unwrap();
        assert_eq!(
            a.trace.without_wall_times().to_csv_string(),
            b.trace.without_wall_times().to_csv_string()
        );
        assert_eq!(
            a.attacks.to_csv_string().unwrap(),
            b.attacks.to_csv_string().unwrap()
        );
        assert_eq!(a.trace.rows().last().unwrap().iter, 5);
        let other = frat_run(&FratConfig { seed: 12, ..cfg }, &dataset, &threat, &eval_cfg)
            .unwrap();
        assert_ne!(
            a.trace.without_wall_times().to_csv_string(),
            other.trace.without_wall_times().to_csv_string(),
            "a different seed must change the run"
        );
    }

    #[test]
    fn plateau_rule_stops_the_run_after_two_flat_rows() {
        let dataset = toy_dataset();
        // Zero radius and zero steps: every evaluation sees the identical
        // loss, so a strict plateau tolerance must stop at the second row.
        let threat = ThreatModel { radius: 0.0, norm: NormKind::L2 };
        let cfg = FratConfig { eta: 0.0, eta_prime: 0.0, iterations: 10, ..toy_config() };
        let eval_cfg = EvalConfig {
            interval: 1,
            k: 10,
            plateau: Some(1e-4),
            ..EvalConfig::default()
        };
        let out = frat_run(&cfg, &dataset, &threat, &eval_cfg).unwrap();
        assert_eq!(out.trace.rows().len(), 2, "run should stop once the loss is flat");
        let no_stop = frat_run(&cfg, &dataset, &threat, &EvalConfig { plateau: None, ..eval_cfg })
            .unwrap();
        assert_eq!(no_stop.trace.rows().len(), 10);
    }

    #[test]
    fn minibatch_runs_touch_only_selected_samples() {
        let samples = (0..5)
            .map(|i| {
                LabeledSample::new(vec![i as f64 / 2.0 - 1.0], if i % 2 == 0 { 1 } else { -1 })
                    .unwrap()
            })
            .collect();
        let dataset = Dataset::new(samples).unwrap();
        let threat = ThreatModel { radius: 0.2, norm: NormKind::L2 };
        let cfg = FratConfig { minibatch: 2, iterations: 6, ..toy_config() };
        let stream = RngStream::new(cfg.seed);
        let mut state = FratState::init(&cfg, &dataset, &threat).unwrap();
        for _ in 0..cfg.iterations {
            frat_step(&mut state, &dataset, &cfg, &stream).unwrap();
        }
        let total: usize = (0..5).map(|i| state.attacks.rounds(i)).sum();
        assert_eq!(total, 2 * 6, "every iteration contributes exactly the batch size");
        assert_eq!(state.history.len(), 7);
    }
}
