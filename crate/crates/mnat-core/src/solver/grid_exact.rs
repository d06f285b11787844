//! Grid-exact diagnostic mode of the training loop.
//!
//! Instead of sampling attacks, each iteration computes the attacker's
//! exact logit best response on a fixed quadrature grid per sample: the
//! Gibbs cell probabilities `softmax(lbar / beta)` for the running average
//! loss `lbar = E_{theta ~ mu_bar^(t)}[l]`. The classifier update then uses
//! exact grid expectations of the loss and its gradient under that density.
//! Keeping the attacker as an explicit density (rather than atoms) makes
//! the entropy term — and with it the regularized duality gap and the
//! Lyapunov potentials — well defined, at a cost that restricts the mode
//! to low-dimensional inputs and small datasets.
//!
//! The per-cell averaged loss is maintained as a running sum over mixture
//! snapshots, so an iteration costs `O(N * cells * M)` instead of
//! re-averaging the whole history.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::GridCheckpoint;
use crate::game::{self, Dataset, ThreatModel};
use crate::measures::{mw_update, BallGrid, GridDensity, HistoryAverage, ParticleMixture};
use crate::sampler::RngStream;
use crate::solver;

/// Upper bound on the total grid-cell count across samples; keeps a run's
/// per-iteration cost near a few hundred million flops at worst.
const MAX_TOTAL_CELLS: usize = 400_000;

/// Configuration for a grid-exact run. Sampling-related knobs of the
/// particle solver (Langevin chain, minibatching) do not appear: the
/// attacker is computed exactly and every iteration uses the full dataset.
#[derive(Debug, Clone)]
pub struct GridExactConfig {
    /// Number of classifier particles.
    pub particles: usize,
    /// Iterations to run.
    pub iterations: usize,
    /// Particle gradient step size.
    pub eta: f64,
    /// Weight multiplicative step size.
    pub eta_prime: f64,
    /// Entropy regularization strength.
    pub beta: f64,
    /// Grid resolution per axis over each sample's perturbation ball.
    pub resolution: usize,
    /// Iteration counts (1-based, after that many completed iterations) at
    /// which to record a diagnostic checkpoint.
    pub checkpoints: Vec<usize>,
    /// Root seed; the only randomness is the particle initialization.
    pub seed: u64,
}

impl Default for GridExactConfig {
    fn default() -> Self {
        GridExactConfig {
            particles: 4,
            iterations: 100,
            eta: 0.1,
            eta_prime: 0.1,
            beta: 0.05,
            resolution: 400,
            checkpoints: Vec::new(),
            seed: 0,
        }
    }
}

impl GridExactConfig {
    fn validate(&self, iterations_known: usize) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("particle count must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid("eta must be finite and nonnegative"));
        }
        if !(self.eta_prime.is_finite() && self.eta_prime >= 0.0) {
            return Err(Error::invalid("eta_prime must be finite and nonnegative"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid("beta must be finite and positive"));
        }
        if self.resolution < 2 {
            return Err(Error::invalid("grid resolution must be at least 2"));
        }
        for &t in &self.checkpoints {
            if t == 0 || t > iterations_known {
                return Err(Error::invalid(format!(
                    "checkpoint {t} outside 1..={iterations_known}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of a grid-exact run.
#[derive(Debug, Clone)]
pub struct GridExactOutcome {
    /// Classifier snapshots `mu^(0)..mu^(T)`.
    pub history: HistoryAverage,
    /// Per-sample averaged attacker densities `nu_bar^(T)` (mean of the
    /// `T` per-iteration responses; empty when `iterations == 0`).
    pub nu_avg: Vec<GridDensity>,
    /// Diagnostic checkpoints in ascending iteration order.
    pub checkpoints: Vec<GridCheckpoint>,
    /// Per-iteration game values `L(mu^(s), nu^(s))`.
    pub values: Vec<f64>,
}

/// Runs the solver with exact grid attacker responses.
pub fn frat_run_grid_exact(
    cfg: &GridExactConfig,
    dataset: &Dataset,
    threat: &ThreatModel,
) -> Result<GridExactOutcome> {
    cfg.validate(cfg.iterations)?;
    let n = dataset.len();
    let d = dataset.dim();
    if d > 2 {
        return Err(Error::unsupported(format!(
            "grid-exact mode supports at most 2 input dimensions, got {d}"
        )));
    }
    let balls = threat.balls_for(dataset)?;
    let grids: Vec<Arc<BallGrid>> = balls
        .iter()
        .map(|b| BallGrid::new(b, cfg.resolution).map(Arc::new))
        .collect::<Result<_>>()?;
    let total_cells: usize = grids.iter().map(|g| g.n_points()).sum();
    if total_cells > MAX_TOTAL_CELLS {
        return Err(Error::unsupported(format!(
            "grid-exact run would hold {total_cells} cells across {n} samples \
             (limit {MAX_TOTAL_CELLS}); lower the resolution or shrink the dataset"
        )));
    }

    let stream = RngStream::new(cfg.seed);
    let particles = solver::init_particles(&stream, cfg.particles, d + 1);
    let mut mixture = ParticleMixture::uniform(particles)?;
    let mut history = HistoryAverage::new(mixture.clone());

    let mut cellsum: Vec<Vec<f64>> = grids.iter().map(|g| vec![0.0; g.n_points()]).collect();
    let mut nusum: Vec<Vec<f64>> = grids.iter().map(|g| vec![0.0; g.n_points()]).collect();
    let mut values = Vec::with_capacity(cfg.iterations);
    let mut loss_sum = 0.0;
    let wanted: BTreeSet<usize> = cfg.checkpoints.iter().copied().collect();
    let mut recorded = Vec::new();
    let labels: Vec<f64> = dataset.samples().iter().map(|s| s.label()).collect();

    for s in 0..cfg.iterations {
        // Per-cell expected loss under the current mixture mu^(s). Feeding
        // it into the running sum turns the sum into E_{mu_bar^(s)}[l].
        let percell: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let g = &grids[i];
                (0..g.n_points())
                    .map(|c| mixture.expected_loss(g.point(c), labels[i]))
                    .collect()
            })
            .collect();
        let denom = (s + 1) as f64;
        let mut nu_cur = Vec::with_capacity(n);
        for i in 0..n {
            for (acc, cur) in cellsum[i].iter_mut().zip(&percell[i]) {
                *acc += cur;
            }
            let scores: Vec<f64> = cellsum[i].iter().map(|v| v / denom).collect();
            nu_cur.push(GridDensity::gibbs(Arc::clone(&grids[i]), &scores, cfg.beta)?);
        }

        // Game value of the pre-update pair (mu^(s), nu^(s)), plus the
        // running attacker average.
        let mut l_s = 0.0;
        for i in 0..n {
            let probs = nu_cur[i].probs();
            l_s += game::dot(probs, &percell[i]);
            for (acc, q) in nusum[i].iter_mut().zip(probs) {
                *acc += q;
            }
        }
        l_s /= n as f64;
        loss_sum += l_s;
        values.push(l_s);

        if wanted.contains(&(s + 1)) {
            let nu_avg = (0..n)
                .map(|i| {
                    let probs = nusum[i].iter().map(|v| v / denom).collect();
                    GridDensity::new(Arc::clone(&grids[i]), probs)
                })
                .collect::<Result<Vec<_>>>()?;
            recorded.push(GridCheckpoint {
                t: s + 1,
                classifier_avg: history.flatten(),
                nu_response: nu_cur.clone(),
                nu_avg,
                run_mean_loss: loss_sum / denom,
            });
        }

        // Classifier update with exact grid expectations, from the
        // pre-update particles.
        let dim = d + 1;
        let stepped: Vec<(Vec<f64>, f64)> = (0..mixture.len())
            .into_par_iter()
            .map(|j| {
                let theta = mixture.particle(j);
                let mut grad = vec![0.0; dim];
                let mut gbuf = vec![0.0; dim];
                let mut lbar = 0.0;
                for i in 0..n {
                    let g = &grids[i];
                    let probs = nu_cur[i].probs();
                    for c in 0..g.n_points() {
                        let q = probs[c];
                        if q == 0.0 {
                            continue;
                        }
                        let x = g.point(c);
                        lbar += q * game::loss_theta(theta, x, labels[i]);
                        game::grad_theta_into(theta, x, labels[i], &mut gbuf);
                        for (acc, gk) in grad.iter_mut().zip(&gbuf) {
                            *acc += q * gk;
                        }
                    }
                }
                let inv_n = 1.0 / n as f64;
                let next: Vec<f64> =
                    (0..dim).map(|k| theta[k] - cfg.eta * inv_n * grad[k]).collect();
                (next, lbar * inv_n)
            })
            .collect();
        let lbars: Vec<f64> = stepped.iter().map(|(_, l)| *l).collect();
        let new_weights = mw_update(mixture.weights(), &lbars, cfg.eta_prime)?;
        let thetas: Vec<Vec<f64>> = stepped.into_iter().map(|(t, _)| t).collect();
        let next = ParticleMixture::new(thetas, new_weights)?;
        history.push(next.clone(), s)?;
        mixture = next;
    }

    let nu_avg = if cfg.iterations == 0 {
        Vec::new()
    } else {
        let denom = cfg.iterations as f64;
        (0..n)
            .map(|i| {
                let probs = nusum[i].iter().map(|v| v / denom).collect();
                GridDensity::new(Arc::clone(&grids[i]), probs)
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(GridExactOutcome { history, nu_avg, checkpoints: recorded, values })
}
