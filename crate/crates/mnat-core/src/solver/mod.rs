//! Training loops: the particle mixed-Nash solver and pointwise baselines.
//!
//! [`frat::frat_run`] implements the flagship algorithm — per iteration it
//! draws one approximate Gibbs attack per (selected) sample against the
//! windowed classifier average, takes a gradient step on every particle,
//! reweights the particles multiplicatively, and folds both players'
//! strategies into Frank-Wolfe running averages. [`grid_exact`] replaces
//! sampling by exact densities on quadrature grids for small diagnostics,
//! and [`baselines`] holds the pointwise and weight-only reference
//! algorithms sharing the same RNG and evaluation plumbing.
//!
//! Every run is a pure function of `(config, dataset, seed)`: randomness
//! comes exclusively from [`RngStream`] derivations keyed by purpose,
//! sample, and iteration, so thread scheduling cannot change results.

pub mod baselines;
pub mod frat;
pub mod grid_exact;

pub use baselines::{
    atm_run, generate_candidates, sat_run, weight_only_run, AtmConfig, AtmOutcome, SatAttack,
    SatConfig, SatOutcome, WeightOnlyConfig, WeightOnlyMode, WeightOnlyOutcome,
};
pub use frat::{frat_run, frat_step, FratOutcome, FratState};
pub use grid_exact::{frat_run_grid_exact, GridExactConfig, GridExactOutcome};

use rand::prelude::*;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::game::Dataset;
use crate::measures::ParticleMixture;
use crate::sampler::{PlaConfig, RngStream};

/// RNG purpose for drawing initial particles.
pub const INIT_PURPOSE: &str = "init-particles";
/// RNG purpose for point attacks (best-of-k and ascent).
pub const ATTACK_PURPOSE: &str = "atk";
/// RNG purpose for Langevin attack chains.
pub const PLA_PURPOSE: &str = "pla";
/// RNG purpose for minibatch selection.
pub const MINIBATCH_PURPOSE: &str = "minibatch";
/// RNG purpose for weight-only candidate generation.
pub const CANDIDATE_PURPOSE: &str = "candidates";

/// Configuration of the particle mixed-Nash solver.
#[derive(Debug, Clone, PartialEq)]
pub struct FratConfig {
    /// Particle count `M`.
    pub particles: usize,
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Parameter step `eta` (Euler step of the transport rate).
    pub eta: f64,
    /// Weight step `eta'` (Euler step of the birth-death rate).
    pub eta_prime: f64,
    /// Entropy temperature `beta` of the attacker's regularizer.
    pub beta: f64,
    /// Langevin chain tuning (steps, step size, noise, window).
    pub pla: PlaConfig,
    /// Samples attacked per iteration; 0 attacks the full batch.
    pub minibatch: usize,
    /// Whether the attack average retains its atom history (needed to
    /// evaluate or save the averaged attacker afterwards).
    pub attacker_history: bool,
    /// Root seed for all derived randomness.
    pub seed: u64,
}

impl Default for FratConfig {
    fn default() -> Self {
        FratConfig {
            particles: 20,
            iterations: 2000,
            eta: 0.1,
            eta_prime: 0.1,
            beta: 0.01,
            pla: PlaConfig::default(),
            minibatch: 0,
            attacker_history: true,
            seed: 0,
        }
    }
}

impl FratConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("particle count must be >= 1"));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::invalid(format!(
                "parameter step eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if !self.eta_prime.is_finite() || self.eta_prime < 0.0 {
            return Err(Error::invalid(format!(
                "weight step eta' must be finite and >= 0, got {}",
                self.eta_prime
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::invalid(format!(
                "temperature beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// How often and how thoroughly runs evaluate themselves into the trace.
#[derive(Debug, Clone, Copy)]
pub struct EvalConfig<'a> {
    /// Emit a trace row every this many iterations (a final row is always
    /// emitted when `iterations > 0`). 0 disables periodic rows.
    pub interval: usize,
    /// Draws for the best-of-k evaluation attack.
    pub k: usize,
    /// Held-out data for the test columns; when absent, the test columns
    /// repeat the training metrics.
    pub test: Option<&'a Dataset>,
    /// Snapshot cap when flattening a history average for evaluation.
    pub flatten_cap: usize,
    /// Optional plateau stopping rule: stop early when the robust training
    /// loss changes by less than this relative amount between consecutive
    /// trace rows.
    pub plateau: Option<f64>,
}

impl Default for EvalConfig<'_> {
    fn default() -> Self {
        EvalConfig { interval: 100, k: 1000, test: None, flatten_cap: 100, plateau: None }
    }
}

impl EvalConfig<'_> {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("evaluation needs k >= 1 attack draws"));
        }
        if self.flatten_cap == 0 {
            return Err(Error::invalid("evaluation flatten cap must be >= 1"));
        }
        if let Some(tol) = self.plateau {
            if !tol.is_finite() || tol < 0.0 {
                return Err(Error::invalid("plateau tolerance must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Whether a trace row is due after completing iteration `t` (0-based)
    /// of a run with `total` iterations.
    pub(crate) fn row_due(&self, t: usize, total: usize) -> bool {
        let done = t + 1;
        (self.interval > 0 && done % self.interval == 0) || done == total
    }

    /// Whether the plateau rule fires on the trace's last two rows.
    pub(crate) fn plateaued(&self, trace: &RunTrace) -> bool {
        let Some(tol) = self.plateau else { return false };
        let rows = trace.rows();
        let [.., prev, last] = rows else { return false };
        let change = (last.robust_train_loss - prev.robust_train_loss).abs();
        change <= tol * prev.robust_train_loss.abs().max(1e-12)
    }
}

/// One evaluated trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// Completed iterations when the row was evaluated.
    pub iter: usize,
    /// Best-of-k attacked loss on the training data.
    pub robust_train_loss: f64,
    /// Accuracy at the attacked training points.
    pub robust_train_acc: f64,
    /// Best-of-k attacked loss on the test data.
    pub robust_test_loss: f64,
    /// Accuracy at the attacked test points.
    pub robust_test_acc: f64,
    /// Mean attacked loss that drove the iteration's update.
    pub game_value: f64,
    /// Milliseconds since the run started.
    pub wall_ms: u64,
}

/// An append-only evaluation trace with strictly increasing iterations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    rows: Vec<TraceRow>,
}

impl RunTrace {
    /// An empty trace.
    pub fn new() -> Self {
        RunTrace::default()
    }

    /// The rows in evaluation order.
    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    /// Appends a row; its iteration must exceed the previous row's.
    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iter <= last.iter {
                return Err(Error::invalid(format!(
                    "trace iterations must increase strictly: {} after {}",
                    row.iter, last.iter
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// CSV header used by [`RunTrace::to_csv_string`].
    pub const CSV_HEADER: &'static str =
        "iter,robust_train_loss,robust_train_acc,robust_test_loss,robust_test_acc,game_value,wall_ms";

    /// Renders the trace as CSV (header plus one row per evaluation).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter,
                r.robust_train_loss,
                r.robust_train_acc,
                r.robust_test_loss,
                r.robust_test_acc,
                r.game_value,
                r.wall_ms
            ));
        }
        out
    }

    /// Parses a trace back from [`RunTrace::to_csv_string`] output.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == Self::CSV_HEADER => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected trace header '{}', got {:?}",
                    Self::CSV_HEADER,
                    other
                )))
            }
        }
        let mut trace = RunTrace::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Parse(format!(
                    "trace row {} has {} fields, expected 7",
                    idx + 1,
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("trace row {}: {e}", idx + 1)))
            };
            trace.push(TraceRow {
                iter: fields[0]
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("trace row {}: {e}", idx + 1)))?,
                robust_train_loss: num(fields[1])?,
                robust_train_acc: num(fields[2])?,
                robust_test_loss: num(fields[3])?,
                robust_test_acc: num(fields[4])?,
                game_value: num(fields[5])?,
                wall_ms: fields[6]
                    .parse::<u64>()
                    .map_err(|e| Error::Parse(format!("trace row {}: {e}", idx + 1)))?,
            })?;
        }
        Ok(trace)
    }

    /// The trace with every `wall_ms` zeroed, for run-to-run comparisons
    /// that must ignore timing.
    pub fn without_wall_times(&self) -> RunTrace {
        RunTrace {
            rows: self.rows.iter().map(|r| TraceRow { wall_ms: 0, ..*r }).collect(),
        }
    }
}

/// Draws `m` particles with independent standard Gaussian coordinates in
/// parameter space, using the shared init stream. Every solver initializes
/// through this helper so single-model baselines start at exactly the
/// first particle a mixture run would draw.
pub fn init_particles(stream: &RngStream, m: usize, dim_theta: usize) -> Vec<Vec<f64>> {
    let mut rng = stream.derive(INIT_PURPOSE, 0, 0);
    (0..m)
        .map(|_| (0..dim_theta).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Selects the attacked sample indices for one iteration: the full batch,
/// or `minibatch` distinct indices in ascending order.
pub(crate) fn select_batch(
    n: usize,
    minibatch: usize,
    stream: &RngStream,
    t: usize,
) -> Vec<usize> {
    if minibatch == 0 || minibatch >= n {
        return (0..n).collect();
    }
    let mut rng = stream.derive(MINIBATCH_PURPOSE, 0, t as u64);
    let mut pool: Vec<usize> = (0..n).collect();
    for k in 0..minibatch {
        let j = rng.random_range(k..n);
        pool.swap(k, j);
    }
    let mut batch = pool[..minibatch].to_vec();
    batch.sort_unstable();
    batch
}

/// Per-particle mean losses and the weighted game value at attacked
/// points; shared by the mixture solvers and the trace.
pub(crate) fn batch_losses(
    mixture: &ParticleMixture,
    attacked: &[(usize, Vec<f64>)],
    labels: &[f64],
) -> (Vec<f64>, f64) {
    let m = mixture.len();
    let inv = 1.0 / attacked.len() as f64;
    let mut lbar = vec![0.0; m];
    for j in 0..m {
        let theta = mixture.particle(j);
        let mut acc = 0.0;
        for (i, x) in attacked {
            acc += crate::game::loss_theta(theta, x, labels[*i]);
        }
        lbar[j] = acc * inv;
    }
    let game_value = mixture
        .weights()
        .iter()
        .zip(&lbar)
        .map(|(w, l)| w * l)
        .sum();
    (lbar, game_value)
}
