//! Randomness plumbing and attack samplers.
//!
//! The attacker's approximate best response is a Gibbs measure on the
//! perturbation ball with density proportional to
//! `exp(E_{theta ~ mu_bar}[l(theta, (x, y))] / beta)`. [`pla_sample`]
//! draws from it with a projected Langevin chain that *ascends* the
//! expected loss:
//!
//! ```text
//! x <- Proj_B( x + (lambda / (2 beta)) E[grad_x l] + omega sqrt(lambda) xi ),
//! xi ~ N(0, I)
//! ```
//!
//! The expectation runs over a sliding window of mixture snapshots
//! (uniform across snapshots, weighted within each). Cheaper point
//! attacks — best-of-K uniform draws and exhaustive grid search — share
//! this module so every solver uses identical candidate logic.
//!
//! All randomness flows through [`RngStream`]: a root seed plus a
//! `(purpose, sample, iteration)` derivation key yields an independent,
//! reproducible stream, so parallel schedules cannot change results.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{Ball, LabeledSample, NormKind};
use crate::measures::{BallGrid, ParticleMixture};

/// Deterministic factory for independent random streams.
///
/// Two streams derived with equal `(root, purpose, sample, iteration)`
/// keys produce identical byte sequences; any difference in the key
/// decorrelates them. Streams are cheap to derive on demand, which keeps
/// per-sample work order-independent under parallel execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    root: u64,
}

impl RngStream {
    /// Creates a stream factory from a root seed.
    pub fn new(root: u64) -> Self {
        RngStream { root }
    }

    /// The root seed.
    pub fn root(&self) -> u64 {
        self.root
    }

    /// Derives the RNG keyed by `(purpose, sample, iteration)`.
    pub fn derive(&self, purpose: &str, sample: u64, iteration: u64) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.root.to_le_bytes());
        hasher.update((purpose.len() as u64).to_le_bytes());
        hasher.update(purpose.as_bytes());
        hasher.update(sample.to_le_bytes());
        hasher.update(iteration.to_le_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }
}

/// Specification of the Gibbs target for one sample's attack chain.
#[derive(Debug, Clone, Copy)]
pub struct GibbsSpec<'a> {
    /// Mixture snapshots approximating the averaged classifier `mu_bar`.
    pub window: &'a [ParticleMixture],
    /// The sample whose perturbation is being sampled.
    pub sample: &'a LabeledSample,
    /// The perturbation ball `B_eps(x_i)`.
    pub ball: &'a Ball,
    /// Entropy temperature `beta > 0`.
    pub beta: f64,
}

impl GibbsSpec<'_> {
    fn validate(&self) -> Result<()> {
        if self.window.is_empty() {
            return Err(Error::invalid("Gibbs window must be non-empty"));
        }
        let d = self.sample.dim();
        if self.ball.dim() != d {
            return Err(Error::invalid(format!(
                "ball dimension {} does not match sample dimension {d}",
                self.ball.dim()
            )));
        }
        if self.window.iter().any(|m| m.dim_theta() != d + 1) {
            return Err(Error::invalid(format!(
                "window mixtures must have theta dimension {}",
                d + 1
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

    /// Expected loss over the window at a point.
    pub fn expected_loss(&self, x: &[f64]) -> f64 {
        let y = self.sample.label();
        let inv = 1.0 / self.window.len() as f64;
        self.window
            .iter()
            .map(|m| m.expected_loss(x, y))
            .sum::<f64>()
            * inv
    }

    /// Adds the expected loss gradient in `x` over the window into `acc`.
    pub fn add_expected_grad(&self, x: &[f64], acc: &mut [f64]) {
        let y = self.sample.label();
        let inv = 1.0 / self.window.len() as f64;
        for m in self.window {
            m.add_scaled_expected_grad_x(x, y, inv, acc);
        }
    }
}

/// Tuning for the projected Langevin chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaConfig {
    /// Inner chain steps `S` per outer iteration.
    pub steps: usize,
    /// Discretization step size `lambda`.
    pub step_size: f64,
    /// Noise scale `omega` (0 gives deterministic projected ascent).
    pub noise: f64,
    /// Sliding-window size: how many recent mixture snapshots approximate
    /// the averaged classifier in the chain's drift.
    pub window: usize,
}

impl Default for PlaConfig {
    fn default() -> Self {
        PlaConfig { steps: 50, step_size: 1e-3, noise: 1.0, window: 100 }
    }
}

impl PlaConfig {
    fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::invalid(format!(
                "PLA step size must be finite and > 0, got {}",
                self.step_size
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::invalid(format!(
                "PLA noise scale must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if self.window == 0 {
            return Err(Error::invalid("PLA window must be >= 1"));
        }
        Ok(())
    }
}

/// Draws a point uniformly from a norm ball.
///
/// Linf balls use independent uniform coordinates; L2 balls use a
/// Gaussian direction and a radius scaled by `U^(1/d)`. A zero radius
/// returns the center without consuming randomness.
pub fn sample_uniform_ball(ball: &Ball, rng: &mut impl Rng) -> Vec<f64> {
    if ball.radius == 0.0 {
        return ball.center.clone();
    }
    match ball.norm {
        NormKind::Linf => ball
            .center
            .iter()
            .map(|c| rng.random_range(c - ball.radius..=c + ball.radius))
            .collect(),
        NormKind::L2 => {
            let d = ball.dim();
            loop {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= 1e-12 {
                    continue; // a numerically zero direction carries no angle
                }
                let u: f64 = rng.random::<f64>();
                let r = ball.radius * u.powf(1.0 / d as f64);
                return ball
                    .center
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + v / norm * r)
                    .collect();
            }
        }
    }
}

/// Runs the projected Langevin chain and returns its endpoint.
///
/// The chain starts at `init` (which must lie in the ball), takes
/// `cfg.steps` ascent steps with drift `(lambda / (2 beta)) E[grad_x l]`
/// and noise `omega sqrt(lambda) xi`, and projects onto the ball after
/// every step. A non-finite gradient or chain state aborts with a runtime
/// error naming the inner iteration.
pub fn pla_sample(
    spec: &GibbsSpec<'_>,
    cfg: &PlaConfig,
    init: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    pla_sample_impl(spec, cfg, init, rng, None)
}

/// Like [`pla_sample`], also appending the window-expected loss after
/// every inner step to `trace` (chain diagnostics).
pub fn pla_sample_traced(
    spec: &GibbsSpec<'_>,
    cfg: &PlaConfig,
    init: &[f64],
    rng: &mut impl Rng,
    trace: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    pla_sample_impl(spec, cfg, init, rng, Some(trace))
}

fn pla_sample_impl(
    spec: &GibbsSpec<'_>,
    cfg: &PlaConfig,
    init: &[f64],
    rng: &mut impl Rng,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<Vec<f64>> {
    spec.validate()?;
    cfg.validate()?;
    if init.len() != spec.ball.dim() {
        return Err(Error::invalid(format!(
            "chain init dimension {} does not match ball dimension {}",
            init.len(),
            spec.ball.dim()
        )));
    }
    if !spec.ball.contains(init) {
        return Err(Error::invalid(
            "chain init must lie inside the perturbation ball",
        ));
    }
    let d = init.len();
    let drift = cfg.step_size / (2.0 * spec.beta);
    let noise = cfg.noise * cfg.step_size.sqrt();
    let mut x = init.to_vec();
    let mut g = vec![0.0; d];
    for step in 0..cfg.steps {
        g.iter_mut().for_each(|v| *v = 0.0);
        spec.add_expected_grad(&x, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { where_: "PLA drift gradient".into(), iteration: step });
        }
        for k in 0..d {
            x[k] += drift * g[k];
            if noise > 0.0 {
                let xi: f64 = rng.sample(StandardNormal);
                x[k] += noise * xi;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { where_: "PLA chain state".into(), iteration: step });
        }
        x = spec.ball.project(&x)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(spec.expected_loss(&x));
        }
    }
    Ok(x)
}

/// Renders chain diagnostics as CSV with header `sample_id,step,loss`.
pub fn chain_trace_csv(traces: &[(usize, Vec<f64>)]) -> String {
    let mut out = String::from("sample_id,step,loss\n");
    for (sample_id, losses) in traces {
        for (step, loss) in losses.iter().enumerate() {
            out.push_str(&format!("{sample_id},{step},{loss}\n"));
        }
    }
    out
}

/// Point attack: evaluates `loss_eval` at `k` uniform draws plus the ball
/// center (as candidate `k + 1`) and returns the maximizing point with its
/// value. The first candidate attaining the maximum wins ties. Non-finite
/// evaluations abort with a runtime error.
pub fn best_of_k_attack<F: Fn(&[f64]) -> f64>(
    loss_eval: F,
    ball: &Ball,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for idx in 0..=k {
        let candidate = if idx < k {
            sample_uniform_ball(ball, rng)
        } else {
            ball.center.clone()
        };
        let value = loss_eval(&candidate);
        if !value.is_finite() {
            return Err(Error::Runtime(format!(
                "best-of-k attack: loss evaluated to {value} at candidate {idx}"
            )));
        }
        match &best {
            Some((_, v)) if value <= *v => {}
            _ => best = Some((candidate, value)),
        }
    }
    Ok(best.expect("at least the center is evaluated"))
}

/// Exhaustive attack on a midpoint grid over the ball; returns the
/// maximizing cell center and its value, breaking ties toward the lowest
/// cell index. Requires resolution >= 2 and dimension <= 3.
pub fn grid_max_attack<F: Fn(&[f64]) -> f64>(
    loss_eval: F,
    ball: &Ball,
    resolution: usize,
) -> Result<(Vec<f64>, f64)> {
    if resolution < 2 {
        return Err(Error::invalid(format!(
            "grid attack resolution must be >= 2, got {resolution}"
        )));
    }
    let grid = BallGrid::new(ball, resolution)?;
    let mut best_idx = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (idx, point) in grid.iter_points().enumerate() {
        let value = loss_eval(point);
        if !value.is_finite() {
            return Err(Error::Runtime(format!(
                "grid attack: loss evaluated to {value} at cell {idx}"
            )));
        }
        if value > best_val {
            best_val = value;
            best_idx = idx;
        }
    }
    Ok((grid.point(best_idx).to_vec(), best_val))
}
