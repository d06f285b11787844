//! Mixed-Nash adversarial training.
//!
//! This crate trains randomized linear classifiers against randomized
//! adversarial perturbations by treating robust training as a two-player
//! zero-sum game over probability measures: the learner mixes model
//! parameters, the attacker mixes perturbations of each training point,
//! and entropy regularization on the attacker makes the equilibrium
//! unique and smooth enough to approximate.
//!
//! The flagship solver ([`solver::frat_run`]) interleaves three pieces:
//!
//! * a weighted particle ensemble for the learner, moved by
//!   Wasserstein–Fisher–Rao dynamics (gradient descent on particle
//!   positions plus multiplicative weight updates),
//! * projected Langevin sampling ([`sampler::pla_sample`]) approximating
//!   the attacker's Gibbs best response against a window of averaged
//!   classifier snapshots, and
//! * Frank–Wolfe style running averages of both players' strategies
//!   ([`measures::HistoryAverage`], [`measures::AttackAverage`]), which
//!   carry the convergence guarantees.
//!
//! Pointwise baselines (adversarial training with single-point attacks,
//! both best-of-K and gradient ascent), exact small-dimensional
//! diagnostics (equilibrium gaps, Lyapunov traces, regularization-bias
//! bounds in [`eval`]), and a reproducible experiment harness
//! ([`harness`]) round out the toolkit.

pub mod error;
pub mod eval;
pub mod game;
pub mod harness;
pub mod measures;
pub mod sampler;
pub mod solver;

pub use error::{Error, Result};
pub use game::{Ball, Dataset, LabeledSample, LinearModel, NormKind, ThreatModel};
pub use measures::{AttackAverage, BallGrid, GridDensity, HistoryAverage, ParticleMixture};
pub use sampler::{GibbsSpec, PlaConfig, RngStream};
