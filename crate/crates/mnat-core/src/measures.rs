//! Strategy measures for both players and operations on them.
//!
//! The classifier plays a finitely supported mixture over parameter
//! vectors ([`ParticleMixture`]); iterate averaging keeps the whole
//! trajectory of mixtures ([`HistoryAverage`], uniform over snapshots).
//! The attacker plays one measure per sample: either an empirical average
//! of attack atoms ([`AttackAverage`], uniform per sample) or a density on
//! a quadrature grid over the perturbation ball ([`GridDensity`]).
//!
//! Running (Frank-Wolfe style) averages `m_{t+1} = (t+1)/(t+2) m_t +
//! 1/(t+2) delta_new` are stored exactly as snapshot/atom lists, so the
//! recursive update and the arithmetic mean coincide by construction;
//! flattening a history into one big mixture is an explicit, documented
//! view rather than an implicit conversion.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{self, Ball, Dataset, LinearModel, NormKind};

/// Tolerance on `|sum(weights) - 1|` for mixture weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Tolerance on `|sum(probs) - 1|` for grid densities.
pub const PROB_SUM_TOL: f64 = 1e-10;

/// A finitely supported randomized classifier: `sum_j w_j delta_{theta_j}`.
///
/// Particles are stored flat (`M * d_theta` values, row-major) so that hot
/// loops stream through them without pointer chasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMixture {
    thetas: Vec<f64>,
    dim_theta: usize,
    weights: Vec<f64>,
}

impl ParticleMixture {
    /// Builds a mixture from per-particle parameter vectors and weights.
    ///
    /// Weights must be non-negative, finite, and sum to one within
    /// [`WEIGHT_SUM_TOL`]; all particles must share one dimension >= 2.
    pub fn new(particles: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::invalid("mixture must have at least one particle"));
        };
        let dim = first.len();
        if particles.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("particles must share one dimension"));
        }
        let mut thetas = Vec::with_capacity(particles.len() * dim);
        for p in &particles {
            thetas.extend_from_slice(p);
        }
        Self::from_flat(thetas, dim, weights)
    }

    /// Builds a mixture from row-major flat particle storage.
    pub fn from_flat(thetas: Vec<f64>, dim_theta: usize, weights: Vec<f64>) -> Result<Self> {
        if dim_theta < 2 {
            return Err(Error::invalid(format!(
                "theta dimension must be >= 2 (weights plus bias), got {dim_theta}"
            )));
        }
        if thetas.is_empty() || thetas.len() % dim_theta != 0 {
            return Err(Error::invalid(format!(
                "flat particle storage length {} is not a non-zero multiple of dim {dim_theta}",
                thetas.len()
            )));
        }
        let m = thetas.len() / dim_theta;
        if weights.len() != m {
            return Err(Error::invalid(format!(
                "{} weights for {m} particles",
                weights.len()
            )));
        }
        if thetas.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("particles must be finite"));
        }
        validate_simplex(&weights, WEIGHT_SUM_TOL)?;
        Ok(ParticleMixture { thetas, dim_theta, weights })
    }

    /// Uniform mixture over the given particles.
    pub fn uniform(particles: Vec<Vec<f64>>) -> Result<Self> {
        let m = particles.len();
        if m == 0 {
            return Err(Error::invalid("mixture must have at least one particle"));
        }
        Self::new(particles, vec![1.0 / m as f64; m])
    }

    /// A single deterministic model as a degenerate mixture.
    pub fn singleton(model: &LinearModel) -> Self {
        // One particle, weight one: the validations cannot fail.
        ParticleMixture {
            thetas: model.theta(),
            dim_theta: model.dim_x() + 1,
            weights: vec![1.0],
        }
    }

    /// Replaces the weights, keeping the particles.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.thetas.clone(), self.dim_theta, weights)
    }

    /// Number of particles `M`.
    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Always `false`; mixtures are non-empty by construction.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Stacked parameter dimension `d_theta = d_x + 1`.
    #[inline]
    pub fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    /// Borrow particle `j` as a theta slice.
    #[inline]
    pub fn particle(&self, j: usize) -> &[f64] {
        &self.thetas[j * self.dim_theta..(j + 1) * self.dim_theta]
    }

    /// Borrow the weights.
    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Borrow the flat row-major particle storage.
    #[inline]
    pub fn thetas_flat(&self) -> &[f64] {
        &self.thetas
    }

    /// Iterate over `(weight, theta)` atoms.
    #[inline]
    pub fn atoms(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.weights
            .iter()
            .copied()
            .zip(self.thetas.chunks_exact(self.dim_theta))
    }

    /// Expected loss `E_{theta ~ mu}[l(theta, (x, y))]` at one point.
    pub fn expected_loss(&self, x: &[f64], y: f64) -> f64 {
        debug_assert_eq!(x.len() + 1, self.dim_theta);
        let mut acc = 0.0;
        for (w, theta) in self.atoms() {
            acc += w * game::loss_theta(theta, x, y);
        }
        acc
    }

    /// Adds `scale * E_{theta ~ mu}[grad_x l(theta, (x, y))]` into `acc`.
    pub fn add_scaled_expected_grad_x(&self, x: &[f64], y: f64, scale: f64, acc: &mut [f64]) {
        debug_assert_eq!(x.len() + 1, self.dim_theta);
        for (w, theta) in self.atoms() {
            game::add_scaled_grad_x(theta, x, y, scale * w, acc);
        }
    }

    /// Probability that a draw from the mixture classifies `(x, y)`
    /// correctly, with `sign(0)` counted as `+1`.
    pub fn expected_accuracy(&self, x: &[f64], y: i8) -> f64 {
        game::expected_accuracy(self.atoms(), x, y)
    }

    /// Serializes as CSV with header `particle_id,weight,theta_0,...,theta_{d-1}`.
    pub fn to_csv_string(&self) -> String {
        let d = self.dim_theta;
        let mut out = String::from("particle_id,weight");
        for k in 0..d {
            let _ = write!(out, ",theta_{k}");
        }
        out.push('\n');
        for (j, (w, theta)) in self.atoms().enumerate() {
            let _ = write!(out, "{j},{w}");
            for v in theta {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV format written by [`ParticleMixture::to_csv_string`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("mixture CSV is empty".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "particle_id" || cols[1] != "weight" {
            return Err(Error::Parse(format!(
                "mixture CSV header must be particle_id,weight,theta_0,..., got {header:?}"
            )));
        }
        for (k, col) in cols[2..].iter().enumerate() {
            let expected = format!("theta_{k}");
            if *col != expected {
                return Err(Error::Parse(format!(
                    "mixture CSV header column {} is {col:?}, expected {expected:?}",
                    k + 2
                )));
            }
        }
        let d = cols.len() - 2;
        let mut weights = Vec::new();
        let mut particles = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::Parse(format!(
                    "mixture CSV row {} has {} fields, expected {}",
                    idx + 1,
                    fields.len(),
                    d + 2
                )));
            }
            let id = usize::from_str(fields[0])
                .map_err(|e| Error::Parse(format!("mixture CSV row {}: bad id: {e}", idx + 1)))?;
            if id != idx {
                return Err(Error::Parse(format!(
                    "mixture CSV row {}: particle_id {id} out of order",
                    idx + 1
                )));
            }
            let parse = |f: &str| {
                f64::from_str(f)
                    .map_err(|e| Error::Parse(format!("mixture CSV row {}: {e}", idx + 1)))
            };
            weights.push(parse(fields[1])?);
            let mut theta = Vec::with_capacity(d);
            for f in &fields[2..] {
                theta.push(parse(f)?);
            }
            particles.push(theta);
        }
        ParticleMixture::new(particles, weights)
    }

    /// Writes the CSV representation to a file.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Reads a mixture from a CSV file.
    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

fn validate_simplex(weights: &[f64], tol: f64) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::invalid(format!(
            "weights must sum to 1 within {tol:e}, got {sum}"
        )));
    }
    Ok(())
}

/// Multiplicative-weights update `w_j <- w_j exp(-step * loss_j)`,
/// normalized, computed in log space for stability.
///
/// Equal losses leave the weights unchanged up to rounding; the output
/// always lies on the simplex.
pub fn mw_update(weights: &[f64], losses: &[f64], step: f64) -> Result<Vec<f64>> {
    if weights.len() != losses.len() {
        return Err(Error::invalid(format!(
            "{} weights but {} losses",
            weights.len(),
            losses.len()
        )));
    }
    validate_simplex(weights, WEIGHT_SUM_TOL)?;
    if !step.is_finite() || step < 0.0 {
        return Err(Error::invalid(format!(
            "step size must be finite and >= 0, got {step}"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("losses must be finite"));
    }
    // Log-space scores; zero weights stay at -inf and survive as zero mass.
    let scores: Vec<f64> = weights
        .iter()
        .zip(losses)
        .map(|(w, l)| w.ln() - step * l)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("all weights are zero"));
    }
    let unnorm: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / sum).collect())
}

/// The running average of classifier mixtures `mu_bar_t = (1/(t+1)) sum_{s<=t} mu_s`.
///
/// Snapshots are stored exactly; the average is realized on demand by
/// [`HistoryAverage::flatten`], which concatenates the atoms of every
/// snapshot with weights divided by the snapshot count.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryAverage {
    snapshots: Vec<ParticleMixture>,
}

impl HistoryAverage {
    /// Starts a history at `mu_0`.
    pub fn new(initial: ParticleMixture) -> Self {
        HistoryAverage { snapshots: vec![initial] }
    }

    /// Number of completed averaging updates (snapshots minus one).
    #[inline]
    pub fn updates(&self) -> usize {
        self.snapshots.len() - 1
    }

    /// Number of stored snapshots.
    #[inline]
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    /// Always `false`; a history holds at least its initial snapshot.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Borrow all snapshots, oldest first.
    #[inline]
    pub fn snapshots(&self) -> &[ParticleMixture] {
        &self.snapshots
    }

    /// The most recent snapshot.
    #[inline]
    pub fn latest(&self) -> &ParticleMixture {
        self.snapshots.last().expect("history is never empty")
    }

    /// Appends `mu_{t+1}`, realizing the averaging step
    /// `mu_bar <- (t+1)/(t+2) mu_bar + 1/(t+2) mu_{t+1}`.
    ///
    /// `t` must equal the number of updates applied so far.
    pub fn push(&mut self, mixture: ParticleMixture, t: usize) -> Result<()> {
        if t != self.updates() {
            return Err(Error::invalid(format!(
                "averaging step out of order: expected t = {}, got t = {t}",
                self.updates()
            )));
        }
        if mixture.dim_theta() != self.snapshots[0].dim_theta() {
            return Err(Error::invalid(format!(
                "snapshot dimension {} does not match history dimension {}",
                mixture.dim_theta(),
                self.snapshots[0].dim_theta()
            )));
        }
        self.snapshots.push(mixture);
        Ok(())
    }

    /// The last `window` snapshots (all of them if fewer exist).
    pub fn window(&self, window: usize) -> &[ParticleMixture] {
        let w = window.max(1).min(self.snapshots.len());
        &self.snapshots[self.snapshots.len() - w..]
    }

    /// Flattens the uniform-over-snapshots average into a single mixture.
    pub fn flatten(&self) -> ParticleMixture {
        Self::flatten_slice(&self.snapshots)
    }

    /// Flattens an arbitrary snapshot slice with uniform snapshot weights.
    pub fn flatten_slice(snapshots: &[ParticleMixture]) -> ParticleMixture {
        assert!(!snapshots.is_empty(), "cannot flatten an empty window");
        let dim = snapshots[0].dim_theta();
        let mut thetas = Vec::new();
        let mut weights = Vec::new();
        for snap in snapshots {
            thetas.extend_from_slice(snap.thetas_flat());
            weights.extend(snap.weights().iter().map(|w| w / snapshots.len() as f64));
        }
        // Renormalize exactly so long histories still satisfy the simplex
        // tolerance after accumulated rounding.
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
        ParticleMixture::from_flat(thetas, dim, weights)
            .expect("flattened history is a valid mixture")
    }

    /// A deterministic thinned view for evaluation: at most `cap`
    /// snapshots at uniform stride (always including the first and the
    /// latest), flattened into one mixture. This approximates the full
    /// average when evaluating it exactly would be too expensive.
    pub fn thin(&self, cap: usize) -> ParticleMixture {
        let cap = cap.max(1);
        let s = self.snapshots.len();
        if s <= cap {
            return self.flatten();
        }
        if cap == 1 {
            return self.latest().clone();
        }
        let mut picked: Vec<&ParticleMixture> = Vec::with_capacity(cap);
        let mut last = usize::MAX;
        for k in 0..cap {
            let idx = (k as f64 * (s - 1) as f64 / (cap - 1) as f64).round() as usize;
            if idx != last {
                picked.push(&self.snapshots[idx]);
                last = idx;
            }
        }
        let owned: Vec<ParticleMixture> = picked.into_iter().cloned().collect();
        Self::flatten_slice(&owned)
    }
}

/// The running average of attack measures, one per sample:
/// `nu_bar_i = uniform over the atoms appended for sample i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackAverage {
    balls: Vec<Ball>,
    atoms: Vec<Vec<Vec<f64>>>,
    counts: Vec<usize>,
    updates: usize,
    retain: bool,
}

impl AttackAverage {
    /// Creates an empty average over the given per-sample balls.
    ///
    /// With `retain = false` only the latest atom per sample is stored
    /// (enough to warm-start chains); measure-level queries then require
    /// at most one update, and gap diagnostics are unavailable.
    pub fn new(balls: Vec<Ball>, retain: bool) -> Result<Self> {
        if balls.is_empty() {
            return Err(Error::invalid("attack average needs at least one ball"));
        }
        let dim = balls[0].dim();
        if balls.iter().any(|b| b.dim() != dim) {
            return Err(Error::invalid("balls must share one dimension"));
        }
        let n = balls.len();
        Ok(AttackAverage {
            balls,
            atoms: vec![Vec::new(); n],
            counts: vec![0; n],
            updates: 0,
            retain,
        })
    }

    /// Number of samples.
    #[inline]
    pub fn n_samples(&self) -> usize {
        self.balls.len()
    }

    /// Ambient dimension of the atoms.
    #[inline]
    pub fn dim(&self) -> usize {
        self.balls[0].dim()
    }

    /// Number of full-batch appends applied.
    #[inline]
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Whether the full atom history is stored.
    #[inline]
    pub fn retains_history(&self) -> bool {
        self.retain
    }

    /// The ball constraining sample `i`.
    #[inline]
    pub fn ball(&self, i: usize) -> &Ball {
        &self.balls[i]
    }

    /// Total atoms appended for sample `i` (including discarded ones).
    #[inline]
    pub fn rounds(&self, i: usize) -> usize {
        self.counts[i]
    }

    fn check_atom(&self, i: usize, atom: &[f64]) -> Result<()> {
        if i >= self.balls.len() {
            return Err(Error::invalid(format!(
                "sample index {i} out of range for {} samples",
                self.balls.len()
            )));
        }
        if atom.len() != self.dim() {
            return Err(Error::invalid(format!(
                "atom dimension {} does not match ball dimension {}",
                atom.len(),
                self.dim()
            )));
        }
        if !self.balls[i].contains(atom) {
            return Err(Error::invalid(format!(
                "atom for sample {i} lies outside its perturbation ball \
                 (distance {} > radius {})",
                self.balls[i].distance(atom),
                self.balls[i].radius
            )));
        }
        Ok(())
    }

    fn push_atom(&mut self, i: usize, atom: Vec<f64>) {
        if self.retain {
            self.atoms[i].push(atom);
        } else {
            self.atoms[i].clear();
            self.atoms[i].push(atom);
        }
        self.counts[i] += 1;
    }

    /// Appends one atom per sample, realizing the averaging step
    /// `nu_bar_i <- t/(t+1) nu_bar_i + 1/(t+1) delta_{atom_i}`.
    ///
    /// `t` must equal the number of full-batch appends applied so far, and
    /// every atom must lie in its sample's ball.
    pub fn append(&mut self, new_atoms: &[Vec<f64>], t: usize) -> Result<()> {
        if t != self.updates {
            return Err(Error::invalid(format!(
                "averaging step out of order: expected t = {}, got t = {t}",
                self.updates
            )));
        }
        if new_atoms.len() != self.n_samples() {
            return Err(Error::invalid(format!(
                "{} atoms for {} samples",
                new_atoms.len(),
                self.n_samples()
            )));
        }
        for (i, atom) in new_atoms.iter().enumerate() {
            self.check_atom(i, atom)?;
        }
        for (i, atom) in new_atoms.iter().enumerate() {
            self.push_atom(i, atom.clone());
        }
        self.updates += 1;
        Ok(())
    }

    /// Appends an atom for a single sample (minibatch path). Per-sample
    /// atom counts may then differ; each `nu_bar_i` stays uniform over its
    /// own atoms.
    pub fn append_one(&mut self, i: usize, atom: Vec<f64>) -> Result<()> {
        self.check_atom(i, &atom)?;
        self.push_atom(i, atom);
        Ok(())
    }

    /// The most recent atom for sample `i`, if any atom was ever appended.
    pub fn latest(&self, i: usize) -> Option<&[f64]> {
        self.atoms[i].last().map(|a| a.as_slice())
    }

    /// Whether measure-level queries reflect every appended atom.
    pub fn is_complete(&self) -> bool {
        self.retain || self.counts.iter().all(|&c| c <= 1)
    }

    pub(crate) fn require_complete(&self) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::unsupported(
                "attack history was discarded; rerun with retained history \
                 to evaluate the averaged attack measure"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// The stored atoms for sample `i`.
    pub fn atoms(&self, i: usize) -> &[Vec<f64>] {
        &self.atoms[i]
    }

    /// `E_{x ~ nu_bar_i}[f(x)]` with uniform weight over sample `i`'s atoms.
    pub fn expected<F: Fn(&[f64]) -> f64>(&self, i: usize, f: F) -> Result<f64> {
        self.require_complete()?;
        let atoms = &self.atoms[i];
        if atoms.is_empty() {
            return Err(Error::invalid(format!(
                "no atoms appended yet for sample {i}"
            )));
        }
        let sum: f64 = atoms.iter().map(|a| f(a)).sum();
        Ok(sum / atoms.len() as f64)
    }

    /// Serializes as CSV with header `sample_id,atom_id,x1,...,xd`.
    pub fn to_csv_string(&self) -> Result<String> {
        self.require_complete()?;
        let d = self.dim();
        let mut out = String::from("sample_id,atom_id");
        for k in 1..=d {
            let _ = write!(out, ",x{k}");
        }
        out.push('\n');
        for (i, atoms) in self.atoms.iter().enumerate() {
            for (a, atom) in atoms.iter().enumerate() {
                let _ = write!(out, "{i},{a}");
                for v in atom {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        Ok(out)
    }

    /// Reads atoms written by [`AttackAverage::to_csv_string`] into a
    /// retained average over the given balls.
    pub fn from_csv_str(text: &str, balls: Vec<Ball>) -> Result<Self> {
        let mut avg = AttackAverage::new(balls, true)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("attack CSV is empty".into()))?;
        let d = avg.dim();
        let mut expected_header = String::from("sample_id,atom_id");
        for k in 1..=d {
            let _ = write!(expected_header, ",x{k}");
        }
        if header != expected_header {
            return Err(Error::Parse(format!(
                "attack CSV header is {header:?}, expected {expected_header:?}"
            )));
        }
        let mut max_rounds = 0usize;
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::Parse(format!(
                    "attack CSV row {} has {} fields, expected {}",
                    idx + 1,
                    fields.len(),
                    d + 2
                )));
            }
            let i = usize::from_str(fields[0])
                .map_err(|e| Error::Parse(format!("attack CSV row {}: {e}", idx + 1)))?;
            let a = usize::from_str(fields[1])
                .map_err(|e| Error::Parse(format!("attack CSV row {}: {e}", idx + 1)))?;
            let mut atom = Vec::with_capacity(d);
            for f in &fields[2..] {
                atom.push(
                    f64::from_str(f)
                        .map_err(|e| Error::Parse(format!("attack CSV row {}: {e}", idx + 1)))?,
                );
            }
            if i >= avg.n_samples() || a != avg.atoms[i].len() {
                return Err(Error::Parse(format!(
                    "attack CSV row {}: atom ({i}, {a}) out of order",
                    idx + 1
                )));
            }
            avg.check_atom(i, &atom)
                .map_err(|e| Error::Parse(format!("attack CSV row {}: {e}", idx + 1)))?;
            avg.atoms[i].push(atom);
            avg.counts[i] += 1;
            max_rounds = max_rounds.max(avg.counts[i]);
        }
        // Restore the full-batch update counter when all samples agree.
        if avg.counts.iter().all(|&c| c == max_rounds) {
            avg.updates = max_rounds;
        }
        Ok(avg)
    }

    /// Writes the CSV representation to a file.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

/// A midpoint-rule quadrature grid over a perturbation ball.
///
/// Linf balls get a regular tensor grid over the box; L2 balls get the
/// bounding-box grid restricted to cells whose centers lie inside the
/// ball. All cells share the box cell volume `(2 r / resolution)^d`, and
/// the grid's total volume (`cells * cell_volume`) stands in for the ball
/// volume in every quadrature, so discrete identities hold exactly.
///
/// Cells are ordered row-major with the first dimension slowest; ties in
/// grid searches resolve to the lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct BallGrid {
    ball: Ball,
    resolution: usize,
    points: Vec<f64>,
    dim: usize,
    cell_volume: f64,
}

impl BallGrid {
    /// Builds the grid with `resolution` cells per dimension.
    ///
    /// Rejects dimensions above 3 (unsupported: memory grows as
    /// `resolution^d`), zero radii, and resolutions below 1.
    pub fn new(ball: &Ball, resolution: usize) -> Result<Self> {
        let d = ball.dim();
        if d > 3 {
            return Err(Error::unsupported(format!(
                "grid construction requires dimension <= 3, got {d}"
            )));
        }
        if resolution == 0 {
            return Err(Error::invalid("grid resolution must be >= 1"));
        }
        if ball.radius <= 0.0 {
            return Err(Error::invalid(
                "grid construction requires a strictly positive radius",
            ));
        }
        let h = 2.0 * ball.radius / resolution as f64;
        let coord = |dim_idx: usize, cell: usize| -> f64 {
            ball.center[dim_idx] - ball.radius + (cell as f64 + 0.5) * h
        };
        // Row-major advance with the last dimension fastest; returns false
        // once the multi-index wraps around.
        fn advance(idx: &mut [usize], resolution: usize) -> bool {
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < resolution {
                    return true;
                }
                idx[k] = 0;
            }
            false
        }
        let mut points = Vec::new();
        let mut idx = vec![0usize; d];
        let mut candidate = vec![0.0; d];
        loop {
            for k in 0..d {
                candidate[k] = coord(k, idx[k]);
            }
            let keep = match ball.norm {
                NormKind::Linf => true,
                NormKind::L2 => ball.distance(&candidate) <= ball.radius,
            };
            if keep {
                points.extend_from_slice(&candidate);
            }
            if !advance(&mut idx, resolution) {
                break;
            }
        }
        if points.is_empty() {
            return Err(Error::invalid(format!(
                "grid resolution {resolution} leaves no cell centers inside the ball"
            )));
        }
        Ok(BallGrid {
            ball: ball.clone(),
            resolution,
            points,
            dim: d,
            cell_volume: h.powi(d as i32),
        })
    }

    /// The ball this grid discretizes.
    #[inline]
    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    /// Cells per dimension.
    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Ambient dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of cells kept.
    #[inline]
    pub fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    /// Center of cell `k`.
    #[inline]
    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// Iterate over cell centers.
    #[inline]
    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    /// Volume of one cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Total volume covered by the kept cells; used as the reference
    /// volume in quadratures and entropies.
    #[inline]
    pub fn total_volume(&self) -> f64 {
        self.cell_volume * self.n_points() as f64
    }
}

/// A probability density on a [`BallGrid`], stored as cell probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Arc<BallGrid>,
    probs: Vec<f64>,
}

impl GridDensity {
    /// Wraps cell probabilities; they must be non-negative, finite, and
    /// sum to one within [`PROB_SUM_TOL`].
    pub fn new(grid: Arc<BallGrid>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.n_points() {
            return Err(Error::invalid(format!(
                "{} probabilities for {} grid cells",
                probs.len(),
                grid.n_points()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "grid density probabilities must be finite and non-negative",
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "grid density must sum to 1 within {PROB_SUM_TOL:e}, got {sum}"
            )));
        }
        Ok(GridDensity { grid, probs })
    }

    /// The uniform density on the grid.
    pub fn uniform(grid: Arc<BallGrid>) -> Self {
        let n = grid.n_points();
        GridDensity { grid, probs: vec![1.0 / n as f64; n] }
    }

    /// The Gibbs density `p_k proportional to exp(scores[k] / beta)` on the
    /// grid (equal cell volumes make this a plain softmax), computed with
    /// max subtraction for stability.
    pub fn gibbs(grid: Arc<BallGrid>, scores: &[f64], beta: f64) -> Result<Self> {
        if scores.len() != grid.n_points() {
            return Err(Error::invalid(format!(
                "{} scores for {} grid cells",
                scores.len(),
                grid.n_points()
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::invalid(format!(
                "temperature beta must be finite and > 0, got {beta}"
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("Gibbs scores must be finite"));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = scores.iter().map(|s| ((s - max) / beta).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        Ok(GridDensity { grid, probs })
    }

    /// The underlying grid.
    #[inline]
    pub fn grid(&self) -> &BallGrid {
        &self.grid
    }

    /// Shared handle on the underlying grid.
    #[inline]
    pub fn grid_arc(&self) -> Arc<BallGrid> {
        Arc::clone(&self.grid)
    }

    /// Cell probabilities.
    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `E_{x ~ p}[f(x)]` over the cell centers.
    pub fn expected<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.probs
            .iter()
            .zip(self.grid.iter_points())
            .map(|(p, x)| p * f(x))
            .sum()
    }

    /// Pointwise average of densities on the same grid.
    pub fn average(densities: &[GridDensity]) -> Result<GridDensity> {
        let Some(first) = densities.first() else {
            return Err(Error::invalid("cannot average zero densities"));
        };
        let n = first.probs.len();
        let same_grid =
            |d: &GridDensity| Arc::ptr_eq(&d.grid, &first.grid) || *d.grid == *first.grid;
        if densities.iter().any(|d| d.probs.len() != n || !same_grid(d)) {
            return Err(Error::invalid(
                "densities must share one grid to be averaged",
            ));
        }
        let mut probs = vec![0.0; n];
        for d in densities {
            for (acc, p) in probs.iter_mut().zip(&d.probs) {
                *acc += p;
            }
        }
        let inv = 1.0 / densities.len() as f64;
        for p in probs.iter_mut() {
            *p *= inv;
        }
        GridDensity::new(Arc::clone(&first.grid), probs)
    }
}

/// KL divergence of a grid density from the uniform density on its grid:
/// `sum_k p_k log(p_k / (vol_k / Vol))`, with `0 log 0 = 0`.
pub fn entropy_penalty(density: &GridDensity) -> f64 {
    let n = density.grid().n_points() as f64;
    density
        .probs()
        .iter()
        .map(|&p| if p > 0.0 { p * (p * n).ln() } else { 0.0 })
        .sum()
}

/// The attacker's strategy as seen by the game value: either averaged
/// attack atoms or per-sample grid densities.
#[derive(Debug, Clone, Copy)]
pub enum AttackerMeasure<'a> {
    /// Empirical per-sample atom averages from a sampled run.
    Atoms(&'a AttackAverage),
    /// Per-sample densities from a grid-exact run.
    Densities(&'a [GridDensity]),
}

/// The bilinear game objective
/// `L(mu, nu) = (1/N) sum_i E_{theta ~ mu} E_{x ~ nu_i} [l(theta, (x, y_i))]`.
pub fn game_value(
    classifier: &ParticleMixture,
    attacker: &AttackerMeasure<'_>,
    dataset: &Dataset,
) -> Result<f64> {
    if classifier.dim_theta() != dataset.dim() + 1 {
        return Err(Error::invalid(format!(
            "classifier dimension {} does not match d_x + 1 = {}",
            classifier.dim_theta(),
            dataset.dim() + 1
        )));
    }
    let n = dataset.len();
    let mut total = 0.0;
    match attacker {
        AttackerMeasure::Atoms(avg) => {
            if avg.n_samples() != n {
                return Err(Error::invalid(format!(
                    "attack average covers {} samples, dataset has {n}",
                    avg.n_samples()
                )));
            }
            for (i, s) in dataset.samples().iter().enumerate() {
                total += avg.expected(i, |x| classifier.expected_loss(x, s.label()))?;
            }
        }
        AttackerMeasure::Densities(densities) => {
            if densities.len() != n {
                return Err(Error::invalid(format!(
                    "{} attack densities for {n} samples",
                    densities.len()
                )));
            }
            for (density, s) in densities.iter().zip(dataset.samples()) {
                total += density.expected(|x| classifier.expected_loss(x, s.label()));
            }
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::LabeledSample;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ball(center: Vec<f64>, radius: f64, norm: NormKind) -> Ball {
        Ball::new(center, radius, norm).unwrap()
    }

    #[test]
    fn mixture_validates_weights() {
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(ParticleMixture::new(p.clone(), vec![0.5, 0.5]).is_ok());
        assert!(ParticleMixture::new(p.clone(), vec![0.6, 0.5]).is_err());
        assert!(ParticleMixture::new(p.clone(), vec![-0.1, 1.1]).is_err());
        assert!(ParticleMixture::new(p, vec![0.5]).is_err());
        assert!(ParticleMixture::new(vec![], vec![]).is_err());
    }

    #[test]
    fn mw_update_matches_hand_computed_example() {
        let w = mw_update(&[0.5, 0.5], &[0.0, std::f64::consts::LN_2], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mw_update_keeps_equal_losses_fixed() {
        let w0 = [0.2, 0.3, 0.5];
        let w = mw_update(&w0, &[7.0, 7.0, 7.0], 0.3).unwrap();
        for (a, b) in w.iter().zip(&w0) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn mw_update_is_stable_in_log_space() {
        // Losses large enough that naive exponentiation would underflow.
        let w = mw_update(&[0.5, 0.5], &[10_000.0, 10_001.0], 1.0).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((w[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn mw_update_simplex_drift_stays_tiny_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = vec![0.25; 4];
        for _ in 0..10_000 {
            let losses: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            w = mw_update(&w, &losses, 0.1).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn mw_update_rejects_bad_input() {
        assert!(mw_update(&[0.5, 0.5], &[0.0], 1.0).is_err());
        assert!(mw_update(&[0.5, 0.5], &[0.0, f64::NAN], 1.0).is_err());
        assert!(mw_update(&[0.5, 0.5], &[0.0, 0.0], -1.0).is_err());
        assert!(mw_update(&[0.9, 0.9], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn history_average_recursion_equals_arithmetic_mean() {
        // The recursive Frank-Wolfe form tracked by hand must agree with
        // the stored-snapshot average on a scalar statistic.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [0.7];
        let y = 1.0;
        let make = |rng: &mut ChaCha8Rng| {
            ParticleMixture::uniform(vec![vec![
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]])
            .unwrap()
        };
        let first = make(&mut rng);
        let mut recursive = first.expected_loss(&x, y);
        let mut history = HistoryAverage::new(first);
        for t in 0..10_000 {
            let next = make(&mut rng);
            let stat = next.expected_loss(&x, y);
            recursive = (t as f64 + 1.0) / (t as f64 + 2.0) * recursive
                + 1.0 / (t as f64 + 2.0) * stat;
            history.push(next, t).unwrap();
        }
        let flat = history.flatten();
        let mean = flat.expected_loss(&x, y);
        assert!(
            (mean - recursive).abs() <= 1e-12,
            "recursive {recursive} vs mean {mean}"
        );
    }

    #[test]
    fn history_push_rejects_out_of_order_steps() {
        let m = ParticleMixture::uniform(vec![vec![0.0, 0.0]]).unwrap();
        let mut h = HistoryAverage::new(m.clone());
        assert!(h.push(m.clone(), 1).is_err());
        h.push(m.clone(), 0).unwrap();
        assert!(h.push(m, 0).is_err());
    }

    #[test]
    fn attack_average_recursion_equals_arithmetic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let mut avg = AttackAverage::new(vec![b], true).unwrap();
        let mut recursive = 0.0;
        for t in 0..10_000 {
            let a = rng.random_range(-1.0..1.0);
            if t == 0 {
                recursive = a;
            } else {
                recursive =
                    t as f64 / (t as f64 + 1.0) * recursive + 1.0 / (t as f64 + 1.0) * a;
            }
            avg.append(&[vec![a]], t).unwrap();
        }
        let mean = avg.expected(0, |x| x[0]).unwrap();
        assert!((mean - recursive).abs() <= 1e-12);
    }

    #[test]
    fn attack_average_two_atoms_is_uniform() {
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let mut avg = AttackAverage::new(vec![b], true).unwrap();
        avg.append(&[vec![0.25]], 0).unwrap();
        avg.append(&[vec![-0.75]], 1).unwrap();
        let mean = avg.expected(0, |x| x[0]).unwrap();
        assert!((mean - (0.25 - 0.75) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn attack_average_rejects_out_of_ball_atoms() {
        let b = ball(vec![0.0], 0.5, NormKind::L2);
        let mut avg = AttackAverage::new(vec![b], true).unwrap();
        let err = avg.append(&[vec![0.75]], 0);
        assert!(err.is_err());
    }

    #[test]
    fn discarded_history_blocks_measure_queries() {
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let mut avg = AttackAverage::new(vec![b], false).unwrap();
        avg.append(&[vec![0.1]], 0).unwrap();
        assert!(avg.expected(0, |x| x[0]).is_ok());
        avg.append(&[vec![0.2]], 1).unwrap();
        assert_eq!(avg.latest(0), Some(&[0.2][..]));
        assert!(avg.expected(0, |x| x[0]).is_err());
        assert!(avg.to_csv_string().is_err());
    }

    #[test]
    fn linf_grid_covers_box_and_l2_grid_keeps_inside_centers() {
        let b = ball(vec![0.0, 0.0], 1.0, NormKind::Linf);
        let g = BallGrid::new(&b, 4).unwrap();
        assert_eq!(g.n_points(), 16);
        assert!((g.total_volume() - 4.0).abs() < 1e-12);
        // First point is the lexicographically smallest cell center.
        assert_eq!(g.point(0), &[-0.75, -0.75]);
        // Last dimension varies fastest.
        assert_eq!(g.point(1), &[-0.75, -0.25]);

        let b2 = ball(vec![0.0, 0.0], 1.0, NormKind::L2);
        let g2 = BallGrid::new(&b2, 4).unwrap();
        assert!(g2.n_points() < 16);
        for p in g2.iter_points() {
            assert!(b2.distance(p) <= 1.0);
        }
        assert_eq!(g2.cell_volume(), g.cell_volume());
        // Volume of kept cells approaches the disk area as the grid refines.
        let fine = BallGrid::new(&b2, 400).unwrap();
        let rel = (fine.total_volume() - std::f64::consts::PI).abs() / std::f64::consts::PI;
        assert!(rel < 0.01, "relative volume error {rel}");
    }

    #[test]
    fn grid_rejects_unsupported_regimes() {
        let b4 = ball(vec![0.0; 4], 1.0, NormKind::Linf);
        assert!(matches!(
            BallGrid::new(&b4, 4),
            Err(Error::Unsupported(_))
        ));
        let b = ball(vec![0.0], 0.0, NormKind::Linf);
        assert!(BallGrid::new(&b, 4).is_err());
    }

    #[test]
    fn gibbs_density_is_softmax_and_uniform_at_high_temperature() {
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let g = Arc::new(BallGrid::new(&b, 8).unwrap());
        let scores: Vec<f64> = g.iter_points().map(|x| x[0]).collect();
        let d = GridDensity::gibbs(Arc::clone(&g), &scores, 1e6).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 8.0).abs() < 1e-6);
        }
        // Low temperature concentrates on the max-score cell.
        let d = GridDensity::gibbs(g, &scores, 1e-3).unwrap();
        assert!(d.probs()[7] > 0.999);
    }

    #[test]
    fn entropy_penalty_is_zero_for_uniform_and_positive_otherwise() {
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let g = Arc::new(BallGrid::new(&b, 16).unwrap());
        let u = GridDensity::uniform(Arc::clone(&g));
        assert!(entropy_penalty(&u).abs() < 1e-12);
        let scores: Vec<f64> = g.iter_points().map(|x| x[0]).collect();
        let d = GridDensity::gibbs(g, &scores, 0.3).unwrap();
        assert!(entropy_penalty(&d) > 0.0);
    }

    #[test]
    fn game_value_is_bilinear_in_both_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dataset = Dataset::new(vec![
        LabeledSample::new(vec![0.5], 1).unwrap(),
            LabeledSample::new(vec![-0.5], -1).unwrap(),
        ])
        .unwrap();
        let t1 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let t2 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let lambda = 0.3;
        let mix = ParticleMixture::new(vec![t1.clone(), t2.clone()], vec![lambda, 1.0 - lambda])
            .unwrap();
        let m1 = ParticleMixture::uniform(vec![t1]).unwrap();
        let m2 = ParticleMixture::uniform(vec![t2]).unwrap();

        let balls: Vec<Ball> = dataset
            .samples()
            .iter()
            .map(|s| ball(s.x.clone(), 0.25, NormKind::Linf))
            .collect();
        let mut avg = AttackAverage::new(balls, true).unwrap();
        for t in 0..3 {
            let atoms: Vec<Vec<f64>> = dataset
                .samples()
                .iter()
                .map(|s| vec![s.x[0] + rng.random_range(-0.25..0.25)])
                .collect();
            avg.append(&atoms, t).unwrap();
        }
        let attacker = AttackerMeasure::Atoms(&avg);
        let v_mix = game_value(&mix, &attacker, &dataset).unwrap();
        let v1 = game_value(&m1, &attacker, &dataset).unwrap();
        let v2 = game_value(&m2, &attacker, &dataset).unwrap();
        assert!((v_mix - (lambda * v1 + (1.0 - lambda) * v2)).abs() < 1e-12);
    }

    #[test]
    fn game_value_matches_density_expectation() {
        let dataset =
            Dataset::new(vec![LabeledSample::new(vec![0.0], 1).unwrap()]).unwrap();
        let mix = ParticleMixture::uniform(vec![vec![1.0, 0.0]]).unwrap();
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let g = Arc::new(BallGrid::new(&b, 1000).unwrap());
        let d = GridDensity::uniform(g);
        let v = game_value(&mix, &AttackerMeasure::Densities(std::slice::from_ref(&d)), &dataset)
            .unwrap();
        // (1/2) * integral of log(1 + exp(-x)) over [-1, 1] by direct quadrature.
        let mut expected = 0.0;
        let n = 1000;
        for k in 0..n {
            let x = -1.0 + (k as f64 + 0.5) * 2.0 / n as f64;
            expected += game::softplus(-x) / n as f64;
        }
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn game_value_validates_shapes() {
        let dataset =
            Dataset::new(vec![LabeledSample::new(vec![0.0], 1).unwrap()]).unwrap();
        let mix = ParticleMixture::uniform(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let avg = AttackAverage::new(vec![b.clone(), b], true).unwrap();
        assert!(game_value(&mix, &AttackerMeasure::Atoms(&avg), &dataset).is_err());
    }

    #[test]
    fn flatten_window_and_thin_are_consistent() {
        let mut h = HistoryAverage::new(
            ParticleMixture::uniform(vec![vec![0.0, 0.0]]).unwrap(),
        );
        for t in 0..9 {
            h.push(
                ParticleMixture::uniform(vec![vec![t as f64 + 1.0, 0.0]]).unwrap(),
                t,
            )
            .unwrap();
        }
        assert_eq!(h.len(), 10);
        // Window of 3 keeps the last three snapshots.
        let w = h.window(3);
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].particle(0)[0], 7.0);
        // Thin with cap >= len returns the full flatten.
        let full = h.flatten();
        let thin = h.thin(100);
        assert_eq!(full, thin);
        // Thin to 2 keeps first and last.
        let thin2 = h.thin(2);
        assert_eq!(thin2.len(), 2);
        assert_eq!(thin2.particle(0)[0], 0.0);
        assert_eq!(thin2.particle(1)[0], 9.0);
    }

    #[test]
    fn mixture_csv_round_trips() {
        let m = ParticleMixture::new(
            vec![vec![0.1, -2.0, 0.3], vec![1.5, 2.5, -3.5]],
            vec![0.25, 0.75],
        )
        .unwrap();
        let text = m.to_csv_string();
        assert!(text.starts_with("particle_id,weight,theta_0,theta_1,theta_2\n"));
        let back = ParticleMixture::from_csv_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn attack_csv_round_trips() {
        let balls = vec![
            ball(vec![0.0, 0.0], 1.0, NormKind::L2),
            ball(vec![2.0, 2.0], 1.0, NormKind::L2),
        ];
        let mut avg = AttackAverage::new(balls.clone(), true).unwrap();
        avg.append(&[vec![0.5, 0.0], vec![2.0, 2.5]], 0).unwrap();
        avg.append(&[vec![0.0, -0.5], vec![1.5, 2.0]], 1).unwrap();
        let text = avg.to_csv_string().unwrap();
        let back = AttackAverage::from_csv_str(&text, balls).unwrap();
        assert_eq!(back.updates(), 2);
        assert_eq!(back.atoms(0), avg.atoms(0));
        assert_eq!(back.atoms(1), avg.atoms(1));
    }

    #[test]
    fn density_average_is_pointwise_mean() {
        let b = ball(vec![0.0], 1.0, NormKind::Linf);
        let g = Arc::new(BallGrid::new(&b, 4).unwrap());
        let d1 = GridDensity::new(Arc::clone(&g), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let d2 = GridDensity::new(Arc::clone(&g), vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let avg = GridDensity::average(&[d1, d2]).unwrap();
        assert_eq!(avg.probs(), &[0.5, 0.0, 0.0, 0.5]);
    }
}
