//! Game primitives: data, perturbation balls, and the linear-logistic loss.
//!
//! The adversarial game is played between a randomized classifier (a
//! distribution over parameter vectors `theta = (w, b)`) and per-sample
//! attackers confined to norm balls `B_eps(x_i)`. This module owns the
//! deterministic pieces: labeled samples, balls with projections, the
//! binary logistic loss `l(theta, (x, y)) = log(1 + exp(-y (w . x + b)))`
//! and its gradients in `theta` and in `x`.
//!
//! Gradients are exposed both as validated operations on [`LinearModel`]
//! and as unchecked slice kernels (`margin`, `loss_theta`, ...) used by the
//! samplers and solvers in hot loops. `theta` always stacks the weight
//! vector first and the bias last, so `d_theta = d_x + 1`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Norm used for perturbation balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Euclidean ball: `||x - c||_2 <= radius`.
    L2,
    /// Box / max-norm ball: `max_k |x_k - c_k| <= radius`.
    Linf,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::L2 => write!(f, "l2"),
            NormKind::Linf => write!(f, "linf"),
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(NormKind::L2),
            "linf" => Ok(NormKind::Linf),
            other => Err(Error::invalid(format!(
                "unknown norm {other:?}, expected \"l2\" or \"linf\""
            ))),
        }
    }
}

/// One observation: a feature vector and a binary label in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Feature vector (the clean, unperturbed point).
    pub x: Vec<f64>,
    /// Class label, `-1` or `+1`.
    pub y: i8,
}

impl LabeledSample {
    /// Builds a sample, rejecting labels outside `{-1, +1}` and non-finite
    /// or empty feature vectors.
    pub fn new(x: Vec<f64>, y: i8) -> Result<Self> {
        if y != -1 && y != 1 {
            return Err(Error::invalid(format!("label must be -1 or +1, got {y}")));
        }
        if x.is_empty() {
            return Err(Error::invalid("feature vector must be non-empty"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector must be finite"));
        }
        Ok(LabeledSample { x, y })
    }

    /// Label as a float, for use in loss formulas.
    #[inline]
    pub fn label(&self) -> f64 {
        f64::from(self.y)
    }

    /// Feature dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// A non-empty set of labeled samples with a common feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Wraps samples into a dataset; all must share one dimension and the
    /// set must be non-empty.
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("dataset must contain at least one sample"));
        };
        let dim = first.dim();
        if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
            return Err(Error::invalid(format!(
                "inconsistent feature dimensions: expected {dim}, found {}",
                bad.dim()
            )));
        }
        Ok(Dataset { samples })
    }

    /// Number of samples `N`.
    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Datasets are never empty, so this is always `false`; provided for
    /// API completeness.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension `d_x`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    /// Borrow all samples.
    #[inline]
    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    /// Borrow one sample by index.
    #[inline]
    pub fn sample(&self, i: usize) -> &LabeledSample {
        &self.samples[i]
    }

    /// Serializes to CSV with header `x1,...,xd,y`, LF line endings, and
    /// shortest round-trip decimal formatting for features.
    pub fn to_csv_string(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for k in 1..=d {
            if k > 1 {
                out.push(',');
            }
            out.push_str(&format!("x{k}"));
        }
        out.push_str(",y\n");
        for s in &self.samples {
            for v in &s.x {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&s.y.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the CSV format written by [`Dataset::to_csv_string`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("dataset CSV is empty".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[cols.len() - 1] != "y" {
            return Err(Error::Parse(format!(
                "dataset CSV header must be x1,...,xd,y, got {header:?}"
            )));
        }
        let d = cols.len() - 1;
        for (k, col) in cols[..d].iter().enumerate() {
            let expected = format!("x{}", k + 1);
            if *col != expected {
                return Err(Error::Parse(format!(
                    "dataset CSV header column {k} is {col:?}, expected {expected:?}"
                )));
            }
        }
        let mut samples = Vec::new();
        for (row_idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Parse(format!(
                    "dataset CSV row {} has {} fields, expected {}",
                    row_idx + 1,
                    fields.len(),
                    d + 1
                )));
            }
            let mut x = Vec::with_capacity(d);
            for f in &fields[..d] {
                let v = f64::from_str(f).map_err(|e| {
                    Error::Parse(format!("dataset CSV row {}: bad feature {f:?}: {e}", row_idx + 1))
                })?;
                x.push(v);
            }
            let y = i8::from_str(fields[d]).map_err(|e| {
                Error::Parse(format!("dataset CSV row {}: bad label {:?}: {e}", row_idx + 1, fields[d]))
            })?;
            samples.push(LabeledSample::new(x, y).map_err(|e| {
                Error::Parse(format!("dataset CSV row {}: {e}", row_idx + 1))
            })?);
        }
        Dataset::new(samples)
    }

    /// Writes the CSV representation to a file.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Reads a dataset from a CSV file.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

/// Relative tolerance used for ball-membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// A norm ball `B_radius(center)` that constrains one sample's attacker.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    /// Ball center (the clean data point).
    pub center: Vec<f64>,
    /// Ball radius; zero collapses the ball to `{center}`.
    pub radius: f64,
    /// Which norm measures distance from the center.
    pub norm: NormKind,
}

impl Ball {
    /// Builds a ball, rejecting negative or non-finite radii and empty or
    /// non-finite centers.
    pub fn new(center: Vec<f64>, radius: f64, norm: NormKind) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::invalid(format!(
                "ball radius must be finite and >= 0, got {radius}"
            )));
        }
        if center.is_empty() {
            return Err(Error::invalid("ball center must be non-empty"));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ball center must be finite"));
        }
        Ok(Ball { center, radius, norm })
    }

    /// Ambient dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Distance of `point` from the center in the ball's norm.
    pub fn distance(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.center.len());
        match self.norm {
            NormKind::L2 => self
                .center
                .iter()
                .zip(point)
                .map(|(c, p)| (p - c) * (p - c))
                .sum::<f64>()
                .sqrt(),
            NormKind::Linf => self
                .center
                .iter()
                .zip(point)
                .map(|(c, p)| (p - c).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Membership with the crate-wide tolerance: distance at most
    /// `radius + MEMBERSHIP_TOL * max(radius, 1)`.
    pub fn contains(&self, point: &[f64]) -> bool {
        self.distance(point) <= self.radius + MEMBERSHIP_TOL * self.radius.max(1.0)
    }

    /// Projects `point` onto the ball. See [`project_ball`].
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        project_ball(self, point)
    }

    /// Volume of the ball (length, area, or volume for `d <= 3`; the
    /// general formula for L2 is only needed up to `d = 3`).
    pub fn volume(&self) -> f64 {
        let d = self.dim() as f64;
        match self.norm {
            NormKind::Linf => (2.0 * self.radius).powf(d),
            NormKind::L2 => match self.dim() {
                1 => 2.0 * self.radius,
                2 => std::f64::consts::PI * self.radius * self.radius,
                3 => 4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3),
                d => {
                    // Gamma-function form; exercised only in diagnostics.
                    let k = d as f64 / 2.0;
                    std::f64::consts::PI.powf(k) / gamma_half_integer(d) * self.radius.powf(d as f64)
                }
            },
        }
    }
}

/// `Gamma(d/2 + 1)` for integer `d`, used by the L2 volume formula.
fn gamma_half_integer(d: usize) -> f64 {
    // Gamma(n+1) = n! for integers; Gamma(n + 1/2) via the double factorial.
    if d % 2 == 0 {
        let n = d / 2;
        (1..=n).map(|k| k as f64).product()
    } else {
        let n = d / 2; // Gamma(n + 3/2) = (2n+1)!! / 2^(n+1) * sqrt(pi)
        let mut v = std::f64::consts::PI.sqrt();
        for k in 0..=n {
            v *= k as f64 + 0.5;
        }
        v
    }
}

/// The attacker's budget: a shared radius and norm, instantiated as one
/// ball per sample centered at the clean point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreatModel {
    /// Perturbation radius `eps`.
    pub radius: f64,
    /// Norm of the perturbation balls.
    pub norm: NormKind,
}

impl ThreatModel {
    /// Builds the per-sample ball `B_radius(x)`.
    pub fn ball_at(&self, center: &[f64]) -> Result<Ball> {
        Ball::new(center.to_vec(), self.radius, self.norm)
    }

    /// Builds the ball for one labeled sample.
    pub fn ball_for(&self, sample: &LabeledSample) -> Result<Ball> {
        self.ball_at(&sample.x)
    }

    /// Builds all per-sample balls for a dataset.
    pub fn balls_for(&self, dataset: &Dataset) -> Result<Vec<Ball>> {
        dataset.samples().iter().map(|s| self.ball_for(s)).collect()
    }
}

/// Projects `point` onto `ball` (Euclidean projection for both norms).
///
/// For L2 balls the point is shrunk radially toward the center; for Linf
/// balls each coordinate is clamped to `[c_k - r, c_k + r]`. The result is
/// a member of the ball within [`MEMBERSHIP_TOL`], the projection is
/// idempotent bit-for-bit, and points already inside are returned
/// unchanged. The radial shrink is damped by one part in 1e14 so that the
/// floating-point norm of the output never exceeds the radius.
pub fn project_ball(ball: &Ball, point: &[f64]) -> Result<Vec<f64>> {
    if point.len() != ball.center.len() {
        return Err(Error::invalid(format!(
            "projection dimension mismatch: ball has dim {}, point has dim {}",
            ball.center.len(),
            point.len()
        )));
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot project a non-finite point"));
    }
    match ball.norm {
        NormKind::Linf => Ok(ball
            .center
            .iter()
            .zip(point)
            .map(|(c, p)| p.clamp(c - ball.radius, c + ball.radius))
            .collect()),
        NormKind::L2 => {
            let dist = ball.distance(point);
            if dist <= ball.radius {
                return Ok(point.to_vec());
            }
            let scale = ball.radius / dist * (1.0 - 1e-14);
            Ok(ball
                .center
                .iter()
                .zip(point)
                .map(|(c, p)| c + (p - c) * scale)
                .collect())
        }
    }
}

/// A deterministic linear classifier `x -> sign(w . x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Weight vector of dimension `d_x`.
    pub w: Vec<f64>,
    /// Bias scalar.
    pub b: f64,
}

impl LinearModel {
    /// Builds a model from a weight vector and bias.
    pub fn new(w: Vec<f64>, b: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weight vector must be non-empty"));
        }
        Ok(LinearModel { w, b })
    }

    /// Unpacks a stacked parameter vector `theta = (w, b)`.
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::invalid(format!(
                "theta must have dimension >= 2 (weights plus bias), got {}",
                theta.len()
            )));
        }
        Ok(LinearModel {
            w: theta[..theta.len() - 1].to_vec(),
            b: theta[theta.len() - 1],
        })
    }

    /// Stacks the parameters as `(w, b)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.w.clone();
        t.push(self.b);
        t
    }

    /// Feature dimension `d_x`.
    #[inline]
    pub fn dim_x(&self) -> usize {
        self.w.len()
    }
}

// ---------------------------------------------------------------------------
// Scalar kernels (unchecked; hot paths use these on raw theta slices).
// ---------------------------------------------------------------------------

/// Numerically stable logistic sigmoid `1 / (1 + exp(-z))`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus `log(1 + exp(z)) = max(z, 0) + log1p(exp(-|z|))`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Decision value `w . x + b` for a stacked parameter slice.
///
/// `theta` stacks the weights first and the bias last; `x` must have
/// dimension `theta.len() - 1`.
#[inline]
pub fn margin(theta: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(theta.len(), x.len() + 1);
    let mut m = theta[x.len()];
    for k in 0..x.len() {
        m += theta[k] * x[k];
    }
    m
}

/// Logistic loss `log(1 + exp(-y (w . x + b)))` on a stacked slice.
#[inline]
pub fn loss_theta(theta: &[f64], x: &[f64], y: f64) -> f64 {
    softplus(-y * margin(theta, x))
}

/// Predicted label `sign(w . x + b)` with `sign(0)` counted as `+1`.
#[inline]
pub fn predict(theta: &[f64], x: &[f64]) -> i8 {
    if margin(theta, x) >= 0.0 {
        1
    } else {
        -1
    }
}

/// Writes the loss gradient in `theta` (weights stacked before bias) into
/// `out`, which must have length `theta.len()`.
#[inline]
pub fn grad_theta_into(theta: &[f64], x: &[f64], y: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), theta.len());
    let m = y * margin(theta, x);
    let coeff = -y * sigmoid(-m);
    for k in 0..x.len() {
        out[k] = coeff * x[k];
    }
    out[x.len()] = coeff;
}

/// Adds `scale * grad_x l(theta, (x, y))` into the accumulator `acc`.
///
/// The gradient in the input is `-y sigma(-y (w . x + b)) w`.
#[inline]
pub fn add_scaled_grad_x(theta: &[f64], x: &[f64], y: f64, scale: f64, acc: &mut [f64]) {
    debug_assert_eq!(acc.len(), x.len());
    let m = y * margin(theta, x);
    let coeff = scale * (-y) * sigmoid(-m);
    for k in 0..x.len() {
        acc[k] += coeff * theta[k];
    }
}

// ---------------------------------------------------------------------------
// Validated operations on models and samples.
// ---------------------------------------------------------------------------

fn check_dims(model: &LinearModel, x: &[f64]) -> Result<()> {
    if model.w.len() != x.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: model expects d_x = {}, point has d_x = {}",
            model.w.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Logistic loss of `model` on the (possibly perturbed) point `x` carrying
/// the label of `sample`.
pub fn logistic_loss(model: &LinearModel, x: &[f64], y: i8) -> Result<f64> {
    check_dims(model, x)?;
    if y != -1 && y != 1 {
        return Err(Error::invalid(format!("label must be -1 or +1, got {y}")));
    }
    let m = f64::from(y) * (dot(&model.w, x) + model.b);
    Ok(softplus(-m))
}

/// Gradient of the logistic loss in the stacked parameters `(w, b)`.
pub fn loss_grad_theta(model: &LinearModel, x: &[f64], y: i8) -> Result<Vec<f64>> {
    check_dims(model, x)?;
    let theta = model.theta();
    let mut out = vec![0.0; theta.len()];
    grad_theta_into(&theta, x, f64::from(y), &mut out);
    Ok(out)
}

/// Gradient of the logistic loss in the input point `x`.
pub fn loss_grad_x(model: &LinearModel, x: &[f64], y: i8) -> Result<Vec<f64>> {
    check_dims(model, x)?;
    let theta = model.theta();
    let mut out = vec![0.0; x.len()];
    add_scaled_grad_x(&theta, x, f64::from(y), 1.0, &mut out);
    Ok(out)
}

/// Inner product helper.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Accuracy of a weighted set of linear classifiers at a single point: the
/// total weight of atoms whose prediction matches `y`, with `sign(0)`
/// counted as `+1`. Weights are taken as given (callers pass a normalized
/// mixture).
pub fn expected_accuracy<'a>(
    atoms: impl IntoIterator<Item = (f64, &'a [f64])>,
    x: &[f64],
    y: i8,
) -> f64 {
    let mut acc = 0.0;
    for (weight, theta) in atoms {
        if predict(theta, x) == y {
            acc += weight;
        }
    }
    acc
}
