//! Equilibrium diagnostics: robust metrics, duality gaps, Lyapunov traces,
//! and the regularization-bias bound checker.
//!
//! Everything here is a pure function of explicit strategies. The two gap
//! computations measure how far a strategy pair sits from equilibrium:
//!
//! * [`gap_unregularized`] evaluates `sup_nu L(mu, nu) - inf_mu L(mu, nu)`
//!   with the supremum taken pointwise over perturbation grids and the
//!   infimum over a finite [`ThetaGrid`] (the minimum of a functional
//!   linear in `mu` is attained at a Dirac, so a point grid suffices).
//! * [`gap_regularized`] does the same for the entropy-regularized game,
//!   where the attacker's inner supremum has the closed form
//!   `beta log( (1/Vol) integral exp(lbar / beta) )` evaluated by
//!   stabilized quadrature ([`log_partition_of`]). It requires density
//!   attackers: against atoms the KL term is infinite.
//!
//! [`lyapunov_trace`] turns grid-exact run checkpoints into the two
//! Frank-Wolfe potentials `R_mu` and `R_nu` whose sum reproduces the
//! regularized gap, and [`check_regularization_bound`] certifies the
//! regularization-bias inequality relating the two gaps through the loss's
//! Lipschitz constant in `x`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{self, Dataset, LabeledSample, NormKind, ThreatModel};
use crate::game::Ball;
use crate::measures::{
    entropy_penalty, game_value, AttackerMeasure, BallGrid, GridDensity, ParticleMixture,
};
use crate::sampler::{best_of_k_attack, grid_max_attack, RngStream};

/// RNG purpose tag for evaluation-time attacks.
pub const EVAL_ATTACK_PURPOSE: &str = "eval-atk";

/// A finite set of candidate models used to minimize functionals that are
/// linear in the classifier measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    thetas: Vec<f64>,
    dim_theta: usize,
}

impl ThetaGrid {
    /// Creates an empty grid for models of the given parameter dimension
    /// (`d_x + 1` with the bias folded in).
    pub fn new(dim_theta: usize) -> Result<Self> {
        if dim_theta < 2 {
            return Err(Error::invalid(format!(
                "theta dimension must be >= 2 (weights plus bias), got {dim_theta}"
            )));
        }
        Ok(ThetaGrid { thetas: Vec::new(), dim_theta })
    }

    /// A dense lattice: every weight coordinate ranges over
    /// `points` equispaced values in `[-7, 7]`, the bias over `[-3, 3]`.
    pub fn lattice(d_x: usize, points: usize) -> Result<Self> {
        if d_x == 0 {
            return Err(Error::invalid("lattice needs d_x >= 1"));
        }
        if points < 2 {
            return Err(Error::invalid(format!(
                "lattice needs >= 2 points per dimension, got {points}"
            )));
        }
        let dim_theta = d_x + 1;
        let coord = |k: usize, lo: f64, hi: f64| lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let mut grid = ThetaGrid::new(dim_theta)?;
        let mut idx = vec![0usize; dim_theta];
        loop {
            let mut theta = Vec::with_capacity(dim_theta);
            for (d, &k) in idx.iter().enumerate() {
                let (lo, hi) = if d < d_x { (-7.0, 7.0) } else { (-3.0, 3.0) };
                theta.push(coord(k, lo, hi));
            }
            grid.thetas.extend_from_slice(&theta);
            // Advance the mixed-radix counter, last dimension fastest.
            let mut done = true;
            for d in (0..dim_theta).rev() {
                idx[d] += 1;
                if idx[d] < points {
                    done = false;
                    break;
                }
                idx[d] = 0;
            }
            if done {
                break;
            }
        }
        Ok(grid)
    }

    /// The default candidate set: a 21-point-per-dimension lattice plus
    /// every particle of the supplied mixtures and any extra models.
    pub fn default_grid(
        d_x: usize,
        mixtures: &[&ParticleMixture],
        extra: &[Vec<f64>],
    ) -> Result<Self> {
        let mut grid = ThetaGrid::lattice(d_x, 21)?;
        for m in mixtures {
            grid.extend_with_particles(m)?;
        }
        for theta in extra {
            grid.push(theta)?;
        }
        Ok(grid)
    }

    /// Appends one candidate model.
    pub fn push(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim_theta {
            return Err(Error::invalid(format!(
                "candidate has dimension {}, grid expects {}",
                theta.len(),
                self.dim_theta
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("candidate model must be finite"));
        }
        self.thetas.extend_from_slice(theta);
        Ok(())
    }

    /// Appends every particle of a mixture.
    pub fn extend_with_particles(&mut self, mixture: &ParticleMixture) -> Result<()> {
        if mixture.dim_theta() != self.dim_theta {
            return Err(Error::invalid(format!(
                "mixture particles have dimension {}, grid expects {}",
                mixture.dim_theta(),
                self.dim_theta
            )));
        }
        for j in 0..mixture.len() {
            self.thetas.extend_from_slice(mixture.particle(j));
        }
        Ok(())
    }

    /// Number of candidate models.
    pub fn len(&self) -> usize {
        self.thetas.len() / self.dim_theta
    }

    /// Whether the grid is empty.
    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// Model parameter dimension.
    pub fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    /// The `k`-th candidate model.
    pub fn theta(&self, k: usize) -> &[f64] {
        &self.thetas[k * self.dim_theta..(k + 1) * self.dim_theta]
    }

    /// Minimizes an objective over the grid; ties resolve to the lowest
    /// index. Errors on an empty grid or a non-finite objective value.
    pub fn argmin<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> Result<(usize, f64)> {
        if self.is_empty() {
            return Err(Error::invalid("cannot minimize over an empty theta grid"));
        }
        let values: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|k| f(self.theta(k)))
            .collect();
        let mut best = (0usize, values[0]);
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Runtime(format!(
                    "theta-grid objective evaluated to {v} at candidate {k}"
                )));
            }
            if v < best.1 {
                best = (k, v);
            }
        }
        Ok(best)
    }
}

/// Clean and attacked performance of a randomized classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustMetrics {
    /// Mean over samples of the attacked expected loss.
    pub robust_loss: f64,
    /// Mean expected accuracy at the attacked points.
    pub robust_accuracy: f64,
    /// Mean expected accuracy at the clean points.
    pub natural_accuracy: f64,
    /// Mean expected loss at the clean points.
    pub natural_loss: f64,
}

/// Evaluates a classifier mixture against per-sample best-of-`k` attacks.
///
/// Each sample's attack maximizes the mixture's expected loss over `k`
/// uniform draws plus the clean point, using the derived stream
/// `(`[`EVAL_ATTACK_PURPOSE`]`, sample index, tag)` so results do not
/// depend on evaluation order or thread count.
pub fn robust_metrics(
    classifier: &ParticleMixture,
    dataset: &Dataset,
    threat: &ThreatModel,
    k: usize,
    stream: &RngStream,
    tag: u64,
) -> Result<RobustMetrics> {
    if k == 0 {
        return Err(Error::invalid("best-of-k evaluation needs k >= 1"));
    }
    if classifier.dim_theta() != dataset.dim() + 1 {
        return Err(Error::invalid(format!(
            "classifier dimension {} does not match d_x + 1 = {}",
            classifier.dim_theta(),
            dataset.dim() + 1
        )));
    }
    let n = dataset.len();
    let rows: Vec<(f64, f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, f64, f64)> {
            let sample = dataset.sample(i);
            let ball = threat.ball_for(sample)?;
            let mut rng = stream.derive(EVAL_ATTACK_PURPOSE, i as u64, tag);
            let y = sample.label();
            let (x_adv, adv_loss) =
                best_of_k_attack(|x| classifier.expected_loss(x, y), &ball, k, &mut rng)?;
            Ok((
                adv_loss,
                classifier.expected_accuracy(&x_adv, sample.y),
                classifier.expected_accuracy(&sample.x, sample.y),
                classifier.expected_loss(&sample.x, y),
            ))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / n as f64;
    let mut acc = [0.0f64; 4];
    for row in &rows {
        acc[0] += row.0;
        acc[1] += row.1;
        acc[2] += row.2;
        acc[3] += row.3;
    }
    Ok(RobustMetrics {
        robust_loss: acc[0] * inv,
        robust_accuracy: acc[1] * inv,
        natural_accuracy: acc[2] * inv,
        natural_loss: acc[3] * inv,
    })
}

/// A primal-dual gap evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// The attacker-side supremum term.
    pub sup: f64,
    /// The classifier-side infimum term.
    pub inf: f64,
    /// `sup - inf`, computed exactly from the two fields.
    pub gap: f64,
    /// Entropy temperature (0 for the unregularized gap).
    pub beta: f64,
    /// Size of the theta grid used for the infimum.
    pub theta_points: usize,
    /// Per-dimension quadrature resolution used for the supremum.
    pub x_resolution: usize,
}

impl GapReport {
    fn assemble(sup: f64, inf: f64, beta: f64, theta_points: usize, x_resolution: usize) -> Self {
        GapReport { sup, inf, gap: sup - inf, beta, theta_points, x_resolution }
    }

    /// Flat `key = value` rendering.
    pub fn to_kv_string(&self) -> String {
        format!(
            "beta = {}\ngap = {}\ninf = {}\nsup = {}\ntheta_points = {}\nx_resolution = {}\n",
            self.beta, self.gap, self.inf, self.sup, self.theta_points, self.x_resolution
        )
    }

    /// Header for [`GapReport::csv_row`].
    pub const CSV_HEADER: &'static str = "beta,sup,inf,gap,theta_points,x_resolution";

    /// One CSV row (no newline).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.beta, self.sup, self.inf, self.gap, self.theta_points, self.x_resolution
        )
    }
}

fn attacker_len(attacker: &AttackerMeasure<'_>) -> usize {
    match attacker {
        AttackerMeasure::Atoms(a) => a.n_samples(),
        AttackerMeasure::Densities(d) => d.len(),
    }
}

fn validate_pair(
    classifier: &ParticleMixture,
    attacker: &AttackerMeasure<'_>,
    dataset: &Dataset,
) -> Result<()> {
    if classifier.dim_theta() != dataset.dim() + 1 {
        return Err(Error::invalid(format!(
            "classifier dimension {} does not match d_x + 1 = {}",
            classifier.dim_theta(),
            dataset.dim() + 1
        )));
    }
    if attacker_len(attacker) != dataset.len() {
        return Err(Error::invalid(format!(
            "attacker covers {} samples, dataset has {}",
            attacker_len(attacker),
            dataset.len()
        )));
    }
    if let AttackerMeasure::Atoms(a) = attacker {
        a.require_complete()?;
    }
    Ok(())
}

/// Per-sample expected loss of a single model under the attacker measure.
fn attacked_point_loss(
    attacker: &AttackerMeasure<'_>,
    i: usize,
    theta: &[f64],
    y: f64,
) -> f64 {
    match attacker {
        AttackerMeasure::Atoms(a) => a
            .expected(i, |x| game::loss_theta(theta, x, y))
            .expect("attack average validated complete"),
        AttackerMeasure::Densities(d) => d[i].expected(|x| game::loss_theta(theta, x, y)),
    }
}

/// The unregularized primal-dual gap of a strategy pair.
///
/// The supremum side replaces each sample's attack by an exhaustive grid
/// maximum of the mixture's expected loss (a zero-radius ball degenerates
/// to its center); the infimum side minimizes the attacked mean loss over
/// the theta grid.
pub fn gap_unregularized(
    classifier: &ParticleMixture,
    attacker: &AttackerMeasure<'_>,
    dataset: &Dataset,
    theta_grid: &ThetaGrid,
    resolution: usize,
) -> Result<GapReport> {
    validate_pair(classifier, attacker, dataset)?;
    if theta_grid.dim_theta() != classifier.dim_theta() {
        return Err(Error::invalid("theta grid dimension does not match the classifier"));
    }
    let n = dataset.len();
    let sup_terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let sample = dataset.sample(i);
            let y = sample.label();
            let ball = match attacker {
                AttackerMeasure::Atoms(a) => a.ball(i).clone(),
                AttackerMeasure::Densities(d) => d[i].grid().ball().clone(),
            };
            if ball.radius == 0.0 {
                return Ok(classifier.expected_loss(&ball.center, y));
            }
            let (_, v) = grid_max_attack(|x| classifier.expected_loss(x, y), &ball, resolution)?;
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let sup = sup_terms.iter().sum::<f64>() / n as f64;
    let (_, inf) = theta_grid.argmin(|theta| {
        let mut acc = 0.0;
        for i in 0..n {
            acc += attacked_point_loss(attacker, i, theta, dataset.sample(i).label());
        }
        acc / n as f64
    })?;
    Ok(GapReport::assemble(sup, inf, 0.0, theta_grid.len(), resolution))
}

/// Log-partition functional of a generic score over a ball:
/// `beta * log( (1/Vol) integral exp(score(x)/beta) dx )` by stabilized
/// midpoint quadrature at the given per-dimension resolution.
pub fn log_partition_of<F: Fn(&[f64]) -> f64>(
    score: F,
    ball: &Ball,
    beta: f64,
    resolution: usize,
) -> Result<f64> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::invalid(format!(
            "log-partition temperature must be finite and > 0, got {beta}"
        )));
    }
    let grid = BallGrid::new(ball, resolution)?;
    let scores: Vec<f64> = grid.iter_points().map(|x| score(x)).collect();
    log_partition_on_points(&scores, beta).map_err(|e| match e {
        Error::Runtime(msg) => Error::Runtime(format!("log-partition quadrature: {msg}")),
        other => other,
    })
}

/// Discrete log-sum-exp with uniform cell weights:
/// `max + beta * log( (1/n) sum exp((s - max)/beta) )`.
fn log_partition_on_points(scores: &[f64], beta: f64) -> Result<f64> {
    let mut m = f64::NEG_INFINITY;
    for &s in scores {
        if !s.is_finite() {
            return Err(Error::Runtime(format!("score evaluated to {s}")));
        }
        m = m.max(s);
    }
    let sum: f64 = scores.iter().map(|&s| ((s - m) / beta).exp()).sum();
    Ok(m + beta * (sum / scores.len() as f64).ln())
}

/// Log-partition value of a classifier mixture's expected loss on one
/// sample's perturbation ball (the attacker's soft best-response value).
pub fn log_partition_value(
    classifier: &ParticleMixture,
    sample: &LabeledSample,
    ball: &Ball,
    beta: f64,
    resolution: usize,
) -> Result<f64> {
    if classifier.dim_theta() != sample.dim() + 1 {
        return Err(Error::invalid("classifier dimension does not match the sample"));
    }
    if ball.dim() != sample.dim() {
        return Err(Error::invalid("ball dimension does not match the sample"));
    }
    let y = sample.label();
    log_partition_of(|x| classifier.expected_loss(x, y), ball, beta, resolution)
}

/// The entropy-regularized primal-dual gap of a strategy pair.
///
/// Defined only for density attackers (grid-exact mode): against an atomic
/// measure the KL penalty is infinite. The supremum side is the mean
/// per-sample log-partition value on each density's own grid; the infimum
/// side minimizes the attacked mean loss over the theta grid and subtracts
/// the attacker's mean entropy penalty.
pub fn gap_regularized(
    classifier: &ParticleMixture,
    attacker: &AttackerMeasure<'_>,
    dataset: &Dataset,
    theta_grid: &ThetaGrid,
    beta: f64,
    resolution: usize,
) -> Result<GapReport> {
    let densities = match attacker {
        AttackerMeasure::Atoms(_) => {
            return Err(Error::invalid(
                "regularized gap is undefined for an atomic attacker; use grid-exact densities",
            ))
        }
        AttackerMeasure::Densities(d) => *d,
    };
    validate_pair(classifier, attacker, dataset)?;
    if theta_grid.dim_theta() != classifier.dim_theta() {
        return Err(Error::invalid("theta grid dimension does not match the classifier"));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::invalid(format!(
            "regularized gap temperature must be finite and > 0, got {beta}"
        )));
    }
    for d in densities {
        if d.grid().resolution() != resolution {
            return Err(Error::invalid(format!(
                "attacker density resolution {} does not match requested {resolution}",
                d.grid().resolution()
            )));
        }
    }
    let n = dataset.len();
    let sup_terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let y = dataset.sample(i).label();
            let grid = densities[i].grid();
            let scores: Vec<f64> =
                grid.iter_points().map(|x| classifier.expected_loss(x, y)).collect();
            log_partition_on_points(&scores, beta)
        })
        .collect::<Result<_>>()?;
    let sup = sup_terms.iter().sum::<f64>() / n as f64;
    let mean_entropy =
        densities.iter().map(entropy_penalty).sum::<f64>() / n as f64;
    let (_, min_loss) = theta_grid.argmin(|theta| {
        let mut acc = 0.0;
        for i in 0..n {
            acc += densities[i].expected(|x| game::loss_theta(theta, x, dataset.sample(i).label()));
        }
        acc / n as f64
    })?;
    let inf = min_loss - beta * mean_entropy;
    Ok(GapReport::assemble(sup, inf, beta, theta_grid.len(), resolution))
}

/// Estimates the Lipschitz constant of the mixture's expected loss in `x`:
/// the maximum over samples and grid points of the l1 norm of the gradient
/// (dual to the sup-norm geometry), inflated by a 1.1 safety factor.
pub fn estimate_lipschitz_x(
    classifier: &ParticleMixture,
    dataset: &Dataset,
    threat: &ThreatModel,
    resolution: usize,
) -> Result<f64> {
    if classifier.dim_theta() != dataset.dim() + 1 {
        return Err(Error::invalid("classifier dimension does not match the dataset"));
    }
    let d = dataset.dim();
    let maxima: Vec<f64> = (0..dataset.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let sample = dataset.sample(i);
            let ball = threat.ball_for(sample)?;
            let grid = BallGrid::new(&ball, resolution)?;
            let y = sample.label();
            let mut grad = vec![0.0; d];
            let mut worst = 0.0f64;
            for x in grid.iter_points() {
                grad.iter_mut().for_each(|v| *v = 0.0);
                classifier.add_scaled_expected_grad_x(x, y, 1.0, &mut grad);
                let l1: f64 = grad.iter().map(|v| v.abs()).sum();
                worst = worst.max(l1);
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(1.1 * maxima.into_iter().fold(0.0, f64::max))
}

/// Outcome of checking the regularization-bias inequality
/// `G_0 <= G_beta + beta d_x log(2 eps G / (beta d_x)) + beta d_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Unregularized gap `G_0`.
    pub g0: f64,
    /// Regularized gap `G_beta`.
    pub g_beta: f64,
    /// Entropy temperature.
    pub beta: f64,
    /// Perturbation radius.
    pub eps: f64,
    /// Input dimension.
    pub d_x: usize,
    /// Lipschitz estimate `G` used in the logarithm.
    pub lipschitz: f64,
    /// `(G_beta + beta d_x log(2 eps G/(beta d_x)) + beta d_x) - G_0`.
    pub slack: f64,
    /// Quadrature error budget the check tolerates.
    pub tolerance: f64,
    /// Whether `slack >= -tolerance`.
    pub satisfied: bool,
}

impl BoundReport {
    /// Flat `key = value` rendering.
    pub fn to_kv_string(&self) -> String {
        format!(
            "beta = {}\nd_x = {}\neps = {}\ng0 = {}\ng_beta = {}\nlipschitz = {}\nsatisfied = {}\nslack = {}\ntolerance = {}\n",
            self.beta,
            self.d_x,
            self.eps,
            self.g0,
            self.g_beta,
            self.lipschitz,
            self.satisfied,
            self.slack,
            self.tolerance
        )
    }

    /// Header for [`BoundReport::csv_row`].
    pub const CSV_HEADER: &'static str =
        "beta,eps,d_x,g0,g_beta,lipschitz,slack,tolerance,satisfied";

    /// One CSV row (no newline).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.beta,
            self.eps,
            self.d_x,
            self.g0,
            self.g_beta,
            self.lipschitz,
            self.slack,
            self.tolerance,
            self.satisfied
        )
    }
}

/// Checks the regularization-bias inequality for one strategy pair on
/// sup-norm balls, computing both gaps at the same pair, the Lipschitz
/// estimate, and the slack with a grid-derived tolerance.
///
/// Preconditions (violations are reported by name): sup-norm threat model
/// and `0 < beta <= eps / d_x`.
pub fn check_regularization_bound(
    classifier: &ParticleMixture,
    attacker: &[GridDensity],
    dataset: &Dataset,
    threat: &ThreatModel,
    beta: f64,
    theta_grid: &ThetaGrid,
    resolution: usize,
) -> Result<BoundReport> {
    if threat.norm != NormKind::Linf {
        return Err(Error::invalid(
            "regularization bound precondition violated: threat model must use sup-norm balls",
        ));
    }
    let d_x = dataset.dim();
    let eps = threat.radius;
    if !(eps > 0.0) {
        return Err(Error::invalid(
            "regularization bound precondition violated: radius eps must be > 0",
        ));
    }
    if !beta.is_finite() || beta <= 0.0 || beta > eps / d_x as f64 {
        return Err(Error::invalid(format!(
            "regularization bound precondition violated: need 0 < beta <= eps/d_x, got beta = {beta}, eps/d_x = {}",
            eps / d_x as f64
        )));
    }
    let measure = AttackerMeasure::Densities(attacker);
    let g0 = gap_unregularized(classifier, &measure, dataset, theta_grid, resolution)?;
    let g_beta = gap_regularized(classifier, &measure, dataset, theta_grid, beta, resolution)?;
    let est = estimate_lipschitz_x(classifier, dataset, threat, resolution)?;
    // Any upper bound on the true Lipschitz constant is admissible and only
    // loosens the certificate; flooring keeps the logarithm nonnegative for
    // near-constant losses.
    let bd = beta * d_x as f64;
    let lipschitz = est.max(bd / (2.0 * eps));
    let penalty = bd * (2.0 * eps * lipschitz / bd).ln() + bd;
    let slack = g_beta.gap + penalty - g0.gap;
    // Each gap's supremum term is quadrature-limited: within G * h/2 of the
    // true supremum for cells of side h in the sup norm. The theta-grid
    // error cancels between the two gaps (same grid, same attacker).
    let h = 2.0 * eps / resolution as f64;
    let tolerance = lipschitz * h + 1e-9;
    Ok(BoundReport {
        g0: g0.gap,
        g_beta: g_beta.gap,
        beta,
        eps,
        d_x,
        lipschitz,
        slack,
        tolerance,
        satisfied: slack >= -tolerance,
    })
}

/// State recorded by a grid-exact run at one checkpoint, sufficient to
/// evaluate the Frank-Wolfe potentials.
#[derive(Debug, Clone)]
pub struct GridCheckpoint {
    /// Completed outer iterations.
    pub t: usize,
    /// The averaged classifier `mu_bar(t)`, flattened to one mixture.
    pub classifier_avg: ParticleMixture,
    /// The attacker's exact Gibbs response to `mu_bar(t)`, per sample.
    pub nu_response: Vec<GridDensity>,
    /// The running average `nu_bar(t)` of the Gibbs responses, per sample.
    pub nu_avg: Vec<GridDensity>,
    /// `(1/t) sum_{s<t} L(mu^(s), nu^(s))`: running mean of the bilinear
    /// loss between the iteration's own mixture and its Gibbs response.
    pub run_mean_loss: f64,
}

/// One row of the potential trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovRow {
    /// Completed outer iterations.
    pub t: usize,
    /// Classifier potential: running mean loss minus the theta-grid
    /// minimum against `nu_bar(t)`.
    pub r_mu: f64,
    /// Attacker potential: regularized response value minus running mean
    /// loss plus the entropy penalty of `nu_bar(t)`.
    pub r_nu: f64,
    /// The running mean loss itself.
    pub run_mean_loss: f64,
}

/// Renders potential rows as CSV with header `t,r_mu,r_nu,run_mean_loss`.
pub fn lyapunov_csv(rows: &[LyapunovRow]) -> String {
    let mut out = String::from("t,r_mu,r_nu,run_mean_loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.t, r.r_mu, r.r_nu, r.run_mean_loss));
    }
    out
}

/// Computes the two potentials at every checkpoint of a grid-exact run.
///
/// With `nu(t)` the exact Gibbs response to `mu_bar(t)`:
///
/// ```text
/// R_nu(t) = [L(mu_bar(t), nu(t)) - beta H(nu(t))]
///           - run_mean_loss(t) + beta H(nu_bar(t))
/// R_mu(t) = run_mean_loss(t) - min_theta L(theta, nu_bar(t))
/// ```
///
/// where `H` is the mean per-sample entropy penalty. Their sum reproduces
/// the regularized gap at `(mu_bar(t), nu_bar(t))` up to quadrature.
pub fn lyapunov_trace(
    checkpoints: &[GridCheckpoint],
    dataset: &Dataset,
    theta_grid: &ThetaGrid,
    beta: f64,
) -> Result<Vec<LyapunovRow>> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("potential trace needs at least one checkpoint"));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::invalid(format!(
            "potential trace temperature must be finite and > 0, got {beta}"
        )));
    }
    let n = dataset.len();
    let mut rows = Vec::with_capacity(checkpoints.len());
    for cp in checkpoints {
        if cp.nu_response.len() != n || cp.nu_avg.len() != n {
            return Err(Error::invalid(format!(
                "checkpoint {} attacker coverage does not match the dataset",
                cp.t
            )));
        }
        if !cp.run_mean_loss.is_finite() {
            return Err(Error::invalid(format!(
                "checkpoint {} running mean loss is not finite",
                cp.t
            )));
        }
        let response_value = game_value(
            &cp.classifier_avg,
            &AttackerMeasure::Densities(&cp.nu_response),
            dataset,
        )?;
        let h_response =
            cp.nu_response.iter().map(entropy_penalty).sum::<f64>() / n as f64;
        let h_avg = cp.nu_avg.iter().map(entropy_penalty).sum::<f64>() / n as f64;
        let r_nu = response_value - beta * h_response - cp.run_mean_loss + beta * h_avg;
        let (_, min_loss) = theta_grid.argmin(|theta| {
            let mut acc = 0.0;
            for i in 0..n {
                acc += cp.nu_avg[i]
                    .expected(|x| game::loss_theta(theta, x, dataset.sample(i).label()));
            }
            acc / n as f64
        })?;
        let r_mu = cp.run_mean_loss - min_loss;
        rows.push(LyapunovRow { t: cp.t, r_mu, r_nu, run_mean_loss: cp.run_mean_loss });
    }
    Ok(rows)
}
