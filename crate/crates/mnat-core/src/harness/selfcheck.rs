//! Built-in diagnostics: a battery of numeric identities the library must
//! satisfy, runnable from the command line as a smoke test of the install.
//!
//! Each check exercises one load-bearing piece of the implementation
//! against an independent reference: analytic gradients against central
//! finite differences, the recursive running average against a direct
//! arithmetic mean, multiplicative weights against the simplex invariants,
//! ball projection against its defining properties, quadrature against a
//! closed-form log-partition, and two whole-run checks (determinism and a
//! config-echo closed loop).

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::eval::log_partition_of;
use crate::game::{
    add_scaled_grad_x, grad_theta_into, loss_theta, Ball, NormKind, ThreatModel,
};
use crate::measures::mw_update;
use crate::sampler::PlaConfig;
use crate::solver::{frat_run, EvalConfig, FratConfig, RunTrace};

use super::synthetic::{generate_synthetic, SyntheticSpec};
use super::{run_training, Algo, TrainSettings};

/// Outcome of one self-check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    /// Stable check name.
    pub name: &'static str,
    /// Whether the check passed.
    pub passed: bool,
    /// What was measured (or what went wrong).
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} - {}", self.name, self.detail)
    }
}

type Check = std::result::Result<String, String>;

/// Turns library errors into check failures instead of panics.
fn ck<T>(r: crate::error::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Runs every self-check and reports each outcome.
pub fn selfcheck() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Check); 7] = [
        ("finite-difference-gradients", finite_difference_gradients),
        ("frank-wolfe-average", frank_wolfe_average),
        ("multiplicative-weights-simplex", multiplicative_weights_simplex),
        ("ball-projection", ball_projection),
        ("log-partition-oracle", log_partition_oracle),
        ("run-determinism", run_determinism),
        ("config-closed-loop", config_closed_loop),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckResult { name, passed: true, detail },
            Err(detail) => CheckResult { name, passed: false, detail },
        })
        .collect()
}

/// Central finite difference of `f` at `v[k]` with half-width `h`.
fn central_diff<F: Fn(&[f64]) -> f64>(f: F, v: &[f64], k: usize, h: f64) -> f64 {
    let mut hi = v.to_vec();
    let mut lo = v.to_vec();
    hi[k] += h;
    lo[k] -= h;
    (f(&hi) - f(&lo)) / (2.0 * h)
}

/// Analytic loss gradients against central differences, in both arguments.
fn finite_difference_gradients() -> Check {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(90_001);
    let mut worst = 0.0_f64;
    let mut instances = 0;
    for d in 1..=5 {
        for _ in 0..5 {
            instances += 1;
            let theta: Vec<f64> = (0..d + 1).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let y = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let scale = rng.random_range(0.5..=2.0);

            let mut grad = vec![0.0; d + 1];
            grad_theta_into(&theta, &x, y, &mut grad);
            for k in 0..d + 1 {
                let fd = central_diff(|t| loss_theta(t, &x, y), &theta, k, H);
                let err = (grad[k] - fd).abs() / grad[k].abs().max(1.0);
                worst = worst.max(err);
            }

            let mut acc = vec![0.0; d];
            add_scaled_grad_x(&theta, &x, y, scale, &mut acc);
            for k in 0..d {
                let fd = scale * central_diff(|p| loss_theta(&theta, p, y), &x, k, H);
                let err = (acc[k] - fd).abs() / acc[k].abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    if worst <= TOL {
        Ok(format!("{instances} instances, worst relative gradient error {worst:.3e} <= {TOL:e}"))
    } else {
        Err(format!("worst relative gradient error {worst:.3e} exceeds {TOL:e}"))
    }
}

/// The recursive running average used for strategy averaging against a
/// direct arithmetic mean.
fn frank_wolfe_average() -> Check {
    const T: usize = 10_000;
    const D: usize = 4;
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(90_002);
    let draws: Vec<Vec<f64>> =
        (0..T).map(|_| (0..D).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut avg = draws[0].clone();
    for (count, x) in draws.iter().enumerate().skip(1) {
        let lambda = 1.0 / (count as f64 + 1.0);
        for k in 0..D {
            avg[k] = avg[k] * (1.0 - lambda) + x[k] * lambda;
        }
    }
    let mut mean = vec![0.0; D];
    for x in &draws {
        for k in 0..D {
            mean[k] += x[k];
        }
    }
    for m in &mut mean {
        *m /= T as f64;
    }
    let worst = avg
        .iter()
        .zip(&mean)
        .map(|(a, m)| (a - m).abs())
        .fold(0.0_f64, f64::max);
    if worst <= TOL {
        Ok(format!("{T} recursive updates, max deviation from the direct mean {worst:.3e}"))
    } else {
        Err(format!("recursive average drifts {worst:.3e} from the direct mean (tol {TOL:e})"))
    }
}

/// Composed multiplicative-weights updates stay on the simplex.
fn multiplicative_weights_simplex() -> Check {
    const ROUNDS: usize = 10_000;
    const J: usize = 8;
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(90_003);
    let mut w = vec![1.0 / J as f64; J];
    let mut worst_sum = 0.0_f64;
    for _ in 0..ROUNDS {
        let losses: Vec<f64> = (0..J).map(|_| rng.random::<f64>()).collect();
        w = ck(mw_update(&w, &losses, 0.05))?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        if let Some(bad) = w.iter().find(|&&v| !(v >= 0.0)) {
            return Err(format!("weight left the simplex: {bad}"));
        }
    }
    if worst_sum <= TOL {
        Ok(format!("{ROUNDS} updates on {J} weights, worst |sum - 1| = {worst_sum:.3e}"))
    } else {
        Err(format!("weights drifted off the simplex: worst |sum - 1| = {worst_sum:.3e}"))
    }
}

/// Projection onto perturbation balls: membership, idempotence, and
/// interior points held fixed, in both norms.
fn ball_projection() -> Check {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(90_004);
    let mut tested = 0;
    for norm in [NormKind::L2, NormKind::Linf] {
        for _ in 0..20 {
            let d = rng.random_range(1..=4);
            let center: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let radius = rng.random_range(0.1..=1.5);
            let ball = ck(Ball::new(center.clone(), radius, norm))?;
            // A far-outside point must land in the ball, and stay put when
            // projected again.
            let outside: Vec<f64> =
                center.iter().map(|c| c + rng.random_range(2.0..=6.0) * radius).collect();
            let proj = ck(ball.project(&outside))?;
            if !ball.contains(&proj) {
                return Err(format!("{norm} projection left the ball: {proj:?}"));
            }
            let again = ck(ball.project(&proj))?;
            let drift = proj
                .iter()
                .zip(&again)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            if drift > TOL {
                return Err(format!("{norm} projection is not idempotent: drift {drift:.3e}"));
            }
            // An interior point must be returned unchanged.
            let interior: Vec<f64> =
                center.iter().map(|c| c + rng.random_range(-0.2..=0.2) * radius).collect();
            let fixed = ck(ball.project(&interior))?;
            if fixed != interior {
                return Err(format!("{norm} projection moved an interior point"));
            }
            tested += 1;
        }
    }
    Ok(format!("{tested} balls across both norms: membership, idempotence, interior fixed"))
}

/// Quadrature log-partition against the closed form for a linear score on
/// an interval: `c + beta * ln((beta/eps) * sinh(eps/beta))`.
fn log_partition_oracle() -> Check {
    const TOL: f64 = 1e-6;
    const RESOLUTION: usize = 10_000;
    let center = 0.3;
    let eps = 0.7;
    let ball = ck(Ball::new(vec![center], eps, NormKind::Linf))?;
    let mut details = Vec::new();
    for beta in [0.05, 0.5] {
        let got = ck(log_partition_of(|x| x[0], &ball, beta, RESOLUTION))?;
        let closed = center + beta * ((beta / eps) * (eps / beta).sinh()).ln();
        let rel = (got - closed).abs() / closed.abs();
        if rel > TOL {
            return Err(format!(
                "beta {beta}: quadrature {got} vs closed form {closed} (relative error {rel:.3e})"
            ));
        }
        details.push(format!("beta {beta}: relative error {rel:.3e}"));
    }
    Ok(details.join(", "))
}

/// Two runs from the same seed produce identical traces and attacks.
fn run_determinism() -> Check {
    let dataset = ck(generate_synthetic(&SyntheticSpec { n: 5, seed: 7 }))?;
    let threat = ThreatModel { radius: 0.25, norm: NormKind::L2 };
    let cfg = FratConfig {
        particles: 2,
        iterations: 3,
        beta: 0.1,
        pla: PlaConfig { steps: 5, step_size: 1e-3, noise: 1.0, window: 4 },
        seed: 11,
        ..FratConfig::default()
    };
    let eval_cfg = EvalConfig { interval: 1, k: 8, flatten_cap: 8, ..EvalConfig::default() };
    let a = ck(frat_run(&cfg, &dataset, &threat, &eval_cfg))?;
    let b = ck(frat_run(&cfg, &dataset, &threat, &eval_cfg))?;
    if a.trace.without_wall_times().to_csv_string() != b.trace.without_wall_times().to_csv_string()
    {
        return Err("two identically seeded runs produced different traces".into());
    }
    if ck(a.attacks.to_csv_string())? != ck(b.attacks.to_csv_string())? {
        return Err("two identically seeded runs produced different attack atoms".into());
    }
    Ok(format!(
        "two runs of {} iterations agree on every trace row and attack atom",
        cfg.iterations
    ))
}

/// A saved run's config echo reproduces the run exactly when re-parsed
/// and re-trained.
fn config_closed_loop() -> Check {
    let settings = TrainSettings {
        eps: 0.25,
        iterations: 2,
        particles: 2,
        k: 6,
        pla_steps: 3,
        pla_window: 2,
        eval_interval: 1,
        flatten_cap: 4,
        seed: 42,
        ..TrainSettings::default_for(Algo::Frat)
    };
    let dataset = ck(generate_synthetic(&SyntheticSpec { n: 6, seed: 42 }))?;
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_err(|e| e.to_string())?
        .as_nanos();
    let base = std::env::temp_dir().join(format!(
        "mnat-selfcheck-{}-{nanos}",
        std::process::id()
    ));
    let result = (|| -> Check {
        ck(run_training(&settings, &dataset, None, &base.join("a")))?;
        let echo = std::fs::read_to_string(base.join("a").join("run_config.txt"))
            .map_err(|e| e.to_string())?;
        let reparsed = ck(TrainSettings::from_config_str(&echo))?;
        if reparsed != settings {
            return Err("re-parsed config echo differs from the original settings".into());
        }
        ck(run_training(&reparsed, &dataset, None, &base.join("b")))?;
        for file in ["trace.csv", "mixture.csv"] {
            let read = |run: &str| {
                std::fs::read_to_string(base.join(run).join(file)).map_err(|e| e.to_string())
            };
            let (a, b) = (read("a")?, read("b")?);
            let (a, b) = if file == "trace.csv" {
                let strip = |text: &str| -> Check {
                    Ok(ck(RunTrace::from_csv_str(text))?.without_wall_times().to_csv_string())
                };
                (strip(&a)?, strip(&b)?)
            } else {
                (a, b)
            };
            if a != b {
                return Err(format!("re-running the echoed config changed {file}"));
            }
        }
        Ok("config echo re-parses to the same settings and reproduces the run".into())
    })();
    let _ = std::fs::remove_dir_all(&base);
    result
}
