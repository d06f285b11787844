//! Command-line interface for the mixed-Nash adversarial-training toolkit.
//!
//! Six subcommands cover the experiment lifecycle: `gen-data` draws
//! synthetic datasets, `train` fits one randomized classifier with any of
//! the five algorithms, `eval` re-scores a saved run on any dataset, `gap`
//! computes equilibrium diagnostics for a saved run, `sweep` drives a full
//! radius x algorithm x seed grid and aggregates it, and `selfcheck` runs
//! the built-in numeric diagnostics.
//!
//! Exit codes: 0 on success, 1 on command-line usage errors, 2 on runtime
//! failures; stderr carries a single structured `error: ...` line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use mnat_core::error::{Error, Result};
use mnat_core::eval::{
    check_regularization_bound, gap_regularized, gap_unregularized, robust_metrics, ThetaGrid,
};
use mnat_core::harness::{
    aggregate_sweep, generate_synthetic, parse_config_text, run_sweep, run_training, selfcheck,
    sha256_hex, Algo, RunManifest, SweepSpec, SyntheticSpec, TrainSettings,
};
use mnat_core::measures::AttackerMeasure;
use mnat_core::solver::RunTrace;
use mnat_core::{AttackAverage, BallGrid, Dataset, GridDensity, ParticleMixture, RngStream};

const BASELINE_HELP: &str = "Baseline notes:
  atm, oracle, and regularized are reconstructions from brief published
  descriptions, not the original implementations; expect qualitative rather
  than bit-exact agreement with previously reported numbers. Pass
  --baseline-note to print the disclaimer for the chosen algorithm.";

#[derive(Parser)]
#[command(
    name = "mnat",
    version,
    about = "Mixed-Nash adversarial training: randomized linear classifiers \
             against entropy-regularized attackers, with robust evaluation, \
             equilibrium diagnostics, and radius sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic two-class Gaussian-mixture dataset
    GenData(GenDataArgs),
    /// Train one run and write its artifacts to a directory
    Train(TrainArgs),
    /// Robust metrics of a saved run on a dataset
    Eval(EvalArgs),
    /// Equilibrium-gap and regularization-bound reports for a saved run
    Gap(GapArgs),
    /// Train a radius x algorithm x seed grid and aggregate it
    Sweep(SweepArgs),
    /// Run the built-in numeric diagnostics
    Selfcheck,
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples
    #[arg(long)]
    n: usize,
    /// Seed of the draw
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Also write a companion test set (same law, seed shifted by a fixed
    /// offset)
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Companion test-set size (defaults to --n)
    #[arg(long, requires = "test_out")]
    test_n: Option<usize>,
}

#[derive(Args)]
#[command(after_help = BASELINE_HELP)]
struct TrainArgs {
    /// Algorithm: frat, sat, atm, oracle, or regularized
    #[arg(long, value_parser = parse_algo, required_unless_present = "config")]
    algo: Option<Algo>,
    /// Training dataset CSV
    #[arg(long, required_unless_present = "baseline_note")]
    data: Option<PathBuf>,
    /// Held-out dataset CSV for the trace's test columns
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Output run directory
    #[arg(long, required_unless_present = "baseline_note")]
    out: Option<PathBuf>,
    /// Flat `key = value` config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the reconstruction disclaimer for the chosen algorithm and exit
    #[arg(long, default_value_t = false)]
    baseline_note: bool,
    /// Perturbation radius
    #[arg(long)]
    eps: Option<f64>,
    /// Perturbation norm: l2 or linf
    #[arg(long)]
    norm: Option<String>,
    /// Outer iterations
    #[arg(long)]
    iterations: Option<usize>,
    /// Classifier particle count
    #[arg(long, visible_alias = "particles")]
    models: Option<usize>,
    /// Candidate pool size (oracle and regularized baselines)
    #[arg(long)]
    candidates: Option<usize>,
    /// Parameter step size
    #[arg(long)]
    eta: Option<f64>,
    /// Weight step size
    #[arg(long)]
    eta_prime: Option<f64>,
    /// Entropy temperature
    #[arg(long)]
    beta: Option<f64>,
    /// Attack draws for best-of-k attacks and evaluations
    #[arg(long)]
    k: Option<usize>,
    /// Langevin chain steps per iteration
    #[arg(long)]
    pla_steps: Option<usize>,
    /// Langevin discretization step size
    #[arg(long)]
    pla_step_size: Option<f64>,
    /// Langevin noise scale (0 gives deterministic ascent)
    #[arg(long)]
    pla_noise: Option<f64>,
    /// Snapshot window approximating the averaged classifier in the chain
    #[arg(long)]
    pla_window: Option<usize>,
    /// Samples attacked per iteration (0 attacks the full batch)
    #[arg(long)]
    minibatch: Option<usize>,
    /// Trace-row interval in iterations (0 keeps only the final row)
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Snapshot cap when flattening the averaged classifier
    #[arg(long)]
    flatten_cap: Option<usize>,
    /// Stop early when the robust training loss changes by less than this
    /// relative amount between trace rows (0 disables)
    #[arg(long)]
    plateau: Option<f64>,
    /// Root seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved run directory (reads mixture.csv and run_config.txt)
    #[arg(long)]
    run: PathBuf,
    /// Dataset CSV to evaluate on
    #[arg(long)]
    data: PathBuf,
    /// Perturbation radius (defaults to the run's)
    #[arg(long)]
    eps: Option<f64>,
    /// Perturbation norm l2|linf (defaults to the run's)
    #[arg(long)]
    norm: Option<String>,
    /// Attack draws (defaults to the run's k)
    #[arg(long)]
    k: Option<usize>,
    /// Evaluation seed (defaults to the run's seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the metrics to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GapArgs {
    /// Saved run directory (reads mixture.csv, run_config.txt, and, for the
    /// default atom-based gap, attacks.csv)
    #[arg(long)]
    run: PathBuf,
    /// Dataset CSV (the run's training data for the atom-based gap)
    #[arg(long)]
    data: PathBuf,
    /// Temperature: report the entropy-regularized gap against exact Gibbs
    /// responses instead of the saved attack atoms
    #[arg(long)]
    beta: Option<f64>,
    /// Check the regularization-bias bound (needs --beta and a sup-norm run)
    #[arg(long, default_value_t = false, requires = "beta")]
    bound: bool,
    /// Perturbation radius (defaults to the run's)
    #[arg(long)]
    eps: Option<f64>,
    /// Perturbation norm l2|linf (defaults to the run's)
    #[arg(long)]
    norm: Option<String>,
    /// Per-dimension quadrature resolution
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    /// Also write the report to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(after_help = "Radii accept a comma list (\"0,0.5,1\") or an \
inclusive range \"start:step:end\" (\"0:0.1:5\"), snapped to 9 decimal \
places. The MNAT_THREADS environment variable caps the worker pool.")]
struct SweepArgs {
    /// Perturbation radii: comma list or start:step:end range
    #[arg(long, value_parser = parse_eps_list)]
    eps: EpsList,
    /// Comma-separated algorithms (frat, sat, atm, oracle, regularized)
    #[arg(long, value_parser = parse_algo_list)]
    algos: AlgoList,
    /// Number of seeds; cells run seeds 0..count
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Training samples per seed
    #[arg(long, default_value_t = 100)]
    n_train: usize,
    /// Test samples per seed
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    /// Base config file shared by every cell
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-algorithm override `algo.key=value` (repeatable)
    #[arg(long = "set", value_parser = parse_override)]
    set: Vec<OverrideKv>,
    /// Output directory (cells in subdirectories, aggregate.csv at the top)
    #[arg(long)]
    out: PathBuf,
    /// Skip training and aggregate existing cell directories
    #[arg(long, default_value_t = false)]
    aggregate_only: bool,
}

/// A parsed `--eps` list.
#[derive(Debug, Clone)]
struct EpsList(Vec<f64>);

/// A parsed `--algos` list.
#[derive(Debug, Clone)]
struct AlgoList(Vec<Algo>);

/// A parsed `--set algo.key=value` override.
#[derive(Debug, Clone)]
struct OverrideKv {
    algo: Algo,
    key: String,
    value: String,
}

/// Runs the CLI against an argument vector and returns the process exit
/// code (0 success, 1 usage error, 2 runtime failure).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; they print to stdout
            // and exit 0, while genuine usage errors go to stderr with 1.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gap(args) => cmd_gap(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec { n: args.n, seed: args.seed };
    let dataset = generate_synthetic(&spec)?;
    write_with_parents(&args.out, &dataset.to_csv_string())?;
    println!("wrote {} samples to {}", dataset.len(), args.out.display());
    if let Some(test_out) = &args.test_out {
        let test_spec = SyntheticSpec { n: args.test_n.unwrap_or(args.n), ..spec.test_spec() };
        let test = generate_synthetic(&test_spec)?;
        write_with_parents(test_out, &test.to_csv_string())?;
        println!(
            "wrote {} test samples to {} (seed {})",
            test.len(),
            test_out.display(),
            test_spec.seed
        );
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut settings = resolve_train_settings(args)?;
    for (key, value) in train_flag_overrides(args) {
        settings.apply_kv(key, &value)?;
    }
    if args.baseline_note {
        println!("{}", baseline_note(settings.algo));
        return Ok(());
    }
    let data_path = args.data.as_ref().expect("clap requires --data");
    let out = args.out.as_ref().expect("clap requires --out");
    let dataset = Dataset::load_csv(data_path)?;
    let test = args.test_data.as_ref().map(|p| Dataset::load_csv(p)).transpose()?;
    let manifest = run_training(&settings, &dataset, test.as_ref(), out)?;
    let trace = RunTrace::from_csv_str(&fs::read_to_string(out.join("trace.csv"))?)?;
    if let Some(row) = trace.rows().last() {
        println!(
            "trained {} through iteration {}: robust_train_loss = {}, robust_train_acc = {}",
            settings.algo, row.iter, row.robust_train_loss, row.robust_train_acc
        );
    }
    println!("artifacts in {}: {}", out.display(), manifest.files.join(", "));
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut settings = load_run_settings(&args.run)?;
    apply_threat_overrides(&mut settings, &args.eps, &args.norm)?;
    if let Some(k) = args.k {
        settings.apply_kv("k", &k.to_string())?;
    }
    if let Some(seed) = args.seed {
        settings.apply_kv("seed", &seed.to_string())?;
    }
    settings.validate()?;
    let mixture = ParticleMixture::load_csv(&args.run.join("mixture.csv"))?;
    let dataset = Dataset::load_csv(&args.data)?;
    let threat = settings.threat();
    let stream = RngStream::new(settings.seed);
    let m = robust_metrics(&mixture, &dataset, &threat, settings.k, &stream, 0)?;
    let text = format!(
        "natural_acc = {}\nnatural_loss = {}\nrobust_acc = {}\nrobust_loss = {}\n",
        m.natural_accuracy, m.natural_loss, m.robust_accuracy, m.robust_loss
    );
    print!("{text}");
    if let Some(out) = &args.out {
        write_with_parents(out, &text)?;
    }
    Ok(())
}

fn cmd_gap(args: &GapArgs) -> Result<()> {
    let mut settings = load_run_settings(&args.run)?;
    apply_threat_overrides(&mut settings, &args.eps, &args.norm)?;
    settings.validate()?;
    let mixture = ParticleMixture::load_csv(&args.run.join("mixture.csv"))?;
    let dataset = Dataset::load_csv(&args.data)?;
    let threat = settings.threat();
    let theta_grid = ThetaGrid::default_grid(dataset.dim(), &[&mixture], &[])?;
    let text = if args.bound {
        let beta = args.beta.expect("clap requires --beta with --bound");
        let densities = gibbs_responses(&mixture, &dataset, &threat, beta, args.resolution)?;
        check_regularization_bound(
            &mixture,
            &densities,
            &dataset,
            &threat,
            beta,
            &theta_grid,
            args.resolution,
        )?
        .to_kv_string()
    } else if let Some(beta) = args.beta {
        let densities = gibbs_responses(&mixture, &dataset, &threat, beta, args.resolution)?;
        let attacker = AttackerMeasure::Densities(&densities);
        gap_regularized(&mixture, &attacker, &dataset, &theta_grid, beta, args.resolution)?
            .to_kv_string()
    } else {
        let attacks = load_run_attacks(&args.run, &dataset, &threat)?;
        let attacker = AttackerMeasure::Atoms(&attacks);
        gap_unregularized(&mixture, &attacker, &dataset, &theta_grid, args.resolution)?
            .to_kv_string()
    };
    print!("{text}");
    if let Some(out) = &args.out {
        write_with_parents(out, &text)?;
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = match &args.config {
        Some(path) => TrainSettings::from_config_str(&fs::read_to_string(path)?)?,
        None => TrainSettings::default_for(Algo::Frat),
    };
    let spec = SweepSpec {
        eps: args.eps.0.clone(),
        algos: args.algos.0.clone(),
        seeds: (0..args.seeds).collect(),
        n_train: args.n_train,
        n_test: args.n_test,
        base,
        overrides: args
            .set
            .iter()
            .map(|o| (o.algo, o.key.clone(), o.value.clone()))
            .collect(),
    };
    if !args.aggregate_only {
        let cells = run_sweep(&spec, &args.out)?;
        println!("trained {cells} cells under {}", args.out.display());
    }
    let csv = aggregate_sweep(&spec, &args.out)?;
    let path = args.out.join("aggregate.csv");
    fs::write(&path, &csv)?;
    println!("aggregate written to {}", path.display());
    Ok(())
}

fn cmd_selfcheck() -> Result<()> {
    let results = selfcheck();
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{r}");
    }
    if failed > 0 {
        return Err(Error::Runtime(format!(
            "{failed} of {} self-checks failed",
            results.len()
        )));
    }
    println!("all {} self-checks passed", results.len());
    Ok(())
}

/// Settings seeded from the config file and/or the --algo flag: defaults
/// for the algorithm, overridden by every config line, with the flag
/// winning over the file's `algo` key.
fn resolve_train_settings(args: &TrainArgs) -> Result<TrainSettings> {
    let Some(path) = &args.config else {
        return Ok(TrainSettings::default_for(args.algo.expect("clap requires --algo")));
    };
    let kv = parse_config_text(&fs::read_to_string(path)?)?;
    let algo = match (args.algo, kv.get("algo")) {
        (Some(algo), _) => algo,
        (None, Some(value)) => value.parse()?,
        (None, None) => {
            return Err(Error::invalid(
                "no algorithm: pass --algo or put an `algo` line in the config file",
            ))
        }
    };
    let mut settings = TrainSettings::default_for(algo);
    for (key, value) in &kv {
        settings.apply_kv(key, value)?;
    }
    settings.algo = algo;
    Ok(settings)
}

/// The explicit flag overrides of one `train` invocation, as config pairs.
fn train_flag_overrides(args: &TrainArgs) -> Vec<(&'static str, String)> {
    fn push<T: ToString>(kv: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
        if let Some(v) = v {
            kv.push((key, v.to_string()));
        }
    }
    let mut kv = Vec::new();
    push(&mut kv, "eps", &args.eps);
    push(&mut kv, "norm", &args.norm);
    push(&mut kv, "iterations", &args.iterations);
    push(&mut kv, "particles", &args.models);
    push(&mut kv, "candidates", &args.candidates);
    push(&mut kv, "eta", &args.eta);
    push(&mut kv, "eta_prime", &args.eta_prime);
    push(&mut kv, "beta", &args.beta);
    push(&mut kv, "k", &args.k);
    push(&mut kv, "pla_steps", &args.pla_steps);
    push(&mut kv, "pla_step_size", &args.pla_step_size);
    push(&mut kv, "pla_noise", &args.pla_noise);
    push(&mut kv, "pla_window", &args.pla_window);
    push(&mut kv, "minibatch", &args.minibatch);
    push(&mut kv, "eval_interval", &args.eval_interval);
    push(&mut kv, "flatten_cap", &args.flatten_cap);
    push(&mut kv, "plateau", &args.plateau);
    push(&mut kv, "seed", &args.seed);
    kv
}

/// The per-algorithm disclaimer printed by `train --baseline-note`.
fn baseline_note(algo: Algo) -> String {
    match algo {
        Algo::Atm | Algo::Oracle | Algo::Regularized => format!(
            "{algo} is a reconstruction from a brief published description, \
             not the original implementation; expect qualitative rather than \
             bit-exact agreement with previously reported numbers."
        ),
        Algo::Frat | Algo::Sat => {
            format!("{algo} is implemented natively by this toolkit; no baseline disclaimer applies.")
        }
    }
}

/// Reads a saved run's echoed configuration.
fn load_run_settings(run: &Path) -> Result<TrainSettings> {
    let path = run.join("run_config.txt");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Runtime(format!("cannot read {}: {e}", path.display())))?;
    TrainSettings::from_config_str(&text)
}

/// Applies optional --eps/--norm overrides onto loaded run settings.
fn apply_threat_overrides(
    settings: &mut TrainSettings,
    eps: &Option<f64>,
    norm: &Option<String>,
) -> Result<()> {
    if let Some(eps) = eps {
        settings.apply_kv("eps", &eps.to_string())?;
    }
    if let Some(norm) = norm {
        settings.apply_kv("norm", norm)?;
    }
    Ok(())
}

/// Loads a run's saved attack atoms against the dataset's perturbation
/// balls, verifying the dataset is the run's training data.
fn load_run_attacks(
    run: &Path,
    dataset: &Dataset,
    threat: &mnat_core::ThreatModel,
) -> Result<AttackAverage> {
    let manifest = RunManifest::load(run)?;
    let data_hash = sha256_hex(dataset.to_csv_string().as_bytes());
    if data_hash != manifest.dataset_sha256 {
        return Err(Error::Runtime(format!(
            "dataset hash {data_hash} does not match the run's training data \
             {}; the atom-based gap needs the original training set (pass \
             --beta for a density-based gap on other data)",
            manifest.dataset_sha256
        )));
    }
    let path = run.join("attacks.csv");
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Runtime(format!(
            "{} is missing (the run did not retain its attack history); \
             pass --beta for a density-based gap",
            path.display()
        ))
    })?;
    let balls = (0..dataset.len())
        .map(|i| threat.ball_for(dataset.sample(i)))
        .collect::<Result<Vec<_>>>()?;
    AttackAverage::from_csv_str(&text, balls)
}

/// Per-sample exact Gibbs responses to a mixture at temperature `beta`.
fn gibbs_responses(
    mixture: &ParticleMixture,
    dataset: &Dataset,
    threat: &mnat_core::ThreatModel,
    beta: f64,
    resolution: usize,
) -> Result<Vec<GridDensity>> {
    (0..dataset.len())
        .map(|i| {
            let sample = dataset.sample(i);
            let ball = threat.ball_for(sample)?;
            let grid = Arc::new(BallGrid::new(&ball, resolution)?);
            let y = sample.label();
            let scores: Vec<f64> =
                grid.iter_points().map(|x| mixture.expected_loss(x, y)).collect();
            GridDensity::gibbs(grid, &scores, beta)
        })
        .collect()
}

/// Writes `text` to `path`, creating parent directories as needed.
fn write_with_parents(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Snaps a radius to 9 decimal places so range arithmetic lands on tidy
/// grid values (0.1 + 0.2 becomes 0.3, not 0.30000000000000004).
fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn parse_algo(s: &str) -> std::result::Result<Algo, String> {
    s.trim().parse::<Algo>().map_err(|e| e.to_string())
}

fn parse_algo_list(s: &str) -> std::result::Result<AlgoList, String> {
    let algos =
        s.split(',').map(parse_algo).collect::<std::result::Result<Vec<_>, String>>()?;
    Ok(AlgoList(algos))
}

fn parse_eps_list(s: &str) -> std::result::Result<EpsList, String> {
    let parse_one = |t: &str| -> std::result::Result<f64, String> {
        let v = t
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad radius '{}': {e}", t.trim()))?;
        if !v.is_finite() {
            return Err(format!("radius must be finite, got {v}"));
        }
        Ok(v)
    };
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, step, end] = parts[..] else {
            return Err(format!("bad radius range '{s}': expected start:step:end"));
        };
        let (start, step, end) = (parse_one(start)?, parse_one(step)?, parse_one(end)?);
        if !(step > 0.0) {
            return Err(format!("radius range step must be > 0, got {step}"));
        }
        if end < start {
            return Err(format!("radius range end {end} is below its start {start}"));
        }
        let count = ((end - start) / step).round() as usize + 2;
        if count > 100_000 {
            return Err(format!("radius range '{s}' has too many points"));
        }
        let mut out = Vec::new();
        for k in 0..count {
            let v = snap(start + k as f64 * step);
            if v > end + step * 1e-9 {
                break;
            }
            out.push(v);
        }
        out
    } else {
        s.split(',').map(|t| parse_one(t).map(snap)).collect::<std::result::Result<_, _>>()?
    };
    if values.is_empty() {
        return Err("radius list is empty".into());
    }
    if let Some(&bad) = values.iter().find(|&&v| v < 0.0) {
        return Err(format!("radius must be >= 0, got {bad}"));
    }
    Ok(EpsList(values))
}

fn parse_override(s: &str) -> std::result::Result<OverrideKv, String> {
    let bad = || format!("bad override '{s}': expected algo.key=value");
    let (target, kv) = s.split_once('.').ok_or_else(bad)?;
    let (key, value) = kv.split_once('=').ok_or_else(bad)?;
    if key.trim().is_empty() || value.trim().is_empty() {
        return Err(bad());
    }
    Ok(OverrideKv {
        algo: parse_algo(target)?,
        key: key.trim().to_string(),
        value: value.trim().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_range_parses_inclusively_and_snaps() {
        let eps = parse_eps_list("0:0.1:5.0").unwrap().0;
        assert_eq!(eps.len(), 51);
        assert_eq!(eps[0], 0.0);
        assert_eq!(eps[3], 0.3, "grid values must be snapped exactly");
        assert_eq!(eps[50], 5.0);
        let halves = parse_eps_list("0:0.5:1").unwrap().0;
        assert_eq!(halves, vec![0.0, 0.5, 1.0]);
        // An end off the step grid is simply not reached.
        assert_eq!(parse_eps_list("0:0.2:0.7").unwrap().0, vec![0.0, 0.2, 0.4, 0.6]);
    }

    #[test]
    fn eps_comma_list_keeps_order_and_rejects_junk() {
        assert_eq!(parse_eps_list("1,0.25,3").unwrap().0, vec![1.0, 0.25, 3.0]);
        assert!(parse_eps_list("").is_err());
        assert!(parse_eps_list("a,b").is_err());
        assert!(parse_eps_list("-1").is_err());
        assert!(parse_eps_list("0:0:1").is_err());
        assert!(parse_eps_list("5:0.1:0").is_err());
        assert!(parse_eps_list("1:2").is_err());
        assert!(parse_eps_list("inf").is_err());
    }

    #[test]
    fn snapping_cleans_accumulated_float_noise() {
        assert_eq!(snap(0.1 + 0.2), 0.3);
        assert_eq!(snap(2.9999999999), 3.0);
        assert_eq!(snap(0.123456789), 0.123456789);
    }

    #[test]
    fn algo_lists_parse_all_names() {
        let algos = parse_algo_list("frat,sat,atm,oracle,regularized").unwrap().0;
        assert_eq!(algos.len(), 5);
        assert!(parse_algo_list("frat,bogus").is_err());
        assert!(parse_algo("FRAT").is_err(), "algorithm names are lowercase");
    }

    #[test]
    fn overrides_parse_and_reject_malformed_input() {
        let o = parse_override("sat.iterations=4000").unwrap();
        assert_eq!(o.algo, Algo::Sat);
        assert_eq!(o.key, "iterations");
        assert_eq!(o.value, "4000");
        assert!(parse_override("sat.iterations").is_err());
        assert!(parse_override("iterations=4000").is_err());
        assert!(parse_override("bogus.k=1").is_err());
        assert!(parse_override("sat.=1").is_err());
    }

    #[test]
    fn usage_errors_exit_one_and_help_exits_zero() {
        assert_eq!(run(["mnat", "--help"]), 0);
        assert_eq!(run(["mnat", "--version"]), 0);
        assert_eq!(run(["mnat", "train", "--help"]), 0);
        assert_eq!(run::<[&str; 1], &str>(["mnat"]), 1);
        assert_eq!(run(["mnat", "bogus-subcommand"]), 1);
        assert_eq!(run(["mnat", "train"]), 1, "missing required flags is a usage error");
        assert_eq!(run(["mnat", "gen-data", "--n", "ten", "--out", "x.csv"]), 1);
        assert_eq!(run(["mnat", "sweep", "--eps", "0:0:1", "--algos", "sat", "--seeds", "1", "--out", "x"]), 1);
    }

    #[test]
    fn baseline_notes_distinguish_reconstructions() {
        for algo in [Algo::Atm, Algo::Oracle, Algo::Regularized] {
            assert!(baseline_note(algo).contains("reconstruction"), "{algo}");
        }
        for algo in [Algo::Frat, Algo::Sat] {
            assert!(baseline_note(algo).contains("natively"), "{algo}");
        }
    }
}
