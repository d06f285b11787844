//! Experiment orchestration: run configuration, directory layout, training
//! dispatch, synthetic data, sweeps, and self-checks.
//!
//! A *run* is one algorithm trained at one perturbation radius with one
//! seed. [`run_training`] executes it and writes a self-describing
//! directory: `run_config.txt` (the complete flat `key = value` config,
//! sufficient to repeat the run on the same data), `trace.csv`,
//! `mixture.csv` (the strategy to deploy), `attacks.csv` when the averaged
//! attacker is available, and `manifest.txt` listing every artifact plus
//! the SHA-256 of the training data.
//!
//! Configs are flat text on purpose — one `key = value` per line, `#`
//! comments — so any tooling can parse them; command-line flags override
//! file values key by key. All floats are rendered in Rust's shortest
//! round-trip form, which keeps repeated runs byte-identical.

pub mod selfcheck;
pub mod sweep;
pub mod synthetic;

pub use selfcheck::{selfcheck, CheckResult};
pub use sweep::{aggregate_sweep, cell_dir_name, run_sweep, worker_count, SweepSpec};
pub use synthetic::{generate_synthetic, SyntheticSpec, TEST_SEED_OFFSET};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{Dataset, NormKind, ThreatModel};
use crate::measures::ParticleMixture;
use crate::sampler::{PlaConfig, RngStream};
use crate::solver::{
    atm_run, frat_run, generate_candidates, sat_run, weight_only_run, AtmConfig, EvalConfig,
    FratConfig, RunTrace, SatAttack, SatConfig, WeightOnlyConfig, WeightOnlyMode,
};

/// Proposal budget multiplier for candidate generation.
const CANDIDATE_TRIES_PER_MODEL: usize = 10_000;

/// The trainable algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algo {
    /// The particle mixed-Nash solver.
    Frat,
    /// Standard adversarial training of one model.
    Sat,
    /// Adversarial training of a mixture.
    Atm,
    /// Weight-only baseline with a best-of-k point attacker.
    Oracle,
    /// Weight-only baseline with a Langevin-sampled regularized attacker.
    Regularized,
}

impl Algo {
    /// All algorithms, in canonical (alphabetical) order.
    pub const ALL: [Algo; 5] =
        [Algo::Atm, Algo::Frat, Algo::Oracle, Algo::Regularized, Algo::Sat];

    /// The CLI name.
    pub fn name(self) -> &'static str {
        match self {
            Algo::Frat => "frat",
            Algo::Sat => "sat",
            Algo::Atm => "atm",
            Algo::Oracle => "oracle",
            Algo::Regularized => "regularized",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frat" => Ok(Algo::Frat),
            "sat" => Ok(Algo::Sat),
            "atm" => Ok(Algo::Atm),
            "oracle" => Ok(Algo::Oracle),
            "regularized" => Ok(Algo::Regularized),
            other => Err(Error::invalid(format!(
                "unknown algorithm '{other}' (expected frat, sat, atm, oracle, or regularized)"
            ))),
        }
    }
}

fn norm_name(norm: NormKind) -> &'static str {
    match norm {
        NormKind::L2 => "l2",
        NormKind::Linf => "linf",
    }
}

fn parse_norm(s: &str) -> Result<NormKind> {
    match s {
        "l2" => Ok(NormKind::L2),
        "linf" => Ok(NormKind::Linf),
        other => Err(Error::invalid(format!("unknown norm '{other}' (expected l2 or linf)"))),
    }
}

/// Complete, flat configuration of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    /// Which algorithm to run.
    pub algo: Algo,
    /// Perturbation radius.
    pub eps: f64,
    /// Perturbation norm.
    pub norm: NormKind,
    /// Iterations.
    pub iterations: usize,
    /// Particle count for the mixture solvers.
    pub particles: usize,
    /// Candidate count for the weight-only baselines.
    pub candidates: usize,
    /// Parameter step size.
    pub eta: f64,
    /// Weight step size.
    pub eta_prime: f64,
    /// Entropy temperature.
    pub beta: f64,
    /// Attack draws (best-of-k attacks and evaluation).
    pub k: usize,
    /// Langevin chain steps.
    pub pla_steps: usize,
    /// Langevin step size.
    pub pla_step_size: f64,
    /// Langevin noise scale.
    pub pla_noise: f64,
    /// Langevin window over classifier snapshots.
    pub pla_window: usize,
    /// Samples attacked per iteration (0 = full batch).
    pub minibatch: usize,
    /// Trace evaluation interval.
    pub eval_interval: usize,
    /// Snapshot cap when flattening the averaged classifier.
    pub flatten_cap: usize,
    /// Plateau stopping tolerance (0 disables the rule).
    pub plateau: f64,
    /// Root seed.
    pub seed: u64,
}

impl TrainSettings {
    /// The documented defaults for `algo`.
    pub fn default_for(algo: Algo) -> Self {
        TrainSettings {
            algo,
            eps: 1.0,
            norm: NormKind::L2,
            iterations: 2000,
            particles: 20,
            candidates: 20,
            eta: 0.1,
            eta_prime: 0.1,
            beta: 0.01,
            k: 1000,
            pla_steps: 50,
            pla_step_size: 1e-3,
            pla_noise: 1.0,
            pla_window: 100,
            minibatch: 0,
            eval_interval: 100,
            flatten_cap: 100,
            plateau: 0.0,
            seed: 0,
        }
    }

    /// Applies one configuration pair, rejecting unknown keys and
    /// unparseable values.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| Error::invalid(format!("config key '{key}': {e}")))
        }
        match key {
            "algo" => self.algo = value.parse()?,
            "eps" => self.eps = num(key, value)?,
            "norm" => self.norm = parse_norm(value)?,
            "iterations" => self.iterations = num(key, value)?,
            "particles" => self.particles = num(key, value)?,
            "candidates" => self.candidates = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "eta_prime" => self.eta_prime = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "pla_steps" => self.pla_steps = num(key, value)?,
            "pla_step_size" => self.pla_step_size = num(key, value)?,
            "pla_noise" => self.pla_noise = num(key, value)?,
            "pla_window" => self.pla_window = num(key, value)?,
            "minibatch" => self.minibatch = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "flatten_cap" => self.flatten_cap = num(key, value)?,
            "plateau" => self.plateau = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// The full configuration as sorted pairs (the config echo).
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("algo".into(), self.algo.to_string());
        kv.insert("eps".into(), self.eps.to_string());
        kv.insert("norm".into(), norm_name(self.norm).into());
        kv.insert("iterations".into(), self.iterations.to_string());
        kv.insert("particles".into(), self.particles.to_string());
        kv.insert("candidates".into(), self.candidates.to_string());
        kv.insert("eta".into(), self.eta.to_string());
        kv.insert("eta_prime".into(), self.eta_prime.to_string());
        kv.insert("beta".into(), self.beta.to_string());
        kv.insert("k".into(), self.k.to_string());
        kv.insert("pla_steps".into(), self.pla_steps.to_string());
        kv.insert("pla_step_size".into(), self.pla_step_size.to_string());
        kv.insert("pla_noise".into(), self.pla_noise.to_string());
        kv.insert("pla_window".into(), self.pla_window.to_string());
        kv.insert("minibatch".into(), self.minibatch.to_string());
        kv.insert("eval_interval".into(), self.eval_interval.to_string());
        kv.insert("flatten_cap".into(), self.flatten_cap.to_string());
        kv.insert("plateau".into(), self.plateau.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv
    }

    /// Renders the config echo as sorted `key = value` lines.
    pub fn to_config_string(&self) -> String {
        render_config(&self.to_kv())
    }

    /// Rebuilds settings from a config echo: defaults for the echoed
    /// algorithm, overridden by every line.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let kv = parse_config_text(text)?;
        let algo: Algo = kv
            .get("algo")
            .ok_or_else(|| Error::invalid("config is missing the 'algo' key"))?
            .parse()?;
        let mut settings = TrainSettings::default_for(algo);
        for (key, value) in &kv {
            settings.apply_kv(key, value)?;
        }
        Ok(settings)
    }

    /// Rejects settings no algorithm can run with.
    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::invalid("eps must be finite and >= 0"));
        }
        if self.plateau < 0.0 || !self.plateau.is_finite() {
            return Err(Error::invalid("plateau must be finite and >= 0"));
        }
        Ok(())
    }

    fn pla_config(&self) -> PlaConfig {
        PlaConfig {
            steps: self.pla_steps,
            step_size: self.pla_step_size,
            noise: self.pla_noise,
            window: self.pla_window,
        }
    }

    fn eval_config<'a>(&self, test: Option<&'a Dataset>) -> EvalConfig<'a> {
        EvalConfig {
            interval: self.eval_interval,
            k: self.k,
            test,
            flatten_cap: self.flatten_cap,
            plateau: if self.plateau > 0.0 { Some(self.plateau) } else { None },
        }
    }

    /// The threat model this run trains against.
    pub fn threat(&self) -> ThreatModel {
        ThreatModel { radius: self.eps, norm: self.norm }
    }
}

/// Parses flat `key = value` text: one pair per line, `#` starts a
/// comment, blank lines ignored, duplicate keys rejected.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key", idx + 1)));
        }
        if kv.insert(key.clone(), value).is_some() {
            return Err(Error::Parse(format!(
                "config line {}: duplicate key '{key}'",
                idx + 1
            )));
        }
    }
    Ok(kv)
}

/// Renders pairs as sorted `key = value` lines.
pub fn render_config(kv: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (key, value) in kv {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(value);
        out.push('\n');
    }
    out
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// What a completed run directory contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    /// SHA-256 of the training dataset's CSV rendering.
    pub dataset_sha256: String,
    /// SHA-256 of the test dataset's CSV rendering, when one was used.
    pub test_dataset_sha256: Option<String>,
    /// Artifact file names, sorted.
    pub files: Vec<String>,
}

impl RunManifest {
    /// File name of the manifest inside a run directory.
    pub const FILE_NAME: &'static str = "manifest.txt";

    /// Renders the manifest in its flat text form.
    pub fn to_text(&self) -> String {
        let mut out = format!("dataset_sha256 = {}\n", self.dataset_sha256);
        for file in &self.files {
            out.push_str(&format!("file = {file}\n"));
        }
        if let Some(hash) = &self.test_dataset_sha256 {
            out.push_str(&format!("test_dataset_sha256 = {hash}\n"));
        }
        out
    }

    /// Parses [`RunManifest::to_text`] output.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut dataset = None;
        let mut test = None;
        let mut files = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once(" = ") else {
                return Err(Error::Parse(format!("manifest line {}: '{line}'", idx + 1)));
            };
            match key {
                "dataset_sha256" => dataset = Some(value.to_string()),
                "test_dataset_sha256" => test = Some(value.to_string()),
                "file" => files.push(value.to_string()),
                other => {
                    return Err(Error::Parse(format!(
                        "manifest line {}: unknown key '{other}'",
                        idx + 1
                    )))
                }
            }
        }
        Ok(RunManifest {
            dataset_sha256: dataset
                .ok_or_else(|| Error::Parse("manifest is missing dataset_sha256".into()))?,
            test_dataset_sha256: test,
            files,
        })
    }

    /// Reads a run directory's manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(Self::FILE_NAME))?;
        Self::from_text(&text)
    }

    /// Checks that every listed artifact exists in `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for file in &self.files {
            if !dir.join(file).is_file() {
                return Err(Error::Runtime(format!(
                    "manifest lists '{file}' but {} does not contain it",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}

/// Trains per `settings` and writes the run directory. Returns the written
/// manifest after verifying every listed artifact exists.
pub fn run_training(
    settings: &TrainSettings,
    dataset: &Dataset,
    test: Option<&Dataset>,
    out_dir: &Path,
) -> Result<RunManifest> {
    settings.validate()?;
    fs::create_dir_all(out_dir)?;
    let threat = settings.threat();
    let eval_cfg = settings.eval_config(test);
    let (mixture, trace, attacks_csv): (ParticleMixture, RunTrace, Option<String>) =
        match settings.algo {
            Algo::Frat => {
                let cfg = FratConfig {
                    particles: settings.particles,
                    iterations: settings.iterations,
                    eta: settings.eta,
                    eta_prime: settings.eta_prime,
                    beta: settings.beta,
                    pla: settings.pla_config(),
                    minibatch: settings.minibatch,
                    attacker_history: true,
                    seed: settings.seed,
                };
                let out = frat_run(&cfg, dataset, &threat, &eval_cfg)?;
                let mixture = out.history.thin(settings.flatten_cap);
                let attacks = if out.attacks.is_complete() {
                    Some(out.attacks.to_csv_string()?)
                } else {
                    None
                };
                (mixture, out.trace, attacks)
            }
            Algo::Sat => {
                let cfg = SatConfig {
                    iterations: settings.iterations,
                    eta: settings.eta,
                    attack: SatAttack::BestOfK { k: settings.k },
                    seed: settings.seed,
                };
                let out = sat_run(&cfg, dataset, &threat, &eval_cfg)?;
                (ParticleMixture::singleton(&out.model), out.trace, None)
            }
            Algo::Atm => {
                let cfg = AtmConfig {
                    iterations: settings.iterations,
                    particles: settings.particles,
                    eta: settings.eta,
                    eta_prime: settings.eta_prime,
                    k: settings.k,
                    seed: settings.seed,
                };
                let out = atm_run(&cfg, dataset, &threat, &eval_cfg)?;
                (out.mixture, out.trace, None)
            }
            Algo::Oracle | Algo::Regularized => {
                let mode = if settings.algo == Algo::Oracle {
                    WeightOnlyMode::Oracle
                } else {
                    WeightOnlyMode::Regularized
                };
                let stream = RngStream::new(settings.seed);
                let candidates = generate_candidates(
                    settings.candidates,
                    dataset,
                    &stream,
                    CANDIDATE_TRIES_PER_MODEL * settings.candidates.max(1),
                )?;
                let cfg = WeightOnlyConfig {
                    iterations: settings.iterations,
                    eta_prime: settings.eta_prime,
                    k: settings.k,
                    beta: settings.beta,
                    pla: settings.pla_config(),
                    seed: settings.seed,
                };
                let out =
                    weight_only_run(mode, &candidates, &cfg, dataset, &threat, &eval_cfg)?;
                (out.mixture, out.trace, None)
            }
        };

    let mut files = vec![
        "mixture.csv".to_string(),
        "run_config.txt".to_string(),
        "trace.csv".to_string(),
    ];
    fs::write(out_dir.join("run_config.txt"), settings.to_config_string())?;
    fs::write(out_dir.join("trace.csv"), trace.to_csv_string())?;
    mixture.save_csv(&out_dir.join("mixture.csv"))?;
    if let Some(csv) = attacks_csv {
        fs::write(out_dir.join("attacks.csv"), csv)?;
        files.push("attacks.csv".to_string());
    }
    files.sort_unstable();
    let manifest = RunManifest {
        dataset_sha256: sha256_hex(dataset.to_csv_string().as_bytes()),
        test_dataset_sha256: test.map(|d| sha256_hex(d.to_csv_string().as_bytes())),
        files,
    };
    fs::write(out_dir.join(RunManifest::FILE_NAME), manifest.to_text())?;
    manifest.verify(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::LabeledSample;
    use tempfile::tempdir;

    fn tiny_dataset() -> Dataset {
        Dataset::new(vec![
            LabeledSample::new(vec![-1.0, 0.2], -1).unwrap(),
            LabeledSample::new(vec![0.9, -0.1], 1).unwrap(),
            LabeledSample::new(vec![1.2, 0.4], 1).unwrap(),
        ])
        .unwrap()
    }

    fn tiny_settings(algo: Algo) -> TrainSettings {
        TrainSettings {
            eps: 0.25,
            iterations: 3,
            particles: 2,
            candidates: 2,
            k: 8,
            pla_steps: 4,
            pla_window: 4,
            eval_interval: 1,
            flatten_cap: 5,
            seed: 13,
            ..TrainSettings::default_for(algo)
        }
    }

    #[test]
    fn config_text_round_trips_through_parse_and_render() {
        let mut settings = TrainSettings::default_for(Algo::Frat);
        settings.eps = 3.5;
        settings.beta = 0.01;
        settings.seed = 42;
        let text = settings.to_config_string();
        let back = TrainSettings::from_config_str(&text).unwrap();
        assert_eq!(back, settings);
        assert_eq!(back.to_config_string(), text);
    }

    #[test]
    fn config_parser_handles_comments_and_rejects_junk() {
        let kv = parse_config_text("# header\n eta = 0.5 # inline\n\nseed = 9\n").unwrap();
        assert_eq!(kv.get("eta").unwrap(), "0.5");
        assert_eq!(kv.get("seed").unwrap(), "9");
        assert!(parse_config_text("eta 0.5").is_err());
        assert!(parse_config_text("eta = 1\neta = 2").is_err());
        let mut settings = TrainSettings::default_for(Algo::Sat);
        assert!(settings.apply_kv("unknown_knob", "1").is_err());
        assert!(settings.apply_kv("eta", "not-a-number").is_err());
        settings.apply_kv("eta", "0.25").unwrap();
        assert_eq!(settings.eta, 0.25);
    }

    #[test]
    fn every_algorithm_writes_a_verifiable_run_directory() {
        let dataset = tiny_dataset();
        let dir = tempdir().unwrap();
        for algo in Algo::ALL {
            let settings = tiny_settings(algo);
            let out = dir.path().join(algo.name());
            let manifest = run_training(&settings, &dataset, None, &out).unwrap();
            manifest.verify(&out).unwrap();
            assert!(manifest.files.contains(&"trace.csv".to_string()));
            assert!(manifest.files.contains(&"mixture.csv".to_string()));
            assert!(manifest.files.contains(&"run_config.txt".to_string()));
            let loaded = RunManifest::load(&out).unwrap();
            assert_eq!(loaded, manifest);
            let echoed = TrainSettings::from_config_str(
                &fs::read_to_string(out.join("run_config.txt")).unwrap(),
            )
            .unwrap();
            assert_eq!(echoed, settings, "config echo must reproduce the settings");
            let mixture = ParticleMixture::load_csv(&out.join("mixture.csv")).unwrap();
            assert_eq!(mixture.dim_theta(), dataset.dim() + 1);
            let trace =
                RunTrace::from_csv_str(&fs::read_to_string(out.join("trace.csv")).unwrap())
                    .unwrap();
            assert!(!trace.rows().is_empty());
            if algo == Algo::Frat {
                assert!(manifest.files.contains(&"attacks.csv".to_string()));
            }
        }
    }

    #[test]
    fn manifest_verification_notices_missing_artifacts() {
        let dataset = tiny_dataset();
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let manifest =
            run_training(&tiny_settings(Algo::Sat), &dataset, None, &out).unwrap();
        fs::remove_file(out.join("trace.csv")).unwrap();
        let err = manifest.verify(&out).unwrap_err();
        assert!(err.to_string().contains("trace.csv"), "{err}");
    }

    #[test]
    fn manifest_text_round_trips() {
        let manifest = RunManifest {
            dataset_sha256: "ab".repeat(32),
            test_dataset_sha256: Some("cd".repeat(32)),
            files: vec!["a.csv".into(), "b.txt".into()],
        };
        let text = manifest.to_text();
        assert_eq!(RunManifest::from_text(&text).unwrap(), manifest);
        assert!(RunManifest::from_text("nonsense").is_err());
    }

    #[test]
    fn sha256_matches_a_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
