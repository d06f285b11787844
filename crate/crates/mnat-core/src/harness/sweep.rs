//! Perturbation-radius sweeps: a grid of (algorithm, radius, seed) cells,
//! each trained independently on per-seed synthetic data, followed by a
//! deterministic aggregation of final-row metrics across seeds.
//!
//! Cells run in a dedicated worker pool (`MNAT_THREADS` caps its size) and
//! write ordinary run directories named by their coordinates, so any cell
//! can be inspected or re-run with the `train` subcommand afterwards.
//! Aggregation never looks at the clock: it reads each cell's final trace
//! row and folds seeds in their configured order, so two sweeps with the
//! same spec produce byte-identical aggregate CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::Dataset;
use crate::solver::RunTrace;

use super::synthetic::{generate_synthetic, SyntheticSpec};
use super::{run_training, Algo, TrainSettings};

/// Header of the aggregate CSV.
pub const AGGREGATE_HEADER: &str = "algo,eps,metric,mean,min,max,n_seeds";

/// The four aggregated metrics, in output (alphabetical) order.
const METRICS: [&str; 4] =
    ["robust_test_acc", "robust_test_loss", "robust_train_acc", "robust_train_loss"];

/// A full sweep: every algorithm at every radius for every seed.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Perturbation radii.
    pub eps: Vec<f64>,
    /// Algorithms to train.
    pub algos: Vec<Algo>,
    /// Seeds; each seeds both the data draw and the run.
    pub seeds: Vec<u64>,
    /// Training samples per seed.
    pub n_train: usize,
    /// Test samples per seed.
    pub n_test: usize,
    /// Settings shared by every cell (`algo`, `eps`, and `seed` are
    /// overwritten per cell).
    pub base: TrainSettings,
    /// Per-algorithm config overrides, applied after the base settings.
    pub overrides: Vec<(Algo, String, String)>,
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.algos.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs nonempty eps, algos, and seeds lists"));
        }
        for &e in &self.eps {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::invalid(format!("sweep eps must be finite and >= 0, got {e}")));
            }
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("sweep needs n_train >= 1 and n_test >= 1"));
        }
        let mut dirs: Vec<String> = self
            .cells()
            .iter()
            .map(|&(algo, eps, seed)| cell_dir_name(algo, eps, seed))
            .collect();
        let total = dirs.len();
        dirs.sort_unstable();
        dirs.dedup();
        if dirs.len() != total {
            return Err(Error::invalid("sweep lists contain duplicate cells"));
        }
        Ok(())
    }

    /// The settings of one cell: base, then the cell coordinates, then the
    /// algorithm's overrides.
    pub fn cell_settings(&self, algo: Algo, eps: f64, seed: u64) -> Result<TrainSettings> {
        let mut settings = self.base.clone();
        settings.algo = algo;
        settings.eps = eps;
        settings.seed = seed;
        for (target, key, value) in &self.overrides {
            if *target == algo {
                settings.apply_kv(key, value)?;
            }
        }
        Ok(settings)
    }

    /// Cells in deterministic order.
    fn cells(&self) -> Vec<(Algo, f64, u64)> {
        let mut cells = Vec::with_capacity(self.algos.len() * self.eps.len() * self.seeds.len());
        for &algo in &self.algos {
            for &eps in &self.eps {
                for &seed in &self.seeds {
                    cells.push((algo, eps, seed));
                }
            }
        }
        cells
    }
}

/// Directory name of one sweep cell.
pub fn cell_dir_name(algo: Algo, eps: f64, seed: u64) -> String {
    format!("{algo}_eps{eps}_seed{seed}")
}

/// Worker-pool size: `MNAT_THREADS` when set to a positive integer,
/// otherwise the process default.
pub fn worker_count() -> usize {
    std::env::var("MNAT_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs every cell of the sweep into `out_dir`, returning the number of
/// cells trained. Existing cell directories are re-run and overwritten.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<usize> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut datasets: BTreeMap<u64, (Dataset, Dataset)> = BTreeMap::new();
    for &seed in &spec.seeds {
        let train_spec = SyntheticSpec { n: spec.n_train, seed };
        let test_spec = SyntheticSpec { n: spec.n_test, ..train_spec.test_spec() };
        datasets
            .entry(seed)
            .or_insert((generate_synthetic(&train_spec)?, generate_synthetic(&test_spec)?));
    }
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Runtime(format!("failed to build sweep worker pool: {e}")))?;
    pool.install(|| {
        cells.par_iter().try_for_each(|&(algo, eps, seed)| -> Result<()> {
            let settings = spec.cell_settings(algo, eps, seed)?;
            let (train, test) = &datasets[&seed];
            let dir = out_dir.join(cell_dir_name(algo, eps, seed));
            run_training(&settings, train, Some(test), &dir)?;
            Ok(())
        })
    })?;
    Ok(cells.len())
}

/// Final-row metrics of one cell's trace.
fn final_metrics(trace: &RunTrace) -> Option<[f64; 4]> {
    let last = trace.rows().last()?;
    Some([
        last.robust_test_acc,
        last.robust_test_loss,
        last.robust_train_acc,
        last.robust_train_loss,
    ])
}

/// Aggregates a completed sweep into CSV: one row per (algorithm, radius,
/// metric) holding mean/min/max over seeds. Missing or unreadable cells
/// are all listed in a single runtime error.
pub fn aggregate_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<String> {
    spec.validate()?;
    let mut algos = spec.algos.clone();
    algos.sort_unstable_by_key(|a| a.name());
    algos.dedup();
    let mut eps_sorted = spec.eps.clone();
    eps_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite eps"));
    eps_sorted.dedup();

    let mut missing = Vec::new();
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for &algo in &algos {
        for &eps in &eps_sorted {
            let mut per_seed: Vec<[f64; 4]> = Vec::with_capacity(spec.seeds.len());
            for &seed in &spec.seeds {
                let dir = out_dir.join(cell_dir_name(algo, eps, seed));
                let trace_path = dir.join("trace.csv");
                let metrics = fs::read_to_string(&trace_path)
                    .ok()
                    .and_then(|text| RunTrace::from_csv_str(&text).ok())
                    .and_then(|trace| final_metrics(&trace));
                match metrics {
                    Some(m) => per_seed.push(m),
                    None => missing.push(cell_dir_name(algo, eps, seed)),
                }
            }
            if per_seed.is_empty() || !missing.is_empty() {
                continue;
            }
            for (idx, metric) in METRICS.iter().enumerate() {
                let values: Vec<f64> = per_seed.iter().map(|m| m[idx]).collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.push_str(&format!(
                    "{algo},{eps},{metric},{mean},{min},{max},{}\n",
                    values.len()
                ));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Runtime(format!(
            "sweep is missing {} completed runs: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(out)
}
