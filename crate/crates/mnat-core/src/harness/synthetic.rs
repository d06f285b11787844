//! The two-dimensional synthetic classification law used by the
//! experiments.
//!
//! Labels are a fair coin mapped to ±1. Positive-class features come from
//! the Gaussian mixture `3/4 N((3,0), I) + 1/4 N((-3,0), I)`; negative
//! features from `N((0,0), I)`. The law is deliberately not linearly
//! separable — the minority positive mode sits on the far side of the
//! negative cluster — which is what makes randomized classifiers
//! interesting on it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::game::{Dataset, LabeledSample};
use crate::sampler::RngStream;

/// RNG purpose for synthetic data draws.
pub const SYNTHETIC_PURPOSE: &str = "synthetic";

/// Fixed offset between a training seed and its held-out test seed.
pub const TEST_SEED_OFFSET: u64 = 1_000_000;

/// Size and seed of one synthetic split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    /// Samples to draw.
    pub n: usize,
    /// Seed of this split's stream.
    pub seed: u64,
}

impl SyntheticSpec {
    /// The spec of the held-out split paired with this one: same size,
    /// seed shifted by [`TEST_SEED_OFFSET`].
    pub fn test_spec(&self) -> SyntheticSpec {
        SyntheticSpec { n: self.n, seed: self.seed.wrapping_add(TEST_SEED_OFFSET) }
    }
}

/// Draws a dataset from the synthetic law, deterministically per seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::invalid("synthetic dataset needs n >= 1"));
    }
    let stream = RngStream::new(spec.seed);
    let mut rng = stream.derive(SYNTHETIC_PURPOSE, 0, 0);
    let mut samples = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y: i8 = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
        let mean_x = if y == 1 {
            if rng.random::<f64>() < 0.75 {
                3.0
            } else {
                -3.0
            }
        } else {
            0.0
        };
        let x = vec![
            mean_x + rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        samples.push(LabeledSample::new(x, y)?);
    }
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_reproducible() {
        let spec = SyntheticSpec { n: 1, seed: 7 };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let c = generate_synthetic(&SyntheticSpec { n: 1, seed: 8 }).unwrap();
        assert_ne!(a.to_csv_string(), c.to_csv_string());
        assert_eq!(a.dim(), 2);
        assert!(generate_synthetic(&SyntheticSpec { n: 0, seed: 7 }).is_err());
    }

    #[test]
    fn label_frequency_and_positive_mean_match_the_law() {
        let dataset = generate_synthetic(&SyntheticSpec { n: 100_000, seed: 3 }).unwrap();
        let n = dataset.len() as f64;
        let positives: Vec<_> =
            dataset.samples().iter().filter(|s| s.y == 1).collect();
        let frac = positives.len() as f64 / n;
        assert!((frac - 0.5).abs() <= 0.01, "positive fraction {frac}");
        let mut mean = [0.0; 2];
        for s in &positives {
            mean[0] += s.x[0];
            mean[1] += s.x[1];
        }
        mean[0] /= positives.len() as f64;
        mean[1] /= positives.len() as f64;
        // 3/4 of mass at (3,0) and 1/4 at (-3,0) puts the mean at (1.5, 0).
        assert!((mean[0] - 1.5).abs() <= 0.05, "positive mean x1 = {}", mean[0]);
        assert!(mean[1].abs() <= 0.05, "positive mean x2 = {}", mean[1]);
    }

    #[test]
    fn negative_class_covariance_is_near_identity() {
        let dataset = generate_synthetic(&SyntheticSpec { n: 100_000, seed: 5 }).unwrap();
        let negatives: Vec<_> =
            dataset.samples().iter().filter(|s| s.y == -1).collect();
        let m = negatives.len() as f64;
        let mut mean = [0.0; 2];
        for s in &negatives {
            mean[0] += s.x[0];
            mean[1] += s.x[1];
        }
        mean[0] /= m;
        mean[1] /= m;
        let mut cov = [[0.0; 2]; 2];
        for s in &negatives {
            let d0 = s.x[0] - mean[0];
            let d1 = s.x[1] - mean[1];
            cov[0][0] += d0 * d0;
            cov[0][1] += d0 * d1;
            cov[1][0] += d1 * d0;
            cov[1][1] += d1 * d1;
        }
        for row in &mut cov {
            for entry in row.iter_mut() {
                *entry /= m;
            }
        }
        for (i, row) in cov.iter().enumerate() {
            for (j, &entry) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (entry - expect).abs() <= 0.05,
                    "cov[{i}][{j}] = {entry}, expected {expect}"
                );
            }
        }
        assert!((mean[0].abs()) <= 0.05 && mean[1].abs() <= 0.05);
    }

    #[test]
    fn test_split_shifts_the_seed_by_the_fixed_offset() {
        let spec = SyntheticSpec { n: 10, seed: 42 };
        let test = spec.test_spec();
        assert_eq!(test.seed, 42 + TEST_SEED_OFFSET);
        assert_eq!(test.n, 10);
        let train = generate_synthetic(&spec).unwrap();
        let held_out = generate_synthetic(&test).unwrap();
        assert_ne!(train.to_csv_string(), held_out.to_csv_string());
    }
}
