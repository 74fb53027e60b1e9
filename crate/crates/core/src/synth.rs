//! Two-dimensional Gaussian-mixture benchmark with a closed-form Bayes rule.
//!
//! Points are drawn by picking a component with probability proportional to
//! its weight, then adding `sqrt(scale) * z` to its centre, where `z` is a pair
//! of standard normal variates from `rand_distr::StandardNormal` (ziggurat
//! method) on the seeded ChaCha8 stream. The same seed always yields the same
//! points.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Seed of the canonical 250-point training / 1000-point test split.
pub const CANONICAL_SEED: u64 = 2005;
pub const CANONICAL_TRAIN_SIZE: usize = 250;
pub const CANONICAL_TEST_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub class: usize,
    pub weight: f64,
    pub center: [f64; 2],
    /// Isotropic covariance is `scale * I`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub point: [f64; 2],
    pub label: usize,
    pub source_component: usize,
}

/// Three class-0 kernels and two class-1 kernels, all with covariance 0.03 I.
pub fn canonical_mixture() -> GaussianMixtureSpec {
    let c = |class, weight, center| MixtureComponent {
        class,
        weight,
        center,
        scale: 0.03,
    };
    GaussianMixtureSpec {
        components: vec![
            c(0, 0.16, [1.0, 1.0]),
            c(0, 0.17, [-0.7, 0.3]),
            c(0, 0.17, [0.3, 0.3]),
            c(1, 0.25, [-0.3, 0.7]),
            c(1, 0.25, [0.4, 0.7]),
        ],
        class_count: 2,
    }
}

impl GaussianMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0) || !(c.scale > 0.0) || c.class >= self.class_count {
                return Err(Error::Config(format!("mixture component {i} is invalid")));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn class_weight(&self, class: usize) -> f64 {
        self.components
            .iter()
            .filter(|c| c.class == class)
            .map(|c| c.weight)
            .sum()
    }

    /// Mixture density at `point`.
    pub fn density(&self, point: [f64; 2]) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * gaussian_density(point, c.center, c.scale))
            .sum()
    }
}

fn gaussian_density(point: [f64; 2], center: [f64; 2], scale: f64) -> f64 {
    log_gaussian_density(point, center, scale).exp()
}

fn log_gaussian_density(point: [f64; 2], center: [f64; 2], scale: f64) -> f64 {
    let dx = point[0] - center[0];
    let dy = point[1] - center[1];
    -(dx * dx + dy * dy) / (2.0 * scale) - (2.0 * std::f64::consts::PI * scale).ln()
}

pub fn sample(spec: &GaussianMixtureSpec, count: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = rng::stream(seed);
    let total: f64 = spec.components.iter().map(|c| c.weight).sum();
    (0..count)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut k = spec.components.len() - 1;
            for (i, c) in spec.components.iter().enumerate() {
                if u < c.weight {
                    k = i;
                    break;
                }
                u -= c.weight;
            }
            let comp = &spec.components[k];
            let sd = comp.scale.sqrt();
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            LabeledSample {
                point: [comp.center[0] + sd * z0, comp.center[1] + sd * z1],
                label: comp.class,
                source_component: k,
            }
        })
        .collect()
}

pub fn to_dataset(spec: &GaussianMixtureSpec, samples: &[LabeledSample]) -> Result<Dataset> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.point.to_vec()).collect();
    let labels = samples.iter().map(|s| s.label).collect();
    Dataset::from_rows(&rows, labels, spec.class_count)
}

/// The canonical synthetic train and test sets.
pub fn canonical_split() -> (Dataset, Dataset) {
    canonical_split_with_seed(CANONICAL_SEED)
}

pub fn canonical_split_with_seed(seed: u64) -> (Dataset, Dataset) {
    let spec = canonical_mixture();
    let train = sample(&spec, CANONICAL_TRAIN_SIZE, rng::derive_seed(seed, 0));
    let test = sample(&spec, CANONICAL_TEST_SIZE, rng::derive_seed(seed, 1));
    (
        to_dataset(&spec, &train).expect("mixture samples form a valid dataset"),
        to_dataset(&spec, &test).expect("mixture samples form a valid dataset"),
    )
}

/// Bayes-optimal label and class posterior. Ties go to the lower class.
pub fn bayes_classify(spec: &GaussianMixtureSpec, point: [f64; 2]) -> (usize, Vec<f64>) {
    let mut log_class = vec![f64::NEG_INFINITY; spec.class_count];
    for c in &spec.components {
        let term = c.weight.ln() + log_gaussian_density(point, c.center, c.scale);
        log_class[c.class] = log_add(log_class[c.class], term);
    }
    let norm = log_class.iter().copied().fold(f64::NEG_INFINITY, log_add);
    let posterior: Vec<f64> = log_class.iter().map(|l| (l - norm).exp()).collect();
    let mut best = 0;
    for (j, l) in log_class.iter().enumerate() {
        if *l > log_class[best] {
            best = j;
        }
    }
    (best, posterior)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub rate: f64,
    /// Binomial standard error `sqrt(rate (1 - rate) / count)`.
    pub std_error: f64,
    pub count: usize,
}

/// Error rate of the Bayes rule on labelled samples.
pub fn bayes_error_on(spec: &GaussianMixtureSpec, samples: &[LabeledSample]) -> ErrorEstimate {
    let wrong = samples
        .iter()
        .filter(|s| bayes_classify(spec, s.point).0 != s.label)
        .count();
    let count = samples.len();
    let rate = wrong as f64 / count as f64;
    ErrorEstimate {
        rate,
        std_error: (rate * (1.0 - rate) / count as f64).sqrt(),
        count,
    }
}

/// Monte-Carlo estimate of the Bayes error on a fresh sample.
pub fn bayes_error_estimate(
    spec: &GaussianMixtureSpec,
    sample_count: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    if sample_count < 10_000 {
        return Err(Error::Config(format!(
            "Bayes error estimate needs at least 10^4 samples, got {sample_count}"
        )));
    }
    Ok(bayes_error_on(spec, &sample(spec, sample_count, seed)))
}
