use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Labelled samples, features stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<S: Scalar> {
    features: Vec<S>,
    labels: Vec<usize>,
    input_dim: usize,
    classes: usize,
    /// Standard deviation of the Gaussian feature noise applied so far.
    pub noise_sigma: f64,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(features: Vec<S>, labels: Vec<usize>, input_dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() || input_dim == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one sample and one feature".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * input_dim, actual: features.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidConfig(format!("label {bad} outside {classes} classes")));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature".into()));
        }
        Ok(Dataset { features, labels, input_dim, classes, noise_sigma: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample(&self, i: usize) -> (&[S], usize) {
        (&self.features[i * self.input_dim..(i + 1) * self.input_dim], self.labels[i])
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let feats = self.features[range.start * self.input_dim..range.end * self.input_dim].to_vec();
        let mut ds = Dataset::new(feats, self.labels[range].to_vec(), self.input_dim, self.classes)?;
        ds.noise_sigma = self.noise_sigma;
        Ok(ds)
    }
}

/// Class means for a family of synthetic Gaussian blob datasets.
///
/// Means are drawn uniformly around 0.5 and rescaled so the closest pair sits
/// at distance one; samples add isotropic noise of `spread` and are clipped to
/// `[0, 1]` like pixel intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobLayout {
    pub input_dim: usize,
    pub classes: usize,
    pub spread: f64,
    means: Vec<f64>,
}

pub const DEFAULT_SPREAD: f64 = 0.2;

impl BlobLayout {
    pub fn new(input_dim: usize, classes: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626c_6f62);
        let mut u: Vec<f64> = (0..input_dim * classes).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut min_dist = f64::INFINITY;
        for a in 0..classes {
            for b in a + 1..classes {
                let d2: f64 = (0..input_dim)
                    .map(|i| (u[a * input_dim + i] - u[b * input_dim + i]).powi(2))
                    .sum();
                min_dist = min_dist.min(d2.sqrt());
            }
        }
        let scale = if min_dist.is_finite() && min_dist > 0.0 { 1.0 / min_dist } else { 1.0 };
        for x in u.iter_mut() {
            *x = 0.5 + *x * scale;
        }
        BlobLayout { input_dim, classes, spread, means: u }
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class * self.input_dim..(class + 1) * self.input_dim]
    }

    /// `n` samples with uniformly drawn labels.
    pub fn sample<S: Scalar>(&self, n: usize, seed: u64) -> Dataset<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(n * self.input_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.gen_range(0..self.classes);
            labels.push(y);
            for &m in self.mean(y) {
                let g: f64 = StandardNormal.sample(&mut rng);
                features.push(S::of((m + self.spread * g).clamp(0.0, 1.0)));
            }
        }
        Dataset::new(features, labels, self.input_dim, self.classes).expect("blob samples are well formed")
    }
}

/// `C` Gaussian blobs with unit-separated means, deterministic under `seed`.
pub fn synth_dataset<S: Scalar>(n: usize, input_dim: usize, classes: usize, seed: u64) -> Dataset<S> {
    BlobLayout::new(input_dim, classes, DEFAULT_SPREAD, seed).sample(n, seed)
}

/// Adds `N(0, sigma^2)` to every feature, then clips to the clean feature range.
pub fn add_gaussian_noise<S: Scalar>(ds: &Dataset<S>, sigma: f64, seed: u64) -> Dataset<S> {
    let mut out = ds.clone();
    if sigma <= 0.0 {
        return out;
    }
    let (lo, hi) = ds
        .features
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f.as_f64()), hi.max(f.as_f64())));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for f in out.features.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *f = S::of((f.as_f64() + sigma * g).clamp(lo, hi));
    }
    out.noise_sigma = (ds.noise_sigma.powi(2) + sigma * sigma).sqrt();
    out
}
