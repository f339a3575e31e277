//! Gaussian linear-regression task model.
//!
//! A task is a weight vector `β ∈ R^d`. Task distributions are isotropic
//! Gaussians `N(mean, std² I_d)`: the pretraining law and the nominal test law
//! are both instances, as are the adversary's perturbed candidates. A context
//! set is one prompt: `N` rows `x_i ~ N(0, I_d)` with labels
//! `y_i = x_iᵀβ + ε_i`, `ε_i ~ N(0, σ²)`, plus an independently drawn test
//! pair.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::StreamTree;

/// Isotropic Gaussian distribution over task weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTaskDistribution {
    mean: DVector<f64>,
    std: f64,
}

impl GaussianTaskDistribution {
    pub fn new(mean: DVector<f64>, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::invalid("std", format!("must be finite and > 0, got {std}")));
        }
        if mean.is_empty() {
            return Err(Error::invalid("mean", "dimension must be >= 1"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean", "entries must be finite"));
        }
        Ok(GaussianTaskDistribution { mean, std })
    }

    /// The standard law `N(0, I_d)` used for both the pretraining
    /// distribution and the experiments' nominal test distribution.
    pub fn standard(d: usize) -> Self {
        GaussianTaskDistribution {
            mean: DVector::zeros(d),
            std: 1.0,
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    /// Draw one task vector `β = mean + std · z`, `z ~ N(0, I_d)`.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| {
            self.mean[i] + self.std * rng.sample::<f64, _>(StandardNormal)
        })
    }
}

/// Observation-noise variance `σ²` and prior variance `σ_β²`.
///
/// `σ² = 0` is permitted so the noiseless regime stays expressible; the prior
/// variance must be strictly positive since it divides.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseConfig {
    pub sigma_sq: f64,
    pub sigma_beta_sq: f64,
}

impl NoiseConfig {
    pub fn new(sigma_sq: f64, sigma_beta_sq: f64) -> Result<Self> {
        if !(sigma_sq >= 0.0) || !sigma_sq.is_finite() {
            return Err(Error::invalid("sigma_sq", format!("must be finite and >= 0, got {sigma_sq}")));
        }
        if !(sigma_beta_sq > 0.0) || !sigma_beta_sq.is_finite() {
            return Err(Error::invalid(
                "sigma_beta_sq",
                format!("must be finite and > 0, got {sigma_beta_sq}"),
            ));
        }
        Ok(NoiseConfig { sigma_sq, sigma_beta_sq })
    }

    /// Implied ridge coefficient `λ_N = σ² / σ_β²`.
    pub fn lambda(&self) -> f64 {
        self.sigma_sq / self.sigma_beta_sq
    }
}

/// One ICL prompt: design matrix, labels, and a held-out test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_test: DVector<f64>,
    y_test: f64,
}

impl ContextSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, x_test: DVector<f64>, y_test: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("context"));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "context labels",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        if x_test.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "test point",
                expected: x.ncols(),
                actual: x_test.len(),
            });
        }
        Ok(ContextSet { x, y, x_test, y_test })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x_test(&self) -> &DVector<f64> {
        &self.x_test
    }

    pub fn y_test(&self) -> f64 {
        self.y_test
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Separated substreams for context generation: inputs (rows of `X` and the
/// test point), context noise, and test noise each come from their own
/// generator, so the number of draws consumed by one component never shifts
/// the others, and none of them ever touches the task stream.
#[derive(Debug, Clone)]
pub struct ContextStreams {
    inputs: ChaCha12Rng,
    noise: ChaCha12Rng,
    test_noise: ChaCha12Rng,
}

impl ContextStreams {
    pub fn from_tree(tree: &StreamTree, label: &str) -> Self {
        let scoped = tree.child(label);
        ContextStreams {
            inputs: scoped.stream("inputs"),
            noise: scoped.stream("noise"),
            test_noise: scoped.stream("test-noise"),
        }
    }
}

/// Draw one task from `dist`.
pub fn sample_task(dist: &GaussianTaskDistribution, rng: &mut ChaCha12Rng) -> DVector<f64> {
    dist.sample(rng)
}

/// Generate a context set for task `beta`: `N` labelled examples plus an
/// independent test pair, with observation noise `σ²` from `noise`.
pub fn sample_context(
    beta: &DVector<f64>,
    n: usize,
    noise: &NoiseConfig,
    streams: &mut ContextStreams,
) -> Result<ContextSet> {
    if n == 0 {
        return Err(Error::Empty("context"));
    }
    let d = beta.len();
    let sigma = noise.sigma_sq.sqrt();

    let x = DMatrix::from_fn(n, d, |_, _| streams.inputs.sample::<f64, _>(StandardNormal));
    let x_test = DVector::from_fn(d, |_, _| streams.inputs.sample::<f64, _>(StandardNormal));

    let mut y = &x * beta;
    for i in 0..n {
        y[i] += sigma * streams.noise.sample::<f64, _>(StandardNormal);
    }
    let y_test = x_test.dot(beta) + sigma * streams.test_noise.sample::<f64, _>(StandardNormal);

    ContextSet::new(x, y, x_test, y_test)
}
