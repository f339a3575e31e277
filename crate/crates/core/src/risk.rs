//! Risk estimates and Monte Carlo evaluation of ICL predictors.
//!
//! The meta-risk of a predictor under a task distribution `q` is
//! `E[(ŷ_test − y_test)²]` with the expectation over the task `β ~ q`, the
//! design `X`, the observation noise, and the test pair. Monte Carlo
//! estimators here either draw a fresh design per sample or cycle a fixed
//! [`DesignBatch`], the latter so that sampled risks stay comparable with the
//! semi-analytic ridge risk conditioned on the same designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::task::{ContextSet, GaussianTaskDistribution, NoiseConfig};

/// Finite-difference step for predictor gradients with respect to the task
/// vector (used by predictors without an analytic form).
pub const FD_STEP_BETA: f64 = 1e-4;

/// A risk value with its Monte Carlo (or design-batch) standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl RiskEstimate {
    pub fn exact(value: f64) -> Self {
        RiskEstimate {
            value,
            std_error: 0.0,
            samples: 0,
        }
    }

    /// Mean and standard error of a sample of scalar losses.
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("risk sample"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(RiskEstimate {
            value: mean,
            std_error: (var / n).sqrt(),
            samples: values.len(),
        })
    }
}

/// An in-context predictor: given a prompt `(X, y, x_test)` produce `ŷ_test`.
///
/// Both the ridge oracle and the trained linear-attention model implement
/// this, which is what lets the adversary and the experiment harness treat
/// the two paths interchangeably.
pub trait IclPredictor: Sync {
    fn predict_parts(&self, x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DVector<f64>) -> Result<f64>;

    fn predict(&self, ctx: &ContextSet) -> Result<f64> {
        self.predict_parts(ctx.x(), ctx.y(), ctx.x_test())
    }

    /// Identifier used in result records ("ridge-oracle" / "trained-transformer").
    fn path_name(&self) -> &'static str;

    /// Gradient of the squared prediction error with respect to the true task
    /// vector, holding the data randomness `(X, ε, x_test, ε_test)` fixed:
    /// `∇_β (ŷ(β) − y_test(β))²` where `y = Xβ + ε` and
    /// `y_test = x_testᵀβ + ε_test`.
    ///
    /// Default implementation: central finite differences with step
    /// [`FD_STEP_BETA`]. Predictors with a closed form should override.
    fn loss_grad_beta(
        &self,
        x: &DMatrix<f64>,
        eps: &DVector<f64>,
        x_test: &DVector<f64>,
        eps_test: f64,
        beta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = beta.len();
        let h = FD_STEP_BETA;
        let y0 = x * beta + eps;
        let yt0 = x_test.dot(beta) + eps_test;
        let mut grad = DVector::zeros(d);
        let mut y = y0.clone();
        for j in 0..d {
            let col = x.column(j);
            for i in 0..y.len() {
                y[i] = y0[i] + h * col[i];
            }
            let plus = {
                let pred = self.predict_parts(x, &y, x_test)?;
                let e = pred - (yt0 + h * x_test[j]);
                e * e
            };
            for i in 0..y.len() {
                y[i] = y0[i] - h * col[i];
            }
            let minus = {
                let pred = self.predict_parts(x, &y, x_test)?;
                let e = pred - (yt0 - h * x_test[j]);
                e * e
            };
            for i in 0..y.len() {
                y[i] = y0[i];
            }
            grad[j] = (plus - minus) / (2.0 * h);
        }
        Ok(grad)
    }
}

/// A fixed batch of design matrices shared between the semi-analytic and
/// Monte Carlo risk paths.
#[derive(Debug, Clone)]
pub struct DesignBatch {
    designs: Vec<DMatrix<f64>>,
}

impl DesignBatch {
    /// Default batch size used throughout the experiments.
    pub const DEFAULT_SIZE: usize = 64;

    pub fn generate(d: usize, n: usize, count: usize, rng: &mut ChaCha12Rng) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("design batch"));
        }
        if n == 0 {
            return Err(Error::Empty("context"));
        }
        let designs = (0..count)
            .map(|_| DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Ok(DesignBatch { designs })
    }

    pub fn from_designs(designs: Vec<DMatrix<f64>>) -> Result<Self> {
        if designs.is_empty() {
            return Err(Error::Empty("design batch"));
        }
        Ok(DesignBatch { designs })
    }

    pub fn designs(&self) -> &[DMatrix<f64>] {
        &self.designs
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.designs[0].nrows()
    }

    pub fn d(&self) -> usize {
        self.designs[0].ncols()
    }
}

/// One Monte Carlo draw of the squared prediction error for task distribution
/// `q`, given an already-chosen design.
fn sample_loss_on_design(
    q: &GaussianTaskDistribution,
    predictor: &dyn IclPredictor,
    noise: &NoiseConfig,
    x: &DMatrix<f64>,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    let d = q.d();
    let sigma = noise.sigma_sq.sqrt();
    let beta = q.sample(rng);
    let mut y = x * &beta;
    for i in 0..y.len() {
        y[i] += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    let x_test = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y_test = x_test.dot(&beta) + sigma * rng.sample::<f64, _>(StandardNormal);
    let pred = predictor.predict_parts(x, &y, &x_test)?;
    let e = pred - y_test;
    Ok(e * e)
}

/// Monte Carlo risk with a fresh Gaussian design per sample.
pub fn monte_carlo_risk(
    q: &GaussianTaskDistribution,
    predictor: &dyn IclPredictor,
    noise: &NoiseConfig,
    n: usize,
    samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<RiskEstimate> {
    if samples == 0 {
        return Err(Error::Empty("risk sample"));
    }
    let d = q.d();
    let mut losses = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        losses.push(sample_loss_on_design(q, predictor, noise, &x, rng)?);
    }
    RiskEstimate::from_samples(&losses)
}

/// Monte Carlo risk cycling a fixed design batch, so the estimate is
/// conditionally comparable with [`crate::ridge::semi_analytic_risk`] run on
/// the same batch.
pub fn monte_carlo_risk_on_designs(
    q: &GaussianTaskDistribution,
    predictor: &dyn IclPredictor,
    noise: &NoiseConfig,
    designs: &DesignBatch,
    samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<RiskEstimate> {
    if samples == 0 {
        return Err(Error::Empty("risk sample"));
    }
    let mut losses = Vec::with_capacity(samples);
    for i in 0..samples {
        let x = &designs.designs()[i % designs.len()];
        losses.push(sample_loss_on_design(q, predictor, noise, x, rng)?);
    }
    RiskEstimate::from_samples(&losses)
}
