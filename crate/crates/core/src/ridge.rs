//! Ridge-regression ICL oracle and its diagnostics.
//!
//! An optimally pretrained linear-attention model is idealized as ridge
//! regression on the prompt: `β̂ = (XᵀX + λ I)⁻¹ Xᵀ y` with `λ = σ²/σ_β²`,
//! and `ŷ_test = x_testᵀ β̂`. This module provides that closed form, the
//! Jacobian/Lipschitz diagnostics of the prediction map `β ↦ ŷ`, and an exact
//! ("semi-analytic") risk: the expectation of the squared prediction error
//! over the task, the noise, and the test point, conditioned on a fixed batch
//! of designs.
//!
//! Derivation of the semi-analytic form: with `A = (XᵀX + λI)⁻¹`,
//! `β̂ − β = −λAβ + AXᵀε`, and `x_test ~ N(0, I)` gives
//! `E(ŷ − y_test)² = E‖β̂ − β‖² + σ²`, so for `β ~ N(μ, σ_q² I)`
//!
//! ```text
//! risk(X) = λ² (μᵀA²μ + σ_q² Tr A²) + σ² Tr(A XᵀX A) + σ²
//! ```
//!
//! This formula is validated against the Monte Carlo estimator before
//! anything downstream (the adversary, the sweeps) is allowed to rely on it;
//! see the tests here and the `verify` command.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::risk::{DesignBatch, IclPredictor, RiskEstimate};
use crate::task::{ContextSet, GaussianTaskDistribution, NoiseConfig};

/// Closed-form ridge predictor with regularizer `λ` in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgePredictor {
    lambda: f64,
    d: usize,
}

/// Sensitivity diagnostics of the prediction map `β ↦ ŷ_test` for one context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianReport {
    /// `‖J‖₂` for the explicit row vector `J = x_testᵀ (XᵀX + λI)⁻¹ XᵀX`.
    pub spectral_norm: f64,
    pub sigma_min_xtx: f64,
    pub sigma_max_xtx: f64,
    /// Asymptotic Lipschitz form `1 / (1 + λ/N)`.
    pub lipschitz_bound: f64,
}

impl RidgePredictor {
    pub fn new(lambda: f64, d: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be >= 1"));
        }
        Ok(RidgePredictor { lambda, d })
    }

    /// Predictor implied by a noise configuration: `λ = σ²/σ_β²`.
    pub fn from_noise(noise: &NoiseConfig, d: usize) -> Result<Self> {
        RidgePredictor::new(noise.lambda(), d)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Closed-form task estimate `β̂ = (XᵀX + λI)⁻¹ Xᵀ y`.
    pub fn fit(&self, ctx: &ContextSet) -> Result<DVector<f64>> {
        self.fit_parts(ctx.x(), ctx.y())
    }

    pub fn fit_parts(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let chol = self.factorize(x)?;
        Ok(chol.solve(&(x.transpose() * y)))
    }

    /// `ŷ_test = x_testᵀ β̂`.
    pub fn predict(&self, ctx: &ContextSet) -> Result<f64> {
        Ok(ctx.x_test().dot(&self.fit(ctx)?))
    }

    /// Jacobian spectral norm, extreme singular values of `XᵀX`, and the
    /// asymptotic Lipschitz form `1/(1 + λ/N)`.
    pub fn jacobian_diagnostics(&self, ctx: &ContextSet) -> Result<JacobianReport> {
        self.check_dim(ctx.x())?;
        let x = ctx.x();
        let gram = x.transpose() * x;
        let chol = self.factorize(x)?;
        // Jᵀ = XᵀX (XᵀX + λI)⁻¹ x_test (all factors symmetric).
        let j = &gram * chol.solve(ctx.x_test());
        let eigs = gram.symmetric_eigenvalues();
        let sigma_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
        let sigma_max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        Ok(JacobianReport {
            spectral_norm: j.norm(),
            sigma_min_xtx: sigma_min,
            sigma_max_xtx: sigma_max,
            lipschitz_bound: 1.0 / (1.0 + self.lambda / ctx.n() as f64),
        })
    }

    fn factorize(&self, x: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let mut m = x.transpose() * x;
        for i in 0..self.d {
            m[(i, i)] += self.lambda;
        }
        Cholesky::new(m).ok_or_else(|| {
            if self.lambda == 0.0 {
                Error::IllPosed("XᵀX is singular at λ = 0; supply λ > 0".into())
            } else {
                Error::Numerical("ridge system factorization failed".into())
            }
        })
    }

    fn check_dim(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                context: "ridge fit",
                expected: self.d,
                actual: x.ncols(),
            });
        }
        Ok(())
    }
}

impl IclPredictor for RidgePredictor {
    fn predict_parts(&self, x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DVector<f64>) -> Result<f64> {
        Ok(x_test.dot(&self.fit_parts(x, y)?))
    }

    fn path_name(&self) -> &'static str {
        "ridge-oracle"
    }

    /// Analytic gradient: with `r = ŷ − y_test`,
    /// `∇_β ℓ = 2 r (XᵀX A x_test − x_test)`.
    fn loss_grad_beta(
        &self,
        x: &DMatrix<f64>,
        eps: &DVector<f64>,
        x_test: &DVector<f64>,
        eps_test: f64,
        beta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let chol = self.factorize(x)?;
        let y = x * beta + eps;
        let y_test = x_test.dot(beta) + eps_test;
        let beta_hat = chol.solve(&(x.transpose() * &y));
        let r = x_test.dot(&beta_hat) - y_test;
        let gram_a_xt = x.transpose() * (x * chol.solve(x_test));
        Ok((gram_a_xt - x_test) * (2.0 * r))
    }
}

/// Ridge risk surface over isotropic task distributions, conditioned on a
/// design batch. Precomputes per-design `A²`, `Tr A²`, and the noise term
/// `σ² Tr(A XᵀX A)` so evaluations and gradients are cheap inside the PGA
/// loop.
#[derive(Debug, Clone)]
pub struct SemiAnalyticRidge {
    lambda: f64,
    sigma_sq: f64,
    d: usize,
    a_sq: Vec<DMatrix<f64>>,
    tr_a_sq: Vec<f64>,
    noise_term: Vec<f64>,
    noise_amp: Vec<f64>,
    a_sq_mean: DMatrix<f64>,
    tr_a_sq_mean: f64,
}

impl SemiAnalyticRidge {
    pub fn new(pred: &RidgePredictor, noise: &NoiseConfig, designs: &DesignBatch) -> Result<Self> {
        if designs.is_empty() {
            return Err(Error::Empty("design batch"));
        }
        let d = pred.d();
        if designs.d() != d {
            return Err(Error::DimensionMismatch {
                context: "semi-analytic designs",
                expected: d,
                actual: designs.d(),
            });
        }
        let lambda = pred.lambda();
        let mut a_sq = Vec::with_capacity(designs.len());
        let mut tr_a_sq = Vec::with_capacity(designs.len());
        let mut noise_term = Vec::with_capacity(designs.len());
        let mut noise_amp = Vec::with_capacity(designs.len());
        let mut a_sq_mean = DMatrix::zeros(d, d);
        for x in designs.designs() {
            let gram = x.transpose() * x;
            let mut m = gram.clone();
            for i in 0..d {
                m[(i, i)] += lambda;
            }
            let chol = Cholesky::new(m).ok_or_else(|| {
                if lambda == 0.0 {
                    Error::IllPosed("XᵀX is singular at λ = 0; supply λ > 0".into())
                } else {
                    Error::Numerical("semi-analytic factorization failed".into())
                }
            })?;
            let a = chol.inverse();
            let a2 = &a * &a;
            // σ² Tr(A XᵀX A) = σ² Tr(A² XᵀX) by symmetry of A.
            let tr_ag_a = (&a2 * &gram).trace();
            noise_amp.push(tr_ag_a);
            noise_term.push(noise.sigma_sq * tr_ag_a);
            tr_a_sq.push(a2.trace());
            a_sq_mean += &a2;
            a_sq.push(a2);
        }
        a_sq_mean /= designs.len() as f64;
        let tr_a_sq_mean = tr_a_sq.iter().sum::<f64>() / tr_a_sq.len() as f64;
        Ok(SemiAnalyticRidge {
            lambda,
            sigma_sq: noise.sigma_sq,
            d,
            a_sq,
            tr_a_sq,
            noise_term,
            noise_amp,
            a_sq_mean,
            tr_a_sq_mean,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Exact risk at isotropic task parameters `(μ, σ_q)`, averaged over the
    /// design batch; the standard error is the spread across designs.
    pub fn risk_params(&self, mu: &DVector<f64>, sigma_q: f64) -> Result<RiskEstimate> {
        if mu.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "semi-analytic risk",
                expected: self.d,
                actual: mu.len(),
            });
        }
        let l2 = self.lambda * self.lambda;
        let s2 = sigma_q * sigma_q;
        let per_design: Vec<f64> = self
            .a_sq
            .iter()
            .zip(&self.tr_a_sq)
            .zip(&self.noise_term)
            .map(|((a2, tr), nz)| l2 * (mu.dot(&(a2 * mu)) + s2 * tr) + nz + self.sigma_sq)
            .collect();
        RiskEstimate::from_samples(&per_design)
    }

    pub fn risk(&self, q: &GaussianTaskDistribution) -> Result<RiskEstimate> {
        self.risk_params(q.mean(), q.std())
    }

    /// Exact gradients of the batch-averaged risk:
    /// `∇_μ = 2λ² Ā² μ`, `∂/∂σ_q = 2λ² σ_q · mean Tr A²`.
    pub fn grad(&self, mu: &DVector<f64>, sigma_q: f64) -> (DVector<f64>, f64) {
        let l2 = self.lambda * self.lambda;
        let grad_mu = &self.a_sq_mean * mu * (2.0 * l2);
        let grad_sigma = 2.0 * l2 * sigma_q * self.tr_a_sq_mean;
        (grad_mu, grad_sigma)
    }

    /// Paired risk difference `risk(a) − risk(b)`: per-design differences
    /// averaged over the shared batch, so the common noise terms cancel and
    /// the standard error reflects only the differential design spread.
    pub fn risk_difference(
        &self,
        mu_a: &DVector<f64>,
        sigma_a: f64,
        mu_b: &DVector<f64>,
        sigma_b: f64,
    ) -> Result<RiskEstimate> {
        if mu_a.len() != self.d || mu_b.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "semi-analytic risk difference",
                expected: self.d,
                actual: mu_a.len().max(mu_b.len()),
            });
        }
        let l2 = self.lambda * self.lambda;
        let (sa2, sb2) = (sigma_a * sigma_a, sigma_b * sigma_b);
        let per_design: Vec<f64> = self
            .a_sq
            .iter()
            .zip(&self.tr_a_sq)
            .map(|(a2, tr)| {
                l2 * (mu_a.dot(&(a2 * mu_a)) - mu_b.dot(&(a2 * mu_b)) + (sa2 - sb2) * tr)
            })
            .collect();
        RiskEstimate::from_samples(&per_design)
    }

    /// Noise-amplification factor of the estimator, `mean Tr(A XᵀX A)`:
    /// the variance component of the risk per unit of observation noise.
    pub fn noise_amplification(&self) -> f64 {
        self.noise_amp.iter().sum::<f64>() / self.noise_amp.len() as f64
    }
}

/// Batch-averaged exact risk of the ridge predictor under `q`; see
/// [`SemiAnalyticRidge`] for the formula.
pub fn semi_analytic_risk(
    q: &GaussianTaskDistribution,
    pred: &RidgePredictor,
    noise: &NoiseConfig,
    designs: &DesignBatch,
) -> Result<RiskEstimate> {
    SemiAnalyticRidge::new(pred, noise, designs)?.risk(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::monte_carlo_risk_on_designs;
    use crate::rng::StreamTree;
    use crate::task::{sample_context, ContextStreams};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tree() -> StreamTree {
        StreamTree::new(90210)
    }

    fn identity_context(beta: &DVector<f64>) -> ContextSet {
        let d = beta.len();
        ContextSet::new(DMatrix::identity(d, d), beta.clone(), DVector::zeros(d), 0.0).unwrap()
    }

    #[test]
    fn identity_design_recovers_task_exactly() {
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let ctx = identity_context(&beta);
        let pred = RidgePredictor::new(0.0, 3).unwrap();
        let fitted = pred.fit(&ctx).unwrap();
        assert!((&fitted - &beta).amax() < 1e-12);
    }

    #[test]
    fn identity_design_with_ridge_shrinks_by_one_plus_lambda() {
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let ctx = identity_context(&beta);
        let lambda = 0.7;
        let pred = RidgePredictor::new(lambda, 4).unwrap();
        let fitted = pred.fit(&ctx).unwrap();
        let expected = &beta / (1.0 + lambda);
        assert!((&fitted - &expected).amax() < 1e-12);
    }

    #[test]
    fn prediction_composes_fit_with_the_test_point() {
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x_test = DVector::from_vec(vec![0.3, 0.7, -0.2]);
        let ctx = ContextSet::new(DMatrix::identity(3, 3), beta.clone(), x_test.clone(), 0.0).unwrap();
        let lambda = 0.25;
        let pred = RidgePredictor::new(lambda, 3).unwrap();
        let expected = x_test.dot(&beta) / (1.0 + lambda);
        assert!((pred.predict(&ctx).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn singular_system_at_zero_lambda_errors() {
        // 3 rows in 5 dimensions: XᵀX is rank deficient.
        let mut rng = tree().stream("singular");
        let x = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_element(3, 1.0);
        let ctx = ContextSet::new(x, y, DVector::zeros(5), 0.0).unwrap();
        match RidgePredictor::new(0.0, 5).unwrap().fit(&ctx) {
            Err(Error::IllPosed(msg)) => assert!(msg.contains("λ > 0"), "message: {msg}"),
            other => panic!("expected ill-posed error, got {other:?}"),
        }
    }

    /// Steepest descent with exact line search on the ridge objective,
    /// independent of the Cholesky path.
    fn iterative_ridge_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let d = x.ncols();
        let gram = x.transpose() * x;
        let xty = x.transpose() * y;
        let mut beta = DVector::zeros(d);
        for _ in 0..200_000 {
            // ∇ = 2 (XᵀX + λI) β − 2 Xᵀy
            let hbeta = &gram * &beta + &beta * lambda;
            let grad = (&hbeta - &xty) * 2.0;
            let gnorm = grad.norm();
            if gnorm <= 1e-10 {
                break;
            }
            let hg = &gram * &grad + &grad * lambda;
            let step = grad.norm_squared() / (2.0 * grad.dot(&hg));
            beta -= grad * step;
        }
        beta
    }

    #[test]
    fn closed_form_matches_iterative_minimizer() {
        let mut rng = tree().stream("iterative");
        let noise = NoiseConfig::new(0.1, 1.0).unwrap();
        for trial in 0..20 {
            let beta = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut streams = ContextStreams::from_tree(&tree().indexed_child("it", trial), "ctx");
            let ctx = sample_context(&beta, 50, &noise, &mut streams).unwrap();
            let pred = RidgePredictor::new(0.1, 5).unwrap();
            let closed = pred.fit(&ctx).unwrap();
            let iterative = iterative_ridge_oracle(ctx.x(), ctx.y(), 0.1);
            assert!(
                (&closed - &iterative).amax() < 1e-6,
                "trial {trial}: closed form and iterative oracle disagree by {}",
                (&closed - &iterative).amax()
            );
        }
    }

    #[test]
    fn residual_stationarity_holds() {
        let mut rng = tree().stream("stationarity");
        let noise = NoiseConfig::new(0.25, 1.0).unwrap();
        for trial in 0..10 {
            let d = 4 + trial % 5;
            let beta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut streams = ContextStreams::from_tree(&tree().indexed_child("st", trial as u64), "ctx");
            let ctx = sample_context(&beta, 30, &noise, &mut streams).unwrap();
            let lambda = 0.3;
            let fitted = RidgePredictor::new(lambda, d).unwrap().fit(&ctx).unwrap();
            let xty = ctx.x().transpose() * ctx.y();
            let stat = ctx.x().transpose() * (ctx.y() - ctx.x() * &fitted) - &fitted * lambda;
            assert!(
                stat.norm() <= 1e-8 * xty.norm(),
                "trial {trial}: stationarity residual {} vs bound {}",
                stat.norm(),
                1e-8 * xty.norm()
            );
        }
    }

    #[test]
    fn heavy_regularization_kills_sensitivity() {
        let noise = NoiseConfig::new(0.1, 1.0).unwrap();
        let beta = DVector::from_element(5, 1.0);
        let mut streams = ContextStreams::from_tree(&tree(), "jac");
        let ctx = sample_context(&beta, 10, &noise, &mut streams).unwrap();
        let report = RidgePredictor::new(1e9, 5).unwrap().jacobian_diagnostics(&ctx).unwrap();
        assert!(report.spectral_norm <= 1e-6, "‖J‖ = {}", report.spectral_norm);
    }

    #[test]
    fn jacobian_norm_respects_singular_value_chain() {
        let noise = NoiseConfig::new(0.1, 1.0).unwrap();
        for (lambda, trial) in [(0.0, 0u64), (0.1, 1), (1.0, 2)] {
            let beta = DVector::from_element(6, 0.5);
            let mut streams = ContextStreams::from_tree(&tree().indexed_child("chain", trial), "ctx");
            let ctx = sample_context(&beta, 40, &noise, &mut streams).unwrap();
            let report = RidgePredictor::new(lambda, 6).unwrap().jacobian_diagnostics(&ctx).unwrap();
            let ratio = report.sigma_max_xtx / (report.sigma_min_xtx + lambda);
            if lambda == 0.0 {
                assert!(ratio >= 1.0, "well-conditioned ratio must be >= 1, got {ratio}");
            }
            assert!(
                report.spectral_norm <= ctx.x_test().norm() * ratio + 1e-9,
                "chain violated: {} > {}",
                report.spectral_norm,
                ctx.x_test().norm() * ratio
            );
        }
    }

    #[test]
    fn gram_singular_values_concentrate() {
        // Over 100 Gaussian designs with N = 1000, d = 20, the extreme
        // singular values of XᵀX stay within the widened concentration band
        // in at least 99 trials.
        let n = 1000usize;
        let d = 20usize;
        let low = ((n as f64).sqrt() - (d as f64).sqrt()).powi(2) * 0.9;
        let high = ((n as f64).sqrt() + (d as f64).sqrt()).powi(2) * 1.1;
        let mut rng = tree().stream("concentration");
        let mut hits = 0;
        for _ in 0..100 {
            let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let eigs = (x.transpose() * &x).symmetric_eigenvalues();
            let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if min >= low && max <= high {
                hits += 1;
            }
        }
        assert!(hits >= 99, "only {hits}/100 trials inside the concentration band");
    }

    #[test]
    fn interpolation_regime_has_zero_risk() {
        // σ² = 0 and λ = 0 with invertible designs: the oracle interpolates.
        let mut rng = tree().stream("interp");
        let designs = DesignBatch::generate(4, 20, 8, &mut rng).unwrap();
        let pred = RidgePredictor::new(0.0, 4).unwrap();
        let noise = NoiseConfig::new(0.0, 1.0).unwrap();
        let q = GaussianTaskDistribution::standard(4);
        let est = semi_analytic_risk(&q, &pred, &noise, &designs).unwrap();
        assert!(est.value.abs() < 1e-18, "risk = {}", est.value);
    }

    #[test]
    fn semi_analytic_matches_monte_carlo() {
        let mut rng = tree().stream("sa-vs-mc");
        for trial in 0..3 {
            let d = 6;
            let n = 12;
            let lambda = [0.05, 0.2, 0.8][trial];
            let mu_norm = [0.0, 0.7, 1.5][trial];
            let sigma_q = [1.0, 1.3, 0.6][trial];
            let mut mu = DVector::zeros(d);
            if mu_norm > 0.0 {
                let raw = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                mu = raw.normalize() * mu_norm;
            }
            let q = GaussianTaskDistribution::new(mu, sigma_q).unwrap();
            let noise = NoiseConfig::new(lambda, 1.0).unwrap();
            let pred = RidgePredictor::new(lambda, d).unwrap();
            let designs = DesignBatch::generate(d, n, 16, &mut rng).unwrap();

            let exact = semi_analytic_risk(&q, &pred, &noise, &designs).unwrap();
            let mc = monte_carlo_risk_on_designs(&q, &pred, &noise, &designs, 100_000, &mut rng).unwrap();
            let gap = (exact.value - mc.value).abs();
            assert!(
                gap <= 3.0 * mc.std_error,
                "trial {trial}: semi-analytic {} vs MC {} ± {} (gap {gap})",
                exact.value,
                mc.value,
                mc.std_error
            );
        }
    }

    #[test]
    fn risk_increases_in_mean_norm_and_task_scale() {
        let mut rng = tree().stream("monotone");
        let d = 8;
        let designs = DesignBatch::generate(d, 15, 16, &mut rng).unwrap();
        let pred = RidgePredictor::new(0.3, d).unwrap();
        let noise = NoiseConfig::new(0.3, 1.0).unwrap();
        let sar = SemiAnalyticRidge::new(&pred, &noise, &designs).unwrap();
        let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();

        let mut last = f64::NEG_INFINITY;
        for r in [0.0, 0.5, 1.0, 2.0] {
            let v = sar.risk_params(&(&dir * r), 1.0).unwrap().value;
            assert!(v > last, "risk must increase in ‖μ‖: {v} after {last}");
            last = v;
        }
        let mut last = f64::NEG_INFINITY;
        for s in [0.5, 1.0, 1.5, 2.5] {
            let v = sar.risk_params(&DVector::zeros(d), s).unwrap().value;
            assert!(v > last, "risk must increase in σ_q: {v} after {last}");
            last = v;
        }
    }

    #[test]
    fn nominal_risk_shrinks_like_one_over_n() {
        // β* = 0 and N >> d: risk − σ² is dominated by the O(1/N) variance
        // term; a linear fit of (risk − σ²) against 1/N must explain ≥ 95%
        // of the variance.
        let d = 5;
        let noise = NoiseConfig::new(0.1, 1.0).unwrap();
        let pred = RidgePredictor::new(noise.lambda(), d).unwrap();
        let q = GaussianTaskDistribution::standard(d);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, n) in [10usize, 20, 40, 80, 160].into_iter().enumerate() {
            let mut rng = tree().indexed_stream("scaling", i as u64);
            let designs = DesignBatch::generate(d, n, 64, &mut rng).unwrap();
            let est = semi_analytic_risk(&q, &pred, &noise, &designs).unwrap();
            xs.push(1.0 / n as f64);
            ys.push(est.value - noise.sigma_sq);
        }
        // Simple least squares y = a + b x.
        let n = xs.len() as f64;
        let xm = xs.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        let slope = sxy / sxx;
        let intercept = ym - slope * xm;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let r = y - (intercept + slope * x);
                r * r
            })
            .sum();
        let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 >= 0.95, "1/N fit R² = {r2}");
        assert!(slope > 0.0, "risk must grow as N shrinks");
    }

    #[test]
    fn analytic_loss_gradient_matches_finite_differences() {
        // The override must agree with the default FD path on the trait.
        struct FdOnly(RidgePredictor);
        impl IclPredictor for FdOnly {
            fn predict_parts(&self, x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DVector<f64>) -> Result<f64> {
                self.0.predict_parts(x, y, x_test)
            }
            fn path_name(&self) -> &'static str {
                "ridge-fd"
            }
        }

        let mut rng = tree().stream("grad");
        let d = 5;
        let n = 12;
        let pred = RidgePredictor::new(0.2, d).unwrap();
        let fd = FdOnly(pred);
        for trial in 0..5 {
            let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let eps = DVector::from_fn(n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            let x_test = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let eps_test = 0.3 * rng.sample::<f64, _>(StandardNormal);
            let beta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let analytic = pred.loss_grad_beta(&x, &eps, &x_test, eps_test, &beta).unwrap();
            let numeric = fd.loss_grad_beta(&x, &eps, &x_test, eps_test, &beta).unwrap();
            for j in 0..d {
                let denom = analytic[j].abs().max(numeric[j].abs()).max(1e-6);
                assert!(
                    (analytic[j] - numeric[j]).abs() / denom < 1e-6,
                    "trial {trial} coord {j}: analytic {} vs fd {}",
                    analytic[j],
                    numeric[j]
                );
            }
        }
    }
}
