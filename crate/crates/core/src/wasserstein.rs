//! Closed-form Wasserstein-2 geometry on Gaussians.
//!
//! For two Gaussians `N(μ₁, Σ₁)`, `N(μ₂, Σ₂)` the squared W2 distance is
//!
//! ```text
//! W2² = ‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})
//! ```
//!
//! which for isotropic covariances `Σᵢ = σᵢ² I_d` collapses to
//! `‖μ₁ − μ₂‖² + d (σ₁ − σ₂)²`. The adversary's feasible set is the ball
//! `B_ρ(Q₀)` under this metric, and iterates that leave it are pulled back by
//! radially scaling the deviation `(μ − μ₀, σ − σ₀)` until the distance equals
//! the radius.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::task::GaussianTaskDistribution;

/// Lowest standard deviation a projected iterate may have. Gradient steps can
/// in principle drive σ nonpositive before projection; clamping keeps the
/// Gaussian family valid and the event is reported to the caller.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Wasserstein-2 ball `B_ρ(center)` over isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinBall {
    center: GaussianTaskDistribution,
    radius: f64,
}

impl WassersteinBall {
    pub fn new(center: GaussianTaskDistribution, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", format!("must be finite and >= 0, got {radius}")));
        }
        Ok(WassersteinBall { center, radius })
    }

    pub fn center(&self) -> &GaussianTaskDistribution {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, q: &GaussianTaskDistribution, tolerance: f64) -> Result<bool> {
        Ok(w2_isotropic(q, &self.center)? <= self.radius + tolerance)
    }
}

/// W2 distance between two isotropic Gaussians:
/// `sqrt(‖μ₁ − μ₂‖² + d (σ₁ − σ₂)²)`.
pub fn w2_isotropic(p: &GaussianTaskDistribution, q: &GaussianTaskDistribution) -> Result<f64> {
    if p.d() != q.d() {
        return Err(Error::DimensionMismatch {
            context: "w2_isotropic",
            expected: p.d(),
            actual: q.d(),
        });
    }
    let mean_sq = (p.mean() - q.mean()).norm_squared();
    let ds = p.std() - q.std();
    Ok((mean_sq + p.d() as f64 * ds * ds).sqrt())
}

/// W2 distance between general Gaussians via symmetric eigendecompositions.
/// Covariances must be symmetric positive semidefinite; eigenvalues within
/// `-1e-10` of zero are clamped to zero before taking matrix square roots.
pub fn w2_general(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d {
        return Err(Error::DimensionMismatch {
            context: "w2_general means",
            expected: d,
            actual: mu2.len(),
        });
    }
    for (name, cov) in [("cov1", cov1), ("cov2", cov2)] {
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "w2_general covariance",
                expected: d,
                actual: cov.nrows().max(cov.ncols()),
            });
        }
        check_psd(name, cov)?;
    }

    let sqrt1 = psd_sqrt(cov1);
    let inner = &sqrt1 * cov2 * &sqrt1;
    let cross = psd_sqrt(&inner);

    let trace_term = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    // Round-off can leave a tiny negative residue when the distributions match.
    let sq = (mu1 - mu2).norm_squared() + trace_term.max(0.0);
    Ok(sq.sqrt())
}

/// Result of pulling a point back onto the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: DVector<f64>,
    pub std: f64,
    /// True when the input σ had to be clamped to [`SIGMA_FLOOR`].
    pub clamped: bool,
    /// True when the point was outside the ball and got scaled.
    pub scaled: bool,
}

/// Radial projection of isotropic-Gaussian parameters `(μ, σ)` onto `ball`.
///
/// With `w = W2((μ, σ), center)`: points with `w ≤ ρ` are returned unchanged;
/// otherwise the deviation from the center is scaled by `ρ / w`, which lands
/// exactly on the sphere of radius `ρ`. For the experiments' nominal center
/// `N(0, I)` this is `μ ← μ·ρ/w`, `σ ← 1 + (σ − 1)·ρ/w`.
pub fn project_to_ball(mu: &DVector<f64>, sigma: f64, ball: &WassersteinBall) -> Result<Projection> {
    if mu.len() != ball.center.d() {
        return Err(Error::DimensionMismatch {
            context: "project_to_ball",
            expected: ball.center.d(),
            actual: mu.len(),
        });
    }
    let mut sigma = sigma;
    let mut clamped = false;
    if sigma < SIGMA_FLOOR {
        sigma = SIGMA_FLOOR;
        clamped = true;
    }

    let d = mu.len() as f64;
    let dm = mu - ball.center.mean();
    let ds = sigma - ball.center.std();
    let w = (dm.norm_squared() + d * ds * ds).sqrt();

    if w <= ball.radius {
        return Ok(Projection {
            mean: mu.clone(),
            std: sigma,
            clamped,
            scaled: false,
        });
    }

    let scale = ball.radius / w;
    let mean = ball.center.mean() + dm * scale;
    let mut std = ball.center.std() + ds * scale;
    if std < SIGMA_FLOOR {
        std = SIGMA_FLOOR;
        clamped = true;
    }
    Ok(Projection {
        mean,
        std,
        clamped,
        scaled: true,
    })
}

fn check_psd(name: &'static str, cov: &DMatrix<f64>) -> Result<()> {
    let scale = cov.amax().max(1.0);
    for i in 0..cov.nrows() {
        for j in (i + 1)..cov.ncols() {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(name, "covariance is not symmetric"));
            }
        }
    }
    let sym = symmetrize(cov);
    let eigs = sym.symmetric_eigenvalues();
    if eigs.iter().any(|&e| e < -1e-10 * scale) {
        return Err(Error::invalid(name, "covariance is not positive semidefinite"));
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root; negative eigenvalues from round-off clamp to 0.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let root = lam.max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        // out += root * v vᵀ
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] += root * v[i] * v[j];
            }
        }
    }
    out
}
