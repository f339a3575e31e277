//! Least-squares machinery for the scaling-law experiments.
//!
//! Three fits appear downstream: the risk-increment curve `Δrisk ≈ aρ + bρ²`
//! (through the origin on features `[ρ, ρ²]`), the safe-radius line
//! `ρ_max ≈ k·√m` (through the origin), and the sample-tax line
//! `N_ρ − N₀ ≈ c·ρ²` (free intercept). `R²` is always the definitional
//! `1 − SS_res/SS_tot` with `SS_tot` taken about the mean of the fitted data.
//!
//! The bound evaluator fits `nominal + C₁·ρ√(d/m) + C₂·ρ²/√N` to measured
//! worst-case risks with `C₁, C₂ ≥ 0` (the constants have no closed form, so
//! the bound is descriptive). Two search procedures complete the set: a
//! noise-aware binary search for the largest tolerable radius, and an upward
//! scan for the smallest context length that restores a target risk.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::risk::RiskEstimate;

/// One data point of a fit: abscissa, ordinate, standard error (0 if exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPoint {
    pub x: f64,
    pub y: f64,
    pub se: f64,
}

impl FitPoint {
    pub fn new(x: f64, y: f64) -> Self {
        FitPoint { x, y, se: 0.0 }
    }

    pub fn with_se(x: f64, y: f64, se: f64) -> Self {
        FitPoint { x, y, se }
    }
}

/// Fitted coefficients with diagnostics and the data they were fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFitReport {
    pub coefficient_names: Vec<&'static str>,
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub data: Vec<FitPoint>,
}

impl ScalingFitReport {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names
            .iter()
            .position(|&n| n == name)
            .map(|i| self.coefficients[i])
    }
}

fn r_squared(ys: &[f64], residuals: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    if ss_tot <= 1e-300 {
        // Zero-variance data: perfect fit iff residuals vanish.
        return if ss_res <= 1e-300 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Generic least squares `y ≈ Φ c` via normal equations. `phi` is row-major
/// per point. Errors on rank deficiency.
fn least_squares(phi: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
    let rows = phi.len();
    let cols = phi[0].len();
    let mut ata = DMatrix::zeros(cols, cols);
    let mut atb = DVector::zeros(cols);
    for (row, &y) in phi.iter().zip(ys) {
        for i in 0..cols {
            atb[i] += row[i] * y;
            for j in 0..cols {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    let _ = rows;
    let chol = nalgebra::Cholesky::new(ata)
        .ok_or_else(|| Error::IllPosed("rank-deficient design in least squares".into()))?;
    Ok(chol.solve(&atb).iter().cloned().collect())
}

fn check_points(points: &[FitPoint], min_points: usize) -> Result<()> {
    if points.len() < min_points {
        return Err(Error::invalid(
            "points",
            format!("need at least {min_points} points, got {}", points.len()),
        ));
    }
    for (i, a) in points.iter().enumerate() {
        for b in points.iter().skip(i + 1) {
            if a.x == b.x {
                return Err(Error::invalid("points", format!("duplicate abscissa {}", a.x)));
            }
        }
    }
    Ok(())
}

/// Fit `Δrisk ≈ a·ρ + b·ρ²` through the origin. Requires ≥ 4 points with
/// distinct ρ.
pub fn fit_risk_curve(points: &[FitPoint]) -> Result<ScalingFitReport> {
    check_points(points, 4)?;
    let phi: Vec<Vec<f64>> = points.iter().map(|p| vec![p.x, p.x * p.x]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let coef = least_squares(&phi, &ys)?;
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.y - (coef[0] * p.x + coef[1] * p.x * p.x))
        .collect();
    Ok(ScalingFitReport {
        coefficient_names: vec!["a", "b"],
        coefficients: coef,
        r_squared: r_squared(&ys, &residuals),
        residuals,
        data: points.to_vec(),
    })
}

/// Fit `y ≈ slope·x` through the origin (≥ 2 points).
pub fn fit_line_through_origin(points: &[FitPoint]) -> Result<ScalingFitReport> {
    check_points(points, 2)?;
    let sxx: f64 = points.iter().map(|p| p.x * p.x).sum();
    if sxx <= 1e-300 {
        return Err(Error::IllPosed("all abscissae are zero".into()));
    }
    let slope = points.iter().map(|p| p.x * p.y).sum::<f64>() / sxx;
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let residuals: Vec<f64> = points.iter().map(|p| p.y - slope * p.x).collect();
    Ok(ScalingFitReport {
        coefficient_names: vec!["slope"],
        coefficients: vec![slope],
        r_squared: r_squared(&ys, &residuals),
        residuals,
        data: points.to_vec(),
    })
}

/// Fit `y ≈ intercept + slope·x` (≥ 3 points).
pub fn fit_line(points: &[FitPoint]) -> Result<ScalingFitReport> {
    check_points(points, 3)?;
    let phi: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, p.x]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let coef = least_squares(&phi, &ys)?;
    let residuals: Vec<f64> = points.iter().map(|p| p.y - (coef[0] + coef[1] * p.x)).collect();
    Ok(ScalingFitReport {
        coefficient_names: vec!["intercept", "slope"],
        coefficients: coef,
        r_squared: r_squared(&ys, &residuals),
        residuals,
        data: points.to_vec(),
    })
}

/// Descriptive worst-case bound `nominal + C₁·ρ·√(d/m) + C₂·ρ²/√N` with
/// nonnegative `C₁, C₂` fit from measured worst-case risks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundForm {
    pub nominal_risk: f64,
    pub c1: f64,
    pub c2: f64,
    pub d: usize,
    pub m: usize,
    pub n: usize,
}

impl BoundForm {
    pub fn evaluate(&self, rho: f64) -> f64 {
        self.nominal_risk
            + self.c1 * rho * (self.d as f64 / self.m as f64).sqrt()
            + self.c2 * rho * rho / (self.n as f64).sqrt()
    }
}

/// Nonnegative least squares for the bound form on measured
/// `(ρ, worst-case risk)` points: free intercept, `C₁, C₂ ≥ 0` via active-set
/// enumeration (two constrained coefficients → four sign patterns).
pub fn fit_bound_form(points: &[FitPoint], d: usize, m: usize, n: usize) -> Result<BoundForm> {
    check_points(points, 3)?;
    let f1 = |rho: f64| rho * (d as f64 / m as f64).sqrt();
    let f2 = |rho: f64| rho * rho / (n as f64).sqrt();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();

    let mut best: Option<(f64, f64, f64, f64)> = None; // (ss_res, c0, c1, c2)
    for (use1, use2) in [(true, true), (true, false), (false, true), (false, false)] {
        let mut phi = Vec::with_capacity(points.len());
        for p in points {
            let mut row = vec![1.0];
            if use1 {
                row.push(f1(p.x));
            }
            if use2 {
                row.push(f2(p.x));
            }
            phi.push(row);
        }
        let coef = match least_squares(&phi, &ys) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let mut k = 1;
        let c1 = if use1 {
            let v = coef[k];
            k += 1;
            v
        } else {
            0.0
        };
        let c2 = if use2 { coef[k] } else { 0.0 };
        if c1 < 0.0 || c2 < 0.0 {
            continue;
        }
        let ss: f64 = points
            .iter()
            .map(|p| {
                let r = p.y - (coef[0] + c1 * f1(p.x) + c2 * f2(p.x));
                r * r
            })
            .sum();
        if best.as_ref().map_or(true, |b| ss < b.0) {
            best = Some((ss, coef[0], c1, c2));
        }
    }
    let (_, c0, c1, c2) =
        best.ok_or_else(|| Error::IllPosed("no feasible nonnegative fit".into()))?;
    Ok(BoundForm {
        nominal_risk: c0,
        c1,
        c2,
        d,
        m,
        n,
    })
}

/// Record of one probe of the increment function during the radius search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRecord {
    pub rho: f64,
    pub increment: f64,
    pub se: f64,
    /// Sample multiplier this probe ended up evaluated at (1, then 4 after a
    /// re-evaluation).
    pub boost: u32,
}

/// Result of the safe-radius search.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoMaxResult {
    pub rho_max: f64,
    /// False when the increment never exceeded ε on the interval and the
    /// right endpoint was returned.
    pub binding: bool,
    pub probes: Vec<ProbeRecord>,
}

/// Binary search for the largest radius whose worst-case risk increment stays
/// at or below `epsilon`.
///
/// `increment(rho, boost)` returns the measured increment at radius `rho`
/// with `boost`× the base sample budget. Decisions demand one-standard-error
/// clearance; an ambiguous probe (ε within one se) is re-evaluated at 4× the
/// samples, then decided by point value. A probe whose increment falls below
/// an earlier, smaller-radius probe by more than twice their combined
/// standard errors is re-evaluated the same way (nested feasible sets make
/// the true increment nondecreasing in ρ).
pub fn find_rho_max(
    epsilon: f64,
    interval: (f64, f64),
    tol: f64,
    increment: &mut dyn FnMut(f64, u32) -> Result<RiskEstimate>,
) -> Result<RhoMaxResult> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be > 0"));
    }
    let (mut lo, mut hi) = interval;
    if !(hi > lo) || !(lo >= 0.0) {
        return Err(Error::invalid("interval", format!("bad interval ({lo}, {hi})")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be > 0"));
    }

    let mut probes: Vec<ProbeRecord> = Vec::new();

    let mut evaluate = |rho: f64, probes: &mut Vec<ProbeRecord>| -> Result<RiskEstimate> {
        let mut boost = 1u32;
        let mut est = increment(rho, boost)?;
        // Monotonicity guard against earlier probes at smaller radii.
        let needs_retry = |est: &RiskEstimate, probes: &[ProbeRecord]| {
            probes.iter().any(|p| {
                p.rho < rho && est.value < p.increment - 2.0 * (est.std_error + p.se)
            })
        };
        // Ambiguity guard around ε.
        let ambiguous = |est: &RiskEstimate| (est.value - epsilon).abs() <= est.std_error && est.std_error > 0.0;
        if needs_retry(&est, &probes) || ambiguous(&est) {
            boost = 4;
            est = increment(rho, boost)?;
        }
        probes.push(ProbeRecord {
            rho,
            increment: est.value,
            se: est.std_error,
            boost,
        });
        Ok(est)
    };

    let exceeds = |est: &RiskEstimate| est.value > epsilon;

    let at_lo = evaluate(lo, &mut probes)?;
    if exceeds(&at_lo) && at_lo.value - at_lo.std_error > epsilon {
        return Err(Error::invalid(
            "interval",
            format!(
                "increment at the left endpoint ρ = {lo} already exceeds ε = {epsilon} ({} ± {})",
                at_lo.value, at_lo.std_error
            ),
        ));
    }
    let at_hi = evaluate(hi, &mut probes)?;
    if !exceeds(&at_hi) {
        return Ok(RhoMaxResult {
            rho_max: hi,
            binding: false,
            probes,
        });
    }

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let est = evaluate(mid, &mut probes)?;
        if exceeds(&est) {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    Ok(RhoMaxResult {
        rho_max: lo,
        binding: true,
        probes,
    })
}

/// Result of the sample-complexity scan.
#[derive(Debug, Clone)]
pub struct SampleTaxResult {
    pub n_rho: usize,
    /// `(N, worst-case risk)` for every probed context length.
    pub curve: Vec<(usize, RiskEstimate)>,
}

/// Smallest `N` in `[n0, n_max]` whose worst-case risk is at or below the
/// target, allowing one standard error of slack (the standard error of the
/// comparison, i.e. both estimates' uncertainties combined). Scans upward;
/// errors if no `N` in range suffices (the message carries the achieved
/// curve).
pub fn find_sample_tax(
    target: &RiskEstimate,
    n0: usize,
    n_max: usize,
    worst: &mut dyn FnMut(usize) -> Result<RiskEstimate>,
) -> Result<SampleTaxResult> {
    if n0 == 0 || n_max < n0 {
        return Err(Error::invalid("n_range", format!("bad range [{n0}, {n_max}]")));
    }
    let mut curve = Vec::new();
    for n in n0..=n_max {
        let est = worst(n)?;
        curve.push((n, est));
        let slack = (est.std_error.powi(2) + target.std_error.powi(2)).sqrt();
        if est.value <= target.value + slack {
            return Ok(SampleTaxResult { n_rho: n, curve });
        }
    }
    let achieved: Vec<String> = curve
        .iter()
        .map(|(n, e)| format!("N={n}: {:.6}±{:.6}", e.value, e.std_error))
        .collect();
    Err(Error::Numerical(format!(
        "no N in [{n0}, {n_max}] reaches target {:.6}; achieved: [{}]",
        target.value,
        achieved.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(data: &[(f64, f64)]) -> Vec<FitPoint> {
        data.iter().map(|&(x, y)| FitPoint::new(x, y)).collect()
    }

    #[test]
    fn exact_quadratic_recovers_coefficients() {
        let points = pts(&[(0.25, 0.0), (0.5, 0.0), (1.0, 0.0), (1.5, 0.0), (2.0, 0.0)]
            .iter()
            .map(|&(x, _)| (x, 2.0 * x + 3.0 * x * x))
            .collect::<Vec<_>>());
        let fit = fit_risk_curve(&points).unwrap();
        assert!((fit.coefficient("a").unwrap() - 2.0).abs() < 1e-10);
        assert!((fit.coefficient("b").unwrap() - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn all_zero_increments_give_zero_coefficients() {
        let points = pts(&[(0.25, 0.0), (0.5, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let fit = fit_risk_curve(&points).unwrap();
        assert_eq!(fit.coefficient("a").unwrap(), 0.0);
        assert_eq!(fit.coefficient("b").unwrap(), 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(fit_risk_curve(&pts(&[(0.5, 1.0), (1.0, 2.0), (1.5, 3.0)])).is_err(), "too few");
        assert!(
            fit_risk_curve(&pts(&[(0.5, 1.0), (0.5, 2.0), (1.5, 3.0), (2.0, 4.0)])).is_err(),
            "duplicate abscissa"
        );
    }

    #[test]
    fn r_squared_matches_hand_computation() {
        // Points (1,1), (2,3), (3,2): least squares line y = 1 + 0.5x.
        // Residuals: -0.5, 1, -0.5; SS_res = 1.5; SS_tot = 2; R² = 0.25.
        let fit = fit_line(&pts(&[(1.0, 1.0), (2.0, 3.0), (3.0, 2.0)])).unwrap();
        assert!((fit.coefficient("intercept").unwrap() - 1.0).abs() < 1e-12);
        assert!((fit.coefficient("slope").unwrap() - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 0.25).abs() < 1e-12);
    }

    #[test]
    fn through_origin_slope() {
        let fit = fit_line_through_origin(&pts(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)])).unwrap();
        assert!((fit.coefficient("slope").unwrap() - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_form_evaluates_nominal_at_zero_radius() {
        let bf = BoundForm {
            nominal_risk: 1.5,
            c1: 2.0,
            c2: 3.0,
            d: 20,
            m: 16,
            n: 15,
        };
        assert_eq!(bf.evaluate(0.0), 1.5);
        let constant = BoundForm { c1: 0.0, c2: 0.0, ..bf };
        assert_eq!(constant.evaluate(2.0), 1.5);
    }

    #[test]
    fn bound_fit_is_nonnegative_and_tracks_quadratic_data() {
        let (d, m, n) = (20usize, 16usize, 15usize);
        let truth = BoundForm {
            nominal_risk: 2.0,
            c1: 1.2,
            c2: 0.8,
            d,
            m,
            n,
        };
        let points: Vec<FitPoint> = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0]
            .iter()
            .map(|&r| FitPoint::with_se(r, truth.evaluate(r), 0.01))
            .collect();
        let fit = fit_bound_form(&points, d, m, n).unwrap();
        assert!((fit.nominal_risk - 2.0).abs() < 1e-8);
        assert!((fit.c1 - 1.2).abs() < 1e-8);
        assert!((fit.c2 - 0.8).abs() < 1e-8);
        for p in &points {
            assert!(
                fit.evaluate(p.x) >= p.y - 2.0 * p.se,
                "bound dips below a fitted point at ρ = {}",
                p.x
            );
        }

        // Data that pulls a coefficient negative must clamp at zero.
        let decreasing: Vec<FitPoint> = [0.0, 0.5, 1.0, 1.5]
            .iter()
            .map(|&r| FitPoint::new(r, 2.0 - 0.5 * r))
            .collect();
        let clamped = fit_bound_form(&decreasing, d, m, n).unwrap();
        assert!(clamped.c1 >= 0.0 && clamped.c2 >= 0.0);
        assert!(clamped.c1 == 0.0 || clamped.c2 == 0.0);
    }

    #[test]
    fn rho_max_finds_analytic_root() {
        // g(ρ) = ρ² with ε = 1: ρ_max = 1.
        let mut g = |rho: f64, _boost: u32| Ok(RiskEstimate::exact(rho * rho));
        let res = find_rho_max(1.0, (0.0, 2.0), 0.02, &mut g).unwrap();
        assert!(res.binding);
        assert!((res.rho_max - 1.0).abs() <= 0.02, "ρ_max = {}", res.rho_max);
    }

    #[test]
    fn rho_max_flags_non_binding_interval() {
        let mut g = |rho: f64, _boost: u32| Ok(RiskEstimate::exact(rho * rho));
        let res = find_rho_max(1e6, (0.0, 2.0), 0.02, &mut g).unwrap();
        assert!(!res.binding);
        assert_eq!(res.rho_max, 2.0);
    }

    #[test]
    fn rho_max_bracket_invariant_holds() {
        let mut g = |rho: f64, _boost: u32| Ok(RiskEstimate::exact(0.7 * rho + 0.3 * rho * rho));
        let eps = 1.0;
        let res = find_rho_max(eps, (0.0, 2.0), 0.01, &mut g).unwrap();
        // Every probe below the returned radius must be feasible, every probe
        // above the bracket's right edge infeasible.
        for p in &res.probes {
            if p.rho <= res.rho_max {
                assert!(p.increment <= eps, "feasible side violated at ρ = {}", p.rho);
            }
            if p.rho > res.rho_max + 0.01 {
                assert!(p.increment > eps, "infeasible side violated at ρ = {}", p.rho);
            }
        }
        // True root of 0.3ρ² + 0.7ρ = 1 is exactly 1.
        assert!((res.rho_max - 1.0).abs() <= 0.011, "ρ_max = {}", res.rho_max);
    }

    #[test]
    fn noisy_ambiguous_probe_is_re_evaluated() {
        let mut calls = Vec::new();
        let mut g = |rho: f64, boost: u32| {
            calls.push((rho, boost));
            // Pretend noise shrinks with boost.
            let se = if boost == 1 { 0.5 } else { 0.01 };
            Ok(RiskEstimate {
                value: rho * rho,
                std_error: se,
                samples: 100 * boost as usize,
            })
        };
        let res = find_rho_max(1.0, (0.0, 2.0), 0.05, &mut g).unwrap();
        assert!(calls.iter().any(|&(_, b)| b == 4), "expected a 4x re-evaluation");
        assert!((res.rho_max - 1.0).abs() <= 0.06);
    }

    #[test]
    fn sample_tax_scans_upward() {
        // worst(N) = 10/N; target 1.0 → first N with 10/N ≤ 1 is 10.
        let target = RiskEstimate::exact(1.0);
        let mut worst = |n: usize| Ok(RiskEstimate::exact(10.0 / n as f64));
        let res = find_sample_tax(&target, 5, 40, &mut worst).unwrap();
        assert_eq!(res.n_rho, 10);
        assert_eq!(res.curve.len(), 6);
    }

    #[test]
    fn sample_tax_at_target_returns_the_floor() {
        let target = RiskEstimate::exact(5.0);
        let mut worst = |_n: usize| Ok(RiskEstimate::exact(4.0));
        let res = find_sample_tax(&target, 5, 40, &mut worst).unwrap();
        assert_eq!(res.n_rho, 5);
    }

    #[test]
    fn sample_tax_exhaustion_is_an_error() {
        let target = RiskEstimate::exact(0.1);
        let mut worst = |_n: usize| Ok(RiskEstimate::exact(1.0));
        match find_sample_tax(&target, 5, 8, &mut worst) {
            Err(Error::Numerical(msg)) => {
                assert!(msg.contains("N=8"), "message should carry the curve: {msg}");
            }
            other => panic!("expected exhaustion error, got {other:?}"),
        }
    }
}
