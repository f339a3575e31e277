//! The four experiment runners.
//!
//! exp1 — risk growth with the adversarial radius at fixed capacity and
//! context length, fit as `Δrisk ≈ aρ + bρ²`.
//! exp2 — largest tolerable radius per model capacity, fit as
//! `ρ_max ≈ k·√m` through the origin (a ridge-path run is the negative
//! control: the oracle has no capacity parameter, so its ρ_max is flat).
//! exp3 — smallest context length that restores the `N₀`-prompt nominal risk
//! level under attack, fit as `N_ρ − N₀ ≈ c·ρ²`.
//! λ sweep — relative worst-case increase across regularization strengths
//! (the sweep varies σ² with σ_β² = 1, since `λ_N = σ²/σ_β²`).
//!
//! Cells persist under `<out>/<exp>/cells/` and are skipped on re-runs, so an
//! interrupted grid resumes to the same final CSV.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::adversary::{pga_search, AdversaryResult, RiskBackend, TraceRow};
use crate::attention::{load_checkpoint, save_checkpoint, train, LinearAttentionModel, TrainConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    csv, svg, ExperimentConfig, PredictorPath, ResultRecord,
};
use crate::fits::{
    find_rho_max, find_sample_tax, fit_bound_form, fit_line, fit_line_through_origin,
    fit_risk_curve, BoundForm, FitPoint, ScalingFitReport,
};
use crate::ridge::{RidgePredictor, SemiAnalyticRidge};
use crate::risk::{monte_carlo_risk, DesignBatch, RiskEstimate};
use crate::rng::StreamTree;
use crate::task::{GaussianTaskDistribution, NoiseConfig};

/// Run `f` over the items with the configured worker count (0 = default
/// pool). Results come back in input order regardless of scheduling.
fn run_parallel<P: Sync, T: Send>(
    workers: usize,
    items: &[P],
    f: impl Fn(usize, &P) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let job = || {
        items
            .par_iter()
            .enumerate()
            .map(|(i, p)| f(i, p))
            .collect::<Result<Vec<T>>>()
    };
    if workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(job)
    }
}

/// Compute-or-load a cell value, persisting it as TOML under
/// `<exp_dir>/cells/<cell_id>.toml`. Returns the value and the wall time in
/// milliseconds (0 when the cell was already on disk).
fn cached_cell<T: Serialize + DeserializeOwned>(
    exp_dir: &Path,
    cell_id: &str,
    compute: impl FnOnce() -> Result<T>,
) -> Result<(T, u64)> {
    let dir = exp_dir.join("cells");
    let path = dir.join(format!("{cell_id}.toml"));
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let value = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("corrupt cell file {}: {e}", path.display())))?;
        return Ok((value, 0));
    }
    let started = Instant::now();
    let value = compute()?;
    let wall_ms = started.elapsed().as_millis() as u64;
    std::fs::create_dir_all(&dir)?;
    let text = toml::to_string(&value)
        .map_err(|e| Error::Config(format!("cell serialization: {e}")))?;
    std::fs::write(&path, text)?;
    Ok((value, wall_ms))
}

fn write_trace(exp_dir: &Path, cell_id: &str, trace: &[TraceRow]) -> Result<()> {
    let dir = exp_dir.join("traces");
    std::fs::create_dir_all(&dir)?;
    let mut out = String::from(TraceRow::CSV_HEADER);
    out.push('\n');
    for row in trace {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    std::fs::write(dir.join(format!("{cell_id}.csv")), out)?;
    Ok(())
}

fn fit_summary(name: &str, fit: &ScalingFitReport) -> String {
    let mut out = format!("fit: {name}\n");
    for (n, c) in fit.coefficient_names.iter().zip(&fit.coefficients) {
        out.push_str(&format!("  {n} = {:.6}\n", c));
    }
    out.push_str(&format!("  R^2 = {:.6}\n", fit.r_squared));
    out.push_str("  x,y,residual\n");
    for (p, r) in fit.data.iter().zip(&fit.residuals) {
        out.push_str(&format!("  {:.6},{:.6},{:.6}\n", p.x, p.y, r));
    }
    out
}

fn write_fit_outputs(exp_dir: &Path, name: &str, fit: &ScalingFitReport) -> Result<()> {
    std::fs::create_dir_all(exp_dir)?;
    let mut csv_text = String::from("x,y,se,fitted,residual\n");
    for (p, r) in fit.data.iter().zip(&fit.residuals) {
        csv_text.push_str(&format!(
            "{},{},{},{},{}\n",
            super::format_sig9(p.x),
            super::format_sig9(p.y),
            super::format_sig9(p.se),
            super::format_sig9(p.y - r),
            super::format_sig9(*r)
        ));
    }
    std::fs::write(exp_dir.join(format!("{name}_fit.csv")), csv_text)?;
    std::fs::write(exp_dir.join(format!("{name}_fit.txt")), fit_summary(name, fit))?;
    Ok(())
}

/// Train a model for the `(d, m, n)` cell or reuse its checkpoint under
/// `<out>/checkpoints/`. The training streams derive only from the master
/// seed and the cell, so every experiment resolves the same cell to the same
/// parameters.
pub fn obtain_model(
    cfg: &ExperimentConfig,
    d: usize,
    m: usize,
    n: usize,
    train_cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(LinearAttentionModel, TrainSummary)> {
    let path = cfg.checkpoint_path(out_dir, d, m, n);
    if path.exists() {
        let (model, header) = load_checkpoint(&path)?;
        if header.d as usize != d || header.n as usize != n || model.total_capacity() != m {
            return Err(Error::Checkpoint(format!(
                "{}: header (d={}, m={}, N={}) does not match the requested cell (d={d}, m={m}, N={n})",
                path.display(),
                header.d,
                model.total_capacity(),
                header.n
            )));
        }
        let meta = crate::attention::load_meta(&path).ok();
        return Ok((
            model,
            TrainSummary {
                trained_now: false,
                val_mse: meta.as_ref().map(|m| m.final_val_mse),
                ridge_val_mse: meta.as_ref().map(|m| m.ridge_val_mse),
                class_optimal_mse: meta.as_ref().map(|m| m.class_optimal_mse),
            },
        ));
    }

    let dist = GaussianTaskDistribution::standard(d);
    let tree = StreamTree::new(cfg.seed)
        .child("train")
        .child(&format!("d{d}_m{m}_N{n}"));
    let (model, report) = train(train_cfg, &dist, &cfg.noise, n, m, &tree)?;
    save_checkpoint(&path, &model, n, cfg.seed, train_cfg, &report)?;
    Ok((
        model,
        TrainSummary {
            trained_now: true,
            val_mse: Some(report.final_val_mse),
            ridge_val_mse: Some(report.ridge_val_mse),
            class_optimal_mse: Some(report.class_optimal_mse),
        },
    ))
}

/// Headline numbers of a (re)used model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub trained_now: bool,
    pub val_mse: Option<f64>,
    pub ridge_val_mse: Option<f64>,
    pub class_optimal_mse: Option<f64>,
}

// ---------------------------------------------------------------------------
// exp1

#[derive(Debug, Clone)]
pub struct Exp1Outcome {
    pub records: Vec<ResultRecord>,
    pub fit: ScalingFitReport,
    pub bound: BoundForm,
}

#[derive(Serialize, Deserialize)]
struct Exp1Cell {
    record: ResultRecord,
    increment: f64,
    increment_se: f64,
}

/// Risk-growth experiment over the ρ grid at fixed `(m, N)`.
pub fn run_exp1(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Exp1Outcome> {
    cfg.validate()?;
    let grid = &cfg.exp1.rho_grid;
    if grid.len() < 6 {
        return Err(Error::Config(format!(
            "exp1 needs at least 6 distinct radii in [0, 2] for a meaningful fit, got {} \
             (a single-point grid has zero risk increment by definition)",
            grid.len()
        )));
    }
    for &r in grid {
        if !(0.0..=2.0).contains(&r) {
            return Err(Error::Config(format!("exp1 radius {r} outside [0, 2]")));
        }
    }
    let exp_dir = out_dir.join("exp1");
    let tree = StreamTree::new(cfg.seed).child("exp1");
    let noise = cfg.noise;
    let d = cfg.d;

    // Shared design batch: every cell's nominal and worst-case risk condition
    // on the same designs (paired increments).
    let mut design_rng = tree.stream("designs");
    let designs = DesignBatch::generate(d, cfg.n, cfg.design_batch, &mut design_rng)?;
    let ridge = RidgePredictor::from_noise(&noise, d)?;
    let sar = SemiAnalyticRidge::new(&ridge, &noise, &designs)?;

    let model = match cfg.predictor_path {
        PredictorPath::TrainedTransformer => {
            Some(obtain_model(cfg, d, cfg.m, cfg.n, &cfg.train, out_dir)?.0)
        }
        PredictorPath::RidgeOracle => None,
    };

    let outcomes = run_parallel(cfg.workers, grid, |i, &rho| {
        let cell_tree = tree.indexed_child("cell", i as u64);
        let cell_id = format!(
            "exp1_rho{:.4}_m{}_N{}_lam{:.4}_{}",
            rho,
            cfg.m,
            cfg.n,
            noise.lambda(),
            cfg.predictor_path.name()
        );
        cached_cell(&exp_dir, &cell_id, || {
            let (nominal, adv, increment) = match (&cfg.predictor_path, &model) {
                (PredictorPath::RidgeOracle, _) => {
                    let backend = RiskBackend::SemiAnalytic(&sar);
                    let nominal = sar.risk(&GaussianTaskDistribution::standard(d))?;
                    let adv = pga_search(&cfg.pga, rho, &backend, &mut cell_tree.stream("pga"))?;
                    let inc = sar.risk_difference(
                        adv.q_adv.mean(),
                        adv.q_adv.std(),
                        &DVector::zeros(d),
                        1.0,
                    )?;
                    (nominal, adv, inc)
                }
                (PredictorPath::TrainedTransformer, Some(model)) => {
                    let backend = RiskBackend::MonteCarlo {
                        predictor: model,
                        noise: &noise,
                        n: cfg.n,
                        d,
                    };
                    let nominal = monte_carlo_risk(
                        &GaussianTaskDistribution::standard(d),
                        model,
                        &noise,
                        cfg.n,
                        cfg.pga.risk_eval_samples,
                        &mut cell_tree.stream("nominal"),
                    )?;
                    let adv = pga_search(&cfg.pga, rho, &backend, &mut cell_tree.stream("pga"))?;
                    let inc = RiskEstimate {
                        value: adv.risk.value - nominal.value,
                        std_error: (adv.risk.std_error.powi(2) + nominal.std_error.powi(2)).sqrt(),
                        samples: adv.risk.samples,
                    };
                    (nominal, adv, inc)
                }
                _ => unreachable!("model prepared above"),
            };
            write_trace(&exp_dir, &cell_id, &adv.risk_trace)?;
            let record = ResultRecord {
                exp_id: "exp1".into(),
                rho,
                m: cfg.m,
                n: cfg.n,
                lambda: noise.lambda(),
                path: cfg.predictor_path.name().into(),
                seed: cfg.seed,
                nominal_risk: nominal.value,
                nominal_se: nominal.std_error,
                worst_risk: adv.risk.value,
                worst_se: adv.risk.std_error,
                adv_mu_norm: adv.q_adv.mean().norm(),
                adv_sigma: adv.q_adv.std(),
                pga_converged: adv.converged,
                wall_ms: 0,
            };
            record.validate()?;
            Ok(Exp1Cell {
                record,
                increment: increment.value,
                increment_se: increment.std_error,
            })
        })
    })?;

    let records: Vec<ResultRecord> = outcomes.iter().map(|(c, _)| c.record.clone()).collect();
    let timings: Vec<(String, u64)> = outcomes
        .iter()
        .map(|(c, ms)| (c.record.cell_id(), *ms))
        .collect();
    csv::write_results_csv(&exp_dir.join("results.csv"), &records)?;
    csv::write_timings_csv(&exp_dir.join("timings.csv"), &timings)?;

    // Non-converged cells are recorded but excluded from the fit.
    let fit_points: Vec<FitPoint> = outcomes
        .iter()
        .filter(|(c, _)| c.record.pga_converged)
        .map(|(c, _)| FitPoint::with_se(c.record.rho, c.increment, c.increment_se))
        .collect();
    if fit_points.len() < 4 {
        return Err(Error::Numerical(format!(
            "exp1: only {} converged cells; cannot fit the risk curve",
            fit_points.len()
        )));
    }
    let fit = fit_risk_curve(&fit_points)?;
    write_fit_outputs(&exp_dir, "exp1", &fit)?;

    let bound_points: Vec<FitPoint> = outcomes
        .iter()
        .map(|(c, _)| FitPoint::with_se(c.record.rho, c.record.worst_risk, c.record.worst_se))
        .collect();
    let bound = fit_bound_form(&bound_points, d, cfg.m, cfg.n)?;
    std::fs::write(
        exp_dir.join("bound_form.toml"),
        toml::to_string_pretty(&bound).map_err(|e| Error::Config(e.to_string()))?,
    )?;

    let a = fit.coefficient("a").unwrap_or(0.0);
    let b = fit.coefficient("b").unwrap_or(0.0);
    svg::write_svg(
        &exp_dir.join("exp1.svg"),
        &svg::Plot {
            title: format!("Worst-case risk increment vs radius (R²={:.4})", fit.r_squared),
            x_label: "rho".into(),
            y_label: "risk increment".into(),
            series: vec![
                svg::Series {
                    label: "measured".into(),
                    points: fit_points.iter().map(|p| (p.x, p.y)).collect(),
                    line: false,
                    color: "#1f77b4",
                },
                svg::Series {
                    label: format!("fit {a:.3}ρ + {b:.3}ρ²"),
                    points: (0..=80)
                        .map(|i| {
                            let r = 2.0 * i as f64 / 80.0;
                            (r, a * r + b * r * r)
                        })
                        .collect(),
                    line: true,
                    color: "#d62728",
                },
            ],
        },
    )?;

    Ok(Exp1Outcome { records, fit, bound })
}

// ---------------------------------------------------------------------------
// exp2

/// One capacity cell of the safe-radius experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoMaxCell {
    pub m: usize,
    pub rho_max: f64,
    /// False when the increment never exceeded ε on the search interval.
    pub binding: bool,
    /// Cell was skipped (training diverged); carries the reason.
    pub skipped: Option<String>,
    pub record: Option<ResultRecord>,
    pub train: Option<TrainSummary>,
}

#[derive(Debug, Clone)]
pub struct Exp2Outcome {
    pub cells: Vec<RhoMaxCell>,
    pub records: Vec<ResultRecord>,
    /// Through-origin fit of ρ_max against √m (the reported fit).
    pub fit_origin: Option<ScalingFitReport>,
    /// Free-intercept diagnostic fit.
    pub fit_free: Option<ScalingFitReport>,
}

/// Safe-radius experiment: per capacity, binary-search the largest radius
/// whose worst-case increment stays at or below ε.
pub fn run_exp2(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Exp2Outcome> {
    cfg.validate()?;
    let exp_dir = out_dir.join("exp2");
    let e2 = &cfg.exp2;
    let d = e2.d;
    let tree = StreamTree::new(cfg.seed).child("exp2");

    // Ridge-path designs are shared across capacities: the oracle has no m,
    // which is exactly what makes it the negative control.
    let designs = if cfg.predictor_path == PredictorPath::RidgeOracle {
        let mut rng = tree.stream("designs");
        Some(DesignBatch::generate(d, cfg.n, cfg.design_batch, &mut rng)?)
    } else {
        None
    };

    let outcomes = run_parallel(cfg.workers, &e2.m_grid, |_, &m| {
        let cell_id = format!(
            "exp2_m{m}_d{d}_N{}_eps{:.3}_{}",
            cfg.n,
            e2.epsilon,
            cfg.predictor_path.name()
        );
        let (cell, wall) = cached_cell(&exp_dir, &cell_id, || {
            compute_rho_max_cell(cfg, out_dir, &tree, m, designs.as_ref())
        })?;
        Ok((cell_id, cell, wall))
    })?;
    let timings: Vec<(String, u64)> = outcomes.iter().map(|(id, _, w)| (id.clone(), *w)).collect();
    let cells: Vec<RhoMaxCell> = outcomes.into_iter().map(|(_, c, _)| c).collect();

    let records: Vec<ResultRecord> = cells.iter().filter_map(|c| c.record.clone()).collect();
    csv::write_results_csv(&exp_dir.join("results.csv"), &records)?;
    csv::write_timings_csv(&exp_dir.join("timings.csv"), &timings)?;

    let points: Vec<FitPoint> = cells
        .iter()
        .filter(|c| c.skipped.is_none())
        .map(|c| FitPoint::new((c.m as f64).sqrt(), c.rho_max))
        .collect();
    let (fit_origin, fit_free) = if points.len() >= 2 {
        let origin = fit_line_through_origin(&points)?;
        let free = if points.len() >= 3 {
            Some(fit_line(&points)?)
        } else {
            None
        };
        write_fit_outputs(&exp_dir, "exp2", &origin)?;
        (Some(origin), free)
    } else {
        (None, None)
    };

    if let Some(fit) = &fit_origin {
        let k = fit.coefficient("slope").unwrap_or(0.0);
        svg::write_svg(
            &exp_dir.join("exp2.svg"),
            &svg::Plot {
                title: format!("Safe radius vs sqrt(capacity) (R²={:.4})", fit.r_squared),
                x_label: "sqrt(m)".into(),
                y_label: "rho_max".into(),
                series: vec![
                    svg::Series {
                        label: "measured".into(),
                        points: points.iter().map(|p| (p.x, p.y)).collect(),
                        line: false,
                        color: "#1f77b4",
                    },
                    svg::Series {
                        label: format!("fit {k:.3}·sqrt(m)"),
                        points: (0..=40)
                            .map(|i| {
                                let x = points.last().map(|p| p.x).unwrap_or(8.0) * i as f64 / 40.0;
                                (x, k * x)
                            })
                            .collect(),
                        line: true,
                        color: "#d62728",
                    },
                ],
            },
        )?;
    }

    Ok(Exp2Outcome {
        cells,
        records,
        fit_origin,
        fit_free,
    })
}

fn compute_rho_max_cell(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    tree: &StreamTree,
    m: usize,
    shared_designs: Option<&DesignBatch>,
) -> Result<RhoMaxCell> {
    let e2 = &cfg.exp2;
    let d = e2.d;
    let noise = cfg.noise;

    enum Pred {
        Ridge(SemiAnalyticRidge),
        Model(LinearAttentionModel, Option<TrainSummary>),
    }

    let pred = match cfg.predictor_path {
        PredictorPath::RidgeOracle => {
            let ridge = RidgePredictor::from_noise(&noise, d)?;
            Pred::Ridge(SemiAnalyticRidge::new(&ridge, &noise, shared_designs.expect("designs"))?)
        }
        PredictorPath::TrainedTransformer => {
            let train_cfg = TrainConfig {
                steps: e2.train_steps,
                patience_steps: e2.train_patience,
                val_every: e2.train_val_every,
                ..cfg.train.clone()
            };
            match obtain_model(cfg, d, m, cfg.n, &train_cfg, out_dir) {
                Ok((model, summary)) => Pred::Model(model, Some(summary)),
                Err(Error::TrainingDiverged { step, loss, initial, window }) => {
                    return Ok(RhoMaxCell {
                        m,
                        rho_max: f64::NAN,
                        binding: false,
                        skipped: Some(format!(
                            "training diverged at step {step} (loss {loss:.3e} vs initial {initial:.3e}, window {window})"
                        )),
                        record: None,
                        train: None,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    };

    // Cache of search outcomes per probed radius, so re-evaluations at a
    // higher sample boost reuse the found adversary, and the final record can
    // quote the adversary at ρ_max.
    let found: Mutex<HashMap<u64, AdversaryResult>> = Mutex::new(HashMap::new());
    let nominal: RiskEstimate = match &pred {
        Pred::Ridge(sar) => sar.risk(&GaussianTaskDistribution::standard(d))?,
        Pred::Model(model, _) => monte_carlo_risk(
            &GaussianTaskDistribution::standard(d),
            model,
            &noise,
            cfg.n,
            cfg.pga.risk_eval_samples,
            // Shared across capacities: common random numbers keep the
            // m-to-m comparison of increments tight.
            &mut tree.stream("eval-nominal"),
        )?,
    };

    let mut increment = |rho: f64, boost: u32| -> Result<RiskEstimate> {
        let key = rho.to_bits();
        let adv = {
            let cache = found.lock().unwrap();
            cache.get(&key).cloned()
        };
        let adv = match adv {
            Some(a) => a,
            None => {
                let backend = match &pred {
                    Pred::Ridge(sar) => RiskBackend::SemiAnalytic(sar),
                    Pred::Model(model, _) => RiskBackend::MonteCarlo {
                        predictor: model,
                        noise: &noise,
                        n: cfg.n,
                        d,
                    },
                };
                let mut rng = tree
                    .child(&format!("pga-m{m}"))
                    .indexed_stream("rho", key);
                let adv = pga_search(&cfg.pga, rho, &backend, &mut rng)?;
                found.lock().unwrap().insert(key, adv.clone());
                adv
            }
        };
        match &pred {
            Pred::Ridge(sar) => {
                sar.risk_difference(adv.q_adv.mean(), adv.q_adv.std(), &DVector::zeros(d), 1.0)
            }
            Pred::Model(model, _) => {
                // Evaluation stream keyed by (radius, boost) only: every
                // capacity sees the same draws at the same probe.
                let mut rng = tree
                    .child("eval")
                    .indexed_stream(&format!("rho-{key:016x}"), boost as u64);
                let worst = monte_carlo_risk(
                    &adv.q_adv,
                    model,
                    &noise,
                    cfg.n,
                    cfg.pga.risk_eval_samples * boost as usize,
                    &mut rng,
                )?;
                Ok(RiskEstimate {
                    value: worst.value - nominal.value,
                    std_error: (worst.std_error.powi(2) + nominal.std_error.powi(2)).sqrt(),
                    samples: worst.samples,
                })
            }
        }
    };

    let search = find_rho_max(e2.epsilon, e2.interval, e2.tol, &mut increment)?;

    let cache = found.into_inner().unwrap();
    let at_best = cache.get(&search.rho_max.to_bits());
    let record = at_best.map(|adv| ResultRecord {
        exp_id: "exp2".into(),
        rho: search.rho_max,
        m,
        n: cfg.n,
        lambda: noise.lambda(),
        path: cfg.predictor_path.name().into(),
        seed: cfg.seed,
        nominal_risk: nominal.value,
        nominal_se: nominal.std_error.max(f64::MIN_POSITIVE),
        worst_risk: adv.risk.value,
        worst_se: adv.risk.std_error,
        adv_mu_norm: adv.q_adv.mean().norm(),
        adv_sigma: adv.q_adv.std(),
        pga_converged: adv.converged,
        wall_ms: 0,
    });
    if let Some(r) = &record {
        r.validate()?;
    }

    let train_summary = match pred {
        Pred::Model(_, s) => s,
        Pred::Ridge(_) => None,
    };
    Ok(RhoMaxCell {
        m,
        rho_max: search.rho_max,
        binding: search.binding,
        skipped: None,
        record,
        train: train_summary,
    })
}

// ---------------------------------------------------------------------------
// exp3

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Exp3Cell {
    rho: f64,
    n_rho: usize,
    record: ResultRecord,
}

#[derive(Debug, Clone)]
pub struct Exp3Outcome {
    pub records: Vec<ResultRecord>,
    /// `(ρ, N_ρ)` per grid point.
    pub sample_sizes: Vec<(f64, usize)>,
    pub n0: usize,
    /// Fit of `N_ρ − N₀` against `ρ²`.
    pub fit: ScalingFitReport,
}

/// Sample-complexity experiment: smallest `N` whose worst-case risk returns
/// to the `N₀` nominal level, per radius.
pub fn run_exp3(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Exp3Outcome> {
    cfg.validate()?;
    let e3 = &cfg.exp3;
    for &r in &e3.rho_grid {
        if !(0.0..=1.5).contains(&r) {
            return Err(Error::Config(format!("exp3 radius {r} outside [0, 1.5]")));
        }
    }
    let exp_dir = out_dir.join("exp3");
    let d = cfg.d;
    let noise = cfg.noise;
    let tree = StreamTree::new(cfg.seed).child("exp3");
    let ridge = RidgePredictor::from_noise(&noise, d)?;

    // One design batch per context length, for the ridge path's adversary
    // search surface.
    let surface_for = |n: usize| -> Result<SemiAnalyticRidge> {
        let mut rng = tree.indexed_stream("designs", n as u64);
        let designs = DesignBatch::generate(d, n, cfg.design_batch, &mut rng)?;
        SemiAnalyticRidge::new(&ridge, &noise, &designs)
    };

    // Decisions in this experiment compare Monte Carlo estimates at the
    // final sample budget, with one standard error of slack: the target and
    // every probed worst-case risk use the same estimator so the comparison
    // is apples to apples.
    let mc_risk = |q: &GaussianTaskDistribution,
                   pred: &dyn crate::risk::IclPredictor,
                   nz: &NoiseConfig,
                   n: usize,
                   rng: &mut rand_chacha::ChaCha12Rng|
     -> Result<RiskEstimate> {
        monte_carlo_risk(q, pred, nz, n, cfg.pga.risk_eval_samples, rng)
    };
    // The evaluation stream is keyed by the context length alone (not by the
    // radius cell), so probes at different radii share draws and the ρ = 0
    // probe of N₀ reproduces the target bit-for-bit: N_ρ(0) = N₀ holds by
    // construction.
    let eval_stream = |n: usize| tree.indexed_stream("risk-eval", n as u64);
    let target = mc_risk(
        &GaussianTaskDistribution::standard(d),
        &ridge,
        &noise,
        e3.n0,
        &mut eval_stream(e3.n0),
    )?;

    let model_for = |n: usize| -> Result<LinearAttentionModel> {
        Ok(obtain_model(cfg, d, cfg.m, n, &cfg.train, out_dir)?.0)
    };

    let cells = run_parallel(cfg.workers, &e3.rho_grid, |i, &rho| {
        let cell_tree = tree.indexed_child("cell", i as u64);
        let cell_id = format!(
            "exp3_rho{:.4}_m{}_N0{}_lam{:.4}_{}",
            rho,
            cfg.m,
            e3.n0,
            noise.lambda(),
            cfg.predictor_path.name()
        );
        let (cell, wall) = cached_cell(&exp_dir, &cell_id, || {
            let mut last: Option<AdversaryResult> = None;
            let mut worst = |n: usize| -> Result<RiskEstimate> {
                // The search runs on the fast surface; the reported and
                // compared value is the Monte Carlo estimate of the found
                // adversary at the final sample budget.
                let adv = match cfg.predictor_path {
                    PredictorPath::RidgeOracle => {
                        let sar = surface_for(n)?;
                        let backend = RiskBackend::SemiAnalytic(&sar);
                        let mut rng = cell_tree.indexed_stream("pga", n as u64);
                        pga_search(&cfg.pga, rho, &backend, &mut rng)?
                    }
                    PredictorPath::TrainedTransformer => {
                        let model = model_for(n)?;
                        let backend = RiskBackend::MonteCarlo {
                            predictor: &model,
                            noise: &noise,
                            n,
                            d,
                        };
                        let mut rng = cell_tree.indexed_stream("pga", n as u64);
                        pga_search(&cfg.pga, rho, &backend, &mut rng)?
                    }
                };
                let est = match cfg.predictor_path {
                    PredictorPath::RidgeOracle => {
                        mc_risk(&adv.q_adv, &ridge, &noise, n, &mut eval_stream(n))?
                    }
                    PredictorPath::TrainedTransformer => adv.risk,
                };
                last = Some(adv);
                Ok(est)
            };
            let res = find_sample_tax(&target, e3.n0, e3.n_max, &mut worst)?;
            let n_rho = res.n_rho;
            let worst_at = res.curve.last().map(|(_, e)| *e).expect("nonempty curve");

            // Nominal at the found cell, with the same estimator.
            let nominal = match cfg.predictor_path {
                PredictorPath::RidgeOracle => mc_risk(
                    &GaussianTaskDistribution::standard(d),
                    &ridge,
                    &noise,
                    n_rho,
                    &mut cell_tree.stream("nominal"),
                )?,
                PredictorPath::TrainedTransformer => monte_carlo_risk(
                    &GaussianTaskDistribution::standard(d),
                    &model_for(n_rho)?,
                    &noise,
                    n_rho,
                    cfg.pga.risk_eval_samples,
                    &mut cell_tree.stream("nominal"),
                )?,
            };
            let (mu_norm, sigma, converged) = match &last {
                Some(adv) => (adv.q_adv.mean().norm(), adv.q_adv.std(), adv.converged),
                None => (f64::NAN, f64::NAN, false),
            };

            let record = ResultRecord {
                exp_id: "exp3".into(),
                rho,
                m: cfg.m,
                n: n_rho,
                lambda: noise.lambda(),
                path: cfg.predictor_path.name().into(),
                seed: cfg.seed,
                nominal_risk: nominal.value,
                nominal_se: nominal.std_error,
                worst_risk: worst_at.value,
                worst_se: worst_at.std_error,
                adv_mu_norm: mu_norm,
                adv_sigma: sigma,
                pga_converged: converged,
                wall_ms: 0,
            };
            record.validate()?;
            Ok(Exp3Cell {
                rho,
                n_rho,
                record,
            })
        })?;
        Ok((cell_id, cell, wall))
    })?;
    let timings: Vec<(String, u64)> = cells.iter().map(|(id, _, w)| (id.clone(), *w)).collect();
    let cells: Vec<Exp3Cell> = cells.into_iter().map(|(_, c, _)| c).collect();

    let records: Vec<ResultRecord> = cells.iter().map(|c| c.record.clone()).collect();
    csv::write_results_csv(&exp_dir.join("results.csv"), &records)?;
    csv::write_timings_csv(&exp_dir.join("timings.csv"), &timings)?;

    let points: Vec<FitPoint> = cells
        .iter()
        .map(|c| FitPoint::new(c.rho * c.rho, (c.n_rho - e3.n0.min(c.n_rho)) as f64))
        .collect();
    let fit = fit_line(&points)?;
    write_fit_outputs(&exp_dir, "exp3", &fit)?;

    let slope = fit.coefficient("slope").unwrap_or(0.0);
    let intercept = fit.coefficient("intercept").unwrap_or(0.0);
    svg::write_svg(
        &exp_dir.join("exp3.svg"),
        &svg::Plot {
            title: format!("Extra context examples vs squared radius (R²={:.4})", fit.r_squared),
            x_label: "rho^2".into(),
            y_label: "N_rho - N_0".into(),
            series: vec![
                svg::Series {
                    label: "measured".into(),
                    points: points.iter().map(|p| (p.x, p.y)).collect(),
                    line: false,
                    color: "#1f77b4",
                },
                svg::Series {
                    label: format!("fit {intercept:.2} + {slope:.2}·ρ²"),
                    points: (0..=40)
                        .map(|i| {
                            let x = 2.25 * i as f64 / 40.0;
                            (x, intercept + slope * x)
                        })
                        .collect(),
                    line: true,
                    color: "#d62728",
                },
            ],
        },
    )?;

    Ok(Exp3Outcome {
        records,
        sample_sizes: cells.iter().map(|c| (c.rho, c.n_rho)).collect(),
        n0: e3.n0,
        fit,
    })
}

// ---------------------------------------------------------------------------
// λ sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub nominal: f64,
    pub worst: f64,
    pub relative_increase: f64,
    /// Noise-amplification factor `mean Tr(A XᵀX A)` of the estimator
    /// (ridge path only): strictly decreasing in λ.
    pub noise_amplification: Option<f64>,
    pub record: ResultRecord,
}

#[derive(Debug, Clone)]
pub struct LambdaSweepOutcome {
    pub rows: Vec<LambdaRow>,
    /// Relative worst-case increase nonincreasing across the λ grid.
    pub nonincreasing: bool,
    /// ... and strictly decreasing.
    pub strictly_decreasing: bool,
    pub records: Vec<ResultRecord>,
}

/// Regularization sweep at fixed `(m, N, ρ)`: vary σ² (hence `λ_N`), measure
/// nominal and worst-case risk, and check that the relative worst-case
/// increase shrinks as the regularizer grows.
pub fn run_lambda_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<LambdaSweepOutcome> {
    cfg.validate()?;
    let sweep = &cfg.lambda_sweep;
    let exp_dir = out_dir.join("lambda_sweep");
    let d = cfg.d;
    let tree = StreamTree::new(cfg.seed).child("lambda-sweep");

    // Same designs across λ: the comparison is paired on the design batch.
    let mut design_rng = tree.stream("designs");
    let designs = DesignBatch::generate(d, cfg.n, cfg.design_batch, &mut design_rng)?;

    let rows = run_parallel(cfg.workers, &sweep.lambda_grid, |i, &lambda| {
        let noise = NoiseConfig::new(lambda * cfg.noise.sigma_beta_sq, cfg.noise.sigma_beta_sq)?;
        let cell_tree = tree.indexed_child("cell", i as u64);
        let cell_id = format!(
            "lambda_rho{:.4}_m{}_N{}_lam{:.4}_{}",
            sweep.rho,
            cfg.m,
            cfg.n,
            lambda,
            cfg.predictor_path.name()
        );
        let (row, wall) = cached_cell(&exp_dir, &cell_id, || {
            let (nominal, worst, mu_norm, sigma, converged, amp) = match cfg.predictor_path {
                PredictorPath::RidgeOracle => {
                    let ridge = RidgePredictor::from_noise(&noise, d)?;
                    let sar = SemiAnalyticRidge::new(&ridge, &noise, &designs)?;
                    let nominal = sar.risk(&GaussianTaskDistribution::standard(d))?;
                    let backend = RiskBackend::SemiAnalytic(&sar);
                    let adv = pga_search(&cfg.pga, sweep.rho, &backend, &mut cell_tree.stream("pga"))?;
                    (
                        nominal,
                        adv.risk,
                        adv.q_adv.mean().norm(),
                        adv.q_adv.std(),
                        adv.converged,
                        Some(sar.noise_amplification()),
                    )
                }
                PredictorPath::TrainedTransformer => {
                    let (model, _) = obtain_model(cfg, d, cfg.m, cfg.n, &cfg.train, out_dir)?;
                    let nominal = monte_carlo_risk(
                        &GaussianTaskDistribution::standard(d),
                        &model,
                        &noise,
                        cfg.n,
                        cfg.pga.risk_eval_samples,
                        &mut cell_tree.stream("nominal"),
                    )?;
                    let backend = RiskBackend::MonteCarlo {
                        predictor: &model,
                        noise: &noise,
                        n: cfg.n,
                        d,
                    };
                    let adv = pga_search(&cfg.pga, sweep.rho, &backend, &mut cell_tree.stream("pga"))?;
                    (
                        nominal,
                        adv.risk,
                        adv.q_adv.mean().norm(),
                        adv.q_adv.std(),
                        adv.converged,
                        None,
                    )
                }
            };

            let record = ResultRecord {
                exp_id: "lambda_sweep".into(),
                rho: sweep.rho,
                m: cfg.m,
                n: cfg.n,
                lambda,
                path: cfg.predictor_path.name().into(),
                seed: cfg.seed,
                nominal_risk: nominal.value,
                nominal_se: nominal.std_error,
                worst_risk: worst.value,
                worst_se: worst.std_error,
                adv_mu_norm: mu_norm,
                adv_sigma: sigma,
                pga_converged: converged,
                wall_ms: 0,
            };
            record.validate()?;
            Ok(LambdaRow {
                lambda,
                nominal: nominal.value,
                worst: worst.value,
                relative_increase: (worst.value - nominal.value) / nominal.value,
                noise_amplification: amp,
                record,
            })
        })?;
        Ok((cell_id, row, wall))
    })?;
    let timings: Vec<(String, u64)> = rows.iter().map(|(id, _, w)| (id.clone(), *w)).collect();
    let rows: Vec<LambdaRow> = rows.into_iter().map(|(_, r, _)| r).collect();

    let records: Vec<ResultRecord> = rows.iter().map(|r| r.record.clone()).collect();
    csv::write_results_csv(&exp_dir.join("results.csv"), &records)?;
    csv::write_timings_csv(&exp_dir.join("timings.csv"), &timings)?;

    let rel: Vec<f64> = rows.iter().map(|r| r.relative_increase).collect();
    let nonincreasing = rel.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let strictly_decreasing = rel.windows(2).all(|w| w[1] < w[0]);

    let mut summary = String::from("lambda,nominal,worst,relative_increase,noise_amplification\n");
    for r in &rows {
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            super::format_sig9(r.lambda),
            super::format_sig9(r.nominal),
            super::format_sig9(r.worst),
            super::format_sig9(r.relative_increase),
            r.noise_amplification.map(super::format_sig9).unwrap_or_default()
        ));
    }
    summary.push_str(&format!(
        "# relative increase nonincreasing across the grid: {nonincreasing}\n"
    ));
    std::fs::create_dir_all(&exp_dir)?;
    std::fs::write(exp_dir.join("summary.csv"), summary)?;

    Ok(LambdaSweepOutcome {
        rows,
        nonincreasing,
        strictly_decreasing,
        records,
    })
}

/// Location of an experiment's primary CSV under an output directory.
pub fn results_csv_path(out_dir: &Path, exp_id: &str) -> PathBuf {
    out_dir.join(exp_id).join("results.csv")
}
