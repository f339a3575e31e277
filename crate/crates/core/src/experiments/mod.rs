//! Experiment harness: configuration, result records, runners, and outputs.
//!
//! Each experiment is a grid of independent cells. A cell's random streams
//! derive from `(master seed, experiment id, cell index)`, results are merged
//! in deterministic cell order, and finished cells persist to per-cell files
//! so interrupted grids resume without recomputation. The primary artifact is
//! a CSV of [`ResultRecord`]s whose bytes depend only on the configuration
//! and the seed; wall-clock timings go to a separate `timings.csv` sidecar so
//! the primary CSV stays reproducible.

mod csv;
mod runners;
mod svg;
mod verify;

pub use csv::{parse_results_csv, record_csv_header, write_results_csv, write_timings_csv};
pub use runners::{
    results_csv_path,
    obtain_model, run_exp1, run_exp2, run_exp3, run_lambda_sweep, Exp1Outcome, Exp2Outcome,
    Exp3Outcome, LambdaRow, LambdaSweepOutcome, RhoMaxCell,
};
pub use svg::{write_svg, Plot, Series};
pub use verify::{run_verify, CheckResult, VerifyReport};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::PgaConfig;
use crate::attention::TrainConfig;
use crate::error::{Error, Result};
use crate::task::NoiseConfig;

/// Which predictor the experiments attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorPath {
    #[serde(rename = "ridge-oracle")]
    RidgeOracle,
    #[serde(rename = "trained-transformer")]
    TrainedTransformer,
}

impl PredictorPath {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorPath::RidgeOracle => "ridge-oracle",
            PredictorPath::TrainedTransformer => "trained-transformer",
        }
    }
}

/// Risk-curve experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp1Config {
    pub rho_grid: Vec<f64>,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config {
            rho_grid: (0..9).map(|i| 0.25 * i as f64).collect(),
        }
    }
}

/// Safe-radius experiment grid. Defaults are the scaled-down desk
/// configuration; `--paper-scale` restores the full grid.
///
/// The capacity comparison needs every model at its training plateau —
/// under-trained models carry spurious sensitivity that scrambles the
/// ordering — so the step budget here is a cap with early stopping doing the
/// actual termination (models stop between roughly 6k and 19k steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp2Config {
    pub d: usize,
    pub m_grid: Vec<usize>,
    pub train_steps: usize,
    pub train_patience: usize,
    pub train_val_every: usize,
    pub epsilon: f64,
    pub interval: (f64, f64),
    pub tol: f64,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            d: 10,
            m_grid: vec![4, 8, 16, 32],
            train_steps: 20_000,
            train_patience: 4_000,
            train_val_every: 100,
            epsilon: 0.5,
            interval: (0.0, 2.0),
            tol: 0.02,
        }
    }
}

/// Sample-complexity experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp3Config {
    pub rho_grid: Vec<f64>,
    pub n0: usize,
    pub n_max: usize,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Exp3Config {
            rho_grid: vec![0.0, 0.5, 1.0, 1.5],
            n0: 5,
            n_max: 40,
        }
    }
}

/// Regularization sweep. `λ_N = σ²/σ_β²` is a derived quantity, so the sweep
/// varies the observation noise σ² with the prior variance pinned at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaSweepConfig {
    pub lambda_grid: Vec<f64>,
    pub rho: f64,
}

impl Default for LambdaSweepConfig {
    fn default() -> Self {
        LambdaSweepConfig {
            lambda_grid: vec![0.05, 0.1, 0.2, 0.4],
            rho: 0.8,
        }
    }
}

/// Verification-suite knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Allowed relative excess of the trained validation MSE over the
    /// class-optimal level in the trainer-convergence check.
    pub convergence_rel_tol: f64,
    /// Training budget for the model the suite trains (or loads); early
    /// stopping terminates well before the cap once the plateau is reached.
    pub train_steps: usize,
    pub train_patience: usize,
    pub train_val_every: usize,
    pub d: usize,
    pub m: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            convergence_rel_tol: 0.10,
            train_steps: 20_000,
            train_patience: 4_000,
            train_val_every: 100,
            d: 10,
            m: 16,
        }
    }
}

/// Full experiment configuration; mirrors the TOML config file. Unknown keys
/// in the file are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Task dimension for exp1, exp3, and the λ sweep.
    pub d: usize,
    /// Context length for exp1, exp2, and the λ sweep.
    pub n: usize,
    /// Model capacity recorded for ridge-path cells and used when the
    /// transformer path needs a model outside exp2.
    pub m: usize,
    pub seed: u64,
    pub workers: usize,
    pub design_batch: usize,
    pub predictor_path: PredictorPath,
    pub noise: NoiseConfig,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub exp3: Exp3Config,
    pub lambda_sweep: LambdaSweepConfig,
    pub verify: VerifyConfig,
    pub pga: PgaConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 20,
            n: 15,
            m: 16,
            seed: 42,
            workers: 0,
            design_batch: crate::risk::DesignBatch::DEFAULT_SIZE,
            predictor_path: PredictorPath::RidgeOracle,
            noise: NoiseConfig {
                sigma_sq: 0.1,
                sigma_beta_sq: 1.0,
            },
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            exp3: Exp3Config::default(),
            lambda_sweep: LambdaSweepConfig::default(),
            verify: VerifyConfig::default(),
            pga: PgaConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::Config("d, n, m must be positive".into()));
        }
        if self.design_batch == 0 {
            return Err(Error::Config("design_batch must be positive".into()));
        }
        for (name, empty) in [
            ("exp1.rho_grid", self.exp1.rho_grid.is_empty()),
            ("exp2.m_grid", self.exp2.m_grid.is_empty()),
            ("exp3.rho_grid", self.exp3.rho_grid.is_empty()),
            ("lambda_sweep.lambda_grid", self.lambda_sweep.lambda_grid.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        self.pga.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Restore the full-scale grids: exp2 at `d = 20`, capacities up to 64,
    /// and the full 5000-step training budget.
    pub fn apply_paper_scale(&mut self) {
        self.exp2.d = 20;
        self.exp2.m_grid = vec![4, 8, 16, 32, 64];
        self.exp2.train_steps = 5_000;
        self.exp2.train_patience = 500;
        self.exp2.train_val_every = 50;
        self.train.steps = 5_000;
    }

    /// Checkpoint path for the `(m, N)` model cell under `out_dir`.
    pub fn checkpoint_path(&self, out_dir: &Path, d: usize, m: usize, n: usize) -> PathBuf {
        out_dir
            .join("checkpoints")
            .join(format!("model_d{d}_m{m}_N{n}_seed{}.ckpt", self.seed))
    }
}

/// One grid cell's results. `wall_ms` is kept out of the primary CSV (it goes
/// to the timings sidecar) so two equal-seed runs emit identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub exp_id: String,
    pub rho: f64,
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    pub path: String,
    pub seed: u64,
    pub nominal_risk: f64,
    pub nominal_se: f64,
    pub worst_risk: f64,
    pub worst_se: f64,
    pub adv_mu_norm: f64,
    pub adv_sigma: f64,
    pub pga_converged: bool,
    pub wall_ms: u64,
}

impl ResultRecord {
    /// Structural invariants: positive uncertainties and a worst-case value
    /// that cannot sit materially below the nominal.
    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_se >= 0.0) || !(self.worst_se >= 0.0) {
            return Err(Error::Numerical(format!(
                "negative standard error in cell {}",
                self.cell_id()
            )));
        }
        let slack = 2.0 * (self.nominal_se + self.worst_se) + 1e-12;
        if self.worst_risk < self.nominal_risk - slack {
            return Err(Error::Numerical(format!(
                "worst-case risk {} below nominal {} beyond tolerance in cell {}",
                self.worst_risk,
                self.nominal_risk,
                self.cell_id()
            )));
        }
        Ok(())
    }

    /// Filename-safe unique identifier of the cell within its experiment.
    pub fn cell_id(&self) -> String {
        format!(
            "{}_rho{:.4}_m{}_N{}_lam{:.4}_{}",
            self.exp_id, self.rho, self.m, self.n, self.lambda, self.path
        )
    }
}

/// Fixed-notation decimal with nine significant digits (no exponent),
/// the float format of every results CSV.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 9);

    let point = exp + 1; // digit count left of the decimal point
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        for _ in 0..(-point) {
            out.push('0');
        }
        out.push_str(&digits);
    } else if point as usize >= digits.len() {
        out.push_str(&digits);
        for _ in 0..(point as usize - digits.len()) {
            out.push('0');
        }
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    out
}
