//! Command-line driver for the robust ICL experiments.
//!
//! Subcommands: `train`, `attack`, `exp1`, `exp2`, `exp3`, `lambda-sweep`,
//! `verify`. Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robust_icl::adversary::{pga_search, RiskBackend, TraceRow};
use robust_icl::experiments::{
    results_csv_path, run_exp1, run_exp2, run_exp3, run_lambda_sweep, run_verify,
    ExperimentConfig, PredictorPath,
};
use robust_icl::{
    load_checkpoint, DesignBatch, Error, GaussianTaskDistribution, RidgePredictor,
    SemiAnalyticRidge, StreamTree,
};

#[derive(Parser)]
#[command(
    name = "robust-icl",
    about = "Distributionally robust in-context learning experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file (defaults apply when omitted; unknown keys
    /// are rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Worker threads for grid cells (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Use the full-scale grids (exp2 at d = 20, m up to 64, 5000 training
    /// steps) instead of the desk-scale defaults.
    #[arg(long, global = true)]
    paper_scale: bool,

    /// Predictor the experiments attack (overrides the config):
    /// "ridge-oracle" or "trained-transformer".
    #[arg(long, global = true, value_parser = parse_path)]
    path: Option<PredictorPath>,
}

fn parse_path(s: &str) -> Result<PredictorPath, String> {
    match s {
        "ridge-oracle" | "ridge" => Ok(PredictorPath::RidgeOracle),
        "trained-transformer" | "transformer" => Ok(PredictorPath::TrainedTransformer),
        other => Err(format!(
            "unknown predictor path `{other}` (expected ridge-oracle or trained-transformer)"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one linear-attention model cell and write its checkpoint.
    Train {
        /// Task dimension (defaults to the config's exp2 dimension).
        #[arg(long)]
        d: Option<usize>,
        /// Total attention capacity m (must be a multiple of the head count).
        #[arg(long)]
        m: Option<usize>,
        /// Context length N.
        #[arg(long)]
        n: Option<usize>,
        /// Training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the worst-case distribution search at one radius and dump the
    /// per-iteration trace.
    Attack {
        /// Wasserstein-2 radius of the adversary's ball.
        #[arg(long)]
        rho: f64,
        /// Checkpoint to attack (transformer path); omit for the ridge path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Risk growth with the adversarial radius.
    Exp1,
    /// Safe radius versus model capacity.
    Exp2,
    /// Adversarial sample complexity.
    Exp3,
    /// Regularization-strength sweep.
    LambdaSweep,
    /// Run the verification suite and print the pass/fail table.
    Verify,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_toml_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
    if common.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(path) = common.path {
        cfg.predictor_path = path;
    }
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::Io(_) => 1,
        Error::VerificationFailed { .. } => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;

    match cli.command {
        Command::Train { d, m, n, steps } => {
            let d = d.unwrap_or(cfg.exp2.d);
            let m = m.unwrap_or(cfg.m);
            let n = n.unwrap_or(cfg.n);
            let mut train_cfg = cfg.train.clone();
            if let Some(steps) = steps {
                train_cfg.steps = steps;
            }
            let (_model, summary) =
                robust_icl::experiments::obtain_model(&cfg, d, m, n, &train_cfg, out)?;
            let path = cfg.checkpoint_path(out, d, m, n);
            if summary.trained_now {
                println!("trained model d={d} m={m} N={n} -> {}", path.display());
            } else {
                println!("checkpoint already present: {}", path.display());
            }
            if let (Some(val), Some(ridge), Some(opt)) =
                (summary.val_mse, summary.ridge_val_mse, summary.class_optimal_mse)
            {
                println!(
                    "validation MSE {val:.6} (class optimum {opt:.6}, ridge oracle {ridge:.6})"
                );
            }
        }
        Command::Attack { rho, checkpoint } => {
            let d = cfg.d;
            let n = cfg.n;
            let noise = cfg.noise;
            let tree = StreamTree::new(cfg.seed).child("attack");
            let result = match &checkpoint {
                None => {
                    let ridge = RidgePredictor::from_noise(&noise, d)?;
                    let mut rng = tree.stream("designs");
                    let designs = DesignBatch::generate(d, n, cfg.design_batch, &mut rng)?;
                    let sar = SemiAnalyticRidge::new(&ridge, &noise, &designs)?;
                    let nominal = sar.risk(&GaussianTaskDistribution::standard(d))?;
                    println!("ridge path: nominal risk {:.6} ± {:.6}", nominal.value, nominal.std_error);
                    pga_search(&cfg.pga, rho, &RiskBackend::SemiAnalytic(&sar), &mut tree.stream("pga"))?
                }
                Some(path) => {
                    let (model, header) = load_checkpoint(path)?;
                    println!(
                        "attacking checkpoint {} (d={}, m={}, N={})",
                        path.display(),
                        header.d,
                        model.total_capacity(),
                        header.n
                    );
                    let backend = RiskBackend::MonteCarlo {
                        predictor: &model,
                        noise: &noise,
                        n: header.n as usize,
                        d: header.d as usize,
                    };
                    pga_search(&cfg.pga, rho, &backend, &mut tree.stream("pga"))?
                }
            };

            let trace_dir = out.join("attack");
            std::fs::create_dir_all(&trace_dir)?;
            let trace_path = trace_dir.join(format!("trace_rho{rho:.4}.csv"));
            let mut text = String::from(TraceRow::CSV_HEADER);
            text.push('\n');
            for row in &result.risk_trace {
                text.push_str(&row.to_csv_row());
                text.push('\n');
            }
            std::fs::write(&trace_path, text)?;

            println!(
                "worst-case risk {:.6} ± {:.6} at ‖μ‖ = {:.4}, σ = {:.4} (W2 = {:.4}, converged: {})",
                result.risk.value,
                result.risk.std_error,
                result.q_adv.mean().norm(),
                result.q_adv.std(),
                result.final_w2,
                result.converged
            );
            println!("trace written to {}", trace_path.display());
        }
        Command::Exp1 => {
            let outcome = run_exp1(&cfg, out)?;
            let a = outcome.fit.coefficient("a").unwrap_or(f64::NAN);
            let b = outcome.fit.coefficient("b").unwrap_or(f64::NAN);
            println!(
                "exp1: {} cells, fit Δrisk = {a:.4}·ρ + {b:.4}·ρ² (R² = {:.4})",
                outcome.records.len(),
                outcome.fit.r_squared
            );
            println!(
                "bound form: nominal {:.4}, C1 = {:.4}, C2 = {:.4}",
                outcome.bound.nominal_risk, outcome.bound.c1, outcome.bound.c2
            );
            println!("results: {}", results_csv_path(out, "exp1").display());
        }
        Command::Exp2 => {
            // The capacity experiment attacks trained models unless a path
            // was requested explicitly (the ridge run is the negative
            // control).
            let mut cfg = cfg;
            if cli.common.path.is_none() && cli.common.config.is_none() {
                cfg.predictor_path = PredictorPath::TrainedTransformer;
            }
            let outcome = run_exp2(&cfg, out)?;
            for cell in &outcome.cells {
                match &cell.skipped {
                    Some(reason) => println!("m = {:>3}: skipped ({reason})", cell.m),
                    None => println!(
                        "m = {:>3}: ρ_max = {:.4}{}",
                        cell.m,
                        cell.rho_max,
                        if cell.binding { "" } else { " (not binding)" }
                    ),
                }
            }
            match &outcome.fit_origin {
                Some(fit) => println!(
                    "fit ρ_max = {:.4}·√m through the origin (R² = {:.4})",
                    fit.coefficient("slope").unwrap_or(f64::NAN),
                    fit.r_squared
                ),
                None => println!("fit rejected: need at least two usable capacity cells"),
            }
            println!("results: {}", results_csv_path(out, "exp2").display());
        }
        Command::Exp3 => {
            let outcome = run_exp3(&cfg, out)?;
            for (rho, n_rho) in &outcome.sample_sizes {
                println!("ρ = {rho:.2}: N_ρ = {n_rho}");
            }
            println!(
                "fit N_ρ − N₀ = {:.4} + {:.4}·ρ² (R² = {:.4})",
                outcome.fit.coefficient("intercept").unwrap_or(f64::NAN),
                outcome.fit.coefficient("slope").unwrap_or(f64::NAN),
                outcome.fit.r_squared
            );
            println!("results: {}", results_csv_path(out, "exp3").display());
        }
        Command::LambdaSweep => {
            let outcome = run_lambda_sweep(&cfg, out)?;
            println!("lambda,nominal,worst,relative_increase");
            for row in &outcome.rows {
                println!(
                    "{:.2},{:.6},{:.6},{:.6}",
                    row.lambda, row.nominal, row.worst, row.relative_increase
                );
            }
            println!(
                "relative increase nonincreasing in λ: {} (strictly decreasing: {})",
                outcome.nonincreasing, outcome.strictly_decreasing
            );
            println!("results: {}", results_csv_path(out, "lambda_sweep").display());
        }
        Command::Verify => {
            let report = run_verify(&cfg, out)?;
            print!("{}", report.render());
            if !report.all_passed() {
                return Err(Error::VerificationFailed {
                    failed: report.failed_count(),
                    total: report.checks.len(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; anything else
            // is a usage error.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
