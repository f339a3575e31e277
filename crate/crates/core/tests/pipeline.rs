//! End-to-end harness behavior: resume safety, degenerate grids, config
//! handling, bound validity on measured data, and trace emission.

use robust_icl::adversary::{pga_search, PgaConfig, RiskBackend};
use robust_icl::experiments::{
    parse_results_csv, run_exp1, run_exp2, run_exp3, run_lambda_sweep, ExperimentConfig,
    PredictorPath,
};
use robust_icl::ridge::{RidgePredictor, SemiAnalyticRidge};
use robust_icl::risk::DesignBatch;
use robust_icl::{Error, NoiseConfig, StreamTree};

fn quick_cfg() -> ExperimentConfig {
    // Small, fast grid for harness-behavior tests (not the acceptance grids).
    let mut cfg = ExperimentConfig::default();
    cfg.d = 8;
    cfg.n = 10;
    cfg.exp1.rho_grid = vec![0.0, 0.3, 0.6, 0.9, 1.2, 1.5];
    cfg.design_batch = 24;
    cfg
}

#[test]
fn exp1_resumes_to_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg();
    run_exp1(&cfg, dir.path()).unwrap();
    let csv_path = dir.path().join("exp1").join("results.csv");
    let first = std::fs::read(&csv_path).unwrap();

    // Simulate an interrupted grid: drop the merged artifacts and some cells.
    std::fs::remove_file(&csv_path).unwrap();
    let cells_dir = dir.path().join("exp1").join("cells");
    let mut cells: Vec<_> = std::fs::read_dir(&cells_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    cells.sort();
    for path in cells.iter().step_by(2) {
        std::fs::remove_file(path).unwrap();
    }

    run_exp1(&cfg, dir.path()).unwrap();
    let second = std::fs::read(&csv_path).unwrap();
    assert_eq!(first, second, "resumed grid must reproduce the same CSV bytes");
}

#[test]
fn exp1_rejects_degenerate_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg();
    cfg.exp1.rho_grid = vec![0.0];
    match run_exp1(&cfg, dir.path()) {
        Err(Error::Config(msg)) => {
            assert!(msg.contains("at least 6"), "message should explain the rejection: {msg}")
        }
        other => panic!("expected a config error, got {other:?}"),
    }

    let mut cfg = quick_cfg();
    cfg.exp1.rho_grid = vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
    assert!(run_exp1(&cfg, dir.path()).is_err(), "radii beyond 2.0 must be rejected");
}

#[test]
fn exp1_results_csv_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg();
    let outcome = run_exp1(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("exp1").join("results.csv")).unwrap();
    let parsed = parse_results_csv(&text).unwrap();
    assert_eq!(parsed.len(), outcome.records.len());
    for (a, b) in parsed.iter().zip(&outcome.records) {
        assert_eq!(a.exp_id, b.exp_id);
        assert_eq!(a.n, b.n);
        assert!((a.worst_risk - b.worst_risk).abs() <= 1e-7 * b.worst_risk.abs().max(1.0));
    }
}

#[test]
fn exp1_bound_form_dominates_measured_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg();
    let outcome = run_exp1(&cfg, dir.path()).unwrap();
    assert!(outcome.bound.nominal_risk.is_finite());
    assert!(outcome.bound.c1 >= 0.0 && outcome.bound.c2 >= 0.0);
    for rec in &outcome.records {
        let bound = outcome.bound.evaluate(rec.rho);
        assert!(
            bound >= rec.worst_risk - 2.0 * rec.worst_se.max(1e-9) - 1e-6 * rec.worst_risk,
            "bound {bound} below measured {} at ρ = {}",
            rec.worst_risk,
            rec.rho
        );
    }
}

#[test]
fn exp1_emits_traces_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg();
    run_exp1(&cfg, dir.path()).unwrap();
    let traces: Vec<_> = std::fs::read_dir(dir.path().join("exp1").join("traces"))
        .unwrap()
        .collect();
    assert_eq!(traces.len(), cfg.exp1.rho_grid.len());
    let svg = std::fs::read_to_string(dir.path().join("exp1").join("exp1.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<circle"), "plot must embed the data points");
    let timings = std::fs::read_to_string(dir.path().join("exp1").join("timings.csv")).unwrap();
    assert!(timings.starts_with("cell_id,wall_ms"));
}

#[test]
fn exp2_single_capacity_reports_raw_radius_without_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg();
    cfg.predictor_path = PredictorPath::RidgeOracle;
    cfg.exp2.d = 8;
    cfg.exp2.m_grid = vec![16];
    let outcome = run_exp2(&cfg, dir.path()).unwrap();
    assert!(outcome.fit_origin.is_none(), "single-m grid cannot be fit");
    assert_eq!(outcome.cells.len(), 1);
    assert!(outcome.cells[0].rho_max.is_finite());
}

#[test]
fn exp3_monotone_in_rho_on_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg();
    cfg.d = 12;
    cfg.exp3.rho_grid = vec![0.0, 0.75, 1.5];
    cfg.exp3.n0 = 4;
    cfg.exp3.n_max = 30;
    let outcome = run_exp3(&cfg, dir.path()).unwrap();
    let ns: Vec<usize> = outcome.sample_sizes.iter().map(|&(_, n)| n).collect();
    assert!(ns.windows(2).all(|w| w[1] >= w[0]), "N_ρ must be nondecreasing: {ns:?}");
    assert_eq!(ns[0], 4, "ρ = 0 must recover N₀");
}

#[test]
fn lambda_sweep_single_point_verdict_is_trivially_true() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg();
    cfg.lambda_sweep.lambda_grid = vec![0.1];
    let outcome = run_lambda_sweep(&cfg, dir.path()).unwrap();
    assert!(outcome.nonincreasing);
    assert_eq!(outcome.rows.len(), 1);
}

#[test]
fn lambda_sweep_noise_amplification_decreases() {
    // Variance-reduction check: the estimator's noise-amplification
    // factor Tr(A XᵀX A) is strictly decreasing in λ.
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg();
    let outcome = run_lambda_sweep(&cfg, dir.path()).unwrap();
    let amps: Vec<f64> = outcome
        .rows
        .iter()
        .map(|r| r.noise_amplification.expect("ridge path reports the factor"))
        .collect();
    assert!(
        amps.windows(2).all(|w| w[1] < w[0]),
        "noise amplification must fall as λ grows: {amps:?}"
    );
}

#[test]
fn attack_trace_rows_are_feasible_and_deterministic() {
    let d = 8;
    let noise = NoiseConfig::new(0.1, 1.0).unwrap();
    let pred = RidgePredictor::from_noise(&noise, d).unwrap();
    let tree = StreamTree::new(7);
    let designs = DesignBatch::generate(d, 12, 24, &mut tree.stream("designs")).unwrap();
    let sar = SemiAnalyticRidge::new(&pred, &noise, &designs).unwrap();
    let rho = 0.7;
    let run = || {
        pga_search(
            &PgaConfig {
                iterations: 50,
                ..PgaConfig::default()
            },
            rho,
            &RiskBackend::SemiAnalytic(&sar),
            &mut tree.stream("pga"),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.risk.value, b.risk.value, "PGA must be deterministic under a fixed stream");
    assert_eq!(a.risk_trace.len(), 51);
    for row in &a.risk_trace {
        assert!(row.w2 <= rho * (1.0 + 1e-6));
        assert!(row.risk.is_finite());
    }
}

#[test]
fn exp1_runs_on_the_transformer_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg();
    cfg.predictor_path = PredictorPath::TrainedTransformer;
    cfg.m = 8;
    cfg.exp1.rho_grid = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    cfg.train.steps = 1_500;
    cfg.train.tasks_total = 1_000;
    cfg.train.val_tasks = 64;
    cfg.pga.iterations = 60;
    cfg.pga.tasks_per_step = 32;
    cfg.pga.risk_eval_samples = 4_000;
    let outcome = run_exp1(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.records.len(), 6);
    for rec in &outcome.records {
        assert_eq!(rec.path, "trained-transformer");
        assert!(rec.worst_se > 0.0, "Monte Carlo estimates carry uncertainty");
        rec.validate().unwrap();
    }
    // The trained model is genuinely attackable: the largest radius must
    // raise the risk well beyond its standard error.
    let last = outcome.records.last().unwrap();
    assert!(
        last.worst_risk > last.nominal_risk + 3.0 * (last.worst_se + last.nominal_se),
        "worst {} vs nominal {}",
        last.worst_risk,
        last.nominal_risk
    );
    // One checkpoint was written and reused for every cell.
    let ckpt = cfg.checkpoint_path(dir.path(), cfg.d, cfg.m, cfg.n);
    assert!(ckpt.exists());
}

#[test]
fn exp2_skips_and_flags_diverged_training_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg();
    cfg.predictor_path = PredictorPath::TrainedTransformer;
    cfg.exp2.d = 4;
    cfg.exp2.m_grid = vec![4, 8];
    cfg.exp2.train_steps = 400;
    cfg.train.learning_rate = 40.0; // guaranteed blow-up
    cfg.train.divergence_window = 50;
    cfg.train.tasks_total = 200;
    cfg.train.val_tasks = 16;
    let outcome = run_exp2(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.cells.len(), 2);
    for cell in &outcome.cells {
        let reason = cell.skipped.as_ref().expect("diverged cells are skipped, not fatal");
        assert!(reason.contains("diverged"), "{reason}");
    }
    assert!(outcome.fit_origin.is_none(), "no usable cells, no fit");
}

#[test]
fn verify_flags_a_corrupted_checkpoint_by_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let ckpt = cfg.checkpoint_path(dir.path(), cfg.verify.d, cfg.verify.m, cfg.n);
    std::fs::create_dir_all(ckpt.parent().unwrap()).unwrap();
    std::fs::write(&ckpt, b"definitely not a checkpoint").unwrap();

    let report = robust_icl::run_verify(&cfg, dir.path()).unwrap();
    let check = report
        .checks
        .iter()
        .find(|c| c.name == "trainer-reaches-class-optimum")
        .expect("convergence check present");
    assert!(!check.passed, "corrupted checkpoint must fail the check");
    assert!(
        check.detail.contains("d=10") && check.detail.contains("m=16"),
        "diagnostic must name the cell: {}",
        check.detail
    );
    assert!(!report.all_passed());
}

#[test]
fn verify_convergence_check_is_live_under_a_tight_tolerance() {
    // Train the standard cell once (persisted), then demand an impossible
    // 0.01% match to the class optimum: the check must report a failure,
    // demonstrating it actually measures something.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    let train_cfg = robust_icl::TrainConfig {
        steps: cfg.verify.train_steps,
        patience_steps: cfg.verify.train_patience,
        val_every: cfg.verify.train_val_every,
        ..cfg.train.clone()
    };
    robust_icl::experiments::obtain_model(&cfg, cfg.verify.d, cfg.verify.m, cfg.n, &train_cfg, dir.path())
        .unwrap();

    cfg.verify.convergence_rel_tol = 0.0001;
    let report = robust_icl::run_verify(&cfg, dir.path()).unwrap();
    let check = report
        .checks
        .iter()
        .find(|c| c.name == "trainer-reaches-class-optimum")
        .unwrap();
    assert!(
        !check.passed,
        "a 0.01% tolerance must be unachievable: {}",
        check.detail
    );
}

#[test]
fn nominal_risk_is_reused_across_radii_for_pairing() {
    // Paired estimation on the ridge path: all exp1 cells share one design
    // batch, so the nominal column is identical across radii.
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg();
    let outcome = run_exp1(&cfg, dir.path()).unwrap();
    let nominal0 = outcome.records[0].nominal_risk;
    for rec in &outcome.records {
        assert_eq!(rec.nominal_risk, nominal0);
    }
}
