//! Distributionally robust in-context learning on Gaussian linear-regression
//! tasks, at desk scale.
//!
//! The library provides the full pipeline: task and prompt generation
//! ([`task`]), closed-form Wasserstein-2 geometry on Gaussians
//! ([`wasserstein`]), the ridge-regression ICL oracle with a semi-analytic
//! risk ([`ridge`], [`risk`]), a trainable single-layer multi-head linear
//! attention model with manual gradients ([`attention`]), a projected
//! gradient ascent adversary over task distributions ([`adversary`]),
//! least-squares machinery for the scaling-law fits ([`fits`]), and the
//! experiment harness with CSV/SVG outputs ([`experiments`]).

pub mod adversary;
pub mod attention;
pub mod error;
pub mod experiments;
pub mod fits;
pub mod ridge;
pub mod risk;
pub mod rng;
pub mod task;
pub mod wasserstein;

pub use adversary::{
    boundary_grid_oracle, pga_search, risk_gradient, AdversaryResult, GridOracleResult, PgaConfig,
    RiskBackend, RiskGradient, TraceRow,
};
pub use attention::{
    class_optimal_mse, embed_prompt, load_checkpoint, max_gradient_fd_error, save_checkpoint,
    split_prompt, train, Gradients, LinearAttentionModel, TrainConfig, TrainReport,
};
pub use error::{Error, Result};
pub use experiments::{
    run_exp1, run_exp2, run_exp3, run_lambda_sweep, run_verify, ExperimentConfig, PredictorPath,
    ResultRecord, VerifyReport,
};
pub use fits::{
    find_rho_max, find_sample_tax, fit_bound_form, fit_line, fit_line_through_origin,
    fit_risk_curve, BoundForm, FitPoint, RhoMaxResult, SampleTaxResult, ScalingFitReport,
};
pub use ridge::{semi_analytic_risk, JacobianReport, RidgePredictor, SemiAnalyticRidge};
pub use risk::{
    monte_carlo_risk, monte_carlo_risk_on_designs, DesignBatch, IclPredictor, RiskEstimate,
};
pub use rng::StreamTree;
pub use task::{
    sample_context, sample_task, ContextSet, ContextStreams, GaussianTaskDistribution, NoiseConfig,
};
pub use wasserstein::{project_to_ball, w2_general, w2_isotropic, Projection, WassersteinBall};
