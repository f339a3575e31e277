//! Adam training loop for the linear attention model.
//!
//! Tasks are drawn once into a pool and cycled in reshuffled order; contexts
//! are resampled fresh every step. Validation runs on a fixed held-out set of
//! prompts with a dedicated substream, and early stopping watches the
//! validation MSE with a relative-improvement tolerance and a step patience.
//! Everything is driven by named substreams of one master seed, so a training
//! run is bit-reproducible.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attention::{Gradients, LinearAttentionModel};
use crate::error::{Error, Result};
use crate::ridge::RidgePredictor;
use crate::risk::IclPredictor;
use crate::rng::StreamTree;
use crate::task::{sample_context, ContextSet, ContextStreams, GaussianTaskDistribution, NoiseConfig};

/// Training hyperparameters. Defaults: 10 000 pool tasks, batches of 32,
/// Adam at learning rate 0.001 for 5 000 steps, four heads, init scale 0.02,
/// 512 validation prompts checked every 50 steps with patience 500.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tasks_total: usize,
    pub batch_tasks: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub heads: usize,
    pub init_std: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub val_tasks: usize,
    pub val_every: usize,
    pub patience_steps: usize,
    pub early_stop_rel_tol: f64,
    pub divergence_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tasks_total: 10_000,
            batch_tasks: 32,
            learning_rate: 0.001,
            steps: 5_000,
            heads: 4,
            init_std: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            val_tasks: 512,
            val_every: 50,
            patience_steps: 500,
            early_stop_rel_tol: 1e-5,
            divergence_window: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 8] = [
            ("tasks_total", self.tasks_total as f64),
            ("batch_tasks", self.batch_tasks as f64),
            ("learning_rate", self.learning_rate),
            ("steps", self.steps as f64),
            ("heads", self.heads as f64),
            ("val_tasks", self.val_tasks as f64),
            ("val_every", self.val_every as f64),
            ("divergence_window", self.divergence_window as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.init_std > 0.0) {
            return Err(Error::invalid("init_std", "must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps_run: usize,
    pub early_stopped: bool,
    /// Validation MSE of the returned model.
    pub final_val_mse: f64,
    /// Ridge-oracle MSE on the same validation prompts.
    pub ridge_val_mse: f64,
    /// Population optimum of the model class; see [`class_optimal_mse`].
    pub class_optimal_mse: f64,
    /// `final_val_mse ≤ 1.1 · ridge_val_mse`. The single-layer class cannot
    /// reach the ridge oracle at small N (see [`class_optimal_mse`]), so this
    /// gate records the measured gap rather than being enforced.
    pub meets_ridge_gate: bool,
    /// Per-step batch MSE.
    pub train_curve: Vec<f64>,
    /// `(step, validation MSE)` at every evaluation point.
    pub val_curve: Vec<(usize, f64)>,
}

/// Population-optimal MSE of the single-layer linear-attention class.
///
/// The forward map is bilinear in the test token and the prompt Gram matrix,
/// so every reachable predictor has the one-step form `ŷ = x_testᵀ M Xᵀy`
/// plus terms that carry no signal. For `β ~ N(0, σ_β² I)`, Gaussian designs
/// and noise σ², the optimal `M` is `c·I` with `c = 1/(N + d + 1 + λ)`, and
/// the optimal risk is
///
/// ```text
/// σ_β² d + σ² − σ_β² N d / (N + d + 1 + λ),    λ = σ²/σ_β².
/// ```
///
/// A converged model lands at this level, not at the ridge oracle's risk:
/// the matrix inverse in the ridge solution is outside the class.
pub fn class_optimal_mse(d: usize, n: usize, noise: &NoiseConfig) -> f64 {
    let (d, n) = (d as f64, n as f64);
    let sb2 = noise.sigma_beta_sq;
    let lambda = noise.lambda();
    sb2 * d + noise.sigma_sq - sb2 * n * d / (n + d + 1.0 + lambda)
}

/// Non-overlapping window means of a curve (trailing partial window dropped).
pub fn smooth_curve(curve: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    curve
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

struct AdamState {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: u32,
}

impl AdamState {
    fn new(model: &LinearAttentionModel) -> Self {
        let mut shapes = Vec::new();
        let mut probe = model.clone();
        for g in 0..probe.param_groups() {
            let p = probe.param_group_mut(g);
            shapes.push(DMatrix::zeros(p.nrows(), p.ncols()));
        }
        AdamState {
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut LinearAttentionModel, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powi(self.t as i32)).sqrt()
            / (1.0 - cfg.beta1.powi(self.t as i32));
        let heads = model.heads();
        for group in 0..model.param_groups() {
            let grad = match group {
                g if g < heads => &grads.q_proj[g],
                g if g < 2 * heads => &grads.k_proj[g - heads],
                g if g < 3 * heads => &grads.v_proj[g - 2 * heads],
                _ => &grads.w_out,
            };
            let m = &mut self.m[group];
            let v = &mut self.v[group];
            let param = model.param_group_mut(group);
            for ((p, g), (m, v)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn mean_sq_error(pred: &dyn IclPredictor, prompts: &[ContextSet]) -> Result<f64> {
    let mut acc = 0.0;
    for ctx in prompts {
        let e = pred.predict(ctx)? - ctx.y_test();
        acc += e * e;
    }
    Ok(acc / prompts.len() as f64)
}

/// Train a model of capacity `m` on tasks from `dist` with prompts of length
/// `n`. Substreams used: `trainer-init`, `trainer-tasks`, `trainer-order`,
/// `trainer-contexts`, `validation-tasks`, `validation`.
pub fn train(
    config: &TrainConfig,
    dist: &GaussianTaskDistribution,
    noise: &NoiseConfig,
    n: usize,
    m: usize,
    tree: &StreamTree,
) -> Result<(LinearAttentionModel, TrainReport)> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Empty("context"));
    }
    let d = dist.d();

    let mut init_rng = tree.stream("trainer-init");
    let mut model = LinearAttentionModel::init_random(d, config.heads, m, config.init_std, &mut init_rng)?;

    // Task pool and batch order.
    let mut task_rng = tree.stream("trainer-tasks");
    let pool: Vec<_> = (0..config.tasks_total).map(|_| dist.sample(&mut task_rng)).collect();
    let mut order_rng = tree.stream("trainer-order");
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0usize;
    let mut ctx_streams = ContextStreams::from_tree(tree, "trainer-contexts");

    // Held-out validation prompts, one fixed context per task.
    let mut val_task_rng = tree.stream("validation-tasks");
    let mut val_streams = ContextStreams::from_tree(tree, "validation");
    let val_prompts: Vec<ContextSet> = (0..config.val_tasks)
        .map(|_| sample_context(&dist.sample(&mut val_task_rng), n, noise, &mut val_streams))
        .collect::<Result<_>>()?;
    let ridge = RidgePredictor::from_noise(noise, d)?;
    let ridge_val_mse = mean_sq_error(&ridge, &val_prompts)?;

    let mut adam = AdamState::new(&model);
    let mut train_curve = Vec::with_capacity(config.steps);
    let mut val_curve = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut diverged_streak = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_val_step = 0usize;
    let mut early_stopped = false;
    let mut steps_run = 0usize;

    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_tasks);
        for _ in 0..config.batch_tasks {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let beta = &pool[order[cursor]];
            cursor += 1;
            batch.push(sample_context(beta, n, noise, &mut ctx_streams)?);
        }

        let (loss, grads) = model.loss_and_gradients(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at step {step}")));
        }
        if step == 1 {
            initial_loss = loss;
        }
        train_curve.push(loss);
        steps_run = step;

        if loss > 10.0 * initial_loss {
            diverged_streak += 1;
            if diverged_streak >= config.divergence_window {
                return Err(Error::TrainingDiverged {
                    step,
                    loss,
                    initial: initial_loss,
                    window: config.divergence_window,
                });
            }
        } else {
            diverged_streak = 0;
        }

        adam.step(&mut model, &grads, config);

        if step % config.val_every == 0 || step == config.steps {
            let val = mean_sq_error(&model, &val_prompts)?;
            val_curve.push((step, val));
            if val < best_val * (1.0 - config.early_stop_rel_tol) {
                best_val = val;
                best_val_step = step;
            } else if step - best_val_step >= config.patience_steps {
                early_stopped = true;
                break;
            }
        }
    }

    let final_val_mse = match val_curve.last() {
        Some(&(_, v)) => v,
        None => mean_sq_error(&model, &val_prompts)?,
    };

    let report = TrainReport {
        steps_run,
        early_stopped,
        final_val_mse,
        ridge_val_mse,
        class_optimal_mse: class_optimal_mse(d, n, noise),
        meets_ridge_gate: final_val_mse <= 1.1 * ridge_val_mse,
        train_curve,
        val_curve,
    };
    Ok((model, report))
}
