//! Single-layer multi-head linear self-attention for in-context regression.
//!
//! Prompt embedding: context pairs become rows `(x_i, y_i)` of a token matrix
//! `Z ∈ R^{(N+1)×(d+1)}`, the test token is `(x_test, 0)`. One attention layer
//! without softmax, MLP blocks, or positional encodings updates the tokens as
//! `Z' = Z + (1/N) (Z Q_h)(Z K_h)ᵀ (Z V_h) W_out` (heads concatenated before
//! the output projection), and the prediction is read from the zeroed label
//! slot of the updated test token.
//!
//! The `1/N` score scaling makes the attention update an empirical-moment
//! operation whose magnitude does not drift with context length, so one
//! trained model can be evaluated across different `N`.
//!
//! Gradients are exact analytic derivatives of this forward map; see
//! [`LinearAttentionModel::loss_and_gradients`]. With `s` the test token,
//! `G = ZᵀZ`, and `w_h` the rows of the output projection's label column
//! belonging to head `h`, the prediction is
//! `ŷ = Σ_h (1/N) sᵀ Q_h K_hᵀ G V_h w_h`, which yields closed-form outer
//! products for every parameter block.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, load_meta, save_checkpoint, sidecar_path, CheckpointHeader, CheckpointMeta};
pub use train::{class_optimal_mse, smooth_curve, train, TrainConfig, TrainReport};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::risk::IclPredictor;
use crate::task::ContextSet;

/// Trainable single-layer multi-head linear attention model.
///
/// `total_capacity` (`m`) is split evenly across `heads`; each head owns
/// key/query/value projections of shape `(d+1) × (m/heads)` and the shared
/// output projection has shape `m × (d+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttentionModel {
    d: usize,
    heads: usize,
    head_dim: usize,
    q_proj: Vec<DMatrix<f64>>,
    k_proj: Vec<DMatrix<f64>>,
    v_proj: Vec<DMatrix<f64>>,
    w_out: DMatrix<f64>,
}

/// Gradient set mirroring the parameter layout of [`LinearAttentionModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub q_proj: Vec<DMatrix<f64>>,
    pub k_proj: Vec<DMatrix<f64>>,
    pub v_proj: Vec<DMatrix<f64>>,
    pub w_out: DMatrix<f64>,
}

impl LinearAttentionModel {
    /// All-zero parameters (a stationary point; training starts from
    /// [`LinearAttentionModel::init_random`] instead).
    pub fn zeroed(d: usize, heads: usize, total_capacity: usize) -> Result<Self> {
        Self::validate_dims(d, heads, total_capacity)?;
        let head_dim = total_capacity / heads;
        let tok = d + 1;
        Ok(LinearAttentionModel {
            d,
            heads,
            head_dim,
            q_proj: vec![DMatrix::zeros(tok, head_dim); heads],
            k_proj: vec![DMatrix::zeros(tok, head_dim); heads],
            v_proj: vec![DMatrix::zeros(tok, head_dim); heads],
            w_out: DMatrix::zeros(total_capacity, tok),
        })
    }

    /// Gaussian init with standard deviation `init_std` on every entry.
    pub fn init_random(
        d: usize,
        heads: usize,
        total_capacity: usize,
        init_std: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let mut model = Self::zeroed(d, heads, total_capacity)?;
        model.for_each_param_mut(|p| {
            for v in p.iter_mut() {
                *v = init_std * rng.sample::<f64, _>(StandardNormal);
            }
        });
        Ok(model)
    }

    fn validate_dims(d: usize, heads: usize, total_capacity: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be >= 1"));
        }
        if heads == 0 {
            return Err(Error::invalid("heads", "must be >= 1"));
        }
        if total_capacity == 0 || !total_capacity.is_multiple_of(heads) {
            return Err(Error::invalid(
                "total_capacity",
                format!("m = {total_capacity} must be a positive multiple of heads = {heads}"),
            ));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn total_capacity(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Deterministic function of `(d, heads, m)`: three projections per head
    /// plus the output projection, `4 m (d+1)` entries in total.
    pub fn param_count(&self) -> usize {
        4 * self.total_capacity() * (self.d + 1)
    }

    pub(crate) fn q_proj(&self) -> &[DMatrix<f64>] {
        &self.q_proj
    }

    pub(crate) fn k_proj(&self) -> &[DMatrix<f64>] {
        &self.k_proj
    }

    pub(crate) fn v_proj(&self) -> &[DMatrix<f64>] {
        &self.v_proj
    }

    pub(crate) fn w_out(&self) -> &DMatrix<f64> {
        &self.w_out
    }

    pub(crate) fn from_parts(
        d: usize,
        heads: usize,
        head_dim: usize,
        q_proj: Vec<DMatrix<f64>>,
        k_proj: Vec<DMatrix<f64>>,
        v_proj: Vec<DMatrix<f64>>,
        w_out: DMatrix<f64>,
    ) -> Self {
        LinearAttentionModel {
            d,
            heads,
            head_dim,
            q_proj,
            k_proj,
            v_proj,
            w_out,
        }
    }

    /// Apply `f` to every parameter matrix, in a fixed order
    /// (per head: Q, K, V; then the output projection).
    pub(crate) fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut DMatrix<f64>)) {
        for h in 0..self.heads {
            f(&mut self.q_proj[h]);
            f(&mut self.k_proj[h]);
            f(&mut self.v_proj[h]);
        }
        f(&mut self.w_out);
    }

    /// Number of parameter matrices (`3·heads + 1`).
    pub(crate) fn param_groups(&self) -> usize {
        3 * self.heads + 1
    }

    /// Mutable access to one parameter matrix by group index, ordered
    /// Q heads, K heads, V heads, output projection.
    pub(crate) fn param_group_mut(&mut self, group: usize) -> &mut DMatrix<f64> {
        let h = self.heads;
        match group {
            g if g < h => &mut self.q_proj[g],
            g if g < 2 * h => &mut self.k_proj[g - h],
            g if g < 3 * h => &mut self.v_proj[g - 2 * h],
            _ => &mut self.w_out,
        }
    }

    /// Prediction for an embedded prompt `Z` of shape `(N+1) × (d+1)`.
    ///
    /// Only the test row's update is computed; the prediction is the last
    /// coordinate of that row after the residual update (the embedded slot is
    /// zero, so the residual contributes nothing).
    pub fn forward(&self, z: &DMatrix<f64>) -> Result<f64> {
        let tok = self.d + 1;
        if z.ncols() != tok {
            return Err(Error::DimensionMismatch {
                context: "forward token width",
                expected: tok,
                actual: z.ncols(),
            });
        }
        if z.nrows() < 2 {
            return Err(Error::DimensionMismatch {
                context: "forward token count",
                expected: 2,
                actual: z.nrows(),
            });
        }
        let n = z.nrows() - 1;
        let s = z.row(n).transpose();
        let mut update = 0.0;
        let out_col = self.w_out.column(self.d);
        for h in 0..self.heads {
            let q = self.q_proj[h].transpose() * &s;
            let keys = z * &self.k_proj[h];
            let values = z * &self.v_proj[h];
            let scores = keys * &q / n as f64;
            let head_out = values.transpose() * scores;
            for (j, v) in head_out.iter().enumerate() {
                update += v * out_col[h * self.head_dim + j];
            }
        }
        Ok(update)
    }

    /// Prediction for a raw prompt (embed + forward).
    pub fn predict_ctx(&self, ctx: &ContextSet) -> Result<f64> {
        self.forward(&embed_parts(ctx.x(), ctx.y(), ctx.x_test()))
    }

    /// Mean squared error over a batch and its exact parameter gradients.
    pub fn loss_and_gradients(&self, batch: &[ContextSet]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let tok = self.d + 1;
        let mut grads = Gradients {
            q_proj: vec![DMatrix::zeros(tok, self.head_dim); self.heads],
            k_proj: vec![DMatrix::zeros(tok, self.head_dim); self.heads],
            v_proj: vec![DMatrix::zeros(tok, self.head_dim); self.heads],
            w_out: DMatrix::zeros(self.total_capacity(), tok),
        };
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;

        for ctx in batch {
            if ctx.d() != self.d {
                return Err(Error::DimensionMismatch {
                    context: "batch context",
                    expected: self.d,
                    actual: ctx.d(),
                });
            }
            let z = embed_parts(ctx.x(), ctx.y(), ctx.x_test());
            let n = ctx.n() as f64;
            let gram = z.transpose() * &z;
            let s = z.row(ctx.n()).transpose();
            let out_col = self.w_out.column(self.d);

            // Per-head intermediates for ŷ = Σ_h (1/N) qᵀ K ᵀ G V w.
            let mut y_hat = 0.0;
            let mut per_head = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let w_h = DVector::from_fn(self.head_dim, |j, _| out_col[h * self.head_dim + j]);
                let q = self.q_proj[h].transpose() * &s;
                let vw = &self.v_proj[h] * &w_h;
                let gvw = &gram * vw;
                let c = self.k_proj[h].transpose() * &gvw / n;
                let kq = &self.k_proj[h] * &q;
                let gkq = &gram * kq;
                let head_out = self.v_proj[h].transpose() * &gkq / n;
                y_hat += q.dot(&c);
                per_head.push((q, c, gvw, gkq, head_out, w_h));
            }

            let residual = y_hat - ctx.y_test();
            loss += residual * residual * scale;
            let chain = 2.0 * residual * scale;

            for (h, (q, c, gvw, gkq, head_out, _w_h)) in per_head.into_iter().enumerate() {
                // ∂ŷ/∂Q = s cᵀ, ∂ŷ/∂K = (1/N) (GVw) qᵀ, ∂ŷ/∂V = (1/N) (GKq) wᵀ,
                // ∂ŷ/∂w_h = head output; all other output-projection columns
                // never reach the readout and keep zero gradient.
                grads.q_proj[h].gemm(chain, &s, &c.transpose(), 1.0);
                grads.k_proj[h].gemm(chain / n, &gvw, &q.transpose(), 1.0);
                let w_h_row = self.w_out.column(self.d).rows(h * self.head_dim, self.head_dim).transpose();
                grads.v_proj[h].gemm(chain / n, &gkq, &w_h_row, 1.0);
                for j in 0..self.head_dim {
                    grads.w_out[(h * self.head_dim + j, self.d)] += chain * head_out[j];
                }
            }
        }
        Ok((loss, grads))
    }
}

impl IclPredictor for LinearAttentionModel {
    fn predict_parts(&self, x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DVector<f64>) -> Result<f64> {
        if x.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                context: "attention predict",
                expected: self.d,
                actual: x.ncols(),
            });
        }
        self.forward(&embed_parts(x, y, x_test))
    }

    fn path_name(&self) -> &'static str {
        "trained-transformer"
    }
}

/// Embed a prompt into the token matrix: rows `(x_i, y_i)` for the context,
/// final row `(x_test, 0)`.
pub fn embed_prompt(ctx: &ContextSet) -> DMatrix<f64> {
    embed_parts(ctx.x(), ctx.y(), ctx.x_test())
}

fn embed_parts(x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DVector<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut z = DMatrix::zeros(n + 1, d + 1);
    z.view_mut((0, 0), (n, d)).copy_from(x);
    for i in 0..n {
        z[(i, d)] = y[i];
    }
    for j in 0..d {
        z[(n, j)] = x_test[j];
    }
    z
}

/// Largest relative error between the analytic batch-loss gradient and a
/// central finite difference with step `h`, over every parameter entry.
/// Used by the gradient-correctness checks in the verification suite.
pub fn max_gradient_fd_error(
    model: &mut LinearAttentionModel,
    batch: &[ContextSet],
    h: f64,
) -> Result<f64> {
    let (_, grads) = model.loss_and_gradients(batch)?;
    let analytic: Vec<DMatrix<f64>> = {
        let mut list = grads.q_proj;
        list.extend(grads.k_proj);
        list.extend(grads.v_proj);
        list.push(grads.w_out);
        list
    };
    let mut max_rel = 0.0f64;
    for group in 0..model.param_groups() {
        let (rows, cols) = {
            let p = model.param_group_mut(group);
            (p.nrows(), p.ncols())
        };
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.param_group_mut(group)[(r, c)];
                model.param_group_mut(group)[(r, c)] = orig + h;
                let (lp, _) = model.loss_and_gradients(batch)?;
                model.param_group_mut(group)[(r, c)] = orig - h;
                let (lm, _) = model.loss_and_gradients(batch)?;
                model.param_group_mut(group)[(r, c)] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[group][(r, c)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                max_rel = max_rel.max(rel);
            }
        }
    }
    Ok(max_rel)
}

/// Inverse of [`embed_prompt`]: recover `(X, y, x_test)` from a token matrix.
pub fn split_prompt(z: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    if z.nrows() < 2 || z.ncols() < 2 {
        return Err(Error::DimensionMismatch {
            context: "split_prompt",
            expected: 2,
            actual: z.nrows().min(z.ncols()),
        });
    }
    let n = z.nrows() - 1;
    let d = z.ncols() - 1;
    let x = z.view((0, 0), (n, d)).into_owned();
    let y = DVector::from_fn(n, |i, _| z[(i, d)]);
    let x_test = DVector::from_fn(d, |j, _| z[(n, j)]);
    Ok((x, y, x_test))
}
