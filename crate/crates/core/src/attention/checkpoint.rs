//! Binary checkpoint format for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "LINATTN\0"
//! bytes 8..12   format version (u32, currently 1)
//! bytes 12..28  d, heads, head_dim, n   (u32 each)
//! bytes 28..36  master seed (u64)
//! bytes 36..    parameters as f64, row-major; per head Q, K, V, then the
//!               output projection
//! ```
//!
//! A textual sidecar `<path>.meta.toml` records the training configuration
//! and the final validation numbers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::{LinearAttentionModel, TrainConfig, TrainReport};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LINATTN\0";
pub const FORMAT_VERSION: u32 = 1;

/// Fixed-size header of a checkpoint file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub d: u32,
    pub heads: u32,
    pub head_dim: u32,
    /// Context length the model was trained at.
    pub n: u32,
    pub seed: u64,
}

/// Sidecar contents: config plus the headline training outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub n: usize,
    pub seed: u64,
    pub steps_run: usize,
    pub early_stopped: bool,
    pub final_val_mse: f64,
    pub ridge_val_mse: f64,
    pub class_optimal_mse: f64,
    pub config: TrainConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.toml");
    PathBuf::from(os)
}

pub fn save_checkpoint(
    path: &Path,
    model: &LinearAttentionModel,
    n: usize,
    seed: u64,
    config: &TrainConfig,
    report: &TrainReport,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(36 + 8 * model.param_count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(model.d() as u32).to_le_bytes());
    bytes.extend_from_slice(&(model.heads() as u32).to_le_bytes());
    bytes.extend_from_slice(&(model.head_dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&seed.to_le_bytes());

    let mut push = |m: &DMatrix<f64>| {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    };
    for h in 0..model.heads() {
        push(&model.q_proj()[h]);
        push(&model.k_proj()[h]);
        push(&model.v_proj()[h]);
    }
    push(model.w_out());

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, &bytes)?;

    let meta = CheckpointMeta {
        n,
        seed,
        steps_run: report.steps_run,
        early_stopped: report.early_stopped,
        final_val_mse: report.final_val_mse,
        ridge_val_mse: report.ridge_val_mse,
        class_optimal_mse: report.class_optimal_mse,
        config: config.clone(),
    };
    let text = toml::to_string_pretty(&meta)
        .map_err(|e| Error::Checkpoint(format!("sidecar serialization failed: {e}")))?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(LinearAttentionModel, CheckpointHeader)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 36 {
        return Err(Error::Checkpoint(format!(
            "{}: truncated header ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let header = CheckpointHeader {
        version: u32_at(8),
        d: u32_at(12),
        heads: u32_at(16),
        head_dim: u32_at(20),
        n: u32_at(24),
        seed: u64::from_le_bytes(bytes[28..36].try_into().unwrap()),
    };
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {}",
            path.display(),
            header.version
        )));
    }
    let (d, heads, head_dim) = (header.d as usize, header.heads as usize, header.head_dim as usize);
    if d == 0 || heads == 0 || head_dim == 0 {
        return Err(Error::Checkpoint(format!("{}: degenerate dimensions", path.display())));
    }
    let m = heads * head_dim;
    let expected = 36 + 8 * 4 * m * (d + 1);
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} bytes for d={} heads={} head_dim={}, found {}",
            path.display(),
            expected,
            d,
            heads,
            head_dim,
            bytes.len()
        )));
    }

    let mut offset = 36usize;
    let mut read_matrix = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Checkpoint(format!(
                        "{}: non-finite parameter at byte {offset}",
                        path.display()
                    )));
                }
                out[(r, c)] = v;
                offset += 8;
            }
        }
        Ok(out)
    };

    let tok = d + 1;
    let mut q = Vec::with_capacity(heads);
    let mut k = Vec::with_capacity(heads);
    let mut v = Vec::with_capacity(heads);
    for _ in 0..heads {
        q.push(read_matrix(tok, head_dim)?);
        k.push(read_matrix(tok, head_dim)?);
        v.push(read_matrix(tok, head_dim)?);
    }
    let w_out = read_matrix(m, tok)?;

    let model = LinearAttentionModel::from_parts(d, heads, head_dim, q, k, v, w_out);
    Ok((model, header))
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let text = fs::read_to_string(sidecar_path(path))
        .map_err(|e| Error::Checkpoint(format!("cannot read sidecar of {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("bad sidecar: {e}")))
}
