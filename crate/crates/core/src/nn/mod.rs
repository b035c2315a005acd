//! Autoencoders over measurement windows: stacked LSTM (sequence) and dense
//! (per column) variants, random input dropout, Adam training with BPTT, a
//! finite-difference gradient checker and model files.

mod io;
pub mod lstm;
mod model;
mod train;

pub use io::{load_model, save_model, MODEL_MAGIC};
pub use lstm::LstmLayer;
pub use model::{
    from_batch, to_batch, Activation, AeModel, Batch, DecoderInput, DenseLayer, ForwardCache, Mode, ModelConfig,
    ModelKind, ModelMeta,
};
pub use train::{gradient_check, loss_history_csv, GRADCHECK_EPSILON, train, window_loss, Adam, EpochLoss, TrainConfig};

use crate::artifact::ArtifactError;
use crate::attack::masked_count;
use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid training configuration: {0}")]
    Train(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (learning rate {lr})")]
    NonFinite { loss: f64, epoch: usize, batch: usize, lr: f64 },
    #[error("input has {got} rows, model expects {expected}")]
    Shape { got: usize, expected: usize },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptMode {
    /// Every column is masked independently.
    Train,
    /// Only the final column is masked.
    Infer,
}

/// Masked entries of an `m x T` window and the ratio drawn for each column.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub mask: Array2<bool>,
    pub ratios: Vec<f64>,
}

impl DropoutMask {
    pub fn masked_in_column(&self, col: usize) -> usize {
        self.mask.column(col).iter().filter(|b| **b).count()
    }
}

/// Zeroes a random subset of entries per column. The ratio for each masked
/// column is uniform on `d_range`; the count is `masked_count(ratio, m)`,
/// raised to `ceil(d_min * m)` when flooring would undershoot the range.
pub fn corrupt<R: Rng + ?Sized>(
    window: ArrayView2<f64>,
    d_range: (f64, f64),
    rng: &mut R,
    mode: CorruptMode,
) -> (Array2<f64>, DropoutMask) {
    let (m, t) = window.dim();
    let mut out = window.to_owned();
    let mut mask = Array2::from_elem((m, t), false);
    let mut ratios = vec![0.0; t];
    let cols: Vec<usize> = match mode {
        CorruptMode::Train => (0..t).collect(),
        CorruptMode::Infer => (t.saturating_sub(1)..t).collect(),
    };
    let (lo, hi) = d_range;
    for c in cols {
        let ratio = if hi > lo { rng.random_range(lo..hi) } else { lo };
        ratios[c] = ratio;
        let floor_min = ((lo * m as f64) - 1e-9).ceil().max(0.0) as usize;
        let count = masked_count(ratio, m).max(floor_min).min(m);
        if count == 0 {
            continue;
        }
        for r in sample(rng, m, count) {
            mask[[r, c]] = true;
            out[[r, c]] = 0.0;
        }
    }
    (out, DropoutMask { mask, ratios })
}
