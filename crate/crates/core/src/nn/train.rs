use super::model::{to_batch, AeModel, Batch, Mode};
use super::{corrupt, CorruptMode, NnError};
use crate::pipeline::WindowTensor;
use crate::seed;
use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Validation loss is computed every this many epochs (and on the last).
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 400,
            epochs: 1500,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            report_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: &str| Err(NnError::Train(m.to_string()));
        if self.batch_size == 0 {
            return err("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return err("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.report_every == 0 {
            return err("report_every must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Zero-based count over the model's whole training history.
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

/// Adam state. Moments are not persisted with the model, so a resumed run
/// restarts them from zero.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &AeModel) -> Self {
        Self { m: model.zero_grads(), v: model.zero_grads(), t: 0 }
    }

    pub fn step(&mut self, model: &mut AeModel, grads: &[Array2<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2, eps, lr) = (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.learning_rate);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in model.params_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Mean squared error over all entries and its gradient w.r.t. `y`.
fn mse_and_grad(y: &Batch, target: &Batch) -> (f64, Batch) {
    let n: usize = y.iter().map(|s| s.len()).sum();
    let scale = 2.0 / n as f64;
    let mut total = 0.0;
    let grads = y
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = a - b;
            total += d.iter().map(|v| v * v).sum::<f64>();
            d * scale
        })
        .collect();
    (total / n as f64, grads)
}

fn mse(y: &Batch, target: &Batch) -> f64 {
    let n: usize = y.iter().map(|s| s.len()).sum();
    let total: f64 = y.iter().zip(target).map(|(a, b)| (a - b).iter().map(|v| v * v).sum::<f64>()).sum();
    total / n as f64
}

/// Evaluation-mode MSE between the reconstruction of `input` and `target`.
pub fn window_loss(model: &AeModel, input: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64, NnError> {
    let (y, _) = model.forward(&to_batch(&[input]), Mode::Eval)?;
    Ok(mse(&y, &to_batch(&[target])))
}

fn corrupted_batch(model: &AeModel, views: &[ArrayView2<f64>], rng: &mut seed::Rng) -> Option<Batch> {
    let range = model.config.input_dropout?;
    let corrupted: Vec<Array2<f64>> = views.iter().map(|w| corrupt(*w, range, rng, CorruptMode::Train).0).collect();
    Some(to_batch(&corrupted.iter().map(|c| c.view()).collect::<Vec<_>>()))
}

/// Validation loss with fixed per-window corruption so epochs are comparable.
fn validation_loss(model: &AeModel, windows: &WindowTensor, idx: &[usize], seed: u64) -> Result<f64, NnError> {
    let mut total = 0.0;
    for (k, chunk) in idx.chunks(1024).enumerate() {
        let views: Vec<_> = chunk.iter().map(|&i| windows.window(i)).collect();
        let clean = to_batch(&views);
        let mut rng = seed::rng(seed, "validation-corruption", k as u64);
        let input = corrupted_batch(model, &views, &mut rng).unwrap_or_else(|| clean.clone());
        let (y, _) = model.forward(&input, Mode::Eval)?;
        total += mse(&y, &clean) * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Trains `model` on the windows listed in `train_idx`, calling `on_epoch`
/// after every epoch. Returns the loss history of this call.
pub fn train(
    model: &mut AeModel,
    windows: &WindowTensor,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>, NnError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(NnError::Train("no training windows".into()));
    }
    if windows.m() != model.config.input_dim || windows.window_len() != model.config.window {
        return Err(NnError::Train(format!(
            "windows are {}x{}, model expects {}x{}",
            windows.m(),
            windows.window_len(),
            model.config.input_dim,
            model.config.window
        )));
    }
    let mut adam = Adam::new(model);
    let mut order = train_idx.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    for local in 0..cfg.epochs {
        let epoch = model.meta.epochs_trained;
        order.shuffle(&mut seed::rng(cfg.seed, "train-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let stream = (epoch as u64) << 24 | bi as u64;
            let views: Vec<_> = chunk.iter().map(|&i| windows.window(i)).collect();
            let clean = to_batch(&views);
            let mut crng = seed::rng(cfg.seed, "train-corruption", stream);
            let input = corrupted_batch(model, &views, &mut crng);
            let mut drng = seed::rng(cfg.seed, "train-dropout", stream);
            let (y, cache) = model.forward(input.as_ref().unwrap_or(&clean), Mode::Train(&mut drng))?;
            let (loss, dy) = mse_and_grad(&y, &clean);
            if !loss.is_finite() {
                return Err(NnError::NonFinite { loss, epoch, batch: bi, lr: cfg.learning_rate });
            }
            let grads = model.backward(&cache, &dy);
            adam.step(model, &grads, cfg);
            loss_sum += loss * chunk.len() as f64;
        }
        let report = (local + 1) % cfg.report_every == 0 || local + 1 == cfg.epochs;
        let validation =
            if report && !val_idx.is_empty() { Some(validation_loss(model, windows, val_idx, cfg.seed)?) } else { None };
        let entry = EpochLoss { epoch, train: loss_sum / order.len() as f64, validation };
        model.meta.epochs_trained += 1;
        on_epoch(&entry);
        history.push(entry);
    }
    Ok(history)
}

/// Widest step used by [`gradient_check`] when the caller has no reason to
/// pick one.
pub const GRADCHECK_EPSILON: f64 = 5e-2;

/// Largest `|g - g_fd| / (|g| + |g_fd| + 1e-12)` over all parameters, where
/// `g` is the backpropagated gradient of the evaluation-mode MSE between the
/// reconstruction of `window` and `window` itself.
///
/// `g_fd` comes from central differences `D(h) = (J(p + h) - J(p - h)) / 2h`
/// at `h = e, e/2, e/4`, combined by two rounds of Richardson extrapolation
/// (truncation error `O(e^6)`). A single central difference with a tiny step
/// loses too many digits to round-off in the forward pass on parameters whose
/// gradient is orders of magnitude below the loss.
pub fn gradient_check(model: &AeModel, window: ArrayView2<f64>, epsilon: f64) -> Result<f64, NnError> {
    let x = to_batch(&[window]);
    let (y, cache) = model.forward(&x, Mode::Eval)?;
    let (_, dy) = mse_and_grad(&y, &x);
    let grads = model.backward(&cache, &dy);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.params()[p].as_slice().expect("standard layout")[k];
            let mut central = |h: f64| -> Result<f64, NnError> {
                let mut at = |delta: f64| -> Result<f64, NnError> {
                    probe.params_mut()[p].as_slice_mut().expect("standard layout")[k] = orig + delta;
                    Ok(mse(&probe.forward(&x, Mode::Eval)?.0, &x))
                };
                Ok((at(h)? - at(-h)?) / (2.0 * h))
            };
            let (d1, d2, d3) = (central(epsilon)?, central(epsilon / 2.0)?, central(epsilon / 4.0)?);
            probe.params_mut()[p].as_slice_mut().expect("standard layout")[k] = orig;
            let (r1, r2) = ((4.0 * d2 - d1) / 3.0, (4.0 * d3 - d2) / 3.0);
            let fd = (16.0 * r2 - r1) / 15.0;
            let an = g.as_slice().expect("standard layout")[k];
            worst = worst.max((an - fd).abs() / (an.abs() + fd.abs() + 1e-12));
        }
    }
    Ok(worst)
}

/// Loss history as CSV (`epoch,train_loss,validation_loss`).
pub fn loss_history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for e in history {
        let val = e.validation.map(|v| format!("{v:.10e}")).unwrap_or_default();
        out.push_str(&format!("{},{:.10e},{}\n", e.epoch, e.train, val));
    }
    out
}
