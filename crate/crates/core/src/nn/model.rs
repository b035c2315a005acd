use super::lstm::{LayerCache, LstmLayer};
use super::NnError;
use crate::pipeline::MinMaxScaler;
use crate::seed;
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One matrix per time step, each `batch x features`.
pub type Batch = Vec<Array2<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    /// Per-column feedforward autoencoder; time is ignored.
    Dense,
}

/// What the LSTM decoder receives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInput {
    /// The encoder output at every step.
    #[default]
    Sequence,
    /// The final encoder output repeated `T` times.
    RepeatVector,
}

/// Hidden-layer activation of the dense kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Linear => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Hidden widths, encoder then decoder, e.g. `[56, 32, 32, 56]`.
    pub hidden: Vec<usize>,
    pub window: usize,
    /// Dropout on encoder outputs during training.
    pub hidden_dropout: f64,
    /// Input dropout range; `None` trains a plain autoencoder.
    pub input_dropout: Option<(f64, f64)>,
    #[serde(default)]
    pub decoder_input: DecoderInput,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    /// Desk-scale widths: 512/256 scaled by `m / 304` and rounded to multiples of 8.
    pub fn desk(kind: ModelKind, input_dim: usize) -> Self {
        let scale = |w: f64| ((w * input_dim as f64 / 304.0 / 8.0).round() as usize).max(1) * 8;
        let (outer, inner) = (scale(512.0), scale(256.0));
        Self {
            kind,
            input_dim,
            hidden: vec![outer, inner, inner, outer],
            window: 6,
            hidden_dropout: 0.005,
            input_dropout: Some((0.0, 0.2)),
            decoder_input: DecoderInput::Sequence,
            activation: Activation::Tanh,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.input_dim);
        s
    }

    pub fn n_encoder(&self) -> usize {
        self.hidden.len() / 2
    }

    pub fn bottleneck(&self) -> usize {
        self.hidden[self.n_encoder() - 1]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: String| Err(NnError::Config(m));
        let k = self.hidden.len();
        if self.input_dim == 0 || self.window == 0 {
            return err("input_dim and window must be positive".into());
        }
        if k < 2 || k % 2 != 0 || self.hidden.contains(&0) {
            return err(format!("hidden widths {:?} must be an even, non-empty list of positive sizes", self.hidden));
        }
        if (0..k).any(|i| self.hidden[i] != self.hidden[k - 1 - i]) {
            return err(format!("hidden widths {:?} are not symmetric", self.hidden));
        }
        if self.bottleneck() >= self.input_dim {
            return err(format!("bottleneck {} must be smaller than the input {}", self.bottleneck(), self.input_dim));
        }
        if !(0.0..1.0).contains(&self.hidden_dropout) {
            return err(format!("hidden dropout {} not in [0, 1)", self.hidden_dropout));
        }
        if let Some((lo, hi)) = self.input_dropout {
            if !(0.0 <= lo && lo <= hi && hi < 1.0) {
                return err(format!("input dropout range ({lo}, {hi}) invalid"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub w: Array2<f64>,
    /// `1 x out`.
    pub b: Array2<f64>,
}

impl DenseLayer {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self { w: Array2::from_shape_fn((output, input), |_| rng.random_range(-limit..limit)), b: Array2::zeros((1, output)) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Lineage carried with a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub scaler: Option<MinMaxScaler>,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub epochs_trained: usize,
}

pub enum Mode<'a> {
    Eval,
    /// Hidden dropout active, masks drawn from the given stream.
    Train(&'a mut seed::Rng),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub config: ModelConfig,
    /// LSTM kind: encoder then decoder layers. Empty for the dense kind.
    pub lstm: Vec<LstmLayer>,
    /// LSTM kind: the time-distributed output layer. Dense kind: all layers.
    pub dense: Vec<DenseLayer>,
    pub meta: ModelMeta,
}

/// Intermediates of a forward pass.
pub struct ForwardCache {
    lstm: Vec<LayerCache>,
    /// Scaled keep-masks per encoder layer and step.
    dropout: Vec<Option<Vec<Array2<f64>>>>,
    /// Per dense layer and step: its input.
    dense_in: Vec<Vec<Array2<f64>>>,
    /// Per dense layer and step: its activation output before dropout.
    dense_out: Vec<Vec<Array2<f64>>>,
}

/// Stacks windows (`m x T` each) into a batch.
pub fn to_batch(windows: &[ArrayView2<f64>]) -> Batch {
    let (m, t) = windows.first().map_or((0, 0), |w| w.dim());
    (0..t)
        .map(|step| {
            let mut x = Array2::zeros((windows.len(), m));
            for (b, w) in windows.iter().enumerate() {
                x.row_mut(b).assign(&w.column(step));
            }
            x
        })
        .collect()
}

/// Window `b` of a batch as `m x T`.
pub fn from_batch(batch: &Batch, b: usize) -> Array2<f64> {
    let m = batch.first().map_or(0, |x| x.ncols());
    let mut w = Array2::zeros((m, batch.len()));
    for (t, x) in batch.iter().enumerate() {
        w.column_mut(t).assign(&x.row(b));
    }
    w
}

fn dropout_mask(rng: &mut seed::Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl AeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = seed::rng(seed, "model-init", 0);
        let sizes = config.layer_sizes();
        let (lstm, dense) = match config.kind {
            ModelKind::Lstm => {
                let lstm = sizes.windows(2).take(config.hidden.len()).map(|p| LstmLayer::init(p[0], p[1], &mut rng));
                let lstm: Vec<_> = lstm.collect();
                let out = DenseLayer::init(*config.hidden.last().expect("validated"), config.input_dim, &mut rng);
                (lstm, vec![out])
            }
            ModelKind::Dense => (Vec::new(), sizes.windows(2).map(|p| DenseLayer::init(p[0], p[1], &mut rng)).collect()),
        };
        Ok(Self { config, lstm, dense, meta: ModelMeta { seed, ..ModelMeta::default() } })
    }

    /// Digest of the configuration and every parameter bit.
    pub fn fingerprint(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.config).expect("config serialises");
        for p in self.params() {
            for v in p.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::artifact::bytes_hash(&bytes)
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = Vec::new();
        for l in &self.lstm {
            v.push(&l.w);
            v.push(&l.b);
        }
        for l in &self.dense {
            v.push(&l.w);
            v.push(&l.b);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = Vec::new();
        for l in &mut self.lstm {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        for l in &mut self.dense {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v
    }

    /// Tensor names aligned with [`AeModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.lstm.len() {
            v.push(format!("lstm.{i}.w"));
            v.push(format!("lstm.{i}.b"));
        }
        for i in 0..self.dense.len() {
            v.push(format!("dense.{i}.w"));
            v.push(format!("dense.{i}.b"));
        }
        v
    }

    pub fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.params().iter().map(|p| Array2::zeros(p.raw_dim())).collect()
    }

    fn check_input(&self, x: &Batch) -> Result<(), NnError> {
        match x.iter().find(|s| s.ncols() != self.config.input_dim) {
            Some(s) => Err(NnError::Shape { got: s.ncols(), expected: self.config.input_dim }),
            None => Ok(()),
        }
    }

    /// Reconstruction of a batch.
    pub fn forward(&self, x: &Batch, mode: Mode<'_>) -> Result<(Batch, ForwardCache), NnError> {
        self.check_input(x)?;
        if x.iter().any(|s| s.iter().any(|v| !(-0.5..=1.5).contains(v))) {
            log::warn!("input values far outside [0, 1]; is the window scaled?");
        }
        Ok(match self.config.kind {
            ModelKind::Lstm => self.forward_lstm(x, mode),
            ModelKind::Dense => self.forward_dense(x, mode),
        })
    }

    /// Convenience wrapper for one `m x T` window in evaluation mode.
    pub fn reconstruct(&self, window: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let (y, _) = self.forward(&to_batch(&[window]), Mode::Eval)?;
        Ok(from_batch(&y, 0))
    }

    fn forward_lstm(&self, x: &Batch, mut mode: Mode<'_>) -> (Batch, ForwardCache) {
        let n_enc = self.config.n_encoder();
        let p = self.config.hidden_dropout;
        let mut caches = Vec::with_capacity(self.lstm.len());
        let mut masks = Vec::with_capacity(n_enc);
        let mut h = x.clone();
        for (i, layer) in self.lstm.iter().enumerate() {
            if i == n_enc && self.config.decoder_input == DecoderInput::RepeatVector {
                let last = h.last().expect("non-empty sequence").clone();
                h = vec![last; h.len()];
            }
            let (mut out, cache) = layer.forward(&h);
            caches.push(cache);
            if i < n_enc {
                let mask = match &mut mode {
                    Mode::Train(rng) if p > 0.0 => {
                        let ms: Vec<_> = out.iter().map(|o| dropout_mask(rng, o.dim(), p)).collect();
                        for (o, m) in out.iter_mut().zip(&ms) {
                            *o *= m;
                        }
                        Some(ms)
                    }
                    _ => None,
                };
                masks.push(mask);
            }
            h = out;
        }
        let head = &self.dense[0];
        let y: Batch = h.iter().map(|a| head.forward(a)).collect();
        (y, ForwardCache { lstm: caches, dropout: masks, dense_in: vec![h], dense_out: Vec::new() })
    }

    fn forward_dense(&self, x: &Batch, mut mode: Mode<'_>) -> (Batch, ForwardCache) {
        let n = self.dense.len();
        let n_enc = self.config.n_encoder();
        let p = self.config.hidden_dropout;
        let act = self.config.activation;
        let mut dense_in = Vec::with_capacity(n);
        let mut dense_out = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n_enc);
        let mut h = x.clone();
        for (l, layer) in self.dense.iter().enumerate() {
            let mut out: Batch = h.iter().map(|a| layer.forward(a)).collect();
            if l + 1 < n {
                for o in &mut out {
                    o.mapv_inplace(|v| act.apply(v));
                }
            }
            dense_in.push(std::mem::take(&mut h));
            let mut next = out.clone();
            dense_out.push(out);
            if l < n_enc {
                let mask = match &mut mode {
                    Mode::Train(rng) if p > 0.0 => {
                        let ms: Vec<_> = next.iter().map(|o| dropout_mask(rng, o.dim(), p)).collect();
                        for (o, m) in next.iter_mut().zip(&ms) {
                            *o *= m;
                        }
                        Some(ms)
                    }
                    _ => None,
                };
                masks.push(mask);
            }
            h = next;
        }
        (h, ForwardCache { lstm: Vec::new(), dropout: masks, dense_in, dense_out })
    }

    /// Gradients of the loss w.r.t. all parameters, given `dy = dL/dy`.
    pub fn backward(&self, cache: &ForwardCache, dy: &Batch) -> Vec<Array2<f64>> {
        let mut grads = self.zero_grads();
        match self.config.kind {
            ModelKind::Lstm => self.backward_lstm(cache, dy, &mut grads),
            ModelKind::Dense => self.backward_dense(cache, dy, &mut grads),
        }
        grads
    }

    fn backward_lstm(&self, cache: &ForwardCache, dy: &Batch, grads: &mut [Array2<f64>]) {
        let n_lstm = self.lstm.len();
        let n_enc = self.config.n_encoder();
        let head = &self.dense[0];
        let (lstm_grads, head_grads) = grads.split_at_mut(2 * n_lstm);
        let mut dh: Batch = Vec::with_capacity(dy.len());
        for (d, a) in dy.iter().zip(&cache.dense_in[0]) {
            ndarray::linalg::general_mat_mul(1.0, &d.t(), a, 1.0, &mut head_grads[0]);
            head_grads[1] += &d.sum_axis(Axis(0)).insert_axis(Axis(0));
            dh.push(d.dot(&head.w));
        }
        for i in (0..n_lstm).rev() {
            if i < n_enc {
                if let Some(ms) = &cache.dropout[i] {
                    for (d, m) in dh.iter_mut().zip(ms) {
                        *d *= m;
                    }
                }
            }
            let (gw, gb) = lstm_grads[2 * i..2 * i + 2].split_at_mut(1);
            dh = self.lstm[i].backward(&cache.lstm[i], &dh, &mut gw[0], &mut gb[0]);
            if i == n_enc && self.config.decoder_input == DecoderInput::RepeatVector {
                let total = dh.iter().fold(Array2::zeros(dh[0].raw_dim()), |acc, d| acc + d);
                for d in dh.iter_mut() {
                    d.fill(0.0);
                }
                *dh.last_mut().expect("non-empty") = total;
            }
        }
    }

    fn backward_dense(&self, cache: &ForwardCache, dy: &Batch, grads: &mut [Array2<f64>]) {
        let n = self.dense.len();
        let act = self.config.activation;
        let mut da = dy.clone();
        for l in (0..n).rev() {
            if l + 1 < n {
                if l < cache.dropout.len() {
                    if let Some(ms) = &cache.dropout[l] {
                        for (d, m) in da.iter_mut().zip(ms) {
                            *d *= m;
                        }
                    }
                }
                for (d, y) in da.iter_mut().zip(&cache.dense_out[l]) {
                    Zip::from(d).and(y).for_each(|d, &y| *d *= act.grad_from_output(y));
                }
            }
            let (gw, gb) = grads[2 * l..2 * l + 2].split_at_mut(1);
            for (dz, a) in da.iter().zip(&cache.dense_in[l]) {
                ndarray::linalg::general_mat_mul(1.0, &dz.t(), a, 1.0, &mut gw[0]);
                gb[0] += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            if l > 0 {
                da = da.iter().map(|dz| dz.dot(&self.dense[l].w)).collect();
            }
        }
    }
}
