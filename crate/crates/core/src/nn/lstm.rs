//! Batched LSTM layer with backpropagation through time.
//!
//! Gate weights are stored stacked in the order candidate, update, forget,
//! output, each block `hidden x (hidden + input)` acting on `[a_prev, x_t]`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub const CANDIDATE: usize = 0;
pub const UPDATE: usize = 1;
pub const FORGET: usize = 2;
pub const OUTPUT: usize = 3;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4h x (h + input)`.
    pub w: Array2<f64>,
    /// `1 x 4h`.
    pub b: Array2<f64>,
    pub input: usize,
    pub hidden: usize,
}

/// Intermediates of one time step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    concat: Array2<f64>,
    /// Post-activation gates `[c~, u, f, o]`, `B x 4h`.
    gates: Array2<f64>,
    c_prev: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    steps: Vec<StepCache>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self { w: Array2::zeros((4 * hidden, hidden + input)), b: Array2::zeros((1, 4 * hidden)), input, hidden }
    }

    /// Glorot-uniform kernels per gate, zero biases except the forget gate (1).
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input, hidden);
        let limit = (6.0 / ((hidden + input) + hidden) as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.random_range(-limit..limit));
        layer.b.slice_mut(s![.., FORGET * hidden..(FORGET + 1) * hidden]).fill(1.0);
        layer
    }

    /// Weights of one gate, `h x (h + input)`.
    pub fn gate_weights(&self, gate: usize) -> ArrayView2<'_, f64> {
        self.w.slice(s![gate * self.hidden..(gate + 1) * self.hidden, ..])
    }

    pub fn gate_bias(&self, gate: usize) -> ArrayView2<'_, f64> {
        self.b.slice(s![.., gate * self.hidden..(gate + 1) * self.hidden])
    }

    /// One step: returns `(a_t, c_t, cache)`.
    pub fn cell_forward(
        &self,
        x: ArrayView2<f64>,
        a_prev: ArrayView2<f64>,
        c_prev: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>, StepCache) {
        let h = self.hidden;
        let concat = concatenate(Axis(1), &[a_prev, x]).expect("batch sizes agree");
        let mut gates = concat.dot(&self.w.t()) + &self.b;
        gates.slice_mut(s![.., ..h]).mapv_inplace(f64::tanh);
        gates.slice_mut(s![.., h..]).mapv_inplace(sigmoid);
        let cand = gates.slice(s![.., ..h]);
        let upd = gates.slice(s![.., h..2 * h]);
        let fgt = gates.slice(s![.., 2 * h..3 * h]);
        let out = gates.slice(s![.., 3 * h..]);
        let mut c = Array2::zeros(c_prev.raw_dim());
        Zip::from(&mut c).and(&cand).and(&upd).and(&fgt).and(&c_prev).for_each(|c, &cd, &u, &f, &cp| {
            *c = u * cd + f * cp;
        });
        let tanh_c = c.mapv(f64::tanh);
        let a = &out * &tanh_c;
        let cache = StepCache { concat, gates: gates.clone(), c_prev: c_prev.to_owned(), tanh_c };
        (a, c, cache)
    }

    /// Runs the layer over a sequence with zero initial state.
    pub fn forward(&self, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, LayerCache) {
        let batch = xs.first().map_or(0, |x| x.nrows());
        let mut a = Array2::zeros((batch, self.hidden));
        let mut c = Array2::zeros((batch, self.hidden));
        let mut outs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (a_t, c_t, cache) = self.cell_forward(x.view(), a.view(), c.view());
            outs.push(a_t.clone());
            steps.push(cache);
            a = a_t;
            c = c_t;
        }
        (outs, LayerCache { steps })
    }

    /// BPTT. `d_out[t]` is the loss gradient w.r.t. the layer output at `t`.
    /// Accumulates into `(dw, db)` and returns the input gradients.
    pub fn backward(
        &self,
        cache: &LayerCache,
        d_out: &[Array2<f64>],
        dw: &mut Array2<f64>,
        db: &mut Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let h = self.hidden;
        let n = cache.steps.len();
        let batch = d_out.first().map_or(0, |d| d.nrows());
        let mut da_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = Array2::<f64>::zeros((batch, h));
        let mut dxs = vec![Array2::zeros((0, 0)); n];
        for t in (0..n).rev() {
            let step = &cache.steps[t];
            let da = &d_out[t] + &da_next;
            let g = &step.gates;
            let mut dpre = Array2::zeros((batch, 4 * h));
            let mut dc = Array2::zeros((batch, h));
            Zip::from(&mut dc)
                .and(&dc_next)
                .and(&da)
                .and(&g.slice(s![.., 3 * h..]))
                .and(&step.tanh_c)
                .for_each(|dc, &dcn, &da, &o, &tc| *dc = dcn + da * o * (1.0 - tc * tc));
            {
                let (mut d_cand, rest) = dpre.view_mut().split_at(Axis(1), h);
                let (mut d_upd, rest) = rest.split_at(Axis(1), h);
                let (mut d_fgt, mut d_out_gate) = rest.split_at(Axis(1), h);
                let cand = g.slice(s![.., ..h]);
                let upd = g.slice(s![.., h..2 * h]);
                let fgt = g.slice(s![.., 2 * h..3 * h]);
                let out = g.slice(s![.., 3 * h..]);
                Zip::from(&mut d_cand).and(&dc).and(&upd).and(&cand).for_each(|d, &dc, &u, &cd| {
                    *d = dc * u * (1.0 - cd * cd);
                });
                Zip::from(&mut d_upd).and(&dc).and(&cand).and(&upd).for_each(|d, &dc, &cd, &u| {
                    *d = dc * cd * u * (1.0 - u);
                });
                Zip::from(&mut d_fgt).and(&dc).and(&step.c_prev).and(&fgt).for_each(|d, &dc, &cp, &f| {
                    *d = dc * cp * f * (1.0 - f);
                });
                Zip::from(&mut d_out_gate).and(&da).and(&step.tanh_c).and(&out).for_each(|d, &da, &tc, &o| {
                    *d = da * tc * o * (1.0 - o);
                });
            }
            ndarray::linalg::general_mat_mul(1.0, &dpre.t(), &step.concat, 1.0, dw);
            *db += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dconcat = dpre.dot(&self.w);
            da_next = dconcat.slice(s![.., ..h]).to_owned();
            dxs[t] = dconcat.slice(s![.., h..]).to_owned();
            dc_next = &dc * &g.slice(s![.., 2 * h..3 * h]);
        }
        dxs
    }
}

impl StepCache {
    /// Post-activation gates `[c~, u, f, o]`.
    pub fn gates(&self) -> &Array2<f64> {
        &self.gates
    }
}
