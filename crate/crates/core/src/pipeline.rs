//! Synthetic measurement data: regional load profiles, Dirichlet load mixing,
//! DC economic dispatch and power flow, measurement noise, min-max scaling and
//! sliding windows.

use crate::artifact::{self, ArtifactError};
use crate::grid::{GridCase, GridError, ObservationMatrix};
use crate::seed;
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Regional profiles are synthesised at `steps_per_day / INTERP_FACTOR`
/// points per day and linearly interpolated to the target resolution.
pub const INTERP_FACTOR: usize = 3;

const SERIES_MAGIC: &[u8; 8] = b"GSSERIES";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("region {0} is identically zero")]
    ZeroRegion(usize),
    #[error("dispatch infeasible at step {step}: demand {demand:.4} p.u. outside [{pmin:.4}, {pmax:.4}]")]
    Infeasible { step: usize, demand: f64, pmin: f64, pmax: f64 },
    #[error("series has {n} columns, fewer than the window length {t}")]
    TooShort { n: usize, t: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Shape parameters of the synthetic regional profiles. Each region draws its
/// own amplitudes and phases from these ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Amplitude range of the 24 h harmonic.
    pub daily_amplitude: (f64, f64),
    /// Amplitude range of the 12 h harmonic.
    pub semidaily_amplitude: (f64, f64),
    /// Amplitude range of the weekly sinusoid.
    pub weekly_amplitude: (f64, f64),
    /// AR(1) coefficient of the multiplicative noise, per coarse step.
    pub ar_coeff: f64,
    /// Stationary standard deviation of the log-AR(1) process.
    pub ar_std: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            daily_amplitude: (0.20, 0.35),
            semidaily_amplitude: (0.05, 0.15),
            weekly_amplitude: (0.03, 0.08),
            ar_coeff: 0.98,
            ar_std: 0.10,
        }
    }
}

/// Regional profiles (`n_regions x N`) at the default shape parameters.
pub fn synth_regional_profiles(
    n_regions: usize,
    days: usize,
    steps_per_day: usize,
    seed: u64,
) -> Array2<f64> {
    synth_regional_profiles_with(&ProfileParams::default(), n_regions, days, steps_per_day, seed)
}

/// Each region is `base(hour) * weekly(day) * exp(eps)` where `eps` is a
/// stationary AR(1) process on the coarse grid; the coarse series is then
/// linearly interpolated by [`INTERP_FACTOR`].
pub fn synth_regional_profiles_with(
    params: &ProfileParams,
    n_regions: usize,
    days: usize,
    steps_per_day: usize,
    seed: u64,
) -> Array2<f64> {
    let n = days * steps_per_day;
    let coarse_len = n.div_ceil(INTERP_FACTOR) + 1;
    let coarse_hours = 24.0 * INTERP_FACTOR as f64 / steps_per_day as f64;
    let mut out = Array2::zeros((n_regions, n));
    for r in 0..n_regions {
        let mut rng = seed::rng(seed, "region-profile", r as u64);
        let a1 = rng.random_range(params.daily_amplitude.0..=params.daily_amplitude.1);
        let a2 = rng.random_range(params.semidaily_amplitude.0..=params.semidaily_amplitude.1);
        let aw = rng.random_range(params.weekly_amplitude.0..=params.weekly_amplitude.1);
        let p1 = rng.random_range(15.0..20.0);
        let p2 = rng.random_range(7.0..11.0);
        let pw = rng.random_range(0.0..7.0);
        let innovation = params.ar_std * (1.0 - params.ar_coeff * params.ar_coeff).max(0.0).sqrt();
        let mut eps = params.ar_std * rng.sample::<f64, _>(StandardNormal);
        let mut coarse = Vec::with_capacity(coarse_len);
        for k in 0..coarse_len {
            let hours = k as f64 * coarse_hours;
            let h = hours % 24.0;
            let day = hours / 24.0;
            let base = 1.0 + a1 * (2.0 * PI * (h - p1) / 24.0).cos() + a2 * (4.0 * PI * (h - p2) / 24.0).cos();
            let weekly = 1.0 + aw * (2.0 * PI * (day - pw) / 7.0).cos();
            coarse.push(base * weekly * eps.exp());
            eps = params.ar_coeff * eps + innovation * rng.sample::<f64, _>(StandardNormal);
        }
        for t in 0..n {
            let k = t / INTERP_FACTOR;
            let frac = (t % INTERP_FACTOR) as f64 / INTERP_FACTOR as f64;
            out[[r, t]] = coarse[k] * (1.0 - frac) + coarse[k + 1] * frac;
        }
    }
    out
}

/// Regional profiles rescaled to their drawn peaks `l_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalProfiles {
    pub values: Array2<f64>,
    pub l_max: Vec<f64>,
}

/// `L_i = l_max_i * l_i / max_k l_i` with `l_max_i ~ U(range)`.
pub fn rescale_profiles(
    raw: &Array2<f64>,
    l_max_range: (f64, f64),
    seed: u64,
) -> Result<RegionalProfiles, PipelineError> {
    let (lo, hi) = l_max_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(PipelineError::Config(format!("invalid l_max range ({lo}, {hi})")));
    }
    let mut rng = seed::rng(seed, "l-max", 0);
    let mut values = raw.clone();
    let mut l_max = Vec::with_capacity(raw.nrows());
    for (r, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(PipelineError::ZeroRegion(r));
        }
        let target = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        row.mapv_inplace(|v| v * target / peak);
        l_max.push(target);
    }
    Ok(RegionalProfiles { values, l_max })
}

/// Per-bus load profiles (`n_loads x N`, p.u.).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfileSet {
    pub loads: Array2<f64>,
    /// Bus id of each row of `loads`.
    pub buses: Vec<usize>,
    /// Mixture weights, `n_loads x n_regions`, rows summing to one.
    pub weights: Array2<f64>,
    pub dirichlet_alpha: f64,
    pub interval_minutes: f64,
}

/// Symmetric Dirichlet(`alpha`) draw via normalised Gamma variates.
pub fn dirichlet_weights<R: Rng + ?Sized>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Mixes regional profiles into one profile per load bus and applies
/// multiplicative Gaussian jitter of relative size `jitter` to the
/// interpolated (non-anchor) points.
pub fn assign_loads(
    regional: &RegionalProfiles,
    buses: &[usize],
    alpha: f64,
    jitter: f64,
    steps_per_day: usize,
    seed: u64,
) -> Result<LoadProfileSet, PipelineError> {
    let n_regions = regional.values.nrows();
    if buses.len() < n_regions {
        return Err(PipelineError::Config(format!(
            "{} loads for {n_regions} regions; need at least one load per region",
            buses.len()
        )));
    }
    if !(alpha > 0.0) {
        return Err(PipelineError::Config(format!("dirichlet alpha {alpha} must be positive")));
    }
    let n = regional.values.ncols();
    let mut weights = Array2::zeros((buses.len(), n_regions));
    let mut loads = Array2::zeros((buses.len(), n));
    for (l, _) in buses.iter().enumerate() {
        let mut rng = seed::rng(seed, "load-mixture", l as u64);
        let w = dirichlet_weights(&mut rng, n_regions, alpha);
        for (r, wr) in w.iter().enumerate() {
            weights[[l, r]] = *wr;
        }
        let mut row = weights.row(l).dot(&regional.values);
        for (t, v) in row.iter_mut().enumerate() {
            if t % INTERP_FACTOR != 0 {
                let e: f64 = rng.sample(StandardNormal);
                *v = (*v * (1.0 + jitter * e)).max(0.0);
            }
        }
        loads.row_mut(l).assign(&row);
    }
    Ok(LoadProfileSet {
        loads,
        buses: buses.to_vec(),
        weights,
        dirichlet_alpha: alpha,
        interval_minutes: 24.0 * 60.0 / steps_per_day as f64,
    })
}

/// Largest total load over the horizon, p.u.
pub fn peak_total_load(loads: &LoadProfileSet) -> f64 {
    loads.loads.sum_axis(Axis(0)).iter().cloned().fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSettings {
    /// Half-width of the daily multiplicative cost perturbation.
    pub cost_perturbation: f64,
    pub steps_per_day: usize,
}

/// Noiseless dispatch outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchOutcome {
    /// `m x N` measurements `z = H x`.
    pub z: Array2<f64>,
    /// `(n-1) x N` angle states.
    pub states: Array2<f64>,
}

/// Per-step DC economic dispatch, DC power flow and assembly of the
/// shift-compensated measurement vector `z = H x`.
pub fn dispatch(
    case: &GridCase,
    h: &ObservationMatrix,
    loads: &LoadProfileSet,
    settings: &DispatchSettings,
    seed: u64,
) -> Result<DispatchOutcome, PipelineError> {
    let n = case.n_buses();
    let n_steps = loads.loads.ncols();
    let gens: Vec<_> = case.generators.iter().filter(|g| g.in_service).collect();
    let gen_bus: Vec<usize> =
        gens.iter().map(|g| case.bus_index(g.bus).expect("validated generator bus")).collect();
    let ref_idx = case.bus_index(case.slack_bus).ok_or(GridError::UnknownBus(case.slack_bus))?;
    let slack_gen = gens
        .iter()
        .position(|g| g.bus == case.slack_bus)
        .or_else(|| (0..gens.len()).max_by(|&a, &b| gens[a].pmax.total_cmp(&gens[b].pmax)))
        .ok_or_else(|| PipelineError::Config("case has no in-service generator".into()))?;
    let load_idx: Vec<usize> = loads
        .buses
        .iter()
        .map(|b| case.bus_index(*b).ok_or(GridError::UnknownBus(*b)))
        .collect::<Result<_, _>>()?;

    // Constant injections: shunt conductance and phase-shifter offsets.
    let mut fixed = vec![0.0; n];
    for (i, bus) in case.buses.iter().enumerate() {
        fixed[i] -= bus.gs;
    }
    let mut shift_inj = vec![0.0; n];
    for (_, br) in case.in_service_branches() {
        if br.shift != 0.0 {
            let f = case.bus_index(br.from).expect("validated");
            let t = case.bus_index(br.to).expect("validated");
            shift_inj[f] += br.b * br.shift;
            shift_inj[t] -= br.b * br.shift;
        }
    }
    let state_rows: Vec<usize> = (0..n).filter(|&i| i != ref_idx).collect();
    let b_red = h.matrix().select_rows(state_rows.iter());
    let lu = b_red.lu();
    let shunt_total: f64 = case.buses.iter().map(|b| b.gs).sum();
    let pmin_total: f64 = gens.iter().map(|g| g.pmin).sum();
    let pmax_total: f64 = gens.iter().map(|g| g.pmax).sum();

    let mut z = Array2::zeros((h.m(), n_steps));
    let mut states = Array2::zeros((h.n_states(), n_steps));
    let mut costs = Vec::new();
    for t in 0..n_steps {
        let day = t / settings.steps_per_day;
        if t % settings.steps_per_day == 0 {
            let mut rng = seed::rng(seed, "gen-cost", day as u64);
            let p = settings.cost_perturbation;
            costs = gens
                .iter()
                .map(|g| {
                    let f2 = 1.0 + if p > 0.0 { rng.random_range(-p..=p) } else { 0.0 };
                    let f1 = 1.0 + if p > 0.0 { rng.random_range(-p..=p) } else { 0.0 };
                    ((g.cost.c2 * f2).max(1e-6), g.cost.c1 * f1)
                })
                .collect();
        }
        let demand = loads.loads.column(t).sum() + shunt_total;
        if demand > pmax_total + 1e-9 || demand < pmin_total - 1e-9 {
            return Err(PipelineError::Infeasible { step: t, demand, pmin: pmin_total, pmax: pmax_total });
        }
        let mut pg = economic_dispatch(&gens, &costs, demand, case.base_mva);
        let mismatch = demand - pg.iter().sum::<f64>();
        pg[slack_gen] += mismatch;

        let mut p_bus = fixed.clone();
        for (g, p) in gen_bus.iter().zip(&pg) {
            p_bus[*g] += p;
        }
        for (l, &bi) in load_idx.iter().enumerate() {
            p_bus[bi] -= loads.loads[[l, t]];
        }
        let rhs = DVector::from_iterator(state_rows.len(), state_rows.iter().map(|&i| p_bus[i] + shift_inj[i]));
        let x = lu.solve(&rhs).ok_or_else(|| PipelineError::Config("singular reduced B matrix".into()))?;
        let zt = h.apply(&x);
        for (r, v) in zt.iter().enumerate() {
            z[[r, t]] = *v;
        }
        for (c, v) in x.iter().enumerate() {
            states[[c, t]] = *v;
        }
    }
    Ok(DispatchOutcome { z, states })
}

/// Quadratic-cost dispatch by bisection on the system lambda. Costs are in
/// MW units (`c2 P^2 + c1 P`), powers in p.u.
fn economic_dispatch(gens: &[&crate::grid::Generator], costs: &[(f64, f64)], demand: f64, base_mva: f64) -> Vec<f64> {
    let output = |lambda: f64| -> Vec<f64> {
        gens.iter()
            .zip(costs)
            .map(|(g, (c2, c1))| {
                let p_mw = (lambda - c1) / (2.0 * c2);
                (p_mw / base_mva).clamp(g.pmin, g.pmax)
            })
            .collect()
    };
    let marginal = |c: &(f64, f64), p: f64| c.1 + 2.0 * c.0 * p * base_mva;
    let mut lo = gens.iter().zip(costs).map(|(g, c)| marginal(c, g.pmin)).fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = gens.iter().zip(costs).map(|(g, c)| marginal(c, g.pmax)).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if output(mid).iter().sum::<f64>() < demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    output(0.5 * (lo + hi))
}

/// A measurement stream over a contiguous range of time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    /// Noisy measurements, `m x N`, p.u.
    pub raw: Array2<f64>,
    /// True angle states, `(n-1) x N`.
    pub states: Array2<f64>,
    pub noise_sigma: f64,
    /// Index of the first column on the global time axis.
    pub start_step: usize,
    pub steps_per_day: usize,
}

impl MeasurementSeries {
    pub fn m(&self) -> usize {
        self.raw.nrows()
    }

    pub fn len(&self) -> usize {
        self.raw.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.ncols() == 0
    }

    pub fn column(&self, t: usize) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.raw.column(t).iter().cloned())
    }

    /// Columns `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            raw: self.raw.slice(s![.., start..end]).to_owned(),
            states: self.states.slice(s![.., start..end]).to_owned(),
            noise_sigma: self.noise_sigma,
            start_step: self.start_step + start,
            steps_per_day: self.steps_per_day,
        }
    }
}

/// Adds i.i.d. Gaussian noise `N(0, sigma^2)`; the noise of step `t` comes
/// from its own derived stream.
pub fn add_noise(clean: &Array2<f64>, sigma: f64, seed: u64) -> Array2<f64> {
    let mut out = clean.clone();
    for (t, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mut rng = seed::rng(seed, "measurement-noise", t as u64);
        for v in col.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Root mean square over all entries.
pub fn rms(values: &Array2<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Dispatch plus measurement noise with `sigma = noise_ratio * rms(z_clean)`.
pub fn dispatch_and_measure(
    case: &GridCase,
    h: &ObservationMatrix,
    loads: &LoadProfileSet,
    settings: &DispatchSettings,
    noise_ratio: f64,
    seed: u64,
) -> Result<MeasurementSeries, PipelineError> {
    let outcome = dispatch(case, h, loads, settings, seed)?;
    let sigma = noise_ratio * rms(&outcome.z);
    let raw = if sigma > 0.0 { add_noise(&outcome.z, sigma, seed) } else { outcome.z };
    Ok(MeasurementSeries {
        raw,
        states: outcome.states,
        noise_sigma: sigma,
        start_step: 0,
        steps_per_day: settings.steps_per_day,
    })
}

/// Per-attribute min-max scaler. Constant attributes map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Attributes with `max == min` on the fitting range.
    pub constant: Vec<bool>,
}

impl MinMaxScaler {
    /// Fits on the columns of `z` (`m x N`).
    pub fn fit(z: &Array2<f64>) -> Result<Self, PipelineError> {
        if z.ncols() == 0 {
            return Err(PipelineError::Config("cannot fit a scaler on an empty range".into()));
        }
        let mut min = Vec::with_capacity(z.nrows());
        let mut max = Vec::with_capacity(z.nrows());
        for row in z.axis_iter(Axis(0)) {
            min.push(row.iter().cloned().fold(f64::INFINITY, f64::min));
            max.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        let constant = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        Ok(Self { min, max, constant })
    }

    pub fn m(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, row: usize, v: f64) -> f64 {
        if self.constant[row] {
            0.0
        } else {
            (v - self.min[row]) / (self.max[row] - self.min[row])
        }
    }

    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = z.clone();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| self.scale_value(r, v));
        }
        out
    }

    pub fn apply_vector(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(r, v)| self.scale_value(r, *v)).collect()
    }

    /// Inverse map; constant attributes return their fitted value.
    pub fn invert(&self, scaled: &Array2<f64>) -> Array2<f64> {
        let mut out = scaled.clone();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (lo, hi) = (self.min[r], self.max[r]);
            if self.constant[r] {
                row.fill(lo);
            } else {
                row.mapv_inplace(|v| lo + v * (hi - lo));
            }
        }
        out
    }
}

/// Length-`T`, stride-1 windows over a scaled `m x N` series. Windows are
/// views into the series rather than copies.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    data: Array2<f64>,
    t: usize,
}

pub fn make_windows(z_scaled: Array2<f64>, t: usize) -> Result<WindowTensor, PipelineError> {
    if t == 0 || z_scaled.ncols() < t {
        return Err(PipelineError::TooShort { n: z_scaled.ncols(), t });
    }
    Ok(WindowTensor { data: z_scaled, t })
}

impl WindowTensor {
    pub fn len(&self) -> usize {
        self.data.ncols() + 1 - self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_len(&self) -> usize {
        self.t
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    /// Window `i`: columns `i .. i + T`.
    pub fn window(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![.., i..i + self.t])
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Random partition of `0..n` into `(train, validation)` index lists.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed, "train-validation-split", 0));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let val = idx.split_off(n_train.min(n));
    (idx, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_regions: usize,
    pub train_days: usize,
    pub test_days: usize,
    pub steps_per_day: usize,
    pub l_max_range: (f64, f64),
    pub dirichlet_alpha: f64,
    pub jitter: f64,
    pub noise_ratio: f64,
    pub cost_perturbation: f64,
    /// Loads are scaled down when their peak total exceeds this fraction of
    /// the total generation capacity.
    pub capacity_margin: f64,
    pub window: usize,
    pub train_fraction: f64,
    pub profile: ProfileParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_regions: 4,
            train_days: 60,
            test_days: 20,
            steps_per_day: 288,
            l_max_range: (0.25, 2.75),
            dirichlet_alpha: 0.2,
            jitter: 0.02,
            noise_ratio: 0.01,
            cost_perturbation: 0.1,
            capacity_margin: 0.8,
            window: 6,
            train_fraction: 0.8,
            profile: ProfileParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.n_regions == 0 {
            return bad("n_regions must be positive".into());
        }
        if self.train_days == 0 {
            return bad("train_days must be positive".into());
        }
        if self.steps_per_day == 0 {
            return bad("steps_per_day must be positive".into());
        }
        if self.window == 0 || self.window > self.train_days * self.steps_per_day {
            return bad(format!("window {} does not fit the training range", self.window));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} not in (0,1)", self.train_fraction));
        }
        if !(self.noise_ratio >= 0.0 && self.jitter >= 0.0 && self.cost_perturbation >= 0.0) {
            return bad("noise_ratio, jitter and cost_perturbation must be non-negative".into());
        }
        if !(self.capacity_margin > 0.0 && self.capacity_margin <= 1.0) {
            return bad(format!("capacity_margin {} not in (0,1]", self.capacity_margin));
        }
        Ok(())
    }
}

/// Generated data: a training range followed by a disjoint test range.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: MeasurementSeries,
    pub test: MeasurementSeries,
    pub scaler: MinMaxScaler,
    pub train_scaled: Array2<f64>,
    pub test_scaled: Array2<f64>,
    /// Window indices (into the training windows) used for fitting.
    pub train_windows: Vec<usize>,
    /// Held-out training windows for validation and threshold calibration.
    pub val_windows: Vec<usize>,
    /// Factor applied to all loads to respect the capacity margin (1 if none).
    pub load_scale: f64,
    pub window: usize,
}

impl Dataset {
    pub fn train_tensor(&self) -> WindowTensor {
        WindowTensor { data: self.train_scaled.clone(), t: self.window }
    }

    pub fn test_tensor(&self) -> WindowTensor {
        WindowTensor { data: self.test_scaled.clone(), t: self.window }
    }
}

/// Runs the whole data recipe for `case`.
pub fn generate_dataset(
    case: &GridCase,
    h: &ObservationMatrix,
    config: &PipelineConfig,
    seed: u64,
) -> Result<Dataset, PipelineError> {
    config.validate()?;
    let days = config.train_days + config.test_days;
    let raw = synth_regional_profiles_with(&config.profile, config.n_regions, days, config.steps_per_day, seed);
    let regional = rescale_profiles(&raw, config.l_max_range, seed)?;
    let mut loads = assign_loads(
        &regional,
        &case.load_buses(),
        config.dirichlet_alpha,
        config.jitter,
        config.steps_per_day,
        seed,
    )?;
    let limit = config.capacity_margin * case.generation_capacity();
    let peak = peak_total_load(&loads);
    let load_scale = if peak > limit { limit / peak } else { 1.0 };
    if load_scale < 1.0 {
        loads.loads.mapv_inplace(|v| v * load_scale);
    }
    let settings =
        DispatchSettings { cost_perturbation: config.cost_perturbation, steps_per_day: config.steps_per_day };
    let series = dispatch_and_measure(case, h, &loads, &settings, config.noise_ratio, seed)?;
    let split = config.train_days * config.steps_per_day;
    let train = series.slice(0, split);
    let test = series.slice(split, series.len());
    let scaler = MinMaxScaler::fit(&train.raw)?;
    let train_scaled = scaler.apply(&train.raw);
    let test_scaled = scaler.apply(&test.raw);
    let n_windows = split + 1 - config.window;
    let (train_windows, val_windows) = split_indices(n_windows, config.train_fraction, seed);
    Ok(Dataset {
        train,
        test,
        scaler,
        train_scaled,
        test_scaled,
        train_windows,
        val_windows,
        load_scale,
        window: config.window,
    })
}

/// Header of a persisted [`MeasurementSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesHeader {
    pub format_version: u32,
    pub m: usize,
    pub n_states: usize,
    pub n_steps: usize,
    pub noise_sigma: f64,
    pub start_step: usize,
    pub steps_per_day: usize,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default)]
    pub scaler: Option<MinMaxScaler>,
}

/// Writes `raw` then `states`, both row-major.
pub fn save_series(
    path: &Path,
    series: &MeasurementSeries,
    scaler: Option<&MinMaxScaler>,
    seed: u64,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let header = SeriesHeader {
        format_version: artifact::FORMAT_VERSION,
        m: series.m(),
        n_states: series.states.nrows(),
        n_steps: series.len(),
        noise_sigma: series.noise_sigma,
        start_step: series.start_step,
        steps_per_day: series.steps_per_day,
        seed,
        config_hash: config_hash.to_string(),
        scaler: scaler.cloned(),
    };
    let mut payload: Vec<f64> = series.raw.iter().cloned().collect();
    payload.extend(series.states.iter().cloned());
    artifact::write_container(path, SERIES_MAGIC, &header, &payload)?;
    Ok(())
}

pub fn load_series(path: &Path) -> Result<(SeriesHeader, MeasurementSeries), PipelineError> {
    let (value, payload) = artifact::read_container(path, SERIES_MAGIC, "measurement series")?;
    let header: SeriesHeader = artifact::parse_header(value)?;
    let raw_len = header.m * header.n_steps;
    let expected = raw_len + header.n_states * header.n_steps;
    if payload.len() != expected {
        return Err(ArtifactError::Shape {
            name: "series".into(),
            detail: format!("header implies {expected} values, file has {}", payload.len()),
        }
        .into());
    }
    let raw = Array2::from_shape_vec((header.m, header.n_steps), payload[..raw_len].to_vec())
        .expect("length checked");
    let states = Array2::from_shape_vec((header.n_states, header.n_steps), payload[raw_len..].to_vec())
        .expect("length checked");
    let series = MeasurementSeries {
        raw,
        states,
        noise_sigma: header.noise_sigma,
        start_step: header.start_step,
        steps_per_day: header.steps_per_day,
    };
    Ok((header, series))
}

/// CSV with one row per time step: `step,<tag>,<tag>,...`.
pub fn series_to_csv(z: &Array2<f64>, tags: &[String], start_step: usize) -> String {
    let mut out = String::from("step");
    for tag in tags {
        out.push(',');
        out.push_str(tag);
    }
    out.push('\n');
    for (t, col) in z.axis_iter(Axis(1)).enumerate() {
        out.push_str(&(start_step + t).to_string());
        for v in col.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Converts an `m`-vector column of `z` to a nalgebra vector.
pub fn column_vector(z: &Array2<f64>, t: usize) -> DVector<f64> {
    DVector::from_iterator(z.nrows(), z.column(t).iter().cloned())
}

/// Dense copy of an `ndarray` matrix.
pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}
