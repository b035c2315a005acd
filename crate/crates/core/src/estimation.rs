//! Weighted least-squares DC state estimation and residual-based bad-data
//! detection.
//!
//! The estimator whitens `H` by `E^{-1/2}` and solves the least-squares
//! problem through a thin QR factorisation, so the normal matrix
//! `H^T E^{-1} H` is never formed.

use crate::grid::ObservationMatrix;
use crate::seed;
use crate::stats;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, thiserror::Error)]
pub enum EstimationError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("normal matrix is singular (|R_jj| = {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("invalid threshold configuration: {0}")]
    Threshold(String),
}

/// Diagonal measurement covariance `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    variances: Vec<f64>,
    sigma_default: f64,
}

impl NoiseModel {
    /// `E = sigma^2 I`.
    pub fn uniform(m: usize, sigma: f64) -> Result<Self, EstimationError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(EstimationError::Noise(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { variances: vec![sigma * sigma; m], sigma_default: sigma })
    }

    pub fn diagonal(variances: Vec<f64>) -> Result<Self, EstimationError> {
        if variances.is_empty() || variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EstimationError::Noise("all variances must be finite and positive".into()));
        }
        let sigma_default = (variances.iter().sum::<f64>() / variances.len() as f64).sqrt();
        Ok(Self { variances, sigma_default })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sigma_default(&self) -> f64 {
        self.sigma_default
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    /// Returns a copy with every variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, EstimationError> {
        let mut out = Self::diagonal(self.variances.iter().map(|v| v * factor).collect())?;
        out.sigma_default = self.sigma_default * factor.sqrt();
        Ok(out)
    }

    /// One draw of `e ~ N(0, E)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.variances.len(),
            self.variances.iter().map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                z * v.sqrt()
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// Estimated non-reference angles, radians.
    pub x_hat: DVector<f64>,
    /// `r(z) = ||z - H x_hat||_2`.
    pub residual_norm: f64,
    /// `H x_hat`.
    pub z_hat: DVector<f64>,
}

/// A factorised WLS estimator for a fixed `(H, E)` pair.
#[derive(Debug, Clone)]
pub struct StateEstimator {
    h: DMatrix<f64>,
    inv_sigma: DVector<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl StateEstimator {
    pub fn new(h: &ObservationMatrix, noise: &NoiseModel) -> Result<Self, EstimationError> {
        Self::from_matrix(h.matrix(), noise)
    }

    pub fn from_matrix(h: &DMatrix<f64>, noise: &NoiseModel) -> Result<Self, EstimationError> {
        if noise.len() != h.nrows() {
            return Err(EstimationError::Dimension { expected: h.nrows(), found: noise.len() });
        }
        let inv_sigma = DVector::from_iterator(noise.len(), noise.variances().iter().map(|v| 1.0 / v.sqrt()));
        let mut whitened = h.clone();
        for (mut row, w) in whitened.row_iter_mut().zip(inv_sigma.iter()) {
            row *= *w;
        }
        let qr = whitened.qr();
        let q = qr.q();
        let r = qr.r();
        let max_pivot = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for (j, pivot) in r.diagonal().iter().enumerate() {
            if !(pivot.abs() > crate::grid::RANK_TOLERANCE * max_pivot) {
                return Err(EstimationError::Singular { column: j, pivot: pivot.abs() });
            }
        }
        Ok(Self { h: h.clone(), inv_sigma, q, r })
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// `x_hat = (H^T E^-1 H)^-1 H^T E^-1 z`.
    pub fn estimate(&self, z: &DVector<f64>) -> Result<EstimationResult, EstimationError> {
        if z.len() != self.m() {
            return Err(EstimationError::Dimension { expected: self.m(), found: z.len() });
        }
        let zw = z.component_mul(&self.inv_sigma);
        let qtz = self.q.tr_mul(&zw);
        let x_hat = self
            .r
            .solve_upper_triangular(&qtz)
            .ok_or(EstimationError::Singular { column: 0, pivot: 0.0 })?;
        let z_hat = &self.h * &x_hat;
        let residual_norm = (z - &z_hat).norm();
        Ok(EstimationResult { x_hat, residual_norm, z_hat })
    }

    pub fn residual_norm(&self, z: &DVector<f64>) -> Result<f64, EstimationError> {
        Ok(self.estimate(z)?.residual_norm)
    }
}

/// One-shot WLS estimate.
pub fn wls_estimate(
    z: &DVector<f64>,
    h: &ObservationMatrix,
    noise: &NoiseModel,
) -> Result<EstimationResult, EstimationError> {
    StateEstimator::new(h, noise)?.estimate(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// `tau1^2 / sigma^2` is the chi-square quantile with `m - (n-1)` degrees
    /// of freedom at `significance`.
    ChiSquare { significance: f64 },
    /// `alpha`-quantile of residual norms of simulated clean measurements.
    EmpiricalQuantile { alpha: f64 },
}

impl Default for ThresholdMethod {
    fn default() -> Self {
        ThresholdMethod::EmpiricalQuantile { alpha: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BddThreshold {
    pub tau1: f64,
    pub method: ThresholdMethod,
}

/// Alarm iff `r(z) >= tau1`.
pub fn bdd_detect(
    z: &DVector<f64>,
    h: &ObservationMatrix,
    noise: &NoiseModel,
    threshold: &BddThreshold,
) -> Result<bool, EstimationError> {
    Ok(wls_estimate(z, h, noise)?.residual_norm >= threshold.tau1)
}

impl BddThreshold {
    pub fn alarms(&self, residual_norm: f64) -> bool {
        residual_norm >= self.tau1
    }
}

/// Calibrates the bad-data threshold. The residual does not depend on the
/// true state, so the empirical method only simulates noise draws.
pub fn calibrate_tau1(
    h: &ObservationMatrix,
    noise: &NoiseModel,
    method: ThresholdMethod,
    n_samples: usize,
    seed: u64,
) -> Result<BddThreshold, EstimationError> {
    let dof = h.m() as i64 - h.n_states() as i64;
    let tau1 = match method {
        ThresholdMethod::ChiSquare { significance } => {
            if !(significance > 0.0 && significance < 1.0) {
                return Err(EstimationError::Threshold(format!("significance {significance} not in (0,1)")));
            }
            if dof < 1 {
                return Err(EstimationError::Threshold("no redundancy: m - (n-1) < 1".into()));
            }
            chi_square_tau1(dof as f64, significance, noise.sigma_default())?
        }
        ThresholdMethod::EmpiricalQuantile { alpha } => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(EstimationError::Threshold(format!("alpha {alpha} not in (0,1]")));
            }
            if n_samples < 1000 {
                return Err(EstimationError::Threshold(format!("need at least 1000 samples, got {n_samples}")));
            }
            let est = StateEstimator::new(h, noise)?;
            let mut rng = seed::rng(seed, "bdd-calibration", 0);
            let mut norms = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                norms.push(est.residual_norm(&noise.sample(&mut rng))?);
            }
            stats::quantile(&norms, alpha)
        }
    };
    if !(tau1 > 0.0) {
        return Err(EstimationError::Threshold(format!("calibrated tau1 = {tau1} is not positive")));
    }
    Ok(BddThreshold { tau1, method })
}

/// `tau1 = sigma * sqrt(chi2_inv(significance; dof))`.
pub fn chi_square_tau1(dof: f64, significance: f64, sigma: f64) -> Result<f64, EstimationError> {
    let chi = ChiSquared::new(dof).map_err(|e| EstimationError::Threshold(e.to_string()))?;
    Ok(sigma * chi.inverse_cdf(significance).sqrt())
}

/// Imperfect-attack stealth condition `||a - H c*|| <= tau1 - ||z - H x_hat||`,
/// where `c*` is the state shift the estimator attributes to `a`.
pub fn check_stealth(
    a: &DVector<f64>,
    z: &DVector<f64>,
    h: &ObservationMatrix,
    noise: &NoiseModel,
    threshold: &BddThreshold,
) -> Result<bool, EstimationError> {
    let est = StateEstimator::new(h, noise)?;
    stealth_margin(&est, a, z, threshold).map(|margin| margin >= 0.0)
}

/// `tau1 - ||z - H x_hat|| - ||a - H c*||`; non-negative when stealthy.
pub fn stealth_margin(
    est: &StateEstimator,
    a: &DVector<f64>,
    z: &DVector<f64>,
    threshold: &BddThreshold,
) -> Result<f64, EstimationError> {
    if a.len() != est.m() {
        return Err(EstimationError::Dimension { expected: est.m(), found: a.len() });
    }
    let off_range = est.estimate(a)?.residual_norm;
    let clean = est.estimate(z)?.residual_norm;
    Ok(threshold.tau1 - clean - off_range)
}
