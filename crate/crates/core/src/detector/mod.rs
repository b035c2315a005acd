//! Reconstruction-error scores, thresholds per missing-ratio bucket, alarms
//! and detection metrics.

mod report;

pub use report::{line_chart_svg, render_reports_csv, CampaignReport, ChartSeries, FprCurve};

use crate::artifact::{self, ArtifactError, FORMAT_VERSION};
use crate::attack::{apply_scenario, masked_count, AttackError, AttackKind, AttackScenario, MaskScheme};
use crate::estimation::StateEstimator;
use crate::grid::ObservationMatrix;
use crate::nn::{to_batch, AeModel, Mode, NnError};
use crate::pipeline::MinMaxScaler;
use crate::{seed, stats};
use ndarray::{s, Array2, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Representative missing ratios of the default bucket table.
pub const DEFAULT_GAMMAS: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

const SCORE_CHUNK: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("lineage mismatch: {0}")]
    Lineage(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// The last `t` columns of `window`.
pub fn fit_window(window: ArrayView2<'_, f64>, t: usize) -> ArrayView2<'_, f64> {
    let n = window.ncols();
    window.slice_move(s![.., n.saturating_sub(t)..])
}

/// Scores of scaled windows (`m x T` each, `T` = model window) whose final
/// columns miss the listed rows. Each score is the mean over columns of the
/// per-column squared error; the final column averages over available rows
/// only, and the model sees the missing rows as zeros.
pub fn score_batch(
    model: &AeModel,
    windows: &[ArrayView2<f64>],
    missing: &[Vec<usize>],
) -> Result<Vec<f64>, DetectorError> {
    assert_eq!(windows.len(), missing.len(), "one missing-row list per window");
    let mut scores = Vec::with_capacity(windows.len());
    for (chunk_w, chunk_m) in windows.chunks(SCORE_CHUNK).zip(missing.chunks(SCORE_CHUNK)) {
        let inputs: Vec<Array2<f64>> = chunk_w
            .iter()
            .zip(chunk_m)
            .map(|(w, miss)| {
                let mut x = w.to_owned();
                let last = x.ncols() - 1;
                for &r in miss {
                    x[[r, last]] = 0.0;
                }
                x
            })
            .collect();
        let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
        let (y, _) = model.forward(&to_batch(&views), Mode::Eval)?;
        let t = y.len();
        for (b, (w, miss)) in chunk_w.iter().zip(chunk_m).enumerate() {
            let m = w.nrows();
            let mut total = 0.0;
            for (step, ys) in y.iter().enumerate() {
                let err = |r: usize| (ys[[b, r]] - w[[r, step]]).powi(2);
                if step + 1 < t || miss.is_empty() {
                    total += (0..m).map(err).sum::<f64>() / m as f64;
                } else {
                    let mut skip = vec![false; m];
                    for &r in miss {
                        skip[r] = true;
                    }
                    let avail = m - miss.len();
                    if avail > 0 {
                        total += (0..m).filter(|r| !skip[*r]).map(err).sum::<f64>() / avail as f64;
                    }
                }
            }
            scores.push(total / t as f64);
        }
    }
    Ok(scores)
}

pub fn score(model: &AeModel, window: ArrayView2<f64>, missing: &[usize]) -> Result<f64, DetectorError> {
    Ok(score_batch(model, &[window], &[missing.to_vec()])?[0])
}

/// Bucket edges around sorted representative ratios: midpoints between
/// neighbours, starting at 0 and open-ended at the top.
pub fn bucket_edges(gammas: &[f64]) -> Vec<(f64, Option<f64>)> {
    (0..gammas.len())
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { (gammas[i - 1] + gammas[i]) / 2.0 };
            let hi = gammas.get(i + 1).map(|g| (gammas[i] + g) / 2.0);
            (lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    /// Exclusive upper edge; `None` for the open-ended last bucket.
    pub hi: Option<f64>,
    pub gamma: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub format_version: u32,
    pub alpha: f64,
    pub buckets: Vec<Bucket>,
    /// Sorted clean validation scores behind each bucket's threshold.
    pub validation_scores: Vec<Vec<f64>>,
    pub seed: u64,
    /// Fingerprint of the model the table was calibrated with.
    pub model_hash: String,
}

/// Rows blinded in the final column of validation window `i` at ratio `gamma`.
pub fn calibration_missing(m: usize, gamma: f64, seed: u64, i: usize) -> Vec<usize> {
    let count = masked_count(gamma, m);
    if count == 0 {
        return Vec::new();
    }
    let stream = ((gamma * 1e6).round() as u64) << 32 | i as u64;
    let mut rng = seed::rng(seed, "calibration-mask", stream);
    let mut rows = sample(&mut rng, m, count).into_vec();
    rows.sort_unstable();
    rows
}

fn bucket_scores(
    model: &AeModel,
    windows: &[ArrayView2<f64>],
    gamma: f64,
    seed: u64,
) -> Result<Vec<f64>, DetectorError> {
    let t = model.config.window;
    let views: Vec<_> = windows.iter().map(|w| fit_window(*w, t)).collect();
    let missing: Vec<Vec<usize>> =
        (0..windows.len()).map(|i| calibration_missing(model.config.input_dim, gamma, seed, i)).collect();
    let mut scores = score_batch(model, &views, &missing)?;
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Ok(scores)
}

fn check_alpha(alpha: f64) -> Result<(), DetectorError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(DetectorError::Config(format!("alpha {alpha} not in (0, 1]")))
    }
}

/// Thresholds at the `alpha`-quantile of clean validation scores, one per
/// representative ratio in `gammas`, with the final column blinded MCAR.
pub fn calibrate_thresholds(
    model: &AeModel,
    validation: &[ArrayView2<f64>],
    gammas: &[f64],
    alpha: f64,
    seed: u64,
) -> Result<ThresholdTable, DetectorError> {
    check_alpha(alpha)?;
    if validation.is_empty() {
        return Err(DetectorError::EmptyValidation);
    }
    let mut sorted = gammas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    sorted.dedup();
    if sorted.is_empty() || sorted[0] < 0.0 || sorted[sorted.len() - 1] >= 1.0 {
        return Err(DetectorError::Config(format!("bucket ratios {gammas:?} must be non-empty and in [0, 1)")));
    }
    let mut table = ThresholdTable {
        format_version: FORMAT_VERSION,
        alpha,
        buckets: Vec::new(),
        validation_scores: Vec::new(),
        seed,
        model_hash: model.fingerprint(),
    };
    for g in sorted {
        table.validation_scores.push(bucket_scores(model, validation, g, seed)?);
        table.buckets.push(Bucket { lo: 0.0, hi: None, gamma: g, tau2: 0.0 });
    }
    table.refresh();
    Ok(table)
}

impl ThresholdTable {
    /// Recomputes edges and thresholds from the stored scores.
    fn refresh(&mut self) {
        let gammas: Vec<f64> = self.buckets.iter().map(|b| b.gamma).collect();
        for ((b, (lo, hi)), scores) in self.buckets.iter_mut().zip(bucket_edges(&gammas)).zip(&self.validation_scores) {
            b.lo = lo;
            b.hi = hi;
            b.tau2 = stats::quantile_sorted(scores, self.alpha);
        }
    }

    /// Adds (or replaces) the bucket for `gamma` without retraining.
    pub fn add_bucket(
        &mut self,
        model: &AeModel,
        validation: &[ArrayView2<f64>],
        gamma: f64,
    ) -> Result<(), DetectorError> {
        self.check_model(model)?;
        if validation.is_empty() {
            return Err(DetectorError::EmptyValidation);
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(DetectorError::Config(format!("ratio {gamma} not in [0, 1)")));
        }
        let scores = bucket_scores(model, validation, gamma, self.seed)?;
        let pos = self.buckets.iter().position(|b| b.gamma >= gamma).unwrap_or(self.buckets.len());
        if self.buckets.get(pos).is_some_and(|b| b.gamma == gamma) {
            self.validation_scores[pos] = scores;
        } else {
            self.buckets.insert(pos, Bucket { lo: 0.0, hi: None, gamma, tau2: 0.0 });
            self.validation_scores.insert(pos, scores);
        }
        self.refresh();
        Ok(())
    }

    /// The same table at another quantile.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, DetectorError> {
        check_alpha(alpha)?;
        let mut t = self.clone();
        t.alpha = alpha;
        t.refresh();
        Ok(t)
    }

    pub fn bucket_index(&self, fraction: f64) -> usize {
        self.buckets.iter().rposition(|b| fraction >= b.lo).unwrap_or(0)
    }

    pub fn bucket_for(&self, fraction: f64) -> &Bucket {
        &self.buckets[self.bucket_index(fraction)]
    }

    /// Alarm rule: `score >= tau2` of the bucket of the observed missing fraction.
    pub fn alarms(&self, score: f64, fraction: f64) -> bool {
        score >= self.bucket_for(fraction).tau2
    }

    pub fn check_model(&self, model: &AeModel) -> Result<(), DetectorError> {
        let fp = model.fingerprint();
        if fp != self.model_hash {
            return Err(DetectorError::Lineage(format!("table calibrated for model {}, got {fp}", self.model_hash)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ArtifactError::Header(e.to_string()))?;
        std::fs::write(path, json).map_err(ArtifactError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = std::fs::read_to_string(path).map_err(ArtifactError::from)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ArtifactError::Header(e.to_string()))?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(ArtifactError::Version { found, expected: FORMAT_VERSION }.into());
        }
        Ok(artifact::parse_header(value)?)
    }
}

/// Alarm for one scaled window given its observed missing rows.
pub fn detect(
    model: &AeModel,
    table: &ThresholdTable,
    window: ArrayView2<f64>,
    missing: &[usize],
) -> Result<bool, DetectorError> {
    let s = score(model, fit_window(window, model.config.window), missing)?;
    Ok(table.alarms(s, missing.len() as f64 / window.nrows() as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn add(&mut self, attacked: bool, alarm: bool) {
        match (attacked, alarm) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// Zero when nothing alarmed.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        self.tpr()
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Inputs shared by every scenario of a campaign.
pub struct EvalContext<'a> {
    pub h: &'a ObservationMatrix,
    pub estimator: &'a StateEstimator,
    pub scaler: &'a MinMaxScaler,
    /// Raw test measurements (`m x steps`).
    pub test_raw: &'a Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub id: usize,
    pub kind: AttackKind,
    pub bus: Option<usize>,
    pub mu: f64,
    pub steps: usize,
    pub gamma_target: f64,
    pub scheme: String,
    /// Realised missing fraction of the final column.
    pub fraction: f64,
    pub score: f64,
    /// Score of the same window and mask without the attack.
    pub clean_score: f64,
    pub alarm: bool,
    pub clean_alarm: bool,
}

fn scheme_label(scheme: &MaskScheme) -> &'static str {
    match scheme {
        MaskScheme::None => "none",
        MaskScheme::Mcar { .. } => "mcar",
        MaskScheme::MarNeighborhood { .. } => "neighborhood",
    }
}

/// Scores every scenario and its unattacked twin (same window, same mask).
pub fn score_scenarios(
    model: &AeModel,
    table: &ThresholdTable,
    ctx: &EvalContext<'_>,
    scenarios: &[AttackScenario],
) -> Result<Vec<ScenarioOutcome>, DetectorError> {
    table.check_model(model)?;
    let t = model.config.window;
    let m = ctx.h.m();
    let mut attacked = Vec::with_capacity(scenarios.len());
    let mut clean = Vec::with_capacity(scenarios.len());
    let mut missing = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        if sc.window_len < t {
            return Err(DetectorError::Config(format!("scenario {} window {} < model window {t}", sc.id, sc.window_len)));
        }
        let w = apply_scenario(sc, ctx.test_raw, ctx.h, ctx.estimator)?;
        let raw_clean = ctx.test_raw.slice(s![.., sc.window_start..sc.window_start + sc.window_len]).to_owned();
        attacked.push(ctx.scaler.apply(&fit_window(w.raw.view(), t).to_owned()));
        clean.push(ctx.scaler.apply(&fit_window(raw_clean.view(), t).to_owned()));
        missing.push(sc.mask.indices.iter().collect::<Vec<usize>>());
    }
    let av: Vec<_> = attacked.iter().map(|a| a.view()).collect();
    let cv: Vec<_> = clean.iter().map(|a| a.view()).collect();
    let scores = score_batch(model, &av, &missing)?;
    let clean_scores = score_batch(model, &cv, &missing)?;
    Ok(scenarios
        .iter()
        .zip(scores.iter().zip(&clean_scores))
        .zip(&missing)
        .map(|((sc, (&score, &clean_score)), miss)| {
            let fraction = miss.len() as f64 / m as f64;
            ScenarioOutcome {
                id: sc.id,
                kind: sc.kind,
                bus: sc.bus,
                mu: sc.mu,
                steps: sc.steps,
                gamma_target: sc.gamma_target,
                scheme: scheme_label(&sc.mask.scheme).to_string(),
                fraction,
                score,
                clean_score,
                alarm: table.alarms(score, fraction),
                clean_alarm: table.alarms(clean_score, fraction),
            }
        })
        .collect())
}

/// Grouping of scenario outcomes into report rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    /// One row per target bus instead of averaging over buses.
    pub per_bus: bool,
    /// Keep the sign of `mu`; by default `+mu` and `-mu` share a row.
    pub signed_mu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupKey {
    pub kind: AttackKind,
    pub bus: Option<usize>,
    pub mu: f64,
    pub gamma: f64,
    pub scheme: String,
    pub steps: usize,
}

impl GroupKey {
    fn of(o: &ScenarioOutcome, g: Grouping) -> Self {
        // Combined attacks share rows with plain FDIAs; gamma tells them apart.
        let kind = if o.kind == AttackKind::Combined { AttackKind::Fdia } else { o.kind };
        GroupKey {
            kind,
            bus: if g.per_bus { o.bus } else { None },
            mu: if g.signed_mu { o.mu } else { o.mu.abs() },
            gamma: o.gamma_target,
            scheme: o.scheme.clone(),
            steps: o.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// `None` for the clean-data row.
    pub key: Option<GroupKey>,
    pub confusion: Confusion,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DetectionReport {
    pub fn new(key: Option<GroupKey>, confusion: Confusion) -> Self {
        Self {
            key,
            tpr: confusion.tpr(),
            fpr: confusion.fpr(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            confusion,
        }
    }
}

/// One row per grouping key. Positives are the attacked windows of the
/// group; negatives are their unattacked twins under the same mask.
pub fn group_outcomes(outcomes: &[ScenarioOutcome], grouping: Grouping) -> Vec<DetectionReport> {
    let mut groups: Vec<(GroupKey, Confusion)> = Vec::new();
    for o in outcomes {
        let key = GroupKey::of(o, grouping);
        let idx = match groups.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, Confusion::default()));
                groups.len() - 1
            }
        };
        groups[idx].1.add(true, o.alarm);
        groups[idx].1.add(false, o.clean_alarm);
    }
    groups.into_iter().map(|(k, c)| DetectionReport::new(Some(k), c)).collect()
}

/// Scores of clean scaled test windows with the final column blinded at each
/// bucket's ratio, one sorted list per bucket of `table`.
pub fn clean_bucket_scores(
    model: &AeModel,
    table: &ThresholdTable,
    windows: &[ArrayView2<f64>],
    seed: u64,
) -> Result<Vec<Vec<f64>>, DetectorError> {
    table.buckets.iter().map(|b| bucket_scores(model, windows, b.gamma, seed)).collect()
}

/// Fraction of `scores` at or above the threshold the table would use at `alpha`.
pub fn fpr_at(validation_sorted: &[f64], scores: &[f64], alpha: f64) -> f64 {
    let tau = stats::quantile_sorted(validation_sorted, alpha);
    scores.iter().filter(|s| **s >= tau).count() as f64 / scores.len().max(1) as f64
}

/// Full campaign evaluation: grouped rows, a clean-data row and FPR-vs-alpha
/// curves per bucket on the clean test windows.
pub fn evaluate_campaign(
    model: &AeModel,
    table: &ThresholdTable,
    ctx: &EvalContext<'_>,
    scenarios: &[AttackScenario],
    clean_windows: &[ArrayView2<f64>],
    grouping: Grouping,
    alphas: &[f64],
    seed: u64,
) -> Result<CampaignReport, DetectorError> {
    let outcomes = score_scenarios(model, table, ctx, scenarios)?;
    let mut rows = group_outcomes(&outcomes, grouping);
    let clean_scores = clean_bucket_scores(model, table, clean_windows, seed)?;
    let mut clean = Confusion::default();
    if let Some(base) = clean_scores.first() {
        let tau = table.buckets[0].tau2;
        for s in base {
            clean.add(false, *s >= tau);
        }
    }
    rows.push(DetectionReport::new(None, clean));
    let curves = table
        .buckets
        .iter()
        .zip(&table.validation_scores)
        .zip(&clean_scores)
        .map(|((b, val), test)| FprCurve {
            gamma: b.gamma,
            points: alphas.iter().map(|&a| (a, fpr_at(val, test, a))).collect(),
        })
        .collect();
    Ok(CampaignReport {
        format_version: FORMAT_VERSION,
        seed,
        config_hash: String::new(),
        alpha: table.alpha, model_hash: table.model_hash.clone(), rows, curves, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_edges_follow_the_bucket_table() {
        let e = bucket_edges(&DEFAULT_GAMMAS);
        let want = [(0.0, Some(0.025)), (0.025, Some(0.075)), (0.075, Some(0.125)), (0.125, Some(0.175)), (0.175, None)];
        for ((lo, hi), (wlo, whi)) in e.iter().zip(want) {
            assert!((lo - wlo).abs() < 1e-15);
            match (hi, whi) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-15),
                (None, None) => {}
                _ => panic!("edge mismatch"),
            }
        }
    }

    #[test]
    fn metric_examples() {
        let c = Confusion { tp: 8, fp: 2, tn: 0, fn_: 2 };
        assert!((c.precision() - 0.8).abs() < 1e-15);
        assert!((c.recall() - 0.8).abs() < 1e-15);
        assert!((c.f1() - 0.8).abs() < 1e-15);
        let all = Confusion { tp: 30, fp: 70, tn: 0, fn_: 0 };
        assert_eq!((all.tpr(), all.fpr()), (1.0, 1.0));
        assert!((all.precision() - 0.3).abs() < 1e-15);
        assert_eq!(Confusion::default().precision(), 0.0);
    }
}
