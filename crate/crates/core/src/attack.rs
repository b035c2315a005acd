//! Attack synthesis: stealthy single-state FDIAs, availability masks (MCAR and
//! attack-neighbourhood MAR), successive and replay attacks, and campaigns.

use crate::artifact;
use crate::estimation::{EstimationError, StateEstimator};
use crate::grid::{GridError, MeasurementIndexSet, MeasurementTag, ObservationMatrix};
use crate::seed;
use nalgebra::DVector;
use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Replay offset used by default: the same time on the previous day.
pub const REPLAY_OFFSET: usize = 288;

const MASK_RETRIES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("no feasible availability mask after {attempts} attempts ({reason})")]
    InfeasibleMask { attempts: usize, reason: String },
    #[error("masking the neighbourhood of bus {bus} is not allowed: {reason}")]
    IllegalNeighborhood { bus: usize, reason: String },
    #[error("replay at step {t} needs t >= {t0}")]
    ReplayTooEarly { t: usize, t0: usize },
    #[error("invalid campaign: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

/// Number of entries blinded at missing ratio `ratio` out of `m`. Rounds down
/// so the realised ratio never exceeds the requested one.
pub fn masked_count(ratio: f64, m: usize) -> usize {
    ((ratio * m as f64) + 1e-9).floor().min(m as f64) as usize
}

/// How `mu` is interpreted by [`synth_fdia`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// `c_i = mu * x_ref[i]`.
    #[default]
    Relative,
    /// `c_i = mu` radians.
    Absolute,
}

/// A perfect single-state FDIA `a = H c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fdia {
    pub a: DVector<f64>,
    /// State shift `c`, zero except at the target column.
    pub c: DVector<f64>,
    /// Rows touched by the attack, `{j : H(j, i) != 0}`.
    pub contaminated: MeasurementIndexSet,
}

pub fn synth_fdia(
    h: &ObservationMatrix,
    bus: usize,
    mu: f64,
    x_ref: &DVector<f64>,
    mode: MuMode,
) -> Result<Fdia, AttackError> {
    let col = h.column_of(bus)?;
    if x_ref.len() != h.n_states() {
        return Err(EstimationError::Dimension { expected: h.n_states(), found: x_ref.len() }.into());
    }
    let mut c = DVector::zeros(h.n_states());
    c[col] = match mode {
        MuMode::Relative => mu * x_ref[col],
        MuMode::Absolute => mu,
    };
    let a = h.apply(&c);
    Ok(Fdia { a, c, contaminated: h.column_support(bus)? })
}

/// `N_a(i)`: rows that share a state column with the injection measurements
/// in `I_a(i)`, minus `I_a(i)` itself.
///
/// The injection rows in `I_a(i)` are those of bus `i` and its neighbours;
/// each such injection row is mapped to the state column of its bus (the
/// reference bus has none), and every row with a nonzero in one of those
/// columns is collected.
pub fn attack_neighborhood(h: &ObservationMatrix, bus: usize) -> Result<MeasurementIndexSet, AttackError> {
    let contaminated = h.column_support(bus)?;
    let mut cols = Vec::new();
    for k in contaminated.iter() {
        if let MeasurementTag::Injection { bus: b } = h.tags()[k] {
            if b != h.reference_bus() {
                cols.push(h.column_of(b)?);
            }
        }
    }
    let mut reached = MeasurementIndexSet::new();
    for c in cols {
        for (k, v) in h.matrix().column(c).iter().enumerate() {
            if *v != 0.0 {
                reached.insert(k);
            }
        }
    }
    Ok(reached.difference(&contaminated))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum MaskScheme {
    None,
    Mcar { min: f64, max: f64 },
    MarNeighborhood { bus: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityMask {
    pub indices: MeasurementIndexSet,
    pub gamma: f64,
    pub scheme: MaskScheme,
}

impl AvailabilityMask {
    pub fn none() -> Self {
        Self { indices: MeasurementIndexSet::new(), gamma: 0.0, scheme: MaskScheme::None }
    }
}

/// Uniform blinding of `masked_count(ratio, m)` rows, `ratio ~ U(range)`,
/// drawn from rows outside `exclusions` and `critical`. Draws are repeated
/// until the reduced matrix is observable.
pub fn mcar_mask<R: Rng + ?Sized>(
    h: &ObservationMatrix,
    gamma_range: (f64, f64),
    exclusions: &MeasurementIndexSet,
    critical: &MeasurementIndexSet,
    rng: &mut R,
) -> Result<AvailabilityMask, AttackError> {
    let (lo, hi) = gamma_range;
    if !(0.0 <= lo && lo <= hi && hi <= 0.5) {
        return Err(AttackError::Config(format!("gamma range ({lo}, {hi}) not within [0, 0.5]")));
    }
    let m = h.m();
    let scheme = MaskScheme::Mcar { min: lo, max: hi };
    let ratio = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let count = masked_count(ratio, m);
    if count == 0 {
        return Ok(AvailabilityMask { indices: MeasurementIndexSet::new(), gamma: 0.0, scheme });
    }
    let candidates: Vec<usize> = (0..m).filter(|k| !exclusions.contains(*k) && !critical.contains(*k)).collect();
    if candidates.len() < count {
        return Err(AttackError::InfeasibleMask {
            attempts: 0,
            reason: format!("{count} rows requested, {} eligible", candidates.len()),
        });
    }
    for _ in 0..MASK_RETRIES {
        let indices: MeasurementIndexSet =
            sample(rng, candidates.len(), count).into_iter().map(|i| candidates[i]).collect();
        if h.observable_after_mask(&indices) {
            return Ok(AvailabilityMask { indices, gamma: count as f64 / m as f64, scheme });
        }
    }
    Err(AttackError::InfeasibleMask { attempts: MASK_RETRIES, reason: "every draw was unobservable".into() })
}

/// Blinds the attack neighbourhood of `bus`.
pub fn mar_mask(h: &ObservationMatrix, bus: usize) -> Result<AvailabilityMask, AttackError> {
    let indices = attack_neighborhood(h, bus)?;
    if let Some(k) = indices.iter().find(|&k| h.is_critical(k)) {
        return Err(AttackError::IllegalNeighborhood { bus, reason: format!("row {k} is critical") });
    }
    if !h.observable_after_mask(&indices) {
        return Err(AttackError::IllegalNeighborhood { bus, reason: "reduced matrix is unobservable".into() });
    }
    let gamma = indices.len() as f64 / h.m() as f64;
    Ok(AvailabilityMask { indices, gamma, scheme: MaskScheme::MarNeighborhood { bus } })
}

/// `z_a(t) = z(t - t0)`, with the equivalent additive attack
/// `a(t) = z(t - t0) - z(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayAttack {
    pub column: DVector<f64>,
    pub a: DVector<f64>,
}

pub fn replay_scenario(raw: &Array2<f64>, t: usize, t0: usize) -> Result<ReplayAttack, AttackError> {
    if t < t0 {
        return Err(AttackError::ReplayTooEarly { t, t0 });
    }
    if t >= raw.ncols() {
        return Err(AttackError::Config(format!("step {t} beyond series of {} columns", raw.ncols())));
    }
    let m = raw.nrows();
    let column = DVector::from_iterator(m, raw.column(t - t0).iter().cloned());
    let now = DVector::from_iterator(m, raw.column(t).iter().cloned());
    let a = &column - &now;
    Ok(ReplayAttack { column, a })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fdia,
    Replay,
    /// FDIA together with a non-empty availability mask.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaScheme {
    #[default]
    Mcar,
    /// Mask the attack neighbourhood of the target bus (ignores `gammas`).
    Neighborhood,
}

/// One attack on one test window. The attacked columns are the last `steps`
/// columns of the window; the mask applies to the final column only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub id: usize,
    pub kind: AttackKind,
    pub bus: Option<usize>,
    pub mu: f64,
    pub mu_mode: MuMode,
    pub steps: usize,
    /// Requested missing ratio (the realised one is `mask.gamma`).
    pub gamma_target: f64,
    pub mask: AvailabilityMask,
    pub contaminated: MeasurementIndexSet,
    /// Index of the first column of the window in the test series.
    pub window_start: usize,
    pub window_len: usize,
    /// Replay offset in steps (replay scenarios only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_offset: Option<usize>,
}

impl AttackScenario {
    pub fn window_end(&self) -> usize {
        self.window_start + self.window_len - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    /// Target buses; empty means every non-reference bus.
    pub buses: Vec<usize>,
    pub mus: Vec<f64>,
    pub mu_mode: MuMode,
    pub gammas: Vec<f64>,
    pub gamma_scheme: GammaScheme,
    pub steps: Vec<usize>,
    /// Test windows drawn per (bus, mu, gamma, steps) case.
    pub windows_per_case: usize,
    /// Number of one-shot replay scenarios per replay gamma (0 disables).
    pub replay_windows: usize,
    pub replay_gammas: Vec<f64>,
    pub replay_offset: usize,
}

/// `±{3, 5, 7, 10, 15, 20, 30}%`.
pub fn default_mus() -> Vec<f64> {
    let base = [0.03, 0.05, 0.07, 0.10, 0.15, 0.20, 0.30];
    base.iter().flat_map(|m| [*m, -*m]).collect()
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            buses: Vec::new(),
            mus: default_mus(),
            mu_mode: MuMode::Relative,
            gammas: vec![0.0],
            gamma_scheme: GammaScheme::Mcar,
            steps: vec![1],
            windows_per_case: 1,
            replay_windows: 0,
            replay_gammas: vec![0.0],
            replay_offset: REPLAY_OFFSET,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Config(m));
        if self.steps.iter().any(|s| !(1..=3).contains(s)) {
            return bad(format!("steps must be in 1..=3, got {:?}", self.steps));
        }
        if self.gammas.iter().chain(&self.replay_gammas).any(|g| !(0.0..=0.5).contains(g)) {
            return bad("gammas must lie in [0, 0.5]".into());
        }
        if self.mus.iter().any(|m| !m.is_finite()) {
            return bad("mu values must be finite".into());
        }
        if self.replay_windows > 0 && self.replay_offset == 0 {
            return bad("replay offset must be positive".into());
        }
        Ok(())
    }
}

/// Deterministic scenario list over a test range of `n_steps` columns.
pub fn build_campaign(
    h: &ObservationMatrix,
    config: &CampaignConfig,
    n_steps: usize,
    window_len: usize,
    seed: u64,
) -> Result<Vec<AttackScenario>, AttackError> {
    config.validate()?;
    if n_steps < window_len {
        return Err(AttackError::Config(format!("{n_steps} test steps for windows of {window_len}")));
    }
    if config.steps.iter().any(|s| *s > window_len) {
        return Err(AttackError::Config("attack steps exceed the window length".into()));
    }
    let buses: Vec<usize> =
        if config.buses.is_empty() { h.state_buses().to_vec() } else { config.buses.clone() };
    for b in &buses {
        h.column_of(*b)?;
    }
    let critical = h.critical_set();
    let n_windows = n_steps + 1 - window_len;
    let mut out = Vec::new();
    let gammas: Vec<Option<f64>> = match config.gamma_scheme {
        GammaScheme::Mcar => config.gammas.iter().map(|g| Some(*g)).collect(),
        GammaScheme::Neighborhood => vec![None],
    };
    for &bus in &buses {
        let contaminated = h.column_support(bus)?;
        let neighborhood = match config.gamma_scheme {
            GammaScheme::Neighborhood => Some(mar_mask(h, bus)?),
            GammaScheme::Mcar => None,
        };
        for &mu in &config.mus {
            for gamma in &gammas {
                for &steps in &config.steps {
                    for _ in 0..config.windows_per_case {
                        let id = out.len();
                        let mut rng = seed::rng(seed, "campaign", id as u64);
                        let window_start = rng.random_range(0..n_windows);
                        let mask = match (gamma, &neighborhood) {
                            (_, Some(mask)) => mask.clone(),
                            (Some(g), None) => mcar_mask(h, (*g, *g), &contaminated, &critical, &mut rng)?,
                            (None, None) => AvailabilityMask::none(),
                        };
                        let kind = if mask.indices.is_empty() { AttackKind::Fdia } else { AttackKind::Combined };
                        out.push(AttackScenario {
                            id,
                            kind,
                            bus: Some(bus),
                            mu,
                            mu_mode: config.mu_mode,
                            steps,
                            gamma_target: gamma.unwrap_or(mask.gamma),
                            mask,
                            contaminated: contaminated.clone(),
                            window_start,
                            window_len,
                            replay_offset: None,
                        });
                    }
                }
            }
        }
    }
    if config.replay_windows > 0 {
        let t0 = config.replay_offset;
        // Windows whose final column has a predecessor t0 steps earlier.
        let first = t0.saturating_sub(window_len - 1);
        if first >= n_windows {
            return Err(AttackError::Config(format!("test range of {n_steps} steps is too short to replay {t0}")));
        }
        for &g in &config.replay_gammas {
            for _ in 0..config.replay_windows {
                let id = out.len();
                let mut rng = seed::rng(seed, "campaign", id as u64);
                let window_start = rng.random_range(first..n_windows);
                let mask = mcar_mask(h, (g, g), &MeasurementIndexSet::new(), &critical, &mut rng)?;
                out.push(AttackScenario {
                    id,
                    kind: AttackKind::Replay,
                    bus: None,
                    mu: 0.0,
                    mu_mode: config.mu_mode,
                    steps: 1,
                    gamma_target: g,
                    mask,
                    contaminated: MeasurementIndexSet::new(),
                    window_start,
                    window_len,
                    replay_offset: Some(t0),
                });
            }
        }
    }
    Ok(out)
}

/// Hash of the scenario list; identical campaigns hash identically.
pub fn campaign_hash(scenarios: &[AttackScenario]) -> String {
    artifact::config_hash(&scenarios)
}

/// An attacked window in raw measurement units.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackedWindow {
    /// `m x T` raw measurements after the attack.
    pub raw: Array2<f64>,
    /// Additive attack per attacked column, oldest first.
    pub vectors: Vec<DVector<f64>>,
}

/// Applies a scenario to the raw test measurements. FDIA magnitudes are
/// relative to the WLS estimate of each clean attacked column.
pub fn apply_scenario(
    scenario: &AttackScenario,
    raw: &Array2<f64>,
    h: &ObservationMatrix,
    estimator: &StateEstimator,
) -> Result<AttackedWindow, AttackError> {
    let (start, t_len) = (scenario.window_start, scenario.window_len);
    if start + t_len > raw.ncols() {
        return Err(AttackError::Config(format!("window {start}+{t_len} beyond {} columns", raw.ncols())));
    }
    let mut window = raw.slice(s![.., start..start + t_len]).to_owned();
    let mut vectors = Vec::new();
    match scenario.kind {
        AttackKind::Replay => {
            let t0 = scenario.replay_offset.unwrap_or(REPLAY_OFFSET);
            let replay = replay_scenario(raw, scenario.window_end(), t0)?;
            for (r, v) in replay.column.iter().enumerate() {
                window[[r, t_len - 1]] = *v;
            }
            vectors.push(replay.a);
        }
        AttackKind::Fdia | AttackKind::Combined => {
            let bus = scenario.bus.ok_or_else(|| AttackError::Config("FDIA scenario without a bus".into()))?;
            for j in t_len - scenario.steps..t_len {
                let z = DVector::from_iterator(window.nrows(), window.column(j).iter().cloned());
                let x_ref = estimator.estimate(&z)?.x_hat;
                let fdia = synth_fdia(h, bus, scenario.mu, &x_ref, scenario.mu_mode)?;
                for (r, v) in fdia.a.iter().enumerate() {
                    window[[r, j]] += *v;
                }
                vectors.push(fdia.a);
            }
        }
    }
    Ok(AttackedWindow { raw: window, vectors })
}

/// Writes one JSON scenario per line.
pub fn write_manifest(path: &Path, scenarios: &[AttackScenario]) -> Result<(), AttackError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scenarios {
        serde_json::to_writer(&mut file, s).map_err(|e| AttackError::Config(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<AttackScenario>, AttackError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| AttackError::Manifest { line: i + 1, msg: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::NoiseModel;
    use crate::grid::{parse_case, IEEE14_CASE};

    fn two_bus() -> ObservationMatrix {
        let case = parse_case(
            r#"{"slack_bus":1,"buses":[{"id":1},{"id":2,"pd":1.0}],
               "branches":[{"from":1,"to":2,"b":1.0}],"generators":[{"bus":1,"pmax":2.0}]}"#,
        )
        .unwrap();
        ObservationMatrix::build(&case).unwrap()
    }

    fn ieee14() -> ObservationMatrix {
        ObservationMatrix::build(&parse_case(IEEE14_CASE).unwrap()).unwrap()
    }

    #[test]
    fn zero_mu_is_no_attack() {
        let h = ieee14();
        let x = DVector::from_element(13, 0.1);
        let f = synth_fdia(&h, 4, 0.0, &x, MuMode::Relative).unwrap();
        assert!(f.a.iter().all(|v| *v == 0.0));
        assert_eq!(f.contaminated.len(), h.bus_degree(4).unwrap());
        assert!(matches!(synth_fdia(&h, 1, 0.1, &x, MuMode::Relative), Err(AttackError::Grid(_))));
    }

    #[test]
    fn two_bus_neighborhood_is_empty() {
        let h = two_bus();
        assert!(attack_neighborhood(&h, 2).unwrap().is_empty());
        let mask = mar_mask(&h, 2).unwrap();
        assert_eq!(mask.gamma, 0.0);
    }

    #[test]
    fn mcar_edge_cases() {
        let h = ieee14();
        let mut rng = seed::rng(0, "t", 0);
        let empty = MeasurementIndexSet::new();
        let mask = mcar_mask(&h, (0.0, 0.0), &empty, &empty, &mut rng).unwrap();
        assert!(mask.indices.is_empty());
        assert!(mcar_mask(&h, (0.1, 0.6), &empty, &empty, &mut rng).is_err());
        let all: MeasurementIndexSet = (0..34).collect();
        assert!(matches!(
            mcar_mask(&h, (0.2, 0.2), &all, &empty, &mut rng),
            Err(AttackError::InfeasibleMask { .. })
        ));
    }

    #[test]
    fn masked_count_never_exceeds_ratio() {
        assert_eq!(masked_count(0.2, 34), 6);
        assert_eq!(masked_count(0.1, 34), 3);
        assert_eq!(masked_count(0.05, 34), 1);
        assert_eq!(masked_count(0.15, 34), 5);
        assert_eq!(masked_count(0.2, 10), 2);
        assert_eq!(masked_count(0.0, 34), 0);
    }

    #[test]
    fn replay_examples() {
        let raw = Array2::from_shape_fn((3, 600), |(r, c)| (r + c) as f64);
        let rep = replay_scenario(&raw, 288, 288).unwrap();
        assert_eq!(rep.column.as_slice(), &[0.0, 1.0, 2.0]);
        assert!(rep.a.iter().all(|v| *v == -288.0));
        assert!(matches!(replay_scenario(&raw, 100, 288), Err(AttackError::ReplayTooEarly { t: 100, t0: 288 })));
        let constant = Array2::from_elem((3, 600), 2.5);
        assert!(replay_scenario(&constant, 400, 288).unwrap().a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn campaign_is_deterministic_and_counted() {
        let h = ieee14();
        let cfg = CampaignConfig { steps: vec![1, 3], gammas: vec![0.0, 0.2], ..CampaignConfig::default() };
        let a = build_campaign(&h, &cfg, 500, 6, 7).unwrap();
        assert_eq!(a.len(), 13 * 14 * 2 * 2);
        assert_eq!(campaign_hash(&a), campaign_hash(&build_campaign(&h, &cfg, 500, 6, 7).unwrap()));
        assert_ne!(campaign_hash(&a), campaign_hash(&build_campaign(&h, &cfg, 500, 6, 8).unwrap()));
        for s in &a {
            assert!(s.mask.indices.is_disjoint(&s.contaminated));
            assert!(h.observable_after_mask(&s.mask.indices));
        }
    }

    #[test]
    fn successive_attack_touches_last_columns() {
        let h = ieee14();
        let est = StateEstimator::new(&h, &NoiseModel::uniform(34, 0.01).unwrap()).unwrap();
        let raw = Array2::from_shape_fn((34, 20), |(r, c)| ((r * 7 + c * 3) % 11) as f64 * 0.1 + 0.5);
        let cfg = CampaignConfig { buses: vec![5], mus: vec![0.3], steps: vec![3], ..CampaignConfig::default() };
        let sc = &build_campaign(&h, &cfg, 20, 6, 1).unwrap()[0];
        let out = apply_scenario(sc, &raw, &h, &est).unwrap();
        let clean = raw.slice(s![.., sc.window_start..sc.window_start + 6]);
        for j in 0..6 {
            let changed = (0..34).any(|r| out.raw[[r, j]] != clean[[r, j]]);
            assert_eq!(changed, j >= 3, "column {j}");
        }
        assert_eq!(out.vectors.len(), 3);
    }

    #[test]
    fn manifest_round_trip() {
        let h = ieee14();
        let cfg = CampaignConfig { replay_windows: 3, gammas: vec![0.1], ..CampaignConfig::default() };
        let scenarios = build_campaign(&h, &cfg, 600, 6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campaign.jsonl");
        write_manifest(&path, &scenarios).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), scenarios);
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(AttackError::Manifest { line: 1, .. })));
    }
}
