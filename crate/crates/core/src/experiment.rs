//! Run configuration and the stages of an end-to-end experiment: data
//! generation, training, calibration, campaign synthesis and evaluation.
//!
//! Every stage derives its randomness from the master seed of [`RunConfig`]
//! and records the hashes of its inputs, so a later stage can refuse
//! artifacts that were produced from a different configuration.

use crate::artifact::{self, ArtifactError, FORMAT_VERSION};
use crate::attack::{build_campaign, campaign_hash, read_manifest, write_manifest, AttackError, AttackScenario, CampaignConfig};
use crate::detector::{
    calibrate_thresholds, evaluate_campaign, CampaignReport, DetectorError, EvalContext, Grouping, ThresholdTable,
    DEFAULT_GAMMAS,
};
use crate::estimation::{EstimationError, NoiseModel, StateEstimator};
use crate::grid::{bundled_case, parse_case, GridCase, GridError, ObservationMatrix};
use crate::nn::{load_model, save_model, train, AeModel, DecoderInput, EpochLoss, ModelConfig, ModelKind, NnError, TrainConfig};
use crate::pipeline::{
    generate_dataset, load_series, make_windows, save_series, split_indices, Dataset, PipelineConfig, PipelineError, ProfileParams,
    WindowTensor,
};
use crate::seed;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("lineage mismatch: {0}")]
    Lineage(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    /// Errors caused by the user's inputs rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::Config(_) | Self::Lineage(_) => true,
            Self::Grid(_) => true,
            Self::Pipeline(PipelineError::Config(_)) => true,
            Self::Nn(NnError::Config(_) | NnError::Train(_)) => true,
            Self::Detector(DetectorError::Config(_) | DetectorError::Lineage(_) | DetectorError::EmptyValidation) => true,
            Self::Attack(AttackError::Config(_)) => true,
            _ => false,
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Model architecture without the input dimension, which comes from the case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Hidden widths; empty selects the desk widths for the case.
    pub hidden: Vec<usize>,
    pub window: usize,
    pub hidden_dropout: f64,
    /// Train with random input dropout; `false` gives a plain autoencoder.
    pub denoising: bool,
    pub input_dropout: (f64, f64),
    pub decoder_input: DecoderInput,
    pub activation: crate::nn::Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::lstm()
    }
}

impl ModelSpec {
    pub fn lstm() -> Self {
        Self {
            kind: ModelKind::Lstm,
            hidden: Vec::new(),
            window: 6,
            hidden_dropout: 0.005,
            denoising: true,
            input_dropout: (0.0, 0.2),
            decoder_input: Default::default(),
            activation: Default::default(),
        }
    }

    /// Per-column dense autoencoder with the same dropout regime.
    pub fn dense_baseline() -> Self {
        Self { kind: ModelKind::Dense, window: 1, ..Self::lstm() }
    }

    pub fn resolve(&self, m: usize) -> ModelConfig {
        let mut c = ModelConfig::desk(self.kind, m);
        if !self.hidden.is_empty() {
            c.hidden = self.hidden.clone();
        }
        c.window = self.window;
        c.hidden_dropout = self.hidden_dropout;
        c.input_dropout = self.denoising.then_some(self.input_dropout);
        c.decoder_input = self.decoder_input;
        c.activation = self.activation;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub gammas: Vec<f64>,
    /// Quantiles at which the FPR-vs-alpha curves are sampled.
    pub alpha_grid: Vec<f64>,
    pub grouping: Grouping,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { alpha: 0.95, gammas: DEFAULT_GAMMAS.to_vec(), alpha_grid: vec![0.90, 0.95, 0.99], grouping: Grouping::default() }
    }
}

/// Which of the two configured models a stage works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Main,
    Baseline,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Main => "model",
            Role::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `ieee14`, `ieee118` or a path to a MATPOWER / JSON case file.
    pub case: String,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub model: ModelSpec,
    pub baseline: ModelSpec,
    pub train: TrainConfig,
    pub baseline_train: TrainConfig,
    pub detector: DetectorConfig,
    pub campaign: CampaignConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// The 14-bus desk configuration used by the acceptance suite.
    pub fn desk() -> Self {
        let pipeline = PipelineConfig {
            n_regions: 11,
            noise_ratio: 0.03,
            cost_perturbation: 0.0,
            profile: ProfileParams { ar_std: 0.2, ..ProfileParams::default() },
            ..PipelineConfig::default()
        };
        let train = TrainConfig { batch_size: 64, epochs: 200, learning_rate: 1e-3, report_every: 10, ..TrainConfig::default() };
        let campaign = CampaignConfig {
            mus: vec![0.05, -0.05, 0.10, -0.10, 0.20, -0.20],
            gammas: vec![0.0, 0.10, 0.20],
            steps: vec![1, 3],
            windows_per_case: 30,
            replay_windows: 1000,
            ..CampaignConfig::default()
        };
        Self {
            case: "ieee14".into(),
            seed: 7,
            pipeline,
            model: ModelSpec { decoder_input: DecoderInput::RepeatVector, ..ModelSpec::lstm() },
            baseline: ModelSpec::dense_baseline(),
            baseline_train: TrainConfig { epochs: 150, ..train.clone() },
            train,
            detector: DetectorConfig::default(),
            campaign,
        }
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.campaign.validate()?;
        self.train.validate()?;
        self.baseline_train.validate()?;
        let a = self.detector.alpha;
        if !(a > 0.0 && a <= 1.0) || self.detector.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(ExperimentError::Config(format!("alpha values must lie in (0, 1], got {a}")));
        }
        for spec in [&self.model, &self.baseline] {
            if spec.window > self.pipeline.window {
                return Err(ExperimentError::Config(format!(
                    "model window {} exceeds the data window {}",
                    spec.window, self.pipeline.window
                )));
            }
        }
        Ok(())
    }

    pub fn case_text(&self) -> Result<String> {
        match bundled_case(&self.case) {
            Some(t) => Ok(t.to_string()),
            None => {
                let p = Path::new(&self.case);
                std::fs::read_to_string(p).map_err(io_err(p))
            }
        }
    }

    /// Hash of everything that determines the generated data.
    pub fn data_hash(&self, case_text: &str) -> String {
        artifact::config_hash(&(artifact::bytes_hash(case_text.as_bytes()), self.seed, &self.pipeline))
    }

    pub fn spec(&self, role: Role) -> &ModelSpec {
        match role {
            Role::Main => &self.model,
            Role::Baseline => &self.baseline,
        }
    }

    /// Training settings for `role`, seeded from the master seed.
    pub fn train_config(&self, role: Role) -> TrainConfig {
        let base = match role {
            Role::Main => &self.train,
            Role::Baseline => &self.baseline_train,
        };
        TrainConfig { seed: seed::derive(self.seed, "train", role as u64), ..base.clone() }
    }

    pub fn model_config_hash(&self, role: Role) -> String {
        artifact::config_hash(&(self.spec(role), self.train_config(role)))
    }

    pub fn campaign_seed(&self) -> u64 {
        seed::derive(self.seed, "campaign", 0)
    }

    pub fn calibration_seed(&self) -> u64 {
        seed::derive(self.seed, "calibration", 0)
    }
}

/// Grid, observation matrix and generated data of one run.
pub struct Prepared {
    pub case: GridCase,
    pub h: ObservationMatrix,
    pub data: Dataset,
    pub data_hash: String,
}

impl Prepared {
    pub fn m(&self) -> usize {
        self.h.m()
    }

    /// Windows of length `t` over the training range, with the train and
    /// validation lists mapped so each model window ends where the data
    /// window of the same index ends.
    pub fn model_windows(&self, t: usize) -> (WindowTensor, Vec<usize>, Vec<usize>) {
        let shift = self.data.window - t;
        let tensor = make_windows(self.data.train_scaled.clone(), t).expect("model window fits the data window");
        let map = |idx: &[usize]| idx.iter().map(|i| i + shift).collect::<Vec<_>>();
        (tensor, map(&self.data.train_windows), map(&self.data.val_windows))
    }

    /// Clean validation windows of the data window length.
    pub fn validation(&self) -> (WindowTensor, Vec<usize>) {
        (self.data.train_tensor(), self.data.val_windows.clone())
    }

    pub fn estimator(&self) -> Result<StateEstimator> {
        let noise = NoiseModel::uniform(self.h.m(), self.data.train.noise_sigma)?;
        Ok(StateEstimator::new(&self.h, &noise)?)
    }
}

fn load_case(cfg: &RunConfig) -> Result<(GridCase, ObservationMatrix, String)> {
    let text = cfg.case_text()?;
    let case = parse_case(&text)?;
    let h = ObservationMatrix::build(&case)?;
    Ok((case, h, text))
}

/// Generates the data of a run in memory.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (case, h, text) = load_case(cfg)?;
    let data = generate_dataset(&case, &h, &cfg.pipeline, cfg.seed)?;
    Ok(Prepared { case, h, data, data_hash: cfg.data_hash(&text) })
}

/// Side information of the persisted data stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub window: usize,
    pub n_windows: usize,
    pub train_windows: Vec<usize>,
    pub val_windows: Vec<usize>,
    pub load_scale: f64,
}

pub const TRAIN_SERIES: &str = "train_series.bin";
pub const TEST_SERIES: &str = "test_series.bin";
pub const DATA_MANIFEST: &str = "windows.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ArtifactError::Header(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ArtifactError::Header(e.to_string()))?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(ArtifactError::Version { found, expected: FORMAT_VERSION }.into());
    }
    Ok(artifact::parse_header(value)?)
}

/// Writes both measurement series (the training one carries the scaler) and
/// the window manifest into `dir`.
pub fn save_data(dir: &Path, cfg: &RunConfig, p: &Prepared) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_series(&dir.join(TRAIN_SERIES), &p.data.train, Some(&p.data.scaler), cfg.seed, &p.data_hash)?;
    save_series(&dir.join(TEST_SERIES), &p.data.test, Some(&p.data.scaler), cfg.seed, &p.data_hash)?;
    let manifest = DataManifest {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        config_hash: p.data_hash.clone(),
        window: p.data.window,
        n_windows: p.data.train_windows.len() + p.data.val_windows.len(),
        train_windows: p.data.train_windows.clone(),
        val_windows: p.data.val_windows.clone(),
        load_scale: p.data.load_scale,
    };
    write_json(&dir.join(DATA_MANIFEST), &manifest)
}

/// Loads the data stage from `dir`, refusing files produced by another
/// configuration.
pub fn load_data(dir: &Path, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (case, h, text) = load_case(cfg)?;
    let expected = cfg.data_hash(&text);
    let manifest: DataManifest = read_json(&dir.join(DATA_MANIFEST))?;
    let (train_header, train) = load_series(&dir.join(TRAIN_SERIES))?;
    let (test_header, test) = load_series(&dir.join(TEST_SERIES))?;
    for (what, found) in
        [("window manifest", &manifest.config_hash), ("training series", &train_header.config_hash), ("test series", &test_header.config_hash)]
    {
        if *found != expected {
            return Err(ExperimentError::Lineage(format!(
                "{what} was generated with data hash {found}, the configuration gives {expected}"
            )));
        }
    }
    if train.m() != h.m() {
        return Err(ExperimentError::Lineage(format!("series have {} rows, the case has {}", train.m(), h.m())));
    }
    let scaler = train_header
        .scaler
        .ok_or_else(|| ArtifactError::Header("training series carries no scaler".into()))?;
    let data = Dataset {
        train_scaled: scaler.apply(&train.raw),
        test_scaled: scaler.apply(&test.raw),
        train,
        test,
        scaler,
        train_windows: manifest.train_windows,
        val_windows: manifest.val_windows,
        load_scale: manifest.load_scale,
        window: manifest.window,
    };
    Ok(Prepared { case, h, data, data_hash: expected })
}

/// Window split recomputed from the configuration; equal to the one stored
/// by [`save_data`].
pub fn expected_split(cfg: &RunConfig) -> (Vec<usize>, Vec<usize>) {
    let n = cfg.pipeline.train_days * cfg.pipeline.steps_per_day + 1 - cfg.pipeline.window;
    split_indices(n, cfg.pipeline.train_fraction, cfg.seed)
}

/// A fresh model for `role`, stamped with its lineage.
pub fn new_model(cfg: &RunConfig, p: &Prepared, role: Role) -> Result<AeModel> {
    let mut model = AeModel::new(cfg.spec(role).resolve(p.m()), seed::derive(cfg.seed, "model", role as u64))?;
    model.meta.scaler = Some(p.data.scaler.clone());
    model.meta.seed = cfg.seed;
    model.meta.config_hash = cfg.model_config_hash(role);
    model.meta.data_hash = p.data_hash.clone();
    Ok(model)
}

/// Refuses a model trained on other data or with another architecture.
pub fn check_model(cfg: &RunConfig, p: &Prepared, model: &AeModel, role: Role) -> Result<()> {
    if model.meta.data_hash != p.data_hash {
        return Err(ExperimentError::Lineage(format!(
            "model was trained on data {}, the configuration gives {}",
            model.meta.data_hash, p.data_hash
        )));
    }
    let want = cfg.spec(role).resolve(p.m());
    if model.config != want {
        return Err(ExperimentError::Lineage(format!("model architecture differs from the configured {}", role.name())));
    }
    if model.meta.scaler.as_ref() != Some(&p.data.scaler) {
        return Err(ExperimentError::Lineage("model scaler differs from the data scaler".into()));
    }
    Ok(())
}

/// Trains `model` (fresh or resumed) for the configured number of epochs.
pub fn train_stage(
    cfg: &RunConfig,
    p: &Prepared,
    model: &mut AeModel,
    role: Role,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>> {
    check_model(cfg, p, model, role)?;
    let (tensor, train_idx, val_idx) = p.model_windows(model.config.window);
    Ok(train(model, &tensor, &train_idx, &val_idx, &cfg.train_config(role), on_epoch)?)
}

/// Thresholds for `model` at the configured quantile and ratios.
pub fn calibrate_stage(cfg: &RunConfig, p: &Prepared, model: &AeModel, role: Role) -> Result<ThresholdTable> {
    check_model(cfg, p, model, role)?;
    let (tensor, idx) = p.validation();
    let windows: Vec<ArrayView2<f64>> = idx.iter().map(|&i| tensor.window(i)).collect();
    Ok(calibrate_thresholds(model, &windows, &cfg.detector.gammas, cfg.detector.alpha, cfg.calibration_seed())?)
}

pub fn campaign_stage(cfg: &RunConfig, p: &Prepared) -> Result<Vec<AttackScenario>> {
    Ok(build_campaign(&p.h, &cfg.campaign, p.data.test.len(), p.data.window, cfg.campaign_seed())?)
}

/// Lineage record written next to a scenario manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub campaign_hash: String,
    pub n_scenarios: usize,
}

pub const CAMPAIGN_FILE: &str = "campaign.jsonl";
pub const CAMPAIGN_MANIFEST: &str = "campaign.json";

fn campaign_config_hash(cfg: &RunConfig) -> String {
    artifact::config_hash(&(&cfg.campaign, cfg.campaign_seed()))
}

pub fn save_campaign(dir: &Path, cfg: &RunConfig, p: &Prepared, scenarios: &[AttackScenario]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_manifest(&dir.join(CAMPAIGN_FILE), scenarios)?;
    let manifest = CampaignManifest {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        config_hash: campaign_config_hash(cfg),
        data_hash: p.data_hash.clone(),
        campaign_hash: campaign_hash(scenarios),
        n_scenarios: scenarios.len(),
    };
    write_json(&dir.join(CAMPAIGN_MANIFEST), &manifest)
}

pub fn load_campaign(dir: &Path, cfg: &RunConfig, p: &Prepared) -> Result<Vec<AttackScenario>> {
    let manifest: CampaignManifest = read_json(&dir.join(CAMPAIGN_MANIFEST))?;
    if manifest.data_hash != p.data_hash || manifest.config_hash != campaign_config_hash(cfg) {
        return Err(ExperimentError::Lineage("campaign was generated for another configuration".into()));
    }
    let scenarios = read_manifest(&dir.join(CAMPAIGN_FILE))?;
    if campaign_hash(&scenarios) != manifest.campaign_hash {
        return Err(ExperimentError::Lineage("scenario file does not match its manifest".into()));
    }
    Ok(scenarios)
}

/// Scores a campaign and the clean test windows.
pub fn evaluate_stage(
    cfg: &RunConfig,
    p: &Prepared,
    model: &AeModel,
    table: &ThresholdTable,
    scenarios: &[AttackScenario],
    role: Role,
) -> Result<CampaignReport> {
    check_model(cfg, p, model, role)?;
    table.check_model(model)?;
    let estimator = p.estimator()?;
    let ctx = EvalContext { h: &p.h, estimator: &estimator, scaler: &p.data.scaler, test_raw: &p.data.test.raw };
    let test = p.data.test_tensor();
    let clean: Vec<ArrayView2<f64>> = (0..test.len()).map(|i| test.window(i)).collect();
    let mut report = evaluate_campaign(
        model,
        table,
        &ctx,
        scenarios,
        &clean,
        cfg.detector.grouping,
        &cfg.detector.alpha_grid,
        seed::derive(cfg.seed, "clean-test-masks", 0),
    )?;
    report.seed = cfg.seed;
    report.config_hash = artifact::config_hash(cfg);
    Ok(report)
}

/// Standard file locations inside an output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model(&self, role: Role) -> PathBuf {
        self.root.join(format!("{}.gsm", role.name()))
    }

    pub fn losses(&self, role: Role) -> PathBuf {
        self.root.join(format!("{}_loss.csv", role.name()))
    }

    pub fn thresholds(&self, role: Role) -> PathBuf {
        self.root.join(format!("{}_thresholds.json", role.name()))
    }

    pub fn campaign(&self) -> PathBuf {
        self.root.join("campaign")
    }

    pub fn report(&self, role: Role) -> PathBuf {
        self.root.join(format!("{}_report", role.name()))
    }

    pub fn load_model(&self, role: Role) -> Result<AeModel> {
        Ok(load_model(&self.model(role))?)
    }

    pub fn save_model(&self, role: Role, model: &AeModel) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        Ok(save_model(&self.model(role), model)?)
    }
}
