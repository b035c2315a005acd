//! Command-line driver: each stage reads and writes artifacts in one output
//! directory so stages can be rerun independently.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gridshield::detector::render_reports_csv;
use gridshield::experiment::{
    calibrate_stage, campaign_stage, evaluate_stage, load_campaign, load_data, new_model, prepare, save_campaign,
    save_data, train_stage, ExperimentError, Layout, Role, RunConfig,
};
use gridshield::detector::ThresholdTable;
use gridshield::nn::loss_history_csv;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gridshield", version, about = "Attack synthesis and LSTM-autoencoder detection on DC state estimation")]
struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension). Defaults to the desk configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Which {
    /// Work on the dense baseline instead of the main model.
    #[arg(long)]
    baseline: bool,
}

impl Which {
    fn role(&self) -> Role {
        if self.baseline {
            Role::Baseline
        } else {
            Role::Main
        }
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if a > 0.0 && a <= 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1], got {a}"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Generate the measurement series, scaler and window split.
    GenData,
    /// Write the observation matrix H as CSV.
    DumpH {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model and write its loss history.
    Train {
        #[command(flatten)]
        which: Which,
        /// Continue training the existing model file.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Calibrate per-bucket thresholds on the validation windows.
    Calibrate {
        #[command(flatten)]
        which: Which,
        #[arg(long, value_parser = parse_alpha)]
        alpha: Option<f64>,
    },
    /// Generate the attack campaign.
    Attack,
    /// Score the campaign and write reports and charts.
    Evaluate {
        #[command(flatten)]
        which: Which,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let layout = Layout::new(&cli.out_dir);
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::GenData => {
            let p = prepare(&cfg)?;
            save_data(&layout.data(), &cfg, &p)?;
            log::info!(
                "wrote {} training and {} test steps of {} measurements (data hash {}) to {}",
                p.data.train.len(),
                p.data.test.len(),
                p.m(),
                p.data_hash,
                layout.data().display()
            );
        }
        Command::DumpH { output } => {
            let p = gridshield::grid::parse_case(&cfg.case_text()?)?;
            let h = gridshield::grid::ObservationMatrix::build(&p)?;
            match output {
                Some(path) => std::fs::write(&path, h.to_csv()).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(h.to_csv().as_bytes())?,
            }
        }
        Command::Train { which, resume, epochs, learning_rate } => {
            let role = which.role();
            let train_cfg = match role {
                Role::Main => &mut cfg.train,
                Role::Baseline => &mut cfg.baseline_train,
            };
            if let Some(e) = epochs {
                train_cfg.epochs = e;
            }
            if let Some(lr) = learning_rate {
                train_cfg.learning_rate = lr;
            }
            cfg.validate()?;
            let p = load_data(&layout.data(), &cfg)?;
            let mut model = if resume { layout.load_model(role)? } else { new_model(&cfg, &p, role)? };
            let start = model.meta.epochs_trained;
            let history = train_stage(&cfg, &p, &mut model, role, |e| {
                if let Some(v) = e.validation {
                    log::info!("epoch {} train {:.6e} validation {:.6e}", e.epoch + 1, e.train, v);
                }
            })?;
            layout.save_model(role, &model)?;
            let csv = loss_history_csv(&history);
            let path = layout.losses(role);
            if resume && start > 0 && path.exists() {
                let body: String = csv.lines().skip(1).map(|l| format!("{l}\n")).collect();
                std::fs::OpenOptions::new().append(true).open(&path)?.write_all(body.as_bytes())?;
            } else {
                std::fs::write(&path, csv)?;
            }
            log::info!("{} trained to epoch {}, saved to {}", role.name(), model.meta.epochs_trained, layout.model(role).display());
        }
        Command::Calibrate { which, alpha } => {
            let role = which.role();
            if let Some(a) = alpha {
                cfg.detector.alpha = a;
            }
            let p = load_data(&layout.data(), &cfg)?;
            let model = layout.load_model(role)?;
            let table = calibrate_stage(&cfg, &p, &model, role)?;
            table.save(&layout.thresholds(role))?;
            for b in &table.buckets {
                let hi = b.hi.map(|h| format!("{h:.4}")).unwrap_or_else(|| "inf".into());
                log::info!("gamma {:.2} [{:.4}, {hi}) tau2 {:.6e}", b.gamma, b.lo, b.tau2);
            }
        }
        Command::Attack => {
            let p = load_data(&layout.data(), &cfg)?;
            let scenarios = campaign_stage(&cfg, &p)?;
            save_campaign(&layout.campaign(), &cfg, &p, &scenarios)?;
            log::info!("wrote {} scenarios to {}", scenarios.len(), layout.campaign().display());
        }
        Command::Evaluate { which } => {
            let role = which.role();
            let p = load_data(&layout.data(), &cfg)?;
            let model = layout.load_model(role)?;
            let table = ThresholdTable::load(&layout.thresholds(role))?;
            let scenarios = load_campaign(&layout.campaign(), &cfg, &p)?;
            let report = evaluate_stage(&cfg, &p, &model, &table, &scenarios, role)?;
            report.write(&layout.report(role)).with_context(|| format!("writing {}", layout.report(role).display()))?;
            print!("{}", render_reports_csv(&report.rows));
        }
    }
    Ok(())
}

/// 1 for problems with the inputs, 2 for failures while computing.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ExperimentError>() {
        Some(ExperimentError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 1,
        Some(ExperimentError::Artifact(gridshield::artifact::ArtifactError::Io(e)))
            if e.kind() == std::io::ErrorKind::NotFound =>
        {
            1
        }
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
