//! Command-line front end: argument parsing, configuration, run manifests
//! and the subcommand implementations.

mod commands;
pub mod config;
pub mod explain;
pub mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::io::TableError;
use crate::biomarkers::BiomarkerError;
use crate::evaluation::MetricError;
use crate::features::FeatureError;
use crate::fusion::ModelError;
use crate::phantom::PhantomError;
use crate::training::TrainError;
use crate::volume::VolumeError;

pub use config::{FileConfig, RunConfig};
pub use manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "ctquant", version, about = "CT biomarker extraction, feature fusion and risk attribution")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Where to write the run manifest (default: next to --out).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the 18 biomarkers for one scan or a batch.
    Extract(ScanArgs),
    /// Stub deep features plus biomarkers for one scan or a batch.
    Featurize(FeaturizeArgs),
    /// Fit the normaliser and train a fusion model.
    Train(TrainArgs),
    /// Risk probability and contribution scores per record.
    Predict(PredictArgs),
    /// Contribution table for one scan with grouped subtotals.
    Explain(ExplainArgs),
    /// Metrics with bootstrap intervals and ROC points.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic phantom and its ground truth.
    Phantom(PhantomArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Extract(_) => "extract",
            Command::Featurize(_) => "featurize",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Explain(_) => "explain",
            Command::Evaluate(_) => "evaluate",
            Command::Phantom(_) => "phantom",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    /// CT volume header (.ctqh).
    #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
    pub volume: Option<PathBuf>,
    #[arg(long)]
    pub pericardium: Option<PathBuf>,
    #[arg(long)]
    pub calcium: Option<PathBuf>,
    #[arg(long)]
    pub aorta: Option<PathBuf>,
    #[arg(long)]
    pub lungs: Option<PathBuf>,
    #[arg(long, default_value = "scan")]
    pub scan_id: String,
    /// Scan manifest CSV: scan_id,volume,pericardium,calcium,aorta,lungs[,label].
    #[arg(long)]
    pub batch: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub scan: ScanArgs,
    /// Label for a single scan (0 or 1).
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labelled feature table (CSV or JSON).
    #[arg(long)]
    pub features: PathBuf,
    /// Separate validation table; otherwise a stratified split is held out.
    #[arg(long)]
    pub val_features: Option<PathBuf>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub scan_id: String,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// CSV of scan_id,label overriding labels in the feature table.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, conflicts_with = "threshold_from")]
    pub threshold: Option<f64>,
    /// Training report whose selected threshold is used.
    #[arg(long)]
    pub threshold_from: Option<PathBuf>,
    /// Second model's predictions for McNemar's test.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// ROC point CSV (default: next to --out).
    #[arg(long)]
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Phantom spec JSON.
    #[arg(long, required_unless_present = "bundled", conflicts_with = "bundled")]
    pub spec: Option<PathBuf>,
    /// Name of a phantom shipped with the tool.
    #[arg(long)]
    pub bundled: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Biomarker(#[from] BiomarkerError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{failed} of {total} scans failed")]
    PartialFailure { failed: usize, total: usize },
}

pub mod exit {
    pub const USAGE: u8 = 2;
    pub const INPUT: u8 = 3;
    pub const INVALID_DATA: u8 = 4;
    pub const MODEL: u8 = 5;
    pub const TRAINING: u8 = 6;
    pub const PARTIAL: u8 = 7;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Input { .. } | CliError::Io(_) | CliError::Volume(_) | CliError::Table(_) => exit::INPUT,
            CliError::Feature(_) | CliError::Biomarker(_) | CliError::Phantom(_) => exit::INVALID_DATA,
            CliError::Model(_) => exit::MODEL,
            CliError::Train(_) | CliError::Metric(_) => exit::TRAINING,
            CliError::PartialFailure { .. } => exit::PARTIAL,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, e: impl std::error::Error + Send + Sync + 'static) -> Self {
        CliError::Input {
            path: path.into(),
            source: Box::new(e),
        }
    }
}

/// Runs a parsed command, writing its manifest whether or not it succeeds.
pub fn run(cli: Cli) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let file_config = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(&cli, &file_config)?;
    let mut manifest = RunManifest::new(cli.command.name(), &cfg);
    if let Some(p) = &cli.config {
        manifest.add_input(p)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let result = pool.install(|| commands::dispatch(&cli, &cfg, &mut manifest));
    manifest.finish(started.elapsed(), result.as_ref().err());
    let manifest_path = cli.manifest.clone().or_else(|| manifest::default_path(&cli));
    if let Some(path) = manifest_path {
        if let Err(e) = manifest.write(&path) {
            log::error!("cannot write manifest {}: {e}", path.display());
        }
    }
    result.map(|_| manifest)
}

/// Binary entry point.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTQUANT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
