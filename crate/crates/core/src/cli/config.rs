use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cli, CliError, Command, Format};
use crate::evaluation::DEFAULT_REPLICATES;
use crate::fusion::FusionConfig;
use crate::training::TrainConfig;

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

/// Contents of a `--config` file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub format: Option<Format>,
    pub model: Option<FusionConfig>,
    pub train: Option<TrainConfig>,
    pub val_fraction: Option<f64>,
    pub replicates: Option<usize>,
    pub threshold: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(path, e))
    }
}

/// Effective settings after applying flag > config file > default.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub format: Option<Format>,
    pub model: FusionConfig,
    pub train: TrainConfig,
    pub val_fraction: f64,
    pub replicates: usize,
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn resolve(cli: &Cli, file: &FileConfig) -> Result<Self, CliError> {
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        let jobs = cli
            .jobs
            .or(file.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        let mut model = file.model.clone().unwrap_or_default();
        model.seed = seed;
        let mut train = file.train.clone().unwrap_or_default();
        train.seed = seed;
        let mut val_fraction = file.val_fraction.unwrap_or(DEFAULT_VAL_FRACTION);
        let mut replicates = file.replicates.unwrap_or(DEFAULT_REPLICATES);
        let mut threshold = file.threshold;
        match &cli.command {
            Command::Train(a) => {
                val_fraction = a.val_fraction.unwrap_or(val_fraction);
                train.epochs = a.epochs.unwrap_or(train.epochs);
                train.learning_rate = a.learning_rate.unwrap_or(train.learning_rate);
                train.batch_size = a.batch_size.unwrap_or(train.batch_size);
            }
            Command::Evaluate(a) => {
                replicates = a.replicates.unwrap_or(replicates);
                threshold = a.threshold.or(threshold);
            }
            _ => {}
        }
        if replicates == 0 {
            return Err(CliError::Usage("replicates must be at least 1".into()));
        }
        Ok(Self {
            seed,
            jobs,
            format: cli.format.or(file.format),
            model,
            train,
            val_fraction,
            replicates,
            threshold,
        })
    }
}
