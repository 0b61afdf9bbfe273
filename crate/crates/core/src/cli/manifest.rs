use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Cli, CliError, Command, RunConfig};

/// Record of one invocation: what ran, on which inputs, producing what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its bytes.
    pub inputs: IndexMap<String, String>,
    /// Output path → SHA-256 of the bytes written.
    pub outputs: IndexMap<String, String>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::input(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::input(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
            inputs: IndexMap::new(),
            outputs: IndexMap::new(),
            duration_s: 0.0,
            error: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.outputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn finish(&mut self, elapsed: Duration, error: Option<&CliError>) {
        self.duration_s = elapsed.as_secs_f64();
        self.error = error.map(|e| e.to_string());
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::input(path, e))?;
        text.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `<out>` with its extension replaced by `<tag>`, e.g. `model.json` →
/// `model.manifest.json`.
pub fn sibling(out: &Path, tag: &str) -> PathBuf {
    out.with_extension(tag)
}

/// Manifest location when `--manifest` is not given.
pub fn default_path(cli: &Cli) -> Option<PathBuf> {
    match (&cli.command, &cli.out) {
        (Command::Phantom(_), Some(dir)) => Some(dir.join("manifest.json")),
        (_, Some(out)) => Some(sibling(out, "manifest.json")),
        (_, None) => Some(PathBuf::from(format!("ctquant-{}.manifest.json", cli.command.name()))),
    }
}
