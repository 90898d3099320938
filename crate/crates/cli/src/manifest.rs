use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{CliError, Cli, Command};

/// Record of one invocation, sufficient to replay it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, verbatim.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub versions: Versions,
    /// `(stage, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
    pub exit_code: u8,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub hdmr: String,
    pub model_schema: u64,
}

pub fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Fit(_) => "fit",
        Command::Predict(_) => "predict",
        Command::Stats(_) => "stats",
        Command::GenDiffusion(_) => "gen-diffusion",
        Command::Bench(_) => "bench",
        Command::Replay(_) => "replay",
    }
}

impl RunManifest {
    pub fn new(argv: Vec<String>, cli: &Cli) -> Self {
        let seed = match &cli.cmd {
            Command::Fit(a) => Some(a.seed),
            Command::GenDiffusion(a) => Some(a.seed),
            Command::Bench(a) => Some(a.seed),
            _ => None,
        };
        RunManifest {
            command: command_name(&cli.cmd).to_string(),
            argv,
            config: serde_json::to_value(cli).unwrap_or(serde_json::Value::Null),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions: Versions {
                hdmr: env!("CARGO_PKG_VERSION").to_string(),
                model_schema: hdmr_core::model::SCHEMA_VERSION,
            },
            timings: Vec::new(),
            exit_code: 0,
            error: None,
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: malformed manifest: {e}", path.display())))
    }
}
