use serde::Serialize;
use std::path::Path;

/// Run metadata written next to every command's outputs. The manifest
/// carries the wall-clock timestamp, so it is the one file excluded from
/// byte-identity comparisons between reruns; seeds and configs alone
/// determine the artifact bytes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Vec<String>,
    pub seed: u64,
    pub build: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Vec<String>, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_owned(),
            argv: std::env::args().collect(),
            config,
            seed,
            build: format!("dsn-cli {}", env!("CARGO_PKG_VERSION")),
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }
}
