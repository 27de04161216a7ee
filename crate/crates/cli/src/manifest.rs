use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

/// Provenance block embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    /// Omitted under `--no-timing` so reruns are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: None,
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn timed(mut self, start: Instant, enabled: bool) -> Self {
        self.wall_time_secs = enabled.then(|| start.elapsed().as_secs_f64());
        self
    }
}
