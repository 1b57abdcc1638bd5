//! Run manifests: a JSON record of what a command did, written next to its
//! outputs so every artifact can be traced back to the exact invocation,
//! resolved configuration, and seed that produced it.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::AppConfig;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. `"train"`.
    pub command: String,
    /// Full argument vector as invoked.
    pub argv: Vec<String>,
    /// Crate version that produced the artifacts.
    pub version: String,
    /// Seed after all config layers were applied.
    pub seed: u64,
    /// Wall-clock start, seconds since the Unix epoch.
    pub unix_time_secs: u64,
    /// Total run time in seconds.
    pub elapsed_secs: f64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Fully resolved configuration (defaults + file + env + flags).
    pub config: AppConfig,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, seed: u64, config: AppConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            argv,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            unix_time_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            elapsed_secs: 0.0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Stamps the elapsed time and writes the manifest as pretty JSON.
    pub fn write(&mut self, path: &Path) -> std::io::Result<()> {
        self.elapsed_secs = self.started.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        std::fs::write(path, json + "\n")
    }

    /// Conventional manifest path for a primary output: `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        name.push_str(".manifest.json");
        output.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("model.json");
        let mut m = RunManifest::start(
            "train",
            vec!["onestop".into(), "train".into()],
            42,
            AppConfig::default(),
        );
        m.input(Path::new("data/prepared.jsonl"));
        m.output(&out);
        let manifest_path = RunManifest::path_for(&out);
        assert_eq!(manifest_path, dir.path().join("model.json.manifest.json"));
        m.write(&manifest_path).unwrap();

        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["command"], "train");
        assert_eq!(value["seed"], 42);
        assert_eq!(value["inputs"][0], "data/prepared.jsonl");
        assert_eq!(value["config"]["train"]["batch_size"], 16);
        assert!(value["elapsed_secs"].as_f64().unwrap() >= 0.0);
        assert!(value["unix_time_secs"].as_u64().unwrap() > 0);
    }
}
