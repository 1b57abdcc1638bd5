//! Layered run configuration for the command-line tools.
//!
//! Values resolve in order: built-in defaults, then an optional TOML file,
//! then `ONESTOP_*` environment variables, then command-line flags (applied
//! by the binary). Environment variables use the section and key joined by
//! underscores — `ONESTOP_TRAIN_BATCH_SIZE=8` sets `[train] batch_size`,
//! `ONESTOP_SEED=7` sets the top-level seed. Staged-schedule definitions are
//! structured and only settable in the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::DecodeMode;
use crate::model::ModelConfig;
use crate::training::{StageSpec, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_doc: usize,
    pub max_question: usize,
    pub dropout: f64,
    pub eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            dim: m.dim,
            ffn_dim: m.ffn_dim,
            heads: m.heads,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            max_doc: m.max_doc,
            max_question: m.max_question,
            dropout: m.dropout,
            eps: m.eps,
        }
    }
}

impl ModelSection {
    /// The vocabulary size comes from the prepared corpus, not the config
    /// file.
    pub fn to_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            dim: self.dim,
            ffn_dim: self.ffn_dim,
            heads: self.heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            max_doc: self.max_doc,
            max_question: self.max_question,
            dropout: self.dropout,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub clip_norm: f64,
    pub patience: usize,
    /// Fraction of prepared examples held out for validation.
    pub val_fraction: f64,
    /// Denoising pretraining epochs before the curriculum (0 disables).
    pub pretrain_epochs: usize,
    /// Probability of replacing a token with `<unk>` during pretraining.
    pub pretrain_corrupt_rate: f64,
    pub stages: Vec<StageSpec>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lambda: t.lambda,
            lr: t.lr,
            batch_size: t.batch_size,
            warmup_ratio: t.warmup_ratio,
            clip_norm: t.clip_norm,
            patience: t.patience,
            val_fraction: 0.1,
            pretrain_epochs: 0,
            pretrain_corrupt_rate: 0.3,
            stages: t.stages,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            lr: self.lr,
            batch_size: self.batch_size,
            warmup_ratio: self.warmup_ratio,
            clip_norm: self.clip_norm,
            patience: self.patience,
            seed,
            stages: self.stages.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub window: usize,
    pub stride: usize,
    /// Tokens rarer than this in the prepared corpus become `<unk>`.
    pub min_count: usize,
    /// `prep` fails if more than this fraction of records is rejected.
    pub max_reject_rate: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            window: 160,
            stride: 80,
            min_count: 1,
            max_reject_rate: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    /// `"greedy"` or `"beam"`.
    pub mode: String,
    pub beam_width: usize,
    pub max_answer_len: usize,
    pub top_n: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            mode: "greedy".into(),
            beam_width: 4,
            max_answer_len: 8,
            top_n: 5,
        }
    }
}

impl DecodeSection {
    pub fn decode_mode(&self) -> Result<DecodeMode, ConfigError> {
        match self.mode.as_str() {
            "greedy" => Ok(DecodeMode::Greedy),
            "beam" => Ok(DecodeMode::Beam(self.beam_width)),
            other => Err(ConfigError::Invalid(format!(
                "decode.mode must be \"greedy\" or \"beam\", got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub decode: DecodeSection,
}

const SECTIONS: [&str; 4] = ["model", "train", "data", "decode"];

fn parse_env_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}

/// Loads the configuration: defaults, overlaid with the TOML file at `path`
/// (if given), overlaid with `ONESTOP_*` entries from `env`.
pub fn load(
    path: Option<&Path>,
    env: impl Iterator<Item = (String, String)>,
) -> Result<AppConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            text.parse::<toml::Table>()
                .map_err(|e| ConfigError::Parse(e.to_string()))?
        }
        None => toml::Table::new(),
    };

    for (key, value) in env {
        let Some(rest) = key.strip_prefix("ONESTOP_") else {
            continue;
        };
        let value = parse_env_value(&value);
        let lower = rest.to_ascii_lowercase();
        match lower.split_once('_') {
            Some((section, field)) if SECTIONS.contains(&section) => {
                let entry = table
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let Some(section_table) = entry.as_table_mut() else {
                    return Err(ConfigError::Parse(format!(
                        "config section {section} is not a table"
                    )));
                };
                section_table.insert(field.to_string(), value);
            }
            _ => {
                table.insert(lower, value);
            }
        }
    }

    table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Stage;

    fn no_env() -> impl Iterator<Item = (String, String)> {
        std::iter::empty()
    }

    fn env(pairs: &[(&str, &str)]) -> std::vec::IntoIter<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<Vec<_>>()
            .into_iter()
    }

    #[test]
    fn defaults_load_without_any_sources() {
        let cfg = load(None, no_env()).unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.data.window, 160);
        assert_eq!(cfg.decode.mode, "greedy");
        assert_eq!(cfg.train.stages.len(), 3);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
seed = 9
[train]
lr = 0.003
batch_size = 8
[train.stages]
"#,
        )
        .unwrap();
        // stages as a table is malformed — catch it.
        assert!(load(Some(&path), no_env()).is_err());

        std::fs::write(
            &path,
            r#"
seed = 9
[model]
dim = 64
[train]
lr = 0.003
stages = [
  { stage = "question_only", epochs = 1 },
  { stage = "joint", epochs = 2 },
]
"#,
        )
        .unwrap();
        let cfg = load(Some(&path), no_env()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.dim, 64);
        assert_eq!(cfg.model.heads, ModelSection::default().heads);
        assert_eq!(cfg.train.lr, 0.003);
        assert_eq!(cfg.train.stages.len(), 2);
        assert_eq!(cfg.train.stages[1].stage, Stage::Joint);
    }

    #[test]
    fn environment_beats_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlr = 0.001\n").unwrap();
        let cfg = load(
            Some(&path),
            env(&[
                ("ONESTOP_TRAIN_LR", "0.01"),
                ("ONESTOP_TRAIN_BATCH_SIZE", "4"),
                ("ONESTOP_SEED", "33"),
                ("ONESTOP_DECODE_MODE", "beam"),
                ("UNRELATED_VAR", "ignored"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.seed, 33);
        assert_eq!(cfg.decode.decode_mode().unwrap(), DecodeMode::Beam(4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlearning_rate = 0.001\n").unwrap();
        assert!(matches!(
            load(Some(&path), no_env()),
            Err(ConfigError::Parse(_))
        ));
        let err = load(None, env(&[("ONESTOP_TRAIN_TYPO", "1")])).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn decode_mode_strings() {
        let mut d = DecodeSection::default();
        assert_eq!(d.decode_mode().unwrap(), DecodeMode::Greedy);
        d.mode = "beam".into();
        d.beam_width = 7;
        assert_eq!(d.decode_mode().unwrap(), DecodeMode::Beam(7));
        d.mode = "sampled".into();
        assert!(d.decode_mode().is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load(Some(Path::new("/nonexistent/run.toml")), no_env()),
            Err(ConfigError::Io { .. })
        ));
    }
}
