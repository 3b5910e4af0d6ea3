//! Run configuration: one TOML document with a section per subsystem.
//!
//! ```toml
//! seed = 0
//! precision = "f64"        # or "f32"
//! output_dir = "runs/psm"  # relative paths resolve against the output root
//!
//! [robot]
//! name = "psm"             # bundled: psm, ecm, star
//! # file = "my_arm.toml"   # or a descriptor file, which takes precedence
//!
//! [env]       # EnvConfig
//! [dynamics]  # DynamicsConfig
//! [train]     # TrainConfig
//! [bench]     # BenchProtocol
//! [render]    # RenderConfig
//! ```
//!
//! Unknown keys are rejected. Overrides use dotted paths, for example
//! `train.n_robots=64` or `env.task="path_following"`; values are parsed as
//! TOML and fall back to a bare string.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bench::BenchProtocol;
use crate::dynamics::DynamicsConfig;
use crate::envs::EnvConfig;
use crate::learn::TrainConfig;
use crate::render::RenderConfig;
use crate::robot::{load_bundled, load_robot_file, RobotError, RobotModel};
use crate::scalar::{Precision, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("override `{raw}`: {message}")]
    Override { raw: String, message: String },
    #[error(transparent)]
    Robot(#[from] RobotError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSelection {
    pub name: String,
    pub file: Option<PathBuf>,
}

impl Default for RobotSelection {
    fn default() -> Self {
        RobotSelection {
            name: "psm".into(),
            file: None,
        }
    }
}

impl RobotSelection {
    pub fn load<T: Scalar>(&self) -> Result<Arc<RobotModel<T>>, ConfigError> {
        Ok(Arc::new(match &self.file {
            Some(path) => load_robot_file(path)?,
            None => load_bundled(&self.name)?,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds the environment, dynamics noise, policy and shuffling streams.
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: Option<PathBuf>,
    pub robot: RobotSelection,
    pub env: EnvConfig,
    pub dynamics: DynamicsConfig,
    pub train: TrainConfig,
    pub bench: BenchProtocol,
    pub render: RenderConfig,
}

impl RunConfig {
    /// Parses a document, applies overrides and validates.
    pub fn from_toml_str(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        for raw in overrides {
            apply_override(&mut table, raw)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Field {
                field: if field == "." { "(root)".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml_str(&text, &p.display().to_string(), overrides)
            }
            None => Self::from_toml_str("", "(defaults)", overrides),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |f: &str, m: String| ConfigError::Field {
            field: f.into(),
            message: m,
        };
        self.env.validate().map_err(|e| field("env", e.to_string()))?;
        self.dynamics.validate().map_err(|e| field("dynamics", e.to_string()))?;
        self.train.validate().map_err(|e| field("train", e.to_string()))?;
        self.bench.validate().map_err(|e| field("bench", e.to_string()))?;
        self.render.validate().map_err(|m| field("render", m))?;
        Ok(())
    }

    /// Env config for training: batch size and seed come from the run.
    pub fn train_env(&self) -> EnvConfig {
        EnvConfig {
            n_envs: self.train.n_robots,
            seed: self.seed,
            ..self.env.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, raw: &str) -> Result<(), ConfigError> {
    let err = |m: &str| ConfigError::Override {
        raw: raw.to_string(),
        message: m.to_string(),
    };
    let (path, value) = raw.split_once('=').ok_or_else(|| err("expected key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(err("empty key in dotted path"));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| err(&format!("`{k}` is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
