//! Shared service and CLI configuration.
//!
//! A flat TOML file of `key = value` pairs. Any key can be overridden by an
//! environment variable named `CALLIG_` plus the upper-cased key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "CALLIG_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudioConfig {
    pub checkpoint_path: Option<PathBuf>,
    /// Optional vocabulary file; must match the checkpoint's vocabulary.
    pub vocab_path: Option<PathBuf>,
    pub styles_dir: Option<PathBuf>,
    pub data_dir: PathBuf,
    /// Glyph corpus supplying curation reference images.
    pub corpus_dir: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    pub max_upload_bytes: usize,
    pub candidates: usize,
    pub group_size: usize,
    /// `WIDTHxHEIGHT` of composed artworks.
    pub canvas_size: String,
    pub request_timeout_secs: u64,
    pub workers: usize,
    /// `hash-<dim>` or `command:<dim>:<program>`.
    pub embedding_provider: String,
}

impl Default for StudioConfig {
    fn default() -> Self {
        Self {
            checkpoint_path: None,
            vocab_path: None,
            styles_dir: None,
            data_dir: PathBuf::from("callig-data"),
            corpus_dir: None,
            host: "127.0.0.1".into(),
            port: 8080,
            max_upload_bytes: 8 * 1024 * 1024,
            candidates: 50,
            group_size: 10,
            canvas_size: "512x512".into(),
            request_timeout_secs: 60,
            workers: 2,
            embedding_provider: "hash-64".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

/// Numeric overrides of non-string keys become TOML integers.
fn env_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else {
        toml::Value::String(raw.to_string())
    }
}

const KEYS: [&str; 14] = [
    "checkpoint_path",
    "vocab_path",
    "styles_dir",
    "data_dir",
    "corpus_dir",
    "host",
    "port",
    "max_upload_bytes",
    "candidates",
    "group_size",
    "canvas_size",
    "request_timeout_secs",
    "workers",
    "embedding_provider",
];

/// Keys whose values stay strings even when they look numeric.
const STRING_KEYS: [&str; 8] = [
    "checkpoint_path",
    "vocab_path",
    "styles_dir",
    "data_dir",
    "corpus_dir",
    "host",
    "canvas_size",
    "embedding_provider",
];

impl StudioConfig {
    /// Reads `path` (if given) and applies overrides from `env`.
    pub fn load_with(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX).map(str::to_ascii_lowercase) else {
                continue;
            };
            if !KEYS.contains(&key.as_str()) {
                continue;
            }
            let value = if STRING_KEYS.contains(&key.as_str()) {
                toml::Value::String(raw)
            } else {
                env_value(&raw)
            };
            table.insert(key, value);
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with(path, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, reason: &str| Err(ConfigError::Invalid { key, reason: reason.into() });
        if self.group_size < 2 {
            return bad("group_size", "must be at least 2");
        }
        if self.candidates < self.group_size {
            return bad("candidates", "must be at least group_size");
        }
        if self.max_upload_bytes == 0 {
            return bad("max_upload_bytes", "must be positive");
        }
        if self.workers == 0 {
            return bad("workers", "must be positive");
        }
        if self.request_timeout_secs == 0 {
            return bad("request_timeout_secs", "must be positive");
        }
        parse_size(&self.canvas_size).map_err(|reason| ConfigError::Invalid {
            key: "canvas_size",
            reason,
        })?;
        Ok(())
    }

    pub fn canvas(&self) -> (u32, u32) {
        parse_size(&self.canvas_size).expect("validated")
    }
}

/// Parses `WIDTHxHEIGHT`.
pub fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?} is not WIDTHxHEIGHT"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    Ok((w, h))
}
