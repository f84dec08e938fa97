//! Configuration file and environment overrides.
//!
//! ```toml
//! [segmenter]
//! backend = "http"            # http | file | box-fill
//! endpoint = "http://127.0.0.1:9000"
//! timeout_ms = 10000
//! request_dir = "/tmp/osu-requests"
//!
//! [serve]
//! addr = "127.0.0.1:8080"
//! bundle_dir = "bundles"
//! allow_build = false
//! lexicon = "lexicon.tsv"
//! nouns = "nouns.tsv"
//! ```
//!
//! Environment variables override the file: `OSU_SEGMENTER_BACKEND`,
//! `OSU_SEGMENTER_URL`, `OSU_SEGMENTER_TIMEOUT_MS`,
//! `OSU_SEGMENTER_REQUEST_DIR`, `OSU_SERVE_ADDR`, `OSU_BUNDLE_DIR`,
//! `OSU_ALLOW_BUILD`, `OSU_LEXICON`, `OSU_NOUNS`.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use osu_core::segmenter::{Backend, FileBackend, HttpBackend};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("invalid value for {key}: {message}")]
    Value { key: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    File,
    BoxFill,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "file" => Ok(BackendKind::File),
            "box-fill" => Ok(BackendKind::BoxFill),
            other => Err(format!("unknown backend {other:?}, expected http, file or box-fill")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterConfig {
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub timeout_ms: Option<u64>,
    pub request_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub addr: String,
    pub bundle_dir: PathBuf,
    pub allow_build: bool,
    pub lexicon: Option<PathBuf>,
    pub nouns: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            bundle_dir: PathBuf::from("bundles"),
            allow_build: false,
            lexicon: None,
            nouns: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub segmenter: SegmenterConfig,
    pub serve: ServeConfig,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Config::from_toml(&text, p)?
            }
            None => Config::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("OSU_SEGMENTER_BACKEND") {
            self.segmenter.backend = Some(v.parse().map_err(|message| ConfigError::Value {
                key: "OSU_SEGMENTER_BACKEND",
                message,
            })?);
        }
        if let Some(v) = get("OSU_SEGMENTER_URL") {
            self.segmenter.endpoint = Some(v);
        }
        if let Some(v) = get("OSU_SEGMENTER_TIMEOUT_MS") {
            self.segmenter.timeout_ms = Some(v.parse().map_err(|e: std::num::ParseIntError| ConfigError::Value {
                key: "OSU_SEGMENTER_TIMEOUT_MS",
                message: e.to_string(),
            })?);
        }
        if let Some(v) = get("OSU_SEGMENTER_REQUEST_DIR") {
            self.segmenter.request_dir = Some(v.into());
        }
        if let Some(v) = get("OSU_SERVE_ADDR") {
            self.serve.addr = v;
        }
        if let Some(v) = get("OSU_BUNDLE_DIR") {
            self.serve.bundle_dir = v.into();
        }
        if let Some(v) = get("OSU_ALLOW_BUILD") {
            self.serve.allow_build = match v.as_str() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" | "" => false,
                other => {
                    return Err(ConfigError::Value {
                        key: "OSU_ALLOW_BUILD",
                        message: format!("{other:?} is not a boolean"),
                    })
                }
            };
        }
        if let Some(v) = get("OSU_LEXICON") {
            self.serve.lexicon = Some(v.into());
        }
        if let Some(v) = get("OSU_NOUNS") {
            self.serve.nouns = Some(v.into());
        }
        Ok(())
    }

    /// The configured backend, or `None` when no segmenter is configured.
    pub fn backend(&self) -> Result<Option<Backend>, ConfigError> {
        let s = &self.segmenter;
        let timeout = s.timeout_ms.map(Duration::from_millis);
        let kind = match s.backend {
            Some(k) => k,
            None if s.endpoint.is_some() => BackendKind::Http,
            None => return Ok(None),
        };
        Ok(Some(match kind {
            BackendKind::BoxFill => Backend::BoxFill,
            BackendKind::Http => {
                let endpoint = s.endpoint.clone().ok_or(ConfigError::Value {
                    key: "segmenter.endpoint",
                    message: "required for the http backend".into(),
                })?;
                let mut h = HttpBackend::new(endpoint);
                if let Some(t) = timeout {
                    h.timeout = t;
                }
                Backend::Http(h)
            }
            BackendKind::File => {
                let dir = s.request_dir.clone().ok_or(ConfigError::Value {
                    key: "segmenter.request_dir",
                    message: "required for the file backend".into(),
                })?;
                let mut f = FileBackend::new(dir);
                if let Some(t) = timeout {
                    f.timeout = t;
                }
                Backend::File(f)
            }
        }))
    }
}
