//! Pipeline configuration: one TOML or JSON file, CLI flags override fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::HttpConfig;
use crate::view_selection::SelectionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Exactly one inference backend is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendConfig {
    /// Replay canned responses from this directory.
    Fixtures { dir: PathBuf },
    /// Call external model services over HTTP.
    Http(HttpConfig),
}

impl BackendConfig {
    /// Stable identifier folded into stage cache keys.
    pub fn cache_id(&self) -> String {
        match self {
            BackendConfig::Fixtures { dir } => format!("fixtures:{}", dir.display()),
            BackendConfig::Http(http) => format!("http:{}", http.base_url),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    pub cache_dir: PathBuf,
    pub backend: BackendConfig,
    pub selection: SelectionConfig,
    /// Nearest-neighbor search radius for pixel-to-point mapping, meters.
    pub lifting_radius: f64,
    /// Heatmap threshold; must lie in [0, 1).
    pub tau: f64,
    /// Raw depth value to meters (PNG default: millimeters).
    pub depth_scale: f64,
    /// Worker threads for data-parallel stages; None uses the default pool.
    pub jobs: Option<usize>,
    /// Ablation: drop the task description from the pointing query.
    pub query_without_description: bool,
    /// Extra chat attempts when the LLM response fails to parse.
    pub parse_retries: u32,
    /// Override the bundled prompt file.
    pub prompt_file: Option<PathBuf>,
    /// When set, the prompt file content must hash to this (hex SHA-256).
    pub prompt_sha256: Option<String>,
    /// With an HTTP backend, also write every response as a fixture here.
    pub record_fixtures: Option<PathBuf>,
    /// Per-stage artifact caching; disable to force recomputation.
    pub cache_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_root: PathBuf::from("dataset"),
            cache_dir: PathBuf::from("cache"),
            backend: BackendConfig::Fixtures {
                dir: PathBuf::from("fixtures"),
            },
            selection: SelectionConfig::default(),
            lifting_radius: 0.02,
            tau: 0.7,
            depth_scale: 0.001,
            jobs: None,
            query_without_description: false,
            parse_retries: 2,
            prompt_file: None,
            prompt_sha256: None,
            record_fixtures: None,
            cache_enabled: true,
        }
    }
}

impl PipelineConfig {
    /// Load from a `.toml` or `.json` file (sniffed by extension).
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let config: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| ConfigError::Unreadable {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
            _ => toml::from_str(&text).map_err(|e| ConfigError::Unreadable {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.selection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&self.tau) {
            // tau = 1 would make the strict threshold inequality always empty
            return Err(ConfigError::Invalid(format!(
                "tau must lie in [0, 1), got {}",
                self.tau
            )));
        }
        if !(self.lifting_radius > 0.0 && self.lifting_radius.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "lifting radius must be positive, got {}",
                self.lifting_radius
            )));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "depth scale must be positive, got {}",
                self.depth_scale
            )));
        }
        if let BackendConfig::Http(http) = &self.backend {
            if http.base_url.is_empty() {
                return Err(ConfigError::Invalid("http backend needs a base_url".into()));
            }
            if http.max_retries == 0 || http.max_in_flight == 0 {
                return Err(ConfigError::Invalid(
                    "http retries and in-flight limit must be positive".into(),
                ));
            }
        } else if self.record_fixtures.is_some() {
            return Err(ConfigError::Invalid(
                "record_fixtures requires the http backend".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_the_reference_setup() {
        let config = PipelineConfig::default();
        config.validate().unwrap();
        assert_eq!(config.selection.lambda_m, 0.5);
        assert_eq!(config.selection.lambda_d, 0.25);
        assert_eq!(config.selection.lambda_alpha, 0.25);
        assert_eq!(config.selection.view_budget, 50);
        assert_eq!(config.tau, 0.7);
    }

    #[test]
    fn tau_one_is_rejected() {
        let config = PipelineConfig {
            tau: 1.0,
            ..PipelineConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn toml_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            tau: 0.5,
            ..PipelineConfig::default()
        };

        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, toml::to_string(&config).unwrap()).unwrap();
        assert_eq!(PipelineConfig::from_file(&toml_path).unwrap(), config);

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(PipelineConfig::from_file(&json_path).unwrap(), config);
    }

    #[test]
    fn backend_enum_is_exclusive_in_the_file_format() {
        // one backend table: fine
        let good = r#"
            [backend.fixtures]
            dir = "fx"
        "#;
        let config: PipelineConfig = toml::from_str(good).unwrap();
        assert!(matches!(config.backend, BackendConfig::Fixtures { .. }));

        // two backend tables cannot deserialize into the enum
        let bad = r#"
            [backend.fixtures]
            dir = "fx"
            [backend.http]
            base_url = "http://x"
        "#;
        assert!(toml::from_str::<PipelineConfig>(bad).is_err());
    }
}
