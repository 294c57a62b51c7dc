//! TOML configuration: pipeline method selection, upstream policy, data
//! file paths, and gateway behavior. Relative data paths resolve against
//! the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pseudonym::detection::Gazetteer;
use pseudonym::generation::CandidatePool;
use pseudonym::pipeline::{BackendSet, PipelineConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{HttpChatClient, HttpTokenPredictor};
use crate::upstream::UpstreamPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invalid: {0}")]
    Invalid(String),
    #[error("data file error: {0}")]
    Data(#[from] pseudonym::datafile::DataFileError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub gazetteer: Option<PathBuf>,
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub pseudonymize_system: bool,
    #[serde(default)]
    pub pseudonymize_assistant: bool,
    /// Directory for the file-backed session store; in-memory when unset.
    #[serde(default)]
    pub session_dir: Option<PathBuf>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            listen: default_listen(),
            pseudonymize_system: false,
            pseudonymize_assistant: false,
            session_dir: None,
        }
    }
}

/// Local model endpoints backing the prompt-based stages and the generative
/// replacer. All optional: the offline methods need none of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub chat_url: Option<String>,
    #[serde(default = "default_backend_model")]
    pub chat_model: String,
    pub completions_url: Option<String>,
    #[serde(default = "default_backend_model")]
    pub completions_model: String,
}

fn default_backend_model() -> String {
    "local-small".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub upstream: UpstreamPolicy,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub backend: BackendSection,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let contents = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: AppConfig = toml::from_str(&contents)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(p) = &config.data.gazetteer {
            config.data.gazetteer = Some(resolve(base, p));
        }
        if let Some(p) = &config.data.pool {
            config.data.pool = Some(resolve(base, p));
        }
        if let Some(p) = &config.gateway.session_dir {
            config.gateway.session_dir = Some(resolve(base, p));
        }
        config.upstream.validate().map_err(ConfigError::Invalid)?;
        config
            .pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    /// Build the pipeline backends this config names. The chat backend and
    /// predictor use blocking HTTP clients, so the result must only be used
    /// from blocking contexts.
    pub fn build_backends(&self) -> Result<BackendSet, ConfigError> {
        let mut backends = BackendSet::default();
        if let Some(path) = &self.data.gazetteer {
            backends.gazetteer = Some(Arc::new(Gazetteer::load(path)?));
        }
        if let Some(path) = &self.data.pool {
            backends.pool = Some(Arc::new(CandidatePool::load(path)?));
        }
        if let Some(url) = &self.backend.chat_url {
            let api_key = std::env::var("UPSTREAM_API_KEY").ok();
            backends.chat = Some(Arc::new(HttpChatClient::new(
                url,
                self.backend.chat_model.clone(),
                api_key,
            )));
        }
        if let Some(url) = &self.backend.completions_url {
            let url = url.clone();
            let model = self.backend.completions_model.clone();
            backends.predictor_factory = Some(Arc::new(move |_source: &str| {
                Box::new(HttpTokenPredictor::new(&url, model.clone()))
                    as Box<dyn pseudonym::TokenPredictor>
            }));
        }
        Ok(backends)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const SAMPLE: &str = r#"
[pipeline]
detector = "gazetteer"
generator = "random"
replacer = "direct"
seed = 42

[upstream]
base_url = "http://127.0.0.1:9100"
timeout_ms = 5000
max_retries = 2
backoff_base_ms = 100

[data]
gazetteer = "gazetteer.tsv"

[gateway]
listen = "127.0.0.1:0"
"#;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("app.toml");
        std::fs::write(&config_path, SAMPLE).unwrap();
        let mut gz = std::fs::File::create(dir.path().join("gazetteer.tsv")).unwrap();
        writeln!(gz, "Alice\tperson").unwrap();

        let config = AppConfig::load(&config_path).unwrap();
        assert_eq!(config.pipeline.seed, 42);
        assert_eq!(
            config.data.gazetteer.as_ref().unwrap(),
            &dir.path().join("gazetteer.tsv")
        );
        let backends = config.build_backends().unwrap();
        assert!(backends.gazetteer.is_some());
        assert!(backends.pool.is_none());
        assert!(backends.chat.is_none());
    }

    #[test]
    fn rejects_invalid_combinations() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("app.toml");
        std::fs::write(
            &config_path,
            SAMPLE.replace("detector = \"gazetteer\"", "detector = \"tag_mark\""),
        )
        .unwrap();
        assert!(matches!(
            AppConfig::load(&config_path),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("app.toml");
        std::fs::write(&config_path, format!("{SAMPLE}\n[nonsense]\nx = 1\n")).unwrap();
        assert!(matches!(
            AppConfig::load(&config_path),
            Err(ConfigError::Parse(_))
        ));
    }
}
