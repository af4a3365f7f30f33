//! The run configuration file (TOML). Every section and field is optional.
//!
//! ```toml
//! workers = 4
//! seed = 0
//!
//! [pipeline]
//! max_plan_len = 4
//! num_plans = 3
//! experience_enabled = true
//! reflection_enabled = true
//!
//! [gateway]
//! max_in_flight = 4
//! # offline replay; remove to use the endpoint below
//! mock_script = "mock_script.jsonl"
//!
//! [gateway.endpoint]
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-4o"
//! api_key_env = "OPENAI_API_KEY"
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::BenchConfig;
use crate::gateway::{
    Gateway, GatewayError, HttpChatClient, HttpEndpoint, PromptRegistry, RetryPolicy, ScriptedMock, VisionModel,
};
use crate::imaging::{DegradeConfig, ToolConfig};
use crate::pipeline::PipelineConfig;
use crate::retrieval::{MatchParams, OrbParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("no model configured: give a mock script or an endpoint")]
    NoModel,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// JSONL script replayed instead of calling a model.
    pub mock_script: Option<PathBuf>,
    pub endpoint: Option<HttpEndpoint>,
    /// Directory of prompt files overriding the built-in templates.
    pub prompt_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            mock_script: None,
            endpoint: None,
            prompt_dir: None,
        }
    }
}

impl GatewayConfig {
    /// The mock script when one is set, else the endpoint.
    pub fn model(&self) -> Result<Arc<dyn VisionModel>, ConfigError> {
        if let Some(script) = &self.mock_script {
            Ok(Arc::new(ScriptedMock::load(script)?))
        } else if let Some(endpoint) = &self.endpoint {
            Ok(Arc::new(HttpChatClient::new(endpoint.clone())?))
        } else {
            Err(ConfigError::NoModel)
        }
    }

    /// Whether calls go to a live endpoint.
    pub fn is_live(&self) -> bool {
        self.mock_script.is_none() && self.endpoint.is_some()
    }

    /// A gateway over `model` with this config's retry policy, limit and
    /// prompt overrides.
    pub fn gateway_for(&self, model: Arc<dyn VisionModel>) -> Result<Gateway, ConfigError> {
        let gateway = Gateway::new(model, self.retry, self.max_in_flight);
        Ok(match &self.prompt_dir {
            Some(dir) => gateway.with_prompts(PromptRegistry::with_overrides(dir)?),
            None => gateway,
        })
    }

    pub fn build(&self) -> Result<Gateway, ConfigError> {
        self.gateway_for(self.model()?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub orb: OrbParams,
    pub matching: MatchParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; the number of logical CPUs when unset.
    pub workers: Option<usize>,
    pub seed: u64,
    /// Process at most this many samples.
    pub limit: Option<usize>,
    pub pipeline: PipelineConfig,
    pub toolkit: ToolConfig,
    pub gateway: GatewayConfig,
    pub retrieval: RetrievalConfig,
    pub bench: BenchConfig,
    pub degrade: DegradeConfig,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.gateway.mock_script);
        resolve(&mut cfg.gateway.prompt_dir);
        Ok(cfg)
    }

    pub fn effective_workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_example_parses() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg: RunConfig = toml::from_str(&example).unwrap();
        assert_eq!(cfg.workers, Some(4));
        assert_eq!(cfg.gateway.endpoint.unwrap().model, "gpt-4o");
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[pipeline]\nmax_len = 3").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[gateway]\nmock_script = \"script.jsonl\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.gateway.mock_script.unwrap(), dir.path().join("script.jsonl"));
        assert!(matches!(
            RunConfig::default().gateway.build(),
            Err(ConfigError::NoModel)
        ));
    }
}
