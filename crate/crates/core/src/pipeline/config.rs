use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agents::http::{HttpConfig, ENV_ENDPOINT, ENV_KEY, ENV_MODEL};
use crate::agents::{PromptContext, TableBounds, Temperatures, DEFAULT_IN_FLIGHT, DEFAULT_TOKEN_BUDGET};
use crate::mutation::CampaignConfig;
use crate::scene::WorkspaceSpec;
use crate::schema::{Category, SeverityConfig};

pub const ENV_BACKEND: &str = "WITFORGE_BACKEND";
pub const ENV_RNG_SEED: &str = "WITFORGE_RNG_SEED";
pub const ENV_OUTPUT_DIR: &str = "WITFORGE_OUTPUT_DIR";
pub const ENV_REPLAY_PATH: &str = "WITFORGE_REPLAY_PATH";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend {other:?} (mock, http, replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSection {
    pub endpoint: String,
    pub model: String,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub timeout_s: u64,
}

impl Default for HttpSection {
    fn default() -> Self {
        Self { endpoint: String::new(), model: String::new(), max_retries: 3, base_delay_ms: 500, timeout_s: 120 }
    }
}

impl HttpSection {
    /// The API key is only ever read from the environment.
    pub fn to_http_config(&self) -> HttpConfig {
        let mut c = HttpConfig::new(self.endpoint.clone(), self.model.clone());
        c.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        c.max_retries = self.max_retries;
        c.base_delay = Duration::from_millis(self.base_delay_ms);
        c.timeout = Duration::from_secs(self.timeout_s);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: BackendKind,
    pub rng_seed: u64,
    /// Not part of the manifest snapshot, so runs into different
    /// directories stay comparable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seed tasks requested from the generator.
    pub num_seeds: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_category: Option<Category>,
    /// Campaigns running at once.
    pub workers: usize,
    /// Requests in flight across all campaigns.
    pub in_flight: usize,
    pub token_budget: usize,
    /// Scene regenerations after the first invalid layout.
    pub scene_retries: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asset_index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    pub campaign: CampaignConfig,
    pub workspace: WorkspaceSpec,
    pub planning_table: TableBounds,
    pub temperatures: Temperatures,
    pub severity: SeverityConfig,
    pub http: HttpSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            rng_seed: 0,
            output_dir: None,
            num_seeds: 3,
            seed_category: None,
            workers: 4,
            in_flight: DEFAULT_IN_FLIGHT,
            token_budget: DEFAULT_TOKEN_BUDGET,
            scene_retries: 2,
            asset_index: None,
            replay_path: None,
            campaign: CampaignConfig::default(),
            workspace: WorkspaceSpec::default(),
            planning_table: TableBounds::default(),
            temperatures: Temperatures::default(),
            severity: SeverityConfig::default(),
            http: HttpSection::default(),
        }
    }
}

fn env(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `WITFORGE_*` variables on top of file values.
    pub fn apply_env(&mut self) -> Result<(), PipelineError> {
        if let Some(b) = env(ENV_BACKEND) {
            self.backend = b.parse().map_err(PipelineError::Config)?;
        }
        if let Some(s) = env(ENV_RNG_SEED) {
            self.rng_seed = s.parse().map_err(|_| PipelineError::Config(format!("{ENV_RNG_SEED}={s:?} is not an integer")))?;
        }
        if let Some(o) = env(ENV_OUTPUT_DIR) {
            self.output_dir = Some(o.into());
        }
        if let Some(r) = env(ENV_REPLAY_PATH) {
            self.replay_path = Some(r.into());
        }
        if let Some(e) = env(ENV_ENDPOINT) {
            self.http.endpoint = e;
        }
        if let Some(m) = env(ENV_MODEL) {
            self.http.model = m;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        self.campaign.check().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.workspace.check().map_err(|e| PipelineError::Config(format!("workspace: {e}")))?;
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        match self.backend {
            BackendKind::Http if self.http.endpoint.is_empty() || self.http.model.is_empty() => Err(PipelineError::Config(
                format!("the http backend needs http.endpoint and http.model (or {ENV_ENDPOINT}, {ENV_MODEL})"),
            )),
            BackendKind::Replay if self.replay_path.is_none() => {
                Err(PipelineError::Config(format!("the replay backend needs replay_path (or {ENV_REPLAY_PATH})")))
            }
            _ => Ok(()),
        }
    }

    pub fn prompt_context(&self) -> PromptContext {
        PromptContext {
            workspace: self.workspace.clone(),
            planning_table: self.planning_table,
            temperatures: self.temperatures.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let c = PipelineConfig::from_toml("rng_seed = 7\n[campaign]\nsteps = 4\n").unwrap();
        assert_eq!(c.rng_seed, 7);
        assert_eq!(c.campaign.steps, 4);
        assert_eq!(c.campaign.rounds, 3);
        assert_eq!(c.workspace, WorkspaceSpec::default());
    }

    #[test]
    fn backend_requirements() {
        let mut c = PipelineConfig { backend: BackendKind::Http, ..Default::default() };
        assert!(c.check().is_err());
        c.http.endpoint = "http://127.0.0.1:1/v1".into();
        c.http.model = "m".into();
        assert!(c.check().is_ok());
        c.campaign.rounds = 0;
        assert!(c.check().is_err());
    }
}
