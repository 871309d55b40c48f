//! Builds the gateway and literature source a run configuration describes.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::demo;
use crate::gateway::{
    BackendProfile, ChatBackend, Gateway, GatewayError, HttpBackend, ProviderProfile, RetryPolicy, Script,
    ScriptedBackend,
};
use crate::scholar::{LiteratureSource, OfflineSource, ScholarClient, ScholarConfig, ScholarError, DEFAULT_BASE_URL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScholarMode {
    Live,
    #[default]
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScholarSettings {
    #[serde(default)]
    pub mode: ScholarMode,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default)]
    pub cache_dir: Option<std::path::PathBuf>,
    #[serde(default = "default_interval_ms")]
    pub min_interval_ms: u64,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Offline fallback records; the bundled set when absent.
    #[serde(default)]
    pub snippets_path: Option<std::path::PathBuf>,
}

fn default_base_url() -> String {
    DEFAULT_BASE_URL.to_string()
}

fn default_interval_ms() -> u64 {
    1000
}

fn default_key_env() -> String {
    "S2_API_KEY".to_string()
}

impl Default for ScholarSettings {
    fn default() -> Self {
        ScholarSettings {
            mode: ScholarMode::Offline,
            base_url: default_base_url(),
            cache_dir: None,
            min_interval_ms: default_interval_ms(),
            api_key_env: default_key_env(),
            snippets_path: None,
        }
    }
}

fn load_script(id: &str, source: &str, iterations: u32, scientists: u32) -> Result<Script, GatewayError> {
    if source == demo::DEMO_SCRIPT {
        return Ok(demo::demo_script(iterations, scientists));
    }
    let config_err = |reason: String| GatewayError::Config {
        id: id.to_string(),
        reason,
    };
    let text = std::fs::read_to_string(source).map_err(|e| config_err(format!("script {source}: {e}")))?;
    Script::from_json(&text).map_err(|e| config_err(format!("script {source}: {e}")))
}

/// A gateway with the single configured provider registered under `id`.
/// `iterations` and `scientists` size the built-in demo script.
pub fn build_gateway(
    id: &str,
    profile: &ProviderProfile,
    seed: u64,
    iterations: u32,
    scientists: u32,
) -> Result<Gateway, GatewayError> {
    let backend: Arc<dyn ChatBackend> = match &profile.backend {
        BackendProfile::Http(http) => Arc::new(HttpBackend::from_env(id, http.clone())?),
        BackendProfile::Scripted { script, latency_ms } => {
            let script = load_script(id, script, iterations, scientists)?;
            Arc::new(ScriptedBackend::new(script, seed, Duration::from_millis(*latency_ms)))
        }
    };
    Ok(Gateway::new(RetryPolicy::default()).with_provider(id, backend, profile.rates(), profile.max_in_flight))
}

pub fn build_literature(settings: &ScholarSettings) -> Result<Arc<dyn LiteratureSource>, ScholarError> {
    match settings.mode {
        ScholarMode::Live => {
            let config = ScholarConfig {
                base_url: settings.base_url.clone(),
                api_key: std::env::var(&settings.api_key_env).ok().filter(|k| !k.is_empty()),
                cache_dir: settings.cache_dir.clone(),
                min_interval: Duration::from_millis(settings.min_interval_ms),
                retry: RetryPolicy::default(),
            };
            Ok(Arc::new(ScholarClient::new(config)?))
        }
        ScholarMode::Offline => {
            let source = match &settings.snippets_path {
                Some(path) => OfflineSource::from_snippet_file(path)?,
                None => OfflineSource::new(demo::offline_snippets()),
            };
            Ok(Arc::new(match &settings.cache_dir {
                Some(dir) => source.with_cache(dir),
                None => source,
            }))
        }
    }
}

/// The provider profile used when a run asks for the scripted provider
/// without configuring one.
pub fn demo_provider() -> ProviderProfile {
    ProviderProfile {
        rate_in: demo::DEMO_RATE_IN,
        rate_out: demo::DEMO_RATE_OUT,
        max_in_flight: crate::gateway::DEFAULT_MAX_IN_FLIGHT,
        max_output_tokens: None,
        context_budget: crate::gateway::DEFAULT_CONTEXT_BUDGET,
        backend: BackendProfile::Scripted {
            script: demo::DEMO_SCRIPT.to_string(),
            latency_ms: 2,
        },
    }
}
