//! TOML run configuration with `[run]`, `[data]`, `[context]`, `[provider]`
//! and optional `[providers.<id>]` / `[scholar]` sections. Relative paths
//! are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use hypogen::gateway::{BackendProfile, ProviderProfile};
use hypogen::orchestrator::{demo_provider, RunConfig, ScholarSettings};

#[derive(Debug, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default)]
    pub context: ContextSection,
    pub provider: ProviderSection,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderProfile>,
    #[serde(default)]
    pub scholar: ScholarSettings,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iterations: Option<u32>,
    pub scientist_count: Option<u32>,
    pub snippet_limit: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub user_instructions: Option<String>,
    pub dup_threshold: Option<f64>,
    pub max_reprompts: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSection {
    #[serde(default)]
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
pub struct ProviderSection {
    pub id: String,
    #[serde(flatten)]
    pub profile: ProviderProfile,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub iterations: Option<u32>,
    pub provider: Option<String>,
    pub out: Option<PathBuf>,
}

pub const SCRIPTED_PROVIDER: &str = "scripted";

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_profile(base: &Path, mut profile: ProviderProfile) -> ProviderProfile {
    if let BackendProfile::Scripted { script, .. } = &mut profile.backend {
        if !script.starts_with("builtin:") {
            *script = resolve(base, Path::new(script.as_str())).to_string_lossy().into_owned();
        }
    }
    profile
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Picks the provider named by `wanted`; `scripted` falls back to the
    /// built-in demo script when the file does not define it.
    fn provider(&self, wanted: Option<&str>) -> Result<(String, ProviderProfile)> {
        let id = wanted.unwrap_or(&self.provider.id);
        if id == self.provider.id {
            return Ok((id.to_string(), self.provider.profile.clone()));
        }
        if let Some(p) = self.providers.get(id) {
            return Ok((id.to_string(), p.clone()));
        }
        if id == SCRIPTED_PROVIDER {
            return Ok((id.to_string(), demo_provider()));
        }
        let mut known: Vec<&str> = vec![self.provider.id.as_str()];
        known.extend(self.providers.keys().map(String::as_str));
        bail!("unknown provider {id:?} (configured: {})", known.join(", "))
    }

    pub fn into_run_config(self, base: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let (provider_id, profile) = self.provider(overrides.provider.as_deref())?;
        let profile = resolve_profile(base, profile);
        let output_dir = match &overrides.out {
            Some(out) => out.clone(),
            None => resolve(base, self.run.output_dir.as_deref().unwrap_or(Path::new("runs"))),
        };
        let mut config = RunConfig::new(provider_id, profile, resolve(base, &self.data.path), output_dir);
        let r = &self.run;
        if let Some(v) = overrides.iterations.or(r.iterations) {
            config.iterations = v;
        }
        if let Some(v) = r.scientist_count {
            config.scientist_count = v;
        }
        if let Some(v) = r.snippet_limit {
            config.snippet_limit = v;
        }
        if let Some(v) = r.seed {
            config.seed = v;
        }
        if let Some(v) = &r.user_instructions {
            config.user_instructions = v.clone();
        }
        if let Some(v) = r.dup_threshold {
            config.dup_threshold = v;
        }
        if let Some(v) = r.max_reprompts {
            config.max_reprompts = v;
        }
        config.context_paths = self.context.paths.iter().map(|p| resolve(base, p)).collect();
        let mut scholar = self.scholar;
        scholar.cache_dir = scholar.cache_dir.map(|p| resolve(base, &p));
        scholar.snippets_path = scholar.snippets_path.map(|p| resolve(base, &p));
        config.scholar = scholar;
        Ok(config)
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let file = ConfigFile::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    file.into_run_config(base, overrides)
}
