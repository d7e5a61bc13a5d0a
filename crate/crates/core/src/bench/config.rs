//! Run configuration (TOML) and client construction.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grpo::toy::ToyTrainConfig;
use crate::grpo::GrpoConfig;
use crate::metrics::CemVariant;
use crate::rollout::{
    ChatCompletionsClient, ChatCompletionsConfig, NoNetworkPolicy, PolicyClient, RolloutConfig,
    SamplingStubPolicy, ScriptedPolicy,
};
use crate::search::{
    CacheMode, CachedSearch, FixtureCorpus, HitMapping, HttpSearchClient, NoNetworkSearch,
    SearchClient,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Share drawn from HotpotQA; the rest comes from 2WikiMultiHopQA.
    pub ratio: f64,
    #[serde(default = "default_mixture_total")]
    pub total: usize,
}

fn default_mixture_total() -> usize {
    180
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEndpoint {
    pub endpoint: String,
    #[serde(default)]
    pub mapping: HitMapping,
}

/// Live endpoints. Keys are read from the named environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub planner: Option<ChatCompletionsConfig>,
    pub toolcaller: Option<ChatCompletionsConfig>,
    pub search: Option<SearchEndpoint>,
    pub planner_key_env: String,
    pub toolcaller_key_env: String,
    pub search_key_env: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            planner: None,
            toolcaller: None,
            search: None,
            planner_key_env: "PLANNER_API_KEY".into(),
            toolcaller_key_env: "TOOLCALLER_API_KEY".into(),
            search_key_env: "SEARCH_API_KEY".into(),
        }
    }
}

/// Local stand-ins. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub planner_script: Option<PathBuf>,
    /// Weighted per-turn emissions, preferred when sampling training groups.
    pub planner_sampler: Option<PathBuf>,
    pub toolcaller_script: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub search_cache: Option<PathBuf>,
    pub cache_mode: CacheMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub seed: u64,
    pub concurrency: usize,
    pub cem_variant: CemVariant,
    pub rollout: RolloutConfig,
    pub grpo: GrpoConfig,
    pub toy: ToyTrainConfig,
    pub mixture: Option<MixtureConfig>,
    pub endpoints: EndpointConfig,
    pub fixtures: FixtureConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            concurrency: 8,
            cem_variant: CemVariant::default(),
            rollout: RolloutConfig::default(),
            grpo: GrpoConfig::default(),
            toy: ToyTrainConfig::default(),
            mixture: None,
            endpoints: EndpointConfig::default(),
            fixtures: FixtureConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let f = &mut cfg.fixtures;
        for p in [
            &mut f.planner_script,
            &mut f.planner_sampler,
            &mut f.toolcaller_script,
            &mut f.corpus,
            &mut f.search_cache,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rollout.max_rounds == 0 {
            return Err(ConfigError::Invalid("rollout.max_rounds must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        self.grpo
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("grpo: {e}")))?;
        if let Some(m) = &self.mixture {
            if !(0.0..=1.0).contains(&m.ratio) {
                return Err(ConfigError::Invalid("mixture.ratio must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// The three clients a rollout engine borrows.
pub struct Clients {
    pub planner: Box<dyn PolicyClient>,
    pub toolcaller: Box<dyn PolicyClient>,
    pub search: Box<dyn SearchClient>,
}

fn read_err(path: &Path, source: std::io::Error) -> ConfigError {
    ConfigError::Read {
        path: path.to_path_buf(),
        source,
    }
}

/// What the clients are for; decides which local planner stand-in wins when
/// both are configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Scripted planner first.
    Evaluation,
    /// Sampling planner first, so groups hold distinct rollouts.
    Training,
}

fn load_script(p: &Path) -> Result<Box<dyn PolicyClient>, ConfigError> {
    Ok(Box::new(ScriptedPolicy::load(p).map_err(|e| read_err(p, e))?))
}

fn load_sampler(p: &Path) -> Result<Box<dyn PolicyClient>, ConfigError> {
    Ok(Box::new(SamplingStubPolicy::load(p).map_err(|e| read_err(p, e))?))
}

fn fixture_planner(f: &FixtureConfig, workload: Workload) -> Result<Option<Box<dyn PolicyClient>>, ConfigError> {
    let (script, sampler) = (f.planner_script.as_deref(), f.planner_sampler.as_deref());
    let chosen = match workload {
        Workload::Evaluation => script.map(load_script).or_else(|| sampler.map(load_sampler)),
        Workload::Training => sampler.map(load_sampler).or_else(|| script.map(load_script)),
    };
    chosen.transpose()
}

fn live_policy(cfg: &Option<ChatCompletionsConfig>, key_env: &str) -> Option<Box<dyn PolicyClient>> {
    cfg.as_ref().map(|c| {
        let key = std::env::var(key_env).ok();
        Box::new(ChatCompletionsClient::new(c.clone(), key)) as Box<dyn PolicyClient>
    })
}

fn with_cache<S: SearchClient + 'static>(inner: S, f: &FixtureConfig) -> Box<dyn SearchClient> {
    match &f.search_cache {
        Some(dir) => Box::new(CachedSearch::new(inner).with_store(dir).with_mode(f.cache_mode)),
        None => Box::new(inner),
    }
}

/// Builds clients from config. Live endpoints are used only when `offline`
/// is false; anything left unconfigured becomes a double that refuses every
/// call.
pub fn build_clients(
    cfg: &HarnessConfig,
    offline: bool,
    workload: Workload,
) -> Result<Clients, ConfigError> {
    let f = &cfg.fixtures;
    let e = &cfg.endpoints;

    let mut planner = fixture_planner(f, workload)?;
    let mut toolcaller = f.toolcaller_script.as_deref().map(load_script).transpose()?;
    if !offline {
        planner = live_policy(&e.planner, &e.planner_key_env).or(planner);
        toolcaller = live_policy(&e.toolcaller, &e.toolcaller_key_env).or(toolcaller);
    }

    let live_search = match (&e.search, offline) {
        (Some(s), false) => Some(HttpSearchClient::new(
            s.endpoint.clone(),
            std::env::var(&e.search_key_env).ok(),
            s.mapping.clone(),
        )),
        _ => None,
    };
    let search: Box<dyn SearchClient> = if let Some(live) = live_search {
        with_cache(live, f)
    } else if let Some(p) = &f.corpus {
        with_cache(FixtureCorpus::load(p).map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?, f)
    } else if f.search_cache.is_some() {
        let replay = FixtureConfig {
            cache_mode: CacheMode::Replay,
            ..f.clone()
        };
        with_cache(NoNetworkSearch::default(), &replay)
    } else {
        Box::new(NoNetworkSearch::default())
    };

    if planner.is_none() {
        log::warn!("no planner configured; every rollout will fail");
    }
    Ok(Clients {
        planner: planner.unwrap_or_else(|| Box::new(NoNetworkPolicy::default())),
        toolcaller: toolcaller.unwrap_or_else(|| Box::new(NoNetworkPolicy::default())),
        search,
    })
}
