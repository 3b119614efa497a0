//! Deployment configuration: a TOML file plus `CONGAIT_*` overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use congait_core::canonical::{sha256_hex, to_canonical};
use congait_core::contest::{Role, DEFAULT_MAX_ROUNDS};
use congait_core::justify::DEFAULT_CLIENT_TIMEOUT;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8080;
pub const CONFIG_FILE_NAME: &str = "congait.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    pub role: Role,
    /// Bearer token for HTTP access; principals without one are CLI-only.
    #[serde(default, skip_serializing)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub retries: u32,
}

fn default_timeout_s() -> f64 {
    DEFAULT_CLIENT_TIMEOUT.as_secs_f64()
}

impl LlmConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.001))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_store")]
    pub store_root: PathBuf,
    /// Model document; the bundled reference model when unset.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default)]
    pub llm: Option<LlmConfig>,
    #[serde(default = "default_principals")]
    pub principals: Vec<Principal>,
}

fn default_port() -> u16 {
    DEFAULT_PORT
}
fn default_bind() -> String {
    "127.0.0.1".into()
}
fn default_store() -> PathBuf {
    PathBuf::from("congait-store")
}
fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}

/// One CLI-only principal per role.
pub fn default_principals() -> Vec<Principal> {
    [
        ("admin", Role::Admin),
        ("clinician", Role::Clinician),
        ("reviewer", Role::Reviewer),
        ("system", Role::SystemDelegate),
    ]
    .into_iter()
    .map(|(id, role)| Principal { id: id.into(), display_name: id.into(), role, token: None })
    .collect()
}

impl Default for Config {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value {value:?} for {var}")]
    Env { var: &'static str, value: String },
    #[error("{0}")]
    Invalid(String),
}

impl Config {
    /// Reads `file` (if any), then applies overrides from `env`.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
                toml::from_str(&text)?
            }
            None => Config::default(),
        };
        config.apply_env(env)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_environment(file: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load(file, |k| std::env::var(k).ok())
    }

    fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(var: &'static str, value: String) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::Env { var, value })
        }
        if let Some(v) = env("CONGAIT_PORT") {
            self.port = parse("CONGAIT_PORT", v)?;
        }
        if let Some(v) = env("CONGAIT_STORE") {
            self.store_root = v.into();
        }
        if let Some(v) = env("CONGAIT_MODEL") {
            self.model_path = Some(v.into());
        }
        if let Some(v) = env("CONGAIT_MAX_ROUNDS") {
            self.max_rounds = parse("CONGAIT_MAX_ROUNDS", v)?;
        }
        if let Some(url) = env("CONGAIT_LLM_URL") {
            let llm = self.llm.get_or_insert(LlmConfig {
                url: String::new(),
                model: "gpt-4o".into(),
                api_key: None,
                timeout_s: default_timeout_s(),
                retries: 0,
            });
            llm.url = url;
        }
        if let Some(llm) = self.llm.as_mut() {
            if let Some(v) = env("CONGAIT_LLM_MODEL") {
                llm.model = v;
            }
            if let Some(v) = env("CONGAIT_LLM_KEY") {
                llm.api_key = Some(v);
            }
            if let Some(v) = env("CONGAIT_LLM_TIMEOUT_S") {
                llm.timeout_s = parse("CONGAIT_LLM_TIMEOUT_S", v)?;
            }
            if let Some(v) = env("CONGAIT_LLM_RETRIES") {
                llm.retries = parse("CONGAIT_LLM_RETRIES", v)?;
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        let mut ids = std::collections::HashSet::new();
        let mut tokens = std::collections::HashSet::new();
        for p in &self.principals {
            if !ids.insert(&p.id) {
                return Err(ConfigError::Invalid(format!("principal {} is listed twice", p.id)));
            }
            if let Some(t) = &p.token {
                if t.is_empty() || !tokens.insert(t) {
                    return Err(ConfigError::Invalid(format!("token of principal {} is empty or shared", p.id)));
                }
            }
        }
        if let Some(llm) = &self.llm {
            if !(llm.timeout_s.is_finite() && llm.timeout_s > 0.0) {
                return Err(ConfigError::Invalid("llm.timeout_s must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn principal(&self, id: &str) -> Option<&Principal> {
        self.principals.iter().find(|p| p.id == id)
    }

    pub fn principal_by_token(&self, token: &str) -> Option<&Principal> {
        self.principals.iter().find(|p| p.token.as_deref() == Some(token))
    }

    /// Hash of the settings that affect outputs (secrets excluded).
    pub fn fingerprint(&self, model_id: &str) -> String {
        let doc = serde_json::json!({
            "model_id": model_id,
            "max_rounds": self.max_rounds,
            "llm": self.llm,
            "principals": self.principals,
        });
        sha256_hex(to_canonical(&doc).expect("config serializes").as_bytes())
    }
}
