use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::broker::{BrokerConfig, BrokerConfigError};
use crate::envfile::{read_env_file, EnvFileError};

use super::ServiceManifest;

/// Names the env file that `Service::run` layers below the process environment.
pub const ENV_ENV_FILE: &str = "FASTIOT_ENV_FILE";
/// Directory holding per-service `<service>.env` files. Defaults to `config`.
pub const ENV_CONFIG_DIR: &str = "FASTIOT_CONFIG_DIR";
pub const DEFAULT_CONFIG_DIR: &str = "config";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config file {path}: {reason}")]
    MalformedConfigFile { path: PathBuf, reason: String },
    #[error("invalid broker port {0:?}")]
    InvalidPort(String),
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
}

impl From<BrokerConfigError> for ConfigError {
    fn from(e: BrokerConfigError) -> Self {
        match e {
            BrokerConfigError::InvalidPort(p) => ConfigError::InvalidPort(p),
            BrokerConfigError::InvalidValue { key, value } => {
                ConfigError::InvalidValue { key, value }
            }
        }
    }
}

/// Everything a running service knows about itself. Immutable once built.
#[derive(Clone, Debug)]
pub struct ServiceContext {
    manifest: ServiceManifest,
    broker: BrokerConfig,
    config: BTreeMap<String, String>,
    span: tracing::Span,
}

impl ServiceContext {
    pub fn new(
        manifest: ServiceManifest,
        broker: BrokerConfig,
        config: BTreeMap<String, String>,
    ) -> Self {
        let span = tracing::info_span!("service", name = %manifest.name);
        ServiceContext {
            manifest,
            broker,
            config,
            span,
        }
    }

    pub fn manifest(&self) -> &ServiceManifest {
        &self.manifest
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn broker(&self) -> &BrokerConfig {
        &self.broker
    }

    /// Service-specific keys with the `FASTIOT_<SERVICE>_` prefix stripped.
    pub fn config(&self) -> &BTreeMap<String, String> {
        &self.config
    }

    /// Looks up a service key case-insensitively, e.g. `get("interval_ms")`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.config
            .get(&key.to_ascii_uppercase())
            .map(String::as_str)
    }

    /// Parses a service key, falling back to `default` when it is absent.
    pub fn get_parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| ConfigError::InvalidValue {
                key: format!(
                    "{}{}",
                    self.manifest.config_prefix(),
                    key.to_ascii_uppercase()
                ),
                value: v.to_owned(),
            }),
        }
    }

    /// The span every log line of this service is recorded under.
    pub fn logger(&self) -> &tracing::Span {
        &self.span
    }
}

/// Merges manifest defaults, `<config_dir>/<service>.env` and `env`, later layers winning,
/// then reads the broker settings and the service's own keys from the result.
pub fn load_context(
    manifest: ServiceManifest,
    env: &BTreeMap<String, String>,
    config_dir: Option<&Path>,
) -> Result<ServiceContext, ConfigError> {
    let mut merged = manifest.env.clone();
    if let Some(dir) = config_dir {
        let path = dir.join(format!("{}.env", manifest.name));
        match read_env_file(&path) {
            Ok(Some(file)) => merged.extend(file),
            Ok(None) => {}
            Err(EnvFileError::Malformed { reason, .. }) => {
                return Err(ConfigError::MalformedConfigFile { path, reason })
            }
            Err(EnvFileError::Io { source, .. }) => {
                return Err(ConfigError::MalformedConfigFile {
                    path,
                    reason: source.to_string(),
                })
            }
        }
    }
    merged.extend(env.iter().map(|(k, v)| (k.clone(), v.clone())));

    let broker = BrokerConfig::from_env(&merged)?;
    let prefix = manifest.config_prefix();
    let config = merged
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(&prefix)
                .filter(|rest| !rest.is_empty())
                .map(|rest| (rest.to_owned(), v.clone()))
        })
        .collect();
    Ok(ServiceContext::new(manifest, broker, config))
}

/// The process environment with `FASTIOT_ENV_FILE`, if set, layered underneath it.
pub fn process_env() -> Result<BTreeMap<String, String>, ConfigError> {
    let env: BTreeMap<String, String> = std::env::vars().collect();
    let Some(file) = env.get(ENV_ENV_FILE).filter(|f| !f.is_empty()) else {
        return Ok(env);
    };
    let path = PathBuf::from(file);
    let mut merged = match read_env_file(&path) {
        Ok(Some(vars)) => vars,
        Ok(None) => {
            return Err(ConfigError::MalformedConfigFile {
                path,
                reason: "file not found".into(),
            })
        }
        Err(e) => {
            return Err(ConfigError::MalformedConfigFile {
                path,
                reason: e.to_string(),
            })
        }
    };
    merged.extend(env);
    Ok(merged)
}
