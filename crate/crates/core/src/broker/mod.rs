//! Publish/subscribe over the NATS text protocol.
//!
//! [`Connection`] talks to any NATS-compatible broker. [`loopback_broker`] starts an
//! in-process broker speaking the same protocol subset, used for tests, the benchmark,
//! and `fastiot test-env start --loopback`.

mod client;
mod loopback;
pub mod proto;

use std::collections::BTreeMap;
use std::time::Duration;

pub use client::{ConnState, Connection, Subscription, DEFAULT_QUEUE_CAPACITY};
pub use loopback::{loopback_broker, loopback_broker_on, BrokerHandle};
pub use proto::ProtocolError;

use crate::datamodel::Subject;

/// Largest payload a client will publish.
pub const MAX_PAYLOAD: usize = 1024 * 1024;

pub const ENV_BROKER_HOST: &str = "FASTIOT_BROKER_HOST";
pub const ENV_BROKER_PORT: &str = "FASTIOT_BROKER_PORT";
pub const ENV_BROKER_RECONNECT: &str = "FASTIOT_BROKER_RECONNECT";
pub const ENV_BROKER_MAX_RECONNECT: &str = "FASTIOT_BROKER_MAX_RECONNECT_ATTEMPTS";
pub const ENV_BROKER_CONNECT_TIMEOUT_MS: &str = "FASTIOT_BROKER_CONNECT_TIMEOUT_MS";
pub const ENV_BROKER_USER: &str = "FASTIOT_BROKER_USER";
pub const ENV_BROKER_PASSWORD: &str = "FASTIOT_BROKER_PASSWORD";

pub const DEFAULT_HOST: &str = "localhost";
pub const DEFAULT_PORT: u16 = 4222;

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("timed out connecting to {0}")]
    ConnectTimeout(String),
    #[error("connection to {addr} refused: {source}")]
    Refused {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("broker rejected the connection: {0}")]
    Rejected(String),
    #[error("not connected to the broker")]
    Disconnected,
    #[error("payload of {size} bytes exceeds the {limit} byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("cannot publish to wildcard subject {0}")]
    WildcardPublish(Subject),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("broker i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BrokerConfigError {
    #[error("invalid broker port {0:?}: expected an integer in 1..=65535")]
    InvalidPort(String),
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
}

/// Where and how to reach the broker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrokerConfig {
    pub host: String,
    pub port: u16,
    pub connect_timeout: Duration,
    pub reconnect: bool,
    /// Zero means unlimited.
    pub max_reconnect_attempts: u32,
    pub user: Option<String>,
    pub password: Option<String>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            host: DEFAULT_HOST.to_owned(),
            port: DEFAULT_PORT,
            connect_timeout: Duration::from_secs(5),
            reconnect: true,
            max_reconnect_attempts: 0,
            user: None,
            password: None,
        }
    }
}

impl BrokerConfig {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        BrokerConfig {
            host: host.into(),
            port,
            ..Default::default()
        }
    }

    pub fn with_reconnect(mut self, reconnect: bool) -> Self {
        self.reconnect = reconnect;
        self
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    /// Reads the `FASTIOT_BROKER_*` keys from `env`, falling back to defaults.
    pub fn from_env(env: &BTreeMap<String, String>) -> Result<Self, BrokerConfigError> {
        let mut cfg = BrokerConfig::default();
        if let Some(host) = env.get(ENV_BROKER_HOST).filter(|h| !h.is_empty()) {
            cfg.host = host.clone();
        }
        if let Some(port) = env.get(ENV_BROKER_PORT) {
            cfg.port = parse_port(port)?;
        }
        if let Some(v) = env.get(ENV_BROKER_RECONNECT) {
            cfg.reconnect = parse_bool(v).ok_or_else(|| invalid(ENV_BROKER_RECONNECT, v))?;
        }
        if let Some(v) = env.get(ENV_BROKER_MAX_RECONNECT) {
            cfg.max_reconnect_attempts = v
                .trim()
                .parse()
                .map_err(|_| invalid(ENV_BROKER_MAX_RECONNECT, v))?;
        }
        if let Some(v) = env.get(ENV_BROKER_CONNECT_TIMEOUT_MS) {
            let ms: u64 = v
                .trim()
                .parse()
                .ok()
                .filter(|ms| *ms > 0)
                .ok_or_else(|| invalid(ENV_BROKER_CONNECT_TIMEOUT_MS, v))?;
            cfg.connect_timeout = Duration::from_millis(ms);
        }
        cfg.user = env.get(ENV_BROKER_USER).cloned();
        cfg.password = env.get(ENV_BROKER_PASSWORD).cloned();
        Ok(cfg)
    }
}

fn invalid(key: &str, value: &str) -> BrokerConfigError {
    BrokerConfigError::InvalidValue {
        key: key.to_owned(),
        value: value.to_owned(),
    }
}

pub fn parse_port(s: &str) -> Result<u16, BrokerConfigError> {
    match s.trim().parse::<u16>() {
        Ok(p) if p > 0 => Ok(p),
        _ => Err(BrokerConfigError::InvalidPort(s.to_owned())),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}
