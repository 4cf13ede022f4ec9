use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Returns true for names matching `[a-z0-9_]+`.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum RestartPolicy {
    #[default]
    Always,
    UnlessStopped,
    No,
}

impl RestartPolicy {
    /// The spelling used in compose files.
    pub fn compose_value(self) -> &'static str {
        match self {
            RestartPolicy::Always => "always",
            RestartPolicy::UnlessStopped => "unless-stopped",
            RestartPolicy::No => "no",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infrastructure {
    Broker,
    DatabaseTimeseries,
    DatabaseDocument,
}

impl Infrastructure {
    pub const ALL: [Infrastructure; 3] = [
        Infrastructure::Broker,
        Infrastructure::DatabaseTimeseries,
        Infrastructure::DatabaseDocument,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Infrastructure::Broker => "broker",
            Infrastructure::DatabaseTimeseries => "database_timeseries",
            Infrastructure::DatabaseDocument => "database_document",
        }
    }
}

impl fmt::Display for Infrastructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Amd64,
    Arm64,
    Armv7,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Amd64,
        Architecture::Arm64,
        Architecture::Armv7,
    ];

    /// Container platform string, e.g. `linux/arm64`.
    pub fn platform(self) -> &'static str {
        match self {
            Architecture::Amd64 => "linux/amd64",
            Architecture::Arm64 => "linux/arm64",
            Architecture::Armv7 => "linux/arm/v7",
        }
    }

    /// The architecture of the machine running this binary, if it is one of ours.
    pub fn native() -> Option<Architecture> {
        match std::env::consts::ARCH {
            "x86_64" => Some(Architecture::Amd64),
            "aarch64" => Some(Architecture::Arm64),
            "arm" => Some(Architecture::Armv7),
            _ => None,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Amd64 => "amd64",
            Architecture::Arm64 => "arm64",
            Architecture::Armv7 => "armv7",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub container_port: u16,
    pub default_host_port: u16,
    pub label: String,
}

fn default_architectures() -> Vec<Architecture> {
    vec![Architecture::Amd64]
}

/// What a service needs from its deployment. Stored as `service.yaml` next to the service code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceManifest {
    pub name: String,
    #[serde(default)]
    pub ports: Vec<PortSpec>,
    #[serde(default)]
    pub devices: Vec<String>,
    #[serde(default)]
    pub restart_policy: RestartPolicy,
    #[serde(default)]
    pub requires: Vec<Infrastructure>,
    #[serde(default = "default_architectures")]
    pub architectures: Vec<Architecture>,
    /// Default environment, lowest precedence.
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

impl ServiceManifest {
    /// A manifest with the defaults: no ports, restart always, requires the broker, amd64.
    pub fn new(name: impl Into<String>) -> Self {
        ServiceManifest {
            name: name.into(),
            ports: Vec::new(),
            devices: Vec::new(),
            restart_policy: RestartPolicy::Always,
            requires: vec![Infrastructure::Broker],
            architectures: default_architectures(),
            env: BTreeMap::new(),
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("manifest serializes")
    }

    /// Prefix of this service's own configuration keys, e.g. `FASTIOT_SENSOR_READER_`.
    pub fn config_prefix(&self) -> String {
        format!("FASTIOT_{}_", self.name.to_ascii_uppercase())
    }

    /// Every invariant violation, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !is_valid_name(&self.name) {
            out.push(format!(
                "service name {:?} must match [a-z0-9_]+",
                self.name
            ));
        }
        if self.architectures.is_empty() {
            out.push(format!("service {} declares no architectures", self.name));
        }
        let mut containers = BTreeSet::new();
        let mut hosts = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for p in &self.ports {
            if p.container_port == 0 || p.default_host_port == 0 {
                out.push(format!(
                    "service {}: port {:?} uses port 0",
                    self.name, p.label
                ));
            }
            if !containers.insert(p.container_port) {
                out.push(format!(
                    "service {}: container port {} declared twice",
                    self.name, p.container_port
                ));
            }
            if !hosts.insert(p.default_host_port) {
                out.push(format!(
                    "service {}: host port {} declared twice",
                    self.name, p.default_host_port
                ));
            }
            if !labels.insert(p.label.as_str()) {
                out.push(format!(
                    "service {}: port label {:?} declared twice",
                    self.name, p.label
                ));
            }
        }
        out
    }
}
