use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::runtime::{is_valid_name, Infrastructure, ServiceManifest};
use crate::scaffold::ProjectManifest;

use super::DeployError;

/// One deployment of a project: which service instances run, with what settings, where.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub name: String,
    #[serde(default = "default_tag")]
    pub default_tag: String,
    #[serde(default)]
    pub infrastructure: BTreeSet<Infrastructure>,
    #[serde(default)]
    pub services: Vec<ServiceInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hosts: Vec<HostSpec>,
}

fn default_tag() -> String {
    "dev".into()
}

/// A service included in a deployment under its own instance name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceInstance {
    pub instance: String,
    pub service: String,
    /// Owning project for external services. Absent or equal to the project name means internal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
    /// Host port per port label. For external services the label is the container port.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ports: BTreeMap<String, u16>,
}

impl ServiceInstance {
    pub fn new(instance: impl Into<String>, service: impl Into<String>) -> Self {
        ServiceInstance {
            instance: instance.into(),
            service: service.into(),
            project: None,
            tag: None,
            env: BTreeMap::new(),
            ports: BTreeMap::new(),
        }
    }

    pub fn is_internal(&self, project: &ProjectManifest) -> bool {
        self.project
            .as_deref()
            .is_none_or(|p| p == project.project_name)
    }

    pub fn owning_project<'a>(&'a self, project: &'a ProjectManifest) -> &'a str {
        self.project.as_deref().unwrap_or(&project.project_name)
    }

    pub fn effective_tag<'a>(&'a self, default_tag: &'a str) -> &'a str {
        self.tag.as_deref().unwrap_or(default_tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub hostname: String,
    #[serde(default)]
    pub services: Vec<String>,
}

impl DeploymentConfig {
    pub fn new(name: impl Into<String>) -> Self {
        DeploymentConfig {
            name: name.into(),
            default_tag: default_tag(),
            infrastructure: BTreeSet::from([Infrastructure::Broker]),
            services: Vec::new(),
            hosts: Vec::new(),
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("deployment serializes")
    }

    pub fn instance(&self, name: &str) -> Option<&ServiceInstance> {
        self.services.iter().find(|s| s.instance == name)
    }
}

/// Docker image tags: `[A-Za-z0-9_][A-Za-z0-9_.-]{0,127}`.
pub fn is_valid_tag(tag: &str) -> bool {
    let mut chars = tag.chars();
    tag.len() <= 128
        && chars
            .next()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
}

/// Resolved port mappings of one instance as (label, host port, container port).
pub(crate) fn instance_ports(
    instance: &ServiceInstance,
    manifest: Option<&ServiceManifest>,
) -> Result<Vec<(String, u16, u16)>, DeployError> {
    match manifest {
        Some(m) => {
            for label in instance.ports.keys() {
                if !m.ports.iter().any(|p| &p.label == label) {
                    return Err(DeployError::UnknownPortLabel {
                        instance: instance.instance.clone(),
                        label: label.clone(),
                    });
                }
            }
            Ok(m.ports
                .iter()
                .map(|p| {
                    let host = instance
                        .ports
                        .get(&p.label)
                        .copied()
                        .unwrap_or(p.default_host_port);
                    (p.label.clone(), host, p.container_port)
                })
                .collect())
        }
        None => instance
            .ports
            .iter()
            .map(|(label, host)| match label.parse::<u16>() {
                Ok(container) if container > 0 => Ok((label.clone(), *host, container)),
                _ => Err(DeployError::UnknownPortLabel {
                    instance: instance.instance.clone(),
                    label: label.clone(),
                }),
            })
            .collect(),
    }
}

/// Host ports the infrastructure services publish.
pub(crate) fn infrastructure_ports(infra: Infrastructure) -> &'static [(u16, u16)] {
    match infra {
        Infrastructure::Broker => &[(4222, 4222)],
        Infrastructure::DatabaseTimeseries => &[(8086, 8086)],
        Infrastructure::DatabaseDocument => &[(27017, 27017)],
    }
}

/// Every invariant violation of `deployment` against `project`.
pub fn check_deployment(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
) -> Vec<DeployError> {
    let dep = deployment.name.clone();
    let mut errors = Vec::new();
    if !is_valid_name(&deployment.name) {
        errors.push(DeployError::InvalidName(deployment.name.clone()));
    }
    if !is_valid_tag(&deployment.default_tag) {
        errors.push(DeployError::InvalidTag(deployment.default_tag.clone()));
    }

    // Host ports only collide on the same machine. Unassigned instances and the
    // infrastructure run on the first host.
    let first_host = deployment
        .hosts
        .first()
        .map(|h| h.hostname.as_str())
        .unwrap_or_default();
    let machine_of = |instance: &str| {
        deployment
            .hosts
            .iter()
            .find(|h| h.services.iter().any(|s| s == instance))
            .map_or(first_host, |h| h.hostname.as_str())
    };
    let mut seen = BTreeSet::new();
    let mut claimed: BTreeMap<(&str, u16), String> = BTreeMap::new();
    for infra in &deployment.infrastructure {
        for (host, _) in infrastructure_ports(*infra) {
            claimed.insert((first_host, *host), infra.as_str().to_owned());
        }
    }
    for inst in &deployment.services {
        if !is_valid_name(&inst.instance) {
            errors.push(DeployError::InvalidName(inst.instance.clone()));
        } else if Infrastructure::ALL
            .iter()
            .any(|i| i.as_str() == inst.instance)
        {
            errors.push(DeployError::ReservedName(inst.instance.clone()));
        }
        if !seen.insert(inst.instance.as_str()) {
            errors.push(DeployError::DuplicateInstance {
                deployment: dep.clone(),
                instance: inst.instance.clone(),
            });
        }
        if let Some(tag) = &inst.tag {
            if !is_valid_tag(tag) {
                errors.push(DeployError::InvalidTag(tag.clone()));
            }
        }
        let manifest = if inst.is_internal(project) {
            match project.service(&inst.service) {
                Some(m) => Some(m),
                None => {
                    errors.push(DeployError::UnknownService {
                        deployment: dep.clone(),
                        instance: inst.instance.clone(),
                        service: inst.service.clone(),
                    });
                    continue;
                }
            }
        } else {
            if !is_valid_name(&inst.service) || !inst.project.as_deref().is_some_and(is_valid_name)
            {
                errors.push(DeployError::InvalidName(format!(
                    "{}/{}",
                    inst.project.as_deref().unwrap_or_default(),
                    inst.service
                )));
            }
            None
        };
        if let Some(m) = manifest {
            for req in &m.requires {
                if !deployment.infrastructure.contains(req) {
                    errors.push(DeployError::MissingInfrastructure {
                        deployment: dep.clone(),
                        instance: inst.instance.clone(),
                        requirement: *req,
                    });
                }
            }
        }
        match instance_ports(inst, manifest) {
            Ok(ports) => {
                let machine = machine_of(&inst.instance);
                for (_, host, _) in ports {
                    if let Some(first) = claimed.get(&(machine, host)) {
                        errors.push(DeployError::PortCollision {
                            port: host,
                            first: first.clone(),
                            second: inst.instance.clone(),
                        });
                    } else {
                        claimed.insert((machine, host), inst.instance.clone());
                    }
                }
            }
            Err(e) => errors.push(e),
        }
    }

    let mut placed = BTreeMap::new();
    let mut hostnames = BTreeSet::new();
    for host in &deployment.hosts {
        if host.hostname.is_empty() || host.hostname.chars().any(|c| c.is_whitespace() || c == '/')
        {
            errors.push(DeployError::InvalidName(host.hostname.clone()));
        }
        if !hostnames.insert(host.hostname.as_str()) {
            errors.push(DeployError::DuplicateHost(host.hostname.clone()));
        }
        for name in &host.services {
            if deployment.instance(name).is_none() {
                errors.push(DeployError::UnknownInstance {
                    host: host.hostname.clone(),
                    instance: name.clone(),
                });
            } else if let Some(other) = placed.insert(name.as_str(), host.hostname.as_str()) {
                errors.push(DeployError::InstanceOnTwoHosts {
                    instance: name.clone(),
                    first: other.to_owned(),
                    second: host.hostname.clone(),
                });
            }
        }
    }
    errors
}
