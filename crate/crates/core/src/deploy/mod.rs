//! Compiles deployment configurations into compose files, env files, build scripts and
//! rollout playbooks. Everything here is pure: files are returned as a [`FileTree`] and
//! commands as text.

mod build;
mod compose;
mod config;
mod rollout;

use std::path::PathBuf;

pub use build::{plan_builds, BuildEntry, BuildOptions, BuildPlan};
pub use compose::{
    compile_deployment, deployment_output_dir, infrastructure_env, infrastructure_image,
    infrastructure_port, BROKER_IMAGE, BROKER_SERVICE,
};
pub use config::{check_deployment, is_valid_tag, DeploymentConfig, HostSpec, ServiceInstance};
pub use rollout::{host_assignment, plan_rollout};

use crate::runtime::Infrastructure;
use crate::scaffold::ProjectManifest;
use crate::tree::FileTree;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeployError {
    #[error("deployment {deployment}: instance {instance} refers to unknown service {service}")]
    UnknownService {
        deployment: String,
        instance: String,
        service: String,
    },
    #[error("host port {port} is claimed by both {first} and {second}")]
    PortCollision {
        port: u16,
        first: String,
        second: String,
    },
    #[error("deployment {deployment}: instance {instance} requires {requirement}, which the deployment does not provide")]
    MissingInfrastructure {
        deployment: String,
        instance: String,
        requirement: Infrastructure,
    },
    #[error("deployment {deployment}: instance name {instance} is used twice")]
    DuplicateInstance {
        deployment: String,
        instance: String,
    },
    #[error("host {host} lists unknown instance {instance}")]
    UnknownInstance { host: String, instance: String },
    #[error("instance {instance} is assigned to both {first} and {second}")]
    InstanceOnTwoHosts {
        instance: String,
        first: String,
        second: String,
    },
    #[error("host {0} is listed twice")]
    DuplicateHost(String),
    #[error("instance {instance} overrides unknown port label {label}")]
    UnknownPortLabel { instance: String, label: String },
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("instance name {0:?} is reserved for infrastructure")]
    ReservedName(String),
    #[error("invalid image tag {0:?}")]
    InvalidTag(String),
    #[error("service {0} declares no target architectures")]
    NoArchitectures(String),
    #[error("deployment {0} lists no hosts")]
    NoHosts(String),
}

/// Validates `deployment` and returns its first violation, if any.
pub(crate) fn ensure_valid(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
) -> Result<(), DeployError> {
    match check_deployment(project, deployment).into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Where `deployments/<name>/deployment.yaml` lives inside a project.
pub fn deployment_file(name: &str) -> PathBuf {
    PathBuf::from("deployments")
        .join(name)
        .join("deployment.yaml")
}

/// The deployment plus its rollout files when it has hosts, relative to
/// [`deployment_output_dir`].
pub fn compile_all(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
) -> Result<FileTree, DeployError> {
    let mut tree = compile_deployment(project, deployment)?;
    if !deployment.hosts.is_empty() {
        tree.merge(plan_rollout(project, deployment)?);
    }
    Ok(tree)
}
