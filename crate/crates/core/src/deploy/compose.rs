use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::broker::{DEFAULT_PORT, ENV_BROKER_HOST, ENV_BROKER_PORT};
use crate::envfile::render_env;
use crate::runtime::{Infrastructure, RestartPolicy};
use crate::scaffold::ProjectManifest;
use crate::tree::FileTree;

use super::config::{infrastructure_ports, instance_ports};
use super::{ensure_valid, DeployError, DeploymentConfig, ServiceInstance};

pub const BROKER_SERVICE: &str = "broker";
pub const BROKER_IMAGE: &str = "nats:2.10-alpine";
pub const COMPOSE_FILE: &str = "docker-compose.yaml";

pub fn deployment_output_dir(name: &str) -> PathBuf {
    PathBuf::from("build").join("deployments").join(name)
}

/// Container image run for an infrastructure component.
pub fn infrastructure_image(infra: Infrastructure) -> &'static str {
    match infra {
        Infrastructure::Broker => BROKER_IMAGE,
        Infrastructure::DatabaseTimeseries => "influxdb:2.7",
        Infrastructure::DatabaseDocument => "mongo:7",
    }
}

/// Port an infrastructure component listens on inside its container.
pub fn infrastructure_port(infra: Infrastructure) -> u16 {
    match infra {
        Infrastructure::Broker => DEFAULT_PORT,
        other => infrastructure_ports(other)[0].1,
    }
}

/// The `FASTIOT_*_HOST` and `FASTIOT_*_PORT` entries pointing services at `infra`.
pub fn infrastructure_env(infra: Infrastructure, host: &str, port: u16) -> [(String, String); 2] {
    let (host_key, port_key) = match infra {
        Infrastructure::Broker => (ENV_BROKER_HOST.to_owned(), ENV_BROKER_PORT.to_owned()),
        other => {
            let upper = other.as_str().to_ascii_uppercase();
            (
                format!("FASTIOT_{upper}_HOST"),
                format!("FASTIOT_{upper}_PORT"),
            )
        }
    };
    [(host_key, host.to_owned()), (port_key, port.to_string())]
}

#[derive(Serialize)]
struct ComposeFile {
    services: BTreeMap<String, ComposeService>,
}

#[derive(Serialize)]
struct ComposeService {
    image: String,
    restart: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    depends_on: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    env_file: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    ports: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    devices: Vec<String>,
}

pub(crate) fn image_name(
    project: &ProjectManifest,
    inst: &ServiceInstance,
    default_tag: &str,
) -> String {
    format!(
        "{}/{}:{}",
        inst.owning_project(project),
        inst.service,
        inst.effective_tag(default_tag)
    )
}

/// Where each infrastructure component is reachable from a given instance.
pub(crate) type InfraHosts = BTreeMap<Infrastructure, String>;

pub(crate) fn local_infra_hosts(infra: &BTreeSet<Infrastructure>) -> InfraHosts {
    infra.iter().map(|i| (*i, i.as_str().to_owned())).collect()
}

pub(crate) fn instance_env(
    project: &ProjectManifest,
    inst: &ServiceInstance,
    infra_hosts: &InfraHosts,
) -> BTreeMap<String, String> {
    let broker_host = infra_hosts
        .get(&Infrastructure::Broker)
        .map(String::as_str)
        .unwrap_or(BROKER_SERVICE);
    let mut env: BTreeMap<String, String> =
        infrastructure_env(Infrastructure::Broker, broker_host, DEFAULT_PORT).into();
    for (infra, host) in infra_hosts {
        if *infra != Infrastructure::Broker {
            env.extend(infrastructure_env(
                *infra,
                host,
                infrastructure_port(*infra),
            ));
        }
    }
    if inst.is_internal(project) {
        if let Some(m) = project.service(&inst.service) {
            env.extend(m.env.clone());
        }
    }
    env.extend(inst.env.clone());
    env
}

/// Renders the compose file and env files for a subset of a deployment.
pub(crate) fn render_subset(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
    instances: &[&ServiceInstance],
    infra: &BTreeSet<Infrastructure>,
    infra_hosts: &InfraHosts,
) -> Result<FileTree, DeployError> {
    let mut tree = FileTree::new();
    let mut services = BTreeMap::new();
    for i in infra {
        services.insert(
            i.as_str().to_owned(),
            ComposeService {
                image: infrastructure_image(*i).to_owned(),
                restart: RestartPolicy::Always.compose_value(),
                depends_on: Vec::new(),
                env_file: Vec::new(),
                ports: infrastructure_ports(*i)
                    .iter()
                    .map(|(h, c)| format!("{h}:{c}"))
                    .collect(),
                devices: Vec::new(),
            },
        );
    }
    for inst in instances {
        let manifest = if inst.is_internal(project) {
            project.service(&inst.service)
        } else {
            None
        };
        let ports = instance_ports(inst, manifest)?
            .into_iter()
            .map(|(_, host, container)| format!("{host}:{container}"))
            .collect();
        let depends_on = manifest
            .map(|m| {
                m.requires
                    .iter()
                    .filter(|r| infra.contains(r))
                    .map(|r| r.as_str().to_owned())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .unwrap_or_default();
        let env_name = format!("{}.env", inst.instance);
        tree.insert(
            &env_name,
            render_env(&instance_env(project, inst, infra_hosts)),
        );
        services.insert(
            inst.instance.clone(),
            ComposeService {
                image: image_name(project, inst, &deployment.default_tag),
                restart: manifest
                    .map_or(RestartPolicy::Always, |m| m.restart_policy)
                    .compose_value(),
                depends_on,
                env_file: vec![env_name],
                ports,
                devices: manifest
                    .map(|m| m.devices.iter().map(|d| format!("{d}:{d}")).collect())
                    .unwrap_or_default(),
            },
        );
    }
    let body = serde_yaml::to_string(&ComposeFile { services }).expect("compose file serializes");
    let header = format!(
        "# Generated by fastiot {} from deployments/{}/deployment.yaml. Do not edit.\n",
        env!("CARGO_PKG_VERSION"),
        deployment.name
    );
    tree.insert(COMPOSE_FILE, header + &body);
    Ok(tree)
}

/// Compose file, one env file per instance, and a README, relative to
/// `build/deployments/<name>/`.
pub fn compile_deployment(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
) -> Result<FileTree, DeployError> {
    ensure_valid(project, deployment)?;
    let instances: Vec<&ServiceInstance> = deployment.services.iter().collect();
    let hosts = local_infra_hosts(&deployment.infrastructure);
    let mut tree = render_subset(
        project,
        deployment,
        &instances,
        &deployment.infrastructure,
        &hosts,
    )?;
    tree.insert("README.md", readme(project, deployment));
    Ok(tree)
}

fn readme(project: &ProjectManifest, deployment: &DeploymentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Deployment `{}` of {}\n",
        deployment.name, project.project_name
    );
    let _ = writeln!(
        out,
        "Start everything on one machine with `docker compose up -d` in this directory.\n"
    );
    let _ = writeln!(out, "| Instance | Image | Env file |");
    let _ = writeln!(out, "|---|---|---|");
    for i in &deployment.infrastructure {
        let _ = writeln!(out, "| {} | {} | |", i.as_str(), infrastructure_image(*i));
    }
    let mut instances: Vec<_> = deployment.services.iter().collect();
    instances.sort_by(|a, b| a.instance.cmp(&b.instance));
    for inst in instances {
        let _ = writeln!(
            out,
            "| {} | {} | {}.env |",
            inst.instance,
            image_name(project, inst, &deployment.default_tag),
            inst.instance
        );
    }
    if !deployment.hosts.is_empty() {
        let _ = writeln!(
            out,
            "\nFor a multi-host rollout run `ansible-playbook -i ansible/inventory.ini ansible/playbook.yaml`."
        );
    }
    out
}
