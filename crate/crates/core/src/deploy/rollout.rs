use std::collections::{BTreeMap, BTreeSet};

use serde_yaml::{Mapping, Value};

use crate::scaffold::ProjectManifest;
use crate::tree::FileTree;

use super::compose::{render_subset, InfraHosts};
use super::{ensure_valid, DeployError, DeploymentConfig, ServiceInstance};

fn map<const N: usize>(pairs: [(&str, Value); N]) -> Value {
    let mut m = Mapping::new();
    for (k, v) in pairs {
        m.insert(Value::from(k), v);
    }
    Value::Mapping(m)
}

/// Instances per host, in host order. Instances not listed anywhere go to the first host.
fn assign(deployment: &DeploymentConfig) -> Vec<(&str, Vec<&ServiceInstance>)> {
    let listed: BTreeSet<&str> = deployment
        .hosts
        .iter()
        .flat_map(|h| h.services.iter().map(String::as_str))
        .collect();
    deployment
        .hosts
        .iter()
        .enumerate()
        .map(|(i, host)| {
            let mut instances: Vec<&ServiceInstance> = host
                .services
                .iter()
                .filter_map(|name| deployment.instance(name))
                .collect();
            if i == 0 {
                instances.extend(
                    deployment
                        .services
                        .iter()
                        .filter(|s| !listed.contains(s.instance.as_str())),
                );
            }
            instances.sort_by(|a, b| a.instance.cmp(&b.instance));
            (host.hostname.as_str(), instances)
        })
        .collect()
}

/// Inventory, playbook and per-host compose subsets under `ansible/`, relative to
/// `build/deployments/<name>/`. Infrastructure runs on the first host; services on other
/// hosts reach it by that host's name.
pub fn plan_rollout(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
) -> Result<FileTree, DeployError> {
    if deployment.hosts.is_empty() {
        return Err(DeployError::NoHosts(deployment.name.clone()));
    }
    ensure_valid(project, deployment)?;
    let first = deployment.hosts[0].hostname.as_str();
    let target = format!("/opt/fastiot/{}/{}", project.project_name, deployment.name);
    let mut tree = FileTree::new();
    let mut plays = Vec::new();
    let mut inventory = format!("[{}]\n", deployment.name);

    for (host, instances) in assign(deployment) {
        inventory.push_str(host);
        inventory.push('\n');
        let infra = if host == first {
            deployment.infrastructure.clone()
        } else {
            BTreeSet::new()
        };
        let infra_hosts: InfraHosts = deployment
            .infrastructure
            .iter()
            .map(|i| {
                let name = if host == first { i.as_str() } else { first };
                (*i, name.to_owned())
            })
            .collect();
        let subset = render_subset(project, deployment, &instances, &infra, &infra_hosts)?;
        let host_dir = format!("hosts/{host}");
        let files: Vec<String> = subset
            .files()
            .map(|(p, _)| format!("{host_dir}/{}", p.display()))
            .collect();
        tree.merge(subset.nest(&host_dir));

        let names: Vec<&str> = infra
            .iter()
            .map(|i| i.as_str())
            .chain(instances.iter().map(|i| i.instance.as_str()))
            .collect();
        let copy_loop: Vec<Value> = files.iter().map(|f| Value::from(f.as_str())).collect();
        plays.push(map([
            (
                "name",
                format!("Deploy {} to {host}", names.join(", ")).into(),
            ),
            ("hosts", host.into()),
            ("become", true.into()),
            (
                "tasks",
                Value::Sequence(vec![
                    map([
                        ("name", "Create the deployment directory".into()),
                        (
                            "ansible.builtin.file",
                            map([
                                ("path", target.as_str().into()),
                                ("state", "directory".into()),
                                ("mode", "0755".into()),
                            ]),
                        ),
                    ]),
                    map([
                        ("name", "Copy the compose file and env files".into()),
                        (
                            "ansible.builtin.copy",
                            map([
                                ("src", "{{ item }}".into()),
                                ("dest", format!("{target}/").into()),
                            ]),
                        ),
                        ("loop", Value::Sequence(copy_loop)),
                    ]),
                    map([
                        ("name", "Start the services".into()),
                        (
                            "ansible.builtin.command",
                            map([
                                ("cmd", "docker compose up -d --remove-orphans".into()),
                                ("chdir", target.as_str().into()),
                            ]),
                        ),
                    ]),
                ]),
            ),
        ]));
    }

    let header = format!(
        "# Generated by fastiot {} from deployments/{}/deployment.yaml. Do not edit.\n",
        env!("CARGO_PKG_VERSION"),
        deployment.name
    );
    let playbook = serde_yaml::to_string(&Value::Sequence(plays)).expect("playbook serializes");
    tree.insert("playbook.yaml", header + &playbook);
    tree.insert("inventory.ini", inventory);
    Ok(tree.nest("ansible"))
}

/// Instance names per host, for callers that report the partitioning.
pub fn host_assignment(deployment: &DeploymentConfig) -> BTreeMap<String, Vec<String>> {
    assign(deployment)
        .into_iter()
        .map(|(h, insts)| {
            (
                h.to_owned(),
                insts.iter().map(|i| i.instance.clone()).collect(),
            )
        })
        .collect()
}
