use std::path::Path;

use anyhow::Context;
use fastiot::deploy::{
    compile_all, deployment_output_dir, plan_builds, plan_rollout, BuildOptions, DeploymentConfig,
};
use fastiot::scaffold::{load_deployment, ProjectManifest};
use fastiot::tree::FileTree;

use crate::{project, user};

fn load(root: &Path, deployment: &str) -> anyhow::Result<(ProjectManifest, DeploymentConfig)> {
    let project = project::load(root)?;
    if !project.deployments.iter().any(|d| d == deployment) {
        return Err(user(format!(
            "unknown deployment {deployment:?}; manifest.yaml lists: {}",
            project.deployments.join(", ")
        )));
    }
    let config = load_deployment(root, deployment).map_err(user)?;
    Ok((project, config))
}

fn write_output(
    root: &Path,
    deployment: &str,
    tree: &FileTree,
    replace: bool,
) -> anyhow::Result<()> {
    let dir = root.join(deployment_output_dir(deployment));
    if replace && dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("cannot clear {}", dir.display()))?;
    }
    tree.write_to(&dir)
        .with_context(|| format!("cannot write {}", dir.display()))?;
    for path in tree.files().map(|(p, _)| p) {
        println!(
            "wrote {}",
            deployment_output_dir(deployment).join(path).display()
        );
    }
    Ok(())
}

pub fn config(root: &Path, deployment: &str) -> anyhow::Result<()> {
    let (project, config) = load(root, deployment)?;
    let tree = compile_all(&project, &config).map_err(user)?;
    write_output(root, deployment, &tree, true)
}

pub fn rollout(root: &Path, deployment: &str) -> anyhow::Result<()> {
    let (project, config) = load(root, deployment)?;
    let tree = plan_rollout(&project, &config).map_err(user)?;
    let dir = root.join(deployment_output_dir(deployment)).join("ansible");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("cannot clear {}", dir.display()))?;
    }
    write_output(root, deployment, &tree, false)
}

pub fn build(
    root: &Path,
    deployment: &str,
    tag: Option<String>,
    push: bool,
    execute: bool,
) -> anyhow::Result<()> {
    let (project, config) = load(root, deployment)?;
    let options = BuildOptions {
        tag,
        push,
        native: None,
    };
    let plan = plan_builds(&project, &config, &options).map_err(user)?;
    let script = root.join(plan.script_path());
    if let Some(parent) = script.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    std::fs::write(&script, plan.script())
        .with_context(|| format!("cannot write {}", script.display()))?;
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755))?;
    }
    println!("wrote {}", plan.script_path().display());
    for cmd in plan.commands() {
        if !execute {
            println!("  {}", cmd.join(" "));
            continue;
        }
        println!("+ {}", cmd.join(" "));
        let status = std::process::Command::new(&cmd[0])
            .args(&cmd[1..])
            .current_dir(root)
            .status()
            .map_err(|e| user(format!("cannot run {}: {e}", cmd[0])))?;
        if !status.success() {
            return Err(user(format!("`{}` failed with {status}", cmd.join(" "))));
        }
    }
    Ok(())
}
