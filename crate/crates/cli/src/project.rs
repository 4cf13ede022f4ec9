use std::collections::BTreeMap;
use std::path::Path;

use fastiot::scaffold::{
    add_service, create_project, import_service as import, validate_project, ProjectManifest,
    ProjectOptions, ScaffoldError, ScaffoldOptions, ServiceKind,
};

use crate::user;

fn scaffold_options() -> ScaffoldOptions {
    let env: BTreeMap<String, String> = std::env::vars().collect();
    ScaffoldOptions::from_env(&env)
}

fn scaffold_error(e: ScaffoldError) -> anyhow::Error {
    match e {
        ScaffoldError::Io { .. } => anyhow::Error::new(e),
        ScaffoldError::InvalidProject(violations) => project_violations(&violations),
        other => user(other),
    }
}

fn project_violations(violations: &[fastiot::scaffold::Violation]) -> anyhow::Error {
    for v in violations {
        eprintln!("{v}");
    }
    user(format!("the project has {} violation(s)", violations.len()))
}

/// Loads and validates the project at `root`.
pub fn load(root: &Path) -> anyhow::Result<ProjectManifest> {
    validate_project(root).map_err(|v| project_violations(&v))
}

pub fn new_project(parent: &Path, name: &str, samples: bool, library: bool) -> anyhow::Result<()> {
    let options = ProjectOptions {
        with_sample_services: samples,
        with_library: library,
    };
    let root =
        create_project(parent, name, &options, &scaffold_options()).map_err(scaffold_error)?;
    println!("created project {name} in {}", root.display());
    Ok(())
}

pub fn new_service(root: &Path, name: &str, kind: ServiceKind) -> anyhow::Result<()> {
    add_service(root, name, kind, &scaffold_options()).map_err(scaffold_error)?;
    println!(
        "created service {name} in {}",
        root.join("src/services").join(name).display()
    );
    Ok(())
}

pub fn import_service(root: &Path, dir: &Path) -> anyhow::Result<()> {
    let project = import(root, dir).map_err(scaffold_error)?;
    let name = project
        .services
        .last()
        .map(|s| s.name.as_str())
        .unwrap_or_default();
    println!("imported service {name} into {}", project.project_name);
    Ok(())
}

pub fn validate(root: &Path) -> anyhow::Result<()> {
    let project = load(root)?;
    println!(
        "project {} is valid: {} service(s), {} deployment(s)",
        project.project_name,
        project.services.len(),
        project.deployments.len()
    );
    Ok(())
}
