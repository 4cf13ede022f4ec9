use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::deploy::{check_deployment, deployment_file, DeploymentConfig};
use crate::runtime::{is_valid_name, ServiceManifest};

use super::{ManifestFile, ProjectManifest, MANIFEST_FILE, SERVICE_MANIFEST_FILE};

/// One problem found in a project, with the file or item it concerns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn is_semver(v: &str) -> bool {
    let core = v.split(['-', '+']).next().unwrap_or_default();
    let parts: Vec<&str> = core.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

/// Reads `deployments/<name>/deployment.yaml` below `root`.
pub fn load_deployment(root: &Path, name: &str) -> Result<DeploymentConfig, Violation> {
    let rel = deployment_file(name);
    let location = rel.display().to_string();
    let text = std::fs::read_to_string(root.join(&rel))
        .map_err(|e| Violation::new(&location, format!("cannot read deployment: {e}")))?;
    let deployment = DeploymentConfig::from_yaml(&text)
        .map_err(|e| Violation::new(&location, format!("malformed deployment: {e}")))?;
    if deployment.name != name {
        return Err(Violation::new(
            &location,
            format!(
                "declares name {:?} but lives in deployments/{name}",
                deployment.name
            ),
        ));
    }
    Ok(deployment)
}

fn load_service(
    root: &Path,
    name: &str,
    violations: &mut Vec<Violation>,
) -> Option<ServiceManifest> {
    let dir = Path::new("src/services").join(name);
    let loc = dir.display().to_string();
    if !root.join(&dir).is_dir() {
        violations.push(Violation::new(
            format!("service {name}"),
            format!("directory {loc} is missing"),
        ));
        return None;
    }
    for required in ["Cargo.toml", "Dockerfile", "src/main.rs"] {
        if !root.join(&dir).join(required).is_file() {
            violations.push(Violation::new(&loc, format!("{required} is missing")));
        }
    }
    let path = dir.join(SERVICE_MANIFEST_FILE);
    let ploc = path.display().to_string();
    let text = match std::fs::read_to_string(root.join(&path)) {
        Ok(t) => t,
        Err(e) => {
            violations.push(Violation::new(
                &ploc,
                format!("cannot read service manifest: {e}"),
            ));
            return None;
        }
    };
    let manifest = match ServiceManifest::from_yaml(&text) {
        Ok(m) => m,
        Err(e) => {
            violations.push(Violation::new(
                &ploc,
                format!("malformed service manifest: {e}"),
            ));
            return None;
        }
    };
    if manifest.name != name {
        violations.push(Violation::new(
            &ploc,
            format!("declares name {:?} but lives in {loc}", manifest.name),
        ));
    }
    violations.extend(
        manifest
            .violations()
            .into_iter()
            .map(|m| Violation::new(&ploc, m)),
    );
    Some(manifest)
}

/// Checks the layout, every manifest and every deployment of the project at `root`.
/// Returns the loaded project, or every violation found.
pub fn validate_project(root: &Path) -> Result<ProjectManifest, Vec<Violation>> {
    let text = std::fs::read_to_string(root.join(MANIFEST_FILE)).map_err(|e| {
        vec![Violation::new(
            MANIFEST_FILE,
            format!("cannot read project manifest: {e}"),
        )]
    })?;
    let file: ManifestFile = serde_yaml::from_str(&text).map_err(|e| {
        vec![Violation::new(
            MANIFEST_FILE,
            format!("malformed project manifest: {e}"),
        )]
    })?;

    let mut violations = Vec::new();
    if !is_valid_name(&file.project_name) {
        violations.push(Violation::new(
            MANIFEST_FILE,
            format!("project name {:?} must match [a-z0-9_]+", file.project_name),
        ));
    }
    if !is_semver(&file.framework_version) {
        violations.push(Violation::new(
            MANIFEST_FILE,
            format!(
                "framework_version {:?} is not a semantic version",
                file.framework_version
            ),
        ));
    }
    if let Some(lib) = &file.library_name {
        if !is_valid_name(lib) {
            violations.push(Violation::new(
                MANIFEST_FILE,
                format!("library name {lib:?} must match [a-z0-9_]+"),
            ));
        } else if !root.join("src").join(lib).join("Cargo.toml").is_file() {
            violations.push(Violation::new(
                format!("library {lib}"),
                format!("src/{lib}/Cargo.toml is missing"),
            ));
        }
    }
    for dir in ["src/services", "deployments"] {
        if !root.join(dir).is_dir() {
            violations.push(Violation::new(dir, "required directory is missing"));
        }
    }

    let mut services = Vec::new();
    let mut seen = BTreeSet::new();
    for name in &file.services {
        if !seen.insert(name.as_str()) {
            violations.push(Violation::new(
                MANIFEST_FILE,
                format!("service {name} is listed twice"),
            ));
            continue;
        }
        if file.library_name.as_deref() == Some(name.as_str()) {
            violations.push(Violation::new(
                MANIFEST_FILE,
                format!("service {name} has the same name as the library"),
            ));
        }
        if let Some(m) = load_service(root, name, &mut violations) {
            services.push(m);
        }
    }
    if let Ok(entries) = std::fs::read_dir(root.join("src/services")) {
        let mut extra: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| !seen.contains(n.as_str()))
            .collect();
        extra.sort();
        for name in extra {
            violations.push(Violation::new(
                format!("src/services/{name}"),
                "service directory is not listed in manifest.yaml",
            ));
        }
    }

    let project = ProjectManifest {
        project_name: file.project_name.clone(),
        library_name: file.library_name.clone(),
        services,
        deployments: file.deployments.clone(),
        framework_version: file.framework_version.clone(),
    };

    let mut seen = BTreeSet::new();
    for name in &file.deployments {
        if !seen.insert(name.as_str()) {
            violations.push(Violation::new(
                MANIFEST_FILE,
                format!("deployment {name} is listed twice"),
            ));
            continue;
        }
        let deployment = match load_deployment(root, name) {
            Ok(d) => d,
            Err(v) => {
                violations.push(v);
                continue;
            }
        };
        let loc = deployment_file(name).display().to_string();
        for e in check_deployment(&project, &deployment) {
            // Services that failed to load were already reported above.
            if let crate::deploy::DeployError::UnknownService { service, .. } = &e {
                if file.services.contains(service) {
                    continue;
                }
            }
            violations.push(Violation::new(&loc, e.to_string()));
        }
    }

    if violations.is_empty() {
        Ok(project)
    } else {
        Err(violations)
    }
}
