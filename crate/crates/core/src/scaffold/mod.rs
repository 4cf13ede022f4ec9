//! Project and service generation from templates, and validation of the project layout.
//!
//! A project looks like this:
//!
//! ```text
//! <project>/
//!   manifest.yaml                       project name, services, deployments
//!   Cargo.toml                          workspace over the library and services
//!   src/<library>/                      optional shared library
//!   src/services/<service>/             service.yaml, Dockerfile, Cargo.toml, src/main.rs
//!   deployments/<deployment>/deployment.yaml
//!   tests/  docs/  README.md  .gitignore
//! ```

mod template;
mod validate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use template::{Template, TEMPLATE_IDS};
pub use validate::{load_deployment, validate_project, Violation};

use crate::deploy::{DeploymentConfig, ServiceInstance};
use crate::runtime::{is_valid_name, Infrastructure, ServiceManifest};
use crate::tree::FileTree;

pub const MANIFEST_FILE: &str = "manifest.yaml";
pub const SERVICE_MANIFEST_FILE: &str = "service.yaml";
pub const FRAMEWORK_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const ENV_FRAMEWORK_PATH: &str = "FASTIOT_FRAMEWORK_PATH";
pub const ENV_TEMPLATE_DIR: &str = "FASTIOT_TEMPLATE_DIR";

/// Names that would clash with dependencies, infrastructure or Rust itself.
const RESERVED: &[&str] = &[
    "fastiot",
    "tokio",
    "broker",
    "database_timeseries",
    "database_document",
    "build",
    "test",
    "core",
    "std",
    "alloc",
    "proc_macro",
    "self",
    "crate",
    "super",
];

#[derive(Debug, thiserror::Error)]
pub enum ScaffoldError {
    #[error("{0} exists and is not empty")]
    TargetNotEmpty(PathBuf),
    #[error(
        "invalid name {0:?}: use lowercase letters, digits and underscores, starting with a letter"
    )]
    InvalidName(String),
    #[error("{0:?} is reserved")]
    ReservedName(String),
    #[error("service {0} already exists in this project")]
    DuplicateService(String),
    #[error("no template named {0}")]
    UnknownTemplate(String),
    #[error("template {template} uses placeholder {{{{{placeholder}}}}}, which has no value")]
    UnresolvedPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("invalid project: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProject(Vec<Violation>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Names for generated projects and services: `[a-z][a-z0-9_]*`, not reserved.
pub fn check_name(name: &str) -> Result<(), ScaffoldError> {
    if !is_valid_name(name) || !name.starts_with(|c: char| c.is_ascii_lowercase()) {
        return Err(ScaffoldError::InvalidName(name.to_owned()));
    }
    if RESERVED.contains(&name) {
        return Err(ScaffoldError::ReservedName(name.to_owned()));
    }
    Ok(())
}

/// The on-disk form of `manifest.yaml`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub project_name: String,
    /// Absent when the project has no shared library.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_name: Option<String>,
    pub framework_version: String,
    #[serde(default)]
    pub services: Vec<String>,
    #[serde(default)]
    pub deployments: Vec<String>,
}

/// A loaded project: its manifest plus the manifest of every service.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectManifest {
    pub project_name: String,
    pub library_name: Option<String>,
    pub services: Vec<ServiceManifest>,
    pub deployments: Vec<String>,
    pub framework_version: String,
}

impl ProjectManifest {
    pub fn new(project_name: impl Into<String>) -> Self {
        ProjectManifest {
            project_name: project_name.into(),
            library_name: None,
            services: Vec::new(),
            deployments: Vec::new(),
            framework_version: FRAMEWORK_VERSION.to_owned(),
        }
    }

    pub fn service(&self, name: &str) -> Option<&ServiceManifest> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn to_file(&self) -> ManifestFile {
        ManifestFile {
            project_name: self.project_name.clone(),
            library_name: self.library_name.clone(),
            framework_version: self.framework_version.clone(),
            services: self.services.iter().map(|s| s.name.clone()).collect(),
            deployments: self.deployments.clone(),
        }
    }

    /// The text of `manifest.yaml`.
    pub fn manifest_yaml(&self) -> String {
        format!(
            "# generated_by: fastiot {}\n{}",
            self.framework_version,
            serde_yaml::to_string(&self.to_file()).expect("manifest serializes")
        )
    }
}

/// Where generated projects get the framework crate from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameworkDep {
    Version(String),
    Path(PathBuf),
}

impl FrameworkDep {
    fn toml_line(&self) -> String {
        match self {
            FrameworkDep::Version(v) => format!("fastiot = {}", toml_string(v)),
            FrameworkDep::Path(p) => format!(
                "fastiot = {{ path = {} }}",
                toml_string(&p.to_string_lossy())
            ),
        }
    }
}

fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaffoldOptions {
    pub framework: FrameworkDep,
    /// Directory whose `<template id>/` subdirectories replace the embedded templates.
    pub template_dir: Option<PathBuf>,
}

impl Default for ScaffoldOptions {
    fn default() -> Self {
        ScaffoldOptions {
            framework: FrameworkDep::Version(FRAMEWORK_VERSION.to_owned()),
            template_dir: None,
        }
    }
}

impl ScaffoldOptions {
    /// Reads `FASTIOT_FRAMEWORK_PATH` and `FASTIOT_TEMPLATE_DIR`.
    pub fn from_env(env: &BTreeMap<String, String>) -> Self {
        let framework = match env.get(ENV_FRAMEWORK_PATH).filter(|p| !p.is_empty()) {
            Some(p) => FrameworkDep::Path(PathBuf::from(p)),
            None => FrameworkDep::Version(FRAMEWORK_VERSION.to_owned()),
        };
        ScaffoldOptions {
            framework,
            template_dir: env
                .get(ENV_TEMPLATE_DIR)
                .filter(|p| !p.is_empty())
                .map(PathBuf::from),
        }
    }

    fn template(&self, id: &str) -> Result<Template, ScaffoldError> {
        Template::load(id, self.template_dir.as_deref())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectOptions {
    pub with_sample_services: bool,
    pub with_library: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServiceKind {
    /// Sends and receives example things.
    Sample,
    /// Lifecycle skeleton consuming things.
    Bare,
    /// Publishes a sequence-numbered reading every 100 ms.
    Producer,
    /// Logs every thing it receives.
    Consumer,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 4] = [
        ServiceKind::Sample,
        ServiceKind::Bare,
        ServiceKind::Producer,
        ServiceKind::Consumer,
    ];

    pub fn template_id(self) -> &'static str {
        match self {
            ServiceKind::Sample => "sample",
            ServiceKind::Bare => "bare",
            ServiceKind::Producer => "producer",
            ServiceKind::Consumer => "consumer",
        }
    }
}

fn base_vars(
    project: &ProjectManifest,
    options: &ScaffoldOptions,
) -> BTreeMap<&'static str, String> {
    let mut members = Vec::new();
    if let Some(lib) = &project.library_name {
        members.push(toml_string(&format!("src/{lib}")));
    }
    members.push(toml_string("src/services/*"));
    BTreeMap::from([
        ("project_name", project.project_name.clone()),
        (
            "library_name",
            project.library_name.clone().unwrap_or_default(),
        ),
        ("framework_dep", options.framework.toml_line()),
        ("framework_version", project.framework_version.clone()),
        ("workspace_members", members.join(", ")),
    ])
}

/// Files of one service, relative to the project root.
fn service_tree(
    project: &ProjectManifest,
    manifest: &ServiceManifest,
    kind: ServiceKind,
    options: &ScaffoldOptions,
) -> Result<FileTree, ScaffoldError> {
    let mut vars = base_vars(project, options);
    vars.insert("service_name", manifest.name.clone());
    let mut tree = options.template("service")?.render(&vars)?;
    tree.merge(options.template(kind.template_id())?.render(&vars)?);
    tree.insert(SERVICE_MANIFEST_FILE, manifest.to_yaml());
    Ok(tree.nest(Path::new("src/services").join(&manifest.name)))
}

/// The default deployment: every service once, plus the infrastructure they require.
fn default_deployment(project: &ProjectManifest) -> DeploymentConfig {
    let mut d = DeploymentConfig::new("default");
    for s in &project.services {
        d.infrastructure.extend(s.requires.iter().copied());
        d.services.push(ServiceInstance::new(&s.name, &s.name));
    }
    d.infrastructure.insert(Infrastructure::Broker);
    d
}

/// Renders a complete project, relative to the project directory.
pub fn new_project(
    name: &str,
    project: &ProjectOptions,
    options: &ScaffoldOptions,
) -> Result<FileTree, ScaffoldError> {
    check_name(name)?;
    let mut manifest = ProjectManifest::new(name);
    if project.with_library {
        manifest.library_name = Some(format!("{name}_lib"));
    }
    manifest.deployments.push("default".into());
    let samples = [
        ("producer", ServiceKind::Producer),
        ("consumer", ServiceKind::Consumer),
    ];
    if project.with_sample_services {
        manifest.services = samples
            .iter()
            .map(|(n, _)| ServiceManifest::new(*n))
            .collect();
    }

    let vars = base_vars(&manifest, options);
    let mut tree = options.template("project")?.render(&vars)?;
    if let Some(lib) = &manifest.library_name {
        tree.merge(
            options
                .template("library")?
                .render(&vars)?
                .nest(Path::new("src").join(lib)),
        );
    }
    tree.insert_dir("src/services");
    tree.insert_dir("tests");
    tree.insert_dir("docs");
    if project.with_sample_services {
        for ((_, kind), svc) in samples.iter().zip(&manifest.services) {
            tree.merge(service_tree(&manifest, svc, *kind, options)?);
        }
    }
    tree.insert(
        crate::deploy::deployment_file("default"),
        default_deployment(&manifest).to_yaml(),
    );
    tree.insert(MANIFEST_FILE, manifest.manifest_yaml());
    Ok(tree)
}

/// True when `dir` does not exist or has no entries.
pub fn is_absent_or_empty(dir: &Path) -> bool {
    match std::fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_none(),
        Err(_) => !dir.exists(),
    }
}

/// Writes a new project to `<parent>/<name>` and returns its root.
pub fn create_project(
    parent: &Path,
    name: &str,
    project: &ProjectOptions,
    options: &ScaffoldOptions,
) -> Result<PathBuf, ScaffoldError> {
    let tree = new_project(name, project, options)?;
    let root = parent.join(name);
    if !is_absent_or_empty(&root) {
        return Err(ScaffoldError::TargetNotEmpty(root));
    }
    tree.write_to(&root).map_err(|e| ScaffoldError::Io {
        path: root.clone(),
        source: e,
    })?;
    Ok(root)
}

/// Renders a new service and returns its files (relative to the project root, including the
/// updated `manifest.yaml`) and the updated project.
pub fn new_service(
    project: &ProjectManifest,
    name: &str,
    kind: ServiceKind,
    options: &ScaffoldOptions,
) -> Result<(FileTree, ProjectManifest), ScaffoldError> {
    check_name(name)?;
    if project.service(name).is_some() || project.library_name.as_deref() == Some(name) {
        return Err(ScaffoldError::DuplicateService(name.to_owned()));
    }
    let mut updated = project.clone();
    let manifest = ServiceManifest::new(name);
    let mut tree = service_tree(&updated, &manifest, kind, options)?;
    updated.services.push(manifest);
    tree.insert(MANIFEST_FILE, updated.manifest_yaml());
    Ok((tree, updated))
}

/// Adds a service to the project at `root` on disk.
pub fn add_service(
    root: &Path,
    name: &str,
    kind: ServiceKind,
    options: &ScaffoldOptions,
) -> Result<ProjectManifest, ScaffoldError> {
    let project = validate_project(root).map_err(ScaffoldError::InvalidProject)?;
    let (tree, updated) = new_service(&project, name, kind, options)?;
    let dir = root.join("src/services").join(name);
    if !is_absent_or_empty(&dir) {
        return Err(ScaffoldError::TargetNotEmpty(dir));
    }
    tree.write_to(root).map_err(|e| ScaffoldError::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    Ok(updated)
}

/// Copies the service directory `service_dir` (from another project) into the project at
/// `root` and registers it in `manifest.yaml`. The directory name is the service name.
pub fn import_service(root: &Path, service_dir: &Path) -> Result<ProjectManifest, ScaffoldError> {
    let project = validate_project(root).map_err(ScaffoldError::InvalidProject)?;
    let name = service_dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| ScaffoldError::InvalidName(service_dir.display().to_string()))?;
    check_name(name)?;
    if project.service(name).is_some() || project.library_name.as_deref() == Some(name) {
        return Err(ScaffoldError::DuplicateService(name.to_owned()));
    }
    let manifest_path = service_dir.join(SERVICE_MANIFEST_FILE);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScaffoldError::Io { path, source }
    };
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest = ServiceManifest::from_yaml(&text).map_err(|e| {
        ScaffoldError::InvalidProject(vec![Violation {
            location: manifest_path.display().to_string(),
            message: format!("malformed service manifest: {e}"),
        }])
    })?;
    let dest = root.join("src/services").join(name);
    if !is_absent_or_empty(&dest) {
        return Err(ScaffoldError::TargetNotEmpty(dest));
    }
    copy_dir(service_dir, &dest).map_err(io_err(&dest))?;
    let mut updated = project;
    updated.services.push(manifest);
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, updated.manifest_yaml()).map_err(io_err(&path))?;
    validate_project(root).map_err(ScaffoldError::InvalidProject)
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            if entry.file_name() != "target" {
                copy_dir(&entry.path(), &target)?;
            }
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

/// Marker lines around the part of a generated `main.rs` meant for editing.
pub const USER_REGION_BEGIN: &str = "// --- user code begin ---";
pub const USER_REGION_END: &str = "// --- user code end ---";

/// Non-blank lines strictly between the user-region markers, or `None` without markers.
pub fn user_region_lines(source: &str) -> Option<Vec<&str>> {
    let start = source.find(USER_REGION_BEGIN)? + USER_REGION_BEGIN.len();
    let end = start + source[start..].find(USER_REGION_END)?;
    Some(
        source[start..end]
            .lines()
            .filter(|l| !l.trim().is_empty())
            .collect(),
    )
}
