//! A fixed plant project, its fixture deployments, and golden-file comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fastiot::deploy::DeploymentConfig;
use fastiot::runtime::{Architecture, Infrastructure, PortSpec, RestartPolicy, ServiceManifest};
use fastiot::scaffold::ProjectManifest;
use fastiot::tree::FileTree;

/// Names of the fixture deployments with checked-in golden output.
pub const GOLDEN_DEPLOYMENTS: [&str; 3] = ["minimal", "duplicated", "multihost"];

/// Set to regenerate golden files instead of comparing against them.
pub const UPDATE_ENV: &str = "FASTIOT_UPDATE_GOLDEN";

fn core_tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

pub fn fixtures_dir() -> PathBuf {
    core_tests_dir().join("fixtures")
}

pub fn golden_dir(deployment: &str) -> PathBuf {
    core_tests_dir().join("golden").join(deployment)
}

pub fn fixture_deployment(name: &str) -> DeploymentConfig {
    let path = fixtures_dir()
        .join("deployments")
        .join(format!("{name}.yaml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    DeploymentConfig::from_yaml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A project with five services covering ports, devices, restart policies, every
/// infrastructure requirement and every architecture.
pub fn plant_project() -> ProjectManifest {
    let mut reader = ServiceManifest::new("plc_reader");
    reader.ports.push(PortSpec {
        container_port: 502,
        default_host_port: 5020,
        label: "modbus".into(),
    });
    reader.devices.push("/dev/ttyUSB0".into());
    reader.architectures = vec![
        Architecture::Amd64,
        Architecture::Arm64,
        Architecture::Armv7,
    ];
    reader
        .env
        .insert("FASTIOT_PLC_READER_POLL_MS".into(), "500".into());

    let mut dashboard = ServiceManifest::new("dashboard");
    dashboard.ports.push(PortSpec {
        container_port: 80,
        default_host_port: 8080,
        label: "http".into(),
    });
    dashboard.restart_policy = RestartPolicy::UnlessStopped;
    dashboard.requires.push(Infrastructure::DatabaseTimeseries);

    let mut historian = ServiceManifest::new("historian");
    historian.requires.extend([
        Infrastructure::DatabaseTimeseries,
        Infrastructure::DatabaseDocument,
    ]);
    historian.architectures = vec![Architecture::Amd64, Architecture::Arm64];

    let mut project = ProjectManifest::new("plant");
    project.library_name = Some("plant_lib".into());
    project.framework_version = "0.1.0".into();
    project.services = vec![
        ServiceManifest::new("producer"),
        ServiceManifest::new("consumer"),
        reader,
        dashboard,
        historian,
    ];
    project.deployments = GOLDEN_DEPLOYMENTS.iter().map(|s| s.to_string()).collect();
    project
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let content = std::fs::read_to_string(&p).unwrap_or_default();
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), content);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Compares `tree` byte-for-byte with the files under `dir`, listing every difference.
/// With `FASTIOT_UPDATE_GOLDEN` set, rewrites `dir` from `tree` instead.
pub fn compare_with_golden(tree: &FileTree, dir: &Path) -> Result<(), String> {
    if std::env::var_os(UPDATE_ENV).is_some() {
        let _ = std::fs::remove_dir_all(dir);
        tree.write_to(dir).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = read_tree(dir);
    let actual: BTreeMap<PathBuf, String> = tree
        .files()
        .map(|(p, c)| (p.to_path_buf(), c.to_owned()))
        .collect();
    let mut diffs = Vec::new();
    for (path, content) in &actual {
        match expected.get(path) {
            None => diffs.push(format!("unexpected file {}", path.display())),
            Some(e) if e != content => diffs.push(format!(
                "{} differs:\n--- golden\n{e}\n--- actual\n{content}",
                path.display()
            )),
            _ => {}
        }
    }
    for path in expected.keys().filter(|p| !actual.contains_key(*p)) {
        diffs.push(format!("missing file {}", path.display()));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(diffs.join("\n"))
    }
}
