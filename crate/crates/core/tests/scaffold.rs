use std::path::{Path, PathBuf};

use fastiot::deploy::{
    compile_deployment, plan_builds, BuildOptions, DeploymentConfig, ServiceInstance,
};
use fastiot::scaffold::{
    add_service, create_project, import_service, new_project, new_service, user_region_lines,
    validate_project, ProjectOptions, ScaffoldError, ScaffoldOptions, ServiceKind, Template,
    TEMPLATE_IDS,
};
use fastiot::tree::FileTree;
use proptest::prelude::*;

fn opts() -> ScaffoldOptions {
    ScaffoldOptions::default()
}

fn project(samples: bool, library: bool) -> ProjectOptions {
    ProjectOptions {
        with_sample_services: samples,
        with_library: library,
    }
}

fn unresolved(tree: &FileTree) -> Vec<String> {
    let re_like = |s: &str| {
        s.match_indices("{{").any(|(i, _)| {
            let rest = &s[i + 2..];
            let n = rest
                .bytes()
                .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
                .count();
            n > 0 && rest[n..].starts_with("}}")
        })
    };
    tree.files()
        .filter(|(p, c)| re_like(&p.to_string_lossy()) || re_like(c))
        .map(|(p, _)| p.display().to_string())
        .collect()
}

#[test]
fn bare_project_layout() {
    let tree = new_project("sam", &project(false, true), &opts()).unwrap();
    assert!(tree.get("deployments/default/deployment.yaml").is_some());
    assert!(tree.get("manifest.yaml").is_some());
    assert!(tree.get(".gitignore").is_some());
    assert!(tree.get("README.md").is_some());
    assert!(tree.get("src/sam_lib/Cargo.toml").is_some());
    for dir in ["src/services", "tests", "docs", "src/sam_lib"] {
        assert!(tree.contains_dir(dir), "{dir}");
    }
    assert!(!tree.files().any(|(p, _)| p.starts_with("src/services")));
    assert!(unresolved(&tree).is_empty());
}

#[test]
fn library_and_manifest_stay_small() {
    let tree = new_project("sam", &project(false, true), &opts()).unwrap();
    let lines: usize = tree
        .files()
        .filter(|(p, _)| *p == Path::new("manifest.yaml") || p.starts_with("src/sam_lib"))
        .map(|(_, c)| c.lines().filter(|l| !l.trim().is_empty()).count())
        .sum();
    assert!(lines <= 30, "{lines} lines");
}

#[test]
fn samples_add_producer_and_consumer() {
    let tree = new_project("sam", &project(true, true), &opts()).unwrap();
    for svc in ["producer", "consumer"] {
        for f in ["service.yaml", "Dockerfile", "Cargo.toml", "src/main.rs"] {
            let path = PathBuf::from("src/services").join(svc).join(f);
            assert!(tree.get(&path).is_some(), "{}", path.display());
        }
    }
    let deployment =
        DeploymentConfig::from_yaml(tree.get("deployments/default/deployment.yaml").unwrap())
            .unwrap();
    assert_eq!(deployment.services.len(), 2);
}

#[test]
fn without_library() {
    let tree = new_project("sam", &project(false, false), &opts()).unwrap();
    assert!(!tree.files().any(|(p, _)| p.starts_with("src/sam_lib")));
    assert!(!tree.get("manifest.yaml").unwrap().contains("library_name"));
    let dir = tempfile::tempdir().unwrap();
    tree.write_to(dir.path()).unwrap();
    validate_project(dir.path()).unwrap();
}

#[test]
fn target_not_empty_and_invalid_names() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("sam")).unwrap();
    std::fs::write(dir.path().join("sam/keep.txt"), "x").unwrap();
    assert!(matches!(
        create_project(dir.path(), "sam", &project(false, true), &opts()),
        Err(ScaffoldError::TargetNotEmpty(_))
    ));
    // An existing empty directory is fine.
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    create_project(dir.path(), "empty", &project(false, true), &opts()).unwrap();
    for bad in ["Sam", "", "my-project", "1st", "a b"] {
        assert!(
            matches!(
                new_project(bad, &project(false, true), &opts()),
                Err(ScaffoldError::InvalidName(_))
            ),
            "{bad}"
        );
    }
}

#[test]
fn duplicate_and_reserved_services() {
    let dir = tempfile::tempdir().unwrap();
    let root = create_project(dir.path(), "sam", &project(true, true), &opts()).unwrap();
    assert!(matches!(
        add_service(&root, "producer", ServiceKind::Bare, &opts()),
        Err(ScaffoldError::DuplicateService(_))
    ));
    assert!(matches!(
        add_service(&root, "sam_lib", ServiceKind::Bare, &opts()),
        Err(ScaffoldError::DuplicateService(_))
    ));
    assert!(matches!(
        add_service(&root, "broker", ServiceKind::Bare, &opts()),
        Err(ScaffoldError::ReservedName(_))
    ));
    let p = add_service(&root, "sensor_reader", ServiceKind::Sample, &opts()).unwrap();
    assert_eq!(p.services.len(), 3);
    assert_eq!(validate_project(&root).unwrap(), p);
}

#[test]
fn bare_user_region_is_short() {
    let p = fastiot::scaffold::ProjectManifest::new("sam");
    let (tree, _) = new_service(&p, "x", ServiceKind::Bare, &opts()).unwrap();
    let main = tree.get("src/services/x/src/main.rs").unwrap();
    let region = user_region_lines(main).expect("markers present");
    assert!(
        !region.is_empty() && region.len() <= 20,
        "{} lines",
        region.len()
    );
}

#[test]
fn every_service_kind_has_a_user_region() {
    let p = fastiot::scaffold::ProjectManifest::new("sam");
    for kind in ServiceKind::ALL {
        let (tree, _) = new_service(&p, "svc", kind, &opts()).unwrap();
        assert!(user_region_lines(tree.get("src/services/svc/src/main.rs").unwrap()).is_some());
        assert!(unresolved(&tree).is_empty(), "{kind:?}");
    }
}

#[test]
fn templates_render_completely() {
    for id in TEMPLATE_IDS {
        let t = Template::embedded(id).unwrap();
        for name in t.placeholders() {
            assert!(
                [
                    "project_name",
                    "library_name",
                    "service_name",
                    "framework_dep",
                    "framework_version",
                    "workspace_members"
                ]
                .contains(&name.as_str()),
                "template {id} uses unknown placeholder {name}"
            );
        }
    }
}

#[test]
fn framework_path_option() {
    let o = ScaffoldOptions {
        framework: fastiot::scaffold::FrameworkDep::Path(PathBuf::from("/opt/fastiot core")),
        template_dir: None,
    };
    let tree = new_project("sam", &project(false, false), &o).unwrap();
    assert!(tree
        .get("Cargo.toml")
        .unwrap()
        .contains(r#"fastiot = { path = "/opt/fastiot core" }"#));
}

#[test]
fn missing_service_directory_is_one_violation() {
    let dir = tempfile::tempdir().unwrap();
    let root = create_project(dir.path(), "sam", &project(true, true), &opts()).unwrap();
    std::fs::remove_dir_all(root.join("src/services/consumer")).unwrap();
    let v = validate_project(&root).unwrap_err();
    assert_eq!(v.len(), 1, "{v:?}");
    assert!(v[0].to_string().contains("consumer"));
}

#[test]
fn undeclared_service_in_deployment() {
    let dir = tempfile::tempdir().unwrap();
    let root = create_project(dir.path(), "sam", &project(true, true), &opts()).unwrap();
    let path = root.join("deployments/default/deployment.yaml");
    let mut d = DeploymentConfig::from_yaml(&std::fs::read_to_string(&path).unwrap()).unwrap();
    d.services.push(ServiceInstance::new("ghost_1", "ghost"));
    std::fs::write(&path, d.to_yaml()).unwrap();
    let v = validate_project(&root).unwrap_err();
    assert_eq!(v.len(), 1, "{v:?}");
    let msg = v[0].to_string();
    assert!(msg.contains("default") && msg.contains("ghost"), "{msg}");
}

#[test]
fn violations_are_all_collected_and_garbage_never_panics() {
    let dir = tempfile::tempdir().unwrap();
    let root = create_project(dir.path(), "sam", &project(true, true), &opts()).unwrap();
    std::fs::write(
        root.join("src/services/producer/service.yaml"),
        "name: [unclosed",
    )
    .unwrap();
    std::fs::remove_file(root.join("src/services/consumer/Dockerfile")).unwrap();
    std::fs::create_dir(root.join("src/services/stray")).unwrap();
    let v = validate_project(&root).unwrap_err();
    assert_eq!(v.len(), 3, "{v:#?}");

    for garbage in [
        "",
        ":",
        "project_name: [",
        "\u{0}\u{1}",
        "project_name: 3\nservices: {a: b}",
    ] {
        std::fs::write(root.join("manifest.yaml"), garbage).unwrap();
        assert!(validate_project(&root).is_err());
    }
    assert!(validate_project(&dir.path().join("nowhere")).is_err());
}

#[test]
fn generation_is_deterministic() {
    for (samples, library) in [(false, false), (true, true)] {
        let a = new_project("sam", &project(samples, library), &opts()).unwrap();
        let b = new_project("sam", &project(samples, library), &opts()).unwrap();
        assert_eq!(a, b);
    }
}

fn arb_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,10}".prop_filter("not reserved", |n| fastiot::scaffold::check_name(n).is_ok())
}

fn arb_kind() -> impl Strategy<Value = ServiceKind> {
    prop::sample::select(ServiceKind::ALL.to_vec())
}

/// Moves `service` from project `a` to project `b` the way a user would: copy the directory,
/// add the name to `manifest.yaml`.
fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whatever the generators produce, the validator accepts.
    #[test]
    fn generated_projects_validate(
        name in arb_name(),
        samples in any::<bool>(),
        library in any::<bool>(),
        services in prop::collection::vec((arb_name(), arb_kind()), 0..4),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let root = create_project(dir.path(), &name, &project(samples, library), &opts()).unwrap();
        let mut expected = validate_project(&root).unwrap();
        for (svc, kind) in services {
            match add_service(&root, &svc, kind, &opts()) {
                Ok(p) => expected = p,
                Err(ScaffoldError::DuplicateService(_)) => {
                    prop_assert!(expected.service(&svc).is_some() || expected.library_name.as_deref() == Some(svc.as_str()));
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            prop_assert_eq!(validate_project(&root), Ok(expected.clone()));
        }
    }

    /// A service moved between projects validates and plans builds there without edits.
    #[test]
    fn services_transfer_between_projects(
        a in arb_name(),
        b in arb_name(),
        svc in arb_name(),
        kind in arb_kind(),
    ) {
        prop_assume!(a != b && svc != format!("{a}_lib") && svc != format!("{b}_lib"));
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a");
        let pb = dir.path().join("b");
        let root_a = create_project(&pa, &a, &project(false, true), &opts()).unwrap();
        let root_b = create_project(&pb, &b, &project(true, true), &opts()).unwrap();
        prop_assume!(svc != "producer" && svc != "consumer");
        add_service(&root_a, &svc, kind, &opts()).unwrap();

        let project_b = import_service(&root_b, &root_a.join("src/services").join(&svc))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut deployment = DeploymentConfig::new("moved");
        deployment.services.push(ServiceInstance::new(&svc, &svc));
        let plan = plan_builds(&project_b, &deployment, &BuildOptions::default()).unwrap();
        prop_assert_eq!(plan.entries.len(), 1);
        prop_assert_eq!(&plan.entries[0].image, &format!("{b}/{svc}:dev"));
        compile_deployment(&project_b, &deployment).unwrap();
        // The moved files are byte-identical to the originals.
        for f in walk(&root_a.join("src/services").join(&svc)) {
            let rel = f.strip_prefix(&root_a).unwrap();
            prop_assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(root_b.join(rel)).unwrap());
        }
    }
}

#[test]
fn import_rejects_duplicates_and_missing_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let a = create_project(
        &dir.path().join("a"),
        "alpha",
        &project(true, true),
        &opts(),
    )
    .unwrap();
    let b = create_project(&dir.path().join("b"), "beta", &project(true, true), &opts()).unwrap();
    let err = import_service(&b, &a.join("src/services/producer")).unwrap_err();
    assert!(
        matches!(err, ScaffoldError::DuplicateService(ref s) if s == "producer"),
        "{err}"
    );

    let stray = dir.path().join("stray");
    std::fs::create_dir_all(&stray).unwrap();
    let err = import_service(&b, &stray).unwrap_err();
    assert!(matches!(err, ScaffoldError::Io { .. }), "{err}");
    assert!(validate_project(&b).is_ok());
    assert!(!b.join("src/services/stray").exists());
}
