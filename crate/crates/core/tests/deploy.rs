use std::collections::{BTreeMap, BTreeSet};

use fastiot::deploy::{
    check_deployment, compile_all, compile_deployment, host_assignment, plan_builds, plan_rollout,
    BuildOptions, DeployError, DeploymentConfig, HostSpec, ServiceInstance,
};
use fastiot::envfile::parse_env;
use fastiot::runtime::{Architecture, Infrastructure, PortSpec, ServiceManifest};
use fastiot::scaffold::ProjectManifest;
use fastiot_testkit::fixtures::{
    compare_with_golden, fixture_deployment, golden_dir, plant_project, GOLDEN_DEPLOYMENTS,
};
use proptest::prelude::*;

fn compose_services(tree: &fastiot::tree::FileTree) -> BTreeMap<String, serde_yaml::Value> {
    let text = tree.get("docker-compose.yaml").expect("compose file");
    let doc: serde_yaml::Value = serde_yaml::from_str(text).unwrap();
    doc["services"]
        .as_mapping()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.as_str().unwrap().to_owned(), v.clone()))
        .collect()
}

#[test]
fn golden_files_match() {
    let project = plant_project();
    for name in GOLDEN_DEPLOYMENTS {
        let tree = compile_all(&project, &fixture_deployment(name)).unwrap();
        if let Err(diff) = compare_with_golden(&tree, &golden_dir(name)) {
            panic!("deployment {name}:\n{diff}");
        }
        assert_eq!(
            compile_all(&project, &fixture_deployment(name)).unwrap(),
            tree,
            "{name} recompiles identically"
        );
    }
}

#[test]
fn producer_consumer_broker() {
    let tree = compile_deployment(&plant_project(), &fixture_deployment("minimal")).unwrap();
    let services = compose_services(&tree);
    assert_eq!(
        services.keys().collect::<Vec<_>>(),
        ["broker", "consumer", "producer"]
    );
    assert_eq!(services["producer"]["restart"].as_str(), Some("always"));
    assert_eq!(services["consumer"]["restart"].as_str(), Some("always"));
    assert_eq!(
        services["broker"]["image"].as_str(),
        Some("nats:2.10-alpine")
    );
    let env = parse_env(tree.get("producer.env").unwrap()).unwrap();
    assert_eq!(env["FASTIOT_BROKER_HOST"], "broker");
    assert_eq!(env["FASTIOT_BROKER_PORT"], "4222");
}

#[test]
fn same_service_twice_gets_two_entries_and_env_files() {
    let tree = compile_deployment(&plant_project(), &fixture_deployment("duplicated")).unwrap();
    let services = compose_services(&tree);
    assert!(services.contains_key("line_a_reader") && services.contains_key("line_b_reader"));
    let a = parse_env(tree.get("line_a_reader.env").unwrap()).unwrap();
    let b = parse_env(tree.get("line_b_reader.env").unwrap()).unwrap();
    assert_eq!(a["FASTIOT_PLC_READER_LINE"], "A");
    assert_eq!(b["FASTIOT_PLC_READER_LINE"], "B");
    // Manifest default, overridden only for line B.
    assert_eq!(a["FASTIOT_PLC_READER_POLL_MS"], "500");
    assert_eq!(b["FASTIOT_PLC_READER_POLL_MS"], "100");
    assert_eq!(
        services["line_b_reader"]["image"].as_str(),
        Some("plant/plc_reader:debug")
    );
    assert_eq!(
        services["alarms"]["image"].as_str(),
        Some("alarm_suite/notifier:1.4")
    );
    assert_eq!(
        services["dashboard"]["restart"].as_str(),
        Some("unless-stopped")
    );
}

#[test]
fn port_collision_names_both_instances() {
    let mut d = DeploymentConfig::new("clash");
    let mut b = ServiceInstance::new("board_b", "dashboard");
    b.ports.insert("http".into(), 8080);
    d.services
        .push(ServiceInstance::new("board_a", "dashboard"));
    d.services.push(b);
    d.infrastructure.insert(Infrastructure::DatabaseTimeseries);
    let err = compile_deployment(&plant_project(), &d).unwrap_err();
    assert_eq!(
        err,
        DeployError::PortCollision {
            port: 8080,
            first: "board_a".into(),
            second: "board_b".into()
        }
    );
    let msg = err.to_string();
    assert!(msg.contains("board_a") && msg.contains("board_b"));
}

#[test]
fn negatives() {
    let project = plant_project();
    let mut d = DeploymentConfig::new("neg");
    d.services.push(ServiceInstance::new("x", "nope"));
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::UnknownService { .. })
    ));

    let mut d = DeploymentConfig::new("neg");
    d.services.push(ServiceInstance::new("h", "historian"));
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::MissingInfrastructure { .. })
    ));

    let mut d = DeploymentConfig::new("neg");
    d.infrastructure.clear();
    d.services.push(ServiceInstance::new("p", "producer"));
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::MissingInfrastructure {
            requirement: Infrastructure::Broker,
            ..
        })
    ));

    let mut d = DeploymentConfig::new("neg");
    let mut i = ServiceInstance::new("r", "plc_reader");
    i.ports.insert("nope".into(), 1);
    d.services.push(i);
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::UnknownPortLabel { .. })
    ));

    let mut d = DeploymentConfig::new("neg");
    d.services.push(ServiceInstance::new("p", "producer"));
    d.services.push(ServiceInstance::new("p", "consumer"));
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::DuplicateInstance { .. })
    ));

    let mut d = DeploymentConfig::new("neg");
    d.services.push(ServiceInstance::new("broker", "producer"));
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::ReservedName(_))
    ));

    let mut d = fixture_deployment("multihost");
    d.hosts[1].services.push("ghost".into());
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::UnknownInstance { .. })
    ));
    assert!(matches!(
        plan_rollout(&project, &d),
        Err(DeployError::UnknownInstance { .. })
    ));

    let mut d = fixture_deployment("multihost");
    d.hosts[1].services.push("historian".into());
    assert!(matches!(
        compile_deployment(&project, &d),
        Err(DeployError::InstanceOnTwoHosts { .. })
    ));
}

#[test]
fn build_plans() {
    let mut project = plant_project();
    let mut d = DeploymentConfig::new("b");
    d.services.push(ServiceInstance::new("p", "producer"));
    let local = BuildOptions {
        native: Some(Architecture::Amd64),
        ..Default::default()
    };
    let plan = plan_builds(&project, &d, &local).unwrap();
    assert_eq!(
        plan.commands(),
        vec![vec![
            "docker",
            "build",
            "-f",
            "src/services/producer/Dockerfile",
            "-t",
            "plant/producer:dev",
            "."
        ]]
    );

    let mut d = DeploymentConfig::new("b");
    d.infrastructure.insert(Infrastructure::DatabaseTimeseries);
    d.infrastructure.insert(Infrastructure::DatabaseDocument);
    d.services.push(ServiceInstance::new("h", "historian"));
    let pushed = BuildOptions {
        push: true,
        native: Some(Architecture::Amd64),
        tag: Some("prod".into()),
    };
    let plan = plan_builds(&project, &d, &pushed).unwrap();
    let cmds = plan.commands();
    assert_eq!(cmds.len(), 1);
    let platform = cmds[0].iter().position(|w| w == "--platform").unwrap();
    assert_eq!(cmds[0][platform + 1], "linux/amd64,linux/arm64");
    assert!(cmds[0].contains(&"--push".to_string()));
    assert!(cmds[0].contains(&"plant/historian:prod".to_string()));
    assert_eq!(
        plan.script_path(),
        std::path::PathBuf::from("build/build_prod.sh")
    );
    assert!(plan.script().starts_with("#!/bin/sh\n"));

    // Not pushing a multi-arch service builds the native architecture only.
    let plan = plan_builds(&project, &d, &local).unwrap();
    assert_eq!(plan.entries[0].architectures, vec![Architecture::Amd64]);

    // External services are not built.
    let plan = plan_builds(&project, &fixture_deployment("duplicated"), &local).unwrap();
    let images: Vec<&str> = plan.entries.iter().map(|e| e.image.as_str()).collect();
    assert_eq!(
        images,
        [
            "plant/dashboard:prod",
            "plant/plc_reader:debug",
            "plant/plc_reader:prod"
        ]
    );

    // One entry per (service, tag).
    let plan = plan_builds(&project, &fixture_deployment("multihost"), &local).unwrap();
    assert_eq!(
        plan.entries
            .iter()
            .filter(|e| e.service == "plc_reader")
            .count(),
        1
    );

    project.services[0].architectures.clear();
    let mut d = DeploymentConfig::new("b");
    d.services.push(ServiceInstance::new("p", "producer"));
    assert_eq!(
        plan_builds(&project, &d, &local),
        Err(DeployError::NoArchitectures("producer".into()))
    );
    assert!(matches!(
        plan_builds(
            &plant_project(),
            &d,
            &BuildOptions {
                tag: Some("bad tag".into()),
                ..local
            }
        ),
        Err(DeployError::InvalidTag(_))
    ));
}

#[test]
fn rollout_two_hosts() {
    let project = plant_project();
    let mut d = DeploymentConfig::new("pair");
    d.services
        .push(ServiceInstance::new("producer", "producer"));
    d.services
        .push(ServiceInstance::new("consumer", "consumer"));
    d.hosts = vec![
        HostSpec {
            hostname: "server".into(),
            services: vec!["consumer".into()],
        },
        HostSpec {
            hostname: "sbc".into(),
            services: vec!["producer".into()],
        },
    ];
    let tree = plan_rollout(&project, &d).unwrap();
    let inventory = tree.get("ansible/inventory.ini").unwrap();
    assert_eq!(inventory, "[pair]\nserver\nsbc\n");
    let playbook: serde_yaml::Value =
        serde_yaml::from_str(tree.get("ansible/playbook.yaml").unwrap()).unwrap();
    let plays = playbook.as_sequence().unwrap();
    assert_eq!(plays.len(), 2);
    assert_eq!(plays[1]["hosts"].as_str(), Some("sbc"));
    let sbc_env = parse_env(tree.get("ansible/hosts/sbc/producer.env").unwrap()).unwrap();
    assert_eq!(sbc_env["FASTIOT_BROKER_HOST"], "server");
    let server_env = parse_env(tree.get("ansible/hosts/server/consumer.env").unwrap()).unwrap();
    assert_eq!(server_env["FASTIOT_BROKER_HOST"], "broker");

    d.hosts.clear();
    assert_eq!(
        plan_rollout(&project, &d),
        Err(DeployError::NoHosts("pair".into()))
    );
}

fn arb_project() -> impl Strategy<Value = ProjectManifest> {
    let req = prop::sample::subsequence(Infrastructure::ALL.to_vec(), 0..=3);
    prop::collection::vec((req, prop::option::of(1000u16..1010)), 1..5).prop_map(|svcs| {
        let mut p = ProjectManifest::new("prop");
        for (i, (requires, port)) in svcs.into_iter().enumerate() {
            let mut m = ServiceManifest::new(format!("svc{i}"));
            m.requires = requires;
            if let Some(port) = port {
                m.ports.push(PortSpec {
                    container_port: 80,
                    default_host_port: port,
                    label: "http".into(),
                });
            }
            p.services.push(m);
        }
        p
    })
}

fn arb_case() -> impl Strategy<Value = (ProjectManifest, DeploymentConfig)> {
    arb_project()
        .prop_flat_map(|p| {
            let n = p.services.len();
            let instances = prop::collection::vec((0..n, prop::option::of(2000u16..2004)), 1..7);
            let infra = prop::sample::subsequence(Infrastructure::ALL.to_vec(), 0..=3);
            let hosts = 0usize..4;
            (Just(p), instances, infra, hosts)
        })
        .prop_map(|(p, instances, infra, hosts)| {
            let mut d = DeploymentConfig::new("prop");
            d.infrastructure = infra.into_iter().collect();
            for (k, (svc, port)) in instances.into_iter().enumerate() {
                let mut inst = ServiceInstance::new(format!("inst{k}"), format!("svc{svc}"));
                if let (Some(port), false) = (port, p.services[svc].ports.is_empty()) {
                    inst.ports.insert("http".into(), port);
                }
                d.services.push(inst);
            }
            d.hosts = (0..hosts)
                .map(|h| HostSpec {
                    hostname: format!("host{h}"),
                    services: d
                        .services
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| k % 4 == h)
                        .map(|(_, s)| s.instance.clone())
                        .collect(),
                })
                .collect();
            (p, d)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Every instance appears once, every requirement is satisfied, or the compiler says why.
    #[test]
    fn completeness((project, deployment) in arb_case()) {
        let unsatisfied: Vec<(String, Infrastructure)> = deployment
            .services
            .iter()
            .flat_map(|i| {
                project.service(&i.service).unwrap().requires.iter()
                    .filter(|r| !deployment.infrastructure.contains(r))
                    .map(move |r| (i.instance.clone(), *r))
            })
            .collect();
        match compile_deployment(&project, &deployment) {
            Ok(tree) => {
                prop_assert!(unsatisfied.is_empty());
                let services = compose_services(&tree);
                let expected: BTreeSet<String> = deployment.services.iter().map(|s| s.instance.clone())
                    .chain(deployment.infrastructure.iter().map(|i| i.as_str().to_owned()))
                    .collect();
                prop_assert_eq!(services.keys().cloned().collect::<BTreeSet<_>>(), expected);
                for inst in &deployment.services {
                    let env_file = format!("{}.env", inst.instance);
                    prop_assert!(tree.get(&env_file).is_some(), "missing {}", env_file);
                }
                prop_assert_eq!(compile_deployment(&project, &deployment).unwrap(), tree);
            }
            Err(DeployError::MissingInfrastructure { instance, requirement, .. }) => {
                prop_assert!(unsatisfied.contains(&(instance, requirement)));
            }
            Err(DeployError::PortCollision { .. }) => {
                let only_expected = check_deployment(&project, &deployment)
                    .iter()
                    .all(|e| matches!(e, DeployError::PortCollision { .. } | DeployError::MissingInfrastructure { .. }));
                prop_assert!(only_expected);
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    /// Per-host compose subsets are disjoint and cover every instance.
    #[test]
    fn rollout_partitions_instances((project, deployment) in arb_case()) {
        prop_assume!(!deployment.hosts.is_empty());
        prop_assume!(check_deployment(&project, &deployment).is_empty());
        let tree = plan_rollout(&project, &deployment).unwrap();
        let mut seen = BTreeSet::new();
        for host in &deployment.hosts {
            let path = format!("ansible/hosts/{}/docker-compose.yaml", host.hostname);
            let doc: serde_yaml::Value = serde_yaml::from_str(tree.get(&path).unwrap()).unwrap();
            for (name, _) in doc["services"].as_mapping().unwrap() {
                let name = name.as_str().unwrap().to_owned();
                if deployment.instance(&name).is_some() {
                    prop_assert!(seen.insert(name), "instance on two hosts");
                }
            }
        }
        let all: BTreeSet<String> = deployment.services.iter().map(|s| s.instance.clone()).collect();
        prop_assert_eq!(&seen, &all);
        let assigned: BTreeSet<String> = host_assignment(&deployment).into_values().flatten().collect();
        prop_assert_eq!(assigned, all);
    }
}
