//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The binary re-executes itself as a fastiot service for the crash-contract checks; the
//! `FASTIOT_ACCEPTANCE_CHILD` variable selects which fault the child injects.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use fastiot::bench::probe_size;
use fastiot::broker::{loopback_broker, BrokerHandle, Connection};
use fastiot::datamodel::{decode, encode, Format, Thing, Timestamp};
use fastiot::deploy::{
    compile_all, compile_deployment, plan_builds, BuildOptions, DeploymentConfig, ServiceInstance,
};
use fastiot::runtime::Service;
use fastiot::scaffold::{
    create_project, import_service, new_service, user_region_lines, validate_project,
    ProjectManifest, ProjectOptions, ScaffoldOptions, ServiceKind, TEMPLATE_IDS,
};
use fastiot_testkit::conformance::run_suite;
use fastiot_testkit::fixtures::{
    compare_with_golden, fixture_deployment, golden_dir, plant_project, GOLDEN_DEPLOYMENTS,
    UPDATE_ENV,
};
use fastiot_testkit::stock::StockBroker;
use fastiot_testkit::{
    arb_numeric_value, arb_thing, arb_thing_with, enumerate_patterns, enumerate_subjects,
    reference_matches,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};

const BIN: &str = env!("CARGO_BIN_EXE_fastiot");
const CHILD_ENV: &str = "FASTIOT_ACCEPTANCE_CHILD";
const MARKER_ENV: &str = "FASTIOT_ACCEPTANCE_MARKER";
const CRASH_TRIALS: usize = 20;
const SIGTERM_TRIALS: usize = 5;

type Criterion = (u8, &'static str, fn() -> Result<String>);

fn main() {
    if let Ok(phase) = std::env::var(CHILD_ENV) {
        child_service(&phase);
    }
    let criteria: [Criterion; 10] = [
        (1, "serialization round-trip", serialization_round_trip),
        (2, "probe wire size", probe_wire_size),
        (3, "broker conformance", broker_conformance),
        (4, "crash contract", crash_contract),
        (5, "quickstart in seven commands", quickstart),
        (6, "deployment golden files", deployment_golden_files),
        (7, "latency", latency),
        (8, "bare consumer size", bare_consumer_size),
        (9, "service transferability", transferability),
        (10, "template freshness", template_freshness),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(anyhow!("panicked: {}", panic_message(&p))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} ({secs:.1}s)"),
            Err(e) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {e:#} ({secs:.1}s)");
            }
        }
        let _ = std::io::stdout().flush();
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    std::process::exit(if failed == 0 { 0 } else { 1 });
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .expect("runtime starts")
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn target_dir() -> PathBuf {
    std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("target"))
}

fn cases_config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    }
}

// 1

fn serialization_round_trip() -> Result<String> {
    let start = Instant::now();
    let cases = 10_000;
    let mut runner = TestRunner::new(cases_config(cases));
    runner
        .run(&arb_thing(), |t| {
            for format in [Format::Binary, Format::Json] {
                let back = decode(&encode(&t, format), format)
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(&back, &t);
            }
            Ok(())
        })
        .map_err(|e| anyhow!("{e}"))?;
    let mut runner = TestRunner::new(cases_config(cases));
    runner
        .run(&arb_thing_with(arb_numeric_value()), |t| {
            let (bin, json) = (
                encode(&t, Format::Binary).len(),
                encode(&t, Format::Json).len(),
            );
            prop_assert!(bin <= json, "binary {} > json {}", bin, json);
            Ok(())
        })
        .map_err(|e| anyhow!("{e}"))?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{cases} things through both codecs, {cases} numeric size checks"
    ))
}

// 2

fn probe_wire_size() -> Result<String> {
    let size = probe_size();
    ensure!(
        (114..=194).contains(&size),
        "probe encodes to {size} bytes, outside 154 +/- 40"
    );
    Ok(format!("{size} bytes"))
}

// 3

fn broker_conformance() -> Result<String> {
    let start = Instant::now();
    let alphabet = ["a", "b", "c"];
    let patterns = enumerate_patterns(&alphabet, 4);
    let subjects = enumerate_subjects(&alphabet, 4);
    let mut pairs = 0;
    for p in &patterns {
        let pattern = fastiot::datamodel::Subject::parse(p)?;
        for s in &subjects {
            let ours = pattern.matches(&fastiot::datamodel::Subject::parse(s)?);
            ensure!(
                ours == reference_matches(p, s),
                "matcher disagrees on {p} vs {s}"
            );
            pairs += 1;
        }
    }
    let (cases, differential) = runtime().block_on(async {
        let broker = loopback_broker(0).await?;
        let ours = run_suite(&broker.config()).await;
        ensure!(ours.len() >= 50, "only {} cases", ours.len());
        let failed: Vec<_> = ours
            .iter()
            .filter(|o| o.result.is_err())
            .map(|o| o.name.clone())
            .collect();
        ensure!(failed.is_empty(), "loopback failed {failed:?}");
        let differential = match StockBroker::start() {
            Some(stock) => {
                let reference = run_suite(&stock.config()).await;
                for (a, b) in reference.iter().zip(&ours) {
                    ensure!(
                        a.result.is_ok() == b.result.is_ok(),
                        "{} differs from {}",
                        a.name,
                        stock.description()
                    );
                }
                format!("identical against {}", stock.description())
            }
            None => "no stock broker available, differential run skipped".to_owned(),
        };
        Ok((ours.len(), differential))
    })?;
    ensure!(
        start.elapsed() < Duration::from_secs(60),
        "took {:?}",
        start.elapsed()
    );
    Ok(format!(
        "{cases} cases on loopback, {differential}; {pairs} matcher pairs"
    ))
}

// 4

fn child_service(phase: &str) -> ! {
    let marker = std::env::var(MARKER_ENV).unwrap_or_default();
    let ready = {
        let marker = marker.clone();
        move |_| async move {
            std::fs::write(&marker, "ready")?;
            Ok(())
        }
    };
    let ok = |_| async { Ok(()) };
    let service = match phase {
        "setup" => {
            Service::new("crash_setup").setup(|_| async { Err("injected setup fault".into()) })
        }
        "interval" => Service::new("crash_interval")
            .interval(Duration::from_millis(10), |_| async {
                Err("injected interval fault".into())
            }),
        "callback" => Service::new("crash_callback")
            .setup(ready)
            .on_thing("v1.thing.crash.>", |_, _| async {
                Err("injected callback fault".into())
            }),
        "broker_loss" => Service::new("crash_broker")
            .setup(ready)
            .interval(Duration::from_millis(50), ok),
        "sigterm" => Service::new("graceful")
            .setup(ready)
            .interval(Duration::from_millis(50), ok)
            .teardown(move |_| async move {
                std::fs::write(&marker, "teardown")?;
                Ok(())
            }),
        other => panic!("unknown child phase {other}"),
    };
    service.run()
}

fn spawn_child(phase: &str, broker: &BrokerHandle, marker: &Path) -> Result<Child> {
    Command::new(std::env::current_exe()?)
        .env(CHILD_ENV, phase)
        .env(MARKER_ENV, marker)
        .env("FASTIOT_BROKER_HOST", "127.0.0.1")
        .env("FASTIOT_BROKER_PORT", broker.port().to_string())
        .env("FASTIOT_BROKER_RECONNECT", "false")
        .env("RUST_LOG", "error")
        .env_remove("FASTIOT_ENV_FILE")
        .env_remove("FASTIOT_CONFIG_DIR")
        .stdin(Stdio::null())
        .stdout(std::fs::File::create(marker.with_extension("log"))?)
        .stderr(Stdio::null())
        .spawn()
        .context("cannot spawn the child service")
}

async fn wait_exit(child: &mut Child, timeout: Duration) -> Result<ExitStatus> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(status);
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            let _ = child.wait();
            bail!("child did not exit within {timeout:?}");
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

async fn wait_marker(marker: &Path, expected: &str, child: &mut Child) -> Result<()> {
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::fs::read_to_string(marker).ok().as_deref() != Some(expected) {
        if let Some(status) = child.try_wait()? {
            bail!("child exited with {status} before writing {expected:?}");
        }
        ensure!(Instant::now() < deadline, "child never wrote {expected:?}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    Ok(())
}

async fn crash_trial(phase: &str, dir: &Path, trial: usize) -> Result<()> {
    let broker = loopback_broker(0).await?;
    let marker = dir.join(format!("{phase}_{trial}"));
    let mut child = spawn_child(phase, &broker, &marker)?;
    match phase {
        "callback" => {
            wait_marker(&marker, "ready", &mut child).await?;
            let conn = Connection::connect(broker.config()).await?;
            let thing = Thing::new("crash", "trigger", 1_i64, Timestamp::now())?;
            let deadline = Instant::now() + Duration::from_secs(10);
            while child.try_wait()?.is_none() && Instant::now() < deadline {
                conn.publish_thing(&thing, Format::Binary)?;
                tokio::time::sleep(Duration::from_millis(10)).await;
            }
            conn.close().await;
        }
        "broker_loss" => {
            wait_marker(&marker, "ready", &mut child).await?;
            broker.shutdown().await;
        }
        _ => {}
    }
    let status = wait_exit(&mut child, Duration::from_secs(15)).await?;
    let log = std::fs::read_to_string(marker.with_extension("log"))?;
    ensure!(
        status.code() == Some(1),
        "{phase} trial {trial}: exit status {status}, expected 1: {log}"
    );
    ensure!(
        phase == "broker_loss" || log.contains("injected"),
        "{phase} trial {trial}: exited without reporting the fault: {log}"
    );
    Ok(())
}

async fn sigterm_trial(dir: &Path, trial: usize) -> Result<()> {
    let broker = loopback_broker(0).await?;
    let marker = dir.join(format!("sigterm_{trial}"));
    let mut child = spawn_child("sigterm", &broker, &marker)?;
    wait_marker(&marker, "ready", &mut child).await?;
    // SAFETY: plain signal delivery to our own child.
    unsafe { libc::kill(child.id() as i32, libc::SIGTERM) };
    let status = wait_exit(&mut child, Duration::from_secs(15)).await?;
    ensure!(
        status.code() == Some(0),
        "SIGTERM trial {trial}: exit status {status}, expected 0"
    );
    let seen = std::fs::read_to_string(&marker)?;
    ensure!(
        seen == "teardown",
        "SIGTERM trial {trial}: teardown did not run"
    );
    Ok(())
}

fn crash_contract() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let start = Instant::now();
    runtime().block_on(async {
        for phase in ["setup", "interval", "callback", "broker_loss"] {
            for trial in 0..CRASH_TRIALS {
                crash_trial(phase, dir.path(), trial).await?;
            }
        }
        for trial in 0..SIGTERM_TRIALS {
            sigterm_trial(dir.path(), trial).await?;
        }
        Ok::<_, anyhow::Error>(())
    })?;
    ensure!(
        start.elapsed() < Duration::from_secs(60),
        "took {:?}",
        start.elapsed()
    );
    Ok(format!(
        "exit 1 in {CRASH_TRIALS}/{CRASH_TRIALS} trials for each of 4 fault phases; SIGTERM exit 0 with teardown in {SIGTERM_TRIALS}/{SIGTERM_TRIALS}"
    ))
}

// 5 and 10

/// Runs user-facing commands and counts them.
struct Session {
    dir: PathBuf,
    commands: Vec<String>,
}

impl Session {
    fn new(dir: &Path) -> Self {
        Session {
            dir: dir.to_path_buf(),
            commands: Vec::new(),
        }
    }

    fn command(&mut self, program: &str, args: &[&str], cwd: &str) -> Command {
        self.commands
            .push(format!("{} {}", program, args.join(" ")));
        let exe = if program == "fastiot" {
            BIN.to_owned()
        } else {
            program.to_owned()
        };
        let mut cmd = Command::new(exe);
        cmd.args(args)
            .current_dir(self.dir.join(cwd))
            .stdin(Stdio::null());
        for (key, _) in std::env::vars_os() {
            let key = key.to_string_lossy();
            if (key.starts_with("CARGO_") && key != "CARGO_HOME") || key.starts_with("FASTIOT_") {
                cmd.env_remove(key.as_ref());
            }
        }
        cmd.env("CARGO_TARGET_DIR", target_dir().join("generated-projects"))
            .env(
                "FASTIOT_FRAMEWORK_PATH",
                workspace_root().join("crates/core"),
            );
        cmd
    }

    fn run(&mut self, program: &str, args: &[&str], cwd: &str) -> Result<String> {
        let out = self.command(program, args, cwd).output()?;
        ensure!(
            out.status.success(),
            "`{program} {}` failed with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn spawn(
        &mut self,
        program: &str,
        cwd: &str,
        env: &[(&str, &str)],
        log: &Path,
    ) -> Result<Child> {
        let file = std::fs::File::create(log)?;
        let mut cmd = self.command(program, &[], cwd);
        cmd.envs(env.iter().copied())
            .stdout(file.try_clone()?)
            .stderr(file);
        cmd.spawn()
            .with_context(|| format!("cannot start {program}"))
    }
}

fn cargo() -> String {
    std::env::var("CARGO").unwrap_or_else(|_| "cargo".into())
}

fn stop(child: &mut Child) -> Result<ExitStatus> {
    // SAFETY: plain signal delivery to our own child.
    unsafe { libc::kill(child.id() as i32, libc::SIGTERM) };
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(status);
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            bail!("process ignored SIGTERM");
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

fn quickstart() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let start = Instant::now();
    let mut s = Session::new(tmp.path());
    let cargo = cargo();
    let bin_dir = target_dir().join("generated-projects/debug");

    s.run("fastiot", &["new-project", "plant", "--samples"], ".")?;
    s.run("fastiot", &["test-env", "start", "--loopback"], "plant")?;
    let result = (|| {
        s.run(&cargo, &["build", "--quiet"], "plant")?;
        let env = [("FASTIOT_ENV_FILE", "build/test.env"), ("RUST_LOG", "info")];
        let consumer_log = tmp.path().join("consumer.log");
        let mut consumer = s.spawn(
            bin_dir.join("consumer").to_str().unwrap(),
            "plant",
            &env,
            &consumer_log,
        )?;
        let mut producer = s.spawn(
            bin_dir.join("producer").to_str().unwrap(),
            "plant",
            &env,
            &tmp.path().join("producer.log"),
        )?;
        let deadline = Instant::now() + Duration::from_secs(30);
        let received = loop {
            let n = std::fs::read_to_string(&consumer_log)?
                .matches("received thing")
                .count();
            if n >= 10 || Instant::now() > deadline {
                break n;
            }
            std::thread::sleep(Duration::from_millis(50));
        };
        let producer_exit = stop(&mut producer)?;
        let consumer_exit = stop(&mut consumer)?;
        ensure!(received >= 10, "consumer logged {received} received things");
        ensure!(
            producer_exit.success() && consumer_exit.success(),
            "services exited with {producer_exit} and {consumer_exit}"
        );
        Ok(received)
    })();
    s.run("fastiot", &["test-env", "stop"], "plant")?;
    let received = result?;
    let elapsed = start.elapsed();
    let count = s.commands.len();
    ensure!(count <= 7, "needed {count} commands: {:?}", s.commands);
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "{count} commands, consumer logged {received} received things"
    ))
}

fn template_freshness() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let mut s = Session::new(tmp.path());
    s.run("fastiot", &["new-project", "fresh", "--samples"], ".")?;
    s.run(
        "fastiot",
        &["new-service", "sampler", "--kind", "sample"],
        "fresh",
    )?;
    s.run(
        "fastiot",
        &["new-service", "skeleton", "--kind", "bare"],
        "fresh",
    )?;
    s.run("fastiot", &["validate"], "fresh")?;
    s.run(&cargo(), &["build", "--quiet", "--workspace"], "fresh")?;

    let root = tmp.path().join("fresh");
    let used: BTreeSet<&str> = [
        ("project", root.join("Cargo.toml")),
        ("library", root.join("src/fresh_lib/Cargo.toml")),
        ("service", root.join("src/services/sampler/Dockerfile")),
        ("sample", root.join("src/services/sampler/src/main.rs")),
        ("bare", root.join("src/services/skeleton/src/main.rs")),
        ("producer", root.join("src/services/producer/src/main.rs")),
        ("consumer", root.join("src/services/consumer/src/main.rs")),
    ]
    .into_iter()
    .filter(|(_, p)| p.is_file())
    .map(|(id, _)| id)
    .collect();
    let all: BTreeSet<&str> = TEMPLATE_IDS.iter().copied().collect();
    ensure!(
        used == all,
        "templates not compiled: {:?}",
        all.difference(&used).collect::<Vec<_>>()
    );
    let bins = target_dir().join("generated-projects/debug");
    for svc in ["sampler", "skeleton", "producer", "consumer"] {
        ensure!(bins.join(svc).is_file(), "{svc} did not build");
    }
    Ok(format!("{} templates instantiated and compiled", all.len()))
}

// 6

fn deployment_golden_files() -> Result<String> {
    ensure!(
        std::env::var_os(UPDATE_ENV).is_none(),
        "{UPDATE_ENV} is set; golden files would be rewritten"
    );
    let project = plant_project();
    let mut files = 0;
    for name in GOLDEN_DEPLOYMENTS {
        let deployment = fixture_deployment(name);
        let first = compile_all(&project, &deployment)?;
        let second = compile_all(&project, &deployment)?;
        ensure!(first == second, "{name}: recompilation differs");
        compare_with_golden(&first, &golden_dir(name)).map_err(|d| anyhow!("{name}: {d}"))?;
        files += first.len();
    }
    Ok(format!(
        "{} deployments, {files} files byte-identical, recompilation idempotent",
        GOLDEN_DEPLOYMENTS.len()
    ))
}

// 7

fn latency() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let port_file = tmp.path().join("port");
    let mut broker = Command::new(BIN)
        .args(["broker", "--port", "0", "--port-file"])
        .arg(&port_file)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .spawn()?;
    let result = (|| {
        let deadline = Instant::now() + Duration::from_secs(10);
        let port: u16 = loop {
            if let Some(p) = std::fs::read_to_string(&port_file)
                .ok()
                .and_then(|s| s.trim().parse().ok())
            {
                break p;
            }
            ensure!(Instant::now() < deadline, "broker did not start");
            std::thread::sleep(Duration::from_millis(20));
        };
        let out = Command::new(BIN)
            .args([
                "bench", "--count", "1000", "--rate", "100", "--json", "--broker",
            ])
            .arg(format!("127.0.0.1:{port}"))
            .output()?;
        ensure!(
            out.status.success(),
            "bench failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let report: serde_json::Value = serde_json::from_slice(&out.stdout)?;
        let mean = report["mean_ms"].as_f64().context("mean_ms")?;
        let drops = report["drops"].as_u64().context("drops")?;
        let p99 = report["p99_ms"].as_f64().context("p99_ms")?;
        ensure!(drops == 0, "{drops} drops");
        ensure!(mean <= 10.0, "mean latency {mean:.3} ms exceeds 10 ms");
        Ok(format!(
            "mean {mean:.3} ms, p99 {p99:.3} ms, 0 drops over 1000 messages at 100/s"
        ))
    })();
    let _ = stop(&mut broker);
    result
}

// 8

fn bare_consumer_size() -> Result<String> {
    let project = ProjectManifest::new("demo");
    let (tree, _) = new_service(
        &project,
        "reader",
        ServiceKind::Bare,
        &ScaffoldOptions::default(),
    )?;
    let main = tree
        .get(Path::new("src/services/reader/src/main.rs"))
        .context("bare service has no main.rs")?;
    let lines = user_region_lines(main).context("no user region markers")?;
    ensure!(
        lines.len() <= 20,
        "user region has {} non-blank lines",
        lines.len()
    );
    Ok(format!(
        "{} non-blank lines in the editable region",
        lines.len()
    ))
}

// 9

fn arb_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{2,7}".prop_filter("not reserved", |n| fastiot::scaffold::check_name(n).is_ok())
}

fn transferability() -> Result<String> {
    let kinds = prop_oneof![
        Just(ServiceKind::Sample),
        Just(ServiceKind::Bare),
        Just(ServiceKind::Producer),
        Just(ServiceKind::Consumer),
    ];
    let strategy = (arb_name(), arb_name(), arb_name(), kinds).prop_filter(
        "distinct names",
        |(a, b, svc, _)| {
            a != b && ![a.as_str(), b.as_str(), "producer", "consumer"].contains(&svc.as_str())
        },
    );
    let mut runner = TestRunner::new(cases_config(5));
    let options = ScaffoldOptions::default();
    runner
        .run(&strategy, |(a, b, svc, kind)| {
            let fail = |e: &dyn std::fmt::Display| TestCaseError::fail(e.to_string());
            let tmp = tempfile::tempdir().map_err(|e| fail(&e))?;
            let with = |samples| ProjectOptions {
                with_sample_services: samples,
                with_library: true,
            };
            let root_a = create_project(&tmp.path().join("a"), &a, &with(false), &options)
                .map_err(|e| fail(&e))?;
            let root_b = create_project(&tmp.path().join("b"), &b, &with(true), &options)
                .map_err(|e| fail(&e))?;
            fastiot::scaffold::add_service(&root_a, &svc, kind, &options).map_err(|e| fail(&e))?;
            let from = root_a.join("src/services").join(&svc);
            let project_b = import_service(&root_b, &from).map_err(|e| fail(&e))?;
            prop_assert!(validate_project(&root_b).is_ok());
            let mut deployment = DeploymentConfig::new("moved");
            deployment.services.push(ServiceInstance::new(&svc, &svc));
            let plan = plan_builds(&project_b, &deployment, &BuildOptions::default())
                .map_err(|e| fail(&e))?;
            prop_assert_eq!(plan.entries.len(), 1);
            prop_assert_eq!(&plan.entries[0].image, &format!("{b}/{svc}:dev"));
            compile_deployment(&project_b, &deployment).map_err(|e| fail(&e))?;
            Ok(())
        })
        .map_err(|e| anyhow!("{e}"))?;
    Ok("5 random project/service combinations moved, validated and planned".into())
}
