use std::collections::{BTreeMap, BTreeSet};
use std::net::TcpStream;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::Context;
use fastiot::deploy::{infrastructure_env, infrastructure_image, infrastructure_port};
use fastiot::envfile::render_env;
use fastiot::runtime::Infrastructure;
use serde::{Deserialize, Serialize};

use crate::{project, user};

const LOCALHOST: &str = "127.0.0.1";
const READY_TIMEOUT: Duration = Duration::from_secs(10);
const STOP_TIMEOUT: Duration = Duration::from_secs(5);

fn env_file(root: &Path) -> PathBuf {
    root.join("build/test.env")
}

fn state_dir(root: &Path) -> PathBuf {
    root.join("build/test-env")
}

fn state_file(root: &Path) -> PathBuf {
    state_dir(root).join("state.json")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Loopback,
    Containers,
}

#[derive(Debug, Serialize, Deserialize)]
struct Component {
    infrastructure: Infrastructure,
    host: String,
    port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pid: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    container: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct State {
    mode: Mode,
    components: Vec<Component>,
}

impl State {
    fn load(root: &Path) -> anyhow::Result<Option<State>> {
        let path = state_file(root);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .with_context(|| format!("corrupt state file {}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e).with_context(|| format!("cannot read {}", path.display())),
        }
    }

    fn save(&self, root: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(state_dir(root))?;
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        std::fs::write(state_file(root), text).context("cannot write the test-env state")
    }

    fn env(&self) -> BTreeMap<String, String> {
        self.components
            .iter()
            .flat_map(|c| infrastructure_env(c.infrastructure, &c.host, c.port))
            .collect()
    }
}

fn process_alive(pid: i32) -> bool {
    // SAFETY: signal 0 only checks whether the process exists.
    if unsafe { libc::kill(pid, 0) } != 0 {
        return false;
    }
    // An exited child that nobody reaped still answers signal 0.
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => stat
            .rsplit_once(')')
            .and_then(|(_, rest)| rest.split_whitespace().next())
            .is_some_and(|s| s != "Z"),
        Err(_) => true,
    }
}

fn port_open(host: &str, port: u16) -> bool {
    format!("{host}:{port}")
        .parse()
        .is_ok_and(|addr| TcpStream::connect_timeout(&addr, Duration::from_millis(500)).is_ok())
}

fn docker(args: &[&str]) -> std::io::Result<std::process::Output> {
    Command::new("docker")
        .args(args)
        .stdin(Stdio::null())
        .output()
}

fn daemon_available() -> bool {
    docker(&["info"]).is_ok_and(|o| o.status.success())
}

fn container_running(name: &str) -> bool {
    docker(&["inspect", "-f", "{{.State.Running}}", name])
        .is_ok_and(|o| o.status.success() && String::from_utf8_lossy(&o.stdout).trim() == "true")
}

fn component_alive(c: &Component) -> bool {
    let owner_alive = match (&c.pid, &c.container) {
        (Some(pid), _) => process_alive(*pid),
        (None, Some(name)) => container_running(name),
        (None, None) => true,
    };
    owner_alive && port_open(&c.host, c.port)
}

fn required_infrastructure(root: &Path) -> anyhow::Result<BTreeSet<Infrastructure>> {
    let project = project::load(root)?;
    let mut needed: BTreeSet<Infrastructure> = project
        .services
        .iter()
        .flat_map(|s| s.requires.iter().copied())
        .collect();
    needed.insert(Infrastructure::Broker);
    Ok(needed)
}

fn write_env_file(root: &Path, state: &State) -> anyhow::Result<()> {
    let path = env_file(root);
    std::fs::write(&path, render_env(&state.env()))
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!(
        "wrote {}",
        path.strip_prefix(root).unwrap_or(&path).display()
    );
    Ok(())
}

fn spawn_loopback_broker(root: &Path) -> anyhow::Result<Component> {
    let dir = state_dir(root);
    std::fs::create_dir_all(&dir)?;
    let port_file = dir.join("broker.port");
    let _ = std::fs::remove_file(&port_file);
    let log =
        std::fs::File::create(dir.join("broker.log")).context("cannot create the broker log")?;
    let exe = std::env::current_exe().context("cannot locate the fastiot executable")?;
    let mut child = Command::new(exe)
        .arg("broker")
        .args(["--port", "0", "--port-file"])
        .arg(&port_file)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .process_group(0)
        .spawn()
        .context("cannot start the loopback broker")?;
    let deadline = Instant::now() + READY_TIMEOUT;
    loop {
        if let Some(port) = std::fs::read_to_string(&port_file)
            .ok()
            .and_then(|s| s.trim().parse().ok())
        {
            return Ok(Component {
                infrastructure: Infrastructure::Broker,
                host: LOCALHOST.into(),
                port,
                pid: Some(child.id() as i32),
                container: None,
            });
        }
        if let Some(status) = child.try_wait()? {
            anyhow::bail!(
                "the loopback broker exited with {status}; see build/test-env/broker.log"
            );
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            anyhow::bail!("the loopback broker did not start within {READY_TIMEOUT:?}");
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn start_container(project: &str, infra: Infrastructure) -> anyhow::Result<Component> {
    let name = format!("fastiot_test_{project}_{}", infra.as_str());
    let cport = infrastructure_port(infra);
    let _ = docker(&["rm", "-f", &name]);
    let publish = format!("{LOCALHOST}::{cport}");
    let out = docker(&[
        "run",
        "-d",
        "--rm",
        "--name",
        &name,
        "-p",
        &publish,
        infrastructure_image(infra),
    ])?;
    if !out.status.success() {
        anyhow::bail!(
            "cannot start {name}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        );
    }
    let out = docker(&["port", &name, &format!("{cport}/tcp")])?;
    let port = String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.rsplit_once(':').and_then(|(_, p)| p.trim().parse().ok()))
        .ok_or_else(|| anyhow::anyhow!("cannot find the published port of {name}"))?;
    Ok(Component {
        infrastructure: infra,
        host: LOCALHOST.into(),
        port,
        pid: None,
        container: Some(name),
    })
}

fn wait_ready(components: &[Component]) -> anyhow::Result<()> {
    let deadline = Instant::now() + READY_TIMEOUT * 3;
    for c in components {
        while !port_open(&c.host, c.port) {
            if Instant::now() > deadline {
                anyhow::bail!(
                    "{} did not become reachable on port {}",
                    c.infrastructure,
                    c.port
                );
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }
    Ok(())
}

pub fn start(root: &Path, loopback: bool) -> anyhow::Result<()> {
    let needed = required_infrastructure(root)?;
    if let Some(state) = State::load(root)? {
        if state.components.iter().all(component_alive) {
            println!("test environment is already running");
            return write_env_file(root, &state);
        }
        teardown(&state);
    }
    let state = if loopback {
        for infra in needed.iter().filter(|i| **i != Infrastructure::Broker) {
            eprintln!("warning: loopback mode provides only the broker; {infra} is not started");
        }
        State {
            mode: Mode::Loopback,
            components: vec![spawn_loopback_broker(root)?],
        }
    } else {
        if !daemon_available() {
            return Err(user(
                "no container daemon is available; start one or use `test-env start --loopback`",
            ));
        }
        let project = project::load(root)?.project_name;
        let mut components = Vec::new();
        for infra in &needed {
            match start_container(&project, *infra) {
                Ok(c) => components.push(c),
                Err(e) => {
                    teardown(&State {
                        mode: Mode::Containers,
                        components,
                    });
                    return Err(e);
                }
            }
        }
        State {
            mode: Mode::Containers,
            components,
        }
    };
    state.save(root)?;
    if let Err(e) = wait_ready(&state.components) {
        teardown(&state);
        let _ = std::fs::remove_file(state_file(root));
        return Err(e);
    }
    for c in &state.components {
        println!("{} running at {}:{}", c.infrastructure, c.host, c.port);
    }
    write_env_file(root, &state)
}

fn teardown(state: &State) {
    for c in &state.components {
        if let Some(pid) = c.pid {
            if process_alive(pid) {
                // SAFETY: plain signal delivery to a process we started.
                unsafe { libc::kill(pid, libc::SIGTERM) };
                let deadline = Instant::now() + STOP_TIMEOUT;
                while process_alive(pid) && Instant::now() < deadline {
                    std::thread::sleep(Duration::from_millis(20));
                }
                if process_alive(pid) {
                    // SAFETY: as above.
                    unsafe { libc::kill(pid, libc::SIGKILL) };
                }
            }
        }
        if let Some(name) = &c.container {
            let _ = docker(&["rm", "-f", name]);
        }
    }
}

pub fn stop(root: &Path) -> anyhow::Result<()> {
    let Some(state) = State::load(root)? else {
        eprintln!("warning: no test environment is running");
        return Ok(());
    };
    teardown(&state);
    let _ = std::fs::remove_file(state_file(root));
    let _ = std::fs::remove_file(env_file(root));
    println!("test environment stopped");
    Ok(())
}

pub fn status(root: &Path) -> anyhow::Result<()> {
    let Some(state) = State::load(root)? else {
        println!("test environment is not running");
        return Ok(());
    };
    for c in &state.components {
        let owner = match (&c.pid, &c.container) {
            (Some(pid), _) => format!("loopback broker, pid {pid}"),
            (None, Some(name)) => format!("container {name}"),
            (None, None) => "unknown".into(),
        };
        let health = if component_alive(c) {
            "running"
        } else {
            "not running"
        };
        println!(
            "{}: {health} at {}:{} ({owner})",
            c.infrastructure, c.host, c.port
        );
    }
    Ok(())
}
