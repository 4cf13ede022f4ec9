//! Launches a stock NATS server for differential tests, when one is available.

use std::net::TcpListener;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use fastiot::broker::BrokerConfig;

pub const NATS_IMAGE: &str = "nats:2.10-alpine";

enum Backend {
    Binary(Child),
    Container(String),
}

/// A NATS server started from the `nats-server` binary on `PATH` or from a container.
/// Stopped on drop.
pub struct StockBroker {
    port: u16,
    backend: Backend,
}

impl StockBroker {
    pub fn config(&self) -> BrokerConfig {
        BrokerConfig::new("127.0.0.1", self.port)
    }

    pub fn description(&self) -> &'static str {
        match self.backend {
            Backend::Binary(_) => "nats-server binary",
            Backend::Container(_) => "nats container",
        }
    }

    /// Tries the local binary first, then a container daemon. `None` if neither works.
    pub fn start() -> Option<StockBroker> {
        let port = free_port()?;
        if let Ok(child) = Command::new("nats-server")
            .args(["-a", "127.0.0.1", "-p", &port.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
        {
            let broker = StockBroker {
                port,
                backend: Backend::Binary(child),
            };
            return broker.wait_ready().then_some(broker);
        }
        let daemon_up = Command::new("docker")
            .arg("info")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if !daemon_up {
            return None;
        }
        let out = Command::new("docker")
            .args(["run", "-d", "--rm", "-p"])
            .arg(format!("127.0.0.1:{port}:4222"))
            .arg(NATS_IMAGE)
            .output()
            .ok()?;
        if !out.status.success() {
            return None;
        }
        let id = String::from_utf8_lossy(&out.stdout).trim().to_owned();
        let broker = StockBroker {
            port,
            backend: Backend::Container(id),
        };
        broker.wait_ready().then_some(broker)
    }

    fn wait_ready(&self) -> bool {
        let deadline = Instant::now() + Duration::from_secs(20);
        while Instant::now() < deadline {
            if std::net::TcpStream::connect(("127.0.0.1", self.port)).is_ok() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(100));
        }
        false
    }
}

impl Drop for StockBroker {
    fn drop(&mut self) {
        match &mut self.backend {
            Backend::Binary(child) => {
                let _ = child.kill();
                let _ = child.wait();
            }
            Backend::Container(id) => {
                let _ = Command::new("docker")
                    .args(["rm", "-f", id])
                    .stdout(Stdio::null())
                    .stderr(Stdio::null())
                    .status();
            }
        }
    }
}

fn free_port() -> Option<u16> {
    TcpListener::bind("127.0.0.1:0")
        .and_then(|l| l.local_addr())
        .map(|a| a.port())
        .ok()
}
