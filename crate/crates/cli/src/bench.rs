use std::path::Path;

use anyhow::Context;
use fastiot::bench::{run_bench, run_loopback_bench, BenchError, LatencyReport};
use fastiot::broker::{loopback_broker, parse_port, BrokerConfig, BrokerError};
use fastiot::runtime::{process_env, shutdown_signal};

use crate::user;

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .context("cannot start the async runtime")
}

fn broker_config(address: Option<&str>) -> anyhow::Result<BrokerConfig> {
    match address {
        Some(addr) => {
            let (host, port) = addr
                .rsplit_once(':')
                .ok_or_else(|| user(format!("broker address {addr:?} must be HOST:PORT")))?;
            Ok(BrokerConfig::new(host, parse_port(port).map_err(user)?))
        }
        None => {
            let env = process_env().map_err(user)?;
            BrokerConfig::from_env(&env).map_err(user)
        }
    }
}

fn bench_error(e: BenchError) -> anyhow::Error {
    match e {
        BenchError::BrokerUnreachable { .. } | BenchError::InvalidParameters => user(e),
        other => anyhow::Error::new(other),
    }
}

fn print_summary(r: &LatencyReport) {
    println!(
        "messages    {} sent at {}/s, {} received, {} dropped",
        r.count, r.rate_target, r.received, r.drops
    );
    println!("size        {} bytes per message", r.message_size_bytes);
    println!("mean        {:.3} ms", r.mean_ms);
    println!("p50         {:.3} ms", r.p50_ms);
    println!("p90         {:.3} ms", r.p90_ms);
    println!("p99         {:.3} ms", r.p99_ms);
    println!("min / max   {:.3} / {:.3} ms", r.min_ms, r.max_ms);
}

pub fn bench(
    rate: u32,
    count: u32,
    loopback: bool,
    address: Option<&str>,
    json: bool,
) -> anyhow::Result<()> {
    let config = if loopback {
        None
    } else {
        Some(broker_config(address)?)
    };
    let report = runtime()?.block_on(async {
        match &config {
            None => run_loopback_bench(rate, count).await,
            Some(c) => run_bench(c, rate, count).await,
        }
    });
    let report = report.map_err(bench_error)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print_summary(&report);
    }
    Ok(())
}

fn write_port_file(path: &Path, port: u16) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, format!("{port}\n"))
        .with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn broker(port: u16, port_file: Option<&Path>) -> anyhow::Result<()> {
    fastiot::logging::init();
    runtime()?.block_on(async {
        let shutdown = shutdown_signal().context("cannot install signal handlers")?;
        let handle = loopback_broker(port).await.map_err(|e| match e {
            BrokerError::PortInUse(_) => user(e),
            other => anyhow::Error::new(other),
        })?;
        if let Some(path) = port_file {
            write_port_file(path, handle.port())?;
        }
        println!("broker listening on {}", handle.addr());
        shutdown.await;
        handle.shutdown().await;
        Ok(())
    })
}
