//! End-to-end latency measurement: a producer and a consumer exchanging probe Things
//! through a broker on the same machine.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::time::MissedTickBehavior;

use crate::broker::{loopback_broker, BrokerConfig, BrokerError, Connection};
use crate::datamodel::{encode, Format, Subject, Thing, Timestamp, Value};

pub const PROBE_MACHINE: &str = "bench_producer";
pub const PROBE_NAME: &str = "latency_probe";
pub const DEFAULT_RATE: u32 = 100;
pub const DEFAULT_COUNT: u32 = 1000;

/// How long the consumer keeps waiting after the last probe was sent.
pub const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("broker at {addr} is unreachable: {source}")]
    BrokerUnreachable {
        addr: String,
        #[source]
        source: BrokerError,
    },
    #[error("the consumer received none of the {0} probes")]
    ZeroReceived(u32),
    #[error("probe {seq} arrived after probe {previous}")]
    OutOfOrder { seq: u32, previous: u32 },
    #[error("probe {seq} has a negative latency of {latency_ns} ns")]
    NegativeLatency { seq: u32, latency_ns: i64 },
    #[error("malformed probe: {0}")]
    MalformedProbe(String),
    #[error("the producer task failed: {0}")]
    ProducerFailed(String),
    #[error("rate and count must be positive")]
    InvalidParameters,
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// Outcome of one benchmark run. Durations in the summaries are milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: u32,
    pub rate_target: u32,
    pub message_size_bytes: usize,
    pub received: u32,
    pub drops: u32,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Per-probe latency in nanoseconds, in arrival order.
    pub latencies_ns: Vec<u64>,
}

impl LatencyReport {
    /// Summarizes `latencies_ns`. Percentiles use the nearest-rank method.
    pub fn from_latencies(
        count: u32,
        rate_target: u32,
        message_size_bytes: usize,
        latencies_ns: Vec<u64>,
    ) -> Self {
        let received = latencies_ns.len() as u32;
        let mut sorted = latencies_ns.clone();
        sorted.sort_unstable();
        let ms = |ns: u64| ns as f64 / 1e6;
        let rank = |p: f64| {
            if sorted.is_empty() {
                return 0.0;
            }
            let idx = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
            ms(sorted[idx.clamp(1, sorted.len()) - 1])
        };
        let mean = if sorted.is_empty() {
            0.0
        } else {
            sorted.iter().map(|&n| n as f64).sum::<f64>() / sorted.len() as f64 / 1e6
        };
        LatencyReport {
            count,
            rate_target,
            message_size_bytes,
            received,
            drops: count.saturating_sub(received),
            mean_ms: mean,
            p50_ms: rank(50.0),
            p90_ms: rank(90.0),
            p99_ms: rank(99.0),
            min_ms: sorted.first().map_or(0.0, |&n| ms(n)),
            max_ms: sorted.last().map_or(0.0, |&n| ms(n)),
            latencies_ns,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Nanoseconds since the Unix epoch, advanced by a monotonic clock so readings in one
/// process never go backwards.
#[derive(Clone, Copy, Debug)]
pub struct ProbeClock {
    wall_ns: u64,
    anchor: Instant,
}

impl ProbeClock {
    pub fn new() -> Self {
        let wall_ns = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        ProbeClock {
            wall_ns,
            anchor: Instant::now(),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.wall_ns + self.anchor.elapsed().as_nanos() as u64
    }
}

impl Default for ProbeClock {
    fn default() -> Self {
        Self::new()
    }
}

/// The probe Thing for sequence number `seq` sent at `sent_ns`.
pub fn probe_thing(seq: u32, sent_ns: u64) -> Thing {
    let text = format!("seq={seq:010};sent_ns={sent_ns:019}");
    Thing::new(
        PROBE_MACHINE,
        PROBE_NAME,
        text,
        Timestamp::from_millis((sent_ns / 1_000_000) as i64),
    )
    .expect("probe fields are valid")
}

/// Extracts `(seq, sent_ns)` from a probe Thing.
pub fn parse_probe(thing: &Thing) -> Result<(u32, u64), BenchError> {
    let malformed = || BenchError::MalformedProbe(thing.value().to_string());
    let Value::Text(text) = thing.value() else {
        return Err(malformed());
    };
    let (seq, sent) = text.split_once(';').ok_or_else(malformed)?;
    let seq = seq
        .strip_prefix("seq=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(malformed)?;
    let sent = sent
        .strip_prefix("sent_ns=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(malformed)?;
    Ok((seq, sent))
}

/// Binary size of a probe, which does not depend on its sequence number or send time.
pub fn probe_size() -> usize {
    encode(&probe_thing(0, ProbeClock::new().now_ns()), Format::Binary).len()
}

fn probe_subject() -> Subject {
    probe_thing(0, 0).subject()
}

async fn connect(config: &BrokerConfig) -> Result<Connection, BenchError> {
    Connection::connect(config.clone().with_reconnect(false))
        .await
        .map_err(|source| BenchError::BrokerUnreachable {
            addr: config.address(),
            source,
        })
}

/// Sends `count` probes at `rate` per second through the broker at `config` and
/// measures the latency from send to decode.
pub async fn run_bench(
    config: &BrokerConfig,
    rate: u32,
    count: u32,
) -> Result<LatencyReport, BenchError> {
    if rate == 0 || count == 0 {
        return Err(BenchError::InvalidParameters);
    }
    let clock = ProbeClock::new();
    let consumer = connect(config).await?;
    let producer = connect(config).await?;
    let mut sub = consumer.subscribe_with(&probe_subject(), Format::Binary, count as usize)?;
    consumer.flush().await?;

    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();
    let send = tokio::spawn({
        let producer = producer.clone();
        async move {
            let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / rate as f64));
            ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
            for seq in 0..count {
                ticker.tick().await;
                producer.publish_thing(&probe_thing(seq, clock.now_ns()), Format::Binary)?;
            }
            producer.flush().await?;
            let _ = done_tx.send(());
            Ok::<_, BrokerError>(())
        }
    });

    let mut latencies = Vec::with_capacity(count as usize);
    let mut previous: Option<u32> = None;
    let receive = async {
        while let Some(envelope) = sub.next().await {
            let thing = envelope
                .thing()
                .map_err(|e| BenchError::MalformedProbe(e.to_string()))?;
            let received_ns = clock.now_ns();
            let (seq, sent_ns) = parse_probe(&thing)?;
            if let Some(prev) = previous.filter(|&p| seq <= p) {
                return Err(BenchError::OutOfOrder {
                    seq,
                    previous: prev,
                });
            }
            previous = Some(seq);
            let latency = received_ns as i64 - sent_ns as i64;
            if latency < 0 {
                return Err(BenchError::NegativeLatency {
                    seq,
                    latency_ns: latency,
                });
            }
            latencies.push(latency as u64);
            if latencies.len() == count as usize {
                break;
            }
        }
        Ok(())
    };
    let deadline = async {
        let _ = done_rx.await;
        tokio::time::sleep(DRAIN_TIMEOUT).await;
    };
    let outcome = tokio::select! {
        r = receive => r,
        _ = deadline => Ok(()),
    };
    drop(sub);
    if outcome.is_err() {
        send.abort();
    }
    let sent = send.await;
    consumer.close().await;
    producer.close().await;
    outcome?;
    sent.map_err(|e| BenchError::ProducerFailed(e.to_string()))??;

    if latencies.is_empty() {
        return Err(BenchError::ZeroReceived(count));
    }
    Ok(LatencyReport::from_latencies(
        count,
        rate,
        probe_size(),
        latencies,
    ))
}

/// Runs [`run_bench`] against a loopback broker started on an ephemeral port.
pub async fn run_loopback_bench(rate: u32, count: u32) -> Result<LatencyReport, BenchError> {
    let broker = loopback_broker(0).await?;
    run_bench(&broker.config(), rate, count).await
}
