//! Client conformance suite, runnable against any NATS-compatible broker.
//!
//! Every case opens its own connections, so outcomes do not depend on ordering.

use std::collections::BTreeMap;
use std::future::Future;
use std::pin::Pin;
use std::time::Duration;

use bytes::Bytes;
use fastiot::broker::{BrokerConfig, BrokerError, Connection, Subscription};
use fastiot::datamodel::{Envelope, Format, Subject, Thing, Timestamp, Value};

use crate::reference_matches;

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: String,
    pub result: Result<(), String>,
}

type CaseFuture = Pin<Box<dyn Future<Output = Result<(), String>> + Send>>;
type CaseFn = fn(BrokerConfig) -> CaseFuture;

/// Pattern, publish subject, expected delivery.
pub const WILDCARD_TABLE: &[(&str, &str, bool)] = &[
    ("v1.thing.m1.*", "v1.thing.m1.temp", true),
    ("v1.thing.>", "v1.thing.a.b", true),
    ("v1.thing.m1.temp", "v1.thing.m2.temp", false),
    ("v1.thing.m1.temp", "v1.thing.m1.temp", true),
    ("v1.thing.>", "v1.thing", false),
    ("v1.*.m1.temp", "v1.thing.m1.temp", true),
    ("*.*.*.*", "v1.thing.m1.temp", true),
    ("*.*.*", "v1.thing.m1.temp", false),
    (">", "v1", true),
    (">", "v1.thing.a.b", true),
    ("*", "v1", true),
    ("*", "v1.thing", false),
    ("v1.*", "v1", false),
    ("v1.*.>", "v1.thing.x", true),
    ("v1.*.>", "v1.thing", false),
    ("v1.thing.*.temp", "v1.thing.m9.temp", true),
    ("v1.thing.*.temp", "v1.thing.m9.pressure", false),
    ("v1.thing.m1.>", "v1.thing.m1.temp", true),
    ("v1.thing.m1.>", "v1.thing.m2.temp", false),
    ("a.b.c", "a.b", false),
    ("a.b", "a.b.c", false),
    ("A.b", "a.b", false),
    ("a-b.c_d", "a-b.c_d", true),
    ("*.b", "a.b", true),
    ("*.b", "a.c", false),
    ("a.*.c", "a.x.c", true),
    ("a.*.c", "a.x.d", false),
    ("a.*.*", "a.x.y", true),
    ("a.>", "a.x.y.z.w", true),
    ("*.>", "a", false),
    ("*.>", "a.b", true),
    ("v2.thing.>", "v1.thing.a.b", false),
    ("v1.thing.filler1.>", "v1.thing.filler1.temp_tank", true),
    ("v1.thing.filler1.>", "v1.thing.filler10.temp_tank", false),
];

fn cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("zero_subscribers_publish_is_dropped", |c| {
            Box::pin(zero_subscribers(c))
        }),
        ("late_subscriber_misses_earlier_messages", |c| {
            Box::pin(late_subscriber(c))
        }),
        ("payload_bytes_identical", |c| {
            Box::pin(payload_identical(c))
        }),
        ("empty_payload", |c| Box::pin(empty_payload(c))),
        ("max_payload_accepted", |c| Box::pin(max_payload(c))),
        ("oversize_payload_rejected", |c| {
            Box::pin(oversize_payload(c))
        }),
        ("fifo_10000_messages", |c| Box::pin(fifo_10000(c))),
        ("per_subject_fifo_interleaved", |c| {
            Box::pin(per_subject_fifo(c))
        }),
        ("unsubscribe_then_publish", |c| {
            Box::pin(unsubscribe_then_publish(c))
        }),
        ("double_unsubscribe_is_noop", |c| {
            Box::pin(double_unsubscribe(c))
        }),
        ("unsubscribe_under_load", |c| {
            Box::pin(unsubscribe_under_load(c))
        }),
        ("two_subscriptions_one_connection", |c| {
            Box::pin(two_subscriptions(c))
        }),
        ("echo_own_publish", |c| Box::pin(echo_own(c))),
        ("envelope_subject_preserved", |c| {
            Box::pin(subject_preserved(c))
        }),
        ("flush_round_trip", |c| Box::pin(flush_round_trip(c))),
        ("closed_connection_rejects", |c| Box::pin(closed_rejects(c))),
        ("concurrent_publishers", |c| {
            Box::pin(concurrent_publishers(c))
        }),
        ("no_cross_talk_bruteforce", |c| Box::pin(no_cross_talk(c))),
        ("overflow_drops_oldest", |c| {
            Box::pin(overflow_drops_oldest(c))
        }),
        ("things_round_trip_binary", |c| {
            Box::pin(things_round_trip(c, Format::Binary))
        }),
        ("things_round_trip_json", |c| {
            Box::pin(things_round_trip(c, Format::Json))
        }),
    ]
}

/// Runs every case against the broker at `config`.
pub async fn run_suite(config: &BrokerConfig) -> Vec<CaseOutcome> {
    let mut outcomes = Vec::new();
    for (i, (pattern, subject, expected)) in WILDCARD_TABLE.iter().enumerate() {
        let result = wildcard_case(config.clone(), pattern, subject, *expected).await;
        outcomes.push(CaseOutcome {
            name: format!("wildcard_{i:02}[{pattern} vs {subject}]"),
            result,
        });
    }
    for (name, case) in cases() {
        let result = match tokio::time::timeout(Duration::from_secs(20), case(config.clone())).await
        {
            Ok(r) => r,
            Err(_) => Err("timed out".into()),
        };
        outcomes.push(CaseOutcome {
            name: name.to_owned(),
            result,
        });
    }
    outcomes
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn subject(s: &str) -> Subject {
    Subject::parse(s).expect("fixture subjects are valid")
}

fn envelope(s: &str, payload: impl Into<Bytes>) -> Envelope {
    Envelope::new(subject(s), Format::Binary, payload).expect("fixture subjects are concrete")
}

async fn connect(config: &BrokerConfig) -> Result<Connection, String> {
    Connection::connect(config.clone()).await.map_err(e)
}

/// Waits until everything `publisher` sent has been routed into `subscriber`'s queues.
async fn settle(publisher: &Connection, subscriber: &Connection) -> Result<(), String> {
    publisher.flush().await.map_err(e)?;
    subscriber.flush().await.map_err(e)
}

async fn recv(sub: &mut Subscription) -> Result<Envelope, String> {
    tokio::time::timeout(Duration::from_secs(5), sub.next())
        .await
        .map_err(|_| "timed out waiting for a delivery".to_string())?
        .ok_or_else(|| "subscription closed".to_string())
}

async fn wildcard_case(
    config: BrokerConfig,
    pattern: &str,
    publish: &str,
    expected: bool,
) -> Result<(), String> {
    ensure!(
        reference_matches(pattern, publish) == expected,
        "table row disagrees with the reference matcher"
    );
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut sub = sub_conn.subscribe(&subject(pattern)).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    pub_conn.publish(&envelope(publish, "x")).map_err(e)?;
    settle(&pub_conn, &sub_conn).await?;
    let got = sub.try_next().is_some();
    ensure!(got == expected, "delivered={got}, expected {expected}");
    Ok(())
}

async fn zero_subscribers(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    conn.publish(&envelope("nobody.listens.here", "lost"))
        .map_err(e)?;
    conn.flush().await.map_err(e)
}

async fn late_subscriber(config: BrokerConfig) -> Result<(), String> {
    let pub_conn = connect(&config).await?;
    let sub_conn = connect(&config).await?;
    pub_conn
        .publish(&envelope("late.sub", "early"))
        .map_err(e)?;
    pub_conn.flush().await.map_err(e)?;
    let mut sub = sub_conn.subscribe(&subject("late.sub")).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    pub_conn.publish(&envelope("late.sub", "late")).map_err(e)?;
    settle(&pub_conn, &sub_conn).await?;
    let first = sub.try_next().ok_or("nothing delivered")?;
    ensure!(
        first.payload().as_ref() == b"late",
        "got {:?}",
        first.payload()
    );
    ensure!(sub.try_next().is_none(), "earlier message was retained");
    Ok(())
}

async fn payload_identical(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn.subscribe(&subject("bytes.all")).map_err(e)?;
    let mut payload: Vec<u8> = (0..=255u8).collect();
    payload.extend_from_slice(b"\r\nPUB x 1\r\n");
    conn.publish(&envelope("bytes.all", payload.clone()))
        .map_err(e)?;
    let got = recv(&mut sub).await?;
    ensure!(
        got.payload().as_ref() == payload.as_slice(),
        "payload altered in transit"
    );
    Ok(())
}

async fn empty_payload(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn.subscribe(&subject("bytes.empty")).map_err(e)?;
    conn.publish(&envelope("bytes.empty", Bytes::new()))
        .map_err(e)?;
    let got = recv(&mut sub).await?;
    ensure!(got.payload().is_empty(), "expected an empty payload");
    Ok(())
}

async fn max_payload(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn.subscribe(&subject("bytes.max")).map_err(e)?;
    let payload = vec![0xA5u8; fastiot::broker::MAX_PAYLOAD];
    conn.publish(&envelope("bytes.max", payload.clone()))
        .map_err(e)?;
    let got = recv(&mut sub).await?;
    ensure!(
        got.payload().len() == payload.len(),
        "truncated to {}",
        got.payload().len()
    );
    Ok(())
}

async fn oversize_payload(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let payload = vec![0u8; fastiot::broker::MAX_PAYLOAD + 1];
    match conn.publish(&envelope("bytes.big", payload)) {
        Err(BrokerError::PayloadTooLarge { .. }) => {}
        other => return Err(format!("expected PayloadTooLarge, got {other:?}")),
    }
    // The connection stays usable.
    conn.flush().await.map_err(e)
}

async fn fifo_10000(config: BrokerConfig) -> Result<(), String> {
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut sub = sub_conn.subscribe(&subject("fifo.seq")).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    let n = 10_000u32;
    for i in 0..n {
        pub_conn
            .publish(&envelope("fifo.seq", i.to_be_bytes().to_vec()))
            .map_err(e)?;
    }
    for expected in 0..n {
        let env = recv(&mut sub).await?;
        let got = u32::from_be_bytes(env.payload()[..4].try_into().map_err(e)?);
        ensure!(got == expected, "expected sequence {expected}, got {got}");
    }
    ensure!(sub.dropped() == 0, "{} messages dropped", sub.dropped());
    Ok(())
}

async fn per_subject_fifo(config: BrokerConfig) -> Result<(), String> {
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut sub = sub_conn.subscribe(&subject("order.*")).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    let subjects = ["order.a", "order.b", "order.c"];
    for i in 0..300u32 {
        let s = subjects[(i as usize * 7 + 3) % 3];
        pub_conn
            .publish(&envelope(s, i.to_be_bytes().to_vec()))
            .map_err(e)?;
    }
    let mut last: BTreeMap<String, u32> = BTreeMap::new();
    for _ in 0..300 {
        let env = recv(&mut sub).await?;
        let seq = u32::from_be_bytes(env.payload()[..4].try_into().map_err(e)?);
        if let Some(prev) = last.insert(env.subject().to_string(), seq) {
            ensure!(seq > prev, "{} reordered: {prev} then {seq}", env.subject());
        }
    }
    Ok(())
}

async fn unsubscribe_then_publish(config: BrokerConfig) -> Result<(), String> {
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut sub = sub_conn.subscribe(&subject("unsub.me")).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    sub.unsubscribe().map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    pub_conn.publish(&envelope("unsub.me", "x")).map_err(e)?;
    settle(&pub_conn, &sub_conn).await?;
    ensure!(sub.next().await.is_none(), "delivery after unsubscribe");
    Ok(())
}

async fn double_unsubscribe(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn.subscribe(&subject("unsub.twice")).map_err(e)?;
    sub.unsubscribe().map_err(e)?;
    sub.unsubscribe().map_err(e)?;
    conn.flush().await.map_err(e)
}

async fn unsubscribe_under_load(config: BrokerConfig) -> Result<(), String> {
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut sub = sub_conn.subscribe(&subject("load.x")).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    let publisher = {
        let pub_conn = pub_conn.clone();
        tokio::spawn(async move {
            for i in 0..20_000u32 {
                if pub_conn
                    .publish(&envelope("load.x", i.to_be_bytes().to_vec()))
                    .is_err()
                {
                    break;
                }
                if i % 256 == 0 {
                    tokio::task::yield_now().await;
                }
            }
        })
    };
    recv(&mut sub).await?;
    sub.unsubscribe().map_err(e)?;
    let unsubscribed_at = std::time::Instant::now();
    tokio::time::sleep(Duration::from_millis(50)).await;
    let _ = publisher.await;
    settle(&pub_conn, &sub_conn).await?;
    if let Some(env) = sub.try_next() {
        return Err(format!(
            "delivery {:?} observed {:?} after unsubscribe returned",
            env.payload(),
            unsubscribed_at.elapsed()
        ));
    }
    ensure!(sub.next().await.is_none(), "subscription still open");
    Ok(())
}

async fn two_subscriptions(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut a = conn.subscribe(&subject("dual.x")).map_err(e)?;
    let mut b = conn.subscribe(&subject("dual.*")).map_err(e)?;
    conn.publish(&envelope("dual.x", "hi")).map_err(e)?;
    recv(&mut a).await?;
    recv(&mut b).await?;
    Ok(())
}

async fn echo_own(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn.subscribe(&subject("echo.me")).map_err(e)?;
    conn.publish(&envelope("echo.me", "own")).map_err(e)?;
    let got = recv(&mut sub).await?;
    ensure!(got.payload().as_ref() == b"own", "unexpected payload");
    Ok(())
}

async fn subject_preserved(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn.subscribe(&subject("v1.thing.>")).map_err(e)?;
    conn.publish(&envelope("v1.thing.press_3.force-n", "1"))
        .map_err(e)?;
    let got = recv(&mut sub).await?;
    ensure!(
        got.subject().as_str() == "v1.thing.press_3.force-n",
        "subject became {}",
        got.subject()
    );
    ensure!(got.format() == Format::Binary, "default format is binary");
    Ok(())
}

async fn flush_round_trip(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    for _ in 0..10 {
        conn.flush().await.map_err(e)?;
    }
    Ok(())
}

async fn closed_rejects(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    conn.close().await;
    ensure!(
        matches!(
            conn.publish(&envelope("closed.x", "x")),
            Err(BrokerError::Disconnected)
        ),
        "publish after close must fail"
    );
    ensure!(
        matches!(
            conn.subscribe(&subject("closed.x")),
            Err(BrokerError::Disconnected)
        ),
        "subscribe after close must fail"
    );
    Ok(())
}

async fn concurrent_publishers(config: BrokerConfig) -> Result<(), String> {
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut sub = sub_conn.subscribe(&subject("multi.*")).map_err(e)?;
    sub_conn.flush().await.map_err(e)?;
    let mut tasks = Vec::new();
    for p in 0..4u32 {
        let conn = pub_conn.clone();
        tasks.push(tokio::spawn(async move {
            let s = format!("multi.p{p}");
            for i in 0..500u32 {
                conn.publish(&envelope(&s, i.to_be_bytes().to_vec()))?;
                if i % 50 == 0 {
                    tokio::task::yield_now().await;
                }
            }
            Ok::<_, BrokerError>(())
        }));
    }
    for t in tasks {
        t.await.map_err(e)?.map_err(e)?;
    }
    let mut next_expected: BTreeMap<String, u32> = BTreeMap::new();
    for _ in 0..2000 {
        let env = recv(&mut sub).await?;
        let seq = u32::from_be_bytes(env.payload()[..4].try_into().map_err(e)?);
        let slot = next_expected.entry(env.subject().to_string()).or_insert(0);
        ensure!(
            seq == *slot,
            "{}: expected {}, got {seq}",
            env.subject(),
            *slot
        );
        *slot += 1;
    }
    Ok(())
}

async fn no_cross_talk(config: BrokerConfig) -> Result<(), String> {
    let patterns = ["x.a", "x.*", "x.>", "*.b", ">", "x.a.c", "y.*.c"];
    let subjects = ["x.a", "x.b", "y.b", "x.a.c", "y.z.c", "z", "x.q.r"];
    let sub_conn = connect(&config).await?;
    let pub_conn = connect(&config).await?;
    let mut subs = Vec::new();
    for p in patterns {
        subs.push(sub_conn.subscribe(&subject(p)).map_err(e)?);
    }
    sub_conn.flush().await.map_err(e)?;
    for s in subjects {
        pub_conn
            .publish(&envelope(s, s.as_bytes().to_vec()))
            .map_err(e)?;
    }
    settle(&pub_conn, &sub_conn).await?;
    for (p, sub) in patterns.iter().zip(subs.iter_mut()) {
        let mut got = Vec::new();
        while let Some(env) = sub.try_next() {
            got.push(env.subject().to_string());
        }
        let expected: Vec<String> = subjects
            .iter()
            .filter(|s| reference_matches(p, s))
            .map(|s| s.to_string())
            .collect();
        ensure!(
            got == expected,
            "pattern {p}: got {got:?}, expected {expected:?}"
        );
    }
    Ok(())
}

async fn overflow_drops_oldest(config: BrokerConfig) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn
        .subscribe_with(&subject("overflow.x"), Format::Binary, 10)
        .map_err(e)?;
    for i in 0..25u32 {
        conn.publish(&envelope("overflow.x", i.to_be_bytes().to_vec()))
            .map_err(e)?;
    }
    conn.flush().await.map_err(e)?;
    ensure!(
        sub.dropped() == 15,
        "dropped {} instead of 15",
        sub.dropped()
    );
    for expected in 15..25u32 {
        let env = sub.try_next().ok_or("queue drained early")?;
        let got = u32::from_be_bytes(env.payload()[..4].try_into().map_err(e)?);
        ensure!(got == expected, "expected {expected}, got {got}");
    }
    Ok(())
}

async fn things_round_trip(config: BrokerConfig, format: Format) -> Result<(), String> {
    let conn = connect(&config).await?;
    let mut sub = conn
        .subscribe_with(&subject("v1.thing.*.*"), format, 100)
        .map_err(e)?;
    let things = [
        Thing::new(
            "filler1",
            "temp_tank",
            21.5,
            Timestamp::from_millis(1_700_000_000_000),
        )
        .map_err(e)?
        .with_unit("°C"),
        Thing::new("filler1", "count", 42i64, Timestamp::now()).map_err(e)?,
        Thing::new("press-2", "running", Value::Boolean(true), Timestamp::now()).map_err(e)?,
    ];
    for t in &things {
        conn.publish_thing(t, format).map_err(e)?;
    }
    for t in &things {
        let got = recv(&mut sub).await?.thing().map_err(e)?;
        ensure!(&got == t, "got {got:?}, expected {t:?}");
    }
    Ok(())
}
