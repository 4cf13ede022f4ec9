//! Oracles and fixtures for the fastiot test suites.
//!
//! Everything here is written independently of the code it checks: the subject matcher
//! works on raw strings, the thing generator builds values field by field, and the
//! conformance suite only uses the public client API.

pub mod conformance;
pub mod fixtures;
pub mod stock;

use fastiot::datamodel::{Thing, Timestamp, Value};
use proptest::prelude::*;

/// Segment-wise reference for NATS subject matching, recursive over raw tokens.
pub fn reference_matches(pattern: &str, subject: &str) -> bool {
    fn go(p: &[&str], s: &[&str]) -> bool {
        match (p.split_first(), s.split_first()) {
            (None, None) => true,
            (Some((&">", rest)), Some(_)) => rest.is_empty(),
            (Some((&"*", prest)), Some((_, srest))) => go(prest, srest),
            (Some((a, prest)), Some((b, srest))) => a == b && *a != "*" && go(prest, srest),
            _ => false,
        }
    }
    let p: Vec<&str> = pattern.split('.').collect();
    let s: Vec<&str> = subject.split('.').collect();
    if s.iter().any(|t| *t == "*" || *t == ">") {
        return false;
    }
    go(&p, &s)
}

/// Every subject of 1..=`max_len` segments over `alphabet`.
pub fn enumerate_subjects(alphabet: &[&str], max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut level: Vec<String> = alphabet.iter().map(|s| s.to_string()).collect();
    for _ in 0..max_len {
        out.extend(level.iter().cloned());
        level = level
            .iter()
            .flat_map(|prefix| alphabet.iter().map(move |a| format!("{prefix}.{a}")))
            .collect();
    }
    out
}

/// Every pattern of 1..=`max_len` segments over `alphabet` plus `*`, with `>` allowed last.
pub fn enumerate_patterns(alphabet: &[&str], max_len: usize) -> Vec<String> {
    let mut inner: Vec<&str> = alphabet.to_vec();
    inner.push("*");
    let prefixes = {
        let mut all = vec![String::new()];
        let mut level = vec![String::new()];
        for _ in 1..max_len {
            level = level
                .iter()
                .flat_map(|p| inner.iter().map(move |t| format!("{p}{t}.")))
                .collect();
            all.extend(level.iter().cloned());
        }
        all
    };
    let mut last = inner.clone();
    last.push(">");
    prefixes
        .iter()
        .flat_map(|p| last.iter().map(move |t| format!("{p}{t}")))
        .collect()
}

pub fn arb_token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_-]{1,16}"
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Integer),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(Value::Float),
        any::<bool>().prop_map(Value::Boolean),
        ".{0,64}".prop_map(Value::Text),
        // Occasionally long text, up to the 64 KiB bound.
        (0usize..=fastiot::datamodel::MAX_TEXT_LEN).prop_map(|n| Value::Text("x".repeat(n))),
    ]
}

pub fn arb_numeric_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Integer),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(Value::Float),
    ]
}

/// Timestamps from before the epoch up to a few hours in the future.
pub fn arb_timestamp() -> impl Strategy<Value = Timestamp> {
    let now = Timestamp::now().as_millis();
    (-1_000_000_000_000i64..now + 3_600_000).prop_map(Timestamp::from_millis)
}

pub fn arb_unit() -> impl Strategy<Value = Option<String>> {
    proptest::option::of("[^\u{0}]{1,8}")
}

pub fn arb_thing_with(value: impl Strategy<Value = Value>) -> impl Strategy<Value = Thing> {
    (arb_token(), arb_token(), value, arb_timestamp(), arb_unit()).prop_map(
        |(machine, name, value, ts, unit)| {
            let t = Thing::new(machine, name, value, ts).expect("generated fields are valid");
            match unit {
                Some(u) => t.with_unit(u),
                None => t,
            }
        },
    )
}

pub fn arb_thing() -> impl Strategy<Value = Thing> {
    arb_thing_with(arb_value())
}
