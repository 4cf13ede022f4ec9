use std::sync::atomic::{AtomicU64, Ordering};

use fastiot::prelude::*;

// --- user code begin ---
static SEQUENCE: AtomicU64 = AtomicU64::new(0);

/// Sends a counter reading; the sequence number is part of the thing name.
async fn send(service: ServiceHandle) -> ServiceResult {
    let seq = SEQUENCE.fetch_add(1, Ordering::Relaxed);
    let thing = Thing::new(service.ctx().name(), format!("counter_{seq}"), seq as i64, Timestamp::now())?;
    service.publish_thing(&thing)?;
    info!("sent thing {} = {}", thing.subject(), thing.value());
    Ok(())
}

/// Receives the readings this service sent.
async fn receive(_service: ServiceHandle, thing: Thing) -> ServiceResult {
    info!("received thing {} = {}", thing.subject(), thing.value());
    Ok(())
}

fn main() {
    Service::from_manifest_yaml(include_str!("../service.yaml"))
        .interval(Duration::from_secs(1), send)
        .on_thing("v1.thing.{{service_name}}.*", receive)
        .run()
}
// --- user code end ---
