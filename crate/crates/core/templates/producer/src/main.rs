use std::sync::atomic::{AtomicU64, Ordering};

use fastiot::prelude::*;

// --- user code begin ---
static SEQUENCE: AtomicU64 = AtomicU64::new(0);

/// Publishes a simulated temperature reading. The sequence number is part of the name.
async fn produce(service: ServiceHandle) -> ServiceResult {
    let seq = SEQUENCE.fetch_add(1, Ordering::Relaxed);
    let celsius = 20.0 + (seq % 50) as f64 / 10.0;
    let thing = Thing::new(service.ctx().name(), format!("temperature_{seq}"), celsius, Timestamp::now())?
        .with_unit("°C");
    service.publish_thing(&thing)?;
    info!("sent thing {} = {}", thing.subject(), thing.value());
    Ok(())
}

fn main() {
    Service::from_manifest_yaml(include_str!("../service.yaml"))
        .interval(Duration::from_millis(100), produce)
        .run()
}
// --- user code end ---
