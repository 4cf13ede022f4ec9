use fastiot::prelude::*;

// --- user code begin ---
async fn on_thing(_service: ServiceHandle, thing: Thing) -> ServiceResult {
    info!("received {} = {}", thing.subject(), thing.value());
    Ok(())
}

fn main() {
    Service::from_manifest_yaml(include_str!("../service.yaml"))
        .on_thing("v1.thing.>", on_thing)
        .run()
}
// --- user code end ---
