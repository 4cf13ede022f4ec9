use fastiot::prelude::*;

// --- user code begin ---
/// Logs every thing published in the project.
async fn on_thing(_service: ServiceHandle, thing: Thing) -> ServiceResult {
    info!(
        machine = thing.machine(),
        name = thing.name(),
        "received thing {} = {} {}",
        thing.subject(),
        thing.value(),
        thing.unit().unwrap_or_default()
    );
    Ok(())
}

fn main() {
    Service::from_manifest_yaml(include_str!("../service.yaml"))
        .on_thing("v1.thing.>", on_thing)
        .run()
}
// --- user code end ---
