//! Service lifecycle, configuration and the crash-to-restart fault contract.
//!
//! A service runs setup once, then its loops concurrently until SIGTERM or SIGINT, then
//! teardown, and exits 0. Any fault anywhere exits 1 so the container restart policy
//! brings the service back.

mod context;
mod manifest;
mod service;

pub use context::{
    load_context, process_env, ConfigError, ServiceContext, DEFAULT_CONFIG_DIR, ENV_CONFIG_DIR,
    ENV_ENV_FILE,
};
pub use manifest::{
    is_valid_name, Architecture, Infrastructure, PortSpec, RestartPolicy, ServiceManifest,
};
pub use service::{
    interval_loop, run_service, shutdown_signal, subscription_loop, thing_loop, BoxError,
    ConnectPolicy, Exit, LoopSpec, RuntimeError, Service, ServiceHandle, ServiceResult,
    ServiceSpec,
};
