//! Building blocks for IIoT microservice projects: typed things on a NATS-compatible
//! broker, a service runtime with a crash-to-restart contract, project scaffolding, and
//! compilation of deployment configurations into compose files, env files, build scripts
//! and rollout playbooks.

pub mod bench;
pub mod broker;
pub mod datamodel;
pub mod deploy;
pub mod envfile;
pub mod logging;
pub mod runtime;
pub mod scaffold;
pub mod tree;

pub use tracing;

/// The names a service binary usually needs.
pub mod prelude {
    pub use crate::datamodel::{Envelope, Format, Subject, Thing, Timestamp, Value};
    pub use crate::runtime::{Service, ServiceHandle, ServiceResult};
    pub use crate::tracing::{debug, error, info, warn};
    pub use std::time::Duration;
}
