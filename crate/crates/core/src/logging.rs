//! Log output for services and the CLI.

use std::io::IsTerminal;

use tracing_subscriber::EnvFilter;

/// Installs a stdout subscriber honoring `RUST_LOG`, defaulting to `info`.
/// Does nothing if a subscriber is already set.
pub fn init() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stdout)
        .with_ansi(std::io::stdout().is_terminal())
        .try_init();
}
