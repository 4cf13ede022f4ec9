use std::future::Future;
use std::path::PathBuf;
use std::pin::Pin;
use std::sync::Arc;
use std::time::Duration;

use tokio::task::{JoinError, JoinSet};
use tokio::time::MissedTickBehavior;
use tracing::{error, info, warn, Instrument};

use crate::broker::{BrokerError, Connection, Subscription, DEFAULT_QUEUE_CAPACITY};
use crate::datamodel::{DataError, Envelope, Format, Subject, Thing};

use super::context::{
    load_context, process_env, ConfigError, ServiceContext, DEFAULT_CONFIG_DIR, ENV_CONFIG_DIR,
};
use super::ServiceManifest;

pub type BoxError = Box<dyn std::error::Error + Send + Sync + 'static>;
pub type ServiceResult = Result<(), BoxError>;
type BoxFuture = Pin<Box<dyn Future<Output = ServiceResult> + Send + 'static>>;

type OnceFn = Box<dyn FnOnce(ServiceHandle) -> BoxFuture + Send>;
type TickFn = Arc<dyn Fn(ServiceHandle) -> BoxFuture + Send + Sync>;
type MessageFn = Arc<dyn Fn(ServiceHandle, Envelope) -> BoxFuture + Send + Sync>;

const TEARDOWN_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("loop period must be greater than zero")]
    InvalidPeriod,
    #[error(transparent)]
    InvalidSubject(#[from] DataError),
    #[error("invalid service manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// How a service process ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Clean,
    Fault,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Clean => 0,
            Exit::Fault => 1,
        }
    }
}

/// Retry schedule for the first broker connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectPolicy {
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub attempts: u32,
}

impl Default for ConnectPolicy {
    fn default() -> Self {
        ConnectPolicy {
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
            attempts: 10,
        }
    }
}

/// What callbacks get: the context plus the live broker connection.
#[derive(Clone)]
pub struct ServiceHandle {
    ctx: Arc<ServiceContext>,
    conn: Connection,
}

impl ServiceHandle {
    pub fn ctx(&self) -> &ServiceContext {
        &self.ctx
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    pub fn publish(&self, envelope: &Envelope) -> Result<(), BrokerError> {
        self.conn.publish(envelope)
    }

    /// Publishes in the binary format on the thing's own subject.
    pub fn publish_thing(&self, thing: &Thing) -> Result<(), BrokerError> {
        self.conn.publish_thing(thing, Format::Binary)
    }

    pub fn subscribe(&self, subject: &Subject) -> Result<Subscription, BrokerError> {
        self.conn.subscribe(subject)
    }
}

enum LoopKind {
    Interval {
        period: Duration,
        body: TickFn,
    },
    Subscription {
        subject: Subject,
        format: Format,
        body: MessageFn,
    },
}

/// One concurrently running loop of a service.
pub struct LoopSpec {
    kind: LoopKind,
}

impl LoopSpec {
    pub fn describe(&self) -> String {
        match &self.kind {
            LoopKind::Interval { period, .. } => format!("interval loop every {period:?}"),
            LoopKind::Subscription { subject, .. } => format!("subscription loop on {subject}"),
        }
    }
}

/// Calls `body` every `period`. An overrunning body delays the next call; calls never overlap.
pub fn interval_loop<F, Fut>(period: Duration, body: F) -> Result<LoopSpec, RuntimeError>
where
    F: Fn(ServiceHandle) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ServiceResult> + Send + 'static,
{
    if period.is_zero() {
        return Err(RuntimeError::InvalidPeriod);
    }
    Ok(LoopSpec {
        kind: LoopKind::Interval {
            period,
            body: Arc::new(move |h| Box::pin(body(h))),
        },
    })
}

/// Calls `body` for each envelope delivered on `subject`, one at a time.
pub fn subscription_loop<F, Fut>(subject: Subject, format: Format, body: F) -> LoopSpec
where
    F: Fn(ServiceHandle, Envelope) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ServiceResult> + Send + 'static,
{
    LoopSpec {
        kind: LoopKind::Subscription {
            subject,
            format,
            body: Arc::new(move |h, e| Box::pin(body(h, e))),
        },
    }
}

/// Like [`subscription_loop`], decoding each payload into a [`Thing`] first.
/// A payload that does not decode is a fault.
pub fn thing_loop<F, Fut>(subject: Subject, format: Format, body: F) -> LoopSpec
where
    F: Fn(ServiceHandle, Thing) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ServiceResult> + Send + 'static,
{
    let body = Arc::new(body);
    subscription_loop(subject, format, move |h, envelope| {
        let body = body.clone();
        async move {
            let thing = envelope
                .thing()
                .map_err(|e| format!("undecodable message on {}: {e}", envelope.subject()))?;
            body(h, thing).await
        }
    })
}

/// Setup, loops and teardown of a service.
#[derive(Default)]
pub struct ServiceSpec {
    setup: Option<OnceFn>,
    loops: Vec<LoopSpec>,
    teardown: Option<OnceFn>,
    connect_policy: ConnectPolicy,
}

impl ServiceSpec {
    pub fn new() -> Self {
        ServiceSpec::default()
    }

    pub fn setup<F, Fut>(mut self, f: F) -> Self
    where
        F: FnOnce(ServiceHandle) -> Fut + Send + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        self.setup = Some(Box::new(move |h| Box::pin(f(h))));
        self
    }

    pub fn teardown<F, Fut>(mut self, f: F) -> Self
    where
        F: FnOnce(ServiceHandle) -> Fut + Send + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        self.teardown = Some(Box::new(move |h| Box::pin(f(h))));
        self
    }

    pub fn add_loop(mut self, spec: LoopSpec) -> Self {
        self.loops.push(spec);
        self
    }

    pub fn connect_policy(mut self, policy: ConnectPolicy) -> Self {
        self.connect_policy = policy;
        self
    }
}

fn describe_join(what: &str, e: JoinError) -> String {
    if e.is_panic() {
        let payload = e.into_panic();
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "non-string panic".into());
        format!("{what} panicked: {msg}")
    } else {
        format!("{what} was cancelled")
    }
}

async fn connect_with_backoff(
    ctx: &ServiceContext,
    policy: &ConnectPolicy,
) -> Result<Connection, BrokerError> {
    let mut delay = policy.initial_delay;
    let mut attempt = 1;
    loop {
        match Connection::connect(ctx.broker().clone()).await {
            Ok(conn) => return Ok(conn),
            Err(e) if attempt >= policy.attempts.max(1) => return Err(e),
            Err(e) => {
                warn!(attempt, error = %e, "broker not reachable, retrying in {delay:?}");
                tokio::time::sleep(delay).await;
                delay = (delay * 2).min(policy.max_delay);
                attempt += 1;
            }
        }
    }
}

async fn run_interval(period: Duration, body: TickFn, handle: ServiceHandle) -> ServiceResult {
    let mut tick = tokio::time::interval(period);
    tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        body(handle.clone()).await?;
    }
}

async fn run_subscription(
    mut sub: Subscription,
    body: MessageFn,
    handle: ServiceHandle,
) -> ServiceResult {
    while let Some(envelope) = sub.next().await {
        body(handle.clone(), envelope).await?;
    }
    Err(format!("subscription on {} closed", sub.subject()).into())
}

async fn run_teardown(teardown: Option<OnceFn>, handle: &ServiceHandle) -> Result<(), String> {
    let Some(f) = teardown else { return Ok(()) };
    let task = tokio::spawn(f(handle.clone()));
    match tokio::time::timeout(TEARDOWN_TIMEOUT, task).await {
        Ok(Ok(Ok(()))) => Ok(()),
        Ok(Ok(Err(e))) => Err(format!("teardown failed: {e}")),
        Ok(Err(e)) => Err(describe_join("teardown", e)),
        Err(_) => Err(format!(
            "teardown did not finish within {TEARDOWN_TIMEOUT:?}"
        )),
    }
}

/// Runs a service to completion and returns how it ended.
///
/// A shutdown signal runs teardown and yields [`Exit::Clean`]. Any error or panic in setup,
/// a loop or teardown, an unreachable broker, or a lost connection yields [`Exit::Fault`]
/// after a best-effort teardown.
pub async fn run_service(
    spec: ServiceSpec,
    ctx: ServiceContext,
    shutdown: impl Future<Output = ()>,
) -> Exit {
    let span = ctx.logger().clone();
    supervise(spec, ctx, shutdown).instrument(span).await
}

async fn supervise(
    spec: ServiceSpec,
    ctx: ServiceContext,
    shutdown: impl Future<Output = ()>,
) -> Exit {
    let ServiceSpec {
        setup,
        loops,
        teardown,
        connect_policy,
    } = spec;
    tokio::pin!(shutdown);

    let conn = tokio::select! {
        res = connect_with_backoff(&ctx, &connect_policy) => match res {
            Ok(conn) => conn,
            Err(e) => {
                error!(error = %e, "giving up on the broker at {}", ctx.broker().address());
                return Exit::Fault;
            }
        },
        _ = &mut shutdown => {
            info!("shutdown requested before the broker connection was up");
            return Exit::Clean;
        }
    };
    info!("connected to broker at {}", ctx.broker().address());
    let handle = ServiceHandle {
        ctx: Arc::new(ctx),
        conn: conn.clone(),
    };

    let outcome = tokio::select! {
        res = start_and_watch(setup, loops, &handle) => Err(res),
        _ = &mut shutdown => Ok(()),
    };

    let exit = match outcome {
        Ok(()) => {
            info!("shutdown requested");
            Exit::Clean
        }
        Err(reason) => {
            error!("{reason}");
            Exit::Fault
        }
    };
    let exit = match run_teardown(teardown, &handle).await {
        Ok(()) => exit,
        Err(reason) => {
            error!("{reason}");
            Exit::Fault
        }
    };
    let _ = tokio::time::timeout(Duration::from_secs(2), conn.close()).await;
    info!(code = exit.code(), "service stopped");
    exit
}

/// Runs setup, starts every loop and returns the reason the first one stopped.
/// Only returns on a fault; the caller races it against the shutdown signal.
async fn start_and_watch(
    setup: Option<OnceFn>,
    loops: Vec<LoopSpec>,
    handle: &ServiceHandle,
) -> String {
    let conn = handle.connection();
    if let Some(f) = setup {
        let mut task = JoinSet::new();
        task.spawn(f(handle.clone()));
        let res = tokio::select! {
            Some(res) = task.join_next() => res,
            _ = conn.closed() => return "broker connection lost during setup".into(),
        };
        match res {
            Ok(Ok(())) => {}
            Ok(Err(e)) => return format!("setup failed: {e}"),
            Err(e) => return describe_join("setup", e),
        }
    }

    let mut tasks = JoinSet::new();
    let mut names = Vec::new();
    for spec in loops {
        names.push(spec.describe());
        match spec.kind {
            LoopKind::Interval { period, body } => {
                tasks.spawn(run_interval(period, body, handle.clone()));
            }
            LoopKind::Subscription {
                subject,
                format,
                body,
            } => {
                let sub = match conn.subscribe_with(&subject, format, DEFAULT_QUEUE_CAPACITY) {
                    Ok(sub) => sub,
                    Err(e) => return format!("cannot subscribe to {subject}: {e}"),
                };
                tasks.spawn(run_subscription(sub, body, handle.clone()));
            }
        }
    }
    if let Err(e) = conn.flush().await {
        return format!("broker connection failed after subscribing: {e}");
    }
    info!(loops = names.len(), "service running");

    let reason = tokio::select! {
        Some(res) = tasks.join_next() => match res {
            Ok(Ok(())) => "a loop ended unexpectedly".to_string(),
            Ok(Err(e)) => format!("loop failed: {e}"),
            Err(e) => describe_join("loop", e),
        },
        _ = conn.closed() => "broker connection lost".to_string(),
    };
    tasks.abort_all();
    reason
}

/// Builder for a service binary: declare callbacks, then call [`Service::run`].
pub struct Service {
    manifest: ServiceManifest,
    spec: ServiceSpec,
    errors: Vec<String>,
}

impl Service {
    /// A service with a default manifest.
    pub fn new(name: &str) -> Self {
        Service {
            manifest: ServiceManifest::new(name),
            spec: ServiceSpec::new(),
            errors: Vec::new(),
        }
    }

    /// A service described by the YAML text of its `service.yaml`.
    pub fn from_manifest_yaml(yaml: &str) -> Self {
        match ServiceManifest::from_yaml(yaml) {
            Ok(manifest) => Service::with_manifest(manifest),
            Err(e) => {
                let mut s = Service::new("invalid");
                s.errors.push(format!("invalid service manifest: {e}"));
                s
            }
        }
    }

    pub fn with_manifest(manifest: ServiceManifest) -> Self {
        Service {
            manifest,
            spec: ServiceSpec::new(),
            errors: Vec::new(),
        }
    }

    /// Default for one of this service's keys, stored as `FASTIOT_<SERVICE>_<KEY>`.
    pub fn default_config(mut self, key: &str, value: impl Into<String>) -> Self {
        let key = format!(
            "{}{}",
            self.manifest.config_prefix(),
            key.to_ascii_uppercase()
        );
        self.manifest.env.insert(key, value.into());
        self
    }

    pub fn setup<F, Fut>(mut self, f: F) -> Self
    where
        F: FnOnce(ServiceHandle) -> Fut + Send + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        self.spec = self.spec.setup(f);
        self
    }

    pub fn teardown<F, Fut>(mut self, f: F) -> Self
    where
        F: FnOnce(ServiceHandle) -> Fut + Send + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        self.spec = self.spec.teardown(f);
        self
    }

    pub fn interval<F, Fut>(mut self, period: Duration, f: F) -> Self
    where
        F: Fn(ServiceHandle) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        match interval_loop(period, f) {
            Ok(l) => self.spec = self.spec.add_loop(l),
            Err(e) => self.errors.push(e.to_string()),
        }
        self
    }

    /// Handles raw envelopes on `subject`, which may contain wildcards.
    pub fn on_envelope<F, Fut>(mut self, subject: &str, format: Format, f: F) -> Self
    where
        F: Fn(ServiceHandle, Envelope) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        match Subject::parse(subject) {
            Ok(s) => self.spec = self.spec.add_loop(subscription_loop(s, format, f)),
            Err(e) => self.errors.push(e.to_string()),
        }
        self
    }

    /// Handles binary-encoded things on `subject`, which may contain wildcards.
    pub fn on_thing<F, Fut>(mut self, subject: &str, f: F) -> Self
    where
        F: Fn(ServiceHandle, Thing) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = ServiceResult> + Send + 'static,
    {
        match Subject::parse(subject) {
            Ok(s) => self.spec = self.spec.add_loop(thing_loop(s, Format::Binary, f)),
            Err(e) => self.errors.push(e.to_string()),
        }
        self
    }

    pub fn connect_policy(mut self, policy: ConnectPolicy) -> Self {
        self.spec = self.spec.connect_policy(policy);
        self
    }

    /// The manifest and spec, or every problem found while building.
    pub fn build(self) -> Result<(ServiceManifest, ServiceSpec), RuntimeError> {
        let mut errors = self.errors;
        errors.extend(self.manifest.violations());
        if errors.is_empty() {
            Ok((self.manifest, self.spec))
        } else {
            Err(RuntimeError::InvalidManifest(errors.join("; ")))
        }
    }

    /// Runs the service as the process: reads configuration from the environment, logs to
    /// stdout, stops cleanly on SIGTERM or SIGINT, and exits with 1 on any fault.
    pub fn run(self) -> ! {
        crate::logging::init();
        let workers = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
        let rt = match tokio::runtime::Builder::new_multi_thread()
            .worker_threads(workers)
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(e) => {
                error!("cannot start the async runtime: {e}");
                std::process::exit(Exit::Fault.code());
            }
        };
        let exit = rt.block_on(async move {
            let shutdown = match shutdown_signal() {
                Ok(f) => f,
                Err(e) => {
                    error!("cannot install signal handlers: {e}");
                    return Exit::Fault;
                }
            };
            let (manifest, spec) = match self.build() {
                Ok(parts) => parts,
                Err(e) => {
                    error!("{e}");
                    return Exit::Fault;
                }
            };
            let ctx = process_env().and_then(|env| {
                let dir = env
                    .get(ENV_CONFIG_DIR)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG_DIR));
                load_context(manifest, &env, Some(&dir))
            });
            match ctx {
                Ok(ctx) => run_service(spec, ctx, shutdown).await,
                Err(e) => {
                    error!("configuration error: {e}");
                    Exit::Fault
                }
            }
        });
        rt.shutdown_timeout(Duration::from_millis(500));
        std::process::exit(exit.code());
    }
}

/// Resolves on the first SIGTERM or SIGINT. Handlers are installed before this returns.
pub fn shutdown_signal() -> std::io::Result<impl Future<Output = ()> + Send> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate())?;
    let mut int = signal(SignalKind::interrupt())?;
    Ok(async move {
        tokio::select! {
            _ = term.recv() => {}
            _ = int.recv() => {}
        }
    })
}
