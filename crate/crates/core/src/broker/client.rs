use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::{Bytes, BytesMut};
use serde::Deserialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufWriter};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot, watch, Notify};

use super::proto::{self, ServerOp};
use super::{BrokerConfig, BrokerError, ProtocolError, MAX_PAYLOAD};
use crate::datamodel::{Envelope, Format, Subject, Thing};

/// Envelopes buffered per subscription before the oldest are dropped.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

const RECONNECT_INITIAL_DELAY: Duration = Duration::from_millis(100);
const RECONNECT_MAX_DELAY: Duration = Duration::from_secs(2);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnState {
    Connected,
    Reconnecting,
    Closed,
}

enum Outbound {
    Frame(Bytes),
    Close,
}

#[derive(Deserialize, Default)]
struct ServerInfo {
    #[serde(default)]
    max_payload: Option<usize>,
}

struct SubState {
    subject: Subject,
    format: Format,
    capacity: usize,
    queue: Mutex<VecDeque<Envelope>>,
    dropped: AtomicU64,
    closed: AtomicBool,
    notify: Notify,
}

impl SubState {
    fn push(&self, envelope: Envelope) {
        {
            let mut q = self.queue.lock().unwrap();
            if q.len() >= self.capacity {
                q.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            q.push_back(envelope);
        }
        self.notify.notify_one();
    }

    fn close(&self, discard: bool) {
        if discard {
            self.queue.lock().unwrap().clear();
        }
        self.closed.store(true, Ordering::Release);
        self.notify.notify_one();
    }
}

/// State shared between the connection handles and the background driver task.
struct Router {
    subs: Mutex<HashMap<u64, Arc<SubState>>>,
    pongs: Mutex<VecDeque<oneshot::Sender<()>>>,
    state: watch::Sender<ConnState>,
    user_closed: AtomicBool,
}

impl Router {
    fn dispatch(&self, subject: String, sid: u64, payload: Bytes) {
        let subs = self.subs.lock().unwrap();
        let Some(sub) = subs.get(&sid) else { return };
        let Ok(subject) = Subject::parse(&subject) else {
            tracing::warn!(%subject, "dropping message with invalid subject");
            return;
        };
        if let Ok(env) = Envelope::new(subject, sub.format, payload) {
            sub.push(env);
        }
    }

    fn fail_pongs(&self) {
        self.pongs.lock().unwrap().clear();
    }

    fn shutdown(&self) {
        self.fail_pongs();
        for (_, sub) in self.subs.lock().unwrap().drain() {
            sub.close(false);
        }
        self.state.send_replace(ConnState::Closed);
    }
}

struct Shared {
    config: BrokerConfig,
    outbound: mpsc::UnboundedSender<Outbound>,
    router: Arc<Router>,
    next_sid: AtomicU64,
    max_payload: usize,
}

impl Shared {
    fn send(&self, frame: Bytes) -> Result<(), BrokerError> {
        if *self.router.state.borrow() == ConnState::Closed {
            return Err(BrokerError::Disconnected);
        }
        self.outbound
            .send(Outbound::Frame(frame))
            .map_err(|_| BrokerError::Disconnected)
    }
}

/// A live session with a broker. Cheap to clone; all clones share one TCP connection.
#[derive(Clone)]
pub struct Connection {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("address", &self.shared.config.address())
            .field("state", &self.state())
            .finish()
    }
}

impl Connection {
    /// Opens a TCP session and completes the INFO / CONNECT / PING-PONG handshake.
    pub async fn connect(config: BrokerConfig) -> Result<Self, BrokerError> {
        let (stream, buf, info) = handshake(&config).await?;
        let (tx, rx) = mpsc::unbounded_channel();
        let (state, _) = watch::channel(ConnState::Connected);
        let router = Arc::new(Router {
            subs: Mutex::new(HashMap::new()),
            pongs: Mutex::new(VecDeque::new()),
            state,
            user_closed: AtomicBool::new(false),
        });
        let max_payload = info.max_payload.unwrap_or(MAX_PAYLOAD).min(MAX_PAYLOAD);
        tokio::spawn(drive(router.clone(), config.clone(), stream, buf, rx));
        Ok(Connection {
            shared: Arc::new(Shared {
                config,
                outbound: tx,
                router,
                next_sid: AtomicU64::new(1),
                max_payload,
            }),
        })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.shared.config
    }

    pub fn state(&self) -> ConnState {
        *self.shared.router.state.borrow()
    }

    /// Resolves once the connection is closed for good.
    pub async fn closed(&self) {
        let mut rx = self.shared.router.state.subscribe();
        let _ = rx.wait_for(|s| *s == ConnState::Closed).await;
    }

    /// Queues `envelope` for sending. Delivery is at-most-once: without a matching
    /// subscriber the broker drops the message.
    pub fn publish(&self, envelope: &Envelope) -> Result<(), BrokerError> {
        let payload = envelope.payload();
        if payload.len() > self.shared.max_payload {
            return Err(BrokerError::PayloadTooLarge {
                size: payload.len(),
                limit: self.shared.max_payload,
            });
        }
        let mut frame = BytesMut::new();
        proto::write_pub(&mut frame, envelope.subject().as_str(), payload);
        self.shared.send(frame.freeze())
    }

    /// Encodes and publishes `thing` on its canonical subject.
    pub fn publish_thing(&self, thing: &Thing, format: Format) -> Result<(), BrokerError> {
        self.publish(&Envelope::from_thing(thing, format))
    }

    /// Subscribes to `subject`, decoding deliveries as [`Format::Binary`].
    pub fn subscribe(&self, subject: &Subject) -> Result<Subscription, BrokerError> {
        self.subscribe_with(subject, Format::Binary, DEFAULT_QUEUE_CAPACITY)
    }

    /// Subscribes with an explicit payload format and queue capacity.
    ///
    /// The broker only knows about the subscription once the `SUB` frame is sent; call
    /// [`flush`](Self::flush) to wait for that.
    pub fn subscribe_with(
        &self,
        subject: &Subject,
        format: Format,
        capacity: usize,
    ) -> Result<Subscription, BrokerError> {
        if self.state() == ConnState::Closed {
            return Err(BrokerError::Disconnected);
        }
        let sid = self.shared.next_sid.fetch_add(1, Ordering::Relaxed);
        let state = Arc::new(SubState {
            subject: subject.clone(),
            format,
            capacity: capacity.max(1),
            queue: Mutex::new(VecDeque::new()),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            notify: Notify::new(),
        });
        self.shared
            .router
            .subs
            .lock()
            .unwrap()
            .insert(sid, state.clone());
        let mut sub = Subscription {
            sid,
            state,
            shared: self.shared.clone(),
            active: true,
        };
        if let Err(e) = self.shared.send(proto::sub_frame(subject.as_str(), sid)) {
            let _ = sub.unsubscribe();
            return Err(e);
        }
        Ok(sub)
    }

    /// Round-trips a PING, so every frame queued before the call has been processed by
    /// the broker when this returns.
    pub async fn flush(&self) -> Result<(), BrokerError> {
        let (tx, rx) = oneshot::channel();
        self.shared.router.pongs.lock().unwrap().push_back(tx);
        self.shared.send(Bytes::from_static(proto::PING))?;
        rx.await.map_err(|_| BrokerError::Disconnected)
    }

    /// Flushes pending frames and closes the TCP session.
    pub async fn close(&self) {
        self.shared
            .router
            .user_closed
            .store(true, Ordering::Release);
        let _ = self.shared.outbound.send(Outbound::Close);
        self.closed().await;
    }
}

/// Deliveries for one subscribed subject, consumed by a single reader.
pub struct Subscription {
    sid: u64,
    state: Arc<SubState>,
    shared: Arc<Shared>,
    active: bool,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("sid", &self.sid)
            .field("subject", &self.state.subject)
            .field("active", &self.active)
            .finish()
    }
}

impl Subscription {
    pub fn sid(&self) -> u64 {
        self.sid
    }

    pub fn subject(&self) -> &Subject {
        &self.state.subject
    }

    /// Number of envelopes discarded because the queue was full.
    pub fn dropped(&self) -> u64 {
        self.state.dropped.load(Ordering::Relaxed)
    }

    /// Waits for the next envelope. Returns `None` once unsubscribed or once the
    /// connection has closed and the queue is drained.
    pub async fn next(&mut self) -> Option<Envelope> {
        loop {
            if let Some(env) = self.try_next() {
                return Some(env);
            }
            if self.state.closed.load(Ordering::Acquire) {
                return self.try_next();
            }
            self.state.notify.notified().await;
        }
    }

    pub fn try_next(&mut self) -> Option<Envelope> {
        self.state.queue.lock().unwrap().pop_front()
    }

    /// Stops deliveries. Nothing is delivered after this returns, even if the `UNSUB`
    /// frame cannot be sent. Calling it again is a no-op.
    pub fn unsubscribe(&mut self) -> Result<(), BrokerError> {
        if !self.active {
            return Ok(());
        }
        self.active = false;
        self.shared.router.subs.lock().unwrap().remove(&self.sid);
        self.state.close(true);
        self.shared.send(proto::unsub_frame(self.sid))
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        let _ = self.unsubscribe();
    }
}

async fn read_op(stream: &mut TcpStream, buf: &mut BytesMut) -> Result<ServerOp, BrokerError> {
    loop {
        if let Some(op) = proto::parse_server_op(buf)? {
            return Ok(op);
        }
        if stream.read_buf(buf).await? == 0 {
            return Err(BrokerError::Disconnected);
        }
    }
}

async fn handshake(
    config: &BrokerConfig,
) -> Result<(TcpStream, BytesMut, ServerInfo), BrokerError> {
    let addr = config.address();
    let attempt = async {
        let mut stream =
            TcpStream::connect(&addr)
                .await
                .map_err(|source| BrokerError::Refused {
                    addr: addr.clone(),
                    source,
                })?;
        stream.set_nodelay(true)?;
        let mut buf = BytesMut::with_capacity(16 * 1024);
        let info = match read_op(&mut stream, &mut buf).await? {
            ServerOp::Info(json) => serde_json::from_str::<ServerInfo>(&json)
                .map_err(|e| ProtocolError(format!("malformed INFO: {e}")))?,
            other => {
                return Err(ProtocolError(format!("expected INFO, got {other:?}")).into());
            }
        };
        let mut connect = serde_json::json!({
            "verbose": false,
            "pedantic": false,
            "tls_required": false,
            "lang": "rust",
            "version": env!("CARGO_PKG_VERSION"),
            "protocol": 0,
            "echo": true,
        });
        if let Some(user) = &config.user {
            connect["user"] = user.clone().into();
        }
        if let Some(pass) = &config.password {
            connect["pass"] = pass.clone().into();
        }
        stream
            .write_all(format!("CONNECT {connect}\r\nPING\r\n").as_bytes())
            .await?;
        loop {
            match read_op(&mut stream, &mut buf).await? {
                ServerOp::Pong => break,
                ServerOp::Err(msg) => return Err(BrokerError::Rejected(msg)),
                ServerOp::Ping => stream.write_all(proto::PONG).await?,
                _ => {}
            }
        }
        Ok((stream, buf, info))
    };
    tokio::time::timeout(config.connect_timeout, attempt)
        .await
        .map_err(|_| BrokerError::ConnectTimeout(addr.clone()))?
}

enum SessionEnd {
    Closed,
    Lost,
}

async fn drive(
    router: Arc<Router>,
    config: BrokerConfig,
    mut stream: TcpStream,
    mut buf: BytesMut,
    mut rx: mpsc::UnboundedReceiver<Outbound>,
) {
    loop {
        match session(&router, stream, buf, &mut rx).await {
            SessionEnd::Closed => break,
            SessionEnd::Lost => {
                router.fail_pongs();
                if !config.reconnect || router.user_closed.load(Ordering::Acquire) {
                    tracing::warn!(address = %config.address(), "broker connection lost");
                    break;
                }
                tracing::warn!(address = %config.address(), "broker connection lost, reconnecting");
                router.state.send_replace(ConnState::Reconnecting);
                match reconnect(&router, &config, &rx).await {
                    Some((s, b)) => {
                        stream = s;
                        buf = b;
                        router.state.send_replace(ConnState::Connected);
                        tracing::info!(address = %config.address(), "reconnected to broker");
                    }
                    None => break,
                }
            }
        }
    }
    router.shutdown();
}

async fn reconnect(
    router: &Router,
    config: &BrokerConfig,
    rx: &mpsc::UnboundedReceiver<Outbound>,
) -> Option<(TcpStream, BytesMut)> {
    let mut delay = RECONNECT_INITIAL_DELAY;
    let mut attempt = 0u32;
    loop {
        if rx.is_closed() || router.user_closed.load(Ordering::Acquire) {
            return None;
        }
        attempt += 1;
        if let Ok((mut stream, buf, _)) = handshake(config).await {
            let frames: Vec<Bytes> = router
                .subs
                .lock()
                .unwrap()
                .iter()
                .map(|(sid, sub)| proto::sub_frame(sub.subject.as_str(), *sid))
                .collect();
            let resubscribed = async {
                for f in &frames {
                    stream.write_all(f).await?;
                }
                stream.flush().await
            };
            if resubscribed.await.is_ok() {
                return Some((stream, buf));
            }
        }
        if config.max_reconnect_attempts != 0 && attempt >= config.max_reconnect_attempts {
            tracing::error!(attempts = attempt, "giving up reconnecting to broker");
            return None;
        }
        tokio::time::sleep(delay).await;
        delay = (delay * 2).min(RECONNECT_MAX_DELAY);
    }
}

async fn session(
    router: &Router,
    stream: TcpStream,
    mut buf: BytesMut,
    rx: &mut mpsc::UnboundedReceiver<Outbound>,
) -> SessionEnd {
    let (mut rd, wr) = stream.into_split();
    let mut wr = BufWriter::new(wr);
    loop {
        loop {
            match proto::parse_server_op(&mut buf) {
                Ok(Some(op)) => {
                    if handle_op(router, op, &mut wr).await.is_err() {
                        return SessionEnd::Lost;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    tracing::warn!(error = %e, "protocol error from broker");
                    return SessionEnd::Lost;
                }
            }
        }
        tokio::select! {
            read = rd.read_buf(&mut buf) => match read {
                Ok(0) | Err(_) => return SessionEnd::Lost,
                Ok(_) => {}
            },
            out = rx.recv() => {
                let mut next = out;
                loop {
                    match next {
                        Some(Outbound::Frame(frame)) => {
                            if wr.write_all(&frame).await.is_err() {
                                return SessionEnd::Lost;
                            }
                        }
                        Some(Outbound::Close) | None => {
                            let _ = wr.flush().await;
                            let _ = wr.shutdown().await;
                            return SessionEnd::Closed;
                        }
                    }
                    match rx.try_recv() {
                        Ok(o) => next = Some(o),
                        Err(mpsc::error::TryRecvError::Empty) => break,
                        Err(mpsc::error::TryRecvError::Disconnected) => next = None,
                    }
                }
                if wr.flush().await.is_err() {
                    return SessionEnd::Lost;
                }
            }
        }
    }
}

async fn handle_op(
    router: &Router,
    op: ServerOp,
    wr: &mut BufWriter<tokio::net::tcp::OwnedWriteHalf>,
) -> std::io::Result<()> {
    match op {
        ServerOp::Msg {
            subject,
            sid,
            payload,
            ..
        } => router.dispatch(subject, sid, payload),
        ServerOp::Ping => {
            wr.write_all(proto::PONG).await?;
            wr.flush().await?;
        }
        ServerOp::Pong => {
            if let Some(waiter) = router.pongs.lock().unwrap().pop_front() {
                let _ = waiter.send(());
            }
        }
        ServerOp::Err(msg) => tracing::warn!(error = %msg, "broker reported an error"),
        ServerOp::Info(_) | ServerOp::Ok => {}
    }
    Ok(())
}
