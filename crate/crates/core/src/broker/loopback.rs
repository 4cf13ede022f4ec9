use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use bytes::{Bytes, BytesMut};
use serde::Deserialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::{JoinHandle, JoinSet};

use super::proto::{self, ClientOp};
use super::{BrokerConfig, BrokerError, MAX_PAYLOAD};
use crate::datamodel::Subject;

struct ServerSub {
    conn: u64,
    sid: u64,
    subject: Subject,
    remaining: Option<u64>,
}

struct ConnEntry {
    tx: mpsc::UnboundedSender<Bytes>,
    echo: bool,
}

#[derive(Default)]
struct Server {
    subs: Mutex<Vec<ServerSub>>,
    conns: Mutex<HashMap<u64, ConnEntry>>,
    next_conn: AtomicU64,
}

impl Server {
    fn route(&self, from: u64, subject: &Subject, payload: &[u8]) {
        let mut subs = self.subs.lock().unwrap();
        let conns = self.conns.lock().unwrap();
        let echo = conns.get(&from).is_none_or(|c| c.echo);
        for sub in subs.iter_mut() {
            if (!echo && sub.conn == from) || !sub.subject.matches(subject) {
                continue;
            }
            if let Some(conn) = conns.get(&sub.conn) {
                let mut frame = BytesMut::new();
                proto::write_msg(&mut frame, subject.as_str(), sub.sid, payload);
                let _ = conn.tx.send(frame.freeze());
            }
            if let Some(n) = sub.remaining.as_mut() {
                *n = n.saturating_sub(1);
            }
        }
        subs.retain(|s| s.remaining != Some(0));
    }

    fn subscribe(&self, conn: u64, sid: u64, subject: Subject) {
        let mut subs = self.subs.lock().unwrap();
        subs.retain(|s| !(s.conn == conn && s.sid == sid));
        subs.push(ServerSub {
            conn,
            sid,
            subject,
            remaining: None,
        });
    }

    fn unsubscribe(&self, conn: u64, sid: u64, max: Option<u64>) {
        let mut subs = self.subs.lock().unwrap();
        match max {
            Some(max) if max > 0 => {
                for s in subs.iter_mut().filter(|s| s.conn == conn && s.sid == sid) {
                    s.remaining = Some(max);
                }
            }
            _ => subs.retain(|s| !(s.conn == conn && s.sid == sid)),
        }
    }

    fn disconnect(&self, conn: u64) {
        self.subs.lock().unwrap().retain(|s| s.conn != conn);
        self.conns.lock().unwrap().remove(&conn);
    }
}

/// A running in-process broker. Dropping the handle stops it.
pub struct BrokerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    shutdown: watch::Sender<bool>,
    task: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for BrokerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BrokerHandle")
            .field("addr", &self.addr)
            .finish()
    }
}

impl BrokerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Client configuration pointing at this broker.
    pub fn config(&self) -> BrokerConfig {
        let host = if self.addr.ip().is_unspecified() {
            Ipv4Addr::LOCALHOST.to_string()
        } else {
            self.addr.ip().to_string()
        };
        BrokerConfig::new(host, self.port())
    }

    pub fn connection_count(&self) -> usize {
        self.server.conns.lock().unwrap().len()
    }

    pub fn subscription_count(&self) -> usize {
        self.server.subs.lock().unwrap().len()
    }

    /// Closes the listener and every client connection, then waits until the port is free.
    pub async fn shutdown(mut self) {
        self.shutdown.send_replace(true);
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.shutdown.send_replace(true);
    }
}

/// Starts a loopback broker on `127.0.0.1:port`; port 0 picks a free ephemeral port.
pub async fn loopback_broker(port: u16) -> Result<BrokerHandle, BrokerError> {
    loopback_broker_on(SocketAddr::from((Ipv4Addr::LOCALHOST, port))).await
}

pub async fn loopback_broker_on(addr: SocketAddr) -> Result<BrokerHandle, BrokerError> {
    let listener = TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            BrokerError::PortInUse(addr.port())
        } else {
            BrokerError::Io(e)
        }
    })?;
    let addr = listener.local_addr()?;
    let server = Arc::new(Server::default());
    let (shutdown, rx) = watch::channel(false);
    let task = tokio::spawn(accept_loop(listener, server.clone(), rx));
    tracing::debug!(%addr, "loopback broker listening");
    Ok(BrokerHandle {
        addr,
        server,
        shutdown,
        task: Some(task),
    })
}

async fn accept_loop(
    listener: TcpListener,
    server: Arc<Server>,
    mut shutdown: watch::Receiver<bool>,
) {
    let port = listener.local_addr().map(|a| a.port()).unwrap_or(0);
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    let id = server.next_conn.fetch_add(1, Ordering::Relaxed);
                    conns.spawn(serve_conn(server.clone(), id, stream, port, shutdown.clone()));
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            },
            changed = shutdown.changed() => {
                if changed.is_err() || *shutdown.borrow() {
                    break;
                }
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    drop(listener);
    while conns.join_next().await.is_some() {}
}

#[derive(Deserialize)]
struct ConnectOptions {
    #[serde(default)]
    verbose: bool,
    #[serde(default = "default_echo")]
    echo: bool,
}

fn default_echo() -> bool {
    true
}

fn info_frame(port: u16) -> Bytes {
    let info = serde_json::json!({
        "server_id": "fastiot-loopback",
        "server_name": "fastiot-loopback",
        "version": "2.10.0",
        "proto": 1,
        "host": "127.0.0.1",
        "port": port,
        "headers": false,
        "max_payload": MAX_PAYLOAD,
    });
    Bytes::from(format!("INFO {info}\r\n"))
}

fn err_frame(msg: &str) -> Bytes {
    Bytes::from(format!("-ERR '{msg}'\r\n"))
}

async fn serve_conn(
    server: Arc<Server>,
    id: u64,
    stream: TcpStream,
    port: u16,
    mut shutdown: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let (mut rd, wr) = stream.into_split();
    let (tx, rx) = mpsc::unbounded_channel();
    server.conns.lock().unwrap().insert(
        id,
        ConnEntry {
            tx: tx.clone(),
            echo: true,
        },
    );
    let _ = tx.send(info_frame(port));
    let writer = tokio::spawn(write_loop(wr, rx));

    let mut buf = BytesMut::with_capacity(16 * 1024);
    let mut verbose = false;
    let mut killed = false;
    'conn: loop {
        loop {
            let op = match proto::parse_client_op(&mut buf, MAX_PAYLOAD) {
                Ok(Some(op)) => op,
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(err_frame(&e.0));
                    break 'conn;
                }
            };
            match op {
                ClientOp::Connect(json) => match serde_json::from_str::<ConnectOptions>(&json) {
                    Ok(opts) => {
                        verbose = opts.verbose;
                        if let Some(c) = server.conns.lock().unwrap().get_mut(&id) {
                            c.echo = opts.echo;
                        }
                    }
                    Err(_) => {
                        let _ = tx.send(err_frame("Invalid CONNECT"));
                        break 'conn;
                    }
                },
                ClientOp::Pub {
                    subject, payload, ..
                } => match Subject::parse(&subject).ok().filter(|s| !s.is_wildcard()) {
                    Some(s) => server.route(id, &s, &payload),
                    None => {
                        let _ = tx.send(err_frame("Invalid Publish Subject"));
                        continue;
                    }
                },
                ClientOp::Sub { subject, sid, .. } => match Subject::parse(&subject) {
                    Ok(s) => server.subscribe(id, sid, s),
                    Err(_) => {
                        let _ = tx.send(err_frame("Invalid Subject"));
                        continue;
                    }
                },
                ClientOp::Unsub { sid, max } => server.unsubscribe(id, sid, max),
                ClientOp::Ping => {
                    let _ = tx.send(Bytes::from_static(proto::PONG));
                    continue;
                }
                ClientOp::Pong => continue,
            }
            if verbose {
                let _ = tx.send(Bytes::from_static(b"+OK\r\n"));
            }
        }
        tokio::select! {
            read = rd.read_buf(&mut buf) => match read {
                Ok(0) | Err(_) => break,
                Ok(_) => {}
            },
            changed = shutdown.changed() => {
                if changed.is_err() || *shutdown.borrow() {
                    killed = true;
                    break;
                }
            }
        }
    }
    server.disconnect(id);
    drop(tx);
    if killed {
        writer.abort();
    }
    let _ = writer.await;
}

async fn write_loop(wr: tokio::net::tcp::OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Bytes>) {
    let mut wr = BufWriter::new(wr);
    while let Some(frame) = rx.recv().await {
        if wr.write_all(&frame).await.is_err() {
            return;
        }
        while let Ok(frame) = rx.try_recv() {
            if wr.write_all(&frame).await.is_err() {
                return;
            }
        }
        if wr.flush().await.is_err() {
            return;
        }
    }
    let _ = wr.shutdown().await;
}
