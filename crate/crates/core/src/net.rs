//! Framed request/response transport over TCP.
//!
//! Services accept connections on a listener thread and run one thread per
//! connection. Each inbound frame yields exactly one reply frame; per-request
//! failures become `ErrorReply` frames and the connection stays open.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::codec::{self, CodecError, Entity, EntityKind, ErrorCode, ErrorReply, FrameError, DEFAULT_MAX_PAYLOAD};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const IO_TIMEOUT: Duration = Duration::from_secs(15);
const IDLE_POLL: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot reach {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("transport error: {0}")]
    Frame(#[from] FrameError),
    #[error("encoding error: {0}")]
    Codec(#[from] CodecError),
    #[error("peer closed the connection")]
    Closed,
    #[error("remote error: {0}")]
    Remote(ErrorReply),
    #[error("unexpected reply kind {0}")]
    UnexpectedKind(EntityKind),
}

/// One reply frame.
#[derive(Debug, Clone)]
pub struct Reply {
    pub kind: EntityKind,
    pub payload: Vec<u8>,
}

impl Reply {
    pub fn entity<E: Entity>(e: &E) -> Reply {
        match e.encode() {
            Ok(payload) => Reply { kind: E::KIND, payload },
            Err(err) => Reply::error(ErrorCode::Internal, format!("encoding reply: {err}")),
        }
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Reply {
        let reply = ErrorReply::new(code, detail);
        Reply {
            kind: EntityKind::ErrorReply,
            payload: reply.encode().expect("error replies always encode"),
        }
    }
}

pub trait Handler: Send + Sync + 'static {
    fn handle(&self, kind: EntityKind, payload: &[u8]) -> Reply;

    /// Frame sent as soon as a connection is accepted, before any request.
    fn greeting(&self) -> Option<Reply> {
        None
    }
}

/// A running service; dropping it stops the listener.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the listener thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(500));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

pub fn bind(addr: &str) -> io::Result<TcpListener> {
    TcpListener::bind(addr)
}

pub fn spawn_service(
    listener: TcpListener,
    handler: Arc<dyn Handler>,
    max_payload: usize,
) -> io::Result<ServiceHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_accept = Arc::clone(&stop);
    let thread = thread::Builder::new()
        .name(format!("wpki-accept-{}", addr.port()))
        .spawn(move || {
            for conn in listener.incoming() {
                if stop_accept.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let handler = Arc::clone(&handler);
                        let stop = Arc::clone(&stop_accept);
                        let spawned = thread::Builder::new()
                            .name("wpki-conn".into())
                            .spawn(move || serve_connection(stream, handler.as_ref(), &stop, max_payload));
                        if let Err(e) = spawned {
                            warn!("cannot spawn connection thread: {e}");
                        }
                    }
                    Err(e) => warn!("accept failed on {addr}: {e}"),
                }
            }
        })?;
    Ok(ServiceHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn send(stream: &mut TcpStream, reply: &Reply) -> Result<(), FrameError> {
    codec::write_frame(stream, reply.kind, &reply.payload).map(|_| ())
}

fn serve_connection(mut stream: TcpStream, handler: &dyn Handler, stop: &AtomicBool, max_payload: usize) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let _ = stream.set_nodelay(true);
    let _ = stream.set_write_timeout(Some(IO_TIMEOUT));
    if let Some(g) = handler.greeting() {
        if send(&mut stream, &g).is_err() {
            return;
        }
    }
    let mut probe = [0u8; 1];
    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        // wait for the first byte of the next frame without consuming it
        let _ = stream.set_read_timeout(Some(IDLE_POLL));
        match stream.peek(&mut probe) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
        let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
        let reply = match codec::read_frame(&mut stream, max_payload) {
            Ok(None) => break,
            Ok(Some((kind, payload))) => handler.handle(kind, &payload),
            Err(FrameError::UnknownKind(k)) => Reply::error(ErrorCode::UnknownKind, format!("kind {k:#04x}")),
            Err(e @ (FrameError::PayloadTooLarge { .. } | FrameError::Empty)) => {
                // the stream cannot be resynchronised after a bad length
                let _ = send(&mut stream, &Reply::error(ErrorCode::Malformed, e.to_string()));
                break;
            }
            Err(e) => {
                debug!("connection from {peer} ended: {e}");
                break;
            }
        };
        if send(&mut stream, &reply).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// One frame observed on a [`Channel`], measured as encoded frame length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRecord {
    pub direction: Direction,
    pub kind: EntityKind,
    pub bytes: usize,
}

/// Client side of a framed connection that logs every frame it moves.
pub struct Channel {
    stream: TcpStream,
    label: String,
    max_payload: usize,
    log: Vec<FrameRecord>,
}

impl Channel {
    pub fn connect(addr: &str, label: impl Into<String>) -> Result<Channel, NetError> {
        let err = |source| NetError::Connect {
            addr: addr.to_owned(),
            source,
        };
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address did not resolve");
        for sa in addr.to_socket_addrs().map_err(err)? {
            match TcpStream::connect_timeout(&sa, CONNECT_TIMEOUT) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(err)?;
                    stream.set_write_timeout(Some(IO_TIMEOUT)).map_err(err)?;
                    let _ = stream.set_nodelay(true);
                    return Ok(Channel {
                        stream,
                        label: label.into(),
                        max_payload: DEFAULT_MAX_PAYLOAD,
                        log: Vec::new(),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(err(last))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn log(&self) -> &[FrameRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<FrameRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn send_raw(&mut self, kind: EntityKind, payload: &[u8]) -> Result<(), NetError> {
        let n = codec::write_frame(&mut self.stream, kind, payload)?;
        self.log.push(FrameRecord {
            direction: Direction::Sent,
            kind,
            bytes: n,
        });
        Ok(())
    }

    pub fn send<E: Entity>(&mut self, e: &E) -> Result<(), NetError> {
        let payload = e.encode()?;
        self.send_raw(E::KIND, &payload)
    }

    pub fn recv_raw(&mut self) -> Result<(EntityKind, Vec<u8>), NetError> {
        match codec::read_frame(&mut self.stream, self.max_payload)? {
            Some((kind, payload)) => {
                self.log.push(FrameRecord {
                    direction: Direction::Received,
                    kind,
                    bytes: payload.len() + 5,
                });
                Ok((kind, payload))
            }
            None => Err(NetError::Closed),
        }
    }

    /// Receives one frame and decodes it as `R`; an `ErrorReply` becomes `NetError::Remote`.
    pub fn recv<R: Entity>(&mut self) -> Result<R, NetError> {
        let (kind, payload) = self.recv_raw()?;
        decode_reply(kind, &payload)
    }

    pub fn call<E: Entity, R: Entity>(&mut self, req: &E) -> Result<R, NetError> {
        self.send(req)?;
        self.recv()
    }
}

pub fn decode_reply<R: Entity>(kind: EntityKind, payload: &[u8]) -> Result<R, NetError> {
    if kind == R::KIND {
        return Ok(R::decode(payload)?);
    }
    if kind == EntityKind::ErrorReply {
        return Err(NetError::Remote(ErrorReply::decode(payload)?));
    }
    Err(NetError::UnexpectedKind(kind))
}

/// Decodes a request payload, mapping failures to a `malformed` reply.
pub fn decode_request<E: Entity>(payload: &[u8]) -> Result<E, Reply> {
    E::decode(payload).map_err(|e| Reply::error(ErrorCode::Malformed, e.to_string()))
}
