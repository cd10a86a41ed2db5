//! The constrained device: enrollment against the CA and the validated
//! transaction with a server peer, with every frame counted.
//!
//! During a transaction the device never downloads a CRL and never sends its
//! certificate; it forwards the peer's certificate to the responder and hands
//! the peer its certificate URL.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use log::{debug, info};
use thiserror::Error;

use crate::codec::{self, Entity, EntityKind, ErrorCode, ErrorReply};
use crate::crypto::{self, CryptoError, CurveId, PublicKeyInfo};
use crate::enrollment::{self, CertificateResponse, ClientState, Credentials, EnrollmentError, StateError};
use crate::net::{self, Channel, Direction, FrameRecord, Handler, NetError, Reply, ServiceHandle};
use crate::ocsp::{client_validate, CertStatus, RejectReason, StatusRequest, StatusResponse, StatusTarget};
use crate::profiles::{ShortLivedCertificate, WirelessCertificate};
use crate::time::Clock;

pub const DEFAULT_PEER_PORT: u16 = 7004;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("CA unreachable: {0}")]
    CaUnreachable(NetError),
    #[error("peer unreachable: {0}")]
    PeerUnreachable(NetError),
    #[error("responder unreachable: {0}")]
    OcspUnreachable(NetError),
    #[error("{peer} refused: {reply}")]
    Refused { peer: String, reply: ErrorReply },
    #[error("protocol error with {peer}: {detail}")]
    Protocol { peer: String, detail: String },
    #[error("enrollment failed: {0}")]
    Enrollment(#[from] EnrollmentError),
    #[error("status response rejected: {0}")]
    ValidationFailed(RejectReason),
    #[error("client state: {0}")]
    State(#[from] StateError),
    #[error("key generation: {0}")]
    Crypto(#[from] CryptoError),
}

fn classify(peer: &str, e: NetError, unreachable: fn(NetError) -> ClientError) -> ClientError {
    match e {
        NetError::Remote(reply) => ClientError::Refused {
            peer: peer.to_owned(),
            reply,
        },
        NetError::UnexpectedKind(k) => ClientError::Protocol {
            peer: peer.to_owned(),
            detail: format!("unexpected {k} frame"),
        },
        NetError::Codec(c) => ClientError::Protocol {
            peer: peer.to_owned(),
            detail: c.to_string(),
        },
        other => unreachable(other),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeerTraffic {
    pub sent_bytes: u64,
    pub received_bytes: u64,
}

/// Framing-layer byte accounting for one device.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficReport {
    pub peers: BTreeMap<String, PeerTraffic>,
    /// Bytes of `RevocationList` frames received.
    pub received_crl_bytes: u64,
    pub persisted_bytes: u64,
    /// Kinds of every frame the device sent, per peer label, in order.
    pub sent_kinds: BTreeMap<String, Vec<EntityKind>>,
}

impl TrafficReport {
    pub fn absorb(&mut self, label: &str, log: &[FrameRecord]) {
        let peer = self.peers.entry(label.to_owned()).or_default();
        for r in log {
            match r.direction {
                Direction::Sent => {
                    peer.sent_bytes += r.bytes as u64;
                    self.sent_kinds.entry(label.to_owned()).or_default().push(r.kind);
                }
                Direction::Received => {
                    peer.received_bytes += r.bytes as u64;
                    if r.kind == EntityKind::RevocationList {
                        self.received_crl_bytes += r.bytes as u64;
                    }
                }
            }
        }
    }

    fn absorb_channel(&mut self, ch: &mut Channel) {
        let label = ch.label().to_owned();
        let log = ch.take_log();
        self.absorb(&label, &log);
    }

    pub fn merge(&mut self, other: &TrafficReport) {
        for (label, t) in &other.peers {
            let p = self.peers.entry(label.clone()).or_default();
            p.sent_bytes += t.sent_bytes;
            p.received_bytes += t.received_bytes;
        }
        for (label, kinds) in &other.sent_kinds {
            self.sent_kinds.entry(label.clone()).or_default().extend(kinds);
        }
        self.received_crl_bytes += other.received_crl_bytes;
        self.persisted_bytes = self.persisted_bytes.max(other.persisted_bytes);
    }

    pub fn sent_to(&self, label: &str) -> u64 {
        self.peers.get(label).map_or(0, |p| p.sent_bytes)
    }

    pub fn received_from(&self, label: &str) -> u64 {
        self.peers.get(label).map_or(0, |p| p.received_bytes)
    }

    pub fn total_sent(&self) -> u64 {
        self.peers.values().map(|p| p.sent_bytes).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.peers.values().map(|p| p.received_bytes).sum()
    }

    /// Number of frames of `kind` the device sent to anyone.
    pub fn sent_count(&self, kind: EntityKind) -> usize {
        self.sent_kinds.values().flatten().filter(|&&k| k == kind).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (label, p) in &self.peers {
            let _ = writeln!(
                s,
                "  {label:<6} sent {:>6} B  received {:>6} B",
                p.sent_bytes, p.received_bytes
            );
        }
        let _ = writeln!(
            s,
            "  total  sent {:>6} B  received {:>6} B",
            self.total_sent(),
            self.total_received()
        );
        let _ = writeln!(s, "  received_crl_bytes={}", self.received_crl_bytes);
        let _ = writeln!(s, "  persisted_bytes={}", self.persisted_bytes);
        let _ = writeln!(
            s,
            "  certificate frames sent={}",
            self.sent_count(EntityKind::WirelessCertificate)
        );
        s
    }

    /// One `key=value` per line.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (label, p) in &self.peers {
            let _ = writeln!(s, "sent_bytes.{label}={}", p.sent_bytes);
            let _ = writeln!(s, "received_bytes.{label}={}", p.received_bytes);
        }
        let _ = writeln!(s, "received_crl_bytes={}", self.received_crl_bytes);
        let _ = writeln!(s, "persisted_bytes={}", self.persisted_bytes);
        let _ = writeln!(
            s,
            "sent_certificate_frames={}",
            self.sent_count(EntityKind::WirelessCertificate)
        );
        s
    }

    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        crate::fsutil::write_atomic(path, self.to_key_values().as_bytes())
    }
}

pub struct EnrollmentRun {
    pub result: Result<ClientState, ClientError>,
    pub report: TrafficReport,
}

/// Registration, credentials, key generation, request, response and
/// completion. The report is filled in even when a step fails.
///
/// `repo_addr` is the directory the certificate URL must point into. With
/// `state_path`, the resulting state is persisted there.
pub fn run_enrollment(
    ca_addr: &str,
    repo_addr: &str,
    curve: CurveId,
    device_id: &str,
    subject: &str,
    now: u64,
    state_path: Option<&Path>,
) -> EnrollmentRun {
    let mut report = TrafficReport::default();
    let result = enroll(
        ca_addr,
        repo_addr,
        curve,
        device_id,
        subject,
        now,
        state_path,
        &mut report,
    );
    EnrollmentRun { result, report }
}

#[allow(clippy::too_many_arguments)]
fn enroll(
    ca_addr: &str,
    repo_addr: &str,
    curve: CurveId,
    device_id: &str,
    subject: &str,
    now: u64,
    state_path: Option<&Path>,
    report: &mut TrafficReport,
) -> Result<ClientState, ClientError> {
    let registration = enrollment::client_begin_registration(device_id)?;
    let mut ch = Channel::connect(ca_addr, "ca").map_err(ClientError::CaUnreachable)?;
    let outcome = (|| {
        let creds: Credentials = ch
            .call(&registration)
            .map_err(|e| classify("ca", e, ClientError::CaUnreachable))?;
        let keypair = crypto::generate_keypair(curve)?;
        let request = enrollment::client_build_request(&creds, &keypair, subject)?;
        let resp: CertificateResponse = ch
            .call(&request)
            .map_err(|e| classify("ca", e, ClientError::CaUnreachable))?;
        let state = enrollment::client_complete(&resp, &keypair, &creds, now)?;
        if state.cert_url.authority() != repo_addr {
            return Err(ClientError::Protocol {
                peer: "ca".into(),
                detail: format!(
                    "certificate url {} is outside the directory {repo_addr}",
                    state.cert_url
                ),
            });
        }
        Ok(state)
    })();
    report.absorb_channel(&mut ch);
    let state = outcome?;
    report.persisted_bytes = match state_path {
        Some(p) => state.save(p)? as u64,
        None => state.to_bytes().len() as u64,
    };
    info!("enrolled {subject:?} as {}", state.cert_url);
    Ok(state)
}

/// What a device learns from one transaction.
#[derive(Debug, Clone)]
pub struct TransactionOutcome {
    pub peer_subject: String,
    pub peer_status: CertStatus,
    /// True only when the peer's status is good.
    pub proceeded: bool,
    /// The device's own status as the peer's responder reported it, when asked.
    pub own_status: Option<CertStatus>,
    pub report: TrafficReport,
}

pub struct TransactionParams<'a> {
    pub peer_addr: &'a str,
    pub ocsp_addr: &'a str,
    pub responder_key: &'a PublicKeyInfo,
    pub freshness_s: u64,
    pub clock: &'a dyn Clock,
}

fn peer_target(kind: EntityKind, payload: &[u8]) -> Result<(String, StatusTarget), ClientError> {
    let proto = |detail: String| ClientError::Protocol {
        peer: "peer".into(),
        detail,
    };
    match kind {
        EntityKind::WirelessCertificate => {
            let c = WirelessCertificate::decode(payload).map_err(|e| proto(e.to_string()))?;
            Ok((c.subject.clone(), StatusTarget::Certificate(c)))
        }
        EntityKind::ShortLivedCertificate => {
            let c = ShortLivedCertificate::decode(payload).map_err(|e| proto(e.to_string()))?;
            Ok((c.subject.clone(), StatusTarget::ShortLived(c)))
        }
        other => Err(proto(format!("peer presented {other}"))),
    }
}

/// Receives the peer's certificate, has the responder validate it, and if it
/// is good gives the peer this device's certificate URL.
pub fn run_transaction(state: &ClientState, params: &TransactionParams<'_>) -> Result<TransactionOutcome, ClientError> {
    let mut report = TrafficReport::default();
    let mut peer = Channel::connect(params.peer_addr, "peer").map_err(ClientError::PeerUnreachable)?;
    let greeting = peer.recv_raw().map_err(ClientError::PeerUnreachable);
    report.absorb_channel(&mut peer);
    let (peer_subject, target) = {
        let (kind, payload) = greeting?;
        peer_target(kind, &payload)?
    };

    let mut ocsp = Channel::connect(params.ocsp_addr, "ocsp").map_err(ClientError::OcspUnreachable)?;
    let request = StatusRequest::new(target);
    let resp = ocsp.call::<_, StatusResponse>(&request);
    report.absorb_channel(&mut ocsp);
    let resp = resp.map_err(|e| classify("ocsp", e, ClientError::OcspUnreachable))?;

    let v = client_validate(
        &resp,
        &request.nonce,
        params.responder_key,
        params.clock.now(),
        params.freshness_s,
    );
    let proceeded = v.accepted;
    match v.reason {
        None | Some(RejectReason::NotGood(_)) => {}
        Some(reason) => return Err(ClientError::ValidationFailed(reason)),
    }
    debug!("peer {peer_subject:?} is {}", resp.status);

    let mut own_status = None;
    if proceeded {
        let own = StatusRequest::new(StatusTarget::Url(state.cert_url.clone()));
        let reply = peer.call::<_, StatusResponse>(&own);
        report.absorb_channel(&mut peer);
        own_status = Some(
            reply
                .map_err(|e| classify("peer", e, ClientError::PeerUnreachable))?
                .status,
        );
    }
    Ok(TransactionOutcome {
        peer_subject,
        peer_status: resp.status,
        proceeded,
        own_status,
        report,
    })
}

/// The certificate a scripted peer presents on connect.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum PeerCredential {
    Wireless(WirelessCertificate),
    ShortLived(ShortLivedCertificate),
}

impl PeerCredential {
    pub fn subject(&self) -> &str {
        match self {
            PeerCredential::Wireless(c) => &c.subject,
            PeerCredential::ShortLived(c) => &c.subject,
        }
    }

    fn to_reply(&self) -> Reply {
        match self {
            PeerCredential::Wireless(c) => Reply::entity(c),
            PeerCredential::ShortLived(c) => Reply::entity(c),
        }
    }
}

/// A server that presents a certificate and validates clients by URL through the responder.
pub struct Peer {
    credential: Mutex<PeerCredential>,
    ocsp_addr: String,
    responder_key: PublicKeyInfo,
    freshness_s: u64,
    clock: Arc<dyn Clock>,
    received: Mutex<Vec<EntityKind>>,
}

impl Peer {
    pub fn new(
        credential: PeerCredential,
        ocsp_addr: &str,
        responder_key: PublicKeyInfo,
        freshness_s: u64,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Peer {
            credential: Mutex::new(credential),
            ocsp_addr: ocsp_addr.to_owned(),
            responder_key,
            freshness_s,
            clock,
            received: Mutex::new(Vec::new()),
        }
    }

    pub fn set_credential(&self, credential: PeerCredential) {
        *self.credential.lock().unwrap_or_else(|p| p.into_inner()) = credential;
    }

    /// Kinds of every frame clients have sent this peer.
    pub fn received_kinds(&self) -> Vec<EntityKind> {
        self.received.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn validate_client(&self, req: &StatusRequest) -> Reply {
        let StatusTarget::Url(url) = &req.target else {
            return Reply::error(ErrorCode::UnexpectedKind, "send a certificate url");
        };
        let mut ch = match Channel::connect(&self.ocsp_addr, "ocsp") {
            Ok(ch) => ch,
            Err(e) => return Reply::error(ErrorCode::Internal, format!("responder unreachable: {e}")),
        };
        let forwarded = StatusRequest::new(StatusTarget::Url(url.clone()));
        match ch.call::<_, StatusResponse>(&forwarded) {
            Ok(resp) => {
                let v = client_validate(
                    &resp,
                    &forwarded.nonce,
                    &self.responder_key,
                    self.clock.now(),
                    self.freshness_s,
                );
                match v.reason {
                    None | Some(RejectReason::NotGood(_)) => Reply::entity(&resp),
                    Some(r) => Reply::error(ErrorCode::Internal, format!("responder reply rejected: {r}")),
                }
            }
            Err(NetError::Remote(e)) => Reply::error(e.code, e.detail.unwrap_or_default()),
            Err(e) => Reply::error(ErrorCode::Internal, e.to_string()),
        }
    }
}

struct PeerService(Arc<Peer>);

impl Handler for PeerService {
    fn greeting(&self) -> Option<Reply> {
        Some(self.0.credential.lock().unwrap_or_else(|p| p.into_inner()).to_reply())
    }

    fn handle(&self, kind: EntityKind, payload: &[u8]) -> Reply {
        self.0.received.lock().unwrap_or_else(|p| p.into_inner()).push(kind);
        if kind != EntityKind::StatusRequest {
            return Reply::error(
                ErrorCode::UnexpectedKind,
                format!("peer expects a certificate url, got {kind}"),
            );
        }
        match net::decode_request::<StatusRequest>(payload) {
            Err(r) => r,
            Ok(req) => self.0.validate_client(&req),
        }
    }
}

pub fn serve_peer(listener: std::net::TcpListener, peer: Arc<Peer>) -> io::Result<ServiceHandle> {
    net::spawn_service(listener, Arc::new(PeerService(peer)), codec::DEFAULT_MAX_PAYLOAD)
}
