//! Delegated validation. A responder certified by the CA checks a certificate
//! (sent whole, or named by URL) against the CA key, its validity period, the
//! process rules of the profile and the latest CRL, and signs the verdict.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use log::{debug, info};
use thiserror::Error;

use crate::authority::RevocationList;
use crate::codec::{self, tag, CodecError, Entity, EntityKind, ErrorCode, Fields, TlvWriter};
use crate::crypto::{self, CurveId, KeyPair, PublicKeyInfo, SignatureAlgorithm, SignatureValue};
use crate::enrollment::read_cert_url;
use crate::fsutil;
use crate::net::{self, Handler, Reply, ServiceHandle};
use crate::profiles::{self, validate_period, ExtendedKeyUsage, ShortLivedCertificate, WirelessCertificate};
use crate::repository::{CertUrl, Directory, RepositoryError};
use crate::time::{Clock, SystemClock};

pub const DEFAULT_PORT: u16 = 7003;
pub const DEFAULT_FRESHNESS_S: u64 = 60;
pub const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum StatusTarget {
    Certificate(WirelessCertificate),
    ShortLived(ShortLivedCertificate),
    Url(CertUrl),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusRequest {
    pub target: StatusTarget,
    pub nonce: [u8; NONCE_LEN],
}

impl StatusRequest {
    /// A request with a fresh random nonce.
    pub fn new(target: StatusTarget) -> Self {
        StatusRequest {
            target,
            nonce: crypto::random_bytes(),
        }
    }
}

impl Entity for StatusRequest {
    const KIND: EntityKind = EntityKind::StatusRequest;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        match &self.target {
            StatusTarget::Certificate(c) => c.write_fields(w)?,
            StatusTarget::ShortLived(c) => c.write_fields(w)?,
            StatusTarget::Url(u) => w.put_text(tag::CERT_URL, &u.to_string())?,
        }
        w.put(tag::NONCE, &self.nonce)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let target = if f.has(tag::CERT_URL) {
            StatusTarget::Url(read_cert_url(f.require(tag::CERT_URL)?)?)
        } else if f.has(tag::PUBLIC_KEY_TYPE) {
            StatusTarget::ShortLived(ShortLivedCertificate::read_fields(f)?)
        } else {
            StatusTarget::Certificate(WirelessCertificate::read_fields(f)?)
        };
        let nonce = codec::read_array(tag::NONCE, f.require(tag::NONCE)?)?;
        Ok(StatusRequest { target, nonce })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CertStatus {
    Good = 0,
    Revoked = 1,
    Unknown = 2,
}

impl CertStatus {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CertStatus::Good),
            1 => Some(CertStatus::Revoked),
            2 => Some(CertStatus::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for CertStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertStatus::Good => "good",
            CertStatus::Revoked => "revoked",
            CertStatus::Unknown => "unknown",
        })
    }
}

/// Signed verdict. `failure_detail` is only allowed when the status is not good.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusResponse {
    pub status: CertStatus,
    pub serial: u64,
    pub produced_at: u64,
    pub nonce: [u8; NONCE_LEN],
    pub failure_detail: Option<String>,
    pub signature_algorithm: SignatureAlgorithm,
    pub signature: Vec<u8>,
}

impl StatusResponse {
    pub fn to_be_signed(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = TlvWriter::new();
        self.write(&mut w, false)?;
        Ok(w.finish())
    }

    pub fn verify_signature(&self, responder_key: &PublicKeyInfo) -> bool {
        let sig = SignatureValue {
            algorithm: self.signature_algorithm,
            bytes: self.signature.clone(),
        };
        match self.to_be_signed() {
            Ok(tbs) => crypto::verifies(&tbs, &sig, responder_key),
            Err(_) => false,
        }
    }

    fn write(&self, w: &mut TlvWriter, with_signature: bool) -> Result<(), CodecError> {
        if self.status == CertStatus::Good && self.failure_detail.is_some() {
            return Err(CodecError::invariant("good responses carry no failure detail"));
        }
        w.put_u64(tag::SERIAL, self.serial)?;
        w.put_u8(tag::SIGNATURE_ALGORITHM, self.signature_algorithm.code())?;
        if with_signature {
            if self.signature.is_empty() {
                return Err(CodecError::invariant("status response is unsigned"));
            }
            w.put(tag::SIGNATURE_VALUE, &self.signature)?;
        }
        w.put_u8(tag::STATUS_CODE, self.status as u8)?;
        w.put_u64(tag::PRODUCED_AT, self.produced_at)?;
        w.put(tag::NONCE, &self.nonce)?;
        if let Some(d) = &self.failure_detail {
            w.put_text(tag::DETAIL, d)?;
        }
        Ok(())
    }
}

impl Entity for StatusResponse {
    const KIND: EntityKind = EntityKind::StatusResponse;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.write(w, true)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let serial = codec::read_u64(tag::SERIAL, f.require(tag::SERIAL)?)?;
        let signature_algorithm = profiles::read_signature_algorithm(f.require(tag::SIGNATURE_ALGORITHM)?)?;
        let signature = profiles::read_signature_bytes(f.require(tag::SIGNATURE_VALUE)?)?;
        let code = codec::read_u8(tag::STATUS_CODE, f.require(tag::STATUS_CODE)?)?;
        let status = CertStatus::from_code(code).ok_or_else(|| CodecError::malformed(format!("status {code}")))?;
        let produced_at = codec::read_u64(tag::PRODUCED_AT, f.require(tag::PRODUCED_AT)?)?;
        let nonce = codec::read_array(tag::NONCE, f.require(tag::NONCE)?)?;
        let failure_detail = f
            .take(tag::DETAIL)
            .map(|v| codec::read_text(tag::DETAIL, v))
            .transpose()?;
        if status == CertStatus::Good && failure_detail.is_some() {
            return Err(CodecError::malformed("good response with failure detail"));
        }
        Ok(StatusResponse {
            status,
            serial,
            produced_at,
            nonce,
            failure_detail,
            signature_algorithm,
            signature,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadSignature,
    NonceMismatch,
    Stale,
    NotGood(CertStatus),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::BadSignature => f.write_str("bad-signature"),
            RejectReason::NonceMismatch => f.write_str("nonce-mismatch"),
            RejectReason::Stale => f.write_str("stale"),
            RejectReason::NotGood(s) => write!(f, "status-{s}"),
        }
    }
}

/// Client-side verdict on a status response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validation {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

impl Validation {
    fn reject(reason: RejectReason) -> Self {
        Validation {
            accepted: false,
            reason: Some(reason),
        }
    }
}

/// Accepts only a good, correctly signed response to this nonce produced within
/// `freshness_s` of `now` (either side).
pub fn client_validate(
    resp: &StatusResponse,
    expected_nonce: &[u8; NONCE_LEN],
    responder_key: &PublicKeyInfo,
    now: u64,
    freshness_s: u64,
) -> Validation {
    if !resp.verify_signature(responder_key) {
        return Validation::reject(RejectReason::BadSignature);
    }
    if &resp.nonce != expected_nonce {
        return Validation::reject(RejectReason::NonceMismatch);
    }
    if resp.produced_at.abs_diff(now) > freshness_s {
        return Validation::reject(RejectReason::Stale);
    }
    if resp.status != CertStatus::Good {
        return Validation::reject(RejectReason::NotGood(resp.status));
    }
    Validation {
        accepted: true,
        reason: None,
    }
}

#[derive(Debug, Error)]
pub enum OcspError {
    #[error("responder certificate unusable: {0}")]
    NotAuthorized(String),
    #[error("repository unreachable: {0}")]
    RepositoryUnreachable(String),
    #[error("no current CRL: {0}")]
    CrlUnavailable(String),
    #[error("signing failed: {0}")]
    SigningFailure(String),
}

impl OcspError {
    pub fn code(&self) -> ErrorCode {
        match self {
            OcspError::RepositoryUnreachable(_) => ErrorCode::RepositoryUnavailable,
            OcspError::CrlUnavailable(_) => ErrorCode::CrlUnavailable,
            OcspError::NotAuthorized(_) | OcspError::SigningFailure(_) => ErrorCode::Internal,
        }
    }
}

/// Status plus the detail that goes into the response.
pub type Verdict = (CertStatus, Option<String>);

fn unknown(detail: &str) -> Verdict {
    (CertStatus::Unknown, Some(detail.to_owned()))
}

pub struct Responder {
    ca_name: String,
    ca_key: PublicKeyInfo,
    key: KeyPair,
    cert: WirelessCertificate,
    directory: Arc<dyn Directory>,
    crl: RwLock<Option<Arc<RevocationList>>>,
    refresh: Mutex<()>,
    short_lived_max_s: u64,
    clock: Arc<dyn Clock>,
}

impl Responder {
    /// `cert` must be CA-signed, carry the ocspSigning purpose and certify `key`.
    pub fn new(
        ca_cert: &WirelessCertificate,
        key: KeyPair,
        cert: WirelessCertificate,
        directory: Arc<dyn Directory>,
        short_lived_max_s: u64,
    ) -> Result<Self, OcspError> {
        let ca_key = ca_cert.public_key_info.clone();
        if !cert.verify_signature(&ca_key) {
            return Err(OcspError::NotAuthorized("not signed by the CA".into()));
        }
        if !cert
            .extensions
            .extended_key_usage
            .is_some_and(|e| e.contains(ExtendedKeyUsage::OCSP_SIGNING))
        {
            return Err(OcspError::NotAuthorized("missing ocspSigning purpose".into()));
        }
        if &cert.public_key_info != key.public_key() {
            return Err(OcspError::NotAuthorized(
                "certificate does not match the responder key".into(),
            ));
        }
        Ok(Responder {
            ca_name: ca_cert.subject.clone(),
            ca_key,
            key,
            cert,
            directory,
            crl: RwLock::new(None),
            refresh: Mutex::new(()),
            short_lived_max_s,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn public_key(&self) -> &PublicKeyInfo {
        self.key.public_key()
    }

    pub fn certificate(&self) -> &WirelessCertificate {
        &self.cert
    }

    pub fn cached_crl(&self) -> Option<Arc<RevocationList>> {
        self.crl.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Replaces the cached CRL with the directory's latest, regardless of expiry.
    pub fn refresh_crl(&self) -> Result<Arc<RevocationList>, OcspError> {
        let _guard = self.refresh.lock().unwrap_or_else(|p| p.into_inner());
        self.fetch_crl()
    }

    fn fetch_crl(&self) -> Result<Arc<RevocationList>, OcspError> {
        let crl = self.directory.fetch_latest_crl().map_err(|e| match e {
            RepositoryError::Unavailable(m) => OcspError::CrlUnavailable(format!("repository unreachable: {m}")),
            other => OcspError::CrlUnavailable(other.to_string()),
        })?;
        if crl.issuer != self.ca_name || !crl.verify_signature(&self.ca_key) {
            return Err(OcspError::CrlUnavailable("CRL is not signed by the CA".into()));
        }
        let crl = Arc::new(crl);
        *self.crl.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::clone(&crl));
        info!(
            "CRL refreshed: this_update={} entries={}",
            crl.this_update,
            crl.entries.len()
        );
        Ok(crl)
    }

    /// Cached CRL, refetched once its `next_update` has passed.
    pub fn current_crl(&self, now: u64) -> Result<Arc<RevocationList>, OcspError> {
        if let Some(c) = self.cached_crl().filter(|c| c.next_update >= now) {
            return Ok(c);
        }
        let _guard = self.refresh.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(c) = self.cached_crl().filter(|c| c.next_update >= now) {
            return Ok(c);
        }
        let crl = self.fetch_crl()?;
        if crl.next_update < now {
            return Err(OcspError::CrlUnavailable(format!(
                "latest CRL expired at {}",
                crl.next_update
            )));
        }
        Ok(crl)
    }

    /// Status of a full certificate against a given CRL.
    pub fn evaluate_certificate(&self, cert: &WirelessCertificate, crl: &RevocationList, now: u64) -> Verdict {
        if !cert.verify_signature(&self.ca_key) {
            return unknown("bad-signature");
        }
        if !validate_period(cert, now) {
            return unknown("outside-validity-period");
        }
        let report = profiles::check_process(cert);
        if !report.is_conformant() {
            return unknown("non-conformant");
        }
        match crl.find(cert.serial) {
            Some(e) => (CertStatus::Revoked, Some(e.reason.name().to_owned())),
            None => (CertStatus::Good, None),
        }
    }

    pub fn evaluate_short_lived(&self, cert: &ShortLivedCertificate, now: u64) -> Verdict {
        if !cert.verify_signature(&self.ca_key) {
            return unknown("bad-signature");
        }
        if !validate_period(cert, now) {
            return unknown("outside-validity-period");
        }
        if cert.lifetime() > self.short_lived_max_s {
            return unknown("lifetime-too-long");
        }
        (CertStatus::Good, None)
    }

    pub fn respond(&self, req: &StatusRequest, now: u64) -> Result<StatusResponse, OcspError> {
        let (serial, (status, failure_detail)) = match &req.target {
            StatusTarget::ShortLived(c) => (0, self.evaluate_short_lived(c, now)),
            StatusTarget::Certificate(c) => (c.serial, self.evaluate_certificate(c, &*self.current_crl(now)?, now)),
            StatusTarget::Url(url) => match self.directory.fetch_certificate(url) {
                Ok(c) if c.serial != url.serial => (url.serial, unknown("serial-mismatch")),
                Ok(c) => (c.serial, self.evaluate_certificate(&c, &*self.current_crl(now)?, now)),
                Err(RepositoryError::NotFound) => (url.serial, unknown("not-found")),
                Err(RepositoryError::Unavailable(m)) => return Err(OcspError::RepositoryUnreachable(m)),
                Err(RepositoryError::Malformed(_)) => (url.serial, unknown("malformed")),
                Err(e) => (url.serial, (CertStatus::Unknown, Some(e.to_string()))),
            },
        };
        let mut resp = StatusResponse {
            status,
            serial,
            produced_at: now,
            nonce: req.nonce,
            failure_detail,
            signature_algorithm: SignatureAlgorithm::EcdsaSha256,
            signature: Vec::new(),
        };
        let tbs = resp
            .to_be_signed()
            .map_err(|e| OcspError::SigningFailure(e.to_string()))?;
        let sig = crypto::sign(&tbs, &self.key).map_err(|e| OcspError::SigningFailure(e.to_string()))?;
        resp.signature_algorithm = sig.algorithm;
        resp.signature = sig.bytes;
        debug!("serial {serial}: {status}");
        Ok(resp)
    }
}

struct ResponderService(Arc<Responder>);

impl Handler for ResponderService {
    fn handle(&self, kind: EntityKind, payload: &[u8]) -> Reply {
        if kind != EntityKind::StatusRequest {
            return Reply::error(ErrorCode::UnexpectedKind, format!("responder does not accept {kind}"));
        }
        match net::decode_request::<StatusRequest>(payload) {
            Err(r) => r,
            Ok(req) => match self.0.respond(&req, self.0.clock.now()) {
                Ok(resp) => Reply::entity(&resp),
                Err(e) => Reply::error(e.code(), e.to_string()),
            },
        }
    }
}

/// Writes `<root>/ocsp/key` (curve byte, scalar) and `<root>/ocsp/cert`.
pub fn save_credentials(root: &Path, key: &KeyPair, cert: &WirelessCertificate) -> io::Result<()> {
    let dir = root.join("ocsp");
    let mut key_file = vec![key.curve().code()];
    key_file.extend_from_slice(key.secret_bytes());
    let cert_bytes = cert
        .encode()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    fsutil::write_atomic(&dir.join("cert"), &cert_bytes)?;
    fsutil::write_atomic(&dir.join("key"), &key_file)
}

pub fn load_credentials(root: &Path) -> io::Result<(KeyPair, WirelessCertificate)> {
    let dir = root.join("ocsp");
    let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let key_bytes = fs::read(dir.join("key"))?;
    let (&curve, secret) = key_bytes
        .split_first()
        .ok_or_else(|| invalid("empty responder key".into()))?;
    let curve = CurveId::from_code(curve).map_err(|e| invalid(e.to_string()))?;
    let key = KeyPair::from_secret(curve, secret).map_err(|e| invalid(e.to_string()))?;
    let cert = WirelessCertificate::decode(&fs::read(dir.join("cert"))?).map_err(|e| invalid(e.to_string()))?;
    Ok((key, cert))
}

/// Just the responder certificate; what peers need to check responses.
pub fn load_certificate(root: &Path) -> io::Result<WirelessCertificate> {
    WirelessCertificate::decode(&fs::read(root.join("ocsp").join("cert"))?)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

pub fn serve(listener: std::net::TcpListener, responder: Arc<Responder>) -> io::Result<ServiceHandle> {
    net::spawn_service(
        listener,
        Arc::new(ResponderService(responder)),
        codec::DEFAULT_MAX_PAYLOAD,
    )
}
