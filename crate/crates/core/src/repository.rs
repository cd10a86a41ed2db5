//! The certificate directory: one immutable file per certificate, addressed by
//! a `wpki://host:port/certs/<serial>` URL, plus the latest published CRL.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use log::info;
use thiserror::Error;

use crate::authority::RevocationList;
use crate::codec::{self, tag, CodecError, Entity, EntityKind, ErrorCode, Fields, TlvWriter};
use crate::crypto::PublicKeyInfo;
use crate::enrollment::CertificateResponse;
use crate::fsutil;
use crate::net::{self, Channel, Handler, NetError, Reply, ServiceHandle};
use crate::profiles::{self, WirelessCertificate};

pub const DEFAULT_PORT: u16 = 7002;
pub const URL_SCHEME: &str = "wpki";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RepositoryError {
    #[error("serial {0} is already stored")]
    DuplicateSerial(u64),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("not found")]
    NotFound,
    #[error("stored object is corrupt: {0}")]
    Malformed(String),
    #[error("bad certificate url: {0}")]
    BadUrl(String),
    #[error("signature does not verify under the CA key")]
    BadSignature,
    #[error("no CRL has been published yet")]
    NoCrlYet,
    #[error("certificate is not conformant: {0}")]
    NonConformant(String),
    #[error("repository unavailable: {0}")]
    Unavailable(String),
}

impl RepositoryError {
    pub fn code(&self) -> ErrorCode {
        match self {
            RepositoryError::DuplicateSerial(_) => ErrorCode::DuplicateSerial,
            RepositoryError::StorageFailure(_) => ErrorCode::Internal,
            RepositoryError::NotFound => ErrorCode::NotFound,
            RepositoryError::Malformed(_) => ErrorCode::Malformed,
            RepositoryError::BadUrl(_) => ErrorCode::BadUrl,
            RepositoryError::BadSignature => ErrorCode::BadSignature,
            RepositoryError::NoCrlYet => ErrorCode::NoCrlYet,
            RepositoryError::NonConformant(_) => ErrorCode::NonConformant,
            RepositoryError::Unavailable(_) => ErrorCode::RepositoryUnavailable,
        }
    }

    fn from_reply(reply: &codec::ErrorReply) -> Self {
        let detail = reply.detail.clone().unwrap_or_default();
        match reply.code {
            ErrorCode::DuplicateSerial => RepositoryError::DuplicateSerial(detail.parse().unwrap_or_default()),
            ErrorCode::NotFound => RepositoryError::NotFound,
            ErrorCode::Malformed => RepositoryError::Malformed(detail),
            ErrorCode::BadUrl => RepositoryError::BadUrl(detail),
            ErrorCode::BadSignature => RepositoryError::BadSignature,
            ErrorCode::NoCrlYet => RepositoryError::NoCrlYet,
            ErrorCode::NonConformant => RepositoryError::NonConformant(detail),
            _ => RepositoryError::StorageFailure(format!("{}: {detail}", reply.code)),
        }
    }
}

/// `wpki://<host>:<port>/certs/<serial>`
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CertUrl {
    pub host: String,
    pub port: u16,
    pub serial: u64,
}

impl CertUrl {
    pub fn new(host: impl Into<String>, port: u16, serial: u64) -> Self {
        CertUrl {
            host: host.into(),
            port,
            serial,
        }
    }

    pub fn authority(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl fmt::Display for CertUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{URL_SCHEME}://{}:{}/certs/{}", self.host, self.port, self.serial)
    }
}

fn all_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

impl FromStr for CertUrl {
    type Err = RepositoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RepositoryError::BadUrl(s.to_owned());
        let rest = s.strip_prefix("wpki://").ok_or_else(bad)?;
        let (authority, path) = rest.split_once('/').ok_or_else(bad)?;
        let (host, port) = authority.rsplit_once(':').ok_or_else(bad)?;
        if host.is_empty()
            || !host
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-')
        {
            return Err(bad());
        }
        if !all_digits(port) {
            return Err(bad());
        }
        let serial = path.strip_prefix("certs/").ok_or_else(bad)?;
        if !all_digits(serial) {
            return Err(bad());
        }
        Ok(CertUrl {
            host: host.to_owned(),
            port: port.parse().map_err(|_| bad())?,
            serial: serial.parse().map_err(|_| bad())?,
        })
    }
}

/// What a repository client asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchCommand {
    Certificate {
        serial: u64,
    },
    /// The most recent CRL signed by `issuer`.
    LatestCrl {
        issuer: String,
    },
}

impl FetchCommand {
    pub fn certificate(serial: u64) -> Self {
        FetchCommand::Certificate { serial }
    }
}

impl Entity for FetchCommand {
    const KIND: EntityKind = EntityKind::FetchCommand;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        match self {
            FetchCommand::Certificate { serial } => w.put_u64(tag::SERIAL, *serial),
            FetchCommand::LatestCrl { issuer } => w.put_text(tag::ISSUER, issuer),
        }
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let serial = f
            .take(tag::SERIAL)
            .map(|v| codec::read_u64(tag::SERIAL, v))
            .transpose()?;
        let issuer = f
            .take(tag::ISSUER)
            .map(|v| codec::read_text(tag::ISSUER, v))
            .transpose()?;
        match (serial, issuer) {
            (Some(serial), None) => Ok(FetchCommand::Certificate { serial }),
            (None, Some(issuer)) => Ok(FetchCommand::LatestCrl { issuer }),
            _ => Err(CodecError::malformed(
                "fetch command needs exactly one of serial, issuer",
            )),
        }
    }
}

/// Storage operations shared by the local store and its network client.
pub trait Directory: Send + Sync {
    fn store_certificate(&self, cert: &WirelessCertificate) -> Result<CertUrl, RepositoryError>;
    fn fetch_certificate(&self, url: &CertUrl) -> Result<WirelessCertificate, RepositoryError>;
    fn publish_crl(&self, crl: &RevocationList) -> Result<(), RepositoryError>;
    fn fetch_latest_crl(&self) -> Result<RevocationList, RepositoryError>;
}

/// File-backed directory under `<state>/repo`.
pub struct Repository {
    certs: PathBuf,
    crl: PathBuf,
    ca_name: String,
    ca_key: PublicKeyInfo,
    host: String,
    port: u16,
    publish: Mutex<()>,
}

fn storage(e: io::Error) -> RepositoryError {
    RepositoryError::StorageFailure(e.to_string())
}

impl Repository {
    /// `ca_cert` fixes the only key whose certificates and CRLs are accepted.
    pub fn open(
        state_dir: &Path,
        ca_cert: &WirelessCertificate,
        host: &str,
        port: u16,
    ) -> Result<Self, RepositoryError> {
        let root = state_dir.join("repo");
        let certs = root.join("certs");
        let crl_dir = root.join("crl");
        fs::create_dir_all(&certs).map_err(storage)?;
        fs::create_dir_all(&crl_dir).map_err(storage)?;
        Ok(Repository {
            certs,
            crl: crl_dir.join("latest"),
            ca_name: ca_cert.subject.clone(),
            ca_key: ca_cert.public_key_info.clone(),
            host: host.to_owned(),
            port,
            publish: Mutex::new(()),
        })
    }

    pub fn ca_name(&self) -> &str {
        &self.ca_name
    }

    pub fn url_for(&self, serial: u64) -> CertUrl {
        CertUrl::new(self.host.clone(), self.port, serial)
    }

    /// Stored bytes exactly as written.
    pub fn certificate_bytes(&self, serial: u64) -> Result<Vec<u8>, RepositoryError> {
        match fs::read(self.certs.join(serial.to_string())) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(RepositoryError::NotFound),
            Err(e) => Err(storage(e)),
        }
    }

    pub fn crl_bytes(&self) -> Result<Vec<u8>, RepositoryError> {
        match fs::read(&self.crl) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(RepositoryError::NoCrlYet),
            Err(e) => Err(storage(e)),
        }
    }
}

impl Directory for Repository {
    fn store_certificate(&self, cert: &WirelessCertificate) -> Result<CertUrl, RepositoryError> {
        if !cert.verify_signature(&self.ca_key) {
            return Err(RepositoryError::BadSignature);
        }
        let report = profiles::check_generation(cert);
        if !report.is_conformant() {
            return Err(RepositoryError::NonConformant(report.to_string()));
        }
        let bytes = cert.encode().map_err(|e| RepositoryError::Malformed(e.to_string()))?;
        match fsutil::write_new_atomic(&self.certs.join(cert.serial.to_string()), &bytes) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(RepositoryError::DuplicateSerial(cert.serial))
            }
            Err(e) => return Err(storage(e)),
        }
        info!("stored certificate {} for {}", cert.serial, cert.subject);
        Ok(self.url_for(cert.serial))
    }

    fn fetch_certificate(&self, url: &CertUrl) -> Result<WirelessCertificate, RepositoryError> {
        let bytes = self.certificate_bytes(url.serial)?;
        WirelessCertificate::decode(&bytes).map_err(|e| RepositoryError::Malformed(e.to_string()))
    }

    fn publish_crl(&self, crl: &RevocationList) -> Result<(), RepositoryError> {
        if !crl.verify_signature(&self.ca_key) {
            return Err(RepositoryError::BadSignature);
        }
        let bytes = crl.encode().map_err(|e| RepositoryError::Malformed(e.to_string()))?;
        let _guard = self.publish.lock().unwrap_or_else(|p| p.into_inner());
        fsutil::write_atomic(&self.crl, &bytes).map_err(storage)?;
        info!(
            "published CRL this_update={} with {} entries",
            crl.this_update,
            crl.entries.len()
        );
        Ok(())
    }

    fn fetch_latest_crl(&self) -> Result<RevocationList, RepositoryError> {
        RevocationList::decode(&self.crl_bytes()?).map_err(|e| RepositoryError::Malformed(e.to_string()))
    }
}

fn error_reply(e: &RepositoryError) -> Reply {
    let detail = match e {
        RepositoryError::DuplicateSerial(s) => s.to_string(),
        other => other.to_string(),
    };
    Reply::error(e.code(), detail)
}

struct RepositoryService(Arc<Repository>);

impl Handler for RepositoryService {
    fn handle(&self, kind: EntityKind, payload: &[u8]) -> Reply {
        let repo = &self.0;
        match kind {
            EntityKind::FetchCommand => match net::decode_request::<FetchCommand>(payload) {
                Err(r) => r,
                Ok(FetchCommand::Certificate { serial }) => match repo.certificate_bytes(serial) {
                    Ok(bytes) => Reply {
                        kind: EntityKind::WirelessCertificate,
                        payload: bytes,
                    },
                    Err(e) => error_reply(&e),
                },
                Ok(FetchCommand::LatestCrl { issuer }) if issuer != repo.ca_name => {
                    error_reply(&RepositoryError::NotFound)
                }
                Ok(FetchCommand::LatestCrl { .. }) => match repo.crl_bytes() {
                    Ok(bytes) => Reply {
                        kind: EntityKind::RevocationList,
                        payload: bytes,
                    },
                    Err(e) => error_reply(&e),
                },
            },
            EntityKind::WirelessCertificate => match net::decode_request::<WirelessCertificate>(payload) {
                Err(r) => r,
                Ok(cert) => match repo.store_certificate(&cert) {
                    Ok(cert_url) => Reply::entity(&CertificateResponse {
                        certificate: cert,
                        cert_url,
                    }),
                    Err(e) => error_reply(&e),
                },
            },
            EntityKind::RevocationList => match net::decode_request::<RevocationList>(payload) {
                Err(r) => r,
                Ok(crl) => match repo.publish_crl(&crl) {
                    Ok(()) => Reply {
                        kind: EntityKind::RevocationList,
                        payload: payload.to_vec(),
                    },
                    Err(e) => error_reply(&e),
                },
            },
            other => Reply::error(ErrorCode::UnexpectedKind, format!("repository does not accept {other}")),
        }
    }
}

/// Serves `repo` on `listener`. The repository's advertised host and port should match the listener.
pub fn serve(listener: std::net::TcpListener, repo: Arc<Repository>) -> io::Result<ServiceHandle> {
    net::spawn_service(listener, Arc::new(RepositoryService(repo)), codec::DEFAULT_MAX_PAYLOAD)
}

/// A [`Directory`] reached over the network. Each call uses a fresh connection.
#[derive(Debug, Clone)]
pub struct RemoteDirectory {
    addr: String,
    ca_name: String,
}

impl RemoteDirectory {
    pub fn new(addr: impl Into<String>, ca_name: impl Into<String>) -> Self {
        RemoteDirectory {
            addr: addr.into(),
            ca_name: ca_name.into(),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn call<E: Entity, R: Entity>(&self, req: &E) -> Result<R, RepositoryError> {
        let mut ch = Channel::connect(&self.addr, "repository").map_err(unavailable)?;
        ch.call(req).map_err(|e| match e {
            NetError::Remote(reply) => RepositoryError::from_reply(&reply),
            NetError::Codec(c) => RepositoryError::Malformed(c.to_string()),
            other => unavailable(other),
        })
    }
}

fn unavailable(e: NetError) -> RepositoryError {
    RepositoryError::Unavailable(e.to_string())
}

impl Directory for RemoteDirectory {
    fn store_certificate(&self, cert: &WirelessCertificate) -> Result<CertUrl, RepositoryError> {
        let resp: CertificateResponse = self.call(cert)?;
        Ok(resp.cert_url)
    }

    fn fetch_certificate(&self, url: &CertUrl) -> Result<WirelessCertificate, RepositoryError> {
        self.call(&FetchCommand::certificate(url.serial))
    }

    fn publish_crl(&self, crl: &RevocationList) -> Result<(), RepositoryError> {
        let _: RevocationList = self.call(crl)?;
        Ok(())
    }

    fn fetch_latest_crl(&self) -> Result<RevocationList, RepositoryError> {
        self.call(&FetchCommand::LatestCrl {
            issuer: self.ca_name.clone(),
        })
    }
}
