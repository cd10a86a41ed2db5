//! Certification authority: key and self-signed certificate, registration
//! records, the issued-certificate ledger, revocation and CRL generation.
//!
//! State lives under `<state>/ca`:
//!
//! | file            | content                                          |
//! |-----------------|--------------------------------------------------|
//! | `key`           | curve byte, private scalar                       |
//! | `cert`          | encoded self-signed certificate                  |
//! | `admin`         | 32-byte key authenticating revoke commands       |
//! | `ledger`        | append-only `reserve` / `issue` / `revoke` lines |
//! | `registrations` | append-only `register` lines                     |
//!
//! Every ledger mutation goes through one writer lock and is synced before
//! the in-memory view changes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use log::{info, warn};
use thiserror::Error;

use crate::codec::{self, tag, CodecError, Entity, EntityKind, ErrorCode, Fields, TlvWriter};
use crate::crypto::{self, CurveId, KeyPair, MacKey, MacTag, PublicKeyInfo, SignatureAlgorithm};
use crate::enrollment::{self, CertificateRequest, EnrollmentError, RegistrationRequest};
use crate::fsutil::{self, from_hex, to_hex};
use crate::net::{self, Handler, Reply, ServiceHandle};
use crate::profiles::{
    self, build_certificate, build_short_lived, CaIdentity, CertificateTemplate, ExtendedKeyUsage, KeyUsage,
    ProfileError, ShortLivedCertificate, WirelessCertificate,
};
use crate::repository::{CertUrl, Directory};
use crate::time::{Clock, SystemClock};

pub const DEFAULT_PORT: u16 = 7001;
pub const DEFAULT_CRL_VALIDITY_S: u64 = 300;
pub const DEFAULT_CERT_LIFETIME_S: u64 = 365 * 86_400;
pub const CA_CERT_LIFETIME_S: u64 = 10 * 365 * 86_400;
pub const DEFAULT_POLICY: &str = "wpki-basic-assurance";
const REVOKED_ENTRY_BYTES: usize = 17;

#[derive(Debug, Error)]
pub enum AuthorityError {
    #[error("CA state is corrupt: {0}")]
    CorruptState(String),
    #[error("CA state not initialized at {0}")]
    NotInitialized(PathBuf),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("unknown serial {0}")]
    UnknownSerial(u64),
    #[error("serial {0} is already revoked")]
    AlreadyRevoked(u64),
    #[error("no open registration for reference {0:?}")]
    UnknownReference(String),
    #[error("signing failed: {0}")]
    SigningFailure(String),
    #[error("repository unavailable: {0}")]
    RepositoryUnavailable(String),
    #[error("template is not conformant: {0}")]
    NonConformant(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("interrupted by fail point")]
    Interrupted,
}

impl From<io::Error> for AuthorityError {
    fn from(e: io::Error) -> Self {
        AuthorityError::StorageFailure(e.to_string())
    }
}

impl From<ProfileError> for AuthorityError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::NonConformantTemplate(r) => AuthorityError::NonConformant(r.to_string()),
            ProfileError::SigningFailure(m) => AuthorityError::SigningFailure(m),
            other => AuthorityError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum RevocationReason {
    Unspecified = 0,
    KeyCompromise = 1,
    Superseded = 2,
}

impl RevocationReason {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RevocationReason::Unspecified),
            1 => Some(RevocationReason::KeyCompromise),
            2 => Some(RevocationReason::Superseded),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RevocationReason::Unspecified => "unspecified",
            RevocationReason::KeyCompromise => "keyCompromise",
            RevocationReason::Superseded => "superseded",
        }
    }
}

impl std::str::FromStr for RevocationReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "0" | "unspecified" => Ok(RevocationReason::Unspecified),
            "1" | "keyCompromise" | "key-compromise" => Ok(RevocationReason::KeyCompromise),
            "2" | "superseded" => Ok(RevocationReason::Superseded),
            other => Err(format!("unknown revocation reason {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRecord {
    pub username: String,
    /// Derived MAC key; the password itself is never stored.
    pub password_derivative: MacKey,
    pub random_code: String,
    pub device_id: String,
    pub consumed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedEntry {
    pub serial: u64,
    pub subject: String,
    /// `None` for certificates that were never placed in the directory.
    pub cert_url: Option<CertUrl>,
    pub revoked_at: Option<u64>,
    pub reason: Option<RevocationReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RevokedEntry {
    pub serial: u64,
    pub revoked_at: u64,
    pub reason: RevocationReason,
}

/// CA-signed list of revoked serials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevocationList {
    pub signature_algorithm: SignatureAlgorithm,
    pub issuer: String,
    pub this_update: u64,
    pub next_update: u64,
    /// Strictly ascending by serial.
    pub entries: Vec<RevokedEntry>,
    pub signature: Vec<u8>,
}

impl RevocationList {
    pub fn to_be_signed(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = TlvWriter::new();
        self.write(&mut w, false)?;
        Ok(w.finish())
    }

    pub fn verify_signature(&self, ca_key: &PublicKeyInfo) -> bool {
        let sig = crypto::SignatureValue {
            algorithm: self.signature_algorithm,
            bytes: self.signature.clone(),
        };
        match self.to_be_signed() {
            Ok(tbs) => crypto::verifies(&tbs, &sig, ca_key),
            Err(_) => false,
        }
    }

    pub fn find(&self, serial: u64) -> Option<&RevokedEntry> {
        self.entries
            .binary_search_by_key(&serial, |e| e.serial)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Current at `now`: `this_update <= now <= next_update`.
    pub fn is_current(&self, now: u64) -> bool {
        self.this_update <= now && now <= self.next_update
    }

    fn check_invariants(&self) -> Result<(), CodecError> {
        if self.this_update >= self.next_update {
            return Err(CodecError::invariant("this_update must precede next_update"));
        }
        if self.entries.windows(2).any(|w| w[0].serial >= w[1].serial) {
            return Err(CodecError::invariant(
                "CRL entries must be strictly ascending by serial",
            ));
        }
        if self.entries.len() * REVOKED_ENTRY_BYTES > codec::MAX_FIELD_LEN {
            return Err(CodecError::FieldTooLarge {
                tag: tag::REVOKED_ENTRY,
                len: self.entries.len() * REVOKED_ENTRY_BYTES,
            });
        }
        Ok(())
    }

    fn write(&self, w: &mut TlvWriter, with_signature: bool) -> Result<(), CodecError> {
        self.check_invariants()?;
        w.put_u8(tag::SIGNATURE_ALGORITHM, self.signature_algorithm.code())?;
        w.put_text(tag::ISSUER, &self.issuer)?;
        if with_signature {
            if self.signature.is_empty() {
                return Err(CodecError::invariant("CRL is unsigned"));
            }
            w.put(tag::SIGNATURE_VALUE, &self.signature)?;
        }
        if !self.entries.is_empty() {
            let mut buf = Vec::with_capacity(self.entries.len() * REVOKED_ENTRY_BYTES);
            for e in &self.entries {
                buf.extend_from_slice(&e.serial.to_be_bytes());
                buf.extend_from_slice(&e.revoked_at.to_be_bytes());
                buf.push(e.reason as u8);
            }
            w.put(tag::REVOKED_ENTRY, &buf)?;
        }
        w.put_u64(tag::THIS_UPDATE, self.this_update)?;
        w.put_u64(tag::NEXT_UPDATE, self.next_update)
    }
}

impl Entity for RevocationList {
    const KIND: EntityKind = EntityKind::RevocationList;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.write(w, true)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let signature_algorithm = profiles::read_signature_algorithm(f.require(tag::SIGNATURE_ALGORITHM)?)?;
        let issuer = codec::read_text(tag::ISSUER, f.require(tag::ISSUER)?)?;
        let signature = profiles::read_signature_bytes(f.require(tag::SIGNATURE_VALUE)?)?;
        let entries = match f.take(tag::REVOKED_ENTRY) {
            None => Vec::new(),
            Some(v) if v.is_empty() || v.len() % REVOKED_ENTRY_BYTES != 0 => {
                return Err(CodecError::malformed("revoked-entry field length"))
            }
            Some(v) => v
                .chunks_exact(REVOKED_ENTRY_BYTES)
                .map(|c| {
                    Ok(RevokedEntry {
                        serial: u64::from_be_bytes(c[..8].try_into().unwrap()),
                        revoked_at: u64::from_be_bytes(c[8..16].try_into().unwrap()),
                        reason: RevocationReason::from_code(c[16])
                            .ok_or_else(|| CodecError::malformed(format!("revocation reason {}", c[16])))?,
                    })
                })
                .collect::<Result<_, CodecError>>()?,
        };
        let this_update = codec::read_u64(tag::THIS_UPDATE, f.require(tag::THIS_UPDATE)?)?;
        let next_update = codec::read_u64(tag::NEXT_UPDATE, f.require(tag::NEXT_UPDATE)?)?;
        let crl = RevocationList {
            signature_algorithm,
            issuer,
            this_update,
            next_update,
            entries,
            signature,
        };
        crl.check_invariants()
            .map_err(|e| CodecError::malformed(e.to_string()))?;
        Ok(crl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevokeAction {
    Revoke { serial: u64, reason: RevocationReason },
    PublishCrl,
}

/// Operator command to the CA, authenticated with the CA's admin key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevokeCommand {
    pub action: RevokeAction,
    pub mac: MacTag,
}

impl RevokeCommand {
    pub fn new(action: RevokeAction, admin_key: &MacKey) -> Self {
        let mac = crypto::mac(admin_key, &Self::mac_message(action));
        RevokeCommand { action, mac }
    }

    pub fn verify(&self, admin_key: &MacKey) -> bool {
        crypto::mac_verify(admin_key, &Self::mac_message(self.action), &self.mac.0)
    }

    fn mac_message(action: RevokeAction) -> Vec<u8> {
        let mut m = vec![EntityKind::RevokeCommand.code()];
        if let RevokeAction::Revoke { serial, reason } = action {
            m.extend_from_slice(&serial.to_be_bytes());
            m.push(reason as u8);
        }
        m
    }
}

impl Entity for RevokeCommand {
    const KIND: EntityKind = EntityKind::RevokeCommand;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        if let RevokeAction::Revoke { serial, .. } = self.action {
            w.put_u64(tag::SERIAL, serial)?;
        }
        w.put(tag::REQUEST_MAC, &self.mac.0)?;
        if let RevokeAction::Revoke { reason, .. } = self.action {
            w.put_u8(tag::REVOCATION_REASON, reason as u8)?;
        }
        Ok(())
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let serial = f
            .take(tag::SERIAL)
            .map(|v| codec::read_u64(tag::SERIAL, v))
            .transpose()?;
        let mac = MacTag(codec::read_array(tag::REQUEST_MAC, f.require(tag::REQUEST_MAC)?)?);
        let reason = f
            .take(tag::REVOCATION_REASON)
            .map(|v| {
                let code = codec::read_u8(tag::REVOCATION_REASON, v)?;
                RevocationReason::from_code(code)
                    .ok_or_else(|| CodecError::malformed(format!("revocation reason {code}")))
            })
            .transpose()?;
        let action = match (serial, reason) {
            (Some(serial), Some(reason)) => RevokeAction::Revoke { serial, reason },
            (None, None) => RevokeAction::PublishCrl,
            _ => return Err(CodecError::malformed("serial and reason must appear together")),
        };
        Ok(RevokeCommand { action, mac })
    }
}

#[derive(Debug, Clone)]
pub struct AuthorityConfig {
    pub state_dir: PathBuf,
    pub name: String,
    pub curve: CurveId,
    pub cert_lifetime_s: u64,
    pub crl_validity_s: u64,
    pub short_lived_max_s: u64,
    /// `host:port` of the directory, stamped into the CRL distribution point.
    pub repository_addr: String,
    /// `host:port` of the status responder, stamped into authority info access.
    pub ocsp_addr: String,
}

impl AuthorityConfig {
    pub fn new(state_dir: impl Into<PathBuf>, repository_addr: &str, ocsp_addr: &str) -> Self {
        AuthorityConfig {
            state_dir: state_dir.into(),
            name: "WPKI Root CA".to_owned(),
            curve: CurveId::Sect163k1,
            cert_lifetime_s: DEFAULT_CERT_LIFETIME_S,
            crl_validity_s: DEFAULT_CRL_VALIDITY_S,
            short_lived_max_s: profiles::DEFAULT_SHORT_LIVED_MAX_S,
            repository_addr: repository_addr.to_owned(),
            ocsp_addr: ocsp_addr.to_owned(),
        }
    }
}

/// Simulated crash points for recovery tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// Certificate stored in the directory, ledger not yet updated.
    AfterRepositoryStore,
}

#[derive(Debug, Default)]
struct Store {
    next_serial: u64,
    next_user: u64,
    reserved: BTreeSet<u64>,
    entries: BTreeMap<u64, IssuedEntry>,
    registrations: HashMap<String, RegistrationRecord>,
}

struct Writer {
    ledger: File,
    registrations: File,
}

pub struct Authority {
    dir: PathBuf,
    identity: CaIdentity,
    cert: WirelessCertificate,
    admin_key: MacKey,
    directory: Arc<dyn Directory>,
    cert_lifetime_s: u64,
    crl_validity_s: u64,
    short_lived_max_s: u64,
    clock: Arc<dyn Clock>,
    store: RwLock<Store>,
    writer: Mutex<Writer>,
    fail_point: Mutex<Option<FailPoint>>,
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> AuthorityError {
    AuthorityError::CorruptState(format!("{}: {msg}", path.display()))
}

fn read_state_file(path: &Path) -> Result<Vec<u8>, AuthorityError> {
    fs::read(path).map_err(|e| corrupt(path, e))
}

/// Complete lines of an append-only record file. A torn final line is cut off.
fn read_records(path: &Path) -> Result<Vec<String>, AuthorityError> {
    let mut bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        warn!(
            "{}: dropping torn record of {} bytes",
            path.display(),
            bytes.len() - keep
        );
        bytes.truncate(keep);
        fs::OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    let text = String::from_utf8(bytes).map_err(|_| corrupt(path, "not UTF-8"))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn hex_text(path: &Path, s: &str) -> Result<String, AuthorityError> {
    from_hex(s)
        .and_then(|b| String::from_utf8(b).ok())
        .ok_or_else(|| corrupt(path, format!("bad hex text {s:?}")))
}

/// The CA certificate from `<state>/ca/cert`, read without opening the ledger.
pub fn read_certificate(state_dir: &Path) -> Result<WirelessCertificate, AuthorityError> {
    let path = state_dir.join("ca").join("cert");
    if !path.exists() {
        return Err(AuthorityError::NotInitialized(state_dir.to_path_buf()));
    }
    WirelessCertificate::decode(&read_state_file(&path)?).map_err(|e| corrupt(&path, e))
}

/// The operator key that authenticates revoke and publish commands.
pub fn read_admin_key(state_dir: &Path) -> Result<MacKey, AuthorityError> {
    let path = state_dir.join("ca").join("admin");
    if !path.exists() {
        return Err(AuthorityError::NotInitialized(state_dir.to_path_buf()));
    }
    MacKey::from_bytes(&read_state_file(&path)?).map_err(|e| corrupt(&path, e))
}

impl Authority {
    /// Creates CA state, or resumes it when `<state>/ca/key` already exists.
    pub fn init(config: &AuthorityConfig, directory: Arc<dyn Directory>) -> Result<Self, AuthorityError> {
        let dir = config.state_dir.join("ca");
        if dir.join("key").exists() {
            return Self::open(config, directory);
        }
        fs::create_dir_all(&dir)?;
        let key = crypto::generate_keypair(config.curve).map_err(|e| AuthorityError::SigningFailure(e.to_string()))?;
        let identity = CaIdentity {
            name: config.name.clone(),
            key,
            crl_distribution_point: format!("wpki://{}/crl/latest", config.repository_addr),
            authority_info_access: format!("wpki://{}/status", config.ocsp_addr),
            certificate_policy: DEFAULT_POLICY.to_owned(),
        };
        let now = crate::time::unix_now();
        let mut template = CertificateTemplate::new(config.name.clone(), now, CA_CERT_LIFETIME_S);
        template.key_usage = Some(KeyUsage::KEY_CERT_SIGN | KeyUsage::CRL_SIGN);
        template.issuer_alt_names = Some(vec![config.name.clone()]);
        let cert = build_certificate(&template, identity.key.public_key(), &identity, 0)?;
        let cert_bytes = cert.encode().map_err(|e| AuthorityError::Invalid(e.to_string()))?;

        let mut key_file = vec![identity.key.curve().code()];
        key_file.extend_from_slice(identity.key.secret_bytes());
        // key last: its presence marks a complete init
        fsutil::write_atomic(&dir.join("cert"), &cert_bytes)?;
        fsutil::write_atomic(&dir.join("admin"), MacKey::random().as_bytes())?;
        File::create(dir.join("ledger"))?;
        File::create(dir.join("registrations"))?;
        fsutil::write_atomic(&dir.join("key"), &key_file)?;
        info!("initialized CA {:?} at {}", config.name, dir.display());
        Self::open(config, directory)
    }

    /// Resumes existing CA state. Name and URLs come from the stored certificate.
    pub fn open(config: &AuthorityConfig, directory: Arc<dyn Directory>) -> Result<Self, AuthorityError> {
        let dir = config.state_dir.join("ca");
        let key_path = dir.join("key");
        if !key_path.exists() {
            return Err(AuthorityError::NotInitialized(config.state_dir.clone()));
        }
        let key_bytes = read_state_file(&key_path)?;
        let (&curve, secret) = key_bytes.split_first().ok_or_else(|| corrupt(&key_path, "empty"))?;
        let curve = CurveId::from_code(curve).map_err(|e| corrupt(&key_path, e))?;
        let key = KeyPair::from_secret(curve, secret).map_err(|e| corrupt(&key_path, e))?;

        let cert_path = dir.join("cert");
        let cert = WirelessCertificate::decode(&read_state_file(&cert_path)?).map_err(|e| corrupt(&cert_path, e))?;
        if &cert.public_key_info != key.public_key() || !cert.verify_signature(key.public_key()) {
            return Err(corrupt(&cert_path, "does not match the CA key"));
        }
        let admin_path = dir.join("admin");
        let admin_key = MacKey::from_bytes(&read_state_file(&admin_path)?).map_err(|e| corrupt(&admin_path, e))?;
        let ext = &cert.extensions;
        let identity = CaIdentity {
            name: cert.subject.clone(),
            key,
            crl_distribution_point: ext.crl_distribution_points.clone().unwrap_or_default(),
            authority_info_access: ext.authority_info_access.clone().unwrap_or_default(),
            certificate_policy: ext
                .certificate_policy
                .clone()
                .unwrap_or_else(|| DEFAULT_POLICY.to_owned()),
        };

        let mut store = Store {
            next_serial: 1,
            next_user: 1,
            ..Store::default()
        };
        Self::replay_registrations(&dir.join("registrations"), &mut store)?;
        Self::replay_ledger(&dir.join("ledger"), &mut store)?;
        let writer = Writer {
            ledger: fsutil::open_append(&dir.join("ledger"))?,
            registrations: fsutil::open_append(&dir.join("registrations"))?,
        };
        Ok(Authority {
            dir,
            identity,
            cert,
            admin_key,
            directory,
            cert_lifetime_s: config.cert_lifetime_s,
            crl_validity_s: config.crl_validity_s,
            short_lived_max_s: config.short_lived_max_s,
            clock: Arc::new(SystemClock),
            store: RwLock::new(store),
            writer: Mutex::new(writer),
            fail_point: Mutex::new(None),
        })
    }

    fn replay_registrations(path: &Path, store: &mut Store) -> Result<(), AuthorityError> {
        for line in read_records(path)? {
            let parts: Vec<&str> = line.split(' ').collect();
            let ["register", user, key, code, device] = parts[..] else {
                return Err(corrupt(path, format!("bad record {line:?}")));
            };
            let key = from_hex(key)
                .and_then(|k| MacKey::from_bytes(&k).ok())
                .ok_or_else(|| corrupt(path, "bad key"))?;
            let n: u64 = user
                .strip_prefix('u')
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| corrupt(path, format!("bad username {user:?}")))?;
            store.next_user = store.next_user.max(n + 1);
            let record = RegistrationRecord {
                username: user.to_owned(),
                password_derivative: key,
                random_code: code.to_owned(),
                device_id: hex_text(path, device)?,
                consumed: false,
            };
            if store.registrations.insert(user.to_owned(), record).is_some() {
                return Err(corrupt(path, format!("duplicate username {user}")));
            }
        }
        Ok(())
    }

    fn replay_ledger(path: &Path, store: &mut Store) -> Result<(), AuthorityError> {
        for line in read_records(path)? {
            let parts: Vec<&str> = line.split(' ').collect();
            let serial = |s: &str| s.parse::<u64>().map_err(|_| corrupt(path, format!("bad serial {s:?}")));
            match parts[..] {
                ["reserve", s] => {
                    let s = serial(s)?;
                    store.reserved.insert(s);
                    store.next_serial = store.next_serial.max(s + 1);
                }
                ["issue", s, subject, url, user] => {
                    let s = serial(s)?;
                    let cert_url = match url {
                        "-" => None,
                        u => Some(hex_text(path, u)?.parse().map_err(|e| corrupt(path, format!("{e}")))?),
                    };
                    let entry = IssuedEntry {
                        serial: s,
                        subject: hex_text(path, subject)?,
                        cert_url,
                        revoked_at: None,
                        reason: None,
                    };
                    if store.entries.insert(s, entry).is_some() {
                        return Err(corrupt(path, format!("serial {s} issued twice")));
                    }
                    if user != "-" {
                        let r = store
                            .registrations
                            .get_mut(user)
                            .ok_or_else(|| corrupt(path, format!("issue for unknown user {user}")))?;
                        if r.consumed {
                            return Err(corrupt(path, format!("registration {user} consumed twice")));
                        }
                        r.consumed = true;
                    }
                    store.next_serial = store.next_serial.max(s + 1);
                }
                ["revoke", s, at, reason] => {
                    let s = serial(s)?;
                    let at: u64 = at.parse().map_err(|_| corrupt(path, "bad revocation time"))?;
                    let reason = reason
                        .parse::<u8>()
                        .ok()
                        .and_then(RevocationReason::from_code)
                        .ok_or_else(|| corrupt(path, "bad revocation reason"))?;
                    let entry = store
                        .entries
                        .get_mut(&s)
                        .ok_or_else(|| corrupt(path, format!("revoke of unknown serial {s}")))?;
                    if entry.revoked_at.is_some() {
                        return Err(corrupt(path, format!("serial {s} revoked twice")));
                    }
                    entry.revoked_at = Some(at);
                    entry.reason = Some(reason);
                }
                _ => return Err(corrupt(path, format!("bad record {line:?}"))),
            }
        }
        Ok(())
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn state_dir(&self) -> &Path {
        &self.dir
    }

    pub fn name(&self) -> &str {
        &self.identity.name
    }

    pub fn identity(&self) -> &CaIdentity {
        &self.identity
    }

    pub fn certificate(&self) -> &WirelessCertificate {
        &self.cert
    }

    pub fn public_key(&self) -> &PublicKeyInfo {
        self.identity.key.public_key()
    }

    pub fn admin_key(&self) -> &MacKey {
        &self.admin_key
    }

    pub fn crl_validity_s(&self) -> u64 {
        self.crl_validity_s
    }

    pub fn directory(&self) -> &Arc<dyn Directory> {
        &self.directory
    }

    #[doc(hidden)]
    pub fn set_fail_point(&self, fp: Option<FailPoint>) {
        *self.fail_point.lock().unwrap_or_else(|p| p.into_inner()) = fp;
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|p| p.into_inner())
    }

    fn writer(&self) -> std::sync::MutexGuard<'_, Writer> {
        self.writer.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Records a registration and returns its new username (the reference number).
    pub fn register(&self, device_id: &str, password: &str, random_code: &str) -> Result<String, AuthorityError> {
        let mut w = self.writer();
        let username = format!("u{:08}", self.read().next_user);
        let key = crypto::derive_mac_key(&username, password, random_code)
            .map_err(|e| AuthorityError::Invalid(e.to_string()))?;
        if random_code.contains(' ') || random_code.is_empty() {
            return Err(AuthorityError::Invalid("random code".into()));
        }
        let line = format!(
            "register {username} {} {random_code} {}",
            to_hex(key.as_bytes()),
            to_hex(device_id.as_bytes())
        );
        fsutil::append_line(&mut w.registrations, &line)?;
        let mut store = self.write();
        store.next_user += 1;
        store.registrations.insert(
            username.clone(),
            RegistrationRecord {
                username: username.clone(),
                password_derivative: key,
                random_code: random_code.to_owned(),
                device_id: device_id.to_owned(),
                consumed: false,
            },
        );
        Ok(username)
    }

    pub fn registration(&self, username: &str) -> Option<RegistrationRecord> {
        self.read().registrations.get(username).cloned()
    }

    pub fn end_entity_template(&self, subject: &str, now: u64) -> CertificateTemplate {
        enrollment::end_entity_template(subject, now, self.cert_lifetime_s, &self.identity.name)
    }

    /// Issues, stores in the directory, then records in the ledger.
    ///
    /// With `reference`, the registration is consumed in the same ledger record;
    /// a consumed or unknown reference fails before anything is written.
    pub fn issue(
        &self,
        template: &CertificateTemplate,
        subject_key: &PublicKeyInfo,
        reference: Option<&str>,
    ) -> Result<(WirelessCertificate, CertUrl), AuthorityError> {
        let mut w = self.writer();
        if let Some(r) = reference {
            if !self.read().registrations.get(r).is_some_and(|rec| !rec.consumed) {
                return Err(AuthorityError::UnknownReference(r.to_owned()));
            }
        }
        let serial = self.reserve(&mut w)?;
        let cert = build_certificate(template, subject_key, &self.identity, serial)?;
        let url = self
            .directory
            .store_certificate(&cert)
            .map_err(|e| AuthorityError::RepositoryUnavailable(e.to_string()))?;
        if *self.fail_point.lock().unwrap_or_else(|p| p.into_inner()) == Some(FailPoint::AfterRepositoryStore) {
            return Err(AuthorityError::Interrupted);
        }
        self.record_issue(&mut w, &cert, Some(&url), reference)?;
        info!("issued serial {serial} to {:?} at {url}", cert.subject);
        Ok((cert, url))
    }

    /// Issues a certificate that is handed over directly instead of through the directory.
    pub fn issue_direct(
        &self,
        template: &CertificateTemplate,
        subject_key: &PublicKeyInfo,
    ) -> Result<WirelessCertificate, AuthorityError> {
        let mut w = self.writer();
        let serial = self.reserve(&mut w)?;
        let cert = build_certificate(template, subject_key, &self.identity, serial)?;
        self.record_issue(&mut w, &cert, None, None)?;
        Ok(cert)
    }

    /// Template for a status responder: signing plus the ocspSigning purpose.
    pub fn responder_template(&self, subject: &str, now: u64) -> CertificateTemplate {
        let mut t = self.end_entity_template(subject, now);
        t.extended_key_usage = Some(ExtendedKeyUsage::OCSP_SIGNING);
        t
    }

    pub fn issue_short_lived(
        &self,
        subject: &str,
        ecdh_public: &PublicKeyInfo,
        now: u64,
        lifetime_s: u64,
    ) -> Result<ShortLivedCertificate, AuthorityError> {
        Ok(build_short_lived(
            subject,
            ecdh_public,
            now,
            lifetime_s,
            self.short_lived_max_s,
            &self.identity,
        )?)
    }

    fn reserve(&self, w: &mut Writer) -> Result<u64, AuthorityError> {
        let serial = self.read().next_serial;
        fsutil::append_line(&mut w.ledger, &format!("reserve {serial}"))?;
        let mut store = self.write();
        store.reserved.insert(serial);
        store.next_serial = serial + 1;
        Ok(serial)
    }

    fn record_issue(
        &self,
        w: &mut Writer,
        cert: &WirelessCertificate,
        url: Option<&CertUrl>,
        reference: Option<&str>,
    ) -> Result<(), AuthorityError> {
        let line = format!(
            "issue {} {} {} {}",
            cert.serial,
            to_hex(cert.subject.as_bytes()),
            url.map_or("-".to_owned(), |u| to_hex(u.to_string().as_bytes())),
            reference.unwrap_or("-")
        );
        fsutil::append_line(&mut w.ledger, &line)?;
        let mut store = self.write();
        store.entries.insert(
            cert.serial,
            IssuedEntry {
                serial: cert.serial,
                subject: cert.subject.clone(),
                cert_url: url.cloned(),
                revoked_at: None,
                reason: None,
            },
        );
        if let Some(r) = reference.and_then(|r| store.registrations.get_mut(r)) {
            r.consumed = true;
        }
        Ok(())
    }

    /// Adopts certificates that reached the directory but not the ledger before an interruption.
    pub fn recover(&self) -> Result<Vec<u64>, AuthorityError> {
        let mut w = self.writer();
        let orphans: Vec<u64> = {
            let s = self.read();
            s.reserved
                .iter()
                .copied()
                .filter(|n| !s.entries.contains_key(n))
                .collect()
        };
        let Some(base) = self
            .identity
            .crl_distribution_point
            .strip_prefix("wpki://")
            .and_then(|r| r.split_once('/'))
            .map(|(authority, _)| authority.to_owned())
        else {
            return Ok(Vec::new());
        };
        let mut adopted = Vec::new();
        for serial in orphans {
            let Ok(url) = format!("wpki://{base}/certs/{serial}").parse::<CertUrl>() else {
                continue;
            };
            match self.directory.fetch_certificate(&url) {
                Ok(cert) if cert.serial == serial && cert.verify_signature(self.public_key()) => {
                    self.record_issue(&mut w, &cert, Some(&url), None)?;
                    info!("recovered serial {serial} from the directory");
                    adopted.push(serial);
                }
                Ok(_) => warn!("directory entry {serial} is not ours"),
                Err(crate::repository::RepositoryError::NotFound) => {}
                Err(e) => return Err(AuthorityError::RepositoryUnavailable(e.to_string())),
            }
        }
        Ok(adopted)
    }

    pub fn issued(&self) -> Vec<IssuedEntry> {
        self.read().entries.values().cloned().collect()
    }

    pub fn entry(&self, serial: u64) -> Option<IssuedEntry> {
        self.read().entries.get(&serial).cloned()
    }

    pub fn revoke(&self, serial: u64, reason: RevocationReason, now: u64) -> Result<(), AuthorityError> {
        let mut w = self.writer();
        match self.read().entries.get(&serial) {
            None => return Err(AuthorityError::UnknownSerial(serial)),
            Some(e) if e.revoked_at.is_some() => return Err(AuthorityError::AlreadyRevoked(serial)),
            Some(_) => {}
        }
        fsutil::append_line(&mut w.ledger, &format!("revoke {serial} {now} {}", reason as u8))?;
        let mut store = self.write();
        let e = store.entries.get_mut(&serial).expect("checked above");
        e.revoked_at = Some(now);
        e.reason = Some(reason);
        info!("revoked serial {serial} ({})", reason.name());
        Ok(())
    }

    /// Signs a CRL over the current ledger without publishing it.
    pub fn build_crl(&self, now: u64, validity_s: u64) -> Result<RevocationList, AuthorityError> {
        if validity_s == 0 {
            return Err(AuthorityError::Invalid("CRL validity must be positive".into()));
        }
        let entries = self
            .read()
            .entries
            .values()
            .filter_map(|e| {
                Some(RevokedEntry {
                    serial: e.serial,
                    revoked_at: e.revoked_at?,
                    reason: e.reason.unwrap_or(RevocationReason::Unspecified),
                })
            })
            .collect();
        let mut crl = RevocationList {
            signature_algorithm: SignatureAlgorithm::EcdsaSha256,
            issuer: self.identity.name.clone(),
            this_update: now,
            next_update: now
                .checked_add(validity_s)
                .ok_or_else(|| AuthorityError::Invalid("CRL validity overflows".into()))?,
            entries,
            signature: Vec::new(),
        };
        let tbs = crl.to_be_signed().map_err(|e| AuthorityError::Invalid(e.to_string()))?;
        let sig = crypto::sign(&tbs, &self.identity.key).map_err(|e| AuthorityError::SigningFailure(e.to_string()))?;
        crl.signature = sig.bytes;
        Ok(crl)
    }

    /// Builds, signs and publishes a CRL to the directory.
    pub fn generate_crl(&self, now: u64, validity_s: u64) -> Result<RevocationList, AuthorityError> {
        let crl = self.build_crl(now, validity_s)?;
        self.directory
            .publish_crl(&crl)
            .map_err(|e| AuthorityError::RepositoryUnavailable(e.to_string()))?;
        Ok(crl)
    }
}

fn enrollment_reply(e: &EnrollmentError) -> Reply {
    let code = match e {
        EnrollmentError::UnknownReference(_) => ErrorCode::UnknownReference,
        EnrollmentError::MacMismatch => ErrorCode::MacMismatch,
        EnrollmentError::PopFailure => ErrorCode::PopFailure,
        EnrollmentError::RepositoryUnavailable(_) => ErrorCode::RepositoryUnavailable,
        EnrollmentError::EmptyDeviceId | EnrollmentError::DeviceIdTooLong(_) | EnrollmentError::Codec(_) => {
            ErrorCode::Malformed
        }
        EnrollmentError::NonConformant(_) => ErrorCode::NonConformant,
        _ => ErrorCode::Internal,
    };
    Reply::error(code, e.to_string())
}

fn authority_reply(e: &AuthorityError) -> Reply {
    let code = match e {
        AuthorityError::UnknownSerial(_) => ErrorCode::UnknownSerial,
        AuthorityError::AlreadyRevoked(_) => ErrorCode::AlreadyRevoked,
        AuthorityError::UnknownReference(_) => ErrorCode::UnknownReference,
        AuthorityError::RepositoryUnavailable(_) => ErrorCode::RepositoryUnavailable,
        AuthorityError::NonConformant(_) => ErrorCode::NonConformant,
        AuthorityError::Invalid(_) => ErrorCode::Malformed,
        _ => ErrorCode::Internal,
    };
    Reply::error(code, e.to_string())
}

struct AuthorityService(Arc<Authority>);

impl AuthorityService {
    fn certificate_request(&self, req: &CertificateRequest) -> Result<Reply, EnrollmentError> {
        let ca = &self.0;
        let verified = enrollment::ca_verify_request(ca, req)?;
        let resp = enrollment::ca_issue(ca, &verified, ca.now())?;
        Ok(Reply::entity(&resp))
    }

    fn revoke_command(&self, cmd: &RevokeCommand) -> Reply {
        let ca = &self.0;
        if !cmd.verify(ca.admin_key()) {
            return Reply::error(ErrorCode::Unauthorized, "revoke command MAC does not verify");
        }
        match cmd.action {
            RevokeAction::Revoke { serial, reason } => match ca.revoke(serial, reason, ca.now()) {
                Ok(()) => Reply::entity(cmd),
                Err(e) => authority_reply(&e),
            },
            RevokeAction::PublishCrl => match ca.generate_crl(ca.now(), ca.crl_validity_s()) {
                Ok(crl) => Reply::entity(&crl),
                Err(e) => authority_reply(&e),
            },
        }
    }
}

impl Handler for AuthorityService {
    fn handle(&self, kind: EntityKind, payload: &[u8]) -> Reply {
        match kind {
            EntityKind::RegistrationRequest => match net::decode_request::<RegistrationRequest>(payload) {
                Err(r) => r,
                Ok(req) => match enrollment::ca_handle_registration(&self.0, &req) {
                    Ok(creds) => Reply::entity(&creds),
                    Err(e) => enrollment_reply(&e),
                },
            },
            EntityKind::CertificateRequest => match net::decode_request::<CertificateRequest>(payload) {
                Err(r) => r,
                Ok(req) => self.certificate_request(&req).unwrap_or_else(|e| enrollment_reply(&e)),
            },
            EntityKind::RevokeCommand => match net::decode_request::<RevokeCommand>(payload) {
                Err(r) => r,
                Ok(cmd) => self.revoke_command(&cmd),
            },
            other => Reply::error(ErrorCode::UnexpectedKind, format!("CA does not accept {other}")),
        }
    }
}

pub fn serve(listener: std::net::TcpListener, ca: Arc<Authority>) -> io::Result<ServiceHandle> {
    net::spawn_service(listener, Arc::new(AuthorityService(ca)), codec::DEFAULT_MAX_PAYLOAD)
}
