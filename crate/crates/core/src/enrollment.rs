//! Certificate enrollment: registration, credential issue, the signed and
//! MAC-protected certificate request, and certificate-URL delivery.
//!
//! ```text
//! client                                   CA
//!   | RegistrationRequest(device_id)  ----> |  record (username, kdf key, random code)
//!   | <---- Credentials(user, pw, code)     |
//!   |  generate key pair                    |
//!   | CertificateRequest(ref, subject, key, |
//!   |   PoP signature, MAC)           ----> |  check record, MAC, PoP (in that order)
//!   | <---- CertificateResponse(cert, url)  |  issue, store in directory, consume record
//!   |  keep key + credentials + url only    |
//! ```

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::authority::{Authority, AuthorityError, RegistrationRecord};
use crate::codec::{self, tag, CodecError, Entity, EntityKind, Fields, TlvWriter};
use crate::crypto::{self, CryptoError, CurveId, KeyPair, MacTag, PublicKeyInfo, SignatureValue, MAC_TAG_LEN};
use crate::profiles::{self, validate_period, CertificateTemplate, WirelessCertificate};
use crate::repository::CertUrl;

pub const MAX_DEVICE_ID_LEN: usize = 64;
/// How far end-entity validity is backdated from the moment of issue.
pub const CLOCK_SKEW_S: u64 = 60;
pub const RANDOM_CODE_LEN: usize = 16;
pub const PASSWORD_LEN: usize = 16;
pub const RANDOM_CODE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
pub const PASSWORD_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

#[derive(Debug, Error)]
pub enum EnrollmentError {
    #[error("device id is empty")]
    EmptyDeviceId,
    #[error("device id is {0} bytes (max {MAX_DEVICE_ID_LEN})")]
    DeviceIdTooLong(usize),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("invalid key pair")]
    InvalidKeypair,
    #[error("no registration for reference {0:?}")]
    UnknownReference(String),
    #[error("request MAC does not verify")]
    MacMismatch,
    #[error("proof of possession failed")]
    PopFailure,
    #[error("repository unavailable: {0}")]
    RepositoryUnavailable(String),
    #[error("signing failed: {0}")]
    SigningFailure(String),
    #[error("certificate does not carry the expected public key")]
    KeyMismatch,
    #[error("certificate is not conformant: {0}")]
    NonConformant(String),
    #[error("certificate is outside its validity period")]
    Expired,
    #[error("encoding error: {0}")]
    Codec(#[from] CodecError),
}

fn check_device_id(device_id: &str) -> Result<(), CodecError> {
    if device_id.is_empty() {
        return Err(CodecError::invariant("empty device id"));
    }
    if device_id.len() > MAX_DEVICE_ID_LEN {
        return Err(CodecError::invariant("device id too long"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub device_id: String,
}

impl Entity for RegistrationRequest {
    const KIND: EntityKind = EntityKind::RegistrationRequest;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        check_device_id(&self.device_id)?;
        w.put_text(tag::DEVICE_ID, &self.device_id)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let device_id = codec::read_text(tag::DEVICE_ID, f.require(tag::DEVICE_ID)?)?;
        check_device_id(&device_id)?;
        Ok(RegistrationRequest { device_id })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Credentials {
    pub username: String,
    pub password: String,
    pub random_code: String,
}

impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credentials")
            .field("username", &self.username)
            .field("random_code", &self.random_code)
            .finish_non_exhaustive()
    }
}

impl Credentials {
    pub fn mac_key(&self) -> Result<crypto::MacKey, CryptoError> {
        crypto::derive_mac_key(&self.username, &self.password, &self.random_code)
    }

    fn check(&self) -> Result<(), CodecError> {
        if self.username.is_empty() || self.password.is_empty() {
            return Err(CodecError::invariant("empty credential"));
        }
        if self.random_code.len() != RANDOM_CODE_LEN
            || !self.random_code.bytes().all(|b| RANDOM_CODE_ALPHABET.contains(&b))
        {
            return Err(CodecError::invariant("random code must be 16 chars of [A-Z0-9]"));
        }
        Ok(())
    }
}

impl Entity for Credentials {
    const KIND: EntityKind = EntityKind::Credentials;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.check()?;
        w.put_text(tag::REFERENCE_NUMBER, &self.username)?;
        w.put_text(tag::RANDOM_CODE, &self.random_code)?;
        w.put_text(tag::PASSWORD, &self.password)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let creds = Credentials {
            username: codec::read_text(tag::REFERENCE_NUMBER, f.require(tag::REFERENCE_NUMBER)?)?,
            random_code: codec::read_text(tag::RANDOM_CODE, f.require(tag::RANDOM_CODE)?)?,
            password: codec::read_text(tag::PASSWORD, f.require(tag::PASSWORD)?)?,
        };
        creds.check()?;
        Ok(creds)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateRequest {
    pub reference_number: String,
    pub subject: String,
    pub public_key_info: PublicKeyInfo,
    pub pop_signature: SignatureValue,
    pub request_mac: MacTag,
}

impl CertificateRequest {
    /// Bytes covered by the proof-of-possession signature.
    pub fn pop_message(&self) -> Result<Vec<u8>, CodecError> {
        pop_message(&self.reference_number, &self.subject, &self.public_key_info)
    }

    /// Bytes covered by the request MAC: everything but the MAC itself.
    pub fn mac_message(&self) -> Result<Vec<u8>, CodecError> {
        mac_message(
            &self.reference_number,
            &self.subject,
            &self.public_key_info,
            &self.pop_signature,
        )
    }
}

fn write_identity(w: &mut TlvWriter, reference: &str, subject: &str, key: &PublicKeyInfo) -> Result<(), CodecError> {
    w.put_text(tag::SUBJECT, subject)?;
    w.put(tag::PUBLIC_KEY_INFO, &key.to_bytes())?;
    w.put_text(tag::REFERENCE_NUMBER, reference)
}

fn pop_message(reference: &str, subject: &str, key: &PublicKeyInfo) -> Result<Vec<u8>, CodecError> {
    let mut w = TlvWriter::new();
    write_identity(&mut w, reference, subject, key)?;
    Ok(w.finish())
}

fn mac_message(
    reference: &str,
    subject: &str,
    key: &PublicKeyInfo,
    pop: &SignatureValue,
) -> Result<Vec<u8>, CodecError> {
    let mut w = TlvWriter::new();
    write_identity(&mut w, reference, subject, key)?;
    w.put(tag::POP_SIGNATURE, &pop.to_bytes())?;
    Ok(w.finish())
}

impl Entity for CertificateRequest {
    const KIND: EntityKind = EntityKind::CertificateRequest;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        write_identity(w, &self.reference_number, &self.subject, &self.public_key_info)?;
        if self.pop_signature.bytes.is_empty() {
            return Err(CodecError::invariant("empty proof-of-possession signature"));
        }
        w.put(tag::POP_SIGNATURE, &self.pop_signature.to_bytes())?;
        w.put(tag::REQUEST_MAC, &self.request_mac.0)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let subject = codec::read_text(tag::SUBJECT, f.require(tag::SUBJECT)?)?;
        let public_key_info = profiles::read_public_key_info(f.require(tag::PUBLIC_KEY_INFO)?)?;
        let reference_number = codec::read_text(tag::REFERENCE_NUMBER, f.require(tag::REFERENCE_NUMBER)?)?;
        let pop_signature = SignatureValue::from_bytes(f.require(tag::POP_SIGNATURE)?)
            .filter(|s| !s.bytes.is_empty())
            .ok_or_else(|| CodecError::malformed("bad proof-of-possession signature"))?;
        let request_mac = MacTag(codec::read_array::<MAC_TAG_LEN>(
            tag::REQUEST_MAC,
            f.require(tag::REQUEST_MAC)?,
        )?);
        Ok(CertificateRequest {
            reference_number,
            subject,
            public_key_info,
            pop_signature,
            request_mac,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateResponse {
    pub certificate: WirelessCertificate,
    pub cert_url: CertUrl,
}

impl Entity for CertificateResponse {
    const KIND: EntityKind = EntityKind::CertificateResponse;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.certificate.write_fields(w)?;
        w.put_text(tag::CERT_URL, &self.cert_url.to_string())
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let certificate = WirelessCertificate::read_fields(f)?;
        let cert_url = read_cert_url(f.require(tag::CERT_URL)?)?;
        Ok(CertificateResponse { certificate, cert_url })
    }
}

pub(crate) fn read_cert_url(v: &[u8]) -> Result<CertUrl, CodecError> {
    let text = codec::read_text(tag::CERT_URL, v)?;
    let url: CertUrl = text
        .parse()
        .map_err(|e| CodecError::malformed(format!("cert url: {e}")))?;
    // only the canonical spelling decodes
    if url.to_string() != text {
        return Err(CodecError::NonCanonical(format!("cert url {text:?}")));
    }
    Ok(url)
}

pub fn client_begin_registration(device_id: &str) -> Result<RegistrationRequest, EnrollmentError> {
    if device_id.is_empty() {
        return Err(EnrollmentError::EmptyDeviceId);
    }
    if device_id.len() > MAX_DEVICE_ID_LEN {
        return Err(EnrollmentError::DeviceIdTooLong(device_id.len()));
    }
    Ok(RegistrationRequest {
        device_id: device_id.to_owned(),
    })
}

pub fn client_build_request(
    creds: &Credentials,
    keypair: &KeyPair,
    subject: &str,
) -> Result<CertificateRequest, EnrollmentError> {
    if !keypair.is_consistent() {
        return Err(EnrollmentError::InvalidKeypair);
    }
    let key = keypair.public_key().clone();
    let pop_signature = crypto::sign(&pop_message(&creds.username, subject, &key)?, keypair)
        .map_err(|_| EnrollmentError::InvalidKeypair)?;
    let mac_key = creds
        .mac_key()
        .map_err(|e| EnrollmentError::StorageFailure(e.to_string()))?;
    let request_mac = crypto::mac(&mac_key, &mac_message(&creds.username, subject, &key, &pop_signature)?);
    Ok(CertificateRequest {
        reference_number: creds.username.clone(),
        subject: subject.to_owned(),
        public_key_info: key,
        pop_signature,
        request_mac,
    })
}

/// A request that passed every CA-side check. Only [`ca_verify_request`] makes these.
#[derive(Debug, Clone)]
pub struct VerifiedRequest {
    request: CertificateRequest,
}

impl VerifiedRequest {
    pub fn request(&self) -> &CertificateRequest {
        &self.request
    }
}

pub fn ca_handle_registration(ca: &Authority, req: &RegistrationRequest) -> Result<Credentials, EnrollmentError> {
    check_device_id(&req.device_id)?;
    let password = crypto::random_string(PASSWORD_ALPHABET, PASSWORD_LEN);
    let random_code = crypto::random_string(RANDOM_CODE_ALPHABET, RANDOM_CODE_LEN);
    let username = ca
        .register(&req.device_id, &password, &random_code)
        .map_err(|e| EnrollmentError::StorageFailure(e.to_string()))?;
    Ok(Credentials {
        username,
        password,
        random_code,
    })
}

/// Fails fast in a fixed order: unknown reference, then MAC, then proof of possession.
pub fn ca_verify_request(ca: &Authority, req: &CertificateRequest) -> Result<VerifiedRequest, EnrollmentError> {
    let record: RegistrationRecord = ca
        .registration(&req.reference_number)
        .filter(|r| !r.consumed)
        .ok_or_else(|| EnrollmentError::UnknownReference(req.reference_number.clone()))?;
    if !crypto::mac_verify(&record.password_derivative, &req.mac_message()?, &req.request_mac.0) {
        return Err(EnrollmentError::MacMismatch);
    }
    if !crypto::verifies(&req.pop_message()?, &req.pop_signature, &req.public_key_info) {
        return Err(EnrollmentError::PopFailure);
    }
    Ok(VerifiedRequest { request: req.clone() })
}

pub fn ca_issue(ca: &Authority, verified: &VerifiedRequest, now: u64) -> Result<CertificateResponse, EnrollmentError> {
    let req = &verified.request;
    let template = ca.end_entity_template(&req.subject, now);
    let (certificate, cert_url) = ca
        .issue(&template, &req.public_key_info, Some(&req.reference_number))
        .map_err(|e| match e {
            AuthorityError::RepositoryUnavailable(m) => EnrollmentError::RepositoryUnavailable(m),
            AuthorityError::SigningFailure(m) => EnrollmentError::SigningFailure(m),
            AuthorityError::UnknownReference(r) => EnrollmentError::UnknownReference(r),
            other => EnrollmentError::StorageFailure(other.to_string()),
        })?;
    Ok(CertificateResponse { certificate, cert_url })
}

/// Checks the issued certificate and keeps only what the device needs later.
pub fn client_complete(
    resp: &CertificateResponse,
    expected_key: &KeyPair,
    creds: &Credentials,
    now: u64,
) -> Result<ClientState, EnrollmentError> {
    let cert = &resp.certificate;
    if &cert.public_key_info != expected_key.public_key() {
        return Err(EnrollmentError::KeyMismatch);
    }
    let report = profiles::check_process(cert);
    if !report.is_conformant() {
        return Err(EnrollmentError::NonConformant(report.to_string()));
    }
    if !validate_period(cert, now) {
        return Err(EnrollmentError::Expired);
    }
    if resp.cert_url.serial != cert.serial {
        return Err(EnrollmentError::NonConformant(
            "cert url does not name the issued serial".into(),
        ));
    }
    Ok(ClientState {
        keypair: expected_key.clone(),
        credentials: creds.clone(),
        cert_url: resp.cert_url.clone(),
    })
}

/// What an enrolled device keeps: private key, credentials and its certificate URL.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub keypair: KeyPair,
    pub credentials: Credentials,
    pub cert_url: CertUrl,
}

const STATE_MAGIC: &[u8; 4] = b"WPKS";
const STATE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("client state is corrupt: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ClientState {
    /// `magic || version || curve || (len u16, bytes) x {secret, user, password, code, url}`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128);
        out.extend_from_slice(STATE_MAGIC);
        out.push(STATE_VERSION);
        out.push(self.keypair.curve().code());
        let url = self.cert_url.to_string();
        for field in [
            self.keypair.secret_bytes(),
            self.credentials.username.as_bytes(),
            self.credentials.password.as_bytes(),
            self.credentials.random_code.as_bytes(),
            url.as_bytes(),
        ] {
            out.extend_from_slice(&(field.len() as u16).to_be_bytes());
            out.extend_from_slice(field);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StateError> {
        let corrupt = |m: &str| StateError::Corrupt(m.to_owned());
        if bytes.len() < 6 || &bytes[..4] != STATE_MAGIC || bytes[4] != STATE_VERSION {
            return Err(corrupt("bad header"));
        }
        let curve = CurveId::from_code(bytes[5]).map_err(|_| corrupt("unknown curve"))?;
        let mut pos = 6;
        let mut fields: Vec<&[u8]> = Vec::with_capacity(5);
        for _ in 0..5 {
            if bytes.len() < pos + 2 {
                return Err(corrupt("truncated"));
            }
            let len = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
            pos += 2;
            if bytes.len() < pos + len {
                return Err(corrupt("truncated"));
            }
            fields.push(&bytes[pos..pos + len]);
            pos += len;
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        let text = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| corrupt("invalid UTF-8"));
        let keypair = KeyPair::from_secret(curve, fields[0]).map_err(|_| corrupt("invalid private key"))?;
        let credentials = Credentials {
            username: text(fields[1])?,
            password: text(fields[2])?,
            random_code: text(fields[3])?,
        };
        let cert_url = text(fields[4])?.parse().map_err(|_| corrupt("invalid cert url"))?;
        Ok(ClientState {
            keypair,
            credentials,
            cert_url,
        })
    }

    pub fn save(&self, path: &Path) -> Result<usize, StateError> {
        let bytes = self.to_bytes();
        crate::fsutil::write_atomic(path, &bytes)?;
        Ok(bytes.len())
    }

    pub fn load(path: &Path) -> Result<Self, StateError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Template the CA applies to every end-entity request.
pub(crate) fn end_entity_template(
    subject: &str,
    now: u64,
    lifetime_s: u64,
    issuer_alt_name: &str,
) -> CertificateTemplate {
    // backdated so a device whose clock lags the CA's still sees the certificate as valid
    let not_before = now.saturating_sub(CLOCK_SKEW_S);
    let mut t = CertificateTemplate::new(subject, not_before, lifetime_s + (now - not_before));
    t.issuer_alt_names = Some(vec![issuer_alt_name.to_owned()]);
    t.extended_key_usage = Some(profiles::ExtendedKeyUsage::CLIENT_AUTH | profiles::ExtendedKeyUsage::SERVER_AUTH);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;

    fn creds() -> Credentials {
        Credentials {
            username: "u00000001".into(),
            password: "Sup3rSecretPassw".into(),
            random_code: "ABCDEFGH12345678".into(),
        }
    }

    #[test]
    fn registration_bounds() {
        assert_eq!(
            client_begin_registration("IMEI-490154203237518").unwrap().device_id,
            "IMEI-490154203237518"
        );
        assert!(matches!(
            client_begin_registration(""),
            Err(EnrollmentError::EmptyDeviceId)
        ));
        assert!(matches!(
            client_begin_registration(&"9".repeat(65)),
            Err(EnrollmentError::DeviceIdTooLong(65))
        ));
    }

    #[test]
    fn built_request_is_self_consistent_and_hides_password() {
        let c = creds();
        let k = generate_keypair(CurveId::Sect163k1).unwrap();
        let req = client_build_request(&c, &k, "alice-phone").unwrap();
        assert!(crypto::verifies(
            &req.pop_message().unwrap(),
            &req.pop_signature,
            &req.public_key_info
        ));
        let key = c.mac_key().unwrap();
        assert_eq!(crypto::mac(&key, &req.mac_message().unwrap()), req.request_mac);
        let bytes = req.encode().unwrap();
        assert!(!bytes.windows(c.password.len()).any(|w| w == c.password.as_bytes()));
        assert_eq!(CertificateRequest::decode(&bytes).unwrap(), req);
    }

    #[test]
    fn credentials_validate_random_code() {
        let mut c = creds();
        c.random_code = "abc".into();
        assert!(c.encode().is_err());
    }

    #[test]
    fn client_state_round_trip() {
        let k = generate_keypair(CurveId::Sect163k1).unwrap();
        let s = ClientState {
            keypair: k,
            credentials: creds(),
            cert_url: "wpki://127.0.0.1:7002/certs/42".parse().unwrap(),
        };
        let bytes = s.to_bytes();
        assert!(bytes.len() < 1024);
        let back = ClientState::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(ClientState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
