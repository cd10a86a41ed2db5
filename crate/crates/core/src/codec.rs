//! Canonical tag-length-value encoding and stream framing.
//!
//! Every protocol entity is a sequence of fields:
//!
//! ```text
//! +-----+-----------+------------------+
//! | tag | length    | value            |
//! | 1 B | 2 B (BE)  | `length` bytes   |
//! +-----+-----------+------------------+
//! ```
//!
//! Fields appear in strictly ascending tag order and absent optional fields are
//! simply omitted, so each entity has exactly one valid encoding. Decoding
//! rejects anything else (unknown tags, reordering, duplicates, trailing bytes).
//!
//! On the wire each encoded entity travels in a frame:
//!
//! ```text
//! +----------------------+------+---------+
//! | length of kind+data  | kind | payload |
//! | 4 B (BE)             | 1 B  |         |
//! +----------------------+------+---------+
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::authority::{RevocationList, RevokeCommand};
use crate::enrollment::{CertificateRequest, CertificateResponse, Credentials, RegistrationRequest};
use crate::ocsp::{StatusRequest, StatusResponse};
use crate::profiles::{ShortLivedCertificate, WirelessCertificate};
use crate::repository::FetchCommand;

/// Registered field tags.
pub mod tag {
    pub const VERSION: u8 = 0x01;
    pub const SERIAL: u8 = 0x02;
    pub const SIGNATURE_ALGORITHM: u8 = 0x03;
    pub const ISSUER: u8 = 0x04;
    pub const VALID_NOT_BEFORE: u8 = 0x05;
    pub const VALID_NOT_AFTER: u8 = 0x06;
    pub const SUBJECT: u8 = 0x07;
    pub const PUBLIC_KEY_INFO: u8 = 0x08;
    pub const AUTHORITY_KEY_ID: u8 = 0x10;
    pub const SUBJECT_KEY_ID: u8 = 0x11;
    pub const KEY_USAGE: u8 = 0x12;
    pub const CERTIFICATE_POLICY: u8 = 0x13;
    pub const SUBJECT_ALT_NAMES: u8 = 0x14;
    pub const ISSUER_ALT_NAMES: u8 = 0x15;
    pub const EXTENDED_KEY_USAGE: u8 = 0x16;
    pub const CRL_DISTRIBUTION_POINTS: u8 = 0x17;
    pub const DOMAIN_INFORMATION: u8 = 0x18;
    pub const AUTHORITY_INFO_ACCESS: u8 = 0x19;
    pub const SIGNATURE_VALUE: u8 = 0x20;
    pub const PUBLIC_KEY_TYPE: u8 = 0x21;
    pub const PARAMETER_SPECIFIER: u8 = 0x22;
    pub const REFERENCE_NUMBER: u8 = 0x30;
    pub const POP_SIGNATURE: u8 = 0x31;
    pub const REQUEST_MAC: u8 = 0x32;
    pub const DEVICE_ID: u8 = 0x33;
    pub const RANDOM_CODE: u8 = 0x34;
    pub const PASSWORD: u8 = 0x35;
    pub const REVOKED_ENTRY: u8 = 0x40;
    pub const THIS_UPDATE: u8 = 0x41;
    pub const NEXT_UPDATE: u8 = 0x42;
    pub const REVOCATION_REASON: u8 = 0x43;
    pub const CERT_URL: u8 = 0x50;
    pub const STATUS_CODE: u8 = 0x51;
    pub const PRODUCED_AT: u8 = 0x52;
    pub const NONCE: u8 = 0x53;
    pub const DETAIL: u8 = 0x54;

    /// Every tag the decoder accepts, ascending.
    pub const REGISTERED: &[u8] = &[
        VERSION,
        SERIAL,
        SIGNATURE_ALGORITHM,
        ISSUER,
        VALID_NOT_BEFORE,
        VALID_NOT_AFTER,
        SUBJECT,
        PUBLIC_KEY_INFO,
        AUTHORITY_KEY_ID,
        SUBJECT_KEY_ID,
        KEY_USAGE,
        CERTIFICATE_POLICY,
        SUBJECT_ALT_NAMES,
        ISSUER_ALT_NAMES,
        EXTENDED_KEY_USAGE,
        CRL_DISTRIBUTION_POINTS,
        DOMAIN_INFORMATION,
        AUTHORITY_INFO_ACCESS,
        SIGNATURE_VALUE,
        PUBLIC_KEY_TYPE,
        PARAMETER_SPECIFIER,
        REFERENCE_NUMBER,
        POP_SIGNATURE,
        REQUEST_MAC,
        DEVICE_ID,
        RANDOM_CODE,
        PASSWORD,
        REVOKED_ENTRY,
        THIS_UPDATE,
        NEXT_UPDATE,
        REVOCATION_REASON,
        CERT_URL,
        STATUS_CODE,
        PRODUCED_AT,
        NONCE,
        DETAIL,
    ];

    pub fn is_registered(tag: u8) -> bool {
        REGISTERED.binary_search(&tag).is_ok()
    }
}

/// Largest value a single field may carry.
pub const MAX_FIELD_LEN: usize = u16::MAX as usize;
/// Largest UTF-8 text field.
pub const MAX_TEXT_LEN: usize = 255;
/// Default upper bound on a frame payload accepted by [`deframe`].
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("non-canonical encoding: {0}")]
    NonCanonical(String),
    #[error("expected {expected}, got {found}")]
    KindMismatch { expected: EntityKind, found: EntityKind },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("field {tag:#04x} too large: {len} bytes")]
    FieldTooLarge { tag: u8, len: usize },
}

impl CodecError {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        CodecError::Malformed(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        CodecError::InvariantViolation(msg.into())
    }
}

/// Frame discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EntityKind {
    RegistrationRequest = 0x01,
    Credentials = 0x02,
    CertificateRequest = 0x03,
    CertificateResponse = 0x04,
    WirelessCertificate = 0x05,
    ShortLivedCertificate = 0x06,
    RevocationList = 0x07,
    StatusRequest = 0x08,
    StatusResponse = 0x09,
    ErrorReply = 0x0A,
    RevokeCommand = 0x0B,
    FetchCommand = 0x0C,
}

impl EntityKind {
    pub const ALL: [EntityKind; 12] = [
        EntityKind::RegistrationRequest,
        EntityKind::Credentials,
        EntityKind::CertificateRequest,
        EntityKind::CertificateResponse,
        EntityKind::WirelessCertificate,
        EntityKind::ShortLivedCertificate,
        EntityKind::RevocationList,
        EntityKind::StatusRequest,
        EntityKind::StatusResponse,
        EntityKind::ErrorReply,
        EntityKind::RevokeCommand,
        EntityKind::FetchCommand,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for EntityKind {
    type Error = u8;

    fn try_from(value: u8) -> Result<Self, u8> {
        EntityKind::ALL.iter().copied().find(|k| k.code() == value).ok_or(value)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Accumulates fields in ascending tag order.
#[derive(Debug, Default)]
pub struct TlvWriter {
    buf: Vec<u8>,
    last_tag: Option<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, tag: u8, value: &[u8]) -> Result<(), CodecError> {
        if !tag::is_registered(tag) {
            return Err(CodecError::UnknownTag(tag));
        }
        if let Some(last) = self.last_tag {
            if tag <= last {
                return Err(CodecError::invariant(format!(
                    "tag {tag:#04x} written after {last:#04x}"
                )));
            }
        }
        if value.len() > MAX_FIELD_LEN {
            return Err(CodecError::FieldTooLarge { tag, len: value.len() });
        }
        self.buf.push(tag);
        self.buf.extend_from_slice(&(value.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(value);
        self.last_tag = Some(tag);
        Ok(())
    }

    pub fn put_u8(&mut self, tag: u8, v: u8) -> Result<(), CodecError> {
        self.put(tag, &[v])
    }

    pub fn put_u64(&mut self, tag: u8, v: u64) -> Result<(), CodecError> {
        self.put(tag, &v.to_be_bytes())
    }

    pub fn put_text(&mut self, tag: u8, text: &str) -> Result<(), CodecError> {
        check_text(tag, text)?;
        self.put(tag, text.as_bytes())
    }

    /// Text list: each item is a 1-byte length followed by UTF-8 bytes.
    pub fn put_text_list(&mut self, tag: u8, items: &[String]) -> Result<(), CodecError> {
        if items.is_empty() {
            return Err(CodecError::invariant(format!("empty list for tag {tag:#04x}")));
        }
        let mut value = Vec::new();
        for item in items {
            check_text(tag, item)?;
            value.push(item.len() as u8);
            value.extend_from_slice(item.as_bytes());
        }
        self.put(tag, &value)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

fn check_text(tag: u8, text: &str) -> Result<(), CodecError> {
    if text.is_empty() {
        return Err(CodecError::invariant(format!("empty text for tag {tag:#04x}")));
    }
    if text.len() > MAX_TEXT_LEN {
        return Err(CodecError::invariant(format!(
            "text for tag {tag:#04x} is {} bytes (max {MAX_TEXT_LEN})",
            text.len()
        )));
    }
    Ok(())
}

/// Parsed field list of one entity. Fields are consumed with `take`/`require`;
/// `finish` fails if anything was left over.
#[derive(Debug)]
pub struct Fields<'a> {
    entries: Vec<(u8, Option<&'a [u8]>)>,
}

impl<'a> Fields<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, CodecError> {
        if bytes.is_empty() {
            return Err(CodecError::malformed("empty input"));
        }
        let mut entries = Vec::new();
        let mut pos = 0;
        let mut last: Option<u8> = None;
        while pos < bytes.len() {
            if bytes.len() - pos < 3 {
                return Err(CodecError::malformed("truncated field header"));
            }
            let t = bytes[pos];
            let len = u16::from_be_bytes([bytes[pos + 1], bytes[pos + 2]]) as usize;
            pos += 3;
            if bytes.len() - pos < len {
                return Err(CodecError::malformed(format!(
                    "field {t:#04x} declares {len} bytes, {} remain",
                    bytes.len() - pos
                )));
            }
            if !tag::is_registered(t) {
                return Err(CodecError::UnknownTag(t));
            }
            if let Some(prev) = last {
                if t == prev {
                    return Err(CodecError::NonCanonical(format!("duplicate tag {t:#04x}")));
                }
                if t < prev {
                    return Err(CodecError::NonCanonical(format!("tag {t:#04x} follows {prev:#04x}")));
                }
            }
            entries.push((t, Some(&bytes[pos..pos + len])));
            last = Some(t);
            pos += len;
        }
        Ok(Fields { entries })
    }

    pub fn has(&self, t: u8) -> bool {
        self.entries.iter().any(|(et, v)| *et == t && v.is_some())
    }

    pub fn take(&mut self, t: u8) -> Option<&'a [u8]> {
        self.entries
            .iter_mut()
            .find(|(et, _)| *et == t)
            .and_then(|(_, v)| v.take())
    }

    pub fn require(&mut self, t: u8) -> Result<&'a [u8], CodecError> {
        self.take(t)
            .ok_or_else(|| CodecError::malformed(format!("missing field {t:#04x}")))
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.entries.iter().find(|(_, v)| v.is_some()) {
            Some((t, _)) => Err(CodecError::UnknownTag(*t)),
            None => Ok(()),
        }
    }
}

pub fn read_u8(t: u8, v: &[u8]) -> Result<u8, CodecError> {
    match v {
        [b] => Ok(*b),
        _ => Err(CodecError::malformed(format!(
            "field {t:#04x}: expected 1 byte, got {}",
            v.len()
        ))),
    }
}

pub fn read_u64(t: u8, v: &[u8]) -> Result<u64, CodecError> {
    let arr: [u8; 8] = v
        .try_into()
        .map_err(|_| CodecError::malformed(format!("field {t:#04x}: expected 8 bytes, got {}", v.len())))?;
    Ok(u64::from_be_bytes(arr))
}

pub fn read_array<const N: usize>(t: u8, v: &[u8]) -> Result<[u8; N], CodecError> {
    v.try_into()
        .map_err(|_| CodecError::malformed(format!("field {t:#04x}: expected {N} bytes, got {}", v.len())))
}

pub fn read_text(t: u8, v: &[u8]) -> Result<String, CodecError> {
    let s = std::str::from_utf8(v).map_err(|_| CodecError::malformed(format!("field {t:#04x}: invalid UTF-8")))?;
    check_text(t, s)?;
    Ok(s.to_owned())
}

pub fn read_text_list(t: u8, v: &[u8]) -> Result<Vec<String>, CodecError> {
    let mut items = Vec::new();
    let mut pos = 0;
    while pos < v.len() {
        let len = v[pos] as usize;
        pos += 1;
        if v.len() - pos < len {
            return Err(CodecError::malformed(format!("field {t:#04x}: truncated list item")));
        }
        items.push(read_text(t, &v[pos..pos + len])?);
        pos += len;
    }
    if items.is_empty() {
        return Err(CodecError::invariant(format!("empty list for tag {t:#04x}")));
    }
    Ok(items)
}

/// A type with a canonical TLV encoding.
pub trait Entity: Sized {
    const KIND: EntityKind;

    /// Appends this entity's fields, in ascending tag order.
    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError>;

    /// Consumes this entity's fields. Leftover fields are rejected by the caller.
    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError>;

    fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = TlvWriter::new();
        self.write_fields(&mut w)?;
        Ok(w.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut f = Fields::parse(bytes)?;
        let v = Self::read_fields(&mut f)?;
        f.finish()?;
        Ok(v)
    }

    fn to_frame(&self) -> Result<Vec<u8>, CodecError> {
        let payload = self.encode()?;
        frame(Self::KIND, &payload).map_err(|e| CodecError::malformed(e.to_string()))
    }
}

/// Error reply codes. Values are stable on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    UnknownKind = 2,
    UnexpectedKind = 3,
    UnknownReference = 4,
    MacMismatch = 5,
    PopFailure = 6,
    RepositoryUnavailable = 7,
    CrlUnavailable = 8,
    NotFound = 9,
    DuplicateSerial = 10,
    BadSignature = 11,
    UnknownSerial = 12,
    AlreadyRevoked = 13,
    Unauthorized = 14,
    NoCrlYet = 15,
    BadUrl = 16,
    NonConformant = 17,
    Internal = 18,
}

impl ErrorCode {
    const ALL: [ErrorCode; 18] = [
        ErrorCode::Malformed,
        ErrorCode::UnknownKind,
        ErrorCode::UnexpectedKind,
        ErrorCode::UnknownReference,
        ErrorCode::MacMismatch,
        ErrorCode::PopFailure,
        ErrorCode::RepositoryUnavailable,
        ErrorCode::CrlUnavailable,
        ErrorCode::NotFound,
        ErrorCode::DuplicateSerial,
        ErrorCode::BadSignature,
        ErrorCode::UnknownSerial,
        ErrorCode::AlreadyRevoked,
        ErrorCode::Unauthorized,
        ErrorCode::NoCrlYet,
        ErrorCode::BadUrl,
        ErrorCode::NonConformant,
        ErrorCode::Internal,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| *c as u8 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "malformed",
            ErrorCode::UnknownKind => "unknown-kind",
            ErrorCode::UnexpectedKind => "unexpected-kind",
            ErrorCode::UnknownReference => "unknown-reference",
            ErrorCode::MacMismatch => "mac-mismatch",
            ErrorCode::PopFailure => "pop-failure",
            ErrorCode::RepositoryUnavailable => "repository-unavailable",
            ErrorCode::CrlUnavailable => "crl-unavailable",
            ErrorCode::NotFound => "not-found",
            ErrorCode::DuplicateSerial => "duplicate-serial",
            ErrorCode::BadSignature => "bad-signature",
            ErrorCode::UnknownSerial => "unknown-serial",
            ErrorCode::AlreadyRevoked => "already-revoked",
            ErrorCode::Unauthorized => "unauthorized",
            ErrorCode::NoCrlYet => "no-crl-yet",
            ErrorCode::BadUrl => "bad-url",
            ErrorCode::NonConformant => "non-conformant",
            ErrorCode::Internal => "internal",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub detail: Option<String>,
}

impl ErrorReply {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        let mut detail: String = detail.into();
        if detail.len() > MAX_TEXT_LEN {
            let mut cut = MAX_TEXT_LEN;
            while !detail.is_char_boundary(cut) {
                cut -= 1;
            }
            detail.truncate(cut);
        }
        ErrorReply {
            code,
            detail: (!detail.is_empty()).then_some(detail),
        }
    }
}

impl fmt::Display for ErrorReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.detail {
            Some(d) => write!(f, "{}: {}", self.code, d),
            None => write!(f, "{}", self.code),
        }
    }
}

impl Entity for ErrorReply {
    const KIND: EntityKind = EntityKind::ErrorReply;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        w.put_u8(tag::STATUS_CODE, self.code as u8)?;
        if let Some(d) = &self.detail {
            w.put_text(tag::DETAIL, d)?;
        }
        Ok(())
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let raw = read_u8(tag::STATUS_CODE, f.require(tag::STATUS_CODE)?)?;
        let code =
            ErrorCode::from_code(raw).ok_or_else(|| CodecError::malformed(format!("unknown error code {raw}")))?;
        let detail = f.take(tag::DETAIL).map(|v| read_text(tag::DETAIL, v)).transpose()?;
        Ok(ErrorReply { code, detail })
    }
}

/// Any value that can travel in a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolEntity {
    RegistrationRequest(RegistrationRequest),
    Credentials(Credentials),
    CertificateRequest(CertificateRequest),
    CertificateResponse(CertificateResponse),
    WirelessCertificate(WirelessCertificate),
    ShortLivedCertificate(ShortLivedCertificate),
    RevocationList(RevocationList),
    StatusRequest(StatusRequest),
    StatusResponse(StatusResponse),
    ErrorReply(ErrorReply),
    RevokeCommand(RevokeCommand),
    FetchCommand(FetchCommand),
}

macro_rules! dispatch {
    ($value:expr, $inner:ident => $body:expr) => {
        match $value {
            ProtocolEntity::RegistrationRequest($inner) => $body,
            ProtocolEntity::Credentials($inner) => $body,
            ProtocolEntity::CertificateRequest($inner) => $body,
            ProtocolEntity::CertificateResponse($inner) => $body,
            ProtocolEntity::WirelessCertificate($inner) => $body,
            ProtocolEntity::ShortLivedCertificate($inner) => $body,
            ProtocolEntity::RevocationList($inner) => $body,
            ProtocolEntity::StatusRequest($inner) => $body,
            ProtocolEntity::StatusResponse($inner) => $body,
            ProtocolEntity::ErrorReply($inner) => $body,
            ProtocolEntity::RevokeCommand($inner) => $body,
            ProtocolEntity::FetchCommand($inner) => $body,
        }
    };
}

impl ProtocolEntity {
    pub fn kind(&self) -> EntityKind {
        fn kind_of<E: Entity>(_: &E) -> EntityKind {
            E::KIND
        }
        dispatch!(self, e => kind_of(e))
    }
}

pub fn encode_entity(entity: &ProtocolEntity) -> Result<Vec<u8>, CodecError> {
    dispatch!(entity, e => e.encode())
}

pub fn decode_entity(bytes: &[u8], expected: EntityKind) -> Result<ProtocolEntity, CodecError> {
    Ok(match expected {
        EntityKind::RegistrationRequest => ProtocolEntity::RegistrationRequest(RegistrationRequest::decode(bytes)?),
        EntityKind::Credentials => ProtocolEntity::Credentials(Credentials::decode(bytes)?),
        EntityKind::CertificateRequest => ProtocolEntity::CertificateRequest(CertificateRequest::decode(bytes)?),
        EntityKind::CertificateResponse => ProtocolEntity::CertificateResponse(CertificateResponse::decode(bytes)?),
        EntityKind::WirelessCertificate => ProtocolEntity::WirelessCertificate(WirelessCertificate::decode(bytes)?),
        EntityKind::ShortLivedCertificate => {
            ProtocolEntity::ShortLivedCertificate(ShortLivedCertificate::decode(bytes)?)
        }
        EntityKind::RevocationList => ProtocolEntity::RevocationList(RevocationList::decode(bytes)?),
        EntityKind::StatusRequest => ProtocolEntity::StatusRequest(StatusRequest::decode(bytes)?),
        EntityKind::StatusResponse => ProtocolEntity::StatusResponse(StatusResponse::decode(bytes)?),
        EntityKind::ErrorReply => ProtocolEntity::ErrorReply(ErrorReply::decode(bytes)?),
        EntityKind::RevokeCommand => ProtocolEntity::RevokeCommand(RevokeCommand::decode(bytes)?),
        EntityKind::FetchCommand => ProtocolEntity::FetchCommand(FetchCommand::decode(bytes)?),
    })
}

/// Decodes a frame payload after checking that its kind is the one the caller expects.
pub fn decode_message(found: EntityKind, payload: &[u8], expected: EntityKind) -> Result<ProtocolEntity, CodecError> {
    if found != expected {
        return Err(CodecError::KindMismatch { expected, found });
    }
    decode_entity(payload, expected)
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("stream ended mid-frame")]
    Truncated,
    #[error("payload of {declared} bytes exceeds limit of {max}")]
    PayloadTooLarge { declared: u64, max: u64 },
    #[error("frame declares zero length")]
    Empty,
    #[error("unknown entity kind {0:#04x}")]
    UnknownKind(u8),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub fn frame(kind: EntityKind, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    let total = payload.len() as u64 + 1;
    if total > u32::MAX as u64 {
        return Err(FrameError::PayloadTooLarge {
            declared: payload.len() as u64,
            max: u32::MAX as u64 - 1,
        });
    }
    let mut out = Vec::with_capacity(payload.len() + 5);
    out.extend_from_slice(&(total as u32).to_be_bytes());
    out.push(kind.code());
    out.extend_from_slice(payload);
    Ok(out)
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FrameError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })
}

/// Reads exactly one frame. A frame of unregistered kind is consumed in full
/// before `UnknownKind` is returned, so the stream stays aligned.
pub fn deframe<R: Read>(r: &mut R, max_payload: usize) -> Result<(EntityKind, Vec<u8>), FrameError> {
    match read_frame(r, max_payload)? {
        Some(f) => Ok(f),
        None => Err(FrameError::Truncated),
    }
}

/// Like [`deframe`], but a clean end of stream at a frame boundary yields `None`.
pub fn read_frame<R: Read>(r: &mut R, max_payload: usize) -> Result<Option<(EntityKind, Vec<u8>)>, FrameError> {
    let mut len = [0u8; 4];
    let first = loop {
        match r.read(&mut len[..1]) {
            Ok(0) => return Ok(None),
            Ok(_) => break len[0],
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(FrameError::Io(e)),
        }
    };
    len[0] = first;
    read_exact_or_truncated(r, &mut len[1..])?;
    let declared = u32::from_be_bytes(len) as u64;
    if declared == 0 {
        return Err(FrameError::Empty);
    }
    if declared - 1 > max_payload as u64 {
        return Err(FrameError::PayloadTooLarge {
            declared: declared - 1,
            max: max_payload as u64,
        });
    }
    let mut kind = [0u8; 1];
    read_exact_or_truncated(r, &mut kind)?;
    let mut payload = vec![0u8; (declared - 1) as usize];
    read_exact_or_truncated(r, &mut payload)?;
    let kind = EntityKind::try_from(kind[0]).map_err(FrameError::UnknownKind)?;
    Ok(Some((kind, payload)))
}

pub fn write_frame<W: Write>(w: &mut W, kind: EntityKind, payload: &[u8]) -> Result<usize, FrameError> {
    let bytes = frame(kind, payload)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}
