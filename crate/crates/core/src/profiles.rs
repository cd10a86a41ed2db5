//! Wireless certificate profile, short-lived server certificates, conformance
//! checking and certificate builders.
//!
//! The wireless profile is a trimmed X.509v3 field set. Every field of the
//! full X.509 profile has a generation rule (what an issuer must include) and
//! a process rule (what a verifier must examine); see [`WIRELESS_PROFILE`].
//! Fields the profile marks "not recommended" or "not defined" have no
//! representation in [`WirelessCertificate`] at all.

use std::fmt;

use thiserror::Error;

use crate::codec::{self, tag, CodecError, Entity, EntityKind, Fields, TlvWriter};
use crate::crypto::{self, CurveId, KeyPair, PublicKeyInfo, SignatureAlgorithm, SignatureValue};

pub const X509_V3: u8 = 3;
pub const SHORT_LIVED_V1: u8 = 1;
pub const DEFAULT_SHORT_LIVED_LIFETIME_S: u64 = 3600;
pub const DEFAULT_SHORT_LIVED_MAX_S: u64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KeyUsage(pub u8);

impl KeyUsage {
    pub const DIGITAL_SIGNATURE: KeyUsage = KeyUsage(1 << 0);
    pub const KEY_ENCIPHERMENT: KeyUsage = KeyUsage(1 << 1);
    pub const KEY_CERT_SIGN: KeyUsage = KeyUsage(1 << 2);
    pub const CRL_SIGN: KeyUsage = KeyUsage(1 << 3);
    const DEFINED: u8 = 0b1111;

    pub fn contains(self, other: KeyUsage) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for KeyUsage {
    type Output = KeyUsage;

    fn bitor(self, rhs: KeyUsage) -> KeyUsage {
        KeyUsage(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ExtendedKeyUsage(pub u8);

impl ExtendedKeyUsage {
    pub const CLIENT_AUTH: ExtendedKeyUsage = ExtendedKeyUsage(1 << 0);
    pub const SERVER_AUTH: ExtendedKeyUsage = ExtendedKeyUsage(1 << 1);
    pub const OCSP_SIGNING: ExtendedKeyUsage = ExtendedKeyUsage(1 << 2);
    const DEFINED: u8 = 0b111;

    pub fn contains(self, other: ExtendedKeyUsage) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for ExtendedKeyUsage {
    type Output = ExtendedKeyUsage;

    fn bitor(self, rhs: ExtendedKeyUsage) -> ExtendedKeyUsage {
        ExtendedKeyUsage(self.0 | rhs.0)
    }
}

/// Optional extension fields of the wireless profile.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extensions {
    pub authority_key_id: Option<[u8; 20]>,
    pub subject_key_id: Option<[u8; 20]>,
    pub key_usage: Option<KeyUsage>,
    pub certificate_policy: Option<String>,
    pub subject_alt_names: Option<Vec<String>>,
    pub issuer_alt_names: Option<Vec<String>>,
    pub extended_key_usage: Option<ExtendedKeyUsage>,
    pub crl_distribution_points: Option<String>,
    pub domain_information: Option<String>,
    pub authority_info_access: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirelessCertificate {
    pub version: u8,
    pub serial: u64,
    pub signature_algorithm: SignatureAlgorithm,
    pub issuer: String,
    pub valid_not_before: u64,
    pub valid_not_after: u64,
    pub subject: String,
    pub public_key_info: PublicKeyInfo,
    pub extensions: Extensions,
    /// Signature octets; the algorithm is `signature_algorithm`.
    pub signature: Vec<u8>,
}

impl WirelessCertificate {
    /// Canonical encoding of every field except the signature value.
    pub fn to_be_signed(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = TlvWriter::new();
        self.write_tbs(&mut w)?;
        Ok(w.finish())
    }

    pub fn signature_value(&self) -> SignatureValue {
        SignatureValue {
            algorithm: self.signature_algorithm,
            bytes: self.signature.clone(),
        }
    }

    /// True iff the signature verifies under `issuer_key` over the to-be-signed bytes.
    pub fn verify_signature(&self, issuer_key: &PublicKeyInfo) -> bool {
        match self.to_be_signed() {
            Ok(tbs) => crypto::verifies(&tbs, &self.signature_value(), issuer_key),
            Err(_) => false,
        }
    }

    pub fn is_present(&self, field: ProfileField) -> bool {
        use ProfileField::*;
        let e = &self.extensions;
        match field {
            Version | SerialNumber | Signature | Issuer | Validity | Subject | SubjectPublicKeyInfo => true,
            AuthorityKeyIdentifier => e.authority_key_id.is_some(),
            SubjectKeyIdentifier => e.subject_key_id.is_some(),
            KeyUsage => e.key_usage.is_some(),
            CertificatePolicy => e.certificate_policy.is_some(),
            SubjectAlternativeNames => e.subject_alt_names.is_some(),
            IssuerAlternativeNames => e.issuer_alt_names.is_some(),
            ExtendedKeyUsage => e.extended_key_usage.is_some(),
            CrlDistributionPoints => e.crl_distribution_points.is_some(),
            DomainInformation => e.domain_information.is_some(),
            AuthorityInformationAccess => e.authority_info_access.is_some(),
            IssuerUniqueIdentifier
            | SubjectUniqueIdentifier
            | PrivateKeyUsagePeriod
            | PolicyMapping
            | SubjectDirectoryAttributes
            | BasicConstraints
            | NameConstraints
            | PolicyConstraints => false,
        }
    }

    /// Clears one optional extension. Returns false for fields that cannot be removed.
    pub fn remove_field(&mut self, field: ProfileField) -> bool {
        use ProfileField::*;
        let e = &mut self.extensions;
        match field {
            AuthorityKeyIdentifier => e.authority_key_id.take().is_some(),
            SubjectKeyIdentifier => e.subject_key_id.take().is_some(),
            KeyUsage => e.key_usage.take().is_some(),
            CertificatePolicy => e.certificate_policy.take().is_some(),
            SubjectAlternativeNames => e.subject_alt_names.take().is_some(),
            IssuerAlternativeNames => e.issuer_alt_names.take().is_some(),
            ExtendedKeyUsage => e.extended_key_usage.take().is_some(),
            CrlDistributionPoints => e.crl_distribution_points.take().is_some(),
            DomainInformation => e.domain_information.take().is_some(),
            AuthorityInformationAccess => e.authority_info_access.take().is_some(),
            _ => false,
        }
    }

    fn check_invariants(&self) -> Result<(), CodecError> {
        if self.version != X509_V3 {
            return Err(CodecError::invariant(format!("version {} (expected 3)", self.version)));
        }
        if self.valid_not_before >= self.valid_not_after {
            return Err(CodecError::invariant("valid_not_before must precede valid_not_after"));
        }
        if self.public_key_info.key.len() != self.public_key_info.curve.public_key_len() {
            return Err(CodecError::invariant("public key length does not match its curve"));
        }
        Ok(())
    }

    fn write_tbs(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.check_invariants()?;
        let e = &self.extensions;
        w.put_u8(tag::VERSION, self.version)?;
        w.put_u64(tag::SERIAL, self.serial)?;
        w.put_u8(tag::SIGNATURE_ALGORITHM, self.signature_algorithm.code())?;
        w.put_text(tag::ISSUER, &self.issuer)?;
        w.put_u64(tag::VALID_NOT_BEFORE, self.valid_not_before)?;
        w.put_u64(tag::VALID_NOT_AFTER, self.valid_not_after)?;
        w.put_text(tag::SUBJECT, &self.subject)?;
        w.put(tag::PUBLIC_KEY_INFO, &self.public_key_info.to_bytes())?;
        if let Some(v) = &e.authority_key_id {
            w.put(tag::AUTHORITY_KEY_ID, v)?;
        }
        if let Some(v) = &e.subject_key_id {
            w.put(tag::SUBJECT_KEY_ID, v)?;
        }
        if let Some(v) = e.key_usage {
            w.put_u8(tag::KEY_USAGE, v.0)?;
        }
        if let Some(v) = &e.certificate_policy {
            w.put_text(tag::CERTIFICATE_POLICY, v)?;
        }
        if let Some(v) = &e.subject_alt_names {
            w.put_text_list(tag::SUBJECT_ALT_NAMES, v)?;
        }
        if let Some(v) = &e.issuer_alt_names {
            w.put_text_list(tag::ISSUER_ALT_NAMES, v)?;
        }
        if let Some(v) = e.extended_key_usage {
            w.put_u8(tag::EXTENDED_KEY_USAGE, v.0)?;
        }
        if let Some(v) = &e.crl_distribution_points {
            w.put_text(tag::CRL_DISTRIBUTION_POINTS, v)?;
        }
        if let Some(v) = &e.domain_information {
            w.put_text(tag::DOMAIN_INFORMATION, v)?;
        }
        if let Some(v) = &e.authority_info_access {
            w.put_text(tag::AUTHORITY_INFO_ACCESS, v)?;
        }
        Ok(())
    }
}

pub(crate) fn read_signature_algorithm(v: &[u8]) -> Result<SignatureAlgorithm, CodecError> {
    let code = codec::read_u8(tag::SIGNATURE_ALGORITHM, v)?;
    SignatureAlgorithm::from_code(code)
        .ok_or_else(|| CodecError::malformed(format!("unknown signature algorithm {code}")))
}

pub(crate) fn read_public_key_info(v: &[u8]) -> Result<PublicKeyInfo, CodecError> {
    PublicKeyInfo::from_bytes(v).ok_or_else(|| CodecError::malformed("bad public-key-info"))
}

pub(crate) fn read_signature_bytes(v: &[u8]) -> Result<Vec<u8>, CodecError> {
    if v.is_empty() {
        return Err(CodecError::malformed("empty signature value"));
    }
    Ok(v.to_vec())
}

impl Entity for WirelessCertificate {
    const KIND: EntityKind = EntityKind::WirelessCertificate;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.write_tbs(w)?;
        if self.signature.is_empty() {
            return Err(CodecError::invariant("certificate is unsigned"));
        }
        w.put(tag::SIGNATURE_VALUE, &self.signature)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let version = codec::read_u8(tag::VERSION, f.require(tag::VERSION)?)?;
        let serial = codec::read_u64(tag::SERIAL, f.require(tag::SERIAL)?)?;
        let signature_algorithm = read_signature_algorithm(f.require(tag::SIGNATURE_ALGORITHM)?)?;
        let issuer = codec::read_text(tag::ISSUER, f.require(tag::ISSUER)?)?;
        let valid_not_before = codec::read_u64(tag::VALID_NOT_BEFORE, f.require(tag::VALID_NOT_BEFORE)?)?;
        let valid_not_after = codec::read_u64(tag::VALID_NOT_AFTER, f.require(tag::VALID_NOT_AFTER)?)?;
        let subject = codec::read_text(tag::SUBJECT, f.require(tag::SUBJECT)?)?;
        let public_key_info = read_public_key_info(f.require(tag::PUBLIC_KEY_INFO)?)?;

        let key_usage = f
            .take(tag::KEY_USAGE)
            .map(|v| {
                let b = codec::read_u8(tag::KEY_USAGE, v)?;
                if b & !KeyUsage::DEFINED != 0 {
                    return Err(CodecError::malformed("undefined key usage bits"));
                }
                Ok(KeyUsage(b))
            })
            .transpose()?;
        let extended_key_usage = f
            .take(tag::EXTENDED_KEY_USAGE)
            .map(|v| {
                let b = codec::read_u8(tag::EXTENDED_KEY_USAGE, v)?;
                if b & !ExtendedKeyUsage::DEFINED != 0 {
                    return Err(CodecError::malformed("undefined extended key usage bits"));
                }
                Ok(ExtendedKeyUsage(b))
            })
            .transpose()?;
        let text = |f: &mut Fields<'_>, t: u8| f.take(t).map(|v| codec::read_text(t, v)).transpose();
        let list = |f: &mut Fields<'_>, t: u8| f.take(t).map(|v| codec::read_text_list(t, v)).transpose();

        let extensions = Extensions {
            authority_key_id: f
                .take(tag::AUTHORITY_KEY_ID)
                .map(|v| codec::read_array::<20>(tag::AUTHORITY_KEY_ID, v))
                .transpose()?,
            subject_key_id: f
                .take(tag::SUBJECT_KEY_ID)
                .map(|v| codec::read_array::<20>(tag::SUBJECT_KEY_ID, v))
                .transpose()?,
            key_usage,
            certificate_policy: text(f, tag::CERTIFICATE_POLICY)?,
            subject_alt_names: list(f, tag::SUBJECT_ALT_NAMES)?,
            issuer_alt_names: list(f, tag::ISSUER_ALT_NAMES)?,
            extended_key_usage,
            crl_distribution_points: text(f, tag::CRL_DISTRIBUTION_POINTS)?,
            domain_information: text(f, tag::DOMAIN_INFORMATION)?,
            authority_info_access: text(f, tag::AUTHORITY_INFO_ACCESS)?,
        };
        let signature = read_signature_bytes(f.require(tag::SIGNATURE_VALUE)?)?;
        let cert = WirelessCertificate {
            version,
            serial,
            signature_algorithm,
            issuer,
            valid_not_before,
            valid_not_after,
            subject,
            public_key_info,
            extensions,
            signature,
        };
        cert.check_invariants()?;
        Ok(cert)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PublicKeyType {
    Ecdh = 1,
}

/// The nine-field server certificate: version, signature algorithm, issuer,
/// validity pair, subject, key type, curve parameter and signature. The ECDH
/// public point travels in the public-key field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortLivedCertificate {
    pub signature_algorithm: SignatureAlgorithm,
    pub issuer: String,
    pub valid_not_before: u64,
    pub valid_not_after: u64,
    pub subject: String,
    pub public_key_type: PublicKeyType,
    pub parameter_specifier: CurveId,
    pub public_key: Vec<u8>,
    pub signature: Vec<u8>,
}

impl ShortLivedCertificate {
    pub fn lifetime(&self) -> u64 {
        self.valid_not_after - self.valid_not_before
    }

    pub fn public_key_info(&self) -> PublicKeyInfo {
        PublicKeyInfo::new(self.parameter_specifier, self.public_key.clone())
    }

    pub fn to_be_signed(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = TlvWriter::new();
        self.write_with_signature(&mut w, false)?;
        Ok(w.finish())
    }

    pub fn verify_signature(&self, issuer_key: &PublicKeyInfo) -> bool {
        let sig = SignatureValue {
            algorithm: self.signature_algorithm,
            bytes: self.signature.clone(),
        };
        match self.to_be_signed() {
            Ok(tbs) => crypto::verifies(&tbs, &sig, issuer_key),
            Err(_) => false,
        }
    }

    fn check_invariants(&self) -> Result<(), CodecError> {
        if self.valid_not_before >= self.valid_not_after {
            return Err(CodecError::invariant("valid_not_before must precede valid_not_after"));
        }
        if self.public_key.len() != self.parameter_specifier.public_key_len() {
            return Err(CodecError::invariant("public key length does not match its curve"));
        }
        Ok(())
    }

    fn write_with_signature(&self, w: &mut TlvWriter, with_signature: bool) -> Result<(), CodecError> {
        self.check_invariants()?;
        w.put_u8(tag::VERSION, SHORT_LIVED_V1)?;
        w.put_u8(tag::SIGNATURE_ALGORITHM, self.signature_algorithm.code())?;
        w.put_text(tag::ISSUER, &self.issuer)?;
        w.put_u64(tag::VALID_NOT_BEFORE, self.valid_not_before)?;
        w.put_u64(tag::VALID_NOT_AFTER, self.valid_not_after)?;
        w.put_text(tag::SUBJECT, &self.subject)?;
        w.put(tag::PUBLIC_KEY_INFO, &self.public_key)?;
        if with_signature {
            if self.signature.is_empty() {
                return Err(CodecError::invariant("certificate is unsigned"));
            }
            w.put(tag::SIGNATURE_VALUE, &self.signature)?;
        }
        w.put_u8(tag::PUBLIC_KEY_TYPE, self.public_key_type as u8)?;
        w.put_u8(tag::PARAMETER_SPECIFIER, self.parameter_specifier.code())
    }
}

impl Entity for ShortLivedCertificate {
    const KIND: EntityKind = EntityKind::ShortLivedCertificate;

    fn write_fields(&self, w: &mut TlvWriter) -> Result<(), CodecError> {
        self.write_with_signature(w, true)
    }

    fn read_fields(f: &mut Fields<'_>) -> Result<Self, CodecError> {
        let version = codec::read_u8(tag::VERSION, f.require(tag::VERSION)?)?;
        if version != SHORT_LIVED_V1 {
            return Err(CodecError::malformed(format!("short-lived version {version}")));
        }
        let signature_algorithm = read_signature_algorithm(f.require(tag::SIGNATURE_ALGORITHM)?)?;
        let issuer = codec::read_text(tag::ISSUER, f.require(tag::ISSUER)?)?;
        let valid_not_before = codec::read_u64(tag::VALID_NOT_BEFORE, f.require(tag::VALID_NOT_BEFORE)?)?;
        let valid_not_after = codec::read_u64(tag::VALID_NOT_AFTER, f.require(tag::VALID_NOT_AFTER)?)?;
        let subject = codec::read_text(tag::SUBJECT, f.require(tag::SUBJECT)?)?;
        let public_key = f.require(tag::PUBLIC_KEY_INFO)?.to_vec();
        let signature = read_signature_bytes(f.require(tag::SIGNATURE_VALUE)?)?;
        let key_type = codec::read_u8(tag::PUBLIC_KEY_TYPE, f.require(tag::PUBLIC_KEY_TYPE)?)?;
        if key_type != PublicKeyType::Ecdh as u8 {
            return Err(CodecError::malformed(format!("public key type {key_type}")));
        }
        let curve = codec::read_u8(tag::PARAMETER_SPECIFIER, f.require(tag::PARAMETER_SPECIFIER)?)?;
        let parameter_specifier =
            CurveId::from_code(curve).map_err(|_| CodecError::malformed(format!("unknown curve {curve}")))?;
        let cert = ShortLivedCertificate {
            signature_algorithm,
            issuer,
            valid_not_before,
            valid_not_after,
            subject,
            public_key_type: PublicKeyType::Ecdh,
            parameter_specifier,
            public_key,
            signature,
        };
        cert.check_invariants()?;
        Ok(cert)
    }
}

/// Rows of the full X.509 field list, in profile order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProfileField {
    Version,
    SerialNumber,
    Signature,
    Issuer,
    Validity,
    Subject,
    SubjectPublicKeyInfo,
    IssuerUniqueIdentifier,
    SubjectUniqueIdentifier,
    AuthorityKeyIdentifier,
    SubjectKeyIdentifier,
    KeyUsage,
    PrivateKeyUsagePeriod,
    CertificatePolicy,
    PolicyMapping,
    SubjectAlternativeNames,
    IssuerAlternativeNames,
    SubjectDirectoryAttributes,
    BasicConstraints,
    NameConstraints,
    PolicyConstraints,
    ExtendedKeyUsage,
    CrlDistributionPoints,
    DomainInformation,
    AuthorityInformationAccess,
}

impl ProfileField {
    pub fn name(self) -> &'static str {
        use ProfileField::*;
        match self {
            Version => "version",
            SerialNumber => "serial_number",
            Signature => "signature",
            Issuer => "issuer",
            Validity => "validity",
            Subject => "subject",
            SubjectPublicKeyInfo => "subject_public_key_info",
            IssuerUniqueIdentifier => "issuer_unique_identifier",
            SubjectUniqueIdentifier => "subject_unique_identifier",
            AuthorityKeyIdentifier => "authority_key_id",
            SubjectKeyIdentifier => "subject_key_id",
            KeyUsage => "key_usage",
            PrivateKeyUsagePeriod => "private_key_usage_period",
            CertificatePolicy => "certificate_policy",
            PolicyMapping => "policy_mapping",
            SubjectAlternativeNames => "subject_alt_names",
            IssuerAlternativeNames => "issuer_alt_names",
            SubjectDirectoryAttributes => "subject_directory_attributes",
            BasicConstraints => "basic_constraints",
            NameConstraints => "name_constraints",
            PolicyConstraints => "policy_constraints",
            ExtendedKeyUsage => "extended_key_usage",
            CrlDistributionPoints => "crl_distribution_points",
            DomainInformation => "domain_information",
            AuthorityInformationAccess => "authority_info_access",
        }
    }
}

impl fmt::Display for ProfileField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Requirement {
    /// m
    Mandatory,
    /// o
    Optional,
    /// x
    NotRecommended,
    /// -
    NotDefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProfileRule {
    pub field: ProfileField,
    pub generation: Requirement,
    pub process: Requirement,
}

const fn rule(field: ProfileField, generation: Requirement, process: Requirement) -> ProfileRule {
    ProfileRule {
        field,
        generation,
        process,
    }
}

/// The wireless X.509 profile for mobile phones, row for row.
pub const WIRELESS_PROFILE: [ProfileRule; 25] = {
    use ProfileField as F;
    use Requirement::{Mandatory as M, NotDefined as U, NotRecommended as X, Optional as O};
    [
        rule(F::Version, M, M),
        rule(F::SerialNumber, M, M),
        rule(F::Signature, M, M),
        rule(F::Issuer, M, M),
        rule(F::Validity, M, M),
        rule(F::Subject, M, M),
        rule(F::SubjectPublicKeyInfo, M, M),
        rule(F::IssuerUniqueIdentifier, X, X),
        rule(F::SubjectUniqueIdentifier, X, X),
        rule(F::AuthorityKeyIdentifier, M, O),
        rule(F::SubjectKeyIdentifier, M, O),
        rule(F::KeyUsage, M, M),
        rule(F::PrivateKeyUsagePeriod, X, X),
        rule(F::CertificatePolicy, M, M),
        rule(F::PolicyMapping, U, U),
        rule(F::SubjectAlternativeNames, M, M),
        rule(F::IssuerAlternativeNames, O, M),
        rule(F::SubjectDirectoryAttributes, X, X),
        rule(F::BasicConstraints, X, X),
        rule(F::NameConstraints, U, U),
        rule(F::PolicyConstraints, U, U),
        rule(F::ExtendedKeyUsage, O, M),
        rule(F::CrlDistributionPoints, M, O),
        rule(F::DomainInformation, O, O),
        rule(F::AuthorityInformationAccess, M, O),
    ]
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Generation,
    Process,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationRule {
    MissingMandatory,
    ForbiddenPresent,
    UndefinedPresent,
    /// Present field whose content fails structural validation (process mode).
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: ProfileField,
    pub rule: ViolationRule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConformanceReport {
    pub mode: Mode,
    pub violations: Vec<Violation>,
}

impl ConformanceReport {
    pub fn is_conformant(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, field: ProfileField, rule: ViolationRule) -> bool {
        self.violations.iter().any(|v| v.field == field && v.rule == rule)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "{:?}: conformant", self.mode);
        }
        write!(f, "{:?}:", self.mode)?;
        for v in &self.violations {
            write!(f, " [{} {:?}: {}]", v.field, v.rule, v.detail)?;
        }
        Ok(())
    }
}

/// Applies one column of the rule table to a presence predicate.
pub fn check_presence(mode: Mode, present: impl Fn(ProfileField) -> bool) -> ConformanceReport {
    let mut violations = Vec::new();
    for row in WIRELESS_PROFILE {
        let req = match mode {
            Mode::Generation => row.generation,
            Mode::Process => row.process,
        };
        let here = present(row.field);
        let (rule, detail) = match (req, here) {
            (Requirement::Mandatory, false) => (ViolationRule::MissingMandatory, "required field absent"),
            (Requirement::NotRecommended, true) => (ViolationRule::ForbiddenPresent, "field is not recommended"),
            (Requirement::NotDefined, true) => (ViolationRule::UndefinedPresent, "field is not defined"),
            _ => continue,
        };
        violations.push(Violation {
            field: row.field,
            rule,
            detail: detail.to_owned(),
        });
    }
    ConformanceReport { mode, violations }
}

pub fn check_generation(cert: &WirelessCertificate) -> ConformanceReport {
    check_presence(Mode::Generation, |f| cert.is_present(f))
}

pub fn check_process(cert: &WirelessCertificate) -> ConformanceReport {
    let mut report = check_presence(Mode::Process, |f| cert.is_present(f));
    let e = &cert.extensions;
    for (field, url) in [
        (ProfileField::CrlDistributionPoints, &e.crl_distribution_points),
        (ProfileField::AuthorityInformationAccess, &e.authority_info_access),
    ] {
        if let Some(url) = url {
            if !looks_like_url(url) {
                report.violations.push(Violation {
                    field,
                    rule: ViolationRule::Malformed,
                    detail: format!("not a URL: {url:?}"),
                });
            }
        }
    }
    if let (Some(aki), Some(ski)) = (&e.authority_key_id, &e.subject_key_id) {
        if aki == &[0u8; 20] || ski == &[0u8; 20] {
            report.violations.push(Violation {
                field: ProfileField::AuthorityKeyIdentifier,
                rule: ViolationRule::Malformed,
                detail: "all-zero key identifier".to_owned(),
            });
        }
    }
    if let Some(d) = &e.domain_information {
        if d.trim().is_empty() {
            report.violations.push(Violation {
                field: ProfileField::DomainInformation,
                rule: ViolationRule::Malformed,
                detail: "blank domain information".to_owned(),
            });
        }
    }
    report
}

fn looks_like_url(s: &str) -> bool {
    match s.split_once("://") {
        Some((scheme, rest)) => {
            !scheme.is_empty()
                && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
                && !rest.is_empty()
                && !rest.chars().any(char::is_whitespace)
        }
        None => false,
    }
}

pub trait HasValidity {
    fn not_before(&self) -> u64;
    fn not_after(&self) -> u64;
}

impl HasValidity for WirelessCertificate {
    fn not_before(&self) -> u64 {
        self.valid_not_before
    }

    fn not_after(&self) -> u64 {
        self.valid_not_after
    }
}

impl HasValidity for ShortLivedCertificate {
    fn not_before(&self) -> u64 {
        self.valid_not_before
    }

    fn not_after(&self) -> u64 {
        self.valid_not_after
    }
}

/// Inclusive at both ends.
pub fn validate_period(cert: &impl HasValidity, now: u64) -> bool {
    cert.not_before() <= now && now <= cert.not_after()
}

/// Signing identity plus the URLs it stamps into every certificate.
#[derive(Debug, Clone)]
pub struct CaIdentity {
    pub name: String,
    pub key: KeyPair,
    pub crl_distribution_point: String,
    pub authority_info_access: String,
    pub certificate_policy: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateTemplate {
    pub subject: String,
    pub not_before: u64,
    pub validity_s: u64,
    pub key_usage: Option<KeyUsage>,
    pub certificate_policy: Option<String>,
    pub subject_alt_names: Option<Vec<String>>,
    pub issuer_alt_names: Option<Vec<String>>,
    pub extended_key_usage: Option<ExtendedKeyUsage>,
    pub domain_information: Option<String>,
    /// Fields requested beyond the typed ones; only useful to be refused.
    pub extra_fields: Vec<ProfileField>,
}

impl CertificateTemplate {
    pub fn new(subject: impl Into<String>, not_before: u64, validity_s: u64) -> Self {
        CertificateTemplate {
            subject: subject.into(),
            not_before,
            validity_s,
            key_usage: None,
            certificate_policy: None,
            subject_alt_names: None,
            issuer_alt_names: None,
            extended_key_usage: None,
            domain_information: None,
            extra_fields: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("template is not conformant: {0}")]
    NonConformantTemplate(ConformanceReport),
    #[error("signing failed: {0}")]
    SigningFailure(String),
    #[error("lifetime {requested}s exceeds maximum {max}s")]
    LifetimeTooLong { requested: u64, max: u64 },
    #[error("invalid certificate content: {0}")]
    Invalid(#[from] CodecError),
}

pub fn build_certificate(
    template: &CertificateTemplate,
    subject_key: &PublicKeyInfo,
    ca: &CaIdentity,
    serial: u64,
) -> Result<WirelessCertificate, ProfileError> {
    let valid_not_after = template
        .not_before
        .checked_add(template.validity_s)
        .ok_or_else(|| ProfileError::Invalid(CodecError::invariant("validity overflows")))?;
    let mut cert = WirelessCertificate {
        version: X509_V3,
        serial,
        signature_algorithm: SignatureAlgorithm::EcdsaSha256,
        issuer: ca.name.clone(),
        valid_not_before: template.not_before,
        valid_not_after,
        subject: template.subject.clone(),
        public_key_info: subject_key.clone(),
        extensions: Extensions {
            authority_key_id: Some(ca.key.public_key().key_id()),
            subject_key_id: Some(subject_key.key_id()),
            key_usage: Some(template.key_usage.unwrap_or(KeyUsage::DIGITAL_SIGNATURE)),
            certificate_policy: Some(
                template
                    .certificate_policy
                    .clone()
                    .unwrap_or_else(|| ca.certificate_policy.clone()),
            ),
            subject_alt_names: Some(
                template
                    .subject_alt_names
                    .clone()
                    .unwrap_or_else(|| vec![template.subject.clone()]),
            ),
            issuer_alt_names: template.issuer_alt_names.clone(),
            extended_key_usage: template.extended_key_usage,
            crl_distribution_points: Some(ca.crl_distribution_point.clone()),
            domain_information: template.domain_information.clone(),
            authority_info_access: Some(ca.authority_info_access.clone()),
        },
        signature: Vec::new(),
    };
    let report = check_presence(Mode::Generation, |f| {
        cert.is_present(f) || template.extra_fields.contains(&f)
    });
    if !report.is_conformant() {
        return Err(ProfileError::NonConformantTemplate(report));
    }
    let tbs = cert.to_be_signed()?;
    let sig = crypto::sign(&tbs, &ca.key).map_err(|e| ProfileError::SigningFailure(e.to_string()))?;
    cert.signature_algorithm = sig.algorithm;
    cert.signature = sig.bytes;
    Ok(cert)
}

pub fn build_short_lived(
    subject: &str,
    ecdh_public: &PublicKeyInfo,
    not_before: u64,
    lifetime_s: u64,
    max_lifetime_s: u64,
    ca: &CaIdentity,
) -> Result<ShortLivedCertificate, ProfileError> {
    if lifetime_s > max_lifetime_s {
        return Err(ProfileError::LifetimeTooLong {
            requested: lifetime_s,
            max: max_lifetime_s,
        });
    }
    let valid_not_after = not_before
        .checked_add(lifetime_s)
        .ok_or_else(|| ProfileError::Invalid(CodecError::invariant("validity overflows")))?;
    let mut cert = ShortLivedCertificate {
        signature_algorithm: SignatureAlgorithm::EcdsaSha256,
        issuer: ca.name.clone(),
        valid_not_before: not_before,
        valid_not_after,
        subject: subject.to_owned(),
        public_key_type: PublicKeyType::Ecdh,
        parameter_specifier: ecdh_public.curve,
        public_key: ecdh_public.key.clone(),
        signature: Vec::new(),
    };
    let tbs = cert.to_be_signed()?;
    let sig = crypto::sign(&tbs, &ca.key).map_err(|e| ProfileError::SigningFailure(e.to_string()))?;
    cert.signature = sig.bytes;
    Ok(cert)
}
