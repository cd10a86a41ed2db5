//! Shared generators, fixtures and fakes for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use proptest::prelude::*;
use proptest::{collection, option};

use wpki::authority::{RevocationList, RevocationReason, RevokeAction, RevokeCommand, RevokedEntry};
use wpki::codec::{EntityKind, ErrorCode, ErrorReply, ProtocolEntity};
use wpki::crypto::{CurveId, MacKey, MacTag, PublicKeyInfo, SignatureAlgorithm, SignatureValue};
use wpki::enrollment::{CertificateRequest, CertificateResponse, Credentials, RegistrationRequest};
use wpki::ocsp::{CertStatus, StatusRequest, StatusResponse, StatusTarget};
use wpki::profiles::{
    ExtendedKeyUsage, Extensions, KeyUsage, ProfileField, PublicKeyType, Requirement, ShortLivedCertificate,
    ViolationRule, WirelessCertificate,
};
use wpki::repository::{CertUrl, Directory, FetchCommand, RepositoryError};

pub fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ._:/=-]{1,24}|[a-zé漢ü]{1,8}"
}

pub fn bytes(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u8>> {
    collection::vec(any::<u8>(), len)
}

pub fn curve() -> impl Strategy<Value = CurveId> {
    prop_oneof![Just(CurveId::Sect163k1), Just(CurveId::P256)]
}

pub fn public_key_info() -> impl Strategy<Value = PublicKeyInfo> {
    prop_oneof![
        Just(CurveId::Sect163k1),
        Just(CurveId::P256),
        Just(CurveId::Rsa1024Placeholder)
    ]
    .prop_flat_map(|c| bytes(c.public_key_len()..c.public_key_len() + 1).prop_map(move |k| PublicKeyInfo::new(c, k)))
}

pub fn validity() -> impl Strategy<Value = (u64, u64)> {
    (0u64..u64::MAX / 2, 1u64..1 << 40).prop_map(|(nb, life)| (nb, nb + life))
}

pub fn extensions() -> impl Strategy<Value = Extensions> {
    (
        option::of(any::<[u8; 20]>()),
        option::of(any::<[u8; 20]>()),
        option::of((0u8..16).prop_map(KeyUsage)),
        option::of(text()),
        option::of(collection::vec(text(), 1..4)),
        option::of(collection::vec(text(), 1..4)),
        option::of((0u8..8).prop_map(ExtendedKeyUsage)),
        option::of(text()),
        option::of(text()),
        option::of(text()),
    )
        .prop_map(|(aki, ski, ku, cp, san, ian, eku, crl, dom, aia)| Extensions {
            authority_key_id: aki,
            subject_key_id: ski,
            key_usage: ku,
            certificate_policy: cp,
            subject_alt_names: san,
            issuer_alt_names: ian,
            extended_key_usage: eku,
            crl_distribution_points: crl,
            domain_information: dom,
            authority_info_access: aia,
        })
}

pub fn wireless_certificate() -> impl Strategy<Value = WirelessCertificate> {
    (
        any::<u64>(),
        text(),
        validity(),
        text(),
        public_key_info(),
        extensions(),
        bytes(1..80),
    )
        .prop_map(
            |(serial, issuer, (nb, na), subject, pki, extensions, signature)| WirelessCertificate {
                version: 3,
                serial,
                signature_algorithm: SignatureAlgorithm::EcdsaSha256,
                issuer,
                valid_not_before: nb,
                valid_not_after: na,
                subject,
                public_key_info: pki,
                extensions,
                signature,
            },
        )
}

pub fn short_lived_certificate() -> impl Strategy<Value = ShortLivedCertificate> {
    (
        text(),
        validity(),
        text(),
        curve().prop_flat_map(|c| bytes(c.public_key_len()..c.public_key_len() + 1).prop_map(move |k| (c, k))),
        bytes(1..80),
    )
        .prop_map(
            |(issuer, (nb, na), subject, (curve, key), signature)| ShortLivedCertificate {
                signature_algorithm: SignatureAlgorithm::EcdsaSha256,
                issuer,
                valid_not_before: nb,
                valid_not_after: na,
                subject,
                public_key_type: PublicKeyType::Ecdh,
                parameter_specifier: curve,
                public_key: key,
                signature,
            },
        )
}

pub fn reason() -> impl Strategy<Value = RevocationReason> {
    prop_oneof![
        Just(RevocationReason::Unspecified),
        Just(RevocationReason::KeyCompromise),
        Just(RevocationReason::Superseded)
    ]
}

pub fn revocation_list() -> impl Strategy<Value = RevocationList> {
    (
        text(),
        validity(),
        collection::btree_map(any::<u64>(), (any::<u64>(), reason()), 0..40),
        bytes(1..80),
    )
        .prop_map(|(issuer, (this, next), entries, signature)| RevocationList {
            signature_algorithm: SignatureAlgorithm::EcdsaSha256,
            issuer,
            this_update: this,
            next_update: next,
            entries: entries
                .into_iter()
                .map(|(serial, (revoked_at, reason))| RevokedEntry {
                    serial,
                    revoked_at,
                    reason,
                })
                .collect(),
            signature,
        })
}

pub fn cert_url() -> impl Strategy<Value = CertUrl> {
    ("[a-z0-9][a-z0-9.-]{0,20}", any::<u16>(), any::<u64>()).prop_map(|(h, p, s)| CertUrl::new(h, p, s))
}

pub fn credentials() -> impl Strategy<Value = Credentials> {
    ("u[0-9]{8}", "[A-Za-z0-9]{1,32}", "[A-Z0-9]{16}").prop_map(|(username, password, random_code)| Credentials {
        username,
        password,
        random_code,
    })
}

pub fn certificate_request() -> impl Strategy<Value = CertificateRequest> {
    (text(), text(), public_key_info(), bytes(1..80), any::<[u8; 32]>()).prop_map(
        |(reference_number, subject, public_key_info, sig, mac)| CertificateRequest {
            reference_number,
            subject,
            public_key_info,
            pop_signature: SignatureValue {
                algorithm: SignatureAlgorithm::EcdsaSha256,
                bytes: sig,
            },
            request_mac: MacTag(mac),
        },
    )
}

pub fn status_status() -> impl Strategy<Value = CertStatus> {
    prop_oneof![
        Just(CertStatus::Good),
        Just(CertStatus::Revoked),
        Just(CertStatus::Unknown)
    ]
}

pub fn status_response() -> impl Strategy<Value = StatusResponse> {
    (
        status_status(),
        any::<u64>(),
        any::<u64>(),
        any::<[u8; 16]>(),
        option::of(text()),
        bytes(1..80),
    )
        .prop_map(
            |(status, serial, produced_at, nonce, detail, signature)| StatusResponse {
                status,
                serial,
                produced_at,
                nonce,
                failure_detail: if status == CertStatus::Good { None } else { detail },
                signature_algorithm: SignatureAlgorithm::EcdsaSha256,
                signature,
            },
        )
}

pub fn status_request() -> impl Strategy<Value = StatusRequest> {
    (
        prop_oneof![
            wireless_certificate().prop_map(StatusTarget::Certificate),
            short_lived_certificate().prop_map(StatusTarget::ShortLived),
            cert_url().prop_map(StatusTarget::Url),
        ],
        any::<[u8; 16]>(),
    )
        .prop_map(|(target, nonce)| StatusRequest { target, nonce })
}

pub fn revoke_command() -> impl Strategy<Value = RevokeCommand> {
    (option::of((any::<u64>(), reason())), any::<[u8; 32]>()).prop_map(|(r, mac)| RevokeCommand {
        action: match r {
            Some((serial, reason)) => RevokeAction::Revoke { serial, reason },
            None => RevokeAction::PublishCrl,
        },
        mac: MacTag(mac),
    })
}

pub fn error_reply() -> impl Strategy<Value = ErrorReply> {
    (1u8..=18, option::of(text())).prop_map(|(c, detail)| ErrorReply {
        code: ErrorCode::from_code(c).unwrap(),
        detail,
    })
}

pub fn fetch_command() -> impl Strategy<Value = FetchCommand> {
    prop_oneof![
        any::<u64>().prop_map(FetchCommand::certificate),
        text().prop_map(|issuer| FetchCommand::LatestCrl { issuer }),
    ]
}

/// Random instances of one entity kind.
pub fn entity(kind: EntityKind) -> BoxedStrategy<ProtocolEntity> {
    use ProtocolEntity as P;
    match kind {
        EntityKind::RegistrationRequest => "[ -~]{1,64}"
            .prop_map(|device_id| P::RegistrationRequest(RegistrationRequest { device_id }))
            .boxed(),
        EntityKind::Credentials => credentials().prop_map(P::Credentials).boxed(),
        EntityKind::CertificateRequest => certificate_request().prop_map(P::CertificateRequest).boxed(),
        EntityKind::CertificateResponse => (wireless_certificate(), cert_url())
            .prop_map(|(certificate, cert_url)| P::CertificateResponse(CertificateResponse { certificate, cert_url }))
            .boxed(),
        EntityKind::WirelessCertificate => wireless_certificate().prop_map(P::WirelessCertificate).boxed(),
        EntityKind::ShortLivedCertificate => short_lived_certificate().prop_map(P::ShortLivedCertificate).boxed(),
        EntityKind::RevocationList => revocation_list().prop_map(P::RevocationList).boxed(),
        EntityKind::StatusRequest => status_request().prop_map(P::StatusRequest).boxed(),
        EntityKind::StatusResponse => status_response().prop_map(P::StatusResponse).boxed(),
        EntityKind::ErrorReply => error_reply().prop_map(P::ErrorReply).boxed(),
        EntityKind::RevokeCommand => revoke_command().prop_map(P::RevokeCommand).boxed(),
        EntityKind::FetchCommand => fetch_command().prop_map(P::FetchCommand).boxed(),
    }
}

fn fixed_certificate() -> WirelessCertificate {
    WirelessCertificate {
        version: 3,
        serial: 42,
        signature_algorithm: SignatureAlgorithm::EcdsaSha256,
        issuer: "WPKI Root CA".into(),
        valid_not_before: 1_700_000_000,
        valid_not_after: 1_731_536_000,
        subject: "mobile-client".into(),
        public_key_info: PublicKeyInfo::new(CurveId::Sect163k1, {
            let mut k = vec![0x03];
            k.extend((1..=21).map(|i| i as u8 * 7));
            k
        }),
        extensions: Extensions {
            authority_key_id: Some([0xA1; 20]),
            subject_key_id: Some([0x5B; 20]),
            key_usage: Some(KeyUsage::DIGITAL_SIGNATURE),
            certificate_policy: Some("wpki-basic-assurance".into()),
            subject_alt_names: Some(vec!["mobile-client".into()]),
            issuer_alt_names: Some(vec!["ca.wpki.test".into()]),
            extended_key_usage: Some(ExtendedKeyUsage::CLIENT_AUTH),
            crl_distribution_points: Some("wpki://127.0.0.1:7002/crl/latest".into()),
            domain_information: None,
            authority_info_access: Some("wpki://127.0.0.1:7003/status".into()),
        },
        signature: (0..42).collect(),
    }
}

fn fixed_short_lived() -> ShortLivedCertificate {
    ShortLivedCertificate {
        signature_algorithm: SignatureAlgorithm::EcdsaSha256,
        issuer: "WPKI Root CA".into(),
        valid_not_before: 1_700_000_000,
        valid_not_after: 1_700_003_600,
        subject: "shop.example".into(),
        public_key_type: PublicKeyType::Ecdh,
        parameter_specifier: CurveId::P256,
        public_key: {
            let mut k = vec![0x02];
            k.extend(0..32u8);
            k
        },
        signature: vec![0xEE; 42],
    }
}

/// One canonical instance of every entity kind, in kind order.
pub fn fixtures() -> Vec<ProtocolEntity> {
    use ProtocolEntity as P;
    let url = CertUrl::new("127.0.0.1", 7002, 42);
    vec![
        P::RegistrationRequest(RegistrationRequest {
            device_id: "IMEI-356938035643809".into(),
        }),
        P::Credentials(Credentials {
            username: "u00000001".into(),
            password: "Xk3dP9qLm2Rt7Vw1".into(),
            random_code: "RC12345678ABCDEF".into(),
        }),
        P::CertificateRequest(CertificateRequest {
            reference_number: "u00000001".into(),
            subject: "mobile-client".into(),
            public_key_info: fixed_certificate().public_key_info,
            pop_signature: SignatureValue {
                algorithm: SignatureAlgorithm::EcdsaSha256,
                bytes: vec![0x11; 42],
            },
            request_mac: MacTag([0x22; 32]),
        }),
        P::CertificateResponse(CertificateResponse {
            certificate: fixed_certificate(),
            cert_url: url.clone(),
        }),
        P::WirelessCertificate(fixed_certificate()),
        P::ShortLivedCertificate(fixed_short_lived()),
        P::RevocationList(RevocationList {
            signature_algorithm: SignatureAlgorithm::EcdsaSha256,
            issuer: "WPKI Root CA".into(),
            this_update: 1_700_000_000,
            next_update: 1_700_000_300,
            entries: vec![
                RevokedEntry {
                    serial: 7,
                    revoked_at: 1_699_999_000,
                    reason: RevocationReason::KeyCompromise,
                },
                RevokedEntry {
                    serial: 42,
                    revoked_at: 1_699_999_900,
                    reason: RevocationReason::Superseded,
                },
            ],
            signature: vec![0x33; 42],
        }),
        P::StatusRequest(StatusRequest {
            target: StatusTarget::Url(url),
            nonce: [0x44; 16],
        }),
        P::StatusResponse(StatusResponse {
            status: CertStatus::Revoked,
            serial: 42,
            produced_at: 1_700_000_010,
            nonce: [0x44; 16],
            failure_detail: Some("key-compromise".into()),
            signature_algorithm: SignatureAlgorithm::EcdsaSha256,
            signature: vec![0x55; 42],
        }),
        P::ErrorReply(ErrorReply::new(ErrorCode::MacMismatch, "request MAC does not verify")),
        P::RevokeCommand(RevokeCommand::new(
            RevokeAction::Revoke {
                serial: 42,
                reason: RevocationReason::KeyCompromise,
            },
            &MacKey::from_bytes(&[0x66; 32]).unwrap(),
        )),
        P::FetchCommand(FetchCommand::certificate(42)),
    ]
}

/// In-memory directory with a switch to simulate an outage.
#[derive(Default)]
pub struct MemoryDirectory {
    pub certs: Mutex<BTreeMap<u64, WirelessCertificate>>,
    pub crl: Mutex<Option<RevocationList>>,
    pub down: Mutex<bool>,
    pub crl_fetches: Mutex<usize>,
}

impl MemoryDirectory {
    fn check_up(&self) -> Result<(), RepositoryError> {
        if *self.down.lock().unwrap() {
            return Err(RepositoryError::Unavailable("simulated outage".into()));
        }
        Ok(())
    }

    pub fn set_down(&self, down: bool) {
        *self.down.lock().unwrap() = down;
    }

    pub fn serials(&self) -> BTreeSet<u64> {
        self.certs.lock().unwrap().keys().copied().collect()
    }
}

impl Directory for MemoryDirectory {
    fn store_certificate(&self, cert: &WirelessCertificate) -> Result<CertUrl, RepositoryError> {
        self.check_up()?;
        let mut certs = self.certs.lock().unwrap();
        if certs.contains_key(&cert.serial) {
            return Err(RepositoryError::DuplicateSerial(cert.serial));
        }
        certs.insert(cert.serial, cert.clone());
        Ok(CertUrl::new("mem", 1, cert.serial))
    }

    fn fetch_certificate(&self, url: &CertUrl) -> Result<WirelessCertificate, RepositoryError> {
        self.check_up()?;
        self.certs
            .lock()
            .unwrap()
            .get(&url.serial)
            .cloned()
            .ok_or(RepositoryError::NotFound)
    }

    fn publish_crl(&self, crl: &RevocationList) -> Result<(), RepositoryError> {
        self.check_up()?;
        *self.crl.lock().unwrap() = Some(crl.clone());
        Ok(())
    }

    fn fetch_latest_crl(&self) -> Result<RevocationList, RepositoryError> {
        self.check_up()?;
        *self.crl_fetches.lock().unwrap() += 1;
        self.crl.lock().unwrap().clone().ok_or(RepositoryError::NoCrlYet)
    }
}

/// Defaults with every port set to 0 and state under `dir`.
pub fn loopback_config(dir: &std::path::Path) -> wpki::config::SuiteConfig {
    wpki::config::SuiteConfig {
        ca_port: 0,
        repo_port: 0,
        ocsp_port: 0,
        peer_port: 0,
        state_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

/// CA, directory and responder on loopback, on the wall clock.
pub fn start_suite(dir: &std::path::Path) -> wpki::demo::Suite {
    wpki::demo::Suite::start(&loopback_config(dir), std::sync::Arc::new(wpki::time::SystemClock)).unwrap()
}

/// How one oracle certificate was made. The expected verdict follows from
/// these choices alone, never from the responder's own checks.
#[derive(Debug, Clone)]
pub struct Recipe {
    pub window: (u64, u64),
    pub tampered: bool,
    pub with_eku: bool,
    pub with_issuer_alt: bool,
    pub revoked: Option<RevocationReason>,
}

impl Recipe {
    pub fn expected(&self, now: u64) -> (CertStatus, Option<String>) {
        let unknown = |d: &str| (CertStatus::Unknown, Some(d.to_owned()));
        if self.tampered {
            unknown("bad-signature")
        } else if now < self.window.0 || now > self.window.1 {
            unknown("outside-validity-period")
        } else if !self.with_eku || !self.with_issuer_alt {
            unknown("non-conformant")
        } else if let Some(r) = self.revoked {
            (CertStatus::Revoked, Some(r.name().to_owned()))
        } else {
            (CertStatus::Good, None)
        }
    }
}

#[derive(Debug, Default)]
pub struct OracleSummary {
    pub pairs: usize,
    pub mismatches: Vec<String>,
}

/// Issues `per_round` certificates from made-up recipes in each of `rounds`
/// fresh authorities, publishes one CRL per round and asks a responder about
/// every certificate, whole and (when untampered) by URL.
pub fn run_status_oracle(rounds: usize, per_round: usize, seed: u64) -> OracleSummary {
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;
    use wpki::authority::{Authority, AuthorityConfig};
    use wpki::crypto::generate_keypair;
    use wpki::ocsp::Responder;
    use wpki::profiles::CertificateTemplate;

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut summary = OracleSummary::default();
    for round in 0..rounds {
        let dir = tempfile::tempdir().unwrap();
        let repo = Arc::new(MemoryDirectory::default());
        let ca = Authority::init(&AuthorityConfig::new(dir.path(), "mem:1", "mem:2"), repo.clone()).unwrap();
        let now = ca.now();
        let responder_key = generate_keypair(CurveId::Sect163k1).unwrap();
        let responder_cert = ca
            .issue_direct(&ca.responder_template("responder", now), responder_key.public_key())
            .unwrap();
        let responder = Responder::new(ca.certificate(), responder_key, responder_cert, repo.clone(), 3600).unwrap();
        let subject_key = generate_keypair(CurveId::Sect163k1).unwrap();

        let mut made = Vec::new();
        for i in 0..per_round {
            let validity = rng.gen_range(1..5_000u64);
            let not_before = match rng.gen_range(0..10) {
                0 => now,
                1 => now - validity,
                2 => now - validity - 1,
                3 => now + 1,
                _ => now - rng.gen_range(0..6_000u64) + 300,
            };
            let mut t = CertificateTemplate::new(format!("r{round}-{i}"), not_before, validity);
            let with_eku = rng.gen_bool(0.85);
            let with_issuer_alt = rng.gen_bool(0.85);
            if with_eku {
                t.extended_key_usage = Some(ExtendedKeyUsage::CLIENT_AUTH);
            }
            if with_issuer_alt {
                t.issuer_alt_names = Some(vec![ca.name().to_owned()]);
            }
            let (mut cert, url) = ca.issue(&t, subject_key.public_key(), None).unwrap();
            let revoked = rng
                .gen_bool(0.4)
                .then(|| RevocationReason::from_code(rng.gen_range(0..3)).unwrap());
            if let Some(r) = revoked {
                ca.revoke(cert.serial, r, now - 1).unwrap();
            }
            let tampered = rng.gen_bool(0.15);
            if tampered {
                match rng.gen_range(0..3) {
                    0 => cert.subject.push('!'),
                    1 => cert.valid_not_after += 1,
                    _ => cert.serial += 10_000,
                }
            }
            let recipe = Recipe {
                window: (not_before, not_before + validity),
                tampered,
                with_eku,
                with_issuer_alt,
                revoked,
            };
            made.push((recipe, cert, url));
        }
        ca.generate_crl(now, 600).unwrap();

        for (recipe, cert, url) in &made {
            let mut targets = vec![StatusTarget::Certificate(cert.clone())];
            if !recipe.tampered {
                targets.push(StatusTarget::Url(url.clone()));
            }
            for target in targets {
                let req = StatusRequest::new(target);
                let resp = responder.respond(&req, now).unwrap();
                let got = (resp.status, resp.failure_detail.clone());
                let want = recipe.expected(now);
                summary.pairs += 1;
                if got != want || resp.nonce != req.nonce || !resp.verify_signature(responder.public_key()) {
                    summary
                        .mismatches
                        .push(format!("{recipe:?}: got {got:?}, expected {want:?}"));
                }
            }
        }
    }
    summary
}

/// The wireless profile table as printed: field, generation, process.
pub const TRANSCRIBED: &str = "\
Version                         m m
Serial number                   m m
Signature                       m m
Issuer                          m m
Validity                        m m
Subject                         m m
Subject Public Key Info         m m
Issuer unique identifier        x x
Subject unique identifier       x x
Authority key identifier        m o
Subject key identifier          m o
Key usage                       m m
Private key usage period        x x
Certificate policy              m m
Policy Mapping                  - -
Subject alternative names       m m
Issuer alternative names        o m
Subject directory attributes    x x
Basic constraints               x x
Name constraints                - -
Policy constraints              - -
Extended Key Usage              o m
CRL distribution points         m o
Domain information              o o
Authority information access    m o
";

fn symbol(s: &str) -> Requirement {
    match s {
        "m" => Requirement::Mandatory,
        "o" => Requirement::Optional,
        "x" => Requirement::NotRecommended,
        "-" => Requirement::NotDefined,
        other => panic!("bad symbol {other}"),
    }
}

fn field_for(label: &str) -> ProfileField {
    use ProfileField::*;
    match label {
        "Version" => Version,
        "Serial number" => SerialNumber,
        "Signature" => Signature,
        "Issuer" => Issuer,
        "Validity" => Validity,
        "Subject" => Subject,
        "Subject Public Key Info" => SubjectPublicKeyInfo,
        "Issuer unique identifier" => IssuerUniqueIdentifier,
        "Subject unique identifier" => SubjectUniqueIdentifier,
        "Authority key identifier" => AuthorityKeyIdentifier,
        "Subject key identifier" => SubjectKeyIdentifier,
        "Key usage" => KeyUsage,
        "Private key usage period" => PrivateKeyUsagePeriod,
        "Certificate policy" => CertificatePolicy,
        "Policy Mapping" => PolicyMapping,
        "Subject alternative names" => SubjectAlternativeNames,
        "Issuer alternative names" => IssuerAlternativeNames,
        "Subject directory attributes" => SubjectDirectoryAttributes,
        "Basic constraints" => BasicConstraints,
        "Name constraints" => NameConstraints,
        "Policy constraints" => PolicyConstraints,
        "Extended Key Usage" => ExtendedKeyUsage,
        "CRL distribution points" => CrlDistributionPoints,
        "Domain information" => DomainInformation,
        "Authority information access" => AuthorityInformationAccess,
        other => panic!("unknown row {other}"),
    }
}

pub fn transcribed() -> Vec<(ProfileField, Requirement, Requirement)> {
    TRANSCRIBED
        .lines()
        .map(|line| {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (label, cols) = parts.split_at(parts.len() - 2);
            (field_for(&label.join(" ")), symbol(cols[0]), symbol(cols[1]))
        })
        .collect()
}

pub fn expected_violation(req: Requirement, present: bool) -> Option<ViolationRule> {
    match (req, present) {
        (Requirement::Mandatory, false) => Some(ViolationRule::MissingMandatory),
        (Requirement::NotRecommended, true) => Some(ViolationRule::ForbiddenPresent),
        (Requirement::NotDefined, true) => Some(ViolationRule::UndefinedPresent),
        _ => None,
    }
}
