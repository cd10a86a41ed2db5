mod common;

use common::{expected_violation, transcribed};
use proptest::prelude::*;
use wpki::codec::Entity;
use wpki::crypto::{generate_keypair, CurveId, KeyPair, RSA1024_PLACEHOLDER_LEN};
use wpki::profiles::{
    build_certificate, build_short_lived, check_generation, check_presence, check_process, CaIdentity,
    CertificateTemplate, ExtendedKeyUsage, Mode, ProfileError, ProfileField, Requirement, ViolationRule,
    WIRELESS_PROFILE,
};

#[test]
fn rule_table_is_the_transcribed_table() {
    let rows = transcribed();
    assert_eq!(rows.len(), 25);
    for (i, (field, g, p)) in rows.iter().enumerate() {
        let rule = WIRELESS_PROFILE[i];
        assert_eq!((rule.field, rule.generation, rule.process), (*field, *g, *p), "row {i}");
    }
}

#[test]
fn checker_behaviour_for_every_row_in_both_modes() {
    let rows = transcribed();
    for mode in [Mode::Generation, Mode::Process] {
        let req_of = |r: &(ProfileField, Requirement, Requirement)| match mode {
            Mode::Generation => r.1,
            Mode::Process => r.2,
        };
        // baseline: exactly the mandatory fields present
        let baseline = |f: ProfileField| rows.iter().any(|r| r.0 == f && req_of(r) == Requirement::Mandatory);
        assert!(check_presence(mode, baseline).is_conformant());

        for row in &rows {
            for present in [false, true] {
                let report = check_presence(mode, |f| if f == row.0 { present } else { baseline(f) });
                match expected_violation(req_of(row), present) {
                    Some(rule) => {
                        assert_eq!(report.violations.len(), 1, "{mode:?} {:?} present={present}", row.0);
                        assert!(report.has(row.0, rule));
                    }
                    None => assert!(
                        report.is_conformant(),
                        "{mode:?} {:?} present={present}: {report}",
                        row.0
                    ),
                }
            }
        }
    }
}

fn ca(curve: CurveId) -> CaIdentity {
    CaIdentity {
        name: "WPKI Test CA".into(),
        key: generate_keypair(curve).unwrap(),
        crl_distribution_point: "wpki://127.0.0.1:7002/crl/latest".into(),
        authority_info_access: "wpki://127.0.0.1:7003/status".into(),
        certificate_policy: "wpki-basic-assurance".into(),
    }
}

fn subject_key() -> KeyPair {
    generate_keypair(CurveId::Sect163k1).unwrap()
}

const OPTIONAL_OR_MANDATORY: [ProfileField; 10] = [
    ProfileField::AuthorityKeyIdentifier,
    ProfileField::SubjectKeyIdentifier,
    ProfileField::KeyUsage,
    ProfileField::CertificatePolicy,
    ProfileField::SubjectAlternativeNames,
    ProfileField::IssuerAlternativeNames,
    ProfileField::ExtendedKeyUsage,
    ProfileField::CrlDistributionPoints,
    ProfileField::DomainInformation,
    ProfileField::AuthorityInformationAccess,
];

#[test]
fn built_certificates_conform_and_deletions_are_counted() {
    let ca = ca(CurveId::Sect163k1);
    let mut t = CertificateTemplate::new("u00000001", 1_000, 3_600);
    t.issuer_alt_names = Some(vec!["ca.wpki.test".into()]);
    t.extended_key_usage = Some(ExtendedKeyUsage::CLIENT_AUTH);
    t.domain_information = Some("mobile.example".into());
    let cert = build_certificate(&t, subject_key().public_key(), &ca, 9).unwrap();
    assert!(check_generation(&cert).is_conformant());
    assert!(check_process(&cert).is_conformant());
    assert!(cert.verify_signature(ca.key.public_key()));

    for field in OPTIONAL_OR_MANDATORY {
        let mut c = cert.clone();
        assert!(c.remove_field(field));
        let rules = WIRELESS_PROFILE.iter().find(|r| r.field == field).unwrap();
        let gen = check_generation(&c);
        let proc = check_process(&c);
        assert_eq!(
            gen.violations.len(),
            usize::from(rules.generation == Requirement::Mandatory),
            "{field}"
        );
        assert_eq!(
            proc.violations.len(),
            usize::from(rules.process == Requirement::Mandatory),
            "{field}"
        );
        // and the signature no longer matches
        assert!(!c.verify_signature(ca.key.public_key()));
    }
}

#[test]
fn process_only_fields_and_refusals() {
    let ca = ca(CurveId::P256);
    let cert = build_certificate(
        &CertificateTemplate::new("dev", 10, 100),
        subject_key().public_key(),
        &ca,
        1,
    )
    .unwrap();
    // lacking extended key usage and issuer alternative names
    assert!(check_generation(&cert).is_conformant());
    let proc = check_process(&cert);
    assert!(proc.has(ProfileField::ExtendedKeyUsage, ViolationRule::MissingMandatory));
    assert!(proc.has(ProfileField::IssuerAlternativeNames, ViolationRule::MissingMandatory));
    assert_eq!(proc.violations.len(), 2);

    let mut t = CertificateTemplate::new("dev", 10, 100);
    t.extra_fields.push(ProfileField::BasicConstraints);
    match build_certificate(&t, subject_key().public_key(), &ca, 2) {
        Err(ProfileError::NonConformantTemplate(r)) => {
            assert!(r.has(ProfileField::BasicConstraints, ViolationRule::ForbiddenPresent))
        }
        other => panic!("{other:?}"),
    }
    let mut t = CertificateTemplate::new("dev", 10, 100);
    t.extra_fields.push(ProfileField::PolicyMapping);
    assert!(build_certificate(&t, subject_key().public_key(), &ca, 3).is_err());

    let mut c = cert.clone();
    c.extensions.crl_distribution_points = Some("not a url".into());
    assert!(check_process(&c).has(ProfileField::CrlDistributionPoints, ViolationRule::Malformed));
    assert!(check_generation(&c).is_conformant());
}

#[test]
fn short_lived_lifetime_cap() {
    let ca = ca(CurveId::Sect163k1);
    let ecdh = subject_key();
    assert!(matches!(
        build_short_lived("srv", ecdh.public_key(), 0, 7200, 3600, &ca),
        Err(ProfileError::LifetimeTooLong { .. })
    ));
    let c = build_short_lived("srv", ecdh.public_key(), 0, 3600, 3600, &ca).unwrap();
    assert!(c.verify_signature(ca.key.public_key()));
    assert_eq!(c.lifetime(), 3600);
}

#[test]
fn placeholder_key_costs_over_ninety_bytes() {
    let ca = ca(CurveId::Sect163k1);
    let k = subject_key();
    let cert = build_certificate(&CertificateTemplate::new("dev", 10, 100), k.public_key(), &ca, 1).unwrap();
    let mut rsa = cert.clone();
    rsa.public_key_info =
        wpki::crypto::PublicKeyInfo::new(CurveId::Rsa1024Placeholder, vec![0xA5; RSA1024_PLACEHOLDER_LEN]);
    let diff = rsa.encode().unwrap().len() - cert.encode().unwrap().len();
    assert_eq!(diff, RSA1024_PLACEHOLDER_LEN - k.public_key().key.len());
    assert!(diff >= 90);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn short_lived_is_smaller_for_the_same_inputs(
        subject in "[a-z0-9.-]{1,40}",
        issuer in "[A-Za-z0-9 ]{1,40}",
        nb in 0u64..1 << 40,
        life in 60u64..86_400,
    ) {
        let ca = CaIdentity { name: issuer, ..ca(CurveId::Sect163k1) };
        let key = subject_key();
        let wireless = build_certificate(&CertificateTemplate::new(subject.clone(), nb, life), key.public_key(), &ca, 1).unwrap();
        let short = build_short_lived(&subject, key.public_key(), nb, life, 86_400, &ca).unwrap();
        prop_assert!(short.encode().unwrap().len() < wireless.encode().unwrap().len());
    }
}
