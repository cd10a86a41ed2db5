//! One line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use rand::{Rng, SeedableRng};

use wpki::authority::{RevocationReason, RevokeAction};
use wpki::client::{run_enrollment, PeerCredential};
use wpki::codec::{decode_entity, encode_entity, Entity, EntityKind, ErrorCode};
use wpki::crypto::{self, generate_keypair, CurveId, PublicKeyInfo, RSA1024_PLACEHOLDER_LEN};
use wpki::demo::{run_demo, Suite};
use wpki::enrollment::{
    client_build_request, CertificateRequest, CertificateResponse, Credentials, RegistrationRequest,
};
use wpki::net::{Channel, NetError};
use wpki::ocsp::{client_validate, CertStatus, RejectReason, StatusRequest, StatusTarget};
use wpki::profiles::{
    build_certificate, build_short_lived, check_generation, check_presence, CaIdentity, CertificateTemplate,
    ExtendedKeyUsage, Mode, Requirement, WIRELESS_PROFILE,
};
use wpki::repository::Directory;
use wpki::time::ManualClock;

type Verdict = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn ca_identity(name: &str, curve: CurveId) -> CaIdentity {
    CaIdentity {
        name: name.into(),
        key: generate_keypair(curve).unwrap(),
        crl_distribution_point: "wpki://127.0.0.1:7002/crl/latest".into(),
        authority_info_access: "wpki://127.0.0.1:7003/status".into(),
        certificate_policy: "wpki-basic-assurance".into(),
    }
}

fn ac1_size_reduction() -> Verdict {
    let started = Instant::now();
    let mut smallest = usize::MAX;
    for curve in [CurveId::Sect163k1, CurveId::P256] {
        let ca = ca_identity("WPKI Root CA", curve);
        let key = generate_keypair(curve).unwrap();
        let mut t = CertificateTemplate::new("handset-1", 1_000, 86_400);
        t.issuer_alt_names = Some(vec!["ca.wpki.test".into()]);
        t.extended_key_usage = Some(ExtendedKeyUsage::CLIENT_AUTH);
        let ec = build_certificate(&t, key.public_key(), &ca, 7).unwrap();
        ensure!(
            check_generation(&ec).is_conformant(),
            "{curve:?} certificate not generation-conformant"
        );
        let mut rsa = ec.clone();
        rsa.public_key_info = PublicKeyInfo::new(CurveId::Rsa1024Placeholder, vec![0x5A; RSA1024_PLACEHOLDER_LEN]);
        let (a, b) = (ec.encode().unwrap().len(), rsa.encode().unwrap().len());
        ensure!(b >= a + 90, "{curve:?}: {a} B vs {b} B, saving {}", b.saturating_sub(a));
        smallest = smallest.min(b - a);
    }
    within(started.elapsed(), 1.0)?;
    Ok(format!("smallest saving {smallest} B (K-163 and P-256)"))
}

fn ac2_profile_reduction() -> Verdict {
    let started = Instant::now();
    let mut rng = rand::rngs::StdRng::seed_from_u64(2);
    let mut worst = i64::MIN;
    for i in 0..100 {
        let curve = if rng.gen_bool(0.5) {
            CurveId::Sect163k1
        } else {
            CurveId::P256
        };
        let issuer: String = (0..rng.gen_range(1..40))
            .map(|_| rng.gen_range(b'A'..=b'Z') as char)
            .collect();
        let ca = ca_identity(&issuer, CurveId::Sect163k1);
        let subject: String = (0..rng.gen_range(1..40))
            .map(|_| rng.gen_range(b'a'..=b'z') as char)
            .collect();
        let key = generate_keypair(curve).unwrap();
        let nb = rng.gen_range(0..1u64 << 40);
        let life = rng.gen_range(60..86_400);
        let wireless = build_certificate(
            &CertificateTemplate::new(subject.clone(), nb, life),
            key.public_key(),
            &ca,
            i,
        )
        .unwrap()
        .encode()
        .unwrap()
        .len();
        let short = build_short_lived(&subject, key.public_key(), nb, life, 86_400, &ca)
            .unwrap()
            .encode()
            .unwrap()
            .len();
        ensure!(
            short < wireless,
            "input {i}: short-lived {short} B, wireless {wireless} B"
        );
        worst = worst.max(short as i64 - wireless as i64);
    }
    within(started.elapsed(), 1.0)?;
    Ok(format!("100 inputs, short-lived smaller by at least {} B", -worst))
}

fn ac3_conformance_matrix() -> Verdict {
    let rows = common::transcribed();
    ensure!(rows.len() == 25 && WIRELESS_PROFILE.len() == 25, "expected 25 rows");
    for (i, (field, g, p)) in rows.iter().enumerate() {
        let r = WIRELESS_PROFILE[i];
        ensure!(
            (r.field, r.generation, r.process) == (*field, *g, *p),
            "row {i} ({field}) drifted"
        );
    }
    let mut cases = 0;
    for mode in [Mode::Generation, Mode::Process] {
        let req = |r: &(_, Requirement, Requirement)| if mode == Mode::Generation { r.1 } else { r.2 };
        let baseline = |f| rows.iter().any(|r| r.0 == f && req(r) == Requirement::Mandatory);
        ensure!(
            check_presence(mode, baseline).is_conformant(),
            "{mode:?} baseline rejected"
        );
        for row in &rows {
            for present in [false, true] {
                let report = check_presence(mode, |f| if f == row.0 { present } else { baseline(f) });
                let ok = match common::expected_violation(req(row), present) {
                    Some(rule) => report.violations.len() == 1 && report.has(row.0, rule),
                    None => report.is_conformant(),
                };
                ensure!(ok, "{mode:?} {} present={present}: {report}", row.0);
                cases += 1;
            }
        }
    }
    Ok(format!("25 rows, {cases} presence cases"))
}

fn ac4_codec() -> Verdict {
    let started = Instant::now();
    let mut runner = TestRunner::deterministic();
    for kind in EntityKind::ALL {
        let strategy = common::entity(kind);
        for n in 0..1000 {
            let x = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
            let bytes = encode_entity(&x).map_err(|e| format!("{kind:?} #{n}: encode: {e}"))?;
            let back = decode_entity(&bytes, kind).map_err(|e| format!("{kind:?} #{n}: decode: {e}"))?;
            ensure!(back == x, "{kind:?} #{n}: round trip changed the value");
        }
    }
    let mut mutations = 0u64;
    for fixture in common::fixtures() {
        let bytes = encode_entity(&fixture).unwrap();
        let mut m = bytes.clone();
        for i in 0..bytes.len() {
            for delta in 1..=255u8 {
                m[i] = bytes[i].wrapping_add(delta);
                if let Ok(v) = decode_entity(&m, fixture.kind()) {
                    ensure!(
                        v != fixture,
                        "{:?}: mutating byte {i} decoded unchanged",
                        fixture.kind()
                    );
                }
                mutations += 1;
            }
            m[i] = bytes[i];
        }
    }
    within(started.elapsed(), 30.0)?;
    Ok(format!(
        "12 kinds x 1000 round trips, {mutations} mutations, {:.1} s",
        started.elapsed().as_secs_f64()
    ))
}

fn refusal(ch: &mut Channel, req: &CertificateRequest) -> Option<ErrorCode> {
    match ch.call::<_, CertificateResponse>(req) {
        Err(NetError::Remote(e)) => Some(e.code),
        _ => None,
    }
}

fn ac5_enrollment() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let suite = common::start_suite(dir.path());
    let path = dir.path().join("device").join("state");
    let started = Instant::now();
    let run = run_enrollment(
        &suite.config.ca_addr(),
        &suite.config.repo_addr(),
        CurveId::Sect163k1,
        "IMEI-356938035643809",
        "handset",
        suite.now(),
        Some(&path),
    );
    let elapsed = started.elapsed();
    run.result.map_err(|e| format!("enrollment failed: {e}"))?;
    within(elapsed, 1.0)?;
    let persisted = run.report.persisted_bytes;
    ensure!(persisted > 0 && persisted < 1024, "persisted state is {persisted} B");

    let mut ch = Channel::connect(&suite.config.ca_addr(), "ca").map_err(|e| e.to_string())?;
    let creds: Credentials = ch
        .call(&RegistrationRequest {
            device_id: "IMEI-2".into(),
        })
        .map_err(|e| e.to_string())?;
    let key = generate_keypair(CurveId::Sect163k1).unwrap();
    let good = client_build_request(&creds, &key, "handset-2").unwrap();

    let wrong = Credentials {
        password: format!("{}!", creds.password),
        ..creds.clone()
    };
    let got = refusal(&mut ch, &client_build_request(&wrong, &key, "handset-2").unwrap());
    ensure!(got == Some(ErrorCode::MacMismatch), "wrong password gave {got:?}");

    let other = generate_keypair(CurveId::Sect163k1).unwrap();
    let mut pop = client_build_request(&creds, &other, "handset-2").unwrap();
    pop.public_key_info = key.public_key().clone();
    pop.request_mac = crypto::mac(&creds.mac_key().unwrap(), &pop.mac_message().unwrap());
    let got = refusal(&mut ch, &pop);
    ensure!(
        got == Some(ErrorCode::PopFailure),
        "foreign proof of possession gave {got:?}"
    );

    ch.call::<_, CertificateResponse>(&good)
        .map_err(|e| format!("valid request refused: {e}"))?;
    let got = refusal(&mut ch, &good);
    ensure!(got.is_some(), "replayed request was accepted");
    Ok(format!(
        "enrolled in {:.0} ms, state {persisted} B, replay refused ({}), MacMismatch and PopFailure seen",
        elapsed.as_secs_f64() * 1e3,
        got.unwrap()
    ))
}

fn ac6_delegation() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let report = run_demo(&common::loopback_config(dir.path())).map_err(|e| e.to_string())?;
    let t = &report.client_total;
    ensure!(
        t.received_crl_bytes == 0,
        "client received {} CRL bytes",
        t.received_crl_bytes
    );
    let sent = t.sent_count(EntityKind::WirelessCertificate);
    ensure!(sent == 0, "client sent {sent} certificate frames");
    let peer_check = report
        .checks
        .iter()
        .find(|(n, _)| n == "client sent no certificate frame");
    ensure!(
        peer_check.is_some_and(|(_, ok)| *ok),
        "peer received a certificate frame from the client"
    );
    ensure!(report.phases.len() == 3, "scenario ran {} phases", report.phases.len());
    Ok(format!(
        "3 transactions, client sent {} B and received {} B, 0 CRL bytes",
        t.total_sent(),
        t.total_received()
    ))
}

fn ac7_revocation() -> Verdict {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(wpki::time::unix_now()));
    let mut suite = Suite::start(&common::loopback_config(dir.path()), clock.clone()).map_err(|e| e.to_string())?;
    suite.operator(RevokeAction::PublishCrl).map_err(|e| e.to_string())?;
    let c = &suite.config;
    let server = run_enrollment(
        &c.ca_addr(),
        &c.repo_addr(),
        c.curve,
        "SRV-1",
        "shop.example",
        suite.now(),
        None,
    )
    .result
    .map_err(|e| e.to_string())?;
    let cert = suite
        .repository
        .fetch_certificate(&server.cert_url)
        .map_err(|e| e.to_string())?;
    let (_, _peer) = suite
        .start_peer(PeerCredential::Wireless(cert.clone()))
        .map_err(|e| e.to_string())?;

    let ask = |suite: &Suite| -> Result<CertStatus, String> {
        let mut ch = Channel::connect(&suite.config.ocsp_addr(), "ocsp").map_err(|e| e.to_string())?;
        let req = StatusRequest::new(StatusTarget::Url(server.cert_url.clone()));
        let resp: wpki::ocsp::StatusResponse = ch.call(&req).map_err(|e| e.to_string())?;
        let v = client_validate(
            &resp,
            &req.nonce,
            suite.responder.public_key(),
            suite.now(),
            suite.config.freshness_s,
        );
        ensure!(
            v.reason.is_none() || matches!(v.reason, Some(RejectReason::NotGood(_))),
            "response rejected: {v:?}"
        );
        Ok(resp.status)
    };
    let before = ask(&suite)?;
    ensure!(before == CertStatus::Good, "before revocation: {before}");
    suite
        .operator(RevokeAction::Revoke {
            serial: cert.serial,
            reason: RevocationReason::KeyCompromise,
        })
        .map_err(|e| e.to_string())?;
    clock.advance(suite.config.crl_validity_s + 1);
    suite.operator(RevokeAction::PublishCrl).map_err(|e| e.to_string())?;
    let after = ask(&suite)?;
    ensure!(after == CertStatus::Revoked, "after revocation: {after}");
    suite.shutdown();

    let oracle = common::run_status_oracle(5, 40, 7);
    ensure!(oracle.pairs >= 200, "only {} oracle pairs", oracle.pairs);
    ensure!(
        oracle.mismatches.is_empty(),
        "{} of {} pairs disagree, first: {}",
        oracle.mismatches.len(),
        oracle.pairs,
        oracle.mismatches[0]
    );
    within(started.elapsed(), 60.0)?;
    Ok(format!(
        "good then revoked; {} oracle pairs agree, {:.1} s",
        oracle.pairs,
        started.elapsed().as_secs_f64()
    ))
}

fn ac8_replay_and_staleness() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let suite = common::start_suite(dir.path());
    let freshness = suite.config.freshness_s;
    let now = suite.now();
    let key = generate_keypair(CurveId::Sect163k1).unwrap();
    let cert = suite
        .ca
        .issue_short_lived("srv", key.public_key(), now, 600)
        .map_err(|e| e.to_string())?;
    let rk = suite.responder.public_key();
    let mut rng = rand::rngs::StdRng::seed_from_u64(8);
    let (mut nonce_cases, mut stale_cases, mut rejected) = (0, 0, 0);

    for _ in 0..300 {
        let req = StatusRequest::new(StatusTarget::ShortLived(cert.clone()));
        let resp = suite.responder.respond(&req, now).map_err(|e| e.to_string())?;
        ensure!(
            client_validate(&resp, &req.nonce, rk, now, freshness).accepted,
            "genuine response rejected"
        );
        let mut other = req.nonce;
        let i = rng.gen_range(0..other.len());
        other[i] ^= rng.gen_range(1..=255u8);
        nonce_cases += 1;
        if client_validate(&resp, &other, rk, now, freshness).reason == Some(RejectReason::NonceMismatch) {
            rejected += 1;
        }

        let age = freshness + rng.gen_range(1..100_000);
        let old = suite.responder.respond(&req, now - age).map_err(|e| e.to_string())?;
        stale_cases += 1;
        if client_validate(&old, &req.nonce, rk, now, freshness).reason == Some(RejectReason::Stale) {
            rejected += 1;
        }
    }
    let total = nonce_cases + stale_cases;
    ensure!(rejected == total, "{rejected} of {total} injected responses rejected");
    Ok(format!(
        "{nonce_cases} wrong-nonce and {stale_cases} stale responses, all rejected"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("AC1", "EC key shrinks the certificate by >= 90 B", ac1_size_reduction),
        (
            "AC2",
            "short-lived certificate smaller than wireless",
            ac2_profile_reduction,
        ),
        ("AC3", "25-row conformance matrix", ac3_conformance_matrix),
        ("AC4", "codec round trip and mutation sweep", ac4_codec),
        ("AC5", "loopback enrollment", ac5_enrollment),
        ("AC6", "delegated validation spares the client", ac6_delegation),
        ("AC7", "revocation correctness", ac7_revocation),
        (
            "AC8",
            "wrong nonce and stale responses rejected",
            ac8_replay_and_staleness,
        ),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, title, run) in criteria {
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match verdict {
            Ok(detail) => println!("[PASS] {id} {title}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id} {title}: {why}");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
