mod common;

use std::time::Instant;

use wpki::codec::{Entity, ErrorCode};
use wpki::crypto::{self, generate_keypair, CurveId};
use wpki::enrollment::{
    client_build_request, client_complete, CertificateRequest, CertificateResponse, ClientState, Credentials,
    RegistrationRequest,
};
use wpki::net::{Channel, NetError};
use wpki::repository::Directory;

fn register(ch: &mut Channel, device: &str) -> Credentials {
    ch.call(&RegistrationRequest {
        device_id: device.into(),
    })
    .unwrap()
}

fn expect_refusal(ch: &mut Channel, req: &CertificateRequest, code: ErrorCode) {
    match ch.call::<_, CertificateResponse>(req) {
        Err(NetError::Remote(e)) => assert_eq!(e.code, code, "{e}"),
        other => panic!("expected {code}, got {other:?}"),
    }
}

#[test]
fn loopback_enrollment_with_negative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let suite = common::start_suite(dir.path());
    let mut ch = Channel::connect(&suite.config.ca_addr(), "ca").unwrap();
    let creds = register(&mut ch, "IMEI-1");
    assert_eq!(creds.username, "u00000001");
    assert_eq!(creds.random_code.len(), 16);

    let key = generate_keypair(CurveId::Sect163k1).unwrap();
    let good = client_build_request(&creds, &key, "handset-1").unwrap();

    // MAC computed with the wrong password
    let wrong = Credentials {
        password: format!("{}x", creds.password),
        ..creds.clone()
    };
    expect_refusal(
        &mut ch,
        &client_build_request(&wrong, &key, "handset-1").unwrap(),
        ErrorCode::MacMismatch,
    );
    // tampered tag
    let mut tampered = good.clone();
    tampered.request_mac.0[0] ^= 1;
    expect_refusal(&mut ch, &tampered, ErrorCode::MacMismatch);

    // proof of possession made with another key, MAC recomputed so only the PoP is wrong
    let other = generate_keypair(CurveId::Sect163k1).unwrap();
    let mut pop = client_build_request(&creds, &other, "handset-1").unwrap();
    pop.public_key_info = key.public_key().clone();
    pop.request_mac = crypto::mac(&creds.mac_key().unwrap(), &pop.mac_message().unwrap());
    expect_refusal(&mut ch, &pop, ErrorCode::PopFailure);

    // unknown reference
    let stranger = Credentials {
        username: "u99999999".into(),
        ..creds.clone()
    };
    expect_refusal(
        &mut ch,
        &client_build_request(&stranger, &key, "x").unwrap(),
        ErrorCode::UnknownReference,
    );

    // failures do not consume the registration
    let resp: CertificateResponse = ch.call(&good).unwrap();
    let state = client_complete(&resp, &key, &creds, suite.now()).unwrap();
    assert_eq!(state.cert_url.serial, resp.certificate.serial);
    assert!(resp.certificate.verify_signature(suite.ca.public_key()));
    assert_eq!(
        suite.repository.fetch_certificate(&state.cert_url).unwrap(),
        resp.certificate
    );

    // replaying the accepted request
    expect_refusal(&mut ch, &good, ErrorCode::UnknownReference);
    assert!(suite.ca.registration(&creds.username).unwrap().consumed);
}

#[test]
fn client_enrollment_is_fast_and_state_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let suite = common::start_suite(dir.path());
    let path = dir.path().join("client").join("state");
    for curve in [CurveId::Sect163k1, CurveId::P256] {
        let started = Instant::now();
        let run = wpki::client::run_enrollment(
            &suite.config.ca_addr(),
            &suite.config.repo_addr(),
            curve,
            "IMEI-2",
            "handset-2",
            suite.now(),
            Some(&path),
        );
        let elapsed = started.elapsed();
        let state = run.result.unwrap();
        assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
        assert!(run.report.persisted_bytes > 0 && run.report.persisted_bytes < 1024);
        assert_eq!(run.report.received_crl_bytes, 0);

        let on_disk = std::fs::read(&path).unwrap();
        assert_eq!(on_disk.len() as u64, run.report.persisted_bytes);
        let loaded = ClientState::load(&path).unwrap();
        assert_eq!(loaded.cert_url, state.cert_url);
        assert_eq!(loaded.keypair.public_key(), state.keypair.public_key());

        // no certificate encoding at rest
        let cert = suite.repository.fetch_certificate(&state.cert_url).unwrap();
        let enc = cert.encode().unwrap();
        assert!(!on_disk.windows(enc.len()).any(|w| w == enc.as_slice()));
        assert!(!on_disk
            .windows(cert.signature.len())
            .any(|w| w == cert.signature.as_slice()));
    }
}

#[test]
fn unreachable_ca_reports_no_traffic() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let run = wpki::client::run_enrollment(&addr, &addr, CurveId::Sect163k1, "dev", "dev", 0, None);
    assert!(matches!(run.result, Err(wpki::client::ClientError::CaUnreachable(_))));
    assert_eq!(run.report.received_from("ca"), 0);
}
