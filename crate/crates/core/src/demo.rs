//! In-process orchestration: start the services on loopback, then run the
//! scripted enrollment, transaction and revocation scenario.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::Arc;

use log::info;
use thiserror::Error;

use crate::authority::{self, Authority, AuthorityError, RevocationReason, RevokeAction, RevokeCommand};
use crate::client::{self, ClientError, Peer, PeerCredential, TrafficReport, TransactionOutcome, TransactionParams};
use crate::codec::EntityKind;
use crate::config::SuiteConfig;
use crate::crypto::{self, CurveId, KeyPair};
use crate::enrollment::ClientState;
use crate::net::{Channel, NetError, ServiceHandle};
use crate::ocsp::{self, CertStatus, Responder};
use crate::profiles::WirelessCertificate;
use crate::repository::{self, Directory, RemoteDirectory, Repository};
use crate::time::{Clock, ManualClock};

pub const RESPONDER_SUBJECT: &str = "WPKI Status Responder";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("cannot start {service}: {source}")]
    Start { service: &'static str, source: io::Error },
    #[error("CA: {0}")]
    Authority(#[from] AuthorityError),
    #[error("responder: {0}")]
    Responder(#[from] ocsp::OcspError),
    #[error("repository: {0}")]
    Repository(#[from] repository::RepositoryError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("operator command: {0}")]
    Operator(#[from] NetError),
    #[error("scenario check failed: {0}")]
    ScenarioFailed(String),
}

/// Loads the responder key and certificate from `<root>/ocsp`, or creates them
/// with a certificate issued by `ca`.
pub fn provision_responder(
    ca: &Authority,
    root: &Path,
    curve: CurveId,
) -> Result<(KeyPair, WirelessCertificate), DemoError> {
    match ocsp::load_credentials(root) {
        Ok(c) => return Ok(c),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => {
            return Err(DemoError::Start {
                service: "responder",
                source: e,
            })
        }
    }
    let key = crypto::generate_keypair(curve).map_err(|e| AuthorityError::SigningFailure(e.to_string()))?;
    let template = ca.responder_template(RESPONDER_SUBJECT, ca.now());
    let cert = ca.issue_direct(&template, key.public_key())?;
    ocsp::save_credentials(root, &key, &cert).map_err(|e| DemoError::Start {
        service: "responder",
        source: e,
    })?;
    Ok((key, cert))
}

fn bind(service: &'static str, addr: &str) -> Result<std::net::TcpListener, DemoError> {
    std::net::TcpListener::bind(addr).map_err(|source| DemoError::Start { service, source })
}

/// CA, directory and responder running in this process. Dropping it stops them.
pub struct Suite {
    /// The configuration with any port 0 replaced by the bound port.
    pub config: SuiteConfig,
    pub ca: Arc<Authority>,
    pub repository: Arc<Repository>,
    pub responder: Arc<Responder>,
    pub clock: Arc<dyn Clock>,
    handles: Vec<ServiceHandle>,
}

impl Suite {
    pub fn start(config: &SuiteConfig, clock: Arc<dyn Clock>) -> Result<Suite, DemoError> {
        let mut config = config.clone();
        let repo_listener = bind("repository", &config.repo_addr())?;
        let ocsp_listener = bind("responder", &config.ocsp_addr())?;
        let ca_listener = bind("ca", &config.ca_addr())?;
        let port = |l: &std::net::TcpListener, service| {
            l.local_addr()
                .map(|a| a.port())
                .map_err(|source| DemoError::Start { service, source })
        };
        config.repo_port = port(&repo_listener, "repository")?;
        config.ocsp_port = port(&ocsp_listener, "responder")?;
        config.ca_port = port(&ca_listener, "ca")?;

        let ca_directory = Arc::new(RemoteDirectory::new(config.repo_addr(), config.ca_name.clone()));
        let ca = Authority::init(&config.authority_config(), ca_directory)?.with_clock(Arc::clone(&clock));
        let repository = Arc::new(Repository::open(
            &config.repo_dir(),
            ca.certificate(),
            &config.host,
            config.repo_port,
        )?);
        let mut handles = Vec::new();
        let start_err = |service| move |source| DemoError::Start { service, source };
        handles.push(repository::serve(repo_listener, Arc::clone(&repository)).map_err(start_err("repository"))?);

        let (key, cert) = provision_responder(&ca, &config.ocsp_dir(), config.curve)?;
        let responder_directory = Arc::new(RemoteDirectory::new(config.repo_addr(), ca.name()));
        let responder = Arc::new(
            Responder::new(
                ca.certificate(),
                key,
                cert,
                responder_directory,
                config.short_lived_max_s,
            )?
            .with_clock(Arc::clone(&clock)),
        );
        handles.push(ocsp::serve(ocsp_listener, Arc::clone(&responder)).map_err(start_err("responder"))?);

        let ca = Arc::new(ca);
        handles.push(authority::serve(ca_listener, Arc::clone(&ca)).map_err(start_err("ca"))?);
        info!(
            "suite up: ca={} repo={} ocsp={}",
            config.ca_addr(),
            config.repo_addr(),
            config.ocsp_addr()
        );
        Ok(Suite {
            config,
            ca,
            repository,
            responder,
            clock,
            handles,
        })
    }

    /// Starts a scripted peer presenting `credential` on the configured peer port.
    pub fn start_peer(&mut self, credential: PeerCredential) -> Result<(Arc<Peer>, String), DemoError> {
        let listener = bind("peer", &self.config.peer_addr())?;
        let addr = listener
            .local_addr()
            .map_err(|source| DemoError::Start {
                service: "peer",
                source,
            })?
            .to_string();
        let peer = Arc::new(Peer::new(
            credential,
            &self.config.ocsp_addr(),
            self.responder.public_key().clone(),
            self.config.freshness_s,
            Arc::clone(&self.clock),
        ));
        self.handles.push(
            client::serve_peer(listener, Arc::clone(&peer)).map_err(|source| DemoError::Start {
                service: "peer",
                source,
            })?,
        );
        Ok((peer, addr))
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn transaction_params<'a>(&'a self, peer_addr: &'a str, ocsp_addr: &'a str) -> TransactionParams<'a> {
        TransactionParams {
            peer_addr,
            ocsp_addr,
            responder_key: self.responder.public_key(),
            freshness_s: self.config.freshness_s,
            clock: self.clock.as_ref(),
        }
    }

    /// Sends an authenticated revoke or publish command to the CA over the network.
    pub fn operator(&self, action: RevokeAction) -> Result<(), DemoError> {
        let mut ch = Channel::connect(&self.config.ca_addr(), "operator")?;
        let cmd = RevokeCommand::new(action, self.ca.admin_key());
        ch.send(&cmd)?;
        let (kind, payload) = ch.recv_raw()?;
        match kind {
            EntityKind::RevokeCommand | EntityKind::RevocationList => Ok(()),
            other => Err(match crate::net::decode_reply::<RevokeCommand>(other, &payload) {
                Err(e) => DemoError::Operator(e),
                Ok(_) => DemoError::ScenarioFailed("unexpected operator reply".into()),
            }),
        }
    }

    pub fn shutdown(self) {
        for h in self.handles {
            h.shutdown();
        }
    }
}

#[derive(Debug)]
pub struct Phase {
    pub name: &'static str,
    pub outcome: TransactionOutcome,
}

#[derive(Debug)]
pub struct DemoReport {
    pub enrollment: TrafficReport,
    pub phases: Vec<Phase>,
    /// All of the client's traffic: enrollment plus every transaction.
    pub client_total: TrafficReport,
    pub checks: Vec<(String, bool)>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "enrollment traffic:\n{}", self.enrollment.to_text());
        for p in &self.phases {
            let o = &p.outcome;
            let _ = writeln!(
                s,
                "transaction [{}]: peer={:?} status={} proceeded={} own_status={}",
                p.name,
                o.peer_subject,
                o.peer_status,
                o.proceeded,
                o.own_status.map_or("-".to_owned(), |s| s.to_string())
            );
            let _ = writeln!(s, "{}", o.report.to_text());
        }
        let _ = writeln!(s, "client total:\n{}", self.client_total.to_text());
        for (name, ok) in &self.checks {
            let _ = writeln!(s, "[{}] {name}", if *ok { "ok" } else { "FAILED" });
        }
        s
    }
}

fn enroll(
    suite: &Suite,
    device_id: &str,
    subject: &str,
    state_path: Option<&Path>,
) -> Result<(ClientState, TrafficReport), DemoError> {
    let cfg = &suite.config;
    let run = client::run_enrollment(
        &cfg.ca_addr(),
        &cfg.repo_addr(),
        cfg.curve,
        device_id,
        subject,
        suite.now(),
        state_path,
    );
    Ok((run.result?, run.report))
}

/// Runs the full scenario on `config` (ports may be 0). Scenario mismatches are
/// reported in [`DemoReport::checks`]; infrastructure failures are errors.
pub fn run_demo(config: &SuiteConfig) -> Result<DemoReport, DemoError> {
    let clock = Arc::new(ManualClock::new(crate::time::unix_now()));
    let mut suite = Suite::start(config, clock.clone())?;
    suite.ca.generate_crl(suite.now(), suite.config.crl_validity_s)?;

    let client_path = suite.config.client_dir().join("client").join("state");
    let (client_state, enrollment) = enroll(&suite, "IMEI-356938035643809", "mobile-client", Some(&client_path))?;

    // the server is not constrained: it keeps its certificate, fetched from the directory
    let server_dir = suite.config.client_dir().join("server").join("state");
    let (server_state, _) = enroll(&suite, "SRV-shop-01", "shop.example", Some(&server_dir))?;
    let server_cert = suite.repository.fetch_certificate(&server_state.cert_url)?;

    let ecdh =
        crypto::generate_keypair(suite.config.curve).map_err(|e| AuthorityError::SigningFailure(e.to_string()))?;
    let short_lived = suite.ca.issue_short_lived(
        "shop.example",
        ecdh.public_key(),
        suite.now(),
        suite.config.short_lived_lifetime_s,
    )?;

    let (peer, peer_addr) = suite.start_peer(PeerCredential::ShortLived(short_lived))?;
    let ocsp_addr = suite.config.ocsp_addr();
    let mut phases = Vec::new();

    let outcome = client::run_transaction(&client_state, &suite.transaction_params(&peer_addr, &ocsp_addr))?;
    phases.push(Phase {
        name: "short-lived server certificate",
        outcome,
    });

    peer.set_credential(PeerCredential::Wireless(server_cert.clone()));
    let outcome = client::run_transaction(&client_state, &suite.transaction_params(&peer_addr, &ocsp_addr))?;
    phases.push(Phase {
        name: "server certificate, before revocation",
        outcome,
    });

    suite.operator(RevokeAction::Revoke {
        serial: server_cert.serial,
        reason: RevocationReason::KeyCompromise,
    })?;
    // let the cached CRL run out before the new one is published
    clock.advance(suite.config.crl_validity_s + 1);
    suite.operator(RevokeAction::PublishCrl)?;

    let outcome = client::run_transaction(&client_state, &suite.transaction_params(&peer_addr, &ocsp_addr))?;
    phases.push(Phase {
        name: "server certificate, after revocation",
        outcome,
    });

    let mut client_total = enrollment.clone();
    for p in &phases {
        client_total.merge(&p.outcome.report);
    }
    let peer_saw_certificate = peer.received_kinds().contains(&EntityKind::WirelessCertificate);
    let expect = |i: usize, status: CertStatus, proceeded: bool| {
        let o: &TransactionOutcome = &phases[i].outcome;
        o.peer_status == status && o.proceeded == proceeded
    };
    let checks = vec![
        (
            "client received zero CRL bytes".to_owned(),
            client_total.received_crl_bytes == 0,
        ),
        (
            "client sent no certificate frame".to_owned(),
            client_total.sent_count(EntityKind::WirelessCertificate) == 0 && !peer_saw_certificate,
        ),
        (
            "client state at rest under 1 KiB".to_owned(),
            enrollment.persisted_bytes > 0 && enrollment.persisted_bytes < 1024,
        ),
        (
            "short-lived peer accepted".to_owned(),
            expect(0, CertStatus::Good, true),
        ),
        (
            "peer accepted before revocation, client validated by URL".to_owned(),
            expect(1, CertStatus::Good, true) && phases[1].outcome.own_status == Some(CertStatus::Good),
        ),
        (
            "peer refused after revocation".to_owned(),
            expect(2, CertStatus::Revoked, false),
        ),
    ];
    suite.shutdown();
    Ok(DemoReport {
        enrollment,
        phases,
        client_total,
        checks,
    })
}
