use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand};
use log::{error, info, warn};

use wpki::authority::{self, Authority, AuthorityError, RevocationList, RevocationReason, RevokeAction, RevokeCommand};
use wpki::client::{self, Peer, PeerCredential, TransactionParams};
use wpki::config::SuiteConfig;
use wpki::crypto::{self, CurveId};
use wpki::demo;
use wpki::enrollment::ClientState;
use wpki::net::{Channel, NetError, ServiceHandle};
use wpki::ocsp::{self, Responder};
use wpki::profiles::{ExtendedKeyUsage, WirelessCertificate};
use wpki::repository::{self, Directory, RemoteDirectory, Repository};
use wpki::time::{unix_now, SystemClock};

#[derive(Parser)]
#[command(
    name = "wpki",
    version,
    about = "Compact wireless PKI: services, device client and demo"
)]
struct Cli {
    /// key = value configuration file; falls back to $WPKI_CONFIG
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Port of the service this command runs or talks to
    #[arg(long, global = true)]
    port: Option<u16>,
    /// Root for all service and client state
    #[arg(long, global = true)]
    state_dir: Option<PathBuf>,
    /// sect163k1 (1) or p256 (2)
    #[arg(long, global = true)]
    curve: Option<String>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create the CA key, certificate and responder credentials
    CaInit,
    /// Run the CA; republishes the CRL every half validity period
    CaServe,
    /// Run the certificate directory
    RepoServe,
    /// Run the status responder
    OcspServe,
    /// Run a scripted server that presents a certificate to clients
    PeerServe {
        /// Client state to take the certificate from
        #[arg(long, default_value = "server")]
        name: String,
        /// Present a fresh short-lived certificate instead
        #[arg(long)]
        short_lived: bool,
    },
    /// Enroll a device and keep its state under <client dir>/<name>/state
    ClientEnroll {
        #[arg(long, default_value = "client")]
        name: String,
        #[arg(long)]
        device_id: Option<String>,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Run one transaction against a peer
    ClientTransact {
        #[arg(long, default_value = "client")]
        name: String,
        /// host:port of the peer; defaults to the configured peer port
        #[arg(long)]
        peer: Option<String>,
    },
    /// Revoke a serial number
    Revoke {
        serial: u64,
        /// unspecified, keyCompromise or superseded (or 0-2)
        #[arg(long, default_value = "unspecified")]
        reason: String,
    },
    /// Ask the CA to sign and publish a fresh CRL
    CrlPublish,
    /// Run every service in-process and play the scripted scenario
    Demo,
}

enum Failure {
    /// Bad configuration or usage: exit 2.
    Usage(String),
    /// The operation or scenario did not succeed: exit 1.
    Failed(String),
}

type Outcome = Result<(), Failure>;

fn failed(e: impl std::fmt::Display) -> Failure {
    Failure::Failed(e.to_string())
}

fn from_authority(e: AuthorityError) -> Failure {
    match e {
        AuthorityError::NotInitialized(dir) => {
            Failure::Usage(format!("no CA state under {}; run `wpki ca-init` first", dir.display()))
        }
        other => failed(other),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = load_config(&cli).and_then(|cfg| run(&cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("wpki: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(m)) => {
            eprintln!("wpki: {m}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<SuiteConfig, Failure> {
    let path = cli.config.clone().or_else(|| {
        std::env::var_os("WPKI_CONFIG")
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    let mut cfg = match &path {
        Some(p) => SuiteConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => SuiteConfig::default(),
    };
    if let Some(dir) = &cli.state_dir {
        cfg.state_dir = dir.clone();
        cfg.ca_state_dir = None;
        cfg.repo_state_dir = None;
        cfg.ocsp_state_dir = None;
        cfg.client_state_dir = None;
    }
    if let Some(c) = &cli.curve {
        cfg.curve = c
            .parse::<CurveId>()
            .map_err(|_| Failure::Usage(format!("unknown curve {c:?}")))?;
    }
    if let Some(port) = cli.port {
        let slot = match cli.command {
            Command::CaInit
            | Command::CaServe
            | Command::ClientEnroll { .. }
            | Command::Revoke { .. }
            | Command::CrlPublish => &mut cfg.ca_port,
            Command::RepoServe => &mut cfg.repo_port,
            Command::OcspServe => &mut cfg.ocsp_port,
            Command::PeerServe { .. } | Command::ClientTransact { .. } => &mut cfg.peer_port,
            Command::Demo => {
                return Err(Failure::Usage(
                    "--port does not apply to demo; set ports in the config".into(),
                ))
            }
        };
        *slot = port;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn run(command: &Command, cfg: &SuiteConfig) -> Outcome {
    match command {
        Command::CaInit => ca_init(cfg),
        Command::CaServe => ca_serve(cfg),
        Command::RepoServe => repo_serve(cfg),
        Command::OcspServe => ocsp_serve(cfg),
        Command::PeerServe { name, short_lived } => peer_serve(cfg, name, *short_lived),
        Command::ClientEnroll {
            name,
            device_id,
            subject,
        } => client_enroll(cfg, name, device_id.as_deref(), subject.as_deref()),
        Command::ClientTransact { name, peer } => client_transact(cfg, name, peer.as_deref()),
        Command::Revoke { serial, reason } => {
            let reason: RevocationReason = reason.parse().map_err(Failure::Usage)?;
            operator(
                cfg,
                RevokeAction::Revoke {
                    serial: *serial,
                    reason,
                },
            )
        }
        Command::CrlPublish => operator(cfg, RevokeAction::PublishCrl),
        Command::Demo => run_demo(cfg),
    }
}

fn bind(service: &str, addr: &str) -> Result<TcpListener, Failure> {
    TcpListener::bind(addr).map_err(|e| failed(format!("{service}: cannot listen on {addr}: {e}")))
}

fn listening(service: &str, handle: ServiceHandle) {
    println!("{service} listening on {}", handle.local_addr());
    handle.wait();
}

fn remote_directory(cfg: &SuiteConfig, ca_name: &str) -> Arc<RemoteDirectory> {
    Arc::new(RemoteDirectory::new(cfg.repo_addr(), ca_name))
}

fn ca_init(cfg: &SuiteConfig) -> Outcome {
    let ca = Authority::init(&cfg.authority_config(), remote_directory(cfg, &cfg.ca_name)).map_err(from_authority)?;
    let (_, responder) = demo::provision_responder(&ca, &cfg.ocsp_dir(), cfg.curve).map_err(failed)?;
    println!("CA {:?} ready in {}", ca.name(), ca.state_dir().display());
    println!(
        "responder {:?} (serial {}) in {}",
        responder.subject,
        responder.serial,
        cfg.ocsp_dir().join("ocsp").display()
    );
    Ok(())
}

fn ca_serve(cfg: &SuiteConfig) -> Outcome {
    let listener = bind("ca", &cfg.ca_addr())?;
    let name = authority::read_certificate(&cfg.ca_dir())
        .map_err(from_authority)?
        .subject;
    let ca = Arc::new(Authority::open(&cfg.authority_config(), remote_directory(cfg, &name)).map_err(from_authority)?);
    match ca.recover() {
        Ok(adopted) if !adopted.is_empty() => info!("adopted serials {adopted:?} found in the directory"),
        Ok(_) => {}
        Err(e) => warn!("recovery skipped: {e}"),
    }
    let validity = ca.crl_validity_s();
    let publisher = Arc::clone(&ca);
    thread::spawn(move || loop {
        match publisher.generate_crl(publisher.now(), validity) {
            Ok(crl) => info!("published CRL with {} entries", crl.entries.len()),
            Err(e) => error!("CRL publication failed: {e}"),
        }
        thread::sleep(Duration::from_secs((validity / 2).max(1)));
    });
    listening("ca", authority::serve(listener, ca).map_err(failed)?);
    Ok(())
}

fn repo_serve(cfg: &SuiteConfig) -> Outcome {
    let ca_cert = authority::read_certificate(&cfg.ca_dir()).map_err(from_authority)?;
    let listener = bind("repository", &cfg.repo_addr())?;
    let port = listener.local_addr().map_err(failed)?.port();
    let repo = Repository::open(&cfg.repo_dir(), &ca_cert, &cfg.host, port).map_err(failed)?;
    listening(
        "repository",
        repository::serve(listener, Arc::new(repo)).map_err(failed)?,
    );
    Ok(())
}

fn missing_responder(e: std::io::Error, cfg: &SuiteConfig) -> Failure {
    if e.kind() == std::io::ErrorKind::NotFound {
        Failure::Usage(format!(
            "no responder credentials under {}; run `wpki ca-init` first",
            cfg.ocsp_dir().display()
        ))
    } else {
        failed(format!("responder credentials: {e}"))
    }
}

fn ocsp_serve(cfg: &SuiteConfig) -> Outcome {
    let ca_cert = authority::read_certificate(&cfg.ca_dir()).map_err(from_authority)?;
    let (key, cert) = ocsp::load_credentials(&cfg.ocsp_dir()).map_err(|e| missing_responder(e, cfg))?;
    let listener = bind("responder", &cfg.ocsp_addr())?;
    let responder = Responder::new(
        &ca_cert,
        key,
        cert,
        remote_directory(cfg, &ca_cert.subject),
        cfg.short_lived_max_s,
    )
    .map_err(failed)?;
    listening("responder", ocsp::serve(listener, Arc::new(responder)).map_err(failed)?);
    Ok(())
}

/// The responder certificate, accepted only if the CA issued it for status signing.
fn trusted_responder(cfg: &SuiteConfig) -> Result<WirelessCertificate, Failure> {
    let ca_cert = authority::read_certificate(&cfg.ca_dir()).map_err(from_authority)?;
    let cert = ocsp::load_certificate(&cfg.ocsp_dir()).map_err(|e| missing_responder(e, cfg))?;
    let delegated = cert
        .extensions
        .extended_key_usage
        .is_some_and(|e| e.contains(ExtendedKeyUsage::OCSP_SIGNING));
    if !cert.verify_signature(&ca_cert.public_key_info) || !delegated {
        return Err(failed("responder certificate is not a CA delegation"));
    }
    Ok(cert)
}

fn state_path(cfg: &SuiteConfig, name: &str) -> PathBuf {
    cfg.client_dir().join(name).join("state")
}

fn load_state(path: &Path) -> Result<ClientState, Failure> {
    ClientState::load(path).map_err(|e| match e {
        wpki::enrollment::StateError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Usage(format!(
            "no client state at {}; run `wpki client-enroll` first",
            path.display()
        )),
        other => failed(other),
    })
}

fn peer_serve(cfg: &SuiteConfig, name: &str, short_lived: bool) -> Outcome {
    let responder = trusted_responder(cfg)?;
    let credential = if short_lived {
        let ca_name = authority::read_certificate(&cfg.ca_dir())
            .map_err(from_authority)?
            .subject;
        let ca = Authority::open(&cfg.authority_config(), remote_directory(cfg, &ca_name)).map_err(from_authority)?;
        let ecdh = crypto::generate_keypair(cfg.curve).map_err(failed)?;
        let cert = ca
            .issue_short_lived(name, ecdh.public_key(), unix_now(), cfg.short_lived_lifetime_s)
            .map_err(failed)?;
        PeerCredential::ShortLived(cert)
    } else {
        let state = load_state(&state_path(cfg, name))?;
        let cert = RemoteDirectory::new(state.cert_url.authority(), "")
            .fetch_certificate(&state.cert_url)
            .map_err(failed)?;
        PeerCredential::Wireless(cert)
    };
    println!("presenting {:?}", credential.subject());
    let listener = bind("peer", &cfg.peer_addr())?;
    let peer = Peer::new(
        credential,
        &cfg.ocsp_addr(),
        responder.public_key_info,
        cfg.freshness_s,
        Arc::new(SystemClock),
    );
    listening("peer", client::serve_peer(listener, Arc::new(peer)).map_err(failed)?);
    Ok(())
}

fn client_enroll(cfg: &SuiteConfig, name: &str, device_id: Option<&str>, subject: Option<&str>) -> Outcome {
    let path = state_path(cfg, name);
    let run = client::run_enrollment(
        &cfg.ca_addr(),
        &cfg.repo_addr(),
        cfg.curve,
        device_id.unwrap_or(name),
        subject.unwrap_or(name),
        unix_now(),
        Some(&path),
    );
    print!("enrollment traffic:\n{}", run.report.to_text());
    let report_path = cfg.client_dir().join(name).join("enrollment.report");
    if let Err(e) = run.report.write_file(&report_path) {
        warn!("cannot write {}: {e}", report_path.display());
    }
    let state = run.result.map_err(failed)?;
    println!("enrolled {name:?}: {}", state.cert_url);
    println!("state saved to {}", path.display());
    Ok(())
}

fn client_transact(cfg: &SuiteConfig, name: &str, peer: Option<&str>) -> Outcome {
    let state = load_state(&state_path(cfg, name))?;
    let responder = trusted_responder(cfg)?;
    let peer_addr = peer.map_or_else(|| cfg.peer_addr(), str::to_owned);
    let ocsp_addr = cfg.ocsp_addr();
    let clock = SystemClock;
    let params = TransactionParams {
        peer_addr: &peer_addr,
        ocsp_addr: &ocsp_addr,
        responder_key: &responder.public_key_info,
        freshness_s: cfg.freshness_s,
        clock: &clock,
    };
    let o = client::run_transaction(&state, &params).map_err(failed)?;
    println!(
        "peer {:?}: {} (proceeded={}, own status={})",
        o.peer_subject,
        o.peer_status,
        o.proceeded,
        o.own_status.map_or("-".to_owned(), |s| s.to_string())
    );
    print!("transaction traffic:\n{}", o.report.to_text());
    let report_path = cfg.client_dir().join(name).join("transaction.report");
    if let Err(e) = o.report.write_file(&report_path) {
        warn!("cannot write {}: {e}", report_path.display());
    }
    Ok(())
}

fn operator(cfg: &SuiteConfig, action: RevokeAction) -> Outcome {
    let admin = authority::read_admin_key(&cfg.ca_dir()).map_err(from_authority)?;
    let cmd = RevokeCommand::new(action, &admin);
    let mut ch = Channel::connect(&cfg.ca_addr(), "operator").map_err(failed)?;
    let refused = |e: NetError| match e {
        NetError::Remote(reply) => failed(format!("CA refused: {reply}")),
        other => failed(other),
    };
    match action {
        RevokeAction::Revoke { serial, reason } => {
            let _: RevokeCommand = ch.call(&cmd).map_err(refused)?;
            println!(
                "revoked serial {serial} ({}); run `wpki crl-publish` to publish",
                reason.name()
            );
        }
        RevokeAction::PublishCrl => {
            let crl: RevocationList = ch.call(&cmd).map_err(refused)?;
            println!(
                "published CRL: {} revoked, valid {}..{}",
                crl.entries.len(),
                crl.this_update,
                crl.next_update
            );
        }
    }
    Ok(())
}

fn run_demo(cfg: &SuiteConfig) -> Outcome {
    let report = demo::run_demo(cfg).map_err(failed)?;
    print!("{}", report.to_text());
    let path = cfg.client_dir().join("demo.report");
    if let Err(e) = report.client_total.write_file(&path) {
        warn!("cannot write {}: {e}", path.display());
    }
    if report.passed() {
        println!("demo passed");
        Ok(())
    } else {
        Err(failed("demo failed: a scenario check did not hold"))
    }
}
