//! Suite configuration: a flat `key = value` file with `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::authority::{self, AuthorityConfig};
use crate::crypto::CurveId;
use crate::{client, ocsp, profiles, repository};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteConfig {
    pub host: String,
    pub ca_port: u16,
    pub repo_port: u16,
    pub ocsp_port: u16,
    pub peer_port: u16,
    pub state_dir: PathBuf,
    pub ca_state_dir: Option<PathBuf>,
    pub repo_state_dir: Option<PathBuf>,
    pub ocsp_state_dir: Option<PathBuf>,
    pub client_state_dir: Option<PathBuf>,
    pub ca_name: String,
    pub curve: CurveId,
    pub cert_lifetime_s: u64,
    pub crl_validity_s: u64,
    pub short_lived_max_s: u64,
    pub short_lived_lifetime_s: u64,
    pub freshness_s: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            host: "127.0.0.1".to_owned(),
            ca_port: authority::DEFAULT_PORT,
            repo_port: repository::DEFAULT_PORT,
            ocsp_port: ocsp::DEFAULT_PORT,
            peer_port: client::DEFAULT_PEER_PORT,
            state_dir: PathBuf::from("wpki-state"),
            ca_state_dir: None,
            repo_state_dir: None,
            ocsp_state_dir: None,
            client_state_dir: None,
            ca_name: "WPKI Root CA".to_owned(),
            curve: CurveId::Sect163k1,
            cert_lifetime_s: authority::DEFAULT_CERT_LIFETIME_S,
            crl_validity_s: authority::DEFAULT_CRL_VALIDITY_S,
            short_lived_max_s: profiles::DEFAULT_SHORT_LIVED_MAX_S,
            short_lived_lifetime_s: profiles::DEFAULT_SHORT_LIVED_LIFETIME_S,
            freshness_s: ocsp::DEFAULT_FRESHNESS_S,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

impl SuiteConfig {
    /// Parses `text` over the defaults. Later duplicates win.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected key = value".into(),
            })?;
            pairs.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        let mut cfg = SuiteConfig::default();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let dir = || Some(PathBuf::from(value));
        match key {
            "host" => self.host = value.to_owned(),
            "state_dir" => self.state_dir = PathBuf::from(value),
            "ca.port" => self.ca_port = parse_num(key, value)?,
            "ca.state_dir" => self.ca_state_dir = dir(),
            "ca.name" => self.ca_name = value.to_owned(),
            "ca.crl_validity_s" => self.crl_validity_s = parse_num(key, value)?,
            "ca.cert_lifetime_s" => self.cert_lifetime_s = parse_num(key, value)?,
            "ca.curve_id" => {
                self.curve = value.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_owned(),
                    value: value.to_owned(),
                })?
            }
            "repo.port" => self.repo_port = parse_num(key, value)?,
            "repo.state_dir" => self.repo_state_dir = dir(),
            "ocsp.port" => self.ocsp_port = parse_num(key, value)?,
            "ocsp.state_dir" => self.ocsp_state_dir = dir(),
            "ocsp.freshness_s" => self.freshness_s = parse_num(key, value)?,
            "peer.port" => self.peer_port = parse_num(key, value)?,
            "client.state_dir" => self.client_state_dir = dir(),
            "short_lived_max_s" => self.short_lived_max_s = parse_num(key, value)?,
            "short_lived_lifetime_s" => self.short_lived_lifetime_s = parse_num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
        Ok(())
    }

    /// Ports must be distinct (0, meaning "any free port", may repeat) and lifetimes positive.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ports = [
            ("ca.port", self.ca_port),
            ("repo.port", self.repo_port),
            ("ocsp.port", self.ocsp_port),
            ("peer.port", self.peer_port),
        ];
        for (i, (a, pa)) in ports.iter().enumerate() {
            for (b, pb) in &ports[i + 1..] {
                if *pa != 0 && pa == pb {
                    return Err(ConfigError::Invalid(format!("{a} and {b} are both {pa}")));
                }
            }
        }
        for (name, v) in [
            ("ca.cert_lifetime_s", self.cert_lifetime_s),
            ("ca.crl_validity_s", self.crl_validity_s),
            ("short_lived_max_s", self.short_lived_max_s),
            ("short_lived_lifetime_s", self.short_lived_lifetime_s),
            ("ocsp.freshness_s", self.freshness_s),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.short_lived_lifetime_s > self.short_lived_max_s {
            return Err(ConfigError::Invalid(
                "short_lived_lifetime_s exceeds short_lived_max_s".into(),
            ));
        }
        if self.host.is_empty() {
            return Err(ConfigError::Invalid("host is empty".into()));
        }
        Ok(())
    }

    fn addr(&self, port: u16) -> String {
        format!("{}:{port}", self.host)
    }

    pub fn ca_addr(&self) -> String {
        self.addr(self.ca_port)
    }

    pub fn repo_addr(&self) -> String {
        self.addr(self.repo_port)
    }

    pub fn ocsp_addr(&self) -> String {
        self.addr(self.ocsp_port)
    }

    pub fn peer_addr(&self) -> String {
        self.addr(self.peer_port)
    }

    fn dir(&self, specific: &Option<PathBuf>) -> PathBuf {
        specific.clone().unwrap_or_else(|| self.state_dir.clone())
    }

    /// Each service keeps its files in a subdirectory (`ca/`, `repo/`, ...) of these roots.
    pub fn ca_dir(&self) -> PathBuf {
        self.dir(&self.ca_state_dir)
    }

    pub fn repo_dir(&self) -> PathBuf {
        self.dir(&self.repo_state_dir)
    }

    pub fn ocsp_dir(&self) -> PathBuf {
        self.dir(&self.ocsp_state_dir)
    }

    pub fn client_dir(&self) -> PathBuf {
        self.dir(&self.client_state_dir)
    }

    pub fn authority_config(&self) -> AuthorityConfig {
        AuthorityConfig {
            state_dir: self.ca_dir(),
            name: self.ca_name.clone(),
            curve: self.curve,
            cert_lifetime_s: self.cert_lifetime_s,
            crl_validity_s: self.crl_validity_s,
            short_lived_max_s: self.short_lived_max_s,
            repository_addr: self.repo_addr(),
            ocsp_addr: self.ocsp_addr(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = SuiteConfig::parse("# suite\nca.port = 9001 # ca\nca.curve_id=2\n\nstate_dir=/tmp/x\n").unwrap();
        assert_eq!(cfg.ca_port, 9001);
        assert_eq!(cfg.curve, CurveId::P256);
        assert_eq!(cfg.ca_dir(), PathBuf::from("/tmp/x"));
        assert_eq!(cfg.repo_port, 7002);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            SuiteConfig::parse("nope"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            SuiteConfig::parse("ca.colour=1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            SuiteConfig::parse("ca.port=x"),
            Err(ConfigError::BadValue { .. })
        ));
        let same = SuiteConfig::parse("ca.port=7002").unwrap();
        assert!(matches!(same.validate(), Err(ConfigError::Invalid(_))));
        let zero = SuiteConfig::parse("ca.crl_validity_s=0").unwrap();
        assert!(zero.validate().is_err());
        let any = SuiteConfig::parse("ca.port=0\nrepo.port=0\nocsp.port=0\npeer.port=0").unwrap();
        any.validate().unwrap();
    }
}
