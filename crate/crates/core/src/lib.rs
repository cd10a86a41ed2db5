//! A small wireless PKI: compact certificate profiles, an enrollment protocol
//! with proof of possession, a certificate directory addressed by URL, and a
//! status responder that validates on behalf of constrained clients.
//!
//! Every protocol message is a TLV entity ([`codec`]) carried in a
//! length-prefixed frame over TCP ([`net`]).

pub mod authority;
pub mod client;
pub mod codec;
pub mod config;
pub mod crypto;
pub mod demo;
pub mod enrollment;
pub mod fsutil;
pub mod net;
pub mod ocsp;
pub mod profiles;
pub mod repository;
pub mod time;
