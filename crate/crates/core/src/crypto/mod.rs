//! Key generation, SHA-256, ECDSA and the password-derived request MAC.
//!
//! Two curves are registered: sect163k1 (id 1), the 163-bit binary Koblitz
//! curve, implemented in [`k163`], and NIST P-256 (id 2) backed by the `p256`
//! crate. Id `0xFF` names an RSA-1024 public-key placeholder that exists only
//! so encoded sizes can be compared; no operation accepts it.

pub mod gf2m;
pub mod k163;

use std::fmt;

use hmac::{Hmac, Mac};
use p256::ecdsa::signature::{Signer, Verifier};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroizing;

pub const KDF_ITERATIONS: u32 = 10_000;
pub const MAC_KEY_LEN: usize = 32;
pub const MAC_TAG_LEN: usize = 32;
/// Size of an RSA-1024 public key blob: 128-byte modulus plus 3-byte exponent.
pub const RSA1024_PLACEHOLDER_LEN: usize = 131;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported curve id {0}")]
    UnsupportedCurve(u8),
    #[error("invalid key")]
    InvalidKey,
    #[error("malformed signature")]
    MalformedSignature,
    #[error("malformed public key")]
    MalformedKey,
    #[error("credential inputs must be non-empty")]
    EmptyCredential,
    #[error("MAC key must be {MAC_KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CurveId {
    Sect163k1 = 1,
    P256 = 2,
    Rsa1024Placeholder = 0xFF,
}

impl CurveId {
    pub fn from_code(code: u8) -> Result<Self, CryptoError> {
        match code {
            1 => Ok(CurveId::Sect163k1),
            2 => Ok(CurveId::P256),
            0xFF => Ok(CurveId::Rsa1024Placeholder),
            other => Err(CryptoError::UnsupportedCurve(other)),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Length of an encoded public key under this id.
    pub fn public_key_len(self) -> usize {
        match self {
            CurveId::Sect163k1 => k163::POINT_BYTES,
            CurveId::P256 => 33,
            CurveId::Rsa1024Placeholder => RSA1024_PLACEHOLDER_LEN,
        }
    }

    fn scalar_len(self) -> usize {
        match self {
            CurveId::Sect163k1 => k163::SCALAR_BYTES,
            CurveId::P256 => 32,
            CurveId::Rsa1024Placeholder => 0,
        }
    }
}

impl fmt::Display for CurveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveId::Sect163k1 => "sect163k1",
            CurveId::P256 => "p256",
            CurveId::Rsa1024Placeholder => "rsa1024-placeholder",
        })
    }
}

impl std::str::FromStr for CurveId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "sect163k1" | "k163" => Ok(CurveId::Sect163k1),
            "2" | "p256" | "secp256r1" | "prime256v1" => Ok(CurveId::P256),
            _ => Err(CryptoError::UnsupportedCurve(0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SignatureAlgorithm {
    EcdsaSha256 = 1,
}

impl SignatureAlgorithm {
    pub fn from_code(code: u8) -> Option<Self> {
        (code == 1).then_some(SignatureAlgorithm::EcdsaSha256)
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Curve id plus encoded public point.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PublicKeyInfo {
    pub curve: CurveId,
    pub key: Vec<u8>,
}

impl PublicKeyInfo {
    pub fn new(curve: CurveId, key: Vec<u8>) -> Self {
        PublicKeyInfo { curve, key }
    }

    /// `curve_id || key`, the value of the public-key-info field.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.key.len());
        out.push(self.curve.code());
        out.extend_from_slice(&self.key);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let (&code, key) = bytes.split_first()?;
        let curve = CurveId::from_code(code).ok()?;
        (key.len() == curve.public_key_len()).then(|| PublicKeyInfo::new(curve, key.to_vec()))
    }

    /// First 20 bytes of SHA-256 over the encoded key.
    pub fn key_id(&self) -> [u8; 20] {
        let d = hash(&self.to_bytes());
        d[..20].try_into().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignatureValue {
    pub algorithm: SignatureAlgorithm,
    pub bytes: Vec<u8>,
}

impl SignatureValue {
    /// `algorithm_id || bytes`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.bytes.len());
        out.push(self.algorithm.code());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let (&code, sig) = bytes.split_first()?;
        Some(SignatureValue {
            algorithm: SignatureAlgorithm::from_code(code)?,
            bytes: sig.to_vec(),
        })
    }
}

pub struct KeyPair {
    curve: CurveId,
    public: PublicKeyInfo,
    secret: Zeroizing<Vec<u8>>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("curve", &self.curve)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl Clone for KeyPair {
    fn clone(&self) -> Self {
        KeyPair {
            curve: self.curve,
            public: self.public.clone(),
            secret: self.secret.clone(),
        }
    }
}

impl KeyPair {
    pub fn curve(&self) -> CurveId {
        self.curve
    }

    pub fn public_key(&self) -> &PublicKeyInfo {
        &self.public
    }

    pub fn secret_bytes(&self) -> &[u8] {
        &self.secret
    }

    /// Rebuilds a key pair from a stored private scalar, deriving the public key.
    pub fn from_secret(curve: CurveId, secret: &[u8]) -> Result<Self, CryptoError> {
        let public = derive_public(curve, secret)?;
        Ok(KeyPair {
            curve,
            public: PublicKeyInfo::new(curve, public),
            secret: Zeroizing::new(secret.to_vec()),
        })
    }

    /// Checks `public = secret * G`.
    pub fn is_consistent(&self) -> bool {
        derive_public(self.curve, &self.secret).is_ok_and(|p| p == self.public.key)
    }
}

/// Public point for a private scalar, compressed.
pub fn derive_public(curve: CurveId, secret: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if secret.len() != curve.scalar_len() {
        return Err(CryptoError::InvalidKey);
    }
    match curve {
        CurveId::Sect163k1 => {
            let d = k163::parse_scalar(secret).ok_or(CryptoError::InvalidKey)?;
            Ok(k163::public_from_scalar(&d).to_vec())
        }
        CurveId::P256 => {
            let sk = p256::ecdsa::SigningKey::from_slice(secret).map_err(|_| CryptoError::InvalidKey)?;
            Ok(sk.verifying_key().to_encoded_point(true).as_bytes().to_vec())
        }
        CurveId::Rsa1024Placeholder => Err(CryptoError::UnsupportedCurve(curve.code())),
    }
}

pub fn generate_keypair(curve: CurveId) -> Result<KeyPair, CryptoError> {
    match curve {
        CurveId::Sect163k1 => {
            let (d, q) = k163::generate();
            Ok(KeyPair {
                curve,
                public: PublicKeyInfo::new(curve, q.to_vec()),
                secret: Zeroizing::new(d.to_vec()),
            })
        }
        CurveId::P256 => {
            let sk = p256::ecdsa::SigningKey::random(&mut rand::rngs::OsRng);
            let public = sk.verifying_key().to_encoded_point(true).as_bytes().to_vec();
            Ok(KeyPair {
                curve,
                public: PublicKeyInfo::new(curve, public),
                secret: Zeroizing::new(sk.to_bytes().to_vec()),
            })
        }
        CurveId::Rsa1024Placeholder => Err(CryptoError::UnsupportedCurve(curve.code())),
    }
}

pub fn hash(message: &[u8]) -> [u8; 32] {
    Sha256::digest(message).into()
}

pub fn sign(message: &[u8], key: &KeyPair) -> Result<SignatureValue, CryptoError> {
    let bytes = match key.curve {
        CurveId::Sect163k1 => {
            let d = k163::parse_scalar(&key.secret).ok_or(CryptoError::InvalidKey)?;
            k163::sign_digest(&d, &hash(message)).to_vec()
        }
        CurveId::P256 => {
            let sk = p256::ecdsa::SigningKey::from_slice(&key.secret).map_err(|_| CryptoError::InvalidKey)?;
            let sig: p256::ecdsa::Signature = sk.sign(message);
            sig.to_bytes().to_vec()
        }
        CurveId::Rsa1024Placeholder => return Err(CryptoError::UnsupportedCurve(key.curve.code())),
    };
    Ok(SignatureValue {
        algorithm: SignatureAlgorithm::EcdsaSha256,
        bytes,
    })
}

/// `Ok(false)` means a well-formed signature that does not verify. Structural
/// problems (wrong lengths, undecodable key) are errors.
pub fn verify(message: &[u8], sig: &SignatureValue, public_key: &PublicKeyInfo) -> Result<bool, CryptoError> {
    match public_key.curve {
        CurveId::Sect163k1 => {
            let q = k163::parse_public(&public_key.key).ok_or(CryptoError::MalformedKey)?;
            if sig.bytes.len() != k163::SIGNATURE_BYTES {
                return Err(CryptoError::MalformedSignature);
            }
            Ok(k163::verify_digest(&q, &hash(message), &sig.bytes))
        }
        CurveId::P256 => {
            let vk =
                p256::ecdsa::VerifyingKey::from_sec1_bytes(&public_key.key).map_err(|_| CryptoError::MalformedKey)?;
            if sig.bytes.len() != 64 {
                return Err(CryptoError::MalformedSignature);
            }
            // Out-of-range r or s is a failed verification, not a malformed input.
            let Ok(s) = p256::ecdsa::Signature::from_slice(&sig.bytes) else {
                return Ok(false);
            };
            Ok(vk.verify(message, &s).is_ok())
        }
        CurveId::Rsa1024Placeholder => Err(CryptoError::MalformedKey),
    }
}

/// Convenience wrapper treating every failure as "does not verify".
pub fn verifies(message: &[u8], sig: &SignatureValue, public_key: &PublicKeyInfo) -> bool {
    verify(message, sig, public_key).unwrap_or(false)
}

#[derive(Clone, PartialEq, Eq)]
pub struct MacKey(Zeroizing<[u8; MAC_KEY_LEN]>);

impl fmt::Debug for MacKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MacKey(..)")
    }
}

impl MacKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; MAC_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::BadKeyLength(bytes.len()))?;
        Ok(MacKey(Zeroizing::new(arr)))
    }

    pub fn random() -> Self {
        let mut k = [0u8; MAC_KEY_LEN];
        rand::rngs::OsRng.fill_bytes(&mut k);
        MacKey(Zeroizing::new(k))
    }

    pub fn as_bytes(&self) -> &[u8; MAC_KEY_LEN] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MacTag(pub [u8; MAC_TAG_LEN]);

/// PBKDF2-HMAC-SHA256 over `username || 0x00 || password`, salted with the random code.
pub fn derive_mac_key(username: &str, password: &str, random_code: &str) -> Result<MacKey, CryptoError> {
    if username.is_empty() || password.is_empty() || random_code.is_empty() {
        return Err(CryptoError::EmptyCredential);
    }
    let mut secret = Zeroizing::new(Vec::with_capacity(username.len() + password.len() + 1));
    secret.extend_from_slice(username.as_bytes());
    secret.push(0);
    secret.extend_from_slice(password.as_bytes());
    let mut out = [0u8; MAC_KEY_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(&secret, random_code.as_bytes(), KDF_ITERATIONS, &mut out);
    Ok(MacKey(Zeroizing::new(out)))
}

pub fn mac(key: &MacKey, message: &[u8]) -> MacTag {
    let mut m = <Hmac<Sha256> as Mac>::new_from_slice(key.as_bytes()).expect("any key length");
    m.update(message);
    MacTag(m.finalize().into_bytes().into())
}

/// Constant-time check; tags of the wrong length never verify.
pub fn mac_verify(key: &MacKey, message: &[u8], tag: &[u8]) -> bool {
    let mut m = <Hmac<Sha256> as Mac>::new_from_slice(key.as_bytes()).expect("any key length");
    m.update(message);
    tag.len() == MAC_TAG_LEN && m.verify_slice(tag).is_ok()
}

/// Uniform random string over `alphabet`.
pub fn random_string(alphabet: &[u8], len: usize) -> String {
    use rand::Rng;
    let mut rng = rand::rngs::OsRng;
    (0..len)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char)
        .collect()
}

pub fn random_bytes<const N: usize>() -> [u8; N] {
    let mut out = [0u8; N];
    rand::rngs::OsRng.fill_bytes(&mut out);
    out
}
