//! The Koblitz curve sect163k1 (NIST K-163, WTLS curve 3):
//! y^2 + xy = x^3 + x^2 + 1 over GF(2^163), ECDSA with SHA-256.
//!
//! Scalar multiplication is plain double-and-add in affine coordinates and is
//! not constant time.

use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use rand::rngs::OsRng;

use super::gf2m::{Fe, ELEMENT_BYTES};

/// Compressed point: one prefix byte plus the x coordinate.
pub const POINT_BYTES: usize = 1 + ELEMENT_BYTES;
pub const SCALAR_BYTES: usize = 21;
pub const SIGNATURE_BYTES: usize = 2 * SCALAR_BYTES;

const ORDER_HEX: &str = "04000000000000000000020108A2E0CC0D99F8A5EF";
const GX_HEX: &str = "02FE13C0537BBC11ACAA07D793DE4E6D5E5C94EEE8";
const GY_HEX: &str = "0289070FB05D38FF58321F2E800536D538CCDAA3D9";
const ORDER_BITS: u64 = 163;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Point {
    Infinity,
    Affine { x: Fe, y: Fe },
}

pub fn order() -> &'static BigUint {
    static N: OnceLock<BigUint> = OnceLock::new();
    N.get_or_init(|| BigUint::parse_bytes(ORDER_HEX.as_bytes(), 16).unwrap())
}

pub fn generator() -> Point {
    Point::Affine {
        x: Fe::from_hex(GX_HEX),
        y: Fe::from_hex(GY_HEX),
    }
}

impl Point {
    pub fn is_on_curve(&self) -> bool {
        match *self {
            Point::Infinity => true,
            Point::Affine { x, y } => {
                let x2 = x.square();
                y.square() + x * y == x2 * x + x2 + Fe::ONE
            }
        }
    }

    pub fn negate(&self) -> Point {
        match *self {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => Point::Affine { x, y: x + y },
        }
    }

    pub fn double(&self) -> Point {
        match *self {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => {
                let Some(x_inv) = x.invert() else {
                    // x = 0 is the point of order two
                    return Point::Infinity;
                };
                let lambda = x + y * x_inv;
                let x3 = lambda.square() + lambda + Fe::ONE;
                let y3 = x.square() + (lambda + Fe::ONE) * x3;
                Point::Affine { x: x3, y: y3 }
            }
        }
    }

    pub fn add(&self, other: &Point) -> Point {
        match (*self, *other) {
            (Point::Infinity, q) => q,
            (p, Point::Infinity) => p,
            (Point::Affine { x: x1, y: y1 }, Point::Affine { x: x2, y: y2 }) => {
                if x1 == x2 {
                    return if y1 == y2 { self.double() } else { Point::Infinity };
                }
                let lambda = (y1 + y2) * (x1 + x2).invert().expect("distinct x");
                let x3 = lambda.square() + lambda + x1 + x2 + Fe::ONE;
                let y3 = lambda * (x1 + x3) + x3 + y1;
                Point::Affine { x: x3, y: y3 }
            }
        }
    }

    pub fn mul(&self, k: &BigUint) -> Point {
        let mut acc = Point::Infinity;
        for i in (0..k.bits()).rev() {
            acc = acc.double();
            if k.bit(i) {
                acc = acc.add(self);
            }
        }
        acc
    }

    /// SEC 1 compressed encoding for binary curves.
    pub fn to_compressed(&self) -> Option<[u8; POINT_BYTES]> {
        let Point::Affine { x, y } = *self else {
            return None;
        };
        let y_bit = match x.invert() {
            Some(xi) => (y * xi).lsb(),
            None => false,
        };
        let mut out = [0u8; POINT_BYTES];
        out[0] = 0x02 | y_bit as u8;
        out[1..].copy_from_slice(&x.to_be_bytes());
        Some(out)
    }

    pub fn from_compressed(bytes: &[u8]) -> Option<Point> {
        if bytes.len() != POINT_BYTES || (bytes[0] != 0x02 && bytes[0] != 0x03) {
            return None;
        }
        let y_bit = bytes[0] & 1 == 1;
        let x = Fe::from_be_bytes(bytes[1..].try_into().ok()?)?;
        let Some(x_inv) = x.invert() else {
            // y = sqrt(b) = 1
            return (!y_bit).then_some(Point::Affine { x, y: Fe::ONE });
        };
        // z^2 + z = x + a + b/x^2, y = x z
        let beta = x + Fe::ONE + x_inv.square();
        if beta.trace() {
            return None;
        }
        let mut z = beta.half_trace();
        if z.lsb() != y_bit {
            z = z + Fe::ONE;
        }
        let p = Point::Affine { x, y: x * z };
        p.is_on_curve().then_some(p)
    }
}

fn scalar_to_bytes(v: &BigUint) -> [u8; SCALAR_BYTES] {
    let raw = v.to_bytes_be();
    let mut out = [0u8; SCALAR_BYTES];
    out[SCALAR_BYTES - raw.len()..].copy_from_slice(&raw);
    out
}

fn random_scalar() -> BigUint {
    let one = BigUint::from(1u8);
    OsRng.gen_biguint_range(&one, order())
}

fn field_to_int(x: &Fe) -> BigUint {
    BigUint::from_bytes_be(&x.to_be_bytes())
}

/// Leftmost `ORDER_BITS` bits of the digest.
fn digest_to_int(digest: &[u8; 32]) -> BigUint {
    BigUint::from_bytes_be(digest) >> (256 - ORDER_BITS)
}

fn inv_mod_n(v: &BigUint) -> BigUint {
    let n = order();
    v.modpow(&(n - 2u8), n)
}

/// Parses a private scalar; must lie in [1, n-1].
pub fn parse_scalar(bytes: &[u8]) -> Option<BigUint> {
    if bytes.len() != SCALAR_BYTES {
        return None;
    }
    let d = BigUint::from_bytes_be(bytes);
    (d != BigUint::default() && &d < order()).then_some(d)
}

pub fn generate() -> ([u8; SCALAR_BYTES], [u8; POINT_BYTES]) {
    let d = random_scalar();
    let q = generator().mul(&d).to_compressed().expect("d in [1, n-1]");
    (scalar_to_bytes(&d), q)
}

pub fn public_from_scalar(d: &BigUint) -> [u8; POINT_BYTES] {
    generator().mul(d).to_compressed().expect("nonzero scalar")
}

/// Decodes and validates a public key: on the curve, not infinity, in the order-n subgroup.
pub fn parse_public(bytes: &[u8]) -> Option<Point> {
    let q = Point::from_compressed(bytes)?;
    (q.mul(order()) == Point::Infinity).then_some(q)
}

pub fn sign_digest(d: &BigUint, digest: &[u8; 32]) -> [u8; SIGNATURE_BYTES] {
    let n = order();
    let e = digest_to_int(digest);
    loop {
        let k = random_scalar();
        let Point::Affine { x, .. } = generator().mul(&k) else {
            continue;
        };
        let r = field_to_int(&x) % n;
        if r == BigUint::default() {
            continue;
        }
        let s = (inv_mod_n(&k) * ((&e + &r * d) % n)) % n;
        if s == BigUint::default() {
            continue;
        }
        let mut out = [0u8; SIGNATURE_BYTES];
        out[..SCALAR_BYTES].copy_from_slice(&scalar_to_bytes(&r));
        out[SCALAR_BYTES..].copy_from_slice(&scalar_to_bytes(&s));
        return out;
    }
}

/// Signature must already be `SIGNATURE_BYTES` long; out-of-range scalars verify false.
pub fn verify_digest(q: &Point, digest: &[u8; 32], sig: &[u8]) -> bool {
    debug_assert_eq!(sig.len(), SIGNATURE_BYTES);
    let n = order();
    let zero = BigUint::default();
    let r = BigUint::from_bytes_be(&sig[..SCALAR_BYTES]);
    let s = BigUint::from_bytes_be(&sig[SCALAR_BYTES..]);
    if r == zero || s == zero || &r >= n || &s >= n {
        return false;
    }
    let e = digest_to_int(digest);
    let w = inv_mod_n(&s);
    let u1 = (&e * &w) % n;
    let u2 = (&r * &w) % n;
    match generator().mul(&u1).add(&q.mul(&u2)) {
        Point::Infinity => false,
        Point::Affine { x, .. } => field_to_int(&x) % n == r,
    }
}
