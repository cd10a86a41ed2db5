//! Arithmetic in GF(2^163) with reduction polynomial x^163 + x^7 + x^6 + x^3 + 1.
//!
//! Elements are polynomials over GF(2) stored little-endian in three 64-bit limbs.

use std::ops::{Add, Mul};

pub const DEGREE: u32 = 163;
const TOP_BITS: u32 = DEGREE - 128;
const TOP_MASK: u64 = (1u64 << TOP_BITS) - 1;
/// Bytes in the big-endian encoding of an element.
pub const ELEMENT_BYTES: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Fe(pub(crate) [u64; 3]);

impl Fe {
    pub const ZERO: Fe = Fe([0, 0, 0]);
    pub const ONE: Fe = Fe([1, 0, 0]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0, 0, 0]
    }

    pub fn lsb(&self) -> bool {
        self.0[0] & 1 == 1
    }

    /// Big-endian bytes; rejects values with bits at or above x^163.
    pub fn from_be_bytes(bytes: &[u8; ELEMENT_BYTES]) -> Option<Fe> {
        let mut padded = [0u8; 24];
        padded[3..].copy_from_slice(bytes);
        let hi = u64::from_be_bytes(padded[0..8].try_into().unwrap());
        let mid = u64::from_be_bytes(padded[8..16].try_into().unwrap());
        let lo = u64::from_be_bytes(padded[16..24].try_into().unwrap());
        (hi & !TOP_MASK == 0).then_some(Fe([lo, mid, hi]))
    }

    pub fn to_be_bytes(&self) -> [u8; ELEMENT_BYTES] {
        let mut padded = [0u8; 24];
        padded[0..8].copy_from_slice(&self.0[2].to_be_bytes());
        padded[8..16].copy_from_slice(&self.0[1].to_be_bytes());
        padded[16..24].copy_from_slice(&self.0[0].to_be_bytes());
        padded[3..].try_into().unwrap()
    }

    pub fn from_hex(hex: &str) -> Fe {
        let mut bytes = [0u8; ELEMENT_BYTES];
        let digits = hex.trim_start_matches("0x");
        let padded = format!("{:0>42}", digits);
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&padded[2 * i..2 * i + 2], 16).expect("hex digit");
        }
        Fe::from_be_bytes(&bytes).expect("element in range")
    }

    pub fn square(&self) -> Fe {
        let mut wide = [0u64; 6];
        for (i, limb) in self.0.iter().enumerate() {
            wide[2 * i] = spread(*limb as u32);
            wide[2 * i + 1] = spread((*limb >> 32) as u32);
        }
        reduce(wide)
    }

    /// Repeated squaring: self^(2^k).
    pub fn square_n(&self, k: u32) -> Fe {
        let mut r = *self;
        for _ in 0..k {
            r = r.square();
        }
        r
    }

    /// Multiplicative inverse by the binary extended Euclidean algorithm.
    /// The inverse of zero is reported as `None`.
    pub fn invert(&self) -> Option<Fe> {
        if self.is_zero() {
            return None;
        }
        let modulus = [(1u64 << 7) | (1 << 6) | (1 << 3) | 1, 0, 1u64 << TOP_BITS];
        let mut u = self.0;
        let mut v = modulus;
        let mut g1 = [1u64, 0, 0, 0];
        let mut g2 = [0u64; 4];
        while u != [1, 0, 0] {
            let mut j = degree(&u) as i32 - degree(&v) as i32;
            if j < 0 {
                std::mem::swap(&mut u, &mut v);
                std::mem::swap(&mut g1, &mut g2);
                j = -j;
            }
            xor_shifted(&mut u, &v, j as u32);
            xor_shifted(&mut g1, &g2, j as u32);
        }
        Some(reduce([g1[0], g1[1], g1[2], g1[3], 0, 0]))
    }

    /// Tr(c) = c + c^2 + ... + c^(2^162).
    pub fn trace(&self) -> bool {
        let mut t = *self;
        let mut acc = *self;
        for _ in 1..DEGREE {
            t = t.square();
            acc = acc + t;
        }
        debug_assert!(acc == Fe::ZERO || acc == Fe::ONE);
        acc.lsb()
    }

    /// Half-trace: a solution z of z^2 + z = c when Tr(c) = 0 (odd degree only).
    pub fn half_trace(&self) -> Fe {
        let mut t = *self;
        let mut acc = *self;
        for _ in 0..(DEGREE - 1) / 2 {
            t = t.square().square();
            acc = acc + t;
        }
        acc
    }
}

impl Add for Fe {
    type Output = Fe;

    fn add(self, rhs: Fe) -> Fe {
        Fe([self.0[0] ^ rhs.0[0], self.0[1] ^ rhs.0[1], self.0[2] ^ rhs.0[2]])
    }
}

impl Mul for Fe {
    type Output = Fe;

    fn mul(self, rhs: Fe) -> Fe {
        let mut wide = [0u64; 6];
        for i in 0..3 {
            for j in 0..3 {
                let p = clmul64(self.0[i], rhs.0[j]);
                wide[i + j] ^= p as u64;
                wide[i + j + 1] ^= (p >> 64) as u64;
            }
        }
        reduce(wide)
    }
}

/// Carry-less 64x64 -> 128 multiplication with a 4-bit window.
fn clmul64(a: u64, b: u64) -> u128 {
    let a = a as u128;
    let mut table = [0u128; 16];
    for i in 1..16 {
        table[i] = if i & 1 == 1 {
            table[i - 1] ^ a
        } else {
            table[i / 2] << 1
        };
    }
    let mut acc = 0u128;
    for nibble in (0..16).rev() {
        acc <<= 4;
        acc ^= table[((b >> (4 * nibble)) & 0xF) as usize];
    }
    acc
}

/// Interleaves zero bits: bit i of `x` moves to bit 2i.
fn spread(x: u32) -> u64 {
    let mut v = x as u64;
    v = (v | (v << 16)) & 0x0000_FFFF_0000_FFFF;
    v = (v | (v << 8)) & 0x00FF_00FF_00FF_00FF;
    v = (v | (v << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    v = (v | (v << 2)) & 0x3333_3333_3333_3333;
    v = (v | (v << 1)) & 0x5555_5555_5555_5555;
    v
}

fn reduce(mut c: [u64; 6]) -> Fe {
    // x^163 = x^7 + x^6 + x^3 + 1; a word at limb i sits at x^(64(i-3) + 29) above x^163.
    for i in (3..6).rev() {
        let t = c[i];
        c[i] = 0;
        for s in [29u32, 32, 35, 36] {
            c[i - 3] ^= t << s;
            c[i - 2] ^= t >> (64 - s);
        }
    }
    let t = c[2] >> TOP_BITS;
    c[2] &= TOP_MASK;
    c[0] ^= t ^ (t << 3) ^ (t << 6) ^ (t << 7);
    Fe([c[0], c[1], c[2]])
}

fn degree(p: &[u64; 3]) -> u32 {
    for i in (0..3).rev() {
        if p[i] != 0 {
            return 64 * i as u32 + 63 - p[i].leading_zeros();
        }
    }
    0
}

fn xor_shifted<const N: usize, const M: usize>(dst: &mut [u64; N], src: &[u64; M], shift: u32) {
    let words = (shift / 64) as usize;
    let bits = shift % 64;
    for i in 0..M {
        if i + words < N {
            dst[i + words] ^= src[i] << bits;
        }
        if bits != 0 && i + words + 1 < N {
            dst[i + words + 1] ^= src[i] >> (64 - bits);
        }
    }
}
