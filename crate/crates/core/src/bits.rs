//! Bit sequences and the composable polynomial fingerprint.
//!
//! Data bits are read most-significant-bit first within each byte, so a
//! byte string reads left to right. Numbers embedded in bit content are the
//! other way round: bit `i` of the number sits at position `i`.

use std::fmt;

use bitvec::prelude::*;

use crate::error::{ChonkError, Result};

/// Largest prime below 2^32.
pub const DEFAULT_MODULUS: u64 = 4_294_967_291;
/// Knuth's multiplicative constant; odd, below the modulus.
pub const DEFAULT_BASE: u64 = 2_654_435_761;

/// An ordered sequence of bits. Position 0 is the leftmost bit.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitContent {
    bits: BitVec<usize, Lsb0>,
}

impl BitContent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self {
            bits: bits.iter().copied().collect(),
        }
    }

    /// Bytes in reading order, each byte most significant bit first.
    pub fn from_bytes_msb_first(bytes: &[u8]) -> Self {
        let mut out = Self::new();
        for &b in bytes {
            for i in (0..8).rev() {
                out.push(b >> i & 1 == 1);
            }
        }
        out
    }

    /// The low `len` bits of `word`, LSB first.
    pub fn from_word(word: u64, len: u32) -> Self {
        let mut out = Self::new();
        for i in 0..len {
            out.push(word >> i & 1 == 1);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.bits.get(i).map(|b| *b)
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn extend(&mut self, other: &BitContent) {
        self.bits.extend_from_bitslice(&other.bits);
    }

    pub fn concat(&self, other: &BitContent) -> BitContent {
        let mut out = self.clone();
        out.extend(other);
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().by_vals()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }
}

impl fmt::Debug for BitContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BitContent[")?;
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

/// `n` as `width` bits, least significant first.
pub fn encode_number(n: u128, width: u32) -> Result<BitContent> {
    if width < 128 && n >> width != 0 {
        return Err(ChonkError::Range { value: n, width });
    }
    let mut out = BitContent::new();
    for i in 0..width {
        out.push(i < 128 && n >> i & 1 == 1);
    }
    Ok(out)
}

/// A fingerprint value tagged with the ring it lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolyHash {
    pub value: u64,
    pub base: u64,
    pub modulus: u64,
}

/// `left.value + base^left_len * right.value`, the hash of the concatenation.
pub fn hash_concat(left: PolyHash, right: PolyHash, left_len: u64) -> Result<PolyHash> {
    if left.base != right.base || left.modulus != right.modulus {
        return Err(ChonkError::Config(format!(
            "hash rings differ: ({}, {}) vs ({}, {})",
            left.base, left.modulus, right.base, right.modulus
        )));
    }
    let ring = HashRing::new(left.base, left.modulus)?;
    let value = ring.add(left.value, ring.mul(ring.pow_base(left_len), right.value));
    Ok(PolyHash { value, ..left })
}

/// Arithmetic modulo a prime below 2^32, with memoised `base^(2^k)`.
#[derive(Clone)]
pub struct HashRing {
    base: u64,
    modulus: u64,
    squares: [u64; 64],
}

impl fmt::Debug for HashRing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashRing")
            .field("base", &self.base)
            .field("modulus", &self.modulus)
            .finish()
    }
}

impl PartialEq for HashRing {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.modulus == other.modulus
    }
}

impl Eq for HashRing {}

impl Default for HashRing {
    fn default() -> Self {
        Self::new(DEFAULT_BASE, DEFAULT_MODULUS).expect("default ring is valid")
    }
}

impl HashRing {
    pub fn new(base: u64, modulus: u64) -> Result<Self> {
        if !(2..=1 << 32).contains(&modulus) {
            return Err(ChonkError::Config(format!(
                "modulus {modulus} outside [2, 2^32]"
            )));
        }
        if base >= modulus {
            return Err(ChonkError::Config(format!(
                "base {base} not below modulus {modulus}"
            )));
        }
        let mut squares = [0u64; 64];
        squares[0] = base;
        for k in 1..64 {
            squares[k] = squares[k - 1] * squares[k - 1] % modulus;
        }
        Ok(Self {
            base,
            modulus,
            squares,
        })
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        (a + b) % self.modulus
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        a * b % self.modulus
    }

    /// `base^exponent`, one multiplication per set bit of the exponent.
    pub fn pow_base(&self, exponent: u64) -> u64 {
        let mut acc = 1 % self.modulus;
        let mut e = exponent;
        let mut k = 0;
        while e != 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, self.squares[k]);
            }
            e >>= 1;
            k += 1;
        }
        acc
    }

    pub fn tag(&self, value: u64) -> PolyHash {
        PolyHash {
            value,
            base: self.base,
            modulus: self.modulus,
        }
    }

    pub fn hash_bits(&self, c: &BitContent) -> PolyHash {
        let mut h = 0;
        for i in (0..c.len()).rev() {
            h = self.add(self.mul(h, self.base), c.bits[i] as u64);
        }
        self.tag(h)
    }

    /// Hash of the low `len` bits of `word` read LSB first.
    pub fn hash_word(&self, word: u64, len: u32) -> u64 {
        let mut h = 0;
        for i in (0..len).rev() {
            h = self.add(self.mul(h, self.base), word >> i & 1);
        }
        h
    }

    /// Monoid product of `(hash, base^len)` pairs: the pair of the concatenation.
    #[inline]
    pub fn combine(&self, left: (u64, u64), right: (u64, u64)) -> (u64, u64) {
        (
            self.add(left.0, self.mul(left.1, right.0)),
            self.mul(left.1, right.1),
        )
    }

    /// `count` copies of `item` concatenated, by repeated squaring.
    pub fn repeat(&self, item: (u64, u64), count: u64) -> (u64, u64) {
        let mut acc = (0, 1 % self.modulus);
        let mut sq = item;
        let mut n = count;
        while n != 0 {
            if n & 1 == 1 {
                acc = self.combine(acc, sq);
            }
            sq = self.combine(sq, sq);
            n >>= 1;
        }
        acc
    }
}
