//! Toy cryptographic primitives for the group-keying protocol.
//!
//! **None of this is secure.** Key sizes fit in machine words, the RSA
//! wrapping is octet-wise textbook RSA without padding, and the two
//! symmetric ciphers are a byte-additive scheme and an LCG keystream XOR.
//! The primitives exist so that key-possession semantics — who can unwrap
//! what, and when — are exactly observable at desk scale. Do not reuse them
//! for anything that needs actual confidentiality.
//!
//! Two distinct symmetric ciphers are deliberately provided: cipher A
//! encrypts message bodies under the per-message key, cipher B wraps that
//! message key under a neighborhood key, so the two encryption layers of a
//! packet never share an algorithm.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("symmetric key must not be empty")]
    EmptyKey,
    #[error("rsa residue {residue} is not below the modulus {modulus}")]
    MalformedWrap { residue: u64, modulus: u64 },
    #[error("rsa-recovered value {0} does not fit in a byte")]
    Corruption(u64),
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("rsa primes must be distinct")]
    EqualPrimes,
    #[error("modulus {0} is too small to wrap single bytes")]
    ModulusTooSmall(u64),
    #[error("malformed mac address {0:?}")]
    MalformedMac(String),
}

/// 48-bit hardware address; the source's MAC seeds the per-message key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress(pub [u8; 6]);

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddress {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(CryptoError::MalformedMac(s.to_string()));
        }
        let mut bytes = [0u8; 6];
        for (i, part) in parts.iter().enumerate() {
            if part.len() != 2 {
                return Err(CryptoError::MalformedMac(s.to_string()));
            }
            bytes[i] = u8::from_str_radix(part, 16)
                .map_err(|_| CryptoError::MalformedMac(s.to_string()))?;
        }
        Ok(MacAddress(bytes))
    }
}

/// Public half of an RSA key pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RsaPublicKey {
    pub n: u64,
    pub e: u64,
}

/// Word-sized RSA key pair. Primes are drawn from [53, 2^15] so every
/// intermediate fits comfortably in 64-bit arithmetic and `n > 255`, which
/// makes any single byte a valid residue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RsaKeyPair {
    pub p: u64,
    pub q: u64,
    pub n: u64,
    pub e: u64,
    pub d: u64,
}

impl RsaKeyPair {
    /// Assemble a key pair from two primes. The public exponent starts at
    /// 17 and steps to the next odd value coprime with the totient.
    pub fn from_primes(p: u64, q: u64) -> Result<Self, CryptoError> {
        if !is_prime(p) {
            return Err(CryptoError::NotPrime(p));
        }
        if !is_prime(q) {
            return Err(CryptoError::NotPrime(q));
        }
        if p == q {
            return Err(CryptoError::EqualPrimes);
        }
        let n = p * q;
        if n <= 255 {
            return Err(CryptoError::ModulusTooSmall(n));
        }
        let phi = (p - 1) * (q - 1);
        let mut e = 17;
        while gcd(e, phi) != 1 {
            e += 2;
        }
        let d = mod_inverse(e, phi);
        Ok(Self { p, q, n, e, d })
    }

    pub fn public(&self) -> RsaPublicKey {
        RsaPublicKey {
            n: self.n,
            e: self.e,
        }
    }
}

/// A node's own versioned symmetric key, shared only with authenticated
/// tree neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodKey {
    pub owner: NodeId,
    pub version: u32,
    pub bytes: [u8; 16],
}

/// Per-message symmetric key: source MAC followed by the big-endian
/// sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageKey(pub [u8; 10]);

/// Draw a fresh RSA key pair from the generator. Deterministic: the same
/// generator state always yields the same pair.
pub fn rsa_keygen<R: Rng + ?Sized>(rng: &mut R) -> RsaKeyPair {
    let p = draw_prime(rng);
    let q = loop {
        let q = draw_prime(rng);
        if q != p {
            break q;
        }
    };
    RsaKeyPair::from_primes(p, q).expect("sampled primes always form a valid pair")
}

fn draw_prime<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    loop {
        let candidate = rng.gen_range(53..=1u64 << 15);
        if is_prime(candidate) {
            return candidate;
        }
    }
}

/// Octet-wise RSA encryption: one residue `b^e mod n` per payload byte.
pub fn rsa_wrap(key: &RsaPublicKey, payload: &[u8]) -> Vec<u64> {
    debug_assert!(key.n > 255);
    payload
        .iter()
        .map(|&b| mod_pow(b as u64, key.e, key.n))
        .collect()
}

/// Inverse of [`rsa_wrap`]: `c^d mod n` per residue.
pub fn rsa_unwrap(key: &RsaKeyPair, residues: &[u64]) -> Result<Vec<u8>, CryptoError> {
    let mut out = Vec::with_capacity(residues.len());
    for &c in residues {
        if c >= key.n {
            return Err(CryptoError::MalformedWrap {
                residue: c,
                modulus: key.n,
            });
        }
        let m = mod_pow(c, key.d, key.n);
        if m > 255 {
            return Err(CryptoError::Corruption(m));
        }
        out.push(m as u8);
    }
    Ok(out)
}

/// Cipher A: byte-additive stream, `c[i] = p[i] + key[i mod |key|] mod 256`.
pub fn cipher_a_encrypt(key: &[u8], plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    Ok(plaintext
        .iter()
        .enumerate()
        .map(|(i, &p)| p.wrapping_add(key[i % key.len()]))
        .collect())
}

pub fn cipher_a_decrypt(key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    Ok(ciphertext
        .iter()
        .enumerate()
        .map(|(i, &c)| c.wrapping_sub(key[i % key.len()]))
        .collect())
}

/// Cipher B: XOR against an LCG keystream seeded by folding the key bytes.
/// Encryption and decryption are the same operation.
pub fn cipher_b_encrypt(key: &[u8], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    let mut state: u32 = key
        .iter()
        .fold(0u32, |s, &b| s.wrapping_mul(31).wrapping_add(b as u32));
    Ok(data
        .iter()
        .map(|&b| {
            state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            b ^ (state >> 24) as u8
        })
        .collect())
}

pub fn cipher_b_decrypt(key: &[u8], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    cipher_b_encrypt(key, data)
}

/// Message-specific key for one `(source, sequence)` pair.
pub fn derive_message_key(mac: &MacAddress, seq: u32) -> MessageKey {
    let mut bytes = [0u8; 10];
    bytes[..6].copy_from_slice(&mac.0);
    bytes[6..].copy_from_slice(&seq.to_be_bytes());
    MessageKey(bytes)
}

/// Neighborhood key for `(owner, version)` under a scenario seed. A pure
/// function of its inputs, so re-deriving at any point in a run yields the
/// same bytes regardless of event interleaving.
pub fn generate_neighborhood_key(owner: NodeId, version: u32, seed: u64) -> NeighborhoodKey {
    let mut seed_bytes = [0u8; 32];
    seed_bytes[..8].copy_from_slice(&seed.to_be_bytes());
    seed_bytes[8..12].copy_from_slice(&owner.0.to_be_bytes());
    seed_bytes[12..16].copy_from_slice(&version.to_be_bytes());
    seed_bytes[16..].copy_from_slice(b"neighborhood-key");
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    NeighborhoodKey {
        owner,
        version,
        bytes,
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn mod_pow(base: u64, mut exp: u64, modulus: u64) -> u64 {
    let m = modulus as u128;
    let mut result: u128 = 1;
    let mut b = base as u128 % m;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result * b % m;
        }
        b = b * b % m;
        exp >>= 1;
    }
    result as u64
}

/// Modular inverse of `a` modulo `m`; caller guarantees `gcd(a, m) = 1`.
fn mod_inverse(a: u64, m: u64) -> u64 {
    let (mut old_r, mut r) = (a as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let quotient = old_r / r;
        (old_r, r) = (r, old_r - quotient * r);
        (old_s, s) = (s, old_s - quotient * s);
    }
    debug_assert_eq!(old_r, 1, "inputs must be coprime");
    (old_s.rem_euclid(m as i128)) as u64
}
