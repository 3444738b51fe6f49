//! Textbook RSA with Chaum blinding.
//!
//! A requester blinds a message representative `m` with a factor `r` as
//! `m * r^e mod n`; the signer raises it to `d`; the requester divides out
//! `r` to obtain an ordinary signature `s` with `s^e = m (mod n)`. The
//! signer never sees `m` or `s`.
//!
//! No padding and no constant-time arithmetic.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::hash::Hash32;

/// Smallest modulus size accepted by `keygen`.
pub const MIN_TEST_BITS: u64 = 16;
/// Modulus size used by the node service.
pub const SERVICE_BITS: u64 = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RsaError {
    #[error("modulus of {0} bits is below the {MIN_TEST_BITS}-bit floor")]
    KeyTooSmall(u64),
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("blinding factor shares a factor with the modulus")]
    BadBlindingFactor,
    #[error("message representative must satisfy 0 < m < n")]
    MessageOutOfRange,
}

/// Serde adapter: big unsigned integers as lowercase hex without leading zeros.
pub mod biguint_hex {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &BigUint, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&n.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse(&s).ok_or_else(|| serde::de::Error::custom("expected minimal lowercase hex integer"))
    }

    pub fn parse(s: &str) -> Option<BigUint> {
        let minimal = s == "0" || (!s.is_empty() && !s.starts_with('0'));
        if !minimal || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return None;
        }
        BigUint::parse_bytes(s.as_bytes(), 16)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsaPublicKey {
    #[serde(with = "biguint_hex")]
    pub n: BigUint,
    #[serde(with = "biguint_hex")]
    pub e: BigUint,
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsaKeyPair {
    #[serde(with = "biguint_hex")]
    pub n: BigUint,
    #[serde(with = "biguint_hex")]
    pub e: BigUint,
    #[serde(with = "biguint_hex")]
    pub d: BigUint,
    #[serde(with = "biguint_hex")]
    pub p: BigUint,
    #[serde(with = "biguint_hex")]
    pub q: BigUint,
}

impl std::fmt::Debug for RsaKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsaKeyPair").field("n", &self.n).field("e", &self.e).finish_non_exhaustive()
    }
}

impl RsaKeyPair {
    /// Builds a key from its primes and exponents after checking every invariant.
    pub fn from_parts(p: BigUint, q: BigUint, e: BigUint, d: BigUint) -> Result<Self, RsaError> {
        let key = RsaKeyPair { n: &p * &q, e, d, p, q };
        key.check()?;
        Ok(key)
    }

    /// n = p*q for distinct primes and e*d = 1 (mod lcm(p-1, q-1)).
    pub fn check(&self) -> Result<(), RsaError> {
        let mut rng = rand::thread_rng();
        if self.p == self.q {
            return Err(RsaError::InvalidKey("p and q must be distinct"));
        }
        if !is_probable_prime(&self.p, &mut rng) || !is_probable_prime(&self.q, &mut rng) {
            return Err(RsaError::InvalidKey("p and q must be prime"));
        }
        if &self.p * &self.q != self.n {
            return Err(RsaError::InvalidKey("n must equal p*q"));
        }
        let lambda = carmichael(&self.p, &self.q);
        if (&self.e * &self.d) % &lambda != BigUint::one() {
            return Err(RsaError::InvalidKey("e*d must be 1 modulo lcm(p-1, q-1)"));
        }
        Ok(())
    }

    pub fn public(&self) -> RsaPublicKey {
        RsaPublicKey { n: self.n.clone(), e: self.e.clone() }
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Signs an already-blinded value: `blinded^d mod n`.
    pub fn sign_blinded(&self, blinded: &BigUint) -> Result<BigUint, RsaError> {
        if blinded >= &self.n {
            return Err(RsaError::MessageOutOfRange);
        }
        Ok(blinded.modpow(&self.d, &self.n))
    }
}

fn carmichael(p: &BigUint, q: &BigUint) -> BigUint {
    let one = BigUint::one();
    (p - &one).lcm(&(q - &one))
}

/// Generates a key whose modulus has exactly `bits` bits.
pub fn keygen<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<RsaKeyPair, RsaError> {
    if bits < MIN_TEST_BITS {
        return Err(RsaError::KeyTooSmall(bits));
    }
    let p_bits = bits / 2;
    let q_bits = bits - p_bits;
    loop {
        let p = random_prime(p_bits, rng);
        let q = random_prime(q_bits, rng);
        if p == q {
            continue;
        }
        let lambda = carmichael(&p, &q);
        let Some(e) = pick_exponent(&lambda) else { continue };
        let Some(d) = e.modinv(&lambda) else { continue };
        let key = RsaKeyPair { n: &p * &q, e, d, p, q };
        debug_assert_eq!(key.n.bits(), bits);
        return Ok(key);
    }
}

/// 65537 when it fits, otherwise the smallest odd exponent coprime to lambda.
fn pick_exponent(lambda: &BigUint) -> Option<BigUint> {
    let f4 = BigUint::from(65537u32);
    if &f4 < lambda && f4.gcd(lambda).is_one() {
        return Some(f4);
    }
    let mut e = BigUint::from(3u32);
    while &e < lambda {
        if e.gcd(lambda).is_one() {
            return Some(e);
        }
        e += 2u32;
    }
    None
}

const SMALL_PRIMES: [u32; 24] = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97];

/// Random prime with the top two bits set so products keep full length.
fn random_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 4);
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

/// Trial division by small primes, then 32 Miller-Rabin rounds.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n.is_even() {
        return n == &two;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    if n < &BigUint::from(97u32 * 97) {
        return true;
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().expect("n - 1 is nonzero");
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..32 {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `m * r^e mod n`.
pub fn blind(message: &BigUint, blinding: &BigUint, key: &RsaPublicKey) -> Result<BigUint, RsaError> {
    if message.is_zero() || message >= &key.n {
        return Err(RsaError::MessageOutOfRange);
    }
    if !blinding.gcd(&key.n).is_one() {
        return Err(RsaError::BadBlindingFactor);
    }
    Ok((message * blinding.modpow(&key.e, &key.n)) % &key.n)
}

/// `s_blind * r^-1 mod n`.
pub fn unblind(signed_blinded: &BigUint, blinding: &BigUint, key: &RsaPublicKey) -> Result<BigUint, RsaError> {
    let inverse = blinding.modinv(&key.n).ok_or(RsaError::BadBlindingFactor)?;
    Ok((signed_blinded * inverse) % &key.n)
}

/// `s < n` and `s^e = m (mod n)`.
pub fn verify(message: &BigUint, signature: &BigUint, key: &RsaPublicKey) -> bool {
    signature < &key.n && &signature.modpow(&key.e, &key.n) == message
}

/// A uniformly random blinding factor coprime to `n`.
pub fn random_blinding<R: RngCore + ?Sized>(key: &RsaPublicKey, rng: &mut R) -> BigUint {
    let one = BigUint::one();
    loop {
        let r = rng.gen_biguint_range(&one, &key.n);
        if r.gcd(&key.n).is_one() {
            return r;
        }
    }
}

/// Message representative of a ballot serial: SHA-256("ballot" || round_id || serial) mod n.
pub fn ballot_digest(round_id: &Hash32, serial: &[u8; 16], key: &RsaPublicKey) -> BigUint {
    let h = Hash32::digest_parts(&[b"ballot", round_id.as_bytes(), serial]);
    BigUint::from_bytes_be(h.as_bytes()) % &key.n
}
