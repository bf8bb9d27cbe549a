//! Hashing, hybrid encryption, signatures and seeded randomness.
//!
//! Fixed choices used everywhere in the crate:
//!
//! * hash: SHA-256
//! * signatures: Ed25519 (deterministic)
//! * hybrid encryption: ephemeral X25519 agreement, SHA-256 key derivation,
//!   ChaCha20-Poly1305 with a zero nonce (the derived key is single use)
//! * randomness: ChaCha20 streams derived from one 64-bit scenario seed

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

pub use ed25519_dalek::{Signature, SigningKey, VerifyingKey};

/// Length of a sealed-box header (ephemeral public key).
pub const SEAL_HEADER_LEN: usize = 32;
/// AEAD tag length.
pub const TAG_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("ciphertext truncated")]
    Truncated,
    #[error("authenticated decryption failed")]
    Open,
    #[error("encryption failed")]
    Seal,
}

/// A 256-bit SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Self::of_parts(&[bytes])
    }

    /// Hash of the concatenation of `parts`. Callers are responsible for
    /// making the concatenation unambiguous.
    pub fn of_parts(parts: &[&[u8]]) -> Self {
        use sha2::Digest as _;
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses 64 lowercase hex characters. Uppercase is rejected so that
    /// every digest has exactly one textual form.
    pub fn from_hex(s: &str) -> Result<Self, String> {
        let bytes = strict_hex(s)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "digest must be 32 bytes".to_string())?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Lowercase-only hex decoding.
pub fn strict_hex(s: &str) -> Result<Vec<u8>, String> {
    if s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(format!("not lowercase hex: {s:?}"));
    }
    hex::decode(s).map_err(|e| e.to_string())
}

/// Serde helpers for byte fields rendered as lowercase hex.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: AsRef<[u8]>>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        super::strict_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Derives an independent deterministic stream from the scenario seed.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let d = Digest::of_parts(&[b"epitrace/rng/v1", &seed.to_be_bytes(), label.as_bytes()]);
    ChaCha20Rng::from_seed(d.0)
}

pub fn random_bytes<const N: usize, R: RngCore>(rng: &mut R) -> [u8; N] {
    let mut out = [0u8; N];
    rng.fill_bytes(&mut out);
    out
}

/// X25519 keypair used for the sealed-box encryption.
pub fn generate_keypair<R: RngCore + CryptoRng>(rng: &mut R) -> (StaticSecret, PublicKey) {
    let secret = StaticSecret::random_from_rng(&mut *rng);
    let public = PublicKey::from(&secret);
    (secret, public)
}

pub fn generate_signing_key<R: RngCore>(rng: &mut R) -> SigningKey {
    SigningKey::from_bytes(&random_bytes::<32, _>(rng))
}

fn seal_key(shared: &[u8; 32], ephemeral: &PublicKey, recipient: &PublicKey) -> [u8; 32] {
    Digest::of_parts(&[
        b"epitrace/seal/v1",
        shared,
        ephemeral.as_bytes(),
        recipient.as_bytes(),
    ])
    .0
}

/// Hybrid public-key encryption. Output is `ephemeral_pk (32) || aead(plaintext)`.
pub fn seal<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    plaintext: &[u8],
    aad: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    let (eph, eph_pub) = generate_keypair(rng);
    let shared = eph.diffie_hellman(recipient);
    let key = seal_key(shared.as_bytes(), &eph_pub, recipient);
    let body = aead_encrypt(&key, &[0u8; 12], plaintext, aad)?;
    let mut out = Vec::with_capacity(SEAL_HEADER_LEN + body.len());
    out.extend_from_slice(eph_pub.as_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn open(secret: &StaticSecret, sealed: &[u8], aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < SEAL_HEADER_LEN + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let mut eph = [0u8; 32];
    eph.copy_from_slice(&sealed[..SEAL_HEADER_LEN]);
    let eph_pub = PublicKey::from(eph);
    let recipient = PublicKey::from(secret);
    let shared = secret.diffie_hellman(&eph_pub);
    let key = seal_key(shared.as_bytes(), &eph_pub, &recipient);
    aead_decrypt(&key, &[0u8; 12], &sealed[SEAL_HEADER_LEN..], aad)
}

pub fn aead_encrypt(
    key: &[u8; 32],
    nonce: &[u8; 12],
    plaintext: &[u8],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad })
        .map_err(|_| CryptoError::Seal)
}

pub fn aead_decrypt(
    key: &[u8; 32],
    nonce: &[u8; 12],
    ciphertext: &[u8],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ciphertext, aad })
        .map_err(|_| CryptoError::Open)
}

pub fn verify_signature(key: &VerifyingKey, msg: &[u8], sig: &Signature) -> bool {
    key.verify_strict(msg, sig).is_ok()
}
