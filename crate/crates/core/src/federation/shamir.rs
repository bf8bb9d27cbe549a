//! Byte-wise Shamir secret sharing over GF(256).
//!
//! Share `i` is the evaluation of a random polynomial of degree
//! `threshold - 1` at `x = i` (1-based), one polynomial per secret byte.

use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::hex_bytes;
use crate::gf256;
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("invalid sharing parameters: threshold {threshold}, shares {n}")]
    InvalidParameters { threshold: usize, n: usize },
    #[error("no shares supplied")]
    NoShares,
    #[error("share index 0 is reserved for the secret")]
    ZeroIndex,
    #[error("duplicate share index {0}")]
    DuplicateIndex(u8),
    #[error("shares have different lengths")]
    LengthMismatch,
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    x: u8,
    #[serde(with = "hex_bytes")]
    y: Vec<u8>,
}

impl std::fmt::Debug for Share {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Share(x={}, {} bytes)", self.x, self.y.len())
    }
}

impl Share {
    pub fn new(x: u8, y: Vec<u8>) -> Self {
        Self { x, y }
    }

    pub fn index(&self) -> u8 {
        self.x
    }

    pub fn bytes(&self) -> &[u8] {
        &self.y
    }

    /// Fault injection helper.
    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.y
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.x).bytes(&self.y);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let x = r.u8()?;
        let y = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { x, y })
    }
}

pub fn split_secret<R: RngCore>(
    secret: &[u8],
    threshold: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    if threshold == 0 || threshold > n || n > 255 {
        return Err(SharingError::InvalidParameters { threshold, n });
    }
    let mut shares: Vec<Share> = (1..=n as u8)
        .map(|x| Share {
            x,
            y: Vec::with_capacity(secret.len()),
        })
        .collect();
    let mut coeffs = vec![0u8; threshold];
    for &s in secret {
        coeffs[0] = s;
        rng.fill_bytes(&mut coeffs[1..]);
        for share in &mut shares {
            // Horner evaluation at x.
            let y = coeffs
                .iter()
                .rev()
                .fold(0u8, |acc, &c| gf256::add(gf256::mul(acc, share.x), c));
            share.y.push(y);
        }
    }
    Ok(shares)
}

/// Lagrange interpolation at zero over all supplied shares. With fewer
/// shares than the sharing threshold the output is unrelated to the secret;
/// callers detect that through an integrity check on what the secret unlocks.
pub fn reconstruct_secret(shares: &[Share]) -> Result<Vec<u8>, SharingError> {
    let first = shares.first().ok_or(SharingError::NoShares)?;
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.x == 0 {
            return Err(SharingError::ZeroIndex);
        }
        if !seen.insert(s.x) {
            return Err(SharingError::DuplicateIndex(s.x));
        }
        if s.y.len() != first.y.len() {
            return Err(SharingError::LengthMismatch);
        }
    }
    let weights: Vec<u8> = shares
        .iter()
        .map(|sj| {
            shares
                .iter()
                .filter(|sm| sm.x != sj.x)
                .fold(1u8, |acc, sm| {
                    gf256::mul(acc, gf256::div(sm.x, gf256::add(sm.x, sj.x)))
                })
        })
        .collect();
    let mut secret = vec![0u8; first.y.len()];
    for (s, &w) in shares.iter().zip(&weights) {
        gf256::mul_acc(&mut secret, &s.y, w);
    }
    Ok(secret)
}
