//! Systematic Reed-Solomon over GF(256).
//!
//! The generator is the identity on the `k` data shards stacked on a Cauchy
//! block `C[r][j] = 1 / ((k + r) ^ j)`. Every square submatrix of a Cauchy
//! matrix is invertible, so any `k` shards determine the data.

use thiserror::Error;

use crate::gf256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ErasureError {
    #[error("invalid code parameters k = {k}, n = {n}")]
    InvalidParameters { k: usize, n: usize },
    #[error("need {need} distinct shards, got {have}")]
    TooFewShards { have: usize, need: usize },
    #[error("shard index {0} out of range")]
    BadIndex(usize),
    #[error("shards have different lengths")]
    LengthMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReedSolomon {
    k: usize,
    n: usize,
}

impl ReedSolomon {
    pub fn new(k: usize, n: usize) -> Result<Self, ErasureError> {
        if k == 0 || k > n || n > 256 {
            return Err(ErasureError::InvalidParameters { k, n });
        }
        Ok(Self { k, n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> Vec<u8> {
        if i < self.k {
            (0..self.k).map(|j| u8::from(j == i)).collect()
        } else {
            (0..self.k)
                .map(|j| gf256::inv(((i) ^ j) as u8))
                .collect()
        }
    }

    pub fn shard_len(&self, data_len: usize) -> usize {
        data_len.div_ceil(self.k).max(1)
    }

    /// Splits `data` into `n` shards of equal length. The caller keeps the
    /// original length to strip padding on decode.
    pub fn encode(&self, data: &[u8]) -> Vec<Vec<u8>> {
        let len = self.shard_len(data.len());
        let mut shards: Vec<Vec<u8>> = (0..self.k)
            .map(|j| {
                let mut s = data
                    .get(j * len..((j + 1) * len).min(data.len()))
                    .unwrap_or(&[])
                    .to_vec();
                s.resize(len, 0);
                s
            })
            .collect();
        for i in self.k..self.n {
            let mut parity = vec![0u8; len];
            for (j, c) in self.row(i).into_iter().enumerate() {
                gf256::mul_acc(&mut parity, &shards[j], c);
            }
            shards.push(parity);
        }
        shards
    }

    /// Rebuilds the data from the first `k` distinct shards supplied.
    pub fn decode(&self, shards: &[(usize, &[u8])], data_len: usize) -> Result<Vec<u8>, ErasureError> {
        let mut picked: Vec<(usize, &[u8])> = Vec::with_capacity(self.k);
        for &(i, s) in shards {
            if i >= self.n {
                return Err(ErasureError::BadIndex(i));
            }
            if picked.iter().all(|(j, _)| *j != i) {
                picked.push((i, s));
            }
            if picked.len() == self.k {
                break;
            }
        }
        if picked.len() < self.k {
            return Err(ErasureError::TooFewShards {
                have: picked.len(),
                need: self.k,
            });
        }
        let len = picked[0].1.len();
        if picked.iter().any(|(_, s)| s.len() != len) {
            return Err(ErasureError::LengthMismatch);
        }
        let m: Vec<Vec<u8>> = picked.iter().map(|(i, _)| self.row(*i)).collect();
        let inv = gf256::invert(&m).expect("Cauchy submatrices are invertible");
        let mut out = Vec::with_capacity(self.k * len);
        for row in &inv {
            let mut d = vec![0u8; len];
            for (c, (_, s)) in row.iter().zip(&picked) {
                gf256::mul_acc(&mut d, s, *c);
            }
            out.extend_from_slice(&d);
        }
        out.truncate(data_len);
        Ok(out)
    }
}
