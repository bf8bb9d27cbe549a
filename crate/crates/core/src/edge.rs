//! Per-provider edge secure cloud.
//!
//! Providers hold a [`ProviderPort`], which can only push. Stored sets are
//! sealed under the provider's federation key; the minute and station hint
//! stay in clear so that pruning and range queries need no decryption.
//!
//! VPN framing:
//!
//! ```text
//! fetch request  = len | certificate | start u64 | end u64
//! fetch response = status u8 | body
//!   status 0: count u32 | (len | encrypted set)*
//!   status 1 (locked), 2 (unauthorized), 3 (malformed): len | reason utf-8
//! encrypted set  = minute u64 | code[16] | class u8 | len | ciphertext
//! ```

use rand::{CryptoRng, RngCore};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::crypto::{derive_rng, open, seal};
use crate::federation::{
    Federation, FederationError, LedgerEvent, MinuteRange, QuorumCertificate, StateListener,
};
use crate::mobility::ProviderId;
use crate::pdr::{BsCode, CodeToken, Minute, PdrError, PdrSet, PrecisionClass};
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error, PartialEq)]
pub enum EdgeError {
    #[error("edge cloud is locked to VPN operations")]
    Locked,
    #[error("not authorized: {0}")]
    Unauthorized(#[from] FederationError),
    #[error("encryption failed")]
    Encrypt,
    #[error("decryption failed")]
    Decrypt,
    #[error("decrypted set does not match its cleartext metadata")]
    MetadataMismatch,
    #[error(transparent)]
    Pdr(#[from] PdrError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("remote error: {0}")]
    Remote(String),
}

#[derive(Clone, PartialEq, Eq)]
pub struct EncryptedPdrSet {
    pub ciphertext: Vec<u8>,
    pub minute: Minute,
    pub bs_code_hint: BsCode,
}

impl std::fmt::Debug for EncryptedPdrSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "EncryptedPdrSet(minute={}, bs={}, {} bytes)",
            self.minute,
            self.bs_code_hint.code,
            self.ciphertext.len()
        )
    }
}

fn set_aad(minute: Minute, bs: &BsCode) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(b"epitrace/edge/v1")
        .u64(minute)
        .raw(bs.code.as_bytes())
        .u8(bs.precision_class.tag());
    w.finish()
}

impl EncryptedPdrSet {
    pub fn seal<R: RngCore + CryptoRng>(
        set: &PdrSet,
        key: &PublicKey,
        rng: &mut R,
    ) -> Result<Self, EdgeError> {
        let aad = set_aad(set.minute(), &set.bs());
        let ciphertext = seal(key, &set.encode(), &aad, rng).map_err(|_| EdgeError::Encrypt)?;
        Ok(Self {
            ciphertext,
            minute: set.minute(),
            bs_code_hint: set.bs(),
        })
    }

    pub fn decrypt(&self, key: &StaticSecret) -> Result<PdrSet, EdgeError> {
        let plain = self.decrypt_bytes(key)?;
        let set = PdrSet::decode(&plain)?;
        if set.minute() != self.minute || set.bs() != self.bs_code_hint {
            return Err(EdgeError::MetadataMismatch);
        }
        Ok(set)
    }

    /// Canonical serialization of the enclosed set.
    pub fn decrypt_bytes(&self, key: &StaticSecret) -> Result<Vec<u8>, EdgeError> {
        open(
            key,
            &self.ciphertext,
            &set_aad(self.minute, &self.bs_code_hint),
        )
        .map_err(|_| EdgeError::Decrypt)
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.u64(self.minute)
            .raw(self.bs_code_hint.code.as_bytes())
            .u8(self.bs_code_hint.precision_class.tag())
            .bytes(&self.ciphertext);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, EdgeError> {
        let minute = r.u64()?;
        let raw = r.array::<16>()?;
        let code = std::str::from_utf8(&raw)
            .map_err(|_| WireError::InvalidUtf8("station code"))
            .map(CodeToken::parse)??;
        let precision_class = PrecisionClass::from_tag(r.u8()?)?;
        let ciphertext = r.bytes()?.to_vec();
        Ok(Self {
            ciphertext,
            minute,
            bs_code_hint: BsCode {
                code,
                precision_class,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    /// A set left the store after its ciphertext was overwritten.
    SecureDelete {
        now: Minute,
        set_minute: Minute,
        bytes_zeroed: usize,
        verified_zero: bool,
    },
    Locked,
    Unlocked { epoch: u64 },
    FetchServed { now: Minute, sets: usize },
    FetchRefused { now: Minute, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EdgeMetrics {
    pub pushed: u64,
    pub rejected: u64,
    pub pruned: u64,
    pub fetches_served: u64,
    pub fetches_refused: u64,
}

pub struct EdgeCloud {
    provider: ProviderId,
    federation_key: PublicKey,
    store: Vec<EncryptedPdrSet>,
    locked_for_vpn: bool,
    pdr_ttl: Minute,
    last_prune: Option<Minute>,
    audit: Vec<AuditEvent>,
    metrics: EdgeMetrics,
    rng: ChaCha20Rng,
}

/// The only handle a provider gets on its edge cloud.
pub struct ProviderPort<'a> {
    cloud: &'a mut EdgeCloud,
}

impl ProviderPort<'_> {
    pub fn push(&mut self, set: &PdrSet) -> Result<(), EdgeError> {
        self.cloud.push(set)
    }
}

impl EdgeCloud {
    /// A fresh cloud starts locked, as the system starts PASSIVE.
    pub fn new(provider: ProviderId, federation_key: PublicKey, pdr_ttl: Minute, seed: u64) -> Self {
        Self {
            provider,
            federation_key,
            store: Vec::new(),
            locked_for_vpn: true,
            pdr_ttl,
            last_prune: None,
            audit: Vec::new(),
            metrics: EdgeMetrics::default(),
            rng: derive_rng(seed, &format!("edge/{provider}")),
        }
    }

    pub fn provider(&self) -> ProviderId {
        self.provider
    }

    pub fn provider_port(&mut self) -> ProviderPort<'_> {
        ProviderPort { cloud: self }
    }

    fn push(&mut self, set: &PdrSet) -> Result<(), EdgeError> {
        match EncryptedPdrSet::seal(set, &self.federation_key, &mut self.rng) {
            Ok(e) => {
                self.store.push(e);
                self.metrics.pushed += 1;
                Ok(())
            }
            Err(e) => {
                self.metrics.rejected += 1;
                Err(e)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn is_locked(&self) -> bool {
        self.locked_for_vpn
    }

    pub fn pdr_ttl(&self) -> Minute {
        self.pdr_ttl
    }

    pub fn last_prune(&self) -> Option<Minute> {
        self.last_prune
    }

    pub fn audit(&self) -> &[AuditEvent] {
        &self.audit
    }

    pub fn metrics(&self) -> &EdgeMetrics {
        &self.metrics
    }

    /// What the hosting data centre sees on disk: ciphertext plus cleartext
    /// minute and station token.
    pub fn raw_store(&self) -> &[EncryptedPdrSet] {
        &self.store
    }

    /// Age of the oldest stored set relative to `now`.
    pub fn oldest_age(&self, now: Minute) -> Option<Minute> {
        self.store.iter().map(|e| now.saturating_sub(e.minute)).max()
    }

    /// Securely deletes every set with `now - minute > pdr_ttl`.
    pub fn prune(&mut self, now: Minute) -> usize {
        let ttl = self.pdr_ttl;
        let mut kept = Vec::with_capacity(self.store.len());
        let mut removed = 0;
        for mut e in std::mem::take(&mut self.store) {
            if now.saturating_sub(e.minute) > ttl {
                e.ciphertext.fill(0);
                self.audit.push(AuditEvent::SecureDelete {
                    now,
                    set_minute: e.minute,
                    bytes_zeroed: e.ciphertext.len(),
                    verified_zero: e.ciphertext.iter().all(|&b| b == 0),
                });
                removed += 1;
            } else {
                kept.push(e);
            }
        }
        self.store = kept;
        self.last_prune = Some(now);
        self.metrics.pruned += removed as u64;
        removed
    }

    /// Sets with minute in `range`, released only under a read-class
    /// certificate current in the federation's ALERT epoch.
    pub fn vpn_fetch(
        &mut self,
        fed: &mut Federation,
        cert: &QuorumCertificate,
        range: MinuteRange,
        now: Minute,
    ) -> Result<Vec<EncryptedPdrSet>, EdgeError> {
        if self.locked_for_vpn {
            let reason = format!("{} locked", self.provider);
            fed.log_denial("vpn_fetch", Some(cert), &reason, now);
            self.refuse(now, reason);
            return Err(EdgeError::Locked);
        }
        if let Err(e) = fed.authorize_fetch(cert, range, now) {
            self.refuse(now, e.to_string());
            return Err(e.into());
        }
        let out: Vec<EncryptedPdrSet> = self
            .store
            .iter()
            .filter(|e| range.contains(e.minute))
            .cloned()
            .collect();
        self.metrics.fetches_served += 1;
        self.audit.push(AuditEvent::FetchServed {
            now,
            sets: out.len(),
        });
        Ok(out)
    }

    fn refuse(&mut self, now: Minute, reason: String) {
        self.metrics.fetches_refused += 1;
        self.audit.push(AuditEvent::FetchRefused { now, reason });
    }

    /// Handles one framed fetch request from the VPN.
    pub fn serve_vpn(&mut self, fed: &mut Federation, request: &[u8], now: Minute) -> Vec<u8> {
        let mut w = Writer::new();
        let parsed = (|| -> Result<(QuorumCertificate, MinuteRange), WireError> {
            let mut r = Reader::new(request);
            let cert = QuorumCertificate::decode(r.bytes()?)?;
            let range = MinuteRange::new(r.u64()?, r.u64()?);
            r.finish()?;
            Ok((cert, range))
        })();
        let (cert, range) = match parsed {
            Ok(p) => p,
            Err(e) => {
                fed.log_denial("vpn_fetch", None, &format!("malformed request: {e}"), now);
                w.u8(3).str(&e.to_string());
                return w.finish();
            }
        };
        match self.vpn_fetch(fed, &cert, range, now) {
            Ok(sets) => {
                w.u8(0).u32(sets.len() as u32);
                for s in &sets {
                    let mut inner = Writer::new();
                    s.encode_into(&mut inner);
                    w.bytes(&inner.finish());
                }
            }
            Err(EdgeError::Locked) => {
                w.u8(1).str("locked");
            }
            Err(e) => {
                w.u8(2).str(&e.to_string());
            }
        }
        w.finish()
    }
}

pub fn encode_fetch_request(cert: &QuorumCertificate, range: MinuteRange) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&cert.encode()).u64(range.start).u64(range.end);
    w.finish()
}

pub fn decode_fetch_response(bytes: &[u8]) -> Result<Vec<EncryptedPdrSet>, EdgeError> {
    let mut r = Reader::new(bytes);
    match r.u8()? {
        0 => {
            let n = r.count(4)?;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let mut inner = Reader::new(r.bytes()?);
                out.push(EncryptedPdrSet::decode_from(&mut inner)?);
                inner.finish()?;
            }
            r.finish()?;
            Ok(out)
        }
        1 => Err(EdgeError::Locked),
        2 | 3 => Err(EdgeError::Remote(r.str("reason")?.to_owned())),
        tag => Err(WireError::InvalidTag {
            what: "fetch status",
            tag,
        }
        .into()),
    }
}

impl StateListener for EdgeCloud {
    fn on_alert(&mut self, epoch: u64) {
        self.locked_for_vpn = false;
        self.audit.push(AuditEvent::Unlocked { epoch });
    }

    fn on_passive(&mut self) -> Option<LedgerEvent> {
        self.locked_for_vpn = true;
        self.audit.push(AuditEvent::Locked);
        None
    }
}
