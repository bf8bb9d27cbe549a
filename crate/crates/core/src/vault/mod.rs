//! Distributed object vault. Each object is encrypted under a fresh key, the
//! ciphertext is erasure coded over the clouds and the key is Shamir-shared
//! over the same clouds (fragment `i` and share `i` go to cloud `i`).
//!
//! Fragment message: `object_id[16] | index u8 | len | fragment | len | share`.
//!
//! With `k` data fragments and share threshold `t`, a coalition of `c`
//! clouds can rebuild the ciphertext iff `c >= k` and the key iff `c >= t`.
//! The defaults (4 clouds, k = 2, t = 3) let two clouds rebuild ciphertext
//! but never decrypt it.

mod erasure;

pub use erasure::{ErasureError, ReedSolomon};

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{aead_decrypt, aead_encrypt, derive_rng, random_bytes, Digest};
use crate::federation::{
    reconstruct_secret, split_secret, Capability, Federation, FederationError, LedgerEvent,
    Permission, Share, StateListener, SystemState, SystemStateKind,
};
use crate::mobility::VaultParams;
use crate::pdr::Minute;
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error, PartialEq)]
pub enum VaultError {
    #[error("vault is locked (system PASSIVE)")]
    Locked,
    #[error("not authorized: {0}")]
    Unauthorized(#[from] FederationError),
    #[error("only {acks} clouds acknowledged, {need} required")]
    WriteFailed { acks: usize, need: usize },
    #[error("object {0} unavailable: {1}")]
    Unavailable(ObjectId, String),
    #[error("object {0} failed integrity checks")]
    Integrity(ObjectId),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("cloud {0} unreachable")]
    Unreachable(u8),
    #[error("invalid vault parameters: {0}")]
    Parameters(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub [u8; 16]);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectId({self})")
    }
}

impl Serialize for ObjectId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let v = crate::crypto::strict_hex(&s).map_err(serde::de::Error::custom)?;
        Ok(ObjectId(v.try_into().map_err(|_| {
            serde::de::Error::custom("object id must be 16 bytes")
        })?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CloudFault {
    Honest,
    Crashed,
    /// Returns corrupted fragments and shares.
    Byzantine,
}

#[derive(Clone, PartialEq, Eq)]
pub struct FragmentMessage {
    pub object: ObjectId,
    pub index: u8,
    pub fragment: Vec<u8>,
    pub share: Share,
}

impl fmt::Debug for FragmentMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FragmentMessage({}, #{}, {} bytes)",
            self.object,
            self.index,
            self.fragment.len()
        )
    }
}

impl FragmentMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.object.0)
            .u8(self.index)
            .bytes(&self.fragment)
            .bytes(&self.share.encode());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let object = ObjectId(r.array()?);
        let index = r.u8()?;
        let fragment = r.bytes()?.to_vec();
        let share = Share::decode(r.bytes()?)?;
        r.finish()?;
        Ok(Self {
            object,
            index,
            fragment,
            share,
        })
    }
}

pub struct CloudNode {
    id: u8,
    store: BTreeMap<ObjectId, FragmentMessage>,
    fault: CloudFault,
}

impl CloudNode {
    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn fault(&self) -> CloudFault {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    fn receive(&mut self, bytes: &[u8]) -> Result<(), VaultError> {
        if self.fault == CloudFault::Crashed {
            return Err(VaultError::Unreachable(self.id));
        }
        let msg = FragmentMessage::decode(bytes)?;
        self.store.insert(msg.object, msg);
        Ok(())
    }

    fn serve(&self, id: &ObjectId) -> Option<Vec<u8>> {
        if self.fault == CloudFault::Crashed {
            return None;
        }
        let mut msg = self.store.get(id)?.clone();
        if self.fault == CloudFault::Byzantine {
            // Masks differ per cloud so two faulty clouds do not cancel out.
            let seed = self.id.wrapping_mul(0x4f);
            for (i, b) in msg.fragment.iter_mut().enumerate().step_by(7) {
                *b ^= 0xa5 ^ seed ^ i as u8;
            }
            for (i, b) in msg.share.bytes_mut().iter_mut().enumerate() {
                *b ^= (0x3c ^ seed.rotate_left(3) ^ (i as u8).wrapping_mul(0x2b)) | 1;
            }
        }
        Some(msg.encode())
    }

    /// Overwrites then drops the object. Returns whether anything was held.
    fn erase(&mut self, id: &ObjectId) -> bool {
        match self.store.remove(id) {
            Some(mut msg) => {
                msg.fragment.fill(0);
                msg.share.bytes_mut().fill(0);
                true
            }
            None => false,
        }
    }

    /// What an intruder with this cloud's disk sees.
    pub fn raw(&self, id: &ObjectId) -> Option<&FragmentMessage> {
        self.store.get(id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultObject {
    pub id: ObjectId,
    pub plaintext_digest: Digest,
    pub ciphertext_digest: Digest,
    pub ciphertext_len: usize,
    pub k: usize,
    pub n: usize,
    pub created: Minute,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeletionProof {
    pub object: ObjectId,
    pub clouds_erased: Vec<u8>,
    pub plaintext_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VaultInventory {
    pub objects: Vec<VaultObject>,
    pub fragments_per_cloud: Vec<(u8, usize)>,
}

pub struct Vault {
    cfg: VaultParams,
    code: ReedSolomon,
    clouds: Vec<CloudNode>,
    objects: BTreeMap<ObjectId, VaultObject>,
    locked: bool,
    rng: ChaCha20Rng,
}

fn object_aad(id: &ObjectId) -> Vec<u8> {
    [b"epitrace/vault/v1".as_slice(), &id.0].concat()
}

/// Lexicographic `size`-subsets of `items`.
fn subsets<T: Clone>(items: &[T], size: usize) -> Vec<Vec<T>> {
    fn go<T: Clone>(items: &[T], size: usize, start: usize, cur: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i].clone());
            go(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, size, 0, &mut Vec::new(), &mut out);
    out
}

impl Vault {
    pub fn new(cfg: VaultParams, seed: u64) -> Result<Self, VaultError> {
        let code =
            ReedSolomon::new(cfg.k, cfg.clouds).map_err(|e| VaultError::Parameters(e.to_string()))?;
        if cfg.share_threshold == 0 || cfg.share_threshold > cfg.clouds {
            return Err(VaultError::Parameters(format!(
                "share threshold {} outside 1..={}",
                cfg.share_threshold, cfg.clouds
            )));
        }
        Ok(Self {
            cfg,
            code,
            clouds: (1..=cfg.clouds as u8)
                .map(|id| CloudNode {
                    id,
                    store: BTreeMap::new(),
                    fault: CloudFault::Honest,
                })
                .collect(),
            objects: BTreeMap::new(),
            locked: true,
            rng: derive_rng(seed, "vault"),
        })
    }

    pub fn config(&self) -> VaultParams {
        self.cfg
    }

    pub fn set_fault(&mut self, cloud: u8, fault: CloudFault) {
        if let Some(c) = self.clouds.iter_mut().find(|c| c.id == cloud) {
            c.fault = fault;
        }
    }

    pub fn clouds(&self) -> &[CloudNode] {
        &self.clouds
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn object(&self, id: &ObjectId) -> Option<&VaultObject> {
        self.objects.get(id)
    }

    /// Fragments and shares still held by any cloud.
    pub fn stored_fragments(&self) -> usize {
        self.clouds.iter().map(CloudNode::len).sum()
    }

    pub fn inventory(&self) -> VaultInventory {
        VaultInventory {
            objects: self.objects.values().cloned().collect(),
            fragments_per_cloud: self.clouds.iter().map(|c| (c.id, c.len())).collect(),
        }
    }

    fn check(&self, cap: &Capability, p: Permission, state: &SystemState) -> Result<(), VaultError> {
        if self.locked || state.kind == SystemStateKind::Passive {
            return Err(VaultError::Locked);
        }
        cap.require(p, state)?;
        Ok(())
    }

    /// Stores `plaintext`. Needs acknowledgements from at least
    /// `max(k, share_threshold)` clouds; otherwise nothing is kept.
    pub fn write(
        &mut self,
        cap: &Capability,
        state: &SystemState,
        plaintext: &[u8],
        now: Minute,
    ) -> Result<ObjectId, VaultError> {
        self.check(cap, Permission::Write, state)?;
        let id = ObjectId(random_bytes(&mut self.rng));
        let key: [u8; 32] = self.rng.gen();
        let ciphertext = aead_encrypt(&key, &[0u8; 12], plaintext, &object_aad(&id))
            .map_err(|_| VaultError::Parameters("encryption failed".into()))?;
        let fragments = self.code.encode(&ciphertext);
        let shares = split_secret(&key, self.cfg.share_threshold, self.cfg.clouds, &mut self.rng)
            .map_err(FederationError::from)?;
        let mut acked = Vec::new();
        for ((cloud, fragment), share) in self.clouds.iter_mut().zip(fragments).zip(shares) {
            let msg = FragmentMessage {
                object: id,
                index: cloud.id - 1,
                fragment,
                share,
            };
            if cloud.receive(&msg.encode()).is_ok() {
                acked.push(cloud.id);
            }
        }
        let need = self.cfg.k.max(self.cfg.share_threshold);
        if acked.len() < need {
            for c in &mut self.clouds {
                c.erase(&id);
            }
            return Err(VaultError::WriteFailed {
                acks: acked.len(),
                need,
            });
        }
        self.objects.insert(
            id,
            VaultObject {
                id,
                plaintext_digest: Digest::of(plaintext),
                ciphertext_digest: Digest::of(&ciphertext),
                ciphertext_len: ciphertext.len(),
                k: self.cfg.k,
                n: self.cfg.clouds,
                created: now,
            },
        );
        Ok(id)
    }

    fn gather(&self, id: &ObjectId) -> Vec<FragmentMessage> {
        self.clouds
            .iter()
            .filter_map(|c| {
                let msg = FragmentMessage::decode(&c.serve(id)?).ok()?;
                (msg.object == *id && msg.index == c.id - 1).then_some(msg)
            })
            .collect()
    }

    fn rebuild_ciphertext(
        &self,
        meta: &VaultObject,
        msgs: &[FragmentMessage],
    ) -> Result<Vec<u8>, VaultError> {
        if msgs.len() < self.cfg.k {
            return Err(VaultError::Unavailable(
                meta.id,
                format!("{} of {} fragments reachable", msgs.len(), self.cfg.k),
            ));
        }
        let refs: Vec<usize> = (0..msgs.len()).collect();
        for sub in subsets(&refs, self.cfg.k) {
            let shards: Vec<(usize, &[u8])> = sub
                .iter()
                .map(|&i| (msgs[i].index as usize, msgs[i].fragment.as_slice()))
                .collect();
            if let Ok(ct) = self.code.decode(&shards, meta.ciphertext_len) {
                if Digest::of(&ct) == meta.ciphertext_digest {
                    return Ok(ct);
                }
            }
        }
        Err(VaultError::Integrity(meta.id))
    }

    /// Ciphertext only, for the blind classes.
    pub fn read_ciphertext(
        &self,
        cap: &Capability,
        state: &SystemState,
        id: &ObjectId,
    ) -> Result<Vec<u8>, VaultError> {
        self.check(cap, Permission::ReadEncrypted, state)?;
        let meta = self.objects.get(id).ok_or(VaultError::UnknownObject(*id))?;
        self.rebuild_ciphertext(meta, &self.gather(id))
    }

    /// Plaintext, FULL_PROCESSING only.
    pub fn read(
        &self,
        cap: &Capability,
        state: &SystemState,
        id: &ObjectId,
    ) -> Result<Vec<u8>, VaultError> {
        self.check(cap, Permission::Decrypt, state)?;
        let meta = self.objects.get(id).ok_or(VaultError::UnknownObject(*id))?;
        let msgs = self.gather(id);
        let ct = self.rebuild_ciphertext(meta, &msgs)?;
        let t = self.cfg.share_threshold;
        if msgs.len() < t {
            return Err(VaultError::Unavailable(
                *id,
                format!("{} of {t} key shares reachable", msgs.len()),
            ));
        }
        let shares: Vec<Share> = msgs.iter().map(|m| m.share.clone()).collect();
        for sub in subsets(&shares, t) {
            let Ok(secret) = reconstruct_secret(&sub) else {
                continue;
            };
            let Ok(key) = <[u8; 32]>::try_from(secret) else {
                continue;
            };
            if let Ok(pt) = aead_decrypt(&key, &[0u8; 12], &ct, &object_aad(id)) {
                if Digest::of(&pt) == meta.plaintext_digest {
                    return Ok(pt);
                }
            }
        }
        Err(VaultError::Integrity(*id))
    }

    fn erase_everywhere(&mut self, id: &ObjectId) -> Vec<u8> {
        self.clouds
            .iter_mut()
            .filter_map(|c| c.erase(id).then_some(c.id))
            .collect()
    }

    pub fn delete(
        &mut self,
        cap: &Capability,
        fed: &mut Federation,
        id: &ObjectId,
        now: Minute,
    ) -> Result<DeletionProof, VaultError> {
        let state = fed.state();
        self.check(cap, Permission::Delete, &state)?;
        let meta = self.objects.remove(id).ok_or(VaultError::UnknownObject(*id))?;
        let clouds_erased = self.erase_everywhere(id);
        fed.record(
            now,
            LedgerEvent::VaultDeleted {
                objects: vec![id.to_string()],
                reason: format!("deleted under {:?} capability", cap.class()),
            },
        );
        Ok(DeletionProof {
            object: *id,
            clouds_erased,
            plaintext_digest: meta.plaintext_digest,
        })
    }

    fn delete_all(&mut self) -> Vec<ObjectId> {
        let ids: Vec<ObjectId> = self.objects.keys().copied().collect();
        for id in &ids {
            self.erase_everywhere(id);
        }
        self.objects.clear();
        // Orphans from rolled-back writes on since-recovered clouds.
        for c in &mut self.clouds {
            let orphans: Vec<ObjectId> = c.store.keys().copied().collect();
            for o in orphans {
                c.erase(&o);
            }
        }
        ids
    }
}

impl StateListener for Vault {
    fn on_alert(&mut self, _epoch: u64) {
        self.locked = false;
    }

    fn on_passive(&mut self) -> Option<LedgerEvent> {
        self.locked = true;
        let ids = self.delete_all();
        Some(LedgerEvent::VaultDeleted {
            objects: ids.iter().map(ToString::to_string).collect(),
            reason: "system entered PASSIVE".into(),
        })
    }
}

/// Tries to decrypt an object using only what a coalition of clouds holds.
/// Returns the plaintext on success.
pub fn coalition_decrypt(vault: &Vault, members: &[u8], id: &ObjectId) -> Option<Vec<u8>> {
    let meta = vault.object(id)?;
    let msgs: Vec<&FragmentMessage> = vault
        .clouds()
        .iter()
        .filter(|c| members.contains(&c.id()))
        .filter_map(|c| c.raw(id))
        .collect();
    let shards: Vec<(usize, &[u8])> = msgs
        .iter()
        .map(|m| (m.index as usize, m.fragment.as_slice()))
        .collect();
    let ct = vault.code.decode(&shards, meta.ciphertext_len).ok()?;
    let shares: Vec<Share> = msgs.iter().map(|m| m.share.clone()).collect();
    let key: [u8; 32] = reconstruct_secret(&shares).ok()?.try_into().ok()?;
    aead_decrypt(&key, &[0u8; 12], &ct, &object_aad(id)).ok()
}

/// Whether a coalition can rebuild the stored ciphertext.
pub fn coalition_ciphertext(vault: &Vault, members: &[u8], id: &ObjectId) -> Option<Vec<u8>> {
    let meta = vault.object(id)?;
    let shards: Vec<(usize, &[u8])> = vault
        .clouds()
        .iter()
        .filter(|c| members.contains(&c.id()))
        .filter_map(|c| c.raw(id))
        .map(|m| (m.index as usize, m.fragment.as_slice()))
        .collect();
    let ct = vault.code.decode(&shards, meta.ciphertext_len).ok()?;
    (Digest::of(&ct) == meta.ciphertext_digest).then_some(ct)
}

pub fn all_subsets(n: u8, size: usize) -> Vec<Vec<u8>> {
    subsets(&(1..=n).collect::<Vec<u8>>(), size)
}
