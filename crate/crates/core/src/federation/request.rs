//! Workflow requests, votes and quorum certificates.
//!
//! Wire layouts (canonical framing, see `crate::wire`):
//!
//! ```text
//! request body = id[16] | class u8 | payload | requester u8 | submitted u64
//! request      = body | signature[64]
//! vote         = request_id[16] | request_hash[32] | authority u8 | signature[64]
//! certificate  = len | request | required u32 | count u32 | (authority u8 | signature[64])*
//! ```
//!
//! The request signature covers `"epitrace/request/v1" | body`; the request
//! hash is SHA-256 of the same bytes. A vote signs
//! `"epitrace/vote/v1" | request_id | request_hash`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{verify_signature, Digest, Signature, SigningKey, VerifyingKey};
use crate::pdr::{Minute, PhoneId};
use crate::wire::{Reader, WireError, Writer};

use super::FederationError;

const REQUEST_DOMAIN: &[u8] = b"epitrace/request/v1";
const VOTE_DOMAIN: &[u8] = b"epitrace/vote/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthorityId(pub u8);

impl fmt::Display for AuthorityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "authority-{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub [u8; 16]);

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({})", hex::encode(self.0))
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for RequestId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for RequestId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = crate::crypto::strict_hex(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("request id must be 16 bytes"))?;
        Ok(RequestId(arr))
    }
}

/// Name of a threshold-shared decryption key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub String);

impl KeyId {
    pub fn provider(index: u16) -> Self {
        KeyId(format!("provider-{index}"))
    }

    pub fn country(code: &str) -> Self {
        KeyId(format!("country-{code}"))
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OperationClass {
    LockUnlock,
    StrictPush,
    BlindAnalysis,
    BlindProcessing,
    FullProcessing,
}

impl OperationClass {
    pub const ALL: [OperationClass; 5] = [
        Self::LockUnlock,
        Self::StrictPush,
        Self::BlindAnalysis,
        Self::BlindProcessing,
        Self::FullProcessing,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Self::LockUnlock => 0,
            Self::StrictPush => 1,
            Self::BlindAnalysis => 2,
            Self::BlindProcessing => 3,
            Self::FullProcessing => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, WireError> {
        Self::ALL
            .get(tag as usize)
            .copied()
            .ok_or(WireError::InvalidTag {
                what: "operation class",
                tag,
            })
    }
}

/// Per-class quorum sizes over `n` authorities tolerating `f` Byzantine ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumPolicy {
    pub n: usize,
    pub f: usize,
    pub quorum: BTreeMap<OperationClass, usize>,
}

impl QuorumPolicy {
    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: String| Err(FederationError::InvalidPolicy(m));
        if self.n == 0 || self.n > 255 {
            return bad(format!("n = {} outside 1..=255", self.n));
        }
        if self.n < 2 * self.f + 1 {
            return bad(format!("n = {} < 2f+1 with f = {}", self.n, self.f));
        }
        for class in OperationClass::ALL {
            match self.quorum.get(&class) {
                None => return bad(format!("no quorum for {class:?}")),
                Some(&q) if q < self.f + 1 || q > self.n => {
                    return bad(format!(
                        "quorum {q} for {class:?} outside f+1..=n ({}..={})",
                        self.f + 1,
                        self.n
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn q(&self, class: OperationClass) -> usize {
        self.quorum[&class]
    }
}

/// Inclusive minute interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinuteRange {
    pub start: Minute,
    pub end: Minute,
}

impl MinuteRange {
    pub fn new(start: Minute, end: Minute) -> Self {
        Self { start, end }
    }

    pub fn all() -> Self {
        Self {
            start: 0,
            end: Minute::MAX,
        }
    }

    pub fn contains(&self, m: Minute) -> bool {
        self.start <= m && m <= self.end
    }

    pub fn covers(&self, other: &MinuteRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    fn encode_into(&self, w: &mut Writer) {
        w.u64(self.start).u64(self.end);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let start = r.u64()?;
        let end = r.u64()?;
        if start > end {
            return Err(WireError::Invalid(format!("range {start}..={end}")));
        }
        Ok(Self { start, end })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let out = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SystemStateKind {
    Passive,
    Alert,
}

/// A phone of interest with its estimated earliest infection minute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub phone: PhoneId,
    pub t_inf_min: Minute,
}

/// Operation parameters. Each class accepts exactly one payload shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    StateChange {
        target: SystemStateKind,
    },
    Push {
        scope: MinuteRange,
    },
    Analysis {
        scope: MinuteRange,
        subjects: Vec<Subject>,
    },
    Disclosure {
        scope: MinuteRange,
        subjects: Vec<Subject>,
        key_ids: Vec<KeyId>,
    },
}

impl Payload {
    pub fn fits(&self, class: OperationClass) -> bool {
        use OperationClass::*;
        matches!(
            (self, class),
            (Payload::StateChange { .. }, LockUnlock)
                | (Payload::Push { .. }, StrictPush)
                | (Payload::Analysis { .. }, BlindAnalysis | BlindProcessing)
                | (Payload::Disclosure { .. }, FullProcessing)
        )
    }

    pub fn scope(&self) -> Option<MinuteRange> {
        match self {
            Payload::StateChange { .. } => None,
            Payload::Push { scope }
            | Payload::Analysis { scope, .. }
            | Payload::Disclosure { scope, .. } => Some(*scope),
        }
    }

    pub fn subjects(&self) -> &[Subject] {
        match self {
            Payload::Analysis { subjects, .. } | Payload::Disclosure { subjects, .. } => subjects,
            _ => &[],
        }
    }

    fn encode_into(&self, w: &mut Writer) {
        let subjects = |w: &mut Writer, subjects: &[Subject]| {
            w.u32(subjects.len() as u32);
            for s in subjects {
                s.phone.encode_into(w);
                w.u64(s.t_inf_min);
            }
        };
        match self {
            Payload::StateChange { target } => {
                w.u8(0).u8(match target {
                    SystemStateKind::Passive => 0,
                    SystemStateKind::Alert => 1,
                });
            }
            Payload::Push { scope } => {
                w.u8(1);
                scope.encode_into(w);
            }
            Payload::Analysis {
                scope,
                subjects: s,
            } => {
                w.u8(2);
                scope.encode_into(w);
                subjects(w, s);
            }
            Payload::Disclosure {
                scope,
                subjects: s,
                key_ids,
            } => {
                w.u8(3);
                scope.encode_into(w);
                subjects(w, s);
                w.u32(key_ids.len() as u32);
                for k in key_ids {
                    w.str(&k.0);
                }
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        fn subjects(r: &mut Reader<'_>) -> Result<Vec<Subject>, WireError> {
            let n = r.count(8)?;
            (0..n)
                .map(|_| {
                    let phone = PhoneId::decode_from(r)
                        .map_err(|e| WireError::Invalid(e.to_string()))?;
                    Ok(Subject {
                        phone,
                        t_inf_min: r.u64()?,
                    })
                })
                .collect()
        }
        Ok(match r.u8()? {
            0 => Payload::StateChange {
                target: match r.u8()? {
                    0 => SystemStateKind::Passive,
                    1 => SystemStateKind::Alert,
                    tag => return Err(WireError::InvalidTag { what: "state", tag }),
                },
            },
            1 => Payload::Push {
                scope: MinuteRange::decode_from(r)?,
            },
            2 => Payload::Analysis {
                scope: MinuteRange::decode_from(r)?,
                subjects: subjects(r)?,
            },
            3 => {
                let scope = MinuteRange::decode_from(r)?;
                let subjects = subjects(r)?;
                let n = r.count(4)?;
                let key_ids = (0..n)
                    .map(|_| Ok(KeyId(r.str("key id")?.to_owned())))
                    .collect::<Result<_, WireError>>()?;
                Payload::Disclosure {
                    scope,
                    subjects,
                    key_ids,
                }
            }
            tag => return Err(WireError::InvalidTag { what: "payload", tag }),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkflowRequest {
    pub id: RequestId,
    pub class: OperationClass,
    pub payload: Payload,
    pub requester: AuthorityId,
    pub submitted: Minute,
    pub signature: Signature,
}

impl WorkflowRequest {
    /// Builds and signs a request. Payload/class agreement is checked on
    /// submission, not here, so that malformed requests can be constructed
    /// for negative tests.
    pub fn new_signed(
        id: RequestId,
        class: OperationClass,
        payload: Payload,
        requester: AuthorityId,
        submitted: Minute,
        key: &SigningKey,
    ) -> Self {
        use ed25519_dalek::Signer;
        let body = body_bytes(&id, class, &payload, requester, submitted);
        let signature = key.sign(&[REQUEST_DOMAIN, &body].concat());
        Self {
            id,
            class,
            payload,
            requester,
            submitted,
            signature,
        }
    }

    fn body(&self) -> Vec<u8> {
        body_bytes(
            &self.id,
            self.class,
            &self.payload,
            self.requester,
            self.submitted,
        )
    }

    pub fn hash(&self) -> Digest {
        Digest::of_parts(&[REQUEST_DOMAIN, &self.body()])
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        verify_signature(key, &[REQUEST_DOMAIN, &self.body()].concat(), &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.body();
        out.extend_from_slice(&self.signature.to_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let id = RequestId(r.array()?);
        let class = OperationClass::from_tag(r.u8()?)?;
        let payload = Payload::decode_from(&mut r)?;
        let requester = AuthorityId(r.u8()?);
        let submitted = r.u64()?;
        let signature = Signature::from_bytes(&r.array()?);
        r.finish()?;
        Ok(Self {
            id,
            class,
            payload,
            requester,
            submitted,
            signature,
        })
    }
}

fn body_bytes(
    id: &RequestId,
    class: OperationClass,
    payload: &Payload,
    requester: AuthorityId,
    submitted: Minute,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(&id.0).u8(class.tag());
    payload.encode_into(&mut w);
    w.u8(requester.0).u64(submitted);
    w.finish()
}

fn vote_message(request_id: &RequestId, request_hash: &Digest) -> Vec<u8> {
    [VOTE_DOMAIN, &request_id.0, request_hash.as_bytes()].concat()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub request_id: RequestId,
    pub request_hash: Digest,
    pub authority: AuthorityId,
    pub signature: Signature,
}

impl Vote {
    /// Signs an approval for an arbitrary (id, hash) pair. Honest authorities
    /// pass the hash of the request they were shown.
    pub fn sign(
        request_id: RequestId,
        request_hash: Digest,
        authority: AuthorityId,
        key: &SigningKey,
    ) -> Self {
        use ed25519_dalek::Signer;
        let signature = key.sign(&vote_message(&request_id, &request_hash));
        Self {
            request_id,
            request_hash,
            authority,
            signature,
        }
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        verify_signature(
            key,
            &vote_message(&self.request_id, &self.request_hash),
            &self.signature,
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.request_id.0)
            .raw(self.request_hash.as_bytes())
            .u8(self.authority.0)
            .raw(&self.signature.to_bytes());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let out = Self {
            request_id: RequestId(r.array()?),
            request_hash: Digest(r.array()?),
            authority: AuthorityId(r.u8()?),
            signature: Signature::from_bytes(&r.array()?),
        };
        r.finish()?;
        Ok(out)
    }
}

/// A request together with at least `required` approvals over its hash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumCertificate {
    pub request: WorkflowRequest,
    pub approvals: Vec<(AuthorityId, Signature)>,
    pub required: usize,
}

impl QuorumCertificate {
    pub fn request_id(&self) -> RequestId {
        self.request.id
    }

    pub fn class(&self) -> OperationClass {
        self.request.class
    }

    pub fn approvers(&self) -> Vec<AuthorityId> {
        self.approvals.iter().map(|(a, _)| *a).collect()
    }

    /// Checks signatures and counts. `required` is taken from the policy,
    /// never from the certificate itself.
    pub fn verify(
        &self,
        keys: &BTreeMap<AuthorityId, VerifyingKey>,
        required: usize,
    ) -> Result<(), FederationError> {
        let requester_key = keys
            .get(&self.request.requester)
            .ok_or(FederationError::UnknownAuthority(self.request.requester.0))?;
        if !self.request.verify(requester_key) {
            return Err(FederationError::BadSignature("request"));
        }
        if !self.request.payload.fits(self.request.class) {
            return Err(FederationError::PayloadMismatch);
        }
        let hash = self.request.hash();
        let mut seen = BTreeSet::new();
        for (authority, sig) in &self.approvals {
            let key = keys
                .get(authority)
                .ok_or(FederationError::UnknownAuthority(authority.0))?;
            if !seen.insert(*authority) {
                return Err(FederationError::DuplicateVote(authority.0));
            }
            if !verify_signature(key, &vote_message(&self.request.id, &hash), sig) {
                return Err(FederationError::BadSignature("approval"));
            }
        }
        if seen.len() < required {
            return Err(FederationError::InsufficientApprovals {
                have: seen.len(),
                need: required,
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.request.encode())
            .u32(self.required as u32)
            .u32(self.approvals.len() as u32);
        for (a, sig) in &self.approvals {
            w.u8(a.0).raw(&sig.to_bytes());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let out = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(out)
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let request = WorkflowRequest::decode(r.bytes()?)?;
        let required = r.u32()? as usize;
        let n = r.count(65)?;
        let approvals = (0..n)
            .map(|_| Ok((AuthorityId(r.u8()?), Signature::from_bytes(&r.array()?))))
            .collect::<Result<_, WireError>>()?;
        Ok(Self {
            request,
            approvals,
            required,
        })
    }
}

/// Outcome of folding one vote into an assembler.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VoteOutcome {
    Pending { approvals: usize, required: usize },
    Certified(QuorumCertificate),
    /// Valid vote that arrived after the certificate was emitted.
    Late,
}

/// Deterministic fold over the votes for one request. The certificate is
/// emitted exactly once, when the `required`-th distinct valid vote lands.
#[derive(Clone, Debug)]
pub struct CertificateAssembler {
    request: WorkflowRequest,
    hash: Digest,
    required: usize,
    approvals: BTreeMap<AuthorityId, Signature>,
    emitted: bool,
}

impl CertificateAssembler {
    pub fn new(request: WorkflowRequest, required: usize) -> Self {
        let hash = request.hash();
        Self {
            request,
            hash,
            required,
            approvals: BTreeMap::new(),
            emitted: false,
        }
    }

    pub fn request(&self) -> &WorkflowRequest {
        &self.request
    }

    pub fn approvals(&self) -> usize {
        self.approvals.len()
    }

    pub fn required(&self) -> usize {
        self.required
    }

    pub fn is_certified(&self) -> bool {
        self.emitted
    }

    pub fn apply(
        &mut self,
        vote: &Vote,
        keys: &BTreeMap<AuthorityId, VerifyingKey>,
    ) -> Result<VoteOutcome, FederationError> {
        let key = keys
            .get(&vote.authority)
            .ok_or(FederationError::UnknownAuthority(vote.authority.0))?;
        if vote.request_id != self.request.id {
            return Err(FederationError::UnknownRequest(vote.request_id));
        }
        if !vote.verify(key) {
            return Err(FederationError::BadSignature("vote"));
        }
        if vote.request_hash != self.hash {
            return Err(FederationError::HashMismatch(vote.authority.0));
        }
        if self.approvals.contains_key(&vote.authority) {
            return Err(FederationError::DuplicateVote(vote.authority.0));
        }
        self.approvals.insert(vote.authority, vote.signature);
        if self.emitted {
            return Ok(VoteOutcome::Late);
        }
        if self.approvals.len() >= self.required {
            self.emitted = true;
            return Ok(VoteOutcome::Certified(QuorumCertificate {
                request: self.request.clone(),
                approvals: self
                    .approvals
                    .iter()
                    .map(|(a, s)| (*a, *s))
                    .collect(),
                required: self.required,
            }));
        }
        Ok(VoteOutcome::Pending {
            approvals: self.approvals.len(),
            required: self.required,
        })
    }
}
