//! The entrusted-authority federation: threshold key custody, q-of-n
//! workflow certificates, the Passive/Alert state machine, capability
//! issuance, the audit ledger and cross-border tokens.

mod capability;
mod ledger;
mod request;
pub mod shamir;
mod token;

pub use capability::{Capability, Permission};
pub use ledger::{
    parse_jsonl, verify_jsonl, verify_ledger, Ledger, LedgerContent, LedgerEntry, LedgerEvent,
};
pub use request::{
    AuthorityId, CertificateAssembler, KeyId, MinuteRange, OperationClass, Payload,
    QuorumCertificate, QuorumPolicy, RequestId, Subject, SystemStateKind, Vote, VoteOutcome,
    WorkflowRequest,
};
pub use shamir::{reconstruct_secret, split_secret, Share, SharingError};
pub use token::{issue_token, open_token, redeem_token, CrossBorderToken, TokenContext};

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use serde::Serialize;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::crypto::{derive_rng, generate_keypair, generate_signing_key, Digest, SigningKey, VerifyingKey};
use crate::pdr::{Minute, PhoneId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FederationError {
    #[error("invalid quorum policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown authority {0}")]
    UnknownAuthority(u8),
    #[error("invalid {0} signature")]
    BadSignature(&'static str),
    #[error("payload does not match the operation class")]
    PayloadMismatch,
    #[error("authority {0} already voted")]
    DuplicateVote(u8),
    #[error("authority {0} voted for a different request hash")]
    HashMismatch(u8),
    #[error("{have} approvals, {need} required")]
    InsufficientApprovals { have: usize, need: usize },
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} already submitted")]
    DuplicateRequest(RequestId),
    #[error("request is closed")]
    RequestClosed,
    #[error("vote window elapsed")]
    RequestExpired,
    #[error("certificate was not issued by this federation")]
    UnknownCertificate,
    #[error("certificate class {got:?}, expected {expected:?}")]
    WrongClass {
        expected: OperationClass,
        got: OperationClass,
    },
    #[error("system is already in the target state")]
    SameState,
    #[error("certificate already consumed")]
    CertificateConsumed,
    #[error("certificate belongs to an earlier alert epoch")]
    StaleCertificate,
    #[error("system is not in ALERT state")]
    NotAlert,
    #[error("capability from epoch {issued} used in epoch {current}")]
    StaleCapability { issued: u64, current: u64 },
    #[error("{class:?} does not grant {permission:?}")]
    Forbidden {
        class: OperationClass,
        permission: Permission,
    },
    #[error("requested range lies outside the certified scope")]
    OutOfScope,
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
    #[error("key {0} was not released by this capability")]
    KeyNotReleased(KeyId),
    #[error("reconstruction of key {0} failed")]
    KeyReconstruction(KeyId),
    #[error("token could not be redeemed")]
    TokenRedeem,
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SystemState {
    pub kind: SystemStateKind,
    pub alert_started: Option<Minute>,
    /// Incremented on every transition; capabilities are bound to it.
    pub epoch: u64,
}

/// Components that react to state transitions (edge clouds, vault).
pub trait StateListener {
    fn on_alert(&mut self, epoch: u64);
    /// Returns a ledger event describing any data erased.
    fn on_passive(&mut self) -> Option<LedgerEvent>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorityBehaviour {
    Honest,
    /// Never votes.
    Silent,
    /// Votes for a request hash it was not shown.
    Equivocating,
}

pub struct Authority {
    id: AuthorityId,
    signing: SigningKey,
    shares: BTreeMap<KeyId, Share>,
    behaviour: AuthorityBehaviour,
}

impl Authority {
    pub fn id(&self) -> AuthorityId {
        self.id
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn behaviour(&self) -> AuthorityBehaviour {
        self.behaviour
    }

    /// The authority's own share, as it would hand it over when colluding.
    pub fn share(&self, key: &KeyId) -> Option<&Share> {
        self.shares.get(key)
    }

    /// Signs an arbitrary vote with this authority's key.
    pub fn sign_vote(&self, request_id: RequestId, hash: Digest) -> Vote {
        Vote::sign(request_id, hash, self.id, &self.signing)
    }

    /// Signs an arbitrary request with this authority's key.
    pub fn sign_request(
        &self,
        id: RequestId,
        class: OperationClass,
        payload: Payload,
        submitted: Minute,
    ) -> WorkflowRequest {
        WorkflowRequest::new_signed(id, class, payload, self.id, submitted, &self.signing)
    }

    pub fn vote(&self, request: &WorkflowRequest) -> Option<Vote> {
        match self.behaviour {
            AuthorityBehaviour::Honest => Some(self.sign_vote(request.id, request.hash())),
            AuthorityBehaviour::Silent => None,
            AuthorityBehaviour::Equivocating => {
                let mut other = request.clone();
                other.submitted = other.submitted.wrapping_add(1);
                Some(self.sign_vote(request.id, other.hash()))
            }
        }
    }
}

struct Pending {
    assembler: CertificateAssembler,
    closed: bool,
}

pub struct Federation {
    name: String,
    policy: QuorumPolicy,
    vote_window: Minute,
    authorities: Vec<Authority>,
    verifying: BTreeMap<AuthorityId, VerifyingKey>,
    public_keys: BTreeMap<KeyId, PublicKey>,
    pending: BTreeMap<RequestId, Pending>,
    certified: BTreeMap<RequestId, u64>,
    consumed: BTreeSet<RequestId>,
    state: SystemState,
    ledger: Ledger,
    next_request: u64,
}

impl Federation {
    pub fn new(
        name: &str,
        policy: QuorumPolicy,
        vote_window: Minute,
        seed: u64,
    ) -> Result<Self, FederationError> {
        policy.validate()?;
        let mut rng = derive_rng(seed, &format!("federation/{name}/authorities"));
        let authorities: Vec<Authority> = (1..=policy.n as u8)
            .map(|i| Authority {
                id: AuthorityId(i),
                signing: generate_signing_key(&mut rng),
                shares: BTreeMap::new(),
                behaviour: AuthorityBehaviour::Honest,
            })
            .collect();
        let verifying = authorities
            .iter()
            .map(|a| (a.id, a.verifying_key()))
            .collect();
        Ok(Self {
            name: name.to_owned(),
            policy,
            vote_window,
            authorities,
            verifying,
            public_keys: BTreeMap::new(),
            pending: BTreeMap::new(),
            certified: BTreeMap::new(),
            consumed: BTreeSet::new(),
            state: SystemState {
                kind: SystemStateKind::Passive,
                alert_started: None,
                epoch: 0,
            },
            ledger: Ledger::new(),
            next_request: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn policy(&self) -> &QuorumPolicy {
        &self.policy
    }

    pub fn state(&self) -> SystemState {
        self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn authorities(&self) -> &[Authority] {
        &self.authorities
    }

    pub fn authority(&self, id: AuthorityId) -> Option<&Authority> {
        self.authorities.iter().find(|a| a.id == id)
    }

    pub fn verifying_keys(&self) -> &BTreeMap<AuthorityId, VerifyingKey> {
        &self.verifying
    }

    pub fn set_behaviour(&mut self, id: AuthorityId, b: AuthorityBehaviour) {
        if let Some(a) = self.authorities.iter_mut().find(|a| a.id == id) {
            a.behaviour = b;
        }
    }

    /// Generates a keypair, hands out shares with the FULL_PROCESSING
    /// threshold and forgets the private half.
    pub fn install_key<R: RngCore + CryptoRng>(
        &mut self,
        id: KeyId,
        rng: &mut R,
    ) -> Result<PublicKey, FederationError> {
        let (secret, public) = generate_keypair(rng);
        let t = self.policy.q(OperationClass::FullProcessing);
        let shares = split_secret(secret.as_bytes(), t, self.authorities.len(), rng)?;
        for (a, s) in self.authorities.iter_mut().zip(shares) {
            a.shares.insert(id.clone(), s);
        }
        self.public_keys.insert(id, public);
        Ok(public)
    }

    pub fn public_key(&self, id: &KeyId) -> Option<PublicKey> {
        self.public_keys.get(id).copied()
    }

    fn fresh_request_id(&mut self) -> RequestId {
        let d = Digest::of_parts(&[
            b"epitrace/request-id/v1",
            self.name.as_bytes(),
            &self.next_request.to_be_bytes(),
        ]);
        self.next_request += 1;
        let mut id = [0u8; 16];
        id.copy_from_slice(&d.0[..16]);
        RequestId(id)
    }

    /// Builds a request signed by `requester`.
    pub fn new_request(
        &mut self,
        requester: AuthorityId,
        class: OperationClass,
        payload: Payload,
        now: Minute,
    ) -> Result<WorkflowRequest, FederationError> {
        let id = self.fresh_request_id();
        let a = self
            .authority(requester)
            .ok_or(FederationError::UnknownAuthority(requester.0))?;
        Ok(a.sign_request(id, class, payload, now))
    }

    pub fn submit_request(
        &mut self,
        request: WorkflowRequest,
        now: Minute,
    ) -> Result<RequestId, FederationError> {
        let key = self
            .verifying
            .get(&request.requester)
            .ok_or(FederationError::UnknownAuthority(request.requester.0))?;
        if !request.verify(key) {
            return Err(FederationError::BadSignature("request"));
        }
        if !request.payload.fits(request.class) {
            return Err(FederationError::PayloadMismatch);
        }
        if self.pending.contains_key(&request.id) {
            return Err(FederationError::DuplicateRequest(request.id));
        }
        let id = request.id;
        self.ledger.append(
            now,
            LedgerEvent::RequestSubmitted {
                request_id: id,
                class: request.class,
                requester: request.requester,
                request_hash: request.hash(),
            },
        );
        let q = self.policy.q(request.class);
        self.pending.insert(
            id,
            Pending {
                assembler: CertificateAssembler::new(request, q),
                closed: false,
            },
        );
        Ok(id)
    }

    /// `new_request` followed by `submit_request`.
    pub fn request(
        &mut self,
        requester: AuthorityId,
        class: OperationClass,
        payload: Payload,
        now: Minute,
    ) -> Result<RequestId, FederationError> {
        let req = self.new_request(requester, class, payload, now)?;
        self.submit_request(req, now)
    }

    pub fn pending_request(&self, id: RequestId) -> Option<&WorkflowRequest> {
        self.pending.get(&id).map(|p| p.assembler.request())
    }

    /// Asks one authority to vote according to its behaviour.
    pub fn approve(
        &mut self,
        authority: AuthorityId,
        request_id: RequestId,
        now: Minute,
    ) -> Result<Option<QuorumCertificate>, FederationError> {
        let p = self
            .pending
            .get(&request_id)
            .ok_or(FederationError::UnknownRequest(request_id))?;
        if p.closed {
            return Err(FederationError::RequestClosed);
        }
        let request = p.assembler.request().clone();
        let vote = self
            .authority(authority)
            .ok_or(FederationError::UnknownAuthority(authority.0))?
            .vote(&request);
        match vote {
            Some(v) => self.apply_vote(&v, now),
            None => Ok(None),
        }
    }

    pub fn apply_vote(
        &mut self,
        vote: &Vote,
        now: Minute,
    ) -> Result<Option<QuorumCertificate>, FederationError> {
        let epoch = self.state.epoch;
        let window = self.vote_window;
        let p = self
            .pending
            .get_mut(&vote.request_id)
            .ok_or(FederationError::UnknownRequest(vote.request_id))?;
        if p.closed {
            return Err(FederationError::RequestClosed);
        }
        if !p.assembler.is_certified() && now > p.assembler.request().submitted + window {
            self.expire_pending(now);
            return Err(FederationError::RequestExpired);
        }
        match p.assembler.apply(vote, &self.verifying)? {
            VoteOutcome::Certified(cert) => {
                self.certified.insert(cert.request_id(), epoch);
                self.ledger.append(
                    now,
                    LedgerEvent::Certified {
                        request_id: cert.request_id(),
                        class: cert.class(),
                        request_hash: cert.request.hash(),
                        approvers: cert.approvers(),
                    },
                );
                Ok(Some(cert))
            }
            VoteOutcome::Pending { .. } | VoteOutcome::Late => Ok(None),
        }
    }

    /// Polls authorities in `order` until a certificate forms. Faulty votes
    /// are skipped. If no certificate forms the request stays pending.
    pub fn collect(
        &mut self,
        request_id: RequestId,
        order: &[AuthorityId],
        now: Minute,
    ) -> Result<QuorumCertificate, FederationError> {
        for &a in order {
            match self.approve(a, request_id, now) {
                Ok(Some(cert)) => return Ok(cert),
                Ok(None)
                | Err(FederationError::HashMismatch(_))
                | Err(FederationError::BadSignature(_))
                | Err(FederationError::DuplicateVote(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let p = &self.pending[&request_id];
        Err(FederationError::InsufficientApprovals {
            have: p.assembler.approvals(),
            need: p.assembler.required(),
        })
    }

    /// Closes every uncertified request whose vote window has elapsed and
    /// logs a denial for each.
    pub fn expire_pending(&mut self, now: Minute) -> Vec<RequestId> {
        let mut out = Vec::new();
        for (id, p) in self.pending.iter_mut() {
            let req = p.assembler.request();
            if !p.closed && !p.assembler.is_certified() && now > req.submitted + self.vote_window
            {
                p.closed = true;
                self.ledger.append(
                    now,
                    LedgerEvent::Denied {
                        request_id: *id,
                        class: req.class,
                        approvals: p.assembler.approvals(),
                        required: p.assembler.required(),
                    },
                );
                out.push(*id);
            }
        }
        out
    }

    /// Signature and quorum check against this federation's policy, plus
    /// proof that the certificate went through this federation's ledger.
    pub fn verify_certificate(&self, cert: &QuorumCertificate) -> Result<(), FederationError> {
        cert.verify(&self.verifying, self.policy.q(cert.class()))?;
        if !self.certified.contains_key(&cert.request_id()) {
            return Err(FederationError::UnknownCertificate);
        }
        Ok(())
    }

    fn require_current(&self, cert: &QuorumCertificate) -> Result<(), FederationError> {
        if self.state.kind != SystemStateKind::Alert {
            return Err(FederationError::NotAlert);
        }
        if self.certified.get(&cert.request_id()) != Some(&self.state.epoch) {
            return Err(FederationError::StaleCertificate);
        }
        Ok(())
    }

    /// Logs a refused operation and hands the error back.
    pub fn deny<T>(
        &mut self,
        operation: &str,
        cert: Option<&QuorumCertificate>,
        err: FederationError,
        now: Minute,
    ) -> Result<T, FederationError> {
        self.log_denial(operation, cert, &err.to_string(), now);
        Err(err)
    }

    /// Appends an externally produced event, e.g. a vault deletion.
    pub fn record(&mut self, now: Minute, event: LedgerEvent) {
        self.ledger.append(now, event);
    }

    pub fn log_denial(
        &mut self,
        operation: &str,
        cert: Option<&QuorumCertificate>,
        reason: &str,
        now: Minute,
    ) {
        self.ledger.append(
            now,
            LedgerEvent::AccessDenied {
                operation: operation.to_owned(),
                request_id: cert.map(|c| c.request_id()),
                reason: reason.to_owned(),
            },
        );
    }

    pub fn change_state(
        &mut self,
        cert: &QuorumCertificate,
        target: SystemStateKind,
        now: Minute,
        listeners: &mut [&mut dyn StateListener],
    ) -> Result<SystemState, FederationError> {
        if let Err(e) = self.check_state_change(cert, target) {
            return self.deny("change_state", Some(cert), e, now);
        }
        self.consumed.insert(cert.request_id());
        let from = self.state.kind;
        self.state = SystemState {
            kind: target,
            alert_started: (target == SystemStateKind::Alert).then_some(now),
            epoch: self.state.epoch + 1,
        };
        self.ledger.append(
            now,
            LedgerEvent::StateChanged {
                request_id: cert.request_id(),
                from,
                to: target,
                epoch: self.state.epoch,
            },
        );
        for l in listeners.iter_mut() {
            match target {
                SystemStateKind::Alert => l.on_alert(self.state.epoch),
                SystemStateKind::Passive => {
                    if let Some(event) = l.on_passive() {
                        self.ledger.append(now, event);
                    }
                }
            }
        }
        Ok(self.state)
    }

    fn check_state_change(
        &self,
        cert: &QuorumCertificate,
        target: SystemStateKind,
    ) -> Result<(), FederationError> {
        if cert.class() != OperationClass::LockUnlock {
            return Err(FederationError::WrongClass {
                expected: OperationClass::LockUnlock,
                got: cert.class(),
            });
        }
        self.verify_certificate(cert)?;
        if cert.request.payload != (Payload::StateChange { target }) {
            return Err(FederationError::PayloadMismatch);
        }
        if self.consumed.contains(&cert.request_id()) {
            return Err(FederationError::CertificateConsumed);
        }
        if target == self.state.kind {
            return Err(FederationError::SameState);
        }
        Ok(())
    }

    /// Turns a certificate into a capability for `class`. FULL_PROCESSING
    /// reconstructs the named keys from the approvers' shares.
    pub fn authorize_mode(
        &mut self,
        cert: &QuorumCertificate,
        class: OperationClass,
        now: Minute,
    ) -> Result<Capability, FederationError> {
        match self.build_capability(cert, class) {
            Ok((cap, used)) => {
                if !cap.keys.is_empty() {
                    self.ledger.append(
                        now,
                        LedgerEvent::KeyReconstructed {
                            request_id: cert.request_id(),
                            key_ids: cap.keys.keys().cloned().collect(),
                            shares_used: used,
                        },
                    );
                }
                Ok(cap)
            }
            Err(e) => self.deny("authorize_mode", Some(cert), e, now),
        }
    }

    fn build_capability(
        &self,
        cert: &QuorumCertificate,
        class: OperationClass,
    ) -> Result<(Capability, Vec<AuthorityId>), FederationError> {
        if cert.class() != class {
            return Err(FederationError::WrongClass {
                expected: class,
                got: cert.class(),
            });
        }
        self.verify_certificate(cert)?;
        if class == OperationClass::LockUnlock {
            if self.state.kind != SystemStateKind::Alert {
                return Err(FederationError::NotAlert);
            }
            if self.consumed.contains(&cert.request_id()) {
                return Err(FederationError::CertificateConsumed);
            }
        } else {
            self.require_current(cert)?;
        }
        let mut keys = BTreeMap::new();
        let mut used = Vec::new();
        if let Payload::Disclosure { key_ids, .. } = &cert.request.payload {
            for id in key_ids {
                let (secret, who) = self.reconstruct(cert, id)?;
                keys.insert(id.clone(), secret);
                used = who;
            }
        }
        Ok((
            Capability {
                class,
                request_id: cert.request_id(),
                epoch: self.state.epoch,
                scope: cert.request.payload.scope(),
                subjects: cert.request.payload.subjects().to_vec(),
                keys,
            },
            used,
        ))
    }

    /// Reconstructs a key from the shares of the certificate's approvers.
    fn reconstruct(
        &self,
        cert: &QuorumCertificate,
        id: &KeyId,
    ) -> Result<(StaticSecret, Vec<AuthorityId>), FederationError> {
        let public = self
            .public_keys
            .get(id)
            .ok_or_else(|| FederationError::UnknownKey(id.clone()))?;
        let t = self.policy.q(OperationClass::FullProcessing);
        let mut shares = Vec::new();
        let mut who = Vec::new();
        for a in cert.approvers() {
            if let Some(s) = self.authority(a).and_then(|auth| auth.share(id)) {
                shares.push(s.clone());
                who.push(a);
            }
            if shares.len() == t {
                break;
            }
        }
        if shares.len() < t {
            return Err(FederationError::KeyReconstruction(id.clone()));
        }
        let bytes: [u8; 32] = reconstruct_secret(&shares)?
            .try_into()
            .map_err(|_| FederationError::KeyReconstruction(id.clone()))?;
        let secret = StaticSecret::from(bytes);
        if PublicKey::from(&secret) != *public {
            return Err(FederationError::KeyReconstruction(id.clone()));
        }
        Ok((secret, who))
    }

    /// Gate for VPN reads of encrypted PDR sets. Every outcome is logged.
    pub fn authorize_fetch(
        &mut self,
        cert: &QuorumCertificate,
        range: MinuteRange,
        now: Minute,
    ) -> Result<(), FederationError> {
        let check = (|| {
            if !Permission::ReadEncrypted.granted_by(cert.class()) {
                return Err(FederationError::Forbidden {
                    class: cert.class(),
                    permission: Permission::ReadEncrypted,
                });
            }
            self.verify_certificate(cert)?;
            self.require_current(cert)?;
            match cert.request.payload.scope() {
                Some(scope) if scope.covers(&range) => Ok(()),
                _ => Err(FederationError::OutOfScope),
            }
        })();
        match check {
            Ok(()) => {
                self.ledger.append(
                    now,
                    LedgerEvent::DataReleased {
                        request_id: cert.request_id(),
                        operation: "vpn_fetch".into(),
                        range,
                    },
                );
                Ok(())
            }
            Err(e) => self.deny("vpn_fetch", Some(cert), e, now),
        }
    }

    /// Opens a cross-border token addressed to this federation. Needs a
    /// current FULL_PROCESSING certificate naming the country key.
    pub fn redeem_token(
        &mut self,
        cert: &QuorumCertificate,
        token: &CrossBorderToken,
        now: Minute,
    ) -> Result<PhoneId, FederationError> {
        let key = KeyId::country(&token.home_country);
        let released = match &cert.request.payload {
            Payload::Disclosure { key_ids, .. } => key_ids.contains(&key),
            _ => false,
        };
        if !released {
            return self.deny(
                "redeem_token",
                Some(cert),
                FederationError::KeyNotReleased(key),
                now,
            );
        }
        let cap = self.authorize_mode(cert, OperationClass::FullProcessing, now)?;
        let secret = cap.decryption_key(&key, &self.state)?;
        open_token(token, secret)
    }
}
