//! Adversarial drivers. Each attack reports whether the system failed safe.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{derive_rng, generate_keypair};
use crate::edge::{AuditEvent, EdgeCloud};
use crate::federation::{
    issue_token, verify_jsonl, AuthorityBehaviour, AuthorityId, Capability, Federation, KeyId,
    LedgerEvent, MinuteRange, OperationClass, Payload, QuorumCertificate, SystemStateKind,
    TokenContext,
};
use crate::mobility::{generate_world, ProviderId, ScenarioConfig};
use crate::pdr::{group_into_sets, Minute};
use crate::vault::{all_subsets, coalition_decrypt, CloudFault, Vault};

use super::{certify, transition, RunError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub name: String,
    /// Whether the attack tries to get data out.
    pub extraction: bool,
    pub safe: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackMatrix {
    pub rows: Vec<AttackOutcome>,
    /// Extraction attempts that obtained data.
    pub extractions_succeeded: usize,
}

impl AttackMatrix {
    pub fn all_safe(&self) -> bool {
        self.rows.iter().all(|r| r.safe)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for r in &self.rows {
            let verdict = if r.safe { "SAFE" } else { "UNSAFE" };
            s.push_str(&format!("{:width$}  {verdict:6}  {}\n", r.name, r.detail));
        }
        s.push_str(&format!(
            "extractions without a valid certificate: {}\n",
            self.extractions_succeeded
        ));
        s
    }
}

struct Env {
    fed: Federation,
    edges: BTreeMap<ProviderId, EdgeCloud>,
    vault: Vault,
    phones: Vec<String>,
    now: Minute,
    scope: MinuteRange,
}

const PUSHED_MINUTES: Minute = 60;

impl Env {
    fn new(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        let world = generate_world(cfg)?;
        let fp = &cfg.federation;
        let mut fed = Federation::new("home", fp.policy(), fp.vote_window_min, cfg.seed)?;
        let vault = Vault::new(cfg.vault, cfg.seed)?;
        let mut rng = derive_rng(cfg.seed, "attack-keys");
        let mut edges = BTreeMap::new();
        for (p, _) in world.registry.providers() {
            let pk = fed.install_key(KeyId::provider(p.0), &mut rng)?;
            edges.insert(*p, EdgeCloud::new(*p, pk, cfg.pdr_ttl(), cfg.seed));
        }
        for minute in 0..PUSHED_MINUTES.min(cfg.duration_min) {
            for set in group_into_sets(world.observe(minute))? {
                let p = world
                    .registry
                    .provider_of(&set.bs().code)
                    .expect("registered station");
                edges
                    .get_mut(&p)
                    .expect("edge per provider")
                    .provider_port()
                    .push(&set)?;
            }
        }
        Ok(Self {
            fed,
            edges,
            vault,
            phones: world.traces.iter().map(|t| t.phone.nr().to_string()).collect(),
            now: PUSHED_MINUTES,
            scope: MinuteRange::new(0, PUSHED_MINUTES + 10 * cfg.pdr_ttl() + 10_000),
        })
    }

    fn tick(&mut self) -> Minute {
        self.now += 1;
        self.now
    }

    fn set_state(&mut self, target: SystemStateKind) -> Result<(), RunError> {
        let now = self.tick();
        transition(&mut self.fed, &mut self.edges, &mut self.vault, target, now)?;
        Ok(())
    }

    fn scope(&self) -> MinuteRange {
        self.scope
    }

    fn disclosure(&self) -> Payload {
        Payload::Disclosure {
            scope: self.scope(),
            subjects: vec![],
            key_ids: self.edges.keys().map(|p| KeyId::provider(p.0)).collect(),
        }
    }

    fn certify(&mut self, class: OperationClass, payload: Payload) -> Result<QuorumCertificate, RunError> {
        let now = self.tick();
        Ok(certify(&mut self.fed, class, payload, now)?)
    }

    fn full(&mut self) -> Result<(QuorumCertificate, Capability), RunError> {
        let payload = self.disclosure();
        let cert = self.certify(OperationClass::FullProcessing, payload)?;
        let now = self.tick();
        let cap = self
            .fed
            .authorize_mode(&cert, OperationClass::FullProcessing, now)?;
        Ok((cert, cap))
    }

    /// Silences all but `q - 1` authorities, runs `f`, then restores them.
    fn below_quorum<T>(&mut self, class: OperationClass, f: impl FnOnce(&mut Self) -> T) -> T {
        let q = self.fed.policy().q(class);
        let ids: Vec<AuthorityId> = self.fed.authorities().iter().map(|a| a.id()).collect();
        for &a in &ids[q - 1..] {
            self.fed.set_behaviour(a, AuthorityBehaviour::Silent);
        }
        let out = f(self);
        for &a in &ids {
            self.fed.set_behaviour(a, AuthorityBehaviour::Honest);
        }
        out
    }

    /// Tries every edge cloud; returns how many handed out data.
    fn fetch_all(&mut self, cert: &QuorumCertificate) -> usize {
        let scope = self.scope();
        let now = self.tick();
        let fed = &mut self.fed;
        self.edges
            .values_mut()
            .map(|e| e.vpn_fetch(fed, cert, scope, now).is_ok())
            .filter(|&ok| ok)
            .count()
    }

    fn denials(&self) -> usize {
        self.fed.ledger().count(|e| {
            matches!(e, LedgerEvent::AccessDenied { .. } | LedgerEvent::Denied { .. })
        })
    }
}

fn outcome(name: &str, extraction: bool, safe: bool, detail: String) -> AttackOutcome {
    AttackOutcome {
        name: name.into(),
        extraction,
        safe,
        detail,
    }
}

/// Truncates a genuine certificate to one approval short of its quorum.
fn forge(cert: &QuorumCertificate) -> QuorumCertificate {
    let mut f = cert.clone();
    f.approvals.truncate(cert.required.saturating_sub(1));
    f.required = f.approvals.len();
    f
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

pub fn attack_suite(cfg: &ScenarioConfig) -> Result<AttackMatrix, RunError> {
    cfg.validate()?;
    let mut env = Env::new(cfg)?;
    let mut rows = Vec::new();

    // A provider only holds ciphertext under the federation's keys.
    {
        let mut rng = derive_rng(cfg.seed, "provider-guess");
        let (guess, _) = generate_keypair(&mut rng);
        let mut leaked = 0;
        let mut opened = 0;
        let mut sets = 0;
        for e in env.edges.values() {
            for s in e.raw_store() {
                sets += 1;
                leaked += env
                    .phones
                    .iter()
                    .filter(|nr| contains(&s.ciphertext, nr.as_bytes()))
                    .count();
                opened += usize::from(s.decrypt(&guess).is_ok());
            }
        }
        rows.push(outcome(
            "provider-read",
            true,
            leaked == 0 && opened == 0 && sets > 0,
            format!("{sets} stored sets, {leaked} cleartext numbers, {opened} opened with a provider key"),
        ));
    }

    // Reads are refused while the system is passive, even with votes.
    {
        let payload = env.disclosure();
        let cert = env.certify(OperationClass::FullProcessing, payload)?;
        let served = env.fetch_all(&cert);
        let now = env.tick();
        let cap = env.fed.authorize_mode(&cert, OperationClass::FullProcessing, now);
        rows.push(outcome(
            "fetch-while-passive",
            true,
            served == 0 && cap.is_err(),
            format!("{served} edges served, capability refused: {}", cap.is_err()),
        ));
    }

    // Unlock with one approval short of quorum.
    {
        let before = env.denials();
        let target = SystemStateKind::Alert;
        let got = env.below_quorum(OperationClass::LockUnlock, |env| {
            env.certify(OperationClass::LockUnlock, Payload::StateChange { target })
        });
        let now = env.tick() + cfg.federation.vote_window_min + 1;
        env.fed.expire_pending(now);
        let genuine = env.certify(OperationClass::LockUnlock, Payload::StateChange { target })?;
        let now = env.tick();
        let forged = env.fed.change_state(&forge(&genuine), target, now, &mut []);
        let still_passive = env.fed.state().kind == SystemStateKind::Passive;
        let logged = env.denials() - before;
        rows.push(outcome(
            "sub-quorum-unlock",
            false,
            got.is_err() && forged.is_err() && still_passive && logged >= 2,
            format!("vote gathering failed: {}, forged certificate refused: {}, {logged} denials logged", got.is_err(), forged.is_err()),
        ));
        env.set_state(SystemStateKind::Alert)?;
    }

    // Fetch with a sub-quorum full disclosure request and a forged certificate.
    {
        let payload = env.disclosure();
        let got = env.below_quorum(OperationClass::FullProcessing, |env| {
            env.certify(OperationClass::FullProcessing, payload)
        });
        let (genuine, _) = env.full()?;
        let served = env.fetch_all(&forge(&genuine));
        rows.push(outcome(
            "sub-quorum-fetch",
            true,
            got.is_err() && served == 0,
            format!("certification refused: {}, {served} edges served a forged certificate", got.is_err()),
        ));
    }

    // Certificate issued by a different federation.
    {
        let fp = &cfg.federation;
        let mut other = Federation::new("elsewhere", fp.policy(), fp.vote_window_min, cfg.seed ^ 0x5a5a)?;
        let up = certify(&mut other, OperationClass::LockUnlock, Payload::StateChange { target: SystemStateKind::Alert }, 0)?;
        other.change_state(&up, SystemStateKind::Alert, 0, &mut [])?;
        let foreign = certify(&mut other, OperationClass::FullProcessing, env.disclosure(), 0)?;
        let served = env.fetch_all(&foreign);
        let now = env.tick();
        let cap = env.fed.authorize_mode(&foreign, OperationClass::FullProcessing, now);
        rows.push(outcome(
            "foreign-certificate",
            true,
            served == 0 && cap.is_err(),
            format!("{served} edges served, capability refused: {}", cap.is_err()),
        ));
    }

    // A push-only certificate cannot read.
    {
        let scope = env.scope();
        let push = env.certify(OperationClass::StrictPush, Payload::Push { scope })?;
        let served = env.fetch_all(&push);
        rows.push(outcome(
            "wrong-class-fetch",
            true,
            served == 0,
            format!("{served} edges served a push certificate"),
        ));
    }

    // Blind classes see ciphertext only.
    let plaintext: Vec<u8> = (0..2048u32).map(|i| (i * 13 % 251) as u8).collect();
    let (_, full_cap) = env.full()?;
    let state = env.fed.state();
    let object = env.vault.write(&full_cap, &state, &plaintext, env.now)?;
    {
        let scope = env.scope();
        let cert = env.certify(
            OperationClass::BlindProcessing,
            Payload::Analysis {
                scope,
                subjects: vec![],
            },
        )?;
        let now = env.tick();
        let blind = env
            .fed
            .authorize_mode(&cert, OperationClass::BlindProcessing, now)?;
        let state = env.fed.state();
        let read = env.vault.read(&blind, &state, &object);
        let key = blind.decryption_key(&KeyId::provider(1), &state);
        rows.push(outcome(
            "blind-decrypt",
            true,
            read.is_err() && key.is_err(),
            format!("vault read refused: {}, key refused: {}", read.is_err(), key.is_err()),
        ));
    }

    // Coalitions of fewer clouds than the share threshold.
    {
        let n = env.vault.clouds().len() as u8;
        let size = cfg.vault.share_threshold.saturating_sub(1).max(1);
        let coalitions = all_subsets(n, size);
        let opened = coalitions
            .iter()
            .filter(|c| coalition_decrypt(&env.vault, c, &object).is_some())
            .count();
        rows.push(outcome(
            "cloud-coalition",
            true,
            opened == 0,
            format!("{opened} of {} coalitions of {size} clouds decrypted", coalitions.len()),
        ));
    }

    // One Byzantine cloud at a time.
    {
        let ids: Vec<u8> = env.vault.clouds().iter().map(|c| c.id()).collect();
        let mut correct = 0;
        for &i in &ids {
            env.vault.set_fault(i, CloudFault::Byzantine);
            if env.vault.read(&full_cap, &state, &object).as_deref() == Ok(plaintext.as_slice()) {
                correct += 1;
            }
            env.vault.set_fault(i, CloudFault::Honest);
        }
        rows.push(outcome(
            "byzantine-fragment",
            false,
            correct == ids.len(),
            format!("{correct} of {} single-cloud corruptions tolerated", ids.len()),
        ));
    }

    // Ledger tampering.
    {
        let text = env.fed.ledger().to_jsonl();
        let mut rng = derive_rng(cfg.seed, "ledger-tamper");
        let trials = 100;
        let mut detected = 0;
        for _ in 0..trials {
            let mut bytes = text.clone().into_bytes();
            let i = rng.gen_range(0..bytes.len());
            bytes[i] ^= rng.gen_range(1..=255u8);
            let caught = match String::from_utf8(bytes) {
                Ok(t) => !verify_jsonl(&t),
                Err(_) => true,
            };
            detected += usize::from(caught);
        }
        rows.push(outcome(
            "ledger-tamper",
            false,
            verify_jsonl(&text) && detected == trials,
            format!("{detected}/{trials} single-byte tampers detected"),
        ));
    }

    // Records past their time to live are gone, not just hidden.
    {
        let later = env.now + cfg.pdr_ttl() + 1;
        env.now = later;
        let pruned: usize = env.edges.values_mut().map(|e| e.prune(later)).sum();
        let zeroed = env
            .edges
            .values()
            .flat_map(|e| e.audit())
            .filter(|a| matches!(a, AuditEvent::SecureDelete { verified_zero: true, .. }))
            .count();
        let (cert, _) = env.full()?;
        let scope = env.scope();
        let now = env.tick();
        let fed = &mut env.fed;
        let mut stale = 0;
        let mut served = 0;
        for e in env.edges.values_mut() {
            if let Ok(sets) = e.vpn_fetch(fed, &cert, scope, now) {
                served += 1;
                stale += sets
                    .iter()
                    .filter(|s| now.saturating_sub(s.minute) > cfg.pdr_ttl())
                    .count();
            }
        }
        rows.push(outcome(
            "expired-pdr",
            true,
            served == env.edges.len() && stale == 0 && zeroed == pruned && pruned > 0,
            format!("{pruned} sets pruned and zeroed ({zeroed} verified), {stale} expired sets served"),
        ));
    }

    // Certificates and capabilities from an earlier alert epoch.
    {
        let (cert, cap) = env.full()?;
        env.set_state(SystemStateKind::Passive)?;
        env.set_state(SystemStateKind::Alert)?;
        let state = env.fed.state();
        let object = env.vault.write(&full_cap, &state, b"x", env.now);
        let served = env.fetch_all(&cert);
        let key = cap.decryption_key(&KeyId::provider(1), &state);
        rows.push(outcome(
            "stale-capability",
            true,
            object.is_err() && served == 0 && key.is_err(),
            format!("old capability refused by vault: {}, {served} edges served an old certificate", object.is_err()),
        ));
    }

    // A token minted for another country's federation cannot be opened here.
    {
        let fp = &cfg.federation;
        let mut abroad = Federation::new("abroad", fp.policy(), fp.vote_window_min, cfg.seed ^ 0xa5a5)?;
        let cc = cfg.foreign.country_code.clone();
        let mut rng = derive_rng(cfg.seed, "token");
        let pk = abroad.install_key(KeyId::country(&cc), &mut rng)?;
        let phone = crate::pdr::PhoneId::new(format!("{cc}12345678"), "356938035643809")
            .expect("valid id");
        let ctx = TokenContext {
            window: MinuteRange::new(0, 10),
            center: crate::pdr::Point2::default(),
            radius_m: 5.0,
        };
        let token = issue_token(&phone, &pk, &cc, ctx, &mut rng)?;
        let payload = Payload::Disclosure {
            scope: env.scope(),
            subjects: vec![],
            key_ids: vec![KeyId::country(&cc)],
        };
        let cert = env.certify(OperationClass::FullProcessing, payload)?;
        let now = env.tick();
        let redeemed = env.fed.redeem_token(&cert, &token, now);
        rows.push(outcome(
            "cross-border-token",
            true,
            redeemed.is_err(),
            format!("redeemed by the wrong federation: {}", redeemed.is_ok()),
        ));
    }

    let extractions_succeeded = rows.iter().filter(|r| r.extraction && !r.safe).count();
    if !env.fed.ledger().verify() {
        rows.push(outcome("ledger-integrity", false, false, "ledger does not verify".into()));
    }
    Ok(AttackMatrix {
        rows,
        extractions_succeeded,
    })
}
