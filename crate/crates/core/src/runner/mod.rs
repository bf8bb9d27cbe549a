//! End-to-end scenario runs: generate, observe, push, alert, analyze,
//! report, and return to passive.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cep::{
    build_dag, hotspot_csv, hotspot_map, CepEngine, CepError, CepParams, ContaminationRecord,
    Findings, HotspotCell, InfectionDag, PdrStream, PhoneOfInterest,
};
use crate::crypto::{derive_rng, Digest};
use crate::edge::{EdgeCloud, EdgeError};
use crate::federation::{
    AuthorityBehaviour, AuthorityId, Capability, Federation, FederationError, KeyId, MinuteRange,
    OperationClass, Payload, QuorumCertificate, StateListener, Subject, SystemStateKind,
};
use crate::mobility::{generate_world, MobilityError, ProviderId, ScenarioConfig, World};
use crate::pdr::{group_into_sets, Minute, PdrError, PdrSet, PrecisionClass};
use crate::vault::{CloudFault, ObjectId, Vault, VaultError};
use crate::wire::{Reader, WireError, Writer};

mod attack;
mod faults;

pub use attack::{attack_suite, AttackMatrix, AttackOutcome};
pub use faults::{parse_faults, Fault};

const DAY: Minute = 1440;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] MobilityError),
    #[error("federation: {0}")]
    Federation(#[from] FederationError),
    #[error("edge: {0}")]
    Edge(#[from] EdgeError),
    #[error("vault: {0}")]
    Vault(#[from] VaultError),
    #[error("analysis: {0}")]
    Cep(#[from] CepError),
    #[error("pdr: {0}")]
    Pdr(#[from] PdrError),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub faults: Vec<Fault>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pdrs_emitted: u64,
    pub sets_pushed: u64,
    pub sets_pruned: u64,
    pub pdrs_analyzed: u64,
    pub phones_of_interest: usize,
    pub suspicions: usize,
    pub pc_susp: usize,
    /// Index 0 is class 1.
    pub scores_by_class: [usize; 4],
    pub completed_phones: usize,
    pub pccont_records: usize,
    pub dag_nodes: usize,
    pub dag_edges: usize,
    pub hotspot_cells: usize,
    pub ledger_entries: usize,
    pub vault_objects_written: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// Transmissions with a run of at least `dur_min` minutes at true
    /// distance <= prox_max.
    pub qualifying: usize,
    pub flagged: usize,
    pub recall: f64,
    /// Same, restricted to runs where both phones share a femto cell, with
    /// the bound tightened by two femto noise deviations.
    pub femto_bound_m: f64,
    pub femto_qualifying: usize,
    pub femto_flagged: usize,
    pub femto_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagReport {
    pub acyclic: bool,
    pub edges_matching_truth: usize,
    pub edges_contradicting_truth: usize,
    pub precision: f64,
    pub planted_chain: Vec<String>,
    pub planted_chain_in_dag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtlCheck {
    pub minute: Minute,
    pub pruned: u64,
    pub oldest_age: Option<Minute>,
    pub ttl: Minute,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub vault_objects: usize,
    pub vault_fragments: usize,
    pub edges_locked: bool,
    pub plaintext_held: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub simulated_minutes: Minute,
    pub alert_minute: Minute,
    pub analysis_minute: Minute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_digest: String,
    pub seed: u64,
    pub faults: Vec<String>,
    pub counts: Counts,
    pub recall: RecallReport,
    pub dag: DagReport,
    pub ttl_checks: Vec<TtlCheck>,
    pub ledger_verified: bool,
    pub ledger_head: String,
    pub privacy: PrivacyReport,
    pub timing: Timing,
    pub violations: Vec<String>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn summary(&self) -> String {
        let c = &self.counts;
        let mut s = String::new();
        let mut line = |l: String| {
            s.push_str(&l);
            s.push('\n');
        };
        line(format!("scenario {} seed {}", &self.scenario_digest[..16], self.seed));
        if !self.faults.is_empty() {
            line(format!("faults: {}", self.faults.join(", ")));
        }
        line(format!(
            "pdrs emitted {}  sets pushed {}  sets pruned {}",
            c.pdrs_emitted, c.sets_pushed, c.sets_pruned
        ));
        line(format!(
            "phones of interest {}  suspicions {} (pc_susp {})  completed {}",
            c.phones_of_interest, c.suspicions, c.pc_susp, c.completed_phones
        ));
        line(format!(
            "scores by class 1..4: {:?}  pccont {}  dag {} nodes / {} edges  hotspot cells {}",
            c.scores_by_class, c.pccont_records, c.dag_nodes, c.dag_edges, c.hotspot_cells
        ));
        line(format!(
            "recall {}/{} ({:.3})  femto recall {}/{} ({:.3})",
            self.recall.flagged,
            self.recall.qualifying,
            self.recall.recall,
            self.recall.femto_flagged,
            self.recall.femto_qualifying,
            self.recall.femto_recall
        ));
        line(format!(
            "dag precision {:.3}  contradictions {}  planted chain found {}",
            self.dag.precision, self.dag.edges_contradicting_truth, self.dag.planted_chain_in_dag
        ));
        line(format!(
            "ledger {} entries, verified {}",
            c.ledger_entries, self.ledger_verified
        ));
        line(format!(
            "end state: vault objects {}  edges locked {}",
            self.privacy.vault_objects, self.privacy.edges_locked
        ));
        if self.violations.is_empty() {
            line("all invariants held".into());
        } else {
            for v in &self.violations {
                line(format!("VIOLATION: {v}"));
            }
        }
        s
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub world: World,
    pub findings: Findings,
    pub records: Vec<ContaminationRecord>,
    pub dag: InfectionDag,
    pub hotspots: Vec<HotspotCell>,
    pub ledger_jsonl: String,
}

impl RunOutcome {
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), RunError> {
        fs::create_dir_all(dir)?;
        let flagged: Vec<_> = self.findings.suspicions.iter().filter(|s| s.pc_susp).collect();
        fs::write(dir.join("report.json"), self.report.to_json())?;
        fs::write(dir.join("summary.txt"), self.report.summary())?;
        fs::write(dir.join("suspicions.json"), pretty(&flagged))?;
        fs::write(dir.join("scores.json"), pretty(&self.findings.scores))?;
        fs::write(dir.join("pccont.json"), pretty(&self.records))?;
        fs::write(dir.join("dag.json"), pretty(&self.dag))?;
        fs::write(dir.join("dag.dot"), self.dag.to_dot())?;
        fs::write(dir.join("hotspots.csv"), hotspot_csv(&self.hotspots))?;
        fs::write(dir.join("ledger.jsonl"), &self.ledger_jsonl)?;
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes") + "\n"
}

/// Requests a certificate and gathers votes from every authority in id
/// order. Faulty authorities are skipped by the federation.
pub(crate) fn certify(
    fed: &mut Federation,
    class: OperationClass,
    payload: Payload,
    now: Minute,
) -> Result<QuorumCertificate, FederationError> {
    let order: Vec<AuthorityId> = fed.authorities().iter().map(|a| a.id()).collect();
    let id = fed.request(order[0], class, payload, now)?;
    fed.collect(id, &order, now)
}

fn transition(
    fed: &mut Federation,
    edges: &mut BTreeMap<ProviderId, EdgeCloud>,
    vault: &mut Vault,
    target: SystemStateKind,
    now: Minute,
) -> Result<(), FederationError> {
    let cert = certify(fed, OperationClass::LockUnlock, Payload::StateChange { target }, now)?;
    let mut listeners: Vec<&mut dyn StateListener> = edges
        .values_mut()
        .map(|e| e as &mut dyn StateListener)
        .collect();
    listeners.push(vault);
    fed.change_state(&cert, target, now, &mut listeners)?;
    Ok(())
}

pub(crate) fn apply_faults(fed: &mut Federation, vault: &mut Vault, faults: &[Fault]) {
    for f in faults {
        match *f {
            Fault::VaultByzantine(i) => vault.set_fault(i, CloudFault::Byzantine),
            Fault::VaultCrash(i) => vault.set_fault(i, CloudFault::Crashed),
            Fault::AuthoritySilent(i) => fed.set_behaviour(AuthorityId(i), AuthorityBehaviour::Silent),
            Fault::AuthorityEquivocate(i) => {
                fed.set_behaviour(AuthorityId(i), AuthorityBehaviour::Equivocating)
            }
        }
    }
}

fn encode_sets(sets: &[PdrSet]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(sets.len() as u32);
    for s in sets {
        w.bytes(&s.encode());
    }
    w.finish()
}

fn decode_sets(bytes: &[u8]) -> Result<Vec<PdrSet>, RunError> {
    let mut r = Reader::new(bytes);
    let n = r.count(4)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(PdrSet::decode(r.bytes()?)?);
    }
    r.finish()?;
    Ok(out)
}

/// Pulls every provider's encrypted sets over the VPN, decrypts them with
/// the released keys and parks the plaintext in the vault, one object per
/// provider.
fn collect_into_vault(
    fed: &mut Federation,
    edges: &mut BTreeMap<ProviderId, EdgeCloud>,
    vault: &mut Vault,
    cert: &QuorumCertificate,
    cap: &Capability,
    scope: MinuteRange,
    now: Minute,
) -> Result<Vec<ObjectId>, RunError> {
    let mut ids = Vec::new();
    for (p, edge) in edges.iter_mut() {
        let encrypted = edge.vpn_fetch(fed, cert, scope, now)?;
        let state = fed.state();
        let key = cap.decryption_key(&KeyId::provider(p.0), &state)?;
        let sets = encrypted
            .iter()
            .map(|e| e.decrypt(key))
            .collect::<Result<Vec<_>, _>>()?;
        ids.push(vault.write(cap, &state, &encode_sets(&sets), now)?);
    }
    Ok(ids)
}

pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let world = generate_world(cfg)?;
    let fp = &cfg.federation;
    let mut fed = Federation::new("home", fp.policy(), fp.vote_window_min, cfg.seed)?;
    let mut vault = Vault::new(cfg.vault, cfg.seed)?;
    apply_faults(&mut fed, &mut vault, &opts.faults);

    let ttl = cfg.pdr_ttl();
    let mut key_rng = derive_rng(cfg.seed, "federation-keys");
    let mut edges: BTreeMap<ProviderId, EdgeCloud> = BTreeMap::new();
    for (p, _) in world.registry.providers() {
        let pk = fed.install_key(KeyId::provider(p.0), &mut key_rng)?;
        edges.insert(*p, EdgeCloud::new(*p, pk, ttl, cfg.seed));
    }

    let end = cfg.duration_min;
    let alert_at = cfg.first_case_minute.unwrap_or(end).min(end);
    let mut counts = Counts::default();
    let mut ttl_checks = Vec::new();
    let mut daily_prune = |edges: &mut BTreeMap<ProviderId, EdgeCloud>, now: Minute| {
        let pruned: usize = edges.values_mut().map(|e| e.prune(now)).sum();
        let oldest = edges.values().filter_map(|e| e.oldest_age(now)).max();
        ttl_checks.push(TtlCheck {
            minute: now,
            pruned: pruned as u64,
            oldest_age: oldest,
            ttl,
            ok: oldest.map_or(true, |a| a <= ttl),
        });
        pruned as u64
    };

    for minute in 0..end {
        if minute == alert_at {
            transition(&mut fed, &mut edges, &mut vault, SystemStateKind::Alert, minute)?;
        }
        let pdrs = world.observe(minute);
        counts.pdrs_emitted += pdrs.len() as u64;
        for set in group_into_sets(pdrs)? {
            let p = world.registry.provider_of(&set.bs().code).ok_or_else(|| {
                RunError::Invariant(format!("station {} has no provider", set.bs().code))
            })?;
            let edge = edges
                .get_mut(&p)
                .ok_or_else(|| RunError::Invariant(format!("no edge cloud for {p}")))?;
            edge.provider_port().push(&set)?;
            counts.sets_pushed += 1;
        }
        if (minute + 1) % DAY == 0 {
            counts.sets_pruned += daily_prune(&mut edges, minute);
        }
    }
    let now = end;
    if end % DAY != 0 {
        counts.sets_pruned += daily_prune(&mut edges, now);
    }
    if fed.state().kind != SystemStateKind::Alert {
        transition(&mut fed, &mut edges, &mut vault, SystemStateKind::Alert, now)?;
    }

    // Diagnosed phones, with the infection estimates handed to analysts.
    let mut pois: Vec<PhoneOfInterest> = world
        .truth
        .t_inf_min_estimate
        .iter()
        .map(|(&i, &t)| PhoneOfInterest {
            phone: world.phone(i).clone(),
            t_inf_min: t,
        })
        .collect();
    pois.sort();
    counts.phones_of_interest = pois.len();

    let scope = MinuteRange::new(0, now);
    let full = certify(
        &mut fed,
        OperationClass::FullProcessing,
        Payload::Disclosure {
            scope,
            subjects: pois
                .iter()
                .map(|p| Subject {
                    phone: p.phone.clone(),
                    t_inf_min: p.t_inf_min,
                })
                .collect(),
            key_ids: edges.keys().map(|p| KeyId::provider(p.0)).collect(),
        },
        now,
    )?;
    let cap = fed.authorize_mode(&full, OperationClass::FullProcessing, now)?;
    let objects = collect_into_vault(&mut fed, &mut edges, &mut vault, &full, &cap, scope, now)?;
    counts.vault_objects_written = objects.len();

    let state = fed.state();
    let mut stream = PdrStream::new();
    for id in &objects {
        for set in decode_sets(&vault.read(&cap, &state, id)?)? {
            for r in set.into_records() {
                stream.insert(r);
            }
        }
    }
    counts.pdrs_analyzed = stream.len() as u64;

    let params = CepParams::from_config(cfg);
    let engine = CepEngine::new(&cap, state, &world.registry, params.clone());
    let mut findings = engine.analyze(&stream, &pois)?;
    let added = engine.complete_findings(&stream, &findings)?;
    counts.completed_phones = added.expanded.len();
    findings.merge(added);
    let infected: BTreeMap<_, _> = pois.iter().map(|p| (p.phone.clone(), p.t_inf_min)).collect();
    let records = engine.build_pccont(&findings.scores, &infected)?;
    let dag = build_dag(&records, params.t_incub_min, params.t_incub_max)?;
    let hotspots = hotspot_map(&records, params.hotspot_cell)?;

    counts.suspicions = findings.suspicions.len();
    counts.pc_susp = findings.suspicions.iter().filter(|s| s.pc_susp).count();
    for s in &findings.scores {
        counts.scores_by_class[usize::from(s.class.clamp(1, 4)) - 1] += 1;
    }
    counts.pccont_records = records.len();
    counts.dag_nodes = dag.nodes.len();
    counts.dag_edges = dag.edges.len();
    counts.hotspot_cells = hotspots.len();

    drop(engine);
    drop(cap);
    transition(&mut fed, &mut edges, &mut vault, SystemStateKind::Passive, now)?;
    counts.ledger_entries = fed.ledger().len();

    let recall = ground_truth_recall(&world, cfg, &findings);
    let dag_report = dag_quality(&world, &dag);
    let privacy = PrivacyReport {
        vault_objects: vault.len(),
        vault_fragments: vault.stored_fragments(),
        edges_locked: edges.values().all(EdgeCloud::is_locked),
        plaintext_held: !vault.is_empty() || vault.stored_fragments() > 0,
    };
    let ledger_verified = fed.ledger().verify();

    let mut violations = Vec::new();
    if !ledger_verified {
        violations.push("ledger hash chain does not verify".to_string());
    }
    for c in ttl_checks.iter().filter(|c| !c.ok) {
        violations.push(format!(
            "record older than ttl ({:?} > {}) after prune at minute {}",
            c.oldest_age, c.ttl, c.minute
        ));
    }
    if !dag_report.acyclic {
        violations.push("infection graph has a cycle".into());
    }
    if privacy.plaintext_held || !privacy.edges_locked {
        violations.push("data still held or reachable after return to passive".into());
    }
    if fed.state().kind != SystemStateKind::Passive {
        violations.push("system did not return to passive".into());
    }
    for (name, x) in [
        ("recall", recall.recall),
        ("femto recall", recall.femto_recall),
        ("precision", dag_report.precision),
    ] {
        if !(0.0..=1.0).contains(&x) {
            violations.push(format!("{name} {x} outside [0, 1]"));
        }
    }

    let report = RunReport {
        scenario_digest: Digest::of(cfg.to_json().as_bytes()).to_hex(),
        seed: cfg.seed,
        faults: opts.faults.iter().map(Fault::to_string).collect(),
        counts,
        recall,
        dag: dag_report,
        ttl_checks,
        ledger_verified,
        ledger_head: fed.ledger().head().to_hex(),
        privacy,
        timing: Timing {
            simulated_minutes: end,
            alert_minute: alert_at,
            analysis_minute: now,
        },
        violations,
    };
    Ok(RunOutcome {
        report,
        ledger_jsonl: fed.ledger().to_jsonl(),
        world,
        findings,
        records,
        dag,
        hotspots,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Longest run of minutes around `t` during which `ok` holds.
fn run_around(t: Minute, end: Minute, ok: impl Fn(Minute) -> bool) -> Minute {
    if !ok(t) {
        return 0;
    }
    let mut lo = t;
    while lo > 0 && ok(lo - 1) {
        lo -= 1;
    }
    let mut hi = t;
    while hi + 1 < end && ok(hi + 1) {
        hi += 1;
    }
    hi - lo + 1
}

pub fn ground_truth_recall(world: &World, cfg: &ScenarioConfig, findings: &Findings) -> RecallReport {
    let th = &cfg.thresholds;
    let femto_bound = (th.prox_max_m - 2.0 * cfg.noise.sigma(PrecisionClass::Femto)).max(0.0);
    let femtos: Vec<_> = world
        .registry
        .stations()
        .filter(|s| s.code.precision_class == PrecisionClass::Femto)
        .collect();
    let (mut q, mut f, mut fq, mut ff) = (0, 0, 0, 0);
    for (a, b, t) in world.truth.transmissions() {
        let (ta, tb) = (&world.traces[a], &world.traces[b]);
        let dist = |m: Minute| ta.position_at(m).distance(&tb.position_at(m));
        let flagged = findings.is_suspected(&ta.phone, &tb.phone);
        if run_around(t, cfg.duration_min, |m| dist(m) <= th.prox_max_m) >= th.dur_min_min {
            q += 1;
            f += usize::from(flagged);
        }
        let femto_ok = |m: Minute| {
            let (pa, pb) = (ta.position_at(m), tb.position_at(m));
            pa.distance(&pb) <= femto_bound
                && femtos.iter().any(|s| {
                    s.centroid.distance(&pa) <= s.useful_range
                        && s.centroid.distance(&pb) <= s.useful_range
                })
        };
        if run_around(t, cfg.duration_min, femto_ok) >= th.dur_min_min {
            fq += 1;
            ff += usize::from(flagged);
        }
    }
    RecallReport {
        qualifying: q,
        flagged: f,
        recall: ratio(f, q),
        femto_bound_m: femto_bound,
        femto_qualifying: fq,
        femto_flagged: ff,
        femto_recall: ratio(ff, fq),
    }
}

pub fn dag_quality(world: &World, dag: &InfectionDag) -> DagReport {
    let truth = &world.truth;
    let mut matching = 0;
    let mut contradicting = 0;
    for e in &dag.edges {
        match (truth.infection_of(&e.from), truth.infection_of(&e.to)) {
            (Some(a), Some(b)) => {
                if b.t_infected < a.t_infected {
                    contradicting += 1;
                }
                let infector = b.infected_by.map(|i| &truth.phones[i]);
                if infector == Some(&e.from) {
                    matching += 1;
                }
            }
            _ => contradicting += 1,
        }
    }
    let chain: Vec<_> = truth
        .planted_chain
        .iter()
        .map(|&i| world.phone(i).clone())
        .collect();
    DagReport {
        acyclic: dag.topo_sort().is_some(),
        edges_matching_truth: matching,
        edges_contradicting_truth: contradicting,
        precision: ratio(matching, dag.edges.len()),
        planted_chain_in_dag: chain.len() >= 2 && dag.contains_path(&chain),
        planted_chain: chain.iter().map(|p| p.nr().to_string()).collect(),
    }
}

#[cfg(test)]
mod tests;
