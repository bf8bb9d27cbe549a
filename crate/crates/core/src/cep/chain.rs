use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::federation::Permission;
use crate::pdr::{Minute, PhoneId};

use super::{
    lower_median, pair_key, BBox, CepEngine, CepError, ContactScore, ContactSuspicion, PdrStream,
    PhoneOfInterest, Region,
};

/// Accumulated analysis results. `expanded` maps every phone whose contacts
/// were searched to the infection estimate used for it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Findings {
    pub suspicions: Vec<ContactSuspicion>,
    pub scores: Vec<ContactScore>,
    pub expanded: BTreeMap<PhoneId, Minute>,
}

impl Findings {
    pub fn is_empty(&self) -> bool {
        self.suspicions.is_empty() && self.scores.is_empty() && self.expanded.is_empty()
    }

    /// Unordered pairs already present.
    pub fn pairs(&self) -> BTreeSet<(PhoneId, PhoneId)> {
        self.suspicions.iter().map(|s| pair_key(&s.v, &s.u)).collect()
    }

    /// Adds `other`, keeping one suspicion and one score per unordered pair.
    /// A flagged suspicion replaces an unflagged one; a higher score
    /// replaces a lower one.
    pub fn merge(&mut self, other: Findings) {
        let mut sus: BTreeMap<_, usize> = self
            .suspicions
            .iter()
            .enumerate()
            .map(|(i, s)| (pair_key(&s.v, &s.u), i))
            .collect();
        for s in other.suspicions {
            match sus.get(&pair_key(&s.v, &s.u)) {
                Some(&i) => {
                    if s.pc_susp && !self.suspicions[i].pc_susp {
                        self.suspicions[i] = s;
                    }
                }
                None => {
                    sus.insert(pair_key(&s.v, &s.u), self.suspicions.len());
                    self.suspicions.push(s);
                }
            }
        }
        let mut sc: BTreeMap<_, usize> = self
            .scores
            .iter()
            .enumerate()
            .map(|(i, s)| (pair_key(&s.v, &s.u), i))
            .collect();
        for s in other.scores {
            match sc.get(&pair_key(&s.v, &s.u)) {
                Some(&i) => {
                    if s.raw > self.scores[i].raw {
                        self.scores[i] = s;
                    }
                }
                None => {
                    sc.insert(pair_key(&s.v, &s.u), self.scores.len());
                    self.scores.push(s);
                }
            }
        }
        for (p, t) in other.expanded {
            self.expanded.entry(p).or_insert(t);
        }
    }

    pub fn score_for(&self, a: &PhoneId, b: &PhoneId) -> Option<&ContactScore> {
        let key = pair_key(a, b);
        self.scores.iter().find(|s| pair_key(&s.v, &s.u) == key)
    }

    pub fn is_suspected(&self, a: &PhoneId, b: &PhoneId) -> bool {
        let key = pair_key(a, b);
        self.suspicions
            .iter()
            .any(|s| s.pc_susp && pair_key(&s.v, &s.u) == key)
    }
}

/// A suspicion between two phones that are both considered infected,
/// with coordinates resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationRecord {
    pub v: PhoneId,
    pub u: PhoneId,
    pub region: Region,
    pub coord: BBox,
    pub median_contact: Minute,
    pub t_inf_v: Minute,
    pub t_inf_u: Minute,
    pub class: u8,
}

impl CepEngine<'_> {
    /// Finds and scores the contacts of each phone of interest.
    pub fn analyze(
        &self,
        stream: &PdrStream,
        pois: &[PhoneOfInterest],
    ) -> Result<Findings, CepError> {
        let mut out = Findings::default();
        for poi in pois {
            let suspicions = self.find_suspicions(stream, poi)?;
            let scores = self.score_suspicions(stream, &suspicions)?;
            out.merge(Findings {
                suspicions,
                scores,
                expanded: BTreeMap::from([(poi.phone.clone(), poi.t_inf_min)]),
            });
        }
        Ok(out)
    }

    /// Expands every scored contact at or above the completion class that
    /// has not been searched yet, using the lower median of its contact
    /// minutes as its infection estimate, until nothing new appears.
    /// Returns only what is new relative to `known`.
    pub fn complete_findings(
        &self,
        stream: &PdrStream,
        known: &Findings,
    ) -> Result<Findings, CepError> {
        self.check()?;
        let mut all = known.clone();
        let mut added = Findings::default();
        loop {
            let mut frontier: BTreeMap<PhoneId, Minute> = BTreeMap::new();
            for s in all.scores.iter().filter(|s| s.class >= self.params.completion_class) {
                let Some(t) = lower_median(&s.contact_minutes) else {
                    continue;
                };
                for p in [&s.v, &s.u] {
                    if !all.expanded.contains_key(p) {
                        let e = frontier.entry(p.clone()).or_insert(t);
                        *e = (*e).min(t);
                    }
                }
            }
            if frontier.is_empty() {
                break;
            }
            let pois: Vec<PhoneOfInterest> = frontier
                .into_iter()
                .map(|(phone, t_inf_min)| PhoneOfInterest { phone, t_inf_min })
                .collect();
            let mut fresh = self.analyze(stream, &pois)?;
            let pairs = all.pairs();
            fresh.suspicions.retain(|s| !pairs.contains(&pair_key(&s.v, &s.u)));
            let scored = all
                .scores
                .iter()
                .map(|s| pair_key(&s.v, &s.u))
                .collect::<BTreeSet<_>>();
            fresh.scores.retain(|s| !scored.contains(&pair_key(&s.v, &s.u)));
            all.merge(fresh.clone());
            added.merge(fresh);
        }
        Ok(added)
    }

    /// Builds contamination records for scored pairs whose phones are both
    /// in `infected`. Needs full disclosure rights.
    pub fn build_pccont(
        &self,
        scores: &[ContactScore],
        infected: &BTreeMap<PhoneId, Minute>,
    ) -> Result<Vec<ContaminationRecord>, CepError> {
        self.cap.require(Permission::Decrypt, &self.state)?;
        let mut out = Vec::new();
        for s in scores {
            let (Some(&t_inf_v), Some(&t_inf_u)) = (infected.get(&s.v), infected.get(&s.u)) else {
                continue;
            };
            let mut coord: Option<BBox> = None;
            for bs in &s.region.stations {
                let info = self
                    .registry
                    .resolve(&bs.code)
                    .ok_or(CepError::Unresolved(bs.code))?;
                let b = BBox::around(info.centroid, info.useful_range);
                coord = Some(coord.map_or(b, |c| c.union(&b)));
            }
            let no_evidence = || CepError::NoEvidence {
                v: s.v.clone(),
                u: s.u.clone(),
            };
            out.push(ContaminationRecord {
                v: s.v.clone(),
                u: s.u.clone(),
                region: s.region.clone(),
                coord: coord.ok_or_else(no_evidence)?,
                median_contact: lower_median(&s.contact_minutes).ok_or_else(no_evidence)?,
                t_inf_v,
                t_inf_u,
                class: s.class,
            });
        }
        Ok(out)
    }
}
