//! Contact-event processing over decrypted PDR streams: suspicions, scores,
//! completion, contamination records, the infection DAG and hotspots.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::federation::{Capability, FederationError, Permission, SystemState};
use crate::mobility::{ProviderRegistry, ScenarioConfig};
use crate::pdr::{BsCode, CodeToken, Minute, Pdr, PdrSet, PhoneId, Point2, PrecisionClass, ProxVector};

mod chain;
mod dag;
mod hotspot;
mod score;
mod suspicion;

pub use chain::{ContaminationRecord, Findings};
pub use dag::{build_dag, DagEdge, InfectionDag};
pub use hotspot::{hotspot_csv, hotspot_map, HotspotCell};
pub use score::{pc_scor, precision_factor, ContactScore, ScoreTerms};
pub use suspicion::{estimate_minute, MinuteEstimate};

#[derive(Debug, Error, PartialEq)]
pub enum CepError {
    #[error(transparent)]
    Unauthorized(#[from] FederationError),
    #[error("no qualifying window for suspicion {v} / {u}")]
    NoEvidence { v: PhoneId, u: PhoneId },
    #[error("station {0} cannot be resolved")]
    Unresolved(CodeToken),
    #[error("no infection estimate for {0}")]
    UnknownInfection(PhoneId),
    #[error("incubation bounds must satisfy 0 <= min <= max and max > 0")]
    InvalidIncubation,
    #[error("grid cell size must be positive")]
    InvalidGrid,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhoneOfInterest {
    pub phone: PhoneId,
    pub t_inf_min: Minute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepParams {
    pub prox_max: f64,
    pub dur_min: Minute,
    pub gap_tolerance: Minute,
    pub search_margin: Minute,
    pub t_incub_min: Minute,
    pub t_incub_max: Minute,
    pub completion_class: u8,
    pub density_saturation: f64,
    pub precision_dur: f64,
    pub severity_default: f64,
    pub venue_severity: BTreeMap<usize, f64>,
    pub hotspot_cell: f64,
}

impl CepParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let a = &cfg.analysis;
        Self {
            prox_max: cfg.thresholds.prox_max_m,
            dur_min: cfg.thresholds.dur_min_min,
            gap_tolerance: cfg.thresholds.gap_tolerance_min,
            search_margin: cfg.thresholds.search_margin_min,
            t_incub_min: cfg.incubation.t_incub_min,
            t_incub_max: cfg.incubation.t_incub_max,
            completion_class: a.completion_class,
            density_saturation: a.density_saturation,
            precision_dur: a.precision_dur,
            severity_default: a.severity_default,
            venue_severity: a.venue_severity.clone(),
            hotspot_cell: a.hotspot_cell_m,
        }
    }
}

impl Default for CepParams {
    fn default() -> Self {
        Self::from_config(&ScenarioConfig::default())
    }
}

/// One station's view of one phone in one minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub bs: BsCode,
    pub prox: ProxVector,
}

/// Decrypted records indexed minute -> phone -> readings (sorted by code).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PdrStream {
    minutes: BTreeMap<Minute, BTreeMap<PhoneId, Vec<Reading>>>,
    len: usize,
}

impl PdrStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = Pdr>) -> Self {
        let mut s = Self::new();
        for r in records {
            s.insert(r);
        }
        s
    }

    pub fn from_sets(sets: impl IntoIterator<Item = PdrSet>) -> Self {
        Self::from_records(sets.into_iter().flat_map(PdrSet::into_records))
    }

    /// Later duplicates for the same (minute, phone, station) replace earlier ones.
    pub fn insert(&mut self, r: Pdr) {
        let readings = self
            .minutes
            .entry(r.t_pdr)
            .or_default()
            .entry(r.phone)
            .or_default();
        let reading = Reading {
            bs: r.bs,
            prox: r.prox,
        };
        match readings.binary_search_by(|x| x.bs.code.cmp(&r.bs.code)) {
            Ok(i) => readings[i] = reading,
            Err(i) => {
                readings.insert(i, reading);
                self.len += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn minutes_from(
        &self,
        start: Minute,
    ) -> impl Iterator<Item = (&Minute, &BTreeMap<PhoneId, Vec<Reading>>)> {
        self.minutes.range(start..)
    }

    pub fn at(&self, minute: Minute) -> Option<&BTreeMap<PhoneId, Vec<Reading>>> {
        self.minutes.get(&minute)
    }

    pub fn readings(&self, minute: Minute, phone: &PhoneId) -> &[Reading] {
        self.minutes
            .get(&minute)
            .and_then(|m| m.get(phone))
            .map_or(&[], Vec::as_slice)
    }

    /// Flat copy in (minute, phone, code) order.
    pub fn records(&self) -> Vec<Pdr> {
        let mut out = Vec::with_capacity(self.len);
        for (&minute, phones) in &self.minutes {
            for (phone, readings) in phones {
                for r in readings {
                    out.push(Pdr {
                        bs: r.bs,
                        phone: phone.clone(),
                        prox: r.prox,
                        t_pdr: minute,
                    });
                }
            }
        }
        out
    }

    /// Mean number of distinct phones per minute seen by any of `stations`
    /// over `start..=end`.
    pub fn density(&self, stations: &BTreeSet<BsCode>, start: Minute, end: Minute) -> f64 {
        if end < start {
            return 0.0;
        }
        let total: usize = self
            .minutes
            .range(start..=end)
            .map(|(_, phones)| {
                phones
                    .values()
                    .filter(|rs| rs.iter().any(|r| stations.contains(&r.bs)))
                    .count()
            })
            .sum();
        total as f64 / (end - start + 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    pub fn around(c: Point2, r: f64) -> Self {
        Self {
            min: Point2::new(c.x - r, c.y - r),
            max: Point2::new(c.x + r, c.y + r),
        }
    }

    pub fn union(&self, o: &BBox) -> Self {
        Self {
            min: Point2::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: Point2::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            (self.min.x + self.max.x) / 2.0,
            (self.min.y + self.max.y) / 2.0,
        )
    }
}

/// Space-time region: a minute envelope plus the stations involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub start: Minute,
    pub end: Minute,
    pub stations: BTreeSet<BsCode>,
}

impl Region {
    pub fn merge(&self, o: &Region) -> Region {
        Region {
            start: self.start.min(o.start),
            end: self.end.max(o.end),
            stations: self.stations.union(&o.stations).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxSample {
    pub minute: Minute,
    pub prox: f64,
    pub class: PrecisionClass,
}

/// A run of qualifying minutes. `duration` is the inclusive span, so
/// tolerated gaps count towards it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactWindow {
    pub region: Region,
    pub series: Vec<ProxSample>,
    pub duration: Minute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSuspicion {
    pub v: PhoneId,
    pub u: PhoneId,
    pub windows: Vec<ContactWindow>,
    pub pc_susp: bool,
}

impl ContactSuspicion {
    /// Windows long enough to satisfy the duration condition.
    pub fn qualifying<'a>(&'a self, dur_min: Minute) -> impl Iterator<Item = &'a ContactWindow> {
        self.windows.iter().filter(move |w| w.duration >= dur_min)
    }
}

pub(crate) fn pair_key(a: &PhoneId, b: &PhoneId) -> (PhoneId, PhoneId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Lower median of a non-empty list.
pub fn lower_median(values: &[Minute]) -> Option<Minute> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.get(v.len().checked_sub(1)? / 2).copied()
}

/// Analysis operations bound to one capability and the state it was
/// checked against.
pub struct CepEngine<'a> {
    cap: &'a Capability,
    state: SystemState,
    registry: &'a ProviderRegistry,
    params: CepParams,
}

impl<'a> CepEngine<'a> {
    pub fn new(
        cap: &'a Capability,
        state: SystemState,
        registry: &'a ProviderRegistry,
        params: CepParams,
    ) -> Self {
        Self {
            cap,
            state,
            registry,
            params,
        }
    }

    pub fn params(&self) -> &CepParams {
        &self.params
    }

    fn check(&self) -> Result<(), CepError> {
        Ok(self.cap.require(Permission::ReadEncrypted, &self.state)?)
    }

    /// Registry access is only granted to classes that may resolve stations.
    fn resolver(&self) -> Option<&'a ProviderRegistry> {
        self.cap
            .require(Permission::ResolveRegistry, &self.state)
            .ok()
            .map(|_| self.registry)
    }
}

#[cfg(test)]
pub(crate) mod testutil;
#[cfg(test)]
mod tests;
