use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::federation::{OperationClass, QuorumPolicy};
use crate::pdr::{Minute, PrecisionClass};

use super::MobilityError;

/// Full scenario description. Every field has a default so a config file
/// only needs to list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_phones: usize,
    pub stations: StationCounts,
    pub n_providers: u16,
    pub n_venues: usize,
    pub world_size_m: f64,
    pub duration_min: Minute,
    pub home_country_code: String,
    pub foreign: ForeignPhones,
    pub mobility: MobilityParams,
    pub epidemic: EpidemicParams,
    pub thresholds: Thresholds,
    pub incubation: Incubation,
    pub pdr_ttl_factor: u64,
    pub noise: NoiseParams,
    pub ranges: UsefulRanges,
    pub federation: FederationParams,
    pub vault: VaultParams,
    pub analysis: AnalysisParams,
    /// Minute at which the first case is reported and the federation moves
    /// the system to Alert. `None` means the end of the scenario.
    pub first_case_minute: Option<Minute>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationCounts {
    pub macro_cells: usize,
    pub pico_cells: usize,
    pub femto_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForeignPhones {
    pub count: usize,
    pub country_code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityParams {
    /// Travel speed in meters per minute.
    pub speed_m_per_min: f64,
    pub min_stay_min: Minute,
    pub max_stay_min: Minute,
    /// Probability that the next destination is a venue rather than home.
    pub venue_probability: f64,
    /// Seats are drawn uniformly in a disc of this radius around a venue.
    pub seat_radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicParams {
    pub index_cases: usize,
    pub transmission_distance_m: f64,
    pub min_exposure_min: Minute,
    /// 1.0 gives deterministic transmission.
    pub transmission_probability: f64,
    /// Number of phones in the planted chain (including the index case).
    pub planted_chain_len: usize,
    pub meeting_duration_min: Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub prox_max_m: f64,
    pub dur_min_min: Minute,
    pub gap_tolerance_min: Minute,
    /// Extra look-back subtracted from `t_inf_min` when scanning.
    pub search_margin_min: Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Incubation {
    pub t_incub_min: Minute,
    pub t_incub_max: Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub enabled: bool,
    pub macro_sigma_m: f64,
    pub pico_sigma_m: f64,
    pub femto_sigma_m: f64,
    /// Hand the pipeline `t_infected - eps` instead of the exact instant.
    pub t_inf_estimation_error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsefulRanges {
    pub macro_m: f64,
    pub pico_m: f64,
    pub femto_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationParams {
    pub n: usize,
    pub f: usize,
    pub q_read: usize,
    pub q_push: usize,
    pub q_critical: usize,
    pub vote_window_min: Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaultParams {
    pub clouds: usize,
    pub k: usize,
    pub share_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Minimum risk class (1..=4) that triggers completion.
    pub completion_class: u8,
    pub hotspot_cell_m: f64,
    pub density_saturation: f64,
    pub precision_dur: f64,
    pub severity_default: f64,
    /// Severity per venue index.
    pub venue_severity: BTreeMap<usize, f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_phones: 50,
            stations: StationCounts::default(),
            n_providers: 2,
            n_venues: 3,
            world_size_m: 2000.0,
            duration_min: 1440,
            home_country_code: "352".into(),
            foreign: ForeignPhones::default(),
            mobility: MobilityParams::default(),
            epidemic: EpidemicParams::default(),
            thresholds: Thresholds::default(),
            incubation: Incubation::default(),
            pdr_ttl_factor: 2,
            noise: NoiseParams::default(),
            ranges: UsefulRanges::default(),
            federation: FederationParams::default(),
            vault: VaultParams::default(),
            analysis: AnalysisParams::default(),
            first_case_minute: None,
        }
    }
}

impl Default for StationCounts {
    fn default() -> Self {
        Self {
            macro_cells: 1,
            pico_cells: 2,
            femto_cells: 3,
        }
    }
}

impl Default for ForeignPhones {
    fn default() -> Self {
        Self {
            count: 0,
            country_code: "49".into(),
        }
    }
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            speed_m_per_min: 80.0,
            min_stay_min: 30,
            max_stay_min: 180,
            venue_probability: 0.6,
            seat_radius_m: 3.0,
        }
    }
}

impl Default for EpidemicParams {
    fn default() -> Self {
        Self {
            index_cases: 1,
            transmission_distance_m: 2.0,
            min_exposure_min: 15,
            transmission_probability: 1.0,
            planted_chain_len: 5,
            meeting_duration_min: 60,
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            prox_max_m: 2.0,
            dur_min_min: 15,
            gap_tolerance_min: 2,
            search_margin_min: 0,
        }
    }
}

impl Default for Incubation {
    fn default() -> Self {
        Self {
            t_incub_min: 120,
            t_incub_max: 720,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            enabled: true,
            macro_sigma_m: 150.0,
            pico_sigma_m: 10.0,
            femto_sigma_m: 1.0,
            t_inf_estimation_error: true,
        }
    }
}

impl Default for UsefulRanges {
    fn default() -> Self {
        Self {
            macro_m: 3000.0,
            pico_m: 40.0,
            femto_m: 5.0,
        }
    }
}

impl Default for FederationParams {
    fn default() -> Self {
        Self {
            n: 7,
            f: 2,
            q_read: 3,
            q_push: 3,
            q_critical: 5,
            vote_window_min: 60,
        }
    }
}

impl Default for VaultParams {
    fn default() -> Self {
        Self {
            clouds: 4,
            k: 2,
            share_threshold: 3,
        }
    }
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            completion_class: 3,
            hotspot_cell_m: 50.0,
            density_saturation: 10.0,
            precision_dur: 0.5,
            severity_default: 0.5,
            venue_severity: BTreeMap::new(),
        }
    }
}

impl NoiseParams {
    pub fn sigma(&self, class: PrecisionClass) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        match class {
            PrecisionClass::Macro => self.macro_sigma_m,
            PrecisionClass::Pico => self.pico_sigma_m,
            PrecisionClass::Femto => self.femto_sigma_m,
        }
    }
}

impl UsefulRanges {
    pub fn range(&self, class: PrecisionClass) -> f64 {
        match class {
            PrecisionClass::Macro => self.macro_m,
            PrecisionClass::Pico => self.pico_m,
            PrecisionClass::Femto => self.femto_m,
        }
    }
}

impl FederationParams {
    pub fn policy(&self) -> QuorumPolicy {
        let mut quorum = BTreeMap::new();
        quorum.insert(OperationClass::LockUnlock, self.q_critical);
        quorum.insert(OperationClass::FullProcessing, self.q_critical);
        quorum.insert(OperationClass::StrictPush, self.q_push);
        quorum.insert(OperationClass::BlindAnalysis, self.q_read);
        quorum.insert(OperationClass::BlindProcessing, self.q_read);
        QuorumPolicy {
            n: self.n,
            f: self.f,
            quorum,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, MobilityError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| MobilityError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MobilityError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MobilityError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn pdr_ttl(&self) -> Minute {
        self.pdr_ttl_factor * self.incubation.t_incub_max
    }

    pub fn total_stations(&self) -> usize {
        self.stations.macro_cells + self.stations.pico_cells + self.stations.femto_cells
    }

    pub fn validate(&self) -> Result<(), MobilityError> {
        let bad = |msg: String| Err(MobilityError::Config(msg));
        if self.n_phones == 0 {
            return bad("n_phones must be >= 1".into());
        }
        if self.total_stations() == 0 {
            return bad("at least one station is required".into());
        }
        if self.n_providers == 0 {
            return bad("n_providers must be >= 1".into());
        }
        if self.n_venues == 0 {
            return bad("n_venues must be >= 1".into());
        }
        if self.duration_min == 0 {
            return bad("duration_min must be >= 1".into());
        }
        if !(self.world_size_m > 0.0) {
            return bad("world_size_m must be > 0".into());
        }
        if self.foreign.count > self.n_phones {
            return bad("foreign.count exceeds n_phones".into());
        }
        for code in [&self.home_country_code, &self.foreign.country_code] {
            if code.is_empty() || !code.bytes().all(|b| b.is_ascii_digit()) {
                return bad(format!("country code must be digits: {code:?}"));
            }
        }
        if self.home_country_code == self.foreign.country_code {
            return bad("foreign country code must differ from home".into());
        }
        let e = &self.epidemic;
        if e.index_cases == 0 || e.index_cases > self.n_phones {
            return bad("epidemic.index_cases must be in 1..=n_phones".into());
        }
        if !(e.transmission_distance_m > 0.0) {
            return bad("epidemic.transmission_distance_m must be > 0".into());
        }
        if e.transmission_distance_m > self.world_size_m {
            return bad(format!(
                "transmission distance {} m exceeds world size {} m",
                e.transmission_distance_m, self.world_size_m
            ));
        }
        if e.min_exposure_min == 0 {
            return bad("epidemic.min_exposure_min must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&e.transmission_probability) {
            return bad("epidemic.transmission_probability must be in [0, 1]".into());
        }
        if e.meeting_duration_min < e.min_exposure_min {
            return bad("meeting_duration_min must cover min_exposure_min".into());
        }
        let t = &self.thresholds;
        if !(t.prox_max_m > 0.0) {
            return bad("thresholds.prox_max_m must be > 0".into());
        }
        if t.dur_min_min == 0 {
            return bad("thresholds.dur_min_min must be >= 1".into());
        }
        if self.incubation.t_incub_min > self.incubation.t_incub_max {
            return bad("incubation.t_incub_min must be <= t_incub_max".into());
        }
        if self.pdr_ttl_factor == 0 {
            return bad("pdr_ttl_factor must be >= 1".into());
        }
        let m = &self.mobility;
        if !(m.speed_m_per_min > 0.0) || m.min_stay_min == 0 || m.min_stay_min > m.max_stay_min
        {
            return bad("mobility parameters out of range".into());
        }
        if !(0.0..=1.0).contains(&m.venue_probability) || m.seat_radius_m < 0.0 {
            return bad("mobility parameters out of range".into());
        }
        for c in PrecisionClass::ALL {
            if !(self.ranges.range(c) > 0.0) || self.noise.sigma(c) < 0.0 {
                return bad(format!("range/noise for {c:?} out of range"));
            }
        }
        self.federation
            .policy()
            .validate()
            .map_err(|e| MobilityError::Config(e.to_string()))?;
        if self.federation.vote_window_min == 0 {
            return bad("federation.vote_window_min must be >= 1".into());
        }
        let v = &self.vault;
        if v.k == 0 || v.k > v.clouds || v.share_threshold == 0 || v.share_threshold > v.clouds
        {
            return bad("vault parameters need 1 <= k, share_threshold <= clouds".into());
        }
        if v.clouds > 255 {
            return bad("at most 255 vault clouds".into());
        }
        let a = &self.analysis;
        if !(1..=4).contains(&a.completion_class) {
            return bad("analysis.completion_class must be 1..=4".into());
        }
        if !(a.hotspot_cell_m > 0.0) || !(a.density_saturation > 0.0) {
            return bad("analysis grid and saturation must be > 0".into());
        }
        if let Some(m) = self.first_case_minute {
            if m > self.duration_min {
                return bad("first_case_minute beyond scenario duration".into());
            }
        }
        Ok(())
    }
}
