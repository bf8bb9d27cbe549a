use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{derive_rng, random_bytes, Digest};
use crate::pdr::{
    make_pdr, BsCode, CodeToken, Minute, Pdr, PhoneId, Point2, PrecisionClass, ProxVector,
};

use super::{MobilityError, NoiseParams, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProviderId(pub u16);

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "provider-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub code: BsCode,
    pub provider: ProviderId,
    pub centroid: Point2,
    pub useful_range: f64,
    /// Venue the station was installed for, if any.
    pub venue: Option<usize>,
}

/// The providers' own station book. This is the only place where a station
/// token maps to coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderRegistry {
    stations: BTreeMap<CodeToken, StationInfo>,
    providers: BTreeMap<ProviderId, Vec<BsCode>>,
}

impl ProviderRegistry {
    pub fn insert(&mut self, info: StationInfo) {
        self.providers
            .entry(info.provider)
            .or_default()
            .push(info.code);
        self.stations.insert(info.code.code, info);
    }

    pub fn resolve(&self, code: &CodeToken) -> Option<&StationInfo> {
        self.stations.get(code)
    }

    pub fn stations(&self) -> impl Iterator<Item = &StationInfo> {
        self.stations.values()
    }

    pub fn providers(&self) -> impl Iterator<Item = (&ProviderId, &Vec<BsCode>)> {
        self.providers.iter()
    }

    pub fn provider_of(&self, code: &CodeToken) -> Option<ProviderId> {
        self.stations.get(code).map(|s| s.provider)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    pub phone: PhoneId,
    /// Strictly increasing in minute; positions are linear in between.
    pub waypoints: Vec<(Minute, Point2)>,
}

impl MobilityTrace {
    pub fn position_at(&self, minute: Minute) -> Point2 {
        let w = &self.waypoints;
        let idx = w.partition_point(|(m, _)| *m <= minute);
        if idx == 0 {
            return w[0].1;
        }
        if idx == w.len() {
            return w[idx - 1].1;
        }
        let (m0, p0) = w[idx - 1];
        let (m1, p1) = w[idx];
        let t = (minute - m0) as f64 / (m1 - m0) as f64;
        Point2::new(p0.x + (p1.x - p0.x) * t, p0.y + (p1.y - p0.y) * t)
    }

    pub fn is_well_formed(&self) -> bool {
        !self.waypoints.is_empty() && self.waypoints.windows(2).all(|w| w[0].0 < w[1].0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infection {
    pub t_infected: Minute,
    pub infected_by: Option<usize>,
    pub t_contact: Minute,
}

/// Planted epidemic. Phones are referenced by their index in
/// `World::traces`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub phones: Vec<PhoneId>,
    pub infections: BTreeMap<usize, Infection>,
    pub t_incub_min: Minute,
    pub t_incub_max: Minute,
    /// Earliest-infection estimate handed to the analysis.
    pub t_inf_min_estimate: BTreeMap<usize, Minute>,
    pub planted_chain: Vec<usize>,
    pub min_exposure_min: Minute,
    pub transmission_distance_m: f64,
}

impl GroundTruth {
    pub fn infection_of(&self, phone: &PhoneId) -> Option<&Infection> {
        let idx = self.phones.iter().position(|p| p == phone)?;
        self.infections.get(&idx)
    }

    /// `(infector, infectee, minute)` for every non-index infection.
    pub fn transmissions(&self) -> Vec<(usize, usize, Minute)> {
        self.infections
            .iter()
            .filter_map(|(&b, inf)| inf.infected_by.map(|a| (a, b, inf.t_infected)))
            .collect()
    }

    /// Number of phones on the longest infector chain.
    pub fn longest_chain(&self) -> Vec<usize> {
        let mut best: Vec<usize> = Vec::new();
        for &leaf in self.infections.keys() {
            let mut chain = vec![leaf];
            let mut cur = leaf;
            while let Some(a) = self.infections[&cur].infected_by {
                chain.push(a);
                cur = a;
            }
            chain.reverse();
            if chain.len() > best.len() {
                best = chain;
            }
        }
        best
    }

    pub fn estimate_for(&self, phone: &PhoneId) -> Option<Minute> {
        let idx = self.phones.iter().position(|p| p == phone)?;
        self.t_inf_min_estimate.get(&idx).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub registry: ProviderRegistry,
    pub traces: Vec<MobilityTrace>,
    pub truth: GroundTruth,
    pub venues: Vec<Point2>,
    pub noise: NoiseParams,
    pub seed: u64,
}

impl World {
    pub fn observe(&self, minute: Minute) -> Vec<Pdr> {
        observe(&self.registry, &self.traces, minute, &self.noise, self.seed)
    }

    pub fn phone(&self, idx: usize) -> &PhoneId {
        &self.traces[idx].phone
    }

    pub fn index_of(&self, phone: &PhoneId) -> Option<usize> {
        self.traces.iter().position(|t| &t.phone == phone)
    }

    /// Waypoints as CSV `minute,phone_nr,x,y`.
    pub fn write_traces_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "minute,phone_nr,x,y")?;
        for t in &self.traces {
            for (m, p) in &t.waypoints {
                writeln!(out, "{m},{},{:.3},{:.3}", t.phone.nr(), p.x, p.y)?;
            }
        }
        Ok(())
    }
}

fn uniform_in_disc(rng: &mut ChaCha20Rng, center: Point2, radius: f64) -> Point2 {
    let r = radius * rng.gen::<f64>().sqrt();
    let a = rng.gen::<f64>() * TAU;
    Point2::new(center.x + r * a.cos(), center.y + r * a.sin())
}

fn luhn_digit(digits: &str) -> u8 {
    let sum: u32 = digits
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, b)| {
            let d = u32::from(b - b'0');
            if i % 2 == 0 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    ((10 - sum % 10) % 10) as u8
}

fn make_phones(cfg: &ScenarioConfig, rng: &mut ChaCha20Rng) -> Vec<PhoneId> {
    let mut seen = BTreeSet::new();
    let mut phones = Vec::with_capacity(cfg.n_phones);
    let first_foreign = cfg.n_phones - cfg.foreign.count;
    while phones.len() < cfg.n_phones {
        let cc = if phones.len() >= first_foreign {
            &cfg.foreign.country_code
        } else {
            &cfg.home_country_code
        };
        let nr = format!("{cc}{:08}", rng.gen_range(0..100_000_000u32));
        if !seen.insert(nr.clone()) {
            continue;
        }
        let body = format!("35{:012}", rng.gen_range(0..1_000_000_000_000u64));
        let imei = format!("{body}{}", luhn_digit(&body));
        phones.push(PhoneId::new(nr, imei).expect("generated ids are valid"));
    }
    phones
}

fn travel_time(from: Point2, to: Point2, speed: f64) -> Minute {
    ((from.distance(&to) / speed).ceil() as Minute).max(1)
}

/// A fixed engagement: be at `place` from `start` through `end`.
#[derive(Debug, Clone, Copy)]
struct Appointment {
    place: Point2,
    start: Minute,
    end: Minute,
}

/// Builds a trace that waits at home between appointments, going home only
/// when there is time for the round trip.
fn itinerary(home: Point2, appts: &[Appointment], speed: f64) -> Vec<(Minute, Point2)> {
    let mut w: Vec<(Minute, Point2)> = vec![(0, home)];
    let mut here = home;
    let mut free: Minute = 0;
    for a in appts {
        if here != home {
            let back = travel_time(here, home, speed);
            let out = travel_time(home, a.place, speed);
            if free + back + out < a.start {
                free += back;
                push_wp(&mut w, free, home);
                here = home;
            }
        }
        let go = travel_time(here, a.place, speed);
        let depart = a.start.saturating_sub(go).max(free);
        let arrive = depart + go;
        push_wp(&mut w, depart, here);
        push_wp(&mut w, arrive, a.place);
        push_wp(&mut w, a.end, a.place);
        here = a.place;
        free = a.end.max(arrive);
    }
    if here != home {
        push_wp(&mut w, free + travel_time(here, home, speed), home);
    }
    w
}

fn push_wp(w: &mut Vec<(Minute, Point2)>, minute: Minute, p: Point2) {
    match w.last_mut() {
        Some(last) if last.0 == minute => last.1 = p,
        Some(last) if last.0 > minute => {}
        _ => w.push((minute, p)),
    }
}

fn background_itinerary(
    cfg: &ScenarioConfig,
    home: Point2,
    venues: &[Point2],
    rng: &mut ChaCha20Rng,
) -> Vec<(Minute, Point2)> {
    let m = &cfg.mobility;
    let mut w = vec![(0, home)];
    let mut here = home;
    let mut t: Minute = 0;
    loop {
        t += rng.gen_range(m.min_stay_min..=m.max_stay_min);
        if t >= cfg.duration_min {
            break;
        }
        let to_venue = here == home || rng.gen::<f64>() < m.venue_probability;
        let next = if to_venue {
            let v = venues[rng.gen_range(0..venues.len())];
            uniform_in_disc(rng, v, m.seat_radius_m)
        } else {
            home
        };
        w.push((t, here));
        t += travel_time(here, next, m.speed_m_per_min);
        w.push((t, next));
        here = next;
    }
    w
}

/// Generates stations, traces and the planted epidemic from `cfg`.
pub fn generate_world(cfg: &ScenarioConfig) -> Result<World, MobilityError> {
    cfg.validate()?;
    let size = cfg.world_size_m;
    let mut layout_rng = derive_rng(cfg.seed, "layout");

    let venues: Vec<Point2> = (0..cfg.n_venues)
        .map(|_| {
            Point2::new(
                layout_rng.gen_range(0.1 * size..=0.9 * size),
                layout_rng.gen_range(0.1 * size..=0.9 * size),
            )
        })
        .collect();

    let registry_key: [u8; 32] = random_bytes(&mut layout_rng);
    let mut registry = ProviderRegistry::default();
    let mut index: u32 = 0;
    let mut add = |registry: &mut ProviderRegistry, class, centroid, venue| {
        let provider = ProviderId(1 + (index % u32::from(cfg.n_providers)) as u16);
        registry.insert(StationInfo {
            code: BsCode::derive(&registry_key, provider.0, index, class),
            provider,
            centroid,
            useful_range: cfg.ranges.range(class),
            venue,
        });
        index += 1;
    };
    for j in 0..cfg.stations.macro_cells {
        let c = if j == 0 {
            Point2::new(size / 2.0, size / 2.0)
        } else {
            Point2::new(layout_rng.gen_range(0.0..=size), layout_rng.gen_range(0.0..=size))
        };
        add(&mut registry, PrecisionClass::Macro, c, None);
    }
    for j in 0..cfg.stations.pico_cells {
        let v = j % venues.len();
        let c = uniform_in_disc(&mut layout_rng, venues[v], 10.0);
        add(&mut registry, PrecisionClass::Pico, c, Some(v));
    }
    for j in 0..cfg.stations.femto_cells {
        let v = j % venues.len();
        add(&mut registry, PrecisionClass::Femto, venues[v], Some(v));
    }

    let mut people_rng = derive_rng(cfg.seed, "people");
    let phones = make_phones(cfg, &mut people_rng);
    let homes: Vec<Point2> = (0..cfg.n_phones)
        .map(|_| Point2::new(people_rng.gen_range(0.0..=size), people_rng.gen_range(0.0..=size)))
        .collect();

    let chain = plan_chain(cfg, &venues, &homes, &mut people_rng);
    let mut traces: Vec<MobilityTrace> = Vec::with_capacity(cfg.n_phones);
    let mut move_rng = derive_rng(cfg.seed, "mobility");
    for (i, phone) in phones.iter().enumerate() {
        let waypoints = match chain.appointments.get(&i) {
            Some(appts) => itinerary(homes[i], appts, cfg.mobility.speed_m_per_min),
            None => background_itinerary(cfg, homes[i], &venues, &mut move_rng),
        };
        traces.push(MobilityTrace {
            phone: phone.clone(),
            waypoints,
        });
    }
    debug_assert!(traces.iter().all(MobilityTrace::is_well_formed));

    let mut index_cases: Vec<usize> = chain.members.first().copied().into_iter().collect();
    let mut pick_rng = derive_rng(cfg.seed, "index-cases");
    let mut others: Vec<usize> = (0..cfg.n_phones)
        .filter(|i| !chain.members.contains(i))
        .collect();
    others.shuffle(&mut pick_rng);
    index_cases.extend(others.into_iter().take(cfg.epidemic.index_cases - index_cases.len()));

    let truth = spread(cfg, &phones, &traces, &index_cases, chain.members);
    Ok(World {
        registry,
        traces,
        truth,
        venues,
        noise: cfg.noise,
        seed: cfg.seed,
    })
}

struct ChainPlan {
    members: Vec<usize>,
    appointments: BTreeMap<usize, Vec<Appointment>>,
}

/// Schedules pairwise meetings at a shared seat so that member `i` infects
/// member `i + 1` once it has become infectious.
fn plan_chain(
    cfg: &ScenarioConfig,
    venues: &[Point2],
    homes: &[Point2],
    rng: &mut ChaCha20Rng,
) -> ChainPlan {
    let e = &cfg.epidemic;
    let want = e.planted_chain_len.min(cfg.n_phones);
    let mut members: Vec<usize> = (0..want).collect();
    if cfg.foreign.count > 0 && want >= 2 {
        members[1] = cfg.n_phones - cfg.foreign.count;
    }
    let meeting_venues: Vec<usize> = {
        let femto = cfg.stations.femto_cells.min(venues.len());
        if femto > 0 {
            (0..femto).collect()
        } else {
            (0..venues.len()).collect()
        }
    };
    let speed = cfg.mobility.speed_m_per_min;
    let latency = cfg.incubation.t_incub_min;
    let mut appointments: BTreeMap<usize, Vec<Appointment>> = BTreeMap::new();
    let mut kept = members.first().copied().into_iter().collect::<Vec<_>>();
    let mut start = latency + 30;
    for (i, pair) in members.windows(2).enumerate() {
        let venue = venues[meeting_venues[i % meeting_venues.len()]];
        let seat = uniform_in_disc(rng, venue, cfg.mobility.seat_radius_m);
        let end = start + e.meeting_duration_min;
        let back = pair
            .iter()
            .map(|&p| travel_time(seat, homes[p], speed))
            .max()
            .unwrap_or(1);
        let reach = pair
            .iter()
            .map(|&p| travel_time(homes[p], seat, speed))
            .max()
            .unwrap_or(1);
        if start < reach || end + back >= cfg.duration_min {
            break;
        }
        for &p in pair {
            appointments.entry(p).or_default().push(Appointment {
                place: seat,
                start,
                end,
            });
        }
        kept.push(pair[1]);
        start += (e.min_exposure_min - 1) + latency + 30;
    }
    if kept.len() < 2 {
        appointments.clear();
        kept.truncate(1);
    }
    ChainPlan {
        members: kept,
        appointments,
    }
}

/// Minute-by-minute replay: an infectious phone infects a susceptible one
/// after `min_exposure_min` consecutive minutes within the transmission
/// distance. Phones become infectious `t_incub_min` after infection.
fn spread(
    cfg: &ScenarioConfig,
    phones: &[PhoneId],
    traces: &[MobilityTrace],
    index_cases: &[usize],
    planted_chain: Vec<usize>,
) -> GroundTruth {
    let n = phones.len();
    let e = &cfg.epidemic;
    let latency = cfg.incubation.t_incub_min;
    let mut infections: BTreeMap<usize, Infection> = index_cases
        .iter()
        .map(|&i| {
            (
                i,
                Infection {
                    t_infected: 0,
                    infected_by: None,
                    t_contact: 0,
                },
            )
        })
        .collect();
    let mut exposure = vec![0 as Minute; n * n];
    let mut roll_rng = derive_rng(cfg.seed, "transmission");
    let mut positions = vec![Point2::default(); n];
    for minute in 0..cfg.duration_min {
        for (p, t) in positions.iter_mut().zip(traces) {
            *p = t.position_at(minute);
        }
        let infectious: Vec<usize> = infections
            .iter()
            .filter(|(_, inf)| inf.t_infected + latency <= minute)
            .map(|(&i, _)| i)
            .collect();
        let mut candidates: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &a in &infectious {
            for b in 0..n {
                if infections.contains_key(&b) {
                    continue;
                }
                let slot = &mut exposure[a * n + b];
                if positions[a].distance(&positions[b]) <= e.transmission_distance_m {
                    *slot += 1;
                    if *slot >= e.min_exposure_min {
                        candidates.entry(b).or_default().push(a);
                    }
                } else {
                    *slot = 0;
                }
            }
        }
        for (b, mut by) in candidates {
            by.sort_by(|x, y| phones[*x].cmp(&phones[*y]));
            let infector = if e.transmission_probability >= 1.0 {
                by.first().copied()
            } else {
                by.into_iter()
                    .find(|_| roll_rng.gen::<f64>() < e.transmission_probability)
            };
            if let Some(a) = infector {
                infections.insert(
                    b,
                    Infection {
                        t_infected: minute,
                        infected_by: Some(a),
                        t_contact: minute,
                    },
                );
            }
        }
    }

    let mut est_rng = derive_rng(cfg.seed, "t-inf-estimate");
    let t_inf_min_estimate = infections
        .iter()
        .map(|(&i, inf)| {
            let eps = if cfg.noise.t_inf_estimation_error {
                est_rng.gen_range(0..=latency / 2)
            } else {
                0
            };
            (i, inf.t_infected.saturating_sub(eps))
        })
        .collect();

    GroundTruth {
        phones: phones.to_vec(),
        infections,
        t_incub_min: cfg.incubation.t_incub_min,
        t_incub_max: cfg.incubation.t_incub_max,
        t_inf_min_estimate,
        planted_chain,
        min_exposure_min: e.min_exposure_min,
        transmission_distance_m: e.transmission_distance_m,
    }
}

/// Standard normal sample derived from a hash, so that every
/// (minute, station, phone) measurement has its own independent noise.
fn hashed_normal(seed: u64, minute: Minute, code: &CodeToken, phone: &PhoneId) -> f64 {
    let d = Digest::of_parts(&[
        b"epitrace/noise/v1",
        &seed.to_be_bytes(),
        &minute.to_be_bytes(),
        code.as_bytes(),
        phone.nr().as_bytes(),
        b"/",
        phone.imei().as_bytes(),
    ]);
    let word = |i: usize| u64::from_be_bytes(d.0[i..i + 8].try_into().expect("8 bytes"));
    let u1 = ((word(0) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (word(8) >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// One PDR per (station, phone) with the phone inside the station's useful
/// range. Radial measurement noise has standard deviation
/// `noise.sigma(class)`; the azimuth is exact.
pub fn observe(
    registry: &ProviderRegistry,
    traces: &[MobilityTrace],
    minute: Minute,
    noise: &NoiseParams,
    seed: u64,
) -> Vec<Pdr> {
    let positions: Vec<Point2> = traces.iter().map(|t| t.position_at(minute)).collect();
    let mut out = Vec::new();
    for station in registry.stations() {
        let sigma = noise.sigma(station.code.precision_class);
        for (trace, pos) in traces.iter().zip(&positions) {
            if station.centroid.distance(pos) > station.useful_range {
                continue;
            }
            let (dx, dy) = (pos.x - station.centroid.x, pos.y - station.centroid.y);
            let mut prox = ProxVector::from_offset(dx, dy);
            if sigma > 0.0 {
                let n = hashed_normal(seed, minute, &station.code.code, &trace.phone);
                let r = (prox.radius() + sigma * n).abs();
                prox = ProxVector::new(r, prox.azimuth()).expect("finite radius");
            }
            out.push(make_pdr(station.code, trace.phone.clone(), prox, minute));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, phones: usize) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            n_phones: phones,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(&cfg(3, 30)).unwrap();
        let b = generate_world(&cfg(3, 30)).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = generate_world(&cfg(4, 30)).unwrap();
        assert_ne!(a.traces, c.traces);
    }

    #[test]
    fn traces_are_well_formed() {
        let w = generate_world(&cfg(11, 40)).unwrap();
        assert!(w.traces.iter().all(MobilityTrace::is_well_formed));
    }

    #[test]
    fn luhn_check_digit() {
        // 49015420323751 + check digit 8 is a textbook IMEI.
        assert_eq!(luhn_digit("49015420323751"), 8);
    }

    #[test]
    fn interpolation_between_waypoints() {
        let t = MobilityTrace {
            phone: PhoneId::new("1", "123456789012345").unwrap(),
            waypoints: vec![(10, Point2::new(0.0, 0.0)), (20, Point2::new(10.0, 0.0))],
        };
        assert_eq!(t.position_at(0), Point2::new(0.0, 0.0));
        assert_eq!(t.position_at(15), Point2::new(5.0, 0.0));
        assert_eq!(t.position_at(99), Point2::new(10.0, 0.0));
    }

    #[test]
    fn infeasible_transmission_distance_rejected() {
        let mut c = cfg(1, 10);
        c.epidemic.transmission_distance_m = 5000.0;
        assert!(matches!(generate_world(&c), Err(MobilityError::Config(_))));
    }

    fn single_station_registry(class: PrecisionClass, centroid: Point2, range: f64) -> ProviderRegistry {
        let mut r = ProviderRegistry::default();
        r.insert(StationInfo {
            code: BsCode::derive(&[1; 32], 1, 0, class),
            provider: ProviderId(1),
            centroid,
            useful_range: range,
            venue: None,
        });
        r
    }

    fn still(phone: u32, p: Point2) -> MobilityTrace {
        MobilityTrace {
            phone: PhoneId::new(format!("352{phone}"), "123456789012345").unwrap(),
            waypoints: vec![(0, p)],
        }
    }

    #[test]
    fn observe_at_centroid_without_noise() {
        let c = Point2::new(100.0, 100.0);
        let reg = single_station_registry(PrecisionClass::Femto, c, 5.0);
        let noise = NoiseParams {
            enabled: false,
            ..NoiseParams::default()
        };
        let pdrs = observe(&reg, &[still(1, c)], 7, &noise, 0);
        assert_eq!(pdrs.len(), 1);
        assert_eq!(pdrs[0].prox.radius(), 0.0);
        assert_eq!(pdrs[0].t_pdr, 7);

        let far = observe(&reg, &[still(1, Point2::new(0.0, 0.0))], 7, &noise, 0);
        assert!(far.is_empty());
    }

    #[test]
    fn overlapping_stations_each_report() {
        let mut reg = ProviderRegistry::default();
        for (i, c) in [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)].into_iter().enumerate() {
            reg.insert(StationInfo {
                code: BsCode::derive(&[1; 32], 1, i as u32, PrecisionClass::Pico),
                provider: ProviderId(1),
                centroid: Point2::new(c.0, c.1),
                useful_range: 40.0,
                venue: None,
            });
        }
        let pdrs = observe(&reg, &[still(1, Point2::new(3.0, 4.0))], 0, &NoiseParams::default(), 1);
        assert_eq!(pdrs.len(), 3);
    }

    #[test]
    fn hashed_noise_is_roughly_standard_normal() {
        let phone = PhoneId::new("1", "123456789012345").unwrap();
        let code = CodeToken::parse("0011223344556677").unwrap();
        let xs: Vec<f64> = (0..20_000).map(|m| hashed_normal(9, m, &code, &phone)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
