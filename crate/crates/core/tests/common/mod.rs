#![allow(dead_code)]

use std::collections::BTreeMap;

use epitrace::cep::{ContactSuspicion, PhoneOfInterest};
use epitrace::federation::{
    AuthorityId, Capability, Federation, MinuteRange, OperationClass, Payload, QuorumCertificate,
    StateListener, SystemStateKind,
};
use epitrace::mobility::{ProviderRegistry, ScenarioConfig, World};
use epitrace::pdr::{Minute, Pdr, PhoneId, Point2, PrecisionClass};

/// A federation already in ALERT, with every authority honest.
pub fn alert_federation(cfg: &ScenarioConfig) -> Federation {
    alert_federation_with(cfg, &mut [])
}

/// As `alert_federation`, notifying `listeners` of the transition.
pub fn alert_federation_with(cfg: &ScenarioConfig, listeners: &mut [&mut dyn StateListener]) -> Federation {
    let fp = &cfg.federation;
    let mut fed = Federation::new("acceptance", fp.policy(), fp.vote_window_min, cfg.seed).unwrap();
    let cert = certify(
        &mut fed,
        OperationClass::LockUnlock,
        Payload::StateChange {
            target: SystemStateKind::Alert,
        },
    );
    fed.change_state(&cert, SystemStateKind::Alert, 0, listeners).unwrap();
    fed
}

pub fn certify(fed: &mut Federation, class: OperationClass, payload: Payload) -> QuorumCertificate {
    let all: Vec<AuthorityId> = fed.authorities().iter().map(|a| a.id()).collect();
    let id = fed.request(all[0], class, payload, 0).unwrap();
    fed.collect(id, &all, 0).unwrap()
}

pub fn capability(fed: &mut Federation, class: OperationClass, scope: MinuteRange) -> Capability {
    let payload = match class {
        OperationClass::StrictPush => Payload::Push { scope },
        OperationClass::FullProcessing => Payload::Disclosure {
            scope,
            subjects: vec![],
            key_ids: vec![],
        },
        _ => Payload::Analysis {
            scope,
            subjects: vec![],
        },
    };
    let cert = certify(fed, class, payload);
    fed.authorize_mode(&cert, class, 0).unwrap()
}

pub fn all_records(world: &World, end: Minute) -> Vec<Pdr> {
    (0..end).flat_map(|m| world.observe(m)).collect()
}

pub fn pois(world: &World) -> Vec<PhoneOfInterest> {
    let mut out: Vec<_> = world
        .truth
        .t_inf_min_estimate
        .iter()
        .map(|(&i, &t)| PhoneOfInterest {
            phone: world.phone(i).clone(),
            t_inf_min: t,
        })
        .collect();
    out.sort();
    out
}

/// Minute, distance and precision rank of one qualifying sample.
pub type Sample = (Minute, f64, u8);

/// Window as (start, end, duration, samples).
pub type Window = (Minute, Minute, Minute, Vec<Sample>);

fn rank(c: PrecisionClass) -> u8 {
    match c {
        PrecisionClass::Macro => 0,
        PrecisionClass::Pico => 1,
        PrecisionClass::Femto => 2,
    }
}

fn cartesian(r: &Pdr) -> (f64, f64) {
    let (rad, az) = (r.prox.radius(), r.prox.azimuth());
    (rad * az.cos(), rad * az.sin())
}

/// Brute-force distance for one minute: every reading of `a` against every
/// reading of `b`, keeping the best precision rank and averaging it.
fn pair_distance(ra: &[&Pdr], rb: &[&Pdr], registry: Option<&ProviderRegistry>) -> Option<(f64, u8)> {
    let mut by_rank: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for a in ra {
        for b in rb {
            let (ax, ay) = cartesian(a);
            let (bx, by) = cartesian(b);
            if a.bs == b.bs {
                let d = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
                by_rank.entry(rank(a.bs.precision_class)).or_default().push(d);
                continue;
            }
            let Some(reg) = registry else { continue };
            let (Some(sa), Some(sb)) = (reg.resolve(&a.bs.code), reg.resolve(&b.bs.code)) else {
                continue;
            };
            let gap = sa.centroid.distance(&sb.centroid);
            if gap > sa.useful_range + sb.useful_range {
                continue;
            }
            let pa = Point2::new(sa.centroid.x + ax, sa.centroid.y + ay);
            let pb = Point2::new(sb.centroid.x + bx, sb.centroid.y + by);
            let r = rank(a.bs.precision_class).min(rank(b.bs.precision_class));
            by_rank.entry(r).or_default().push(pa.distance(&pb));
        }
    }
    let (r, ds) = by_rank.into_iter().next_back()?;
    Some((ds.iter().sum::<f64>() / ds.len() as f64, r))
}

/// Independent pairwise scanner: for each phone co-present with `poi` from
/// `t_inf_min - margin` on, lists qualifying minutes and splits them into
/// windows wherever the gap exceeds `gap_tolerance + 1`.
pub fn oracle_scan(
    records: &[Pdr],
    poi: &PhoneOfInterest,
    registry: Option<&ProviderRegistry>,
    prox_max: f64,
    gap_tolerance: Minute,
    margin: Minute,
) -> BTreeMap<PhoneId, Vec<Window>> {
    let start = poi.t_inf_min.saturating_sub(margin);
    let mut index: BTreeMap<Minute, BTreeMap<&PhoneId, Vec<&Pdr>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.t_pdr >= start) {
        index.entry(r.t_pdr).or_default().entry(&r.phone).or_default().push(r);
    }
    let mut minutes: BTreeMap<PhoneId, Vec<Sample>> = BTreeMap::new();
    for (&m, phones) in &index {
        let Some(mine) = phones.get(&poi.phone) else { continue };
        for (&u, theirs) in phones {
            if *u == poi.phone {
                continue;
            }
            if let Some((d, r)) = pair_distance(mine, theirs, registry) {
                if d <= prox_max {
                    minutes.entry(u.clone()).or_default().push((m, d, r));
                }
            }
        }
    }
    minutes
        .into_iter()
        .map(|(u, samples)| {
            let mut windows: Vec<Vec<Sample>> = Vec::new();
            for s in samples {
                match windows.last_mut() {
                    Some(w) if s.0 - w.last().unwrap().0 <= gap_tolerance + 1 => w.push(s),
                    _ => windows.push(vec![s]),
                }
            }
            let windows = windows
                .into_iter()
                .map(|w| {
                    let (a, b) = (w[0].0, w.last().unwrap().0);
                    (a, b, b - a + 1, w)
                })
                .collect();
            (u, windows)
        })
        .collect()
}

/// Same shape as the oracle output, taken from engine suspicions.
pub fn engine_windows(found: &[ContactSuspicion]) -> BTreeMap<PhoneId, Vec<Window>> {
    found
        .iter()
        .map(|s| {
            let ws = s
                .windows
                .iter()
                .map(|w| {
                    let samples = w
                        .series
                        .iter()
                        .map(|p| (p.minute, p.prox, rank(p.class)))
                        .collect();
                    (w.region.start, w.region.end, w.duration, samples)
                })
                .collect();
            (s.u.clone(), ws)
        })
        .collect()
}

/// Exact on minutes, windows and ranks; distances to 1e-9 m.
pub fn same_windows(a: &BTreeMap<PhoneId, Vec<Window>>, b: &BTreeMap<PhoneId, Vec<Window>>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((ua, wa), (ub, wb))| {
            ua == ub
                && wa.len() == wb.len()
                && wa.iter().zip(wb).all(|(x, y)| {
                    x.0 == y.0
                        && x.1 == y.1
                        && x.2 == y.2
                        && x.3.len() == y.3.len()
                        && x.3
                            .iter()
                            .zip(&y.3)
                            .all(|(p, q)| p.0 == q.0 && p.2 == q.2 && (p.1 - q.1).abs() < 1e-9)
                })
        })
}
