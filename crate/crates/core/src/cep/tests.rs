use std::collections::BTreeMap;

use proptest::prelude::*;

use super::testutil::{phone, Layout, Rig};
use super::*;
use crate::federation::{OperationClass, Payload, SystemStateKind};
use crate::pdr::Point2;

fn together(l: &Layout, a: &PhoneId, b: &PhoneId, pos: Point2, minutes: impl Iterator<Item = Minute>) -> Vec<Pdr> {
    minutes
        .flat_map(|m| {
            let mut v = l.observe(a, pos, m);
            v.extend(l.observe(b, pos, m));
            v
        })
        .collect()
}

fn poi(p: &PhoneId, t: Minute) -> PhoneOfInterest {
    PhoneOfInterest {
        phone: p.clone(),
        t_inf_min: t,
    }
}

fn venue0() -> Point2 {
    Point2::new(101.0, 100.0)
}

#[test]
fn duration_bound_is_inclusive() {
    let l = Layout::new();
    let mut rig = Rig::alert();
    let cap = rig.cap(OperationClass::BlindAnalysis);
    let engine = CepEngine::new(&cap, rig.state(), &l.registry, CepParams::default());
    let (v, u) = (phone(1), phone(2));
    for (len, want) in [(15, true), (14, false)] {
        let stream = PdrStream::from_records(together(&l, &v, &u, venue0(), 10..10 + len));
        let found = engine.find_suspicions(&stream, &poi(&v, 0)).unwrap();
        assert_eq!(found.len(), 1);
        let s = &found[0];
        assert_eq!(s.windows.len(), 1);
        assert_eq!(s.windows[0].duration, len);
        assert!(s.windows[0].series.iter().all(|x| x.prox == 0.0 && x.class == PrecisionClass::Femto));
        assert_eq!(s.pc_susp, want, "len {len}");
    }
}

#[test]
fn contacts_before_the_infection_estimate_are_ignored() {
    let l = Layout::new();
    let mut rig = Rig::alert();
    let cap = rig.cap(OperationClass::BlindAnalysis);
    let engine = CepEngine::new(&cap, rig.state(), &l.registry, CepParams::default());
    let (v, u) = (phone(1), phone(2));
    let stream = PdrStream::from_records(together(&l, &v, &u, venue0(), 0..20));
    assert!(engine.find_suspicions(&stream, &poi(&v, 30)).unwrap().is_empty());
    let mut params = CepParams::default();
    params.search_margin = 15;
    let engine = CepEngine::new(&cap, rig.state(), &l.registry, params);
    let found = engine.find_suspicions(&stream, &poi(&v, 30)).unwrap();
    assert_eq!(found[0].windows[0].region.start, 15);
    assert!(!found[0].pc_susp);
}

#[test]
fn gaps_up_to_the_tolerance_are_bridged() {
    let l = Layout::new();
    let mut rig = Rig::alert();
    let cap = rig.cap(OperationClass::BlindAnalysis);
    let engine = CepEngine::new(&cap, rig.state(), &l.registry, CepParams::default());
    let (v, u) = (phone(1), phone(2));
    let far = Point2::new(400.0, 400.0);
    let script = |missing: Minute| {
        let mut recs = Vec::new();
        for m in 0..20 + missing {
            recs.extend(l.observe(&v, venue0(), m));
            let at = if (10..10 + missing).contains(&m) { far } else { venue0() };
            recs.extend(l.observe(&u, at, m));
        }
        PdrStream::from_records(recs)
    };
    let spans = |missing| {
        let s = engine.find_suspicions(&script(missing), &poi(&v, 0)).unwrap();
        s[0].windows
            .iter()
            .map(|w| (w.region.start, w.region.end, w.duration))
            .collect::<Vec<_>>()
    };
    assert_eq!(spans(2), vec![(0, 21, 22)]);
    assert_eq!(spans(3), vec![(0, 9, 10), (13, 22, 10)]);
}

#[test]
fn cross_station_pairs_need_registry_rights() {
    let key = [9u8; 32];
    let mut l = Layout::new();
    // Move the second femto cell so that the two phones sit under different ones.
    let femto_b = BsCode::derive(&key, 2, 9, PrecisionClass::Femto);
    l.registry.insert(crate::mobility::StationInfo {
        code: femto_b,
        provider: crate::mobility::ProviderId(2),
        centroid: Point2::new(106.0, 100.0),
        useful_range: 5.0,
        venue: Some(0),
    });
    let (v, u) = (phone(1), phone(2));
    let (pv, pu) = (Point2::new(102.5, 104.2), Point2::new(103.5, 104.2));
    let mut recs = Vec::new();
    for m in 0..20 {
        recs.push(l.pdr(l.femto_a, &v, pv, m));
        recs.push(l.pdr(l.macro_cell, &v, pv, m));
        recs.push(l.pdr(femto_b, &u, pu, m));
        recs.push(l.pdr(l.macro_cell, &u, pu, m));
    }
    let stream = PdrStream::from_records(recs);
    let mut rig = Rig::alert();
    let blind = rig.cap(OperationClass::BlindAnalysis);
    let processing = rig.cap(OperationClass::BlindProcessing);
    let st = rig.state();
    let classes = |cap: &Capability| {
        let e = CepEngine::new(cap, st, &l.registry, CepParams::default());
        let s = e.find_suspicions(&stream, &poi(&v, 0)).unwrap();
        let w = &s[0].windows[0];
        assert!((w.series[0].prox - 1.0).abs() < 1e-9);
        (w.series[0].class, w.region.stations.len())
    };
    assert_eq!(classes(&blind), (PrecisionClass::Macro, 1));
    assert_eq!(classes(&processing), (PrecisionClass::Femto, 2));
}

#[test]
fn estimate_prefers_the_finest_class_and_averages_it() {
    let l = Layout::new();
    let (v, u) = (phone(1), phone(2));
    let reading = |bs, who, pos| {
        let p = l.pdr(bs, who, pos, 0);
        Reading { bs: p.bs, prox: p.prox }
    };
    let (pv, pu) = (Point2::new(101.0, 100.0), Point2::new(102.0, 100.5));
    let rv = [reading(l.macro_cell, &v, pv), reading(l.femto_a, &v, pv)];
    let ru = [reading(l.macro_cell, &u, pu)];
    let e = estimate_minute(&rv, &ru, None).unwrap();
    assert_eq!(e.class, PrecisionClass::Macro);
    assert!((e.prox - pv.distance(&pu)).abs() < 1e-9);
    assert_eq!(estimate_minute(&rv, &[], None), None);
    let e = estimate_minute(&rv, &ru, Some(&l.registry)).unwrap();
    assert_eq!(e.class, PrecisionClass::Macro);
    assert_eq!(e.stations.len(), 2);
}

#[test]
fn wrong_capability_or_state_is_refused() {
    let l = Layout::new();
    let mut rig = Rig::alert();
    let push = rig.cap(OperationClass::StrictPush);
    let blind = rig.cap(OperationClass::BlindProcessing);
    let stream = PdrStream::new();
    let e = CepEngine::new(&push, rig.state(), &l.registry, CepParams::default());
    assert!(matches!(
        e.find_suspicions(&stream, &poi(&phone(1), 0)),
        Err(CepError::Unauthorized(FederationError::Forbidden { .. }))
    ));
    let e = CepEngine::new(&blind, rig.state(), &l.registry, CepParams::default());
    assert!(matches!(
        e.build_pccont(&[], &BTreeMap::new()),
        Err(CepError::Unauthorized(FederationError::Forbidden { .. }))
    ));
    let down = rig.certify(
        OperationClass::LockUnlock,
        Payload::StateChange {
            target: SystemStateKind::Passive,
        },
    );
    rig.fed
        .change_state(&down, SystemStateKind::Passive, 1, &mut [])
        .unwrap();
    let e = CepEngine::new(&blind, rig.state(), &l.registry, CepParams::default());
    assert_eq!(
        e.find_suspicions(&stream, &poi(&phone(1), 0)),
        Err(CepError::Unauthorized(FederationError::NotAlert))
    );
}

fn terms(prox_avg: f64, dur_tot: Minute, pp: f64, pd: f64, dn: f64, sev: f64) -> ScoreTerms {
    ScoreTerms {
        prox_avg,
        dur_tot,
        precision_prox: pp,
        precision_dur: pd,
        density: dn * 10.0,
        density_norm: dn,
        severity: sev,
    }
}

#[test]
fn score_class_examples() {
    // Expected raws evaluated by hand from the weighted sum.
    let (raw, class) = pc_scor(&terms(2.0, 15, 0.2, 0.5, 0.5, 0.5), 2.0, 15);
    assert!((raw - 0.1975).abs() < 1e-12);
    assert_eq!(class, 1);
    let (raw, class) = pc_scor(&terms(0.0, 120, 1.0, 0.5, 0.5, 1.0), 2.0, 15);
    assert!((raw - 0.9).abs() < 1e-12);
    assert_eq!(class, 4);
    assert_eq!(pc_scor(&terms(2.0, 0, 0.0, 0.0, 0.0, 0.0), 2.0, 15), (0.0, 1));
    let (raw, class) = pc_scor(&terms(0.0, 60, 1.0, 1.0, 1.0, 1.0), 2.0, 15);
    assert!((raw - 1.0).abs() < 1e-12 && class == 4);
}

#[test]
fn class_boundaries() {
    // 0.35 * dur_term alone: dur_tot / 60 of 0.35.
    let c = |raw_target: f64| {
        let t = terms(2.0, 0, 0.0, 0.0, 0.0, raw_target / 0.1);
        pc_scor(&t, 2.0, 15).1
    };
    assert_eq!(c(0.0), 1);
    let at = |x: f64| pc_scor(&terms(2.0, 0, 0.0, 0.0, x, 1.0), 2.0, 15);
    assert_eq!(at(0.0).1, 1);
    assert_eq!(at(1.0), (0.2, 1));
    let (raw, class) = pc_scor(&terms(1.0, 0, 1.0, 1.0, 1.0, 1.0), 2.0, 15);
    assert!((raw - 0.475).abs() < 1e-12);
    assert_eq!(class, 2);
}

proptest! {
    #[test]
    fn score_is_monotone(
        prox in 0.0f64..4.0, dprox in 0.0f64..1.0,
        dur in 0u64..100, ddur in 0u64..50,
        pp in 0.0f64..1.0, pd in 0.0f64..1.0, dn in 0.0f64..1.0, sev in 0.0f64..1.0,
        bump in 0.0f64..0.5,
    ) {
        let base = terms(prox, dur, pp, pd, dn, sev);
        let (raw, _) = pc_scor(&base, 2.0, 15);
        prop_assert!((0.0..=1.0).contains(&raw));
        let up = |t: ScoreTerms| pc_scor(&t, 2.0, 15).0;
        let worse = [ScoreTerms { prox_avg: prox + dprox, ..base }];
        let better = [
            ScoreTerms { dur_tot: dur + ddur, ..base },
            ScoreTerms { precision_prox: (pp + bump).min(1.0), ..base },
            ScoreTerms { precision_dur: (pd + bump).min(1.0), ..base },
            ScoreTerms { density_norm: (dn + bump).min(1.0), ..base },
            ScoreTerms { severity: (sev + bump).min(1.0), ..base },
        ];
        for t in worse {
            prop_assert!(up(t) <= raw);
        }
        for t in better {
            prop_assert!(up(t) >= raw);
        }
    }
}

#[test]
fn lower_median_of_contact_minutes() {
    assert_eq!(lower_median(&[10, 11, 12, 13, 14]), Some(12));
    assert_eq!(lower_median(&[14, 10, 13, 11]), Some(11));
    assert_eq!(lower_median(&[]), None);
}

/// A meets B at the femto venue, B later meets C at the pico venue, D stays
/// away from everyone.
fn two_hop() -> (Layout, PdrStream, [PhoneId; 4]) {
    let l = Layout::new();
    let ids = [phone(1), phone(2), phone(3), phone(4)];
    let [a, b, c, d] = ids.clone();
    let pico_spot = Point2::new(905.0, 900.0);
    let mut recs = together(&l, &a, &b, venue0(), 10..=70);
    recs.extend(together(&l, &b, &c, pico_spot, 300..=360));
    for m in 0..400 {
        recs.extend(l.observe(&d, Point2::new(1500.0, 1500.0), m));
        if !(300..=360).contains(&m) {
            recs.extend(l.observe(&c, Point2::new(2000.0, 200.0), m));
        }
    }
    (l, PdrStream::from_records(recs), ids)
}

#[test]
fn completion_reaches_a_fixpoint() {
    let (l, stream, [a, b, c, _]) = two_hop();
    let mut rig = Rig::alert();
    let cap = rig.cap(OperationClass::FullProcessing);
    let engine = CepEngine::new(&cap, rig.state(), &l.registry, CepParams::default());
    let mut findings = engine.analyze(&stream, &[poi(&a, 0)]).unwrap();
    assert_eq!(findings.scores.len(), 1);
    assert_eq!(findings.scores[0].class, 4);
    assert_eq!(findings.scores[0].terms.dur_tot, 61);

    let added = engine.complete_findings(&stream, &findings).unwrap();
    assert_eq!(
        added.expanded,
        BTreeMap::from([(b.clone(), 40), (c.clone(), 330)])
    );
    assert_eq!(added.suspicions.len(), 1);
    assert_eq!(pair_key(&added.suspicions[0].v, &added.suspicions[0].u), pair_key(&b, &c));
    assert!((added.scores[0].terms.precision_prox - 0.6).abs() < 1e-9);
    findings.merge(added);
    assert!(engine.complete_findings(&stream, &findings).unwrap().is_empty());

    let records = engine.build_pccont(&findings.scores, &findings.expanded).unwrap();
    assert_eq!(records.len(), 2);
    let ab = &records[0];
    assert_eq!(ab.median_contact, 40);
    assert!(ab.coord.min.x <= 100.0 && ab.coord.max.x >= 100.0);
    let dag = build_dag(&records, 30, 720).unwrap();
    assert!(dag.contains_path(&[a.clone(), b.clone(), c.clone()]));
    assert_eq!(dag.edges.len(), 2);
    assert_eq!(dag.topo_sort().unwrap(), vec![a, b, c]);
}

fn record(v: &PhoneId, tv: Minute, u: &PhoneId, tu: Minute, median: Minute, at: Point2) -> ContaminationRecord {
    ContaminationRecord {
        v: v.clone(),
        u: u.clone(),
        region: Region {
            start: median,
            end: median,
            stations: Default::default(),
        },
        coord: BBox::around(at, 5.0),
        median_contact: median,
        t_inf_v: tv,
        t_inf_u: tu,
        class: 4,
    }
}

#[test]
fn chain_of_three_gives_two_edges() {
    let (a, b, c) = (phone(1), phone(2), phone(3));
    let o = Point2::default();
    let records = [record(&b, 100, &a, 0, 90, o), record(&b, 100, &c, 200, 190, o)];
    let dag = build_dag(&records, 50, 720).unwrap();
    assert_eq!(dag.edges.len(), 2);
    assert!(dag.has_edge(&a, &b) && dag.has_edge(&b, &c));
    assert!((dag.edges[0].weight - (1.0 - 10.0 / 720.0)).abs() < 1e-12);
    assert!(dag.to_dot().contains("->"));
    assert_eq!(build_dag(&records, 50, 0), Err(CepError::InvalidIncubation));
}

#[test]
fn symmetric_record_gives_no_edge() {
    let (x, y) = (phone(1), phone(2));
    let dag = build_dag(&[record(&x, 100, &y, 100, 100, Point2::default())], 50, 720).unwrap();
    assert!(dag.edges.is_empty());
    assert_eq!(dag.nodes.len(), 2);
    // With no latency the phone id breaks the tie in one direction only.
    let dag = build_dag(&[record(&x, 100, &y, 100, 100, Point2::default())], 0, 720).unwrap();
    assert_eq!(dag.edges.len(), 1);
    assert_eq!(dag.edges[0].from, x);
}

#[test]
fn topo_sort_detects_cycles() {
    let (a, b) = (phone(1), phone(2));
    let e = |f: &PhoneId, t: &PhoneId| DagEdge {
        from: f.clone(),
        to: t.clone(),
        weight: 1.0,
        median_contact: 0,
    };
    let dag = InfectionDag {
        nodes: vec![(a.clone(), 0), (b.clone(), 0)],
        edges: vec![e(&a, &b), e(&b, &a)],
    };
    assert_eq!(dag.topo_sort(), None);
}

proptest! {
    #[test]
    fn dag_is_always_acyclic(
        recs in prop::collection::vec((0u32..8, 0u64..500, 0u32..8, 0u64..500, 0u64..600), 0..30),
        incub_min in 0u64..100,
    ) {
        let records: Vec<_> = recs
            .iter()
            .filter(|r| r.0 != r.2)
            .map(|&(v, tv, u, tu, m)| record(&phone(v), tv, &phone(u), tu, m, Point2::default()))
            .collect();
        // Infection estimates must be consistent per phone.
        let mut first: BTreeMap<PhoneId, Minute> = BTreeMap::new();
        let records: Vec<_> = records
            .into_iter()
            .map(|mut r| {
                r.t_inf_v = *first.entry(r.v.clone()).or_insert(r.t_inf_v);
                r.t_inf_u = *first.entry(r.u.clone()).or_insert(r.t_inf_u);
                r
            })
            .collect();
        let dag = build_dag(&records, incub_min, 720).unwrap();
        prop_assert!(dag.topo_sort().is_some());
        for e in &dag.edges {
            prop_assert!((0.0..=1.0).contains(&e.weight));
        }
    }

    #[test]
    fn hotspots_conserve_counts(
        centers in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 0..60),
        cell in 1.0f64..200.0,
    ) {
        let (a, b) = (phone(1), phone(2));
        let records: Vec<_> = centers
            .iter()
            .map(|&(x, y)| record(&a, 0, &b, 0, 0, Point2::new(x, y)))
            .collect();
        let cells = hotspot_map(&records, cell).unwrap();
        prop_assert_eq!(cells.iter().map(|c| c.count).sum::<usize>(), records.len());
        prop_assert!(cells.windows(2).all(|w| w[0].count >= w[1].count));
        let csv = hotspot_csv(&cells);
        prop_assert_eq!(csv.lines().count(), cells.len() + 1);
    }
}

#[test]
fn hotspot_grid_must_be_positive() {
    assert_eq!(hotspot_map(&[], 0.0), Err(CepError::InvalidGrid));
    let r = record(&phone(1), 0, &phone(2), 0, 0, Point2::new(-1.0, 149.0));
    let cells = hotspot_map(&[r], 50.0).unwrap();
    assert_eq!((cells[0].cell_x, cells[0].cell_y), (-1, 2));
}
