use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pdr::{Minute, PhoneId};

use super::{CepError, ContaminationRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: PhoneId,
    pub to: PhoneId,
    pub weight: f64,
    pub median_contact: Minute,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfectionDag {
    /// Phone and infection estimate, sorted by phone.
    pub nodes: Vec<(PhoneId, Minute)>,
    pub edges: Vec<DagEdge>,
}

/// `from -> to` is admissible when the contact happened after `from` could
/// have been infected, `to` was infected at least `incub_min` after `from`
/// (ties broken by phone id, so cycles are impossible), and the contact is
/// within `incub_max` of `to`'s infection estimate.
fn edge(
    from: (&PhoneId, Minute),
    to: (&PhoneId, Minute),
    median: Minute,
    incub_min: Minute,
    incub_max: Minute,
) -> Option<f64> {
    if median < from.1 {
        return None;
    }
    if (to.1, to.0) <= (from.1, from.0) || to.1 < from.1 + incub_min {
        return None;
    }
    let gap = median.abs_diff(to.1);
    if gap > incub_max {
        return None;
    }
    Some(1.0 - gap as f64 / incub_max as f64)
}

pub fn build_dag(
    records: &[ContaminationRecord],
    incub_min: Minute,
    incub_max: Minute,
) -> Result<InfectionDag, CepError> {
    if incub_max == 0 || incub_min > incub_max {
        return Err(CepError::InvalidIncubation);
    }
    let mut nodes: BTreeMap<PhoneId, Minute> = BTreeMap::new();
    let mut best: BTreeMap<(PhoneId, PhoneId), DagEdge> = BTreeMap::new();
    for r in records {
        nodes.entry(r.v.clone()).or_insert(r.t_inf_v);
        nodes.entry(r.u.clone()).or_insert(r.t_inf_u);
        let ends = [((&r.v, r.t_inf_v), (&r.u, r.t_inf_u)), ((&r.u, r.t_inf_u), (&r.v, r.t_inf_v))];
        for (a, b) in ends {
            let Some(weight) = edge(a, b, r.median_contact, incub_min, incub_max) else {
                continue;
            };
            let key = (a.0.clone(), b.0.clone());
            if best.get(&key).map_or(true, |e| weight > e.weight) {
                best.insert(
                    key,
                    DagEdge {
                        from: a.0.clone(),
                        to: b.0.clone(),
                        weight,
                        median_contact: r.median_contact,
                    },
                );
            }
        }
    }
    Ok(InfectionDag {
        nodes: nodes.into_iter().collect(),
        edges: best.into_values().collect(),
    })
}

impl InfectionDag {
    pub fn has_edge(&self, from: &PhoneId, to: &PhoneId) -> bool {
        self.edges.iter().any(|e| &e.from == from && &e.to == to)
    }

    /// Kahn's algorithm, smallest ready phone first. `None` on a cycle.
    pub fn topo_sort(&self) -> Option<Vec<PhoneId>> {
        let mut indegree: BTreeMap<&PhoneId, usize> =
            self.nodes.iter().map(|(p, _)| (p, 0)).collect();
        let mut out_edges: BTreeMap<&PhoneId, Vec<&PhoneId>> = BTreeMap::new();
        for e in &self.edges {
            *indegree.entry(&e.to).or_default() += 1;
            indegree.entry(&e.from).or_default();
            out_edges.entry(&e.from).or_default().push(&e.to);
        }
        let mut ready: BTreeSet<&PhoneId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(p, _)| *p)
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(p) = ready.pop_first() {
            order.push(p.clone());
            for q in out_edges.get(p).into_iter().flatten() {
                let d = indegree.get_mut(q).expect("known node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(q);
                }
            }
        }
        (order.len() == indegree.len()).then_some(order)
    }

    /// True if every consecutive pair of `chain` is an edge.
    pub fn contains_path(&self, chain: &[PhoneId]) -> bool {
        chain.windows(2).all(|w| self.has_edge(&w[0], &w[1]))
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph infection {\n    rankdir=LR;\n");
        for (p, t) in &self.nodes {
            let _ = writeln!(s, "    \"{}\" [label=\"{}\\nt_inf={}\"];", p.nr(), p.nr(), t);
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "    \"{}\" -> \"{}\" [label=\"{:.3}\"];",
                e.from.nr(),
                e.to.nr(),
                e.weight
            );
        }
        s.push_str("}\n");
        s
    }
}
