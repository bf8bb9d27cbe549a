use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::mobility::ProviderRegistry;
use crate::pdr::{BsCode, Minute, PhoneId, PrecisionClass};

use super::{
    CepEngine, CepError, ContactSuspicion, ContactWindow, PdrStream, PhoneOfInterest, ProxSample,
    Reading, Region,
};

/// Distance estimate for one pair in one minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteEstimate {
    pub prox: f64,
    pub class: PrecisionClass,
    pub stations: Vec<BsCode>,
}

/// Combines every station pairing that can relate the two phones and keeps
/// the finest precision class, averaging the estimates of that class.
///
/// A shared station gives the law-of-cosines separation. Two different
/// stations need the registry to place both phones; their useful ranges must
/// overlap and the pairing counts as the coarser of the two classes.
pub fn estimate_minute(
    rv: &[Reading],
    ru: &[Reading],
    resolver: Option<&ProviderRegistry>,
) -> Option<MinuteEstimate> {
    let mut best: Option<(PrecisionClass, f64, usize, BTreeSet<BsCode>)> = None;
    for a in rv {
        for b in ru {
            let (class, d) = if a.bs == b.bs {
                (a.bs.precision_class, a.prox.separation(&b.prox))
            } else {
                let Some(reg) = resolver else { continue };
                let (Some(sa), Some(sb)) = (reg.resolve(&a.bs.code), reg.resolve(&b.bs.code))
                else {
                    continue;
                };
                if sa.centroid.distance(&sb.centroid) > sa.useful_range + sb.useful_range {
                    continue;
                }
                let pa = sa.centroid.offset(&a.prox);
                let pb = sb.centroid.offset(&b.prox);
                (
                    a.bs.precision_class.min(b.bs.precision_class),
                    pa.distance(&pb),
                )
            };
            match &mut best {
                Some((c, sum, n, st)) if *c == class => {
                    *sum += d;
                    *n += 1;
                    st.insert(a.bs);
                    st.insert(b.bs);
                }
                Some((c, ..)) if *c > class => {}
                _ => best = Some((class, d, 1, BTreeSet::from([a.bs, b.bs]))),
            }
        }
    }
    best.map(|(class, sum, n, st)| MinuteEstimate {
        prox: sum / n as f64,
        class,
        stations: st.into_iter().collect(),
    })
}

struct OpenWindow {
    series: Vec<ProxSample>,
    stations: BTreeSet<BsCode>,
}

impl OpenWindow {
    fn last(&self) -> Minute {
        self.series.last().expect("never empty").minute
    }

    fn close(self) -> ContactWindow {
        let start = self.series[0].minute;
        let end = self.last();
        ContactWindow {
            region: Region {
                start,
                end,
                stations: self.stations,
            },
            series: self.series,
            duration: end - start + 1,
        }
    }
}

impl CepEngine<'_> {
    /// Scans minutes from `poi.t_inf_min - search_margin` (within the
    /// capability's scope) and keeps one window state per co-present phone.
    pub fn find_suspicions(
        &self,
        stream: &PdrStream,
        poi: &PhoneOfInterest,
    ) -> Result<Vec<ContactSuspicion>, CepError> {
        self.check()?;
        let p = &self.params;
        let resolver = self.resolver();
        let start = poi.t_inf_min.saturating_sub(p.search_margin);
        let scope = self.cap.scope();
        let mut open: BTreeMap<&PhoneId, OpenWindow> = BTreeMap::new();
        let mut done: BTreeMap<&PhoneId, Vec<ContactWindow>> = BTreeMap::new();

        for (&minute, phones) in stream.minutes_from(start) {
            if scope.is_some_and(|s| !s.contains(minute)) {
                continue;
            }
            let Some(rv) = phones.get(&poi.phone) else {
                continue;
            };
            for (u, ru) in phones {
                if *u == poi.phone {
                    continue;
                }
                let Some(est) = estimate_minute(rv, ru, resolver) else {
                    continue;
                };
                if est.prox > p.prox_max {
                    continue;
                }
                let sample = ProxSample {
                    minute,
                    prox: est.prox,
                    class: est.class,
                };
                match open.get_mut(u) {
                    Some(w) if minute - w.last() <= p.gap_tolerance + 1 => {
                        w.series.push(sample);
                        w.stations.extend(est.stations);
                    }
                    _ => {
                        let fresh = OpenWindow {
                            series: vec![sample],
                            stations: est.stations.into_iter().collect(),
                        };
                        if let Some(old) = open.insert(u, fresh) {
                            done.entry(u).or_default().push(old.close());
                        }
                    }
                }
            }
        }
        for (u, w) in open {
            done.entry(u).or_default().push(w.close());
        }

        Ok(done
            .into_iter()
            .map(|(u, windows)| ContactSuspicion {
                v: poi.phone.clone(),
                u: u.clone(),
                pc_susp: windows.iter().any(|w| w.duration >= p.dur_min),
                windows,
            })
            .collect())
    }
}
