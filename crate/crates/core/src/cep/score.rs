use serde::{Deserialize, Serialize};

use crate::pdr::{Minute, PhoneId, PrecisionClass};

use super::{CepEngine, CepError, ContactSuspicion, PdrStream, Region};

const W_PROX: f64 = 0.35;
const W_DUR: f64 = 0.35;
const W_PRECISION: f64 = 0.10;
const W_DENSITY: f64 = 0.10;
const W_SEVERITY: f64 = 0.10;

pub fn precision_factor(class: PrecisionClass) -> f64 {
    match class {
        PrecisionClass::Macro => 0.2,
        PrecisionClass::Pico => 0.6,
        PrecisionClass::Femto => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerms {
    pub prox_avg: f64,
    pub dur_tot: Minute,
    pub precision_prox: f64,
    pub precision_dur: f64,
    /// Mean phones per minute in the region.
    pub density: f64,
    pub density_norm: f64,
    pub severity: f64,
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Raw score in [0, 1] and its class 1..=4.
pub fn pc_scor(t: &ScoreTerms, prox_max: f64, dur_min: Minute) -> (f64, u8) {
    let prox = 1.0 - clamp01(t.prox_avg / prox_max);
    let dur = (t.dur_tot as f64 / (4 * dur_min.max(1)) as f64).min(1.0);
    let raw = clamp01(
        W_PROX * prox
            + W_DUR * dur
            + W_PRECISION * clamp01(t.precision_prox) * clamp01(t.precision_dur)
            + W_DENSITY * clamp01(t.density_norm)
            + W_SEVERITY * clamp01(t.severity),
    );
    let class = match raw {
        r if r < 0.25 => 1,
        r if r < 0.5 => 2,
        r if r < 0.75 => 3,
        _ => 4,
    };
    (raw, class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactScore {
    pub v: PhoneId,
    pub u: PhoneId,
    pub region: Region,
    pub raw: f64,
    pub class: u8,
    pub terms: ScoreTerms,
    /// Qualifying minutes of the windows that met the duration bound.
    pub contact_minutes: Vec<Minute>,
}

impl CepEngine<'_> {
    /// Scores every suspicion with `pc_susp` set; others are skipped.
    pub fn score_suspicions(
        &self,
        stream: &PdrStream,
        suspicions: &[ContactSuspicion],
    ) -> Result<Vec<ContactScore>, CepError> {
        self.check()?;
        suspicions
            .iter()
            .filter(|s| s.pc_susp)
            .map(|s| self.score_one(stream, s))
            .collect()
    }

    fn score_one(&self, stream: &PdrStream, s: &ContactSuspicion) -> Result<ContactScore, CepError> {
        let p = &self.params;
        let windows: Vec<_> = s.qualifying(p.dur_min).collect();
        let no_evidence = || CepError::NoEvidence {
            v: s.v.clone(),
            u: s.u.clone(),
        };
        let first = windows.first().ok_or_else(no_evidence)?;
        let region = windows[1..]
            .iter()
            .fold(first.region.clone(), |r, w| r.merge(&w.region));
        let samples: Vec<_> = windows.iter().flat_map(|w| &w.series).collect();
        if samples.is_empty() {
            return Err(no_evidence());
        }
        let n = samples.len() as f64;
        let prox_avg = samples.iter().map(|x| x.prox).sum::<f64>() / n;
        let precision_prox = samples.iter().map(|x| precision_factor(x.class)).sum::<f64>() / n;

        let span: Minute = windows.iter().map(|w| w.duration).sum();
        let density = windows
            .iter()
            .map(|w| {
                stream.density(&w.region.stations, w.region.start, w.region.end)
                    * w.duration as f64
            })
            .sum::<f64>()
            / span as f64;
        let density_norm = if p.density_saturation > 0.0 {
            (density / p.density_saturation).min(1.0)
        } else {
            1.0
        };

        let severity = self
            .resolver()
            .and_then(|reg| {
                region
                    .stations
                    .iter()
                    .filter_map(|bs| reg.resolve(&bs.code)?.venue)
                    .map(|v| *p.venue_severity.get(&v).unwrap_or(&p.severity_default))
                    .reduce(f64::max)
            })
            .unwrap_or(p.severity_default);

        let terms = ScoreTerms {
            prox_avg,
            dur_tot: samples.len() as Minute,
            precision_prox,
            precision_dur: p.precision_dur,
            density,
            density_norm,
            severity,
        };
        let (raw, class) = pc_scor(&terms, p.prox_max, p.dur_min);
        Ok(ContactScore {
            v: s.v.clone(),
            u: s.u.clone(),
            region,
            raw,
            class,
            terms,
            contact_minutes: samples.iter().map(|x| x.minute).collect(),
        })
    }
}
