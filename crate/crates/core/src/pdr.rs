//! Proximity detail records: one phone's position relative to one base
//! station's antenna centroid during one clock minute.
//!
//! Canonical PDR layout (this is the encryption plaintext, bit-exact):
//!
//! ```text
//! bs.code  16 bytes ASCII lowercase hex
//! nr       u32 BE length || UTF-8
//! imei     15 bytes ASCII digits
//! radius   f64 BE
//! azimuth  f64 BE
//! t_pdr    u64 BE
//! ```

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;
use crate::wire::{Reader, WireError, Writer};

/// Whole minutes since the scenario epoch.
pub type Minute = u64;

#[derive(Debug, Error, PartialEq)]
pub enum PdrError {
    #[error("invalid phone id: {0}")]
    InvalidPhone(String),
    #[error("invalid base-station code: {0}")]
    InvalidCode(String),
    #[error("invalid proximity vector: {0}")]
    InvalidProx(String),
    #[error("duplicate record for phone {phone} at station {code} minute {minute}")]
    DuplicateRecord {
        code: String,
        phone: String,
        minute: Minute,
    },
    #[error("set records must share minute {minute} and station {code}")]
    MixedSet { code: String, minute: Minute },
    #[error("triangulation needs at least 3 readings, got {0}")]
    InsufficientReadings(usize),
    #[error("station centroids are collinear")]
    DegenerateGeometry,
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset(&self, prox: &ProxVector) -> Point2 {
        let (dx, dy) = prox.to_offset();
        Point2::new(self.x + dx, self.y + dy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawPhoneId", into = "RawPhoneId")]
pub struct PhoneId {
    nr: String,
    imei: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhoneId {
    nr: String,
    imei: String,
}

impl TryFrom<RawPhoneId> for PhoneId {
    type Error = PdrError;
    fn try_from(raw: RawPhoneId) -> Result<Self, PdrError> {
        PhoneId::new(raw.nr, raw.imei)
    }
}

impl From<PhoneId> for RawPhoneId {
    fn from(p: PhoneId) -> Self {
        RawPhoneId {
            nr: p.nr,
            imei: p.imei,
        }
    }
}

impl PhoneId {
    pub const IMEI_LEN: usize = 15;

    pub fn new(nr: impl Into<String>, imei: impl Into<String>) -> Result<Self, PdrError> {
        let (nr, imei) = (nr.into(), imei.into());
        if nr.is_empty() || !nr.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PdrError::InvalidPhone(format!(
                "nr must be non-empty digits: {nr:?}"
            )));
        }
        if imei.len() != Self::IMEI_LEN || !imei.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PdrError::InvalidPhone(format!(
                "imei must be exactly 15 digits: {imei:?}"
            )));
        }
        Ok(Self { nr, imei })
    }

    pub fn nr(&self) -> &str {
        &self.nr
    }

    pub fn imei(&self) -> &str {
        &self.imei
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.str(&self.nr).raw(self.imei.as_bytes());
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, PdrError> {
        let nr = r.str("nr")?.to_string();
        let imei = std::str::from_utf8(r.raw(Self::IMEI_LEN)?)
            .map_err(|_| WireError::InvalidUtf8("imei"))?
            .to_string();
        PhoneId::new(nr, imei)
    }
}

impl fmt::Display for PhoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.nr, self.imei)
    }
}

/// Base-station tier. Ordered coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PrecisionClass {
    Macro,
    Pico,
    Femto,
}

impl PrecisionClass {
    pub const ALL: [PrecisionClass; 3] = [Self::Macro, Self::Pico, Self::Femto];

    pub fn tag(self) -> u8 {
        match self {
            Self::Macro => 0,
            Self::Pico => 1,
            Self::Femto => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, WireError> {
        match tag {
            0 => Ok(Self::Macro),
            1 => Ok(Self::Pico),
            2 => Ok(Self::Femto),
            _ => Err(WireError::InvalidTag {
                what: "precision class",
                tag,
            }),
        }
    }
}

/// Opaque 16-character lowercase hex station token.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodeToken([u8; 16]);

impl CodeToken {
    pub fn parse(s: &str) -> Result<Self, PdrError> {
        let b = s.as_bytes();
        if b.len() != 16 || !b.iter().all(|c| matches!(c, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(PdrError::InvalidCode(s.to_string()));
        }
        let mut out = [0u8; 16];
        out.copy_from_slice(b);
        Ok(Self(out))
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("token is ascii hex")
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for CodeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CodeToken({})", self.as_str())
    }
}

impl fmt::Display for CodeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CodeToken {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CodeToken {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CodeToken::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Encoded base-station identifier. The token carries no coordinates; only
/// the provider registry can map it back to a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsCode {
    pub code: CodeToken,
    pub precision_class: PrecisionClass,
}

impl BsCode {
    /// Keyed pseudorandom token for station `index` of `provider`.
    pub fn derive(key: &[u8; 32], provider: u16, index: u32, class: PrecisionClass) -> Self {
        let d = Digest::of_parts(&[
            b"epitrace/bs-code/v1",
            key,
            &provider.to_be_bytes(),
            &index.to_be_bytes(),
        ]);
        let hex = hex::encode(&d.0[..8]);
        Self {
            code: CodeToken::parse(&hex).expect("hex digest"),
            precision_class: class,
        }
    }
}

/// Polar offset from a station's antenna centroid. Azimuth is measured
/// counter-clockwise from the +x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxVector {
    radius: f64,
    azimuth: f64,
}

impl ProxVector {
    pub fn new(radius: f64, azimuth: f64) -> Result<Self, PdrError> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(PdrError::InvalidProx(format!("radius {radius}")));
        }
        if !azimuth.is_finite() {
            return Err(PdrError::InvalidProx(format!("azimuth {azimuth}")));
        }
        let mut az = azimuth.rem_euclid(TAU);
        if az >= TAU {
            az = 0.0;
        }
        Ok(Self {
            radius,
            azimuth: az,
        })
    }

    pub fn from_offset(dx: f64, dy: f64) -> Self {
        let radius = dx.hypot(dy);
        let azimuth = if radius == 0.0 { 0.0 } else { dy.atan2(dx) };
        Self::new(radius, azimuth).expect("finite offset")
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn to_offset(&self) -> (f64, f64) {
        (
            self.radius * self.azimuth.cos(),
            self.radius * self.azimuth.sin(),
        )
    }

    /// Distance between two positions expressed relative to the same centroid
    /// (law of cosines).
    pub fn separation(&self, other: &ProxVector) -> f64 {
        let d2 = self.radius * self.radius + other.radius * other.radius
            - 2.0 * self.radius * other.radius * (self.azimuth - other.azimuth).cos();
        d2.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityDetailRecord {
    pub bs: BsCode,
    pub phone: PhoneId,
    pub prox: ProxVector,
    pub t_pdr: Minute,
}

pub type Pdr = ProximityDetailRecord;

pub fn make_pdr(bs: BsCode, phone: PhoneId, relative_position: ProxVector, minute: Minute) -> Pdr {
    ProximityDetailRecord {
        bs,
        phone,
        prox: relative_position,
        t_pdr: minute,
    }
}

impl ProximityDetailRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    fn encode_into(&self, w: &mut Writer) {
        w.raw(self.bs.code.as_bytes());
        self.phone.encode_into(w);
        w.f64(self.prox.radius)
            .f64(self.prox.azimuth)
            .u64(self.t_pdr);
    }

    /// Decodes the canonical layout. The precision class is not part of the
    /// record bytes and must be supplied by the caller (it travels with the
    /// enclosing set).
    pub fn decode(bytes: &[u8], class: PrecisionClass) -> Result<Self, PdrError> {
        let mut r = Reader::new(bytes);
        let pdr = Self::decode_from(&mut r, class)?;
        r.finish()?;
        Ok(pdr)
    }

    fn decode_from(r: &mut Reader<'_>, class: PrecisionClass) -> Result<Self, PdrError> {
        let code = std::str::from_utf8(r.raw(16)?)
            .map_err(|_| WireError::InvalidUtf8("bs code"))?;
        let code = CodeToken::parse(code)?;
        let phone = PhoneId::decode_from(r)?;
        let radius = r.f64()?;
        let azimuth = r.f64()?;
        let prox = ProxVector::new(radius, azimuth)?;
        if prox.azimuth.to_bits() != azimuth.to_bits() {
            return Err(PdrError::InvalidProx("azimuth not normalized".into()));
        }
        let t_pdr = r.u64()?;
        Ok(make_pdr(
            BsCode {
                code,
                precision_class: class,
            },
            phone,
            prox,
            t_pdr,
        ))
    }
}

/// All records of one station for one minute, sorted by phone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdrSet {
    minute: Minute,
    bs: BsCode,
    records: Vec<Pdr>,
}

impl PdrSet {
    pub fn new(minute: Minute, bs: BsCode, mut records: Vec<Pdr>) -> Result<Self, PdrError> {
        if records.iter().any(|r| r.t_pdr != minute || r.bs != bs) {
            return Err(PdrError::MixedSet {
                code: bs.code.to_string(),
                minute,
            });
        }
        records.sort_by(|a, b| a.phone.cmp(&b.phone));
        if let Some(w) = records.windows(2).find(|w| w[0].phone == w[1].phone) {
            return Err(PdrError::DuplicateRecord {
                code: bs.code.to_string(),
                phone: w[0].phone.to_string(),
                minute,
            });
        }
        Ok(Self {
            minute,
            bs,
            records,
        })
    }

    pub fn minute(&self) -> Minute {
        self.minute
    }

    pub fn bs(&self) -> BsCode {
        self.bs
    }

    pub fn records(&self) -> &[Pdr] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Pdr> {
        self.records
    }

    /// `minute u64 || class u8 || count u32 || (len u32 || pdr)*`
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.minute)
            .u8(self.bs.precision_class.tag())
            .u32(self.records.len() as u32);
        for r in &self.records {
            w.bytes(&r.encode());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PdrError> {
        let mut r = Reader::new(bytes);
        let minute = r.u64()?;
        let class = PrecisionClass::from_tag(r.u8()?)?;
        let n = r.count(4)?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            records.push(Pdr::decode(r.bytes()?, class)?);
        }
        r.finish()?;
        let bs = records.first().map(|p| p.bs).ok_or_else(|| {
            PdrError::Wire(WireError::Invalid("empty pdr set".into()))
        })?;
        let set = Self::new(minute, bs, records)?;
        if set.encode() != bytes {
            return Err(WireError::Invalid("pdr set not in canonical order".into()).into());
        }
        Ok(set)
    }
}

/// Groups records into one set per (station, minute), sorted by
/// `(minute, station code)`.
pub fn group_into_sets(records: Vec<Pdr>) -> Result<Vec<PdrSet>, PdrError> {
    let mut groups: BTreeMap<(Minute, CodeToken), (BsCode, Vec<Pdr>)> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.t_pdr, r.bs.code))
            .or_insert_with(|| (r.bs, Vec::new()))
            .1
            .push(r);
    }
    groups
        .into_iter()
        .map(|((minute, _), (bs, recs))| PdrSet::new(minute, bs, recs))
        .collect()
}

/// Least-squares multilateration result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub position: Point2,
    /// Root-mean-square range error over the readings, in meters.
    pub residual: f64,
}

/// Multilateration from `(centroid, measured distance)` readings.
///
/// The linearized system (each range equation minus their mean) gives a
/// starting point, refined by damped Gauss-Newton on the range residuals.
pub fn triangulate(readings: &[(Point2, f64)]) -> Result<Fix, PdrError> {
    if readings.len() < 3 {
        return Err(PdrError::InsufficientReadings(readings.len()));
    }
    let n = readings.len() as f64;
    let mx = readings.iter().map(|(c, _)| c.x).sum::<f64>() / n;
    let my = readings.iter().map(|(c, _)| c.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (c, _) in readings {
        let (dx, dy) = (c.x - mx, c.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    let trace = sxx + syy;
    if trace == 0.0 || det <= 1e-12 * trace * trace {
        return Err(PdrError::DegenerateGeometry);
    }

    let mean_d2 = readings.iter().map(|(_, d)| d * d).sum::<f64>() / n;
    let mean_c2 = readings
        .iter()
        .map(|(c, _)| c.x * c.x + c.y * c.y)
        .sum::<f64>()
        / n;
    let (mut bx, mut by) = (0.0, 0.0);
    for (c, d) in readings {
        let rhs = (c.x * c.x + c.y * c.y - mean_c2) - (d * d - mean_d2);
        bx += 2.0 * (c.x - mx) * rhs;
        by += 2.0 * (c.y - my) * rhs;
    }
    // Normal matrix is 4 * scatter.
    let (a, b, d) = (4.0 * sxx, 4.0 * sxy, 4.0 * syy);
    let ndet = a * d - b * b;
    let mut p = Point2::new((d * bx - b * by) / ndet, (a * by - b * bx) / ndet);

    let cost = |p: &Point2| -> f64 {
        readings
            .iter()
            .map(|(c, dist)| {
                let e = p.distance(c) - dist;
                e * e
            })
            .sum()
    };
    let mut current = cost(&p);
    for _ in 0..100 {
        if current < 1e-24 {
            break;
        }
        let (mut jtj00, mut jtj01, mut jtj11, mut jtr0, mut jtr1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (c, dist) in readings {
            let r = p.distance(c);
            if r < 1e-12 {
                continue;
            }
            let (jx, jy) = ((p.x - c.x) / r, (p.y - c.y) / r);
            let e = r - dist;
            jtj00 += jx * jx;
            jtj01 += jx * jy;
            jtj11 += jy * jy;
            jtr0 += jx * e;
            jtr1 += jy * e;
        }
        let det = jtj00 * jtj11 - jtj01 * jtj01;
        if det.abs() < 1e-18 {
            break;
        }
        let sx = (jtj11 * jtr0 - jtj01 * jtr1) / det;
        let sy = (jtj00 * jtr1 - jtj01 * jtr0) / det;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = Point2::new(p.x - scale * sx, p.y - scale * sy);
            let c = cost(&cand);
            if c < current {
                p = cand;
                let gain = current - c;
                current = c;
                improved = gain > 1e-30;
                break;
            }
            scale *= 0.5;
        }
        if !improved || (sx * sx + sy * sy).sqrt() * scale < 1e-13 {
            break;
        }
    }
    Ok(Fix {
        position: p,
        residual: (current / n).sqrt(),
    })
}
