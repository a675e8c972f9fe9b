//! Turning-movement-count data: ingestion, availability, windowing, scaling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::mapper::Cardinal;

mod csv_io;
mod schema;
mod toronto;

pub use csv_io::{parse_tmc_csv, write_tmc_csv};
pub use schema::{SchemaMapping, SchemaSpec};
pub use toronto::{fetch_toronto_tmc, TorontoApiConfig};

#[derive(Debug, Error)]
pub enum TmcError {
    #[error("count file has no header row")]
    MissingHeader,
    #[error("column '{column}' required by the schema is not present")]
    UnresolvableColumn { column: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("window start {start} is not before end {end}")]
    InvalidWindow { start: NaiveDateTime, end: NaiveDateTime },
    #[error("{which} {requested} is not on a bin boundary; nearest boundaries are {before} and {after}")]
    MisalignedWindow { which: &'static str, requested: NaiveDateTime, before: NaiveDateTime, after: NaiveDateTime },
    #[error("no data in window: {} bins covered, {} missing (first missing: {})", covered.len(), missing.len(),
        missing.first().map(|(id, t)| format!("{id} @ {t}")).unwrap_or_default())]
    NoDataInWindow { covered: Vec<(String, NaiveDateTime)>, missing: Vec<(String, NaiveDateTime)> },
    #[error("scale factor must be non-negative and finite, got {0}")]
    NegativeFactor(f64),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("open data API returned HTTP {status} for {url}")]
    HttpStatus { status: u16, url: String },
    #[error("open data payload is missing expected column '{column}'")]
    SchemaDrift { column: String },
    #[error("unexpected open data payload: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    pub fn letter(self) -> char {
        match self {
            Turn::Left => 'L',
            Turn::Through => 'T',
            Turn::Right => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Turn> {
        Turn::ALL.into_iter().find(|t| t.letter() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Truck,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 3] = [VehicleClass::Car, VehicleClass::Truck, VehicleClass::Bus];

    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::Truck => "truck",
            VehicleClass::Bus => "bus",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VehicleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VehicleClass::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown vehicle class '{s}'"))
    }
}

/// One counted movement: travel direction on entry, turn, vehicle class.
///
/// Written as `<approach letter><turn letter>_<class>`, e.g. `NL_car` for
/// northbound left-turning cars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MovementKey {
    pub approach: Cardinal,
    pub turn: Turn,
    pub vclass: VehicleClass,
}

impl MovementKey {
    pub fn new(approach: Cardinal, turn: Turn, vclass: VehicleClass) -> Self {
        MovementKey { approach, turn, vclass }
    }

    /// All 36 keys in a fixed order.
    pub fn all() -> impl Iterator<Item = MovementKey> {
        Cardinal::ALL.into_iter().flat_map(|a| {
            Turn::ALL
                .into_iter()
                .flat_map(move |t| VehicleClass::ALL.into_iter().map(move |v| MovementKey::new(a, t, v)))
        })
    }
}

impl fmt::Display for MovementKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}_{}", self.approach.letter(), self.turn.letter(), self.vclass)
    }
}

impl FromStr for MovementKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid movement key '{s}'");
        let (movement, vclass) = s.split_once('_').ok_or_else(bad)?;
        let mut letters = movement.chars();
        let (Some(a), Some(t), None) = (letters.next(), letters.next(), letters.next()) else {
            return Err(bad());
        };
        Ok(MovementKey {
            approach: Cardinal::from_letter(a).ok_or_else(bad)?,
            turn: Turn::from_letter(t).ok_or_else(bad)?,
            vclass: vclass.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for MovementKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MovementKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Counts for one intersection over one aggregation interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountBin {
    pub intersection_id: String,
    pub bin_start: NaiveDateTime,
    pub duration_s: u32,
    /// Absent keys count as zero.
    pub counts: BTreeMap<MovementKey, u32>,
}

impl CountBin {
    pub fn count(&self, key: &MovementKey) -> u32 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn bin_end(&self) -> NaiveDateTime {
        self.bin_start + Duration::seconds(i64::from(self.duration_s))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// 1-based data row (header excluded); 0 when not tied to a row.
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmcDataset {
    pub bins: Vec<CountBin>,
    pub schema: SchemaMapping,
    pub ranges: BTreeMap<String, Vec<TimeSpan>>,
    /// Intersection coordinates `(lon, lat)` when the source carries them.
    pub locations: BTreeMap<String, (f64, f64)>,
    pub diagnostics: Vec<RowDiagnostic>,
}

impl TmcDataset {
    /// Sorts the bins, drops duplicate `(intersection, start)` pairs with a
    /// diagnostic, and computes the available spans.
    pub fn new(
        mut bins: Vec<CountBin>,
        schema: SchemaMapping,
        locations: BTreeMap<String, (f64, f64)>,
        mut diagnostics: Vec<RowDiagnostic>,
    ) -> Self {
        bins.sort_by(|a, b| (&a.intersection_id, a.bin_start).cmp(&(&b.intersection_id, b.bin_start)));
        let mut seen = BTreeSet::new();
        bins.retain(|b| {
            let fresh = seen.insert((b.intersection_id.clone(), b.bin_start));
            if !fresh {
                diagnostics.push(RowDiagnostic {
                    row: 0,
                    message: format!("duplicate bin for '{}' at {}; later row ignored", b.intersection_id, b.bin_start),
                });
            }
            fresh
        });
        let ranges = compute_spans(&bins);
        TmcDataset { bins, schema, ranges, locations, diagnostics }
    }

    pub fn intersection_ids(&self) -> impl Iterator<Item = &str> {
        self.ranges.keys().map(String::as_str)
    }

    pub fn bins_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a CountBin> + 'a {
        self.bins.iter().filter(move |b| b.intersection_id == id)
    }
}

fn compute_spans(sorted_bins: &[CountBin]) -> BTreeMap<String, Vec<TimeSpan>> {
    let mut ranges: BTreeMap<String, Vec<TimeSpan>> = BTreeMap::new();
    for bin in sorted_bins {
        let spans = ranges.entry(bin.intersection_id.clone()).or_default();
        match spans.last_mut() {
            Some(last) if last.end == bin.bin_start => last.end = bin.bin_end(),
            Some(last) if bin.bin_start < last.end => last.end = last.end.max(bin.bin_end()),
            _ => spans.push(TimeSpan { start: bin.bin_start, end: bin.bin_end() }),
        }
    }
    ranges
}

/// Maximal contiguous spans of data per requested id; unknown ids map to an
/// empty list.
pub fn available_time_range(ds: &TmcDataset, ids: &[String]) -> BTreeMap<String, Vec<TimeSpan>> {
    ids.iter()
        .map(|id| (id.clone(), ds.ranges.get(id).cloned().unwrap_or_default()))
        .collect()
}

/// Intersection of several span lists: the times at which every id has data.
pub fn common_spans(span_lists: &[Vec<TimeSpan>]) -> Vec<TimeSpan> {
    let Some((first, rest)) = span_lists.split_first() else {
        return Vec::new();
    };
    rest.iter().fold(first.clone(), |acc, other| {
        let mut out = Vec::new();
        for a in &acc {
            for b in other {
                let start = a.start.max(b.start);
                let end = a.end.min(b.end);
                if start < end {
                    out.push(TimeSpan { start, end });
                }
            }
        }
        out
    })
}

/// Bins of the given intersections lying fully inside `[start, end)`.
///
/// Both bounds must fall on the dataset's bin grid, and every bin slot in the
/// window must be present for every id.
pub fn slice_window(
    ds: &TmcDataset,
    ids: &[String],
    start: NaiveDateTime,
    end: NaiveDateTime,
) -> Result<Vec<CountBin>, TmcError> {
    if start >= end {
        return Err(TmcError::InvalidWindow { start, end });
    }
    let ids: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let step = Duration::seconds(i64::from(ds.schema.bin_seconds));
    let relevant: Vec<&CountBin> = ds.bins.iter().filter(|b| ids.contains(b.intersection_id.as_str())).collect();

    let slots: Vec<NaiveDateTime> = {
        let mut t = start;
        let mut v = Vec::new();
        while t < end {
            v.push(t);
            t += step;
        }
        v
    };

    if let Some(anchor) = relevant.iter().map(|b| b.bin_start).min() {
        for (which, t) in [("window start", start), ("window end", end)] {
            let offset = (t - anchor).num_seconds();
            let step_s = step.num_seconds();
            let rem = offset.rem_euclid(step_s);
            if rem != 0 {
                let before = t - Duration::seconds(rem);
                return Err(TmcError::MisalignedWindow { which, requested: t, before, after: before + step });
            }
        }
    }

    let mut covered = Vec::new();
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for id in &ids {
        for &slot in &slots {
            let hit = relevant.iter().find(|b| {
                b.intersection_id == *id && b.bin_start == slot && b.bin_end() <= end && b.duration_s > 0
            });
            match hit {
                Some(bin) => {
                    covered.push((id.to_string(), slot));
                    out.push((*bin).clone());
                }
                None => missing.push((id.to_string(), slot)),
            }
        }
    }
    if !missing.is_empty() {
        return Err(TmcError::NoDataInWindow { covered, missing });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleFactor {
    Uniform(f64),
    /// Classes not listed keep factor 1.
    PerClass(BTreeMap<VehicleClass, f64>),
}

impl ScaleFactor {
    pub fn factor_for(&self, vclass: VehicleClass) -> f64 {
        match self {
            ScaleFactor::Uniform(f) => *f,
            ScaleFactor::PerClass(m) => m.get(&vclass).copied().unwrap_or(1.0),
        }
    }

    fn validate(&self) -> Result<(), TmcError> {
        let check = |f: f64| if f.is_finite() && f >= 0.0 { Ok(()) } else { Err(TmcError::NegativeFactor(f)) };
        match self {
            ScaleFactor::Uniform(f) => check(*f),
            ScaleFactor::PerClass(m) => m.values().try_for_each(|&f| check(f)),
        }
    }
}

/// Round-half-up, with a small allowance so products like `0.5 * 5` that land
/// a hair below `.5` in binary still round up.
fn round_half_up(value: f64) -> u32 {
    let r = (value + 0.5 + 1e-9).floor();
    if r >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        r as u32
    }
}

/// Multiply every count by its class factor, rounding half up per movement.
pub fn scale_counts(bins: &[CountBin], factor: &ScaleFactor) -> Result<Vec<CountBin>, TmcError> {
    factor.validate()?;
    Ok(bins
        .iter()
        .map(|bin| CountBin {
            counts: bin
                .counts
                .iter()
                .map(|(k, &c)| (*k, round_half_up(f64::from(c) * factor.factor_for(k.vclass))))
                .collect(),
            ..bin.clone()
        })
        .collect())
}

/// Accepted timestamp layouts when the schema does not pin one.
const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(text: &str, format: Option<&str>) -> Option<NaiveDateTime> {
    let text = text.trim();
    match format {
        Some(f) => NaiveDateTime::parse_from_str(text, f).ok(),
        None => TIMESTAMP_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(text, f).ok()),
    }
}
