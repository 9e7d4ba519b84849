//! Dyadic event records and quad-category aggregation.
//!
//! Events carry a CAMEO root code (01–20) and source/target actor sectors.
//! The twenty root codes partition into four quad categories (verbal/material
//! x cooperation/conflict); aggregation counts events per country-month for
//! one quad and one actor direction, keeping direction distinct (DIS->GOV is
//! not GOV->DIS).

use std::collections::BTreeMap;
use std::io::Read;
use std::str::FromStr;

use thiserror::Error;

use crate::calendar::{CountryId, YearMonth};

/// Actor sector tag. Sectors outside the four named ones are retained as
/// `Other` and never match a directional aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sector {
    Gov,
    Dis,
    Reb,
    Eth,
    Other,
}

impl Sector {
    /// Lenient mapping for event rows: unknown labels become `Other`.
    pub fn from_label(label: &str) -> Self {
        Self::from_str(label).unwrap_or(Sector::Other)
    }
}

impl FromStr for Sector {
    type Err = EventError;

    /// Strict mapping for configuration (aggregation directions).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GOV" => Ok(Sector::Gov),
            "DIS" => Ok(Sector::Dis),
            "REB" => Ok(Sector::Reb),
            "ETH" => Ok(Sector::Eth),
            other => Err(EventError::UnknownSector(other.to_string())),
        }
    }
}

/// Verbal/material x cooperation/conflict event aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QuadCategory {
    VerbalCoop,
    MaterialCoop,
    VerbalConf,
    MaterialConf,
}

impl QuadCategory {
    pub const ALL: [QuadCategory; 4] = [
        QuadCategory::VerbalCoop,
        QuadCategory::MaterialCoop,
        QuadCategory::VerbalConf,
        QuadCategory::MaterialConf,
    ];

    /// Total mapping from CAMEO root codes: 01–05 verbal cooperation, 06–08
    /// material cooperation, 09–13 verbal conflict, 14–20 material conflict.
    pub fn from_cameo_root(root: u8) -> Result<Self, EventError> {
        match root {
            1..=5 => Ok(QuadCategory::VerbalCoop),
            6..=8 => Ok(QuadCategory::MaterialCoop),
            9..=13 => Ok(QuadCategory::VerbalConf),
            14..=20 => Ok(QuadCategory::MaterialConf),
            _ => Err(EventError::BadRootCode(root)),
        }
    }
}

impl FromStr for QuadCategory {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "verbalcoop" | "verbal_coop" | "verb.coop" => Ok(QuadCategory::VerbalCoop),
            "materialcoop" | "material_coop" | "matl.coop" => Ok(QuadCategory::MaterialCoop),
            "verbalconf" | "verbal_conf" | "verb.conf" => Ok(QuadCategory::VerbalConf),
            "materialconf" | "material_conf" | "matl.conf" => Ok(QuadCategory::MaterialConf),
            other => Err(EventError::UnknownQuad(other.to_string())),
        }
    }
}

/// One aggregated event-count record from a coded event stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub country: CountryId,
    pub ym: YearMonth,
    pub source: Sector,
    pub target: Sector,
    pub cameo_root: u8,
    pub count: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("CAMEO root code {0} outside 1..=20")]
    BadRootCode(u8),
    #[error("unknown actor sector `{0}` (expected GOV, DIS, REB, or ETH)")]
    UnknownSector(String),
    #[error("unknown quad category `{0}`")]
    UnknownQuad(String),
    #[error("malformed event row at line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },
}

/// Column names for an event CSV.
#[derive(Debug, Clone)]
pub struct EventSchema {
    pub country: String,
    pub year: String,
    pub month: String,
    pub source_sector: String,
    pub target_sector: String,
    pub cameo_root: String,
    pub count: String,
}

impl Default for EventSchema {
    fn default() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            month: "month".into(),
            source_sector: "source_sector".into(),
            target_sector: "target_sector".into(),
            cameo_root: "cameo_root".into(),
            count: "count".into(),
        }
    }
}

/// Reads validated event records from CSV.
pub fn read_events<R: Read>(
    reader: R,
    schema: &EventSchema,
) -> Result<Vec<EventRecord>, EventError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EventError::MalformedRow {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let find = |name: &str| -> Result<usize, EventError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EventError::MalformedRow {
                line: 1,
                detail: format!("missing column `{name}`"),
            })
    };
    let cols = [
        find(&schema.country)?,
        find(&schema.year)?,
        find(&schema.month)?,
        find(&schema.source_sector)?,
        find(&schema.target_sector)?,
        find(&schema.cameo_root)?,
        find(&schema.count)?,
    ];
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| EventError::MalformedRow {
            line: 0,
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(cols[i]).unwrap_or("").trim();
        let malformed = |what: &str, raw: &str| EventError::MalformedRow {
            line,
            detail: format!("cannot parse {what} from `{raw}`"),
        };
        let country: i64 = get(0).parse().map_err(|_| malformed("country", get(0)))?;
        let year: i32 = get(1).parse().map_err(|_| malformed("year", get(1)))?;
        let month: u8 = get(2).parse().map_err(|_| malformed("month", get(2)))?;
        let ym = YearMonth::new(year, month).map_err(|e| EventError::MalformedRow {
            line,
            detail: e.to_string(),
        })?;
        let root: u8 = get(5)
            .parse()
            .map_err(|_| malformed("cameo root", get(5)))?;
        QuadCategory::from_cameo_root(root)?;
        let count: u64 = get(6).parse().map_err(|_| malformed("count", get(6)))?;
        out.push(EventRecord {
            country: CountryId(country),
            ym,
            source: Sector::from_label(get(3)),
            target: Sector::from_label(get(4)),
            cameo_root: root,
            count,
        });
    }
    Ok(out)
}

/// Sums event counts per country-month for one quad category and one
/// (source, target) sector direction.
pub fn aggregate_events(
    events: &[EventRecord],
    direction: (Sector, Sector),
    quad: QuadCategory,
) -> Result<BTreeMap<(CountryId, YearMonth), f64>, EventError> {
    let mut out: BTreeMap<(CountryId, YearMonth), f64> = BTreeMap::new();
    for e in events {
        let q = QuadCategory::from_cameo_root(e.cameo_root)?;
        if q == quad && (e.source, e.target) == direction {
            *out.entry((e.country, e.ym)).or_insert(0.0) += e.count as f64;
        }
    }
    Ok(out)
}
