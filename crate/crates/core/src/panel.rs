//! Country-month panel storage and covariate transforms.
//!
//! A [`Panel`] is an immutable table of country-month observations: outcome
//! flags live on the row records, covariates live in named columns with
//! explicit missing values. Transform operations return a new panel and never
//! mutate their input, so panels can be shared read-only across threads.
//!
//! Lagging is calendar-aware: the value `k` months back is looked up by
//! calendar month within the same country, so a hole in a country's series
//! produces a missing lag rather than a silently shifted one.

use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

use crate::calendar::{CountryId, YearMonth};

/// One country-month observation's identifiers and outcome flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelRecord {
    pub country: CountryId,
    pub ym: YearMonth,
    pub irr_entry: u8,
    pub irr_exit: u8,
    pub ilc: u8,
}

/// Maps the required identifier and outcome columns onto an input file's
/// header names. Every unmapped column is ingested as a covariate.
#[derive(Debug, Clone)]
pub struct PanelSchema {
    pub country: String,
    pub year: String,
    pub month: String,
    pub irr_entry: String,
    pub irr_exit: String,
    pub ilc: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            month: "month".into(),
            irr_entry: "irr_entry".into(),
            irr_exit: "irr_exit".into(),
            ilc: "ilc".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("input is missing required column `{0}`")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },
    #[error("duplicate key: country {country} at {ym}")]
    DuplicateKey { country: CountryId, ym: YearMonth },
    #[error(
        "inconsistent outcome at line {line}: ilc={ilc} but irr_entry={irr_entry}, irr_exit={irr_exit}"
    )]
    InconsistentOutcome {
        line: u64,
        irr_entry: u8,
        irr_exit: u8,
        ilc: u8,
    },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("covariate `{0}` already exists")]
    ColumnExists(String),
    #[error("lag must be at least 1 month, got {0}")]
    BadLag(i64),
    #[error(
        "covariate `{name}` is negative ({value}) at row {row}; log transform requires x >= 0"
    )]
    NegativeValue {
        name: String,
        value: f64,
        row: usize,
    },
    #[error("column length {got} does not match panel length {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Logarithm base for [`Panel::log_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    Ten,
    Natural,
}

impl LogBase {
    fn prefix(self) -> &'static str {
        match self {
            LogBase::Ten => "log10",
            LogBase::Natural => "ln",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Ten => x.log10(),
            LogBase::Natural => x.ln(),
        }
    }
}

/// Immutable country-month panel: records sorted by (country, year, month),
/// covariates as parallel columns with explicit missing values.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    rows: Vec<PanelRecord>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
    index: BTreeMap<(CountryId, i64), usize>,
}

impl Panel {
    /// Builds a panel from unsorted records and matching column values.
    ///
    /// Rows are sorted by (country, year, month); duplicate keys and
    /// ilc/entry/exit inconsistencies are rejected.
    pub fn from_records(
        mut rows: Vec<PanelRecord>,
        columns: BTreeMap<String, Vec<Option<f64>>>,
    ) -> Result<Self, PanelError> {
        for values in columns.values() {
            if values.len() != rows.len() {
                return Err(PanelError::LengthMismatch {
                    got: values.len(),
                    expected: rows.len(),
                });
            }
        }
        // Sort rows and columns together through a permutation.
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| (rows[i].country, rows[i].ym));
        let rows_sorted: Vec<PanelRecord> = order.iter().map(|&i| rows[i]).collect();
        let columns: BTreeMap<String, Vec<Option<f64>>> = columns
            .into_iter()
            .map(|(name, values)| {
                let sorted: Vec<Option<f64>> = order.iter().map(|&i| values[i]).collect();
                (name, sorted)
            })
            .collect();
        rows = rows_sorted;

        let mut index = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if r.ilc != u8::from(r.irr_entry == 1 || r.irr_exit == 1) {
                return Err(PanelError::InconsistentOutcome {
                    line: i as u64 + 1,
                    irr_entry: r.irr_entry,
                    irr_exit: r.irr_exit,
                    ilc: r.ilc,
                });
            }
            if index.insert((r.country, r.ym.index()), i).is_some() {
                return Err(PanelError::DuplicateKey {
                    country: r.country,
                    ym: r.ym,
                });
            }
        }
        Ok(Self {
            rows,
            columns,
            index,
        })
    }

    /// Ingests a panel from CSV (UTF-8, header row, RFC 4180 quoting).
    ///
    /// Columns named by `schema` become identifiers and outcome flags; every
    /// other column is parsed as a numeric covariate where an empty cell or
    /// `NA` means missing.
    pub fn from_csv<R: Read>(reader: R, schema: &PanelSchema) -> Result<Self, PanelError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| -> Result<usize, PanelError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
        };
        let c_country = find(&schema.country)?;
        let c_year = find(&schema.year)?;
        let c_month = find(&schema.month)?;
        let c_entry = find(&schema.irr_entry)?;
        let c_exit = find(&schema.irr_exit)?;
        let c_ilc = find(&schema.ilc)?;
        let mapped = [c_country, c_year, c_month, c_entry, c_exit, c_ilc];

        let covariate_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !mapped.contains(i))
            .map(|(i, h)| (i, h.to_string()))
            .collect();

        let mut rows = Vec::new();
        let mut columns: BTreeMap<String, Vec<Option<f64>>> = covariate_cols
            .iter()
            .map(|(_, name)| (name.clone(), Vec::new()))
            .collect();

        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<&str, PanelError> {
                record.get(i).ok_or(PanelError::MalformedRow {
                    line,
                    detail: format!("missing field {i}"),
                })
            };
            let parse_err = |what: &str, raw: &str| PanelError::MalformedRow {
                line,
                detail: format!("cannot parse {what} from `{raw}`"),
            };
            let country: i64 = field(c_country)?
                .trim()
                .parse()
                .map_err(|_| parse_err("country id", field(c_country).unwrap()))?;
            let year: i32 = field(c_year)?
                .trim()
                .parse()
                .map_err(|_| parse_err("year", field(c_year).unwrap()))?;
            let month: u8 = field(c_month)?
                .trim()
                .parse()
                .map_err(|_| parse_err("month", field(c_month).unwrap()))?;
            let ym = YearMonth::new(year, month).map_err(|e| PanelError::MalformedRow {
                line,
                detail: e.to_string(),
            })?;
            let flag = |i: usize, what: &str| -> Result<u8, PanelError> {
                match field(i)?.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    raw => Err(parse_err(what, raw)),
                }
            };
            let irr_entry = flag(c_entry, "irr_entry")?;
            let irr_exit = flag(c_exit, "irr_exit")?;
            let ilc = flag(c_ilc, "ilc")?;
            if ilc != u8::from(irr_entry == 1 || irr_exit == 1) {
                return Err(PanelError::InconsistentOutcome {
                    line,
                    irr_entry,
                    irr_exit,
                    ilc,
                });
            }
            for (i, name) in &covariate_cols {
                let raw = field(*i)?.trim();
                let value = if raw.is_empty() || raw == "NA" {
                    None
                } else {
                    Some(
                        raw.parse::<f64>()
                            .map_err(|_| parse_err(&format!("covariate `{name}`"), raw))?,
                    )
                };
                columns.get_mut(name).unwrap().push(value);
            }
            rows.push(PanelRecord {
                country: CountryId(country),
                ym,
                irr_entry,
                irr_exit,
                ilc,
            });
        }
        Self::from_records(rows, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.rows
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    /// Resolves a named series: covariate columns first, then the outcome
    /// flags (`irr_entry`, `irr_exit`, `ilc`) as 0/1 values.
    pub fn series(&self, name: &str) -> Result<Vec<Option<f64>>, PanelError> {
        if let Some(col) = self.columns.get(name) {
            return Ok(col.clone());
        }
        let pick = |f: fn(&PanelRecord) -> u8| {
            self.rows
                .iter()
                .map(|r| Some(f64::from(f(r))))
                .collect::<Vec<_>>()
        };
        match name {
            "irr_entry" => Ok(pick(|r| r.irr_entry)),
            "irr_exit" => Ok(pick(|r| r.irr_exit)),
            "ilc" => Ok(pick(|r| r.ilc)),
            _ => Err(PanelError::UnknownCovariate(name.to_string())),
        }
    }

    /// Row index of (country, month) if observed.
    pub fn row_of(&self, country: CountryId, ym: YearMonth) -> Option<usize> {
        self.index.get(&(country, ym.index())).copied()
    }

    /// Distinct countries in panel order.
    pub fn countries(&self) -> Vec<CountryId> {
        let mut out: Vec<CountryId> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.country) {
                out.push(r.country);
            }
        }
        out
    }

    /// Contiguous row range of one country (rows are sorted by country).
    pub fn country_range(&self, country: CountryId) -> std::ops::Range<usize> {
        let start = self.rows.partition_point(|r| r.country < country);
        let end = self.rows.partition_point(|r| r.country <= country);
        start..end
    }

    /// Returns a new panel with one extra column.
    pub fn with_column(&self, name: &str, values: Vec<Option<f64>>) -> Result<Self, PanelError> {
        if self.columns.contains_key(name) {
            return Err(PanelError::ColumnExists(name.to_string()));
        }
        if values.len() != self.rows.len() {
            return Err(PanelError::LengthMismatch {
                got: values.len(),
                expected: self.rows.len(),
            });
        }
        let mut columns = self.columns.clone();
        columns.insert(name.to_string(), values);
        Ok(Self {
            rows: self.rows.clone(),
            columns,
            index: self.index.clone(),
        })
    }

    /// Adds `name.l{k}`: the covariate's value `k` calendar months earlier
    /// within the same country. Values across gaps in the calendar are
    /// missing, as are the first `k` months of each country.
    pub fn lag(&self, name: &str, k: i64) -> Result<Self, PanelError> {
        if k < 1 {
            return Err(PanelError::BadLag(k));
        }
        let col = self
            .columns
            .get(name)
            .ok_or_else(|| PanelError::UnknownCovariate(name.to_string()))?;
        let values: Vec<Option<f64>> = self
            .rows
            .iter()
            .map(|r| {
                self.row_of(r.country, r.ym.add_months(-k))
                    .and_then(|i| col[i])
            })
            .collect();
        self.with_column(&format!("{name}.l{k}"), values)
    }

    /// Adds `log10.{name}` or `ln.{name}` holding log_base(x + offset).
    /// Missing propagates; negative inputs are an error.
    pub fn log_transform(
        &self,
        name: &str,
        base: LogBase,
        offset: f64,
    ) -> Result<Self, PanelError> {
        let col = self
            .columns
            .get(name)
            .ok_or_else(|| PanelError::UnknownCovariate(name.to_string()))?;
        let mut values = Vec::with_capacity(col.len());
        for (row, v) in col.iter().enumerate() {
            match v {
                None => values.push(None),
                Some(x) if *x < 0.0 => {
                    return Err(PanelError::NegativeValue {
                        name: name.to_string(),
                        value: *x,
                        row,
                    })
                }
                Some(x) => values.push(Some(base.apply(x + offset))),
            }
        }
        self.with_column(&format!("{}.{name}", base.prefix()), values)
    }

    /// Merges per-country-month event counts as a covariate; panel rows with
    /// no events get 0 (an observed absence, not a missing value).
    pub fn with_event_counts(
        &self,
        name: &str,
        counts: &BTreeMap<(CountryId, YearMonth), f64>,
    ) -> Result<Self, PanelError> {
        let values: Vec<Option<f64>> = self
            .rows
            .iter()
            .map(|r| Some(counts.get(&(r.country, r.ym)).copied().unwrap_or(0.0)))
            .collect();
        self.with_column(name, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(y: i32, m: u8) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    fn small_csv() -> &'static str {
        "ccode,yr,mo,entry,exit,ilc,gdp,protest\n\
         100,2001,3,0,0,0,1.5,0\n\
         100,2001,4,0,0,0,1.6,2\n\
         100,2001,5,0,0,0,,7\n"
    }

    fn schema() -> PanelSchema {
        PanelSchema {
            country: "ccode".into(),
            year: "yr".into(),
            month: "mo".into(),
            irr_entry: "entry".into(),
            irr_exit: "exit".into(),
            ilc: "ilc".into(),
        }
    }

    #[test]
    fn ingests_three_rows() {
        let panel = Panel::from_csv(small_csv().as_bytes(), &schema()).unwrap();
        assert_eq!(panel.n_rows(), 3);
        assert_eq!(panel.records()[0].ym, ym(2001, 3));
        assert_eq!(panel.column("gdp").unwrap()[2], None);
        assert_eq!(panel.column("protest").unwrap()[1], Some(2.0));
    }

    #[test]
    fn rejects_duplicate_key() {
        let csv = "ccode,yr,mo,entry,exit,ilc\n100,2001,3,0,0,0\n100,2001,3,0,0,0\n";
        let err = Panel::from_csv(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(
            err,
            PanelError::DuplicateKey {
                country: CountryId(100),
                ..
            }
        ));
    }

    #[test]
    fn rejects_inconsistent_ilc() {
        let csv = "ccode,yr,mo,entry,exit,ilc\n100,2001,3,1,0,0\n";
        let err = Panel::from_csv(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, PanelError::InconsistentOutcome { .. }));
    }

    #[test]
    fn reports_row_number_for_malformed_input() {
        let csv = "ccode,yr,mo,entry,exit,ilc,gdp\n100,2001,3,0,0,0,1.0\n100,2001,4,0,0,0,abc\n";
        match Panel::from_csv(csv.as_bytes(), &schema()).unwrap_err() {
            PanelError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lag_shifts_within_country() {
        let panel = Panel::from_csv(small_csv().as_bytes(), &schema()).unwrap();
        let lagged = panel.lag("protest", 1).unwrap();
        let col = lagged.column("protest.l1").unwrap();
        assert_eq!(col, &[None, Some(0.0), Some(2.0)]);
    }

    #[test]
    fn lag_beyond_history_is_missing() {
        let panel = Panel::from_csv(small_csv().as_bytes(), &schema()).unwrap();
        // Only 3 months of history: a 2-month lag on rows 0 and 1 is missing.
        let lagged = panel.lag("protest", 2).unwrap();
        assert_eq!(
            lagged.column("protest.l2").unwrap(),
            &[None, None, Some(0.0)]
        );
    }

    #[test]
    fn lag_respects_calendar_gaps() {
        // Months 3, 4, 6: the lag of month 6 looks at month 5, which is absent.
        let rows = vec![
            PanelRecord {
                country: CountryId(1),
                ym: ym(2001, 3),
                irr_entry: 0,
                irr_exit: 0,
                ilc: 0,
            },
            PanelRecord {
                country: CountryId(1),
                ym: ym(2001, 4),
                irr_entry: 0,
                irr_exit: 0,
                ilc: 0,
            },
            PanelRecord {
                country: CountryId(1),
                ym: ym(2001, 6),
                irr_entry: 0,
                irr_exit: 0,
                ilc: 0,
            },
        ];
        let mut cols = BTreeMap::new();
        cols.insert("x".to_string(), vec![Some(5.0), Some(7.0), Some(9.0)]);
        let panel = Panel::from_records(rows, cols).unwrap();
        let lagged = panel.lag("x", 1).unwrap();
        assert_eq!(
            lagged.column("x.l1").unwrap(),
            &[None, Some(5.0), None],
            "value across a calendar hole must be missing"
        );
    }

    #[test]
    fn log_transform_hand_values() {
        let panel = Panel::from_csv(small_csv().as_bytes(), &schema()).unwrap();
        let logged = panel.log_transform("protest", LogBase::Ten, 1.0).unwrap();
        let col = logged.column("log10.protest").unwrap();
        assert_eq!(col[0], Some(0.0)); // log10(0 + 1)
                                       // x = 99 -> log10(100) = 2 checked below on a fresh column
        let with99 = panel
            .with_column("x", vec![Some(99.0), Some(9.0), None])
            .unwrap();
        let l10 = with99.log_transform("x", LogBase::Ten, 1.0).unwrap();
        assert_eq!(l10.column("log10.x").unwrap()[0], Some(2.0));
        let le = with99.log_transform("x", LogBase::Natural, 1.0).unwrap();
        let ln10 = le.column("ln.x").unwrap()[1].unwrap();
        // Frozen from an independent calculator: ln(10).
        #[allow(clippy::approx_constant)]
        let expected = 2.302_585_092_994_046;
        assert!((ln10 - expected).abs() < 1e-15);
        assert_eq!(le.column("ln.x").unwrap()[2], None);
    }

    #[test]
    fn log_transform_rejects_negative() {
        let panel = Panel::from_csv(small_csv().as_bytes(), &schema()).unwrap();
        let with_neg = panel
            .with_column("x", vec![Some(-1.0), None, None])
            .unwrap();
        assert!(matches!(
            with_neg.log_transform("x", LogBase::Ten, 1.0),
            Err(PanelError::NegativeValue { .. })
        ));
    }

    #[test]
    fn ingestion_is_order_insensitive() {
        let shuffled = "ccode,yr,mo,entry,exit,ilc,gdp,protest\n\
             100,2001,5,0,0,0,,7\n\
             100,2001,3,0,0,0,1.5,0\n\
             100,2001,4,0,0,0,1.6,2\n";
        let a = Panel::from_csv(small_csv().as_bytes(), &schema()).unwrap();
        let b = Panel::from_csv(shuffled.as_bytes(), &schema()).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(a.column("gdp").unwrap(), b.column("gdp").unwrap());
        assert_eq!(a.column("protest").unwrap(), b.column("protest").unwrap());
    }
}
