//! Spell construction: turn outcome flags plus a leader-change history into
//! duration-model variables.
//!
//! A spell is the run of country-months from the month after a previous
//! failure (or from the backfill start when no failure is known) up to the
//! next failure, the end of observation, or the country's exit from the state
//! system. Duration counters are seeded from pre-panel history so that left
//! censoring at the panel start does not reset every clock.
//!
//! Appended columns use the exact names `duration`, `failure`, `atrisk`,
//! `cured`, `t.0`, and `end.spell`.

use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

use crate::calendar::{CountryId, YearMonth};
use crate::panel::{Panel, PanelError};

/// One contiguous at-risk episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spell {
    pub country: CountryId,
    /// Calendar start of the spell's clock; may precede the panel window.
    pub start: YearMonth,
    /// Last observed month of the spell.
    pub end: YearMonth,
    pub ended_in_failure: bool,
    /// Ended because observation ended. A spell with both flags false ended
    /// because the country left the state system.
    pub right_censored: bool,
}

/// Duration-model variables for one country-month row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationRow {
    pub country: CountryId,
    pub ym: YearMonth,
    /// Months since spell start, >= 1.
    pub duration: i64,
    pub failure: bool,
    pub atrisk: bool,
    pub end_spell: bool,
}

impl DurationRow {
    pub fn t0(&self) -> i64 {
        self.duration - 1
    }

    pub fn cured(&self) -> bool {
        !self.atrisk
    }
}

/// Result of the spell build: the input panel with duration columns appended,
/// the spell list, and any data-coverage warnings.
#[derive(Debug)]
pub struct SpellBuild {
    pub panel: Panel,
    pub spells: Vec<Spell>,
    pub rows: Vec<DurationRow>,
    pub warnings: Vec<String>,
}

/// Leader-change history: per-country irregular-exit months, plus which
/// countries the history attests coverage for (a country may be covered with
/// zero events).
#[derive(Debug, Clone, Default)]
pub struct LeaderHistory {
    events: BTreeMap<CountryId, Vec<YearMonth>>,
}

impl LeaderHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a country as covered without adding an event.
    pub fn cover(&mut self, country: CountryId) {
        self.events.entry(country).or_default();
    }

    pub fn add_event(&mut self, country: CountryId, ym: YearMonth) {
        let list = self.events.entry(country).or_default();
        list.push(ym);
        list.sort();
    }

    pub fn covers(&self, country: CountryId) -> bool {
        self.events.contains_key(&country)
    }

    /// Most recent event strictly before `before` for the country.
    pub fn last_event_before(&self, country: CountryId, before: YearMonth) -> Option<YearMonth> {
        self.events
            .get(&country)?
            .iter()
            .copied()
            .rfind(|ym| *ym < before)
    }

    pub fn events(&self) -> impl Iterator<Item = (CountryId, YearMonth)> + '_ {
        self.events
            .iter()
            .flat_map(|(c, yms)| yms.iter().map(move |ym| (*c, *ym)))
    }
}

/// Column names for a leader-history CSV.
#[derive(Debug, Clone)]
pub struct HistorySchema {
    pub country: String,
    pub year: String,
    pub month: String,
    pub irr_exit: String,
}

impl Default for HistorySchema {
    fn default() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            month: "month".into(),
            irr_exit: "irr_exit".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SpellError {
    #[error("panel error: {0}")]
    Panel(#[from] PanelError),
    #[error("panel is empty")]
    EmptyPanel,
    #[error(
        "history event for country {country} at {ym} lies outside [{backfill_start}, {panel_end}]"
    )]
    HistoryEventOutOfRange {
        country: CountryId,
        ym: YearMonth,
        backfill_start: YearMonth,
        panel_end: YearMonth,
    },
    #[error(
        "country {country}: backfill start {backfill_start} is later than its first panel month {first}"
    )]
    BackfillTooLate {
        country: CountryId,
        backfill_start: YearMonth,
        first: YearMonth,
    },
    #[error("malformed history row at line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },
    #[error("cross-tab variable `{0}` has no non-missing values")]
    EmptyVariable(String),
}

/// Reads a leader-change history CSV. Rows with `irr_exit = 1` are failure
/// events; rows with `irr_exit = 0` only attest that the country is covered.
pub fn read_history<R: Read>(
    reader: R,
    schema: &HistorySchema,
) -> Result<LeaderHistory, SpellError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| SpellError::MalformedRow {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let find = |name: &str| -> Result<usize, SpellError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SpellError::MalformedRow {
                line: 1,
                detail: format!("missing column `{name}`"),
            })
    };
    let c_country = find(&schema.country)?;
    let c_year = find(&schema.year)?;
    let c_month = find(&schema.month)?;
    let c_exit = find(&schema.irr_exit)?;
    let mut history = LeaderHistory::new();
    for record in rdr.records() {
        let record = record.map_err(|e| SpellError::MalformedRow {
            line: 0,
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let malformed = |what: &str, raw: &str| SpellError::MalformedRow {
            line,
            detail: format!("cannot parse {what} from `{raw}`"),
        };
        let country: i64 = get(c_country)
            .parse()
            .map_err(|_| malformed("country", get(c_country)))?;
        let year: i32 = get(c_year)
            .parse()
            .map_err(|_| malformed("year", get(c_year)))?;
        let month: u8 = get(c_month)
            .parse()
            .map_err(|_| malformed("month", get(c_month)))?;
        let ym = YearMonth::new(year, month).map_err(|e| SpellError::MalformedRow {
            line,
            detail: e.to_string(),
        })?;
        let country = CountryId(country);
        match get(c_exit) {
            "1" => history.add_event(country, ym),
            "0" => history.cover(country),
            raw => return Err(malformed("irr_exit", raw)),
        }
    }
    Ok(history)
}

/// Builds spells and duration variables for a panel.
///
/// Counters are seeded from the most recent pre-panel failure in `history`,
/// or start at `backfill_start` when a country has none. A failure month
/// terminates its spell and the next spell starts the following month at
/// duration 1. Spells running to the panel's last observed month are right
/// censored; spells ending earlier (state exit) are coded not at risk, like
/// censored spells.
pub fn build_spells(
    panel: &Panel,
    history: &LeaderHistory,
    backfill_start: YearMonth,
) -> Result<SpellBuild, SpellError> {
    if panel.n_rows() == 0 {
        return Err(SpellError::EmptyPanel);
    }
    let panel_end = panel
        .records()
        .iter()
        .map(|r| r.ym)
        .max()
        .expect("non-empty panel");
    for (country, ym) in history.events() {
        if ym < backfill_start || ym > panel_end {
            return Err(SpellError::HistoryEventOutOfRange {
                country,
                ym,
                backfill_start,
                panel_end,
            });
        }
    }

    let mut warnings = Vec::new();
    let mut spells = Vec::new();
    let mut rows: Vec<DurationRow> = Vec::with_capacity(panel.n_rows());

    for country in panel.countries() {
        let range = panel.country_range(country);
        let recs = &panel.records()[range];
        let first = recs[0].ym;
        if !history.covers(country) {
            warnings.push(format!(
                "country {country} absent from leader history; duration counter seeded at {backfill_start}"
            ));
        }
        let mut spell_start = match history.last_event_before(country, first) {
            Some(event) => event.next(),
            None => backfill_start,
        };
        if spell_start > first {
            return Err(SpellError::BackfillTooLate {
                country,
                backfill_start: spell_start,
                first,
            });
        }

        let mut spell_rows: Vec<usize> = Vec::new();
        let mut prev_ym: Option<YearMonth> = None;
        for rec in recs {
            if let Some(prev) = prev_ym {
                if rec.ym != prev.next() {
                    warnings.push(format!(
                        "country {country}: calendar gap between {prev} and {}",
                        rec.ym
                    ));
                }
            }
            prev_ym = Some(rec.ym);
            let duration = spell_start.months_until(rec.ym) + 1;
            debug_assert!(duration >= 1);
            spell_rows.push(rows.len());
            rows.push(DurationRow {
                country,
                ym: rec.ym,
                duration,
                failure: rec.ilc == 1,
                atrisk: false,
                end_spell: false,
            });
            let is_last = rec.ym == recs.last().expect("non-empty").ym;
            if rec.ilc == 1 {
                for &i in &spell_rows {
                    rows[i].atrisk = true;
                }
                rows.last_mut().expect("row just pushed").end_spell = true;
                spells.push(Spell {
                    country,
                    start: spell_start,
                    end: rec.ym,
                    ended_in_failure: true,
                    right_censored: false,
                });
                spell_start = rec.ym.next();
                spell_rows.clear();
            } else if is_last {
                rows.last_mut().expect("row just pushed").end_spell = true;
                spells.push(Spell {
                    country,
                    start: spell_start,
                    end: rec.ym,
                    ended_in_failure: false,
                    right_censored: rec.ym == panel_end,
                });
                spell_rows.clear();
            }
        }
    }

    let as_col = |f: &dyn Fn(&DurationRow) -> f64| -> Vec<Option<f64>> {
        rows.iter().map(|r| Some(f(r))).collect()
    };
    let panel = panel
        .with_column("duration", as_col(&|r| r.duration as f64))?
        .with_column("failure", as_col(&|r| f64::from(r.failure)))?
        .with_column("atrisk", as_col(&|r| f64::from(r.atrisk)))?
        .with_column("cured", as_col(&|r| f64::from(r.cured())))?
        .with_column("t.0", as_col(&|r| (r.duration - 1) as f64))?
        .with_column("end.spell", as_col(&|r| f64::from(r.end_spell)))?;

    Ok(SpellBuild {
        panel,
        spells,
        rows,
        warnings,
    })
}

/// Contingency table over two discrete panel variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub row_var: String,
    pub col_var: String,
    pub row_levels: Vec<f64>,
    pub col_levels: Vec<f64>,
    /// counts[i][j] pairs row_levels[i] with col_levels[j].
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Counts each (row value, col value) combination over rows where both
/// variables are non-missing. Outcome flags may be named as variables.
pub fn cross_tabulate(
    panel: &Panel,
    row_var: &str,
    col_var: &str,
) -> Result<ContingencyTable, SpellError> {
    let rows = panel.series(row_var)?;
    let cols = panel.series(col_var)?;
    let mut pairs: Vec<(f64, f64)> = rows
        .iter()
        .zip(cols.iter())
        .filter_map(|(r, c)| match (r, c) {
            (Some(r), Some(c)) => Some((*r, *c)),
            _ => None,
        })
        .collect();
    if pairs.is_empty() {
        return Err(SpellError::EmptyVariable(format!("{row_var} x {col_var}")));
    }
    let mut row_levels: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    row_levels.sort_by(f64::total_cmp);
    row_levels.dedup();
    let mut col_levels: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    col_levels.sort_by(f64::total_cmp);
    col_levels.dedup();
    let mut counts = vec![vec![0u64; col_levels.len()]; row_levels.len()];
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for (r, c) in pairs {
        let i = row_levels
            .binary_search_by(|x| x.total_cmp(&r))
            .expect("level present");
        let j = col_levels
            .binary_search_by(|x| x.total_cmp(&c))
            .expect("level present");
        counts[i][j] += 1;
    }
    Ok(ContingencyTable {
        row_var: row_var.to_string(),
        col_var: col_var.to_string(),
        row_levels,
        col_levels,
        counts,
    })
}
