//! Calendar month arithmetic for monthly panel data.
//!
//! Panels are indexed by country and calendar month. All lagging, spell
//! counting, and horizon math is done on calendar months, not row offsets,
//! so gaps in a country's series never silently shift alignment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A calendar month, e.g. 2001-03.
///
/// ```
/// use ilcf_core::calendar::YearMonth;
///
/// let dec: YearMonth = "2006-12".parse().unwrap();
/// assert_eq!(dec.next().to_string(), "2007-01");
/// assert_eq!(dec.months_until(dec.add_months(67)), 67);
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalendarError {
    #[error("month {0} out of range 1..=12")]
    MonthOutOfRange(u32),
    #[error("cannot parse `{0}` as YYYY-MM")]
    Parse(String),
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self, CalendarError> {
        if !(1..=12).contains(&month) {
            return Err(CalendarError::MonthOutOfRange(u32::from(month)));
        }
        Ok(Self { year, month })
    }

    /// Linear month index; consecutive calendar months differ by exactly 1.
    pub fn index(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn from_index(index: i64) -> Self {
        let year = index.div_euclid(12);
        let month = index.rem_euclid(12) + 1;
        Self {
            year: year as i32,
            month: month as u8,
        }
    }

    pub fn add_months(self, k: i64) -> Self {
        Self::from_index(self.index() + k)
    }

    /// Signed number of calendar months from `self` to `other`.
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.index() - self.index()
    }

    pub fn next(self) -> Self {
        self.add_months(1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = CalendarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| CalendarError::Parse(s.to_string()))?;
        let year: i32 = y.parse().map_err(|_| CalendarError::Parse(s.to_string()))?;
        let month: u8 = m.parse().map_err(|_| CalendarError::Parse(s.to_string()))?;
        Self::new(year, month).map_err(|_| CalendarError::Parse(s.to_string()))
    }
}

/// Numeric country identifier (e.g. a Gleditsch-Ward or COW code).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountryId(pub i64);

impl fmt::Display for CountryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
