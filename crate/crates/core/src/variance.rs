//! Between/within-country variance decomposition of panel covariates.
//!
//! Total sum of squares splits into a between component (each observation's
//! country mean around the grand mean) and a within component (each
//! observation around its country mean). Summing the between part per row
//! keeps the additive identity exact on unbalanced panels. Covariates whose
//! between fraction exceeds the threshold are classified static and belong in
//! a risk equation; the rest are dynamic timing variables.

use thiserror::Error;

use crate::calendar::CountryId;
use crate::panel::{Panel, PanelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Static,
    Dynamic,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Static => "static",
            Classification::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub covariate: String,
    pub ss_total: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    pub between_fraction: f64,
    pub classification: Classification,
    pub n_obs: usize,
}

#[derive(Debug, Error)]
pub enum VarianceError {
    #[error("panel error: {0}")]
    Panel(#[from] PanelError),
    #[error("covariate `{0}` has no non-missing values")]
    AllMissing(String),
    #[error("covariate `{0}` needs at least 2 non-missing values")]
    SingleValue(String),
    #[error("covariate `{0}` is constant; between fraction undefined")]
    ZeroVariance(String),
}

/// Decomposes one covariate's sum of squares, listwise over missing values.
pub fn decompose(
    panel: &Panel,
    name: &str,
    threshold: f64,
) -> Result<VarianceReport, VarianceError> {
    let col = panel.series(name)?;
    let obs: Vec<(CountryId, f64)> = panel
        .records()
        .iter()
        .zip(col.iter())
        .filter_map(|(r, v)| v.map(|x| (r.country, x)))
        .collect();
    if obs.is_empty() {
        return Err(VarianceError::AllMissing(name.to_string()));
    }
    if obs.len() < 2 {
        return Err(VarianceError::SingleValue(name.to_string()));
    }

    let n = obs.len() as f64;
    let grand_mean = obs.iter().map(|(_, x)| x).sum::<f64>() / n;
    let mut country_sums: std::collections::BTreeMap<CountryId, (f64, f64)> = Default::default();
    for (c, x) in &obs {
        let e = country_sums.entry(*c).or_insert((0.0, 0.0));
        e.0 += x;
        e.1 += 1.0;
    }
    let country_mean = |c: CountryId| -> f64 { country_sums[&c].0 / country_sums[&c].1 };

    let mut ss_total = 0.0;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (c, x) in &obs {
        let cm = country_mean(*c);
        ss_total += (x - grand_mean).powi(2);
        ss_between += (cm - grand_mean).powi(2);
        ss_within += (x - cm).powi(2);
    }
    if ss_total == 0.0 {
        return Err(VarianceError::ZeroVariance(name.to_string()));
    }
    let between_fraction = ss_between / ss_total;
    let classification = if between_fraction > threshold {
        Classification::Static
    } else {
        Classification::Dynamic
    };
    Ok(VarianceReport {
        covariate: name.to_string(),
        ss_total,
        ss_between,
        ss_within,
        between_fraction,
        classification,
        n_obs: obs.len(),
    })
}

/// Decomposes every covariate that is decomposable, sorted by descending
/// between fraction (ties by name). Covariates that error out (all missing,
/// constant, single value) are skipped.
pub fn decompose_all(panel: &Panel, threshold: f64) -> Vec<VarianceReport> {
    let mut reports: Vec<VarianceReport> = panel
        .column_names()
        .filter_map(|name| decompose(panel, name, threshold).ok())
        .collect();
    reports.sort_by(|a, b| {
        b.between_fraction
            .total_cmp(&a.between_fraction)
            .then_with(|| a.covariate.cmp(&b.covariate))
    });
    reports
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::calendar::YearMonth;
    use crate::panel::PanelRecord;

    fn two_country_panel(values: Vec<Option<f64>>) -> Panel {
        let n = values.len();
        assert_eq!(n % 2, 0);
        let rows: Vec<PanelRecord> = (0..n)
            .map(|i| PanelRecord {
                country: CountryId(if i < n / 2 { 1 } else { 2 }),
                ym: YearMonth::new(2001, (i % (n / 2)) as u8 + 1).unwrap(),
                irr_entry: 0,
                irr_exit: 0,
                ilc: 0,
            })
            .collect();
        let mut cols = BTreeMap::new();
        cols.insert("x".to_string(), values);
        Panel::from_records(rows, cols).unwrap()
    }

    #[test]
    fn hand_arithmetic_fixture() {
        // Countries {1,3} and {5,7}: grand mean 4, country means 2 and 6.
        let panel = two_country_panel(vec![Some(1.0), Some(3.0), Some(5.0), Some(7.0)]);
        let report = decompose(&panel, "x", 0.5).unwrap();
        assert_eq!(report.ss_total, 20.0);
        assert_eq!(report.ss_between, 16.0);
        assert_eq!(report.ss_within, 4.0);
        assert_eq!(report.between_fraction, 0.8);
        assert_eq!(report.classification, Classification::Static);
    }

    #[test]
    fn constant_within_country_is_fully_between() {
        let panel = two_country_panel(vec![Some(2.0), Some(2.0), Some(9.0), Some(9.0)]);
        let report = decompose(&panel, "x", 0.5).unwrap();
        assert_eq!(report.ss_within, 0.0);
        assert_eq!(report.between_fraction, 1.0);
        assert_eq!(report.classification, Classification::Static);
    }

    #[test]
    fn identical_across_countries_is_fully_within() {
        // Same series in both countries: country means equal the grand mean.
        let panel = two_country_panel(vec![Some(1.0), Some(5.0), Some(1.0), Some(5.0)]);
        let report = decompose(&panel, "x", 0.5).unwrap();
        assert_eq!(report.ss_between, 0.0);
        assert_eq!(report.between_fraction, 0.0);
        assert_eq!(report.classification, Classification::Dynamic);
    }

    #[test]
    fn missing_values_are_listwise_dropped() {
        let panel = two_country_panel(vec![Some(1.0), None, Some(5.0), Some(7.0)]);
        let report = decompose(&panel, "x", 0.5).unwrap();
        assert_eq!(report.n_obs, 3);
        let identity = report.ss_between + report.ss_within;
        assert!((identity - report.ss_total).abs() <= 1e-12 * report.ss_total);
    }

    #[test]
    fn degenerate_inputs_error() {
        let panel = two_country_panel(vec![None, None, None, None]);
        assert!(matches!(
            decompose(&panel, "x", 0.5),
            Err(VarianceError::AllMissing(_))
        ));
        let panel = two_country_panel(vec![Some(1.0), None, None, None]);
        assert!(matches!(
            decompose(&panel, "x", 0.5),
            Err(VarianceError::SingleValue(_))
        ));
        let panel = two_country_panel(vec![Some(4.0), Some(4.0), Some(4.0), Some(4.0)]);
        assert!(matches!(
            decompose(&panel, "x", 0.5),
            Err(VarianceError::ZeroVariance(_))
        ));
    }

    #[test]
    fn report_is_sorted_by_between_fraction() {
        let rows: Vec<PanelRecord> = (0..4)
            .map(|i| PanelRecord {
                country: CountryId(if i < 2 { 1 } else { 2 }),
                ym: YearMonth::new(2001, (i % 2) as u8 + 1).unwrap(),
                irr_entry: 0,
                irr_exit: 0,
                ilc: 0,
            })
            .collect();
        let mut cols = BTreeMap::new();
        cols.insert(
            "between_heavy".to_string(),
            vec![Some(2.0), Some(2.0), Some(9.0), Some(9.0)],
        );
        cols.insert(
            "within_heavy".to_string(),
            vec![Some(1.0), Some(5.0), Some(1.0), Some(5.0)],
        );
        let panel = Panel::from_records(rows, cols).unwrap();
        let reports = decompose_all(&panel, 0.5);
        assert_eq!(reports[0].covariate, "between_heavy");
        assert_eq!(reports[1].covariate, "within_heavy");
    }
}
