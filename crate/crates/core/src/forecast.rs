//! Multi-month forecasts under frozen covariates.
//!
//! Covariates stay at their last observed values while the duration counter
//! advances month by month, so each horizon step reuses the conditional
//! hazard with survival accumulating across the horizon. The window
//! probability aggregates the monthly values as 1 - prod(1 - p_t).

use thiserror::Error;

use crate::calendar::{CountryId, YearMonth};
use crate::ebma::{EbmaSettings, EnsembleFit};
use crate::spdur::SpdurFit;

/// A country's frozen covariate profile at the forecast origin.
#[derive(Debug, Clone)]
pub struct CountryState {
    pub country: CountryId,
    /// Duration value of the last observed month.
    pub duration: f64,
    pub dur_covs: Vec<f64>,
    pub risk_covs: Vec<f64>,
}

/// Forecast for one country over a horizon window.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEntry {
    pub country: CountryId,
    /// First forecast month.
    pub start: YearMonth,
    pub monthly: Vec<f64>,
    pub p_window: f64,
}

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("component state lists disagree on countries (component {component})")]
    MisalignedCountries { component: usize },
    #[error("component count {got} does not match ensemble model count {expected}")]
    ComponentCountMismatch { got: usize, expected: usize },
}

/// 1 - prod(1 - p) over the monthly probabilities.
pub fn window_probability(monthly: &[f64]) -> f64 {
    1.0 - monthly.iter().map(|p| 1.0 - p).product::<f64>()
}

/// Monthly conditional hazards for one state: step s predicts the month
/// (d + s - 1, d + s] where d is the duration at the origin.
pub fn monthly_path(fit: &SpdurFit, state: &CountryState, horizon: usize) -> Vec<f64> {
    (0..horizon)
        .map(|s| {
            fit.predict(&state.dur_covs, &state.risk_covs, state.duration + s as f64)
                .cond_hazard
        })
        .collect()
}

/// Forecasts every country under a single model.
pub fn forecast_model(
    fit: &SpdurFit,
    states: &[CountryState],
    start: YearMonth,
    horizon: usize,
) -> Result<Vec<ForecastEntry>, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    Ok(states
        .iter()
        .map(|state| {
            let monthly = monthly_path(fit, state, horizon);
            ForecastEntry {
                country: state.country,
                start,
                p_window: window_probability(&monthly),
                monthly,
            }
        })
        .collect())
}

/// Forecasts under the ensemble: per month, each component's conditional
/// hazard is calibrated and weight-averaged, then the ensemble months
/// aggregate to the window probability. Component state lists must cover the
/// same countries in the same order (one entry per component model).
pub fn forecast_ensemble(
    ensemble: &EnsembleFit,
    components: &[(&SpdurFit, &[CountryState])],
    start: YearMonth,
    horizon: usize,
    settings: &EbmaSettings,
) -> Result<Vec<ForecastEntry>, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    if components.len() != ensemble.models.len() {
        return Err(ForecastError::ComponentCountMismatch {
            got: components.len(),
            expected: ensemble.models.len(),
        });
    }
    let n_countries = components.first().map_or(0, |(_, s)| s.len());
    for (idx, (_, states)) in components.iter().enumerate() {
        if states.len() != n_countries
            || states
                .iter()
                .zip(components[0].1)
                .any(|(a, b)| a.country != b.country)
        {
            return Err(ForecastError::MisalignedCountries { component: idx });
        }
    }
    let mut out = Vec::with_capacity(n_countries);
    for c in 0..n_countries {
        let mut monthly = vec![0.0; horizon];
        for (k, (fit, states)) in components.iter().enumerate() {
            let path = monthly_path(fit, &states[c], horizon);
            let cal = &ensemble.calibrations[k];
            let w = ensemble.weights[k];
            for (m, p) in monthly.iter_mut().zip(path) {
                *m += w * cal.apply(p, settings);
            }
        }
        out.push(ForecastEntry {
            country: components[0].1[c].country,
            start,
            p_window: window_probability(&monthly),
            monthly,
        });
    }
    Ok(out)
}

/// Top-k entries, descending by window probability, ties by country id.
pub fn rank_table(entries: &[ForecastEntry], k: usize) -> Vec<ForecastEntry> {
    let mut ranked: Vec<ForecastEntry> = entries.to_vec();
    ranked.sort_by(|a, b| {
        b.p_window
            .total_cmp(&a.p_window)
            .then(a.country.cmp(&b.country))
    });
    ranked.truncate(k);
    ranked
}
