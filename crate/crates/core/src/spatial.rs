//! Spatial weight matrices and spatially lagged covariates.
//!
//! Five weighting schemes: four nearest neighbors by great-circle distance,
//! inverse centroid distance, and Gower similarity over event, political, or
//! economic feature vectors. Rows with any usable neighbor are standardized
//! to sum to one; the diagonal is always zero.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::calendar::CountryId;
use crate::panel::{Panel, PanelError};

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two (lat, lon) points, in kilometers.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    Knn4,
    CentdistStd,
    GowerEvents,
    GowerPol,
    GowerEcon,
}

impl WeightScheme {
    /// Label used in derived covariate names, `W.<scheme>.<variable>`.
    pub fn label(self) -> &'static str {
        match self {
            WeightScheme::Knn4 => "knn4",
            WeightScheme::CentdistStd => "centdist.std",
            WeightScheme::GowerEvents => "gower.events",
            WeightScheme::GowerPol => "gower.pol",
            WeightScheme::GowerEcon => "gower.econ",
        }
    }
}

/// Row-standardized country-by-country weight matrix.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub scheme: WeightScheme,
    countries: Vec<CountryId>,
    weights: Vec<f64>,
    /// Countries dropped from the matrix (e.g. missing centroid).
    pub excluded: Vec<CountryId>,
    /// Countries whose row has no usable neighbor (all similarities zero).
    pub empty_rows: Vec<CountryId>,
}

impl WeightMatrix {
    fn new(scheme: WeightScheme, countries: Vec<CountryId>) -> Self {
        let n = countries.len();
        Self {
            scheme,
            countries,
            weights: vec![0.0; n * n],
            excluded: Vec::new(),
            empty_rows: Vec::new(),
        }
    }

    pub fn countries(&self) -> &[CountryId] {
        &self.countries
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn position(&self, country: CountryId) -> Option<usize> {
        self.countries.binary_search(&country).ok()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.countries.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.countries.len();
        &self.weights[i * n..(i + 1) * n]
    }

    fn set(&mut self, i: usize, j: usize, w: f64) {
        let n = self.countries.len();
        self.weights[i * n + j] = w;
    }

    /// Divides every row with positive mass by its sum.
    fn standardize_rows(&mut self) {
        let n = self.countries.len();
        for i in 0..n {
            let sum: f64 = self.row(i).iter().sum();
            if sum > 0.0 {
                for j in 0..n {
                    self.weights[i * n + j] /= sum;
                }
            } else {
                self.empty_rows.push(self.countries[i]);
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("need at least 2 countries with usable data, got {0}")]
    TooFewCountries(usize),
    #[error("countries {0} and {1} have coincident centroids (distance 0)")]
    CoincidentCentroids(CountryId, CountryId),
    #[error("all features are constant; Gower ranges are zero")]
    AllConstantFeatures,
    #[error("country {country} feature vector has length {got}, expected {expected}")]
    FeatureLengthMismatch {
        country: CountryId,
        got: usize,
        expected: usize,
    },
    #[error("feature {index} mixes numeric and categorical values")]
    MixedFeatureKinds { index: usize },
    #[error("panel error: {0}")]
    Panel(#[from] PanelError),
}

#[allow(clippy::type_complexity)]
fn valid_centroids(
    centroids: &BTreeMap<CountryId, (f64, f64)>,
) -> (Vec<(CountryId, (f64, f64))>, Vec<CountryId>) {
    let mut valid = Vec::new();
    let mut excluded = Vec::new();
    for (&c, &(lat, lon)) in centroids {
        if lat.is_finite() && lon.is_finite() {
            valid.push((c, (lat, lon)));
        } else {
            excluded.push(c);
        }
    }
    (valid, excluded)
}

/// Each row weights its four nearest countries by great-circle distance at
/// 1/4 (1/k when fewer than four other countries exist). Distance ties break
/// toward the lower country id.
pub fn knn4_weights(
    centroids: &BTreeMap<CountryId, (f64, f64)>,
) -> Result<WeightMatrix, SpatialError> {
    let (valid, excluded) = valid_centroids(centroids);
    if valid.len() < 2 {
        return Err(SpatialError::TooFewCountries(valid.len()));
    }
    let countries: Vec<CountryId> = valid.iter().map(|(c, _)| *c).collect();
    let mut w = WeightMatrix::new(WeightScheme::Knn4, countries);
    w.excluded = excluded;
    let n = valid.len();
    let k = 4.min(n - 1);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (haversine_km(valid[i].1, valid[j].1), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(valid[a.1].0.cmp(&valid[b.1].0)));
        for &(_, j) in others.iter().take(k) {
            w.set(i, j, 1.0 / k as f64);
        }
    }
    Ok(w)
}

/// Off-diagonal weights proportional to inverse great-circle distance,
/// row-standardized.
pub fn centdist_weights(
    centroids: &BTreeMap<CountryId, (f64, f64)>,
) -> Result<WeightMatrix, SpatialError> {
    let (valid, excluded) = valid_centroids(centroids);
    if valid.len() < 2 {
        return Err(SpatialError::TooFewCountries(valid.len()));
    }
    let countries: Vec<CountryId> = valid.iter().map(|(c, _)| *c).collect();
    let mut w = WeightMatrix::new(WeightScheme::CentdistStd, countries);
    w.excluded = excluded;
    let n = valid.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = haversine_km(valid[i].1, valid[j].1);
            if d == 0.0 {
                return Err(SpatialError::CoincidentCentroids(valid[i].0, valid[j].0));
            }
            w.set(i, j, 1.0 / d);
            w.set(j, i, 1.0 / d);
        }
    }
    w.standardize_rows();
    Ok(w)
}

/// One mixed-type feature value for Gower dissimilarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(i64),
    Missing,
}

/// Which feature basis a Gower matrix was built on (naming only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GowerBasis {
    Events,
    Pol,
    Econ,
}

impl GowerBasis {
    fn scheme(self) -> WeightScheme {
        match self {
            GowerBasis::Events => WeightScheme::GowerEvents,
            GowerBasis::Pol => WeightScheme::GowerPol,
            GowerBasis::Econ => WeightScheme::GowerEcon,
        }
    }
}

/// Gower dissimilarity: per-feature |x_i - x_j| / range for numeric features,
/// mismatch indicator for categorical, averaged over features available for
/// the pair. Weights are similarities (1 - d), diagonal zeroed, rows
/// standardized. Zero-range numeric features are uninformative and skipped.
pub fn gower_weights(
    features: &BTreeMap<CountryId, Vec<FeatureValue>>,
    basis: GowerBasis,
) -> Result<WeightMatrix, SpatialError> {
    if features.len() < 2 {
        return Err(SpatialError::TooFewCountries(features.len()));
    }
    let countries: Vec<CountryId> = features.keys().copied().collect();
    let vectors: Vec<&Vec<FeatureValue>> = countries.iter().map(|c| &features[c]).collect();
    let p = vectors[0].len();
    for (c, v) in countries.iter().zip(&vectors) {
        if v.len() != p {
            return Err(SpatialError::FeatureLengthMismatch {
                country: *c,
                got: v.len(),
                expected: p,
            });
        }
    }

    // Feature ranges; also checks each position stays one kind.
    let mut ranges = vec![None::<(f64, f64)>; p];
    let mut categorical = vec![false; p];
    let mut seen_numeric = vec![false; p];
    for v in &vectors {
        for (idx, value) in v.iter().enumerate() {
            match value {
                FeatureValue::Numeric(x) => {
                    if categorical[idx] {
                        return Err(SpatialError::MixedFeatureKinds { index: idx });
                    }
                    seen_numeric[idx] = true;
                    ranges[idx] = Some(match ranges[idx] {
                        None => (*x, *x),
                        Some((lo, hi)) => (lo.min(*x), hi.max(*x)),
                    });
                }
                FeatureValue::Categorical(_) => {
                    if seen_numeric[idx] {
                        return Err(SpatialError::MixedFeatureKinds { index: idx });
                    }
                    categorical[idx] = true;
                }
                FeatureValue::Missing => {}
            }
        }
    }
    let informative = (0..p).any(|idx| {
        if categorical[idx] {
            let mut distinct = vectors
                .iter()
                .filter_map(|v| match v[idx] {
                    FeatureValue::Categorical(l) => Some(l),
                    _ => None,
                })
                .collect::<Vec<_>>();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len() > 1
        } else {
            matches!(ranges[idx], Some((lo, hi)) if hi > lo)
        }
    });
    if !informative {
        return Err(SpatialError::AllConstantFeatures);
    }

    let n = countries.len();
    let mut w = WeightMatrix::new(basis.scheme(), countries);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sum = 0.0;
            let mut used = 0usize;
            for idx in 0..p {
                match (vectors[i][idx], vectors[j][idx]) {
                    (FeatureValue::Numeric(a), FeatureValue::Numeric(b)) => {
                        if let Some((lo, hi)) = ranges[idx] {
                            if hi > lo {
                                sum += (a - b).abs() / (hi - lo);
                                used += 1;
                            }
                        }
                    }
                    (FeatureValue::Categorical(a), FeatureValue::Categorical(b)) => {
                        sum += f64::from(a != b);
                        used += 1;
                    }
                    _ => {}
                }
            }
            // No comparable features for the pair: no evidence of similarity.
            let s = if used == 0 {
                0.0
            } else {
                1.0 - sum / used as f64
            };
            w.set(i, j, s);
            w.set(j, i, s);
        }
    }
    w.standardize_rows();
    Ok(w)
}

/// Gower dissimilarity between two countries' feature vectors, with ranges
/// taken over the full feature map. `None` when the pair shares no comparable
/// informative feature.
pub fn gower_dissimilarity(
    features: &BTreeMap<CountryId, Vec<FeatureValue>>,
    a: CountryId,
    b: CountryId,
) -> Option<f64> {
    let va = features.get(&a)?;
    let vb = features.get(&b)?;
    let mut ranges: Vec<Option<(f64, f64)>> = vec![None; va.len()];
    for v in features.values() {
        for (idx, value) in v.iter().enumerate() {
            if let FeatureValue::Numeric(x) = value {
                ranges[idx] = Some(match ranges[idx] {
                    None => (*x, *x),
                    Some((lo, hi)) => (lo.min(*x), hi.max(*x)),
                });
            }
        }
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for idx in 0..va.len().min(vb.len()) {
        match (va[idx], vb[idx]) {
            (FeatureValue::Numeric(x), FeatureValue::Numeric(y)) => {
                if let Some((lo, hi)) = ranges[idx] {
                    if hi > lo {
                        sum += (x - y).abs() / (hi - lo);
                        used += 1;
                    }
                }
            }
            (FeatureValue::Categorical(x), FeatureValue::Categorical(y)) => {
                sum += f64::from(x != y);
                used += 1;
            }
            _ => {}
        }
    }
    if used == 0 {
        None
    } else {
        Some(sum / used as f64)
    }
}

/// Adds `W.<scheme>.<name>`: the neighbor-weighted average of a covariate per
/// country-month. Missing neighbor values are excluded and the remaining
/// weights renormalized; a row with no usable neighbor value is missing.
/// Countries absent from the weight matrix get missing output.
pub fn spatial_lag(panel: &Panel, name: &str, w: &WeightMatrix) -> Result<Panel, SpatialError> {
    let col = panel
        .column(name)
        .ok_or_else(|| PanelError::UnknownCovariate(name.to_string()))?
        .to_vec();
    let mut values: Vec<Option<f64>> = Vec::with_capacity(panel.n_rows());
    for rec in panel.records() {
        let Some(i) = w.position(rec.country) else {
            values.push(None);
            continue;
        };
        let mut num = 0.0;
        let mut denom = 0.0;
        for (j, &wij) in w.row(i).iter().enumerate() {
            if wij <= 0.0 {
                continue;
            }
            let neighbor = w.countries()[j];
            if let Some(row) = panel.row_of(neighbor, rec.ym) {
                if let Some(x) = col[row] {
                    num += wij * x;
                    denom += wij;
                }
            }
        }
        values.push(if denom > 0.0 { Some(num / denom) } else { None });
    }
    let lagged = panel.with_column(&format!("W.{}.{name}", w.scheme.label()), values)?;
    Ok(lagged)
}
