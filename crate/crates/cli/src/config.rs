//! Declarative pipeline configuration (TOML).
//!
//! One config file drives the whole workflow: input paths and column
//! mappings, the backfill start, partition boundaries, the ordered covariate
//! transform list, Gower feature bases, model formulas, and the evaluation
//! and forecasting knobs. Paths are resolved relative to the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use ilcf_core::calendar::YearMonth;
use ilcf_core::events::EventSchema;
use ilcf_core::panel::{LogBase, PanelSchema};
use ilcf_core::spatial::WeightScheme;
use ilcf_core::spells::HistorySchema;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad month `{field}` = `{value}` (expected YYYY-MM)")]
    BadMonth { field: &'static str, value: String },
    #[error("partition boundaries must satisfy train_end < calibration_end < test_end")]
    BadPartitions,
    #[error("transform {index}: {detail}")]
    BadTransform { index: usize, detail: String },
    #[error("model `{0}` has an empty name or duplicate name")]
    BadModelName(String),
    #[error("at least one model must be configured")]
    NoModels,
    #[error("unknown weight scheme `{0}`")]
    UnknownScheme(String),
    #[error("spatial-lag transform uses scheme `{scheme}` but no centroid file is configured")]
    MissingCentroids { scheme: String },
    #[error("gower scheme `{scheme}` has no feature list under [spatial.gower.*]")]
    MissingGowerFeatures { scheme: String },
    #[error("aggregate-events transform configured but no event file is set")]
    MissingEvents,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: RawData,
    #[serde(default)]
    schema: RawSchemas,
    #[serde(default)]
    build: RawBuild,
    #[serde(default)]
    partitions: RawPartitions,
    #[serde(default)]
    transforms: Vec<RawTransform>,
    #[serde(default)]
    spatial: RawSpatial,
    #[serde(default)]
    variance: RawVariance,
    #[serde(default)]
    models: Vec<RawModel>,
    #[serde(default)]
    evaluation: RawEvaluation,
    #[serde(default)]
    forecast: RawForecast,
    #[serde(default)]
    fitting: RawFitting,
    #[serde(default)]
    ebma: RawEbma,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawData {
    panel: String,
    leaders: String,
    #[serde(default)]
    events: Option<String>,
    #[serde(default)]
    centroids: Option<String>,
    #[serde(default)]
    country_names: Option<String>,
}

fn default_col(name: &str) -> String {
    name.to_string()
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSchemas {
    #[serde(default)]
    panel: RawPanelSchema,
    #[serde(default)]
    events: RawEventSchema,
    #[serde(default)]
    leaders: RawLeaderSchema,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPanelSchema {
    #[serde(default = "country_col")]
    country: String,
    #[serde(default = "year_col")]
    year: String,
    #[serde(default = "month_col")]
    month: String,
    #[serde(default = "irr_entry_col")]
    irr_entry: String,
    #[serde(default = "irr_exit_col")]
    irr_exit: String,
    #[serde(default = "ilc_col")]
    ilc: String,
}

fn country_col() -> String {
    default_col("country")
}
fn year_col() -> String {
    default_col("year")
}
fn month_col() -> String {
    default_col("month")
}
fn irr_entry_col() -> String {
    default_col("irr_entry")
}
fn irr_exit_col() -> String {
    default_col("irr_exit")
}
fn ilc_col() -> String {
    default_col("ilc")
}

impl Default for RawPanelSchema {
    fn default() -> Self {
        Self {
            country: country_col(),
            year: year_col(),
            month: month_col(),
            irr_entry: irr_entry_col(),
            irr_exit: irr_exit_col(),
            ilc: ilc_col(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEventSchema {
    #[serde(default = "country_col")]
    country: String,
    #[serde(default = "year_col")]
    year: String,
    #[serde(default = "month_col")]
    month: String,
    #[serde(default = "source_sector_col")]
    source_sector: String,
    #[serde(default = "target_sector_col")]
    target_sector: String,
    #[serde(default = "cameo_root_col")]
    cameo_root: String,
    #[serde(default = "count_col")]
    count: String,
}

fn source_sector_col() -> String {
    default_col("source_sector")
}
fn target_sector_col() -> String {
    default_col("target_sector")
}
fn cameo_root_col() -> String {
    default_col("cameo_root")
}
fn count_col() -> String {
    default_col("count")
}

impl Default for RawEventSchema {
    fn default() -> Self {
        Self {
            country: country_col(),
            year: year_col(),
            month: month_col(),
            source_sector: source_sector_col(),
            target_sector: target_sector_col(),
            cameo_root: cameo_root_col(),
            count: count_col(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLeaderSchema {
    #[serde(default = "country_col")]
    country: String,
    #[serde(default = "year_col")]
    year: String,
    #[serde(default = "month_col")]
    month: String,
    #[serde(default = "irr_exit_col")]
    irr_exit: String,
}

impl Default for RawLeaderSchema {
    fn default() -> Self {
        Self {
            country: country_col(),
            year: year_col(),
            month: month_col(),
            irr_exit: irr_exit_col(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBuild {
    #[serde(default = "default_backfill")]
    backfill_start: String,
}

fn default_backfill() -> String {
    "1955-01".to_string()
}

impl Default for RawBuild {
    fn default() -> Self {
        Self {
            backfill_start: default_backfill(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartitions {
    #[serde(default = "default_train_end")]
    train_end: String,
    #[serde(default = "default_calibration_end")]
    calibration_end: String,
    #[serde(default = "default_test_end")]
    test_end: String,
}

fn default_train_end() -> String {
    "2009-12".to_string()
}
fn default_calibration_end() -> String {
    "2012-04".to_string()
}
fn default_test_end() -> String {
    "2014-03".to_string()
}

impl Default for RawPartitions {
    fn default() -> Self {
        Self {
            train_end: default_train_end(),
            calibration_end: default_calibration_end(),
            test_end: default_test_end(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    op: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    var: Option<String>,
    #[serde(default)]
    quad: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    months: Option<i64>,
    #[serde(default)]
    base: Option<String>,
    #[serde(default)]
    offset: Option<f64>,
    #[serde(default)]
    scheme: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSpatial {
    #[serde(default)]
    gower: BTreeMap<String, RawGowerBasis>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGowerBasis {
    #[serde(default)]
    numeric: Vec<String>,
    #[serde(default)]
    categorical: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariance {
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for RawVariance {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    #[serde(default)]
    duration: Vec<String>,
    #[serde(default)]
    risk: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluation {
    #[serde(default = "default_f_beta")]
    f_beta: f64,
    #[serde(default = "default_window")]
    fuzzy_window_months: i64,
}

fn default_f_beta() -> f64 {
    1.0
}
fn default_window() -> i64 {
    6
}

impl Default for RawEvaluation {
    fn default() -> Self {
        Self {
            f_beta: default_f_beta(),
            fuzzy_window_months: default_window(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForecast {
    #[serde(default = "default_horizon")]
    horizon: usize,
    #[serde(default = "default_top_k")]
    top_k: usize,
}

fn default_horizon() -> usize {
    6
}
fn default_top_k() -> usize {
    20
}

impl Default for RawForecast {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            top_k: default_top_k(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFitting {
    #[serde(default = "default_grad_tol")]
    grad_tol_per_obs: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
}

fn default_grad_tol() -> f64 {
    1e-7
}
fn default_max_iter() -> usize {
    500
}

impl Default for RawFitting {
    fn default() -> Self {
        Self {
            grad_tol_per_obs: default_grad_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEbma {
    #[serde(default = "default_clamp")]
    prob_clamp: f64,
    #[serde(default = "default_bound")]
    coef_bound: f64,
    #[serde(default = "default_em_tol")]
    em_tol: f64,
    #[serde(default = "default_em_max_iter")]
    em_max_iter: usize,
}

fn default_clamp() -> f64 {
    1e-6
}
fn default_bound() -> f64 {
    20.0
}
fn default_em_tol() -> f64 {
    1e-8
}
fn default_em_max_iter() -> usize {
    10_000
}

impl Default for RawEbma {
    fn default() -> Self {
        Self {
            prob_clamp: default_clamp(),
            coef_bound: default_bound(),
            em_tol: default_em_tol(),
            em_max_iter: default_em_max_iter(),
        }
    }
}

/// One covariate transform, applied in configured order.
#[derive(Debug, Clone)]
pub enum Transform {
    AggregateEvents {
        name: String,
        quad: ilcf_core::events::QuadCategory,
        source: ilcf_core::events::Sector,
        target: ilcf_core::events::Sector,
    },
    Lag {
        var: String,
        months: i64,
    },
    Log {
        var: String,
        base: LogBase,
        offset: f64,
    },
    SpatialLag {
        var: String,
        scheme: WeightScheme,
    },
}

#[derive(Debug, Clone)]
pub struct GowerFeatures {
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub name: String,
    pub duration: Vec<String>,
    pub risk: Vec<String>,
}

/// Fully validated pipeline configuration with resolved paths.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub panel_path: PathBuf,
    pub leaders_path: PathBuf,
    pub events_path: Option<PathBuf>,
    pub centroids_path: Option<PathBuf>,
    pub country_names_path: Option<PathBuf>,
    pub panel_schema: PanelSchema,
    pub event_schema: EventSchema,
    pub leader_schema: HistorySchema,
    pub backfill_start: YearMonth,
    pub train_end: YearMonth,
    pub calibration_end: YearMonth,
    pub test_end: YearMonth,
    pub transforms: Vec<Transform>,
    pub gower_features: BTreeMap<String, GowerFeatures>,
    pub variance_threshold: f64,
    pub models: Vec<ModelConfig>,
    pub f_beta: f64,
    pub fuzzy_window_months: i64,
    pub horizon: usize,
    pub top_k: usize,
    pub fit_settings: ilcf_core::spdur::FitSettings,
    pub ebma_settings: ilcf_core::ebma::EbmaSettings,
    /// Raw bytes of the config file, hashed into the manifest.
    pub raw_bytes: Vec<u8>,
}

fn parse_month(field: &'static str, value: &str) -> Result<YearMonth, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadMonth {
        field,
        value: value.to_string(),
    })
}

fn parse_scheme(s: &str) -> Result<WeightScheme, ConfigError> {
    match s {
        "knn4" => Ok(WeightScheme::Knn4),
        "centdist.std" => Ok(WeightScheme::CentdistStd),
        "gower.events" => Ok(WeightScheme::GowerEvents),
        "gower.pol" => Ok(WeightScheme::GowerPol),
        "gower.econ" => Ok(WeightScheme::GowerEcon),
        other => Err(ConfigError::UnknownScheme(other.to_string())),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw_bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&raw_bytes);
        let raw: RawConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_raw(raw, base, raw_bytes)
    }

    fn from_raw(raw: RawConfig, base: &Path, raw_bytes: Vec<u8>) -> Result<Self, ConfigError> {
        let resolve = |p: &str| base.join(p);

        let train_end = parse_month("train_end", &raw.partitions.train_end)?;
        let calibration_end = parse_month("calibration_end", &raw.partitions.calibration_end)?;
        let test_end = parse_month("test_end", &raw.partitions.test_end)?;
        if !(train_end < calibration_end && calibration_end < test_end) {
            return Err(ConfigError::BadPartitions);
        }
        let backfill_start = parse_month("backfill_start", &raw.build.backfill_start)?;

        let mut transforms = Vec::new();
        for (index, t) in raw.transforms.iter().enumerate() {
            let need = |field: &str, v: &Option<String>| -> Result<String, ConfigError> {
                v.clone().ok_or_else(|| ConfigError::BadTransform {
                    index,
                    detail: format!("missing `{field}`"),
                })
            };
            let parsed = match t.op.as_str() {
                "aggregate-events" => {
                    if raw.data.events.is_none() {
                        return Err(ConfigError::MissingEvents);
                    }
                    Transform::AggregateEvents {
                        name: need("name", &t.name)?,
                        quad: need("quad", &t.quad)?.parse().map_err(|e| {
                            ConfigError::BadTransform {
                                index,
                                detail: format!("{e}"),
                            }
                        })?,
                        source: need("source", &t.source)?.parse().map_err(|e| {
                            ConfigError::BadTransform {
                                index,
                                detail: format!("{e}"),
                            }
                        })?,
                        target: need("target", &t.target)?.parse().map_err(|e| {
                            ConfigError::BadTransform {
                                index,
                                detail: format!("{e}"),
                            }
                        })?,
                    }
                }
                "lag" => Transform::Lag {
                    var: need("var", &t.var)?,
                    months: t.months.ok_or_else(|| ConfigError::BadTransform {
                        index,
                        detail: "missing `months`".into(),
                    })?,
                },
                "log" => {
                    let base_str = t.base.clone().unwrap_or_else(|| "10".to_string());
                    let log_base = match base_str.as_str() {
                        "10" => LogBase::Ten,
                        "e" => LogBase::Natural,
                        other => {
                            return Err(ConfigError::BadTransform {
                                index,
                                detail: format!("bad log base `{other}` (expected `10` or `e`)"),
                            })
                        }
                    };
                    Transform::Log {
                        var: need("var", &t.var)?,
                        base: log_base,
                        offset: t.offset.unwrap_or(1.0),
                    }
                }
                "spatial-lag" => {
                    let scheme = parse_scheme(&need("scheme", &t.scheme)?)?;
                    if raw.data.centroids.is_none()
                        && matches!(scheme, WeightScheme::Knn4 | WeightScheme::CentdistStd)
                    {
                        return Err(ConfigError::MissingCentroids {
                            scheme: scheme.label().to_string(),
                        });
                    }
                    if let WeightScheme::GowerEvents
                    | WeightScheme::GowerPol
                    | WeightScheme::GowerEcon = scheme
                    {
                        let key = scheme.label().trim_start_matches("gower.").to_string();
                        if !raw.spatial.gower.contains_key(&key) {
                            return Err(ConfigError::MissingGowerFeatures {
                                scheme: scheme.label().to_string(),
                            });
                        }
                    }
                    Transform::SpatialLag {
                        var: need("var", &t.var)?,
                        scheme,
                    }
                }
                other => {
                    return Err(ConfigError::BadTransform {
                        index,
                        detail: format!("unknown op `{other}`"),
                    })
                }
            };
            transforms.push(parsed);
        }

        if raw.models.is_empty() {
            return Err(ConfigError::NoModels);
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &raw.models {
            if m.name.is_empty() || m.name == "ensemble" || !seen.insert(m.name.clone()) {
                return Err(ConfigError::BadModelName(m.name.clone()));
            }
        }

        Ok(Self {
            panel_path: resolve(&raw.data.panel),
            leaders_path: resolve(&raw.data.leaders),
            events_path: raw.data.events.as_deref().map(resolve),
            centroids_path: raw.data.centroids.as_deref().map(resolve),
            country_names_path: raw.data.country_names.as_deref().map(resolve),
            panel_schema: PanelSchema {
                country: raw.schema.panel.country,
                year: raw.schema.panel.year,
                month: raw.schema.panel.month,
                irr_entry: raw.schema.panel.irr_entry,
                irr_exit: raw.schema.panel.irr_exit,
                ilc: raw.schema.panel.ilc,
            },
            event_schema: EventSchema {
                country: raw.schema.events.country,
                year: raw.schema.events.year,
                month: raw.schema.events.month,
                source_sector: raw.schema.events.source_sector,
                target_sector: raw.schema.events.target_sector,
                cameo_root: raw.schema.events.cameo_root,
                count: raw.schema.events.count,
            },
            leader_schema: HistorySchema {
                country: raw.schema.leaders.country,
                year: raw.schema.leaders.year,
                month: raw.schema.leaders.month,
                irr_exit: raw.schema.leaders.irr_exit,
            },
            backfill_start,
            train_end,
            calibration_end,
            test_end,
            transforms,
            gower_features: raw
                .spatial
                .gower
                .into_iter()
                .map(|(k, v)| {
                    (
                        k,
                        GowerFeatures {
                            numeric: v.numeric,
                            categorical: v.categorical,
                        },
                    )
                })
                .collect(),
            variance_threshold: raw.variance.threshold,
            models: raw
                .models
                .into_iter()
                .map(|m| ModelConfig {
                    name: m.name,
                    duration: m.duration,
                    risk: m.risk,
                })
                .collect(),
            f_beta: raw.evaluation.f_beta,
            fuzzy_window_months: raw.evaluation.fuzzy_window_months,
            horizon: raw.forecast.horizon,
            top_k: raw.forecast.top_k,
            fit_settings: ilcf_core::spdur::FitSettings {
                grad_tol_per_obs: raw.fitting.grad_tol_per_obs,
                max_iter: raw.fitting.max_iter,
            },
            ebma_settings: ilcf_core::ebma::EbmaSettings {
                prob_clamp: raw.ebma.prob_clamp,
                coef_bound: raw.ebma.coef_bound,
                em_tol: raw.ebma.em_tol,
                em_max_iter: raw.ebma.em_max_iter,
                ..Default::default()
            },
            raw_bytes,
        })
    }
}
