//! Stage orchestration: build -> covariates -> train -> calibrate -> test ->
//! forecast, with a manifest for reproducibility.
//!
//! Every stage reads its inputs from the artifact directory, assembles its
//! outputs in memory, and commits them together, so a failed stage leaves no
//! partial artifacts. The manifest records the config hash, input hashes,
//! seed, and one hash per artifact; reruns on identical inputs are
//! byte-identical. Model fits see only training-partition rows and ensemble
//! weights only calibration rows, which is what the leakage tests pin down.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use ilcf_core::calendar::CountryId;
use ilcf_core::ebma::{self, EnsembleFit};
use ilcf_core::eval::{self, Frequency, MonthlyPrediction, ScoredSet};
use ilcf_core::events::{self, EventRecord};
use ilcf_core::forecast::{self, CountryState};
use ilcf_core::panel::{Panel, PanelError};
use ilcf_core::spatial::{self, FeatureValue, GowerBasis, WeightMatrix, WeightScheme};
use ilcf_core::spdur::{self, ModelData, SpdurFit, SpdurSpec};
use ilcf_core::spells;
use ilcf_core::variance;

use crate::config::{PipelineConfig, Transform};

pub const STAGES: [Stage; 7] = [
    Stage::BuildSpells,
    Stage::BuildLags,
    Stage::DecomposeVariance,
    Stage::Fit,
    Stage::Calibrate,
    Stage::Evaluate,
    Stage::Forecast,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    BuildSpells,
    BuildLags,
    DecomposeVariance,
    Fit,
    Calibrate,
    Evaluate,
    Forecast,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildSpells => "build-spells",
            Stage::BuildLags => "build-lags",
            Stage::DecomposeVariance => "decompose-variance",
            Stage::Fit => "fit",
            Stage::Calibrate => "calibrate",
            Stage::Evaluate => "evaluate",
            Stage::Forecast => "forecast",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        STAGES.iter().copied().find(|s| s.name() == name)
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing upstream artifact `{artifact}`; run stage `{run_first}` first")]
    MissingUpstream {
        artifact: String,
        run_first: &'static str,
    },
    #[error("config does not match the manifest already in the output directory")]
    ConfigChanged,
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Spell(#[from] spells::SpellError),
    #[error(transparent)]
    Event(#[from] events::EventError),
    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),
    #[error("model `{model}`: {source}")]
    Model {
        model: String,
        source: spdur::SpdurError,
    },
    #[error(transparent)]
    Ebma(#[from] ebma::EbmaError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Forecast(#[from] forecast::ForecastError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("covariate `{var}` not found for transform")]
    MissingTransformInput { var: String },
    #[error("gower feature `{feature}` has no training-window values for any country")]
    EmptyGowerFeature { feature: String },
    #[error("no countries available to forecast")]
    NothingToForecast,
}

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: StageError,
}

/// Reproducibility record written next to the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub partitions: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
    seed: u64,
    jobs: usize,
}

/// In-memory outputs of one stage, committed together.
struct StageOutput {
    files: Vec<(String, Vec<u8>)>,
}

impl StageOutput {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, rel: &str, bytes: Vec<u8>) {
        self.files.push((rel.to_string(), bytes));
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: &Path, seed: u64, jobs: usize) -> Self {
        Self {
            config,
            out: out.to_path_buf(),
            seed,
            jobs: jobs.max(1),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Runs the full workflow in order.
    pub fn run(&self) -> Result<(), PipelineError> {
        for stage in STAGES {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    pub fn run_stage(&self, stage: Stage) -> Result<(), PipelineError> {
        let result = match stage {
            Stage::BuildSpells => self.build_spells(),
            Stage::BuildLags => self.build_lags(),
            Stage::DecomposeVariance => self.decompose_variance(),
            Stage::Fit => self.fit(),
            Stage::Calibrate => self.calibrate(),
            Stage::Evaluate => self.evaluate(),
            Stage::Forecast => self.forecast(),
        };
        result.map_err(|source| PipelineError {
            stage: stage.name(),
            source,
        })
    }

    // ---- manifest and file plumbing ------------------------------------

    fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.json")
    }

    fn fresh_manifest(&self) -> Result<Manifest, StageError> {
        let mut inputs = BTreeMap::new();
        let mut hash_input = |label: &str, path: &Path| -> Result<(), StageError> {
            let bytes = std::fs::read(path).map_err(|source| StageError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            inputs.insert(label.to_string(), sha256_hex(&bytes));
            Ok(())
        };
        hash_input("panel", &self.config.panel_path)?;
        hash_input("leaders", &self.config.leaders_path)?;
        if let Some(p) = &self.config.events_path {
            hash_input("events", p)?;
        }
        if let Some(p) = &self.config.centroids_path {
            hash_input("centroids", p)?;
        }
        if let Some(p) = &self.config.country_names_path {
            hash_input("country_names", p)?;
        }
        let mut partitions = BTreeMap::new();
        partitions.insert("train_end".into(), self.config.train_end.to_string());
        partitions.insert(
            "calibration_end".into(),
            self.config.calibration_end.to_string(),
        );
        partitions.insert("test_end".into(), self.config.test_end.to_string());
        Ok(Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_sha256: sha256_hex(&self.config.raw_bytes),
            inputs,
            partitions,
            artifacts: BTreeMap::new(),
        })
    }

    fn load_or_create_manifest(&self) -> Result<Manifest, StageError> {
        let path = self.manifest_path();
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(|source| StageError::Io {
                path: path.clone(),
                source,
            })?;
            let manifest: Manifest = serde_json::from_slice(&bytes)?;
            if manifest.config_sha256 != sha256_hex(&self.config.raw_bytes) {
                return Err(StageError::ConfigChanged);
            }
            Ok(manifest)
        } else {
            self.fresh_manifest()
        }
    }

    /// Writes a stage's outputs; on failure removes whatever it had written.
    fn commit(&self, output: StageOutput) -> Result<(), StageError> {
        let mut manifest = self.load_or_create_manifest()?;
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<(), StageError> {
            for (rel, bytes) in &output.files {
                let path = self.out.join(rel);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|source| StageError::Io {
                        path: parent.to_path_buf(),
                        source,
                    })?;
                }
                std::fs::write(&path, bytes).map_err(|source| StageError::Io {
                    path: path.clone(),
                    source,
                })?;
                written.push(path);
                manifest.artifacts.insert(rel.clone(), sha256_hex(bytes));
            }
            let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
            std::fs::write(self.manifest_path(), manifest_bytes).map_err(|source| {
                StageError::Io {
                    path: self.manifest_path(),
                    source,
                }
            })?;
            Ok(())
        })();
        if result.is_err() {
            for path in written {
                let _ = std::fs::remove_file(path);
            }
        }
        result
    }

    fn require(&self, rel: &str, run_first: &'static str) -> Result<PathBuf, StageError> {
        let path = self.out.join(rel);
        if !path.exists() {
            return Err(StageError::MissingUpstream {
                artifact: rel.to_string(),
                run_first,
            });
        }
        Ok(path)
    }

    fn read_panel(&self, path: &Path) -> Result<Panel, StageError> {
        let file = std::fs::File::open(path).map_err(|source| StageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        // Artifact CSVs always use the canonical column names.
        Ok(Panel::from_csv(file, &Default::default())?)
    }

    // ---- stages ---------------------------------------------------------

    fn build_spells(&self) -> Result<(), StageError> {
        let file =
            std::fs::File::open(&self.config.panel_path).map_err(|source| StageError::Io {
                path: self.config.panel_path.clone(),
                source,
            })?;
        let panel = Panel::from_csv(file, &self.config.panel_schema)?;
        let leaders =
            std::fs::File::open(&self.config.leaders_path).map_err(|source| StageError::Io {
                path: self.config.leaders_path.clone(),
                source,
            })?;
        let history = spells::read_history(leaders, &self.config.leader_schema)?;
        let built = spells::build_spells(&panel, &history, self.config.backfill_start)?;
        for w in &built.warnings {
            eprintln!("warning: {w}");
        }
        let mut output = StageOutput::new();
        output.add("spells.csv", panel_to_csv(&built.panel));
        output.add("warnings.txt", {
            let mut text = built.warnings.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            text.into_bytes()
        });
        self.commit(output)
    }

    fn build_lags(&self) -> Result<(), StageError> {
        let spells_path = self.require("spells.csv", "build-spells")?;
        let mut panel = self.read_panel(&spells_path)?;

        let events: Option<Vec<EventRecord>> = match &self.config.events_path {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|source| StageError::Io {
                    path: path.clone(),
                    source,
                })?;
                Some(events::read_events(file, &self.config.event_schema)?)
            }
            None => None,
        };
        let centroids = match &self.config.centroids_path {
            Some(path) => Some(read_centroids(path)?),
            None => None,
        };
        let mut weight_cache: BTreeMap<&'static str, WeightMatrix> = BTreeMap::new();

        for transform in &self.config.transforms {
            match transform {
                Transform::AggregateEvents {
                    name,
                    quad,
                    source,
                    target,
                } => {
                    let counts = events::aggregate_events(
                        events.as_deref().unwrap_or(&[]),
                        (*source, *target),
                        *quad,
                    )?;
                    panel = panel.with_event_counts(name, &counts)?;
                }
                Transform::Lag { var, months } => {
                    panel = panel.lag(var, *months)?;
                }
                Transform::Log { var, base, offset } => {
                    panel = panel.log_transform(var, *base, *offset)?;
                }
                Transform::SpatialLag { var, scheme } => {
                    let key = scheme.label();
                    if !weight_cache.contains_key(key) {
                        let w = self.build_weights(*scheme, centroids.as_ref(), &panel)?;
                        for excluded in &w.excluded {
                            eprintln!(
                                "warning: country {excluded} excluded from {key} weights (missing centroid)"
                            );
                        }
                        weight_cache.insert(key, w);
                    }
                    panel = spatial::spatial_lag(&panel, var, &weight_cache[key])?;
                }
            }
        }

        let mut output = StageOutput::new();
        output.add("analysis.csv", panel_to_csv(&panel));
        self.commit(output)
    }

    fn build_weights(
        &self,
        scheme: WeightScheme,
        centroids: Option<&BTreeMap<CountryId, (f64, f64)>>,
        panel: &Panel,
    ) -> Result<WeightMatrix, StageError> {
        match scheme {
            WeightScheme::Knn4 => Ok(spatial::knn4_weights(centroids.expect("validated"))?),
            WeightScheme::CentdistStd => {
                Ok(spatial::centdist_weights(centroids.expect("validated"))?)
            }
            WeightScheme::GowerEvents | WeightScheme::GowerPol | WeightScheme::GowerEcon => {
                let key = scheme.label().trim_start_matches("gower.");
                let features = &self.config.gower_features[key];
                let basis = match scheme {
                    WeightScheme::GowerEvents => GowerBasis::Events,
                    WeightScheme::GowerPol => GowerBasis::Pol,
                    _ => GowerBasis::Econ,
                };
                let vectors =
                    self.gower_vectors(panel, &features.numeric, &features.categorical)?;
                Ok(spatial::gower_weights(&vectors, basis)?)
            }
        }
    }

    /// Country-level Gower feature vectors from training-window covariates:
    /// numeric features are country means, categorical features the modal
    /// value (ties toward the smaller label).
    fn gower_vectors(
        &self,
        panel: &Panel,
        numeric: &[String],
        categorical: &[String],
    ) -> Result<BTreeMap<CountryId, Vec<FeatureValue>>, StageError> {
        let train_mask: Vec<bool> = panel
            .records()
            .iter()
            .map(|r| r.ym <= self.config.train_end)
            .collect();
        let mut out: BTreeMap<CountryId, Vec<FeatureValue>> = BTreeMap::new();
        for country in panel.countries() {
            out.insert(country, Vec::new());
        }
        for name in numeric {
            let col = panel
                .column(name)
                .ok_or_else(|| StageError::MissingTransformInput { var: name.clone() })?;
            let mut any = false;
            for country in panel.countries() {
                let range = panel.country_range(country);
                let mut sum = 0.0;
                let mut n = 0.0;
                for i in range {
                    if train_mask[i] {
                        if let Some(v) = col[i] {
                            sum += v;
                            n += 1.0;
                        }
                    }
                }
                let value = if n > 0.0 {
                    any = true;
                    FeatureValue::Numeric(sum / n)
                } else {
                    FeatureValue::Missing
                };
                out.get_mut(&country).expect("present").push(value);
            }
            if !any {
                return Err(StageError::EmptyGowerFeature {
                    feature: name.clone(),
                });
            }
        }
        for name in categorical {
            let col = panel
                .column(name)
                .ok_or_else(|| StageError::MissingTransformInput { var: name.clone() })?;
            for country in panel.countries() {
                let range = panel.country_range(country);
                let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
                for i in range {
                    if train_mask[i] {
                        if let Some(v) = col[i] {
                            *counts.entry(v.round() as i64).or_insert(0) += 1;
                        }
                    }
                }
                let value = counts
                    .iter()
                    .max_by_key(|(label, n)| (**n, std::cmp::Reverse(**label)))
                    .map(|(label, _)| FeatureValue::Categorical(*label))
                    .unwrap_or(FeatureValue::Missing);
                out.get_mut(&country).expect("present").push(value);
            }
        }
        Ok(out)
    }

    fn decompose_variance(&self) -> Result<(), StageError> {
        let path = self.require("analysis.csv", "build-lags")?;
        let panel = self.read_panel(&path)?;
        let reports = variance::decompose_all(&panel, self.config.variance_threshold);
        let mut csv = String::from(
            "covariate,n_obs,ss_total,ss_between,ss_within,between_fraction,classification\n",
        );
        for r in &reports {
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.covariate,
                r.n_obs,
                r.ss_total,
                r.ss_between,
                r.ss_within,
                r.between_fraction,
                r.classification.label()
            )
            .expect("write to string");
        }
        let mut output = StageOutput::new();
        output.add("variance.csv", csv.into_bytes());
        self.commit(output)
    }

    fn partition_mask(&self, panel: &Panel, partition: &str) -> Vec<bool> {
        panel
            .records()
            .iter()
            .map(|r| match partition {
                "train" => r.ym <= self.config.train_end,
                "calibration" => {
                    r.ym > self.config.train_end && r.ym <= self.config.calibration_end
                }
                "test" => r.ym > self.config.calibration_end && r.ym <= self.config.test_end,
                _ => unreachable!("unknown partition"),
            })
            .collect()
    }

    fn fit(&self) -> Result<(), StageError> {
        let path = self.require("analysis.csv", "build-lags")?;
        let panel = self.read_panel(&path)?;
        let train = self.partition_mask(&panel, "train");

        let fit_one = |model: &crate::config::ModelConfig| -> Result<SpdurFit, StageError> {
            let spec = SpdurSpec {
                duration_formula: model.duration.clone(),
                risk_formula: model.risk.clone(),
            };
            let data = ModelData::from_panel(&panel, &spec, Some(&train)).map_err(|source| {
                StageError::Model {
                    model: model.name.clone(),
                    source,
                }
            })?;
            spdur::fit(&data, &self.config.fit_settings).map_err(|source| StageError::Model {
                model: model.name.clone(),
                source,
            })
        };

        let fits: Vec<Result<SpdurFit, StageError>> = if self.jobs > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .config
                    .models
                    .iter()
                    .map(|m| scope.spawn(move || fit_one(m)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("fit thread panicked"))
                    .collect()
            })
        } else {
            self.config.models.iter().map(fit_one).collect()
        };

        let mut output = StageOutput::new();
        for (model, fit) in self.config.models.iter().zip(fits) {
            let fit = fit?;
            let json = fit.to_json()?;
            output.add(
                &format!("fits/{}.json", safe_name(&model.name)),
                json.into_bytes(),
            );
            let mut summary = String::from("name,estimate,std_error,p_value\n");
            for row in fit.summary() {
                writeln!(
                    summary,
                    "{},{},{},{}",
                    row.name, row.estimate, row.std_error, row.p_value
                )
                .expect("write to string");
            }
            writeln!(summary, "loglik,{},,", fit.loglik).expect("write to string");
            writeln!(summary, "n_obs,{},,", fit.n_obs).expect("write to string");
            writeln!(summary, "converged,{},,", fit.converged).expect("write to string");
            output.add(
                &format!("fits/{}_summary.csv", safe_name(&model.name)),
                summary.into_bytes(),
            );
        }
        self.commit(output)
    }

    fn load_fits(&self) -> Result<Vec<(String, SpdurFit)>, StageError> {
        let mut fits = Vec::new();
        for model in &self.config.models {
            let rel = format!("fits/{}.json", safe_name(&model.name));
            let path = self.require(&rel, "fit")?;
            let text =
                std::fs::read_to_string(&path).map_err(|source| StageError::Io { path, source })?;
            fits.push((model.name.clone(), SpdurFit::from_json(&text)?));
        }
        Ok(fits)
    }

    fn calibrate(&self) -> Result<(), StageError> {
        let path = self.require("analysis.csv", "build-lags")?;
        let panel = self.read_panel(&path)?;
        let fits = self.load_fits()?;
        let mask = self.partition_mask(&panel, "calibration");

        let scores: Vec<ModelScores> = fits
            .iter()
            .map(|(name, fit)| score_model(&panel, fit, &mask, name))
            .collect::<Result<_, _>>()?;
        let (names, components, outcomes) = common_rows(&fits, &scores);

        let ensemble =
            ebma::fit_ensemble(&names, &components, &outcomes, &self.config.ebma_settings)?;

        let mut output = StageOutput::new();
        output.add("ensemble.json", ensemble.to_json()?.into_bytes());
        let mut weights = String::from("model,weight\n");
        for (m, w) in ensemble.models.iter().zip(&ensemble.weights) {
            writeln!(weights, "{m},{w}").expect("write to string");
        }
        output.add("weights.csv", weights.into_bytes());
        self.commit(output)
    }

    fn load_ensemble(&self) -> Result<EnsembleFit, StageError> {
        let path = self.require("ensemble.json", "calibrate")?;
        let text =
            std::fs::read_to_string(&path).map_err(|source| StageError::Io { path, source })?;
        Ok(EnsembleFit::from_json(&text)?)
    }

    fn evaluate(&self) -> Result<(), StageError> {
        let path = self.require("analysis.csv", "build-lags")?;
        let panel = self.read_panel(&path)?;
        let fits = self.load_fits()?;
        let ensemble = self.load_ensemble()?;
        let mut output = StageOutput::new();

        let mut scored_sets: Vec<ScoredSet> = Vec::new();
        let mut monthly_rows: Vec<(String, String, Vec<MonthlyPrediction>)> = Vec::new();

        for partition in ["train", "calibration", "test"] {
            let mask = self.partition_mask(&panel, partition);
            let per_model: Vec<ModelScores> = fits
                .iter()
                .map(|(name, fit)| score_model(&panel, fit, &mask, name))
                .collect::<Result<_, _>>()?;

            // Ensemble on rows every component can score.
            let (_, components, _) = common_rows(&fits, &per_model);
            let ensemble_preds =
                ebma::predict_ensemble(&ensemble, &components, &self.config.ebma_settings)?;
            let common: Vec<usize> = intersect_rows(&per_model);
            let ensemble_monthly: Vec<MonthlyPrediction> = common
                .iter()
                .zip(&ensemble_preds)
                .map(|(&row, &p)| MonthlyPrediction {
                    country: panel.records()[row].country,
                    ym: panel.records()[row].ym,
                    prediction: p,
                    outcome: panel.records()[row].ilc == 1,
                })
                .collect();

            let mut all = vec![("ensemble".to_string(), None, ensemble_monthly)];
            for ((name, _), s) in fits.iter().zip(&per_model) {
                all.push((name.clone(), ensemble.weight_of(name), s.monthly.clone()));
            }

            for (name, weight, monthly) in all {
                scored_sets.push(ScoredSet {
                    model: name.clone(),
                    partition: partition.to_string(),
                    frequency: Frequency::Monthly,
                    weight,
                    predictions: monthly.iter().map(|m| m.prediction).collect(),
                    outcomes: monthly.iter().map(|m| m.outcome).collect(),
                });
                let annual = eval::annualize(&monthly);
                scored_sets.push(ScoredSet {
                    model: name.clone(),
                    partition: partition.to_string(),
                    frequency: Frequency::Annualized,
                    weight,
                    predictions: annual.iter().map(|a| a.prediction).collect(),
                    outcomes: annual.iter().map(|a| a.outcome).collect(),
                });
                monthly_rows.push((name, partition.to_string(), monthly));
            }
        }

        // Fit report, monthly block then annualized.
        let mut ordered = Vec::new();
        for freq in [Frequency::Monthly, Frequency::Annualized] {
            for s in &scored_sets {
                if s.frequency == freq {
                    ordered.push(s.clone());
                }
            }
        }
        let report = eval::fit_report(&ordered, self.config.f_beta);
        let mut csv = String::from(
            "frequency,model,partition,weight,auc,tau,accuracy,recall,precision,brier,n_obs\n",
        );
        for r in &report {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.frequency.label(),
                r.model,
                r.partition,
                opt(r.weight),
                opt(r.auc),
                opt(r.tau),
                opt(r.accuracy),
                opt(r.recall),
                opt(r.precision),
                opt(r.brier),
                r.n_obs
            )
            .expect("write to string");
        }
        output.add("fit_report.csv", csv.into_bytes());

        // Per-set ROC and separation exports.
        for s in &ordered {
            let tag = format!(
                "{}_{}_{}",
                safe_name(&s.model),
                s.partition,
                s.frequency.label()
            );
            if let Ok(curve) = eval::roc_curve(&s.predictions, &s.outcomes) {
                let mut csv = String::from("false_positive_rate,true_positive_rate,threshold\n");
                for p in &curve.points {
                    writeln!(
                        csv,
                        "{},{},{}",
                        p.false_positive_rate, p.true_positive_rate, p.threshold
                    )
                    .expect("write to string");
                }
                output.add(&format!("eval/roc_{tag}.csv"), csv.into_bytes());
            }
            let rows = eval::separation_plot_data(&s.predictions, &s.outcomes);
            let mut csv = String::from("rank,outcome,prediction\n");
            for r in rows {
                writeln!(csv, "{},{},{}", r.rank, u8::from(r.outcome), r.prediction)
                    .expect("write to string");
            }
            output.add(&format!("eval/separation_{tag}.csv"), csv.into_bytes());
        }

        // Fuzzy-window revised precision on monthly sets at their F-best tau.
        let mut fuzzy_csv = String::from(
            "model,partition,tau,true_positives,false_positives,window_true,revised_precision\n",
        );
        for (name, partition, monthly) in &monthly_rows {
            let preds: Vec<f64> = monthly.iter().map(|m| m.prediction).collect();
            let ys: Vec<bool> = monthly.iter().map(|m| m.outcome).collect();
            let Ok(tau) = eval::optimal_tau(&preds, &ys, self.config.f_beta) else {
                continue;
            };
            let fz = eval::fuzzy_precision(monthly, tau, self.config.fuzzy_window_months)?;
            writeln!(
                fuzzy_csv,
                "{},{},{},{},{},{},{}",
                name,
                partition,
                tau,
                fz.true_positives,
                fz.false_positives,
                fz.window_true,
                opt(fz.revised)
            )
            .expect("write to string");
        }
        output.add("eval/fuzzy_precision.csv", fuzzy_csv.into_bytes());

        // Outcome-overlap cross-tab over the full panel.
        let table = spells::cross_tabulate(&panel, "irr_exit", "irr_entry")?;
        let mut csv = String::from("irr_exit,irr_entry,count\n");
        for (i, r) in table.row_levels.iter().enumerate() {
            for (j, c) in table.col_levels.iter().enumerate() {
                writeln!(csv, "{},{},{}", r, c, table.counts[i][j]).expect("write to string");
            }
        }
        output.add("crosstab_exits_entries.csv", csv.into_bytes());

        self.commit(output)
    }

    fn forecast(&self) -> Result<(), StageError> {
        let path = self.require("analysis.csv", "build-lags")?;
        let panel = self.read_panel(&path)?;
        let fits = self.load_fits()?;
        let ensemble = self.load_ensemble()?;
        let names = self.country_names()?;

        let origin = panel
            .records()
            .iter()
            .map(|r| r.ym)
            .max()
            .ok_or(StageError::NothingToForecast)?;
        let duration_col =
            panel
                .column("duration")
                .ok_or_else(|| StageError::MissingTransformInput {
                    var: "duration".into(),
                })?;
        let failure_col =
            panel
                .column("failure")
                .ok_or_else(|| StageError::MissingTransformInput {
                    var: "failure".into(),
                })?;

        // A country forecasts only when every component model has complete
        // covariates at the origin month.
        let mut excluded: Vec<(CountryId, String)> = Vec::new();
        let mut included: Vec<CountryId> = Vec::new();
        let mut states: Vec<Vec<CountryState>> = vec![Vec::new(); fits.len()];
        'country: for country in panel.countries() {
            let Some(row) = panel.row_of(country, origin) else {
                excluded.push((country, format!("no observation at {origin}")));
                continue;
            };
            let (Some(duration), Some(failed)) = (duration_col[row], failure_col[row]) else {
                excluded.push((country, "missing duration variables".to_string()));
                continue;
            };
            // A failure at the origin ends its spell; the next month opens a
            // new spell with no survival behind it.
            let elapsed = if failed == 1.0 { 0.0 } else { duration };
            let mut candidate: Vec<CountryState> = Vec::with_capacity(fits.len());
            for (name, fit) in &fits {
                let mut dur_covs = Vec::new();
                for var in &fit.spec.duration_formula {
                    match panel.column(var).and_then(|c| c[row]) {
                        Some(v) => dur_covs.push(v),
                        None => {
                            excluded.push((country, format!("missing `{var}` for model {name}")));
                            continue 'country;
                        }
                    }
                }
                let mut risk_covs = Vec::new();
                for var in &fit.spec.risk_formula {
                    match panel.column(var).and_then(|c| c[row]) {
                        Some(v) => risk_covs.push(v),
                        None => {
                            excluded.push((country, format!("missing `{var}` for model {name}")));
                            continue 'country;
                        }
                    }
                }
                candidate.push(CountryState {
                    country,
                    duration: elapsed,
                    dur_covs,
                    risk_covs,
                });
            }
            included.push(country);
            for (k, state) in candidate.into_iter().enumerate() {
                states[k].push(state);
            }
        }
        if included.is_empty() {
            return Err(StageError::NothingToForecast);
        }

        let components: Vec<(&SpdurFit, &[CountryState])> = fits
            .iter()
            .zip(&states)
            .map(|((_, fit), s)| (fit, s.as_slice()))
            .collect();
        let entries = forecast::forecast_ensemble(
            &ensemble,
            &components,
            origin.next(),
            self.config.horizon,
            &self.config.ebma_settings,
        )?;
        let ranked = forecast::rank_table(&entries, entries.len());
        let top = forecast::rank_table(&entries, self.config.top_k);

        let mut output = StageOutput::new();
        let name_of =
            |c: CountryId| -> String { names.get(&c).cloned().unwrap_or_else(|| c.to_string()) };

        let mut csv = String::from("country,name,p_window");
        for t in 1..=self.config.horizon {
            write!(csv, ",p_{t}").expect("write to string");
        }
        csv.push('\n');
        for e in &ranked {
            write!(csv, "{},{},{}", e.country, name_of(e.country), e.p_window)
                .expect("write to string");
            for p in &e.monthly {
                write!(csv, ",{p}").expect("write to string");
            }
            csv.push('\n');
        }
        output.add("forecast.csv", csv.into_bytes());

        let mut map_csv = String::from("country,p_window\n");
        let mut by_country = entries.clone();
        by_country.sort_by_key(|e| e.country);
        for e in &by_country {
            writeln!(map_csv, "{},{}", e.country, e.p_window).expect("write to string");
        }
        output.add("forecast_map.csv", map_csv.into_bytes());

        let horizon_end = origin.add_months(self.config.horizon as i64);
        let mut report = format!(
            "Top {} forecasts, {} through {} (data through {})\n\n",
            top.len(),
            origin.next(),
            horizon_end,
            origin
        );
        for (i, e) in top.iter().enumerate() {
            writeln!(
                report,
                "{:>3}. {:<32} {:.2}",
                i + 1,
                name_of(e.country),
                e.p_window
            )
            .expect("write to string");
        }
        if !excluded.is_empty() {
            report.push_str("\nExcluded countries:\n");
            for (c, reason) in &excluded {
                writeln!(report, "  {} ({}): {}", name_of(*c), c, reason).expect("write to string");
            }
        }
        output.add("forecast_report.txt", report.into_bytes());

        self.commit(output)
    }

    fn country_names(&self) -> Result<BTreeMap<CountryId, String>, StageError> {
        let mut names = BTreeMap::new();
        let Some(path) = &self.config.country_names_path else {
            return Ok(names);
        };
        let file = std::fs::File::open(path).map_err(|source| StageError::Io {
            path: path.clone(),
            source,
        })?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(file);
        for record in rdr.records() {
            let record = record.map_err(PanelError::from)?;
            let id: i64 = record.get(0).unwrap_or("").trim().parse().map_err(|_| {
                PanelError::MalformedRow {
                    line: record.position().map_or(0, |p| p.line()),
                    detail: "bad country id in names file".into(),
                }
            })?;
            names.insert(
                CountryId(id),
                record.get(1).unwrap_or("").trim().to_string(),
            );
        }
        Ok(names)
    }
}

/// Scores one fitted model on the masked rows: conditional hazard at each
/// row's elapsed duration t.0 against the observed failure flag.
struct ModelScores {
    rows: Vec<usize>,
    monthly: Vec<MonthlyPrediction>,
}

fn score_model(
    panel: &Panel,
    fit: &SpdurFit,
    mask: &[bool],
    name: &str,
) -> Result<ModelScores, StageError> {
    let data = ModelData::from_panel(panel, &fit.spec, Some(mask)).map_err(|source| {
        StageError::Model {
            model: name.to_string(),
            source,
        }
    })?;
    let mut monthly = Vec::with_capacity(data.n_obs());
    for i in 0..data.n_obs() {
        let dur_covs: Vec<f64> = data.x.row(i).iter().skip(1).copied().collect();
        let risk_covs: Vec<f64> = data.z.row(i).iter().skip(1).copied().collect();
        let p = fit
            .predict(&dur_covs, &risk_covs, data.t[i] - 1.0)
            .cond_hazard;
        let rec = panel.records()[data.kept_rows[i]];
        monthly.push(MonthlyPrediction {
            country: rec.country,
            ym: rec.ym,
            prediction: p,
            outcome: data.failed[i],
        });
    }
    Ok(ModelScores {
        rows: data.kept_rows,
        monthly,
    })
}

fn intersect_rows(scores: &[ModelScores]) -> Vec<usize> {
    let mut common: BTreeSet<usize> = scores
        .first()
        .map(|s| s.rows.iter().copied().collect())
        .unwrap_or_default();
    for s in scores.iter().skip(1) {
        let set: BTreeSet<usize> = s.rows.iter().copied().collect();
        common = common.intersection(&set).copied().collect();
    }
    common.into_iter().collect()
}

/// Aligns per-model predictions on the rows all models can score.
fn common_rows(
    fits: &[(String, SpdurFit)],
    scores: &[ModelScores],
) -> (Vec<String>, Vec<Vec<f64>>, Vec<bool>) {
    let common = intersect_rows(scores);
    let names: Vec<String> = fits.iter().map(|(n, _)| n.clone()).collect();
    let mut components = Vec::with_capacity(scores.len());
    let mut outcomes: Vec<bool> = Vec::new();
    for (idx, s) in scores.iter().enumerate() {
        let by_row: BTreeMap<usize, &MonthlyPrediction> =
            s.rows.iter().copied().zip(s.monthly.iter()).collect();
        let preds: Vec<f64> = common.iter().map(|r| by_row[r].prediction).collect();
        if idx == 0 {
            outcomes = common.iter().map(|r| by_row[r].outcome).collect();
        }
        components.push(preds);
    }
    (names, components, outcomes)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// File-name-safe model tag.
fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Serializes a panel to CSV with canonical identifier columns followed by
/// every covariate column in name order.
pub fn panel_to_csv(panel: &Panel) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("country,year,month,irr_entry,irr_exit,ilc");
    let columns: Vec<&str> = panel.column_names().collect();
    for name in &columns {
        out.push(',');
        // RFC 4180 quoting for names that need it.
        if name.contains(',') || name.contains('"') || name.contains('\n') {
            out.push('"');
            out.push_str(&name.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(name);
        }
    }
    out.push('\n');
    for (i, r) in panel.records().iter().enumerate() {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.country, r.ym.year, r.ym.month, r.irr_entry, r.irr_exit, r.ilc
        )
        .expect("write to string");
        for name in &columns {
            out.push(',');
            if let Some(v) = panel.column(name).expect("known column")[i] {
                write!(out, "{v}").expect("write to string");
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn read_centroids(path: &Path) -> Result<BTreeMap<CountryId, (f64, f64)>, StageError> {
    let file = std::fs::File::open(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(file);
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(PanelError::from)?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |what: &str| PanelError::MalformedRow {
            line,
            detail: format!("bad {what} in centroid file"),
        };
        let id: i64 = record
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| malformed("country id"))?;
        let lat: f64 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| malformed("latitude"))?;
        let lon: f64 = record
            .get(2)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| malformed("longitude"))?;
        out.insert(CountryId(id), (lat, lon));
    }
    Ok(out)
}
