//! Ensemble Bayesian model averaging over binary-outcome forecasts.
//!
//! Each component model's raw predictions are first rescaled by a logistic
//! regression of the outcome on the logit of the prediction (monotone, so a
//! component's ranking and AUC are preserved). EM then fits mixture weights
//! for the Bernoulli mixture likelihood sum_i log sum_k w_k Bern(y_i; p_ik):
//! the E-step assigns responsibilities, the M-step averages them, and the
//! ensemble prediction is the weight-averaged calibrated probability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct EbmaSettings {
    /// Predictions are clamped into [clamp, 1 - clamp] before the logit.
    pub prob_clamp: f64,
    /// Cap on |a0| and a1 when a component separates the outcomes.
    pub coef_bound: f64,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub newton_max_iter: usize,
}

impl Default for EbmaSettings {
    fn default() -> Self {
        Self {
            prob_clamp: 1e-6,
            coef_bound: 20.0,
            em_tol: 1e-8,
            em_max_iter: 10_000,
            newton_max_iter: 100,
        }
    }
}

#[derive(Debug, Error)]
pub enum EbmaError {
    #[error("outcomes are degenerate: {positives} positives, {negatives} negatives")]
    DegenerateOutcomes { positives: usize, negatives: usize },
    #[error("need at least one component model")]
    NoModels,
    #[error("component `{model}` has {got} predictions, expected {expected}")]
    LengthMismatch {
        model: String,
        got: usize,
        expected: usize,
    },
    #[error("component `{model}` prediction at row {row} is missing or not finite")]
    MissingPrediction { model: String, row: usize },
    #[error("no rows with complete component predictions")]
    NoCompleteRows,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Monotone rescaling of one component's raw predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentCalibration {
    pub model: String,
    pub a0: f64,
    pub a1: f64,
    /// Coefficients hit the separation cap.
    pub capped: bool,
    /// Slope was unidentified or negative; intercept-only fit at the base rate.
    pub intercept_only: bool,
}

impl ComponentCalibration {
    /// Identity rescaling (useful as a neutral default).
    pub fn identity(model: &str) -> Self {
        Self {
            model: model.to_string(),
            a0: 0.0,
            a1: 1.0,
            capped: false,
            intercept_only: false,
        }
    }

    pub fn apply(&self, p: f64, settings: &EbmaSettings) -> f64 {
        let clamped = p.clamp(settings.prob_clamp, 1.0 - settings.prob_clamp);
        logistic(self.a0 + self.a1 * logit(clamped))
    }
}

fn check_outcomes(outcomes: &[bool]) -> Result<(), EbmaError> {
    let positives = outcomes.iter().filter(|&&y| y).count();
    let negatives = outcomes.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EbmaError::DegenerateOutcomes {
            positives,
            negatives,
        });
    }
    Ok(())
}

/// Fits (a0, a1) maximizing the Bernoulli likelihood of the outcomes given
/// logistic(a0 + a1 logit(p)). Rows with non-finite predictions are skipped.
/// Constant predictions give an intercept-only fit at the base rate; a fitted
/// negative slope is replaced the same way so calibration stays monotone;
/// separation caps the coefficients at the configured bound.
pub fn calibrate_component(
    model: &str,
    predictions: &[f64],
    outcomes: &[bool],
    settings: &EbmaSettings,
) -> Result<ComponentCalibration, EbmaError> {
    let pairs: Vec<(f64, bool)> = predictions
        .iter()
        .zip(outcomes)
        .filter(|(p, _)| p.is_finite())
        .map(|(p, y)| {
            (
                logit(p.clamp(settings.prob_clamp, 1.0 - settings.prob_clamp)),
                *y,
            )
        })
        .collect();
    let ys: Vec<bool> = pairs.iter().map(|(_, y)| *y).collect();
    check_outcomes(&ys)?;
    let n = pairs.len() as f64;
    let base_rate = ys.iter().filter(|&&y| y).count() as f64 / n;

    let intercept_only = |io: bool| ComponentCalibration {
        model: model.to_string(),
        a0: logit(base_rate),
        a1: 0.0,
        capped: false,
        intercept_only: io,
    };

    let mean_x = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let var_x = pairs.iter().map(|(x, _)| (x - mean_x).powi(2)).sum::<f64>() / n;
    if var_x == 0.0 {
        return Ok(intercept_only(true));
    }

    // Exact separation: the likelihood diverges, so cap the slope at the
    // bound with the decision boundary at the separating midpoint.
    let min_pos = pairs
        .iter()
        .filter(|(_, y)| *y)
        .map(|(x, _)| *x)
        .fold(f64::INFINITY, f64::min);
    let max_neg = pairs
        .iter()
        .filter(|(_, y)| !*y)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if min_pos > max_neg {
        let mid = (min_pos + max_neg) / 2.0;
        return Ok(ComponentCalibration {
            model: model.to_string(),
            a0: (-settings.coef_bound * mid).clamp(-settings.coef_bound, settings.coef_bound),
            a1: settings.coef_bound,
            capped: true,
            intercept_only: false,
        });
    }

    // Damped Newton on the (globally concave) Bernoulli log-likelihood:
    // full steps overshoot badly on rare events with extreme logits, so a
    // step is halved until the log-likelihood does not decrease.
    let ll_of = |a0: f64, a1: f64| -> f64 {
        pairs
            .iter()
            .map(|&(x, y)| {
                let mu = logistic(a0 + a1 * x).clamp(1e-300, 1.0 - 1e-16);
                if y {
                    mu.ln()
                } else {
                    (1.0 - mu).ln()
                }
            })
            .sum()
    };
    let mut a0 = 0.0;
    let mut a1 = 1.0;
    let mut ll = ll_of(a0, a1);
    let mut capped = false;
    for _ in 0..settings.newton_max_iter {
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        let mut h00 = 0.0;
        let mut h01 = 0.0;
        let mut h11 = 0.0;
        for &(x, y) in &pairs {
            let mu = logistic(a0 + a1 * x);
            let resid = f64::from(y) - mu;
            let wgt = (mu * (1.0 - mu)).max(1e-12);
            g0 += resid;
            g1 += resid * x;
            h00 += wgt;
            h01 += wgt * x;
            h11 += wgt * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-12 {
            break;
        }
        let step0 = (h11 * g0 - h01 * g1) / det;
        let step1 = (h00 * g1 - h01 * g0) / det;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = (a0 + scale * step0, a1 + scale * step1);
            let cand_ll = ll_of(cand.0, cand.1);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                a0 = cand.0;
                a1 = cand.1;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale /= 2.0;
        }
        if !accepted {
            break;
        }
        if a0.abs() > settings.coef_bound || a1.abs() > settings.coef_bound {
            a0 = a0.clamp(-settings.coef_bound, settings.coef_bound);
            a1 = a1.clamp(-settings.coef_bound, settings.coef_bound);
            capped = true;
            break;
        }
        if (scale * step0).abs() < 1e-10 && (scale * step1).abs() < 1e-10 {
            break;
        }
    }
    if a1 < 0.0 {
        return Ok(intercept_only(true));
    }
    Ok(ComponentCalibration {
        model: model.to_string(),
        a0,
        a1,
        capped,
        intercept_only: false,
    })
}

/// EM result for the mixture weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFit {
    pub weights: Vec<f64>,
    pub loglik: f64,
    /// Log-likelihood after each EM iteration (non-decreasing).
    pub ll_history: Vec<f64>,
    pub converged: bool,
}

/// EM over the Bernoulli mixture. `components` holds one calibrated
/// prediction vector per model; rows where any component is non-finite are
/// dropped for weight estimation.
pub fn fit_weights(
    components: &[Vec<f64>],
    outcomes: &[bool],
    settings: &EbmaSettings,
) -> Result<WeightsFit, EbmaError> {
    let k = components.len();
    if k == 0 {
        return Err(EbmaError::NoModels);
    }
    let n = outcomes.len();
    for (idx, preds) in components.iter().enumerate() {
        if preds.len() != n {
            return Err(EbmaError::LengthMismatch {
                model: format!("component {idx}"),
                got: preds.len(),
                expected: n,
            });
        }
    }
    // Complete rows only; Bernoulli likelihood of each row under each model.
    let mut likes: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        if components.iter().any(|c| !c[i].is_finite()) {
            continue;
        }
        let row: Vec<f64> = components
            .iter()
            .map(|c| {
                let p = c[i].clamp(settings.prob_clamp, 1.0 - settings.prob_clamp);
                if outcomes[i] {
                    p
                } else {
                    1.0 - p
                }
            })
            .collect();
        likes.push(row);
    }
    if likes.is_empty() {
        return Err(EbmaError::NoCompleteRows);
    }
    let rows = likes.len() as f64;

    let mut weights = vec![1.0 / k as f64; k];
    let ll_of = |w: &[f64]| -> f64 {
        likes
            .iter()
            .map(|row| {
                row.iter()
                    .zip(w)
                    .map(|(b, wk)| wk * b)
                    .sum::<f64>()
                    .max(f64::MIN_POSITIVE)
                    .ln()
            })
            .sum()
    };
    let mut ll = ll_of(&weights);
    let mut history = vec![ll];
    let mut converged = false;
    for _ in 0..settings.em_max_iter {
        // E-step: responsibilities; M-step: their means, renormalized so the
        // weights sum to exactly one.
        let mut new_weights = vec![0.0; k];
        for row in &likes {
            let mix: f64 = row.iter().zip(&weights).map(|(b, w)| w * b).sum();
            if mix <= 0.0 {
                continue;
            }
            for (nw, (b, w)) in new_weights.iter_mut().zip(row.iter().zip(&weights)) {
                *nw += w * b / mix;
            }
        }
        for nw in &mut new_weights {
            *nw /= rows;
        }
        let total: f64 = new_weights.iter().sum();
        for nw in &mut new_weights {
            *nw /= total;
        }
        weights = new_weights;
        let new_ll = ll_of(&weights);
        history.push(new_ll);
        if (new_ll - ll).abs() < settings.em_tol {
            ll = new_ll;
            converged = true;
            break;
        }
        ll = new_ll;
    }
    Ok(WeightsFit {
        weights,
        loglik: ll,
        ll_history: history,
        converged,
    })
}

/// Calibrations, weights, and bookkeeping for a fitted ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleFit {
    pub models: Vec<String>,
    pub weights: Vec<f64>,
    pub calibrations: Vec<ComponentCalibration>,
    pub loglik: f64,
    pub ll_history: Vec<f64>,
    pub converged: bool,
}

impl EnsembleFit {
    pub fn weight_of(&self, model: &str) -> Option<f64> {
        self.models
            .iter()
            .position(|m| m == model)
            .map(|i| self.weights[i])
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Calibrates every component against the outcomes, then fits EBMA weights on
/// the calibrated predictions.
pub fn fit_ensemble(
    models: &[String],
    raw_predictions: &[Vec<f64>],
    outcomes: &[bool],
    settings: &EbmaSettings,
) -> Result<EnsembleFit, EbmaError> {
    if models.is_empty() || models.len() != raw_predictions.len() {
        return Err(EbmaError::NoModels);
    }
    check_outcomes(outcomes)?;
    let calibrations: Vec<ComponentCalibration> = models
        .iter()
        .zip(raw_predictions)
        .map(|(m, preds)| calibrate_component(m, preds, outcomes, settings))
        .collect::<Result<_, _>>()?;
    let calibrated: Vec<Vec<f64>> = calibrations
        .iter()
        .zip(raw_predictions)
        .map(|(c, preds)| {
            preds
                .iter()
                .map(|&p| {
                    if p.is_finite() {
                        c.apply(p, settings)
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect();
    let weights = fit_weights(&calibrated, outcomes, settings)?;
    Ok(EnsembleFit {
        models: models.to_vec(),
        weights: weights.weights,
        calibrations,
        loglik: weights.loglik,
        ll_history: weights.ll_history,
        converged: weights.converged,
    })
}

/// Ensemble prediction per row: the weighted average of calibrated component
/// predictions. Every component must be present and finite.
pub fn predict_ensemble(
    fit: &EnsembleFit,
    raw_predictions: &[Vec<f64>],
    settings: &EbmaSettings,
) -> Result<Vec<f64>, EbmaError> {
    if raw_predictions.len() != fit.models.len() {
        return Err(EbmaError::NoModels);
    }
    let n = raw_predictions.first().map_or(0, Vec::len);
    for (model, preds) in fit.models.iter().zip(raw_predictions) {
        if preds.len() != n {
            return Err(EbmaError::LengthMismatch {
                model: model.clone(),
                got: preds.len(),
                expected: n,
            });
        }
        if let Some(row) = preds.iter().position(|p| !p.is_finite()) {
            return Err(EbmaError::MissingPrediction {
                model: model.clone(),
                row,
            });
        }
    }
    let mut out = vec![0.0; n];
    for ((cal, preds), w) in fit
        .calibrations
        .iter()
        .zip(raw_predictions)
        .zip(&fit.weights)
    {
        for (o, &p) in out.iter_mut().zip(preds) {
            *o += w * cal.apply(p, settings);
        }
    }
    Ok(out)
}
