//! Split-population Weibull duration regression.
//!
//! The model mixes an immunity mass with a Weibull duration density in
//! accelerated-failure-time form. With at-risk probability r = logistic(z'g)
//! and rate parameter lambda = exp(-x'b), each observation contributes
//!
//! ```text
//! failure:  log[ r * f(t) ],   f(t) = a lambda^a t^(a-1) exp(-(lambda t)^a)
//! censored: log[ (1 - r) + r * S(t) ],   S(t) = exp(-(lambda t)^a)
//! ```
//!
//! so positive duration coefficients prolong survival and positive risk
//! coefficients raise the probability of being in the risk set. The shape is
//! estimated on the log scale so optimization is unconstrained.
//!
//! Probabilities are clamped to [1e-12, 1 - 1e-12] inside logs: fitted risk
//! equations can saturate their logits, and the mixture term must stay
//! loggable there.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::optim::{self, OptimError, OptimSettings};
use crate::panel::Panel;

const PROB_GUARD: f64 = 1e-12;

/// Covariate lists for the two equations; intercepts are always included and
/// never listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpdurSpec {
    pub duration_formula: Vec<String>,
    pub risk_formula: Vec<String>,
}

/// Design matrices and outcomes extracted for one model fit. Rows with a
/// missing value in either formula are dropped (listwise deletion).
#[derive(Debug, Clone)]
pub struct ModelData {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub t: DVector<f64>,
    pub failed: Vec<bool>,
    /// Retroactive at-risk coding, used for the risk-intercept start value.
    pub atrisk: Option<Vec<bool>>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    /// Panel row indices retained after listwise deletion.
    pub kept_rows: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum SpdurError {
    #[error("log-likelihood is not finite at row {row}")]
    NonFinite { row: usize },
    #[error("duration at row {row} is {value}; durations must be positive and finite")]
    BadDuration { row: usize, value: f64 },
    #[error("need at least one failure and one censored observation (got {failures} failures of {total})")]
    NeedBothOutcomes { failures: usize, total: usize },
    #[error("{matrix} design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient {
        matrix: &'static str,
        columns: Vec<String>,
    },
    #[error("panel lacks column `{0}`; build spells and transforms first")]
    MissingColumn(String),
    #[error("no rows left after listwise deletion over the model formulas")]
    NoRows,
    #[error("optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error("observed information matrix is singular; no covariance available")]
    SingularInformation,
}

/// Packed parameter vector layout: beta, then gamma, then log alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub log_alpha: f64,
}

impl Params {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = self.beta.clone();
        out.extend_from_slice(&self.gamma);
        out.push(self.log_alpha);
        out
    }

    pub fn unpack(raw: &[f64], p_dur: usize, p_risk: usize) -> Self {
        Self {
            beta: raw[..p_dur].to_vec(),
            gamma: raw[p_dur..p_dur + p_risk].to_vec(),
            log_alpha: raw[p_dur + p_risk],
        }
    }
}

impl ModelData {
    /// Extracts design matrices from a spell-built panel. Requires the
    /// `duration` and `failure` columns plus every formula covariate;
    /// `row_mask`, when given, selects the rows eligible at all (e.g. a
    /// training partition).
    ///
    /// At-risk flags are recoded retroactively within the selected window:
    /// a run of kept rows is at risk iff it ends in a kept failure row. A
    /// fit on the training partition therefore never depends on later
    /// observations, which the panel-wide `atrisk` column does.
    pub fn from_panel(
        panel: &Panel,
        spec: &SpdurSpec,
        row_mask: Option<&[bool]>,
    ) -> Result<Self, SpdurError> {
        let need = |name: &str| {
            panel
                .column(name)
                .ok_or_else(|| SpdurError::MissingColumn(name.to_string()))
        };
        let duration = need("duration")?;
        let failure = need("failure")?;
        let dur_cols: Vec<&[Option<f64>]> = spec
            .duration_formula
            .iter()
            .map(|n| need(n))
            .collect::<Result<_, _>>()?;
        let risk_cols: Vec<&[Option<f64>]> = spec
            .risk_formula
            .iter()
            .map(|n| need(n))
            .collect::<Result<_, _>>()?;

        let mut rows_x: Vec<f64> = Vec::new();
        let mut rows_z: Vec<f64> = Vec::new();
        let mut t = Vec::new();
        let mut failed = Vec::new();
        let mut kept = Vec::new();
        for i in 0..panel.n_rows() {
            if let Some(mask) = row_mask {
                if !mask[i] {
                    continue;
                }
            }
            let (Some(ti), Some(fi)) = (duration[i], failure[i]) else {
                continue;
            };
            let dur_vals: Option<Vec<f64>> = dur_cols.iter().map(|c| c[i]).collect();
            let risk_vals: Option<Vec<f64>> = risk_cols.iter().map(|c| c[i]).collect();
            let (Some(dur_vals), Some(risk_vals)) = (dur_vals, risk_vals) else {
                continue;
            };
            rows_x.push(1.0);
            rows_x.extend(dur_vals);
            rows_z.push(1.0);
            rows_z.extend(risk_vals);
            t.push(ti);
            failed.push(fi != 0.0);
            kept.push(i);
        }
        if kept.is_empty() {
            return Err(SpdurError::NoRows);
        }
        // Window-local retroactive at-risk coding over the kept rows.
        let mut at = vec![false; kept.len()];
        let mut segment_start = 0;
        for i in 0..kept.len() {
            let new_country =
                i > 0 && panel.records()[kept[i]].country != panel.records()[kept[i - 1]].country;
            if new_country {
                segment_start = i;
            }
            if failed[i] {
                for flag in &mut at[segment_start..=i] {
                    *flag = true;
                }
                segment_start = i + 1;
            }
        }
        let n = kept.len();
        let p_x = spec.duration_formula.len() + 1;
        let p_z = spec.risk_formula.len() + 1;
        let mut x_names = vec!["dur.intercept".to_string()];
        x_names.extend(spec.duration_formula.iter().cloned());
        let mut z_names = vec!["risk.intercept".to_string()];
        z_names.extend(spec.risk_formula.iter().cloned());
        Ok(Self {
            x: DMatrix::from_row_slice(n, p_x, &rows_x),
            z: DMatrix::from_row_slice(n, p_z, &rows_z),
            t: DVector::from_vec(t),
            failed,
            atrisk: Some(at),
            x_names,
            z_names,
            kept_rows: kept,
        })
    }

    /// Assembles data from raw per-row covariate vectors (intercepts are
    /// prepended here).
    pub fn from_parts(
        dur_covs: Vec<Vec<f64>>,
        risk_covs: Vec<Vec<f64>>,
        t: Vec<f64>,
        failed: Vec<bool>,
        atrisk: Option<Vec<bool>>,
    ) -> Self {
        let n = t.len();
        let p_x = dur_covs.first().map_or(0, Vec::len) + 1;
        let p_z = risk_covs.first().map_or(0, Vec::len) + 1;
        let mut rows_x = Vec::with_capacity(n * p_x);
        let mut rows_z = Vec::with_capacity(n * p_z);
        for i in 0..n {
            rows_x.push(1.0);
            rows_x.extend(&dur_covs[i]);
            rows_z.push(1.0);
            rows_z.extend(&risk_covs[i]);
        }
        let x_names = (0..p_x)
            .map(|j| {
                if j == 0 {
                    "dur.intercept".to_string()
                } else {
                    format!("x{j}")
                }
            })
            .collect();
        let z_names = (0..p_z)
            .map(|j| {
                if j == 0 {
                    "risk.intercept".to_string()
                } else {
                    format!("z{j}")
                }
            })
            .collect();
        Self {
            x: DMatrix::from_row_slice(n, p_x, &rows_x),
            z: DMatrix::from_row_slice(n, p_z, &rows_z),
            t: DVector::from_vec(t),
            failed,
            atrisk,
            x_names,
            z_names,
            kept_rows: (0..n).collect(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.t.len()
    }

    fn validate_durations(&self) -> Result<(), SpdurError> {
        for (row, &t) in self.t.iter().enumerate() {
            if t <= 0.0 || !t.is_finite() {
                return Err(SpdurError::BadDuration { row, value: t });
            }
        }
        Ok(())
    }
}

fn logistic(w: f64) -> f64 {
    1.0 / (1.0 + (-w).exp())
}

struct RowTerms {
    ll: f64,
    d_u: f64,
    d_w: f64,
    d_a: f64,
}

fn row_terms(t: f64, failed: bool, u: f64, w: f64, log_alpha: f64) -> RowTerms {
    let alpha = log_alpha.exp();
    let ln_t = t.ln();
    let lh = alpha * (ln_t - u); // log (lambda t)^alpha
    let h = lh.exp();
    let s = (-h).exp();
    let r = logistic(w).clamp(PROB_GUARD, 1.0 - PROB_GUARD);
    if failed {
        let log_f = log_alpha - alpha * u + (alpha - 1.0) * ln_t - h;
        RowTerms {
            ll: r.ln() + log_f,
            d_u: alpha * (h - 1.0),
            d_w: 1.0 - r,
            d_a: 1.0 + lh * (1.0 - h),
        }
    } else {
        let m = ((1.0 - r) + r * s).clamp(PROB_GUARD, 1.0);
        let sh = (lh - h).exp(); // h * S(t), overflow-safe
        RowTerms {
            ll: m.ln(),
            d_u: r * alpha * sh / m,
            d_w: r * (1.0 - r) * (s - 1.0) / m,
            d_a: -r * sh * lh / m,
        }
    }
}

/// Log-likelihood; errors with the offending row index when any term is not
/// finite.
pub fn loglik(data: &ModelData, params: &Params) -> Result<f64, SpdurError> {
    data.validate_durations()?;
    let beta = DVector::from_column_slice(&params.beta);
    let gamma = DVector::from_column_slice(&params.gamma);
    let u = &data.x * beta;
    let w = &data.z * gamma;
    let mut total = 0.0;
    for i in 0..data.n_obs() {
        let terms = row_terms(data.t[i], data.failed[i], u[i], w[i], params.log_alpha);
        if !terms.ll.is_finite() {
            return Err(SpdurError::NonFinite { row: i });
        }
        total += terms.ll;
    }
    Ok(total)
}

/// Log-likelihood and its gradient in packed parameter order.
pub fn loglik_gradient(data: &ModelData, params: &Params) -> Result<(f64, Vec<f64>), SpdurError> {
    data.validate_durations()?;
    let beta = DVector::from_column_slice(&params.beta);
    let gamma = DVector::from_column_slice(&params.gamma);
    let u = &data.x * beta;
    let w = &data.z * gamma;
    let n = data.n_obs();
    let mut total = 0.0;
    let mut d_u = DVector::zeros(n);
    let mut d_w = DVector::zeros(n);
    let mut d_a = 0.0;
    for i in 0..n {
        let terms = row_terms(data.t[i], data.failed[i], u[i], w[i], params.log_alpha);
        if !terms.ll.is_finite() || !terms.d_u.is_finite() || !terms.d_w.is_finite() {
            return Err(SpdurError::NonFinite { row: i });
        }
        total += terms.ll;
        d_u[i] = terms.d_u;
        d_w[i] = terms.d_w;
        d_a += terms.d_a;
    }
    let g_beta = data.x.transpose() * &d_u;
    let g_gamma = data.z.transpose() * &d_w;
    let mut grad: Vec<f64> = g_beta.iter().copied().collect();
    grad.extend(g_gamma.iter().copied());
    grad.push(d_a);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(SpdurError::NonFinite { row: 0 });
    }
    Ok((total, grad))
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    /// Gradient tolerance per observation; the stopping rule scales with n.
    pub grad_tol_per_obs: f64,
    pub max_iter: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            grad_tol_per_obs: 1e-7,
            max_iter: 500,
        }
    }
}

/// One coefficient line of a fit summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
}

/// A fitted split-population Weibull model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpdurFit {
    pub spec: SpdurSpec,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub log_alpha: f64,
    /// Covariance over (beta, gamma, log alpha), from the inverse observed
    /// information at the optimum.
    pub vcov: Vec<Vec<f64>>,
    pub loglik: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

/// Quantities predicted for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Prior at-risk probability logistic(z'gamma).
    pub risk_prob: f64,
    /// Posterior at-risk probability given survival to t.
    pub cond_risk: f64,
    /// Probability of failure within (t, t+1] for an at-risk subject.
    pub step_prob: f64,
    /// step_prob x cond_risk.
    pub cond_hazard: f64,
    /// Weibull hazard a lambda^a t^(a-1).
    pub uncond_hazard: f64,
}

fn start_values(data: &ModelData) -> Params {
    let n = data.n_obs();
    let ln_t = DVector::from_iterator(n, data.t.iter().map(|t| t.ln()));
    // Log-duration regression for beta.
    let xtx = data.x.transpose() * &data.x;
    let xty = data.x.transpose() * &ln_t;
    let beta = xtx.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| {
        let mut b = DVector::zeros(data.x.ncols());
        b[0] = ln_t.mean();
        b
    });
    // Intercept-only logit at the empirical at-risk rate.
    let rate = match &data.atrisk {
        Some(at) => at.iter().filter(|&&a| a).count() as f64 / n as f64,
        None => data.failed.iter().filter(|&&f| f).count() as f64 / n as f64,
    };
    let rate = rate.clamp(0.01, 0.99);
    let mut gamma = vec![0.0; data.z.ncols()];
    gamma[0] = (rate / (1.0 - rate)).ln();
    Params {
        beta: beta.iter().copied().collect(),
        gamma,
        log_alpha: 0.0,
    }
}

#[allow(clippy::needless_range_loop)] // j indexes both the matrix and its names
fn rank_check(m: &DMatrix<f64>, names: &[String], which: &'static str) -> Result<(), SpdurError> {
    let scale = m.amax().max(1.0);
    let eps = 1e-10 * scale;
    let full = m.clone().rank(eps);
    if full == m.ncols() {
        return Ok(());
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut flagged = Vec::new();
    for j in 0..m.ncols() {
        let cols: Vec<usize> = selected.iter().copied().chain(std::iter::once(j)).collect();
        let sub = m.select_columns(cols.iter());
        if sub.rank(eps) == cols.len() {
            selected.push(j);
        } else {
            flagged.push(names[j].clone());
        }
    }
    Err(SpdurError::RankDeficient {
        matrix: which,
        columns: flagged,
    })
}

/// Maximum-likelihood fit. Start values come from a log-duration regression
/// (beta), an intercept-only logit at the empirical at-risk rate (gamma), and
/// shape 1.
pub fn fit(data: &ModelData, settings: &FitSettings) -> Result<SpdurFit, SpdurError> {
    data.validate_durations()?;
    let n = data.n_obs();
    let failures = data.failed.iter().filter(|&&f| f).count();
    if failures == 0 || failures == n {
        return Err(SpdurError::NeedBothOutcomes { failures, total: n });
    }
    rank_check(&data.x, &data.x_names, "duration")?;
    rank_check(&data.z, &data.z_names, "risk")?;

    let p_x = data.x.ncols();
    let p_z = data.z.ncols();
    let start = start_values(data);
    let objective = |raw: &[f64]| {
        let params = Params::unpack(raw, p_x, p_z);
        loglik_gradient(data, &params).ok().map(|(ll, grad)| {
            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            (-ll, neg_grad)
        })
    };
    let optim_settings = OptimSettings {
        grad_tol: settings.grad_tol_per_obs * n as f64,
        max_iter: settings.max_iter,
        ..OptimSettings::default()
    };
    let solution = optim::minimize(objective, &start.pack(), &optim_settings)?;
    let params = Params::unpack(solution.x.as_slice(), p_x, p_z);

    // Observed information: numeric Hessian of -loglik from the analytic
    // gradient at the optimum.
    let grad_only = |raw: &[f64]| {
        let p = Params::unpack(raw, p_x, p_z);
        loglik_gradient(data, &p)
            .ok()
            .map(|(_, g)| g.iter().map(|v| -v).collect::<Vec<f64>>())
    };
    let info = optim::numeric_hessian(grad_only, solution.x.as_slice())
        .ok_or(SpdurError::SingularInformation)?;
    let vcov_m = optim::invert_spd(&info).ok_or(SpdurError::SingularInformation)?;
    let dim = vcov_m.nrows();
    let vcov: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| vcov_m[(i, j)]).collect())
        .collect();

    Ok(SpdurFit {
        spec: SpdurSpec {
            duration_formula: data.x_names[1..].to_vec(),
            risk_formula: data.z_names[1..].to_vec(),
        },
        beta: params.beta,
        gamma: params.gamma,
        log_alpha: params.log_alpha,
        vcov,
        loglik: -solution.value,
        n_obs: n,
        converged: solution.converged,
        iterations: solution.iterations,
        x_names: data.x_names.clone(),
        z_names: data.z_names.clone(),
    })
}

impl SpdurFit {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn params(&self) -> Params {
        Params {
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            log_alpha: self.log_alpha,
        }
    }

    /// Standard errors in packed order (beta, gamma, log alpha).
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.vcov.len())
            .map(|i| self.vcov[i][i].sqrt())
            .collect()
    }

    /// Two-sided normal p-values per coefficient. The shape row tests
    /// log alpha = 0, i.e. a constant hazard.
    pub fn summary(&self) -> Vec<CoefRow> {
        let se = self.std_errors();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let p_of = |est: f64, se: f64| {
            if se > 0.0 && se.is_finite() {
                2.0 * (1.0 - normal.cdf((est / se).abs()))
            } else {
                f64::NAN
            }
        };
        let mut rows = Vec::new();
        let names = self.x_names.iter().chain(self.z_names.iter());
        let estimates = self.beta.iter().chain(self.gamma.iter());
        for ((name, est), se) in names.zip(estimates).zip(&se) {
            rows.push(CoefRow {
                name: name.clone(),
                estimate: *est,
                std_error: *se,
                p_value: p_of(*est, *se),
            });
        }
        let se_log_alpha = se[se.len() - 1];
        rows.push(CoefRow {
            name: "weibull.shape".to_string(),
            estimate: self.alpha(),
            // Delta method from the log scale.
            std_error: se_log_alpha * self.alpha(),
            p_value: p_of(self.log_alpha, se_log_alpha),
        });
        rows
    }

    fn linear_predictors(&self, dur_covs: &[f64], risk_covs: &[f64]) -> (f64, f64) {
        let u = self.beta[0]
            + self.beta[1..]
                .iter()
                .zip(dur_covs)
                .map(|(b, x)| b * x)
                .sum::<f64>();
        let w = self.gamma[0]
            + self.gamma[1..]
                .iter()
                .zip(risk_covs)
                .map(|(g, z)| g * z)
                .sum::<f64>();
        (u, w)
    }

    /// Survivor function at duration `t` for a covariate profile.
    pub fn survival(&self, dur_covs: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let u = self.beta[0]
            + self.beta[1..]
                .iter()
                .zip(dur_covs)
                .map(|(b, x)| b * x)
                .sum::<f64>();
        (-(self.alpha() * (t.ln() - u)).exp()).exp()
    }

    /// Predicts for the month (t, t+1], where `t` is the elapsed duration at
    /// the start of that month (a duration row's `t.0`). Covariate slices
    /// follow the formulas, without intercepts.
    pub fn predict(&self, dur_covs: &[f64], risk_covs: &[f64], t: f64) -> Prediction {
        let (u, w) = self.linear_predictors(dur_covs, risk_covs);
        let alpha = self.alpha();
        let r = logistic(w);
        // h(t) = (lambda t)^alpha evaluated in log space; t = 0 gives 0.
        let h_of = |t: f64| -> f64 {
            if t <= 0.0 {
                0.0
            } else {
                (alpha * (t.ln() - u)).exp()
            }
        };
        let h_t = h_of(t);
        let s_t = (-h_t).exp();
        let cond_risk = r * s_t / ((1.0 - r) + r * s_t);
        // 1 - S(t+1)/S(t), computed as -expm1(h(t) - h(t+1)). When both
        // cumulative hazards overflow the difference is NaN; failure within
        // the month is then certain for an at-risk subject.
        let diff = h_t - h_of(t + 1.0);
        let step_prob = if diff.is_nan() { 1.0 } else { -diff.exp_m1() };
        let uncond_hazard = if t <= 0.0 {
            if alpha < 1.0 {
                f64::INFINITY
            } else if alpha == 1.0 {
                (-u).exp()
            } else {
                0.0
            }
        } else {
            (self.log_alpha - alpha * u + (alpha - 1.0) * t.ln()).exp()
        };
        Prediction {
            risk_prob: r,
            cond_risk,
            step_prob,
            cond_hazard: step_prob * cond_risk,
            uncond_hazard,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// One point on a hazard curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardPoint {
    pub t: f64,
    pub uncond_hazard: f64,
    pub cond_hazard: f64,
}

/// Evaluates the unconditional hazard and the month-step conditional hazard
/// along `t_values` for a fixed covariate profile.
pub fn hazard_curve(
    fit: &SpdurFit,
    dur_covs: &[f64],
    risk_covs: &[f64],
    t_values: &[f64],
) -> Vec<HazardPoint> {
    t_values
        .iter()
        .map(|&t| {
            let p = fit.predict(dur_covs, risk_covs, t);
            HazardPoint {
                t,
                uncond_hazard: p.uncond_hazard,
                cond_hazard: p.cond_hazard,
            }
        })
        .collect()
}

/// Simulation from the model's own generative process: covariates standard
/// normal, at-risk status Bernoulli(logistic(z'gamma)), at-risk durations
/// Weibull via inverse transform, censoring uniform on a given window.
pub mod simulate {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::{logistic, ModelData, Params};

    pub struct SimConfig {
        pub alpha: f64,
        pub beta: Vec<f64>,
        pub gamma: Vec<f64>,
        pub n_spells: usize,
        pub censor_lo: f64,
        pub censor_hi: f64,
        pub seed: u64,
    }

    fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        // Box-Muller.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// One endpoint row per spell: (t, failed) with true covariates.
    pub fn endpoint_spells(config: &SimConfig) -> (ModelData, Params) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let p_x = config.beta.len() - 1;
        let p_z = config.gamma.len() - 1;
        let mut dur_covs = Vec::with_capacity(config.n_spells);
        let mut risk_covs = Vec::with_capacity(config.n_spells);
        let mut t = Vec::with_capacity(config.n_spells);
        let mut failed = Vec::with_capacity(config.n_spells);
        for _ in 0..config.n_spells {
            let x: Vec<f64> = (0..p_x).map(|_| standard_normal(&mut rng)).collect();
            let z: Vec<f64> = (0..p_z).map(|_| standard_normal(&mut rng)).collect();
            let u = config.beta[0]
                + config.beta[1..]
                    .iter()
                    .zip(&x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>();
            let w = config.gamma[0]
                + config.gamma[1..]
                    .iter()
                    .zip(&z)
                    .map(|(g, v)| g * v)
                    .sum::<f64>();
            let censor = rng.gen_range(config.censor_lo..config.censor_hi);
            let at_risk = rng.gen::<f64>() < logistic(w);
            let (ti, fi) = if at_risk {
                // Inverse transform: T = exp(u) * (-ln U)^(1/alpha).
                let draw: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let duration = u.exp() * (-draw.ln()).powf(1.0 / config.alpha);
                if duration <= censor {
                    (duration, true)
                } else {
                    (censor, false)
                }
            } else {
                (censor, false)
            };
            dur_covs.push(x);
            risk_covs.push(z);
            t.push(ti);
            failed.push(fi);
        }
        let atrisk = Some(failed.clone()); // retroactive coding
        let data = ModelData::from_parts(dur_covs, risk_covs, t, failed, atrisk);
        let truth = Params {
            beta: config.beta.clone(),
            gamma: config.gamma.clone(),
            log_alpha: config.alpha.ln(),
        };
        (data, truth)
    }
}
