//! Classification and calibration metrics for sparse binary forecasts.
//!
//! Everything downstream of a scored prediction set lives here: confusion
//! counts at a cut point, precision/recall/F-score, F-maximizing cut point
//! selection, ROC/AUC by both the rank statistic and the threshold sweep,
//! separation-plot ordering, annualization, the fuzzy-window revised
//! precision, and the combined fit report.
//!
//! Metrics with a zero denominator are reported as undefined rather than
//! zero; the cut-point scan treats an undefined F-score as zero so a
//! degenerate threshold can never win.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::calendar::{CountryId, YearMonth};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("predictions ({predictions}) and outcomes ({outcomes}) differ in length")]
    LengthMismatch { predictions: usize, outcomes: usize },
    #[error("no positive outcomes")]
    NoPositives,
    #[error("no negative outcomes")]
    NoNegatives,
    #[error("empty input")]
    Empty,
}

fn check_lengths(predictions: &[f64], outcomes: &[bool]) -> Result<(), EvalError> {
    if predictions.len() != outcomes.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            outcomes: outcomes.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Confusion-matrix cell counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_negatives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_positives: u64,
}

impl ConfusionCounts {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self {
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
            true_positives: tp,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_negatives + self.false_positives + self.false_negatives + self.true_positives
    }
}

/// Tallies counts with the strict rule: predicted positive iff p > tau.
pub fn confusion(
    predictions: &[f64],
    outcomes: &[bool],
    tau: f64,
) -> Result<ConfusionCounts, EvalError> {
    check_lengths(predictions, outcomes)?;
    let mut c = ConfusionCounts::new(0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(outcomes) {
        match (p > tau, y) {
            (false, false) => c.true_negatives += 1,
            (true, false) => c.false_positives += 1,
            (false, true) => c.false_negatives += 1,
            (true, true) => c.true_positives += 1,
        }
    }
    Ok(c)
}

/// Ratio metrics; `None` marks an undefined (zero-denominator) value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub f_score: Option<f64>,
}

fn ratio(num: u64, denom: u64) -> Option<f64> {
    if denom == 0 {
        None
    } else {
        Some(num as f64 / denom as f64)
    }
}

pub fn metrics(c: &ConfusionCounts, beta: f64) -> Metrics {
    let recall = ratio(c.true_positives, c.true_positives + c.false_negatives);
    let precision = ratio(c.true_positives, c.true_positives + c.false_positives);
    let specificity = ratio(c.true_negatives, c.true_negatives + c.false_positives);
    let f_score = match (precision, recall) {
        (Some(p), Some(r)) => {
            let denom = p * beta * beta + r;
            if denom > 0.0 {
                Some((1.0 + beta * beta) * p * r / denom)
            } else {
                None
            }
        }
        _ => None,
    };
    Metrics {
        accuracy: ratio(c.true_positives + c.true_negatives, c.total()),
        recall,
        precision,
        specificity,
        false_positive_rate: ratio(c.false_positives, c.true_negatives + c.false_positives),
        f_score,
    }
}

/// Picks the F-maximizing cut point from the distinct observed prediction
/// values (undefined F counts as zero; ties go to the smallest tau).
pub fn optimal_tau(predictions: &[f64], outcomes: &[bool], beta: f64) -> Result<f64, EvalError> {
    check_lengths(predictions, outcomes)?;
    let n_pos = outcomes.iter().filter(|&&y| y).count() as u64;
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let n_neg = outcomes.len() as u64 - n_pos;
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]));

    // Descending sweep: at threshold v the positive set is every row with a
    // strictly larger prediction, accumulated before v's own group.
    let mut best: Option<(f64, f64)> = None; // (f, tau)
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut idx = 0;
    while idx < order.len() {
        let v = predictions[order[idx]];
        let counts = ConfusionCounts::new(n_neg - fp, fp, n_pos - tp, tp);
        let f = metrics(&counts, beta).f_score.unwrap_or(0.0);
        let better = match best {
            None => true,
            // Strictly better F wins; equal F prefers the smaller tau, and
            // the sweep visits taus in descending order.
            Some((best_f, _)) => f >= best_f,
        };
        if better {
            best = Some((f, v));
        }
        while idx < order.len() && predictions[order[idx]] == v {
            if outcomes[order[idx]] {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
    }
    Ok(best.expect("non-empty input").1)
}

/// One point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    pub threshold: f64,
}

/// Threshold-sweep ROC curve; both rates are non-decreasing and the endpoints
/// are (0,0) and (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Area under the curve by trapezoid integration, an independent route to
    /// the rank-statistic AUC.
    pub fn trapezoid_auc(&self) -> f64 {
        let mut auc = 0.0;
        for w in self.points.windows(2) {
            let dx = w[1].false_positive_rate - w[0].false_positive_rate;
            auc += dx * (w[1].true_positive_rate + w[0].true_positive_rate) / 2.0;
        }
        auc
    }
}

pub fn roc_curve(predictions: &[f64], outcomes: &[bool]) -> Result<RocCurve, EvalError> {
    check_lengths(predictions, outcomes)?;
    let n_pos = outcomes.iter().filter(|&&y| y).count() as f64;
    let n_neg = outcomes.len() as f64 - n_pos;
    if n_pos == 0.0 {
        return Err(EvalError::NoPositives);
    }
    if n_neg == 0.0 {
        return Err(EvalError::NoNegatives);
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]));
    let mut points = vec![RocPoint {
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let v = predictions[order[idx]];
        // Tied scores move together: one curve point per distinct threshold.
        while idx < order.len() && predictions[order[idx]] == v {
            if outcomes[order[idx]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            idx += 1;
        }
        points.push(RocPoint {
            false_positive_rate: fp / n_neg,
            true_positive_rate: tp / n_pos,
            threshold: v,
        });
    }
    Ok(RocCurve { points })
}

/// AUC as the Mann-Whitney rank statistic: the probability that a random
/// positive outranks a random negative, ties counted half.
pub fn auc_rank(predictions: &[f64], outcomes: &[bool]) -> Result<f64, EvalError> {
    check_lengths(predictions, outcomes)?;
    let n_pos = outcomes.iter().filter(|&&y| y).count();
    let n_neg = outcomes.len() - n_pos;
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    if n_neg == 0 {
        return Err(EvalError::NoNegatives);
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    // Average ranks across ties.
    let mut rank_sum_pos = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let v = predictions[order[idx]];
        let start = idx;
        while idx < order.len() && predictions[order[idx]] == v {
            idx += 1;
        }
        let avg_rank = (start + idx + 1) as f64 / 2.0; // 1-based ranks
        for &row in &order[start..idx] {
            if outcomes[row] {
                rank_sum_pos += avg_rank;
            }
        }
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// ROC curve plus rank-statistic AUC.
pub fn roc_auc(predictions: &[f64], outcomes: &[bool]) -> Result<(RocCurve, f64), EvalError> {
    Ok((
        roc_curve(predictions, outcomes)?,
        auc_rank(predictions, outcomes)?,
    ))
}

/// One separation-plot row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationRow {
    pub rank: usize,
    pub outcome: bool,
    pub prediction: f64,
}

/// Rows ordered ascending by prediction, ties by original index.
pub fn separation_plot_data(predictions: &[f64], outcomes: &[bool]) -> Vec<SeparationRow> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]).then(a.cmp(&b)));
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| SeparationRow {
            rank: rank + 1,
            outcome: outcomes[i],
            prediction: predictions[i],
        })
        .collect()
}

/// A scored country-month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonthlyPrediction {
    pub country: CountryId,
    pub ym: YearMonth,
    pub prediction: f64,
    pub outcome: bool,
}

/// A scored country-year after annualization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnualPrediction {
    pub country: CountryId,
    pub year: i32,
    pub prediction: f64,
    pub outcome: bool,
}

/// Aggregates country-months to country-years: the yearly outcome is the max
/// of the monthly outcomes and the yearly probability is 1 - prod(1 - p_m)
/// over the months available.
pub fn annualize(rows: &[MonthlyPrediction]) -> Vec<AnnualPrediction> {
    let mut groups: BTreeMap<(CountryId, i32), (f64, bool)> = BTreeMap::new();
    for r in rows {
        let e = groups.entry((r.country, r.ym.year)).or_insert((1.0, false));
        e.0 *= 1.0 - r.prediction;
        e.1 |= r.outcome;
    }
    groups
        .into_iter()
        .map(|((country, year), (surv, outcome))| AnnualPrediction {
            country,
            year,
            prediction: 1.0 - surv,
            outcome,
        })
        .collect()
}

/// Mean squared error of the probabilistic predictions.
pub fn brier(predictions: &[f64], outcomes: &[bool]) -> Result<f64, EvalError> {
    check_lengths(predictions, outcomes)?;
    let sum: f64 = predictions
        .iter()
        .zip(outcomes)
        .map(|(&p, &y)| (p - f64::from(y)).powi(2))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Fuzzy-window precision accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyPrecision {
    pub true_positives: u64,
    pub false_positives: u64,
    /// False positives within the window of an observed event.
    pub window_true: u64,
    pub revised: Option<f64>,
}

/// Revised precision once window-true false positives are credited:
/// (tp + window_true) / (tp + fp).
pub fn revised_precision(tp: u64, fp: u64, window_true: u64) -> Option<f64> {
    if tp + fp == 0 {
        None
    } else {
        Some((tp + window_true) as f64 / (tp + fp) as f64)
    }
}

/// Reclassifies false positives that fall within `window` months of any
/// observed event in the same country.
pub fn fuzzy_precision(
    rows: &[MonthlyPrediction],
    tau: f64,
    window: i64,
) -> Result<FuzzyPrecision, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut events: BTreeMap<CountryId, Vec<i64>> = BTreeMap::new();
    for r in rows {
        if r.outcome {
            events.entry(r.country).or_default().push(r.ym.index());
        }
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut window_true = 0;
    for r in rows {
        // Same strict rule as `confusion`: positive iff p > tau.
        let positive = r.prediction > tau;
        if !positive {
            continue;
        }
        if r.outcome {
            tp += 1;
        } else {
            fp += 1;
            let near = events
                .get(&r.country)
                .is_some_and(|months| months.iter().any(|&m| (m - r.ym.index()).abs() <= window));
            if near {
                window_true += 1;
            }
        }
    }
    Ok(FuzzyPrecision {
        true_positives: tp,
        false_positives: fp,
        window_true,
        revised: revised_precision(tp, fp, window_true),
    })
}

/// Prediction frequency of a scored set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frequency {
    Monthly,
    Annualized,
}

impl Frequency {
    pub fn label(self) -> &'static str {
        match self {
            Frequency::Monthly => "monthly",
            Frequency::Annualized => "annualized",
        }
    }
}

/// One model scored on one partition at one frequency.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    pub model: String,
    pub partition: String,
    pub frequency: Frequency,
    pub weight: Option<f64>,
    pub predictions: Vec<f64>,
    pub outcomes: Vec<bool>,
}

/// One line of the fit report.
#[derive(Debug, Clone)]
pub struct FitReportRow {
    pub model: String,
    pub partition: String,
    pub frequency: Frequency,
    pub weight: Option<f64>,
    pub auc: Option<f64>,
    pub tau: Option<f64>,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub brier: Option<f64>,
    pub n_obs: usize,
}

/// Scores every set: AUC, F-maximizing tau, and the tau-bound metrics.
/// Degenerate sets (no positives or no negatives) leave the affected fields
/// undefined rather than failing the whole report.
pub fn fit_report(scored: &[ScoredSet], f_beta: f64) -> Vec<FitReportRow> {
    scored
        .iter()
        .map(|s| {
            let auc = auc_rank(&s.predictions, &s.outcomes).ok();
            let tau = optimal_tau(&s.predictions, &s.outcomes, f_beta).ok();
            let at_tau = tau.and_then(|t| confusion(&s.predictions, &s.outcomes, t).ok());
            let m = at_tau.map(|c| metrics(&c, f_beta));
            FitReportRow {
                model: s.model.clone(),
                partition: s.partition.clone(),
                frequency: s.frequency,
                weight: s.weight,
                auc,
                tau,
                accuracy: m.and_then(|m| m.accuracy),
                recall: m.and_then(|m| m.recall),
                precision: m.and_then(|m| m.precision),
                brier: brier(&s.predictions, &s.outcomes).ok(),
                n_obs: s.predictions.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(y: i32, m: u8) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    #[test]
    fn confusion_on_hand_rows() {
        let preds = [0.9, 0.2, 0.6, 0.1];
        let ys = [true, true, false, false];
        let c = confusion(&preds, &ys, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 1));
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn tau_one_classifies_nothing_positive() {
        let preds = [1.0, 0.7, 0.3];
        let ys = [true, false, true];
        let c = confusion(&preds, &ys, 1.0).unwrap();
        assert_eq!(c.false_positives, 0);
        assert_eq!(c.true_positives, 0);
    }

    #[test]
    fn metrics_match_published_arithmetic() {
        // recall 22/44 = 0.50, precision 22/2221 = 0.0099.
        let c = ConfusionCounts::new(23_505, 2_199, 22, 22);
        let m = metrics(&c, 1.0);
        assert!((m.recall.unwrap() - 0.50).abs() < 1e-12);
        assert!((m.precision.unwrap() - 0.0099).abs() < 1e-4);
        // recall 4/44 = 0.091, precision 4/81 = 0.049.
        let c = ConfusionCounts::new(25_627, 77, 40, 4);
        let m = metrics(&c, 1.0);
        assert!((m.recall.unwrap() - 0.091).abs() < 1e-3);
        assert!((m.precision.unwrap() - 0.049).abs() < 1e-3);
    }

    #[test]
    fn f1_of_equal_rates_is_that_rate() {
        // precision = recall = 0.5 at beta = 1.
        let c = ConfusionCounts::new(2, 1, 1, 1);
        let m = metrics(&c, 1.0);
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(0.5));
        assert!((m.f_score.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn undefined_metrics_are_none_not_zero() {
        let c = ConfusionCounts::new(10, 0, 0, 0);
        let m = metrics(&c, 1.0);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f_score, None);
        assert_eq!(m.accuracy, Some(1.0));
    }

    #[test]
    fn optimal_tau_on_separated_predictions() {
        let preds = [0.1, 0.2, 0.8, 0.9];
        let ys = [false, false, true, true];
        let tau = optimal_tau(&preds, &ys, 1.0).unwrap();
        assert_eq!(tau, 0.2);
        let c = confusion(&preds, &ys, tau).unwrap();
        assert_eq!(metrics(&c, 1.0).f_score, Some(1.0));
    }

    #[test]
    fn optimal_tau_requires_positives() {
        let preds = [0.1, 0.2];
        let ys = [false, false];
        assert_eq!(optimal_tau(&preds, &ys, 1.0), Err(EvalError::NoPositives));
    }

    #[test]
    fn optimal_tau_matches_exhaustive_scan() {
        let preds = [0.12, 0.5, 0.31, 0.5, 0.77, 0.05, 0.62, 0.31, 0.9, 0.44];
        let ys = [
            false, true, false, false, true, false, false, true, true, false,
        ];
        let fast = optimal_tau(&preds, &ys, 1.0).unwrap();
        // Brute force: evaluate F at every observed value, smallest tau wins ties.
        let mut best = (f64::NEG_INFINITY, f64::INFINITY);
        let mut candidates = preds.to_vec();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        for &tau in &candidates {
            let c = confusion(&preds, &ys, tau).unwrap();
            let f = metrics(&c, 1.0).f_score.unwrap_or(0.0);
            if f > best.0 || (f == best.0 && tau < best.1) {
                best = (f, tau);
            }
        }
        assert_eq!(fast, best.1);
    }

    #[test]
    fn perfect_ranking_has_auc_one() {
        let preds = [0.1, 0.2, 0.8, 0.9];
        let ys = [false, false, true, true];
        let (curve, auc) = roc_auc(&preds, &ys).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.trapezoid_auc(), 1.0);
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!(
            (first.false_positive_rate, first.true_positive_rate),
            (0.0, 0.0)
        );
        assert_eq!(
            (last.false_positive_rate, last.true_positive_rate),
            (1.0, 1.0)
        );
    }

    #[test]
    fn tied_fixture_matches_pairwise_brute_force() {
        let preds = [0.3, 0.5, 0.5, 0.2, 0.7, 0.5];
        let ys = [false, true, false, false, true, true];
        let auc = auc_rank(&preds, &ys).unwrap();
        // All positive x negative pairs, half credit for ties.
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..preds.len() {
            for j in 0..preds.len() {
                if ys[i] && !ys[j] {
                    pairs += 1.0;
                    if preds[i] > preds[j] {
                        credit += 1.0;
                    } else if preds[i] == preds[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        assert!((auc - credit / pairs).abs() < 1e-15);
        // Sweep route agrees.
        let curve = roc_curve(&preds, &ys).unwrap();
        assert!((curve.trapezoid_auc() - auc).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let preds = [0.05, 0.31, 0.12, 0.9, 0.44, 0.27, 0.66];
        let ys = [false, true, false, true, false, false, true];
        let base = auc_rank(&preds, &ys).unwrap();
        let squashed: Vec<f64> = preds.iter().map(|p| (5.0 * p).tanh()).collect();
        assert_eq!(auc_rank(&squashed, &ys).unwrap(), base);
    }

    #[test]
    fn separation_rows_sort_by_prediction_then_index() {
        let preds = [0.4, 0.1, 0.4, 0.9];
        let ys = [true, false, false, true];
        let rows = separation_plot_data(&preds, &ys);
        let order: Vec<f64> = rows.iter().map(|r| r.prediction).collect();
        assert_eq!(order, vec![0.1, 0.4, 0.4, 0.9]);
        // The tied 0.4s keep original relative order (indices 0 then 2).
        assert!(rows[1].outcome);
        assert!(!rows[2].outcome);
        assert_eq!(
            rows.iter().map(|r| r.rank).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );

        let sorted = separation_plot_data(&[0.1, 0.2, 0.3], &[false, false, true]);
        assert_eq!(
            sorted.iter().map(|r| r.prediction).collect::<Vec<_>>(),
            vec![0.1, 0.2, 0.3]
        );
        let reversed = separation_plot_data(&[0.3, 0.2, 0.1], &[true, false, false]);
        assert_eq!(
            reversed.iter().map(|r| r.prediction).collect::<Vec<_>>(),
            vec![0.1, 0.2, 0.3]
        );
    }

    fn monthly(country: i64, y: i32, m: u8, p: f64, outcome: bool) -> MonthlyPrediction {
        MonthlyPrediction {
            country: CountryId(country),
            ym: ym(y, m),
            prediction: p,
            outcome,
        }
    }

    #[test]
    fn annualize_hand_values() {
        // Two months at 0.1: 1 - 0.9^2 = 0.19.
        let rows = vec![
            monthly(1, 2005, 1, 0.1, false),
            monthly(1, 2005, 2, 0.1, false),
        ];
        let yearly = annualize(&rows);
        assert_eq!(yearly.len(), 1);
        assert!((yearly[0].prediction - 0.19).abs() < 1e-12);
        assert!(!yearly[0].outcome);

        // Twelve months at 0.05: 1 - 0.95^12.
        let rows: Vec<MonthlyPrediction> = (1..=12)
            .map(|m| monthly(2, 2005, m, 0.05, m == 7))
            .collect();
        let yearly = annualize(&rows);
        let expected = 1.0 - 0.95f64.powi(12);
        assert!((yearly[0].prediction - expected).abs() < 1e-12);
        assert!((yearly[0].prediction - 0.4596).abs() < 1e-4);
        assert!(yearly[0].outcome, "yearly outcome is the max of months");

        // All-zero months stay zero.
        let rows = vec![
            monthly(3, 2005, 1, 0.0, false),
            monthly(3, 2005, 2, 0.0, false),
        ];
        assert_eq!(annualize(&rows)[0].prediction, 0.0);
    }

    #[test]
    fn annualized_probability_brackets() {
        let ps = [0.02, 0.11, 0.4, 0.07];
        let rows: Vec<MonthlyPrediction> = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| monthly(1, 2005, i as u8 + 1, p, false))
            .collect();
        let yearly = annualize(&rows)[0].prediction;
        let max = ps.iter().copied().fold(0.0f64, f64::max);
        let sum: f64 = ps.iter().sum();
        assert!(yearly >= max && yearly <= sum);
    }

    #[test]
    fn revised_precision_published_arithmetic() {
        // 4 true positives, 77 false positives, 38 in-window: 42/81.
        let revised = revised_precision(4, 77, 38).unwrap();
        assert!((revised - 0.519).abs() < 1e-3);
        assert_eq!(revised_precision(0, 0, 0), None);
    }

    #[test]
    fn fuzzy_window_reclassifies_near_misses() {
        // One event in country 1 at 2005-06; alarms at 2005-03 (in window),
        // 2006-01 (outside), and a true positive at the event month.
        let rows = vec![
            monthly(1, 2005, 3, 0.9, false),
            monthly(1, 2005, 6, 0.9, true),
            monthly(1, 2006, 1, 0.9, false), // 7 months out: beyond the window
            monthly(2, 2005, 6, 0.9, false), // other country, never near an event
            monthly(1, 2005, 1, 0.1, false),
            monthly(1, 2005, 2, 0.1, false),
            monthly(2, 2005, 7, 0.1, false),
            monthly(2, 2005, 8, 0.1, false),
        ];
        let fz = fuzzy_precision(&rows, 0.5, 6).unwrap();
        assert_eq!(fz.true_positives, 1);
        assert_eq!(fz.false_positives, 3);
        assert_eq!(fz.window_true, 1);
        assert!((fz.revised.unwrap() - 0.5).abs() < 1e-12);

        // Window 0 leaves ordinary precision.
        let fz0 = fuzzy_precision(&rows, 0.5, 0).unwrap();
        assert_eq!(fz0.window_true, 0);
        assert!((fz0.revised.unwrap() - 0.25).abs() < 1e-12);
        assert!(fz.revised.unwrap() >= fz0.revised.unwrap());
    }

    #[test]
    fn accuracy_paradox_reproduces() {
        // Sparse outcomes: 2 events in 100 rows. A model with some signal at
        // a low cut point loses on raw accuracy to the all-zero predictor.
        let mut preds = vec![0.0f64; 100];
        let mut ys = vec![false; 100];
        ys[3] = true;
        ys[57] = true;
        preds[3] = 0.6; // catches one event
        for (i, p) in preds.iter_mut().enumerate() {
            if i % 10 == 0 {
                *p = 0.4; // ten false alarms at a low threshold
            }
        }
        let model = confusion(&preds, &ys, 0.3).unwrap();
        let zero = confusion(&vec![0.0; 100], &ys, 0.3).unwrap();
        let acc_model = metrics(&model, 1.0).accuracy.unwrap();
        let acc_zero = metrics(&zero, 1.0).accuracy.unwrap();
        assert!(acc_zero > acc_model);
        // And the zero predictor's accuracy equals the negative base rate.
        assert!((acc_zero - 0.98).abs() < 1e-12);
        // Yet the model has recall while the zero predictor has none.
        assert_eq!(metrics(&model, 1.0).recall, Some(0.5));
        assert_eq!(metrics(&zero, 1.0).recall, Some(0.0));
    }

    #[test]
    fn brier_of_perfect_and_worst() {
        let ys = [true, false];
        assert_eq!(brier(&[1.0, 0.0], &ys).unwrap(), 0.0);
        assert_eq!(brier(&[0.0, 1.0], &ys).unwrap(), 1.0);
    }

    #[test]
    fn fit_report_single_and_perfect() {
        let perfect = ScoredSet {
            model: "m".into(),
            partition: "test".into(),
            frequency: Frequency::Monthly,
            weight: Some(1.0),
            predictions: vec![0.9, 0.8, 0.1, 0.2],
            outcomes: vec![true, true, false, false],
        };
        let rows = fit_report(&[perfect], 1.0);
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.auc, Some(1.0));
        assert_eq!(row.accuracy, Some(1.0));
        assert_eq!(row.recall, Some(1.0));
        assert_eq!(row.precision, Some(1.0));
    }

    #[test]
    fn fit_report_composes_the_individual_operations() {
        let preds = vec![0.7, 0.2, 0.5, 0.9, 0.05, 0.3];
        let ys = vec![true, false, false, true, false, true];
        let set = ScoredSet {
            model: "m".into(),
            partition: "calibration".into(),
            frequency: Frequency::Annualized,
            weight: None,
            predictions: preds.clone(),
            outcomes: ys.clone(),
        };
        let row = &fit_report(&[set], 1.0)[0];
        let tau = optimal_tau(&preds, &ys, 1.0).unwrap();
        let c = confusion(&preds, &ys, tau).unwrap();
        let m = metrics(&c, 1.0);
        assert_eq!(row.tau, Some(tau));
        assert_eq!(row.accuracy, m.accuracy);
        assert_eq!(row.recall, m.recall);
        assert_eq!(row.precision, m.precision);
        assert_eq!(row.auc, Some(auc_rank(&preds, &ys).unwrap()));
        assert_eq!(row.brier, Some(brier(&preds, &ys).unwrap()));
    }
}
