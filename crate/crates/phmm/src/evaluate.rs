//! Cross-validation schemes, classification metrics, and event-probability
//! queries.
//!
//! Two fold schemes are provided: contiguous sub-profile halves (each series
//! cut so its labels split as evenly as possible) and stratified folds over
//! binary-outcome units. Cross-validation refits on the complement of each
//! fold with labels intact, then decodes the held-out series with every label
//! removed and unit weights, so nothing about a held-out label can reach the
//! evaluation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions};
use crate::markov::{decode, weighted_emission_log_matrix, Decoding, LabeledSeries};
use crate::model::ModelSpec;
use crate::weighting::validate_alpha;

/// How fold assignments were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldScheme {
    /// Units are contiguous sub-profiles of original series.
    Subprofile,
    /// Units dealt into folds per binary outcome class.
    StratifiedByOutcome,
}

/// Partition of evaluation units (series ids) into folds.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub seed: u64,
    /// Unit ids per fold; the folds are disjoint.
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    /// Checks that folds are nonempty, disjoint, and drawn from `unit_ids`.
    /// Units outside every fold are allowed; they train in every fold.
    pub fn validate_units(&self, unit_ids: &[String]) -> Result<()> {
        let known: BTreeSet<&str> = unit_ids.iter().map(|s| s.as_str()).collect();
        if known.len() != unit_ids.len() {
            return Err(Error::InvalidFoldPlan("duplicate unit ids in dataset".into()));
        }
        let mut seen = BTreeSet::new();
        for (k, fold) in self.folds.iter().enumerate() {
            if fold.is_empty() {
                return Err(Error::InvalidFoldPlan(format!("fold {k} is empty")));
            }
            for id in fold {
                if !known.contains(id.as_str()) {
                    return Err(Error::InvalidFoldPlan(format!(
                        "fold {k} names unknown unit {id}"
                    )));
                }
                if !seen.insert(id.clone()) {
                    return Err(Error::InvalidFoldPlan(format!(
                        "unit {id} appears in more than one fold"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits one series into two contiguous halves whose label counts are
/// ceil(K/2) and floor(K/2). The cut is drawn uniformly among the positions
/// achieving that split.
pub fn split_subprofiles(
    series: &LabeledSeries,
    seed: u64,
) -> Result<(LabeledSeries, LabeledSeries)> {
    let idx = series.label_indices();
    let k = idx.len();
    if k < 2 {
        return Err(Error::CannotSplit(series.id().to_string()));
    }
    let m = k.div_ceil(2);
    // First part takes labels idx[0..m]; any cut in (idx[m-1], idx[m]] works.
    let lo = idx[m - 1] + 1;
    let hi = idx[m];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cut = lo + rng.random_range(0..=(hi - lo));
    let first = series.slice(0, cut, format!("{}.a", series.id()))?;
    let second = series.slice(cut, series.len(), format!("{}.b", series.id()))?;
    debug_assert_eq!(first.n_labelled(), m);
    debug_assert_eq!(second.n_labelled(), k - m);
    Ok((first, second))
}

/// Deals binary-outcome units into `k` folds so that per-class counts differ
/// by at most one across folds. Deterministic given the seed.
pub fn make_stratified_folds(
    units: &[(String, bool)],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidFoldPlan(format!("need at least 2 folds, got {k}")));
    }
    if k > units.len() {
        return Err(Error::InvalidFoldPlan(format!(
            "{k} folds for only {} units",
            units.len()
        )));
    }
    let mut positives: Vec<&String> =
        units.iter().filter(|(_, y)| *y).map(|(id, _)| id).collect();
    let mut negatives: Vec<&String> =
        units.iter().filter(|(_, y)| !*y).map(|(id, _)| id).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidFoldPlan(
            "stratified folds need both outcome classes present".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut positives, &mut rng);
    shuffle(&mut negatives, &mut rng);
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, id) in positives.iter().enumerate() {
        folds[i % k].push((*id).clone());
    }
    for (i, id) in negatives.iter().enumerate() {
        // Offset so the leftover positives and negatives land on different
        // folds when possible.
        folds[(i + positives.len()) % k].push((*id).clone());
    }
    let plan = FoldPlan { scheme: FoldScheme::StratifiedByOutcome, seed, folds };
    let ids: Vec<String> = units.iter().map(|(id, _)| id.clone()).collect();
    plan.validate_units(&ids)?;
    Ok(plan)
}

/// Fisher-Yates with the crate's seeded generator.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Splits every series into two contiguous sub-profiles and holds each one
/// out in its own leave-one-out fold. Returns the sub-profile dataset along
/// with the plan.
pub fn subprofile_loo_plan(
    dataset: &[LabeledSeries],
    seed: u64,
) -> Result<(Vec<LabeledSeries>, FoldPlan)> {
    let mut units = Vec::with_capacity(dataset.len() * 2);
    for (i, series) in dataset.iter().enumerate() {
        let (a, b) = split_subprofiles(series, seed.wrapping_add(i as u64))?;
        units.push(a);
        units.push(b);
    }
    let folds = units.iter().map(|u| vec![u.id().to_string()]).collect();
    Ok((units, FoldPlan { scheme: FoldScheme::Subprofile, seed, folds }))
}

/// Training set for one fold: every series outside the fold, labels intact.
/// Held-out series contribute nothing, so their labels can never leak.
pub fn training_series(dataset: &[LabeledSeries], fold: &[String]) -> Vec<LabeledSeries> {
    let held: BTreeSet<&str> = fold.iter().map(|s| s.as_str()).collect();
    dataset.iter().filter(|s| !held.contains(s.id())).cloned().collect()
}

/// Held-out set for one fold: the fold's series with all labels removed, in
/// dataset order.
pub fn heldout_series(dataset: &[LabeledSeries], fold: &[String]) -> Vec<LabeledSeries> {
    let held: BTreeSet<&str> = fold.iter().map(|s| s.as_str()).collect();
    dataset.iter().filter(|s| held.contains(s.id())).map(|s| s.without_labels()).collect()
}

/// Held-out decode of one evaluation unit.
#[derive(Debug, Clone)]
pub struct HeldOutDecoding {
    pub series_id: String,
    pub fold: usize,
    pub decoding: Decoding,
}

/// All held-out decodes of a cross-validation run, one per dataset series.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub per_series: Vec<HeldOutDecoding>,
}

impl CrossValidation {
    pub fn find(&self, series_id: &str) -> Option<&HeldOutDecoding> {
        self.per_series.iter().find(|h| h.series_id == series_id)
    }
}

/// Decodes one series with unit weights and no labels.
fn decode_unlabelled(params: &crate::model::ModelParams, series: &LabeledSeries) -> Result<Decoding> {
    let stripped = series.without_labels();
    let weights = vec![1.0; stripped.len()];
    let logb = weighted_emission_log_matrix(
        &stripped,
        &params.emissions,
        &params.label_model,
        &weights,
    )?;
    decode(&params.delta, &params.gamma, &logb)
}

/// Runs fold-wise fit-then-decode over the whole plan.
///
/// For each fold the model is fitted on the complement (labels included,
/// weight scheme given by `alpha`) and every held-out series is decoded with
/// all labels removed and unit weights. Each fold member is decoded exactly
/// once; series outside every fold train everywhere and are never decoded.
/// A failing fold aborts with the fold identified.
pub fn cross_validate(
    spec: &ModelSpec,
    dataset: &[LabeledSeries],
    alpha: f64,
    plan: &FoldPlan,
    fit_options: &FitOptions,
) -> Result<CrossValidation> {
    validate_alpha(alpha)?;
    let ids: Vec<String> = dataset.iter().map(|s| s.id().to_string()).collect();
    plan.validate_units(&ids)?;
    let fold_results: Vec<Vec<HeldOutDecoding>> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(fold_idx, fold)| -> Result<Vec<HeldOutDecoding>> {
            let train = training_series(dataset, fold);
            if train.is_empty() {
                return Err(Error::InvalidFoldPlan(format!(
                    "fold {fold_idx} holds out the entire dataset"
                )));
            }
            let fitted = fit(spec, &train, alpha, fit_options).map_err(|e| {
                Error::FitFailure(format!("fold {fold_idx} ({} series held out): {e}", fold.len()))
            })?;
            heldout_series(dataset, fold)
                .iter()
                .map(|series| {
                    let decoding = decode_unlabelled(&fitted.params, series)?;
                    Ok(HeldOutDecoding {
                        series_id: series.id().to_string(),
                        fold: fold_idx,
                        decoding,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    // Reassemble in dataset order; series outside every fold have no decode.
    let mut by_id: std::collections::BTreeMap<String, HeldOutDecoding> = fold_results
        .into_iter()
        .flatten()
        .map(|h| (h.series_id.clone(), h))
        .collect();
    let per_series = ids.iter().filter_map(|id| by_id.remove(id)).collect();
    Ok(CrossValidation { per_series })
}

/// One-vs-rest classification rates for a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRates {
    pub state: usize,
    /// Labelled units whose true state is `state`.
    pub support: usize,
    /// None when the state never occurs among the true labels.
    pub sensitivity: Option<f64>,
    /// None when every unit is truly `state` (no negatives).
    pub specificity: Option<f64>,
}

/// One-vs-rest sensitivity and specificity per state over labelled units,
/// given `(predicted, actual)` pairs.
pub fn sensitivity_specificity(
    pairs: &[(usize, usize)],
    n_states: usize,
) -> Result<Vec<ClassRates>> {
    if pairs.is_empty() {
        return Err(Error::Dataset("no labelled units to score".into()));
    }
    for &(p, a) in pairs {
        if p >= n_states || a >= n_states {
            return Err(Error::InvalidLabel { label: p.max(a), n_states });
        }
    }
    let mut out = Vec::with_capacity(n_states);
    for state in 0..n_states {
        let mut tp = 0usize;
        let mut fn_ = 0usize;
        let mut fp = 0usize;
        let mut tn = 0usize;
        for &(pred, actual) in pairs {
            match (actual == state, pred == state) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        let sensitivity =
            if tp + fn_ > 0 { Some(tp as f64 / (tp + fn_) as f64) } else { None };
        let specificity =
            if tn + fp > 0 { Some(tn as f64 / (tn + fp) as f64) } else { None };
        out.push(ClassRates { state, support: tp + fn_, sensitivity, specificity });
    }
    Ok(out)
}

/// Area under the ROC curve via the rank statistic: the probability that a
/// random positive outscores a random negative, ties counted one half.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|(_, y)| *y).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidParameter("scores must not be NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.partial_cmp(&scores[b].0).unwrap());
    // Average ranks over tie runs (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &o in &order[i..=j] {
            if scores[o].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Posterior probability that a series ends inside `states` (0-based).
/// The empty set yields 0 by convention.
pub fn terminal_event_probability(decoding: &Decoding, states: &[usize]) -> Result<f64> {
    let n = decoding.posteriors.ncols();
    let t_last = decoding.posteriors.nrows() - 1;
    let set: BTreeSet<usize> = states.iter().cloned().collect();
    for &s in &set {
        if s >= n {
            return Err(Error::InvalidParameter(format!(
                "state {s} out of range for {n} states"
            )));
        }
    }
    Ok(set.iter().map(|&s| decoding.posteriors[(t_last, s)]).sum())
}

/// Strictly-greater-than thresholding; a probability equal to the threshold
/// classifies negative.
pub fn classify_by_threshold(probabilities: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if !threshold.is_finite() {
        return Err(Error::InvalidParameter(format!("threshold {threshold} is not finite")));
    }
    for &p in probabilities {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(probabilities.iter().map(|&p| p > threshold).collect())
}

/// Whether per-state AUC pools labelled units across folds or averages the
/// per-fold AUCs (folds missing a class are skipped in the average).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AucMode {
    Pooled,
    FoldMean,
}

impl std::fmt::Display for AucMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AucMode::Pooled => "pooled",
            AucMode::FoldMean => "fold-mean",
        })
    }
}

impl std::str::FromStr for AucMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<AucMode> {
        match s {
            "pooled" => Ok(AucMode::Pooled),
            "fold-mean" => Ok(AucMode::FoldMean),
            other => Err(Error::Config(format!(
                "unknown AUC mode {other}; expected pooled or fold-mean"
            ))),
        }
    }
}

/// Per-state metrics of one cross-validation run at one alpha.
#[derive(Debug, Clone)]
pub struct StateMetrics {
    pub state: usize,
    pub support: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

/// Metrics of one cross-validation run at one alpha.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub alpha: f64,
    pub auc_mode: AucMode,
    pub n_units: usize,
    pub n_labelled: usize,
    pub states: Vec<StateMetrics>,
}

/// Lowest-index argmax of a posterior row.
fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores every formerly labelled index of a cross-validation run: predicted
/// state by posterior argmax, per-state posteriors as one-vs-rest scores, and
/// the truth from the original dataset. Series the run never held out are
/// skipped.
pub fn metrics_from_cv(
    cv: &CrossValidation,
    dataset: &[LabeledSeries],
    n_states: usize,
    alpha: f64,
    auc_mode: AucMode,
) -> Result<MetricsReport> {
    // (fold, truth, predicted, per-state scores).
    let mut units: Vec<(usize, usize, usize, Vec<f64>)> = Vec::new();
    for series in dataset {
        series.validate_labels(n_states)?;
        let Some(held) = cv.find(series.id()) else {
            continue;
        };
        if held.decoding.posteriors.nrows() != series.len() {
            return Err(Error::ShapeMismatch(format!(
                "series {}: decode length {} does not match series length {}",
                series.id(),
                held.decoding.posteriors.nrows(),
                series.len()
            )));
        }
        for t in series.label_indices() {
            let truth = series.labels()[t].expect("label_indices returned unlabelled index");
            let row = held.decoding.posteriors.row(t);
            units.push((held.fold, truth, argmax_row(row), row.to_vec()));
        }
    }
    if units.is_empty() {
        return Err(Error::Dataset("no labelled indices to evaluate".into()));
    }
    let pairs: Vec<(usize, usize)> = units.iter().map(|u| (u.2, u.1)).collect();
    let rates = sensitivity_specificity(&pairs, n_states)?;
    let n_folds = units.iter().map(|u| u.0).max().unwrap_or(0) + 1;
    let mut states = Vec::with_capacity(n_states);
    for rate in rates {
        let state = rate.state;
        let state_auc = match auc_mode {
            AucMode::Pooled => {
                let scores: Vec<(f64, bool)> =
                    units.iter().map(|u| (u.3[state], u.1 == state)).collect();
                auc(&scores).ok()
            }
            AucMode::FoldMean => {
                let mut fold_aucs = Vec::new();
                for fold in 0..n_folds {
                    let scores: Vec<(f64, bool)> = units
                        .iter()
                        .filter(|u| u.0 == fold)
                        .map(|u| (u.3[state], u.1 == state))
                        .collect();
                    if let Ok(a) = auc(&scores) {
                        fold_aucs.push(a);
                    }
                }
                if fold_aucs.is_empty() {
                    None
                } else {
                    Some(fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64)
                }
            }
        };
        states.push(StateMetrics {
            state,
            support: rate.support,
            sensitivity: rate.sensitivity,
            specificity: rate.specificity,
            auc: state_auc,
        });
    }
    Ok(MetricsReport {
        alpha,
        auc_mode,
        n_units: cv.per_series.len(),
        n_labelled: units.len(),
        states,
    })
}

/// Terminal event probability per series of a cross-validation run, in run
/// order.
pub fn terminal_scores(
    cv: &CrossValidation,
    states: &[usize],
) -> Result<Vec<(String, f64)>> {
    cv.per_series
        .iter()
        .map(|h| Ok((h.series_id.clone(), terminal_event_probability(&h.decoding, states)?)))
        .collect()
}

/// Binary outcome of each series from its labels: positive when any label
/// falls in `event_states`, negative when any falls in `control_states`
/// (events win conflicts), `None` when neither occurs.
pub fn series_outcomes(
    dataset: &[LabeledSeries],
    event_states: &[usize],
    control_states: &[usize],
) -> Vec<(String, Option<bool>)> {
    let events: BTreeSet<usize> = event_states.iter().cloned().collect();
    let controls: BTreeSet<usize> = control_states.iter().cloned().collect();
    dataset
        .iter()
        .map(|series| {
            let mut outcome = None;
            for label in series.labels().iter().flatten() {
                if events.contains(label) {
                    outcome = Some(true);
                    break;
                }
                if controls.contains(label) {
                    outcome = Some(false);
                }
            }
            (series.id().to_string(), outcome)
        })
        .collect()
}
