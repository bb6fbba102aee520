//! Markov chain parameters, labelled series, and the decoding recursions.
//!
//! All recursions work on a T x N weighted log emission matrix whose (t, i)
//! entry is w_t * (ln f_i(y_t) + ln g_i(z_t)), with the convention
//! 0 * (-inf) = 0 so that zero-weight indices contribute an exact factor of
//! one. The forward pass rescales per step, so series with tens of thousands
//! of indices stay in range.

use ndarray::{s, Array2};

use crate::distributions::{EmissionProduct, LabelModel, MissingPolicy};
use crate::error::{Error, Result};

fn validate_prob_vec(what: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} is empty")));
    }
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{what} has invalid probability {v}"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {sum}, expected 1 within 1e-12"
        )));
    }
    Ok(())
}

/// Distribution of the state at the first index of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution(Vec<f64>);

impl InitialDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_prob_vec("initial distribution", &probs)?;
        Ok(InitialDistribution(probs))
    }

    pub fn uniform(n_states: usize) -> Self {
        InitialDistribution(vec![1.0 / n_states as f64; n_states])
    }

    /// Point mass on one state.
    pub fn degenerate(n_states: usize, state: usize) -> Result<Self> {
        if state >= n_states {
            return Err(Error::InvalidLabel { label: state, n_states });
        }
        let mut p = vec![0.0; n_states];
        p[state] = 1.0;
        Ok(InitialDistribution(p))
    }

    pub fn n_states(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Mixture component weights; same constraints as an initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_prob_vec("mixture weights", &probs)?;
        Ok(MixtureWeights(probs))
    }

    pub fn n_components(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Row-stochastic transition matrix with an optional structural-zero mask.
///
/// `mask[(i, j)] == true` marks a transition that is impossible by model
/// structure; such entries must be exactly zero and stay zero through
/// estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: Array2<f64>,
    mask: Array2<bool>,
}

impl TransitionMatrix {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(probs.raw_dim(), false);
        Self::with_mask(probs, mask)
    }

    pub fn with_mask(probs: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let n = probs.nrows();
        if probs.ncols() != n || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                probs.nrows(),
                probs.ncols()
            )));
        }
        if mask.raw_dim() != probs.raw_dim() {
            return Err(Error::ShapeMismatch(
                "transition mask shape differs from matrix shape".into(),
            ));
        }
        for i in 0..n {
            let mut any_free = false;
            for j in 0..n {
                let p = probs[(i, j)];
                if mask[(i, j)] {
                    if p != 0.0 {
                        return Err(Error::ConstraintViolation(format!(
                            "masked transition ({i},{j}) has probability {p}, expected exactly 0"
                        )));
                    }
                } else {
                    any_free = true;
                }
            }
            if !any_free {
                return Err(Error::InvalidParameter(format!(
                    "transition row {i} has every entry masked"
                )));
            }
            validate_prob_vec(&format!("transition row {i}"), probs.row(i).to_slice().unwrap())?;
        }
        Ok(TransitionMatrix { probs, mask })
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_structural_zero(&self, from: usize, to: usize) -> bool {
        self.mask[(from, to)]
    }

    /// Column indices of row `i` that are not structurally zero.
    pub fn unmasked_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.n_states()).filter(|&j| !self.mask[(i, j)]).collect()
    }
}

/// One observation sequence with features and sparse labels.
///
/// `values` is T x F with NaN for missing feature values. `labels[t]` is the
/// observed state label at index t (0-based), or `None` where unlabelled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    id: String,
    feature_names: Vec<String>,
    values: Array2<f64>,
    labels: Vec<Option<usize>>,
}

impl LabeledSeries {
    pub fn new(
        id: impl Into<String>,
        feature_names: Vec<String>,
        values: Array2<f64>,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let id = id.into();
        if values.nrows() == 0 {
            return Err(Error::Dataset(format!("series {id} is empty")));
        }
        if values.ncols() != feature_names.len() {
            return Err(Error::ShapeMismatch(format!(
                "series {id}: {} feature columns for {} names",
                values.ncols(),
                feature_names.len()
            )));
        }
        for (k, name) in feature_names.iter().enumerate() {
            if feature_names[..k].contains(name) {
                return Err(Error::Dataset(format!(
                    "series {id}: duplicate feature name {name}"
                )));
            }
        }
        if labels.len() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "series {id}: {} labels for {} indices",
                labels.len(),
                values.nrows()
            )));
        }
        Ok(LabeledSeries { id, feature_names, values, labels })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Indices that carry a label, in increasing order.
    pub fn label_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.labels[t].is_some()).collect()
    }

    pub fn n_labelled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Checks that all labels lie in `0..n_states`.
    pub fn validate_labels(&self, n_states: usize) -> Result<()> {
        for label in self.labels.iter().flatten() {
            if *label >= n_states {
                return Err(Error::InvalidLabel { label: *label, n_states });
            }
        }
        Ok(())
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> LabeledSeries {
        LabeledSeries {
            id: self.id.clone(),
            feature_names: self.feature_names.clone(),
            values: self.values.clone(),
            labels: vec![None; self.len()],
        }
    }

    /// Contiguous sub-series over `start..end`, under a new id.
    pub fn slice(&self, start: usize, end: usize, id: impl Into<String>) -> Result<LabeledSeries> {
        if start >= end || end > self.len() {
            return Err(Error::ShapeMismatch(format!(
                "invalid slice {start}..{end} of series {} with length {}",
                self.id,
                self.len()
            )));
        }
        LabeledSeries::new(
            id,
            self.feature_names.clone(),
            self.values.slice(s![start..end, ..]).to_owned(),
            self.labels[start..end].to_vec(),
        )
    }
}

/// Posterior decode of one series.
#[derive(Debug, Clone)]
pub struct Decoding {
    /// T x N matrix of per-index state posteriors; rows sum to one.
    pub posteriors: Array2<f64>,
    /// Most probable state path, ties broken toward the lowest state index.
    pub viterbi: Vec<usize>,
    /// Log of the summed path weights (the weighted joint likelihood).
    pub log_likelihood: f64,
}

/// Builds the T x N weighted log emission matrix for one series.
///
/// Entry (t, i) is `weights[t] * (ln f_i(y_t) + ln g_i(z_t))`. A zero weight
/// yields an exact 0.0 even when the unweighted term is `-inf`, and a weight
/// of one returns the unweighted term bit-for-bit. Missing feature values
/// contribute no density factor under [`MissingPolicy::Skip`] and are
/// rejected under [`MissingPolicy::Reject`].
pub fn weighted_emission_log_matrix(
    series: &LabeledSeries,
    emissions: &EmissionProduct,
    label_model: &LabelModel,
    weights: &[f64],
) -> Result<Array2<f64>> {
    let t_len = series.len();
    let n = emissions.n_states();
    if weights.len() != t_len {
        return Err(Error::ShapeMismatch(format!(
            "series {}: {} weights for {} indices",
            series.id(),
            weights.len(),
            t_len
        )));
    }
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "likelihood weight {w} must be finite and non-negative"
            )));
        }
    }
    series.validate_labels(n)?;
    if emissions.missing == MissingPolicy::Reject {
        for ((t, f), v) in series.values().indexed_iter() {
            if v.is_nan() {
                return Err(Error::Dataset(format!(
                    "series {}: missing value at index {t}, feature {}",
                    series.id(),
                    series.feature_names()[f]
                )));
            }
        }
    }
    let evals = emissions.resolve(series.feature_names())?;
    let mut out = Array2::<f64>::zeros((t_len, n));
    let mut scratch = Vec::new();
    for t in 0..t_len {
        let row = series.values().row(t);
        let z = series.labels()[t];
        for (i, eval) in evals.iter().enumerate() {
            let w = weights[t];
            if w == 0.0 {
                continue;
            }
            let lf = eval.log_density(row, &mut scratch);
            let lg = label_model.label_log_mass(n, i, z)?;
            let term = lf + lg;
            out[(t, i)] = if w == 1.0 { term } else { w * term };
        }
    }
    Ok(out)
}

/// Scaled forward/backward quantities for one series.
pub(crate) struct FbCore {
    /// Normalised forward variables, rows sum to one.
    pub alpha: Array2<f64>,
    /// Per-step emission factors exp(logb - rowmax), in [0, 1].
    pub e: Array2<f64>,
    pub log_likelihood: f64,
}

fn check_shapes(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<(usize, usize)> {
    let n = delta.n_states();
    if gamma.n_states() != n {
        return Err(Error::ShapeMismatch(format!(
            "initial distribution has {n} states, transition matrix {}",
            gamma.n_states()
        )));
    }
    if log_emissions.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "log emission matrix has {} columns for {n} states",
            log_emissions.ncols()
        )));
    }
    if log_emissions.nrows() == 0 {
        return Err(Error::ShapeMismatch("log emission matrix has no rows".into()));
    }
    Ok((log_emissions.nrows(), n))
}

/// Runs the scaled forward recursion. The log-likelihood is `-inf` when no
/// state path has positive weight; `alpha` rows past that point are zero.
pub(crate) fn forward_core(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<FbCore> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    let mut alpha = Array2::<f64>::zeros((t_len, n));
    let mut e = Array2::<f64>::zeros((t_len, n));
    let mut loglik = 0.0;
    for t in 0..t_len {
        let row = log_emissions.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Ok(FbCore { alpha, e, log_likelihood: f64::NEG_INFINITY });
        }
        for i in 0..n {
            e[(t, i)] = (row[i] - m).exp();
        }
        let mut c = 0.0;
        if t == 0 {
            for i in 0..n {
                let a = delta.probs()[i] * e[(0, i)];
                alpha[(0, i)] = a;
                c += a;
            }
        } else {
            let g = gamma.probs();
            for j in 0..n {
                let mut phi = 0.0;
                for i in 0..n {
                    phi += alpha[(t - 1, i)] * g[(i, j)];
                }
                let a = phi * e[(t, j)];
                alpha[(t, j)] = a;
                c += a;
            }
        }
        if c <= 0.0 {
            return Ok(FbCore { alpha, e, log_likelihood: f64::NEG_INFINITY });
        }
        for i in 0..n {
            alpha[(t, i)] /= c;
        }
        loglik += c.ln() + m;
    }
    Ok(FbCore { alpha, e, log_likelihood: loglik })
}

/// Log of the weighted joint likelihood of one series.
///
/// Returns `Ok(-inf)` when every state path has zero weight (for example,
/// conflicting labels under a structurally zero transition).
pub fn forward_log_likelihood(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<f64> {
    Ok(forward_core(delta, gamma, log_emissions)?.log_likelihood)
}

/// Forward/backward smoothing output together with transition statistics.
pub(crate) struct FbStats {
    pub posteriors: Array2<f64>,
    /// xi_sum[(i, j)] = sum over t of the posterior probability of the
    /// transition i -> j between indices t and t+1.
    pub xi_sum: Array2<f64>,
    pub log_likelihood: f64,
}

pub(crate) fn forward_backward_stats(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
    want_xi: bool,
) -> Result<FbStats> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    let core = forward_core(delta, gamma, log_emissions)?;
    if core.log_likelihood == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood(
            "every state path has zero weight; posteriors are undefined".into(),
        ));
    }
    let g = gamma.probs();
    let mut posteriors = Array2::<f64>::zeros((t_len, n));
    let mut xi_sum = Array2::<f64>::zeros((n, n));
    // beta is normalised per step; per-index posteriors renormalise anyway.
    let mut beta = vec![1.0 / n as f64; n];
    let mut beta_next = vec![0.0; n];
    for t in (0..t_len).rev() {
        let mut total = 0.0;
        for i in 0..n {
            let p = core.alpha[(t, i)] * beta[i];
            posteriors[(t, i)] = p;
            total += p;
        }
        debug_assert!(total > 0.0);
        for i in 0..n {
            posteriors[(t, i)] /= total;
        }
        if t > 0 {
            if want_xi {
                let mut z = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        z += core.alpha[(t - 1, i)] * g[(i, j)] * core.e[(t, j)] * beta[j];
                    }
                }
                debug_assert!(z > 0.0);
                for i in 0..n {
                    for j in 0..n {
                        xi_sum[(i, j)] +=
                            core.alpha[(t - 1, i)] * g[(i, j)] * core.e[(t, j)] * beta[j] / z;
                    }
                }
            }
            let mut bsum = 0.0;
            for i in 0..n {
                let mut b = 0.0;
                for j in 0..n {
                    b += g[(i, j)] * core.e[(t, j)] * beta[j];
                }
                beta_next[i] = b;
                bsum += b;
            }
            if bsum <= 0.0 {
                return Err(Error::ZeroLikelihood(
                    "backward pass lost all probability mass".into(),
                ));
            }
            for i in 0..n {
                beta[i] = beta_next[i] / bsum;
            }
        }
    }
    Ok(FbStats { posteriors, xi_sum, log_likelihood: core.log_likelihood })
}

/// Per-index state posteriors given chain parameters and a weighted log
/// emission matrix. Errors with [`Error::ZeroLikelihood`] when no state path
/// has positive weight.
pub fn forward_backward(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<Array2<f64>> {
    Ok(forward_backward_stats(delta, gamma, log_emissions, false)?.posteriors)
}

/// Most probable state path in log space. Ties are broken toward the lowest
/// state index, first at the terminal index and then at each backtracking
/// step.
pub fn viterbi(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<Vec<usize>> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let mut score = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    let mut back = Array2::<usize>::zeros((t_len, n));
    for i in 0..n {
        score[i] = ln(delta.probs()[i]) + log_emissions[(0, i)];
    }
    let g = gamma.probs();
    for t in 1..t_len {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n {
                let s = score[i] + ln(g[(i, j)]);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + log_emissions[(t, j)];
            back[(t, j)] = arg;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for i in 0..n {
        if score[i] > best {
            best = score[i];
            arg = i;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood(
            "every state path has zero weight; no Viterbi path exists".into(),
        ));
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = arg;
    for t in (1..t_len).rev() {
        path[t - 1] = back[(t, path[t])];
    }
    Ok(path)
}

/// Posteriors, Viterbi path, and log-likelihood for one series.
pub fn decode(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<Decoding> {
    let stats = forward_backward_stats(delta, gamma, log_emissions, false)?;
    let path = viterbi(delta, gamma, log_emissions)?;
    Ok(Decoding {
        posteriors: stats.posteriors,
        viterbi: path,
        log_likelihood: stats.log_likelihood,
    })
}

/// Weighted log density of one series under an independent mixture.
///
/// Each index contributes `weights[t] * ln(sum_i pi_i f_i(y_t) g_i(z_t))`;
/// a zero weight contributes exactly zero. Returns `Ok(-inf)` when some
/// positively weighted index has zero mixture density.
pub fn mixture_log_density(
    pi: &MixtureWeights,
    emissions: &EmissionProduct,
    label_model: &LabelModel,
    series: &LabeledSeries,
    weights: &[f64],
) -> Result<f64> {
    let n = emissions.n_states();
    if pi.n_components() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} mixture weights for {n} emission states",
            pi.n_components()
        )));
    }
    let unweighted = weighted_emission_log_matrix(series, emissions, label_model, &vec![1.0; series.len()])?;
    if weights.len() != series.len() {
        return Err(Error::ShapeMismatch(format!(
            "series {}: {} weights for {} indices",
            series.id(),
            weights.len(),
            series.len()
        )));
    }
    let mut total = 0.0;
    for t in 0..series.len() {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "likelihood weight {w} must be finite and non-negative"
            )));
        }
        let mut mass = 0.0;
        let row = unweighted.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        for i in 0..n {
            mass += pi.probs()[i] * (row[i] - m).exp();
        }
        if mass <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let term = mass.ln() + m;
        total += if w == 1.0 { term } else { w * term };
    }
    Ok(total)
}

/// Posterior component memberships of an independent mixture, one row per
/// index. Labels condition the memberships; weights are not applied because
/// memberships are per-index quantities.
pub fn mixture_posteriors(
    pi: &MixtureWeights,
    emissions: &EmissionProduct,
    label_model: &LabelModel,
    series: &LabeledSeries,
) -> Result<Array2<f64>> {
    let n = emissions.n_states();
    if pi.n_components() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} mixture weights for {n} emission states",
            pi.n_components()
        )));
    }
    let unweighted = weighted_emission_log_matrix(series, emissions, label_model, &vec![1.0; series.len()])?;
    let mut out = Array2::<f64>::zeros((series.len(), n));
    for t in 0..series.len() {
        let row = unweighted.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::ZeroLikelihood(format!(
                "series {}: zero mixture density at index {t}",
                series.id()
            )));
        }
        let mut z = 0.0;
        for i in 0..n {
            let v = pi.probs()[i] * (row[i] - m).exp();
            out[(t, i)] = v;
            z += v;
        }
        if z <= 0.0 {
            return Err(Error::ZeroLikelihood(format!(
                "series {}: zero mixture density at index {t}",
                series.id()
            )));
        }
        for i in 0..n {
            out[(t, i)] /= z;
        }
    }
    Ok(out)
}
