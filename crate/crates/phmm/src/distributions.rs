//! Emission families, label observation models, and per-state emission
//! products.
//!
//! Supported emission families are Normal, Gamma (parameterised by mean and
//! standard deviation), log-normal, and multivariate log-normal. Densities are
//! returned on the log scale; points outside the support give `-inf`, never
//! NaN. State indices are 0-based throughout the API.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg;

/// Lower bound enforced on standard deviations and Cholesky diagonal entries.
pub const SD_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

/// A univariate or multivariate emission distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EmissionFamily {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Gamma distribution parameterised by its mean and standard deviation.
    Gamma {
        mean: f64,
        sd: f64,
    },
    LogNormal {
        log_mean: f64,
        log_sd: f64,
    },
    /// Componentwise exponential of a multivariate normal with mean
    /// `log_mean` and covariance `cov` (given as dense rows).
    #[serde(rename = "mvlognormal")]
    MultivariateLogNormal {
        log_mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
}

/// Converts a (mean, sd) Gamma parameterisation to (shape, rate).
///
/// shape = (mean/sd)^2 and rate = mean/sd^2, so that shape/rate = mean and
/// shape/rate^2 = sd^2.
pub fn gamma_mean_sd_to_shape_rate(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gamma mean must be positive and finite, got {mean}"
        )));
    }
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gamma sd must be positive and finite, got {sd}"
        )));
    }
    let shape = (mean / sd) * (mean / sd);
    let rate = mean / (sd * sd);
    Ok((shape, rate))
}

impl EmissionFamily {
    /// Dimension of one observation from this family.
    pub fn dim(&self) -> usize {
        match self {
            EmissionFamily::MultivariateLogNormal { log_mean, .. } => log_mean.len(),
            _ => 1,
        }
    }

    /// Checks parameter finiteness, positivity, and covariance definiteness.
    pub fn validate(&self) -> Result<()> {
        let check_finite = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
            }
        };
        let check_scale = |name: &str, v: f64| -> Result<()> {
            check_finite(name, v)?;
            if v < SD_FLOOR {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be at least {SD_FLOOR}, got {v}"
                )));
            }
            Ok(())
        };
        match self {
            EmissionFamily::Normal { mean, sd } => {
                check_finite("normal mean", *mean)?;
                check_scale("normal sd", *sd)
            }
            EmissionFamily::Gamma { mean, sd } => {
                check_finite("gamma mean", *mean)?;
                if *mean < SD_FLOOR {
                    return Err(Error::InvalidParameter(format!(
                        "gamma mean must be at least {SD_FLOOR}, got {mean}"
                    )));
                }
                check_scale("gamma sd", *sd)
            }
            EmissionFamily::LogNormal { log_mean, log_sd } => {
                check_finite("log-normal log_mean", *log_mean)?;
                check_scale("log-normal log_sd", *log_sd)
            }
            EmissionFamily::MultivariateLogNormal { log_mean, cov } => {
                let d = log_mean.len();
                if d == 0 {
                    return Err(Error::InvalidParameter(
                        "mvlognormal needs at least one dimension".into(),
                    ));
                }
                for (k, v) in log_mean.iter().enumerate() {
                    check_finite(&format!("mvlognormal log_mean[{k}]"), *v)?;
                }
                if cov.len() != d || cov.iter().any(|row| row.len() != d) {
                    return Err(Error::ShapeMismatch(format!(
                        "mvlognormal covariance must be {d}x{d}"
                    )));
                }
                for i in 0..d {
                    for j in 0..d {
                        check_finite(&format!("mvlognormal cov[{i}][{j}]"), cov[i][j])?;
                        if (cov[i][j] - cov[j][i]).abs() > 1e-9 * cov[i][i].abs().max(1.0) {
                            return Err(Error::InvalidParameter(format!(
                                "mvlognormal covariance not symmetric at ({i},{j})"
                            )));
                        }
                    }
                }
                let l = cov_cholesky(cov)?;
                for k in 0..d {
                    if l[(k, k)] < SD_FLOOR {
                        return Err(Error::InvalidParameter(format!(
                            "mvlognormal covariance nearly singular: Cholesky pivot {k} below {SD_FLOOR}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Log density at `x`, which must have length [`EmissionFamily::dim`].
    /// Points outside the support yield `-inf`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "log_density expected {} value(s), got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.evaluator()?.log_density(x))
    }

    /// Draws one observation; the result has length [`EmissionFamily::dim`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            EmissionFamily::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(vec![mean + sd * z])
            }
            EmissionFamily::Gamma { mean, sd } => {
                let (shape, rate) = gamma_mean_sd_to_shape_rate(*mean, *sd)?;
                let g = rand_distr::Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::InvalidParameter(format!("gamma sampler: {e}")))?;
                Ok(vec![g.sample(rng)])
            }
            EmissionFamily::LogNormal { log_mean, log_sd } => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(vec![(log_mean + log_sd * z).exp()])
            }
            EmissionFamily::MultivariateLogNormal { log_mean, cov } => {
                let d = log_mean.len();
                let l = cov_cholesky(cov)?;
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let mut out = vec![0.0; d];
                for k in 0..d {
                    let mut s = log_mean[k];
                    for j in 0..=k {
                        s += l[(k, j)] * z[j];
                    }
                    out[k] = s.exp();
                }
                Ok(out)
            }
        }
    }

    /// Precomputes normalising constants for repeated density evaluation.
    pub(crate) fn evaluator(&self) -> Result<FamilyEval> {
        match self {
            EmissionFamily::Normal { mean, sd } => Ok(FamilyEval::Normal {
                mean: *mean,
                sd: *sd,
                ln_norm: -(sd.ln() + 0.5 * LN_2PI),
            }),
            EmissionFamily::Gamma { mean, sd } => {
                let (shape, rate) = gamma_mean_sd_to_shape_rate(*mean, *sd)?;
                Ok(FamilyEval::Gamma {
                    shape,
                    rate,
                    mean: *mean,
                    sd: *sd,
                    ln_norm: shape * rate.ln() - ln_gamma(shape),
                })
            }
            EmissionFamily::LogNormal { log_mean, log_sd } => Ok(FamilyEval::LogNormal {
                mu: *log_mean,
                sigma: *log_sd,
                ln_norm: -(log_sd.ln() + 0.5 * LN_2PI),
            }),
            EmissionFamily::MultivariateLogNormal { log_mean, cov } => {
                let l = cov_cholesky(cov)?;
                let d = log_mean.len();
                let log_det_sqrt: f64 = (0..d).map(|k| l[(k, k)].ln()).sum();
                Ok(FamilyEval::MvLogNormal {
                    mu: log_mean.clone(),
                    chol: l,
                    ln_norm: -0.5 * d as f64 * LN_2PI - log_det_sqrt,
                })
            }
        }
    }

    /// Names of the natural parameters in canonical order.
    pub(crate) fn field_names(&self) -> Vec<String> {
        match self {
            EmissionFamily::Normal { .. } | EmissionFamily::Gamma { .. } => {
                vec!["mean".into(), "sd".into()]
            }
            EmissionFamily::LogNormal { .. } => vec!["log_mean".into(), "log_sd".into()],
            EmissionFamily::MultivariateLogNormal { log_mean, .. } => {
                let d = log_mean.len();
                let mut names: Vec<String> = (0..d).map(|k| format!("log_mean[{k}]")).collect();
                for r in 0..d {
                    for c in 0..=r {
                        names.push(format!("chol[{r},{c}]"));
                    }
                }
                names
            }
        }
    }

    /// Natural parameter values in canonical field order. For the
    /// multivariate family the covariance is reported via its lower
    /// Cholesky factor.
    pub(crate) fn field_values(&self) -> Result<Vec<f64>> {
        match self {
            EmissionFamily::Normal { mean, sd } | EmissionFamily::Gamma { mean, sd } => {
                Ok(vec![*mean, *sd])
            }
            EmissionFamily::LogNormal { log_mean, log_sd } => Ok(vec![*log_mean, *log_sd]),
            EmissionFamily::MultivariateLogNormal { log_mean, cov } => {
                let l = cov_cholesky(cov)?;
                let d = log_mean.len();
                let mut vals = log_mean.clone();
                for r in 0..d {
                    for c in 0..=r {
                        vals.push(l[(r, c)]);
                    }
                }
                Ok(vals)
            }
        }
    }

    /// Rebuilds a family of the same shape from canonical field values.
    pub(crate) fn with_field_values(&self, vals: &[f64]) -> Result<EmissionFamily> {
        let expect = self.n_fields();
        if vals.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "expected {expect} field values, got {}",
                vals.len()
            )));
        }
        match self {
            EmissionFamily::Normal { .. } => Ok(EmissionFamily::Normal { mean: vals[0], sd: vals[1] }),
            EmissionFamily::Gamma { .. } => Ok(EmissionFamily::Gamma { mean: vals[0], sd: vals[1] }),
            EmissionFamily::LogNormal { .. } => {
                Ok(EmissionFamily::LogNormal { log_mean: vals[0], log_sd: vals[1] })
            }
            EmissionFamily::MultivariateLogNormal { log_mean, .. } => {
                let d = log_mean.len();
                let mu = vals[..d].to_vec();
                let mut l = Array2::<f64>::zeros((d, d));
                let mut idx = d;
                for r in 0..d {
                    for c in 0..=r {
                        l[(r, c)] = vals[idx];
                        idx += 1;
                    }
                }
                let cov_arr = l.dot(&l.t());
                let mut cov = vec![vec![0.0; d]; d];
                for r in 0..d {
                    for c in 0..d {
                        // Force exact symmetry despite float recomposition.
                        cov[r][c] = if r <= c { cov_arr[(r, c)] } else { cov_arr[(c, r)] };
                    }
                }
                Ok(EmissionFamily::MultivariateLogNormal { log_mean: mu, cov })
            }
        }
    }

    /// Working-scale transform for each canonical field.
    pub(crate) fn field_transforms(&self) -> Vec<Transform> {
        match self {
            EmissionFamily::Normal { .. } => vec![Transform::Identity, Transform::Positive],
            EmissionFamily::Gamma { .. } => vec![Transform::Positive, Transform::Positive],
            EmissionFamily::LogNormal { .. } => vec![Transform::Identity, Transform::Positive],
            EmissionFamily::MultivariateLogNormal { log_mean, .. } => {
                let d = log_mean.len();
                let mut tr = vec![Transform::Identity; d];
                for r in 0..d {
                    for c in 0..=r {
                        tr.push(if r == c { Transform::Positive } else { Transform::Identity });
                    }
                }
                tr
            }
        }
    }

    pub(crate) fn n_fields(&self) -> usize {
        match self {
            EmissionFamily::MultivariateLogNormal { log_mean, .. } => {
                let d = log_mean.len();
                d + d * (d + 1) / 2
            }
            _ => 2,
        }
    }
}

fn cov_cholesky(cov: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = cov.len();
    let mut a = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        if cov[i].len() != d {
            return Err(Error::ShapeMismatch("covariance matrix is not square".into()));
        }
        for j in 0..d {
            a[(i, j)] = cov[i][j];
        }
    }
    linalg::cholesky(&a)
        .ok_or_else(|| Error::InvalidParameter("covariance matrix is not positive definite".into()))
}

/// Bijection between a natural parameter and its unconstrained working scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Transform {
    Identity,
    /// natural = SD_FLOOR + exp(working); keeps scales strictly above the floor.
    Positive,
}

impl Transform {
    pub(crate) fn to_working(self, natural: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(natural),
            Transform::Positive => {
                if natural <= SD_FLOOR {
                    Err(Error::ConstraintViolation(format!(
                        "positive-scale parameter {natural} is at or below the floor {SD_FLOOR}"
                    )))
                } else {
                    Ok((natural - SD_FLOOR).ln())
                }
            }
        }
    }

    pub(crate) fn to_natural(self, working: f64) -> f64 {
        match self {
            Transform::Identity => working,
            Transform::Positive => SD_FLOOR + working.exp(),
        }
    }

    /// d natural / d working, evaluated from the natural value.
    pub(crate) fn dnatural_dworking(self, natural: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Positive => natural - SD_FLOOR,
        }
    }
}

/// Density evaluator with precomputed constants.
#[derive(Debug, Clone)]
pub(crate) enum FamilyEval {
    Normal { mean: f64, sd: f64, ln_norm: f64 },
    Gamma { shape: f64, rate: f64, mean: f64, sd: f64, ln_norm: f64 },
    LogNormal { mu: f64, sigma: f64, ln_norm: f64 },
    MvLogNormal { mu: Vec<f64>, chol: Array2<f64>, ln_norm: f64 },
}

impl FamilyEval {
    pub(crate) fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            FamilyEval::Normal { mean, sd, ln_norm } => {
                if !x[0].is_finite() {
                    return f64::NEG_INFINITY;
                }
                let z = (x[0] - mean) / sd;
                ln_norm - 0.5 * z * z
            }
            FamilyEval::Gamma { shape, rate, ln_norm, .. } => {
                if !(x[0] > 0.0) || !x[0].is_finite() {
                    return f64::NEG_INFINITY;
                }
                ln_norm + (shape - 1.0) * x[0].ln() - rate * x[0]
            }
            FamilyEval::LogNormal { mu, sigma, ln_norm } => {
                if !(x[0] > 0.0) || !x[0].is_finite() {
                    return f64::NEG_INFINITY;
                }
                let lx = x[0].ln();
                let z = (lx - mu) / sigma;
                ln_norm - lx - 0.5 * z * z
            }
            FamilyEval::MvLogNormal { mu, chol, ln_norm } => {
                if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return f64::NEG_INFINITY;
                }
                let mut jac = 0.0;
                let u: Vec<f64> = x
                    .iter()
                    .zip(mu)
                    .map(|(&v, &m)| {
                        let lv = v.ln();
                        jac += lv;
                        lv - m
                    })
                    .collect();
                let v = linalg::solve_lower(chol, &u);
                let quad: f64 = v.iter().map(|&a| a * a).sum();
                ln_norm - 0.5 * quad - jac
            }
        }
    }

    /// Writes d log f(x) / d field into `out` (canonical field order).
    /// Must only be called for `x` strictly inside the support.
    pub(crate) fn score(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FamilyEval::Normal { mean, sd, .. } => {
                let d = x[0] - mean;
                out[0] = d / (sd * sd);
                out[1] = d * d / (sd * sd * sd) - 1.0 / sd;
            }
            FamilyEval::Gamma { shape, rate, mean, sd, .. } => {
                let dlnf_dshape = rate.ln() - digamma(*shape) + x[0].ln();
                let dlnf_drate = shape / rate - x[0];
                let s2 = sd * sd;
                let dshape_dmean = 2.0 * mean / s2;
                let dshape_dsd = -2.0 * mean * mean / (s2 * sd);
                let drate_dmean = 1.0 / s2;
                let drate_dsd = -2.0 * mean / (s2 * sd);
                out[0] = dlnf_dshape * dshape_dmean + dlnf_drate * drate_dmean;
                out[1] = dlnf_dshape * dshape_dsd + dlnf_drate * drate_dsd;
            }
            FamilyEval::LogNormal { mu, sigma, .. } => {
                let d = x[0].ln() - mu;
                out[0] = d / (sigma * sigma);
                out[1] = d * d / (sigma * sigma * sigma) - 1.0 / sigma;
            }
            FamilyEval::MvLogNormal { mu, chol, .. } => {
                let d = mu.len();
                let u: Vec<f64> = x.iter().zip(mu).map(|(&v, &m)| v.ln() - m).collect();
                let v = linalg::solve_lower(chol, &u);
                let w = linalg::solve_lower_transpose(chol, &v);
                out[..d].copy_from_slice(&w);
                // q = L^T w
                let mut q = vec![0.0; d];
                for c in 0..d {
                    let mut s = 0.0;
                    for r in c..d {
                        s += chol[(r, c)] * w[r];
                    }
                    q[c] = s;
                }
                let mut idx = d;
                for r in 0..d {
                    for c in 0..=r {
                        let mut g = w[r] * q[c];
                        if r == c {
                            g -= 1.0 / chol[(r, r)];
                        }
                        out[idx] = g;
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// How a label relates to the hidden state at a labelled index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LabelModel {
    /// The label reports the hidden state exactly.
    Perfect,
    /// `rows[i][z]` is the probability of observing label `z` in state `i`.
    Categorical { rows: Vec<Vec<f64>> },
}

impl LabelModel {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        match self {
            LabelModel::Perfect => Ok(()),
            LabelModel::Categorical { rows } => {
                if rows.len() != n_states {
                    return Err(Error::ShapeMismatch(format!(
                        "label model has {} rows for {} states",
                        rows.len(),
                        n_states
                    )));
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != n_states {
                        return Err(Error::ShapeMismatch(format!(
                            "label model row {i} has {} entries for {} states",
                            row.len(),
                            n_states
                        )));
                    }
                    let mut sum = 0.0;
                    for &p in row {
                        if !p.is_finite() || p < 0.0 {
                            return Err(Error::InvalidParameter(format!(
                                "label model row {i} has invalid probability {p}"
                            )));
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "label model row {i} sums to {sum}, expected 1"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Log mass of observing label `z` (or no label, `None`) in state `state`.
    /// An absent label contributes log 1 = 0.
    pub fn label_log_mass(&self, n_states: usize, state: usize, z: Option<usize>) -> Result<f64> {
        if state >= n_states {
            return Err(Error::InvalidLabel { label: state, n_states });
        }
        let z = match z {
            None => return Ok(0.0),
            Some(z) => z,
        };
        if z >= n_states {
            return Err(Error::InvalidLabel { label: z, n_states });
        }
        match self {
            LabelModel::Perfect => {
                Ok(if z == state { 0.0 } else { f64::NEG_INFINITY })
            }
            LabelModel::Categorical { rows } => {
                let p = rows[state][z];
                Ok(if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            }
        }
    }

    /// Draws a label for a known hidden state.
    pub fn sample_label<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        match self {
            LabelModel::Perfect => state,
            LabelModel::Categorical { rows } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let row = &rows[state];
                for (z, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return z;
                    }
                }
                row.len() - 1
            }
        }
    }
}

/// What to do when a feature value is missing (NaN) at some index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Drop the affected component's density factor (contributes log 1 = 0).
    #[default]
    Skip,
    /// Reject datasets containing missing values.
    Reject,
}

/// One independent block of an emission product: a family over named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionComponent {
    pub features: Vec<String>,
    #[serde(flatten)]
    pub family: EmissionFamily,
}

/// Emission model of one hidden state: a product of independent components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEmission {
    pub components: Vec<EmissionComponent>,
}

impl StateEmission {
    /// Log density with values given in this state's flattened feature order.
    /// NaN values drop their component's factor.
    pub fn log_density(&self, values: &[f64]) -> Result<f64> {
        let expect: usize = self.components.iter().map(|c| c.features.len()).sum();
        if values.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "expected {expect} feature values, got {}",
                values.len()
            )));
        }
        let mut total = 0.0;
        let mut off = 0;
        for comp in &self.components {
            let d = comp.features.len();
            let x = &values[off..off + d];
            off += d;
            if x.iter().any(|v| v.is_nan()) {
                continue;
            }
            total += comp.family.log_density(x)?;
        }
        Ok(total)
    }
}

/// Emission models for every state, sharing one feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionProduct {
    pub states: Vec<StateEmission>,
    #[serde(default)]
    pub missing: MissingPolicy,
}

impl EmissionProduct {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Flattened feature names, identical for every state.
    pub fn feature_names(&self) -> Vec<String> {
        self.states
            .first()
            .map(|s| {
                s.components
                    .iter()
                    .flat_map(|c| c.features.iter().cloned())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidParameter("emission product has no states".into()));
        }
        let schema: Vec<Vec<String>> = self.states[0]
            .components
            .iter()
            .map(|c| c.features.clone())
            .collect();
        let flat: Vec<&String> = schema.iter().flatten().collect();
        for (k, name) in flat.iter().enumerate() {
            if flat[..k].contains(name) {
                return Err(Error::InvalidParameter(format!("duplicate feature name {name}")));
            }
        }
        for (i, state) in self.states.iter().enumerate() {
            let this: Vec<Vec<String>> =
                state.components.iter().map(|c| c.features.clone()).collect();
            if this != schema {
                return Err(Error::ShapeMismatch(format!(
                    "state {i} feature schema differs from state 0"
                )));
            }
            for (c, comp) in state.components.iter().enumerate() {
                comp.family.validate().map_err(|e| {
                    Error::InvalidParameter(format!("state {i} component {c}: {e}"))
                })?;
                if comp.family.dim() != comp.features.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "state {i} component {c}: family dimension {} vs {} feature name(s)",
                        comp.family.dim(),
                        comp.features.len()
                    )));
                }
                if comp.features.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "state {i} component {c} has no features"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Log density for one state with values in the product's feature order.
    pub fn log_density(&self, state: usize, values: &[f64]) -> Result<f64> {
        self.states
            .get(state)
            .ok_or(Error::InvalidLabel { label: state, n_states: self.states.len() })?
            .log_density(values)
    }

    /// Draws a full observation row for one state, in flattened feature order.
    pub fn sample_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Result<Vec<f64>> {
        let st = self
            .states
            .get(state)
            .ok_or(Error::InvalidLabel { label: state, n_states: self.states.len() })?;
        let mut out = Vec::new();
        for comp in &st.components {
            out.extend(comp.family.sample(rng)?);
        }
        Ok(out)
    }

    /// Binds each component to column indices of `feature_names` and
    /// precomputes density constants.
    pub(crate) fn resolve(&self, feature_names: &[String]) -> Result<Vec<StateEval>> {
        self.states
            .iter()
            .map(|state| {
                let comps = state
                    .components
                    .iter()
                    .map(|comp| {
                        let cols = comp
                            .features
                            .iter()
                            .map(|f| {
                                feature_names.iter().position(|n| n == f).ok_or_else(|| {
                                    Error::Dataset(format!("dataset lacks feature column {f}"))
                                })
                            })
                            .collect::<Result<Vec<usize>>>()?;
                        Ok((cols, comp.family.evaluator()?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(StateEval { comps })
            })
            .collect()
    }
}

/// Column-bound density evaluator for one state.
pub(crate) struct StateEval {
    pub(crate) comps: Vec<(Vec<usize>, FamilyEval)>,
}

impl StateEval {
    /// Log emission density for one observation row; NaN features drop their
    /// component's factor.
    pub(crate) fn log_density(&self, row: ArrayView1<f64>, scratch: &mut Vec<f64>) -> f64 {
        let mut total = 0.0;
        for (cols, eval) in &self.comps {
            scratch.clear();
            let mut missing = false;
            for &c in cols {
                let v = row[c];
                if v.is_nan() {
                    missing = true;
                    break;
                }
                scratch.push(v);
            }
            if missing {
                continue;
            }
            let ld = eval.log_density(scratch);
            if ld == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += ld;
        }
        total
    }
}
