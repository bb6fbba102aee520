//! Weighted-likelihood fitting by direct numerical maximisation.
//!
//! The constrained parameters are mapped to an unconstrained working vector
//! (see [`layout`]), the weighted log-likelihood and its analytic gradient
//! are evaluated through the scaled forward/backward recursions, and a
//! limited-memory quasi-Newton ascent climbs from several random starting
//! points. Standard errors come from a finite-difference Hessian of the
//! analytic gradient at the optimum.

pub mod layout;
mod optim;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distributions::{EmissionFamily, LabelModel, SD_FLOOR};
use crate::error::{Error, Result};
use crate::linalg;
use crate::markov::{
    forward_backward_stats, forward_log_likelihood, weighted_emission_log_matrix, LabeledSeries,
};
use crate::model::{ModelParams, ModelSpec};
use crate::weighting::{per_index_alpha_weights, validate_alpha};

pub use layout::WorkingLayout;

use layout::Coord;

/// How the objective gradient is computed during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Analytic gradient through the forward/backward statistics.
    Analytic,
    /// Central finite differences of the objective; slow, for cross-checks.
    FiniteDifference,
}

/// Tuning knobs for [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Number of random starting points.
    pub restarts: usize,
    /// Iteration cap per restart.
    pub max_iter: usize,
    /// Relative objective-improvement stopping threshold.
    pub tol: f64,
    /// Gradient sup-norm stopping threshold.
    pub grad_tol: f64,
    /// Seed for the starting points; restart r uses stream r of this seed.
    pub seed: u64,
    pub gradient: GradientMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 10,
            max_iter: 1000,
            tol: 1e-8,
            grad_tol: 1e-6,
            seed: 0,
            gradient: GradientMode::Analytic,
        }
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone)]
pub struct RestartRecord {
    pub restart: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step; non-decreasing.
    pub accepted_objectives: Vec<f64>,
}

/// Best fitted parameters plus per-restart diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Weighted log-likelihood at the optimum.
    pub objective: f64,
    /// Working vector at the optimum.
    pub working: Vec<f64>,
    pub restarts: Vec<RestartRecord>,
    pub best_restart: usize,
    pub converged: bool,
}

/// Weighted log-likelihood objective bound to a dataset.
///
/// Points outside the feasible region (for example a covariance that loses
/// positive definiteness to rounding) evaluate to `-inf` rather than erroring,
/// so the line search can reject them.
pub struct Objective<'a> {
    layout: &'a WorkingLayout,
    dataset: &'a [LabeledSeries],
    weights: Vec<Vec<f64>>,
    /// Field counts per (state, component).
    shapes: Vec<Vec<usize>>,
}

impl<'a> Objective<'a> {
    pub fn new(
        layout: &'a WorkingLayout,
        dataset: &'a [LabeledSeries],
        alpha: f64,
    ) -> Result<Objective<'a>> {
        validate_alpha(alpha)?;
        if dataset.is_empty() {
            return Err(Error::Dataset("dataset has no series".into()));
        }
        let spec = layout.spec();
        let n = spec.n_states();
        let mut weights = Vec::with_capacity(dataset.len());
        for series in dataset {
            series.validate_labels(n)?;
            // Surfaces missing feature columns before any optimisation work.
            spec.params.emissions.resolve(series.feature_names())?;
            weights.push(per_index_alpha_weights(series, alpha)?);
        }
        let shapes = spec
            .params
            .emissions
            .states
            .iter()
            .map(|s| s.components.iter().map(|c| c.family.n_fields()).collect())
            .collect();
        Ok(Objective { layout, dataset, weights, shapes })
    }

    /// Objective value at a working point; `-inf` when infeasible.
    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let params = self.layout.to_params(w)?;
        let per: Vec<f64> = self
            .dataset
            .par_iter()
            .zip(&self.weights)
            .map(|(series, weights)| -> Result<f64> {
                let logb = match weighted_emission_log_matrix(
                    series,
                    &params.emissions,
                    &params.label_model,
                    weights,
                ) {
                    Ok(b) => b,
                    Err(Error::InvalidParameter(_)) => return Ok(f64::NEG_INFINITY),
                    Err(e) => return Err(e),
                };
                forward_log_likelihood(&params.delta, &params.gamma, &logb)
            })
            .collect::<Result<_>>()?;
        Ok(per.iter().sum())
    }

    /// Objective and analytic gradient. Returns `(-inf, zeros)` when any
    /// series is infeasible at this point.
    pub fn value_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = self.layout.to_params(w)?;
        // d natural / d working per free emission group, shared by all its
        // member slots.
        let groups = self.layout.groups();
        let mut dnat = vec![0.0; groups.len()];
        for (gi, group) in groups.iter().enumerate() {
            if let Some(ci) = group.coord {
                let natural = group.transform.to_natural(w[ci]);
                dnat[gi] = group.transform.dnatural_dworking(natural);
            }
        }
        let per: Vec<Option<(f64, Vec<f64>)>> = self
            .dataset
            .par_iter()
            .zip(&self.weights)
            .map(|(series, weights)| self.series_ll_grad(&params, &dnat, series, weights))
            .collect::<Result<_>>()?;
        let dim = self.layout.dim();
        let mut total = 0.0;
        let mut grad = vec![0.0; dim];
        for item in per {
            match item {
                None => return Ok((f64::NEG_INFINITY, vec![0.0; dim])),
                Some((ll, g)) => {
                    total += ll;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
            }
        }
        Ok((total, grad))
    }

    fn series_ll_grad(
        &self,
        params: &ModelParams,
        dnat: &[f64],
        series: &LabeledSeries,
        weights: &[f64],
    ) -> Result<Option<(f64, Vec<f64>)>> {
        let n = params.n_states();
        let logb = match weighted_emission_log_matrix(
            series,
            &params.emissions,
            &params.label_model,
            weights,
        ) {
            Ok(b) => b,
            Err(Error::InvalidParameter(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let stats = match forward_backward_stats(&params.delta, &params.gamma, &logb, true) {
            Ok(s) => s,
            Err(Error::ZeroLikelihood(_)) => return Ok(None),
            Err(e) => return Err(e),
        };

        // Expected-count pieces reused across coordinate kinds.
        let gamma_row_sums: Vec<f64> =
            (0..n).map(|i| (0..n).map(|j| stats.xi_sum[(i, j)]).sum()).collect();

        // Label-row accumulator: acc[i][z] = sum_t gamma_t(i) w_t (1[z_t = z] - beta_iz).
        let label_acc: Option<Vec<Vec<f64>>> = if self.layout.labels_are_free() {
            let rows = match &params.label_model {
                LabelModel::Categorical { rows } => rows,
                _ => unreachable!("label coordinates exist only for categorical label models"),
            };
            let mut acc = vec![vec![0.0; n]; n];
            for t in series.label_indices() {
                let z = series.labels()[t].expect("label_indices returned an unlabelled index");
                let wt = weights[t];
                if wt == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let post = stats.posteriors[(t, i)];
                    if post == 0.0 {
                        continue;
                    }
                    for (zz, a) in acc[i].iter_mut().enumerate() {
                        let ind = if zz == z { 1.0 } else { 0.0 };
                        *a += post * wt * (ind - rows[i][zz]);
                    }
                }
            }
            Some(acc)
        } else {
            None
        };

        // Per-slot emission score sums: gamma_t(i) w_t d ln f / d field.
        let mut slot_grads: Vec<Vec<Vec<f64>>> = self
            .shapes
            .iter()
            .map(|comps| comps.iter().map(|&nf| vec![0.0; nf]).collect())
            .collect();
        let evals = params.emissions.resolve(series.feature_names())?;
        let mut xbuf: Vec<f64> = Vec::new();
        let mut sbuf: Vec<f64> = Vec::new();
        for t in 0..series.len() {
            let wt = weights[t];
            if wt == 0.0 {
                continue;
            }
            let row = series.values().row(t);
            for (i, eval) in evals.iter().enumerate() {
                let post = stats.posteriors[(t, i)];
                if post == 0.0 {
                    continue;
                }
                let scale = post * wt;
                for (c, (cols, fam)) in eval.comps.iter().enumerate() {
                    xbuf.clear();
                    let mut missing = false;
                    for &cc in cols {
                        let v = row[cc];
                        if v.is_nan() {
                            missing = true;
                            break;
                        }
                        xbuf.push(v);
                    }
                    if missing {
                        continue;
                    }
                    let nf = self.shapes[i][c];
                    sbuf.resize(nf, 0.0);
                    fam.score(&xbuf, &mut sbuf);
                    for (dst, s) in slot_grads[i][c].iter_mut().zip(&sbuf) {
                        *dst += scale * s;
                    }
                }
            }
        }

        let groups = self.layout.groups();
        let mut grad = vec![0.0; self.layout.dim()];
        for (ci, coord) in self.layout.coord_list().iter().enumerate() {
            grad[ci] = match *coord {
                Coord::Delta { state } => {
                    stats.posteriors[(0, state)] - params.delta.probs()[state]
                }
                Coord::Gamma { row, col } => {
                    stats.xi_sum[(row, col)]
                        - params.gamma.probs()[(row, col)] * gamma_row_sums[row]
                }
                Coord::Label { row, z } => label_acc.as_ref().expect("label accumulator")[row][z],
                Coord::Emission { group } => {
                    let sum: f64 = groups[group]
                        .slots
                        .iter()
                        .map(|&(s, c, f)| slot_grads[s][c][f])
                        .sum();
                    dnat[group] * sum
                }
            };
        }
        Ok(Some((stats.log_likelihood, grad)))
    }
}

/// Central finite-difference gradient of the objective; one-sided near the
/// feasible boundary, zero where both sides are infeasible.
fn fd_gradient(objective: &Objective, w: &[f64], f0: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; w.len()];
    let mut wt = w.to_vec();
    for k in 0..w.len() {
        let h = 1e-6 * (1.0 + w[k].abs());
        wt[k] = w[k] + h;
        let fp = objective.value(&wt)?;
        wt[k] = w[k] - h;
        let fm = objective.value(&wt)?;
        wt[k] = w[k];
        g[k] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - f0) / h,
            (false, true) => (f0 - fm) / h,
            (false, false) => 0.0,
        };
    }
    Ok(g)
}

/// At a zero unlabelled weight the likelihood carries no information about
/// states the labels cannot reach, so their free emission parameters are
/// unidentified unless shared with a reachable state.
fn check_identifiability(
    layout: &WorkingLayout,
    dataset: &[LabeledSeries],
    alpha: f64,
) -> Result<()> {
    if alpha > 0.0 {
        return Ok(());
    }
    let spec = layout.spec();
    let n = spec.n_states();
    let mut supported = vec![false; n];
    for series in dataset {
        for t in series.label_indices() {
            let z = series.labels()[t];
            for (i, s) in supported.iter_mut().enumerate() {
                if spec.params.label_model.label_log_mass(n, i, z)? > f64::NEG_INFINITY {
                    *s = true;
                }
            }
        }
    }
    for group in layout.groups() {
        if group.coord.is_none() {
            continue;
        }
        if !group.slots.iter().any(|&(s, _, _)| supported[s]) {
            let (s, c, f) = group.slots[0];
            let field =
                spec.params.emissions.states[s].components[c].family.field_names()[f].clone();
            return Err(Error::NotIdentifiable(format!(
                "state {s} is never reachable from a label and alpha = 0, so its free \
                 parameter {field} (component {c}) carries no information; label it, fix it, \
                 or share it with a labelled state"
            )));
        }
    }
    Ok(())
}

/// Pooled per-feature order statistics used to place starting values.
struct FeatureSummary {
    sorted: Vec<f64>,
    sd: f64,
    ln_sorted: Vec<f64>,
    ln_sd: f64,
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

fn summarize_features(dataset: &[LabeledSeries]) -> BTreeMap<String, FeatureSummary> {
    let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for series in dataset {
        for (f, name) in series.feature_names().iter().enumerate() {
            let col = pooled.entry(name.clone()).or_default();
            col.extend(series.values().column(f).iter().filter(|v| !v.is_nan()));
        }
    }
    pooled
        .into_iter()
        .map(|(name, mut vals)| {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let sd = sample_sd(&vals);
            let mut lns: Vec<f64> = vals.iter().filter(|&&v| v > 0.0).map(|v| v.ln()).collect();
            let ln_sd = sample_sd(&lns);
            lns.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (name, FeatureSummary { sorted: vals, sd, ln_sorted: lns, ln_sd })
        })
        .collect()
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// Flat Dirichlet draw via normalised exponentials.
fn dirichlet(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln() + 1e-12
        })
        .collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}

enum FieldKind {
    Loc { col: usize, ln_scale: bool, positive: bool },
    Scale { col: usize, ln_scale: bool },
    OffDiag { col: usize },
}

fn field_kind(family: &EmissionFamily, field_idx: usize) -> FieldKind {
    match family {
        EmissionFamily::Normal { .. } => match field_idx {
            0 => FieldKind::Loc { col: 0, ln_scale: false, positive: false },
            _ => FieldKind::Scale { col: 0, ln_scale: false },
        },
        EmissionFamily::Gamma { .. } => match field_idx {
            0 => FieldKind::Loc { col: 0, ln_scale: false, positive: true },
            _ => FieldKind::Scale { col: 0, ln_scale: false },
        },
        EmissionFamily::LogNormal { .. } => match field_idx {
            0 => FieldKind::Loc { col: 0, ln_scale: true, positive: false },
            _ => FieldKind::Scale { col: 0, ln_scale: true },
        },
        EmissionFamily::MultivariateLogNormal { log_mean, .. } => {
            let d = log_mean.len();
            if field_idx < d {
                return FieldKind::Loc { col: field_idx, ln_scale: true, positive: false };
            }
            // Lower-triangle position of field_idx - d, rows of length r + 1.
            let mut rest = field_idx - d;
            let mut r = 0;
            while rest > r {
                rest -= r + 1;
                r += 1;
            }
            if rest == r {
                FieldKind::Scale { col: r, ln_scale: true }
            } else {
                FieldKind::OffDiag { col: r }
            }
        }
    }
}

fn init_field_value(
    spec: &ModelSpec,
    state: usize,
    comp_idx: usize,
    field_idx: usize,
    summaries: &BTreeMap<String, FeatureSummary>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let comp = &spec.params.emissions.states[state].components[comp_idx];
    let template = comp.family.field_values()?[field_idx];
    let n = spec.n_states() as f64;
    let q_level = (state + 1) as f64 / (n + 1.0);
    match field_kind(&comp.family, field_idx) {
        FieldKind::Loc { col, ln_scale, positive } => {
            let z: f64 = rng.sample(StandardNormal);
            let summary = summaries.get(&comp.features[col]);
            let picked = summary.and_then(|s| {
                let (sorted, sd) =
                    if ln_scale { (&s.ln_sorted, s.ln_sd) } else { (&s.sorted, s.sd) };
                quantile(sorted, q_level).map(|q| (q, sd))
            });
            Ok(match picked {
                Some((q, _)) if positive && q > 0.0 => {
                    (q * (0.25 * z).exp()).max(10.0 * SD_FLOOR)
                }
                Some((q, sd)) if !positive => {
                    let spread = if sd > 0.0 { sd } else { q.abs().max(1.0) * 0.1 };
                    q + 0.3 * spread * z
                }
                _ if positive => (template * (0.25 * z).exp()).max(10.0 * SD_FLOOR),
                _ => template + 0.25 * template.abs().max(1.0) * z,
            })
        }
        FieldKind::Scale { col, ln_scale } => {
            let u: f64 = rng.random();
            // Log-uniform factor in [1/2, 2].
            let factor = (std::f64::consts::LN_2 * (2.0 * u - 1.0)).exp();
            let base = summaries
                .get(&comp.features[col])
                .map(|s| if ln_scale { s.ln_sd } else { s.sd })
                .filter(|&sd| sd > 10.0 * SD_FLOOR)
                .unwrap_or(template);
            Ok((base * factor).max(10.0 * SD_FLOOR))
        }
        FieldKind::OffDiag { col } => {
            let z: f64 = rng.sample(StandardNormal);
            let spread = summaries
                .get(&comp.features[col])
                .map(|s| s.ln_sd)
                .filter(|&sd| sd > 0.0)
                .unwrap_or(0.1);
            Ok(0.1 * spread * z)
        }
    }
}

/// Draws one random starting point that satisfies every constraint: fixed
/// scalars keep their values, share groups get one draw, probability rows are
/// flat-Dirichlet (transition rows lean toward self-persistence), and
/// location/scale fields are spread across pooled data quantiles.
fn random_init(
    layout: &WorkingLayout,
    summaries: &BTreeMap<String, FeatureSummary>,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    let spec = layout.spec();
    let n = spec.n_states();
    let mut params = spec.params.clone();

    if layout.delta_is_free() {
        params.delta = crate::markov::InitialDistribution::new(dirichlet(n, rng))?;
    }

    let mut probs = Array2::<f64>::zeros((n, n));
    for (row, free) in layout.gamma_free_cols().iter().enumerate() {
        if free.len() == 1 {
            probs[(row, free[0])] = 1.0;
            continue;
        }
        let mut d = dirichlet(free.len(), rng);
        if let Some(pos) = free.iter().position(|&j| j == row) {
            // Lean toward staying in the same state.
            for v in d.iter_mut() {
                *v *= 0.5;
            }
            d[pos] += 0.5;
        }
        for (k, &col) in free.iter().enumerate() {
            probs[(row, col)] = d[k];
        }
    }
    params.gamma =
        crate::markov::TransitionMatrix::with_mask(probs, spec.params.gamma.mask().clone())?;

    if layout.labels_are_free() {
        let rows = (0..n).map(|_| dirichlet(n, rng)).collect();
        params.label_model = LabelModel::Categorical { rows };
    }

    let mut fields: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (s, state) in params.emissions.states.iter().enumerate() {
        for (c, comp) in state.components.iter().enumerate() {
            fields.insert((s, c), comp.family.field_values()?);
        }
    }
    for group in layout.groups() {
        let (s0, c0, f0) = group.slots[0];
        let value = match group.fixed {
            Some(v) => v,
            None => init_field_value(spec, s0, c0, f0, summaries, rng)?,
        };
        for &(s, c, f) in &group.slots {
            fields.get_mut(&(s, c)).unwrap()[f] = value;
        }
    }
    for ((s, c), vals) in fields {
        let family = &params.emissions.states[s].components[c].family;
        params.emissions.states[s].components[c].family = family.with_field_values(&vals)?;
    }
    Ok(params)
}

/// Fits the model to a labelled dataset at the given unlabelled weight.
///
/// Each restart draws a fresh starting point (deterministically from
/// `options.seed`), climbs the weighted log-likelihood, and the best final
/// objective wins; ties go to the lowest restart. Errors with
/// [`Error::NotIdentifiable`] when `alpha` is zero and some state's free
/// emission parameters cannot be reached from any label.
pub fn fit(
    spec: &ModelSpec,
    dataset: &[LabeledSeries],
    alpha: f64,
    options: &FitOptions,
) -> Result<FitResult> {
    validate_alpha(alpha)?;
    if options.restarts == 0 {
        return Err(Error::InvalidParameter("fit needs at least one restart".into()));
    }
    let layout = WorkingLayout::new(spec)?;
    check_identifiability(&layout, dataset, alpha)?;
    let objective = Objective::new(&layout, dataset, alpha)?;
    let summaries = summarize_features(dataset);

    let runs: Vec<(RestartRecord, Vec<f64>)> = (0..options.restarts)
        .into_par_iter()
        .map(|r| -> Result<(RestartRecord, Vec<f64>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(r as u64);
            let start = random_init(&layout, &summaries, &mut rng)?;
            let w0 = layout.to_working(&start)?;
            let sol = match options.gradient {
                GradientMode::Analytic => optim::maximize(
                    |w| objective.value(w),
                    |w| objective.value_and_grad(w),
                    w0,
                    options.max_iter,
                    options.tol,
                    options.grad_tol,
                )?,
                GradientMode::FiniteDifference => optim::maximize(
                    |w| objective.value(w),
                    |w| {
                        let f = objective.value(w)?;
                        if !f.is_finite() {
                            return Ok((f, vec![0.0; w.len()]));
                        }
                        let g = fd_gradient(&objective, w, f)?;
                        Ok((f, g))
                    },
                    w0,
                    options.max_iter,
                    options.tol,
                    options.grad_tol,
                )?,
            };
            log::debug!(
                "restart {r}: objective {:.6}, {} iterations, converged = {}",
                sol.value,
                sol.iterations,
                sol.converged
            );
            let record = RestartRecord {
                restart: r,
                objective: sol.value,
                iterations: sol.iterations,
                converged: sol.converged,
                accepted_objectives: sol.accepted,
            };
            Ok((record, sol.x))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (r, (record, _)) in runs.iter().enumerate() {
        if record.objective > runs[best].0.objective {
            best = r;
        }
    }
    if !runs[best].0.objective.is_finite() {
        return Err(Error::FitFailure(format!(
            "no restart reached a feasible point ({} restarts)",
            options.restarts
        )));
    }
    let working = runs[best].1.clone();
    let params = layout.to_params(&working)?;
    // The working map guarantees the constraints; this confirms it.
    ModelSpec { params: params.clone(), constraints: spec.constraints.clone() }.validate()?;
    let converged = runs[best].0.converged;
    let objective_value = runs[best].0.objective;
    let restarts = runs.into_iter().map(|(rec, _)| rec).collect();
    Ok(FitResult {
        params,
        objective: objective_value,
        working,
        restarts,
        best_restart: best,
        converged,
    })
}

/// Per-coordinate values and standard errors at a fitted point.
///
/// `working`/`working_se` are on the unconstrained scale. `natural` holds the
/// probability or field value each coordinate controls, and `natural_se`
/// carries the working error through the transform (delta method, diagonal
/// only); for probability coordinates the factor is p(1 - p).
#[derive(Debug, Clone)]
pub struct StandardErrors {
    pub names: Vec<String>,
    pub working: Vec<f64>,
    pub working_se: Vec<f64>,
    pub natural: Vec<f64>,
    pub natural_se: Vec<f64>,
}

/// Standard errors from the observed information at `params`: the Hessian of
/// the weighted log-likelihood is built by central finite differences of the
/// analytic gradient, negated, and inverted; square roots of the diagonal are
/// the working-scale errors. A small escalating ridge is applied if rounding
/// leaves the information matrix short of positive definite.
pub fn standard_errors(
    spec: &ModelSpec,
    dataset: &[LabeledSeries],
    alpha: f64,
    params: &ModelParams,
) -> Result<StandardErrors> {
    let layout = WorkingLayout::new(spec)?;
    let objective = Objective::new(&layout, dataset, alpha)?;
    let w = layout.to_working(params)?;
    let p = w.len();
    let names = layout.coord_names().to_vec();

    let mut fields: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (s, state) in params.emissions.states.iter().enumerate() {
        for (c, comp) in state.components.iter().enumerate() {
            fields.insert((s, c), comp.family.field_values()?);
        }
    }
    let mut natural = Vec::with_capacity(p);
    let mut dnat = Vec::with_capacity(p);
    for coord in layout.coord_list() {
        let (v, d) = match *coord {
            Coord::Delta { state } => {
                let v = params.delta.probs()[state];
                (v, v * (1.0 - v))
            }
            Coord::Gamma { row, col } => {
                let v = params.gamma.probs()[(row, col)];
                (v, v * (1.0 - v))
            }
            Coord::Label { row, z } => {
                let v = match &params.label_model {
                    LabelModel::Categorical { rows } => rows[row][z],
                    _ => unreachable!("label coordinates exist only for categorical label models"),
                };
                (v, v * (1.0 - v))
            }
            Coord::Emission { group } => {
                let g = &layout.groups()[group];
                let (s, c, f) = g.slots[0];
                let v = fields[&(s, c)][f];
                (v, g.transform.dnatural_dworking(v))
            }
        };
        natural.push(v);
        dnat.push(d);
    }
    if p == 0 {
        return Ok(StandardErrors {
            names,
            working: w,
            working_se: vec![],
            natural,
            natural_se: vec![],
        });
    }

    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let h = 1e-4 * (1.0 + w[k].abs());
            let mut wp = w.clone();
            wp[k] += h;
            let mut wm = w.clone();
            wm[k] -= h;
            let (fp, gp) = objective.value_and_grad(&wp)?;
            let (fm, gm) = objective.value_and_grad(&wm)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::FitFailure(
                    "curvature evaluation left the feasible region".into(),
                ));
            }
            Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let mut info = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for k in 0..p {
            // Negated, symmetrised Hessian.
            info[(i, k)] = -0.5 * (columns[k][i] + columns[i][k]);
        }
    }

    let mut working_se: Option<Vec<f64>> = None;
    for ridge in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
        let mut a = info.clone();
        for d in 0..p {
            a[(d, d)] += ridge * (1.0 + info[(d, d)].abs());
        }
        if let Some(l) = linalg::cholesky(&a) {
            let mut se = vec![0.0; p];
            let mut e = vec![0.0; p];
            for (k, out) in se.iter_mut().enumerate() {
                e[k] = 1.0;
                let y = linalg::solve_lower(&l, &e);
                let x = linalg::solve_lower_transpose(&l, &y);
                *out = x[k].sqrt();
                e[k] = 0.0;
            }
            if ridge > 0.0 {
                log::warn!("information matrix needed a ridge of {ridge} to invert");
            }
            working_se = Some(se);
            break;
        }
    }
    let working_se = working_se.ok_or_else(|| {
        Error::FitFailure("observed information matrix is not positive definite".into())
    })?;
    let natural_se = dnat.iter().zip(&working_se).map(|(d, s)| d.abs() * s).collect();
    Ok(StandardErrors { names, working: w, working_se, natural, natural_se })
}
