//! Synthetic data generation and brute-force reference implementations.
//!
//! The `brute_force_*` functions enumerate every state path explicitly. They
//! are exponentially slow and exist as independent oracles for validating the
//! forward, forward/backward, and Viterbi recursions on small instances.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{
    EmissionComponent, EmissionFamily, EmissionProduct, LabelModel, MissingPolicy, StateEmission,
};
use crate::error::{Error, Result};
use crate::linalg::logsumexp;
use crate::markov::{InitialDistribution, LabeledSeries, TransitionMatrix};
use crate::model::{ConstraintSet, FixedScalar, ModelParams, ModelSpec};

const MAX_ENUMERATED_PATHS: u128 = 1_000_000;

fn n_paths(n_states: usize, t_len: usize) -> Result<usize> {
    let mut total: u128 = 1;
    for _ in 0..t_len {
        total = total.saturating_mul(n_states as u128);
        if total > MAX_ENUMERATED_PATHS {
            return Err(Error::TooLarge(format!(
                "{n_states}^{t_len} paths exceed the enumeration limit of {MAX_ENUMERATED_PATHS}"
            )));
        }
    }
    Ok(total as usize)
}

fn check_shapes(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<(usize, usize)> {
    let n = delta.n_states();
    if gamma.n_states() != n || log_emissions.ncols() != n {
        return Err(Error::ShapeMismatch(
            "initial distribution, transition matrix, and emissions disagree on state count".into(),
        ));
    }
    if log_emissions.nrows() == 0 {
        return Err(Error::ShapeMismatch("log emission matrix has no rows".into()));
    }
    Ok((log_emissions.nrows(), n))
}

/// Log weight of one explicit state path.
pub fn path_log_weight(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
    path: &[usize],
) -> Result<f64> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    if path.len() != t_len || path.iter().any(|&s| s >= n) {
        return Err(Error::ShapeMismatch(format!(
            "path length {} or state range does not fit a {t_len}-index, {n}-state instance",
            path.len()
        )));
    }
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let mut lw = ln(delta.probs()[path[0]]) + log_emissions[(0, path[0])];
    for t in 1..t_len {
        lw += ln(gamma.probs()[(path[t - 1], path[t])]) + log_emissions[(t, path[t])];
    }
    Ok(lw)
}

/// Writes the path with the given enumeration index into `path`. Index 0 is
/// the all-zero path; the state at t = 0 is the most significant digit, so
/// enumeration order is lexicographic path order.
fn decode_path(mut idx: usize, n: usize, path: &mut [usize]) {
    for t in (0..path.len()).rev() {
        path[t] = idx % n;
        idx /= n;
    }
}

fn path_log_weights(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<Vec<f64>> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    let total = n_paths(n, t_len)?;
    let mut path = vec![0usize; t_len];
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        decode_path(idx, n, &mut path);
        out.push(path_log_weight(delta, gamma, log_emissions, &path)?);
    }
    Ok(out)
}

/// Log-likelihood by explicit summation over every state path.
pub fn brute_force_log_likelihood(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<f64> {
    Ok(logsumexp(&path_log_weights(delta, gamma, log_emissions)?))
}

/// Per-index state posteriors by explicit path-mass marginalisation.
pub fn brute_force_posteriors(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    let lws = path_log_weights(delta, gamma, log_emissions)?;
    let m = lws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood(
            "every state path has zero weight; posteriors are undefined".into(),
        ));
    }
    let mut numer = Array2::<f64>::zeros((t_len, n));
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    for (idx, &lw) in lws.iter().enumerate() {
        let w = (lw - m).exp();
        if w == 0.0 {
            continue;
        }
        total += w;
        decode_path(idx, n, &mut path);
        for (t, &s) in path.iter().enumerate() {
            numer[(t, s)] += w;
        }
    }
    Ok(numer / total)
}

/// Highest-weight state path by explicit enumeration. Among ties the
/// lexicographically smallest path wins.
pub fn brute_force_map_path(
    delta: &InitialDistribution,
    gamma: &TransitionMatrix,
    log_emissions: &Array2<f64>,
) -> Result<Vec<usize>> {
    let (t_len, n) = check_shapes(delta, gamma, log_emissions)?;
    let lws = path_log_weights(delta, gamma, log_emissions)?;
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0usize;
    for (idx, &lw) in lws.iter().enumerate() {
        if lw > best {
            best = lw;
            arg = idx;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood(
            "every state path has zero weight; no best path exists".into(),
        ));
    }
    let mut path = vec![0usize; t_len];
    decode_path(arg, n, &mut path);
    Ok(path)
}

/// Planned layout of one simulated series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPlan {
    pub id: String,
    pub len: usize,
    /// Indices that receive a label, 0-based.
    pub label_indices: Vec<usize>,
}

/// Everything needed to generate a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SimulationScenario {
    pub params: ModelParams,
    pub plans: Vec<SeriesPlan>,
    pub seed: u64,
}

/// One simulated series together with its hidden state path.
#[derive(Debug, Clone)]
pub struct SimulatedSeries {
    pub series: LabeledSeries,
    /// True state path; for the `overlap` preset this holds the semantic
    /// class rather than the four generator states.
    pub path: Vec<usize>,
}

fn sample_index<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Simulates every planned series. Each series uses its own RNG stream
/// derived from the scenario seed, so per-series output is independent of
/// the other plans.
pub fn simulate_phmm(scenario: &SimulationScenario) -> Result<Vec<SimulatedSeries>> {
    scenario.params.validate()?;
    let n = scenario.params.n_states();
    let feature_names = scenario.params.emissions.feature_names();
    let n_features = feature_names.len();
    let mut out = Vec::with_capacity(scenario.plans.len());
    for (plan_idx, plan) in scenario.plans.iter().enumerate() {
        if plan.len == 0 {
            return Err(Error::InvalidParameter(format!("series {} has length 0", plan.id)));
        }
        for &t in &plan.label_indices {
            if t >= plan.len {
                return Err(Error::InvalidParameter(format!(
                    "series {}: label index {t} outside 0..{}",
                    plan.id, plan.len
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(plan_idx as u64);
        let mut path = Vec::with_capacity(plan.len);
        let mut values = Array2::<f64>::zeros((plan.len, n_features));
        for t in 0..plan.len {
            let state = if t == 0 {
                sample_index(scenario.params.delta.probs(), &mut rng)
            } else {
                let row = scenario.params.gamma.probs().row(path[t - 1]);
                sample_index(row.to_slice().unwrap(), &mut rng)
            };
            debug_assert!(state < n);
            path.push(state);
            let row = scenario.params.emissions.sample_state(state, &mut rng)?;
            for (f, v) in row.into_iter().enumerate() {
                values[(t, f)] = v;
            }
        }
        let mut labels = vec![None; plan.len];
        for &t in &plan.label_indices {
            labels[t] = Some(scenario.params.label_model.sample_label(path[t], &mut rng));
        }
        let series = LabeledSeries::new(plan.id.clone(), feature_names.clone(), values, labels)?;
        out.push(SimulatedSeries { series, path });
    }
    Ok(out)
}

/// Bundled demonstration scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Eleven dive-summary profiles (depth/duration log-normal pairs) from a
    /// three-state chain with scattered perfect labels.
    Cs1,
    /// 130 per-dive window series from a six-state chain with a structured
    /// transition mask, absorbing terminal states, and sparse labels at
    /// first windows, capture windows, and terminal windows.
    Cs2,
    /// Two semantic classes that are each a mixture of two latent states,
    /// with two labels per series; used to study the weight exponent.
    Overlap,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "cs1" => Ok(Preset::Cs1),
            "cs2" => Ok(Preset::Cs2),
            "overlap" => Ok(Preset::Overlap),
            other => Err(Error::Config(format!(
                "unknown preset {other}; expected cs1, cs2, or overlap"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Cs1 => "cs1",
            Preset::Cs2 => "cs2",
            Preset::Overlap => "overlap",
        })
    }
}

/// A generated preset: the model specification to fit (whose parameters are
/// the generating truth for `cs1` and `cs2`) and the simulated data.
#[derive(Debug, Clone)]
pub struct PresetData {
    pub spec: ModelSpec,
    pub data: Vec<SimulatedSeries>,
}

pub fn generate_preset(preset: Preset, seed: u64) -> Result<PresetData> {
    match preset {
        Preset::Cs1 => generate_cs1(seed),
        Preset::Cs2 => generate_cs2(seed),
        Preset::Overlap => generate_overlap(seed),
    }
}

/// True parameters of the `cs1` preset: three behaviour states over
/// (max depth, duration) with correlated log-normal emissions.
pub fn cs1_model_spec() -> ModelSpec {
    let mv = |log_mean: [f64; 2], cov: [[f64; 2]; 2]| StateEmission {
        components: vec![EmissionComponent {
            features: vec!["max_depth_m".into(), "duration_s".into()],
            family: EmissionFamily::MultivariateLogNormal {
                log_mean: log_mean.to_vec(),
                cov: cov.iter().map(|r| r.to_vec()).collect(),
            },
        }],
    };
    let params = ModelParams {
        delta: InitialDistribution::new(vec![0.3, 0.4, 0.3]).unwrap(),
        gamma: TransitionMatrix::new(
            ndarray::array![[0.92, 0.05, 0.03], [0.04, 0.92, 0.04], [0.05, 0.05, 0.90]],
        )
        .unwrap(),
        emissions: EmissionProduct {
            states: vec![
                mv([1.10, 5.00], [[0.15, 0.05], [0.05, 0.08]]),
                mv([2.08, 4.38], [[0.20, 0.08], [0.08, 0.12]]),
                mv([3.69, 5.30], [[0.35, 0.10], [0.10, 0.15]]),
            ],
            missing: MissingPolicy::Skip,
        },
        label_model: LabelModel::Perfect,
    };
    ModelSpec::unconstrained(params)
}

fn generate_cs1(seed: u64) -> Result<PresetData> {
    let spec = cs1_model_spec();
    let lengths = [198usize, 198, 197, 197, 197, 197, 197, 197, 197, 197, 197];
    let label_counts = [10usize, 10, 10, 10, 10, 10, 10, 10, 10, 8, 8];
    let mut plans = Vec::new();
    for (i, (&len, &n_labels)) in lengths.iter().zip(&label_counts).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + i as u64);
        let mut idx = rand::seq::index::sample(&mut rng, len, n_labels).into_vec();
        idx.sort_unstable();
        plans.push(SeriesPlan { id: format!("s{:02}", i + 1), len, label_indices: idx });
    }
    let data = simulate_phmm(&SimulationScenario { params: spec.params.clone(), plans, seed })?;
    Ok(PresetData { spec, data })
}

/// True parameters and constraints of the `cs2` preset.
///
/// States (0-based): 0 descent, 1 bottom search, 2 chase, 3 capture,
/// 4 terminal phase without an event, 5 terminal phase after an event.
/// States 4 and 5 are absorbing, share their emission parameters, and are
/// distinguishable only through labels. Vertical-change means are pinned to
/// zero for states 1..3, and every series starts in state 0.
pub fn cs2_model_spec() -> ModelSpec {
    let state = |depth: (f64, f64), heading: (f64, f64), jerk: (f64, f64)| StateEmission {
        components: vec![
            EmissionComponent {
                features: vec!["depth_change_m".into()],
                family: EmissionFamily::Normal { mean: depth.0, sd: depth.1 },
            },
            EmissionComponent {
                features: vec!["heading_tv_rad".into()],
                family: EmissionFamily::Gamma { mean: heading.0, sd: heading.1 },
            },
            EmissionComponent {
                features: vec!["jerk_norm".into()],
                family: EmissionFamily::Gamma { mean: jerk.0, sd: jerk.1 },
            },
        ],
    };
    let terminal = state((-3.5, 1.5), (0.9, 0.5), (1.1, 0.5));
    let mut probs = Array2::<f64>::zeros((6, 6));
    let rows: [&[(usize, f64)]; 6] = [
        &[(0, 0.88), (1, 0.115), (4, 0.005)],
        &[(1, 0.93), (2, 0.055), (4, 0.015)],
        &[(1, 0.12), (2, 0.82), (3, 0.045), (4, 0.015)],
        &[(3, 0.75), (5, 0.25)],
        &[(4, 1.0)],
        &[(5, 1.0)],
    ];
    let mut mask = Array2::<bool>::from_elem((6, 6), true);
    for (i, row) in rows.iter().enumerate() {
        for &(j, p) in *row {
            probs[(i, j)] = p;
            mask[(i, j)] = false;
        }
    }
    let params = ModelParams {
        delta: InitialDistribution::degenerate(6, 0).unwrap(),
        gamma: TransitionMatrix::with_mask(probs, mask).unwrap(),
        emissions: EmissionProduct {
            states: vec![
                state((4.0, 1.5), (0.8, 0.4), (1.0, 0.4)),
                state((0.0, 1.0), (1.2, 0.6), (1.0, 0.5)),
                state((0.0, 2.5), (2.5, 1.2), (2.2, 1.0)),
                state((0.0, 3.0), (4.0, 1.5), (4.0, 1.5)),
                terminal.clone(),
                terminal,
            ],
            missing: MissingPolicy::Skip,
        },
        label_model: LabelModel::Perfect,
    };
    let fixed = (1..=3)
        .map(|s| FixedScalar { state: s, component: 0, field: "mean".into(), value: 0.0 })
        .collect();
    let constraints = ConstraintSet {
        delta_fixed: true,
        fixed,
        shared: Vec::new(),
        tied_states: vec![vec![4, 5]],
        label_model_fixed: false,
    };
    ModelSpec { params, constraints }
}

/// Total index count of the `cs2` preset across its 130 series.
pub const CS2_TOTAL_LEN: usize = 15_821;

fn generate_cs2(seed: u64) -> Result<PresetData> {
    let spec = cs2_model_spec();
    let n_series = 130usize;
    let mut len_rng = ChaCha8Rng::seed_from_u64(seed);
    len_rng.set_stream(999);
    let mut lengths: Vec<usize> =
        (0..n_series).map(|_| 102 + sample_index(&[1.0 / 41.0; 41], &mut len_rng)).collect();
    // Nudge lengths one index at a time until they sum to the target total.
    let mut diff = CS2_TOTAL_LEN as i64 - lengths.iter().sum::<usize>() as i64;
    let mut k = 0;
    while diff != 0 {
        if diff > 0 {
            lengths[k] += 1;
            diff -= 1;
        } else if lengths[k] > 60 {
            lengths[k] -= 1;
            diff += 1;
        }
        k = (k + 1) % n_series;
    }
    let plans: Vec<SeriesPlan> = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| SeriesPlan {
            id: format!("dive{:03}", i + 1),
            len,
            label_indices: Vec::new(),
        })
        .collect();
    let sims = simulate_phmm(&SimulationScenario { params: spec.params.clone(), plans, seed })?;

    // Labels are attached after simulation: the first window of every dive,
    // the first capture window of five dives, and the terminal window of
    // 2 + 19 dives, split by how the dive ended.
    let mut pick_rng = ChaCha8Rng::seed_from_u64(seed);
    pick_rng.set_stream(998);
    let capture_eligible: Vec<usize> = (0..n_series)
        .filter(|&i| sims[i].path.iter().any(|&s| s == 3))
        .collect();
    let end5_eligible: Vec<usize> =
        (0..n_series).filter(|&i| *sims[i].path.last().unwrap() == 5).collect();
    let end4_eligible: Vec<usize> =
        (0..n_series).filter(|&i| *sims[i].path.last().unwrap() == 4).collect();
    let pick = |pool: &[usize], k: usize, rng: &mut ChaCha8Rng| -> Result<Vec<usize>> {
        if pool.len() < k {
            return Err(Error::InvalidParameter(format!(
                "cs2 preset: only {} eligible series for {k} labels; try another seed",
                pool.len()
            )));
        }
        let sel = rand::seq::index::sample(rng, pool.len(), k);
        Ok(sel.iter().map(|j| pool[j]).collect())
    };
    let capture_picks = pick(&capture_eligible, 5, &mut pick_rng)?;
    let end5_picks = pick(&end5_eligible, 2, &mut pick_rng)?;
    let end4_picks = pick(&end4_eligible, 19, &mut pick_rng)?;

    let mut data = Vec::with_capacity(n_series);
    for (i, sim) in sims.into_iter().enumerate() {
        let t_len = sim.path.len();
        let mut labels = vec![None; t_len];
        labels[0] = Some(sim.path[0]);
        if capture_picks.contains(&i) {
            let t = sim.path.iter().position(|&s| s == 3).unwrap();
            labels[t] = Some(3);
        }
        if end5_picks.contains(&i) || end4_picks.contains(&i) {
            labels[t_len - 1] = Some(sim.path[t_len - 1]);
        }
        let series = LabeledSeries::new(
            sim.series.id().to_string(),
            sim.series.feature_names().to_vec(),
            sim.series.values().clone(),
            labels,
        )?;
        data.push(SimulatedSeries { series, path: sim.path });
    }
    Ok(PresetData { spec, data })
}

/// Two-state model specification fitted to the `overlap` preset.
pub fn overlap_model_spec() -> ModelSpec {
    let state = |mean: f64| StateEmission {
        components: vec![EmissionComponent {
            features: vec!["x".into()],
            family: EmissionFamily::Normal { mean, sd: 1.0 },
        }],
    };
    ModelSpec::unconstrained(ModelParams {
        delta: InitialDistribution::uniform(2),
        gamma: TransitionMatrix::new(ndarray::array![[0.9, 0.1], [0.1, 0.9]]).unwrap(),
        emissions: EmissionProduct {
            states: vec![state(0.0), state(2.0)],
            missing: MissingPolicy::Skip,
        },
        label_model: LabelModel::Perfect,
    })
}

/// Latent generator of the `overlap` preset: four states collapsing onto two
/// semantic classes (states 0, 1 are class 0; states 2, 3 are class 1).
fn overlap_generator() -> ModelParams {
    let state = |mean: f64, sd: f64| StateEmission {
        components: vec![EmissionComponent {
            features: vec!["x".into()],
            family: EmissionFamily::Normal { mean, sd },
        }],
    };
    let stay = 0.95;
    let off = (1.0 - stay) / 3.0;
    let probs = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { stay } else { off });
    // The marginal density splits into a low cluster {-1.0, 0.0} and a high
    // cluster {1.5, 3.0}, each mixing both classes, so fitting the marginal
    // alone cannot separate the classes.
    ModelParams {
        delta: InitialDistribution::uniform(4),
        gamma: TransitionMatrix::new(probs).unwrap(),
        emissions: EmissionProduct {
            states: vec![state(0.0, 1.0), state(3.0, 1.0), state(1.5, 1.0), state(-1.0, 1.0)],
            missing: MissingPolicy::Skip,
        },
        label_model: LabelModel::Perfect,
    }
}

const OVERLAP_CLASS: [usize; 4] = [0, 0, 1, 1];

fn generate_overlap(seed: u64) -> Result<PresetData> {
    let generator = overlap_generator();
    let plans: Vec<SeriesPlan> = (0..8)
        .map(|i| SeriesPlan { id: format!("r{:02}", i + 1), len: 600, label_indices: Vec::new() })
        .collect();
    let sims = simulate_phmm(&SimulationScenario { params: generator, plans, seed })?;
    let mut data = Vec::with_capacity(sims.len());
    for (i, sim) in sims.into_iter().enumerate() {
        let classes: Vec<usize> = sim.path.iter().map(|&s| OVERLAP_CLASS[s]).collect();
        let mut label_rng = ChaCha8Rng::seed_from_u64(seed);
        label_rng.set_stream(2000 + i as u64);
        let mut labels = vec![None; classes.len()];
        // Two labels per class per series (under 1% of indices), placed
        // uniformly over that class's indices.
        for class in 0..2 {
            let pool: Vec<usize> =
                (0..classes.len()).filter(|&t| classes[t] == class).collect();
            if pool.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "overlap preset: series {} spends under two indices in class {class}; \
                     try another seed",
                    sim.series.id()
                )));
            }
            for t in rand::seq::index::sample(&mut label_rng, pool.len(), 2) {
                labels[pool[t]] = Some(class);
            }
        }
        let series = LabeledSeries::new(
            sim.series.id().to_string(),
            sim.series.feature_names().to_vec(),
            sim.series.values().clone(),
            labels,
        )?;
        data.push(SimulatedSeries { series, path: classes });
    }
    Ok(PresetData { spec: overlap_model_spec(), data })
}
