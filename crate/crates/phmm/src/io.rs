//! File formats: dataset CSV, model-config and parameter JSON, raw-trace
//! CSV, and report writers.
//!
//! Convention: state indices and labels are 1-based in every file and
//! 0-based in the API; positional indices (t, dive numbers, window numbers)
//! are 0-based everywhere. CSV floats carry 17 significant digits so a
//! re-parse recovers the exact value. Every write lands via a temp file and
//! an atomic rename, and the same input always produces identical bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distributions::{EmissionProduct, LabelModel};
use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::evaluate::MetricsReport;
use crate::featurize::{BaselineStats, BaselineThresholds, DiveEvents, SensorTrace};
use crate::markov::{Decoding, InitialDistribution, LabeledSeries, TransitionMatrix};
use crate::model::{ConstraintSet, FixedScalar, ModelParams, ModelSpec, ScalarRef};
use crate::simulate::SeriesPlan;
use crate::weighting::validate_alpha;

/// Formats a float with 17 significant digits, enough to reconstruct the
/// exact bits on re-parse.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Writes the whole file through a sibling temp file and a rename, so an
/// interrupted run never leaves a truncated file behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    writer
        .into_inner()
        .map_err(|e| Error::Dataset(format!("could not flush csv buffer: {e}")))
}

// --- dataset CSV ---

/// Writes series as rows `series_id,t,<features...>,label` with labels
/// 1-based and empty where absent. All series must share a feature schema.
pub fn write_dataset(path: &Path, dataset: &[LabeledSeries]) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Dataset("refusing to write an empty dataset".into()))?;
    let features = first.feature_names();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend(features.iter().cloned());
    header.push("label".to_string());
    w.write_record(&header)?;
    for series in dataset {
        if series.feature_names() != features {
            return Err(Error::ShapeMismatch(format!(
                "series {} has features {:?}, expected {features:?}",
                series.id(),
                series.feature_names()
            )));
        }
        for t in 0..series.len() {
            let mut record = vec![series.id().to_string(), t.to_string()];
            for f in 0..features.len() {
                record.push(fmt_float(series.values()[(t, f)]));
            }
            record.push(match series.labels()[t] {
                Some(z) => (z + 1).to_string(),
                None => String::new(),
            });
            w.write_record(&record)?;
        }
    }
    atomic_write(path, &finish_csv(w)?)
}

/// Reads a dataset CSV back into series, in order of first appearance.
/// Within a series `t` must be strictly increasing.
pub fn read_dataset(path: &Path) -> Result<Vec<LabeledSeries>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[0] != "series_id" || cols[1] != "t" || cols[cols.len() - 1] != "label"
    {
        return Err(Error::Dataset(format!(
            "expected header series_id,t,<features...>,label; got {cols:?}"
        )));
    }
    let features: Vec<String> = cols[2..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    struct Partial {
        last_t: i64,
        values: Vec<f64>,
        labels: Vec<Option<usize>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut partials: BTreeMap<String, Partial> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let context = |what: &str| format!("line {}: {what}", line + 2);
        if record.len() != cols.len() {
            return Err(Error::Dataset(context(&format!(
                "{} fields, expected {}",
                record.len(),
                cols.len()
            ))));
        }
        let id = record[0].to_string();
        let t: i64 = record[1]
            .parse()
            .map_err(|_| Error::Dataset(context(&format!("bad t value {:?}", &record[1]))))?;
        let entry = partials.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial { last_t: i64::MIN, values: Vec::new(), labels: Vec::new() }
        });
        if t <= entry.last_t {
            return Err(Error::Dataset(context(&format!(
                "t not strictly increasing within series {id} ({} then {t})",
                entry.last_t
            ))));
        }
        entry.last_t = t;
        for f in 0..features.len() {
            let raw = &record[2 + f];
            let value: f64 = raw
                .parse()
                .map_err(|_| Error::Dataset(context(&format!("bad {} value {raw:?}", features[f]))))?;
            entry.values.push(value);
        }
        let raw_label = &record[cols.len() - 1];
        entry.labels.push(if raw_label.is_empty() {
            None
        } else {
            let z: usize = raw_label
                .parse()
                .map_err(|_| Error::Dataset(context(&format!("bad label {raw_label:?}"))))?;
            if z == 0 {
                return Err(Error::Dataset(context("labels are 1-based in files; got 0")));
            }
            Some(z - 1)
        });
    }
    order
        .into_iter()
        .map(|id| {
            let p = partials.remove(&id).expect("ordered ids come from the map");
            let t_len = p.labels.len();
            let values = Array2::from_shape_vec((t_len, features.len()), p.values)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            LabeledSeries::new(id, features.clone(), values, p.labels)
        })
        .collect()
}

// --- model config and parameter JSON ---

fn one_based(index: usize, what: &str) -> Result<usize> {
    index
        .checked_sub(1)
        .ok_or_else(|| Error::Config(format!("{what} indices are 1-based in files; got 0")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScalarRefFile {
    state: usize,
    component: usize,
    field: String,
}

impl ScalarRefFile {
    fn to_api(&self) -> Result<ScalarRef> {
        Ok(ScalarRef {
            state: one_based(self.state, "state")?,
            component: one_based(self.component, "component")?,
            field: self.field.clone(),
        })
    }

    fn from_api(r: &ScalarRef) -> Self {
        ScalarRefFile { state: r.state + 1, component: r.component + 1, field: r.field.clone() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixedScalarFile {
    state: usize,
    component: usize,
    field: String,
    value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ConstraintsFile {
    #[serde(default)]
    delta_fixed: bool,
    #[serde(default)]
    fixed: Vec<FixedScalarFile>,
    #[serde(default)]
    shared: Vec<Vec<ScalarRefFile>>,
    #[serde(default)]
    tied_states: Vec<Vec<usize>>,
    #[serde(default)]
    label_model_fixed: bool,
}

impl ConstraintsFile {
    fn to_api(&self) -> Result<ConstraintSet> {
        Ok(ConstraintSet {
            delta_fixed: self.delta_fixed,
            fixed: self
                .fixed
                .iter()
                .map(|f| {
                    Ok(FixedScalar {
                        state: one_based(f.state, "state")?,
                        component: one_based(f.component, "component")?,
                        field: f.field.clone(),
                        value: f.value,
                    })
                })
                .collect::<Result<_>>()?,
            shared: self
                .shared
                .iter()
                .map(|group| group.iter().map(ScalarRefFile::to_api).collect())
                .collect::<Result<_>>()?,
            tied_states: self
                .tied_states
                .iter()
                .map(|group| group.iter().map(|&s| one_based(s, "state")).collect())
                .collect::<Result<_>>()?,
            label_model_fixed: self.label_model_fixed,
        })
    }

    fn from_api(c: &ConstraintSet) -> Self {
        ConstraintsFile {
            delta_fixed: c.delta_fixed,
            fixed: c
                .fixed
                .iter()
                .map(|f| FixedScalarFile {
                    state: f.state + 1,
                    component: f.component + 1,
                    field: f.field.clone(),
                    value: f.value,
                })
                .collect(),
            shared: c
                .shared
                .iter()
                .map(|group| group.iter().map(ScalarRefFile::from_api).collect())
                .collect(),
            tied_states: c
                .tied_states
                .iter()
                .map(|group| group.iter().map(|&s| s + 1).collect())
                .collect(),
            label_model_fixed: c.label_model_fixed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsFile {
    delta: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    emissions: EmissionProduct,
    label_model: LabelModel,
}

impl ParamsFile {
    fn to_api(&self) -> Result<ModelParams> {
        let n = self.delta.len();
        let mut gamma = Array2::zeros((self.gamma.len(), n));
        for (i, row) in self.gamma.iter().enumerate() {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "gamma row {i} has {} entries for {n} states",
                    row.len()
                )));
            }
            for (j, &p) in row.iter().enumerate() {
                gamma[(i, j)] = p;
            }
        }
        // In files an exact 0 declares a structural zero.
        let mask = gamma.mapv(|p| p == 0.0);
        let params = ModelParams {
            delta: InitialDistribution::new(self.delta.clone())?,
            gamma: TransitionMatrix::with_mask(gamma, mask)?,
            emissions: self.emissions.clone(),
            label_model: self.label_model.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    fn from_api(params: &ModelParams) -> Self {
        let gamma = params
            .gamma
            .probs()
            .rows()
            .into_iter()
            .map(|row| row.to_vec())
            .collect();
        ParamsFile {
            delta: params.delta.probs().to_vec(),
            gamma,
            emissions: params.emissions.clone(),
            label_model: params.label_model.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfigFile {
    #[serde(default = "alpha_one")]
    default_alpha: f64,
    #[serde(flatten)]
    params: ParamsFile,
    #[serde(default)]
    constraints: ConstraintsFile,
}

fn alpha_one() -> f64 {
    1.0
}

/// A model specification as declared in a config file, plus the weight
/// exponent to use when no flag overrides it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    pub default_alpha: f64,
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Reads and fully validates a model config. Transition entries written as
/// exactly 0 become structural zeros.
pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path)?;
    let file: ModelConfigFile = serde_json::from_slice(&bytes)?;
    let spec = ModelSpec { params: file.params.to_api()?, constraints: file.constraints.to_api()? };
    spec.validate()?;
    validate_alpha(file.default_alpha)?;
    Ok(ModelConfig { spec, default_alpha: file.default_alpha })
}

pub fn write_model_config(path: &Path, config: &ModelConfig) -> Result<()> {
    let file = ModelConfigFile {
        default_alpha: config.default_alpha,
        params: ParamsFile::from_api(&config.spec.params),
        constraints: ConstraintsFile::from_api(&config.spec.constraints),
    };
    atomic_write(path, &to_pretty_json(&file)?)
}

/// Reads fitted (or initial) parameters without constraint metadata.
pub fn read_params(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)?;
    let file: ParamsFile = serde_json::from_slice(&bytes)?;
    file.to_api()
}

pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    atomic_write(path, &to_pretty_json(&ParamsFile::from_api(params))?)
}

// --- fit report JSON ---

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RestartFile {
    restart: usize,
    objective: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitReportFile {
    alpha: f64,
    objective: f64,
    converged: bool,
    best_restart: usize,
    restarts: Vec<RestartFile>,
}

/// Writes per-restart diagnostics of one fit. The parameters themselves go
/// through `write_params`.
pub fn write_fit_report(path: &Path, alpha: f64, fit: &FitResult) -> Result<()> {
    let file = FitReportFile {
        alpha,
        objective: fit.objective,
        converged: fit.converged,
        best_restart: fit.best_restart,
        restarts: fit
            .restarts
            .iter()
            .map(|r| RestartFile {
                restart: r.restart,
                objective: r.objective,
                iterations: r.iterations,
                converged: r.converged,
            })
            .collect(),
    };
    atomic_write(path, &to_pretty_json(&file)?)
}

// --- decode and metrics CSVs ---

/// Per-index state posteriors, one column per state (1-based names).
pub fn write_posteriors(path: &Path, decodes: &[(String, &Decoding)]) -> Result<()> {
    let n = decodes
        .first()
        .map(|(_, d)| d.posteriors.ncols())
        .ok_or_else(|| Error::Dataset("no decodes to write".into()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((1..=n).map(|s| format!("state_{s}")));
    w.write_record(&header)?;
    for (id, decoding) in decodes {
        for t in 0..decoding.posteriors.nrows() {
            let mut record = vec![id.clone(), t.to_string()];
            for s in 0..n {
                record.push(fmt_float(decoding.posteriors[(t, s)]));
            }
            w.write_record(&record)?;
        }
    }
    atomic_write(path, &finish_csv(w)?)
}

/// Most probable state paths, states written 1-based.
pub fn write_viterbi(path: &Path, decodes: &[(String, &Decoding)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series_id", "t", "state"])?;
    for (id, decoding) in decodes {
        for (t, &s) in decoding.viterbi.iter().enumerate() {
            w.write_record([id.as_str(), &t.to_string(), &(s + 1).to_string()])?;
        }
    }
    atomic_write(path, &finish_csv(w)?)
}

/// Long-form metrics: one row per (alpha, state, metric). Undefined metrics
/// leave the value empty.
pub fn write_metrics(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "auc_mode", "state", "metric", "value"])?;
    for report in reports {
        let alpha = fmt_float(report.alpha);
        let mode = report.auc_mode.to_string();
        for s in &report.states {
            let state = (s.state + 1).to_string();
            let rows: [(&str, Option<String>); 4] = [
                ("support", Some(s.support.to_string())),
                ("sensitivity", s.sensitivity.map(fmt_float)),
                ("specificity", s.specificity.map(fmt_float)),
                ("auc", s.auc.map(fmt_float)),
            ];
            for (metric, value) in rows {
                w.write_record([
                    alpha.as_str(),
                    mode.as_str(),
                    state.as_str(),
                    metric,
                    value.as_deref().unwrap_or(""),
                ])?;
            }
        }
    }
    atomic_write(path, &finish_csv(w)?)
}

/// Per-series terminal event probabilities and their thresholded calls.
pub fn write_event_scores(path: &Path, rows: &[(String, f64, bool)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series_id", "probability", "positive"])?;
    for (id, p, positive) in rows {
        w.write_record([id.as_str(), &fmt_float(*p), if *positive { "true" } else { "false" }])?;
    }
    atomic_write(path, &finish_csv(w)?)
}

/// True state paths of simulated series, states written 1-based.
pub fn write_truth(path: &Path, paths: &[(String, Vec<usize>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series_id", "t", "state"])?;
    for (id, path_states) in paths {
        for (t, &s) in path_states.iter().enumerate() {
            w.write_record([id.as_str(), &t.to_string(), &(s + 1).to_string()])?;
        }
    }
    atomic_write(path, &finish_csv(w)?)
}

// --- baseline reports ---

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThresholdsFile {
    normalized_jerk_max: f64,
    roll_at_jerk_peak: f64,
    heading_circular_variance: f64,
}

pub fn write_baseline_thresholds(path: &Path, thresholds: &BaselineThresholds) -> Result<()> {
    let file = ThresholdsFile {
        normalized_jerk_max: thresholds.normalized_jerk_max,
        roll_at_jerk_peak: thresholds.roll_at_jerk_peak,
        heading_circular_variance: thresholds.heading_circular_variance,
    };
    atomic_write(path, &to_pretty_json(&file)?)
}

/// Per-dive baseline statistics, margin scores, and binary calls.
pub fn write_baseline_predictions(
    path: &Path,
    stats: &[BaselineStats],
    thresholds: &BaselineThresholds,
    predictions: &[bool],
) -> Result<()> {
    if stats.len() != predictions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} dives but {} predictions",
            stats.len(),
            predictions.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dive_index",
        "normalized_jerk_max",
        "roll_at_jerk_peak",
        "heading_circular_variance",
        "margin",
        "positive",
    ])?;
    for (s, &positive) in stats.iter().zip(predictions) {
        w.write_record([
            s.dive_index.to_string().as_str(),
            &fmt_float(s.normalized_jerk_max),
            &fmt_float(s.roll_at_jerk_peak),
            &fmt_float(s.heading_circular_variance),
            &fmt_float(thresholds.margin(s)),
            if positive { "true" } else { "false" },
        ])?;
    }
    atomic_write(path, &finish_csv(w)?)
}

/// Segmented dive table; labels written 1-based, empty when absent.
pub fn write_dives(path: &Path, dives: &[crate::featurize::DiveRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "trace_id",
        "dive_index",
        "start",
        "end",
        "max_depth_m",
        "duration_s",
        "label",
    ])?;
    for d in dives {
        w.write_record([
            d.trace_id.as_str(),
            &d.dive_index.to_string(),
            &d.start.to_string(),
            &d.end.to_string(),
            &fmt_float(d.max_depth_m),
            &fmt_float(d.duration_s),
            &d.label.map(|z| (z + 1).to_string()).unwrap_or_default(),
        ])?;
    }
    atomic_write(path, &finish_csv(w)?)
}

/// Per-window summary table across dives; labels written 1-based.
pub fn write_windows(path: &Path, windows: &[crate::featurize::WindowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dive_index",
        "window_index",
        "start",
        "depth_change_m",
        "heading_tv_rad",
        "jerk_norm",
        "mean_depth_m",
        "label",
    ])?;
    for r in windows {
        w.write_record([
            r.dive_index.to_string().as_str(),
            &r.window_index.to_string(),
            &r.start.to_string(),
            &fmt_float(r.depth_change_m),
            &fmt_float(r.heading_tv_rad),
            &fmt_float(r.jerk),
            &fmt_float(r.mean_depth_m),
            &r.label.map(|z| (z + 1).to_string()).unwrap_or_default(),
        ])?;
    }
    atomic_write(path, &finish_csv(w)?)
}

// --- raw traces and event lists ---

/// Reads a raw trace CSV with columns `time_s,depth_m` and optionally
/// `heading_rad`, `ax,ay,az` (all three or none), and `roll_rad`, in any
/// column order. The sampling rate comes from the time spacing, which must
/// be uniform.
pub fn read_trace(path: &Path, id: impl Into<String>) -> Result<SensorTrace> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|c| c == name);
    let time_col =
        col("time_s").ok_or_else(|| Error::Dataset("trace needs a time_s column".into()))?;
    let depth_col = col("depth_m").ok_or_else(|| Error::MissingChannel("depth".into()))?;
    let heading_col = col("heading_rad");
    let accel_cols = match (col("ax"), col("ay"), col("az")) {
        (Some(x), Some(y), Some(z)) => Some((x, y, z)),
        (None, None, None) => None,
        _ => {
            return Err(Error::Dataset(
                "acceleration needs all of ax, ay, az or none".into(),
            ))
        }
    };
    let roll_col = col("roll_rad");
    let mut times = Vec::new();
    let mut depth = Vec::new();
    let mut heading = heading_col.map(|_| Vec::new());
    let mut accel = accel_cols.map(|_| Vec::new());
    let mut roll = roll_col.map(|_| Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let get = |c: usize, what: &str| -> Result<f64> {
            record
                .get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("line {}: bad {what} value", line + 2)))
        };
        times.push(get(time_col, "time_s")?);
        depth.push(get(depth_col, "depth_m")?);
        if let (Some(h), Some(c)) = (&mut heading, heading_col) {
            h.push(get(c, "heading_rad")?);
        }
        if let (Some(a), Some((x, y, z))) = (&mut accel, accel_cols) {
            a.push([get(x, "ax")?, get(y, "ay")?, get(z, "az")?]);
        }
        if let (Some(r), Some(c)) = (&mut roll, roll_col) {
            r.push(get(c, "roll_rad")?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Dataset("trace needs at least two samples to infer the rate".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Dataset(format!("time must increase; first step is {dt}")));
    }
    for (i, pair) in times.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - dt).abs() > 1e-6 {
            return Err(Error::Dataset(format!(
                "non-uniform sampling at row {}: step {} vs {dt}",
                i + 1,
                pair[1] - pair[0]
            )));
        }
    }
    SensorTrace::new(id, 1.0 / dt, depth, heading, accel, roll)
}

/// Writes a trace back out in the same schema `read_trace` accepts.
pub fn write_trace(path: &Path, trace: &SensorTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time_s", "depth_m"];
    if trace.heading.is_some() {
        header.push("heading_rad");
    }
    if trace.accel.is_some() {
        header.extend(["ax", "ay", "az"]);
    }
    if trace.roll.is_some() {
        header.push("roll_rad");
    }
    w.write_record(&header)?;
    for i in 0..trace.len() {
        let mut record = vec![fmt_float(i as f64 / trace.sample_rate_hz)];
        record.push(fmt_float(trace.depth[i]));
        if let Some(h) = &trace.heading {
            record.push(fmt_float(h[i]));
        }
        if let Some(a) = &trace.accel {
            record.extend(a[i].iter().map(|&v| fmt_float(v)));
        }
        if let Some(r) = &trace.roll {
            record.push(fmt_float(r[i]));
        }
        w.write_record(&record)?;
    }
    atomic_write(path, &finish_csv(w)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DiveEventsFile {
    dive_index: usize,
    #[serde(default)]
    crunch_times_s: Vec<f64>,
    #[serde(default)]
    video_covered: bool,
}

/// Reads crunch/video evidence keyed by 0-based dive index.
pub fn read_events(path: &Path) -> Result<BTreeMap<usize, DiveEvents>> {
    let bytes = std::fs::read(path)?;
    let entries: Vec<DiveEventsFile> = serde_json::from_slice(&bytes)?;
    let mut out = BTreeMap::new();
    for e in entries {
        if out
            .insert(
                e.dive_index,
                DiveEvents { crunch_times_s: e.crunch_times_s, video_covered: e.video_covered },
            )
            .is_some()
        {
            return Err(Error::Config(format!("dive {} listed twice", e.dive_index)));
        }
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &BTreeMap<usize, DiveEvents>) -> Result<()> {
    let entries: Vec<DiveEventsFile> = events
        .iter()
        .map(|(&dive_index, e)| DiveEventsFile {
            dive_index,
            crunch_times_s: e.crunch_times_s.clone(),
            video_covered: e.video_covered,
        })
        .collect();
    atomic_write(path, &to_pretty_json(&entries)?)
}

// --- simulation scenarios ---

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesPlanFile {
    id: String,
    len: usize,
    #[serde(default)]
    label_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    model: ModelConfigFile,
    series: Vec<SeriesPlanFile>,
}

/// Reads a custom simulation scenario: a model config plus per-series
/// lengths and 0-based label positions.
pub fn read_scenario(path: &Path) -> Result<(ModelConfig, Vec<SeriesPlan>)> {
    let bytes = std::fs::read(path)?;
    let file: ScenarioFile = serde_json::from_slice(&bytes)?;
    let spec =
        ModelSpec { params: file.model.params.to_api()?, constraints: file.model.constraints.to_api()? };
    spec.validate()?;
    validate_alpha(file.model.default_alpha)?;
    let plans = file
        .series
        .iter()
        .map(|p| {
            if p.len == 0 {
                return Err(Error::Config(format!("series {} has length 0", p.id)));
            }
            if let Some(&bad) = p.label_indices.iter().find(|&&t| t >= p.len) {
                return Err(Error::Config(format!(
                    "series {}: label index {bad} outside 0..{}",
                    p.id, p.len
                )));
            }
            Ok(SeriesPlan {
                id: p.id.clone(),
                len: p.len,
                label_indices: p.label_indices.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((ModelConfig { spec, default_alpha: file.model.default_alpha }, plans))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::decode;
    use crate::markov::weighted_emission_log_matrix;
    use crate::simulate::{cs1_model_spec, cs2_model_spec};
    use ndarray::array;
    use tempfile::TempDir;

    #[test]
    fn floats_round_trip_exactly() {
        let cases = [
            0.0,
            -0.0,
            0.1,
            1.0 / 3.0,
            -2.5e17,
            1e-300,
            f64::MIN_POSITIVE,
            std::f64::consts::PI,
            49.999999999999993,
        ];
        for &x in &cases {
            let back: f64 = fmt_float(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} reprinted as {}", fmt_float(x));
        }
        assert!(fmt_float(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    fn sample_dataset() -> Vec<LabeledSeries> {
        let a = LabeledSeries::new(
            "s1",
            vec!["x".into(), "y".into()],
            array![[0.1, 2.0], [f64::NAN, -3.5], [7.0, 0.25]],
            vec![Some(0), None, Some(2)],
        )
        .unwrap();
        let b = LabeledSeries::new(
            "s2",
            vec!["x".into(), "y".into()],
            array![[1e-12, 4.0], [5.0, 1.0 / 3.0]],
            vec![None, Some(1)],
        )
        .unwrap();
        vec![a, b]
    }

    fn datasets_bitwise_equal(a: &[LabeledSeries], b: &[LabeledSeries]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.id(), y.id());
            assert_eq!(x.feature_names(), y.feature_names());
            assert_eq!(x.labels(), y.labels());
            assert_eq!(x.values().dim(), y.values().dim());
            for (u, v) in x.values().iter().zip(y.values().iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn dataset_round_trips_with_nan_and_labels() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("data.csv");
        let dataset = sample_dataset();
        write_dataset(&path, &dataset).unwrap();
        let back = read_dataset(&path).unwrap();
        datasets_bitwise_equal(&dataset, &back);
        // Labels are 1-based on disk.
        let text = std::fs::read_to_string(&path).unwrap();
        let first_row = text.lines().nth(1).unwrap();
        assert!(first_row.ends_with(",1"), "{first_row}");
    }

    #[test]
    fn dataset_rejects_bad_rows() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.csv");
        let write = |text: &str| std::fs::write(&path, text).unwrap();
        write("series_id,t,x,label\na,0,1.0,1\na,0,2.0,\n");
        assert!(matches!(read_dataset(&path), Err(Error::Dataset(m)) if m.contains("strictly increasing")));
        write("series_id,t,x,label\na,0,1.0,0\n");
        assert!(matches!(read_dataset(&path), Err(Error::Dataset(m)) if m.contains("1-based")));
        write("id,t,x,label\na,0,1.0,\n");
        assert!(read_dataset(&path).is_err());
        write("series_id,t,x,label\na,zero,1.0,\n");
        assert!(matches!(read_dataset(&path), Err(Error::Dataset(m)) if m.contains("bad t")));
    }

    #[test]
    fn model_configs_round_trip_for_both_presets() {
        let dir = TempDir::new().unwrap();
        for (name, spec, alpha) in
            [("cs1", cs1_model_spec(), 0.049), ("cs2", cs2_model_spec(), 1.0)]
        {
            let path = dir.path().join(format!("{name}.json"));
            let config = ModelConfig { spec, default_alpha: alpha };
            write_model_config(&path, &config).unwrap();
            let back = read_model_config(&path).unwrap();
            assert_eq!(config, back, "{name} config changed across write/read");
        }
    }

    #[test]
    fn config_files_use_one_based_state_indices() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("cs2.json");
        let config = ModelConfig { spec: cs2_model_spec(), default_alpha: 1.0 };
        write_model_config(&path, &config).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        let fixed = json["constraints"]["fixed"].as_array().unwrap();
        let api_min =
            config.spec.constraints.fixed.iter().map(|f| f.state).min().unwrap();
        let file_min = fixed
            .iter()
            .map(|f| f["state"].as_u64().unwrap() as usize)
            .min()
            .unwrap();
        assert_eq!(file_min, api_min + 1);
        // A 0 state index is rejected with a clear message.
        let mut broken: serde_json::Value = json.clone();
        broken["constraints"]["fixed"][0]["state"] = 0.into();
        std::fs::write(&path, serde_json::to_vec(&broken).unwrap()).unwrap();
        assert!(matches!(read_model_config(&path), Err(Error::Config(m)) if m.contains("1-based")));
    }

    #[test]
    fn params_round_trip_and_keep_the_transition_mask() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("params.json");
        let params = cs2_model_spec().params;
        write_params(&path, &params).unwrap();
        let back = read_params(&path).unwrap();
        assert_eq!(params, back);
        assert_eq!(params.gamma.mask(), back.gamma.mask());
    }

    fn tiny_decode() -> Decoding {
        let params = cs1_model_spec().params;
        let series = LabeledSeries::new(
            "d",
            params.emissions.feature_names(),
            array![[120.0, 210.0], [80.0, 150.0], [30.0, 60.0]],
            vec![None, None, None],
        )
        .unwrap();
        let logb = weighted_emission_log_matrix(
            &series,
            &params.emissions,
            &params.label_model,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        decode(&params.delta, &params.gamma, &logb).unwrap()
    }

    #[test]
    fn report_writers_are_deterministic_and_reparse() {
        let dir = TempDir::new().unwrap();
        let decoding = tiny_decode();
        let decodes = vec![("d".to_string(), &decoding)];
        let post_path = dir.path().join("posteriors.csv");
        write_posteriors(&post_path, &decodes).unwrap();
        let bytes1 = std::fs::read(&post_path).unwrap();
        write_posteriors(&post_path, &decodes).unwrap();
        assert_eq!(bytes1, std::fs::read(&post_path).unwrap());
        // Posterior values survive the round trip bit for bit.
        let mut reader = csv::Reader::from_path(&post_path).unwrap();
        for (t, record) in reader.records().enumerate() {
            let record = record.unwrap();
            for s in 0..decoding.posteriors.ncols() {
                let v: f64 = record[2 + s].parse().unwrap();
                assert_eq!(v.to_bits(), decoding.posteriors[(t, s)].to_bits());
            }
        }
        let vit_path = dir.path().join("viterbi.csv");
        write_viterbi(&vit_path, &decodes).unwrap();
        let text = std::fs::read_to_string(&vit_path).unwrap();
        // States on disk are 1-based.
        let first: usize =
            text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(first, decoding.viterbi[0] + 1);
    }

    #[test]
    fn metrics_csv_writes_one_row_per_state_metric() {
        use crate::evaluate::{AucMode, MetricsReport, StateMetrics};
        let report = MetricsReport {
            alpha: 0.1,
            auc_mode: AucMode::Pooled,
            n_units: 4,
            n_labelled: 10,
            states: vec![
                StateMetrics {
                    state: 0,
                    support: 6,
                    sensitivity: Some(0.5),
                    specificity: Some(0.75),
                    auc: Some(0.9),
                },
                StateMetrics { state: 1, support: 0, sensitivity: None, specificity: Some(1.0), auc: None },
            ],
        };
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics(&path, &[report]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // Header plus 2 states x 4 metrics.
        assert_eq!(lines.len(), 1 + 8);
        assert!(lines[1].starts_with(&format!("{},pooled,1,support,6", fmt_float(0.1))));
        // Undefined sensitivity leaves the value column empty.
        let sens_row = lines.iter().find(|l| l.contains(",2,sensitivity,")).unwrap();
        assert!(sens_row.ends_with("sensitivity,"), "{sens_row}");
    }

    #[test]
    fn traces_round_trip_with_optional_channels() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("trace.csv");
        let n = 11;
        let trace = SensorTrace::new(
            "t0",
            50.0,
            (0..n).map(|i| i as f64 * 0.3).collect(),
            Some((0..n).map(|i| (i as f64 * 0.1).sin()).collect()),
            Some((0..n).map(|i| [i as f64, 0.5, -1.0]).collect()),
            None,
        )
        .unwrap();
        write_trace(&path, &trace).unwrap();
        let back = read_trace(&path, "t0").unwrap();
        assert_eq!(back.sample_rate_hz.to_bits(), trace.sample_rate_hz.to_bits());
        assert_eq!(back.depth, trace.depth);
        assert_eq!(back.heading, trace.heading);
        assert_eq!(back.accel, trace.accel);
        assert!(back.roll.is_none());
    }

    #[test]
    fn trace_reader_enforces_schema() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("trace.csv");
        std::fs::write(&path, "time_s,depth_m,ax,ay\n0.0,1.0,0.1,0.2\n0.02,1.0,0.1,0.2\n")
            .unwrap();
        assert!(matches!(read_trace(&path, "x"), Err(Error::Dataset(m)) if m.contains("ax, ay, az")));
        std::fs::write(&path, "time_s,depth_m\n0.0,1.0\n0.02,1.0\n0.05,1.0\n").unwrap();
        assert!(matches!(read_trace(&path, "x"), Err(Error::Dataset(m)) if m.contains("non-uniform")));
        std::fs::write(&path, "time_s,heading_rad\n0.0,0.1\n").unwrap();
        assert!(matches!(read_trace(&path, "x"), Err(Error::MissingChannel(_))));
    }

    #[test]
    fn events_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("events.json");
        let mut events = BTreeMap::new();
        events.insert(0, DiveEvents { crunch_times_s: vec![43.0, 55.5], video_covered: false });
        events.insert(2, DiveEvents { crunch_times_s: vec![], video_covered: true });
        write_events(&path, &events).unwrap();
        let back = read_events(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[&0].crunch_times_s, vec![43.0, 55.5]);
        assert!(back[&2].video_covered);
    }

    #[test]
    fn scenarios_parse_and_validate() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("scenario.json");
        let config = ModelConfig { spec: cs1_model_spec(), default_alpha: 0.5 };
        write_model_config(&path, &config).unwrap();
        let model_json = std::fs::read_to_string(&path).unwrap();
        let scenario = format!(
            "{{\"model\": {model_json}, \"series\": [{{\"id\": \"a\", \"len\": 5, \"label_indices\": [0, 4]}}]}}"
        );
        std::fs::write(&path, scenario).unwrap();
        let (parsed, plans) = read_scenario(&path).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].label_indices, vec![0, 4]);
        // Out-of-range label index is rejected.
        let scenario = format!(
            "{{\"model\": {model_json}, \"series\": [{{\"id\": \"a\", \"len\": 5, \"label_indices\": [5]}}]}}"
        );
        std::fs::write(&path, scenario).unwrap();
        assert!(matches!(read_scenario(&path), Err(Error::Config(m)) if m.contains("label index")));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("out.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        // Nested directories are created on demand.
        let nested = dir.path().join("a/b/c.txt");
        atomic_write(&nested, b"deep").unwrap();
        assert_eq!(std::fs::read(&nested).unwrap(), b"deep");
    }
}
