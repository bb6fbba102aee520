//! Raw-sensor featurization: dive segmentation, per-dive and per-window
//! summaries, event-based window labels, and a componentwise threshold
//! baseline classifier.
//!
//! Sample indices are always trace-relative; times in seconds are measured
//! from the first sample of the trace. Labels are 0-based here, matching the
//! rest of the API.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::markov::LabeledSeries;

/// Samples at or above this depth count as surfaced.
pub const DEPTH_THRESHOLD_M: f64 = 0.5;
/// Shorter submergences are not dives.
pub const MIN_DIVE_DURATION_S: f64 = 30.0;
/// Length of a summary window.
pub const WINDOW_SECONDS: f64 = 2.0;
/// Fraction of max dive depth that defines the bottom phase and the ascent.
pub const BOTTOM_FRACTION: f64 = 0.7;
/// Crunches this long before the ascent are not attributed to it.
pub const CRUNCH_IGNORE_WINDOW_S: f64 = 30.0;

/// Time-aligned sensor channels from one deployment, uniformly sampled.
#[derive(Debug, Clone)]
pub struct SensorTrace {
    pub id: String,
    pub sample_rate_hz: f64,
    /// Depth in metres, positive down.
    pub depth: Vec<f64>,
    /// Heading in radians.
    pub heading: Option<Vec<f64>>,
    /// Acceleration in m/s^2, one 3-vector per sample.
    pub accel: Option<Vec<[f64; 3]>>,
    /// Roll in radians.
    pub roll: Option<Vec<f64>>,
}

impl SensorTrace {
    pub fn new(
        id: impl Into<String>,
        sample_rate_hz: f64,
        depth: Vec<f64>,
        heading: Option<Vec<f64>>,
        accel: Option<Vec<[f64; 3]>>,
        roll: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        let n = depth.len();
        let check = |name: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(Error::ShapeMismatch(format!(
                    "channel {name} has {len} samples but depth has {n}"
                )));
            }
            Ok(())
        };
        if let Some(h) = &heading {
            check("heading", h.len())?;
        }
        if let Some(a) = &accel {
            check("accel", a.len())?;
        }
        if let Some(r) = &roll {
            check("roll", r.len())?;
        }
        Ok(SensorTrace { id: id.into(), sample_rate_hz, depth, heading, accel, roll })
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    fn heading(&self) -> Result<&[f64]> {
        self.heading.as_deref().ok_or_else(|| Error::MissingChannel("heading".into()))
    }

    fn accel(&self) -> Result<&[[f64; 3]]> {
        self.accel.as_deref().ok_or_else(|| Error::MissingChannel("accel".into()))
    }

    fn roll(&self) -> Result<&[f64]> {
        self.roll.as_deref().ok_or_else(|| Error::MissingChannel("roll".into()))
    }
}

/// One segmented dive. `start..end` is the sample range (end exclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct DiveRecord {
    pub trace_id: String,
    pub dive_index: usize,
    pub start: usize,
    pub end: usize,
    pub max_depth_m: f64,
    pub duration_s: f64,
    /// Behaviour label, 0-based; None when unannotated.
    pub label: Option<usize>,
}

/// One two-second summary window of a dive.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub dive_index: usize,
    /// 0-based position within the dive.
    pub window_index: usize,
    /// First sample of the window, trace-relative.
    pub start: usize,
    /// Last depth reading minus the first.
    pub depth_change_m: f64,
    /// Sum of absolute circular heading increments.
    pub heading_tv_rad: f64,
    /// Max |acceleration difference| between successive samples; raw out of
    /// `window_features`, normalized after `normalize_jerk`.
    pub jerk: f64,
    /// Mean depth over the window; drives the bottom-phase mask.
    pub mean_depth_m: f64,
    /// Window label, 0-based; None when unlabelled.
    pub label: Option<usize>,
}

/// Maximal runs deeper than `depth_threshold_m` lasting at least
/// `min_duration_s`, in start order. Duration counts samples over the rate.
pub fn segment_dives(
    trace: &SensorTrace,
    depth_threshold_m: f64,
    min_duration_s: f64,
) -> Vec<DiveRecord> {
    let rate = trace.sample_rate_hz;
    let mut dives = Vec::new();
    let mut start = None;
    for i in 0..=trace.len() {
        let submerged = i < trace.len() && trace.depth[i] > depth_threshold_m;
        match (start, submerged) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                start = None;
                let duration_s = (i - s) as f64 / rate;
                if duration_s >= min_duration_s {
                    let max_depth_m =
                        trace.depth[s..i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    dives.push(DiveRecord {
                        trace_id: trace.id.clone(),
                        dive_index: dives.len(),
                        start: s,
                        end: i,
                        max_depth_m,
                        duration_s,
                        label: None,
                    });
                }
            }
            _ => {}
        }
    }
    dives
}

/// Total variation of a heading sequence: the sum of absolute successive
/// differences, each wrapped to (-pi, pi].
pub fn heading_total_variation(heading: &[f64]) -> f64 {
    heading.windows(2).map(|w| circular_difference(w[0], w[1]).abs()).sum()
}

/// Difference `b - a` wrapped into (-pi, pi].
fn circular_difference(a: f64, b: f64) -> f64 {
    let mut d = (b - a) % TAU;
    if d <= -PI {
        d += TAU;
    } else if d > PI {
        d -= TAU;
    }
    d
}

/// Largest norm of the acceleration difference between successive samples.
/// No division by the time step; the sampling interval is constant.
pub fn jerk_peak(accel: &[[f64; 3]]) -> f64 {
    accel
        .windows(2)
        .map(|w| {
            let dx = w[1][0] - w[0][0];
            let dy = w[1][1] - w[0][1];
            let dz = w[1][2] - w[0][2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Circular variance of a heading sequence: one minus the mean resultant
/// length, in [0, 1]. Empty input is treated as maximally dispersed.
pub fn circular_variance(heading: &[f64]) -> f64 {
    if heading.is_empty() {
        return 1.0;
    }
    let n = heading.len() as f64;
    let c: f64 = heading.iter().map(|h| h.cos()).sum::<f64>() / n;
    let s: f64 = heading.iter().map(|h| h.sin()).sum::<f64>() / n;
    1.0 - c.hypot(s)
}

/// Samples per window; the window must hold a whole number of samples.
fn samples_per_window(rate_hz: f64, window_s: f64) -> Result<usize> {
    let exact = rate_hz * window_s;
    let rounded = exact.round();
    if !(rounded >= 1.0) || (exact - rounded).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "a {window_s} s window at {rate_hz} Hz does not hold a whole number of samples"
        )));
    }
    Ok(rounded as usize)
}

/// Summary statistics per window of one dive, jerk still unnormalized.
/// Windows tile the dive from its first sample; a trailing partial window is
/// dropped.
pub fn window_features(
    trace: &SensorTrace,
    dive: &DiveRecord,
    window_s: f64,
) -> Result<Vec<WindowRecord>> {
    let heading = trace.heading()?;
    let accel = trace.accel()?;
    let spw = samples_per_window(trace.sample_rate_hz, window_s)?;
    let n_windows = (dive.end - dive.start) / spw;
    if n_windows == 0 {
        return Err(Error::Dataset(format!(
            "dive {} of trace {} is shorter than one {window_s} s window",
            dive.dive_index, dive.trace_id
        )));
    }
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let a = dive.start + w * spw;
        let b = a + spw;
        let depth = &trace.depth[a..b];
        out.push(WindowRecord {
            dive_index: dive.dive_index,
            window_index: w,
            start: a,
            depth_change_m: depth[spw - 1] - depth[0],
            heading_tv_rad: heading_total_variation(&heading[a..b]),
            jerk: jerk_peak(&accel[a..b]),
            mean_depth_m: depth.iter().sum::<f64>() / spw as f64,
            label: None,
        });
    }
    Ok(out)
}

/// Bottom-phase mask: windows whose mean depth reaches `fraction` of the
/// dive's maximum depth. Swap in another mask to change the bottom-phase
/// definition everywhere downstream.
pub fn bottom_windows_by_depth(
    windows: &[WindowRecord],
    max_depth_m: f64,
    fraction: f64,
) -> Vec<bool> {
    windows.iter().map(|w| w.mean_depth_m >= fraction * max_depth_m).collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Divides every window's jerk by the median jerk of the masked (bottom
/// phase) windows. Errors when the mask selects nothing or the median is
/// zero.
pub fn normalize_jerk(windows: &[WindowRecord], bottom_mask: &[bool]) -> Result<Vec<f64>> {
    if windows.len() != bottom_mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} windows but {} mask entries",
            windows.len(),
            bottom_mask.len()
        )));
    }
    let mut bottom: Vec<f64> = windows
        .iter()
        .zip(bottom_mask)
        .filter(|(_, &m)| m)
        .map(|(w, _)| w.jerk)
        .collect();
    if bottom.is_empty() {
        return Err(Error::DegenerateDive("no bottom-phase windows to normalize by".into()));
    }
    bottom.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = median(&bottom);
    if med <= 0.0 {
        return Err(Error::DegenerateDive(format!(
            "median bottom-phase jerk {med} cannot normalize"
        )));
    }
    Ok(windows.iter().map(|w| w.jerk / med).collect())
}

/// First sample of the ascent: the moment after the animal was last at a
/// depth of at least `fraction` of the maximum. `depth` is the dive's slice;
/// the returned index is relative to it and equals `depth.len()` when the
/// dive ends still deep.
pub fn ascent_start_index(depth: &[f64], fraction: f64) -> Result<usize> {
    if depth.is_empty() {
        return Err(Error::Dataset("empty dive has no ascent".into()));
    }
    let max = depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last_deep = depth
        .iter()
        .rposition(|&d| d >= fraction * max)
        .expect("the max-depth sample always qualifies");
    Ok(last_deep + 1)
}

/// Acoustic and video evidence for one dive.
#[derive(Debug, Clone, Default)]
pub struct DiveEvents {
    /// Crunch (prey-handling sound) times in seconds from trace start.
    pub crunch_times_s: Vec<f64>,
    /// Whether video covered the dive well enough to rule out a capture.
    pub video_covered: bool,
}

/// Event-based window labels for one dive, 0-based: first window is always
/// descent (0); the first crunch not more than `CRUNCH_IGNORE_WINDOW_S`
/// before the ascent labels its own window capture (3) when before the
/// ascent, or the final window ascent-with-fish (5) when during it; with
/// video coverage and no attributed crunch the final window is
/// ascent-without-fish (4). Crunches outside the dive's windows are ignored
/// with a warning.
///
/// `ascent_start` is a trace-relative sample index inside `start..=end` of
/// the dive.
pub fn label_windows_from_events(
    trace: &SensorTrace,
    dive: &DiveRecord,
    windows: &[WindowRecord],
    ascent_start: usize,
    events: &DiveEvents,
) -> Result<Vec<Option<usize>>> {
    if ascent_start < dive.start || ascent_start > dive.end {
        return Err(Error::InvalidParameter(format!(
            "ascent start {ascent_start} outside dive samples {}..{}",
            dive.start, dive.end
        )));
    }
    let rate = trace.sample_rate_hz;
    let spw = (windows.first())
        .map(|w| {
            if windows.len() > 1 {
                windows[1].start - w.start
            } else {
                dive.end - w.start
            }
        })
        .unwrap_or(0);
    let mut labels: Vec<Option<usize>> = vec![None; windows.len()];
    if labels.is_empty() {
        return Ok(labels);
    }
    labels[0] = Some(0);
    let last = windows.len() - 1;
    let ascent_time_s = ascent_start as f64 / rate;
    let mut crunches = events.crunch_times_s.clone();
    crunches.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut terminal: Option<usize> = None;
    for time_s in crunches {
        let sample = (time_s * rate).round() as isize;
        if sample < dive.start as isize || sample as usize >= dive.end {
            log::warn!(
                "crunch at {time_s} s falls outside dive {} of trace {}; ignored",
                dive.dive_index,
                dive.trace_id
            );
            continue;
        }
        let sample = sample as usize;
        if ascent_time_s - time_s > CRUNCH_IGNORE_WINDOW_S {
            continue;
        }
        let window = (sample - dive.start) / spw.max(1);
        if window > last {
            // Inside the dropped trailing partial window.
            log::warn!(
                "crunch at {time_s} s falls after the last full window of dive {}; ignored",
                dive.dive_index
            );
            continue;
        }
        if sample < ascent_start {
            if window == 0 {
                log::warn!(
                    "crunch in the descent window of dive {}; keeping the descent label",
                    dive.dive_index
                );
                continue;
            }
            labels[window] = Some(3);
        } else {
            terminal = Some(5);
        }
        break;
    }
    if let Some(state) = terminal {
        if last > 0 {
            labels[last] = Some(state);
        }
    } else if events.video_covered && !labels.iter().any(|l| *l == Some(3)) && last > 0 {
        labels[last] = Some(4);
    }
    Ok(labels)
}

/// Dive-level feature pair: maximum depth and duration. Both are strictly
/// positive by segmentation, as the downstream log-normal support requires.
pub fn dive_summary(dive: &DiveRecord) -> Result<(f64, f64)> {
    if !(dive.max_depth_m > 0.0) || !(dive.duration_s > 0.0) {
        return Err(Error::Dataset(format!(
            "dive {} needs positive max depth and duration, got ({}, {})",
            dive.dive_index, dive.max_depth_m, dive.duration_s
        )));
    }
    Ok((dive.max_depth_m, dive.duration_s))
}

/// Per-dive statistics feeding the threshold baseline, computed over the
/// bottom-phase samples of the dive.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStats {
    pub dive_index: usize,
    /// Max jerk over the bottom phase divided by the median jerk there.
    pub normalized_jerk_max: f64,
    /// |roll| at the sample where the bottom-phase jerk peaks.
    pub roll_at_jerk_peak: f64,
    /// Circular variance of heading over the bottom phase.
    pub heading_circular_variance: f64,
}

/// Componentwise minima over confirmed capture dives.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineThresholds {
    pub normalized_jerk_max: f64,
    pub roll_at_jerk_peak: f64,
    pub heading_circular_variance: f64,
}

impl BaselineThresholds {
    /// Smallest margin by which the statistics clear the thresholds.
    /// Non-negative exactly when the dive classifies positive.
    pub fn margin(&self, stats: &BaselineStats) -> f64 {
        (stats.normalized_jerk_max - self.normalized_jerk_max)
            .min(stats.roll_at_jerk_peak - self.roll_at_jerk_peak)
            .min(stats.heading_circular_variance - self.heading_circular_variance)
    }

    /// Positive iff every statistic reaches its threshold.
    pub fn predict(&self, stats: &BaselineStats) -> bool {
        self.margin(stats) >= 0.0
    }
}

/// Bottom-phase sample statistics of one dive for the baseline. Requires
/// heading, acceleration, and roll channels.
pub fn baseline_statistics(
    trace: &SensorTrace,
    dive: &DiveRecord,
    fraction: f64,
) -> Result<BaselineStats> {
    let heading = trace.heading()?;
    let accel = trace.accel()?;
    let roll = trace.roll()?;
    let depth = &trace.depth[dive.start..dive.end];
    let threshold = fraction * dive.max_depth_m;
    // Jerk at sample i compares samples i-1 and i; it belongs to the bottom
    // phase when sample i does.
    let mut jerks: Vec<(usize, f64)> = Vec::new();
    let mut bottom_headings = Vec::new();
    for (off, &d) in depth.iter().enumerate() {
        let i = dive.start + off;
        if d < threshold {
            continue;
        }
        bottom_headings.push(heading[i]);
        if off == 0 {
            continue;
        }
        let dx = accel[i][0] - accel[i - 1][0];
        let dy = accel[i][1] - accel[i - 1][1];
        let dz = accel[i][2] - accel[i - 1][2];
        jerks.push((i, (dx * dx + dy * dy + dz * dz).sqrt()));
    }
    if jerks.is_empty() {
        return Err(Error::DegenerateDive(format!(
            "dive {} has no bottom-phase jerk samples",
            dive.dive_index
        )));
    }
    let mut sorted: Vec<f64> = jerks.iter().map(|&(_, j)| j).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = median(&sorted);
    if med <= 0.0 {
        return Err(Error::DegenerateDive(format!(
            "dive {} has zero median bottom-phase jerk",
            dive.dive_index
        )));
    }
    let &(peak_at, peak) =
        jerks.iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).expect("nonempty");
    Ok(BaselineStats {
        dive_index: dive.dive_index,
        normalized_jerk_max: peak / med,
        roll_at_jerk_peak: roll[peak_at].abs(),
        heading_circular_variance: circular_variance(&bottom_headings),
    })
}

/// Calibrates thresholds as componentwise minima over the confirmed capture
/// dives and classifies every dive against them. Every confirmed dive
/// classifies positive by construction.
pub fn tennessen_baseline(
    stats: &[BaselineStats],
    confirmed_capture: &[bool],
) -> Result<(BaselineThresholds, Vec<bool>)> {
    if stats.len() != confirmed_capture.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} dives but {} capture flags",
            stats.len(),
            confirmed_capture.len()
        )));
    }
    let confirmed: Vec<&BaselineStats> = stats
        .iter()
        .zip(confirmed_capture)
        .filter(|(_, &c)| c)
        .map(|(s, _)| s)
        .collect();
    if confirmed.is_empty() {
        return Err(Error::NoCalibrationData);
    }
    let fold = |f: fn(&BaselineStats) -> f64| {
        confirmed.iter().map(|s| f(s)).fold(f64::INFINITY, f64::min)
    };
    let thresholds = BaselineThresholds {
        normalized_jerk_max: fold(|s| s.normalized_jerk_max),
        roll_at_jerk_peak: fold(|s| s.roll_at_jerk_peak),
        heading_circular_variance: fold(|s| s.heading_circular_variance),
    };
    let predictions = stats.iter().map(|s| thresholds.predict(s)).collect();
    Ok((thresholds, predictions))
}

/// Full two-second-window pipeline for one trace: segment, summarize,
/// normalize jerk by the bottom-phase median, and label from events where
/// given (keyed by dive index).
pub fn featurize_windows(
    trace: &SensorTrace,
    events: &std::collections::BTreeMap<usize, DiveEvents>,
) -> Result<Vec<(DiveRecord, Vec<WindowRecord>)>> {
    let dives = segment_dives(trace, DEPTH_THRESHOLD_M, MIN_DIVE_DURATION_S);
    let mut out = Vec::with_capacity(dives.len());
    for dive in dives {
        let mut windows = window_features(trace, &dive, WINDOW_SECONDS)?;
        let mask = bottom_windows_by_depth(&windows, dive.max_depth_m, BOTTOM_FRACTION);
        let normalized = normalize_jerk(&windows, &mask)?;
        for (w, j) in windows.iter_mut().zip(normalized) {
            w.jerk = j;
        }
        if let Some(ev) = events.get(&dive.dive_index) {
            let ascent =
                dive.start + ascent_start_index(&trace.depth[dive.start..dive.end], BOTTOM_FRACTION)?;
            let labels = label_windows_from_events(trace, &dive, &windows, ascent, ev)?;
            for (w, l) in windows.iter_mut().zip(labels) {
                w.label = l;
            }
        }
        out.push((dive, windows));
    }
    Ok(out)
}

/// Window records of one dive as a model-ready series with features
/// `depth_change_m`, `heading_tv_rad`, `jerk_norm`.
pub fn windows_to_series(id: impl Into<String>, windows: &[WindowRecord]) -> Result<LabeledSeries> {
    if windows.is_empty() {
        return Err(Error::Dataset("no windows to convert".into()));
    }
    let values = Array2::from_shape_fn((windows.len(), 3), |(t, f)| match f {
        0 => windows[t].depth_change_m,
        1 => windows[t].heading_tv_rad,
        _ => windows[t].jerk,
    });
    LabeledSeries::new(
        id,
        vec!["depth_change_m".into(), "heading_tv_rad".into(), "jerk_norm".into()],
        values,
        windows.iter().map(|w| w.label).collect(),
    )
}

/// Dive records of one trace as a model-ready series with features
/// `max_depth_m`, `duration_s`, one index per dive in start order.
pub fn dives_to_series(id: impl Into<String>, dives: &[DiveRecord]) -> Result<LabeledSeries> {
    if dives.is_empty() {
        return Err(Error::Dataset("no dives to convert".into()));
    }
    let values = Array2::from_shape_fn((dives.len(), 2), |(t, f)| {
        if f == 0 {
            dives[t].max_depth_m
        } else {
            dives[t].duration_s
        }
    });
    LabeledSeries::new(
        id,
        vec!["max_depth_m".into(), "duration_s".into()],
        values,
        dives.iter().map(|d| d.label).collect(),
    )
}
