//! Command-line driver tying the library modules into reproducible runs.
//!
//! Every command is deterministic given `--seed`: re-running with the same
//! inputs and flags produces byte-identical output files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use phmm::estimate::{fit, FitOptions};
use phmm::evaluate::{
    cross_validate, make_stratified_folds, metrics_from_cv, series_outcomes, subprofile_loo_plan,
    terminal_event_probability, AucMode, FoldPlan,
};
use phmm::featurize::{
    baseline_statistics, dives_to_series, featurize_windows, segment_dives, tennessen_baseline,
    windows_to_series, BOTTOM_FRACTION, DEPTH_THRESHOLD_M, MIN_DIVE_DURATION_S,
};
use phmm::io;
use phmm::markov::{decode, weighted_emission_log_matrix, Decoding, LabeledSeries};
use phmm::model::ModelSpec;
use phmm::simulate::{generate_preset, simulate_phmm, Preset, SimulationScenario};
use phmm::weighting::validate_alpha;

#[derive(Parser)]
#[command(
    name = "phmm",
    version,
    about = "Fit, decode, and evaluate hidden Markov models with sparse state labels"
)]
struct Cli {
    /// Seed behind every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a preset or a scenario file.
    Simulate {
        /// Shipped preset: cs1, cs2, or overlap.
        #[arg(long, conflicts_with = "scenario")]
        preset: Option<String>,

        /// Custom scenario JSON: a model config plus series plans.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },

    /// Turn a raw sensor trace into a model-ready dataset.
    Featurize {
        /// Trace CSV with time_s, depth_m, and optional sensor columns.
        #[arg(long)]
        trace: PathBuf,

        /// Pipeline: 1 = per-dive summaries, 2 = two-second windows.
        #[arg(long)]
        case: u8,

        /// Crunch/video events JSON keyed by dive index (case 2 labels).
        #[arg(long)]
        events: Option<PathBuf>,
    },

    /// Fit a model to a dataset by weighted maximum likelihood.
    Fit {
        #[arg(long)]
        dataset: PathBuf,

        #[arg(long)]
        config: PathBuf,

        /// Weight on unlabelled indices in [0, 1]; defaults to the config's
        /// value.
        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long, default_value_t = 10)]
        restarts: usize,

        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
    },

    /// Cross-validate held-out label recovery over a grid of alpha values.
    Cv {
        #[arg(long)]
        dataset: PathBuf,

        #[arg(long)]
        config: PathBuf,

        /// Comma-separated weight exponents to compare.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,

        /// Fold scheme: subprofile (split each series in half, leave one
        /// half out) or stratified (deal outcome-labelled series into folds).
        #[arg(long, default_value = "subprofile")]
        scheme: String,

        /// Fold count for the stratified scheme.
        #[arg(long, default_value_t = 4)]
        k: usize,

        /// 1-based states marking a positive outcome (stratified scheme).
        #[arg(long, value_delimiter = ',')]
        event_states: Vec<usize>,

        /// 1-based states marking a negative outcome (stratified scheme).
        #[arg(long, value_delimiter = ',')]
        control_states: Vec<usize>,

        /// AUC aggregation: pooled or fold-mean.
        #[arg(long, default_value = "pooled")]
        auc_mode: String,

        #[arg(long, default_value_t = 10)]
        restarts: usize,

        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
    },

    /// Decode a dataset with fitted parameters and score terminal events.
    Decode {
        #[arg(long)]
        dataset: PathBuf,

        /// Fitted parameter JSON from the fit command.
        #[arg(long)]
        params: PathBuf,

        /// Comma-separated 1-based goal states, or "all".
        #[arg(long, default_value = "all")]
        states: String,

        /// Probability above which a series classifies positive.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },

    /// Calibrate and run the componentwise threshold baseline on a trace.
    Baseline {
        #[arg(long)]
        trace: PathBuf,

        /// Comma-separated 0-based dive indices with confirmed captures.
        #[arg(long, value_delimiter = ',', required = true)]
        confirmed: Vec<usize>,
    },
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("could not size the thread pool")?;
    }
    std::fs::create_dir_all(&cli.output_dir)
        .with_context(|| format!("could not create {}", cli.output_dir.display()))?;
    let out = cli.output_dir.as_path();
    match cli.command {
        Command::Simulate { preset, scenario } => cmd_simulate(preset, scenario, cli.seed, out),
        Command::Featurize { trace, case, events } => cmd_featurize(&trace, case, events, out),
        Command::Fit { dataset, config, alpha, restarts, max_iter } => {
            cmd_fit(&dataset, &config, alpha, restarts, max_iter, cli.seed, out)
        }
        Command::Cv {
            dataset,
            config,
            alphas,
            scheme,
            k,
            event_states,
            control_states,
            auc_mode,
            restarts,
            max_iter,
        } => cmd_cv(CvArgs {
            dataset,
            config,
            alphas,
            scheme,
            k,
            event_states,
            control_states,
            auc_mode,
            restarts,
            max_iter,
            seed: cli.seed,
            out: out.to_path_buf(),
        }),
        Command::Decode { dataset, params, states, threshold } => {
            cmd_decode(&dataset, &params, &states, threshold, out)
        }
        Command::Baseline { trace, confirmed } => cmd_baseline(&trace, &confirmed, out),
    }
}

/// 1-based state list from a flag into 0-based indices.
fn states_to_zero_based(states: &[usize], n_states: usize) -> Result<Vec<usize>> {
    states
        .iter()
        .map(|&s| {
            if s == 0 {
                bail!("states are numbered from 1");
            }
            if s > n_states {
                bail!("state {s} out of range for a {n_states}-state model");
            }
            Ok(s - 1)
        })
        .collect()
}

fn parse_state_set(spec: &str, n_states: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..n_states).collect());
    }
    let parsed: Vec<usize> = spec
        .split(',')
        .map(|tok| tok.trim().parse::<usize>().with_context(|| format!("bad state {tok:?}")))
        .collect::<Result<_>>()?;
    states_to_zero_based(&parsed, n_states)
}

fn preset_default_alpha(preset: Preset) -> f64 {
    match preset {
        Preset::Cs1 => 0.049,
        Preset::Cs2 => 1.0,
        Preset::Overlap => 0.1,
    }
}

fn write_simulation(
    out: &Path,
    spec: &ModelSpec,
    default_alpha: f64,
    data: &[phmm::simulate::SimulatedSeries],
) -> Result<()> {
    let dataset: Vec<LabeledSeries> = data.iter().map(|s| s.series.clone()).collect();
    io::write_dataset(&out.join("dataset.csv"), &dataset)?;
    let truth: Vec<(String, Vec<usize>)> =
        data.iter().map(|s| (s.series.id().to_string(), s.path.clone())).collect();
    io::write_truth(&out.join("truth.csv"), &truth)?;
    let config = io::ModelConfig { spec: spec.clone(), default_alpha };
    io::write_model_config(&out.join("config.json"), &config)?;
    let rows: usize = dataset.iter().map(|s| s.len()).sum();
    let labels: usize = dataset.iter().map(|s| s.n_labelled()).sum();
    println!(
        "wrote {} series, {rows} rows, {labels} labels to {}",
        dataset.len(),
        out.display()
    );
    Ok(())
}

fn cmd_simulate(
    preset: Option<String>,
    scenario: Option<PathBuf>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    match (preset, scenario) {
        (Some(name), None) => {
            let preset: Preset = name.parse()?;
            let generated = generate_preset(preset, seed)?;
            write_simulation(out, &generated.spec, preset_default_alpha(preset), &generated.data)
        }
        (None, Some(path)) => {
            let (config, plans) = io::read_scenario(&path)?;
            let data = simulate_phmm(&SimulationScenario {
                params: config.spec.params.clone(),
                plans,
                seed,
            })?;
            write_simulation(out, &config.spec, config.default_alpha, &data)
        }
        _ => bail!("pass exactly one of --preset or --scenario"),
    }
}

fn cmd_featurize(trace_path: &Path, case: u8, events: Option<PathBuf>, out: &Path) -> Result<()> {
    let id = trace_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace")
        .to_string();
    let trace = io::read_trace(trace_path, id.clone())?;
    match case {
        1 => {
            let dives = segment_dives(&trace, DEPTH_THRESHOLD_M, MIN_DIVE_DURATION_S);
            if dives.is_empty() {
                bail!("no dives found in {}", trace_path.display());
            }
            io::write_dives(&out.join("dives.csv"), &dives)?;
            let series = dives_to_series(id, &dives)?;
            io::write_dataset(&out.join("dataset.csv"), &[series])?;
            println!("wrote {} dives", dives.len());
        }
        2 => {
            let events = match events {
                Some(path) => io::read_events(&path)?,
                None => Default::default(),
            };
            let featurized = featurize_windows(&trace, &events)?;
            if featurized.is_empty() {
                bail!("no dives found in {}", trace_path.display());
            }
            let dives: Vec<_> = featurized.iter().map(|(d, _)| d.clone()).collect();
            io::write_dives(&out.join("dives.csv"), &dives)?;
            let windows: Vec<_> =
                featurized.iter().flat_map(|(_, w)| w.iter().cloned()).collect();
            io::write_windows(&out.join("windows.csv"), &windows)?;
            let series: Vec<LabeledSeries> = featurized
                .iter()
                .map(|(d, w)| windows_to_series(format!("{id}-d{}", d.dive_index), w))
                .collect::<phmm::Result<_>>()?;
            io::write_dataset(&out.join("dataset.csv"), &series)?;
            println!("wrote {} dives, {} windows", dives.len(), windows.len());
        }
        other => bail!("--case must be 1 or 2, got {other}"),
    }
    Ok(())
}

fn cmd_fit(
    dataset_path: &Path,
    config_path: &Path,
    alpha: Option<f64>,
    restarts: usize,
    max_iter: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let config = io::read_model_config(config_path)?;
    let dataset = io::read_dataset(dataset_path)?;
    let alpha = alpha.unwrap_or(config.default_alpha);
    validate_alpha(alpha)?;
    let options = FitOptions { restarts, max_iter, seed, ..FitOptions::default() };
    let result = fit(&config.spec, &dataset, alpha, &options)?;
    io::write_params(&out.join("fitted_params.json"), &result.params)?;
    io::write_fit_report(&out.join("fit_report.json"), alpha, &result)?;
    println!(
        "alpha {alpha}: objective {:.6} from restart {} ({} of {} converged)",
        result.objective,
        result.best_restart,
        result.restarts.iter().filter(|r| r.converged).count(),
        restarts
    );
    if !result.converged {
        bail!("best restart did not converge; consider more iterations or restarts");
    }
    Ok(())
}

struct CvArgs {
    dataset: PathBuf,
    config: PathBuf,
    alphas: Vec<f64>,
    scheme: String,
    k: usize,
    event_states: Vec<usize>,
    control_states: Vec<usize>,
    auc_mode: String,
    restarts: usize,
    max_iter: usize,
    seed: u64,
    out: PathBuf,
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let config = io::read_model_config(&args.config)?;
    let dataset = io::read_dataset(&args.dataset)?;
    let n_states = config.spec.params.n_states();
    let auc_mode: AucMode = args.auc_mode.parse()?;
    for &alpha in &args.alphas {
        validate_alpha(alpha)?;
    }
    let (units, plan): (Vec<LabeledSeries>, FoldPlan) = match args.scheme.as_str() {
        "subprofile" => subprofile_loo_plan(&dataset, args.seed)?,
        "stratified" => {
            if args.event_states.is_empty() || args.control_states.is_empty() {
                bail!("--scheme stratified needs --event-states and --control-states");
            }
            let events = states_to_zero_based(&args.event_states, n_states)?;
            let controls = states_to_zero_based(&args.control_states, n_states)?;
            let outcome_units: Vec<(String, bool)> =
                series_outcomes(&dataset, &events, &controls)
                    .into_iter()
                    .filter_map(|(id, outcome)| outcome.map(|y| (id, y)))
                    .collect();
            let plan = make_stratified_folds(&outcome_units, args.k, args.seed)?;
            (dataset, plan)
        }
        other => bail!("unknown scheme {other}; expected subprofile or stratified"),
    };
    let options = FitOptions {
        restarts: args.restarts,
        max_iter: args.max_iter,
        seed: args.seed,
        ..FitOptions::default()
    };
    let mut reports = Vec::new();
    for (i, &alpha) in args.alphas.iter().enumerate() {
        let cv = cross_validate(&config.spec, &units, alpha, &plan, &options)
            .with_context(|| format!("cross-validation failed at alpha {alpha}"))?;
        let report = metrics_from_cv(&cv, &units, n_states, alpha, auc_mode)?;
        let decodes: Vec<(String, &Decoding)> = cv
            .per_series
            .iter()
            .map(|h| (h.series_id.clone(), &h.decoding))
            .collect();
        io::write_posteriors(&args.out.join(format!("cv_posteriors_{i}.csv")), &decodes)?;
        io::write_viterbi(&args.out.join(format!("cv_viterbi_{i}.csv")), &decodes)?;
        let aucs: Vec<String> = report
            .states
            .iter()
            .map(|s| match s.auc {
                Some(a) => format!("{}:{a:.3}", s.state + 1),
                None => format!("{}:-", s.state + 1),
            })
            .collect();
        println!(
            "alpha {alpha}: {} labelled units, AUC per state {}",
            report.n_labelled,
            aucs.join(" ")
        );
        reports.push(report);
    }
    io::write_metrics(&args.out.join("metrics.csv"), &reports)?;
    Ok(())
}

fn cmd_decode(
    dataset_path: &Path,
    params_path: &Path,
    states: &str,
    threshold: f64,
    out: &Path,
) -> Result<()> {
    if !threshold.is_finite() {
        bail!("--threshold must be finite");
    }
    let params = io::read_params(params_path)?;
    let dataset = io::read_dataset(dataset_path)?;
    let goal = parse_state_set(states, params.n_states())?;
    let mut decodes: Vec<(String, Decoding)> = Vec::with_capacity(dataset.len());
    for series in &dataset {
        let weights = vec![1.0; series.len()];
        let logb = weighted_emission_log_matrix(
            series,
            &params.emissions,
            &params.label_model,
            &weights,
        )?;
        let decoding = decode(&params.delta, &params.gamma, &logb)
            .with_context(|| format!("could not decode series {}", series.id()))?;
        decodes.push((series.id().to_string(), decoding));
    }
    let refs: Vec<(String, &Decoding)> =
        decodes.iter().map(|(id, d)| (id.clone(), d)).collect();
    io::write_posteriors(&out.join("posteriors.csv"), &refs)?;
    io::write_viterbi(&out.join("viterbi.csv"), &refs)?;
    let mut rows = Vec::with_capacity(decodes.len());
    for (id, decoding) in &decodes {
        let p = terminal_event_probability(decoding, &goal)?;
        rows.push((id.clone(), p, p > threshold));
    }
    io::write_event_scores(&out.join("event_scores.csv"), &rows)?;
    let positives = rows.iter().filter(|(_, _, y)| *y).count();
    println!(
        "{positives} of {} series classified positive at threshold {threshold}",
        rows.len()
    );
    Ok(())
}

fn cmd_baseline(trace_path: &Path, confirmed: &[usize], out: &Path) -> Result<()> {
    let id = trace_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace")
        .to_string();
    let trace = io::read_trace(trace_path, id)?;
    let dives = segment_dives(&trace, DEPTH_THRESHOLD_M, MIN_DIVE_DURATION_S);
    if dives.is_empty() {
        bail!("no dives found in {}", trace_path.display());
    }
    for &c in confirmed {
        if c >= dives.len() {
            bail!("confirmed dive {c} out of range; trace has {} dives", dives.len());
        }
    }
    let stats = dives
        .iter()
        .map(|d| baseline_statistics(&trace, d, BOTTOM_FRACTION))
        .collect::<phmm::Result<Vec<_>>>()?;
    let flags: Vec<bool> = dives.iter().map(|d| confirmed.contains(&d.dive_index)).collect();
    let (thresholds, predictions) = tennessen_baseline(&stats, &flags)?;
    io::write_baseline_thresholds(&out.join("baseline_thresholds.json"), &thresholds)?;
    io::write_baseline_predictions(
        &out.join("baseline_predictions.csv"),
        &stats,
        &thresholds,
        &predictions,
    )?;
    println!(
        "{} of {} dives classified positive",
        predictions.iter().filter(|&&p| p).count(),
        dives.len()
    );
    Ok(())
}
