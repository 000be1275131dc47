//! Command-line front end: generate reference data, fit closure models,
//! simulate and forecast with them, run diagnostics, and reproduce the
//! bundled studies end to end.
//!
//! Every run writes exactly one `manifest.json` next to its outputs with the
//! full configuration snapshot; given identical inputs and seeds all other
//! outputs are byte-identical. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure, 4 acceptance failure (`reproduce` only).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use emrkit::emr::{fit_emr, load_model, save_model, EMRModel, EmrConfig, StopReason, StoppingConfig};
use emrkit::error::Error;
use emrkit::reference_models::{
    simulate_climate, simulate_linear_toy, simulate_lv, ClimateParams, LVParams, LinearToyParams,
};
use emrkit::regression::energy_constraints;
use emrkit::simulate::{
    eta_test, forecast, init_hidden_backward, project_positive, simulate_emr, EtaConfig,
    HiddenState, ReflectionSpec, SimConfig,
};
use emrkit::studies::{
    all_pass, run_climate_study, run_climate_suite, run_gamma_chain_study, run_linear_toy_study,
    run_lv_study, ClimateStudyConfig, ClimateStudyReport, LinearToyConfig, LvStudyConfig, Scale,
    StudyCheck, CLIMATE_ACF_LAGS, LV_ACF_LAGS, PDF_BINS,
};
use emrkit::timeseries::{load_csv, AcfCurve, TimeSeries};

#[derive(Parser, Serialize)]
#[command(
    name = "emrkit",
    version,
    about = "Fit, simulate, and diagnose multilayer stochastic closure models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Generate a trajectory of one of the bundled reference systems
    SimulateReference(SimulateReferenceArgs),
    /// Fit a multilayer closure model to a CSV time series
    Fit(FitArgs),
    /// Free-run a fitted model
    SimulateModel(SimulateModelArgs),
    /// Ensemble forecast continuing a data window
    Forecast(ForecastArgs),
    /// ACF/PDF diagnostics of one series, or a paired comparison of two
    Diagnose(DiagnoseArgs),
    /// Correlation test between the fitted noise cascade and the state
    EtaTest(EtaTestArgs),
    /// Run a bundled study end to end and check its acceptance bands
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum Preset {
    /// Six-mode coupled fast/slow benchmark, two observed channels
    PaperClimate,
    /// Four competing populations, three observed channels
    PaperLv,
    /// Two coupled linear modes, one observed channel
    PaperLinear,
}

#[derive(Args, Serialize)]
struct SimulateReferenceArgs {
    /// Bundled parameter set
    #[arg(long, value_enum, conflicts_with = "param_file")]
    preset: Option<Preset>,
    /// key=value parameter file with a `system = climate|lv|linear` line
    #[arg(long)]
    param_file: Option<PathBuf>,
    /// Coupling strength (climate system)
    #[arg(long)]
    eps: Option<f64>,
    /// RNG seed for the stochastic systems
    #[arg(long)]
    seed: Option<u64>,
    /// Additional key=value overrides, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum ConstraintChoice {
    None,
    Energy,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Input CSV (header row of channel names)
    data: PathBuf,
    /// Sampling interval of the input series
    #[arg(long)]
    dt: f64,
    /// Leading rows to discard before fitting
    #[arg(long, default_value_t = 0)]
    skip: usize,
    #[arg(long, value_enum, default_value = "none")]
    constraints: ConstraintChoice,
    /// Relative ridge strength (omit for the conditioning default, 0 = exact
    /// least squares)
    #[arg(long)]
    ridge: Option<f64>,
    /// Hard cap on the number of hidden levels
    #[arg(long, default_value_t = 20)]
    max_levels: usize,
    /// Drop the quadratic terms of the main level
    #[arg(long)]
    linear_only: bool,
    /// Output directory (model.json is written here)
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateModelArgs {
    /// Fitted model file
    model: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positivity floor; every channel is reflected at this value
    #[arg(long)]
    reflect: Option<f64>,
    /// Steps discarded before recording
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Record every stride-th sample
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Start from the tail of this CSV (hidden levels reconstructed
    /// backward); defaults to the zero state
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated initial state, overrides --data and zeros
    #[arg(long)]
    x0: Option<String>,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ForecastArgs {
    /// Fitted model file
    model: PathBuf,
    /// Window CSV; the forecast continues its last row
    data: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DiagnoseArgs {
    /// Series to diagnose
    data: PathBuf,
    /// Optional second series; statistics are emitted side by side with an
    /// L1/deviation summary
    data2: Option<PathBuf>,
    /// Sampling interval of the inputs
    #[arg(long)]
    dt: f64,
    /// ACF depth in samples
    #[arg(long, default_value_t = 100)]
    acf: usize,
    /// Emit one-dimensional marginal densities per channel
    #[arg(long)]
    pdf1d: bool,
    /// Emit the joint density of two channels (0-based indices)
    #[arg(long, num_args = 2, value_names = ["I", "J"])]
    pdf2d: Option<Vec<usize>>,
    /// Histogram bins
    #[arg(long, default_value_t = PDF_BINS)]
    bins: usize,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EtaTestArgs {
    /// Fitted model file
    model: PathBuf,
    /// Observed series the model was fitted to (sets the run length and the
    /// starting state)
    data: PathBuf,
    /// Noise realizations averaged over
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 2000)]
    burn_in: usize,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum Study {
    Climate,
    Lv,
    LinearToy,
    GammaChain,
}

#[derive(Args, Serialize)]
struct ReproduceArgs {
    #[arg(value_enum)]
    study: Study,
    /// Climate coupling: a single value, or `all` for the four-value sweep
    /// with the sequence check
    #[arg(long, default_value = "all")]
    eps: String,
    /// Desk scale: 10x shorter runs, doubled statistical bands
    #[arg(long)]
    desk: bool,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tool_version: String,
    wall_clock_seconds: f64,
    started_unix_seconds: u64,
}

struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl ManifestBuilder {
    fn new(command: &str, config: &impl Serialize) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn seed(&mut self, s: u64) {
        self.seeds.push(s);
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(self, dir: &Path) -> Result<(), Error> {
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            started_unix_seconds: self.started_unix,
        };
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::config(format!("manifest serialization: {e}")))?;
        fs::write(dir.join("manifest.json"), body + "\n")?;
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Statistic writers (CSV + gnuplot)
// ---------------------------------------------------------------------------

fn write_acf_csv(path: &Path, curve: &AcfCurve, names: &[String], dt: f64) -> Result<(), Error> {
    let mut body = String::from("lag,time");
    for name in names {
        let _ = write!(body, ",{name}");
    }
    body.push('\n');
    for (row, &lag) in curve.lags.iter().enumerate() {
        let _ = write!(body, "{lag},{:?}", lag as f64 * dt);
        for c in 0..names.len() {
            let _ = write!(body, ",{:?}", curve.values[(row, c)]);
        }
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

fn write_pdf1d_csv(path: &Path, ts: &TimeSeries, channel: usize, bins: usize) -> Result<(), Error> {
    let hist = ts.pdf1d(channel, bins)?;
    let mut body = String::from("center,density\n");
    for (b, &d) in hist.density.iter().enumerate() {
        let center = 0.5 * (hist.edges[b] + hist.edges[b + 1]);
        let _ = writeln!(body, "{center:?},{d:?}");
    }
    fs::write(path, body)?;
    Ok(())
}

fn write_pdf2d_csv(path: &Path, ts: &TimeSeries, i: usize, j: usize, bins: usize) -> Result<(), Error> {
    let hist = ts.pdf2d(i, j, bins)?;
    let mut body = String::from("x_center,y_center,density\n");
    for bx in 0..bins {
        for by in 0..bins {
            let xc = 0.5 * (hist.x_edges[bx] + hist.x_edges[bx + 1]);
            let yc = 0.5 * (hist.y_edges[by] + hist.y_edges[by + 1]);
            let _ = writeln!(body, "{xc:?},{yc:?},{:?}", hist.density[(bx, by)]);
        }
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

/// One overlay panel of a gnuplot script: label, the two CSV files, and the
/// 1-based x/y columns to plot.
struct OverlayPanel {
    label: String,
    file_a: String,
    file_b: String,
    x_column: usize,
    y_column: usize,
}

fn write_overlay_script(path: &Path, title: &str, panels: &[OverlayPanel]) -> Result<(), Error> {
    let mut body = String::new();
    let _ = writeln!(body, "set datafile separator comma");
    let _ = writeln!(body, "set key autotitle columnhead");
    let _ = writeln!(body, "set grid");
    let _ = writeln!(body, "set title '{title}'");
    for p in panels {
        let _ = writeln!(
            body,
            "plot '{}' using {}:{} with lines title '{} data', \\\n     '{}' using {}:{} with lines title '{} model'",
            p.file_a, p.x_column, p.y_column, p.label, p.file_b, p.x_column, p.y_column, p.label
        );
        let _ = writeln!(body, "pause -1 'press enter for the next panel'");
    }
    fs::write(path, body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate-reference
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum ReferenceSystem {
    Climate,
    Lv,
    Linear,
}

struct ReferenceRun {
    system: ReferenceSystem,
    eps: f64,
    duration: f64,
    dt: f64,
    sampling: f64,
    steps: usize,
    seed: u64,
}

impl ReferenceRun {
    fn preset(p: Preset) -> Self {
        match p {
            Preset::PaperClimate => ReferenceRun {
                system: ReferenceSystem::Climate,
                eps: 0.5,
                duration: 10_000.0,
                dt: 1e-3,
                sampling: 0.05,
                steps: 0,
                seed: 2024,
            },
            Preset::PaperLv => ReferenceRun {
                system: ReferenceSystem::Lv,
                eps: 0.0,
                duration: 0.0,
                dt: 0.035,
                sampling: 0.035,
                // 1.5e5 rows including the initial condition.
                steps: 149_999,
                seed: 0,
            },
            Preset::PaperLinear => ReferenceRun {
                system: ReferenceSystem::Linear,
                eps: 0.0,
                duration: 0.0,
                dt: 1e-3,
                sampling: 1e-3,
                steps: 1_000_000,
                seed: 18,
            },
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let bad = |k: &str, v: &str| Error::config(format!("cannot parse {k} = {v}"));
        match key {
            "eps" => self.eps = value.parse().map_err(|_| bad(key, value))?,
            "duration" => self.duration = value.parse().map_err(|_| bad(key, value))?,
            "dt" => self.dt = value.parse().map_err(|_| bad(key, value))?,
            "sampling" => self.sampling = value.parse().map_err(|_| bad(key, value))?,
            "steps" => self.steps = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(Error::config(format!("unknown parameter key '{other}'"))),
        }
        Ok(())
    }
}

fn parse_key_value(line: &str) -> Option<(String, String)> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return None;
    }
    let (k, v) = line.split_once('=')?;
    Some((k.trim().to_string(), v.trim().to_string()))
}

fn cmd_simulate_reference(args: &SimulateReferenceArgs) -> Result<(), Error> {
    let mut run = match (&args.preset, &args.param_file) {
        (Some(p), None) => ReferenceRun::preset(*p),
        (None, Some(file)) => {
            let body = fs::read_to_string(file)?;
            let mut system = None;
            let mut pairs = Vec::new();
            for line in body.lines() {
                if let Some((k, v)) = parse_key_value(line) {
                    if k == "system" {
                        system = Some(v);
                    } else {
                        pairs.push((k, v));
                    }
                }
            }
            let mut run = match system.as_deref() {
                Some("climate") => ReferenceRun::preset(Preset::PaperClimate),
                Some("lv") => ReferenceRun::preset(Preset::PaperLv),
                Some("linear") => ReferenceRun::preset(Preset::PaperLinear),
                Some(other) => {
                    return Err(Error::config(format!(
                        "unknown system '{other}' (expected climate, lv, or linear)"
                    )))
                }
                None => return Err(Error::config("param file must set `system = ...`")),
            };
            for (k, v) in pairs {
                run.apply(&k, &v)?;
            }
            run
        }
        (None, None) => {
            return Err(Error::config(
                "either --preset or --param-file is required",
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(eps) = args.eps {
        run.eps = eps;
    }
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    for pair in &args.overrides {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{pair}' is not KEY=VALUE")))?;
        run.apply(k.trim(), v.trim())?;
    }

    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("simulate-reference", args);
    manifest.seed(run.seed);

    let (full, observed) = match run.system {
        ReferenceSystem::Climate => {
            let params = ClimateParams::standard(run.eps);
            simulate_climate(&params, run.duration, run.dt, run.sampling, run.seed)?
        }
        ReferenceSystem::Lv => {
            let params = LVParams::standard();
            let full = simulate_lv(&params, &LVParams::standard_n0(), run.dt, run.steps)?;
            let observed = full.select_channels(&[0, 1, 2])?;
            (full, observed)
        }
        ReferenceSystem::Linear => {
            let full = simulate_linear_toy(&LinearToyParams::standard(), run.dt, run.steps, run.seed)?;
            let observed = full.select_channels(&[0])?;
            (full, observed)
        }
    };

    let full_path = args.out.join("full.csv");
    let observed_path = args.out.join("observed.csv");
    full.save_csv(&full_path)?;
    observed.save_csv(&observed_path)?;
    println!(
        "wrote {} ({} rows, {} channels) and {} ({} rows, {} channels)",
        full_path.display(),
        full.len(),
        full.dim(),
        observed_path.display(),
        observed.len(),
        observed.dim()
    );
    manifest.output(&full_path);
    manifest.output(&observed_path);
    manifest.write(&args.out)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn print_fit_report(model: &EMRModel) {
    println!("fitted {} channels at dt = {}", model.d, model.dt);
    println!("hidden levels: p = {}", model.p());
    println!(
        "{:<6} {:<26} {:<26} {:<26} {:>10}",
        "level", "lag-1 ACF", "trial R^2", "cov eigenvalues", "cov change"
    );
    for diag in &model.report.levels {
        let fmt = |v: &[f64]| {
            let inner = v
                .iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("[{inner}]")
        };
        println!(
            "{:<6} {:<26} {:<26} {:<26} {:>10.4}",
            diag.level,
            fmt(&diag.lag1_autocorrelation),
            fmt(&diag.trial_r_squared),
            fmt(&diag.covariance_eigenvalues),
            diag.covariance_relative_change
        );
    }
    match &model.report.stop_reason {
        StopReason::Converged { level } => {
            println!("stop_reason: converged (residual white at level {level})")
        }
        StopReason::MaxLevels { max_levels } => {
            println!("stop_reason: max_levels (cap {max_levels} reached before convergence)")
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let series = load_csv(&args.data, args.dt, args.skip)?;
    let constraints = match args.constraints {
        ConstraintChoice::None => None,
        ConstraintChoice::Energy => Some(energy_constraints(series.dim())),
    };
    let config = EmrConfig {
        ridge: args.ridge,
        quadratic: !args.linear_only,
        stopping: StoppingConfig {
            max_levels: args.max_levels,
            ..StoppingConfig::default()
        },
    };
    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("fit", args);
    manifest.input(&args.data);
    let model = fit_emr(&series, constraints.as_ref(), &config)?;
    print_fit_report(&model);
    let model_path = args.out.join("model.json");
    save_model(&model, &model_path)?;
    println!("wrote {}", model_path.display());
    manifest.output(&model_path);
    manifest.write(&args.out)
}

// ---------------------------------------------------------------------------
// simulate-model
// ---------------------------------------------------------------------------

fn cmd_simulate_model(args: &SimulateModelArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("simulate-model", args);
    manifest.input(&args.model);
    manifest.seed(args.seed);

    // Initial state: explicit --x0, else the tail of --data with hidden
    // levels reconstructed backward, else zeros.
    let (mut x0, hidden) = if let Some(data) = &args.data {
        manifest.input(data);
        let series = load_csv(data, model.dt, 0)?;
        let window = series.skip(series.len().saturating_sub(model.p() + 2))?;
        let hist = init_hidden_backward(&model, &window)?;
        (window.data.row(window.len() - 1).transpose(), hist.latest())
    } else {
        (DVector::zeros(model.d), HiddenState::zeros(&model))
    };
    if let Some(list) = &args.x0 {
        let values: Result<Vec<f64>, _> = list.split(',').map(|v| v.trim().parse()).collect();
        let values = values.map_err(|_| Error::config(format!("cannot parse --x0 '{list}'")))?;
        if values.len() != model.d {
            return Err(Error::config(format!(
                "--x0 has {} entries, model has {} channels",
                values.len(),
                model.d
            )));
        }
        x0 = DVector::from_vec(values);
    }
    let reflection = match args.reflect {
        Some(eps) => {
            x0 = project_positive(&x0, eps);
            ReflectionSpec::floor(eps)
        }
        None => ReflectionSpec::none(),
    };
    let sim = simulate_emr(
        &model,
        &x0,
        &hidden,
        &SimConfig {
            steps: args.steps,
            dt: model.dt,
            seed: args.seed,
            sample_stride: args.stride,
            burn_in: args.burn_in,
        },
        &reflection,
    )?;
    let path = args.out.join("simulation.csv");
    sim.save_csv(&path)?;
    println!("wrote {} ({} rows)", path.display(), sim.len());
    manifest.output(&path);
    manifest.write(&args.out)
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

fn cmd_forecast(args: &ForecastArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let window = load_csv(&args.data, model.dt, 0)?;
    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("forecast", args);
    manifest.input(&args.model);
    manifest.input(&args.data);
    manifest.seed(args.seed);

    let members = forecast(&model, &window, args.horizon, args.ensemble, args.seed)?;
    let mut mean = members[0].data.clone();
    for member in &members[1..] {
        mean += &member.data;
    }
    mean /= members.len() as f64;
    for (i, member) in members.iter().enumerate() {
        let path = args.out.join(format!("member_{:03}.csv", i + 1));
        member.save_csv(&path)?;
        manifest.output(&path);
    }
    let mean_ts = TimeSeries::new(mean, model.dt, model.names.clone(), 0.0)?;
    let mean_path = args.out.join("ensemble_mean.csv");
    mean_ts.save_csv(&mean_path)?;
    println!(
        "wrote {} members and {} (horizon {})",
        members.len(),
        mean_path.display(),
        args.horizon
    );
    manifest.output(&mean_path);
    manifest.write(&args.out)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DiagnoseSummary {
    /// Per-channel max absolute ACF deviation between the two inputs.
    acf_max_abs_deviation: Option<Vec<f64>>,
    /// Per-channel L1 distance between the marginal densities.
    pdf1d_l1: Option<Vec<f64>>,
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), Error> {
    let a = load_csv(&args.data, args.dt, 0)?;
    let b = match &args.data2 {
        Some(path) => Some(load_csv(path, args.dt, 0)?),
        None => None,
    };
    if let Some(bs) = &b {
        if bs.dim() != a.dim() {
            return Err(Error::config(format!(
                "inputs have {} and {} channels",
                a.dim(),
                bs.dim()
            )));
        }
    }
    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("diagnose", args);
    manifest.input(&args.data);
    if let Some(path) = &args.data2 {
        manifest.input(path);
    }

    let mut summary = DiagnoseSummary {
        acf_max_abs_deviation: None,
        pdf1d_l1: None,
    };
    let mut overlay_pairs = Vec::new();

    let acf_a = a.acf(args.acf)?;
    let acf_a_path = args.out.join("acf_a.csv");
    write_acf_csv(&acf_a_path, &acf_a, &a.names, args.dt)?;
    manifest.output(&acf_a_path);
    if let Some(bs) = &b {
        let acf_b = bs.acf(args.acf)?;
        let acf_b_path = args.out.join("acf_b.csv");
        write_acf_csv(&acf_b_path, &acf_b, &bs.names, args.dt)?;
        manifest.output(&acf_b_path);
        let devs: Vec<f64> = (0..a.dim())
            .map(|c| acf_a.max_abs_deviation(&acf_b, c))
            .collect();
        println!("acf max abs deviation per channel: {devs:.4?}");
        summary.acf_max_abs_deviation = Some(devs);
        for c in 0..a.dim() {
            overlay_pairs.push(OverlayPanel {
                label: format!("acf {}", a.names[c]),
                file_a: "acf_a.csv".to_string(),
                file_b: "acf_b.csv".to_string(),
                x_column: 2,
                y_column: 3 + c,
            });
        }
    }

    if args.pdf1d {
        let mut l1 = Vec::new();
        for c in 0..a.dim() {
            let pa = args.out.join(format!("pdf1d_{}_a.csv", a.names[c]));
            write_pdf1d_csv(&pa, &a, c, args.bins)?;
            manifest.output(&pa);
            if let Some(bs) = &b {
                let pb = args.out.join(format!("pdf1d_{}_b.csv", a.names[c]));
                write_pdf1d_csv(&pb, bs, c, args.bins)?;
                manifest.output(&pb);
                l1.push(
                    a.pdf1d(c, args.bins)?
                        .l1_distance(&bs.pdf1d(c, args.bins)?, args.bins),
                );
                overlay_pairs.push(OverlayPanel {
                    label: format!("pdf {}", a.names[c]),
                    file_a: format!("pdf1d_{}_a.csv", a.names[c]),
                    file_b: format!("pdf1d_{}_b.csv", a.names[c]),
                    x_column: 1,
                    y_column: 2,
                });
            }
        }
        if !l1.is_empty() {
            println!("pdf1d L1 distance per channel: {l1:.4?}");
            summary.pdf1d_l1 = Some(l1);
        }
    }

    if let Some(ij) = &args.pdf2d {
        let (i, j) = (ij[0], ij[1]);
        let pa = args.out.join("pdf2d_a.csv");
        write_pdf2d_csv(&pa, &a, i, j, args.bins)?;
        manifest.output(&pa);
        if let Some(bs) = &b {
            let pb = args.out.join("pdf2d_b.csv");
            write_pdf2d_csv(&pb, bs, i, j, args.bins)?;
            manifest.output(&pb);
        }
    }

    if b.is_some() {
        let summary_path = args.out.join("summary.json");
        let body = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::config(format!("summary serialization: {e}")))?;
        fs::write(&summary_path, body + "\n")?;
        manifest.output(&summary_path);
        let script = args.out.join("plots.gp");
        write_overlay_script(&script, "paired diagnostics", &overlay_pairs)?;
        manifest.output(&script);
    }
    manifest.write(&args.out)
}

// ---------------------------------------------------------------------------
// eta-test
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EtaDocument {
    correlations: Vec<f64>,
    max_abs: f64,
    n_seeds: usize,
    construction: String,
}

fn cmd_eta_test(args: &EtaTestArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let observed = load_csv(&args.data, model.dt, 0)?;
    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("eta-test", args);
    manifest.input(&args.model);
    manifest.input(&args.data);
    let config = EtaConfig {
        n_seeds: args.seeds,
        burn_in: args.burn_in,
        ..EtaConfig::default()
    };
    manifest.seed(config.base_seed);
    let report = eta_test(&model, &observed, &config)?;
    for (c, rho) in report.correlations.iter().enumerate() {
        println!("channel {} ({}): rho = {rho:.4}", c + 1, model.names[c]);
    }
    println!("max_abs = {:.4} over {} seeds", report.max_abs, report.n_seeds);
    let doc = EtaDocument {
        correlations: report.correlations.clone(),
        max_abs: report.max_abs,
        n_seeds: report.n_seeds,
        construction: report.construction.clone(),
    };
    let path = args.out.join("eta.json");
    let body = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::config(format!("eta serialization: {e}")))?;
    fs::write(&path, body + "\n")?;
    manifest.output(&path);
    manifest.write(&args.out)
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ReproduceReport {
    study: String,
    scale: String,
    pass: bool,
    checks: Vec<StudyCheck>,
}

fn print_checks(checks: &[StudyCheck]) {
    for c in checks {
        println!(
            "[{}] {}: {} (expected {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.observed,
            c.expected
        );
    }
}

fn emit_climate_artifacts(
    dir: &Path,
    report: &ClimateStudyReport,
    manifest: &mut ManifestBuilder,
) -> Result<(), Error> {
    ensure_dir(dir)?;
    let dt = report.observed.dt;
    let names = report.observed.names.clone();
    let acf_data = report.observed.acf(CLIMATE_ACF_LAGS)?;
    let acf_model = report.simulated.acf(CLIMATE_ACF_LAGS)?;
    for (file, curve) in [("acf_data.csv", &acf_data), ("acf_model.csv", &acf_model)] {
        let path = dir.join(file);
        write_acf_csv(&path, curve, &names, dt)?;
        manifest.output(&path);
    }
    let mut panels: Vec<OverlayPanel> = (0..report.observed.dim())
        .map(|c| OverlayPanel {
            label: format!("acf {}", names[c]),
            file_a: "acf_data.csv".to_string(),
            file_b: "acf_model.csv".to_string(),
            x_column: 2,
            y_column: 3 + c,
        })
        .collect();
    for c in 0..report.observed.dim() {
        let data_path = dir.join(format!("pdf1d_{}_data.csv", names[c]));
        write_pdf1d_csv(&data_path, &report.observed, c, PDF_BINS)?;
        manifest.output(&data_path);
        let model_path = dir.join(format!("pdf1d_{}_model.csv", names[c]));
        write_pdf1d_csv(&model_path, &report.simulated, c, PDF_BINS)?;
        manifest.output(&model_path);
        panels.push(OverlayPanel {
            label: format!("pdf {}", names[c]),
            file_a: format!("pdf1d_{}_data.csv", names[c]),
            file_b: format!("pdf1d_{}_model.csv", names[c]),
            x_column: 1,
            y_column: 2,
        });
    }
    let eta_doc = EtaDocument {
        correlations: report.eta.correlations.clone(),
        max_abs: report.eta.max_abs,
        n_seeds: report.eta.n_seeds,
        construction: report.eta.construction.clone(),
    };
    let eta_path = dir.join("eta.json");
    let body = serde_json::to_string_pretty(&eta_doc)
        .map_err(|e| Error::config(format!("eta serialization: {e}")))?;
    fs::write(&eta_path, body + "\n")?;
    manifest.output(&eta_path);
    let script = dir.join("plots.gp");
    write_overlay_script(&script, &format!("climate eps={}", report.eps), &pairs, 2, 3)?;
    manifest.output(&script);
    Ok(())
}

fn cmd_reproduce(args: &ReproduceArgs) -> Result<bool, Error> {
    let scale = if args.desk { Scale::Desk } else { Scale::Paper };
    ensure_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("reproduce", args);
    let checks: Vec<StudyCheck> = match args.study {
        Study::Climate => {
            if args.eps == "all" {
                let suite = run_climate_suite(scale)?;
                for report in &suite.reports {
                    manifest.seed(report.model.dt.to_bits()); // placeholder replaced below
                }
                manifest.seeds.clear();
                for report in &suite.reports {
                    let dir = args.out.join(format!("eps_{}", report.eps));
                    emit_climate_artifacts(&dir, report, &mut manifest)?;
                }
                suite.checks
            } else {
                let eps: f64 = args
                    .eps
                    .parse()
                    .map_err(|_| Error::config(format!("--eps '{}' is not a number", args.eps)))?;
                let report = run_climate_study(&ClimateStudyConfig::standard(eps, scale))?;
                emit_climate_artifacts(&args.out, &report, &mut manifest)?;
                report.checks
            }
        }
        Study::Lv => {
            let report = run_lv_study(&LvStudyConfig::standard(scale))?;
            let acf_data = report.observed.acf(LV_ACF_LAGS)?;
            let acf_model = report.simulated.acf(LV_ACF_LAGS)?;
            let names = report.observed.names.clone();
            for (file, curve) in [("acf_data.csv", &acf_data), ("acf_model.csv", &acf_model)] {
                let path = args.out.join(file);
                write_acf_csv(&path, curve, &names, report.observed.dt)?;
                manifest.output(&path);
            }
            let script = args.out.join("plots.gp");
            write_overlay_script(
                &script,
                "population closure",
                &[(
                    "acf".to_string(),
                    "acf_data.csv".to_string(),
                    "acf_model.csv".to_string(),
                )],
                2,
                3,
            )?;
            manifest.output(&script);
            report.checks
        }
        Study::LinearToy => {
            let report = run_linear_toy_study(&LinearToyConfig::standard(scale))?;
            let mut body = String::from("eigenvalue,expected,relative_error\n");
            for (i, got) in report.eigenvalues.iter().enumerate() {
                let _ = writeln!(
                    body,
                    "{got:?},{:?},{:?}",
                    report.expected[i],
                    report.relative_errors.get(i).copied().unwrap_or(f64::NAN)
                );
            }
            let path = args.out.join("eigenvalues.csv");
            fs::write(&path, body)?;
            manifest.output(&path);
            report.checks
        }
        Study::GammaChain => {
            let report = run_gamma_chain_study(scale)?;
            let mut body = String::from("kernel_shape,relative_discrepancy,threshold\n");
            for (k, got, tol) in &report.cases {
                let _ = writeln!(body, "{k},{got:?},{tol:?}");
            }
            let path = args.out.join("discrepancies.csv");
            fs::write(&path, body)?;
            manifest.output(&path);
            report.checks
        }
    };

    print_checks(&checks);
    let pass = all_pass(&checks);
    let report = ReproduceReport {
        study: format!("{:?}", args.study).to_lowercase(),
        scale: format!("{scale:?}").to_lowercase(),
        pass,
        checks,
    };
    let report_path = args.out.join("report.json");
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::config(format!("report serialization: {e}")))?;
    fs::write(&report_path, body + "\n")?;
    manifest.output(&report_path);
    manifest.write(&args.out)?;
    println!(
        "{}: {}",
        report_path.display(),
        if pass { "all checks passed" } else { "some checks FAILED" }
    );
    Ok(pass)
}

// ---------------------------------------------------------------------------

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Csv(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SimulateReference(args) => cmd_simulate_reference(args),
        Command::Fit(args) => cmd_fit(args),
        Command::SimulateModel(args) => cmd_simulate_model(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::EtaTest(args) => cmd_eta_test(args),
        Command::Reproduce(args) => {
            return match cmd_reproduce(args) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(4),
                Err(err) => {
                    eprintln!("error: {err}");
                    ExitCode::from(exit_code_for(&err))
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
