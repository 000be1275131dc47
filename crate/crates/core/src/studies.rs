//! End-to-end reproduction pipelines for the bundled reference systems.
//!
//! Each study generates reference data, fits a closure model, runs the
//! follow-up simulations, and returns the headline statistics together with
//! pass/fail checks against the documented tolerance bands, so the CLI and
//! the test suite share one implementation of every pipeline.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::emr::{
    fit_emr, grand_linear_operator, EMRModel, EmrConfig, StopReason, StoppingConfig,
};
use crate::error::{Error, Result};
use crate::reference_models::{
    simulate_climate, simulate_linear_toy, simulate_lv, verify_gamma_chain, ClimateParams,
    GammaChainSpec, LVParams, LinearToyParams,
};
use crate::regression::energy_constraints;
use crate::simulate::{
    eta_test, init_hidden_backward, project_positive, simulate_emr, EtaConfig, EtaReport,
    HiddenState, ReflectionSpec, SimConfig,
};
use crate::timeseries::TimeSeries;

/// Run length mode for the reproduction pipelines.
///
/// `Desk` divides trajectory lengths by 10 and doubles the statistical
/// tolerance bands so a full study finishes in seconds; deterministic
/// round-trip tolerances (eigenvalues, integrator agreement) stay unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Paper,
    Desk,
}

impl Scale {
    fn shrink(self, n: usize) -> usize {
        match self {
            Scale::Paper => n,
            Scale::Desk => n / 10,
        }
    }

    fn widen(self, tol: f64) -> f64 {
        match self {
            Scale::Paper => tol,
            Scale::Desk => 2.0 * tol,
        }
    }
}

/// One named threshold comparison inside a study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCheck {
    pub name: String,
    pub observed: String,
    pub expected: String,
    pub pass: bool,
}

impl StudyCheck {
    fn new(name: impl Into<String>, observed: String, expected: String, pass: bool) -> Self {
        StudyCheck {
            name: name.into(),
            observed,
            expected,
            pass,
        }
    }
}

/// True when every check in the slice passed.
pub fn all_pass(checks: &[StudyCheck]) -> bool {
    checks.iter().all(|c| c.pass)
}

// ---------------------------------------------------------------------------
// Climate study (two observed slow modes of the six-dimensional benchmark)
// ---------------------------------------------------------------------------

/// Configuration of one climate-benchmark reproduction at a single coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateStudyConfig {
    pub eps: f64,
    /// Trajectory length of the reference run, in time units.
    pub duration: f64,
    /// Integration step of the reference run.
    pub integration_dt: f64,
    /// Sampling interval of the stored observables.
    pub sampling_dt: f64,
    pub data_seed: u64,
    pub sim_seed: u64,
    pub eta: EtaConfig,
    pub scale: Scale,
}

impl ClimateStudyConfig {
    pub fn standard(eps: f64, scale: Scale) -> Self {
        ClimateStudyConfig {
            eps,
            duration: scale.shrink(10_000) as f64,
            integration_dt: 1e-3,
            sampling_dt: 0.05,
            data_seed: 2024,
            sim_seed: 31,
            eta: EtaConfig::default(),
            scale,
        }
    }
}

/// Everything produced by one climate reproduction: the fitted model, the
/// training data and the matched-length free run (both in original field
/// coordinates), the per-channel statistics, and the checks.
#[derive(Debug, Clone)]
pub struct ClimateStudyReport {
    pub eps: f64,
    pub p: usize,
    pub stop_reason: StopReason,
    /// Per-channel training mean removed before fitting and added back to
    /// every simulated sample.
    pub climatology: Vec<f64>,
    pub pdf_l1: Vec<f64>,
    pub acf_max_dev: Vec<f64>,
    pub eta: EtaReport,
    pub model: EMRModel,
    pub observed: TimeSeries,
    pub simulated: TimeSeries,
    pub checks: Vec<StudyCheck>,
    pub fit_seconds: f64,
}

/// Expected ensemble-averaged max-abs cascade/state correlation at the four
/// benchmark couplings, with the accepted half-width band.
pub const ETA_REFERENCE: [(f64, f64); 4] = [(0.1, 0.11), (0.5, 0.33), (1.0, 0.42), (1.5, 0.47)];
pub const ETA_BAND: f64 = 0.10;

/// Histogram resolution used by the study statistics.
pub const PDF_BINS: usize = 50;
/// ACF comparison depth for the climate study: 5 time units at 0.05 sampling.
pub const CLIMATE_ACF_LAGS: usize = 100;

/// Subtract the per-channel mean, returning the anomalies and the mean.
pub fn center_series(ts: &TimeSeries) -> (TimeSeries, Vec<f64>) {
    let n = ts.len();
    let d = ts.dim();
    let mean: Vec<f64> = (0..d)
        .map(|c| ts.data.column(c).sum() / n as f64)
        .collect();
    let mut data = ts.data.clone();
    for c in 0..d {
        data.column_mut(c).add_scalar_mut(-mean[c]);
    }
    let centered = TimeSeries::new(data, ts.dt, ts.names.clone(), ts.t0)
        .expect("centering preserves shape");
    (centered, mean)
}

/// Add a per-channel offset to every sample.
pub fn shift_series(ts: &TimeSeries, offset: &[f64]) -> TimeSeries {
    let mut data = ts.data.clone();
    for c in 0..ts.dim() {
        data.column_mut(c).add_scalar_mut(offset[c]);
    }
    TimeSeries::new(data, ts.dt, ts.names.clone(), ts.t0).expect("shifting preserves shape")
}

/// Reproduce the climate benchmark at one coupling strength: generate the
/// reference run, fit the energy-constrained closure on anomalies, free-run
/// it for the training length, and compare marginal PDFs, ACFs, and the
/// noise-cascade correlation against the documented bands.
pub fn run_climate_study(config: &ClimateStudyConfig) -> Result<ClimateStudyReport> {
    let scale = config.scale;
    let params = ClimateParams::standard(config.eps);
    let (_, observed) = simulate_climate(
        &params,
        config.duration,
        config.integration_dt,
        config.sampling_dt,
        config.data_seed,
    )?;
    let d = observed.dim();
    let (centered, climatology) = center_series(&observed);

    let constraints = energy_constraints(d);
    let t_fit = Instant::now();
    let model = fit_emr(&centered, Some(&constraints), &EmrConfig::default())?;
    let fit_seconds = t_fit.elapsed().as_secs_f64();
    let p = model.p();
    let stop_reason = model.report.stop_reason.clone();

    let mut checks = Vec::new();
    let converged = matches!(stop_reason, StopReason::Converged { .. });
    checks.push(StudyCheck::new(
        format!("eps={} level count", config.eps),
        format!("p={p}, {stop_reason:?}"),
        "p=2, converged".to_string(),
        p == 2 && converged,
    ));

    // Free run of the fitted closure, same length as training, started from
    // the first training anomaly with hidden levels spun up during burn-in.
    let n = centered.len();
    let burn_in = 2_000.min(n / 2);
    let x0 = centered.data.row(0).transpose();
    let sim = simulate_emr(
        &model,
        &x0,
        &HiddenState::zeros(&model),
        &SimConfig {
            steps: n + burn_in,
            dt: config.sampling_dt,
            seed: config.sim_seed,
            sample_stride: 1,
            burn_in,
        },
        &ReflectionSpec::none(),
    )?;
    let simulated = shift_series(&sim, &climatology);

    let pdf_band = scale.widen(0.10);
    let data_acf = observed.acf(CLIMATE_ACF_LAGS)?;
    let sim_acf = simulated.acf(CLIMATE_ACF_LAGS)?;
    let mut pdf_l1 = Vec::with_capacity(d);
    let mut acf_max_dev = Vec::with_capacity(d);
    for c in 0..d {
        let l1 = observed
            .pdf1d(c, PDF_BINS)?
            .l1_distance(&simulated.pdf1d(c, PDF_BINS)?, PDF_BINS);
        pdf_l1.push(l1);
        checks.push(StudyCheck::new(
            format!("eps={} pdf L1 x{}", config.eps, c + 1),
            format!("{l1:.4}"),
            format!("<= {pdf_band:.2}"),
            l1 <= pdf_band,
        ));
        let dev = data_acf.max_abs_deviation(&sim_acf, c);
        acf_max_dev.push(dev);
        // The first channel carries the strongest coupling feedback and is
        // allowed a wider band at eps >= 1.
        let acf_band = scale.widen(if config.eps >= 1.0 && c == 0 { 0.15 } else { 0.10 });
        checks.push(StudyCheck::new(
            format!("eps={} acf dev x{}", config.eps, c + 1),
            format!("{dev:.4}"),
            format!("<= {acf_band:.2}"),
            dev <= acf_band,
        ));
    }

    let eta = eta_test(&model, &centered, &config.eta)?;
    if let Some((_, expected)) = ETA_REFERENCE
        .iter()
        .find(|(e, _)| (e - config.eps).abs() < 1e-12)
    {
        let band = scale.widen(ETA_BAND);
        checks.push(StudyCheck::new(
            format!("eps={} eta max-abs correlation", config.eps),
            format!("{:.4}", eta.max_abs),
            format!("{expected:.2} +/- {band:.2}"),
            (eta.max_abs - expected).abs() <= band,
        ));
    }

    Ok(ClimateStudyReport {
        eps: config.eps,
        p,
        stop_reason,
        climatology,
        pdf_l1,
        acf_max_dev,
        eta,
        model,
        observed,
        simulated,
        checks,
        fit_seconds,
    })
}

/// The climate study across all four benchmark couplings plus the
/// sequence-level check that the cascade/state correlation never decreases
/// with the coupling strength.
#[derive(Debug, Clone)]
pub struct ClimateSuiteReport {
    pub reports: Vec<ClimateStudyReport>,
    pub eta_sequence: Vec<f64>,
    pub checks: Vec<StudyCheck>,
}

pub fn run_climate_suite(scale: Scale) -> Result<ClimateSuiteReport> {
    let mut reports = Vec::with_capacity(ETA_REFERENCE.len());
    for (eps, _) in ETA_REFERENCE {
        reports.push(run_climate_study(&ClimateStudyConfig::standard(eps, scale))?);
    }
    let eta_sequence: Vec<f64> = reports.iter().map(|r| r.eta.max_abs).collect();
    let mut checks: Vec<StudyCheck> = reports.iter().flat_map(|r| r.checks.clone()).collect();
    let nondecreasing = eta_sequence.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    checks.push(StudyCheck::new(
        "eta sequence nondecreasing",
        format!("{eta_sequence:.4?}"),
        "nondecreasing in eps".to_string(),
        nondecreasing,
    ));
    Ok(ClimateSuiteReport {
        reports,
        eta_sequence,
        checks,
    })
}

// ---------------------------------------------------------------------------
// Lotka-Volterra study (three observed of four competing populations)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LvStudyConfig {
    pub dt: f64,
    /// Samples discarded while the orbit settles onto the attractor.
    pub transient: usize,
    /// Training samples kept after the transient.
    pub length: usize,
    /// Steps of the reflected free run.
    pub sim_steps: usize,
    /// Positivity floor of the reflected free run.
    pub floor: f64,
    pub sim_seed: u64,
    pub scale: Scale,
}

impl LvStudyConfig {
    pub fn standard(scale: Scale) -> Self {
        LvStudyConfig {
            dt: 0.035,
            transient: 60_000,
            // Training length never shrinks: a closure fitted on a tenth of
            // the attractor has an unstable hidden chain (the reflection
            // bounds x only), so desk scale shortens just the free run.
            length: 150_000,
            sim_steps: scale.shrink(150_000),
            floor: 0.12,
            sim_seed: 7,
            scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LvStudyReport {
    pub p: usize,
    pub stop_reason: StopReason,
    /// Smallest sample of the reflected free run across channels.
    pub sim_min: f64,
    pub acf_rms: Vec<f64>,
    /// Eigenvalues of the grand linear operator with positive real part.
    pub unstable_modes: usize,
    pub model: EMRModel,
    pub observed: TimeSeries,
    pub simulated: TimeSeries,
    pub checks: Vec<StudyCheck>,
    pub fit_seconds: f64,
}

/// ACF comparison depth for the population study, in samples.
pub const LV_ACF_LAGS: usize = 200;

/// Reproduce the population-dynamics closure: integrate the chaotic
/// four-species competition model, fit an unconstrained closure on three of
/// the populations, free-run it with the positivity floor, and compare the
/// sample ACFs; also verify the fitted linearization is unstable (the
/// attractor is chaotic) while the reflected run stays bounded.
pub fn run_lv_study(config: &LvStudyConfig) -> Result<LvStudyReport> {
    let scale = config.scale;
    let params = LVParams::standard();
    let full = simulate_lv(
        &params,
        &LVParams::standard_n0(),
        config.dt,
        config.transient + config.length,
    )?;
    let observed = full.skip(config.transient)?.select_channels(&[0, 1, 2])?;

    let t_fit = Instant::now();
    let model = fit_emr(&observed, None, &EmrConfig::default())?;
    let fit_seconds = t_fit.elapsed().as_secs_f64();
    let p = model.p();
    let stop_reason = model.report.stop_reason.clone();

    let mut checks = Vec::new();
    checks.push(StudyCheck::new(
        "lv level count",
        format!("p={p}, {stop_reason:?}"),
        "p in [10, 20]".to_string(),
        (10..=20).contains(&p),
    ));

    let (_, eig) = grand_linear_operator(&model)?;
    let unstable_modes = eig.iter().filter(|z| z.re > 0.0).count();
    checks.push(StudyCheck::new(
        "lv unstable modes",
        format!("{unstable_modes}"),
        ">= 1".to_string(),
        unstable_modes >= 1,
    ));

    // Free run, started from the last training sample (lifted to the floor
    // if the orbit ended below it) with hidden levels reconstructed from the
    // training tail.
    let n = observed.len();
    let window = observed.skip(n - 1 - (p + 1))?;
    let hidden = init_hidden_backward(&model, &window)?;
    let x0 = project_positive(&observed.data.row(n - 1).transpose(), config.floor);
    let sim = simulate_emr(
        &model,
        &x0,
        &hidden.latest(),
        &SimConfig {
            steps: config.sim_steps,
            dt: config.dt,
            seed: config.sim_seed,
            sample_stride: 1,
            burn_in: 0,
        },
        &ReflectionSpec::floor(config.floor),
    )?;

    let sim_min = sim.data.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(StudyCheck::new(
        "lv reflected run stays on the floor",
        format!("min sample {sim_min:.4}"),
        format!(">= {}", config.floor),
        sim_min >= config.floor,
    ));

    let data_acf = observed.acf(LV_ACF_LAGS)?;
    let sim_acf = sim.acf(LV_ACF_LAGS)?;
    let rms_band = scale.widen(0.10);
    let mut acf_rms = Vec::with_capacity(3);
    for c in 0..3 {
        let mut sq = 0.0;
        for lag in 0..=LV_ACF_LAGS {
            let dev = data_acf.values[(lag, c)] - sim_acf.values[(lag, c)];
            sq += dev * dev;
        }
        let rms = (sq / (LV_ACF_LAGS + 1) as f64).sqrt();
        acf_rms.push(rms);
        checks.push(StudyCheck::new(
            format!("lv acf rms N{}", c + 1),
            format!("{rms:.4}"),
            format!("<= {rms_band:.2}"),
            rms <= rms_band,
        ));
    }

    Ok(LvStudyReport {
        p,
        stop_reason,
        sim_min,
        acf_rms,
        unstable_modes,
        model,
        observed,
        simulated: sim,
        checks,
        fit_seconds,
    })
}

// ---------------------------------------------------------------------------
// Linear toy study (one observed of two coupled Ornstein-Uhlenbeck modes)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LinearToyConfig {
    pub dt: f64,
    pub steps: usize,
    /// Samples discarded so the hidden mode forgets its initial condition.
    pub transient: usize,
    pub seed: u64,
}

impl LinearToyConfig {
    pub fn standard(_scale: Scale) -> Self {
        // The full run already fits in well under a minute, so desk scale
        // does not shrink it: shorter runs inflate the sampling error of the
        // slow eigenvalue past its 5% acceptance band.
        LinearToyConfig {
            dt: 1e-3,
            steps: 1_000_000,
            transient: 10_000,
            seed: 18,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearToyReport {
    pub p: usize,
    pub eigenvalues: Vec<f64>,
    pub expected: [f64; 2],
    pub relative_errors: Vec<f64>,
    pub model: EMRModel,
    pub checks: Vec<StudyCheck>,
}

/// Fit a one-hidden-level linear closure on the observed component of the
/// two-mode Ornstein-Uhlenbeck system and compare the recovered drift
/// eigenvalues against the exact pair of the full two-by-two generator.
pub fn run_linear_toy_study(config: &LinearToyConfig) -> Result<LinearToyReport> {
    let params = LinearToyParams::standard();
    // Exact eigenvalues of [[-2, 1], [1, -1]]: roots of z^2 + 3z + 1.
    let disc = 5f64.sqrt();
    let expected = [(-3.0 - disc) / 2.0, (-3.0 + disc) / 2.0];

    let full = simulate_linear_toy(&params, config.dt, config.steps, config.seed)?;
    let x = full.select_channels(&[0])?.skip(config.transient)?;
    let emr_config = EmrConfig {
        quadratic: false,
        ..EmrConfig::default()
    };
    let model = fit_emr(&x, None, &emr_config)?;
    let (_, eig) = grand_linear_operator(&model)?;
    let eigenvalues: Vec<f64> = eig.iter().map(|z| z.re).collect();

    let mut checks = Vec::new();
    checks.push(StudyCheck::new(
        "toy level count",
        format!("p={}", model.p()),
        "p=1".to_string(),
        model.p() == 1,
    ));
    let mut relative_errors = Vec::with_capacity(2);
    if eigenvalues.len() == 2 {
        for (i, (got, want)) in eigenvalues.iter().zip(expected.iter()).enumerate() {
            let rel = (got - want) / want;
            relative_errors.push(rel);
            checks.push(StudyCheck::new(
                format!("toy eigenvalue {}", i + 1),
                format!("{got:.6} ({:+.2}%)", 100.0 * rel),
                format!("{want:.6} +/- 5%"),
                rel.abs() <= 0.05,
            ));
        }
    } else {
        checks.push(StudyCheck::new(
            "toy eigenvalue count",
            format!("{}", eigenvalues.len()),
            "2".to_string(),
            false,
        ));
    }

    Ok(LinearToyReport {
        p: model.p(),
        eigenvalues,
        expected,
        relative_errors,
        model,
        checks,
    })
}

// ---------------------------------------------------------------------------
// Gamma-memory chain study (augmented ODE versus direct quadrature)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GammaChainStudyReport {
    /// (kernel shape k, relative discrepancy, threshold) per case.
    pub cases: Vec<(usize, f64, f64)>,
    pub checks: Vec<StudyCheck>,
}

/// Canonical memory-chain cases: an exponential kernel on a scalar linear
/// system and a shape-3 gamma kernel inside a two-species population model.
pub fn gamma_chain_cases() -> Vec<(GammaChainSpec, f64)> {
    vec![
        (
            GammaChainSpec {
                alpha: 1.0,
                k: 1,
                gamma_pm: 0.5,
                b: DVector::zeros(1),
                a: DMatrix::from_row_slice(1, 1, &[-1.0]),
                p: 0,
                m: 0,
                x0: DVector::from_element(1, 1.0),
                multiplicative: false,
            },
            1e-6,
        ),
        (
            GammaChainSpec {
                alpha: 2.0,
                k: 3,
                gamma_pm: 0.4,
                b: DVector::from_vec(vec![1.0, 0.8]),
                a: DMatrix::from_row_slice(2, 2, &[-1.0, -0.3, -0.2, -1.0]),
                p: 0,
                m: 1,
                x0: DVector::from_vec(vec![0.5, 0.5]),
                multiplicative: true,
            },
            1e-5,
        ),
    ]
}

/// Verify that replacing a gamma-kernel memory integral by its equivalent
/// chain of auxiliary ODE stages reproduces the direct quadrature solution.
pub fn run_gamma_chain_study(scale: Scale) -> Result<GammaChainStudyReport> {
    // Desk scale shortens the trajectories; the agreement thresholds stay
    // exact because the comparison is deterministic.
    let duration = match scale {
        Scale::Paper => 10.0,
        Scale::Desk => 2.0,
    };
    let dt = 1e-3;
    let mut cases = Vec::new();
    let mut checks = Vec::new();
    for (spec, threshold) in gamma_chain_cases() {
        let report = verify_gamma_chain(&spec, duration, dt)?;
        checks.push(StudyCheck::new(
            format!("gamma chain k={} route agreement", spec.k),
            format!("{:.3e}", report.max_rel_discrepancy),
            format!("<= {threshold:.0e}"),
            report.max_rel_discrepancy <= threshold,
        ));
        cases.push((spec.k, report.max_rel_discrepancy, threshold));
    }
    Ok(GammaChainStudyReport { cases, checks })
}

// ---------------------------------------------------------------------------
// Stopping calibration (white residuals must stop the recursion immediately)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StoppingCalibrationReport {
    pub p: usize,
    pub trial_r_squared: Vec<f64>,
    pub checks: Vec<StudyCheck>,
}

/// Fit the level recursion on serially independent Gaussian innovations and
/// confirm the trial-level coefficient of determination sits near one half
/// (the defining calibration of the whiteness test) so the recursion stops
/// at the first level.
pub fn run_stopping_calibration(n: usize, d: usize, seed: u64) -> Result<StoppingCalibrationReport> {
    use crate::rng::Rng64;
    if n < 10 {
        return Err(Error::config("calibration needs at least 10 samples"));
    }
    let mut rng = Rng64::from_seed(seed);
    let data = DMatrix::from_fn(n, d, |_, _| rng.standard_normal());
    let names = (0..d).map(|c| format!("w{}", c + 1)).collect();
    let series = TimeSeries::new(data, 1.0, names, 0.0)?;
    let config = EmrConfig {
        quadratic: false,
        stopping: StoppingConfig::default(),
        ..EmrConfig::default()
    };
    let model = fit_emr(&series, None, &config)?;
    let first = model
        .report
        .levels
        .first()
        .ok_or_else(|| Error::numerical("calibration fit recorded no levels"))?;
    let r2 = first.trial_r_squared.clone();
    let mut checks = Vec::new();
    for (c, value) in r2.iter().enumerate() {
        checks.push(StudyCheck::new(
            format!("iid trial R^2 channel {c}"),
            format!("{value:.4}"),
            "in [0.45, 0.55]".to_string(),
            (0.45..=0.55).contains(value),
        ));
    }
    let stopped_first = matches!(model.report.stop_reason, StopReason::Converged { level: 0 });
    checks.push(StudyCheck::new(
        "iid stopping level",
        format!("p={}, {:?}", model.p(), model.report.stop_reason),
        "converged at the first test, no hidden levels".to_string(),
        stopped_first && model.p() == 0,
    ));
    Ok(StoppingCalibrationReport {
        p: model.p(),
        trial_r_squared: r2,
        checks,
    })
}
