//! Multilevel model fitting: quadratic main-level regression, recursive
//! hidden-level regressions on the residuals, the whiteness stopping
//! criterion, noise estimation, spectral and energy audits, and lossless
//! model serialization.
//!
//! The fitted model is
//!
//! ```text
//! x_{k+1} - x_k         = [F - A x_k + B(x_k, x_k)] dt + r^(0)_k dt
//! r^(m-1)_{k+1} - r^(m-1)_k = L^(m) [x_k, r^(0)_k, .., r^(m-1)_k] dt + r^(m)_k dt
//! r^(p)_k dt            ~ chol(Q) sqrt(dt) xi_k
//! ```
//!
//! with the convention that the stored matrix A contributes `-A x` to the
//! drift, so a dissipative system carries positive diagonal entries in A.

use crate::error::{Error, Result};
use crate::regression::{
    build_design, build_level_design, constrained_least_squares, least_squares, DEFAULT_RIDGE,
    quad_count, ConstraintSet, DesignOptions, LsSolution,
};
use crate::rng::Rng64;
use crate::timeseries::TimeSeries;
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Quadratic drift of the main level: `F - A x + B(x, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMainLevel {
    /// Constant forcing, one entry per channel.
    pub f: DVector<f64>,
    /// Linear part; the drift contribution is `-A x`.
    pub a: DMatrix<f64>,
    /// Quadratic monomial coefficients, d rows by d(d+1)/2 columns in the
    /// lexicographic i <= j order.
    pub b: DMatrix<f64>,
}

impl QuadraticMainLevel {
    pub fn d(&self) -> usize {
        self.f.len()
    }

    /// Per-channel quadratic term `B(x, x)`.
    pub fn quadratic_term(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.d();
        let mut out = DVector::zeros(d);
        let mut q = 0;
        for i in 0..d {
            for j in i..d {
                let xij = x[i] * x[j];
                for c in 0..d {
                    out[c] += self.b[(c, q)] * xij;
                }
                q += 1;
            }
        }
        out
    }

    /// Deterministic drift `F - A x + B(x, x)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f - &self.a * x + self.quadratic_term(x)
    }
}

/// Linear operator of hidden level m, mapping the stacked state
/// `[x, r^(0), .., r^(m-1)]` to the drift of `r^(m-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOperator {
    /// 1-based level index.
    pub m: usize,
    /// d x (m+1)d coefficient matrix.
    pub l: DMatrix<f64>,
}

impl LevelOperator {
    /// Apply to a stacked state vector of length (m+1)d.
    pub fn apply(&self, stacked: &DVector<f64>) -> DVector<f64> {
        &self.l * stacked
    }
}

/// Driving-noise specification of the deepest level: the increment fed to
/// `r^(p-1)` per step is `factor * sqrt(dt) * xi` with standard normal xi.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Covariance of `r^(p) sqrt(dt)`.
    pub q: DMatrix<f64>,
    /// Lower-triangular root with `factor factor^T = Q` (up to 1e-10).
    pub factor: DMatrix<f64>,
    /// Sample mean of the last-level residual. The hidden levels carry no
    /// intercept, so when the observed series is not mean-free this residual
    /// has a structurally nonzero mean; simulation re-injects it as a
    /// constant drift (`mean * dt` per step) so the free-run equilibrium
    /// matches the training balance. Fluctuations around it are the white
    /// part drawn from Q.
    pub mean: DVector<f64>,
}

/// Thresholds of the level-recursion stopping criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    /// Target for the trial next-level R^2 (0.5 for a white residual).
    pub r2_target: f64,
    /// Half-width of the accepted R^2 window.
    pub r2_tolerance: f64,
    /// Bound on the absolute lag-1 autocorrelation per channel.
    pub lag1_tolerance: f64,
    /// Bound on the relative change of the residual covariance spectrum
    /// between consecutive levels.
    pub covariance_tolerance: f64,
    /// Hard cap on the number of hidden levels.
    pub max_levels: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            r2_target: 0.5,
            r2_tolerance: 0.05,
            lag1_tolerance: 0.05,
            covariance_tolerance: 0.05,
            max_levels: 20,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r2_tolerance > 0.0)
            || !(self.lag1_tolerance > 0.0)
            || !(self.covariance_tolerance > 0.0)
        {
            return Err(Error::config("stopping tolerances must be positive"));
        }
        if self.max_levels < 1 {
            return Err(Error::config("max_levels must be at least 1"));
        }
        Ok(())
    }
}

/// Per-level whiteness diagnostics recorded during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    /// Residual level index m (0 = main-level residual).
    pub level: usize,
    /// Lag-1 autocorrelation of r^(m), per channel.
    pub lag1_autocorrelation: Vec<f64>,
    /// Uncentered R^2 of the trial level-(m+1) regression, per channel.
    pub trial_r_squared: Vec<f64>,
    /// Covariance eigenvalues of r^(m), descending.
    pub covariance_eigenvalues: Vec<f64>,
    /// Largest dt^2-rescaled spectral change of the trial residual's
    /// covariance versus this level's, relative to the spectral radius.
    pub covariance_relative_change: f64,
    pub lag1_ok: bool,
    pub r_squared_ok: bool,
    pub covariance_ok: bool,
}

/// Why the level recursion ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    /// Residual at this level passed the whiteness test.
    Converged { level: usize },
    /// The hard cap was reached without convergence.
    MaxLevels { max_levels: usize },
}

/// Diagnostics for every fitted level plus the stop decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub levels: Vec<LevelDiagnostics>,
    pub stop_reason: StopReason,
}

/// Knobs of the full fitting pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EmrConfig {
    /// Relative ridge strength, applied to standardized coefficients (the
    /// design columns are equilibrated internally), so one value acts
    /// uniformly across levels whose scales differ by many orders of
    /// magnitude. `None` selects 1e-6 (conditioning floor); `Some(0.0)` is
    /// exact least squares.
    pub ridge: Option<f64>,
    /// Include the quadratic monomial block at the main level.
    pub quadratic: bool,
    pub stopping: StoppingConfig,
}

impl Default for EmrConfig {
    fn default() -> Self {
        EmrConfig {
            ridge: None,
            quadratic: true,
            stopping: StoppingConfig::default(),
        }
    }
}

/// A fitted multilevel model.
#[derive(Debug, Clone, PartialEq)]
pub struct EMRModel {
    pub main: QuadraticMainLevel,
    /// Hidden-level operators, levels[m-1] has index m.
    pub levels: Vec<LevelOperator>,
    pub noise: NoiseSpec,
    /// Sampling step the model was fitted at.
    pub dt: f64,
    /// Number of observed channels.
    pub d: usize,
    /// Observed channel names.
    pub names: Vec<String>,
    pub report: FitReport,
}

impl EMRModel {
    /// Number of hidden levels.
    pub fn p(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if self.main.f.len() != d
            || self.main.a.shape() != (d, d)
            || self.main.b.shape() != (d, quad_count(d))
        {
            return Err(Error::config("main-level shapes do not match d"));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.m != i + 1 {
                return Err(Error::config(format!(
                    "level {} stored at position {i}",
                    level.m
                )));
            }
            if level.l.shape() != (d, (level.m + 1) * d) {
                return Err(Error::config(format!(
                    "level {} operator has shape {:?}, expected ({d}, {})",
                    level.m,
                    level.l.shape(),
                    (level.m + 1) * d
                )));
            }
        }
        if self.noise.q.shape() != (d, d)
            || self.noise.factor.shape() != (d, d)
            || self.noise.mean.len() != d
        {
            return Err(Error::config("noise shapes do not match d"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("model dt must be positive"));
        }
        if self.names.len() != d {
            return Err(Error::config("channel name count does not match d"));
        }
        Ok(())
    }
}

/// Fit the quadratic main level by regressing `(x_{k+1} - x_k)/dt` on
/// `[1, x, x_i x_j]`, optionally under constraints on the grand parameter
/// vector. Returns the drift and the residual series r^(0) (N-1 rows).
pub fn fit_main_level(
    ts: &TimeSeries,
    constraints: Option<&ConstraintSet>,
    ridge: Option<f64>,
    quadratic: bool,
) -> Result<(QuadraticMainLevel, TimeSeries)> {
    let n = ts.len();
    let d = ts.dim();
    let targets = ts.finite_differences();
    let head = ts.head(n - 1)?;
    let design = build_design(
        &head,
        &[],
        DesignOptions {
            constant: true,
            quadratic,
        },
    )?;
    if n < 2 * design.m() {
        return Err(Error::config(format!(
            "main-level fit needs at least {} samples for {} predictors, got {n}",
            2 * design.m(),
            design.m()
        )));
    }
    let lambda = ridge.unwrap_or(DEFAULT_RIDGE);
    let sol = match constraints {
        Some(set) => constrained_least_squares(&design, &targets.data, set, lambda)?,
        None => least_squares(&design, &targets.data, lambda)?,
    };
    let qc = if quadratic { quad_count(d) } else { 0 };
    let mut f = DVector::zeros(d);
    let mut a = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, quad_count(d));
    for c in 0..d {
        f[c] = sol.coefficients[(0, c)];
        for j in 0..d {
            a[(c, j)] = -sol.coefficients[(1 + j, c)];
        }
        for q in 0..qc {
            b[(c, q)] = sol.coefficients[(1 + d + q, c)];
        }
    }
    let names = (1..=d).map(|c| format!("r0_{c}")).collect();
    let r0 = TimeSeries::new(sol.residuals, ts.dt, names, ts.t0)?;
    Ok((QuadraticMainLevel { f, a, b }, r0))
}

/// Shared core of the level fits: regress `(r^(m-1)_{k+1} - r^(m-1)_k)/dt`
/// on the stacked `[x, r^(0), .., r^(m-1)]`, trimmed to a common length.
fn level_regression(
    m: usize,
    x: &TimeSeries,
    residuals: &[TimeSeries],
    ridge: Option<f64>,
) -> Result<LsSolution> {
    if m < 1 {
        return Err(Error::config("level index is 1-based"));
    }
    if residuals.len() < m {
        return Err(Error::config(format!(
            "level {m} fit needs residuals r0..r{}, got {}",
            m - 1,
            residuals.len()
        )));
    }
    let d = x.dim();
    for r in &residuals[..m] {
        if r.dim() != d {
            return Err(Error::config("residual channel count mismatch"));
        }
    }
    let prev = &residuals[m - 1];
    let rows = prev.len() - 1;
    let targets = prev.finite_differences();
    let xh = x.head(rows)?;
    let extras: Vec<TimeSeries> = residuals[..m]
        .iter()
        .map(|r| r.head(rows))
        .collect::<Result<_>>()?;
    let refs: Vec<&TimeSeries> = extras.iter().collect();
    let design = build_level_design(&xh, &refs)?;
    least_squares(&design, &targets.data, ridge.unwrap_or(DEFAULT_RIDGE))
}

/// Fit hidden level m. `residuals` holds r^(0)..r^(m-1) aligned with `x`;
/// the fit consumes one trailing sample, so r^(m) is one row shorter than
/// r^(m-1).
pub fn fit_level(
    m: usize,
    x: &TimeSeries,
    residuals: &[TimeSeries],
    ridge: Option<f64>,
) -> Result<(LevelOperator, TimeSeries)> {
    let sol = level_regression(m, x, residuals, ridge)?;
    let d = x.dim();
    let names = (1..=d).map(|c| format!("r{m}_{c}")).collect();
    let prev = &residuals[m - 1];
    let r = TimeSeries::new(sol.residuals, prev.dt, names, prev.t0)?;
    Ok((
        LevelOperator {
            m,
            l: sol.coefficients.transpose(),
        },
        r,
    ))
}

/// Unbiased sample covariance of the columns of a data matrix.
fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let mut centered = data.clone();
    for c in 0..data.ncols() {
        let mean = centered.column(c).sum() / n as f64;
        centered.column_mut(c).add_scalar_mut(-mean);
    }
    centered.transpose() * &centered / (n as f64 - 1.0)
}

/// Covariance eigenvalues, descending and clamped to be nonnegative.
fn covariance_eigenvalues(data: &DMatrix<f64>) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(sample_covariance(data));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals
}

/// Whiteness test for the deepest residual in `residuals` (r^(0)..r^(m)).
///
/// Stops when every channel has |lag-1 autocorrelation| within tolerance,
/// the trial level-(m+1) R^2 sits in the window around the white-noise value
/// 0.5, and the covariance spectrum has converged: one level deeper, a white
/// residual is differentiated and rescaled by 1/dt, so the trial residual's
/// spectrum is multiplied by dt^2 before comparing it against the current
/// one. An identically zero residual stops immediately.
pub fn stopping_test(
    x: &TimeSeries,
    residuals: &[TimeSeries],
    config: &StoppingConfig,
    ridge: Option<f64>,
) -> Result<(bool, LevelDiagnostics)> {
    config.validate()?;
    if residuals.is_empty() {
        return Err(Error::config("stopping test needs at least r^(0)"));
    }
    let m = residuals.len() - 1;
    let last = &residuals[m];
    let d = last.dim();
    if last.len() < 100 {
        return Err(Error::config(format!(
            "stopping test needs at least 100 residual samples, got {}",
            last.len()
        )));
    }
    if last.data.amax() == 0.0 {
        return Ok((
            true,
            LevelDiagnostics {
                level: m,
                lag1_autocorrelation: vec![0.0; d],
                trial_r_squared: vec![1.0; d],
                covariance_eigenvalues: vec![0.0; d],
                covariance_relative_change: 0.0,
                lag1_ok: true,
                r_squared_ok: true,
                covariance_ok: true,
            },
        ));
    }

    let acf = last.acf(1)?;
    let lag1: Vec<f64> = (0..d).map(|c| acf.values[(1, c)]).collect();
    let lag1_ok = lag1.iter().all(|v| v.abs() <= config.lag1_tolerance);

    let trial = level_regression(m + 1, x, residuals, ridge)?;
    let trial_r2: Vec<f64> = trial.r_squared.iter().copied().collect();
    let r_squared_ok = trial_r2
        .iter()
        .all(|v| (v - config.r2_target).abs() <= config.r2_tolerance);

    let eig_curr = covariance_eigenvalues(&last.data);
    let eig_trial = covariance_eigenvalues(&trial.residuals);
    let dt2 = last.dt * last.dt;
    let scale = eig_curr[0].max(f64::MIN_POSITIVE);
    let covariance_relative_change = eig_trial
        .iter()
        .zip(&eig_curr)
        .map(|(t, c)| (t * dt2 - c).abs())
        .fold(0.0, f64::max)
        / scale;
    let covariance_ok = covariance_relative_change <= config.covariance_tolerance;

    let stop = lag1_ok && r_squared_ok && covariance_ok;
    Ok((
        stop,
        LevelDiagnostics {
            level: m,
            lag1_autocorrelation: lag1,
            trial_r_squared: trial_r2,
            covariance_eigenvalues: eig_curr,
            covariance_relative_change,
            lag1_ok,
            r_squared_ok,
            covariance_ok,
        },
    ))
}

/// Estimate the driving noise from the deepest residual: Q is the sample
/// covariance of `r^(p) sqrt(dt)`, factored so that `factor sqrt(dt) xi`
/// reproduces the fluctuating part of the per-step forcing `r^(p) dt`; the
/// residual's sample mean is kept alongside as the constant part.
pub fn estimate_noise(residual: &TimeSeries, dt: f64) -> Result<NoiseSpec> {
    let q = sample_covariance(&residual.data) * dt;
    let d = q.nrows();
    let n = residual.len() as f64;
    let mean = residual
        .data
        .row_iter()
        .fold(DVector::zeros(d), |acc, row| acc + row.transpose())
        / n;
    if q.amax() == 0.0 {
        return Ok(NoiseSpec {
            factor: DMatrix::zeros(d, d),
            q,
            mean,
        });
    }
    let factor = match nalgebra::Cholesky::new(q.clone()) {
        Some(chol) => chol.l(),
        None => {
            let mut jittered = q.clone();
            for i in 0..d {
                jittered[(i, i)] += 1e-12;
            }
            nalgebra::Cholesky::new(jittered)
                .ok_or_else(|| {
                    Error::numerical("noise covariance is not positive semidefinite")
                })?
                .l()
        }
    };
    Ok(NoiseSpec { q, factor, mean })
}

/// Run the full pipeline: main-level fit, then hidden levels until the
/// residual whitens or `max_levels` is reached, then noise estimation.
/// Deterministic: identical inputs give bit-identical models.
pub fn fit_emr(
    ts: &TimeSeries,
    constraints: Option<&ConstraintSet>,
    config: &EmrConfig,
) -> Result<EMRModel> {
    config.stopping.validate()?;
    let (main, r0) = fit_main_level(ts, constraints, config.ridge, config.quadratic)?;
    let mut residuals = vec![r0];
    let mut levels: Vec<LevelOperator> = Vec::new();
    let mut diagnostics = Vec::new();
    let stop_reason;
    loop {
        let m = residuals.len() - 1;
        let (stop, diag) = stopping_test(ts, &residuals, &config.stopping, config.ridge)?;
        diagnostics.push(diag);
        if stop {
            stop_reason = StopReason::Converged { level: m };
            break;
        }
        if m >= config.stopping.max_levels {
            stop_reason = StopReason::MaxLevels {
                max_levels: config.stopping.max_levels,
            };
            break;
        }
        let (op, r_next) = fit_level(m + 1, ts, &residuals, config.ridge)?;
        levels.push(op);
        residuals.push(r_next);
    }
    let noise = estimate_noise(residuals.last().unwrap(), ts.dt)?;
    let model = EMRModel {
        main,
        levels,
        noise,
        dt: ts.dt,
        d: ts.dim(),
        names: ts.names.clone(),
        report: FitReport {
            levels: diagnostics,
            stop_reason,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Assemble the linear operator over the stacked state
/// `(x, r^(0), .., r^(p-1))` — size d(p+1) — and return it with its
/// eigenvalues sorted by ascending real part.
pub fn grand_linear_operator(model: &EMRModel) -> Result<(DMatrix<f64>, Vec<Complex<f64>>)> {
    model.validate()?;
    let d = model.d;
    let p = model.p();
    let n = d * (p + 1);
    let mut g = DMatrix::zeros(n, n);
    g.view_mut((0, 0), (d, d)).copy_from(&(-&model.main.a));
    if p >= 1 {
        g.view_mut((0, d), (d, d)).fill_with_identity();
    }
    for level in &model.levels {
        let i = level.m;
        g.view_mut((i * d, 0), (d, (i + 1) * d)).copy_from(&level.l);
        if i < p {
            g.view_mut((i * d, (i + 1) * d), (d, d)).fill_with_identity();
        }
    }
    let eigenvalues = balanced_eigenvalues(&g, 100 * n)?;
    Ok((g, eigenvalues))
}

/// Eigenvalues of a real square matrix, sorted by ascending real part.
/// Balances first (Parlett-Reinsch diagonal similarity in powers of two),
/// which is exact and essential when entries span many orders of magnitude,
/// as the grand operator's level blocks do.
pub fn balanced_eigenvalues(a: &DMatrix<f64>, max_sweeps: usize) -> Result<Vec<Complex<f64>>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::config("eigenvalues need a square matrix"));
    }
    let mut b = a.clone();
    let radix: f64 = 2.0;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 || !(c + r).is_finite() {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / radix {
                c *= radix * radix;
                f *= radix;
            }
            while c > r * radix {
                c /= radix * radix;
                f /= radix;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                }
                for j in 0..n {
                    b[(j, i)] *= f;
                }
            }
        }
    }
    let schur = nalgebra::Schur::try_new(b, f64::EPSILON, max_sweeps)
        .ok_or_else(|| Error::numerical("eigenvalue iteration did not converge"))?;
    let mut eigenvalues: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    Ok(eigenvalues)
}

/// Conservation and dissipativity audit of a main level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    /// max over 1000 random unit x of |<B(x,x), x>|.
    pub max_cubic_form: f64,
    /// Largest violation among the energy equality constraints.
    pub max_equality_violation: f64,
    /// Smallest diagonal entry of A.
    pub min_diagonal_a: f64,
}

/// Measure how far a main level is from energy conservation: the cubic form
/// `<B(x,x), x>` sampled on random unit vectors, the equality-constraint
/// residuals, and the smallest diagonal of A.
pub fn energy_audit(main: &QuadraticMainLevel) -> EnergyAudit {
    let d = main.d();
    let mut rng = Rng64::from_seed(0x0ddc_0ffe);
    let mut max_cubic: f64 = 0.0;
    for _ in 0..1000 {
        let mut x = DVector::from_fn(d, |_, _| rng.standard_normal());
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        x /= norm;
        max_cubic = max_cubic.max(main.quadratic_term(&x).dot(&x).abs());
    }

    // Reconstruct the grand design coefficients to evaluate the equalities.
    let m = 1 + d + quad_count(d);
    let mut grand = vec![0.0; m * d];
    for c in 0..d {
        grand[c * m] = main.f[c];
        for j in 0..d {
            grand[c * m + 1 + j] = -main.a[(c, j)];
        }
        for q in 0..quad_count(d) {
            grand[c * m + 1 + d + q] = main.b[(c, q)];
        }
    }
    let mut max_violation: f64 = 0.0;
    for eq in &crate::regression::energy_constraints(d).equalities {
        let acc: f64 = eq
            .coefficients
            .iter()
            .map(|&(idx, coef)| coef * grand[idx])
            .sum();
        max_violation = max_violation.max((acc - eq.rhs).abs());
    }
    let min_diag = (0..d).map(|i| main.a[(i, i)]).fold(f64::INFINITY, f64::min);
    EnergyAudit {
        max_cubic_form: max_cubic,
        max_equality_violation: max_violation,
        min_diagonal_a: min_diag,
    }
}

const SCHEMA_VERSION: u32 = 1;
const SIGN_CONVENTION: &str = "drift(x) = F - A*x + B(x,x); level m: d(r^(m-1))/dt = \
     L^(m)*[x, r^(0), .., r^(m-1)] + r^(m); noise: r^(p)*dt = chol(Q)*sqrt(dt)*xi";

#[derive(Serialize, Deserialize)]
struct LevelDoc {
    level: usize,
    /// Row-major d x (level+1)d operator.
    rows: Vec<Vec<f64>>,
}

/// On-disk model document. JSON with shortest-roundtrip floats, so
/// save/load is lossless.
#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u32,
    sign_convention: String,
    d: usize,
    p: usize,
    dt: f64,
    channel_names: Vec<String>,
    forcing: Vec<f64>,
    /// A, row-major; drift uses -A x.
    linear: Vec<Vec<f64>>,
    /// Quadratic monomial coefficients per channel, i <= j lexicographic.
    quadratic: Vec<Vec<f64>>,
    levels: Vec<LevelDoc>,
    noise_covariance: Vec<Vec<f64>>,
    noise_factor: Vec<Vec<f64>>,
    noise_mean: Vec<f64>,
    report: FitReport,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!(
            "{what}: expected {nrows}x{ncols} rows"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

/// Serialize a model to a self-describing versioned JSON document.
pub fn save_model(model: &EMRModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let doc = ModelDocument {
        schema_version: SCHEMA_VERSION,
        sign_convention: SIGN_CONVENTION.to_string(),
        d: model.d,
        p: model.p(),
        dt: model.dt,
        channel_names: model.names.clone(),
        forcing: model.main.f.iter().copied().collect(),
        linear: matrix_rows(&model.main.a),
        quadratic: matrix_rows(&model.main.b),
        levels: model
            .levels
            .iter()
            .map(|lv| LevelDoc {
                level: lv.m,
                rows: matrix_rows(&lv.l),
            })
            .collect(),
        noise_covariance: matrix_rows(&model.noise.q),
        noise_factor: matrix_rows(&model.noise.factor),
        noise_mean: model.noise.mean.iter().copied().collect(),
        report: model.report.clone(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::config(format!("model serialization: {e}")))?;
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Load a model saved by [`save_model`], validating schema version, sign
/// convention, and shapes.
pub fn load_model(path: impl AsRef<Path>) -> Result<EMRModel> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let doc: ModelDocument =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("model parse: {e}")))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!(
            "unsupported model schema version {}, expected {SCHEMA_VERSION}",
            doc.schema_version
        )));
    }
    if doc.sign_convention != SIGN_CONVENTION {
        return Err(Error::config(
            "model sign convention does not match this implementation",
        ));
    }
    let d = doc.d;
    if doc.forcing.len() != d {
        return Err(Error::config("forcing length does not match d"));
    }
    if doc.levels.len() != doc.p {
        return Err(Error::config("level count does not match p"));
    }
    let mut levels = Vec::with_capacity(doc.p);
    for (i, lv) in doc.levels.iter().enumerate() {
        if lv.level != i + 1 {
            return Err(Error::config(format!(
                "level {} stored at position {i}",
                lv.level
            )));
        }
        levels.push(LevelOperator {
            m: lv.level,
            l: rows_matrix(&lv.rows, d, (lv.level + 1) * d, "level operator")?,
        });
    }
    let model = EMRModel {
        main: QuadraticMainLevel {
            f: DVector::from_vec(doc.forcing),
            a: rows_matrix(&doc.linear, d, d, "linear part")?,
            b: rows_matrix(&doc.quadratic, d, quad_count(d), "quadratic part")?,
        },
        levels,
        noise: NoiseSpec {
            q: rows_matrix(&doc.noise_covariance, d, d, "noise covariance")?,
            factor: rows_matrix(&doc.noise_factor, d, d, "noise factor")?,
            mean: {
                if doc.noise_mean.len() != d {
                    return Err(Error::config("noise mean length does not match d"));
                }
                DVector::from_vec(doc.noise_mean.clone())
            },
        },
        dt: doc.dt,
        d,
        names: doc.channel_names,
        report: doc.report,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(data: DMatrix<f64>, dt: f64) -> TimeSeries {
        let names = (0..data.ncols()).map(|c| format!("x{}", c + 1)).collect();
        TimeSeries::new(data, dt, names, 0.0).unwrap()
    }

    fn toy_model(d: usize, a: DMatrix<f64>, levels: Vec<LevelOperator>) -> EMRModel {
        EMRModel {
            main: QuadraticMainLevel {
                f: DVector::zeros(d),
                a,
                b: DMatrix::zeros(d, quad_count(d)),
            },
            levels,
            noise: NoiseSpec {
                q: DMatrix::identity(d, d),
                factor: DMatrix::identity(d, d),
                mean: DVector::zeros(d),
            },
            dt: 0.001,
            d,
            names: (1..=d).map(|c| format!("x{c}")).collect(),
            report: FitReport {
                levels: vec![],
                stop_reason: StopReason::Converged { level: 0 },
            },
        }
    }

    #[test]
    fn constant_drift_is_recovered_exactly() {
        // x_{k+1} = x_k + F dt exactly; d=1 keeps [1, x, x^2] full rank.
        let dt = 0.1f64;
        let f_true = 0.3;
        let n = 60;
        let data = DMatrix::from_fn(n, 1, |k, _| 0.7 + f_true * k as f64 * dt);
        let ts = series(data, dt);
        let (main, r0) = fit_main_level(&ts, None, Some(0.0), true).unwrap();
        assert!((main.f[0] - f_true).abs() < 1e-8);
        assert!(main.a[(0, 0)].abs() < 1e-8);
        assert!(main.b.amax() < 1e-8);
        assert!(r0.data.amax() < 1e-8);
    }

    #[test]
    fn rotation_linear_part_within_discretization_error() {
        // Exact circle samples; the finite-difference drift biases A by O(dt).
        let dt = 1e-4;
        let n = 62_832;
        let data = DMatrix::from_fn(n, 2, |k, c| {
            let t = k as f64 * dt;
            if c == 0 {
                t.cos()
            } else {
                t.sin()
            }
        });
        let ts = series(data, dt);
        // x1^2 + x2^2 = 1 duplicates the constant column, so rely on the
        // default ridge; the linear block stays identifiable.
        let (main, _) = fit_main_level(&ts, None, None, true).unwrap();
        let minus_a = -&main.a;
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(
            (minus_a - expected).amax() < 1e-3,
            "linear part off by {}",
            (-&main.a - DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).amax()
        );
    }

    #[test]
    fn zero_residual_level_gives_zero_operator() {
        let mut rng = Rng64::from_seed(5);
        let x = series(DMatrix::from_fn(500, 2, |_, _| rng.standard_normal()), 0.1);
        let r0 = TimeSeries::new(
            DMatrix::zeros(499, 2),
            0.1,
            vec!["r0_1".into(), "r0_2".into()],
            0.0,
        )
        .unwrap();
        let (op, r1) = fit_level(1, &x, &[r0], None).unwrap();
        assert!(op.l.amax() < 1e-12);
        assert!(r1.data.amax() < 1e-12);
    }

    #[test]
    fn exact_linear_level_is_recovered() {
        // r^(0) generated by dr/dt = C x + D r with no innovation.
        let dt = 0.05f64;
        let n = 400;
        let c_true = DMatrix::from_row_slice(2, 2, &[0.4, -0.2, 0.1, 0.3]);
        let d_true = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -0.8]);
        let mut rng = Rng64::from_seed(9);
        let x = series(DMatrix::from_fn(n, 2, |_, _| rng.standard_normal()), dt);
        let mut r = DMatrix::zeros(n, 2);
        r[(0, 0)] = 0.3;
        r[(0, 1)] = -0.1;
        for k in 0..n - 1 {
            let xk = x.data.row(k).transpose();
            let rk = r.row(k).transpose();
            let drift = &c_true * xk + &d_true * rk;
            for c in 0..2 {
                r[(k + 1, c)] = r[(k, c)] + drift[c] * dt;
            }
        }
        let r0 = TimeSeries::new(r, dt, vec!["r0_1".into(), "r0_2".into()], 0.0).unwrap();
        let (op, r1) = fit_level(1, &x, &[r0], Some(0.0)).unwrap();
        let recovered_c = op.l.columns(0, 2).into_owned();
        let recovered_d = op.l.columns(2, 2).into_owned();
        assert!((recovered_c - c_true).amax() < 1e-8);
        assert!((recovered_d - d_true).amax() < 1e-8);
        assert!(r1.data.amax() < 1e-8);
    }

    #[test]
    fn white_residual_fits_negative_identity_self_block() {
        // For white r at dt=1, r_{k+1} - r_k = -r_k + innovation, so the
        // self block of the next level approaches -I.
        let n = 20_000;
        let mut rng = Rng64::from_seed(13);
        let x = series(DMatrix::from_fn(n, 2, |_, _| rng.standard_normal()), 1.0);
        let r0 = TimeSeries::new(
            DMatrix::from_fn(n - 1, 2, |_, _| rng.standard_normal()),
            1.0,
            vec!["r0_1".into(), "r0_2".into()],
            0.0,
        )
        .unwrap();
        let (op, _) = fit_level(1, &x, &[r0], None).unwrap();
        let self_block = op.l.columns(2, 2).into_owned();
        let target = -DMatrix::<f64>::identity(2, 2);
        assert!(
            (self_block.clone() - target).amax() < 0.05,
            "self block {self_block}"
        );
    }

    #[test]
    fn stopping_accepts_white_and_rejects_ar1() {
        let n = 100_000;
        let mut rng = Rng64::from_seed(17);
        let x = series(DMatrix::from_fn(n, 1, |_, _| rng.standard_normal()), 1.0);

        let white = TimeSeries::new(
            DMatrix::from_fn(n - 1, 1, |_, _| rng.standard_normal()),
            1.0,
            vec!["r0_1".into()],
            0.0,
        )
        .unwrap();
        let (stop, diag) =
            stopping_test(&x, &[white], &StoppingConfig::default(), None).unwrap();
        assert!(stop, "white residual should stop: {diag:?}");
        assert!((diag.trial_r_squared[0] - 0.5).abs() < 0.02);
        // dt = 1 here, so the trial spectrum matches the residual's own.
        assert!(diag.covariance_relative_change < 0.05);

        let mut ar = DMatrix::zeros(n - 1, 1);
        for k in 1..n - 1 {
            ar[(k, 0)] = 0.9 * ar[(k - 1, 0)] + rng.standard_normal();
        }
        let ar1 = TimeSeries::new(ar, 1.0, vec!["r0_1".into()], 0.0).unwrap();
        let (stop, diag) = stopping_test(&x, &[ar1], &StoppingConfig::default(), None).unwrap();
        assert!(!stop);
        assert!(diag.lag1_autocorrelation[0] > 0.8);
        assert!(!diag.lag1_ok);
    }

    #[test]
    fn stopping_requires_enough_samples() {
        let x = series(DMatrix::from_fn(50, 1, |k, _| k as f64), 1.0);
        let short = TimeSeries::new(
            DMatrix::from_fn(10, 1, |k, _| k as f64),
            1.0,
            vec!["r0_1".into()],
            0.0,
        )
        .unwrap();
        assert!(stopping_test(&x, &[short], &StoppingConfig::default(), None).is_err());
    }

    #[test]
    fn noise_estimate_round_trip() {
        // r = xi / sqrt(dt), so r sqrt(dt) ~ N(0, I) and Q should be I.
        let dt = 0.05f64;
        let n = 100_000;
        let mut rng = Rng64::from_seed(21);
        let scale = 1.0 / dt.sqrt();
        let r = TimeSeries::new(
            DMatrix::from_fn(n, 2, |_, _| scale * rng.standard_normal()),
            dt,
            vec!["r_1".into(), "r_2".into()],
            0.0,
        )
        .unwrap();
        let noise = estimate_noise(&r, dt).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((noise.q.clone() - eye).amax() < 0.02, "Q = {}", noise.q);
        let recomposed = &noise.factor * noise.factor.transpose();
        assert!((recomposed - &noise.q).amax() < 1e-10);
    }

    #[test]
    fn noise_estimate_zero_and_correlated() {
        let zero = TimeSeries::new(
            DMatrix::zeros(100, 2),
            0.1,
            vec!["r_1".into(), "r_2".into()],
            0.0,
        )
        .unwrap();
        let noise = estimate_noise(&zero, 0.1).unwrap();
        assert_eq!(noise.q.amax(), 0.0);
        assert_eq!(noise.factor.amax(), 0.0);

        // Correlation 0.5 between channels survives into Q.
        let n = 100_000;
        let mut rng = Rng64::from_seed(25);
        let mut data = DMatrix::zeros(n, 2);
        for k in 0..n {
            let e1 = rng.standard_normal();
            let e2 = rng.standard_normal();
            data[(k, 0)] = e1;
            data[(k, 1)] = 0.5 * e1 + (0.75f64).sqrt() * e2;
        }
        let r = TimeSeries::new(data, 0.2, vec!["r_1".into(), "r_2".into()], 0.0).unwrap();
        let noise = estimate_noise(&r, 0.2).unwrap();
        let expected = 0.5 * (noise.q[(0, 0)] * noise.q[(1, 1)]).sqrt();
        assert!((noise.q[(0, 1)] - expected).abs() < 0.02 * expected.abs().max(1.0));
    }

    #[test]
    fn white_driven_linear_series_needs_few_levels() {
        // Euler-generated OU data: the main-level residual is already white.
        let dt = 0.1f64;
        let n = 20_000;
        let mut rng = Rng64::from_seed(29);
        let mut data = DMatrix::zeros(n, 1);
        for k in 0..n - 1 {
            data[(k + 1, 0)] =
                data[(k, 0)] - 0.8 * data[(k, 0)] * dt + 0.5 * dt.sqrt() * rng.standard_normal();
        }
        let ts = series(data, dt);
        let config = EmrConfig::default();
        let model = fit_emr(&ts, None, &config).unwrap();
        assert!(model.p() <= 2, "p = {}", model.p());
        let last = model.report.levels.last().unwrap();
        assert!((last.trial_r_squared[0] - 0.5).abs() <= 0.05);
        assert!(matches!(
            model.report.stop_reason,
            StopReason::Converged { .. }
        ));

        // Determinism: refitting gives a bit-identical model.
        let again = fit_emr(&ts, None, &config).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn residuals_orthogonal_to_predictors() {
        let dt = 0.1f64;
        let n = 5_000;
        let mut rng = Rng64::from_seed(33);
        let mut data = DMatrix::zeros(n, 1);
        for k in 0..n - 1 {
            data[(k + 1, 0)] =
                data[(k, 0)] - 0.5 * data[(k, 0)] * dt + dt.sqrt() * rng.standard_normal();
        }
        let ts = series(data, dt);
        let (_, r0) = fit_main_level(&ts, None, Some(0.0), true).unwrap();
        // r^(0) is orthogonal to [1, x, x^2] over the fit window.
        let rows = r0.len();
        let r0col = r0.data.column(0);
        for power in 0..=2u32 {
            let col = DVector::from_fn(rows, |k, _| ts.data[(k, 0)].powi(power as i32));
            let cosine = col.dot(&r0col) / (col.norm() * r0col.norm());
            assert!(cosine.abs() < 1e-8, "power {power}: {cosine}");
        }
        // One level deeper: r^(1) orthogonal to x and r^(0).
        let (_, r1) = fit_level(1, &ts, std::slice::from_ref(&r0), Some(0.0)).unwrap();
        let rows1 = r1.len();
        let r1col = r1.data.column(0);
        for col in [
            DVector::from_fn(rows1, |k, _| ts.data[(k, 0)]),
            DVector::from_fn(rows1, |k, _| r0.data[(k, 0)]),
        ] {
            let cosine = col.dot(&r1col) / (col.norm() * r1col.norm());
            assert!(cosine.abs() < 1e-8, "{cosine}");
        }
    }

    #[test]
    fn grand_operator_reduces_to_minus_a_without_levels() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let model = toy_model(2, a, vec![]);
        let (g, eig) = grand_linear_operator(&model).unwrap();
        assert_eq!(g.shape(), (2, 2));
        assert!((eig[0].re + 3.0).abs() < 1e-10 && eig[0].im.abs() < 1e-12);
        assert!((eig[1].re + 1.0).abs() < 1e-10 && eig[1].im.abs() < 1e-12);
    }

    #[test]
    fn one_level_grand_operator_has_expected_spectrum() {
        // [[-2, 1], [1, -1]] has characteristic polynomial l^2 + 3l + 1,
        // hence eigenvalues (-3 +- sqrt(5))/2.
        let a = DMatrix::from_element(1, 1, 2.0);
        let level = LevelOperator {
            m: 1,
            l: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        };
        let model = toy_model(1, a, vec![level]);
        let (g, eig) = grand_linear_operator(&model).unwrap();
        assert_eq!(g[(0, 0)], -2.0);
        assert_eq!(g[(0, 1)], 1.0);
        assert_eq!(g[(1, 0)], 1.0);
        assert_eq!(g[(1, 1)], -1.0);
        let expected = [(-3.0 - 5.0f64.sqrt()) / 2.0, (-3.0 + 5.0f64.sqrt()) / 2.0];
        for (have, want) in eig.iter().zip(expected) {
            assert!((have.re - want).abs() < 1e-10, "{have} vs {want}");
            assert!(have.im.abs() < 1e-12);
        }
    }

    #[test]
    fn energy_audit_on_hand_built_conserving_b() {
        // B with coefficient +1 on x2^2 in channel 1 and -1 on x1*x2 in
        // channel 2: <B(x,x), x> = x1 x2^2 - x2 x1 x2 = 0 identically.
        let d = 2;
        let mut b = DMatrix::zeros(d, quad_count(d));
        b[(0, crate::regression::quad_index(1, 1, d))] = 1.0;
        b[(1, crate::regression::quad_index(0, 1, d))] = -1.0;
        let main = QuadraticMainLevel {
            f: DVector::zeros(d),
            a: DMatrix::identity(d, d),
            b,
        };
        let audit = energy_audit(&main);
        assert!(audit.max_cubic_form < 1e-14);
        assert!((audit.min_diagonal_a - 1.0).abs() < 1e-14);

        // A generic quadratic term leaks energy.
        let mut b = DMatrix::zeros(d, quad_count(d));
        b[(0, 0)] = 1.0;
        let leaky = QuadraticMainLevel {
            f: DVector::zeros(d),
            a: DMatrix::identity(d, d),
            b,
        };
        assert!(energy_audit(&leaky).max_cubic_form > 1e-3);
    }

    #[test]
    fn model_document_round_trip_is_lossless() {
        let dt = 0.1f64;
        let n = 2_000;
        let mut rng = Rng64::from_seed(37);
        let mut data = DMatrix::zeros(n, 2);
        for k in 0..n - 1 {
            for c in 0..2 {
                data[(k + 1, c)] = data[(k, c)] - 0.6 * data[(k, c)] * dt
                    + 0.3 * dt.sqrt() * rng.standard_normal();
            }
        }
        let ts = series(data, dt);
        let model = fit_emr(&ts, None, &EmrConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);

        // Version and convention mismatches are rejected.
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replace("\"schema_version\": 1", "\"schema_version\": 99");
        std::fs::write(&path, tampered).unwrap();
        assert!(load_model(&path).is_err());
        let tampered = text.replace("drift(x) = F - A*x", "drift(x) = F + A*x");
        std::fs::write(&path, tampered).unwrap();
        assert!(load_model(&path).is_err());
    }
}
