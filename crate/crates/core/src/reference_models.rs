//! Ground-truth generators used throughout the test suite and the
//! reproduction studies: a four-variable slow/fast stochastic climate model
//! with an energy-conserving quadratic part, the four-species competitive
//! Lotka-Volterra system, a two-variable linear SDE whose reduced closure is
//! known analytically, and the Gamma-kernel linear-chain expansion that turns
//! an integro-differential population model into ODEs.

use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::timeseries::TimeSeries;
use nalgebra::{DMatrix, DVector};

// ---------------------------------------------------------------------------
// Slow/fast stochastic climate model
// ---------------------------------------------------------------------------

/// Parameters of the four-variable model with slow channels (x1, x2) and
/// fast channels (y1, y2). The quadratic part conserves energy when each
/// triple-coefficient family sums to zero and a1 = -a2; dissipation enters
/// through d1, d2 and the gamma/epsilon diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClimateParams {
    pub b123: f64,
    pub b213: f64,
    pub b312: f64,
    pub c134: f64,
    pub c341: f64,
    pub c413: f64,
    pub l12: f64,
    pub l21: f64,
    pub l24: f64,
    pub l13: f64,
    pub a1: f64,
    pub a2: f64,
    pub d1: f64,
    pub d2: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Time-scale separation between slow and fast channels.
    pub epsilon: f64,
}

impl ClimateParams {
    /// Standard parameter set at the given scale separation.
    pub fn standard(epsilon: f64) -> Self {
        ClimateParams {
            b123: 0.25,
            b213: 0.25,
            b312: -0.5,
            c134: 0.25,
            c341: 0.25,
            c413: -0.5,
            l12: 1.0,
            l21: 1.0,
            l24: 1.0,
            l13: -1.0,
            a1: 1.0,
            a2: -1.0,
            d1: 0.2,
            d2: 0.1,
            f1: -0.25,
            f2: 0.0,
            f3: 0.0,
            f4: 0.0,
            gamma1: 1.0,
            gamma2: 1.0,
            sigma1: 1.0,
            sigma2: 1.0,
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b123, self.b213, self.b312, self.c134, self.c341, self.c413, self.l12, self.l21,
            self.l24, self.l13, self.a1, self.a2, self.d1, self.d2, self.f1, self.f2, self.f3,
            self.f4, self.gamma1, self.gamma2, self.sigma1, self.sigma2, self.epsilon,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("climate parameters must be finite"));
        }
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0) {
            return Err(Error::config("gamma1 and gamma2 must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.sigma1 < 0.0 || self.sigma2 < 0.0 {
            return Err(Error::config("sigma1 and sigma2 must be nonnegative"));
        }
        Ok(())
    }
}

impl Default for ClimateParams {
    fn default() -> Self {
        ClimateParams::standard(1.0)
    }
}

/// Full drift of the climate model at state u = (x1, x2, y1, y2).
fn climate_drift(p: &ClimateParams, u: &[f64; 4]) -> [f64; 4] {
    let [x1, x2, y1, y2] = *u;
    let ge1 = p.gamma1 / p.epsilon;
    let ge2 = p.gamma2 / p.epsilon;
    [
        -x2 * (p.l12 + p.a1 * x1 + p.a2 * x2) - p.d1 * x1 + p.f1
            + p.l13 * y1
            + p.b123 * x2 * y1
            + p.c134 * y1 * y2,
        x1 * (p.l21 + p.a1 * x1 + p.a2 * x2) - p.d2 * x2 + p.f2 + p.l24 * y2 + p.b213 * x1 * y1,
        -p.l13 * x1 + p.b312 * x1 * x2 + p.c341 * y2 * x1 + p.f3 - ge1 * y1,
        -p.l24 * x2 + p.c413 * y1 * x1 + p.f4 - ge2 * y2,
    ]
}

/// The purely quadratic terms of the drift, used to check that the nonlinear
/// part conserves energy: the cubic form <Q(u), u> vanishes identically.
pub fn climate_quadratic_part(p: &ClimateParams, u: &DVector<f64>) -> DVector<f64> {
    let (x1, x2, y1, y2) = (u[0], u[1], u[2], u[3]);
    DVector::from_vec(vec![
        -x2 * (p.a1 * x1 + p.a2 * x2) + p.b123 * x2 * y1 + p.c134 * y1 * y2,
        x1 * (p.a1 * x1 + p.a2 * x2) + p.b213 * x1 * y1,
        p.b312 * x1 * x2 + p.c341 * y2 * x1,
        p.c413 * y1 * x1,
    ])
}

fn rk4_step4(p: &ClimateParams, u: &[f64; 4], dt: f64) -> [f64; 4] {
    let add = |u: &[f64; 4], k: &[f64; 4], s: f64| {
        [u[0] + s * k[0], u[1] + s * k[1], u[2] + s * k[2], u[3] + s * k[3]]
    };
    let k1 = climate_drift(p, u);
    let k2 = climate_drift(p, &add(u, &k1, dt / 2.0));
    let k3 = climate_drift(p, &add(u, &k2, dt / 2.0));
    let k4 = climate_drift(p, &add(u, &k3, dt));
    [
        u[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        u[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        u[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        u[3] + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    ]
}

/// Time-stepping scheme for the climate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimateScheme {
    /// Fourth-order Runge-Kutta on the drift, Euler-Maruyama noise add-on.
    Rk4Noise,
    /// Plain Euler-Maruyama, for convergence comparisons.
    EulerMaruyama,
}

/// Integrate the climate model from the origin for `duration` time units at
/// step `dt`, recording every `sample_dt` (an integer multiple of `dt`).
/// Returns the full four-channel record and the observed slow pair (x1, x2).
/// The noise increments `sigma_i/sqrt(epsilon) * sqrt(dt) * xi` act on the
/// fast channels each step.
pub fn simulate_climate(
    params: &ClimateParams,
    duration: f64,
    dt: f64,
    sample_dt: f64,
    seed: u64,
) -> Result<(TimeSeries, TimeSeries)> {
    simulate_climate_with_scheme(params, duration, dt, sample_dt, seed, ClimateScheme::Rk4Noise)
}

pub fn simulate_climate_with_scheme(
    params: &ClimateParams,
    duration: f64,
    dt: f64,
    sample_dt: f64,
    seed: u64,
    scheme: ClimateScheme,
) -> Result<(TimeSeries, TimeSeries)> {
    params.validate()?;
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::config("duration and dt must be positive"));
    }
    let stride_f = sample_dt / dt;
    let stride = stride_f.round() as usize;
    if stride < 1 || (stride_f - stride as f64).abs() > 1e-9 * stride_f {
        return Err(Error::config(format!(
            "sample_dt {sample_dt} is not an integer multiple of dt {dt}"
        )));
    }
    let steps = (duration / dt).round() as usize;
    if steps < 2 * stride {
        return Err(Error::config("duration too short for the sampling rate"));
    }

    let mut rng = Rng64::from_seed(seed);
    let sqrt_dt = dt.sqrt();
    let amp1 = params.sigma1 / params.epsilon.sqrt();
    let amp2 = params.sigma2 / params.epsilon.sqrt();
    let mut u = [0.0f64; 4];
    let n_rows = steps / stride + 1;
    let mut full = DMatrix::zeros(n_rows, 4);
    let mut row = 0;
    for k in 0..=steps {
        if k % stride == 0 {
            for c in 0..4 {
                full[(row, c)] = u[c];
            }
            row += 1;
        }
        if k == steps {
            break;
        }
        u = match scheme {
            ClimateScheme::Rk4Noise => rk4_step4(params, &u, dt),
            ClimateScheme::EulerMaruyama => {
                let f = climate_drift(params, &u);
                [u[0] + dt * f[0], u[1] + dt * f[1], u[2] + dt * f[2], u[3] + dt * f[3]]
            }
        };
        u[2] += amp1 * sqrt_dt * rng.standard_normal();
        u[3] += amp2 * sqrt_dt * rng.standard_normal();
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "climate state became non-finite at step {}",
                k + 1
            )));
        }
    }
    debug_assert_eq!(row, n_rows);
    let names: Vec<String> = ["x1", "x2", "y1", "y2"].iter().map(|s| s.to_string()).collect();
    let full_ts = TimeSeries::new(full, sample_dt, names, 0.0)?;
    let observed = full_ts.select_channels(&[0, 1])?;
    Ok((full_ts, observed))
}

/// Residuals of the structural energy identities of the climate model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateEnergyReport {
    /// b123 + b213 + b312.
    pub triple_b: f64,
    /// c134 + c341 + c413.
    pub triple_c: f64,
    /// Largest off-diagonal symmetric part of the linear coupling matrix
    /// (dissipation excluded); zero means exact pairwise skew-symmetry.
    pub skew_max_abs: f64,
    pub conservative: bool,
}

/// Check the triple-coefficient sums and the skew pairing of the linear
/// coupling terms. Passing (all residuals zero) means the quadratic part
/// conserves energy and the linear coupling neither creates nor destroys it.
pub fn climate_energy_check(params: &ClimateParams) -> ClimateEnergyReport {
    let triple_b = params.b123 + params.b213 + params.b312;
    let triple_c = params.c134 + params.c341 + params.c413;
    // Linear coupling without the dissipative diagonal.
    let m = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, -params.l12, params.l13, 0.0, //
            params.l21, 0.0, 0.0, params.l24, //
            -params.l13, 0.0, 0.0, 0.0, //
            0.0, -params.l24, 0.0, 0.0,
        ],
    );
    let sym = &m + m.transpose();
    let mut skew_max_abs = 0.0f64;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                skew_max_abs = skew_max_abs.max(sym[(i, j)].abs());
            }
        }
    }
    // a-terms cancel pairwise only when a1 = -a2.
    let a_residual = (params.a1 + params.a2).abs();
    let tol = 1e-12;
    let conservative =
        triple_b.abs() <= tol && triple_c.abs() <= tol && skew_max_abs <= tol && a_residual <= tol;
    ClimateEnergyReport {
        triple_b,
        triple_c,
        skew_max_abs,
        conservative,
    }
}

// ---------------------------------------------------------------------------
// Competitive Lotka-Volterra system
// ---------------------------------------------------------------------------

/// Parameters of dN_i/dt = b_i N_i (1 - sum_j a_ij N_j) with nonnegative
/// interactions and unit intraspecific coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LVParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LVParams {
    /// Four-species parameter set with established chaotic dynamics.
    pub fn standard() -> Self {
        LVParams {
            a: DMatrix::from_row_slice(
                4,
                4,
                &[
                    1.0, 1.09, 1.52, 0.0, //
                    0.0, 1.0, 0.44, 1.36, //
                    2.33, 0.0, 1.0, 0.47, //
                    1.21, 0.51, 0.35, 1.0,
                ],
            ),
            b: DVector::from_vec(vec![1.0, 0.72, 1.53, 1.27]),
        }
    }

    /// The initial populations used for the chaotic reference run.
    pub fn standard_n0() -> DVector<f64> {
        DVector::from_vec(vec![0.5, 0.2, 0.3, 0.7])
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.b.len();
        if self.a.nrows() != n || self.a.ncols() != n {
            return Err(Error::config("interaction matrix must be square and match b"));
        }
        if self.a.iter().any(|v| !v.is_finite()) || self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("parameters must be finite"));
        }
        for i in 0..n {
            if (self.a[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::config(format!(
                    "intraspecific coefficient a[{i}][{i}] must be 1"
                )));
            }
        }
        if self.a.iter().any(|&v| v < 0.0) {
            return Err(Error::config("interactions must be nonnegative"));
        }
        if self.b.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("growth rates must be positive"));
        }
        Ok(())
    }
}

/// Interior coexistence point N* solving a N* = 1 (all growth terms vanish).
pub fn lv_coexistence_point(params: &LVParams) -> Result<DVector<f64>> {
    params.validate()?;
    let ones = DVector::from_element(params.dim(), 1.0);
    params
        .a
        .clone()
        .lu()
        .solve(&ones)
        .ok_or_else(|| Error::numerical("interaction matrix is singular"))
}

/// Euler integration of the competitive system. Initial populations must be
/// nonnegative; the integration aborts if any component turns negative,
/// which signals a step size or parameter misuse (blow-up follows).
pub fn simulate_lv(
    params: &LVParams,
    n0: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<TimeSeries> {
    params.validate()?;
    let n = params.dim();
    if n0.len() != n {
        return Err(Error::config("N0 dimension does not match parameters"));
    }
    if n0.iter().any(|&v| v < 0.0) {
        return Err(Error::config("N0 must be componentwise nonnegative"));
    }
    if !(dt > 0.0) || steps < 1 {
        return Err(Error::config("dt must be positive and steps at least 1"));
    }
    let mut state = n0.clone();
    let mut data = DMatrix::zeros(steps + 1, n);
    data.row_mut(0).copy_from(&state.transpose());
    for k in 0..steps {
        let interaction = &params.a * &state;
        for i in 0..n {
            state[i] += dt * params.b[i] * state[i] * (1.0 - interaction[i]);
        }
        for i in 0..n {
            if !state[i].is_finite() {
                return Err(Error::numerical(format!(
                    "species {} became non-finite at step {}",
                    i + 1,
                    k + 1
                )));
            }
            if state[i] < 0.0 {
                return Err(Error::numerical(format!(
                    "species {} turned negative at step {}; reduce dt",
                    i + 1,
                    k + 1
                )));
            }
        }
        data.row_mut(k + 1).copy_from(&state.transpose());
    }
    let names = (1..=n).map(|i| format!("N{i}")).collect();
    TimeSeries::new(data, dt, names, 0.0)
}

// ---------------------------------------------------------------------------
// Two-variable linear SDE and its closure transformation
// ---------------------------------------------------------------------------

/// Coefficients of the linear system d(x, y) = [[a, 1], [q, a_hidden]]
/// (x, y) dt + (0, sigma dW); x is the resolved channel, y the hidden one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearToyParams {
    pub a: f64,
    pub q: f64,
    pub a_hidden: f64,
    pub sigma: f64,
}

impl LinearToyParams {
    pub fn standard() -> Self {
        LinearToyParams {
            a: -2.0,
            q: 1.0,
            a_hidden: -1.0,
            sigma: 1.0,
        }
    }

    pub fn drift_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.a, 1.0, self.q, self.a_hidden])
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.a, self.q, self.a_hidden, self.sigma]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::config("parameters must be finite"));
        }
        if self.sigma < 0.0 {
            return Err(Error::config("sigma must be nonnegative"));
        }
        Ok(())
    }
}

/// Exact discrete recursion u_{i+1} = u_i + M u_i dt + (0, sigma xi sqrt(dt))
/// started from (1, 0). Channels are named ("x", "y").
pub fn simulate_linear_toy(
    params: &LinearToyParams,
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<TimeSeries> {
    params.validate()?;
    if !(dt > 0.0) || steps < 1 {
        return Err(Error::config("dt must be positive and steps at least 1"));
    }
    let mut rng = Rng64::from_seed(seed);
    let sqrt_dt = dt.sqrt();
    let (mut x, mut y) = (1.0f64, 0.0f64);
    let mut data = DMatrix::zeros(steps + 1, 2);
    data[(0, 0)] = x;
    data[(0, 1)] = y;
    for k in 0..steps {
        let fx = params.a * x + y;
        let fy = params.q * x + params.a_hidden * y;
        x += fx * dt;
        y += fy * dt + params.sigma * rng.standard_normal() * sqrt_dt;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::numerical(format!(
                "state became non-finite at step {}",
                k + 1
            )));
        }
        data[(k + 1, 0)] = x;
        data[(k + 1, 1)] = y;
    }
    TimeSeries::new(data, dt, vec!["x".to_string(), "y".to_string()], 0.0)
}

/// The change of basis that maps the (x, y) system to its one-hidden-level
/// closure form (x, r), with r orthogonal to x.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedLinear {
    /// Original drift matrix [[a, 1], [q, a_hidden]].
    pub original: DMatrix<f64>,
    /// Similarity S with (x, y) = S (x, r).
    pub similarity: DMatrix<f64>,
    pub similarity_inv: DMatrix<f64>,
    /// Drift in closure coordinates: [[0, 1], [q - a_hidden*a, a + a_hidden]].
    pub transformed: DMatrix<f64>,
}

/// Build the similarity S = [[1, 0], [-a, 1]] and the transformed drift, and
/// verify S^-1 M S against the closed form to 1e-12.
pub fn transformed_linear_model(params: &LinearToyParams) -> Result<TransformedLinear> {
    params.validate()?;
    let original = params.drift_matrix();
    let similarity = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -params.a, 1.0]);
    let similarity_inv = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, params.a, 1.0]);
    let transformed = DMatrix::from_row_slice(
        2,
        2,
        &[
            0.0,
            1.0,
            params.q - params.a_hidden * params.a,
            params.a + params.a_hidden,
        ],
    );
    let check = &similarity_inv * &original * &similarity;
    let residual = (&check - &transformed).amax();
    if residual > 1e-12 {
        return Err(Error::numerical(format!(
            "similarity verification failed: residual {residual}"
        )));
    }
    Ok(TransformedLinear {
        original,
        similarity,
        similarity_inv,
        transformed,
    })
}

// ---------------------------------------------------------------------------
// Gamma-kernel memory and the linear-chain expansion
// ---------------------------------------------------------------------------

/// A population (or linear) system in which one equation carries a memory
/// integral over channel `m` with a Gamma(k, alpha) kernel:
/// `gamma_pm * integral F_k(t - s) x_m(s) ds` added to the growth rate of
/// channel `p`. With `multiplicative` set, equations take the per-capita
/// form dx_i = x_i (b_i + sum_j a_ij x_j + memory); otherwise the linear
/// form dx_i = b_i + sum_j a_ij x_j + memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaChainSpec {
    pub alpha: f64,
    pub k: usize,
    pub gamma_pm: f64,
    pub b: DVector<f64>,
    /// Signed interaction matrix of the direct form (not the competitive
    /// (1 - sum a N) convention).
    pub a: DMatrix<f64>,
    /// Equation receiving the memory term (0-based).
    pub p: usize,
    /// Channel whose history is integrated (0-based).
    pub m: usize,
    pub x0: DVector<f64>,
    pub multiplicative: bool,
}

impl GammaChainSpec {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.b.len();
        if n == 0 {
            return Err(Error::config("system must have at least one channel"));
        }
        if self.a.nrows() != n || self.a.ncols() != n || self.x0.len() != n {
            return Err(Error::config("a and x0 dimensions must match b"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if self.k < 1 {
            return Err(Error::config("kernel shape k must be at least 1"));
        }
        if self.p >= n || self.m >= n {
            return Err(Error::config("memory indices p, m must address channels"));
        }
        if !self.gamma_pm.is_finite() {
            return Err(Error::config("gamma_pm must be finite"));
        }
        Ok(())
    }
}

/// Gamma kernel F_k(t) = alpha^k / (k-1)! * t^(k-1) * exp(-alpha t).
pub fn gamma_kernel(alpha: f64, k: usize, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let mut factorial = 1.0;
    for j in 2..k {
        factorial *= j as f64;
    }
    alpha.powi(k as i32) / factorial * t.powi(k as i32 - 1) * (-alpha * t).exp()
}

/// The memoryless right-hand side plus an externally supplied memory value.
fn chain_base_rhs(spec: &GammaChainSpec, x: &DVector<f64>, memory: f64) -> DVector<f64> {
    let n = spec.dim();
    let mut out = DVector::zeros(n);
    let ax = &spec.a * x;
    for i in 0..n {
        let mut growth = spec.b[i] + ax[i];
        if i == spec.p {
            growth += spec.gamma_pm * memory;
        }
        out[i] = if spec.multiplicative { x[i] * growth } else { growth };
    }
    out
}

/// The expanded ODE system of dimension n + k: the original channels
/// followed by the chain variables r_1..r_k, with
/// dr_1 = alpha (x_m - r_1), dr_j = alpha (r_{j-1} - r_j), and the memory
/// term of channel p replaced by gamma_pm * r_k.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedChain {
    pub spec: GammaChainSpec,
}

impl AugmentedChain {
    pub fn dim(&self) -> usize {
        self.spec.dim() + self.spec.k
    }

    /// Zero pre-history: every chain variable starts at 0.
    pub fn initial_state(&self) -> DVector<f64> {
        let n = self.spec.dim();
        let mut state = DVector::zeros(self.dim());
        state.rows_mut(0, n).copy_from(&self.spec.x0);
        state
    }

    pub fn rhs(&self, state: &DVector<f64>) -> DVector<f64> {
        let n = self.spec.dim();
        let k = self.spec.k;
        let x = state.rows(0, n).into_owned();
        let r_k = state[n + k - 1];
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, n).copy_from(&chain_base_rhs(&self.spec, &x, r_k));
        out[n] = self.spec.alpha * (x[self.spec.m] - state[n]);
        for j in 1..k {
            out[n + j] = self.spec.alpha * (state[n + j - 1] - state[n + j]);
        }
        out
    }
}

pub fn expand_gamma_chain(spec: &GammaChainSpec) -> Result<AugmentedChain> {
    spec.validate()?;
    Ok(AugmentedChain { spec: spec.clone() })
}

fn rk4_step_vec<F>(rhs: &F, state: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(state);
    let k2 = rhs(&(state + &k1 * (dt / 2.0)));
    let k3 = rhs(&(state + &k2 * (dt / 2.0)));
    let k4 = rhs(&(state + &k3 * dt));
    state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Outcome of integrating the expanded chain against the original
/// integro-differential system from the same zero pre-history.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaChainReport {
    /// max over time and channels of |aug - direct| / (1 + |direct|).
    pub max_rel_discrepancy: f64,
    pub augmented: TimeSeries,
    pub direct: TimeSeries,
}

/// Integrate both routes for `duration` at step `dt` and report their
/// largest relative discrepancy on the original channels.
///
/// The expanded system uses fourth-order Runge-Kutta. The direct route keeps
/// the full history and evaluates the memory integral by the trapezoidal
/// rule inside a Heun step, which is O(steps^2): desk-scale durations only.
/// A discrepancy that grows with the trajectory signals a too-large step.
pub fn verify_gamma_chain(spec: &GammaChainSpec, duration: f64, dt: f64) -> Result<GammaChainReport> {
    let chain = expand_gamma_chain(spec)?;
    if !(dt > 0.0) || !(duration > dt) {
        return Err(Error::config("need duration > dt > 0"));
    }
    let steps = (duration / dt).round() as usize;
    let n = spec.dim();

    // Route one: the expanded ODE system.
    let rhs = |s: &DVector<f64>| chain.rhs(s);
    let mut aug_state = chain.initial_state();
    let mut aug = DMatrix::zeros(steps + 1, n);
    aug.row_mut(0).copy_from(&aug_state.rows(0, n).transpose());
    for k in 0..steps {
        aug_state = rk4_step_vec(&rhs, &aug_state, dt);
        if aug_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "expanded system became non-finite at step {}; reduce dt",
                k + 1
            )));
        }
        aug.row_mut(k + 1).copy_from(&aug_state.rows(0, n).transpose());
    }

    // Route two: the integro-differential system with explicit quadrature.
    let mut history: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    history.push(spec.x0.clone());
    let memory_at = |history: &[DVector<f64>], t_index: usize, extra: Option<&DVector<f64>>| {
        // Trapezoidal quadrature of integral F_k(t - s) x_m(s) ds over the
        // stored history (zero before t = 0), optionally extended by a
        // predictor endpoint.
        let total = t_index + 1;
        let mut sum = 0.0;
        for j in 0..total {
            let value = if j < history.len() {
                history[j][spec.m]
            } else {
                extra.expect("predictor endpoint required")[spec.m]
            };
            let weight = if j == 0 || j == total - 1 { 0.5 } else { 1.0 };
            sum += weight * gamma_kernel(spec.alpha, spec.k, (t_index - j) as f64 * dt) * value;
        }
        sum * dt
    };
    let mut direct = DMatrix::zeros(steps + 1, n);
    direct.row_mut(0).copy_from(&spec.x0.transpose());
    for k in 0..steps {
        let x = &history[k];
        let f1 = chain_base_rhs(spec, x, memory_at(&history, k, None));
        let predictor = x + &f1 * dt;
        let f2 = chain_base_rhs(spec, &predictor, memory_at(&history, k + 1, Some(&predictor)));
        let next = x + (f1 + f2) * (dt / 2.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "direct system became non-finite at step {}; reduce dt",
                k + 1
            )));
        }
        direct.row_mut(k + 1).copy_from(&next.transpose());
        history.push(next);
    }

    let mut max_rel = 0.0f64;
    for k in 0..=steps {
        for c in 0..n {
            let rel = (aug[(k, c)] - direct[(k, c)]).abs() / (1.0 + direct[(k, c)].abs());
            max_rel = max_rel.max(rel);
        }
    }
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    Ok(GammaChainReport {
        max_rel_discrepancy: max_rel,
        augmented: TimeSeries::new(aug, dt, names.clone(), 0.0)?,
        direct: TimeSeries::new(direct, dt, names, 0.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_check_standard_perturbed_and_zero() {
        let report = climate_energy_check(&ClimateParams::standard(0.5));
        assert_eq!(report.triple_b, 0.0);
        assert_eq!(report.triple_c, 0.0);
        assert_eq!(report.skew_max_abs, 0.0);
        assert!(report.conservative);

        let mut bad = ClimateParams::standard(0.5);
        bad.b312 += 0.1;
        let report = climate_energy_check(&bad);
        assert!((report.triple_b - 0.1).abs() < 1e-15);
        assert!(!report.conservative);

        let mut zero = ClimateParams::standard(1.0);
        zero.b123 = 0.0;
        zero.b213 = 0.0;
        zero.b312 = 0.0;
        zero.c134 = 0.0;
        zero.c341 = 0.0;
        zero.c413 = 0.0;
        zero.l12 = 0.0;
        zero.l21 = 0.0;
        zero.l24 = 0.0;
        zero.l13 = 0.0;
        zero.a1 = 0.0;
        zero.a2 = 0.0;
        assert!(climate_energy_check(&zero).conservative);
    }

    #[test]
    fn quadratic_part_conserves_energy_pointwise() {
        // <Q(u), u> = 0 identically, given zero triple sums and a1 = -a2.
        let sets = [
            ClimateParams::standard(0.1),
            {
                let mut p = ClimateParams::standard(1.0);
                p.b123 = 0.4;
                p.b213 = -0.1;
                p.b312 = -0.3;
                p.c134 = 0.7;
                p.c341 = -0.2;
                p.c413 = -0.5;
                p.a1 = 2.5;
                p.a2 = -2.5;
                p
            },
        ];
        let mut rng = Rng64::from_seed(99);
        for params in &sets {
            for _ in 0..1000 {
                let u = DVector::from_fn(4, |_, _| 4.0 * rng.uniform() - 2.0);
                let q = climate_quadratic_part(params, &u);
                let cubic = q.dot(&u);
                let scale = 1.0 + u.norm().powi(3);
                assert!(cubic.abs() <= 1e-12 * scale, "cubic form {cubic}");
            }
        }
    }

    #[test]
    fn deterministic_climate_conserves_quadratic_energy_along_path() {
        let mut params = ClimateParams::standard(1.0);
        params.sigma1 = 0.0;
        params.sigma2 = 0.0;
        let (full, observed) = simulate_climate(&params, 50.0, 0.001, 0.05, 7).unwrap();
        // Noise-free runs ignore the seed.
        let (again, _) = simulate_climate(&params, 50.0, 0.001, 0.05, 8).unwrap();
        assert_eq!(full.data, again.data);
        assert_eq!(observed.names, vec!["x1".to_string(), "x2".to_string()]);
        assert_eq!(observed.data.column(0), full.data.column(0));
        // The trajectory moves (F1 forces it away from the origin).
        assert!(full.data.amax() > 0.01);
        for k in 0..full.len() {
            let u = full.data.row(k).transpose();
            let cubic = climate_quadratic_part(&params, &u).dot(&u);
            assert!(cubic.abs() <= 1e-12 * (1.0 + u.norm().powi(3)));
        }
    }

    #[test]
    fn fast_channels_carry_most_variance_at_small_epsilon() {
        let params = ClimateParams::standard(0.1);
        let (full, _) = simulate_climate(&params, 500.0, 0.001, 0.05, 42).unwrap();
        let var = full.variance_by_channel();
        let slow = var[0].max(var[1]);
        let fast = var[2].min(var[3]);
        assert!(
            fast > slow,
            "fast variance {fast} should exceed slow variance {slow}"
        );
    }

    #[test]
    fn slow_and_fast_acfs_align_only_without_scale_separation() {
        let max_lag = 40;
        let diff = |eps: f64| {
            let (full, _) =
                simulate_climate(&ClimateParams::standard(eps), 2000.0, 0.001, 0.05, 13).unwrap();
            let acf = full.acf(max_lag).unwrap();
            let mut worst = 0.0f64;
            for lag in 0..=max_lag {
                worst = worst.max((acf.values[(lag, 0)] - acf.values[(lag, 2)]).abs());
            }
            worst
        };
        let separated = diff(0.1);
        let merged = diff(1.5);
        assert!(
            merged < separated,
            "acf gap at eps=1.5 ({merged}) should be below eps=0.1 ({separated})"
        );
        assert!(merged < 0.2, "x1 and y1 acfs should nearly coincide, gap {merged}");
    }

    #[test]
    fn climate_seed_and_sampling_contract() {
        let params = ClimateParams::standard(1.0);
        let (a, _) = simulate_climate(&params, 10.0, 0.001, 0.05, 1).unwrap();
        let (b, _) = simulate_climate(&params, 10.0, 0.001, 0.05, 1).unwrap();
        let (c, _) = simulate_climate(&params, 10.0, 0.001, 0.05, 2).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert_eq!(a.len(), 201);
        assert!((a.dt - 0.05).abs() < 1e-15);
        // Non-integer sampling stride is rejected.
        assert!(simulate_climate(&params, 10.0, 0.001, 0.00125, 1).is_err());
        // Euler-Maruyama stays close to the split scheme over a horizon
        // short enough that trajectory divergence has not set in.
        let (rk, _) = simulate_climate(&params, 2.0, 0.001, 0.05, 1).unwrap();
        let (em, _) = simulate_climate_with_scheme(
            &params,
            2.0,
            0.001,
            0.05,
            1,
            ClimateScheme::EulerMaruyama,
        )
        .unwrap();
        assert!((em.data.column(0) - rk.data.column(0)).amax() < 0.05);
    }

    #[test]
    fn lv_coexistence_point_is_stationary() {
        let params = LVParams::standard();
        let fixed = lv_coexistence_point(&params).unwrap();
        let residual = (&params.a * &fixed - DVector::from_element(4, 1.0)).amax();
        assert!(residual < 1e-12, "a N* = 1 residual {residual}");
        assert!(fixed.iter().all(|&v| v > 0.0), "interior point expected");
        let ts = simulate_lv(&params, &fixed, 0.035, 1000).unwrap();
        let drift = (ts.data.row(1000) - ts.data.row(0)).amax();
        assert!(drift < 1e-10, "fixed point drifted by {drift}");
    }

    #[test]
    fn lv_single_species_logistic_limit() {
        let params = LVParams {
            a: DMatrix::identity(4, 4),
            b: DVector::from_vec(vec![1.0, 0.72, 1.53, 1.27]),
        };
        let n0 = DVector::from_vec(vec![0.5, 0.0, 0.0, 0.0]);
        let ts = simulate_lv(&params, &n0, 0.035, 2000).unwrap();
        let last = ts.data.row(2000);
        assert!((last[0] - 1.0).abs() < 1e-6, "logistic limit, got {}", last[0]);
        // Absent species stay exactly absent under Euler.
        assert_eq!(last[1], 0.0);
        assert_eq!(last[3], 0.0);
    }

    #[test]
    fn lv_chaotic_run_stays_positive_and_bounded() {
        let params = LVParams::standard();
        let ts = simulate_lv(&params, &LVParams::standard_n0(), 0.035, 150_000).unwrap();
        assert_eq!(ts.len(), 150_001);
        let tail = ts.skip(10_000).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in tail.data.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        assert!(lo > 0.0, "populations must stay positive, min {lo}");
        assert!(hi < 1.2, "populations should stay below 1.2, max {hi}");
        // The trajectory keeps wandering (no collapse onto a fixed point).
        let var = tail.variance_by_channel();
        assert!(var.iter().all(|&v| v > 1e-4), "variances {var:?}");
    }

    #[test]
    fn lv_rejects_sign_loss_and_bad_inputs() {
        let params = LVParams::standard();
        // A huge step makes the Euler update overshoot below zero.
        let err = simulate_lv(&params, &LVParams::standard_n0(), 5.0, 50).unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
        let neg = DVector::from_vec(vec![-0.1, 0.2, 0.3, 0.7]);
        assert!(simulate_lv(&params, &neg, 0.035, 10).is_err());
        let mut bad = LVParams::standard();
        bad.a[(0, 0)] = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn linear_toy_deterministic_matrix_power_oracle() {
        let mut params = LinearToyParams::standard();
        params.sigma = 0.0;
        let dt = 1e-3f64;
        let ts = simulate_linear_toy(&params, dt, 500, 9).unwrap();
        let propagator = DMatrix::identity(2, 2) + params.drift_matrix() * dt;
        let mut state = DVector::from_vec(vec![1.0, 0.0]);
        for k in 0..=500 {
            assert!((ts.data[(k, 0)] - state[0]).abs() < 1e-12);
            assert!((ts.data[(k, 1)] - state[1]).abs() < 1e-12);
            state = &propagator * state;
        }
    }

    #[test]
    fn linear_toy_eigenvalues_and_similarity() {
        let params = LinearToyParams::standard();
        let tl = transformed_linear_model(&params).unwrap();
        assert_eq!(
            tl.transformed,
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -3.0])
        );
        // Characteristic roots of [[-2, 1], [1, -1]] are (-3 +- sqrt(5))/2.
        let expected = [(-3.0 - 5.0f64.sqrt()) / 2.0, (-3.0 + 5.0f64.sqrt()) / 2.0];
        let mut eig_original: Vec<f64> = tl
            .original
            .complex_eigenvalues()
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-12);
                z.re
            })
            .collect();
        eig_original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut eig_transformed: Vec<f64> = tl
            .transformed
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect();
        eig_transformed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 0..2 {
            assert!((eig_original[i] - expected[i]).abs() < 1e-12);
            assert!((eig_original[i] - eig_transformed[i]).abs() < 1e-12);
        }

        // a = 0 leaves the system untouched.
        let mut flat = params;
        flat.a = 0.0;
        let tl = transformed_linear_model(&flat).unwrap();
        assert_eq!(tl.similarity, DMatrix::identity(2, 2));
        assert_eq!(tl.transformed, tl.original);
    }

    #[test]
    fn linear_toy_stationary_variance_matches_lyapunov_oracle() {
        let params = LinearToyParams::standard();
        let dt = 5e-3f64;
        let steps = 1_000_000;
        let ts = simulate_linear_toy(&params, dt, steps, 31).unwrap();
        let stationary = ts.skip(20_000).unwrap();
        let var = stationary.variance_by_channel();

        // Discrete Lyapunov fixed-point iteration for the exact recursion.
        let m = DMatrix::identity(2, 2) + params.drift_matrix() * dt;
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, params.sigma * params.sigma * dt]);
        let mut s = DMatrix::zeros(2, 2);
        for _ in 0..100_000 {
            s = &m * &s * m.transpose() + &e;
        }
        for c in 0..2 {
            let rel = (var[c] - s[(c, c)]).abs() / s[(c, c)];
            assert!(rel < 0.05, "channel {c}: sample {} vs oracle {}", var[c], s[(c, c)]);
        }
    }

    #[test]
    fn linear_toy_acf_matches_analytic_ou_curve() {
        let params = LinearToyParams::standard();
        // dt chosen so one million steps span enough decorrelation times to
        // keep the acf's statistical error a few times below the tolerance.
        let dt = 1e-2f64;
        let ts = simulate_linear_toy(&params, dt, 1_000_000, 77)
            .unwrap()
            .skip(10_000)
            .unwrap();
        let max_lag = (5.0 / dt) as usize;
        let acf = ts.acf(max_lag).unwrap();

        // Analytic route: stationary covariance S from the continuous
        // Lyapunov equation M S + S M' + diag(0, sigma^2) = 0, then
        // C(tau) = [exp(M tau) S]_00 / S_00 with exp(M tau) in closed form
        // from the distinct real eigenvalues.
        let (a, q, ah, sg) = (params.a, params.q, params.a_hidden, params.sigma);
        // Solve the 3 unknowns (s11, s12, s22) of the symmetric equation.
        let mut lhs = DMatrix::zeros(3, 3);
        let mut rhs = DVector::zeros(3);
        // Row for d/dt s11 = 2 a s11 + 2 s12.
        lhs[(0, 0)] = 2.0 * a;
        lhs[(0, 1)] = 2.0;
        // Row for d/dt s12 = q s11 + (a + ah) s12 + s22.
        lhs[(1, 0)] = q;
        lhs[(1, 1)] = a + ah;
        lhs[(1, 2)] = 1.0;
        // Row for d/dt s22 = 2 q s12 + 2 ah s22 + sigma^2.
        lhs[(2, 1)] = 2.0 * q;
        lhs[(2, 2)] = 2.0 * ah;
        rhs[2] = -sg * sg;
        let sol = lhs.lu().solve(&rhs).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[sol[0], sol[1], sol[1], sol[2]]);

        let m = params.drift_matrix();
        let disc = ((a + ah) * (a + ah) - 4.0 * (a * ah - q)).sqrt();
        let (l1, l2) = ((a + ah + disc) / 2.0, (a + ah - disc) / 2.0);
        let eye = DMatrix::identity(2, 2);
        let exp_m = |tau: f64| {
            (&m - &eye * l2) * ((l1 * tau).exp() / (l1 - l2))
                - (&m - &eye * l1) * ((l2 * tau).exp() / (l1 - l2))
        };
        for lag in (0..=max_lag).step_by(25) {
            let tau = lag as f64 * dt;
            let analytic = (exp_m(tau) * &s)[(0, 0)] / s[(0, 0)];
            let sample = acf.values[(lag, 0)];
            assert!(
                (sample - analytic).abs() < 0.05,
                "lag {lag}: sample {sample} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn gamma_kernel_recursion_and_normalization() {
        let alpha = 2.0f64;
        // d/dt F_k = alpha (F_{k-1} - F_k), checked by central differences.
        let h = 1e-6;
        for k in 2..=4 {
            for &t in &[0.3, 0.9, 2.4] {
                let derivative =
                    (gamma_kernel(alpha, k, t + h) - gamma_kernel(alpha, k, t - h)) / (2.0 * h);
                let expected = alpha * (gamma_kernel(alpha, k - 1, t) - gamma_kernel(alpha, k, t));
                assert!((derivative - expected).abs() < 1e-6);
            }
        }
        // Simpson quadrature of F_3 over [0, 40] with alpha = 2.
        let (k, n, upper) = (3usize, 40_000usize, 40.0f64);
        let dt = upper / n as f64;
        let mut integral = gamma_kernel(alpha, k, 0.0) + gamma_kernel(alpha, k, upper);
        for j in 1..n {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * gamma_kernel(alpha, k, j as f64 * dt);
        }
        integral *= dt / 3.0;
        assert!((integral - 1.0).abs() < 1e-8, "normalization {integral}");
    }

    #[test]
    fn decoupled_chain_matches_memoryless_system() {
        let spec = GammaChainSpec {
            alpha: 1.5,
            k: 2,
            gamma_pm: 0.0,
            b: DVector::from_vec(vec![1.0, 0.8]),
            a: DMatrix::from_row_slice(2, 2, &[-1.0, -0.3, -0.2, -1.0]),
            p: 0,
            m: 1,
            x0: DVector::from_vec(vec![0.5, 0.5]),
            multiplicative: true,
        };
        let chain = expand_gamma_chain(&spec).unwrap();
        let mut rng = Rng64::from_seed(4);
        for _ in 0..50 {
            let mut state = DVector::from_fn(4, |_, _| rng.uniform() * 2.0);
            state[2] = rng.uniform();
            state[3] = rng.uniform();
            let full = chain.rhs(&state);
            let bare = chain_base_rhs(&spec, &state.rows(0, 2).into_owned(), 0.0);
            assert_eq!(full.rows(0, 2), bare);
        }
        let report = verify_gamma_chain(&spec, 5.0, 1e-3).unwrap();
        assert!(
            report.max_rel_discrepancy < 1e-5,
            "integrator agreement {}",
            report.max_rel_discrepancy
        );
    }

    #[test]
    fn exponential_kernel_scalar_chain_agrees_with_direct_quadrature() {
        // dx = -x + 0.5 * integral exp(-(t-s)) x(s) ds against its 2-D chain.
        let spec = GammaChainSpec {
            alpha: 1.0,
            k: 1,
            gamma_pm: 0.5,
            b: DVector::zeros(1),
            a: DMatrix::from_row_slice(1, 1, &[-1.0]),
            p: 0,
            m: 0,
            x0: DVector::from_element(1, 1.0),
            multiplicative: false,
        };
        let report = verify_gamma_chain(&spec, 10.0, 1e-3).unwrap();
        assert!(
            report.max_rel_discrepancy <= 1e-6,
            "k=1 discrepancy {}",
            report.max_rel_discrepancy
        );
    }

    #[test]
    fn gamma_kernel_population_chain_agrees_with_direct_quadrature() {
        let spec = GammaChainSpec {
            alpha: 2.0,
            k: 3,
            gamma_pm: 0.4,
            b: DVector::from_vec(vec![1.0, 0.8]),
            a: DMatrix::from_row_slice(2, 2, &[-1.0, -0.3, -0.2, -1.0]),
            p: 0,
            m: 1,
            x0: DVector::from_vec(vec![0.5, 0.5]),
            multiplicative: true,
        };
        let report = verify_gamma_chain(&spec, 10.0, 1e-3).unwrap();
        assert!(
            report.max_rel_discrepancy <= 1e-5,
            "k=3 discrepancy {}",
            report.max_rel_discrepancy
        );
        // The augmented chain dimension is n + k.
        assert_eq!(expand_gamma_chain(&spec).unwrap().dim(), 5);
    }
}
