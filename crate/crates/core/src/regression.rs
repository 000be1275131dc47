//! Least-squares machinery: quadratic design matrices, ridge regularization,
//! and equality/inequality-constrained minimization via an active-set
//! quadratic program over the grand (all-channels) parameter vector.

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;
use nalgebra::{DMatrix, DVector};
use std::collections::HashSet;

/// Predictor matrix with labeled columns.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// Predictor labels, one per column of `values`.
    pub columns: Vec<String>,
    /// N x M predictor values.
    pub values: DMatrix<f64>,
}

impl DesignMatrix {
    /// Number of predictor columns.
    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Which predictor blocks a design includes. Linear channel columns are
/// always present.
#[derive(Debug, Clone, Copy)]
pub struct DesignOptions {
    /// Include the leading constant column.
    pub constant: bool,
    /// Include the quadratic monomial block x_i*x_j (i <= j).
    pub quadratic: bool,
}

/// Column index of the monomial x_i*x_j (i <= j, zero-based) within the
/// quadratic block, in lexicographic order (0,0), (0,1), .., (0,d-1), (1,1), ..
pub fn quad_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i <= j && j < d);
    i * (2 * d - i + 1) / 2 + (j - i)
}

/// Number of quadratic monomials in dimension d.
pub fn quad_count(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index of parameter `col` of target channel `channel` in the grand
/// (stacked all-channels) parameter vector, for a design with `m` columns.
pub fn grand_index(channel: usize, col: usize, m: usize) -> usize {
    channel * m + col
}

/// Assemble a design matrix from a series plus optional extra predictor
/// series, with the column blocks selected by `opts`:
/// `[1, x_1..x_d, x_i*x_j (i<=j, lexicographic), extras]`.
///
/// All series must share the sample count and step.
pub fn build_design(
    ts: &TimeSeries,
    extra_channels: &[&TimeSeries],
    opts: DesignOptions,
) -> Result<DesignMatrix> {
    let n = ts.len();
    let d = ts.dim();
    for extra in extra_channels {
        if extra.len() != n {
            return Err(Error::config(format!(
                "extra predictor series has {} samples, expected {n}",
                extra.len()
            )));
        }
        if (extra.dt - ts.dt).abs() > 1e-12 * ts.dt.abs() {
            return Err(Error::config(format!(
                "extra predictor series has dt={}, expected {}",
                extra.dt, ts.dt
            )));
        }
    }
    let d_extra: usize = extra_channels.iter().map(|e| e.dim()).sum();
    let m = usize::from(opts.constant)
        + d
        + if opts.quadratic { quad_count(d) } else { 0 }
        + d_extra;
    let mut columns = Vec::with_capacity(m);
    let mut values = DMatrix::zeros(n, m);
    let mut c = 0;
    if opts.constant {
        columns.push("1".to_string());
        values.column_mut(c).fill(1.0);
        c += 1;
    }
    for i in 0..d {
        columns.push(ts.names[i].clone());
        values.set_column(c, &ts.data.column(i));
        c += 1;
    }
    if opts.quadratic {
        for i in 0..d {
            for j in i..d {
                columns.push(format!("{}*{}", ts.names[i], ts.names[j]));
                for k in 0..n {
                    values[(k, c)] = ts.data[(k, i)] * ts.data[(k, j)];
                }
                c += 1;
            }
        }
    }
    for extra in extra_channels {
        for i in 0..extra.dim() {
            columns.push(extra.names[i].clone());
            values.set_column(c, &extra.data.column(i));
            c += 1;
        }
    }
    let mut seen = HashSet::new();
    for label in &columns {
        if !seen.insert(label.as_str()) {
            return Err(Error::config(format!("duplicate predictor label '{label}'")));
        }
    }
    Ok(DesignMatrix { columns, values })
}

/// Full quadratic design `[1, linear, quadratic, extras]`.
pub fn build_quadratic_design(
    ts: &TimeSeries,
    extra_channels: &[&TimeSeries],
) -> Result<DesignMatrix> {
    build_design(
        ts,
        extra_channels,
        DesignOptions {
            constant: true,
            quadratic: true,
        },
    )
}

/// Linear-only design `[x_1..x_d, extras]` with no constant, as used for the
/// hidden-level fits.
pub fn build_level_design(
    ts: &TimeSeries,
    extra_channels: &[&TimeSeries],
) -> Result<DesignMatrix> {
    build_design(
        ts,
        extra_channels,
        DesignOptions {
            constant: false,
            quadratic: false,
        },
    )
}

/// Result of a (possibly constrained) least-squares fit.
#[derive(Debug, Clone)]
pub struct LsSolution {
    /// M x d coefficient matrix; column c holds the parameters of target
    /// channel c.
    pub coefficients: DMatrix<f64>,
    /// N x d residual matrix, `targets - design * coefficients` exactly.
    pub residuals: DMatrix<f64>,
    /// Per-channel uncentered R^2: `1 - |residual|^2 / |target|^2`
    /// (1 for an identically zero target).
    pub r_squared: DVector<f64>,
    /// Indices (into the constraint set) of inequalities active at the
    /// solution. Empty for unconstrained fits.
    pub active_inequalities: Vec<usize>,
}

/// Default relative ridge strength: a conditioning floor that shrinks
/// standardized coefficients by about one part in a million.
pub const DEFAULT_RIDGE: f64 = 1e-6;

fn r_squared_of(targets: &DMatrix<f64>, residuals: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        targets.ncols(),
        (0..targets.ncols()).map(|c| {
            let ss_target = targets.column(c).norm_squared();
            if ss_target == 0.0 {
                1.0
            } else {
                1.0 - residuals.column(c).norm_squared() / ss_target
            }
        }),
    )
}

/// Minimize `|targets - design * theta|^2 + lambda * |D theta|^2` per target
/// channel, where `D` holds the design's column norms: the penalty acts on
/// standardized coefficients, so one `lambda` keeps its meaning no matter how
/// the column scales differ. Columns are equilibrated internally before
/// solving, which keeps designs whose scales span many orders of magnitude
/// well conditioned. Uses QR when `lambda = 0` (erroring on rank deficiency)
/// and normal equations with Cholesky otherwise.
pub fn least_squares(
    design: &DesignMatrix,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<LsSolution> {
    let x = &design.values;
    let (n, m) = (x.nrows(), x.ncols());
    if targets.nrows() != n {
        return Err(Error::config(format!(
            "targets have {} rows, design has {n}",
            targets.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!(
            "ridge lambda must be nonnegative, got {lambda}"
        )));
    }
    if n < m {
        eprintln!("warning: least squares with {n} samples and {m} predictors is underdetermined");
    }
    let mut scale = DVector::from_iterator(m, x.column_iter().map(|c| c.norm()));
    for s in scale.iter_mut() {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let mut xs = x.clone();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let mut coefficients = if lambda == 0.0 {
        // Column-pivoted R exposes the numerical rank on its diagonal.
        let piv = xs.clone().col_piv_qr();
        let rdiag_max = (0..m.min(n))
            .map(|k| piv.r()[(k, k)].abs())
            .fold(0.0, f64::max);
        let tol = rdiag_max * n.max(m) as f64 * f64::EPSILON;
        let rank = (0..m.min(n)).filter(|&k| piv.r()[(k, k)].abs() > tol).count();
        if rank < m {
            return Err(Error::numerical(format!(
                "design matrix is rank deficient ({rank} < {m}); use a ridge lambda > 0"
            )));
        }
        let qr = xs.clone().qr();
        let qtb = qr.q().transpose() * targets;
        qr.r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::numerical("triangular solve failed"))?
    } else {
        // Unit-norm columns give a unit Gram diagonal, so `lambda` adds
        // directly.
        let mut gram = xs.transpose() * &xs;
        for k in 0..m {
            gram[(k, k)] += lambda;
        }
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| Error::numerical("normal equations not positive definite"))?;
        chol.solve(&(xs.transpose() * targets))
    };
    for j in 0..m {
        for c in 0..coefficients.ncols() {
            coefficients[(j, c)] /= scale[j];
        }
    }
    let residuals = targets - x * &coefficients;
    let r_squared = r_squared_of(targets, &residuals);
    Ok(LsSolution {
        coefficients,
        residuals,
        r_squared,
        active_inequalities: Vec::new(),
    })
}

/// One linear equality `sum(coefficients[k].1 * g[coefficients[k].0]) = rhs`
/// over the grand parameter vector g.
#[derive(Debug, Clone)]
pub struct LinearEquality {
    /// Sparse (index, coefficient) pairs.
    pub coefficients: Vec<(usize, f64)>,
    /// Right-hand side.
    pub rhs: f64,
}

/// One bound `coefficient * g[index] >= lower` on a grand-vector entry;
/// `coefficient` is +1 or -1 to orient the bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundInequality {
    /// Grand parameter index.
    pub index: usize,
    /// Bound orientation, +1 or -1.
    pub coefficient: f64,
    /// Finite lower bound on `coefficient * g[index]`.
    pub lower: f64,
}

/// Equality and inequality constraints over the grand parameter vector.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub equalities: Vec<LinearEquality>,
    pub inequalities: Vec<BoundInequality>,
}

impl ConstraintSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.equalities.is_empty() && self.inequalities.is_empty()
    }
}

/// Energy-conserving and dissipativity constraints for a quadratic design
/// with the canonical layout `[1, x_1..x_d, x_i*x_j (i<=j), ..]` fitted over
/// all d channels simultaneously.
///
/// Writing the fitted drift as `F - A x + B(x, x)` (so the linear design
/// coefficients are -A), the families are, over monomial coefficients:
/// - no self-cubes: coefficient of x_i^2 in channel i is zero (d rows);
/// - pair exchanges: coef of x_j*x_k in channel j plus coef of x_j^2 in
///   channel k is zero, emitted for both orderings of each pair and both
///   monomial roles (2d(d-1) rows, pairwise redundant by construction);
/// - triple exchanges: coef of x_j*x_k in channel i, cycled over each
///   unordered triple, sums to zero (one row per triple);
/// - A skew-symmetric off the diagonal (d(d-1)/2 rows);
/// - A_ii >= 1e-8 as inequalities (strict positivity is not expressible in
///   a quadratic program), i.e. -theta >= 1e-8 on diagonal linear columns.
pub fn energy_constraints(d: usize) -> ConstraintSet {
    let m = 1 + d + quad_count(d);
    let lin = |channel: usize, j: usize| grand_index(channel, 1 + j, m);
    let quad = |channel: usize, i: usize, j: usize| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        grand_index(channel, 1 + d + quad_index(a, b, d), m)
    };
    let mut equalities = Vec::new();
    // No self-cubes.
    for i in 0..d {
        equalities.push(LinearEquality {
            coefficients: vec![(quad(i, i, i), 1.0)],
            rhs: 0.0,
        });
    }
    // Pair exchanges, both orderings and both monomial roles.
    for j in 0..d {
        for k in 0..d {
            if j == k {
                continue;
            }
            equalities.push(LinearEquality {
                coefficients: vec![(quad(j, j, k), 1.0), (quad(k, j, j), 1.0)],
                rhs: 0.0,
            });
            equalities.push(LinearEquality {
                coefficients: vec![(quad(j, k, k), 1.0), (quad(k, j, k), 1.0)],
                rhs: 0.0,
            });
        }
    }
    // Triple exchanges.
    for i in 0..d {
        for j in i + 1..d {
            for k in j + 1..d {
                equalities.push(LinearEquality {
                    coefficients: vec![
                        (quad(i, j, k), 1.0),
                        (quad(j, i, k), 1.0),
                        (quad(k, i, j), 1.0),
                    ],
                    rhs: 0.0,
                });
            }
        }
    }
    // Linear skew-symmetry: A_ij + A_ji = 0 holds for the design
    // coefficients as well, since A = -theta_linear.
    for i in 0..d {
        for j in i + 1..d {
            equalities.push(LinearEquality {
                coefficients: vec![(lin(i, j), 1.0), (lin(j, i), 1.0)],
                rhs: 0.0,
            });
        }
    }
    // A_ii >= 1e-8 flips orientation in design coefficients.
    let inequalities = (0..d)
        .map(|i| BoundInequality {
            index: lin(i, i),
            coefficient: -1.0,
            lower: 1e-8,
        })
        .collect();
    ConstraintSet {
        equalities,
        inequalities,
    }
}

/// Row-reduce the equality system, dropping redundant rows and detecting
/// inconsistency. Returns a full-row-rank `(E, b)` (possibly empty).
fn reduce_equalities(
    constraints: &ConstraintSet,
    n: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let rows = constraints.equalities.len();
    if rows == 0 {
        return Ok((DMatrix::zeros(0, n), DVector::zeros(0)));
    }
    let mut aug = DMatrix::zeros(rows, n + 1);
    for (r, eq) in constraints.equalities.iter().enumerate() {
        for &(idx, c) in &eq.coefficients {
            if idx >= n {
                return Err(Error::config(format!(
                    "equality references parameter {idx}, grand vector has {n}"
                )));
            }
            aug[(r, idx)] += c;
        }
        aug[(r, n)] = eq.rhs;
    }
    let scale = aug.view((0, 0), (rows, n)).amax().max(1.0);
    let tol = scale * 1e-12;
    let mut pivot_row = 0;
    for col in 0..n {
        if pivot_row == rows {
            break;
        }
        let (best, best_val) = (pivot_row..rows)
            .map(|r| (r, aug[(r, col)].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if best_val <= tol {
            continue;
        }
        aug.swap_rows(pivot_row, best);
        for r in pivot_row + 1..rows {
            let f = aug[(r, col)] / aug[(pivot_row, col)];
            if f != 0.0 {
                for c in col..=n {
                    let v = aug[(pivot_row, c)];
                    aug[(r, c)] -= f * v;
                }
            }
        }
        pivot_row += 1;
    }
    // Rows below the pivot block must be zero, including their rhs.
    for r in pivot_row..rows {
        if aug[(r, n)].abs() > 1e-9 * (1.0 + scale) {
            return Err(Error::config(
                "equality constraints are inconsistent (infeasible)",
            ));
        }
    }
    let e = aug.view((0, 0), (pivot_row, n)).into_owned();
    let b = aug.view((0, n), (pivot_row, 1)).column(0).into_owned();
    Ok((e, b))
}

/// Minimize `sum_c |y_c - X theta_c|^2 + lambda |D theta_c|^2` subject to
/// the constraint set, by an active-set quadratic program on the grand
/// parameter vector (channel-major: entry `c*M + j` is parameter j of
/// channel c). As in [`least_squares`], `D` holds the column norms, so the
/// penalty acts on standardized coefficients.
///
/// At the solution, equalities hold to 1e-10 and the stationarity residual
/// is below 1e-8, both relative to the gradient scale.
pub fn constrained_least_squares(
    design: &DesignMatrix,
    targets: &DMatrix<f64>,
    constraints: &ConstraintSet,
    lambda: f64,
) -> Result<LsSolution> {
    if constraints.is_empty() {
        return least_squares(design, targets, lambda);
    }
    let x = &design.values;
    let m = x.ncols();
    let d = targets.ncols();
    let n = m * d;
    if targets.nrows() != x.nrows() {
        return Err(Error::config(format!(
            "targets have {} rows, design has {}",
            targets.nrows(),
            x.nrows()
        )));
    }
    for ineq in &constraints.inequalities {
        if ineq.index >= n {
            return Err(Error::config(format!(
                "inequality references parameter {}, grand vector has {n}",
                ineq.index
            )));
        }
        if !ineq.lower.is_finite() || !ineq.coefficient.is_finite() {
            return Err(Error::config("inequality bound must be finite"));
        }
    }

    let mut gram = x.transpose() * x;
    for k in 0..m {
        // Standardized penalty: lambda * |col_k|^2 on the diagonal.
        gram[(k, k)] *= 1.0 + lambda;
    }
    // f = vec(X^T Y), channel-major (column-major of the M x d matrix).
    let xty = x.transpose() * targets;
    let f = DVector::from_column_slice(xty.as_slice());
    let grad_scale = 1.0 + f.amax();

    let (e, b) = reduce_equalities(constraints, n)?;
    let n_eq = e.nrows();

    // Feasible start: minimum-norm solution of the equalities, then pin
    // violated bounds whose parameter is untouched by any equality.
    let mut g = DVector::zeros(n);
    if n_eq > 0 {
        let ee = &e * e.transpose();
        let w = ee
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::numerical("equality system solve failed"))?;
        g = e.transpose() * w;
    }
    for ineq in &constraints.inequalities {
        if ineq.coefficient * g[ineq.index] < ineq.lower {
            let col_free = (0..n_eq).all(|r| e[(r, ineq.index)] == 0.0);
            if !col_free {
                return Err(Error::config(
                    "cannot construct a feasible start: bound conflicts with equalities",
                ));
            }
            g[ineq.index] = ineq.coefficient * ineq.lower;
        }
    }

    // Active-set iterations. The working set holds inequality indices
    // treated as equalities at their bound.
    let mut active: Vec<usize> = Vec::new();
    let cap = 100 * constraints.inequalities.len().max(1);
    let mut multipliers = DVector::zeros(0);
    let mut converged = false;
    for _ in 0..=cap {
        let n_act = active.len();
        let rows = n_eq + n_act;
        // KKT system: [H -A^T; A 0] [g; nu] = [f; rhs].
        let mut kkt = DMatrix::zeros(n + rows, n + rows);
        kkt.view_mut((0, 0), (n, n)).copy_from(&big_h(&gram, d));
        let mut rhs = DVector::zeros(n + rows);
        rhs.rows_mut(0, n).copy_from(&f);
        for r in 0..n_eq {
            for c in 0..n {
                kkt[(n + r, c)] = e[(r, c)];
                kkt[(c, n + r)] = -e[(r, c)];
            }
            rhs[n + r] = b[r];
        }
        for (a, &iq) in active.iter().enumerate() {
            let ineq = constraints.inequalities[iq];
            kkt[(n + n_eq + a, ineq.index)] = ineq.coefficient;
            kkt[(ineq.index, n + n_eq + a)] = -ineq.coefficient;
            rhs[n + n_eq + a] = ineq.lower;
        }
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("KKT system is singular"))?;
        let g_star = sol.rows(0, n).into_owned();
        multipliers = sol.rows(n, rows).into_owned();
        let step = &g_star - &g;

        if step.amax() <= 1e-12 * (1.0 + g.amax()) {
            // Stationary on the working set; check inequality multipliers.
            let worst = (0..n_act)
                .min_by(|&a, &bb| {
                    multipliers[n_eq + a]
                        .partial_cmp(&multipliers[n_eq + bb])
                        .unwrap()
                })
                .filter(|&a| multipliers[n_eq + a] < -1e-8 * grad_scale);
            match worst {
                Some(a) => {
                    active.swap_remove(a);
                    continue;
                }
                None => {
                    g = g_star;
                    converged = true;
                    break;
                }
            }
        }

        // Step toward g_star, stopping at the first blocking bound.
        let mut alpha = 1.0;
        let mut blocking = None;
        for (iq, ineq) in constraints.inequalities.iter().enumerate() {
            if active.contains(&iq) {
                continue;
            }
            let dir = ineq.coefficient * step[ineq.index];
            if dir < -1e-14 * (1.0 + step.amax()) {
                let room = ineq.coefficient * g[ineq.index] - ineq.lower;
                let a = (room / -dir).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(iq);
                }
            }
        }
        g += alpha * step;
        if let Some(iq) = blocking {
            let ineq = constraints.inequalities[iq];
            g[ineq.index] = ineq.coefficient * ineq.lower;
            active.push(iq);
        }
    }
    if !converged {
        return Err(Error::numerical("active-set iteration cap exceeded"));
    }

    // Verify the KKT conditions on the returned point.
    if n_eq > 0 {
        let eq_resid = (&e * &g - &b).amax();
        if eq_resid > 1e-10 * (1.0 + b.amax()) {
            return Err(Error::numerical(format!(
                "equality residual {eq_resid:.3e} exceeds tolerance"
            )));
        }
    }
    let mut grad = big_h(&gram, d) * &g - &f;
    for r in 0..n_eq {
        for c in 0..n {
            grad[c] -= e[(r, c)] * multipliers[r];
        }
    }
    for (a, &iq) in active.iter().enumerate() {
        let ineq = constraints.inequalities[iq];
        grad[ineq.index] -= ineq.coefficient * multipliers[n_eq + a];
    }
    if grad.amax() > 1e-8 * grad_scale {
        return Err(Error::numerical(format!(
            "stationarity residual {:.3e} exceeds tolerance",
            grad.amax()
        )));
    }

    let coefficients = DMatrix::from_column_slice(m, d, g.as_slice());
    let residuals = targets - x * &coefficients;
    let r_squared = r_squared_of(targets, &residuals);
    let mut active_inequalities = active;
    active_inequalities.sort_unstable();
    Ok(LsSolution {
        coefficients,
        residuals,
        r_squared,
        active_inequalities,
    })
}

/// Block-diagonal grand Hessian: d copies of the per-channel Gram matrix.
fn big_h(gram: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let m = gram.nrows();
    let mut h = DMatrix::zeros(m * d, m * d);
    for c in 0..d {
        h.view_mut((c * m, c * m), (m, m)).copy_from(gram);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn series_from(data: DMatrix<f64>, dt: f64) -> TimeSeries {
        let names = (0..data.ncols()).map(|c| format!("x{}", c + 1)).collect();
        TimeSeries::new(data, dt, names, 0.0).unwrap()
    }

    #[test]
    fn design_column_counts() {
        let ts2 = series_from(DMatrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]), 1.0);
        let full = build_quadratic_design(&ts2, &[]).unwrap();
        assert_eq!(full.m(), 6);
        assert_eq!(
            full.columns,
            vec!["1", "x1", "x2", "x1*x1", "x1*x2", "x2*x2"]
        );

        let ts3 = series_from(DMatrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64), 1.0);
        assert_eq!(build_quadratic_design(&ts3, &[]).unwrap().m(), 10);

        // Hidden-level design: linear in the state plus prior residuals.
        let r0 = TimeSeries::new(
            DMatrix::from_fn(3, 2, |r, c| (r + c) as f64),
            1.0,
            vec!["r0_1".into(), "r0_2".into()],
            0.0,
        )
        .unwrap();
        let level = build_level_design(&ts2, &[&r0]).unwrap();
        assert_eq!(level.m(), 4);
        assert_eq!(level.columns, vec!["x1", "x2", "r0_1", "r0_2"]);
    }

    #[test]
    fn design_rejects_mismatched_extras() {
        let ts = series_from(DMatrix::from_fn(4, 1, |r, _| r as f64), 1.0);
        let short = TimeSeries::new(
            DMatrix::from_fn(3, 1, |r, _| r as f64),
            1.0,
            vec!["e".into()],
            0.0,
        )
        .unwrap();
        assert!(build_quadratic_design(&ts, &[&short]).is_err());
    }

    #[test]
    fn quad_index_is_lexicographic_bijection() {
        for d in 1..=6 {
            let mut seen = vec![false; quad_count(d)];
            let mut last = None;
            for i in 0..d {
                for j in i..d {
                    let q = quad_index(i, j, d);
                    assert!(!seen[q]);
                    seen[q] = true;
                    if let Some(prev) = last {
                        assert_eq!(q, prev + 1);
                    }
                    last = Some(q);
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn exact_fit_and_orthogonal_target() {
        // Identity columns: coefficient 1 on the matching column, residual 0.
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into()],
            values: DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 0., 0., 0., 0.]),
        };
        let targets = DMatrix::from_row_slice(4, 1, &[1., 0., 0., 0.]);
        let sol = least_squares(&design, &targets, 0.0).unwrap();
        assert!((sol.coefficients[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(sol.coefficients[(1, 0)].abs() < 1e-12);
        assert!(sol.residuals.amax() < 1e-12);
        assert!((sol.r_squared[0] - 1.0).abs() < 1e-12);

        // Target orthogonal to every column: zero coefficients, R^2 = 0.
        let design = DesignMatrix {
            columns: vec!["1".into()],
            values: DMatrix::from_element(4, 1, 1.0),
        };
        let targets = DMatrix::from_row_slice(4, 1, &[1., -1., 1., -1.]);
        let sol = least_squares(&design, &targets, 0.0).unwrap();
        assert!(sol.coefficients.amax() < 1e-12);
        assert!(sol.r_squared[0].abs() < 1e-12);
    }

    #[test]
    fn recovers_known_linear_generator() {
        // y = 2 x1 - x2 + noise(sigma = 0.01); recover (2, -1) within 0.01.
        let mut rng = Rng64::from_seed(7);
        let n = 10_000;
        let mut values = DMatrix::zeros(n, 2);
        let mut targets = DMatrix::zeros(n, 1);
        for k in 0..n {
            let x1 = rng.standard_normal();
            let x2 = rng.standard_normal();
            values[(k, 0)] = x1;
            values[(k, 1)] = x2;
            targets[(k, 0)] = 2.0 * x1 - x2 + 0.01 * rng.standard_normal();
        }
        let design = DesignMatrix {
            columns: vec!["x1".into(), "x2".into()],
            values,
        };
        let sol = least_squares(&design, &targets, 0.0).unwrap();
        assert!((sol.coefficients[(0, 0)] - 2.0).abs() < 0.01);
        assert!((sol.coefficients[(1, 0)] + 1.0).abs() < 0.01);
        // Residual orthogonality to every design column.
        for c in 0..2 {
            let col = design.values.column(c);
            let dot = col.dot(&sol.residuals.column(0));
            assert!(dot.abs() / (col.norm() * sol.residuals.column(0).norm()) < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_requires_ridge() {
        // Duplicated column: QR path errors, ridge path succeeds.
        let col = [1.0, 2.0, 3.0, 4.0];
        let mut values = DMatrix::zeros(4, 2);
        for k in 0..4 {
            values[(k, 0)] = col[k];
            values[(k, 1)] = col[k];
        }
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into()],
            values,
        };
        let targets = DMatrix::from_row_slice(4, 1, &[1., 2., 3., 4.]);
        let err = least_squares(&design, &targets, 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"));
        assert!(least_squares(&design, &targets, 1e-8).is_ok());
    }

    #[test]
    fn ridge_converges_to_unregularized() {
        let mut rng = Rng64::from_seed(11);
        let n = 200;
        let values = DMatrix::from_fn(n, 3, |_, _| rng.standard_normal());
        let targets = DMatrix::from_fn(n, 1, |_, _| rng.standard_normal());
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into(), "c".into()],
            values,
        };
        let exact = least_squares(&design, &targets, 0.0).unwrap();
        let mut last_err = f64::INFINITY;
        for lambda in [1e-2, 1e-4, 1e-6] {
            let sol = least_squares(&design, &targets, lambda).unwrap();
            let err = (&sol.coefficients - &exact.coefficients).norm();
            assert!(err < last_err, "lambda {lambda}: {err} !< {last_err}");
            last_err = err;
        }
        assert!(last_err < 1e-6);
    }

    #[test]
    fn unconstrained_reduction_matches_least_squares() {
        let mut rng = Rng64::from_seed(3);
        let values = DMatrix::from_fn(50, 3, |_, _| rng.standard_normal());
        let targets = DMatrix::from_fn(50, 2, |_, _| rng.standard_normal());
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into(), "c".into()],
            values,
        };
        let plain = least_squares(&design, &targets, 0.0).unwrap();
        let constrained =
            constrained_least_squares(&design, &targets, &ConstraintSet::none(), 0.0).unwrap();
        assert!((&plain.coefficients - &constrained.coefficients).amax() < 1e-10);
    }

    /// Gaussian elimination with partial pivoting, small and self-contained,
    /// used as an independent oracle for KKT systems.
    fn solve_dense(a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for col in (0..n).rev() {
            let mut acc = b[col];
            for c in col + 1..n {
                acc -= a[col][c] * x[c];
            }
            x[col] = acc / a[col][col];
        }
        x
    }

    #[test]
    fn single_equality_matches_kkt_oracle() {
        // Two parameters, one equality theta_0 = 0. The oracle assembles the
        // 3x3 KKT system [X^T X, -a^T; a, 0] by hand and solves it directly.
        let mut rng = Rng64::from_seed(19);
        let n = 60;
        let values = DMatrix::from_fn(n, 2, |_, _| rng.standard_normal());
        let targets = DMatrix::from_fn(n, 1, |_, _| rng.standard_normal());
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into()],
            values: values.clone(),
        };
        let gram = values.transpose() * &values;
        let xty = values.transpose() * &targets;
        let mut kkt = vec![
            vec![gram[(0, 0)], gram[(0, 1)], -1.0],
            vec![gram[(1, 0)], gram[(1, 1)], 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        let mut rhs = vec![xty[(0, 0)], xty[(1, 0)], 0.0];
        let oracle = solve_dense(&mut kkt, &mut rhs);

        let constraints = ConstraintSet {
            equalities: vec![LinearEquality {
                coefficients: vec![(0, 1.0)],
                rhs: 0.0,
            }],
            inequalities: vec![],
        };
        let sol = constrained_least_squares(&design, &targets, &constraints, 0.0).unwrap();
        assert!(sol.coefficients[(0, 0)].abs() < 1e-10);
        assert!((sol.coefficients[(1, 0)] - oracle[1]).abs() < 1e-8);
    }

    #[test]
    fn bound_activates_only_when_binding() {
        // One parameter; unconstrained optimum is the projection coefficient.
        let values = DMatrix::from_row_slice(3, 1, &[1., 1., 1.]);
        let design = DesignMatrix {
            columns: vec!["1".into()],
            values,
        };
        // Optimum -2 against bound theta >= 0: clamps to the bound.
        let targets = DMatrix::from_row_slice(3, 1, &[-2., -2., -2.]);
        let constraints = ConstraintSet {
            equalities: vec![],
            inequalities: vec![BoundInequality {
                index: 0,
                coefficient: 1.0,
                lower: 0.0,
            }],
        };
        let sol = constrained_least_squares(&design, &targets, &constraints, 0.0).unwrap();
        assert!(sol.coefficients[(0, 0)].abs() < 1e-10);
        assert_eq!(sol.active_inequalities, vec![0]);

        // Optimum +2 satisfies the bound: unconstrained solution, inactive.
        let targets = DMatrix::from_row_slice(3, 1, &[2., 2., 2.]);
        let sol = constrained_least_squares(&design, &targets, &constraints, 0.0).unwrap();
        assert!((sol.coefficients[(0, 0)] - 2.0).abs() < 1e-10);
        assert!(sol.active_inequalities.is_empty());
    }

    #[test]
    fn satisfied_constraints_leave_optimum_untouched() {
        // Add an equality that the unconstrained optimum already satisfies.
        let mut rng = Rng64::from_seed(23);
        let values = DMatrix::from_fn(80, 2, |_, _| rng.standard_normal());
        let targets = DMatrix::from_fn(80, 1, |_, _| rng.standard_normal());
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into()],
            values,
        };
        let plain = least_squares(&design, &targets, 0.0).unwrap();
        let t0 = plain.coefficients[(0, 0)];
        let t1 = plain.coefficients[(1, 0)];
        let constraints = ConstraintSet {
            equalities: vec![LinearEquality {
                coefficients: vec![(0, 1.0), (1, 2.0)],
                rhs: t0 + 2.0 * t1,
            }],
            inequalities: vec![],
        };
        let sol = constrained_least_squares(&design, &targets, &constraints, 0.0).unwrap();
        assert!((&sol.coefficients - &plain.coefficients).amax() < 1e-8);
    }

    #[test]
    fn energy_constraint_counts() {
        let c1 = energy_constraints(1);
        assert_eq!(c1.equalities.len(), 1);
        assert_eq!(c1.inequalities.len(), 1);
        let c2 = energy_constraints(2);
        assert_eq!(c2.equalities.len(), 2 + 4 + 0 + 1);
        assert_eq!(c2.inequalities.len(), 2);
        let c3 = energy_constraints(3);
        assert_eq!(c3.equalities.len(), 3 + 12 + 1 + 3);
        assert_eq!(c3.inequalities.len(), 3);
    }

    #[test]
    fn constrained_quadratic_term_conserves_energy() {
        // Fit a random 3-channel drift under the full energy set, then check
        // <B(x,x), x> = 0 on random points against the fitted monomials.
        let d = 3;
        let mut rng = Rng64::from_seed(41);
        let n = 500;
        let data = DMatrix::from_fn(n, d, |_, _| rng.standard_normal());
        let ts = series_from(data, 1.0);
        let design = build_quadratic_design(&ts, &[]).unwrap();
        let targets = DMatrix::from_fn(n, d, |_, _| rng.standard_normal());
        let constraints = energy_constraints(d);
        let sol = constrained_least_squares(&design, &targets, &constraints, 0.0).unwrap();

        // Equality feasibility on the solver's own output.
        let m = design.m();
        for eq in &constraints.equalities {
            let acc: f64 = eq
                .coefficients
                .iter()
                .map(|&(idx, c)| c * sol.coefficients[(idx % m, idx / m)])
                .sum();
            assert!(acc.abs() < 1e-10, "equality residual {acc}");
        }
        // Diagonal dissipativity bounds hold.
        for i in 0..d {
            assert!(-sol.coefficients[(1 + i, i)] >= 1e-8 - 1e-12);
        }

        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.standard_normal()).collect();
            let norm3 = x.iter().map(|v| v * v).sum::<f64>().powf(1.5);
            let mut dot = 0.0;
            for c in 0..d {
                let mut bc = 0.0;
                for i in 0..d {
                    for j in i..d {
                        bc += sol.coefficients[(1 + d + quad_index(i, j, d), c)] * x[i] * x[j];
                    }
                }
                dot += x[c] * bc;
            }
            assert!(
                dot.abs() <= 1e-10 * norm3.max(1.0),
                "energy leak {dot} at |x|^3 = {norm3}"
            );
        }
    }

    #[test]
    fn redundant_and_inconsistent_equalities() {
        let values = DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 1., 1., 1., -1.]);
        let design = DesignMatrix {
            columns: vec!["a".into(), "b".into()],
            values,
        };
        let targets = DMatrix::from_row_slice(4, 1, &[1., 2., 3., 4.]);
        // Duplicated row is dropped, not treated as rank deficiency.
        let redundant = ConstraintSet {
            equalities: vec![
                LinearEquality {
                    coefficients: vec![(0, 1.0)],
                    rhs: 0.5,
                },
                LinearEquality {
                    coefficients: vec![(0, 1.0)],
                    rhs: 0.5,
                },
            ],
            inequalities: vec![],
        };
        let sol = constrained_least_squares(&design, &targets, &redundant, 0.0).unwrap();
        assert!((sol.coefficients[(0, 0)] - 0.5).abs() < 1e-10);
        // Contradictory rhs is infeasible.
        let contradictory = ConstraintSet {
            equalities: vec![
                LinearEquality {
                    coefficients: vec![(0, 1.0)],
                    rhs: 0.5,
                },
                LinearEquality {
                    coefficients: vec![(0, 1.0)],
                    rhs: 1.5,
                },
            ],
            inequalities: vec![],
        };
        assert!(constrained_least_squares(&design, &targets, &contradictory, 0.0).is_err());
    }
}
