//! Uniformly sampled multivariate time series and their summary statistics:
//! finite differences, autocorrelation curves, histogram densities, EOF
//! (principal component) compression, and channel variances.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

/// Uniformly sampled multivariate time series.
///
/// Rows are time steps, columns are channels. Sampling times are
/// `t0 + k * dt` for `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// N x d sample matrix (rows = time steps, columns = channels).
    pub data: DMatrix<f64>,
    /// Sampling step, in model time units. Strictly positive.
    pub dt: f64,
    /// Channel labels, one per column.
    pub names: Vec<String>,
    /// Start time of the first row.
    pub t0: f64,
}

impl TimeSeries {
    /// Build a validated series: N >= 2, dt > 0, finite entries, one name
    /// per channel.
    pub fn new(data: DMatrix<f64>, dt: f64, names: Vec<String>, t0: f64) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::config(format!(
                "time series needs at least 2 samples, got {}",
                data.nrows()
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config(format!("dt must be positive and finite, got {dt}")));
        }
        if names.len() != data.ncols() {
            return Err(Error::config(format!(
                "{} channel names for {} channels",
                names.len(),
                data.ncols()
            )));
        }
        if !t0.is_finite() {
            return Err(Error::config("t0 must be finite"));
        }
        if let Some((k, c)) = first_nonfinite(&data) {
            return Err(Error::config(format!(
                "non-finite value at row {k}, channel {c}"
            )));
        }
        Ok(TimeSeries { data, dt, names, t0 })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    /// Always false: construction requires N >= 2.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of channels.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Copy of channel `c` as a contiguous vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.column(c).iter().copied().collect()
    }

    /// First `n` rows as a new series (n >= 2).
    pub fn head(&self, n: usize) -> Result<TimeSeries> {
        if n > self.len() {
            return Err(Error::config(format!(
                "cannot take {n} rows from a series of {}",
                self.len()
            )));
        }
        TimeSeries::new(
            self.data.rows(0, n).into_owned(),
            self.dt,
            self.names.clone(),
            self.t0,
        )
    }

    /// Drop the first `n` rows (transient removal); at least 2 must remain.
    pub fn skip(&self, n: usize) -> Result<TimeSeries> {
        if n + 2 > self.len() {
            return Err(Error::config(format!(
                "cannot skip {n} rows from a series of {}",
                self.len()
            )));
        }
        TimeSeries::new(
            self.data.rows(n, self.len() - n).into_owned(),
            self.dt,
            self.names.clone(),
            self.t0 + n as f64 * self.dt,
        )
    }

    /// New series holding only the given channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<TimeSeries> {
        if channels.is_empty() {
            return Err(Error::config("select_channels needs at least one channel"));
        }
        let mut data = DMatrix::zeros(self.len(), channels.len());
        let mut names = Vec::with_capacity(channels.len());
        for (j, &c) in channels.iter().enumerate() {
            if c >= self.dim() {
                return Err(Error::config(format!(
                    "channel {c} out of range for a series of {} channels",
                    self.dim()
                )));
            }
            data.column_mut(j).copy_from(&self.data.column(c));
            names.push(self.names[c].clone());
        }
        TimeSeries::new(data, self.dt, names, self.t0)
    }

    /// Forward differences `(x_{k+1} - x_k) / dt`, one row shorter than the
    /// input. Names, dt, and t0 are carried over.
    pub fn finite_differences(&self) -> TimeSeries {
        let n = self.len();
        let d = self.dim();
        let mut out = DMatrix::zeros(n - 1, d);
        for c in 0..d {
            let col = self.data.column(c);
            for k in 0..n - 1 {
                out[(k, c)] = (col[k + 1] - col[k]) / self.dt;
            }
        }
        TimeSeries {
            data: out,
            dt: self.dt,
            names: self.names.clone(),
            t0: self.t0,
        }
    }

    /// Unbiased sample variance per channel.
    pub fn variance_by_channel(&self) -> DVector<f64> {
        let n = self.len() as f64;
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|c| {
                let col = self.data.column(c);
                let mean = col.sum() / n;
                col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
            }),
        )
    }

    /// Per-channel autocorrelation up to `max_lag`, using the biased (1/N)
    /// autocovariance estimator `c(l) = (1/N) sum (x_k - mean)(x_{k+l} - mean)`
    /// normalized by `c(0)`. Constant channels are flagged and their values
    /// set to zero for all positive lags.
    pub fn acf(&self, max_lag: usize) -> Result<AcfCurve> {
        let n = self.len();
        if max_lag >= n {
            return Err(Error::config(format!(
                "max_lag {max_lag} must be smaller than the sample count {n}"
            )));
        }
        let d = self.dim();
        let mut values = DMatrix::zeros(max_lag + 1, d);
        let mut degenerate = vec![false; d];
        for c in 0..d {
            let col: Vec<f64> = self.channel(c);
            let constant = col.iter().all(|&x| x == col[0]);
            if constant {
                degenerate[c] = true;
                values[(0, c)] = 1.0;
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let c0 = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            values[(0, c)] = 1.0;
            for lag in 1..=max_lag {
                let cl = (0..n - lag)
                    .map(|k| (col[k] - mean) * (col[k + lag] - mean))
                    .sum::<f64>()
                    / n as f64;
                values[(lag, c)] = cl / c0;
            }
        }
        Ok(AcfCurve {
            lags: (0..=max_lag).collect(),
            values,
            degenerate,
        })
    }

    /// Histogram density of one channel over the data range padded by 1%
    /// (0.5% each side). A constant channel gets a unit-width range around
    /// the value, with all mass in one bin.
    pub fn pdf1d(&self, channel: usize, bins: usize) -> Result<Histogram1D> {
        if channel >= self.dim() {
            return Err(Error::config(format!(
                "channel {channel} out of range for {} channels",
                self.dim()
            )));
        }
        if bins < 2 {
            return Err(Error::config("need at least 2 bins"));
        }
        let col = self.channel(channel);
        let (lo, hi) = padded_range(&col);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &x in &col {
            counts[bin_index(x, lo, width, bins)] += 1;
        }
        let n = col.len() as f64;
        let density: Vec<f64> = counts.iter().map(|&k| k as f64 / (n * width)).collect();
        let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
        Ok(Histogram1D { edges, density })
    }

    /// Joint histogram density of channels `i` and `j` on a bins x bins grid,
    /// each axis padded like [`TimeSeries::pdf1d`].
    pub fn pdf2d(&self, i: usize, j: usize, bins: usize) -> Result<Histogram2D> {
        if i >= self.dim() || j >= self.dim() {
            return Err(Error::config(format!(
                "channel pair ({i}, {j}) out of range for {} channels",
                self.dim()
            )));
        }
        if bins < 2 {
            return Err(Error::config("need at least 2 bins"));
        }
        let xi = self.channel(i);
        let xj = self.channel(j);
        let (xlo, xhi) = padded_range(&xi);
        let (ylo, yhi) = padded_range(&xj);
        let xw = (xhi - xlo) / bins as f64;
        let yw = (yhi - ylo) / bins as f64;
        let mut counts = DMatrix::<f64>::zeros(bins, bins);
        for k in 0..xi.len() {
            let bx = bin_index(xi[k], xlo, xw, bins);
            let by = bin_index(xj[k], ylo, yw, bins);
            counts[(bx, by)] += 1.0;
        }
        let n = xi.len() as f64;
        let density = counts.map(|c| c / (n * xw * yw));
        Ok(Histogram2D {
            x_edges: (0..=bins).map(|b| xlo + b as f64 * xw).collect(),
            y_edges: (0..=bins).map(|b| ylo + b as f64 * yw).collect(),
            density,
        })
    }

    /// Project onto the leading `d_keep` EOF modes of the sample covariance.
    ///
    /// Returns the principal-component series (channels `pc1..pc{d_keep}`)
    /// and the full basis. Modes are orthonormal, ordered by nonincreasing
    /// explained variance (ties broken by original eigen index), and each
    /// mode's sign is fixed so its largest-magnitude entry is positive.
    pub fn eof_compress(&self, d_keep: usize) -> Result<(TimeSeries, EofBasis)> {
        let d = self.dim();
        if d_keep < 1 || d_keep > d {
            return Err(Error::config(format!(
                "d_keep {d_keep} must be in 1..={d}"
            )));
        }
        let n = self.len();
        let mean = DVector::from_iterator(d, (0..d).map(|c| self.data.column(c).sum() / n as f64));
        let mut centered = self.data.clone();
        for c in 0..d {
            let mut col = centered.column_mut(c);
            col.add_scalar_mut(-mean[c]);
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = nalgebra::SymmetricEigen::new(cov);
        // Sort eigenpairs by descending eigenvalue, stable in the original index.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut modes = DMatrix::zeros(d, d);
        let mut explained = Vec::with_capacity(d);
        for (out_c, &src) in order.iter().enumerate() {
            let mut v: DVector<f64> = eig.eigenvectors.column(src).into();
            // Deterministic sign: largest-magnitude entry positive.
            let pivot = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            if v[pivot] < 0.0 {
                v.neg_mut();
            }
            modes.set_column(out_c, &v);
            explained.push(eig.eigenvalues[src].max(0.0));
        }
        let pcs_full = &centered * &modes;
        let pcs = pcs_full.columns(0, d_keep).into_owned();
        let names = (1..=d_keep).map(|k| format!("pc{k}")).collect();
        let series = TimeSeries {
            data: pcs,
            dt: self.dt,
            names,
            t0: self.t0,
        };
        Ok((
            series,
            EofBasis {
                mean,
                modes,
                explained_variance: explained,
            },
        ))
    }

    /// Write the series as CSV: header of channel names, one row per step.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(&self.names)
            .map_err(|e| Error::config(format!("csv write: {e}")))?;
        let mut record = Vec::with_capacity(self.dim());
        for k in 0..self.len() {
            record.clear();
            for c in 0..self.dim() {
                record.push(format!("{:?}", self.data[(k, c)]));
            }
            w.write_record(&record)
                .map_err(|e| Error::config(format!("csv write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn first_nonfinite(data: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..data.ncols() {
        for k in 0..data.nrows() {
            if !data[(k, c)].is_finite() {
                return Some((k, c));
            }
        }
    }
    None
}

/// Data range padded by 0.5% of the span on each side (1% total).
/// Degenerate (constant) data gets a unit-width window around the value.
fn padded_range(xs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let span = hi - lo;
    let pad = 0.005 * span;
    let (plo, phi) = (lo - pad, hi + pad);
    if phi > plo {
        (plo, phi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn bin_index(x: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((x - lo) / width) as usize).min(bins - 1)
}

/// One-dimensional histogram density; integrates to 1.
#[derive(Debug, Clone)]
pub struct Histogram1D {
    /// B+1 ascending bin edges.
    pub edges: Vec<f64>,
    /// B nonnegative densities.
    pub density: Vec<f64>,
}

impl Histogram1D {
    /// `sum(density * bin_width)`; equals 1 up to rounding by construction.
    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .enumerate()
            .map(|(b, &d)| d * (self.edges[b + 1] - self.edges[b]))
            .sum()
    }

    /// L1 distance between two densities over a shared support.
    ///
    /// Both histograms are re-evaluated on the union range with `bins`
    /// uniform cells (piecewise-constant interpolation), so differently
    /// binned estimates remain comparable.
    pub fn l1_distance(&self, other: &Histogram1D, bins: usize) -> f64 {
        let lo = self.edges[0].min(other.edges[0]);
        let hi = self
            .edges
            .last()
            .unwrap()
            .max(*other.edges.last().unwrap());
        let w = (hi - lo) / bins as f64;
        let mut acc = 0.0;
        for b in 0..bins {
            let x = lo + (b as f64 + 0.5) * w;
            acc += (self.value_at(x) - other.value_at(x)).abs() * w;
        }
        acc
    }

    /// Density at `x` (0 outside the support).
    pub fn value_at(&self, x: f64) -> f64 {
        if x < self.edges[0] || x >= *self.edges.last().unwrap() {
            return 0.0;
        }
        let b = bin_index(
            x,
            self.edges[0],
            (self.edges.last().unwrap() - self.edges[0]) / self.density.len() as f64,
            self.density.len(),
        );
        self.density[b]
    }
}

/// Two-dimensional histogram density; integrates to 1.
#[derive(Debug, Clone)]
pub struct Histogram2D {
    /// Bx+1 ascending edges along the first channel.
    pub x_edges: Vec<f64>,
    /// By+1 ascending edges along the second channel.
    pub y_edges: Vec<f64>,
    /// Bx x By nonnegative densities.
    pub density: DMatrix<f64>,
}

impl Histogram2D {
    /// Total integral; equals 1 up to rounding by construction.
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for bx in 0..self.density.nrows() {
            let wx = self.x_edges[bx + 1] - self.x_edges[bx];
            for by in 0..self.density.ncols() {
                let wy = self.y_edges[by + 1] - self.y_edges[by];
                acc += self.density[(bx, by)] * wx * wy;
            }
        }
        acc
    }
}

/// Per-channel autocorrelation curve.
#[derive(Debug, Clone)]
pub struct AcfCurve {
    /// Lags 0..=L in sample steps.
    pub lags: Vec<usize>,
    /// (L+1) x d matrix of autocorrelations.
    pub values: DMatrix<f64>,
    /// Channels with zero variance (values are 0 beyond lag 0).
    pub degenerate: Vec<bool>,
}

impl AcfCurve {
    /// Largest absolute difference to another curve over shared lags,
    /// for channel `c`.
    pub fn max_abs_deviation(&self, other: &AcfCurve, c: usize) -> f64 {
        let l = self.lags.len().min(other.lags.len());
        (0..l)
            .map(|k| (self.values[(k, c)] - other.values[(k, c)]).abs())
            .fold(0.0, f64::max)
    }
}

/// Orthonormal EOF basis of a sample covariance.
#[derive(Debug, Clone)]
pub struct EofBasis {
    /// Channel means removed before projection.
    pub mean: DVector<f64>,
    /// d x d orthonormal modes, one per column, variance-ordered.
    pub modes: DMatrix<f64>,
    /// Nonincreasing covariance eigenvalues.
    pub explained_variance: Vec<f64>,
}

impl EofBasis {
    /// Reconstruct a series from its leading principal components
    /// (as produced by [`TimeSeries::eof_compress`]).
    pub fn reconstruct(&self, pcs: &TimeSeries, names: Vec<String>) -> Result<TimeSeries> {
        let k = pcs.dim();
        if k > self.modes.ncols() {
            return Err(Error::config("more components than basis modes"));
        }
        let sub = self.modes.columns(0, k);
        let mut data = &pcs.data * sub.transpose();
        for c in 0..data.ncols() {
            let mut col = data.column_mut(c);
            col.add_scalar_mut(self.mean[c]);
        }
        TimeSeries::new(data, pcs.dt, names, pcs.t0)
    }
}

/// Pearson correlation coefficient between two equally long sequences.
///
/// Errors if either input is constant or shorter than 2.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::config(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::config("need at least 2 samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for k in 0..x.len() {
        let dx = x[k] - mx;
        let dy = y[k] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::config("pearson undefined for constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Read a CSV time series (header row of channel names, one row per step),
/// dropping the first `skip_transient` rows.
pub fn load_csv(path: impl AsRef<Path>, dt: f64, skip_transient: usize) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::config(format!("csv header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let d = names.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::config(format!("csv row {}: {e}", r + 1)))?;
        if record.len() != d {
            return Err(Error::config(format!(
                "csv row {}: expected {} fields, got {}",
                r + 1,
                d,
                record.len()
            )));
        }
        if r < skip_transient {
            continue;
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::config(format!("csv row {}, column {}: {e}", r + 1, c)))?;
            rows.push(v);
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::config(format!(
            "{n} rows after dropping {skip_transient}; need at least 2"
        )));
    }
    let data = DMatrix::from_row_iterator(n, d, rows.into_iter());
    TimeSeries::new(data, dt, names, skip_transient as f64 * dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: &[&[f64]], dt: f64) -> TimeSeries {
        let n = rows.len();
        let d = rows[0].len();
        let data = DMatrix::from_fn(n, d, |r, c| rows[r][c]);
        let names = (0..d).map(|c| format!("x{}", c + 1)).collect();
        TimeSeries::new(data, dt, names, 0.0).unwrap()
    }

    #[test]
    fn construction_validates() {
        let one_row = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(TimeSeries::new(one_row, 1.0, vec!["a".into()], 0.0).is_err());
        let bad_dt = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(TimeSeries::new(bad_dt.clone(), 0.0, vec!["a".into()], 0.0).is_err());
        assert!(TimeSeries::new(bad_dt.clone(), 1.0, vec![], 0.0).is_err());
        let with_nan = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(TimeSeries::new(with_nan, 1.0, vec!["a".into()], 0.0).is_err());
        assert!(TimeSeries::new(bad_dt, 1.0, vec!["a".into()], 0.0).is_ok());
    }

    #[test]
    fn finite_differences_constant_and_ramp() {
        let constant = series(&[&[3.0], &[3.0], &[3.0]], 0.5);
        let diff = constant.finite_differences();
        assert_eq!(diff.len(), 2);
        assert!(diff.data.iter().all(|&v| v == 0.0));

        // x_k = k * dt gives slope exactly 1.
        let dt = 0.25;
        let ramp = series(&[&[0.0], &[dt], &[2.0 * dt], &[3.0 * dt]], dt);
        let diff = ramp.finite_differences();
        for &v in diff.data.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_differences_tracks_analytic_derivative() {
        let dt = 0.01;
        let n = 200;
        let data = DMatrix::from_fn(n, 1, |k, _| (k as f64 * dt).sin());
        let ts = TimeSeries::new(data, dt, vec!["s".into()], 0.0).unwrap();
        let diff = ts.finite_differences();
        for k in 0..diff.len() {
            let expected = (k as f64 * dt).cos();
            assert!(
                (diff.data[(k, 0)] - expected).abs() < 2.0 * dt,
                "lag {k}: {} vs {}",
                diff.data[(k, 0)],
                expected
            );
        }
    }

    #[test]
    fn acf_lag0_and_bounds() {
        let ts = series(&[&[1.0, 0.0], &[2.0, 0.0], &[0.5, 0.0], &[1.5, 0.0]], 1.0);
        let acf = ts.acf(2).unwrap();
        assert_eq!(acf.values[(0, 0)], 1.0);
        assert!(acf.degenerate[1]);
        assert_eq!(acf.values[(0, 1)], 1.0);
        assert_eq!(acf.values[(1, 1)], 0.0);
        assert!(ts.acf(4).is_err());
    }

    #[test]
    fn acf_matches_direct_double_loop() {
        // Brute-force estimator written independently of the implementation.
        let xs = [0.3, -1.2, 0.7, 2.0, -0.5, 0.1, 1.4, -0.9];
        let n = xs.len();
        let data = DMatrix::from_fn(n, 1, |k, _| xs[k]);
        let ts = TimeSeries::new(data, 1.0, vec!["x".into()], 0.0).unwrap();
        let acf = ts.acf(3).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let c0: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        for lag in 0..=3 {
            let mut cl = 0.0;
            for k in 0..n - lag {
                cl += (xs[k] - mean) * (xs[k + lag] - mean);
            }
            cl /= n as f64;
            assert!((acf.values[(lag, 0)] - cl / c0).abs() < 1e-12);
        }
    }

    #[test]
    fn pdf1d_constant_channel() {
        let ts = series(&[&[2.0], &[2.0], &[2.0]], 1.0);
        let h = ts.pdf1d(0, 10).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-12);
        let occupied = h.density.iter().filter(|&&d| d > 0.0).count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn pdf2d_integrates_to_one() {
        let ts = series(
            &[&[0.0, 1.0], &[1.0, 0.5], &[0.2, 0.7], &[0.9, 0.1]],
            1.0,
        );
        let h = ts.pdf2d(0, 1, 5).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_identities() {
        let x = [1.0, 2.0, 4.0, 0.5, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        // Positive-slope affine invariance.
        let z: Vec<f64> = x.iter().map(|v| 3.5 * v + 2.0).collect();
        assert!((pearson(&x, &z).unwrap() - 1.0).abs() < 1e-12);
        let constant = [1.0; 5];
        assert!(pearson(&x, &constant).is_err());
    }

    #[test]
    fn variance_ramp_closed_form() {
        let n = 100;
        let data = DMatrix::from_fn(n, 1, |k, _| k as f64);
        let ts = TimeSeries::new(data, 1.0, vec!["r".into()], 0.0).unwrap();
        let v = ts.variance_by_channel();
        let nf = n as f64;
        // Unbiased variance of 0..N-1 is N(N+1)/12.
        assert!((v[0] - nf * (nf + 1.0) / 12.0).abs() < 1e-9);
    }

    #[test]
    fn eof_rank_one_recovers_channel() {
        let n = 50;
        let data = DMatrix::from_fn(n, 2, |k, c| if c == 0 { (k as f64 * 0.3).sin() } else { 0.0 });
        let ts = TimeSeries::new(data, 1.0, vec!["a".into(), "b".into()], 0.0).unwrap();
        let (pcs, basis) = ts.eof_compress(1).unwrap();
        let mean0 = ts.data.column(0).sum() / n as f64;
        for k in 0..n {
            let centered = ts.data[(k, 0)] - mean0;
            let pc = pcs.data[(k, 0)];
            assert!((pc.abs() - centered.abs()).abs() < 1e-10);
        }
        assert!(basis.explained_variance[1].abs() < 1e-12);
    }

    #[test]
    fn eof_full_reconstruction() {
        let n = 40;
        let data = DMatrix::from_fn(n, 3, |k, c| ((k * (c + 2)) as f64 * 0.17).sin() + c as f64);
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let ts = TimeSeries::new(data.clone(), 1.0, names.clone(), 0.0).unwrap();
        let (pcs, basis) = ts.eof_compress(3).unwrap();
        let rec = basis.reconstruct(&pcs, names).unwrap();
        let err = (&rec.data - &data).norm() / data.norm();
        assert!(err < 1e-10, "relative reconstruction error {err}");
        // Orthonormality of the basis.
        let gram = basis.modes.transpose() * &basis.modes;
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((gram - eye).norm() < 1e-10);
    }

    #[test]
    fn csv_roundtrip_and_transient_skip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let ts = series(&[&[1.0, -0.5], &[2.25, 0.125], &[3.5, 0.75], &[4.0, 1.0]], 0.1);
        ts.save_csv(&path).unwrap();
        let loaded = load_csv(&path, 0.1, 0).unwrap();
        assert_eq!(loaded.names, ts.names);
        assert_eq!(loaded.data, ts.data);
        let skipped = load_csv(&path, 0.1, 2).unwrap();
        assert_eq!(skipped.len(), 2);
        assert_eq!(skipped.data[(0, 0)], 3.5);
        assert!(load_csv(&path, 0.1, 3).is_err());
    }

    #[test]
    fn skip_and_select_channels() {
        let ts = series(&[&[1.0, -0.5], &[2.25, 0.125], &[3.5, 0.75], &[4.0, 1.0]], 0.1);
        let tail = ts.skip(2).unwrap();
        assert_eq!(tail.len(), 2);
        assert_eq!(tail.data[(0, 1)], 0.75);
        assert!((tail.t0 - 0.2).abs() < 1e-15);
        assert!(ts.skip(3).is_err());

        let second = ts.select_channels(&[1]).unwrap();
        assert_eq!(second.dim(), 1);
        assert_eq!(second.names, vec!["x2".to_string()]);
        assert_eq!(second.channel(0), ts.channel(1));
        let swapped = ts.select_channels(&[1, 0]).unwrap();
        assert_eq!(swapped.channel(1), ts.channel(0));
        assert!(ts.select_channels(&[2]).is_err());
        assert!(ts.select_channels(&[]).is_err());
    }
}
