use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};

/// Largest distance from any candidate to its nearest point of `s`, and the
/// candidate attaining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillDistanceReport {
    pub h: f64,
    pub witness: Vec<f64>,
}

pub fn fill_distance(s: ArrayView2<f64>, candidates: ArrayView2<f64>) -> Result<FillDistanceReport> {
    if s.nrows() == 0 || candidates.nrows() == 0 {
        return Err(Error::EmptyInput("fill distance needs points and candidates"));
    }
    check_dim(s.ncols(), candidates.ncols())?;
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, c) in candidates.rows().into_iter().enumerate() {
        let nearest = s
            .rows()
            .into_iter()
            .map(|p| (&p - &c).mapv(|v| v * v).sum())
            .fold(f64::INFINITY, f64::min);
        if nearest > best.0 {
            best = (nearest, i);
        }
    }
    Ok(FillDistanceReport {
        h: best.0.sqrt(),
        witness: candidates.row(best.1).to_vec(),
    })
}

/// `f(x) = sum_i c_i k(x_i, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    pub spec: KernelSpec,
    pub nodes: Array2<f64>,
    pub coeffs: Array1<f64>,
}

impl Interpolant {
    pub fn eval(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(kernel_matrix(&self.spec, x, self.nodes.view())?.dot(&self.coeffs))
    }
}

/// Solves `(K(X, X) + ridge I) c = values` by LU factorization.
pub fn kernel_interpolate(
    spec: &KernelSpec,
    x: ArrayView2<f64>,
    values: ArrayView1<f64>,
    ridge: f64,
) -> Result<Interpolant> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("interpolation nodes"));
    }
    check_dim(n, values.len())?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(invalid("ridge must be finite and nonnegative"));
    }
    let k = kernel_matrix(spec, x, x)?;
    let a = DMatrix::from_fn(n, n, |i, j| k[[i, j]] + if i == j { ridge } else { 0.0 });
    let b = DVector::from_iterator(n, values.iter().copied());
    let singular = || {
        Error::Singular(format!(
            "kernel system with {n} nodes is singular (duplicate nodes?); use a positive ridge"
        ))
    };
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(singular());
    }
    let c = lu.solve(&b).ok_or_else(singular)?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(Interpolant {
        spec: *spec,
        nodes: x.to_owned(),
        coeffs: Array1::from_iter(c.iter().copied()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nodes: usize,
    pub h: f64,
    pub sup_error: f64,
}

/// Points used to measure sup errors on `[0, 1]`.
pub const DENSE_GRID: usize = 10_000;

/// Ridge used by [`convergence_study`].
pub const STUDY_RIDGE: f64 = 1e-12;

fn unit_grid(n: usize) -> Array2<f64> {
    let denom = (n.max(2) - 1) as f64;
    Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / denom)
}

/// Interpolates `f` on equispaced nodes of `[0, 1]` for each size and
/// records the fill distance and the sup error on a dense grid.
pub fn convergence_study(
    spec: &KernelSpec,
    f: impl Fn(f64) -> f64,
    grid_sizes: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if grid_sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid sizes must be strictly increasing"));
    }
    if grid_sizes.first().is_some_and(|&n| n < 2) {
        return Err(invalid("grid sizes must be at least 2"));
    }
    let dense = unit_grid(DENSE_GRID);
    let truth = dense.column(0).mapv(&f);
    grid_sizes
        .iter()
        .map(|&n| {
            let nodes = unit_grid(n);
            let values = nodes.column(0).mapv(&f);
            let interp = kernel_interpolate(spec, nodes.view(), values.view(), STUDY_RIDGE)?;
            let approx = interp.eval(dense.view())?;
            let sup_error = (&approx - &truth).iter().fold(0.0f64, |m, e| m.max(e.abs()));
            Ok(ConvergenceRow {
                nodes: n,
                h: 0.5 / (n - 1) as f64,
                sup_error,
            })
        })
        .collect()
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn log_log_slope(rows: &[ConvergenceRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h.ln(), r.sup_error.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
