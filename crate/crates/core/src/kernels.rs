//! Radial Mercer kernels, their spatial gradients, and Gram matrices.
//!
//! Both families are functions of the Euclidean distance r = |x - y|:
//!
//! | family   | k(r)               | grad_x k                    |
//! |----------|--------------------|-----------------------------|
//! | Gaussian | exp(-r^2 / 2 l^2)  | -(x - y) / l^2 * k          |
//! | Laplace  | exp(-r / l)        | -(x - y) / (l r) * k, 0 at r = 0 |
//!
//! Everything is evaluated in `f64`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Laplace,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "rbf" => Ok(Self::Gaussian),
            "laplace" => Ok(Self::Laplace),
            other => Err(invalid(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// A scalar radial kernel with a positive lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRepr", into = "KernelSpecRepr")]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscale: f64,
    // 1/(2 l^2) for Gaussian, 1/l for Laplace.
    rate: f64,
}

#[derive(Serialize, Deserialize)]
struct KernelSpecRepr {
    family: KernelFamily,
    lengthscale: f64,
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = Error;

    fn try_from(r: KernelSpecRepr) -> Result<Self> {
        KernelSpec::new(r.family, r.lengthscale)
    }
}

impl From<KernelSpec> for KernelSpecRepr {
    fn from(k: KernelSpec) -> Self {
        KernelSpecRepr {
            family: k.family,
            lengthscale: k.lengthscale,
        }
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(invalid(format!(
                "kernel lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        let rate = match family {
            KernelFamily::Gaussian => 0.5 / (lengthscale * lengthscale),
            KernelFamily::Laplace => 1.0 / lengthscale,
        };
        Ok(Self {
            family,
            lengthscale,
            rate,
        })
    }

    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, lengthscale)
    }

    pub fn laplace(lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplace, lengthscale)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn from_sq_dist(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-r2 * self.rate).exp(),
            KernelFamily::Laplace => (-r2.sqrt() * self.rate).exp(),
        }
    }

    /// Returns `(k, s)` such that `grad_x k(x, y) = s * (x - y)`.
    #[inline]
    pub fn value_and_slope(&self, r2: f64) -> (f64, f64) {
        match self.family {
            KernelFamily::Gaussian => {
                let k = (-r2 * self.rate).exp();
                (k, -2.0 * self.rate * k)
            }
            KernelFamily::Laplace => {
                let r = r2.sqrt();
                let k = (-r * self.rate).exp();
                // Non-differentiable at r = 0; take the zero subgradient.
                let s = if r > 0.0 { -self.rate * k / r } else { 0.0 };
                (k, s)
            }
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok(self.from_sq_dist(sq_dist(x, y)))
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), y.len())?;
        let (_, s) = self.value_and_slope(sq_dist(x, y));
        Ok(x.iter().zip(y).map(|(a, b)| s * (a - b)).collect())
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Gram matrix `K[i, j] = k(x_i, y_j)`.
pub fn kernel_matrix(spec: &KernelSpec, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_dim(x.ncols(), y.ncols())?;
    let x = x.as_standard_layout();
    let y = y.as_standard_layout();
    let (m, d) = (y.nrows(), x.ncols());
    let mut out = Array2::zeros((x.nrows(), m));
    if m > 0 && d > 0 {
        let xs = x.as_slice().unwrap();
        let ys = y.as_slice().unwrap();
        out.as_slice_mut()
            .unwrap()
            .par_chunks_mut(m)
            .zip(xs.par_chunks(d))
            .for_each(|(row, xi)| {
                for (o, yj) in row.iter_mut().zip(ys.chunks_exact(d)) {
                    *o = spec.from_sq_dist(sq_dist(xi, yj));
                }
            });
    } else if m > 0 {
        out.fill(1.0);
    }
    Ok(out)
}

/// Median of the Euclidean distances over all unordered pairs of rows.
pub fn median_heuristic(x: ArrayView2<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(invalid("median heuristic needs at least two rows"));
    }
    let x = x.as_standard_layout();
    let rows: Vec<&[f64]> = x.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    let m = dists.len();
    let mid = m / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median <= 0.0 {
        return Err(invalid("median pairwise distance is zero (rows identical)"));
    }
    Ok(median)
}
