//! Sample sets: benchmark generators, reference draws, CSV files,
//! standardization, splits and inducing points.

mod benchmarks;
mod csv_io;
mod inducing;

pub use benchmarks::{generate_benchmark, Benchmark};
pub use csv_io::{load_csv, parse_csv, save_csv, save_csv_with_header, write_csv};
pub use inducing::select_inducing_points;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// `N x d` matrix whose rows are samples.
pub type SampleSet = Array2<f64>;

/// Points generated for each benchmark before splitting.
pub const BENCHMARK_POOL: usize = 25_000;

/// `n` standard normal `d`-vectors.
pub fn sample_reference(n: usize, d: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
}

/// Componentwise affine standardization with population statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("standardizer needs samples"));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let std = x.std_axis(Axis(0), 0.0);
        Self::new(mean, std)
    }

    pub fn new(mean: Array1<f64>, std: Array1<f64>) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if let Some(j) = std.iter().position(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(invalid(format!("column {j} has zero or non-finite spread")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("standardizer mean is not finite"));
        }
        Ok(Self { mean, std })
    }

    /// The identity transform in `d` dimensions.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: Array1::zeros(d),
            std: Array1::ones(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.dim(), x.ncols())?;
        Ok((&x - &self.mean) / &self.std)
    }

    pub fn invert(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.dim(), z.ncols())?;
        Ok(&z * &self.std + &self.mean)
    }

    /// Standardizes the leading coordinates of a single point.
    pub fn apply_prefix(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        let m = y.len();
        if m > self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: m,
            });
        }
        Ok((&y - &self.mean.slice(s![..m])) / self.std.slice(s![..m]))
    }

    /// Standardizer restricted to the columns from `start` on.
    pub fn tail(&self, start: usize) -> Self {
        Self {
            mean: self.mean.slice(s![start..]).to_owned(),
            std: self.std.slice(s![start..]).to_owned(),
        }
    }
}

/// Training, validation and test portions of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

/// Takes the first `n_train` rows for training and splits the rest evenly
/// into validation and test (validation gets the extra row when odd).
pub fn split(x: ArrayView2<f64>, n_train: usize) -> Result<Split> {
    let n = x.nrows();
    if n_train >= n {
        return Err(invalid(format!("cannot take {n_train} training rows from {n}")));
    }
    let rest = n - n_train;
    let n_val = rest.div_ceil(2);
    Ok(Split {
        train: x.slice(s![..n_train, ..]).to_owned(),
        val: x.slice(s![n_train..n_train + n_val, ..]).to_owned(),
        test: x.slice(s![n_train + n_val.., ..]).to_owned(),
    })
}

/// The standard split of a freshly generated benchmark pool.
pub fn benchmark_split(which: Benchmark, seed: u64) -> Result<Split> {
    let pool = generate_benchmark(which, BENCHMARK_POOL, seed)?;
    split(pool.view(), which.train_size())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn reference_moments() {
        let x = sample_reference(100_000, 3, 17);
        let mean = x.mean_axis(Axis(0)).unwrap();
        let var = x.var_axis(Axis(0), 1.0);
        assert!(mean.iter().all(|m| m.abs() <= 0.02), "{mean}");
        assert!(var.iter().all(|v| (0.97..=1.03).contains(v)), "{var}");
        assert_eq!(sample_reference(10, 2, 1), sample_reference(10, 2, 1));
        assert_eq!(sample_reference(0, 2, 1).dim(), (0, 2));
    }

    #[test]
    fn standardizer_moments_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((500, 3), |(_, j)| 5.0 * j as f64 + (j + 1) as f64 * rng.random::<f64>());
        let s = Standardizer::fit(x.view()).unwrap();
        let z = s.apply(x.view()).unwrap();
        for c in z.columns() {
            assert!(c.mean().unwrap().abs() < 1e-12);
            assert!((c.std(0.0) - 1.0).abs() < 1e-12);
        }
        let back = s.invert(z.view()).unwrap();
        assert!((&back - &x).iter().all(|d| d.abs() < 1e-12));
        let constant = array![[1.0, 2.0], [1.0, 3.0]];
        assert!(Standardizer::fit(constant.view()).is_err());
    }

    #[test]
    fn split_sizes() {
        let x = Array2::from_shape_fn((25_000, 2), |(i, _)| i as f64);
        let sp = split(x.view(), 5000).unwrap();
        assert_eq!(
            (sp.train.nrows(), sp.val.nrows(), sp.test.nrows()),
            (5000, 10_000, 10_000)
        );
        assert_eq!(sp.val[[0, 0]], 5000.0);
        let sp = split(x.view(), 10_000).unwrap();
        assert_eq!(
            (sp.train.nrows(), sp.val.nrows(), sp.test.nrows()),
            (10_000, 7500, 7500)
        );
        assert!(split(x.view(), 25_000).is_err());
    }
}
