//! Empirical maximum mean discrepancy.
//!
//! `mmd2` is the biased V-statistic: the three double sums keep their
//! diagonal terms. It is the training loss; the unsquared value is only
//! reported.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{sq_dist, KernelSpec};

const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    pub mmd: f64,
    pub mmd_squared: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<f64>,
}

fn validate_pair(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyInput("mmd needs nonempty sample sets"));
    }
    check_dim(a.ncols(), b.ncols())
}

/// `sum_i sum_j k(a_i, b_j)`. Row sums are reduced in row order so the
/// result does not depend on the thread count.
fn kernel_sum(spec: &KernelSpec, a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let d = a.ncols();
    let bs = b.as_slice().unwrap();
    let row_sums: Vec<f64> = a
        .as_slice()
        .unwrap()
        .par_chunks(d * ROW_CHUNK)
        .flat_map_iter(|chunk| {
            chunk.chunks_exact(d).map(|ai| {
                bs.chunks_exact(d)
                    .map(|bj| spec.from_sq_dist(sq_dist(ai, bj)))
                    .sum::<f64>()
            })
        })
        .collect();
    row_sums.iter().sum()
}

fn combine(s_aa: f64, s_bb: f64, s_ab: f64, na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    // Written so that identical sets cancel exactly.
    let v = s_aa / (na * na) + s_bb / (nb * nb) - 2.0 * s_ab / (na * nb);
    v.max(0.0)
}

/// Squared MMD between two empirical measures (V-statistic, clamped at 0).
pub fn mmd2(spec: &KernelSpec, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    validate_pair(&a, &b)?;
    let s_aa = kernel_sum(spec, a, a);
    let s_bb = kernel_sum(spec, b, b);
    let s_ab = kernel_sum(spec, a, b);
    Ok(combine(s_aa, s_bb, s_ab, a.nrows(), b.nrows()))
}

/// Squared MMD and its gradient with respect to the points of `a`.
pub fn mmd2_with_grad(spec: &KernelSpec, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    validate_pair(&a, &b)?;
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (na, nb, d) = (a.nrows(), b.nrows(), a.ncols());
    let w_aa = 2.0 / (na * na) as f64;
    let w_ab = 2.0 / (na * nb) as f64;
    let a_s = a.as_slice().unwrap();
    let b_s = b.as_slice().unwrap();

    let mut grad = Array2::<f64>::zeros((na, d));
    let per_row: Vec<(f64, f64)> = grad
        .as_slice_mut()
        .unwrap()
        .par_chunks_mut(d * ROW_CHUNK)
        .zip(a_s.par_chunks(d * ROW_CHUNK))
        .flat_map_iter(|(g_chunk, a_chunk)| {
            g_chunk
                .chunks_exact_mut(d)
                .zip(a_chunk.chunks_exact(d))
                .map(|(gi, ai)| {
                    let mut s_aa = 0.0;
                    let mut s_ab = 0.0;
                    for aj in a_s.chunks_exact(d) {
                        let (k, s) = spec.value_and_slope(sq_dist(ai, aj));
                        s_aa += k;
                        let c = w_aa * s;
                        for l in 0..d {
                            gi[l] += c * (ai[l] - aj[l]);
                        }
                    }
                    for bj in b_s.chunks_exact(d) {
                        let (k, s) = spec.value_and_slope(sq_dist(ai, bj));
                        s_ab += k;
                        let c = w_ab * s;
                        for l in 0..d {
                            gi[l] -= c * (ai[l] - bj[l]);
                        }
                    }
                    (s_aa, s_ab)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let s_aa: f64 = per_row.iter().map(|p| p.0).sum();
    let s_ab: f64 = per_row.iter().map(|p| p.1).sum();
    let s_bb = kernel_sum(spec, b.view(), b.view());
    Ok((combine(s_aa, s_bb, s_ab, na, nb), grad))
}

/// Gradient of [`mmd2`] with respect to the points of `a`.
pub fn mmd2_grad_a(spec: &KernelSpec, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    mmd2_with_grad(spec, a, b).map(|(_, g)| g)
}

/// `MMD(generated, test) / MMD(reference, test)`.
pub fn normalized_mmd(
    spec: &KernelSpec,
    generated: ArrayView2<f64>,
    test: ArrayView2<f64>,
    reference: ArrayView2<f64>,
) -> Result<f64> {
    NormalizedMmd::new(*spec, test, reference)?.evaluate(generated)
}

pub fn mmd_report(
    spec: &KernelSpec,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    reference: Option<ArrayView2<f64>>,
) -> Result<MmdReport> {
    let mmd_squared = mmd2(spec, a, b)?;
    let normalized = match reference {
        Some(r) => Some(normalized_mmd(spec, a, b, r)?),
        None => None,
    };
    Ok(MmdReport {
        mmd: mmd_squared.max(0.0).sqrt(),
        mmd_squared,
        normalized,
    })
}

/// Normalized MMD against a fixed test set, caching the test self-term and
/// the reference denominator for repeated evaluation.
#[derive(Debug, Clone)]
pub struct NormalizedMmd {
    spec: KernelSpec,
    test: Array2<f64>,
    test_self: f64,
    reference_mmd2: f64,
}

impl NormalizedMmd {
    pub fn new(spec: KernelSpec, test: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<Self> {
        validate_pair(&reference, &test)?;
        let test = test.as_standard_layout().into_owned();
        let test_self = kernel_sum(&spec, test.view(), test.view());
        let s_rr = kernel_sum(&spec, reference, reference);
        let s_rt = kernel_sum(&spec, reference, test.view());
        let reference_mmd2 = combine(s_rr, test_self, s_rt, reference.nrows(), test.nrows());
        if reference_mmd2 <= 0.0 {
            return Err(invalid(
                "reference set is indistinguishable from the test set (zero MMD)",
            ));
        }
        Ok(Self {
            spec,
            test,
            test_self,
            reference_mmd2,
        })
    }

    pub fn reference_mmd2(&self) -> f64 {
        self.reference_mmd2
    }

    pub fn mmd2(&self, generated: ArrayView2<f64>) -> Result<f64> {
        validate_pair(&generated, &self.test.view())?;
        let s_gg = kernel_sum(&self.spec, generated, generated);
        let s_gt = kernel_sum(&self.spec, generated, self.test.view());
        Ok(combine(
            s_gg,
            self.test_self,
            s_gt,
            generated.nrows(),
            self.test.nrows(),
        ))
    }

    pub fn evaluate(&self, generated: ArrayView2<f64>) -> Result<f64> {
        Ok((self.mmd2(generated)? / self.reference_mmd2).sqrt())
    }

    /// `MMD^2(generated, test) / MMD^2(reference, test)`.
    pub fn evaluate_squared(&self, generated: ArrayView2<f64>) -> Result<f64> {
        Ok(self.mmd2(generated)? / self.reference_mmd2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn naive_mmd2(spec: &KernelSpec, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let k = |x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>| {
            spec.eval(x.as_slice().unwrap(), y.as_slice().unwrap()).unwrap()
        };
        let (na, nb) = (a.nrows() as f64, b.nrows() as f64);
        let mut t = 0.0;
        for x in a.rows() {
            for y in a.rows() {
                t += k(x, y) / (na * na);
            }
        }
        for x in b.rows() {
            for y in b.rows() {
                t += k(x, y) / (nb * nb);
            }
        }
        for x in a.rows() {
            for y in b.rows() {
                t -= 2.0 * k(x, y) / (na * nb);
            }
        }
        t
    }

    fn gauss(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal) + shift)
    }

    #[test]
    fn identical_sets_give_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gauss(&mut rng, 17, 3, 0.0);
        for spec in [KernelSpec::gaussian(0.7).unwrap(), KernelSpec::laplace(1.3).unwrap()] {
            assert_eq!(mmd2(&spec, a.view(), a.view()).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_points() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let v = mmd2(&spec, array![[0.0, 0.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert_relative_eq!(v, 0.7869386806, epsilon = 1e-10);
        let g = mmd2_grad_a(&spec, array![[0.0]].view(), array![[1.0]].view()).unwrap();
        assert_relative_eq!(g[[0, 0]], -1.2130613194, epsilon = 1e-10);
        let g = mmd2_grad_a(&spec, array![[0.4]].view(), array![[0.4]].view()).unwrap();
        assert_eq!(g[[0, 0]], 0.0);
    }

    #[test]
    fn matches_naive_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gauss(&mut rng, 3, 2, 0.0);
        let b = gauss(&mut rng, 4, 2, 0.5);
        let spec = KernelSpec::laplace(1.0).unwrap();
        let v = mmd2(&spec, a.view(), b.view()).unwrap();
        assert_relative_eq!(v, naive_mmd2(&spec, &a, &b), max_relative = 1e-12);
        let (v2, _) = mmd2_with_grad(&spec, a.view(), b.view()).unwrap();
        assert_relative_eq!(v2, v, max_relative = 1e-12);
    }

    #[test]
    fn errors_on_bad_input() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let e = Array2::<f64>::zeros((0, 2));
        let a = Array2::<f64>::zeros((3, 2));
        let b = Array2::<f64>::zeros((3, 3));
        assert!(mmd2(&spec, e.view(), a.view()).is_err());
        assert!(mmd2(&spec, a.view(), b.view()).is_err());
        assert!(mmd2_grad_a(&spec, a.view(), e.view()).is_err());
        // Reference equal to test: zero denominator.
        assert!(normalized_mmd(&spec, a.view(), a.view(), a.view()).is_err());
    }

    fn fd_check(spec: &KernelSpec, a: &Array2<f64>, b: &Array2<f64>) {
        let g = mmd2_grad_a(spec, a.view(), b.view()).unwrap();
        let h = 1e-5;
        for i in 0..a.nrows() {
            for l in 0..a.ncols() {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[[i, l]] += h;
                am[[i, l]] -= h;
                // Unclamped differences so the check is smooth near 0.
                let fd = (naive_mmd2(spec, &ap, b) - naive_mmd2(spec, &am, b)) / (2.0 * h);
                let scale = g[[i, l]].abs().max(1e-4);
                assert!(
                    (fd - g[[i, l]]).abs() / scale < 1e-6,
                    "{spec:?} ({i},{l}): fd {fd} vs {}",
                    g[[i, l]]
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = gauss(&mut rng, 5, 2, 0.0);
            let b = gauss(&mut rng, 5, 2, 0.7);
            fd_check(&KernelSpec::gaussian(0.9).unwrap(), &a, &b);
        }
        // Laplace only away from coincident points.
        let mut done = 0;
        while done < 5 {
            let a = gauss(&mut rng, 5, 2, 0.0);
            let b = gauss(&mut rng, 5, 2, 0.7);
            let all = ndarray::concatenate![ndarray::Axis(0), a, b];
            let min_gap = (0..10)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| sq_dist(all.row(i).as_slice().unwrap(), all.row(j).as_slice().unwrap()).sqrt())
                .fold(f64::INFINITY, f64::min);
            if min_gap <= 0.1 {
                continue;
            }
            fd_check(&KernelSpec::laplace(1.1).unwrap(), &a, &b);
            done += 1;
        }
    }

    #[test]
    fn normalized_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let test = gauss(&mut rng, 200, 2, 2.0);
        let reference = gauss(&mut rng, 200, 2, 0.0);
        assert_eq!(
            normalized_mmd(&spec, test.view(), test.view(), reference.view()).unwrap(),
            0.0
        );
        assert_relative_eq!(
            normalized_mmd(&spec, reference.view(), test.view(), reference.view()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // Halfway interpolation between paired reference and test draws.
        let mid = (&reference + &test) * 0.5;
        let v = normalized_mmd(&spec, mid.view(), test.view(), reference.view()).unwrap();
        let direct = (mmd2(&spec, mid.view(), test.view()).unwrap()
            / mmd2(&spec, reference.view(), test.view()).unwrap())
        .sqrt();
        assert!(v > 0.0 && v < 1.0);
        assert_relative_eq!(v, direct, max_relative = 1e-12);
    }

    #[test]
    fn report_fields() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let a = array![[0.0, 0.0]];
        let b = array![[1.0, 0.0]];
        let r = mmd_report(&spec, a.view(), b.view(), None).unwrap();
        assert_eq!(r.mmd, r.mmd_squared.sqrt());
        assert!(r.normalized.is_none());
        let r = mmd_report(&spec, a.view(), b.view(), Some(a.view())).unwrap();
        assert_relative_eq!(r.normalized.unwrap(), 1.0);
        let r = mmd_report(&spec, b.view(), b.view(), Some(a.view())).unwrap();
        assert_eq!(r.normalized.unwrap(), 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn metric_properties(seed in 0u64..10_000, na in 1usize..12, nb in 1usize..12, nc in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = gauss(&mut rng, na, 2, 0.0);
            let b = gauss(&mut rng, nb, 2, 0.5);
            let c = gauss(&mut rng, nc, 2, -0.5);
            for spec in [KernelSpec::gaussian(0.8).unwrap(), KernelSpec::laplace(0.8).unwrap()] {
                let ab = mmd2(&spec, a.view(), b.view()).unwrap();
                let ba = mmd2(&spec, b.view(), a.view()).unwrap();
                let ac = mmd2(&spec, a.view(), c.view()).unwrap();
                let bc = mmd2(&spec, b.view(), c.view()).unwrap();
                proptest::prop_assert!(ab >= 0.0);
                proptest::prop_assert!((ab - ba).abs() <= 1e-14);
                proptest::prop_assert!(ac.sqrt() <= ab.sqrt() + bc.sqrt() + 1e-12);
            }
        }
    }
}
