use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::sq_dist;

const LLOYD_ITERATIONS: usize = 20;

fn nearest(point: &[f64], centers: &Array2<f64>) -> (usize, f64) {
    centers
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(point, c.as_slice().unwrap())))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means centers of the union of two sample sets: k-means++ seeding
/// followed by a fixed number of Lloyd iterations. Empty clusters keep their
/// previous center.
pub fn select_inducing_points(
    train_ref: ArrayView2<f64>,
    train_target: ArrayView2<f64>,
    j: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if j == 0 {
        return Err(invalid("number of inducing points must be at least 1"));
    }
    check_dim(train_ref.ncols(), train_target.ncols())?;
    let pts = concatenate![Axis(0), train_ref, train_target]
        .as_standard_layout()
        .into_owned();
    let (n, d) = pts.dim();
    if n == 0 {
        return Err(Error::EmptyInput("inducing-point candidates"));
    }
    if j > n {
        return Err(invalid(format!("{j} inducing points requested from {n} samples")));
    }
    let row = |i: usize| &pts.as_slice().unwrap()[i * d..(i + 1) * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Array2::zeros((j, d));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&pts.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..j {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Guard against roundoff landing on a zero-weight tail.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&pts.row(pick));
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(row(i), row(pick)));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..LLOYD_ITERATIONS {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(row(i), &centers).0;
        }
        let mut sums = Array2::<f64>::zeros((j, d));
        let mut counts = vec![0usize; j];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            let mut s = sums.row_mut(a);
            for (sv, &pv) in s.iter_mut().zip(row(i)) {
                *sv += pv;
            }
        }
        let mut moved = false;
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = sums.row(c).mapv(|v| v / count as f64);
                if mean != centers.row(c) {
                    moved = true;
                    centers.row_mut(c).assign(&mean);
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(centers)
}
