use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Proposal regularization added to the adapted covariance.
pub const AM_REGULARIZATION: f64 = 1e-8;

/// Post burn-in chain of an adaptive Metropolis run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McmcChain {
    pub samples: Array2<f64>,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Trace of the final proposal covariance.
    pub proposal_cov_trace: f64,
}

/// Haario-style adaptive Metropolis.
///
/// The first `steps / 10` iterations use an isotropic Gaussian proposal with
/// per-coordinate standard deviations `initial_step` and are discarded. From
/// then on the proposal covariance is `2.38^2 / p (Cov(history) + 1e-8 I)`,
/// updated every step from the full chain history.
pub fn adaptive_metropolis(
    mut log_post: impl FnMut(&[f64]) -> f64,
    init: &[f64],
    initial_step: &[f64],
    steps: usize,
    seed: u64,
) -> Result<McmcChain> {
    let p = init.len();
    if p == 0 {
        return Err(Error::EmptyInput("initial state"));
    }
    if initial_step.len() != p || initial_step.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(invalid("initial_step must hold one positive value per coordinate"));
    }
    if steps < 1000 {
        return Err(invalid("adaptive Metropolis needs at least 1000 steps"));
    }
    let mut current = init.to_vec();
    let mut lp = log_post(&current);
    if !lp.is_finite() {
        return Err(invalid("log posterior is not finite at the initial state"));
    }
    let burn_in = steps / 10;
    let sd = 2.38 * 2.38 / p as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Running mean and scatter of the chain history (Welford).
    let mut count = 0.0;
    let mut mean = DVector::<f64>::zeros(p);
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    let mut chol_l = DMatrix::from_diagonal(&DVector::from_column_slice(initial_step));

    let mut kept = Vec::with_capacity((steps - burn_in) * p);
    let mut accepted = 0;
    let mut proposal = vec![0.0; p];
    let mut z = DVector::<f64>::zeros(p);

    for t in 0..steps {
        if t >= burn_in && count > 1.0 {
            let cov = &scatter / (count - 1.0) + DMatrix::identity(p, p) * AM_REGULARIZATION;
            if let Some(ch) = (cov * sd).cholesky() {
                chol_l = ch.l();
            }
        }
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let step = &chol_l * &z;
        for i in 0..p {
            proposal[i] = current[i] + step[i];
        }
        let lp_new = log_post(&proposal);
        let log_u: f64 = rng.random::<f64>().ln();
        let accept = lp_new.is_finite() && log_u < lp_new - lp;
        if accept {
            current.copy_from_slice(&proposal);
            lp = lp_new;
        }

        count += 1.0;
        let x = DVector::from_column_slice(&current);
        let delta = &x - &mean;
        mean += &delta / count;
        let delta2 = &x - &mean;
        scatter += &delta * delta2.transpose();

        if t >= burn_in {
            kept.extend_from_slice(&current);
            if accept {
                accepted += 1;
            }
        }
    }
    let n = steps - burn_in;
    let lt = &chol_l * chol_l.transpose();
    Ok(McmcChain {
        samples: Array2::from_shape_vec((n, p), kept).expect("rows of length p"),
        accepted,
        acceptance_rate: accepted as f64 / n as f64,
        proposal_cov_trace: lt.trace(),
    })
}
