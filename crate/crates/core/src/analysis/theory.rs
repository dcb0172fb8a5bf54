//! Randomized checks of the MMD stability and ODE perturbation inequalities.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::flow::{flow_forward, AffineField};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::mmd::mmd2;

/// Integrator steps used for the perturbation check.
pub const PERTURBATION_STEPS: usize = 256;
/// Allowance for the RK4 error in the perturbation check.
pub const INTEGRATOR_ALLOWANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub trials: Vec<TrialOutcome>,
    pub max_violation: f64,
}

impl CheckReport {
    fn from_trials(trials: Vec<TrialOutcome>) -> Self {
        let max_violation = trials.iter().map(|t| t.violation).fold(f64::NEG_INFINITY, f64::max);
        Self { trials, max_violation }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A smooth random map `x -> A x + b + a * sin(W x + phi)`.
struct SmoothMap {
    a: Array2<f64>,
    b: Array1<f64>,
    amp: Array1<f64>,
    w: Array2<f64>,
    phi: Array1<f64>,
}

impl SmoothMap {
    fn random(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: Array2::from_shape_simple_fn((d, d), || normal(rng)),
            b: Array1::from_shape_simple_fn(d, || normal(rng)),
            amp: Array1::from_shape_simple_fn(d, || 0.5 * normal(rng)),
            w: Array2::from_shape_simple_fn((d, d), || normal(rng)),
            phi: Array1::from_shape_simple_fn(d, || rng.random_range(0.0..std::f64::consts::TAU)),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let lin = x.dot(&self.a.t()) + &self.b;
        let osc = (x.dot(&self.w.t()) + &self.phi).mapv(f64::sin) * &self.amp;
        lin + osc
    }
}

/// For random point sets and random pairs of smooth maps `T, T'`, compares
/// `MMD(T#eta, T'#eta)` with `L sup_i |T x_i - T' x_i|`, where `L = 1/gamma`
/// bounds the feature-map Lipschitz constant of the Gaussian kernel:
/// `|K(x, .) - K(x', .)|^2 = 2 (1 - exp(-r^2 / 2 gamma^2)) <= r^2 / gamma^2`.
///
/// A quarter of the trials use `T' = T`, another quarter a constant shift
/// `T' = T + delta`.
pub fn mmd_stability_check(gamma: f64, trials: usize, seed: u64, family: KernelFamily) -> Result<CheckReport> {
    if family != KernelFamily::Gaussian {
        return Err(invalid(
            "the stability bound needs a Lipschitz feature map; only the Gaussian kernel qualifies",
        ));
    }
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    let spec = KernelSpec::gaussian(gamma)?;
    let lip = 1.0 / gamma;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
            let d = rng.random_range(1..=3);
            let n = rng.random_range(2..=40);
            let x = Array2::from_shape_simple_fn((n, d), || normal(&mut rng));
            let t = SmoothMap::random(d, &mut rng);
            let tx = t.apply(&x);
            let tpx = match trial % 4 {
                0 => tx.clone(),
                1 => {
                    let delta = Array1::from_shape_simple_fn(d, || 0.3 * normal(&mut rng));
                    &tx + &delta
                }
                _ => {
                    let mut t2 = SmoothMap::random(d, &mut rng);
                    let mix = 10f64.powf(rng.random_range(-3.0..0.0));
                    t2.a = &t.a + &((&t2.a - &t.a) * mix);
                    t2.b = &t.b + &((&t2.b - &t.b) * mix);
                    t2.amp = &t.amp + &((&t2.amp - &t.amp) * mix);
                    t2.w = t.w.clone();
                    t2.phi = t.phi.clone();
                    t2.apply(&x)
                }
            };
            let lhs = mmd2(&spec, tx.view(), tpx.view()).expect("valid sets").sqrt();
            let sup = (&tx - &tpx)
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt())
                .fold(0.0, f64::max);
            let rhs = lip * sup;
            TrialOutcome {
                trial,
                lhs,
                rhs,
                violation: lhs - rhs,
            }
        })
        .collect();
    Ok(CheckReport::from_trials(outcomes))
}

/// Largest singular value of `a`.
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    let (r, c) = a.dim();
    let m = DMatrix::from_fn(r, c, |i, j| a[[i, j]]);
    m.singular_values().max()
}

/// Flow of the affine field `v(x) = A x + b` from `x0`.
pub fn affine_flow(a: &Array2<f64>, b: &[f64], x0: &[f64], steps: usize) -> Result<Vec<f64>> {
    let field = AffineField {
        matrix: a.clone(),
        offset: b.to_vec(),
        steps,
    };
    let x = Array2::from_shape_vec((1, x0.len()), x0.to_vec()).map_err(|e| invalid(e.to_string()))?;
    let (out, _) = flow_forward(&field, x.view(), false)?;
    Ok(out.row(0).to_vec())
}

/// Bound on `|T(x; v) - T(x'; v')|` for fields with Lipschitz constant `l`
/// and sup-difference `dv`.
pub fn perturbation_bound(l: f64, dx: f64, dv: f64) -> f64 {
    let growth = if l > 1e-12 { l.exp_m1() / l } else { 1.0 };
    l.exp() * dx + growth * dv
}

/// Random affine pairs `v = A x + b`, `v' = A x + b'` sharing `A`, so
/// `L = |A|_2` and `sup |v - v'| = |b - b'|`. The first trial is the
/// identity case `v = v'`, `x = x'`.
pub fn ode_perturbation_check(trials: usize, seed: u64) -> Result<CheckReport> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    let outcomes: Result<Vec<TrialOutcome>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let d = rng.random_range(1..=4);
            let scale = rng.random_range(0.1..1.5);
            let a = Array2::from_shape_simple_fn((d, d), || scale * normal(&mut rng) / (d as f64).sqrt());
            let b: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let (bp, xp) = if trial == 0 {
                (b.clone(), x.clone())
            } else {
                let eps_b = 10f64.powf(rng.random_range(-3.0..0.0));
                let eps_x = if trial % 3 == 0 {
                    0.0
                } else {
                    10f64.powf(rng.random_range(-3.0..0.0))
                };
                (
                    b.iter().map(|v| v + eps_b * normal(&mut rng)).collect::<Vec<_>>(),
                    x.iter().map(|v| v + eps_x * normal(&mut rng)).collect::<Vec<_>>(),
                )
            };
            let t = affine_flow(&a, &b, &x, PERTURBATION_STEPS)?;
            let tp = affine_flow(&a, &bp, &xp, PERTURBATION_STEPS)?;
            let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let lhs = dist(&t, &tp);
            let rhs = perturbation_bound(spectral_norm(&a), dist(&x, &xp), dist(&b, &bp));
            Ok(TrialOutcome {
                trial,
                lhs,
                rhs,
                violation: lhs - rhs - INTEGRATOR_ALLOWANCE,
            })
        })
        .collect();
    Ok(CheckReport::from_trials(outcomes?))
}
