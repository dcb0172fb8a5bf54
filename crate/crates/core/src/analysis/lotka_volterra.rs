//! Lotka-Volterra predator-prey model, its simulator-based posterior via a
//! triangular transport map, and an adaptive Metropolis oracle.
//!
//! `p1' = alpha p1 - beta p1 p2`, `p2' = -gamma p2 + delta p1 p2` with
//! `p(0) = (30, 1)`, integrated by RK4 with step `0.01` up to `t = 20`.
//! Observations are `p(t_k) * exp(0.01 eps)` at `t_k = 2, 4, ..., 18`,
//! stored time-major as `[p1(2), p2(2), p1(4), ...]`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mcmc::{adaptive_metropolis, McmcChain};
use crate::data::split;
use crate::error::{invalid, Error, Result};
use crate::model::{Lengthscale, ModelConfig, TransportModel};
use crate::optim::{TrainConfig, TrainTrace};

pub const INITIAL_STATE: [f64; 2] = [30.0, 1.0];
pub const INTERNAL_STEP: f64 = 0.01;
pub const HORIZON: f64 = 20.0;
pub const OBSERVATION_TIMES: [f64; 9] = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0];
pub const NOISE_STD: f64 = 0.01;
pub const BLOW_UP: f64 = 1e9;
pub const U_TRUE: [f64; 4] = [0.92, 0.05, 1.50, 0.02];
pub const PARAMETER_NAMES: [&str; 4] = ["alpha", "beta", "gamma", "delta"];
pub const OBS_DIM: usize = 2 * OBSERVATION_TIMES.len();

fn rhs(u: &[f64; 4], p: [f64; 2]) -> [f64; 2] {
    let [a, b, g, d] = *u;
    [a * p[0] - b * p[0] * p[1], -g * p[1] + d * p[0] * p[1]]
}

/// Noiseless populations at the observation times, time-major.
pub fn lotka_volterra_solve(u: &[f64; 4], dt: f64) -> Result<[f64; OBS_DIM]> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("step must be positive"));
    }
    let steps = (HORIZON / dt).round() as usize;
    let obs_steps: Vec<usize> = OBSERVATION_TIMES.iter().map(|t| (t / dt).round() as usize).collect();
    let mut out = [0.0; OBS_DIM];
    let mut p = INITIAL_STATE;
    let mut next = 0;
    for k in 1..=steps {
        let k1 = rhs(u, p);
        let k2 = rhs(u, [p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]]);
        let k3 = rhs(u, [p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]]);
        let k4 = rhs(u, [p[0] + dt * k3[0], p[1] + dt * k3[1]]);
        for i in 0..2 {
            p[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !p.iter().all(|v| v.is_finite() && v.abs() <= BLOW_UP) {
            return Err(Error::Diverged(format!(
                "populations left [-1e9, 1e9] at t = {}",
                k as f64 * dt
            )));
        }
        if next < obs_steps.len() && k == obs_steps[next] {
            out[2 * next] = p[0];
            out[2 * next + 1] = p[1];
            next += 1;
        }
    }
    Ok(out)
}

/// Noisy observation vector for parameters `u`.
pub fn lotka_volterra_simulate(u: &[f64; 4], seed: u64) -> Result<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(u, &mut rng)
}

fn simulate_with(u: &[f64; 4], rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    let p = lotka_volterra_solve(u, INTERNAL_STEP)?;
    Ok(p.iter()
        .map(|v| v * (NOISE_STD * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect())
}

/// `u = loc + scale * z`, `z ~ N(0, I)`, restricted to positive `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvPrior {
    pub loc: [f64; 4],
    pub scale: [f64; 4],
}

impl Default for LvPrior {
    fn default() -> Self {
        Self {
            loc: [0.9, 0.05, 1.4, 0.025],
            scale: [0.1, 0.01, 0.1, 0.005],
        }
    }
}

impl LvPrior {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 4] {
        loop {
            let u: [f64; 4] =
                std::array::from_fn(|i| self.loc[i] + self.scale[i] * rng.sample::<f64, _>(StandardNormal));
            if u.iter().all(|&v| v > 0.0) {
                return u;
            }
        }
    }

    /// Unnormalized log density (the truncation constant is dropped).
    pub fn log_density(&self, u: &[f64]) -> f64 {
        if u.iter().any(|&v| v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        -0.5 * u
            .iter()
            .zip(self.loc.iter().zip(&self.scale))
            .map(|(v, (l, s))| ((v - l) / s).powi(2))
            .sum::<f64>()
    }
}

/// Gaussian log likelihood of log observations.
pub fn log_likelihood(u: &[f64; 4], log_y: ArrayView1<f64>) -> f64 {
    match lotka_volterra_solve(u, INTERNAL_STEP) {
        Ok(p) => {
            -0.5 * p
                .iter()
                .zip(log_y)
                .map(|(pv, ly)| {
                    if *pv > 0.0 {
                        ((ly - pv.ln()) / NOISE_STD).powi(2)
                    } else {
                        f64::INFINITY
                    }
                })
                .sum::<f64>()
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvStudyConfig {
    pub n_pairs: usize,
    pub n_val: usize,
    pub n_posterior: usize,
    pub mcmc_steps: usize,
    pub seed: u64,
    pub prior: LvPrior,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl LvStudyConfig {
    /// Model defaults of the study, with the field lengthscale set by the median heuristic.
    pub fn default_model() -> ModelConfig {
        let mut m = ModelConfig::default();
        m.field_kernel.lengthscale = Lengthscale::Median;
        m
    }
}

impl Default for LvStudyConfig {
    fn default() -> Self {
        Self {
            n_pairs: 100_000,
            n_val: 2_000,
            n_posterior: 10_000,
            mcmc_steps: 100_000,
            seed: 0,
            prior: LvPrior::default(),
            train: TrainConfig::default(),
            model: Self::default_model(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub kode_mean: f64,
    pub kode_std: f64,
    pub mcmc_mean: f64,
    pub mcmc_std: f64,
    /// `|kode_mean - mcmc_mean| / prior scale`.
    pub mean_gap_prior_std: f64,
    pub kode_p01: f64,
    pub kode_p99: f64,
    pub truth_inside: bool,
}

#[derive(Debug, Clone)]
pub struct LvStudy {
    pub y_obs: Array1<f64>,
    pub kode: Array2<f64>,
    pub mcmc: McmcChain,
    pub summary: Vec<ParameterSummary>,
    pub extrapolated: bool,
    pub model: TransportModel,
    pub trace: TrainTrace,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: ArrayView1<f64>, q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Simulated `(log y, u)` pairs; the first 18 columns are `log y`.
pub fn simulate_pairs(prior: &LvPrior, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((n, OBS_DIM + 4));
    let mut row = 0;
    while row < n {
        let u = prior.sample(rng);
        let Ok(y) = simulate_with(&u, rng) else { continue };
        if y.iter().any(|v| *v <= 0.0) {
            continue;
        }
        out.slice_mut(s![row, ..OBS_DIM]).assign(&y.mapv(f64::ln));
        out.slice_mut(s![row, OBS_DIM..]).assign(&Array1::from(u.to_vec()));
        row += 1;
    }
    out
}

/// End-to-end study: simulate pairs, fit a triangular map, condition on the
/// observation generated at [`U_TRUE`] and compare with adaptive Metropolis.
pub fn lotka_volterra_study(cfg: &LvStudyConfig) -> Result<LvStudy> {
    if cfg.n_pairs == 0 || cfg.n_val == 0 || cfg.n_posterior == 0 {
        return Err(invalid("n_pairs, n_val and n_posterior must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y_obs = simulate_with(&U_TRUE, &mut rng)?;
    let log_y = y_obs.mapv(f64::ln);

    let pairs = simulate_pairs(&cfg.prior, cfg.n_pairs + cfg.n_val, &mut rng);
    let sp = split(pairs.view(), cfg.n_pairs)?;
    let val = concatenate![Axis(0), sp.val.view(), sp.test.view()];
    let (model, trace) = TransportModel::fit_triangular(&cfg.train, &cfg.model, sp.train.view(), val.view(), OBS_DIM)?;
    let cond = model.condition(log_y.view(), cfg.n_posterior, cfg.seed.wrapping_add(1))?;

    // Start the chain at the most likely simulated parameter.
    let init = sp
        .train
        .rows()
        .into_iter()
        .take(10_000)
        .map(|r| {
            let u: [f64; 4] = std::array::from_fn(|i| r[OBS_DIM + i]);
            (log_likelihood(&u, log_y.view()), u)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, u)| u)
        .expect("nonempty");
    let prior = cfg.prior;
    let chain = adaptive_metropolis(
        |u| {
            let lp = prior.log_density(u);
            if lp.is_finite() {
                lp + log_likelihood(&[u[0], u[1], u[2], u[3]], log_y.view())
            } else {
                lp
            }
        },
        &init,
        &prior.scale.map(|s| 0.01 * s),
        cfg.mcmc_steps,
        cfg.seed.wrapping_add(2),
    )?;

    let summary = (0..4)
        .map(|i| {
            let k = cond.samples.column(i);
            let m = chain.samples.column(i);
            let (kode_mean, mcmc_mean) = (k.mean().unwrap(), m.mean().unwrap());
            let p01 = quantile(k, 0.01);
            let p99 = quantile(k, 0.99);
            ParameterSummary {
                name: PARAMETER_NAMES[i].to_string(),
                truth: U_TRUE[i],
                kode_mean,
                kode_std: k.std(1.0),
                mcmc_mean,
                mcmc_std: m.std(1.0),
                mean_gap_prior_std: (kode_mean - mcmc_mean).abs() / prior.scale[i],
                kode_p01: p01,
                kode_p99: p99,
                truth_inside: p01 <= U_TRUE[i] && U_TRUE[i] <= p99,
            }
        })
        .collect();
    Ok(LvStudy {
        y_obs,
        kode: cond.samples,
        mcmc: chain,
        summary,
        extrapolated: cond.extrapolated,
        model,
        trace,
    })
}
