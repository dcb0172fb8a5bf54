//! Minibatch training with validation-based model selection.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::flow::{flow_forward, Velocity, VelocityField};
use crate::kernels::KernelSpec;
use crate::mmd::NormalizedMmd;
use crate::objective::{Objective, PenaltyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub penalty: PenaltyConfig,
    pub bidirectional: bool,
    pub val_every: usize,
    /// Store elapsed seconds in the trace. Off by default so that traces are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            schedule: LrSchedule::Constant,
            seed: 0,
            penalty: PenaltyConfig::default(),
            bidirectional: false,
            val_every: 10,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.val_every == 0 {
            return Err(invalid("val_every must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(invalid(format!("adam_betas must lie in (0, 1), got ({b1}, {b2})")));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(invalid("adam_eps must be positive"));
        }
        self.penalty.validate()
    }
}

/// One validation checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (the loss of one minibatch at epoch 0).
    pub train_loss: f64,
    pub val_nmmd: f64,
    pub penalty: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    pub best_epoch: usize,
    pub best_val_nmmd: f64,
}

impl TrainTrace {
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["epoch", "train_loss", "val_nmmd", "penalty", "seconds"])
            .map_err(io)?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_nmmd.to_string(),
                r.penalty.to_string(),
                r.seconds.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    /// Best validation score seen up to and including each record.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(f64::INFINITY, |best, r| {
                *best = best.min(r.val_nmmd);
                Some(*best)
            })
            .collect()
    }
}

/// How reference minibatches are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSampler {
    /// Fresh standard Gaussian draws every step.
    FreshGaussian,
    /// Rows drawn uniformly with replacement from a fixed pool.
    Pool(Array2<f64>),
    /// The first `cond_dim` columns are copied from the target minibatch and
    /// the rest are fresh standard Gaussian draws.
    Triangular { cond_dim: usize },
}

impl ReferenceSampler {
    fn draw(&self, target_batch: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let (n, d) = target_batch.dim();
        match self {
            Self::FreshGaussian => Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng)),
            Self::Pool(pool) => {
                let m = pool.nrows();
                let idx: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(rng, 0..m)).collect();
                pool.select(Axis(0), &idx)
            }
            Self::Triangular { cond_dim } => {
                let mut out = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng));
                out.slice_mut(s![.., ..*cond_dim])
                    .assign(&target_batch.slice(s![.., ..*cond_dim]));
                out
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::FreshGaussian => Ok(()),
            Self::Pool(pool) => {
                if pool.nrows() == 0 {
                    return Err(Error::EmptyInput("reference pool"));
                }
                check_dim(d, pool.ncols())
            }
            Self::Triangular { cond_dim } => {
                if *cond_dim == 0 || *cond_dim >= d {
                    return Err(invalid(format!("conditioning dimension {cond_dim} must be in 1..{d}")));
                }
                Ok(())
            }
        }
    }
}

/// Adam or plain SGD state over a coefficient tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    betas: (f64, f64),
    eps: f64,
    m: Array3<f64>,
    v: Array3<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, betas: (f64, f64), eps: f64, shape: (usize, usize, usize)) -> Self {
        Self {
            kind,
            betas,
            eps,
            m: Array3::zeros(shape),
            v: Array3::zeros(shape),
            t: 0,
        }
    }

    /// Applies one descent step in place.
    pub fn step(&mut self, params: &mut Array3<f64>, grad: &Array3<f64>, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => params.scaled_add(-lr, grad),
            OptimizerKind::Adam => {
                self.t += 1;
                let (b1, b2) = self.betas;
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                let eps = self.eps;
                ndarray::Zip::from(params)
                    .and(grad)
                    .and(&mut self.m)
                    .and(&mut self.v)
                    .for_each(|p, &g, m, v| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
            }
        }
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    match cfg.schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::Cosine => {
            let frac = step as f64 / total.max(1) as f64;
            0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

/// Trains `field` in place of a copy and returns the coefficients with the
/// best validation normalized MMD together with the trace.
///
/// Validation pushes `val_ref` forward and compares it with `val_target`
/// under a unit Gaussian kernel; the initial field takes part in the
/// selection.
#[allow(clippy::too_many_arguments)]
pub fn train(
    field: &VelocityField,
    cfg: &TrainConfig,
    reference: &ReferenceSampler,
    train_target: ArrayView2<f64>,
    val_ref: ArrayView2<f64>,
    val_target: ArrayView2<f64>,
    mmd_kernel: &KernelSpec,
) -> Result<(VelocityField, TrainTrace)> {
    cfg.validate()?;
    let d = field.dim();
    let n = train_target.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("training targets"));
    }
    check_dim(d, train_target.ncols())?;
    check_dim(d, val_ref.ncols())?;
    check_dim(d, val_target.ncols())?;
    if cfg.batch_size > n {
        return Err(invalid(format!(
            "batch_size {} exceeds the {n} training samples",
            cfg.batch_size
        )));
    }
    reference.validate(d)?;
    if train_target.iter().any(|v| !v.is_finite()) {
        return Err(invalid("training targets contain non-finite values"));
    }

    let start = Instant::now();
    let elapsed = || cfg.record_wall_time.then(|| start.elapsed().as_secs_f64());
    let objective = Objective::new(field, cfg.penalty, *mmd_kernel, cfg.bidirectional)?;
    let validator = NormalizedMmd::new(KernelSpec::gaussian(1.0)?, val_target, val_ref)?;
    let validate = |f: &VelocityField| -> Result<f64> {
        let (pushed, _) = flow_forward(f, val_ref, false)?;
        validator.evaluate(pushed.view())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let batches_per_epoch = n / cfg.batch_size;
    let total_steps = batches_per_epoch * cfg.epochs;

    let mut current = field.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.adam_betas, cfg.adam_eps, current.coeffs().dim());
    let mut trace = TrainTrace::default();

    let abort = |epoch: usize, trace: &TrainTrace| Error::NonFiniteLoss {
        epoch,
        trace: Box::new(trace.clone()),
    };

    // Epoch 0 checkpoint.
    let first_target = train_target.select(Axis(0), &order[..cfg.batch_size]);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe_ref = reference.draw(first_target.view(), &mut probe_rng);
    let initial_loss = objective
        .evaluate(&current, probe_ref.view(), first_target.view())?
        .loss;
    let initial_val = validate(&current)?;
    if !initial_loss.is_finite() || !initial_val.is_finite() {
        return Err(abort(0, &trace));
    }
    trace.records.push(TrainRecord {
        epoch: 0,
        train_loss: initial_loss,
        val_nmmd: initial_val,
        penalty: objective.penalty().value(&current)?,
        seconds: elapsed(),
    });
    let mut best = current.clone();
    trace.best_epoch = 0;
    trace.best_val_nmmd = initial_val;

    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for b in 0..batches_per_epoch {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let target = train_target.select(Axis(0), idx);
            let refb = reference.draw(target.view(), &mut rng);
            let value = match objective.evaluate(&current, refb.view(), target.view()) {
                Ok(v) => v,
                Err(Error::NonFiniteState { .. }) => return Err(abort(epoch, &trace)),
                Err(e) => return Err(e),
            };
            if !value.loss.is_finite() || value.grad.iter().any(|g| !g.is_finite()) {
                return Err(abort(epoch, &trace));
            }
            loss_sum += value.loss;
            let lr = learning_rate(cfg, step, total_steps);
            current.update_coeffs(|c| opt.step(c, &value.grad, lr));
            step += 1;
        }

        if epoch % cfg.val_every == 0 || epoch == cfg.epochs {
            let val = match validate(&current) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFiniteState { .. }) => return Err(abort(epoch, &trace)),
                Err(e) => return Err(e),
            };
            trace.records.push(TrainRecord {
                epoch,
                train_loss: loss_sum / batches_per_epoch as f64,
                val_nmmd: val,
                penalty: objective.penalty().value(&current)?,
                seconds: elapsed(),
            });
            if val < trace.best_val_nmmd {
                trace.best_val_nmmd = val;
                trace.best_epoch = epoch;
                best = current.clone();
            }
        }
    }
    Ok((best, trace))
}
