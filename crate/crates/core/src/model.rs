//! Trained transport models: assembly, training, sampling, conditioning
//! and the JSON model file.
//!
//! All flows run in standardized coordinates; the model's [`Standardizer`]
//! maps user data in and out.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_reference, select_inducing_points, Standardizer};
use crate::error::{check_dim, invalid, Error, Result};
use crate::flow::{flow_backward, flow_forward, TimeMode, Trajectory, Velocity, VelocityField};
use crate::kernels::{median_heuristic, KernelFamily, KernelSpec};
use crate::mmd::NormalizedMmd;
use crate::optim::{train, ReferenceSampler, TrainConfig, TrainTrace};

pub const FORMAT_VERSION: u32 = 1;

/// Rows used when a lengthscale is set by the median heuristic.
const MEDIAN_ROWS: usize = 2000;

/// A lengthscale given as a number or as the string `"median"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LengthscaleRepr", into = "LengthscaleRepr")]
pub enum Lengthscale {
    Fixed(f64),
    Median,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LengthscaleRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<LengthscaleRepr> for Lengthscale {
    type Error = String;

    fn try_from(r: LengthscaleRepr) -> std::result::Result<Self, String> {
        match r {
            LengthscaleRepr::Value(v) if v.is_finite() && v > 0.0 => Ok(Self::Fixed(v)),
            LengthscaleRepr::Value(v) => Err(format!("lengthscale must be positive, got {v}")),
            LengthscaleRepr::Name(s) if s == "median" => Ok(Self::Median),
            LengthscaleRepr::Name(s) => Err(format!("lengthscale must be a number or \"median\", got \"{s}\"")),
        }
    }
}

impl From<Lengthscale> for LengthscaleRepr {
    fn from(l: Lengthscale) -> Self {
        match l {
            Lengthscale::Fixed(v) => Self::Value(v),
            Lengthscale::Median => Self::Name("median".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelChoice {
    pub family: KernelFamily,
    pub lengthscale: Lengthscale,
}

impl KernelChoice {
    fn resolve(&self, pool: ArrayView2<f64>, seed: u64) -> Result<KernelSpec> {
        let l = match self.lengthscale {
            Lengthscale::Fixed(v) => v,
            Lengthscale::Median => {
                let mut idx: Vec<usize> = (0..pool.nrows()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                idx.truncate(MEDIAN_ROWS);
                median_heuristic(pool.select(Axis(0), &idx).view())?
            }
        };
        KernelSpec::new(self.family, l)
    }
}

/// Architecture of the velocity field and the training kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub field_kernel: KernelChoice,
    pub mmd_kernel: KernelChoice,
    pub n_inducing: usize,
    pub time_steps: usize,
    pub mode: TimeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            field_kernel: KernelChoice {
                family: KernelFamily::Gaussian,
                lengthscale: Lengthscale::Fixed(0.5),
            },
            mmd_kernel: KernelChoice {
                family: KernelFamily::Laplace,
                lengthscale: Lengthscale::Median,
            },
            n_inducing: 50,
            time_steps: 10,
            mode: TimeMode::NonAutonomous,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inducing == 0 {
            return Err(invalid("n_inducing must be positive"));
        }
        if self.time_steps == 0 {
            return Err(invalid("time_steps must be positive"));
        }
        Ok(())
    }
}

/// Provenance stored alongside the trained field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub train_config: Option<TrainConfig>,
    pub model_config: Option<ModelConfig>,
    pub best_epoch: Option<usize>,
    pub best_val_nmmd: Option<f64>,
    pub test_nmmd: Option<f64>,
}

/// Componentwise range of the conditioning block seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ConditioningRange {
    fn of(y: ArrayView2<f64>) -> Self {
        let fold = |init: f64, f: fn(f64, f64) -> f64| -> Vec<f64> {
            y.columns()
                .into_iter()
                .map(|c| c.iter().copied().fold(init, f))
                .collect()
        };
        Self {
            min: fold(f64::INFINITY, f64::min),
            max: fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, y: ArrayView1<f64>) -> bool {
        y.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }
}

/// Conditional draws together with an extrapolation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSamples {
    pub samples: Array2<f64>,
    /// The conditioning value lies outside the training range of `y`.
    pub extrapolated: bool,
}

/// A trained (or untrained) transport map with its data standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportModel {
    field: VelocityField,
    standardizer: Standardizer,
    mmd_train_kernel: KernelSpec,
    conditioning_range: Option<ConditioningRange>,
    pub meta: TrainingMeta,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over a per-purpose offset.
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INDUCING_REF: u64 = 1;
const STREAM_INDUCING: u64 = 2;
const STREAM_VAL_REF: u64 = 3;
const STREAM_MEDIAN: u64 = 4;

impl TransportModel {
    pub fn new(field: VelocityField, standardizer: Standardizer, mmd_train_kernel: KernelSpec) -> Result<Self> {
        check_dim(field.dim(), standardizer.dim())?;
        Ok(Self {
            field,
            standardizer,
            mmd_train_kernel,
            conditioning_range: None,
            meta: TrainingMeta::default(),
        })
    }

    pub fn field(&self) -> &VelocityField {
        &self.field
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn mmd_train_kernel(&self) -> &KernelSpec {
        &self.mmd_train_kernel
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn mask_dim(&self) -> usize {
        self.field.mask_dim()
    }

    pub fn integrator_steps(&self) -> usize {
        self.field.time_steps()
    }

    pub fn conditioning_range(&self) -> Option<&ConditioningRange> {
        self.conditioning_range.as_ref()
    }

    /// Standardizes, trains from the identity map and keeps the best
    /// validation snapshot.
    pub fn fit(
        train_cfg: &TrainConfig,
        model_cfg: &ModelConfig,
        target_train: ArrayView2<f64>,
        target_val: ArrayView2<f64>,
    ) -> Result<(Self, TrainTrace)> {
        Self::fit_inner(train_cfg, model_cfg, target_train, target_val, 0)
    }

    /// Trains a block-triangular map whose first `m` coordinates are the
    /// conditioning variables.
    pub fn fit_triangular(
        train_cfg: &TrainConfig,
        model_cfg: &ModelConfig,
        joint_train: ArrayView2<f64>,
        joint_val: ArrayView2<f64>,
        m: usize,
    ) -> Result<(Self, TrainTrace)> {
        if m == 0 || m >= joint_train.ncols() {
            return Err(invalid(format!(
                "conditioning dimension {m} must be in 1..{}",
                joint_train.ncols()
            )));
        }
        Self::fit_inner(train_cfg, model_cfg, joint_train, joint_val, m)
    }

    fn fit_inner(
        train_cfg: &TrainConfig,
        model_cfg: &ModelConfig,
        target_train: ArrayView2<f64>,
        target_val: ArrayView2<f64>,
        m: usize,
    ) -> Result<(Self, TrainTrace)> {
        train_cfg.validate()?;
        model_cfg.validate()?;
        let d = target_train.ncols();
        if target_train.nrows() == 0 || target_val.nrows() == 0 {
            return Err(Error::EmptyInput("training and validation targets"));
        }
        check_dim(d, target_val.ncols())?;
        let seed = train_cfg.seed;

        let standardizer = Standardizer::fit(target_train)?;
        let z_train = standardizer.apply(target_train)?;
        let z_val = standardizer.apply(target_val)?;

        let reference_like = |z: &Array2<f64>, stream: u64| {
            let mut r = sample_reference(z.nrows(), d, derive_seed(seed, stream));
            if m > 0 {
                r.slice_mut(s![.., ..m]).assign(&z.slice(s![.., ..m]));
            }
            r
        };
        let ind_ref = reference_like(&z_train, STREAM_INDUCING_REF);
        let val_ref = reference_like(&z_val, STREAM_VAL_REF);

        let inducing = select_inducing_points(
            ind_ref.view(),
            z_train.view(),
            model_cfg.n_inducing,
            derive_seed(seed, STREAM_INDUCING),
        )?;
        let union = concatenate![Axis(0), ind_ref.view(), z_train.view()];
        let field_kernel = model_cfg
            .field_kernel
            .resolve(union.view(), derive_seed(seed, STREAM_MEDIAN))?;
        let mmd_kernel = model_cfg
            .mmd_kernel
            .resolve(z_train.view(), derive_seed(seed, STREAM_MEDIAN + 1))?;

        let field = VelocityField::zeros(inducing, field_kernel, model_cfg.time_steps, model_cfg.mode, m)?;
        let sampler = if m > 0 {
            ReferenceSampler::Triangular { cond_dim: m }
        } else {
            ReferenceSampler::FreshGaussian
        };
        let (best, trace) = train(
            &field,
            train_cfg,
            &sampler,
            z_train.view(),
            val_ref.view(),
            z_val.view(),
            &mmd_kernel,
        )?;

        let mut model = Self::new(best, standardizer, mmd_kernel)?;
        if m > 0 {
            model.conditioning_range = Some(ConditioningRange::of(target_train.slice(s![.., ..m])));
        }
        model.meta = TrainingMeta {
            train_config: Some(train_cfg.clone()),
            model_config: Some(model_cfg.clone()),
            best_epoch: Some(trace.best_epoch),
            best_val_nmmd: Some(trace.best_val_nmmd),
            test_nmmd: None,
        };
        Ok((model, trace))
    }

    /// Pushes `z` (standardized reference points) forward and maps the
    /// result back to data units.
    pub fn push_forward(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (x, _) = flow_forward(&self.field, z, false)?;
        self.standardizer.invert(x.view())
    }

    /// `n` draws from the model.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let z = sample_reference(n, self.dim(), seed);
        self.push_forward(z.view())
    }

    /// Pulls data points back to the standardized reference space.
    pub fn pull_back(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.standardizer.apply(y)?;
        flow_backward(&self.field, z.view())
    }

    /// Draws `n` samples of the free block given the conditioning value `y`.
    pub fn condition(&self, y: ArrayView1<f64>, n: usize, seed: u64) -> Result<ConditionalSamples> {
        let m = self.mask_dim();
        if m == 0 {
            return Err(invalid("conditioning requires a triangular model (mask_dim > 0)"));
        }
        check_dim(m, y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("conditioning value is not finite"));
        }
        let d = self.dim();
        let ys = self.standardizer.apply_prefix(y)?;
        let mut z = sample_reference(n, d, seed);
        z.slice_mut(s![.., ..m])
            .assign(&ys.broadcast((n, m)).expect("broadcast"));
        let (x, _) = flow_forward(&self.field, z.view(), false)?;
        let samples = self.standardizer.tail(m).invert(x.slice(s![.., m..]))?;
        let extrapolated = self.conditioning_range.as_ref().is_some_and(|r| !r.contains(y));
        Ok(ConditionalSamples { samples, extrapolated })
    }

    /// Flow states at every step boundary for `n` reference draws, in data
    /// units.
    pub fn trajectories(&self, n: usize, seed: u64) -> Result<Trajectory> {
        let z = sample_reference(n, self.dim(), seed);
        let (_, traj) = flow_forward(&self.field, z.view(), true)?;
        let mut traj = traj.expect("recorded");
        let d = self.dim();
        let (t, n, _) = traj.states.dim();
        let flat = traj.states.to_shape((t * n, d)).expect("contiguous").to_owned();
        let back = self.standardizer.invert(flat.view())?;
        traj.states = back.into_shape_with_order((t, n, d)).expect("same size");
        Ok(traj)
    }

    /// Normalized MMD of model draws against `test` under the unit Gaussian
    /// kernel in standardized coordinates. The reference draws are both the
    /// input of the map and the denominator's reference set.
    pub fn evaluate(&self, test: ArrayView2<f64>, reference_seed: u64) -> Result<Evaluation> {
        check_dim(self.dim(), test.ncols())?;
        let zt = self.standardizer.apply(test)?;
        let z = sample_reference(test.nrows(), self.dim(), reference_seed);
        let (gen, _) = flow_forward(&self.field, z.view(), false)?;
        let metric = NormalizedMmd::new(KernelSpec::gaussian(1.0)?, zt.view(), z.view())?;
        let mmd2 = metric.mmd2(gen.view())?;
        Ok(Evaluation {
            normalized_mmd: (mmd2 / metric.reference_mmd2()).sqrt(),
            mmd_squared: mmd2,
            reference_mmd_squared: metric.reference_mmd2(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(format!("malformed JSON: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::ModelFormat(format!(
                    "unsupported format_version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::ModelFormat("missing field `format_version`".into())),
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub normalized_mmd: f64,
    pub mmd_squared: f64,
    pub reference_mmd_squared: f64,
}

impl Evaluation {
    /// `MMD^2(generated, test) / MMD^2(reference, test)`.
    pub fn normalized_mmd_squared(&self) -> f64 {
        self.mmd_squared / self.reference_mmd_squared
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    field_kernel: KernelSpec,
    mmd_train_kernel: KernelSpec,
    mode: TimeMode,
    integrator_steps: usize,
    mask_dim: usize,
    inducing_points: Vec<Vec<f64>>,
    /// `slices x J x d`.
    coefficients: Vec<Vec<Vec<f64>>>,
    standardizer: StandardizerFile,
    #[serde(default)]
    conditioning_range: Option<ConditioningRange>,
    training_meta: TrainingMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerFile {
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn rows(a: ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, v: &[Vec<f64>]) -> Result<Array2<f64>> {
    let r = v.len();
    let c = v.first().map_or(0, Vec::len);
    if v.iter().any(|row| row.len() != c) {
        return Err(Error::ModelFormat(format!("`{name}` has rows of unequal length")));
    }
    Ok(Array2::from_shape_vec((r, c), v.concat()).expect("checked"))
}

impl From<&TransportModel> for ModelFile {
    fn from(m: &TransportModel) -> Self {
        let f = &m.field;
        Self {
            format_version: FORMAT_VERSION,
            field_kernel: *f.kernel(),
            mmd_train_kernel: m.mmd_train_kernel,
            mode: f.mode(),
            integrator_steps: f.time_steps(),
            mask_dim: f.mask_dim(),
            inducing_points: rows(f.inducing_points().view()),
            coefficients: f.coeffs().outer_iter().map(rows).collect(),
            standardizer: StandardizerFile {
                mean: m.standardizer.mean.to_vec(),
                std: m.standardizer.std.to_vec(),
            },
            conditioning_range: m.conditioning_range.clone(),
            training_meta: m.meta.clone(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<TransportModel> {
        let bad = |e: Error| Error::ModelFormat(e.to_string());
        let inducing = matrix("inducing_points", &self.inducing_points)?;
        let slices: Vec<Array2<f64>> = self
            .coefficients
            .iter()
            .map(|s| matrix("coefficients", s))
            .collect::<Result<_>>()?;
        let (j, d) = inducing.dim();
        if slices.iter().any(|s| s.dim() != (j, d)) {
            return Err(Error::ModelFormat(format!(
                "every coefficient slice must be {j} x {d} to match the inducing points"
            )));
        }
        let views: Vec<_> = slices.iter().map(|s| s.view()).collect();
        let coeffs = if views.is_empty() {
            Array3::zeros((0, j, d))
        } else {
            ndarray::stack(Axis(0), &views).expect("equal shapes")
        };
        let field = VelocityField::new(
            inducing,
            self.field_kernel,
            coeffs,
            self.integrator_steps,
            self.mode,
            self.mask_dim,
        )
        .map_err(bad)?;
        let standardizer = Standardizer::new(
            Array1::from(self.standardizer.mean),
            Array1::from(self.standardizer.std),
        )
        .map_err(bad)?;
        if let Some(r) = &self.conditioning_range {
            if r.min.len() != self.mask_dim || r.max.len() != self.mask_dim {
                return Err(Error::ModelFormat(
                    "conditioning_range length must equal mask_dim".into(),
                ));
            }
        }
        let mut model = TransportModel::new(field, standardizer, self.mmd_train_kernel).map_err(bad)?;
        model.conditioning_range = self.conditioning_range;
        model.meta = self.training_meta;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::PenaltyConfig;
    use rand::Rng;

    fn zero_model(d: usize, m: usize) -> TransportModel {
        let inducing = Array2::from_shape_fn((4, d), |(i, j)| (i + j) as f64 * 0.3);
        let field = VelocityField::zeros(
            inducing,
            KernelSpec::gaussian(1.0).unwrap(),
            5,
            TimeMode::NonAutonomous,
            m,
        )
        .unwrap();
        let st = Standardizer::new(Array1::from_elem(d, 2.0), Array1::from_elem(d, 3.0)).unwrap();
        TransportModel::new(field, st, KernelSpec::laplace(1.0).unwrap()).unwrap()
    }

    fn random_model(seed: u64) -> TransportModel {
        let mut m = zero_model(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.field
            .update_coeffs(|c| c.mapv_inplace(|_| rng.random_range(-0.3..0.3)));
        m
    }

    #[test]
    fn lengthscale_serde() {
        let l: Lengthscale = serde_json::from_str("\"median\"").unwrap();
        assert_eq!(l, Lengthscale::Median);
        let l: Lengthscale = serde_json::from_str("0.25").unwrap();
        assert_eq!(l, Lengthscale::Fixed(0.25));
        assert!(serde_json::from_str::<Lengthscale>("-1").is_err());
        assert!(serde_json::from_str::<Lengthscale>("\"mean\"").is_err());
        assert_eq!(serde_json::to_string(&Lengthscale::Median).unwrap(), "\"median\"");
    }

    #[test]
    fn zero_model_sampling() {
        let m = zero_model(2, 0);
        assert_eq!(m.sample(0, 1).unwrap().dim(), (0, 2));
        let n = 20_000;
        let x = m.sample(n, 3).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for v in mean {
            assert!((v - 2.0).abs() < 4.0 * 3.0 / (n as f64).sqrt());
        }
        assert_eq!(x, m.sample(n, 3).unwrap());
        let y = Array2::from_shape_fn((5, 2), |(i, j)| i as f64 - j as f64);
        assert_eq!(m.pull_back(y.view()).unwrap(), m.standardizer.apply(y.view()).unwrap());
    }

    #[test]
    fn pull_back_inverts_sampling() {
        let m = random_model(4);
        let z = sample_reference(200, 2, 9);
        let x = m.push_forward(z.view()).unwrap();
        let back = m.pull_back(x.view()).unwrap();
        let err = (&back - &z).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = random_model(5);
        m.meta.test_nmmd = Some(0.1234567890123);
        let text = m.to_json().unwrap();
        let back = TransportModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.sample(50, 7).unwrap(), m.sample(50, 7).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        m.save(&p).unwrap();
        assert_eq!(TransportModel::load(&p).unwrap(), m);
    }

    #[test]
    fn load_rejects_bad_files() {
        let m = random_model(6);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();

        let mut nan = v.clone();
        nan["coefficients"][0][0][0] = serde_json::Value::String("NaN".into());
        assert!(TransportModel::from_json(&nan.to_string()).is_err());

        let text = m.to_json().unwrap().replacen(
            "\"coefficients\": [\n    [\n      [\n",
            "\"coefficients\": [\n    [\n      [\n        1e400,\n",
            1,
        );
        assert!(matches!(TransportModel::from_json(&text), Err(Error::ModelFormat(_))));

        let mut missing = v.clone();
        missing.as_object_mut().unwrap().remove("inducing_points");
        match TransportModel::from_json(&missing.to_string()) {
            Err(Error::ModelFormat(msg)) => assert!(msg.contains("inducing_points"), "{msg}"),
            other => panic!("{other:?}"),
        }

        v["format_version"] = serde_json::json!(2);
        match TransportModel::from_json(&v.to_string()) {
            Err(Error::ModelFormat(msg)) => assert!(msg.contains("format_version"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(TransportModel::from_json("{").is_err());
    }

    #[test]
    fn conditioning_on_zero_triangular_model() {
        let m = zero_model(3, 1);
        let a = m.condition(ndarray::array![-4.0].view(), 500, 11).unwrap();
        let b = m.condition(ndarray::array![7.0].view(), 500, 11).unwrap();
        assert_eq!(a.samples.dim(), (500, 2));
        assert_eq!(a.samples, b.samples);
        let z = sample_reference(500, 3, 11);
        let expect = m.standardizer.tail(1).invert(z.slice(s![.., 1..])).unwrap();
        assert_eq!(a.samples, expect);
        assert!(!a.extrapolated);
        assert!(zero_model(2, 0).condition(ndarray::array![0.0].view(), 5, 1).is_err());
        assert!(m.condition(ndarray::array![0.0, 1.0].view(), 5, 1).is_err());
    }

    #[test]
    fn trajectories_layout() {
        let m = zero_model(2, 0);
        let t = m.trajectories(7, 2).unwrap();
        assert_eq!(t.states.dim(), (6, 7, 2));
        let start = m.standardizer.invert(sample_reference(7, 2, 2).view()).unwrap();
        for k in 0..6 {
            assert_eq!(t.states.index_axis(Axis(0), k), start);
        }
    }

    #[test]
    fn zero_model_scores_one() {
        let m = zero_model(2, 0);
        let test = sample_reference(300, 2, 8).mapv(|v| 2.0 * v + 1.0);
        let e = m.evaluate(test.view(), 4).unwrap();
        assert_eq!(e.normalized_mmd, 1.0);
    }

    #[test]
    fn fit_small_triangular_keeps_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut joint = |n: usize| {
            Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(rand_distr::StandardNormal)).mapv(|v| v * 0.5)
        };
        let train = joint(512);
        let val = joint(256);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 128,
            val_every: 1,
            penalty: PenaltyConfig::default(),
            ..TrainConfig::default()
        };
        let mcfg = ModelConfig {
            n_inducing: 10,
            time_steps: 4,
            ..ModelConfig::default()
        };
        let (model, trace) = TransportModel::fit_triangular(&cfg, &mcfg, train.view(), val.view(), 1).unwrap();
        assert_eq!(trace.records.len(), 4);
        assert_eq!(model.mask_dim(), 1);
        let z = sample_reference(50, 2, 1);
        let (x, _) = flow_forward(model.field(), z.view(), false).unwrap();
        assert_eq!(x.column(0), z.column(0));
        assert!(TransportModel::fit_triangular(&cfg, &mcfg, train.view(), val.view(), 2).is_err());
        let r = model.conditioning_range().unwrap();
        assert!(
            model
                .condition(ndarray::array![r.max[0] + 1.0].view(), 3, 1)
                .unwrap()
                .extrapolated
        );
    }
}
