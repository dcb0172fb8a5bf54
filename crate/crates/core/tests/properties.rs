use kode::data::{generate_benchmark, sample_reference, Benchmark, Standardizer};
use kode::flow::{flow_backward, flow_forward, TimeMode, VelocityField};
use kode::kernels::KernelSpec;
use kode::model::TransportModel;
use kode::objective::{rkhs_penalty, rkhs_penalty_grad, PenaltyConfig};
use ndarray::{s, Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(seed: u64, j: usize, d: usize, steps: usize, mode: TimeMode, mask: usize, scale: f64) -> VelocityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inducing = Array2::from_shape_simple_fn((j, d), || rng.random_range(-1.5..1.5));
    let slices = if mode == TimeMode::NonAutonomous { steps } else { 1 };
    let mut c = Array3::from_shape_simple_fn((slices, j, d), || scale * rng.random_range(-1.0..1.0));
    c.slice_mut(s![.., .., ..mask]).fill(0.0);
    VelocityField::new(inducing, KernelSpec::gaussian(0.8).unwrap(), c, steps, mode, mask).unwrap()
}

fn mode_of(flag: bool) -> TimeMode {
    if flag {
        TimeMode::Autonomous
    } else {
        TimeMode::NonAutonomous
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_field_is_identity(seed in 0u64..1000, j in 1usize..6, d in 1usize..4, steps in 1usize..12, n in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inducing = Array2::from_shape_simple_fn((j, d), || rng.random_range(-1.0..1.0));
        let f = VelocityField::zeros(inducing, KernelSpec::laplace(0.7).unwrap(), steps, TimeMode::NonAutonomous, 0).unwrap();
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-3.0..3.0));
        let (y, _) = flow_forward(&f, x.view(), false).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn masked_coordinates_are_fixed(seed in 0u64..1000, auto in any::<bool>(), d in 2usize..5, steps in 1usize..8) {
        let m = 1 + (seed as usize) % (d - 1);
        let f = random_field(seed, 4, d, steps, mode_of(auto), m, 1.0);
        let x = sample_reference(15, d, seed);
        let (y, _) = flow_forward(&f, x.view(), false).unwrap();
        prop_assert_eq!(y.slice(s![.., ..m]), x.slice(s![.., ..m]));
        let back = flow_backward(&f, x.view()).unwrap();
        prop_assert_eq!(back.slice(s![.., ..m]), x.slice(s![.., ..m]));
        let mut perturbed = x.clone();
        perturbed.slice_mut(s![.., m..]).mapv_inplace(|v| v + 0.3);
        let (yp, _) = flow_forward(&f, perturbed.view(), false).unwrap();
        prop_assert_eq!(yp.slice(s![.., ..m]), y.slice(s![.., ..m]));
    }

    #[test]
    fn round_trip_is_accurate(seed in 0u64..1000, auto in any::<bool>(), d in 1usize..4) {
        let f = random_field(seed, 5, d, 20, mode_of(auto), 0, 0.6);
        let x = sample_reference(30, d, seed + 1);
        let (y, _) = flow_forward(&f, x.view(), false).unwrap();
        let back = flow_backward(&f, y.view()).unwrap();
        let err = (&back - &x).iter().fold(0.0f64, |m, e| m.max(e.abs()));
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn penalty_nonnegative_and_gradient_linear(seed in 0u64..1000, auto in any::<bool>(), alpha in -3.0f64..3.0) {
        let f = random_field(seed, 4, 2, 5, mode_of(auto), 0, 1.0);
        let cfg = PenaltyConfig { lambda1: 0.7, lambda2: 0.3, lambda_total: 1.0 };
        prop_assert!(rkhs_penalty(&f, &cfg).unwrap() >= 0.0);
        let g = rkhs_penalty_grad(&f, &cfg).unwrap();
        let mut scaled = f.clone();
        scaled.set_coeffs(f.coeffs() * alpha).unwrap();
        let gs = rkhs_penalty_grad(&scaled, &cfg).unwrap();
        let err = (&gs - &(&g * alpha)).iter().fold(0.0f64, |m, e| m.max(e.abs()));
        prop_assert!(err <= 1e-12 * (1.0 + g.iter().fold(0.0f64, |m, e| m.max(e.abs()))), "{}", err);
    }

    #[test]
    fn generators_are_seeded_and_finite(seed in 0u64..10_000, which in 0usize..7, n in 1usize..300) {
        let b = Benchmark::ALL[which];
        let x = generate_benchmark(b, n, seed).unwrap();
        prop_assert_eq!(x.dim(), (n, 2));
        prop_assert!(x.iter().all(|v| v.is_finite()));
        prop_assert_eq!(x, generate_benchmark(b, n, seed).unwrap());
    }

    #[test]
    fn standardizer_inverts(seed in 0u64..1000, n in 2usize..50, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-50.0..50.0));
        let s = Standardizer::fit(x.view()).unwrap();
        let back = s.invert(s.apply(x.view()).unwrap().view()).unwrap();
        let err = (&back - &x).iter().fold(0.0f64, |m, e| m.max(e.abs()));
        prop_assert!(err <= 1e-12 * 50.0, "{}", err);
    }

    #[test]
    fn serialization_reproduces_samples(seed in 0u64..1000, auto in any::<bool>()) {
        let f = random_field(seed, 6, 2, 7, mode_of(auto), 0, 0.7);
        let std = Standardizer::new(ndarray::array![0.3, -1.0], ndarray::array![1.7, 0.2]).unwrap();
        let model = TransportModel::new(f, std, KernelSpec::laplace(1.3).unwrap()).unwrap();
        let back = TransportModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(model.sample(50, seed).unwrap(), back.sample(50, seed).unwrap());
        prop_assert_eq!(back.to_json().unwrap(), model.to_json().unwrap());
    }
}
