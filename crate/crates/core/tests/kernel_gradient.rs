use std::f64::consts::PI;

use dmgrad::kernel_gradient::*;
use dmgrad::rng::{derive_seed, seeded};
use nalgebra::{dvector, DVector, Rotation3};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform samples on a flat disc of radius `r` around `base`, with their
/// density.
fn disc_cloud(base: &DVector<f64>, r: f64, m: usize, seed: u64, f: impl Fn(&DVector<f64>) -> f64) -> NeighborCloud {
    let mut rng = seeded(seed);
    let samples: Vec<DVector<f64>> = (0..m)
        .map(|_| {
            let rho = r * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            base + dvector![rho * phi.cos(), rho * phi.sin()]
        })
        .collect();
    let fs = samples.iter().map(&f).collect();
    NeighborCloud::new(base.clone(), samples, f(base), fs, Some(vec![1.0 / (PI * r * r); m])).unwrap()
}

/// Points on the unit circle, uniform in arclength within `w` of the top.
fn circle_cloud(w: f64, m: usize, seed: u64) -> NeighborCloud {
    let mut rng = seeded(seed);
    let base = dvector![0.0, 1.0];
    let samples: Vec<DVector<f64>> = (0..m)
        .map(|_| {
            let a = PI / 2.0 + w * (2.0 * rng.random::<f64>() - 1.0);
            dvector![a.cos(), a.sin()]
        })
        .collect();
    let fs = samples.iter().map(|p| p[0]).collect();
    NeighborCloud::new(base, samples, 0.0, fs, Some(vec![1.0 / (2.0 * w); m])).unwrap()
}

#[test]
fn linear_function_on_flat_patch() {
    let a = dvector![0.8, -1.3];
    let base = dvector![0.2, 0.4];
    let p = KernelParams::new(0.05, 0.9, 10_000).unwrap();
    let cloud = disc_cloud(&base, 6.0 * 0.05, 10_000, 3, |y| a.dot(y));
    let est = estimate_gradient(&cloud, &p).unwrap();
    assert!((&est.direction - &a).norm() / a.norm() < 0.1, "{}", est.direction);
    assert!(est.dt_hat().unwrap() > 0.0);
    let scaled = &est.raw_v / (0.05 * 0.05);
    assert!((scaled - &est.direction).norm() < 1e-12 * est.direction.norm());
}

#[test]
fn circle_tangential_gradient() {
    let p = KernelParams::new(0.05, 0.9, 10_000).unwrap();
    let est = estimate_gradient(&circle_cloud(0.3, 10_000, 7), &p).unwrap();
    let truth = dvector![1.0, 0.0];
    assert!((&est.direction - &truth).norm() < 0.1, "{}", est.direction);
}

#[test]
fn flat_density_matches_gaussian_integral() {
    let t = 0.05;
    let p = KernelParams::new(t, 0.9, 100_000).unwrap();
    let base = dvector![0.0, 0.0];
    let wide = estimate_density(&disc_cloud(&base, 6.0 * t, 100_000, 11, |_| 0.0), &p).unwrap();
    let target = 2.0 * PI * t * t;
    assert!((wide / target - 1.0).abs() < 0.02, "{wide} vs {target}");

    // on the t^delta ball the integral is truncated
    let r = p.ball_radius();
    let narrow = estimate_density(&disc_cloud(&base, r, 100_000, 12, |_| 0.0), &p).unwrap();
    let truncated = target * (1.0 - (-r * r / (2.0 * t * t)).exp());
    assert!((narrow / truncated - 1.0).abs() < 0.02, "{narrow} vs {truncated}");
    assert!(narrow < 0.7 * target);
}

#[test]
fn density_examples() {
    let p = KernelParams::new(0.3, 0.9, 2).unwrap();
    let x = dvector![1.0, 2.0];
    let one = NeighborCloud::counting(x.clone(), vec![x.clone()], 0.0, vec![0.0]).unwrap();
    assert_eq!(estimate_density(&one, &p).unwrap(), 1.0);
    let two =
        NeighborCloud::counting(x.clone(), vec![&x + dvector![0.3, 0.0], &x - dvector![0.0, 0.3]], 0.0, vec![0.0, 0.0])
            .unwrap();
    assert!((estimate_density(&two, &p).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
}

fn gaussian_pdf(x: &DVector<f64>, y: &DVector<f64>, t: f64) -> f64 {
    let d = x.len() as i32;
    (-(y - x).norm_squared() / (2.0 * t * t)).exp() / (2.0 * PI * t * t).powf(d as f64 / 2.0)
}

fn gaussian_cloud(
    base: &DVector<f64>,
    t: f64,
    m: usize,
    seed: u64,
    f: impl Fn(&DVector<f64>) -> f64,
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut rng = seeded(seed);
    let samples: Vec<DVector<f64>> =
        (0..m).map(|_| base + DVector::from_fn(base.len(), |_, _| t * rng.sample::<f64, _>(StandardNormal))).collect();
    let fs = samples.iter().map(f).collect();
    (samples, fs)
}

#[test]
fn gaussian_pdf_weights_reduce_to_plain_mean() {
    let t = 0.2;
    let base = dvector![0.3, -0.1, 0.5];
    let f = |y: &DVector<f64>| y[0] * y[1] + y[2].sin();
    let (samples, fs) = gaussian_cloud(&base, t, 500, 5, f);
    let q: Vec<f64> = samples.iter().map(|y| gaussian_pdf(&base, y, t)).collect();
    let p = KernelParams::new(t, 0.9, 500).unwrap();
    let weighted = NeighborCloud::new(base.clone(), samples.clone(), f(&base), fs.clone(), Some(q)).unwrap();
    let plain = NeighborCloud::new(base.clone(), samples, f(&base), fs, None).unwrap();
    let a = estimate_gradient(&weighted, &p).unwrap();
    let b = estimate_gradient_gaussian(&plain, &p).unwrap();
    assert!((&a.raw_v - &b.raw_v).norm() <= 1e-12 * b.raw_v.norm());
    assert!(b.log_dt_hat.is_none());
}

#[test]
fn gaussian_estimator_cancels_symmetric_pairs() {
    let p = KernelParams::new(0.1, 0.9, 4).unwrap();
    let x = dvector![0.0, 0.0];
    let vs = [dvector![0.1, 0.05], dvector![-0.02, 0.2]];
    let samples: Vec<DVector<f64>> = vs.iter().flat_map(|v| [v.clone(), -v]).collect();
    let fs = samples.iter().map(|y| y.norm_squared()).collect();
    let cloud = NeighborCloud::new(x, samples, 0.0, fs, None).unwrap();
    let est = estimate_gradient_gaussian(&cloud, &p).unwrap();
    assert!(est.raw_v.norm() < 1e-18);
}

#[test]
fn benchmark_small_cases() {
    let r = mse_benchmark(1.0, 100, 0).unwrap();
    assert!(r.mse_proposed < r.mse_learning, "{r:?}");
    let r = mse_benchmark(0.1, 2, 4).unwrap();
    assert!(r.mse_proposed.is_finite() && r.mse_learning.is_finite());
}

#[test]
fn probe_median_does_not_grow_with_m() {
    let rows = convergence_probe(&[0.1], &[200, 400, 800], 30, 9, ProbeFunction::Linear).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].median <= w[0].median * 1.05, "{rows:?}");
    }
    let zero = convergence_probe(&[0.1], &[50], 30, 9, ProbeFunction::Constant).unwrap();
    assert_eq!((zero[0].median, zero[0].q90), (0.0, 0.0));
}

fn small_cloud() -> impl Strategy<Value = (Vec<[f64; 3]>, Vec<f64>, [f64; 3])> {
    (2usize..12).prop_flat_map(|m| {
        (
            prop::collection::vec(prop::array::uniform3(-0.3..0.3f64), m),
            prop::collection::vec(-5.0..5.0f64, m),
            prop::array::uniform3(-2.0..2.0f64),
        )
    })
}

fn build(base: &DVector<f64>, offsets: &[[f64; 3]], fs: &[f64], f0: f64) -> NeighborCloud {
    let samples = offsets.iter().map(|o| base + DVector::from_column_slice(o)).collect();
    NeighborCloud::counting(base.clone(), samples, f0, fs.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_invariance((offsets, fs, b) in small_cloud(), c in -100.0..100.0f64) {
        let p = KernelParams::new(0.2, 0.9, fs.len()).unwrap();
        let base = DVector::from_column_slice(&b);
        let a = estimate_gradient(&build(&base, &offsets, &fs, 0.5), &p).unwrap();
        let shifted: Vec<f64> = fs.iter().map(|v| v + c).collect();
        let s = estimate_gradient(&build(&base, &offsets, &shifted, 0.5 + c), &p).unwrap();
        prop_assert!((&a.raw_v - &s.raw_v).norm() <= 1e-9 * (1.0 + c.abs()) * (1.0 + a.raw_v.norm()));
    }

    #[test]
    fn linear_in_f((offsets, fs, b) in small_cloud(), alpha in -10.0..10.0f64) {
        let p = KernelParams::new(0.2, 0.9, fs.len()).unwrap();
        let base = DVector::from_column_slice(&b);
        let a = estimate_gradient(&build(&base, &offsets, &fs, 0.5), &p).unwrap();
        let scaled: Vec<f64> = fs.iter().map(|v| alpha * v).collect();
        let s = estimate_gradient(&build(&base, &offsets, &scaled, 0.5 * alpha), &p).unwrap();
        prop_assert!((&a.direction * alpha - &s.direction).norm() <= 1e-9 * (1.0 + alpha.abs() * a.direction.norm()));
    }

    #[test]
    fn translation_equivariance((offsets, fs, b) in small_cloud(), shift in prop::array::uniform3(-50.0..50.0f64)) {
        let p = KernelParams::new(0.2, 0.9, fs.len()).unwrap();
        let base = DVector::from_column_slice(&b);
        let moved = &base + DVector::from_column_slice(&shift);
        let a = estimate_gradient(&build(&base, &offsets, &fs, 0.5), &p).unwrap();
        let s = estimate_gradient(&build(&moved, &offsets, &fs, 0.5), &p).unwrap();
        prop_assert!((&a.raw_v - &s.raw_v).norm() <= 1e-9 * (1.0 + a.raw_v.norm()));
    }

    #[test]
    fn rotation_equivariance((offsets, fs, b) in small_cloud(), axis in prop::array::uniform3(-1.0..1.0f64), angle in -PI..PI) {
        prop_assume!(axis.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let rot = Rotation3::from_scaled_axis(nalgebra::Vector3::from(axis).normalize() * angle);
        let r = DVector::from_column_slice(rot.matrix().as_slice());
        let rm = nalgebra::DMatrix::from_column_slice(3, 3, r.as_slice());
        let p = KernelParams::new(0.2, 0.9, fs.len()).unwrap();
        let base = DVector::from_column_slice(&b);
        let a = estimate_gradient(&build(&base, &offsets, &fs, 0.5), &p).unwrap();
        let rotated: Vec<[f64; 3]> = offsets
            .iter()
            .map(|o| {
                let v = &rm * DVector::from_column_slice(o);
                [v[0], v[1], v[2]]
            })
            .collect();
        let s = estimate_gradient(&build(&(&rm * &base), &rotated, &fs, 0.5), &p).unwrap();
        prop_assert!((&rm * &a.raw_v - &s.raw_v).norm() <= 1e-9 * (1.0 + a.raw_v.norm()));
    }
}

#[test]
fn seeds_are_independent_streams() {
    assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    assert_eq!(derive_seed(5, 2), derive_seed(5, 2));
}
