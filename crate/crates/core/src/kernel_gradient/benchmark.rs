//! Estimator benchmarks: the closed curve in R^9 comparing against the
//! learning-gradient baseline, and the flat-patch convergence probe.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{estimate_gradient, learning_gradient_fit, KernelParams, NeighborCloud};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, seeded};

/// Ball exponent used by the curve benchmark.
const BENCH_DELTA: f64 = 0.9;
/// Local samples extend this many bandwidths from the base point so the
/// Gaussian window is effectively untruncated.
const PROBE_RADIUS_IN_BANDWIDTHS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MseRecord {
    pub t: f64,
    pub m: usize,
    pub seed: u64,
    pub mse_proposed: f64,
    pub mse_learning: f64,
}

/// `(c(s), c(s), c(s))` with `c(s) = (cos 2 pi s, sin 2 pi s, cos 4 pi s)`.
pub fn benchmark_curve_point(s: f64) -> DVector<f64> {
    let c = [(2.0 * PI * s).cos(), (2.0 * PI * s).sin(), (4.0 * PI * s).cos()];
    DVector::from_fn(9, |i, _| c[i % 3])
}

/// Unit tangent of the benchmark curve.
pub fn benchmark_curve_tangent(s: f64) -> DVector<f64> {
    let dc = [-2.0 * PI * (2.0 * PI * s).sin(), 2.0 * PI * (2.0 * PI * s).cos(), -4.0 * PI * (4.0 * PI * s).sin()];
    DVector::from_fn(9, |i, _| dc[i % 3]).normalize()
}

/// Speed `|x'(s)|` of the benchmark curve.
fn curve_speed(s: f64) -> f64 {
    let dc = [-2.0 * PI * (2.0 * PI * s).sin(), 2.0 * PI * (2.0 * PI * s).cos(), -4.0 * PI * (4.0 * PI * s).sin()];
    (3.0 * (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2])).sqrt()
}

/// Lower bound of [`curve_speed`], attained where both sines vanish.
const MIN_CURVE_SPEED: f64 = 2.0 * PI * 1.732_050_807_568_877_2;

/// Mean squared error of both estimators against the Riemannian gradient
/// of `f(x) = <x, A A^T x>` on the benchmark curve, evaluated at `m`
/// uniformly drawn curve points.
///
/// At each evaluation point the proposed estimator receives `m` fresh
/// samples with parameters uniform on a window spanning at least
/// `PROBE_RADIUS_IN_BANDWIDTHS * t` of arclength on either side, together
/// with their exact arclength density. The baseline fits one field through
/// the `m` evaluation points with manifold dimension 1.
pub fn mse_benchmark(t: f64, m: usize, seed: u64) -> Result<MseRecord> {
    if m < 2 {
        return Err(invalid("m", "the benchmark needs at least two samples"));
    }
    let mut rng = seeded(seed);
    let a = DMatrix::<f64>::from_fn(9, 9, |_, _| rng.sample(StandardNormal));
    let gram = &a * a.transpose();
    let objective = |x: &DVector<f64>| x.dot(&(&gram * x));
    let params: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();

    let points: Vec<DVector<f64>> = params.iter().map(|&s| benchmark_curve_point(s)).collect();
    let fvals: Vec<f64> = points.iter().map(objective).collect();
    let truth: Vec<DVector<f64>> = params
        .iter()
        .zip(&points)
        .map(|(&s, x)| {
            let ambient = 2.0 * (&gram * x);
            let tangent = benchmark_curve_tangent(s);
            &tangent * ambient.dot(&tangent)
        })
        .collect();

    let kernel = KernelParams::new(t, BENCH_DELTA, m)?;
    let half_width = PROBE_RADIUS_IN_BANDWIDTHS * t / MIN_CURVE_SPEED;
    let mut local = seeded(derive_seed(seed, 1));
    let mut se_proposed = 0.0;
    for (i, &s0) in params.iter().enumerate() {
        let local_params: Vec<f64> = (0..m).map(|_| s0 + half_width * (2.0 * local.random::<f64>() - 1.0)).collect();
        let samples: Vec<DVector<f64>> = local_params.iter().map(|&s| benchmark_curve_point(s)).collect();
        let density = local_params.iter().map(|&s| 1.0 / (2.0 * half_width * curve_speed(s))).collect();
        let cloud = NeighborCloud::new(
            points[i].clone(),
            samples.clone(),
            fvals[i],
            samples.iter().map(objective).collect(),
            Some(density),
        )?;
        let est = estimate_gradient(&cloud, &kernel)?;
        se_proposed += (est.direction - &truth[i]).norm_squared();
    }

    let fit = learning_gradient_fit(&points, &fvals, t, 1)?;
    let se_learning: f64 = fit.at_samples().iter().zip(&truth).map(|(g, tr)| (g - tr).norm_squared()).sum();

    Ok(MseRecord { t, m, seed, mse_proposed: se_proposed / m as f64, mse_learning: se_learning / m as f64 })
}

/// Function sampled by [`convergence_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeFunction {
    /// `f(y) = a . y` with `a = (1, -1/2)`.
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ProbeRow {
    pub t: f64,
    pub m: usize,
    pub median: f64,
    pub q90: f64,
}

/// Linear-interpolated sample quantile, `p` in `[0, 1]`.
pub(crate) fn quantile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = p * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Error quantiles of the estimator on a flat 2-D patch for every `(t, m)`
/// pair, `trials` independent clouds per cell.
pub fn convergence_probe(
    t_list: &[f64],
    m_list: &[usize],
    trials: usize,
    seed: u64,
    function: ProbeFunction,
) -> Result<Vec<ProbeRow>> {
    if trials < 30 {
        return Err(invalid("trials", format!("need at least 30, got {trials}")));
    }
    let slope = DVector::from_vec(vec![1.0, -0.5]);
    let truth = match function {
        ProbeFunction::Linear => slope.clone(),
        ProbeFunction::Constant => DVector::zeros(2),
    };
    let mut rows = Vec::new();
    for (ti, &t) in t_list.iter().enumerate() {
        for (mi, &m) in m_list.iter().enumerate() {
            let kernel = KernelParams::new(t, BENCH_DELTA, m)?;
            let radius = PROBE_RADIUS_IN_BANDWIDTHS * t;
            let density = 1.0 / (PI * radius * radius);
            let cell = derive_seed(seed, (ti * m_list.len() + mi) as u64);
            let mut errors = Vec::with_capacity(trials);
            for trial in 0..trials {
                let mut rng = seeded(derive_seed(cell, trial as u64));
                let base = DVector::from_vec(vec![rng.random::<f64>(), rng.random::<f64>()]);
                let samples: Vec<DVector<f64>> = (0..m)
                    .map(|_| {
                        let r = radius * rng.random::<f64>().sqrt();
                        let phi = 2.0 * PI * rng.random::<f64>();
                        DVector::from_vec(vec![base[0] + r * phi.cos(), base[1] + r * phi.sin()])
                    })
                    .collect();
                let f = |y: &DVector<f64>| match function {
                    ProbeFunction::Linear => slope.dot(y),
                    ProbeFunction::Constant => 2.5,
                };
                let cloud = NeighborCloud::new(
                    base.clone(),
                    samples.clone(),
                    f(&base),
                    samples.iter().map(f).collect(),
                    Some(vec![density; m]),
                )?;
                let est = estimate_gradient(&cloud, &kernel)?;
                errors.push((est.direction - &truth).norm());
            }
            rows.push(ProbeRow { t, m, median: quantile(&mut errors, 0.5), q90: quantile(&mut errors, 0.9) });
        }
    }
    Ok(rows)
}
