//! Kernel estimators of the Riemannian gradient.
//!
//! Given a base point `x`, neighbor samples `x_i` drawn from a density `q` on
//! the manifold, and function values, the estimator forms the weights
//! `c_i = exp(-|x_i - x|^2 / 2t^2) / q(x_i)`, the normalizer `d_t = sum c_i`
//! and the weighted difference vector
//!
//! ```text
//! V = (1 / d_t) * sum_i (x_i - x) (f(x_i) - f(x)) c_i
//! ```
//!
//! `V / t^2` converges to the tangential projection of the ambient gradient as
//! `t -> 0` with enough samples. Only function values are needed, so the
//! estimator also applies to non-smooth objectives.

mod benchmark;
mod learning;

pub use benchmark::{
    benchmark_curve_point, benchmark_curve_tangent, convergence_probe, mse_benchmark, MseRecord, ProbeFunction,
    ProbeRow,
};
pub use learning::{learning_gradient_fit, LearningGradient};

use nalgebra::{DVector, Vector2};

use crate::error::{check_len, invalid, Error, Result};

/// Bandwidth `t`, ball exponent `delta` and sample count `m`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelParams {
    t: f64,
    delta: f64,
    m: usize,
    restrict_to_ball: bool,
}

impl KernelParams {
    pub fn new(t: f64, delta: f64, m: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("t", format!("bandwidth must be positive, got {t}")));
        }
        if !(delta > 0.5 && delta < 1.0) {
            return Err(invalid("delta", format!("exponent must lie in (1/2, 1), got {delta}")));
        }
        if m == 0 {
            return Err(invalid("m", "sample count must be at least 1"));
        }
        Ok(Self { t, delta, m, restrict_to_ball: false })
    }

    /// Drop samples outside `U(x, t^delta)` before estimating. Off by default:
    /// the Gaussian weight already suppresses far samples.
    pub fn with_ball_restriction(mut self, on: bool) -> Self {
        self.restrict_to_ball = on;
        self
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn restrict_to_ball(&self) -> bool {
        self.restrict_to_ball
    }

    /// Radius `t^delta` of the sampling neighborhood.
    pub fn ball_radius(&self) -> f64 {
        self.t.powf(self.delta)
    }
}

/// Base point, neighbor samples, their function values and (optionally) the
/// sampling density at each neighbor.
#[derive(Debug, Clone)]
pub struct NeighborCloud {
    base: DVector<f64>,
    samples: Vec<DVector<f64>>,
    f_base: f64,
    f_samples: Vec<f64>,
    density: Option<Vec<f64>>,
}

impl NeighborCloud {
    pub fn new(
        base: DVector<f64>,
        samples: Vec<DVector<f64>>,
        f_base: f64,
        f_samples: Vec<f64>,
        density: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_len("f_samples", f_samples.len(), samples.len())?;
        for s in &samples {
            check_len("sample dimension", s.len(), base.len())?;
        }
        if let Some(q) = &density {
            check_len("density", q.len(), samples.len())?;
            if let Some((index, &value)) = q.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::NonPositiveDensity { index, value });
            }
        }
        Ok(Self { base, samples, f_base, f_samples, density })
    }

    /// Cloud sampled with the counting measure (every `q(x_i) = 1`).
    pub fn counting(base: DVector<f64>, samples: Vec<DVector<f64>>, f_base: f64, f_samples: Vec<f64>) -> Result<Self> {
        let q = vec![1.0; samples.len()];
        Self::new(base, samples, f_base, f_samples, Some(q))
    }

    pub fn base(&self) -> &DVector<f64> {
        &self.base
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn f_base(&self) -> f64 {
        self.f_base
    }

    pub fn f_samples(&self) -> &[f64] {
        &self.f_samples
    }

    pub fn density(&self) -> Option<&[f64]> {
        self.density.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Output of the estimators. `direction` is `raw_v / t^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub direction: DVector<f64>,
    pub raw_v: DVector<f64>,
    /// `ln(sum c_i)`; absent for the Gaussian-sampling estimator, which never
    /// forms the weights.
    pub log_dt_hat: Option<f64>,
}

impl GradientEstimate {
    /// The normalizer `sum c_i`. May underflow to zero for tiny bandwidths
    /// even though the estimate itself stays well defined.
    pub fn dt_hat(&self) -> Option<f64> {
        self.log_dt_hat.map(f64::exp)
    }
}

/// `exp(-|y - x|^2 / 2t^2)`.
pub fn gaussian_weight(x: &DVector<f64>, y: &DVector<f64>, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("bandwidth must be positive, got {t}")));
    }
    check_len("y", y.len(), x.len())?;
    Ok((-(y - x).norm_squared() / (2.0 * t * t)).exp())
}

/// Monte-Carlo estimate of `d_t(x)`: the mean of `w(x, x_i) / q(x_i)`.
pub fn estimate_density(cloud: &NeighborCloud, params: &KernelParams) -> Result<f64> {
    let q = cloud.density().ok_or_else(|| invalid("cloud", "density weights are required"))?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput("neighbor cloud"));
    }
    let t = params.t();
    let sum: f64 = cloud
        .samples()
        .iter()
        .zip(q)
        .map(|(xi, qi)| (-(xi - cloud.base()).norm_squared() / (2.0 * t * t)).exp() / qi)
        .sum();
    Ok(sum / cloud.len() as f64)
}

/// Weighted estimator with explicit sampling density.
///
/// Weights are evaluated in log space and shifted by the largest exponent;
/// the shift cancels in the normalized sum, so bandwidths far below the
/// sample spread do not underflow.
pub fn estimate_gradient(cloud: &NeighborCloud, params: &KernelParams) -> Result<GradientEstimate> {
    let q = cloud.density().ok_or_else(|| invalid("cloud", "density weights are required"))?;
    let t = params.t();
    let radius = params.ball_radius();
    let x = cloud.base();

    let mut exponents = Vec::with_capacity(cloud.len());
    let mut outside = 0usize;
    for (i, (xi, qi)) in cloud.samples().iter().zip(q).enumerate() {
        let d2 = (xi - x).norm_squared();
        if d2.sqrt() > radius {
            outside += 1;
            if params.restrict_to_ball() {
                continue;
            }
        }
        exponents.push((i, -d2 / (2.0 * t * t) - qi.ln()));
    }
    if outside > 0 && !params.restrict_to_ball() {
        log::debug!("{outside} of {} samples lie outside U(x, t^delta) (radius {radius:e})", cloud.len());
    }

    let max_exp = exponents.iter().map(|&(_, e)| e).fold(f64::NEG_INFINITY, f64::max);
    if !max_exp.is_finite() {
        return Err(Error::DegenerateBandwidth(format!(
            "no usable sample weights ({} samples, {} inside the ball)",
            cloud.len(),
            cloud.len() - outside
        )));
    }

    let mut acc = DVector::zeros(x.len());
    let mut weight_sum = 0.0;
    for &(i, e) in &exponents {
        let c = (e - max_exp).exp();
        weight_sum += c;
        let df = cloud.f_samples()[i] - cloud.f_base();
        acc.axpy(df * c, &(&cloud.samples()[i] - x), 1.0);
    }
    let raw_v = acc / weight_sum;
    Ok(GradientEstimate { direction: &raw_v / (t * t), raw_v, log_dt_hat: Some(max_exp + weight_sum.ln()) })
}

/// Estimator for samples drawn from the Gaussian density centered at the
/// base point: the weights collapse to a constant and `V` becomes the plain
/// mean of `(x_i - x)(f(x_i) - f(x))`.
pub fn estimate_gradient_gaussian(cloud: &NeighborCloud, params: &KernelParams) -> Result<GradientEstimate> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("neighbor cloud"));
    }
    let x = cloud.base();
    let mut acc = DVector::zeros(x.len());
    for (xi, fi) in cloud.samples().iter().zip(cloud.f_samples()) {
        acc.axpy(fi - cloud.f_base(), &(xi - x), 1.0);
    }
    let raw_v = acc / cloud.len() as f64;
    let t = params.t();
    Ok(GradientEstimate { direction: &raw_v / (t * t), raw_v, log_dt_hat: None })
}

/// Unit-bandwidth, unnormalized direction used to orient embedded points.
/// Only the direction matters to the caller, so neither `d_t` nor `t^2` is
/// divided out.
pub fn gradient_direction_unnormalized(
    base: &Vector2<f64>,
    neighbors: &[Vector2<f64>],
    g_base: f64,
    g_neighbors: &[f64],
) -> Result<Vector2<f64>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyInput("neighbors"));
    }
    check_len("g_neighbors", g_neighbors.len(), neighbors.len())?;
    Ok(neighbors.iter().zip(g_neighbors).fold(Vector2::zeros(), |acc, (xi, gi)| {
        let d = xi - base;
        acc + d * ((gi - g_base) * (-d.norm_squared() / 2.0).exp())
    }))
}
