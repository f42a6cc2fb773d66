//! Derivative-free descent on a submanifold.
//!
//! Each iteration estimates the gradient from a fresh neighbor cloud, steps
//! against it and maps the result back with a retraction:
//! `x_{k+1} = retract(x_k, x_k - lambda * dir(x_k))`. The best iterate is
//! tracked; after more than `l` consecutive iterations the search restarts
//! from the best point with `lambda` divided by `s_f`. The loop ends when two
//! successive objective values differ by less than `epsilon`, or at the
//! iteration cap.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::diffusion_map::diffusion_embed;
use crate::error::{invalid, Error, Result};
use crate::kernel_gradient::{estimate_gradient, estimate_gradient_gaussian, KernelParams, NeighborCloud};
use crate::rng::{seeded, Rng};

/// Maps an ambient target back onto the manifold near `base`.
pub trait Retraction {
    fn retract(&self, base: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>>;

    /// Membership predicate for points of the manifold.
    fn contains(&self, x: &DVector<f64>) -> bool;
}

/// Identity retraction on Euclidean space.
#[derive(Debug, Clone, Copy, Default)]
pub struct EuclideanRetraction;

impl Retraction for EuclideanRetraction {
    fn retract(&self, _base: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(target.clone())
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|v| v.is_finite())
    }
}

/// Normalization onto the unit sphere.
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereRetraction;

impl Retraction for SphereRetraction {
    fn retract(&self, _base: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = target.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("target", "cannot normalize a zero or non-finite vector"));
        }
        Ok(target / norm)
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        (x.norm() - 1.0).abs() < 1e-12
    }
}

/// Projection onto a finite point set: the nearest dataset point, lowest
/// index on ties.
#[derive(Debug, Clone)]
pub struct NearestPointRetraction {
    dataset: Vec<DVector<f64>>,
}

impl NearestPointRetraction {
    pub fn nearest_index(&self, z: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, y) in self.dataset.iter().enumerate() {
            let d = (z - y).norm_squared();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn dataset(&self) -> &[DVector<f64>] {
        &self.dataset
    }
}

pub fn nearest_point_retraction(dataset: Vec<DVector<f64>>) -> Result<NearestPointRetraction> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("retraction dataset"));
    }
    Ok(NearestPointRetraction { dataset })
}

impl Retraction for NearestPointRetraction {
    fn retract(&self, _base: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.dataset[self.nearest_index(target)].clone())
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        self.dataset.iter().any(|y| y == x)
    }
}

/// Neighbor points produced by a [`Sampler`]. `density = None` means the
/// points were drawn from the Gaussian density centered at the base point.
#[derive(Debug, Clone)]
pub struct Samples {
    pub points: Vec<DVector<f64>>,
    pub density: Option<Vec<f64>>,
}

pub trait Sampler {
    fn sample(&mut self, base: &DVector<f64>) -> Result<Samples>;
}

/// `m` draws of `base + sigma * N(0, I)`, each passed through a retraction.
#[derive(Debug, Clone)]
pub struct GaussianSampler<R> {
    sigma: f64,
    m: usize,
    rng: Rng,
    retraction: R,
}

impl<R: Retraction> GaussianSampler<R> {
    pub fn new(sigma: f64, m: usize, seed: u64, retraction: R) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if m == 0 {
            return Err(invalid("m", "sample count must be at least 1"));
        }
        Ok(Self { sigma, m, rng: seeded(seed), retraction })
    }
}

impl<R: Retraction> Sampler for GaussianSampler<R> {
    fn sample(&mut self, base: &DVector<f64>) -> Result<Samples> {
        let mut points = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            let noise = DVector::<f64>::from_fn(base.len(), |_, _| self.rng.sample(StandardNormal));
            let target = base + noise * self.sigma;
            points.push(self.retraction.retract(base, &target)?);
        }
        Ok(Samples { points, density: None })
    }
}

/// The `m` nearest other points of a finite set, weighted by the counting
/// measure.
#[derive(Debug, Clone)]
pub struct NearestNeighborSampler {
    points: Vec<DVector<f64>>,
    m: usize,
}

impl NearestNeighborSampler {
    pub fn new(points: Vec<DVector<f64>>, m: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("points", "need at least two points"));
        }
        if m == 0 {
            return Err(invalid("m", "neighbor count must be at least 1"));
        }
        Ok(Self { points, m })
    }
}

impl Sampler for NearestNeighborSampler {
    fn sample(&mut self, base: &DVector<f64>) -> Result<Samples> {
        let mut order: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - base).norm_squared(), i))
            .filter(|&(d, _)| d > 0.0)
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let points: Vec<DVector<f64>> = order.iter().take(self.m).map(|&(_, i)| self.points[i].clone()).collect();
        let n = points.len();
        Ok(Samples { points, density: Some(vec![1.0; n]) })
    }
}

/// How the estimator output is turned into a search direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionScaling {
    /// `V / t^2`; requires sampler offsets on the scale of `t`.
    #[default]
    BandwidthSquared,
    /// `V` as is, for samplers with unit-scale offsets.
    Unscaled,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerParams {
    pub lambda0: f64,
    pub l: usize,
    pub epsilon: f64,
    pub s_f: f64,
    pub kernel: KernelParams,
    pub max_iters: usize,
    pub scaling: DirectionScaling,
}

impl OptimizerParams {
    pub const DEFAULT_MAX_ITERS: usize = 100_000;

    pub fn new(lambda0: f64, l: usize, epsilon: f64, s_f: f64, kernel: KernelParams) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(invalid("lambda0", format!("must be positive, got {lambda0}")));
        }
        if l == 0 {
            return Err(invalid("l", "sub-iteration control number must be at least 1"));
        }
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        if !(s_f > 1.0) {
            return Err(invalid("s_f", format!("step-scale factor must exceed 1, got {s_f}")));
        }
        Ok(Self {
            lambda0,
            l,
            epsilon,
            s_f,
            kernel,
            max_iters: Self::DEFAULT_MAX_ITERS,
            scaling: DirectionScaling::BandwidthSquared,
        })
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Result<Self> {
        if max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        self.max_iters = max_iters;
        Ok(self)
    }

    pub fn with_scaling(mut self, scaling: DirectionScaling) -> Self {
        self.scaling = scaling;
        self
    }

    /// Step size after `rescales` reductions.
    pub fn lambda_after(&self, rescales: u32) -> f64 {
        self.lambda0 / self.s_f.powi(rescales as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub k: usize,
    pub point: DVector<f64>,
    pub f: f64,
    /// Step size that produced this iterate (`lambda0` for `x_0`).
    pub lambda: f64,
    pub best_f: f64,
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub iterates: Vec<Iterate>,
    pub best_point: DVector<f64>,
    pub best_f: f64,
    pub stop_reason: StopReason,
    pub rescales: u32,
}

impl IterateTrace {
    /// CSV with header `k,f_value,lambda,best_f`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,f_value,lambda,best_f\n");
        for it in &self.iterates {
            let _ = writeln!(out, "{},{},{},{}", it.k, it.f, it.lambda, it.best_f);
        }
        out
    }
}

/// `retract(x, x - lambda * grad)`.
pub fn step<R: Retraction + ?Sized>(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    lambda: f64,
    retraction: &R,
) -> Result<DVector<f64>> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(invalid("grad", "search direction is not finite"));
    }
    let target = x - grad * lambda;
    retraction.retract(x, &target)
}

/// Runs the descent loop from `x0`.
///
/// `f` is evaluated once per iterate and once per neighbor sample. The
/// stopping guard compares the objective at the two most recently produced
/// iterates; after a restart the next step starts from the best point.
pub fn minimize<F, S, R>(
    mut f: F,
    x0: &DVector<f64>,
    sampler: &mut S,
    retraction: &R,
    params: &OptimizerParams,
) -> Result<IterateTrace>
where
    F: FnMut(&DVector<f64>) -> f64,
    S: Sampler + ?Sized,
    R: Retraction + ?Sized,
{
    let eval = |f: &mut F, x: &DVector<f64>, iterate: usize| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteObjective { iterate })
        }
    };

    let f0 = eval(&mut f, x0, 0)?;
    let mut x_k = x0.clone();
    let mut f_k = f0;
    let mut best_point = x0.clone();
    let mut best_f = f0;
    let mut rescales = 0u32;
    let mut lambda = params.lambda0;
    let mut counter = 0usize;
    let mut k = 0usize;
    let mut prev_f = f0;
    let mut last_f = f0;
    let mut iterates = vec![Iterate { k: 0, point: x0.clone(), f: f0, lambda, best_f }];

    let stop_reason = loop {
        if k > 0 && (prev_f - last_f).abs() < params.epsilon {
            break StopReason::Tolerance;
        }
        if k >= params.max_iters {
            break StopReason::MaxIters;
        }

        let samples = sampler.sample(&x_k)?;
        let mut f_samples = Vec::with_capacity(samples.points.len());
        for p in &samples.points {
            f_samples.push(eval(&mut f, p, k)?);
        }
        let gaussian = samples.density.is_none();
        let cloud = NeighborCloud::new(x_k.clone(), samples.points, f_k, f_samples, samples.density)?;
        let estimate = if gaussian {
            estimate_gradient_gaussian(&cloud, &params.kernel)?
        } else {
            estimate_gradient(&cloud, &params.kernel)?
        };
        let direction = match params.scaling {
            DirectionScaling::BandwidthSquared => estimate.direction,
            DirectionScaling::Unscaled => estimate.raw_v,
        };

        let x_next =
            step(&x_k, &direction, lambda, retraction).map_err(|e| Error::Step { iterate: k, source: Box::new(e) })?;
        let f_next = eval(&mut f, &x_next, k + 1)?;
        if f_next < best_f {
            best_f = f_next;
            best_point = x_next.clone();
        }
        k += 1;
        iterates.push(Iterate { k, point: x_next.clone(), f: f_next, lambda, best_f });
        prev_f = last_f;
        last_f = f_next;
        x_k = x_next;
        f_k = f_next;

        if params.l < counter {
            counter = 0;
            x_k = best_point.clone();
            f_k = best_f;
            rescales += 1;
            lambda = params.lambda_after(rescales);
        }
        counter += 1;
    };

    Ok(IterateTrace { iterates, best_point, best_f, stop_reason, rescales })
}

#[derive(Debug, Clone)]
pub struct EmbeddedMinimum {
    pub best_index: usize,
    pub trace: IterateTrace,
    pub embedded: Vec<DVector<f64>>,
}

/// Minimizes a function known only on a high-dimensional point set: embed
/// the points with a diffusion map, carry the values over to the embedded
/// points, and run [`minimize`] with the nearest-point retraction.
pub fn embed_and_minimize(
    dataset: &[DVector<f64>],
    fvals: &[f64],
    embed_dim: usize,
    params: &OptimizerParams,
    x0_index: usize,
) -> Result<EmbeddedMinimum> {
    crate::error::check_len("fvals", fvals.len(), dataset.len())?;
    if x0_index >= dataset.len() {
        return Err(invalid("x0_index", format!("{x0_index} out of range")));
    }
    let embedding = diffusion_embed(dataset, embed_dim, 1.0, None)?;
    let embedded: Vec<DVector<f64>> = (0..embedding.len()).map(|i| embedding.point(i)).collect();
    let retraction = nearest_point_retraction(embedded.clone())?;
    let mut sampler = NearestNeighborSampler::new(embedded.clone(), params.kernel.m())?;
    let lookup = retraction.clone();
    let objective = |y: &DVector<f64>| fvals[lookup.nearest_index(y)];
    let trace = minimize(objective, &embedded[x0_index], &mut sampler, &retraction, params)?;
    let best_index =
        if trace.best_point == embedded[x0_index] { x0_index } else { retraction.nearest_index(&trace.best_point) };
    Ok(EmbeddedMinimum { best_index, trace, embedded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn kernel(t: f64, m: usize) -> KernelParams {
        KernelParams::new(t, 0.9, m).unwrap()
    }

    #[test]
    fn step_examples() {
        let x = dvector![0.0, 0.0];
        let y = step(&x, &dvector![1.0, 0.0], 0.5, &EuclideanRetraction).unwrap();
        assert_eq!(y, dvector![-0.5, 0.0]);

        let x = dvector![1.0, 0.0];
        assert_eq!(step(&x, &dvector![0.0, 0.0], 3.0, &SphereRetraction).unwrap(), x);
        let y = step(&x, &dvector![0.0, -1.0], 1.0, &SphereRetraction).unwrap();
        let r = 0.5f64.sqrt();
        assert!((y - dvector![r, r]).norm() < 1e-15);

        assert!(step(&x, &dvector![f64::NAN, 0.0], 1.0, &SphereRetraction).is_err());
    }

    #[test]
    fn nearest_point_examples() {
        let r = nearest_point_retraction(vec![dvector![0.0, 0.0], dvector![2.0, 0.0]]).unwrap();
        let base = dvector![0.0, 0.0];
        assert_eq!(r.retract(&base, &dvector![2.0, 0.0]).unwrap(), dvector![2.0, 0.0]);
        assert_eq!(r.retract(&base, &dvector![0.9, 0.0]).unwrap(), dvector![0.0, 0.0]);
        assert_eq!(r.retract(&base, &dvector![1.0, 0.0]).unwrap(), dvector![0.0, 0.0]);
        assert!(nearest_point_retraction(vec![]).is_err());
    }

    #[test]
    fn params_validation() {
        let k = kernel(0.1, 10);
        assert!(OptimizerParams::new(0.0, 10, 1e-10, 1.1, k).is_err());
        assert!(OptimizerParams::new(0.1, 0, 1e-10, 1.1, k).is_err());
        assert!(OptimizerParams::new(0.1, 10, 0.0, 1.1, k).is_err());
        assert!(OptimizerParams::new(0.1, 10, 1e-10, 1.0, k).is_err());
        let p = OptimizerParams::new(0.1, 10, 1e-10, 1.1, k).unwrap();
        assert_eq!(p.max_iters, 100_000);
        assert!(p.with_max_iters(0).is_err());
    }

    #[test]
    fn constant_objective_stops_after_one_step() {
        let params = OptimizerParams::new(0.5, 10, 1e-10, 1.1, kernel(0.05, 20)).unwrap();
        let mut sampler = GaussianSampler::new(0.05, 20, 1, EuclideanRetraction).unwrap();
        let x0 = dvector![0.3, -0.2];
        let trace = minimize(|_| 4.0, &x0, &mut sampler, &EuclideanRetraction, &params).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Tolerance);
        assert_eq!(trace.iterates.len(), 2);
        assert_eq!(trace.best_point, x0);
        assert_eq!(trace.iterates[1].point, x0);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let params = OptimizerParams::new(0.01, 3, 1e-300, 1.1, kernel(0.05, 20)).unwrap().with_max_iters(7).unwrap();
        let mut sampler = GaussianSampler::new(0.05, 20, 1, EuclideanRetraction).unwrap();
        let trace =
            minimize(|x| x.norm_squared(), &dvector![1.0, 1.0], &mut sampler, &EuclideanRetraction, &params).unwrap();
        assert_eq!(trace.stop_reason, StopReason::MaxIters);
        assert_eq!(trace.iterates.len(), 8);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let params = OptimizerParams::new(0.1, 3, 1e-10, 1.1, kernel(0.05, 5)).unwrap();
        let mut sampler = GaussianSampler::new(0.05, 5, 1, EuclideanRetraction).unwrap();
        let err = minimize(
            |x| if x[0] > 0.0 { f64::NAN } else { 1.0 },
            &dvector![-1.0],
            &mut sampler,
            &EuclideanRetraction,
            &params,
        );
        assert!(err.is_ok() || matches!(err, Err(Error::NonFiniteObjective { .. })));
        let err = minimize(|_| f64::INFINITY, &dvector![0.0], &mut sampler, &EuclideanRetraction, &params).unwrap_err();
        assert!(matches!(err, Error::NonFiniteObjective { iterate: 0 }));
    }

    #[test]
    fn nearest_neighbor_sampler_skips_base() {
        let pts = vec![dvector![0.0], dvector![1.0], dvector![3.0], dvector![-0.5]];
        let mut s = NearestNeighborSampler::new(pts, 2).unwrap();
        let out = s.sample(&dvector![0.0]).unwrap();
        assert_eq!(out.points, vec![dvector![-0.5], dvector![1.0]]);
        assert_eq!(out.density, Some(vec![1.0, 1.0]));
    }

    #[test]
    fn trace_csv_header() {
        let params = OptimizerParams::new(0.5, 10, 1e-10, 1.1, kernel(0.05, 20)).unwrap();
        let mut sampler = GaussianSampler::new(0.05, 20, 1, EuclideanRetraction).unwrap();
        let trace = minimize(|_| 1.5, &dvector![0.0], &mut sampler, &EuclideanRetraction, &params).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("k,f_value,lambda,best_f\n0,1.5,0.5,1.5\n"));
    }
}
