//! Diffusion-map embedding with a symmetric Gaussian kernel.
//!
//! `W_ij = exp(-|x_i - x_j|^2 / 2 eps^2)`, `P = D^-1 W` with `D` the row sums,
//! and the embedding `psi(x_i) = (lambda_1^t phi_1(i), ..., lambda_m^t phi_m(i))`
//! from the nontrivial right eigenvectors of `P`. The eigenproblem is solved
//! on the symmetric conjugate `D^1/2 P D^-1/2 = D^-1/2 W D^-1/2`.
//!
//! Right eigenvectors are scaled so that `sum_i pi_i phi(i)^2 = 1` with the
//! stationary distribution `pi = d / sum(d)`; with this scaling Euclidean
//! distance in the full embedding equals diffusion distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    bandwidth: f64,
}

impl KernelMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

/// Row-stochastic transition matrix together with the kernel degrees it was
/// normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMatrix {
    transition: DMatrix<f64>,
    degrees: DVector<f64>,
}

impl MarkovMatrix {
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    /// Stationary distribution `d / sum(d)`.
    pub fn stationary(&self) -> DVector<f64> {
        &self.degrees / self.degrees.sum()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Embedding {
    /// One row per input point.
    #[serde(skip)]
    pub coordinates: DMatrix<f64>,
    /// Retained eigenvalues, descending, trivial eigenvalue excluded.
    pub eigenvalues: Vec<f64>,
    /// The discarded leading eigenvalue (1 up to rounding).
    pub trivial_eigenvalue: f64,
    pub diffusion_time: f64,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.coordinates.ncols()
    }

    pub fn len(&self) -> usize {
        self.coordinates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.nrows() == 0
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.coordinates.row(i).transpose()
    }
}

fn check_points(points: &[DVector<f64>], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(invalid("points", format!("need at least {min} points, got {}", points.len())));
    }
    let n = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::LengthMismatch { what: "point dimension", got: p.len(), expected: n });
    }
    Ok(())
}

pub fn pairwise_kernel(points: &[DVector<f64>], epsilon: f64) -> Result<KernelMatrix> {
    check_points(points, 2)?;
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let k = points.len();
    let two_eps2 = 2.0 * epsilon * epsilon;
    let mut entries = DMatrix::from_element(k, k, 1.0);
    for i in 0..k {
        for j in (i + 1)..k {
            let w = (-(&points[i] - &points[j]).norm_squared() / two_eps2).exp();
            entries[(i, j)] = w;
            entries[(j, i)] = w;
        }
    }
    Ok(KernelMatrix { entries, bandwidth: epsilon })
}

pub fn markov_normalize(kernel: &KernelMatrix) -> Result<MarkovMatrix> {
    let w = kernel.entries();
    let degrees = DVector::from_iterator(w.nrows(), w.row_iter().map(|r| r.sum()));
    if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::DegenerateBandwidth(format!(
            "kernel row {i} sums to zero (bandwidth {:e})",
            kernel.bandwidth()
        )));
    }
    let mut transition = w.clone();
    for (i, mut row) in transition.row_iter_mut().enumerate() {
        row /= degrees[i];
    }
    Ok(MarkovMatrix { transition, degrees })
}

/// Top `m` nontrivial diffusion coordinates at diffusion time `t`.
///
/// Eigenvector signs are fixed so that each column's largest-magnitude entry
/// (first such index on ties) is positive.
pub fn spectral_embed(markov: &MarkovMatrix, m: usize, t: f64) -> Result<Embedding> {
    let k = markov.transition().nrows();
    if m == 0 || m + 1 > k {
        return Err(invalid("m", format!("embedding dimension must lie in 1..={}, got {m}", k.saturating_sub(1))));
    }
    if !(t > 0.0) {
        return Err(invalid("t", format!("diffusion time must be positive, got {t}")));
    }
    let d = markov.degrees();
    let sqrt_d = d.map(f64::sqrt);
    let p = markov.transition();
    let mut sym = DMatrix::from_fn(k, k, |i, j| sqrt_d[i] * p[(i, j)] / sqrt_d[j]);
    let sym_t = sym.transpose();
    sym = (sym + sym_t) * 0.5;

    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000).ok_or_else(|| {
        Error::Eigensolver(format!(
            "symmetric eigensolver did not converge on a {k}x{k} matrix (degrees in [{:e}, {:e}])",
            d.min(),
            d.max()
        ))
    })?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let total = d.sum();
    let mut coordinates = DMatrix::zeros(k, m);
    let mut eigenvalues = Vec::with_capacity(m);
    for (col, &idx) in order.iter().skip(1).take(m).enumerate() {
        let lambda = eig.eigenvalues[idx].clamp(0.0, 1.0);
        let mut phi = DVector::from_fn(k, |i, _| eig.eigenvectors[(i, idx)] * (total / d[i]).sqrt());
        let pivot = phi.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > phi[best].abs() { i } else { best });
        if phi[pivot] < 0.0 {
            phi.neg_mut();
        }
        let scale = lambda.powf(t);
        coordinates.set_column(col, &(phi * scale));
        eigenvalues.push(lambda);
    }
    Ok(Embedding { coordinates, eigenvalues, trivial_eigenvalue: eig.eigenvalues[order[0]], diffusion_time: t })
}

/// Square root of the median nonzero squared pairwise distance.
pub fn auto_bandwidth(points: &[DVector<f64>]) -> Result<f64> {
    check_points(points, 2)?;
    let mut d2: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let v = (&points[i] - &points[j]).norm_squared();
            if v > 0.0 {
                d2.push(v);
            }
        }
    }
    if d2.is_empty() {
        return Err(invalid("points", "all points are identical"));
    }
    d2.sort_by(|a, b| a.total_cmp(b));
    let n = d2.len();
    let median = if n % 2 == 1 { d2[n / 2] } else { 0.5 * (d2[n / 2 - 1] + d2[n / 2]) };
    Ok(median.sqrt())
}

/// Kernel, normalization and embedding in one call. `bandwidth = None`
/// uses [`auto_bandwidth`].
pub fn diffusion_embed(points: &[DVector<f64>], m: usize, t: f64, bandwidth: Option<f64>) -> Result<Embedding> {
    let eps = match bandwidth {
        Some(e) => e,
        None => auto_bandwidth(points)?,
    };
    let kernel = pairwise_kernel(points, eps)?;
    let markov = markov_normalize(&kernel)?;
    spectral_embed(&markov, m, t)
}
