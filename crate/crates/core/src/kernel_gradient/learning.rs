//! Learning-gradient baseline.
//!
//! The gradient field is represented in the span of kernel sections,
//! `F(x) = sum_k C_k K_t(x, x_k)`, and the coefficients minimize
//!
//! ```text
//! sum_{i,j} w_ij (f_j - f_i - F(x_i) . (x_j - x_i))^2 + lambda |F|_K^2
//! ```
//!
//! with `w_ij = K_t(x_i, x_j)` and `lambda = t^(d+3)`. All differences
//! `x_j - x_i` live in the affine span of the samples, so the problem is
//! solved in coordinates of that span and mapped back to the ambient space.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, invalid, Error, Result};

/// Fitted gradient field.
#[derive(Debug, Clone)]
pub struct LearningGradient {
    centers: Vec<DVector<f64>>,
    coeffs: Vec<DVector<f64>>,
    at_samples: Vec<DVector<f64>>,
    t: f64,
    lambda: f64,
}

impl LearningGradient {
    /// Field value `sum_k C_k K_t(x, x_k)` at an arbitrary point.
    pub fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        let two_t2 = 2.0 * self.t * self.t;
        let mut out = DVector::zeros(x.len());
        for (c, xk) in self.coeffs.iter().zip(&self.centers) {
            let w = (-(x - xk).norm_squared() / two_t2).exp();
            out.axpy(w, c, 1.0);
        }
        out
    }

    /// Field values at the fitted samples, taken from the solve directly.
    pub fn at_samples(&self) -> &[DVector<f64>] {
        &self.at_samples
    }

    pub fn coefficients(&self) -> &[DVector<f64>] {
        &self.coeffs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Orthonormal basis (columns) of the span of `x_i - mean`.
fn difference_span(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples[0].len();
    let mean = samples.iter().fold(DVector::zeros(n), |acc, x| acc + x) / samples.len() as f64;
    let mut scatter = DMatrix::zeros(n, n);
    for x in samples {
        let d = x - &mean;
        scatter.ger(1.0, &d, &d, 1.0);
    }
    let eig = SymmetricEigen::new(scatter);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| top > 0.0 && eig.eigenvalues[i] > 1e-12 * top).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

pub fn learning_gradient_fit(samples: &[DVector<f64>], fvals: &[f64], t: f64, d: usize) -> Result<LearningGradient> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    check_len("fvals", fvals.len(), samples.len())?;
    if !(t > 0.0) {
        return Err(invalid("t", format!("bandwidth must be positive, got {t}")));
    }
    let n = samples[0].len();
    for s in samples {
        check_len("sample dimension", s.len(), n)?;
    }
    let m = samples.len();
    let lambda = t.powi(d as i32 + 3);
    let basis = difference_span(samples);
    let r = basis.ncols();

    let zero_field = || LearningGradient {
        centers: samples.to_vec(),
        coeffs: vec![DVector::zeros(n); m],
        at_samples: vec![DVector::zeros(n); m],
        t,
        lambda,
    };
    if r == 0 {
        return Ok(zero_field());
    }

    let coords: Vec<DVector<f64>> = samples.iter().map(|x| basis.tr_mul(x)).collect();
    let two_t2 = 2.0 * t * t;
    let kernel = DMatrix::from_fn(m, m, |i, j| (-(&coords[i] - &coords[j]).norm_squared() / two_t2).exp());

    // per-sample second-moment matrices S_i and right-hand sides b_i
    let mut s_blocks = vec![DMatrix::<f64>::zeros(r, r); m];
    let mut b = vec![DVector::<f64>::zeros(r); m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let w = kernel[(i, j)];
            let dij = &coords[j] - &coords[i];
            s_blocks[i].ger(w, &dij, &dij, 1.0);
            b[i].axpy(w * (fvals[j] - fvals[i]), &dij, 1.0);
        }
    }

    // K^{1/2}; the Gaussian kernel matrix is PSD, rounding negatives are clipped
    let eig = SymmetricEigen::new(kernel);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();

    // system (R S R + lambda I) y = R b with G = R y, in block index a*r + p
    let dim = m * r;
    let mut system = DMatrix::zeros(dim, dim);
    for p in 0..r {
        for q in 0..r {
            let scaled = DMatrix::from_fn(m, m, |a, i| root[(a, i)] * s_blocks[i][(p, q)]);
            let block = &scaled * &root;
            for a in 0..m {
                for c in 0..m {
                    system[(a * r + p, c * r + q)] = block[(a, c)];
                }
            }
        }
    }
    for k in 0..dim {
        system[(k, k)] += lambda;
    }
    let b_flat = DVector::from_fn(dim, |k, _| b[k / r][k % r]);
    let root_b = apply_block(&root, &b_flat, r);

    let chol = Cholesky::new(system).ok_or_else(|| {
        Error::Conditioning(format!("Cholesky failed for {dim}x{dim} normal system with lambda = {lambda:e}"))
    })?;
    let y = chol.solve(&root_b);
    let g_flat = apply_block(&root, &y, r);

    let mut coeffs = Vec::with_capacity(m);
    let mut at_samples = Vec::with_capacity(m);
    for i in 0..m {
        let gi = g_flat.rows(i * r, r).into_owned();
        let ci = (&b[i] - &s_blocks[i] * &gi) / lambda;
        coeffs.push(&basis * ci);
        at_samples.push(&basis * gi);
    }
    Ok(LearningGradient { centers: samples.to_vec(), coeffs, at_samples, t, lambda })
}

/// `(R kron I_r) v` for a block vector `v` with blocks of length `r`.
fn apply_block(root: &DMatrix<f64>, v: &DVector<f64>, r: usize) -> DVector<f64> {
    let m = root.nrows();
    let v_mat = DMatrix::from_fn(m, r, |i, p| v[i * r + p]);
    let out = root * v_mat;
    DVector::from_fn(m * r, |k, _| out[(k / r, k % r)])
}
