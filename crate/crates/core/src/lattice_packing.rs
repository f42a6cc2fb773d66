//! Lattice sphere packing over SL(n).
//!
//! The packing radius of a unimodular lattice is half its shortest nonzero
//! vector, so maximizing the density `V_n (g/2)^n` over det-1 bases is the
//! same as maximizing `g`. [`pack`] runs the descent loop on `-g`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::kernel_gradient::KernelParams;
use crate::manifold_opt::{minimize, DirectionScaling, IterateTrace, OptimizerParams, Retraction, Sampler, Samples};
use crate::rng::{derive_seed, seeded, Rng};

const DET_TOL: f64 = 1e-10;
const SINGULAR_DET: f64 = 1e-300;
const TIE_TOL: f64 = 1e-9;
const MAX_REDRAWS: usize = 100;

/// A lattice basis with unit determinant, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeBasis {
    columns: DMatrix<f64>,
}

impl LatticeBasis {
    /// Retracts `m` onto SL(n).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        sl_retract(&m)
    }

    pub fn identity(n: usize) -> Self {
        Self { columns: DMatrix::identity(n, n) }
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_column_slice(self.columns.as_slice())
    }

    fn from_flat(v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = (v.len() as f64).sqrt().round() as usize;
        if n * n != v.len() {
            return Err(invalid("basis", format!("{} entries is not a square", v.len())));
        }
        Ok(DMatrix::from_column_slice(n, n, v.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestVectorResult {
    pub length: f64,
    pub coeffs: Vec<i64>,
}

/// `-z` when the leading nonzero entry of `z` is negative.
fn canonical_sign(z: &[i64]) -> Vec<i64> {
    match z.iter().find(|&&v| v != 0) {
        Some(&v) if v < 0 => z.iter().map(|x| -x).collect(),
        _ => z.to_vec(),
    }
}

/// Picks the lexicographically smallest canonical vector among those within
/// tolerance of the minimum.
fn pick(candidates: Vec<(f64, Vec<i64>)>, basis: &DMatrix<f64>) -> ShortestVectorResult {
    let best = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let coeffs = candidates
        .into_iter()
        .filter(|c| c.0 <= best * (1.0 + TIE_TOL))
        .map(|c| canonical_sign(&c.1))
        .min()
        .expect("at least one candidate");
    let length = vector_norm(basis, &coeffs);
    ShortestVectorResult { length, coeffs }
}

fn vector_norm(basis: &DMatrix<f64>, z: &[i64]) -> f64 {
    let zf = DVector::from_iterator(z.len(), z.iter().map(|&v| v as f64));
    (basis * zf).norm()
}

fn check_rank(b: &DMatrix<f64>) -> Result<()> {
    if !b.is_square() || b.nrows() == 0 {
        return Err(invalid("basis", "must be a non-empty square matrix"));
    }
    let det = b.determinant();
    if !(det.abs() > SINGULAR_DET) || !det.is_finite() {
        return Err(Error::Singular { det });
    }
    Ok(())
}

/// LLL-reduces the columns (size reduction plus Lovász swaps, factor
/// 3/4); returns the reduced basis and the unimodular transform `U` with
/// `reduced = b * U`.
fn reduce(b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<i64>) {
    let n = b.ncols();
    let mut red = b.clone();
    let mut u = DMatrix::<i64>::identity(n, n);
    let mut k = 1;
    let mut guard = 0usize;
    while k < n && guard < 10_000 {
        guard += 1;
        for j in (0..k).rev() {
            let (gs, _) = gram_schmidt(&red);
            let bj = gs.column(j);
            let q = (red.column(k).dot(&bj) / bj.norm_squared()).round();
            if q != 0.0 {
                let col_j = red.column(j).into_owned();
                red.column_mut(k).axpy(-q, &col_j, 1.0);
                let uj = u.column(j).into_owned();
                let qi = q as i64;
                for r in 0..n {
                    u[(r, k)] -= qi * uj[r];
                }
            }
        }
        let (gs, _) = gram_schmidt(&red);
        let prev = gs.column(k - 1);
        let mu = red.column(k).dot(&prev) / prev.norm_squared();
        if gs.column(k).norm_squared() >= (0.75 - mu * mu) * prev.norm_squared() {
            k += 1;
        } else {
            red.swap_columns(k, k - 1);
            u.swap_columns(k, k - 1);
            k = (k - 1).max(1);
        }
    }
    (red, u)
}

/// Gram–Schmidt vectors (unnormalized) and the triangular `R` with
/// `b = Q R`, `R[(i, i)] = |b*_i|`.
fn gram_schmidt(b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = b.ncols();
    let mut gs = b.clone();
    let mut r = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let bj = gs.column(j).into_owned();
            let nj = bj.norm();
            let coef = b.column(i).dot(&bj) / nj;
            r[(j, i)] = coef;
            gs.column_mut(i).axpy(-coef / nj, &bj, 1.0);
        }
        r[(i, i)] = gs.column(i).norm();
    }
    (gs, r)
}

/// Exact shortest nonzero lattice vector by depth-first enumeration over the
/// Gram–Schmidt triangularization of the LLL-reduced basis.
pub fn shortest_vector(basis: &LatticeBasis) -> Result<ShortestVectorResult> {
    shortest_vector_of(basis.columns())
}

/// [`shortest_vector`] for any full-rank basis matrix, unit determinant or
/// not.
pub fn shortest_vector_of(b: &DMatrix<f64>) -> Result<ShortestVectorResult> {
    check_rank(b)?;
    let n = b.ncols();
    let (red, u) = reduce(b);
    let (_, r) = gram_schmidt(&red);

    let min_col = (0..n).map(|j| red.column(j).norm_squared()).fold(f64::INFINITY, f64::min);
    let mut state =
        Enum { r: &r, z: vec![0i64; n], radius2: min_col * (1.0 + 4.0 * TIE_TOL), best2: min_col, found: Vec::new() };
    state.search(n, 0.0);

    let candidates = state
        .found
        .into_iter()
        .map(|(len2, zr)| {
            let z: Vec<i64> = (0..n).map(|i| (0..n).map(|j| u[(i, j)] * zr[j]).sum()).collect();
            (len2.sqrt(), z)
        })
        .collect();
    Ok(pick(candidates, b))
}

struct Enum<'a> {
    r: &'a DMatrix<f64>,
    z: Vec<i64>,
    radius2: f64,
    best2: f64,
    found: Vec<(f64, Vec<i64>)>,
}

impl Enum<'_> {
    /// Fixes coordinates `level-1, ..., 0` given the ones above; `partial`
    /// is the squared length contributed by levels `>= level`.
    fn search(&mut self, level: usize, partial: f64) {
        if level == 0 {
            if self.z.iter().all(|&v| v == 0) {
                return;
            }
            if partial < self.best2 {
                self.best2 = partial;
                self.radius2 = partial * (1.0 + 4.0 * TIE_TOL);
                self.found.retain(|(l, _)| *l <= partial * (1.0 + 4.0 * TIE_TOL));
            }
            self.found.push((partial, self.z.clone()));
            return;
        }
        let i = level - 1;
        let n = self.z.len();
        let rii = self.r[(i, i)];
        let shift: f64 = (i + 1..n).map(|j| self.r[(i, j)] * self.z[j] as f64).sum();
        let center = -shift / rii;
        let slack = self.radius2 - partial;
        if slack < 0.0 {
            return;
        }
        let half = slack.sqrt() / rii;
        let lo = (center - half).ceil() as i64;
        let hi = (center + half).floor() as i64;
        // Zig-zag from the center so the radius shrinks early.
        let mut order: Vec<i64> = (lo..=hi).collect();
        order.sort_by(|a, b| ((*a as f64) - center).abs().total_cmp(&((*b as f64) - center).abs()));
        for zi in order {
            let y = rii * (zi as f64 - center);
            let next = partial + y * y;
            if next > self.radius2 {
                continue;
            }
            self.z[i] = zi;
            self.search(i, next);
        }
        self.z[i] = 0;
    }
}

/// Coefficient bound guaranteed to contain every shortest vector:
/// `|z_i| <= |row_i(B^-1)| * min_j |b_j|`.
pub fn certified_bound(basis: &LatticeBasis) -> Result<i64> {
    certified_bound_of(basis.columns())
}

fn certified_bound_of(b: &DMatrix<f64>) -> Result<i64> {
    check_rank(b)?;
    let inv = b.clone().try_inverse().ok_or(Error::Singular { det: b.determinant() })?;
    let radius = (0..b.ncols()).map(|j| b.column(j).norm()).fold(f64::INFINITY, f64::min);
    let worst = (0..inv.nrows()).map(|i| inv.row(i).norm() * radius).fold(0.0, f64::max);
    Ok((worst * (1.0 + 1e-12)).floor() as i64)
}

/// Exhaustive scan over `|z|_inf <= bound`. Fails when `bound` is smaller
/// than [`certified_bound`].
pub fn shortest_vector_bruteforce(basis: &LatticeBasis, bound: i64) -> Result<ShortestVectorResult> {
    if bound < 1 {
        return Err(invalid("bound", "must be at least 1"));
    }
    let b = basis.columns();
    let certified = certified_bound_of(b)?;
    if bound < certified {
        return Err(Error::CertificationFailure { bound, certified });
    }
    let n = b.ncols();
    let mut z = vec![-bound; n];
    let mut best = f64::INFINITY;
    let mut found: Vec<(f64, Vec<i64>)> = Vec::new();
    loop {
        if z.iter().any(|&v| v != 0) {
            let len = vector_norm(b, &z);
            if len <= best * (1.0 + TIE_TOL) {
                best = best.min(len);
                found.push((len, z.clone()));
            }
        }
        let mut i = 0;
        while i < n && z[i] == bound {
            z[i] = -bound;
            i += 1;
        }
        if i == n {
            break;
        }
        z[i] += 1;
    }
    Ok(pick(found, b))
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let (mut v, start) = if n.is_multiple_of(2) { (1.0, 2) } else { (2.0, 3) };
    let mut k = start;
    while k <= n {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

pub fn density_from_length(n: usize, g: f64) -> f64 {
    unit_ball_volume(n) * (g / 2.0).powi(n as i32)
}

pub fn packing_density(basis: &LatticeBasis) -> Result<f64> {
    let g = shortest_vector(basis)?.length;
    Ok(density_from_length(basis.dim(), g))
}

/// Flips the first column by the sign of the determinant and divides by
/// `|det|^(1/n)`.
pub fn sl_retract(b: &DMatrix<f64>) -> Result<LatticeBasis> {
    if !b.is_square() || b.nrows() == 0 {
        return Err(invalid("basis", "must be a non-empty square matrix"));
    }
    let det = b.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET {
        return Err(Error::Singular { det });
    }
    if (det - 1.0).abs() <= 1e-13 {
        return Ok(LatticeBasis { columns: b.clone() });
    }
    let n = b.nrows();
    let mut out = b.clone();
    if det < 0.0 {
        out.column_mut(0).neg_mut();
    }
    out /= det.abs().powf(1.0 / n as f64);
    Ok(LatticeBasis { columns: out })
}

/// Entrywise Gaussian perturbations of `basis`, each retracted onto SL(n).
pub fn sample_neighbors(basis: &LatticeBasis, sigma: f64, m: usize, seed: u64) -> Result<Vec<LatticeBasis>> {
    let mut rng = seeded(seed);
    draw_neighbors(basis.columns(), sigma, m, &mut rng)
}

fn draw_neighbors(b: &DMatrix<f64>, sigma: f64, m: usize, rng: &mut Rng) -> Result<Vec<LatticeBasis>> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let n = b.nrows();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
            match sl_retract(&(b + g * sigma)) {
                Ok(x) => {
                    drawn = Some(x);
                    break;
                }
                Err(Error::Singular { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        out.push(drawn.ok_or(Error::Singular { det: 0.0 })?);
    }
    Ok(out)
}

/// [`sl_retract`] on flattened (column-major) matrices.
#[derive(Debug, Clone, Copy, Default)]
pub struct SlRetraction;

impl Retraction for SlRetraction {
    fn retract(&self, _base: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(sl_retract(&LatticeBasis::from_flat(target)?)?.to_flat())
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        LatticeBasis::from_flat(x).map(|m| (m.determinant() - 1.0).abs() < DET_TOL).unwrap_or(false)
    }
}

/// Gaussian sampler on SL(n) for flattened bases.
#[derive(Debug, Clone)]
pub struct SlSampler {
    sigma: f64,
    m: usize,
    rng: Rng,
}

impl SlSampler {
    pub fn new(sigma: f64, m: usize, seed: u64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if m == 0 {
            return Err(invalid("m", "sample count must be at least 1"));
        }
        Ok(Self { sigma, m, rng: seeded(seed) })
    }
}

impl Sampler for SlSampler {
    fn sample(&mut self, base: &DVector<f64>) -> Result<Samples> {
        let b = LatticeBasis::from_flat(base)?;
        let points = draw_neighbors(&b, self.sigma, self.m, &mut self.rng)?.iter().map(LatticeBasis::to_flat).collect();
        Ok(Samples { points, density: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PackConfig {
    pub lambda0: f64,
    pub l: usize,
    pub epsilon: f64,
    pub s_f: f64,
    pub m: usize,
    pub delta: f64,
    pub sigma: f64,
    /// Kernel bandwidth; the direction is `raw_v / t^2`.
    pub t: f64,
    pub max_iters: usize,
}

impl Default for PackConfig {
    fn default() -> Self {
        Self {
            lambda0: 0.3,
            l: 10,
            epsilon: 1e-10,
            s_f: 1.1,
            m: 20,
            delta: 0.99,
            sigma: 1e-2,
            t: 1e-2,
            max_iters: 2000,
        }
    }
}

impl PackConfig {
    pub fn optimizer_params(&self) -> Result<OptimizerParams> {
        let kernel = KernelParams::new(self.t, self.delta, self.m)?;
        Ok(OptimizerParams::new(self.lambda0, self.l, self.epsilon, self.s_f, kernel)?
            .with_max_iters(self.max_iters)?
            .with_scaling(DirectionScaling::BandwidthSquared))
    }
}

#[derive(Debug, Clone)]
pub struct PackResult {
    pub best_basis: LatticeBasis,
    pub best_density: f64,
    pub trace: IterateTrace,
    /// Largest `g` over every basis evaluated, samples included.
    pub max_g_seen: f64,
    pub evaluations: usize,
}

impl PackResult {
    /// CSV with header `iter,g,density,lambda`.
    pub fn trace_csv(&self) -> String {
        let n = self.best_basis.dim();
        let mut out = String::from("iter,g,density,lambda\n");
        for it in &self.trace.iterates {
            let g = -it.f;
            let _ = writeln!(out, "{},{},{},{}", it.k, g, density_from_length(n, g), it.lambda);
        }
        out
    }
}

/// Maximizes `g` over SL(n) from the identity basis.
pub fn pack(n: usize, params: &OptimizerParams, sigma: f64, seed: u64) -> Result<PackResult> {
    if n < 2 {
        return Err(invalid("n", format!("dimension must be at least 2, got {n}")));
    }
    let mut sampler = SlSampler::new(sigma, params.kernel.m(), derive_seed(seed, 0))?;
    let mut max_g = 0.0f64;
    let mut evaluations = 0usize;
    let objective = |x: &DVector<f64>| {
        let b = match LatticeBasis::from_flat(x) {
            Ok(b) => b,
            Err(_) => return f64::NAN,
        };
        match shortest_vector_of(&b) {
            Ok(sv) => {
                max_g = max_g.max(sv.length);
                evaluations += 1;
                -sv.length
            }
            Err(_) => f64::NAN,
        }
    };
    let x0 = LatticeBasis::identity(n).to_flat();
    let trace = minimize(objective, &x0, &mut sampler, &SlRetraction, params)?;
    let best_basis = LatticeBasis { columns: LatticeBasis::from_flat(&trace.best_point)? };
    let best_density = density_from_length(n, -trace.best_f);
    Ok(PackResult { best_basis, best_density, trace, max_g_seen: max_g, evaluations })
}

/// All lattice points `B z` with norm at most `radius`, in coefficient
/// order.
pub fn lattice_points(basis: &LatticeBasis, radius: f64) -> Result<Vec<DVector<f64>>> {
    if !(radius >= 0.0) {
        return Err(invalid("radius", "must be non-negative"));
    }
    let b = basis.columns();
    let inv = b.clone().try_inverse().ok_or(Error::Singular { det: b.determinant() })?;
    let n = b.ncols();
    let bounds: Vec<i64> = (0..n).map(|i| (inv.row(i).norm() * radius).floor() as i64).collect();
    let mut z: Vec<i64> = bounds.iter().map(|b| -b).collect();
    let mut out = Vec::new();
    loop {
        let zf = DVector::from_iterator(n, z.iter().map(|&v| v as f64));
        let p = b * zf;
        if p.norm() <= radius {
            out.push(p);
        }
        let mut i = 0;
        while i < n && z[i] == bounds[i] {
            z[i] = -bounds[i];
            i += 1;
        }
        if i == n {
            break;
        }
        z[i] += 1;
    }
    Ok(out)
}

/// Hexagonal basis with unit determinant.
pub fn hexagonal_basis() -> LatticeBasis {
    let s = (2.0 / 3f64.sqrt()).sqrt();
    LatticeBasis { columns: DMatrix::from_column_slice(2, 2, &[s, 0.0, s * 0.5, s * 3f64.sqrt() / 2.0]) }
}

/// Face-centered cubic basis with unit determinant.
pub fn fcc_basis() -> LatticeBasis {
    let s = 2f64.powf(-1.0 / 3.0);
    LatticeBasis { columns: DMatrix::from_column_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]) * s }
}
