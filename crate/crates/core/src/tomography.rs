//! Reconstruction from projections taken at unknown angles.
//!
//! All geometry is in pixel units. Pixel `(r, c)` of an `n x n` image has
//! its center at `x = c - (n-1)/2`, `y = (n-1)/2 - r` (y up). The projection
//! at angle `theta` integrates along `tau` the samples at
//! `(s cos - tau sin, s sin + tau cos)`, so detector `s` measures
//! `x cos + y sin`.
//!
//! Pipeline: L1-normalize the rows, turn each row's first moment into
//! `|theta_i - theta~|` through the cosine relation, sort by that value,
//! split the sorted rows into windows, fix the signs near `theta~` from
//! gradients of the moment on a 2-D diffusion embedding, and carry them
//! window to window by nearest embedded neighbor.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::diffusion_map::{auto_bandwidth, diffusion_embed};
use crate::error::{check_len, invalid, Error, Result};
use crate::kernel_gradient::gradient_direction_unnormalized;
use crate::rng::{derive_seed, seeded};

/// Square non-negative image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    n: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(n: usize, pixels: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(invalid("n", "image must be at least 2x2"));
        }
        check_len("pixels", pixels.len(), n * n)?;
        if let Some(i) = pixels.iter().position(|&p| !(p >= 0.0)) {
            return Err(invalid("pixels", format!("pixel {i} is negative or NaN")));
        }
        Ok(Self { n, pixels })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, pixels: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Physical half-width in pixel units.
    pub fn extent(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.n + c]
    }

    pub fn mass(&self) -> f64 {
        self.pixels.iter().sum()
    }

    fn center(&self) -> f64 {
        (self.n as f64 - 1.0) / 2.0
    }

    /// Center of mass `(x, y)` in pixel units.
    pub fn centroid(&self) -> (f64, f64) {
        let c = self.center();
        let (mut sx, mut sy) = (0.0, 0.0);
        for r in 0..self.n {
            for col in 0..self.n {
                let p = self.get(r, col);
                sx += p * (col as f64 - c);
                sy += p * (c - r as f64);
            }
        }
        let m = self.mass();
        (sx / m, sy / m)
    }

    /// Bilinear sample at `(x, y)`; zero outside the pixel grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let c = self.center();
        let fc = x + c;
        let fr = c - y;
        let c0 = fc.floor();
        let r0 = fr.floor();
        let (dc, dr) = (fc - c0, fr - r0);
        let (c0, r0) = (c0 as i64, r0 as i64);
        let n = self.n as i64;
        let at = |r: i64, col: i64| {
            if r < 0 || col < 0 || r >= n || col >= n {
                0.0
            } else {
                self.pixels[(r * n + col) as usize]
            }
        };
        (1.0 - dr) * ((1.0 - dc) * at(r0, c0) + dc * at(r0, c0 + 1))
            + dr * ((1.0 - dc) * at(r0 + 1, c0) + dc * at(r0 + 1, c0 + 1))
    }

    /// Counterclockwise rotation about the grid center, optionally preceded
    /// by the mirror `x -> -x`.
    pub fn rotated(&self, angle: f64, mirror: bool) -> Image {
        let c = self.center();
        let (sn, cs) = angle.sin_cos();
        let mut out = vec![0.0; self.n * self.n];
        for r in 0..self.n {
            for col in 0..self.n {
                let x = col as f64 - c;
                let y = c - r as f64;
                // Inverse map: rotate back by -angle, then undo the mirror.
                let mut xs = cs * x + sn * y;
                let ys = -sn * x + cs * y;
                if mirror {
                    xs = -xs;
                }
                out[r * self.n + col] = self.sample(xs, ys);
            }
        }
        Image { n: self.n, pixels: out }
    }

    /// Averages 2x2 blocks.
    pub fn downsample2(&self) -> Result<Image> {
        if !self.n.is_multiple_of(2) {
            return Err(invalid("n", "downsampling needs an even grid"));
        }
        let m = self.n / 2;
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] = 0.25
                    * (self.get(2 * r, 2 * c)
                        + self.get(2 * r + 1, 2 * c)
                        + self.get(2 * r, 2 * c + 1)
                        + self.get(2 * r + 1, 2 * c + 1));
            }
        }
        Ok(Image { n: m, pixels: out })
    }
}

/// (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees) on
/// `[-1, 1]^2`, y up.
const MODIFIED_SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

const PHANTOM_SUPERSAMPLE: usize = 4;

/// Modified Shepp–Logan phantom on an `n x n` grid, 4x4 supersampled.
pub fn shepp_logan(n: usize) -> Result<Image> {
    if n < 32 {
        return Err(invalid("n", format!("phantom grid must be at least 32, got {n}")));
    }
    let ss = PHANTOM_SUPERSAMPLE;
    let half = n as f64 / 2.0;
    let ellipses: Vec<_> = MODIFIED_SHEPP_LOGAN
        .iter()
        .map(|e| {
            let (sn, cs) = e[5].to_radians().sin_cos();
            (e[0], e[1], e[2], e[3], e[4], sn, cs)
        })
        .collect();
    let mut pixels = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..ss {
                for j in 0..ss {
                    let px = c as f64 + (j as f64 + 0.5) / ss as f64;
                    let py = r as f64 + (i as f64 + 0.5) / ss as f64;
                    let x = (px - half) / half;
                    let y = (half - py) / half;
                    for &(a0, a, b, x0, y0, sn, cs) in &ellipses {
                        let dx = x - x0;
                        let dy = y - y0;
                        let u = cs * dx + sn * dy;
                        let v = -sn * dx + cs * dy;
                        if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                            acc += a0;
                        }
                    }
                }
            }
            pixels[r * n + c] = (acc / (ss * ss) as f64).max(0.0);
        }
    }
    Image::new(n, pixels)
}

/// Detector grid, one row per projection, and the hidden angles kept for
/// scoring only.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectionSet {
    pub detectors: Vec<f64>,
    pub h: f64,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
    #[serde(rename = "truth", skip_serializing_if = "Option::is_none")]
    pub true_angles: Option<Vec<f64>>,
}

impl ProjectionSet {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn l(&self) -> usize {
        self.detectors.len()
    }
}

/// Detector coordinates `(j - (l-1)/2) h`.
pub fn detector_grid(l: usize, h: f64) -> Vec<f64> {
    let c = (l as f64 - 1.0) / 2.0;
    (0..l).map(|j| (j as f64 - c) * h).collect()
}

/// Ray-marched projections with bilinear sampling and a one-pixel step.
/// The `l` detectors span the image width, so `h = n / l`.
pub fn radon_forward(image: &Image, angles: &[f64], l: usize) -> Result<ProjectionSet> {
    if l < 8 {
        return Err(invalid("l", format!("need at least 8 detectors, got {l}")));
    }
    let n = image.n();
    let h = n as f64 / l as f64;
    let detectors = detector_grid(l, h);
    let taus = detector_grid(n, 1.0);
    let rows = angles
        .iter()
        .map(|&theta| {
            let (sn, cs) = theta.sin_cos();
            detectors
                .iter()
                .map(|&s| taus.iter().map(|&tau| image.sample(s * cs - tau * sn, s * sn + tau * cs)).sum())
                .collect()
        })
        .collect();
    Ok(ProjectionSet { detectors, h, rows, true_angles: Some(angles.to_vec()) })
}

/// Adds `eta * N(0, 1)` to every sample.
pub fn add_white_noise(p: &ProjectionSet, eta: f64, seed: u64) -> Result<ProjectionSet> {
    if !(eta >= 0.0) {
        return Err(invalid("eta", format!("must be non-negative, got {eta}")));
    }
    let mut out = p.clone();
    if eta == 0.0 {
        return Ok(out);
    }
    let mut rng = seeded(seed);
    for row in &mut out.rows {
        for v in row.iter_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += eta * w;
        }
    }
    Ok(out)
}

/// Divides each row by `h * sum |row|`.
pub fn l1_normalize(p: &ProjectionSet) -> Result<ProjectionSet> {
    let mut out = p.clone();
    for (i, row) in out.rows.iter_mut().enumerate() {
        let mass = p.h * row.iter().map(|v| v.abs()).sum::<f64>();
        if !(mass > 0.0) {
            return Err(Error::ZeroMassRow(i));
        }
        row.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(out)
}

/// First moment `h * sum row[i] x_i`. For an L1-normalized row this is the
/// projected centroid `<V, (cos theta, sin theta)>`.
pub fn projection_moment(row: &[f64], detectors: &[f64], h: f64) -> Result<f64> {
    check_len("row", row.len(), detectors.len())?;
    Ok(h * row.iter().zip(detectors).map(|(r, x)| r * x).sum::<f64>())
}

fn moments(p: &ProjectionSet) -> Result<Vec<f64>> {
    p.rows.iter().map(|r| projection_moment(r, &p.detectors, p.h)).collect()
}

/// `max_i |moment_i|` and the first row attaining it.
pub fn estimate_vnorm(p: &ProjectionSet) -> Result<(f64, usize)> {
    if p.rows.is_empty() {
        return Err(Error::EmptyInput("projection rows"));
    }
    let mut best = (0.0, 0);
    for (i, m) in moments(p)?.into_iter().enumerate() {
        if m.abs() > best.0 {
            best = (m.abs(), i);
        }
    }
    let scale = p.detectors.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if best.0 <= 1e-12 * scale.max(1.0) {
        return Err(Error::DegenerateCentroid);
    }
    Ok(best)
}

/// `arccos(moment / vnorm)` per row, with the ratio clamped to `[-1, 1]`.
/// Returns the angles and the number of clamped rows.
pub fn recover_unsigned_angles(p: &ProjectionSet, vnorm: f64) -> Result<(Vec<f64>, usize)> {
    if !(vnorm > 0.0) {
        return Err(invalid("vnorm", format!("must be positive, got {vnorm}")));
    }
    let mut clamped = 0;
    let angles = moments(p)?
        .into_iter()
        .map(|m| {
            let ratio = m / vnorm;
            if ratio.abs() > 1.0 {
                clamped += 1;
            }
            ratio.clamp(-1.0, 1.0).acos()
        })
        .collect();
    Ok((angles, clamped))
}

pub const DEFAULT_REFLECT_TOL: f64 = 1e-3 * PI;

/// Maps `u -> pi - u` when the values touch `pi` but not `0`.
pub fn maybe_reflect(unsigned: &[f64], tol: f64) -> (Vec<f64>, bool) {
    let min = unsigned.iter().copied().fold(f64::INFINITY, f64::min);
    let max = unsigned.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min <= tol {
        (unsigned.to_vec(), false)
    } else if max >= PI - tol {
        (unsigned.iter().map(|u| PI - u).collect(), true)
    } else {
        log::warn!("angle range [{min:.4}, {max:.4}] touches neither 0 nor pi; not reflecting");
        (unsigned.to_vec(), false)
    }
}

/// Windows over sorted positions: `u` full windows of size `s`, then the
/// remainder as its own window when `r > 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub s: usize,
    pub u: usize,
    pub r: usize,
    pub windows: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn partition(k: usize, s: usize) -> Result<PartitionPlan> {
    if s == 0 || s > k {
        return Err(invalid("s", format!("window size must be in 1..={k}, got {s}")));
    }
    let (u, r) = (k / s, k % s);
    let mut windows: Vec<Vec<usize>> = (0..u).map(|i| (i * s..(i + 1) * s).collect()).collect();
    if r > 0 {
        windows.push((u * s..k).collect());
    }
    Ok(PartitionPlan { s, u, r, windows })
}

/// Row indices sorted ascending by value, ties by index.
pub fn sort_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Kernel bandwidth of the window embeddings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Multiple of the median pairwise distance within the embedded set.
    MedianTimes(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::MedianTimes(DEFAULT_BANDWIDTH_FACTOR)
    }
}

impl Bandwidth {
    fn resolve(&self, points: &[DVector<f64>]) -> Result<f64> {
        match *self {
            Bandwidth::Fixed(e) => Ok(e),
            Bandwidth::MedianTimes(c) => {
                if !(c > 0.0) {
                    return Err(invalid("bandwidth", format!("factor must be positive, got {c}")));
                }
                Ok(c * auto_bandwidth(points)?)
            }
        }
    }
}

pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignParams {
    /// Nearest embedded neighbors per gradient estimate.
    pub m: usize,
    pub bandwidth: Bandwidth,
}

impl Default for SignParams {
    fn default() -> Self {
        Self { m: 10, bandwidth: Bandwidth::default() }
    }
}

fn embed_rows(rows: &[Vec<f64>], idx: &[usize], bandwidth: Bandwidth) -> Result<Vec<Vector2<f64>>> {
    let pts: Vec<DVector<f64>> = idx.iter().map(|&i| DVector::from_column_slice(&rows[i])).collect();
    let dim = 2.min(pts.len().saturating_sub(1)).max(1);
    let eps = bandwidth.resolve(&pts)?;
    let emb = diffusion_embed(&pts, dim, 1.0, Some(eps))?;
    Ok((0..emb.len())
        .map(|i| {
            let p = emb.point(i);
            Vector2::new(p[0], if p.len() > 1 { p[1] } else { 0.0 })
        })
        .collect())
}

fn nearest(points: &[Vector2<f64>], from: usize, candidates: &[usize], m: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> =
        candidates.iter().filter(|&&j| j != from).map(|&j| ((points[j] - points[from]).norm_squared(), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(m).map(|(_, j)| j).collect()
}

/// Signs for the rows in the first two windows, `None` elsewhere.
///
/// Embeds the first three windows, estimates the moment's gradient at each
/// embedded point from its `m` nearest neighbors, and signs each point by
/// the inner product of its gradient with the gradient at sorted position 1.
/// With fewer than three windows, all available windows are embedded.
pub fn bootstrap_signs(
    p: &ProjectionSet,
    order: &[usize],
    plan: &PartitionPlan,
    params: &SignParams,
) -> Result<Vec<Option<i8>>> {
    check_len("order", order.len(), p.k())?;
    if params.m == 0 {
        return Err(invalid("m", "neighbor count must be at least 1"));
    }
    let embed_windows = plan.len().min(3);
    let positions: Vec<usize> = plan.windows[..embed_windows].concat();
    let mut signs = vec![None; p.k()];
    if positions.len() < 2 {
        for &pos in &positions {
            signs[order[pos]] = Some(1);
        }
        return Ok(signs);
    }
    let idx: Vec<usize> = positions.iter().map(|&pos| order[pos]).collect();
    let points = embed_rows(&p.rows, &idx, params.bandwidth)?;
    let g: Vec<f64> = moments(p)?;
    let local: Vec<usize> = (0..idx.len()).collect();
    let grad_at = |a: usize| {
        let nb = nearest(&points, a, &local, params.m);
        let nb_pts: Vec<Vector2<f64>> = nb.iter().map(|&j| points[j]).collect();
        let nb_g: Vec<f64> = nb.iter().map(|&j| g[idx[j]]).collect();
        gradient_direction_unnormalized(&points[a], &nb_pts, g[idx[a]], &nb_g)
    };

    // Sorted position 1 is local index 1 since windows are contiguous.
    let anchor = 1;
    let anchor_grad = grad_at(anchor)?;
    if anchor_grad.norm() == 0.0 {
        return Err(Error::ZeroAnchorGradient);
    }
    let signed_windows = plan.len().min(2);
    let n_signed: usize = plan.windows[..signed_windows].iter().map(Vec::len).sum();
    for a in 0..n_signed {
        let s = if a == anchor || grad_at(a)?.dot(&anchor_grad) >= 0.0 { 1 } else { -1 };
        signs[idx[a]] = Some(s);
    }
    Ok(signs)
}

/// Carries signs forward: for each later window, embed it together with the
/// previous one and copy the sign of the nearest signed point. Points of the
/// new window are visited in sorted order and count as signed once visited.
/// Returns the signs and the number of embeddings computed.
pub fn propagate_signs(
    p: &ProjectionSet,
    order: &[usize],
    plan: &PartitionPlan,
    partial: &[Option<i8>],
    bandwidth: Bandwidth,
) -> Result<(Vec<i8>, usize)> {
    check_len("partial", partial.len(), p.k())?;
    let mut signs = partial.to_vec();
    let mut embeddings = 0;
    for j in 1..plan.len().saturating_sub(1) {
        let prev: Vec<usize> = plan.windows[j].iter().map(|&pos| order[pos]).collect();
        let next: Vec<usize> = plan.windows[j + 1].iter().map(|&pos| order[pos]).collect();
        let idx: Vec<usize> = prev.iter().chain(&next).copied().collect();
        let mut signed: Vec<usize> = (0..idx.len()).filter(|&a| signs[idx[a]].is_some()).collect();
        if !signed.iter().any(|&a| a < prev.len()) {
            return Err(Error::PropagationBreak(j));
        }
        let points = embed_rows(&p.rows, &idx, bandwidth)?;
        embeddings += 1;
        for b in prev.len()..idx.len() {
            if signs[idx[b]].is_some() {
                continue;
            }
            let src = nearest(&points, b, &signed, 1)[0];
            signs[idx[b]] = signs[idx[src]];
            signed.push(b);
        }
    }
    let out = signs.iter().enumerate().map(|(i, s)| s.ok_or(Error::PropagationBreak(i))).collect::<Result<Vec<i8>>>();
    Ok((out?, embeddings))
}

/// 2-D coordinates of one embedding computed during sign recovery.
#[derive(Debug, Clone)]
pub struct WindowEmbedding {
    /// Index of the first window in the embedded union.
    pub window: usize,
    pub rows: Vec<usize>,
    pub coords: Vec<Vector2<f64>>,
}

/// Recomputes the embeddings used by [`bootstrap_signs`] and
/// [`propagate_signs`] for plotting.
pub fn window_embeddings(
    p: &ProjectionSet,
    order: &[usize],
    plan: &PartitionPlan,
    bandwidth: Bandwidth,
) -> Result<Vec<WindowEmbedding>> {
    check_len("order", order.len(), p.k())?;
    let mut out = Vec::new();
    let first: Vec<usize> = plan.windows[..plan.len().min(3)].concat().iter().map(|&pos| order[pos]).collect();
    if first.len() >= 2 {
        out.push(WindowEmbedding { window: 0, coords: embed_rows(&p.rows, &first, bandwidth)?, rows: first });
    }
    for j in 1..plan.len().saturating_sub(1) {
        let rows: Vec<usize> = plan.windows[j].iter().chain(&plan.windows[j + 1]).map(|&pos| order[pos]).collect();
        out.push(WindowEmbedding { window: j, coords: embed_rows(&p.rows, &rows, bandwidth)?, rows });
    }
    Ok(out)
}

/// `sign_i * u_i`, where `u_i` is `pi - unsigned_i` when reflected.
pub fn assemble_angles(unsigned: &[f64], signs: &[i8], reflected: bool) -> Result<Vec<f64>> {
    check_len("signs", signs.len(), unsigned.len())?;
    Ok(unsigned
        .iter()
        .zip(signs)
        .map(|(&u, &s)| {
            let u = if reflected { PI - u } else { u };
            s as f64 * u
        })
        .collect())
}

/// Spatial ramp kernel for unit sample spacing.
fn ramp_kernel(len: usize) -> Vec<f64> {
    let mut k = vec![0.0; len];
    let half = len / 2;
    for (i, v) in k.iter_mut().enumerate() {
        let d = if i <= half { i as i64 } else { i as i64 - len as i64 };
        *v = if d == 0 {
            0.25
        } else if d % 2 != 0 {
            -1.0 / (PI * PI * (d * d) as f64)
        } else {
            0.0
        };
    }
    k
}

/// Back-projection weight of each angle: half the gaps to its neighbors on
/// the circle of angles mod pi.
fn angle_weights(angles: &[f64]) -> Vec<f64> {
    let k = angles.len();
    if k == 1 {
        return vec![PI];
    }
    let folded: Vec<f64> = angles.iter().map(|a| a.rem_euclid(PI)).collect();
    let order = sort_order(&folded);
    let mut w = vec![0.0; k];
    for (pos, &i) in order.iter().enumerate() {
        let prev = folded[order[(pos + k - 1) % k]];
        let next = folded[order[(pos + 1) % k]];
        let gap_prev = (folded[i] - prev).rem_euclid(PI);
        let gap_next = (next - folded[i]).rem_euclid(PI);
        w[i] = 0.5 * (gap_prev + gap_next);
    }
    w
}

const UPSAMPLE: usize = 4;

/// Ramp-filtered back projection onto an `n x n` grid; negatives clamped.
pub fn fbp_reconstruct(p: &ProjectionSet, angles: &[f64], n: usize) -> Result<Image> {
    check_len("angles", angles.len(), p.k())?;
    if n < 2 {
        return Err(invalid("n", "output grid must be at least 2"));
    }
    if p.rows.is_empty() {
        return Ok(Image::zeros(n));
    }
    let mut distinct: Vec<f64> = angles.iter().map(|a| a.rem_euclid(PI)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 8 {
        log::warn!("only {} distinct projection angles", distinct.len());
    }

    let l = p.l();
    let len = (2 * l).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv_up = planner.plan_fft_inverse(UPSAMPLE * len);
    let mut kernel: Vec<Complex<f64>> = ramp_kernel(len).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut kernel);

    let weights = angle_weights(angles);
    let c = (n as f64 - 1.0) / 2.0;
    let det0 = p.detectors[0];
    let mut out = vec![0.0; n * n];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for ((row, &theta), &w) in p.rows.iter().zip(angles).zip(&weights) {
        buf.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(row) {
            b.re = v;
        }
        fwd.process(&mut buf);
        buf.iter_mut().zip(&kernel).for_each(|(b, k)| *b *= k);
        // Band-limited 4x upsampling of the filtered row before linear
        // interpolation.
        let up = UPSAMPLE * len;
        let mut wide = vec![Complex::new(0.0, 0.0); up];
        let half = len / 2;
        for (i, &v) in buf.iter().enumerate() {
            let j = if i < half {
                i
            } else if i == half {
                continue;
            } else {
                up - (len - i)
            };
            wide[j] = v;
        }
        wide[half] = buf[half] * 0.5;
        wide[up - half] = buf[half] * 0.5;
        inv_up.process(&mut wide);
        let scale = w / (len as f64 * p.h);
        let q: Vec<f64> = wide[..UPSAMPLE * (l - 1) + 1].iter().map(|v| v.re * scale).collect();
        let lq = q.len();
        let (sn, cs) = theta.sin_cos();
        for r in 0..n {
            let y = c - r as f64;
            for col in 0..n {
                let x = col as f64 - c;
                let t = ((x * cs + y * sn) - det0) / p.h * UPSAMPLE as f64;
                let j = t.floor();
                if j < 0.0 || j as usize + 1 >= lq {
                    continue;
                }
                let ju = j as usize;
                let f = t - j;
                out[r * n + col] += (1.0 - f) * q[ju] + f * q[ju + 1];
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Image::new(n, out)
}

/// Relative L2 distance `|recon - truth| / |truth|`. With `register`, the
/// minimum over rotations of `recon` on a 1 degree grid, with and without
/// mirroring, refined on a 0.1 degree grid around the best.
pub fn l2_error(recon: &Image, truth: &Image, register: bool) -> Result<f64> {
    check_len("recon grid", recon.n(), truth.n())?;
    let norm = truth.pixels().iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(invalid("truth", "reference image is zero"));
    }
    let dist =
        |img: &Image| img.pixels().iter().zip(truth.pixels()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
    if !register {
        return Ok(dist(recon));
    }
    let mut best = (f64::INFINITY, 0.0, false);
    for mirror in [false, true] {
        for deg in 0..360 {
            let a = (deg as f64).to_radians();
            let e = dist(&recon.rotated(a, mirror));
            if e < best.0 {
                best = (e, deg as f64, mirror);
            }
        }
    }
    let (_, center, mirror) = best;
    for step in -9..=9 {
        let deg = center + 0.1 * step as f64;
        let e = dist(&recon.rotated(deg.to_radians(), mirror));
        if e < best.0 {
            best.0 = e;
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone)]
pub struct AngleEstimate {
    /// `|theta_i - theta~|` per row, after the reflection map when applied.
    pub unsigned: Vec<f64>,
    pub sign: Vec<i8>,
    pub reflected: bool,
    pub clamped: usize,
    pub vnorm: f64,
    pub vnorm_row: usize,
    /// Row indices sorted by `unsigned`.
    pub order: Vec<usize>,
    pub embeddings: usize,
}

impl AngleEstimate {
    pub fn signed(&self) -> Vec<f64> {
        self.unsigned.iter().zip(&self.sign).map(|(u, &s)| s as f64 * u).collect()
    }
}

/// Angle recovery from unlabeled rows: normalization, moments, unsigned
/// angles, reflection, partition, bootstrap and propagation.
pub fn estimate_angles(p: &ProjectionSet, s: usize, params: &SignParams, reflect_tol: f64) -> Result<AngleEstimate> {
    let normalized = l1_normalize(p)?;
    let (vnorm, vnorm_row) = estimate_vnorm(&normalized)?;
    let (raw, clamped) = recover_unsigned_angles(&normalized, vnorm)?;
    let (unsigned, reflected) = maybe_reflect(&raw, reflect_tol);
    let order = sort_order(&unsigned);
    let plan = partition(p.k(), s)?;
    let partial = bootstrap_signs(&normalized, &order, &plan, params)?;
    let (sign, propagated) = propagate_signs(&normalized, &order, &plan, &partial, params.bandwidth)?;
    Ok(AngleEstimate { unsigned, sign, reflected, clamped, vnorm, vnorm_row, order, embeddings: propagated + 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TomoConfig {
    pub n: usize,
    pub k: usize,
    /// Detector count; `None` uses `n`.
    pub l: Option<usize>,
    pub s: usize,
    pub m: usize,
    pub eta: f64,
    pub reflect_tol: f64,
    pub bandwidth: Bandwidth,
}

impl Default for TomoConfig {
    fn default() -> Self {
        Self {
            n: 128,
            k: 2000,
            l: None,
            s: 20,
            m: 10,
            eta: 0.0,
            reflect_tol: DEFAULT_REFLECT_TOL,
            bandwidth: Bandwidth::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TomoReport {
    pub phantom: Image,
    pub sinogram: ProjectionSet,
    pub estimate: AngleEstimate,
    pub recon_signed: Image,
    pub recon_unsigned: Image,
    pub recon_exact: Image,
    pub error_signed: f64,
    pub error_unsigned: f64,
    pub error_exact: f64,
    /// Fraction of rows whose sign matches the hidden one, up to a global
    /// flip.
    pub sign_match: f64,
}

/// Sign of `theta_i - theta~` wrapped to `(-pi, pi]`, with `theta~` the
/// centroid angle (shifted by `pi` for the reflected case).
pub fn hidden_signs(image: &Image, angles: &[f64], reflected: bool) -> Vec<i8> {
    let (cx, cy) = image.centroid();
    let mut ref_angle = cy.atan2(cx);
    if reflected {
        ref_angle += PI;
    }
    angles
        .iter()
        .map(|&a| {
            let d = (a - ref_angle + PI).rem_euclid(2.0 * PI) - PI;
            if d >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Agreement between two sign vectors up to a global flip.
pub fn sign_agreement(a: &[i8], b: &[i8]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let frac = same / a.len().max(1) as f64;
    frac.max(1.0 - frac)
}

/// Phantom, hidden uniform angles on `[0, pi]`, noise, angle recovery and
/// three reconstructions (recovered signs, no signs, exact angles).
pub fn run_pipeline(config: &TomoConfig, seed: u64) -> Result<TomoReport> {
    let phantom = shepp_logan(config.n)?;
    let mut rng = seeded(derive_seed(seed, 0));
    let angles: Vec<f64> = (0..config.k).map(|_| rng.random::<f64>() * PI).collect();
    let l = config.l.unwrap_or(config.n);
    let clean = radon_forward(&phantom, &angles, l)?;
    let sinogram = add_white_noise(&clean, config.eta, derive_seed(seed, 1))?;
    let params = SignParams { m: config.m, bandwidth: config.bandwidth };
    let blind = ProjectionSet { true_angles: None, ..sinogram.clone() };
    let estimate = estimate_angles(&blind, config.s, &params, config.reflect_tol)?;

    let recon_signed = fbp_reconstruct(&sinogram, &estimate.signed(), config.n)?;
    let recon_unsigned = fbp_reconstruct(&sinogram, &estimate.unsigned, config.n)?;
    let recon_exact = fbp_reconstruct(&sinogram, &angles, config.n)?;
    let truth = hidden_signs(&phantom, &angles, estimate.reflected);
    Ok(TomoReport {
        error_signed: l2_error(&recon_signed, &phantom, true)?,
        error_unsigned: l2_error(&recon_unsigned, &phantom, true)?,
        error_exact: l2_error(&recon_exact, &phantom, false)?,
        sign_match: sign_agreement(&estimate.sign, &truth),
        phantom,
        sinogram,
        estimate,
        recon_signed,
        recon_unsigned,
        recon_exact,
    })
}
