use std::f64::consts::PI;

use dmgrad::rng::{derive_seed, seeded};
use dmgrad::tomography::*;
use proptest::prelude::*;
use rand::Rng;

/// Sum of isotropic Gaussians `(x, y, sigma, amplitude)` in pixel units.
fn blobs(n: usize, parts: &[(f64, f64, f64, f64)]) -> Image {
    let c = (n as f64 - 1.0) / 2.0;
    let mut px = vec![0.0; n * n];
    for r in 0..n {
        for col in 0..n {
            let (x, y) = (col as f64 - c, c - r as f64);
            px[r * n + col] = parts
                .iter()
                .map(|&(bx, by, s, a)| a * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * s * s)).exp())
                .sum();
        }
    }
    Image::new(n, px).unwrap()
}

fn asymmetric_object(n: usize) -> Image {
    blobs(n, &[(-20.0, 10.0, 8.0, 1.0), (15.0, 18.0, 5.0, 0.6), (5.0, -25.0, 10.0, 0.8)])
}

fn uniform_angles(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(derive_seed(seed, 0));
    (0..k).map(|_| rng.random::<f64>() * PI).collect()
}

fn l1(a: &Image, b: &Image) -> f64 {
    let d: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).sum();
    d / b.pixels().iter().map(|v| v.abs()).sum::<f64>()
}

fn signs_of(angles: &[f64], image: &Image, s: usize, params: &SignParams) -> (AngleEstimate, Vec<i8>) {
    let p = radon_forward(image, angles, image.n()).unwrap();
    let est = estimate_angles(&p, s, params, DEFAULT_REFLECT_TOL).unwrap();
    let truth = hidden_signs(image, angles, est.reflected);
    (est, truth)
}

#[test]
fn phantom_is_resolution_consistent() {
    let small = shepp_logan(64).unwrap();
    let big = shepp_logan(128).unwrap().downsample2().unwrap();
    assert!(l1(&big, &small) < 0.02, "{}", l1(&big, &small));
    for img in [&small, &shepp_logan(128).unwrap()] {
        let n = img.n();
        for (r, c) in [(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
            assert_eq!(img.get(r, c), 0.0);
        }
    }
    assert!(shepp_logan(16).is_err());
}

#[test]
fn radon_symmetries() {
    let disc = blobs(64, &[(0.0, 0.0, 9.0, 1.0)]);
    let p = radon_forward(&disc, &[0.0, PI / 2.0, PI, 1.5 * PI], 64).unwrap();
    for row in &p.rows[1..] {
        for (a, b) in row.iter().zip(&p.rows[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    let obj = asymmetric_object(64);
    for theta in [0.3, 1.1, 2.5] {
        let p = radon_forward(&obj, &[theta, theta + PI], 64).unwrap();
        let rev: Vec<f64> = p.rows[1].iter().rev().copied().collect();
        let scale = p.rows[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in p.rows[0].iter().zip(&rev) {
            assert!((a - b).abs() < 1e-3 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn blob_mass_lands_on_its_projection() {
    let (a, b) = (12.0, -7.0);
    let img = blobs(64, &[(a, b, 1.5, 1.0)]);
    for theta in [0.0, 0.4, 1.3, 2.2, 3.0] {
        let p = radon_forward(&img, &[theta], 64).unwrap();
        let row = &p.rows[0];
        let peak = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        let want = a * theta.cos() + b * theta.sin();
        assert!((p.detectors[peak] - want).abs() <= p.h, "theta {theta}");
    }
}

#[test]
fn point_mass_moments_and_angles() {
    let (a, b) = (15.0, 0.0);
    let img = blobs(64, &[(a, b, 1.0, 1.0)]);
    let angles: Vec<f64> = (0..180).map(|i| i as f64 * PI / 180.0).collect();
    let p = l1_normalize(&radon_forward(&img, &angles, 64).unwrap()).unwrap();
    for (row, &theta) in p.rows.iter().zip(&angles) {
        let m = projection_moment(row, &p.detectors, p.h).unwrap();
        assert!((m - (a * theta.cos() + b * theta.sin())).abs() < 2.0 * p.h);
    }
    let (vnorm, _) = estimate_vnorm(&p).unwrap();
    assert!((vnorm - a).abs() < 2.0 * p.h);
    let (u, _) = recover_unsigned_angles(&p, vnorm).unwrap();
    for (&got, &theta) in u.iter().zip(&angles) {
        // away from the poles, where arccos is well conditioned
        if theta > 0.2 && theta < PI - 0.2 {
            assert!((got - theta).abs() < 2.0 * p.h / a / theta.sin(), "{got} vs {theta}");
        }
    }
}

#[test]
fn centered_object_has_no_direction() {
    let disc = blobs(64, &[(0.0, 0.0, 9.0, 1.0)]);
    let p = l1_normalize(&radon_forward(&disc, &uniform_angles(20, 0), 64).unwrap()).unwrap();
    assert!(matches!(estimate_vnorm(&p), Err(dmgrad::Error::DegenerateCentroid)));
}

#[test]
fn noise_level_matches_eta() {
    let img = shepp_logan(64).unwrap();
    let clean = radon_forward(&img, &uniform_angles(300, 1), 256).unwrap();
    let noisy = add_white_noise(&clean, 0.05, 3).unwrap();
    let (mut sq, mut cnt) = (0.0, 0.0);
    for (a, b) in noisy.rows.iter().zip(&clean.rows) {
        for (x, y) in a.iter().zip(b) {
            sq += (x - y).powi(2);
            cnt += 1.0;
        }
    }
    let rms = (sq / cnt).sqrt();
    assert!((rms / 0.05 - 1.0).abs() < 0.1, "{rms}");
    assert_eq!(add_white_noise(&clean, 0.0, 3).unwrap().rows, clean.rows);
    assert!(add_white_noise(&clean, -1.0, 3).is_err());
}

fn rows_set(rows: Vec<Vec<f64>>, h: f64) -> ProjectionSet {
    ProjectionSet { detectors: detector_grid(rows[0].len(), h), h, rows, true_angles: None }
}

#[test]
fn normalization_examples() {
    let p = l1_normalize(&rows_set(vec![vec![1.0, 3.0, 0.0, 4.0]], 0.5)).unwrap();
    assert_eq!(p.rows[0], vec![0.25, 0.75, 0.0, 1.0]);
    let sum: f64 = p.h * p.rows[0].iter().sum::<f64>();
    assert!((sum - 1.0).abs() < 1e-15);
    let zero = rows_set(vec![vec![1.0; 4], vec![0.0; 4]], 1.0);
    assert!(matches!(l1_normalize(&zero), Err(dmgrad::Error::ZeroMassRow(1))));
}

#[test]
fn partition_covers_every_position() {
    for k in 1..=50 {
        for s in 1..=k {
            let plan = partition(k, s).unwrap();
            let flat: Vec<usize> = plan.windows.concat();
            assert_eq!(flat, (0..k).collect::<Vec<_>>());
            assert_eq!(plan.u, k / s);
            assert_eq!(plan.len(), k / s + (k % s > 0) as usize);
            assert!(plan.windows.iter().all(|w| w.len() <= s && !w.is_empty()));
        }
    }
}

#[test]
fn reflection_prefers_zero() {
    let (v, r) = maybe_reflect(&[0.2, 1.0, PI - 1e-5], DEFAULT_REFLECT_TOL);
    assert!(r);
    assert!((v[2] - 1e-5).abs() < 1e-12);
    let (v, r) = maybe_reflect(&[0.5, 1.0], DEFAULT_REFLECT_TOL);
    assert_eq!((v, r), (vec![0.5, 1.0], false));
}

#[test]
fn bootstrap_separates_small_offsets() {
    let img = asymmetric_object(128);
    let (cx, cy) = img.centroid();
    let base = cy.atan2(cx).rem_euclid(PI);
    let mut rng = seeded(5);
    let angles: Vec<f64> = (0..60)
        .map(|i| {
            let d = 0.004 + 0.1 * rng.random::<f64>();
            base + if i % 2 == 0 { d } else { -d }
        })
        .collect();
    let p = l1_normalize(&radon_forward(&img, &angles, 128).unwrap()).unwrap();
    let (vnorm, _) = estimate_vnorm(&p).unwrap();
    let (u, _) = recover_unsigned_angles(&p, vnorm).unwrap();
    let order = sort_order(&u);
    let plan = partition(60, 20).unwrap();
    let signs = bootstrap_signs(&p, &order, &plan, &SignParams::default()).unwrap();
    let rows: Vec<usize> = plan.windows[..2].concat().iter().map(|&pos| order[pos]).collect();
    assert!(plan.windows[2].iter().all(|&pos| signs[order[pos]].is_none()));
    let got: Vec<i8> = rows.iter().map(|&i| signs[i].unwrap()).collect();
    let want: Vec<i8> = rows.iter().map(|&i| if angles[i] >= base { 1 } else { -1 }).collect();
    assert!(sign_agreement(&got, &want) >= 0.95, "{}", sign_agreement(&got, &want));
}

#[test]
fn one_sided_angles_share_one_sign() {
    let img = asymmetric_object(128);
    let (cx, cy) = img.centroid();
    let base = cy.atan2(cx);
    let mut rng = seeded(6);
    let angles: Vec<f64> = (0..80).map(|_| base + 0.02 + 0.8 * rng.random::<f64>()).collect();
    let (est, truth) = signs_of(&angles, &img, 20, &SignParams::default());
    assert!(truth.iter().all(|&s| s == 1));
    assert!(sign_agreement(&est.sign, &truth) >= 0.95);
}

#[test]
fn single_window_returns_bootstrap() {
    let img = asymmetric_object(64);
    let angles = uniform_angles(20, 2);
    let p = l1_normalize(&radon_forward(&img, &angles, 64).unwrap()).unwrap();
    let (vnorm, _) = estimate_vnorm(&p).unwrap();
    let (u, _) = recover_unsigned_angles(&p, vnorm).unwrap();
    let order = sort_order(&u);
    let plan = partition(20, 20).unwrap();
    let partial = bootstrap_signs(&p, &order, &plan, &SignParams::default()).unwrap();
    assert!(partial.iter().all(Option::is_some));
    let (full, embeddings) = propagate_signs(&p, &order, &plan, &partial, Bandwidth::default()).unwrap();
    assert_eq!(embeddings, 0);
    assert_eq!(full, partial.iter().map(|s| s.unwrap()).collect::<Vec<_>>());
}

#[test]
fn propagation_on_asymmetric_object() {
    let img = asymmetric_object(128);
    let mut scores = Vec::new();
    for seed in 0..8 {
        let angles = uniform_angles(200, seed);
        let (est, truth) = signs_of(&angles, &img, 20, &SignParams::default());
        assert!(est.embeddings <= partition(200, 20).unwrap().u);
        scores.push(sign_agreement(&est.sign, &truth));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!(mean >= 0.95, "{scores:?}");
    assert!(scores.iter().all(|&s| s >= 0.9), "{scores:?}");
}

#[test]
fn assemble_examples() {
    assert_eq!(assemble_angles(&[0.5, 1.0], &[1, -1], false).unwrap(), vec![0.5, -1.0]);
    let a = assemble_angles(&[0.1], &[-1], true).unwrap();
    assert!((a[0] + PI - 0.1).abs() < 1e-15);
    assert!(assemble_angles(&[0.1, 0.2], &[1], false).is_err());
}

#[test]
fn fbp_with_exact_angles() {
    let img = shepp_logan(128).unwrap();
    let angles = uniform_angles(2000, 0);
    let p = radon_forward(&img, &angles, 128).unwrap();
    let recon = fbp_reconstruct(&p, &angles, 128).unwrap();
    let e = l2_error(&recon, &img, false).unwrap();
    assert!(e < 0.15, "{e}");
    assert!(recon.pixels().iter().all(|&v| v >= 0.0));

    let zero = ProjectionSet { rows: vec![vec![0.0; 128]; 2000], ..p.clone() };
    assert!(fbp_reconstruct(&zero, &angles, 128).unwrap().pixels().iter().all(|&v| v == 0.0));
}

#[test]
fn shifted_angles_rotate_the_reconstruction() {
    let img = asymmetric_object(64);
    let angles: Vec<f64> = (0..360).map(|i| i as f64 * PI / 360.0).collect();
    let p = radon_forward(&img, &angles, 64).unwrap();
    let base = fbp_reconstruct(&p, &angles, 64).unwrap();
    let phi = 0.4;
    let shifted: Vec<f64> = angles.iter().map(|a| a + phi).collect();
    let moved = fbp_reconstruct(&p, &shifted, 64).unwrap();
    let expected = base.rotated(phi, false);
    let mask = |img: &Image| {
        let n = img.n();
        let c = (n as f64 - 1.0) / 2.0;
        let px = (0..n * n)
            .map(|i| {
                let (r, col) = (i / n, i % n);
                let inside = (col as f64 - c).hypot(r as f64 - c) < 0.4 * n as f64;
                if inside {
                    img.pixels()[i]
                } else {
                    0.0
                }
            })
            .collect();
        Image::new(n, px).unwrap()
    };
    let e = l2_error(&mask(&moved), &mask(&expected), false).unwrap();
    assert!(e < 0.02, "{e}");
}

#[test]
fn registered_error_examples() {
    let img = shepp_logan(64).unwrap();
    assert_eq!(l2_error(&img, &img, false).unwrap(), 0.0);
    assert_eq!(l2_error(&img, &img, true).unwrap(), 0.0);
    let turned = img.rotated(PI / 2.0, false);
    assert!(l2_error(&turned, &img, false).unwrap() > 0.1);
    assert!(l2_error(&turned, &img, true).unwrap() < 1e-9);
    assert!(l2_error(&img, &Image::zeros(64), false).is_err());
}

#[test]
fn flipping_all_signs_keeps_registered_error() {
    let img = asymmetric_object(64);
    let angles = uniform_angles(300, 4);
    let p = radon_forward(&img, &angles, 64).unwrap();
    let flipped: Vec<f64> = angles.iter().map(|a| -a).collect();
    let a = l2_error(&fbp_reconstruct(&p, &angles, 64).unwrap(), &img, true).unwrap();
    let b = l2_error(&fbp_reconstruct(&p, &flipped, 64).unwrap(), &img, true).unwrap();
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn unsigned_angles_stay_in_range() {
    let img = shepp_logan(64).unwrap();
    let p =
        l1_normalize(&add_white_noise(&radon_forward(&img, &uniform_angles(400, 7), 64).unwrap(), 0.05, 1).unwrap())
            .unwrap();
    let (vnorm, _) = estimate_vnorm(&p).unwrap();
    let (u, clamped) = recover_unsigned_angles(&p, vnorm).unwrap();
    assert!(u.iter().all(|&v| (0.0..=PI).contains(&v)));
    assert!(clamped as f64 <= 0.02 * u.len() as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projections_conserve_mass(
        parts in prop::collection::vec((-12.0..12.0f64, -12.0..12.0f64, 2.0..5.0f64, 0.1..1.0f64), 1..4),
        angles in prop::collection::vec(0.0..(2.0 * PI), 1..6),
    ) {
        let img = blobs(48, &parts);
        let p = radon_forward(&img, &angles, 48).unwrap();
        for row in &p.rows {
            let mass = p.h * row.iter().sum::<f64>();
            prop_assert!((mass / img.mass() - 1.0).abs() < 0.01, "{mass} vs {}", img.mass());
        }
    }

    #[test]
    fn moment_is_linear(
        a in prop::collection::vec(-1.0..1.0f64, 16),
        b in prop::collection::vec(-1.0..1.0f64, 16),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        let x = detector_grid(16, 0.7);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(u, v)| alpha * u + beta * v).collect();
        let lhs = projection_moment(&mix, &x, 0.7).unwrap();
        let rhs = alpha * projection_moment(&a, &x, 0.7).unwrap() + beta * projection_moment(&b, &x, 0.7).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn agreement_ignores_global_flip(signs in prop::collection::vec(prop::bool::ANY, 1..40)) {
        let a: Vec<i8> = signs.iter().map(|&s| if s { 1 } else { -1 }).collect();
        let neg: Vec<i8> = a.iter().map(|s| -s).collect();
        prop_assert_eq!(sign_agreement(&a, &neg), 1.0);
        prop_assert_eq!(sign_agreement(&a, &a), 1.0);
    }
}
