use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raddr_core::image::Image;
use raddr_core::synthcam::scenes::procedural_image;
use raddr_core::synthcam::*;
use raddr_core::RawColor;

/// Convex hull area by the monotone chain and the shoelace formula.
fn hull_area(points: &[[f64; 2]]) -> f64 {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let n = hull.len();
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

#[test]
fn dataset_size_is_patches_times_illuminants_times_exposures() {
    let m = make_synthetic_model(&SyntheticCameraSpec::default()).unwrap();
    let chart = ChartSpec::standard(3, vec![0.25, 0.5, 1.0, 2.0], 1e-3, 1);
    let set = generate_chart_dataset(&m, &chart).unwrap();
    assert_eq!(chart.reflectances.len(), 140);
    assert_eq!(set.len(), 140 * 3 * 4);
}

#[test]
fn noiseless_pairs_follow_the_exposure_model() {
    let m = make_synthetic_model(&SyntheticCameraSpec::default()).unwrap();
    let chart = ChartSpec::standard(1, vec![0.7], 0.0, 0);
    let set = generate_chart_dataset(&m, &chart).unwrap();
    let l = chart.illuminants[0];
    for (s, r) in set.samples.iter().zip(&chart.reflectances) {
        for c in 0..3 {
            let expect = (0.7 * chart.gain * l[c] * r[c]).clamp(0.0, 1.0);
            assert_eq!(s.x.0[c], expect);
        }
        assert_eq!(s.y, m.render(&s.x));
    }
}

#[test]
fn sensor_noise_has_the_requested_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let sigma = 0.01;
    let draws: Vec<f64> = (0..n).map(|_| expose([0.5; 3], sigma, &mut rng).0[1] - 0.5).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt());
    assert!((sd / sigma - 1.0).abs() < 0.03, "sd {sd}");
}

#[test]
fn hull_area_grows_along_the_greedy_order() {
    let refl = chart_reflectances();
    let order = order_illuminants(&refl, &illuminant_pool());
    let mut last = 0.0;
    for k in 1..=order.len() {
        let pts: Vec<[f64; 2]> = order[..k]
            .iter()
            .flat_map(|l| refl.iter().filter_map(move |r| chromaticity(&std::array::from_fn(|c| r[c] * l[c]))))
            .collect();
        let area = hull_area(&pts);
        assert!((area - chart_hull_area(&refl, &order[..k])).abs() < 1e-12);
        assert!(area >= last - 1e-15, "{k}: {area} < {last}");
        last = area;
    }
}

#[test]
fn rendering_is_per_pixel() {
    let m = make_synthetic_model(&SyntheticCameraSpec::default()).unwrap();
    let flat = Image::filled(5, 4, [0.2, 0.3, 0.4]);
    let out = render_scene(&m, &flat, 1.5);
    assert!(out.data.iter().all(|p| *p == out.data[0]));
    let img = procedural_image(12, 9, 1);
    let out = render_scene(&m, &img, 0.8);
    for (p, y) in img.data.iter().zip(&out.data) {
        assert_eq!(*y, m.render(&RawColor(p.map(|v| (v * 0.8).clamp(0.0, 1.0)))));
    }
}

#[test]
fn doubling_exposure_never_darkens_a_diagonal_camera() {
    let spec = SyntheticCameraSpec {
        crosstalk: 0.0,
        ..SyntheticCameraSpec::default().without_bumps()
    };
    let m = make_synthetic_model(&spec).unwrap();
    for seed in 0..4 {
        let img = procedural_image(16, 16, seed);
        let (a, b) = (render_scene(&m, &img, 0.6), render_scene(&m, &img, 1.2));
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((0..3).all(|c| q.0[c] >= p.0[c]));
        }
    }
}

#[test]
fn gamut_bumps_are_bounded_and_pull_toward_gray() {
    for seed in 0..5 {
        let spec = SyntheticCameraSpec {
            seed,
            ..SyntheticCameraSpec::default()
        };
        let m = make_synthetic_model(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5000 {
            let y: [f64; 3] = std::array::from_fn(|_| rng.random_range(-20.0..300.0));
            let g = m.gamut_correction(&y);
            assert!(g.iter().all(|v| v.abs() <= 10.0), "{g:?}");
        }
        // Each bump moves its center toward the gray axis without changing
        // the channel mean.
        for i in 0..m.rbf[0].len() {
            let c = m.rbf[0][i].center;
            let w: [f64; 3] = std::array::from_fn(|k| m.rbf[k][i].w);
            assert!((0..3).all(|k| m.rbf[k][i].center == c));
            let mean = (c[0] + c[1] + c[2]) / 3.0;
            let along: f64 = (0..3).map(|k| w[k] * (c[k] - mean)).sum();
            assert!(along < 0.0, "seed {seed}: {w:?} at {c:?}");
            assert!(w.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
