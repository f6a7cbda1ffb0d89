//! Synthetic ground-truth camera and chart datasets.

pub mod scenes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calibration::poly::fit_monotone_polynomial;
use crate::calibration::{CalibrationSample, CalibrationSet};
use crate::error::{Error, Result};
use crate::geometry::ConvexPolygon;
use crate::image::{JpegImage, RawImage};
use crate::model::{dot, eval_polynomial_derivative, CameraModel, RawColor, RbfTerm};

/// Relative exposure times of the 22-stop ladder.
pub const EXPOSURE_LADDER: [f64; 22] = [
    5e-4, 6.25e-4, 1e-3, 1.25e-3, 2e-3, 2.5e-3, 3.13e-3, 5e-3, 6.25e-3, 1e-2, 1.26e-2, 1.67e-2, 2e-2,
    2.5e-2, 3.33e-2, 4e-2, 5e-2, 6.67e-2, 1e-1, 2e-1, 4e-1, 1.0,
];

/// Every third stop of the ladder, from darkest to brightest.
pub fn eight_exposures() -> Vec<f64> {
    (0..8).map(|i| EXPOSURE_LADDER[3 * i]).collect()
}

const CHART_CSV: &str = include_str!("../../data/chart140.csv");

/// The 140 fixed reflectances of the synthetic chart.
pub fn chart_reflectances() -> Vec<[f64; 3]> {
    let mut rdr = csv::Reader::from_reader(CHART_CSV.as_bytes());
    rdr.deserialize::<(f64, f64, f64)>()
        .map(|r| {
            let (r, g, b) = r.expect("bundled chart table is well formed");
            [r, g, b]
        })
        .collect()
}

/// Pool of sixteen diagonal illuminants, normalized to unit maximum.
pub fn illuminant_pool() -> Vec<[f64; 3]> {
    let raw: [[f64; 3]; 16] = [
        [1.80, 1.0, 0.45],
        [1.60, 1.0, 0.55],
        [1.45, 1.0, 0.65],
        [1.30, 1.0, 0.75],
        [1.15, 1.0, 0.85],
        [1.00, 1.0, 1.00],
        [0.90, 1.0, 1.15],
        [0.80, 1.0, 1.30],
        [0.72, 1.0, 1.45],
        [1.20, 1.0, 1.20],
        [0.85, 1.0, 0.85],
        [1.30, 1.0, 1.00],
        [1.00, 1.0, 1.35],
        [0.80, 1.0, 0.70],
        [1.50, 1.0, 1.10],
        [0.70, 1.0, 1.00],
    ];
    raw.iter()
        .map(|l| {
            let m = l[0].max(l[1]).max(l[2]);
            [l[0] / m, l[1] / m, l[2] / m]
        })
        .collect()
}

pub fn chromaticity(x: &[f64; 3]) -> Option<[f64; 2]> {
    let s = x[0] + x[1] + x[2];
    if s > 1e-12 {
        Some([x[0] / s, x[1] / s])
    } else {
        None
    }
}

/// Area of the chromaticity hull of the chart under a set of illuminants.
pub fn chart_hull_area(reflectances: &[[f64; 3]], illuminants: &[[f64; 3]]) -> f64 {
    let pts: Vec<[f64; 2]> = illuminants
        .iter()
        .flat_map(|l| {
            reflectances
                .iter()
                .filter_map(move |r| chromaticity(&[r[0] * l[0], r[1] * l[1], r[2] * l[2]]))
        })
        .collect();
    ConvexPolygon::hull(&pts).area()
}

/// Greedy ordering: each next illuminant maximizes the hull area of the
/// chart chromaticities accumulated so far.
pub fn order_illuminants(reflectances: &[[f64; 3]], pool: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut remaining: Vec<[f64; 3]> = pool.to_vec();
    let mut chosen: Vec<[f64; 3]> = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        let mut best_area = f64::NEG_INFINITY;
        for (i, l) in remaining.iter().enumerate() {
            let mut trial = chosen.clone();
            trial.push(*l);
            let a = chart_hull_area(reflectances, &trial);
            if a > best_area + 1e-15 {
                best_area = a;
                best = i;
            }
        }
        chosen.push(remaining.remove(best));
    }
    chosen
}

#[derive(Clone, Debug)]
pub struct SyntheticCameraSpec {
    pub seed: u64,
    /// Largest off-diagonal (channel mixing) entry of `v`; rows sum to 1.
    pub crosstalk: f64,
    /// Exponent of the tone curve target.
    pub tone_exponent: f64,
    /// Offset of the toe, avoids the infinite slope of a pure power law at 0.
    pub toe: f64,
    /// Strength of the highlight roll-off.
    pub shoulder: f64,
    /// Channel value `t` at which the tone curve reaches 255; highlights
    /// above it are clipped by the renderer.
    pub white_point: f64,
    pub bumps: usize,
    /// Largest gamut-correction magnitude in gray levels, single bump or combined.
    pub bump_max: f64,
    pub bump_gamma: f64,
    /// Sensor noise std used by the dataset generators, RAW units.
    pub sigma_z: f64,
    /// Model-error std stored in the generated model, gray levels.
    pub sigma_f: f64,
}

impl Default for SyntheticCameraSpec {
    fn default() -> Self {
        SyntheticCameraSpec {
            seed: 0,
            crosstalk: 0.2,
            tone_exponent: 1.0 / 2.2,
            toe: 0.05,
            shoulder: 0.3,
            white_point: 1.0,
            bumps: 6,
            bump_max: 8.0,
            bump_gamma: 1e-4,
            sigma_z: 1e-3,
            // Twice the RMS rounding error, the only error of an exact model.
            sigma_f: 2.0 / 12f64.sqrt(),
        }
    }
}

impl SyntheticCameraSpec {
    pub fn without_bumps(mut self) -> Self {
        self.bumps = 0;
        self
    }

    pub fn noiseless(mut self) -> Self {
        self.sigma_z = 0.0;
        self
    }

    /// Target tone curve, `[0, white_point]` -> `[0, 1]`, extended linearly
    /// below 0.
    pub fn tone_target(&self, t: f64) -> f64 {
        let t = t / self.white_point;
        let p = self.tone_exponent;
        let e = self.toe;
        let norm = (1.0 + e).powf(p) - e.powf(p);
        let base = |t: f64| ((t + e).powf(p) - e.powf(p)) / norm;
        let s = self.shoulder;
        let shape = |b: f64| (1.0 + s) * b / (1.0 + s * b);
        if t >= 0.0 {
            shape(base(t))
        } else {
            let slope0 = p * e.powf(p - 1.0) / norm * (1.0 + s);
            slope0 * t
        }
    }
}

/// Lower and upper end of the interval the synthetic tone curve is fitted on.
const TONE_FIT_RANGE: (f64, f64) = (-0.4, 1.6);

fn fit_tone_curve(spec: &SyntheticCameraSpec) -> Result<[f64; 8]> {
    let (lo, hi) = TONE_FIT_RANGE;
    let n = 600;
    let points: Vec<(f64, f64, f64)> = (0..=n)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            // Emphasize the nominal range.
            let w = if (0.0..=1.0).contains(&t) { 1.0 } else { 0.1 };
            (t, 255.0 * spec.tone_target(t), w)
        })
        .collect();
    let (alpha, _) = fit_monotone_polynomial(&points, lo, hi)?;
    Ok(alpha)
}

fn is_monotone(alpha: &[f64; 8], lo: f64, hi: f64) -> bool {
    (0..=1000).all(|i| eval_polynomial_derivative(alpha, lo + (hi - lo) * i as f64 / 1000.0) >= -1e-9)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Deterministic synthetic camera for a spec.
pub fn make_synthetic_model(spec: &SyntheticCameraSpec) -> Result<CameraModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut v = [[0.0; 3]; 3];
    for (c, row) in v.iter_mut().enumerate() {
        let mut off = 0.0;
        for (k, e) in row.iter_mut().enumerate() {
            if k != c {
                *e = spec.crosstalk * rng.random_range(0.1..1.0);
                off += *e;
            }
        }
        row[c] = 1.0 - off;
    }

    let mut shoulder_spec = spec.clone();
    let mut alpha = None;
    for _ in 0..8 {
        let a = fit_tone_curve(&shoulder_spec)?;
        if is_monotone(&a, 0.0, 1.5) {
            alpha = Some(a);
            break;
        }
        shoulder_spec.shoulder *= 0.5;
    }
    let alpha = alpha.ok_or_else(|| Error::Internal("could not fit a monotone tone curve".into()))?;

    let mut rbf: [Vec<RbfTerm>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..spec.bumps {
        // Centered on the tone-mapped value of a bright saturated color.
        let x = hsv_to_rgb(rng.random(), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0));
        let center: [f64; 3] = std::array::from_fn(|c| crate::model::eval_polynomial(&alpha, dot(&v[c], &x)));
        let mean = center.iter().sum::<f64>() / 3.0;
        // Pull toward the gray axis: hue is preserved, saturation compressed.
        let dir: [f64; 3] = std::array::from_fn(|c| mean - center[c]);
        let m = dir.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        if m < 1e-9 {
            continue;
        }
        let mag = spec.bump_max * rng.random_range(0.5..1.0);
        for c in 0..3 {
            rbf[c].push(RbfTerm {
                center,
                w: mag * dir[c] / m,
            });
        }
    }

    let mut model = CameraModel {
        v,
        alpha,
        rbf,
        gamma: [spec.bump_gamma; 3],
        sigma_f: spec.sigma_f,
    };
    // Overlapping bumps add up; rescale so the combined correction stays
    // within bump_max. Bumps are wide, so a 17^3 lattice plus the centers
    // locates the peak closely.
    let mut probes: Vec<[f64; 3]> = model.rbf[0].iter().map(|t| t.center).collect();
    for i in 0..17 {
        for j in 0..17 {
            for k in 0..17 {
                probes.push([i as f64 * 16.0, j as f64 * 16.0, k as f64 * 16.0]);
            }
        }
    }
    let peak = probes
        .iter()
        .map(|y| model.gamut_correction(y).iter().fold(0.0f64, |a, g| a.max(g.abs())))
        .fold(0.0f64, f64::max);
    if peak > spec.bump_max {
        let scale = spec.bump_max / peak;
        for terms in model.rbf.iter_mut() {
            terms.iter_mut().for_each(|t| t.w *= scale);
        }
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct ChartSpec {
    pub reflectances: Vec<[f64; 3]>,
    pub illuminants: Vec<[f64; 3]>,
    pub exposures: Vec<f64>,
    /// Scene radiance scale: RAW = exposure * gain * illuminant * reflectance.
    pub gain: f64,
    pub sigma_z: f64,
    pub seed: u64,
}

impl ChartSpec {
    /// 140-patch chart under the first `n_illuminants` of the greedy
    /// hull-area ordering of the pool.
    pub fn standard(n_illuminants: usize, exposures: Vec<f64>, sigma_z: f64, seed: u64) -> Self {
        let reflectances = chart_reflectances();
        let mut illuminants = order_illuminants(&reflectances, &illuminant_pool());
        illuminants.truncate(n_illuminants);
        ChartSpec {
            reflectances,
            illuminants,
            exposures,
            gain: 20.0,
            sigma_z,
            seed,
        }
    }
}

impl Default for ChartSpec {
    fn default() -> Self {
        ChartSpec::standard(4, EXPOSURE_LADDER.to_vec(), 1e-3, 0)
    }
}

/// Sensor response: add noise to a radiance, clip to the sensor range.
pub fn expose<R: Rng>(x: [f64; 3], sigma_z: f64, rng: &mut R) -> RawColor {
    let noise = Normal::new(0.0, sigma_z.max(0.0)).expect("finite std");
    RawColor(std::array::from_fn(|c| {
        let n = if sigma_z > 0.0 { noise.sample(rng) } else { 0.0 };
        (x[c] + n).clamp(0.0, 1.0)
    }))
}

/// RAW-JPEG pairs for every patch, illuminant and exposure.
pub fn generate_chart_dataset(model: &CameraModel, chart: &ChartSpec) -> Result<CalibrationSet> {
    if chart.exposures.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("exposures must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(chart.seed);
    let mut samples = Vec::with_capacity(chart.reflectances.len() * chart.illuminants.len() * chart.exposures.len());
    for (li, l) in chart.illuminants.iter().enumerate() {
        for &e in &chart.exposures {
            for r in &chart.reflectances {
                let radiance: [f64; 3] = std::array::from_fn(|c| e * chart.gain * l[c] * r[c]);
                let x = expose(radiance, chart.sigma_z, &mut rng);
                samples.push(CalibrationSample {
                    x,
                    y: model.render(&x),
                    exposure: e,
                    illuminant: li as u32,
                });
            }
        }
    }
    Ok(CalibrationSet::new(samples))
}

/// Render a linear image at an exposure; the sensor clips at 1.
pub fn render_scene(model: &CameraModel, image: &RawImage, exposure: f64) -> JpegImage {
    image.map(|p| model.render(&RawColor(std::array::from_fn(|c| (p[c] * exposure).clamp(0.0, 1.0)))))
}

/// As [`render_scene`], with Gaussian sensor noise added before clipping.
pub fn render_scene_noisy(model: &CameraModel, image: &RawImage, exposure: f64, sigma_z: f64, seed: u64) -> JpegImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    image.map(|p| {
        let x = expose(std::array::from_fn(|c| p[c] * exposure), sigma_z, &mut rng);
        model.render(&x)
    })
}
