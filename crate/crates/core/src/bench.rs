//! Deterministic-versus-probabilistic comparison suites on the synthetic
//! camera.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationConfig, FitReport};
use crate::deconv::{
    convolve_spatial, deconvolve_deterministic_traced, deconvolve_probabilistic_traced, median_variance, psnr, BlurProblem, Kernel,
    SolverSchedule, DEFAULT_GAMMA,
};
use crate::derender::{build_prior, Derenderer, InverseGaussian, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::fusion::{fuse_deterministic, fuse_probabilistic, relative_rmse, ExposureObservation, FusionConfig};
use crate::image::{Image, JpegImage, RawImage};
use crate::model::{CameraModel, RawColor};
use crate::photostereo::{angular_error, estimate_normals, exact_observations, LightRig, PstereoConfig, PstereoMode};
use crate::synthcam::scenes::{procedural_image, random_scene_colors, shade, shake_kernel, sphere_normals, ten_lights};
use crate::synthcam::{
    eight_exposures, expose, generate_chart_dataset, make_synthetic_model, render_scene, render_scene_noisy, ChartSpec,
    SyntheticCameraSpec, EXPOSURE_LADDER,
};

/// Truth camera, a model calibrated from its chart, and the inverse of
/// that model.
pub struct BenchSetup {
    pub truth: CameraModel,
    pub calibration: FitReport,
    pub der: Derenderer,
    pub sigma_z: f64,
}

impl BenchSetup {
    /// Calibrate on the 8-exposure, 4-illuminant chart of the synthetic
    /// camera with the given seed.
    pub fn new(seed: u64, resolution: usize) -> Result<Self> {
        let spec = SyntheticCameraSpec {
            seed,
            ..SyntheticCameraSpec::default()
        };
        let truth = make_synthetic_model(&spec)?;
        BenchSetup::with_truth(truth, spec.sigma_z, seed, resolution)
    }

    pub fn with_truth(truth: CameraModel, sigma_z: f64, seed: u64, resolution: usize) -> Result<Self> {
        let set = generate_chart_dataset(&truth, &ChartSpec::standard(4, eight_exposures(), sigma_z, seed))?;
        let cal = calibrate(
            &set,
            &CalibrationConfig {
                seed,
                ..CalibrationConfig::default()
            },
        )?;
        let prior = build_prior(&set)?;
        let der = Derenderer::new(&cal.model, &prior, resolution)?;
        Ok(BenchSetup {
            truth,
            calibration: cal.report,
            der,
            sigma_z,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub label: String,
    pub deterministic: f64,
    pub probabilistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    /// Whether the metric improves upward (PSNR) or downward (errors).
    pub higher_is_better: bool,
    pub median_deterministic: f64,
    pub median_probabilistic: f64,
    pub mean_deterministic: f64,
    pub mean_probabilistic: f64,
    /// Median of `probabilistic - deterministic`.
    pub median_delta: f64,
    /// Fraction of trials where the probabilistic method is at least as good.
    pub win_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub seed: u64,
    pub metric: String,
    pub summary: Summary,
    pub trials: Vec<Trial>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(trials: &[Trial], higher_is_better: bool) -> Summary {
    let det: Vec<f64> = trials.iter().map(|t| t.deterministic).collect();
    let prob: Vec<f64> = trials.iter().map(|t| t.probabilistic).collect();
    let delta: Vec<f64> = trials.iter().map(|t| t.probabilistic - t.deterministic).collect();
    let n = trials.len().max(1) as f64;
    let wins = trials
        .iter()
        .filter(|t| {
            if higher_is_better {
                t.probabilistic >= t.deterministic
            } else {
                t.probabilistic <= t.deterministic
            }
        })
        .count();
    Summary {
        trials: trials.len(),
        higher_is_better,
        median_deterministic: median(&det),
        median_probabilistic: median(&prob),
        mean_deterministic: det.iter().sum::<f64>() / n,
        mean_probabilistic: prob.iter().sum::<f64>() / n,
        median_delta: median(&delta),
        win_rate: wins as f64 / n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionBenchConfig {
    pub colors: usize,
    pub exposures: Vec<f64>,
    pub fusion: FusionConfig,
}

impl Default for FusionBenchConfig {
    fn default() -> Self {
        FusionBenchConfig {
            colors: 200,
            exposures: EXPOSURE_LADDER.to_vec(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Every unordered exposure pair for every scene color: relative RMSE of
/// both fusion rules against the unit-exposure truth.
pub fn fusion_suite(setup: &BenchSetup, cfg: &FusionBenchConfig, seed: u64) -> Result<BenchReport> {
    use rayon::prelude::*;
    if cfg.exposures.len() < 2 {
        return Err(Error::InvalidInput("fusion suite needs at least two exposures".into()));
    }
    let colors = random_scene_colors(cfg.colors, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let rendered: Vec<Vec<(crate::model::JpegColor, f64)>> = colors
        .iter()
        .map(|x| {
            cfg.exposures
                .iter()
                .map(|&a| {
                    let raw = expose(std::array::from_fn(|c| a * x[c]), setup.sigma_z, &mut rng);
                    (setup.truth.render(&raw), a)
                })
                .collect()
        })
        .collect();
    let inverses: Vec<Vec<InverseGaussian>> = rendered
        .par_iter()
        .map(|stack| stack.iter().map(|(y, _)| setup.der.inverse_widening(y)).collect())
        .collect::<Result<_>>()?;

    let mut trials = Vec::new();
    for (k, x) in colors.iter().enumerate() {
        let truth = RawColor(*x);
        for i in 0..cfg.exposures.len() {
            for j in i + 1..cfg.exposures.len() {
                let obs = [i, j].map(|e| ExposureObservation {
                    y: rendered[k][e].0,
                    alpha: rendered[k][e].1,
                    inv: inverses[k][e],
                });
                let det = fuse_deterministic(&obs, &cfg.fusion)?;
                let prob = fuse_probabilistic(&obs, &cfg.fusion)?;
                trials.push(Trial {
                    label: format!("color {k} exposures {i},{j}"),
                    deterministic: relative_rmse(&det.x, &truth)?,
                    probabilistic: relative_rmse(&prob.x, &truth)?,
                });
            }
        }
    }
    Ok(BenchReport {
        suite: "fusion".into(),
        seed,
        metric: "relative_rmse".into(),
        summary: summarize(&trials, false),
        trials,
    })
}

pub fn default_fusion_report(seed: u64) -> Result<BenchReport> {
    let setup = BenchSetup::new(seed, DEFAULT_RESOLUTION)?;
    fusion_suite(&setup, &FusionBenchConfig::default(), seed)
}

/// Linearize with a fixed display gamma, the naive inverse of a tone-map.
pub fn gamma_linearize(img: &JpegImage, gamma: f64) -> RawImage {
    img.map(|y| y.as_f64().map(|v| (v / 255.0).powf(gamma)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PstereoBenchConfig {
    /// Side of the square sphere image in pixels.
    pub size: usize,
    pub albedos: Vec<[f64; 3]>,
    /// Brightest linear value of each sphere, relative to sensor saturation.
    pub peak: f64,
    pub gamma: f64,
    pub pstereo: PstereoConfig,
}

impl Default for PstereoBenchConfig {
    fn default() -> Self {
        PstereoBenchConfig {
            size: 32,
            albedos: vec![[0.8, 0.55, 0.35], [0.3, 0.6, 0.75], [0.7, 0.7, 0.65]],
            peak: 0.8,
            gamma: 2.2,
            pstereo: PstereoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PstereoBenchReport {
    /// Angular error in degrees per sphere pixel.
    pub report: BenchReport,
    pub mean_gamma: f64,
    /// Largest error with the exact linear images as input.
    pub linear_max_error: f64,
}

/// Lambertian spheres under ten lights, rendered through the truth camera
/// and derendered with the calibrated model. Compares normals from the
/// probabilistic and deterministic inverses and from a gamma curve.
pub fn pstereo_suite(setup: &BenchSetup, cfg: &PstereoBenchConfig, seed: u64) -> Result<PstereoBenchReport> {
    let normals = sphere_normals(cfg.size);
    let lights = ten_lights();
    let rig = LightRig::new(lights.clone())?;
    let mut trials = Vec::new();
    let mut gamma_errors = Vec::new();
    let mut linear_max = 0.0f64;
    for (a, albedo) in cfg.albedos.iter().enumerate() {
        let strength = cfg.peak / albedo.iter().cloned().fold(f64::MIN, f64::max);
        let linear: Vec<RawImage> = lights.iter().map(|l| shade(&normals, *albedo, *l, strength)).collect();
        let rendered: Vec<JpegImage> = linear
            .iter()
            .enumerate()
            .map(|(i, img)| render_scene_noisy(&setup.truth, img, 1.0, setup.sigma_z, seed ^ ((a * 16 + i) as u64)))
            .collect();
        let derendered = rendered
            .iter()
            .map(|img| setup.der.derender_image(img))
            .collect::<Result<Vec<_>>>()?;
        let gamma: Vec<Image<InverseGaussian>> = rendered
            .iter()
            .map(|img| exact_observations(&gamma_linearize(img, cfg.gamma)))
            .collect();
        let exact: Vec<Image<InverseGaussian>> = linear.iter().map(exact_observations).collect();

        let det = estimate_normals(&derendered, &rig, PstereoMode::Deterministic, &cfg.pstereo)?;
        let prob = estimate_normals(&derendered, &rig, PstereoMode::Probabilistic, &cfg.pstereo)?;
        let gam = estimate_normals(&gamma, &rig, PstereoMode::Deterministic, &cfg.pstereo)?;
        let lin = estimate_normals(&exact, &rig, PstereoMode::Deterministic, &cfg.pstereo)?;
        for (p, truth) in normals.data.iter().enumerate() {
            let Some(truth) = truth else { continue };
            // Attached shadows beyond what trimming removes break the
            // shadow-free model for every method alike.
            let shadowed = lights.iter().filter(|l| l[0] * truth[0] + l[1] * truth[1] + l[2] * truth[2] <= 0.0).count();
            if shadowed > cfg.pstereo.trim {
                continue;
            }
            let err = |e: &Image<Option<crate::photostereo::NormalEstimate>>| {
                // An unrecoverable pixel counts as a right-angle error.
                e.data[p].map_or(90.0, |n| angular_error(&n.nu, truth))
            };
            linear_max = linear_max.max(err(&lin));
            gamma_errors.push(err(&gam));
            trials.push(Trial {
                label: format!("albedo {a} pixel {p}"),
                deterministic: err(&det),
                probabilistic: err(&prob),
            });
        }
    }
    let mean_gamma = gamma_errors.iter().sum::<f64>() / gamma_errors.len().max(1) as f64;
    Ok(PstereoBenchReport {
        report: BenchReport {
            suite: "pstereo".into(),
            seed,
            metric: "angular_error_deg".into(),
            summary: summarize(&trials, false),
            trials,
        },
        mean_gamma,
        linear_max_error: linear_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvBenchConfig {
    pub size: usize,
    pub images: usize,
    pub kernels: usize,
    pub kernel_size: usize,
    /// Data weights searched for the deterministic solver. The probabilistic
    /// solver searches the same grid scaled by the image's median variance.
    pub lambdas: Vec<f64>,
    pub gamma_exp: f64,
    pub schedule: SolverSchedule,
}

impl Default for DeconvBenchConfig {
    fn default() -> Self {
        DeconvBenchConfig {
            size: 40,
            images: 3,
            kernels: 4,
            kernel_size: 9,
            lambdas: (0..12).map(|i| 10f64.powf(2.0 + 3.0 * i as f64 / 11.0)).collect(),
            gamma_exp: DEFAULT_GAMMA,
            schedule: SolverSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvTrial {
    pub label: String,
    pub blurry_psnr: f64,
    pub best_lambda_deterministic: f64,
    pub best_lambda_probabilistic: f64,
    /// Whether every solve's split-cost trace was non-increasing within
    /// each fixed-weight round.
    pub traces_monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvBenchReport {
    /// Best PSNR (dB) of each method per blurred image.
    pub report: BenchReport,
    pub details: Vec<DeconvTrial>,
}

/// Relative tolerance of the split-cost monotonicity check.
pub const TRACE_TOLERANCE: f64 = 1e-9;

/// Blurred synthetic images rendered through the truth camera, derendered
/// with the calibrated model and deblurred with each method at its best
/// data weight. PSNR is measured between truth-camera renderings.
pub fn deconv_suite(setup: &BenchSetup, cfg: &DeconvBenchConfig, seed: u64) -> Result<DeconvBenchReport> {
    if cfg.lambdas.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    let mut trials = Vec::new();
    let mut details = Vec::new();
    for im in 0..cfg.images {
        let sharp = procedural_image(cfg.size, cfg.size, seed.wrapping_add(100 + im as u64));
        let truth_jpeg = render_scene(&setup.truth, &sharp, 1.0);
        for kn in 0..cfg.kernels {
            let kernel = Kernel::new(
                cfg.kernel_size,
                cfg.kernel_size,
                shake_kernel(cfg.kernel_size, seed.wrapping_add(200 + kn as u64)),
            )?;
            let blurred = convolve_spatial(&sharp, &kernel);
            let observed = render_scene_noisy(
                &setup.truth,
                &blurred,
                1.0,
                setup.sigma_z,
                seed ^ ((im * 16 + kn) as u64 + 0xB1),
            );
            let inv = setup.der.derender_image(&observed)?;
            let mu = inv.map(|g| g.mu.0);
            let sigma = inv.map(|g| g.sigma);
            let var_scale = median_variance(&sigma, setup.sigma_z);

            let score = |z: &RawImage| psnr(&render_scene(&setup.truth, z, 1.0), &truth_jpeg);
            let mut monotone = true;
            let mut best_det = (f64::NEG_INFINITY, 0.0);
            let mut best_prob = (f64::NEG_INFINITY, 0.0);
            for &lam in &cfg.lambdas {
                let (z, tr) = deconvolve_deterministic_traced(&mu, &kernel, lam, cfg.gamma_exp, &cfg.schedule, true)?;
                monotone &= tr.is_monotone(TRACE_TOLERANCE);
                let p = score(&z)?;
                if p > best_det.0 {
                    best_det = (p, lam);
                }
                let problem = BlurProblem {
                    mu: mu.clone(),
                    sigma: sigma.clone(),
                    kernel: kernel.clone(),
                    lambda: lam * var_scale,
                    gamma_exp: cfg.gamma_exp,
                    sigma_z: setup.sigma_z,
                };
                let (z, tr) = deconvolve_probabilistic_traced(&problem, &cfg.schedule, true)?;
                monotone &= tr.is_monotone(TRACE_TOLERANCE);
                let p = score(&z)?;
                if p > best_prob.0 {
                    best_prob = (p, lam * var_scale);
                }
            }
            let label = format!("image {im} kernel {kn}");
            trials.push(Trial {
                label: label.clone(),
                deterministic: best_det.0,
                probabilistic: best_prob.0,
            });
            details.push(DeconvTrial {
                label,
                blurry_psnr: psnr(&observed, &truth_jpeg)?,
                best_lambda_deterministic: best_det.1,
                best_lambda_probabilistic: best_prob.1,
                traces_monotone: monotone,
            });
        }
    }
    Ok(DeconvBenchReport {
        report: BenchReport {
            suite: "deconv".into(),
            seed,
            metric: "psnr_db".into(),
            summary: summarize(&trials, true),
            trials,
        },
        details,
    })
}
