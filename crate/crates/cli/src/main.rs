//! `raddr`: camera calibration, derendering and the downstream solvers from
//! the command line.
//!
//! Units: RAW values are linear sensor readings in [0, 1]; JPEG values are
//! 8-bit gray levels in [0, 255]; exposures are relative times.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use raddr_core::bench::{
    deconv_suite, fusion_suite, pstereo_suite, BenchSetup, DeconvBenchConfig, FusionBenchConfig, PstereoBenchConfig,
};
use raddr_core::calibration::{calibrate, CalibrationConfig};
use raddr_core::deconv::{
    deconvolve_deterministic, deconvolve_probabilistic, median_variance, BlurProblem, Kernel, SolverSchedule,
    DEFAULT_GAMMA,
};
use raddr_core::derender::{build_prior, Derenderer, PriorSupport, DEFAULT_RESOLUTION};
use raddr_core::fusion::{fuse_stack, FusionConfig, FusionMethod};
use raddr_core::io::{
    load_dataset, load_lights, load_model, load_stack_list, read_pfm, read_png, save_model, write_dataset, write_pfm,
    FloatImage,
};
use raddr_core::photostereo::{estimate_normals, integrate_normals, LightRig, PstereoConfig, PstereoMode};
use raddr_core::synthcam::{eight_exposures, generate_chart_dataset, make_synthetic_model, ChartSpec, SyntheticCameraSpec};
use raddr_core::{CameraModel, Error};

/// Deterministic data weight used by `--lambda auto`.
const AUTO_LAMBDA: f64 = 2000.0;

#[derive(Parser)]
#[command(name = "raddr", version, about = "Camera tone-map calibration and probabilistic derendering")]
#[command(after_help = "Units: RAW values are linear in [0,1]; JPEG values are gray levels in [0,255].\n\
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.")]
struct Cli {
    /// Worker threads [default: number of cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Deterministic baseline on derendered means.
    #[value(alias = "deterministic")]
    Det,
    /// Uses derendered means and covariances.
    #[value(alias = "probabilistic")]
    Prob,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Fusion,
    Pstereo,
    Deconv,
}

#[derive(Clone, Copy)]
enum Lambda {
    Auto,
    Value(f64),
}

fn parse_lambda(s: &str) -> Result<Lambda, String> {
    if s == "auto" {
        return Ok(Lambda::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Lambda::Value(v)),
        _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a camera model to RAW-JPEG pairs.
    ///
    /// The dataset CSV has header raw_r,raw_g,raw_b,jpg_r,jpg_g,jpg_b,exposure,illuminant
    /// with RAW in [0,1] and JPEG in gray levels.
    Calibrate {
        /// CSV with header `raw_r,raw_g,raw_b,jpg_r,jpg_g,jpg_b,exposure,illuminant`
        #[arg(long)]
        data: PathBuf,
        /// Model JSON, including the chromaticity hull of the RAW data.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-pixel mean and covariance of the RAW values behind a JPEG image.
    Derender {
        /// Model JSON written by `calibrate` or `synth`
        #[arg(long)]
        model: PathBuf,
        /// 8-bit PNG.
        #[arg(long = "in")]
        input: PathBuf,
        /// 3-channel PFM of means, RAW units.
        #[arg(long)]
        out_mu: PathBuf,
        /// 6-channel PFM of covariances xx,xy,xz,yy,yz,zz, RAW^2 units.
        #[arg(long)]
        out_sigma: PathBuf,
        /// Lattice nodes per RAW axis.
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        grid: usize,
    },
    /// Fuse an exposure stack into a unit-exposure linear image.
    Fuse {
        /// Model JSON written by `calibrate` or `synth`
        #[arg(long)]
        model: PathBuf,
        /// CSV of `path,exposure` rows; relative paths resolve against the CSV.
        #[arg(long)]
        stack: PathBuf,
        /// 3-channel PFM, RAW units at exposure 1.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "prob")]
        method: Mode,
        /// Sensor noise std, RAW units.
        #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
        sigma_z: f64,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        grid: usize,
    },
    /// Surface normals and depth from images under known distant lights.
    Pstereo {
        /// Model JSON written by `calibrate` or `synth`
        #[arg(long)]
        model: PathBuf,
        /// CSV of `lx,ly,lz` rows, one per image in order.
        #[arg(long)]
        lights: PathBuf,
        /// 8-bit PNGs, one per light.
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "prob")]
        mode: Mode,
        /// 3-channel PFM of unit normals (x right, y up, z toward the camera);
        /// zero where no normal could be estimated.
        #[arg(long)]
        out_normals: PathBuf,
        /// 1-channel PFM of zero-mean depth, pixel units.
        #[arg(long)]
        out_depth: PathBuf,
        /// Sensor noise std, RAW units.
        #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
        sigma_z: f64,
        /// Brightest and darkest observations dropped per pixel.
        #[arg(long, default_value_t = 1)]
        trim: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        grid: usize,
    },
    /// Non-blind deblurring of a JPEG image in linear space.
    Deconv {
        /// Model JSON written by `calibrate` or `synth`
        #[arg(long)]
        model: PathBuf,
        /// 8-bit PNG.
        #[arg(long = "in")]
        input: PathBuf,
        /// 1-channel PFM with odd width and height; normalized on load.
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, value_enum, default_value = "prob")]
        mode: Mode,
        /// Data weight, or `auto` (2000, scaled by the median derendering
        /// variance in probabilistic mode).
        #[arg(long, default_value = "auto", value_parser = parse_lambda)]
        lambda: Lambda,
        /// Exponent of the gradient prior.
        #[arg(long, default_value_t = DEFAULT_GAMMA, value_parser = parse_positive)]
        gamma: f64,
        /// Sensor noise std, RAW units.
        #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
        sigma_z: f64,
        /// 3-channel PFM, RAW units.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        grid: usize,
    },
    /// Generate a synthetic camera and its calibration chart.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_model: PathBuf,
        /// Chart CSV: 8 exposures under 4 illuminants.
        #[arg(long)]
        out_data: PathBuf,
    },
    /// Compare deterministic and probabilistic methods on synthetic data.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Truth camera [default: the synthetic camera with this seed].
        #[arg(long)]
        truth: Option<PathBuf>,
        /// JSON report with per-trial metrics and summary statistics.
        #[arg(long)]
        out: PathBuf,
    },
}

fn derenderer(model_path: &Path, grid: usize) -> Result<Derenderer, Error> {
    let (model, prior) = load_model(model_path)?;
    let prior = prior.unwrap_or_else(PriorSupport::full_triangle);
    Derenderer::new(&model, &prior, grid)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Calibrate { data, out, seed } => {
            let set = load_dataset(&data)?;
            let cal = calibrate(
                &set,
                &CalibrationConfig {
                    seed,
                    ..CalibrationConfig::default()
                },
            )?;
            let prior = build_prior(&set)?;
            save_model(&out, &cal.model, Some(&prior))?;
            eprintln!(
                "rmse train {:.3}, holdout {:.3} gray levels; sigma_f {:.3}",
                cal.report.rmse_train, cal.report.rmse_holdout, cal.model.sigma_f
            );
        }
        Command::Derender {
            model,
            input,
            out_mu,
            out_sigma,
            grid,
        } => {
            let der = derenderer(&model, grid)?;
            let inv = der.derender_image(&read_png(&input)?)?;
            write_pfm(&out_mu, &FloatImage::from_raw(&inv.map(|g| g.mu.0)))?;
            let packed = inv.map(|g| g.sigma_packed());
            write_pfm(
                &out_sigma,
                &FloatImage {
                    width: packed.width,
                    height: packed.height,
                    channels: 6,
                    data: packed.data.iter().flatten().map(|&v| v as f32).collect(),
                },
            )?;
        }
        Command::Fuse {
            model,
            stack,
            out,
            method,
            sigma_z,
            grid,
        } => {
            let der = derenderer(&model, grid)?;
            let images = load_stack_list(&stack)?
                .into_iter()
                .map(|(p, e)| Ok((read_png(&p)?, e)))
                .collect::<Result<Vec<_>, Error>>()?;
            let cfg = FusionConfig {
                sigma_z,
                ..FusionConfig::default()
            };
            let method = match method {
                Mode::Det => FusionMethod::Deterministic,
                Mode::Prob => FusionMethod::Probabilistic,
            };
            let hdr = fuse_stack(&der, &images, &cfg, method)?;
            write_pfm(&out, &FloatImage::from_raw(&hdr))?;
        }
        Command::Pstereo {
            model,
            lights,
            images,
            mode,
            out_normals,
            out_depth,
            sigma_z,
            trim,
            grid,
        } => {
            let rig = LightRig::new(load_lights(&lights)?)?;
            if images.len() != rig.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} images for {} lights",
                    images.len(),
                    rig.len()
                )));
            }
            let der = derenderer(&model, grid)?;
            let stack = images
                .iter()
                .map(|p| der.derender_image(&read_png(p)?))
                .collect::<Result<Vec<_>, Error>>()?;
            let mode = match mode {
                Mode::Det => PstereoMode::Deterministic,
                Mode::Prob => PstereoMode::Probabilistic,
            };
            let normals = estimate_normals(&stack, &rig, mode, &PstereoConfig { sigma_z, trim })?;
            let nu = normals.map(|n| n.map(|n| n.nu));
            write_pfm(&out_normals, &FloatImage::from_raw(&nu.map(|n| n.unwrap_or([0.0; 3]))))?;
            write_pfm(&out_depth, &FloatImage::from_scalar(&integrate_normals(&nu)))?;
        }
        Command::Deconv {
            model,
            input,
            kernel,
            mode,
            lambda,
            gamma,
            sigma_z,
            out,
            grid,
        } => {
            let k = read_pfm(&kernel)?;
            if k.channels != 1 {
                return Err(Error::InvalidInput(format!("kernel has {} channels, expected 1", k.channels)));
            }
            let k = Kernel::normalized(k.width, k.height, k.data.iter().map(|&v| v as f64).collect())?;
            let der = derenderer(&model, grid)?;
            let inv = der.derender_image(&read_png(&input)?)?;
            let mu = inv.map(|g| g.mu.0);
            let schedule = SolverSchedule::default();
            let sharp = match mode {
                Mode::Det => {
                    let lambda = match lambda {
                        Lambda::Auto => AUTO_LAMBDA,
                        Lambda::Value(v) => v,
                    };
                    deconvolve_deterministic(&mu, &k, lambda, gamma, &schedule)?
                }
                Mode::Prob => {
                    let sigma = inv.map(|g| g.sigma);
                    let lambda = match lambda {
                        Lambda::Auto => AUTO_LAMBDA * median_variance(&sigma, sigma_z),
                        Lambda::Value(v) => v,
                    };
                    let problem = BlurProblem {
                        mu,
                        sigma,
                        kernel: k,
                        lambda,
                        gamma_exp: gamma,
                        sigma_z,
                    };
                    deconvolve_probabilistic(&problem, &schedule)?
                }
            };
            write_pfm(&out, &FloatImage::from_raw(&sharp))?;
        }
        Command::Synth {
            seed,
            out_model,
            out_data,
        } => {
            let spec = SyntheticCameraSpec {
                seed,
                ..SyntheticCameraSpec::default()
            };
            let model = make_synthetic_model(&spec)?;
            let set = generate_chart_dataset(&model, &ChartSpec::standard(4, eight_exposures(), spec.sigma_z, seed))?;
            save_model(&out_model, &model, Some(&build_prior(&set)?))?;
            write_dataset(&set, std::fs::File::create(&out_data)?)?;
        }
        Command::Bench {
            suite,
            seed,
            truth,
            out,
        } => {
            let setup = match truth {
                Some(p) => {
                    let (model, _): (CameraModel, _) = load_model(&p)?;
                    BenchSetup::with_truth(model, SyntheticCameraSpec::default().sigma_z, seed, DEFAULT_RESOLUTION)?
                }
                None => BenchSetup::new(seed, DEFAULT_RESOLUTION)?,
            };
            let summary = match suite {
                Suite::Fusion => {
                    let r = fusion_suite(&setup, &FusionBenchConfig::default(), seed)?;
                    write_json(&out, &r)?;
                    r.summary
                }
                Suite::Pstereo => {
                    let r = pstereo_suite(&setup, &PstereoBenchConfig::default(), seed)?;
                    write_json(&out, &r)?;
                    r.report.summary
                }
                Suite::Deconv => {
                    let r = deconv_suite(&setup, &DeconvBenchConfig::default(), seed)?;
                    write_json(&out, &r)?;
                    r.report.summary
                }
            };
            eprintln!(
                "{} trials: median det {:.4}, prob {:.4}; win rate {:.3}",
                summary.trials, summary.median_deterministic, summary.median_probabilistic, summary.win_rate
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 4 } else { 3 })
        }
    }
}
