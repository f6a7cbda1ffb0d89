//! Fitting a [`CameraModel`] from RAW-JPEG pairs.
//!
//! The base model (`v`, `alpha`) is fitted by weighted alternating
//! optimization with random restarts; the cross-channel gamut correction is
//! then fitted to the residuals by kernel ridge regression.

pub mod krr;
pub mod linear;
pub mod poly;
pub mod qp;
pub mod weights;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{bound, CameraModel, JpegColor, RawColor, POLY_LEN};

pub use krr::KrrConfig;
pub use linear::fit_linear_step;
pub use poly::fit_polynomial_step;
pub use weights::{compute_weights, saturation_score};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub x: RawColor,
    pub y: JpegColor,
    /// Relative exposure time.
    pub exposure: f64,
    pub illuminant: u32,
}

#[derive(Debug, Clone, Default)]
pub struct CalibrationSet {
    pub samples: Vec<CalibrationSample>,
    /// Per-sample weights; empty until [`compute_weights`] runs.
    pub weights: Vec<f64>,
}

impl CalibrationSet {
    pub fn new(samples: Vec<CalibrationSample>) -> Self {
        CalibrationSet {
            samples,
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Split into (train, holdout), taking `fraction` of every illuminant's
    /// samples for the holdout part.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> (CalibrationSet, CalibrationSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            groups.entry(s.illuminant).or_default().push(i);
        }
        let mut train = Vec::new();
        let mut hold = Vec::new();
        for (_, mut idx) in groups {
            idx.shuffle(&mut rng);
            let k = (fraction * idx.len() as f64).round() as usize;
            for (j, i) in idx.into_iter().enumerate() {
                if j < k {
                    hold.push(self.samples[i]);
                } else {
                    train.push(self.samples[i]);
                }
            }
        }
        (CalibrationSet::new(train), CalibrationSet::new(hold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub rmse_train: f64,
    pub rmse_holdout: f64,
    /// Alternation rounds of the winning run.
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub seed: u64,
    pub restarts: usize,
    /// Relative std of the multiplicative restart perturbation of `v`.
    pub perturbation: f64,
    /// Samples with every channel below this are used to initialize `v`.
    pub low_y_threshold: u8,
    pub max_rounds: usize,
    pub round_tol: f64,
    pub holdout_fraction: f64,
    /// Lower bound on the fitted `sigma_f`, in gray levels.
    pub sigma_f_floor: f64,
    pub krr: KrrConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            seed: 0,
            restarts: 5,
            perturbation: 0.05,
            low_y_threshold: 64,
            max_rounds: 50,
            round_tol: 1e-7,
            holdout_fraction: 0.2,
            sigma_f_floor: 0.25,
            krr: KrrConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaseFit {
    pub v: [[f64; 3]; 3],
    pub alpha: [f64; POLY_LEN],
    pub objective: f64,
    /// Objective after every accepted round of the winning run.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: CameraModel,
    pub report: FitReport,
    pub base: BaseFit,
}

fn distinct_chromaticities(set: &CalibrationSet) -> usize {
    let mut seen: Vec<[f64; 2]> = Vec::new();
    for s in &set.samples {
        let sum = s.x.sum();
        if sum <= 1e-9 {
            continue;
        }
        let ch = [s.x.0[0] / sum, s.x.0[1] / sum];
        if !seen
            .iter()
            .any(|p| (p[0] - ch[0]).abs() < 1e-6 && (p[1] - ch[1]).abs() < 1e-6)
        {
            seen.push(ch);
            if seen.len() >= 2 {
                break;
            }
        }
    }
    seen.len()
}

/// `v` by least squares on near-linear (dark) samples, assuming `f(t) = 255 t`.
fn initial_transform(set: &CalibrationSet, threshold: u8) -> Result<[[f64; 3]; 3]> {
    let low: Vec<&CalibrationSample> = set
        .samples
        .iter()
        .filter(|s| s.y.0.iter().all(|&u| u < threshold))
        .collect();
    if low.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} samples with all channels below {threshold}, need at least 10",
            low.len()
        )));
    }
    let a = DMatrix::from_fn(low.len(), 3, |r, k| low[r].x.0[k]);
    let svd = a.clone().svd(true, true);
    let mut v = [[0.0; 3]; 3];
    for (c, row) in v.iter_mut().enumerate() {
        let b = DVector::from_fn(low.len(), |r, _| low[r].y.0[c] as f64 / 255.0);
        let sol = svd
            .solve(&b, 1e-12)
            .map_err(|e| Error::RankDeficient(e.to_string()))?;
        *row = [sol[0], sol[1], sol[2]];
    }
    Ok(v)
}

struct Run {
    v: [[f64; 3]; 3],
    alpha: [f64; POLY_LEN],
    objective: f64,
    trace: Vec<f64>,
    rounds: usize,
    converged: bool,
}

fn alternate(set: &CalibrationSet, v0: [[f64; 3]; 3], cfg: &CalibrationConfig) -> Result<Run> {
    let mut v = v0;
    let mut pf = fit_polynomial_step(set, &v)?;
    let mut alpha = pf.alpha;
    let mut objective = pf.objective;
    let mut trace = vec![objective];
    let mut rounds = 0;
    let mut converged = false;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let lf = fit_linear_step(set, &alpha, &v);
        pf = match fit_polynomial_step(set, &lf.v) {
            Ok(p) => p,
            Err(_) => {
                converged = true;
                break;
            }
        };
        let new_obj = pf.objective;
        // The constraint grid moves with t_max, so a round can in principle
        // end above the previous objective; such a round is rejected.
        if !(new_obj <= objective) {
            converged = true;
            break;
        }
        let rel = (objective - new_obj) / objective.max(1e-300);
        v = lf.v;
        alpha = pf.alpha;
        objective = new_obj;
        trace.push(objective);
        if rel < cfg.round_tol {
            converged = true;
            break;
        }
    }
    Ok(Run {
        v,
        alpha,
        objective,
        trace,
        rounds,
        converged,
    })
}

/// Alternating fit of `(v, alpha)` with restarts. `set` must carry weights.
pub fn fit_base_model(set: &CalibrationSet, cfg: &CalibrationConfig) -> Result<BaseFit> {
    if set.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 50",
            set.len()
        )));
    }
    if distinct_chromaticities(set) < 2 {
        return Err(Error::InsufficientData(
            "samples span fewer than 2 distinct chromaticities".into(),
        ));
    }
    if set.weights.len() != set.len() {
        return Err(Error::InvalidInput("weights not computed".into()));
    }
    let v0 = initial_transform(set, cfg.low_y_threshold)?;
    let mut best = alternate(set, v0, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.perturbation).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for _ in 0..cfg.restarts {
        let mut v = best.v;
        for row in v.iter_mut() {
            for e in row.iter_mut() {
                *e *= 1.0 + noise.sample(&mut rng);
            }
        }
        if let Ok(run) = alternate(set, v, cfg) {
            if run.objective < best.objective {
                best = run;
            }
        }
    }

    Ok(BaseFit {
        v: best.v,
        alpha: best.alpha,
        objective: best.objective,
        trace: best.trace,
        iterations: best.rounds,
        restarts_used: cfg.restarts,
        converged: best.converged,
    })
}

/// Fit the residual `y - B(f(Vx))` as an RBF expansion of `f(Vx)`.
pub fn fit_gamut_correction(
    set: &CalibrationSet,
    base: &CameraModel,
    cfg: &CalibrationConfig,
) -> Result<krr::RbfFit> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let inputs: Vec<[f64; 3]> = set.samples.iter().map(|s| base.tone(&s.x)).collect();
    let targets: Vec<[f64; 3]> = set
        .samples
        .iter()
        .zip(&inputs)
        .map(|(s, yt)| {
            let y = s.y.as_f64();
            [y[0] - bound(yt[0]), y[1] - bound(yt[1]), y[2] - bound(yt[2])]
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    krr::fit_rbf(&inputs, &targets, &cfg.krr, &mut rng)
}

/// Root-mean-square error of the quantized render, over samples and channels.
pub fn evaluate_rmse(model: &CameraModel, samples: &[CalibrationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let sse: f64 = samples
        .iter()
        .map(|s| {
            let p = model.render(&s.x).as_f64();
            let y = s.y.as_f64();
            (0..3).map(|c| (p[c] - y[c]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok((sse / (3 * samples.len()) as f64).sqrt())
}

/// Full pipeline: holdout split, weights, base fit, gamut correction, `sigma_f`.
pub fn calibrate(set: &CalibrationSet, cfg: &CalibrationConfig) -> Result<Calibration> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(s) = set.samples.iter().find(|s| !(s.exposure > 0.0) || !s.x.0.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput(format!("bad sample {s:?}")));
    }
    let (mut train, hold) = set.stratified_split(cfg.holdout_fraction, cfg.seed);
    compute_weights(&mut train);
    let base = fit_base_model(&train, cfg)?;

    let mut model = CameraModel {
        v: base.v,
        alpha: base.alpha,
        rbf: [Vec::new(), Vec::new(), Vec::new()],
        gamma: [1e-4; 3],
        sigma_f: 1.0,
    };
    let mut rmse_train = evaluate_rmse(&model, &train.samples)?;
    if let Ok(fit) = fit_gamut_correction(&train, &model, cfg) {
        let corrected = CameraModel {
            rbf: fit.terms,
            gamma: fit.gamma,
            ..model.clone()
        };
        let r = evaluate_rmse(&corrected, &train.samples)?;
        // The zero function is part of the hypothesis class; keep it if the
        // regression does not help on the training data.
        if r <= rmse_train {
            model = corrected;
            rmse_train = r;
        }
    }
    model.sigma_f = (2.0 * rmse_train).max(cfg.sigma_f_floor);
    let rmse_holdout = if hold.is_empty() {
        rmse_train
    } else {
        evaluate_rmse(&model, &hold.samples)?
    };
    Ok(Calibration {
        report: FitReport {
            rmse_train,
            rmse_holdout,
            iterations: base.iterations,
            restarts_used: base.restarts_used,
            converged: base.converged,
        },
        model,
        base,
    })
}
