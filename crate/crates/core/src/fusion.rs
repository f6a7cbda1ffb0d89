//! Exposure fusion of derendered colors.
//!
//! Each JPEG observation `y_i` at exposure `alpha_i` gives a Gaussian over the
//! unit-exposure color with mean `mu(y_i) / alpha_i` and covariance
//! `(Sigma(y_i) + sigma_z^2 I) / alpha_i^2`. The probabilistic estimate is the
//! product of these Gaussians; the deterministic one is the least-squares fit
//! of `mu(y_i) ~ alpha_i x`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::derender::{Derenderer, InverseGaussian};
use crate::error::{Error, Result};
use crate::image::{JpegImage, RawImage};
use crate::model::{JpegColor, RawColor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExposureObservation {
    pub y: JpegColor,
    pub alpha: f64,
    /// Inverse of `y` at unit exposure.
    pub inv: InverseGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Photo-sensor noise std, RAW units.
    pub sigma_z: f64,
    pub clip_threshold: f64,
    /// Variance given to clipped channels, RAW^2 units.
    pub clip_variance: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            sigma_z: 1e-3,
            clip_threshold: 0.98,
            clip_variance: 1e6,
        }
    }
}

impl FusionConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_z > 0.0 && self.clip_threshold > 0.0 && self.clip_variance > 0.0) {
            return Err(Error::InvalidInput(format!("fusion settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A fused unit-exposure color. A channel is unreliable when it was clipped
/// in every observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusedColor {
    pub x: RawColor,
    pub unreliable: [bool; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Deterministic,
    Probabilistic,
}

fn clipped_channels(inv: &InverseGaussian, cfg: &FusionConfig) -> [bool; 3] {
    std::array::from_fn(|c| inv.mu.0[c] > cfg.clip_threshold)
}

/// Replace the variance of clipped channels by `clip_variance` and drop
/// their correlations.
pub fn clip_adjust(inv: &InverseGaussian, cfg: &FusionConfig) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut sigma = inv.sigma;
    for (c, clipped) in clipped_channels(inv, cfg).into_iter().enumerate() {
        if clipped {
            for k in 0..3 {
                sigma[c][k] = 0.0;
                sigma[k][c] = 0.0;
            }
            sigma[c][c] = cfg.clip_variance;
        }
    }
    (inv.mu.0, sigma)
}

fn check(obs: &[ExposureObservation]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(o) = obs.iter().find(|o| !(o.alpha > 0.0 && o.alpha.is_finite())) {
        return Err(Error::InvalidInput(format!("exposure must be positive, got {}", o.alpha)));
    }
    Ok(())
}

fn all_clipped(obs: &[ExposureObservation], cfg: &FusionConfig) -> [bool; 3] {
    let mut all = [true; 3];
    for o in obs {
        for (c, clipped) in clipped_channels(&o.inv, cfg).into_iter().enumerate() {
            all[c] &= clipped;
        }
    }
    all
}

/// `x_c = sum alpha_i mu_ic / sum alpha_i^2` over the observations in which
/// channel `c` is not clipped. Channels clipped everywhere use every
/// observation and are flagged.
pub fn fuse_deterministic(obs: &[ExposureObservation], cfg: &FusionConfig) -> Result<FusedColor> {
    check(obs)?;
    let unreliable = all_clipped(obs, cfg);
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for o in obs {
            if unreliable[c] || o.inv.mu.0[c] <= cfg.clip_threshold {
                num += o.alpha * o.inv.mu.0[c];
                den += o.alpha * o.alpha;
            }
        }
        *xc = num / den;
    }
    Ok(FusedColor {
        x: RawColor(x),
        unreliable,
    })
}

/// Precision-weighted mean of the per-observation Gaussians.
pub fn fuse_probabilistic(obs: &[ExposureObservation], cfg: &FusionConfig) -> Result<FusedColor> {
    check(obs)?;
    cfg.validate()?;
    let s2 = cfg.sigma_z * cfg.sigma_z;
    let mut precision = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for o in obs {
        let (mu, sigma) = clip_adjust(&o.inv, cfg);
        let cov = Matrix3::from_fn(|a, b| sigma[a][b] + if a == b { s2 } else { 0.0 });
        let inv_cov = invert_spd(&cov)?;
        let a2 = o.alpha * o.alpha;
        precision += inv_cov * a2;
        // alpha^2 C^-1 (mu / alpha)
        rhs += inv_cov * Vector3::from(mu) * o.alpha;
    }
    let x = precision
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| precision.try_inverse().map(|p| p * rhs))
        .ok_or_else(|| Error::RankDeficient("singular fused precision".into()))?;
    Ok(FusedColor {
        x: RawColor([x[0], x[1], x[2]]),
        unreliable: all_clipped(obs, cfg),
    })
}

fn invert_spd(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    m.cholesky()
        .map(|ch| ch.inverse())
        .or_else(|| m.try_inverse())
        .ok_or_else(|| Error::RankDeficient("observation covariance is singular".into()))
}

pub fn fuse(obs: &[ExposureObservation], cfg: &FusionConfig, method: FusionMethod) -> Result<FusedColor> {
    match method {
        FusionMethod::Deterministic => fuse_deterministic(obs, cfg),
        FusionMethod::Probabilistic => fuse_probabilistic(obs, cfg),
    }
}

/// `|x - x_true| / |x_true|`.
pub fn relative_rmse(x: &RawColor, x_true: &RawColor) -> Result<f64> {
    let n = x_true.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let d = (0..3).map(|c| (x.0[c] - x_true.0[c]).powi(2)).sum::<f64>().sqrt();
    Ok(d / n)
}

/// Fuse a stack of registered JPEG images into a unit-exposure linear image.
pub fn fuse_stack(
    der: &Derenderer,
    stack: &[(JpegImage, f64)],
    cfg: &FusionConfig,
    method: FusionMethod,
) -> Result<RawImage> {
    use rayon::prelude::*;
    let (first, _) = stack.first().ok_or(Error::EmptySet)?;
    if let Some((img, _)) = stack.iter().find(|(img, _)| !img.same_size(first)) {
        return Err(Error::DimensionMismatch(format!(
            "stack images are {}x{} and {}x{}",
            first.width, first.height, img.width, img.height
        )));
    }
    let inverses = stack
        .iter()
        .map(|(img, _)| der.derender_image(img))
        .collect::<Result<Vec<_>>>()?;
    let pixels = (0..first.data.len())
        .into_par_iter()
        .map(|p| {
            let obs: Vec<ExposureObservation> = stack
                .iter()
                .zip(&inverses)
                .map(|((img, alpha), inv)| ExposureObservation {
                    y: img.data[p],
                    alpha: *alpha,
                    inv: inv.data[p],
                })
                .collect();
            fuse(&obs, cfg, method).map(|f| f.x.0)
        })
        .collect::<Result<Vec<_>>>()?;
    RawImage::from_vec(first.width, first.height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(mu: [f64; 3], sigma: [[f64; 3]; 3], alpha: f64) -> ExposureObservation {
        ExposureObservation {
            y: JpegColor([0; 3]),
            alpha,
            inv: InverseGaussian {
                mu: RawColor(mu),
                sigma,
                clipped: [false; 3],
                mass: 1.0,
            },
        }
    }

    fn iso(v: f64) -> [[f64; 3]; 3] {
        [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
    }

    #[test]
    fn unclipped_is_unchanged() {
        let o = obs([0.5; 3], [[1e-4, 2e-5, 0.0], [2e-5, 1e-4, 0.0], [0.0, 0.0, 1e-4]], 1.0);
        let (mu, s) = clip_adjust(&o.inv, &FusionConfig::default());
        assert_eq!(mu, [0.5; 3]);
        assert_eq!(s, o.inv.sigma);
    }

    #[test]
    fn clipped_channel_gets_huge_variance() {
        let o = obs([0.99, 0.5, 0.5], [[1e-4, 2e-5, 3e-5], [2e-5, 1e-4, 0.0], [3e-5, 0.0, 1e-4]], 1.0);
        let (_, s) = clip_adjust(&o.inv, &FusionConfig::default());
        assert_eq!(s[0][0], 1e6);
        assert_eq!([s[0][1], s[0][2], s[1][0], s[2][0]], [0.0; 4]);
        assert_eq!(s[1][1], 1e-4);
    }

    #[test]
    fn single_observation() {
        let cfg = FusionConfig::default();
        let o = [obs([0.2, 0.3, 0.4], iso(1e-4), 1.0)];
        assert_eq!(fuse_deterministic(&o, &cfg).unwrap().x, RawColor([0.2, 0.3, 0.4]));
        let o = [obs([0.2, 0.3, 0.4], iso(1e-4), 2.0)];
        let p = fuse_probabilistic(&o, &cfg).unwrap().x;
        for c in 0..3 {
            assert!((p.0[c] - o[0].inv.mu.0[c] / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_exposures_arithmetic() {
        let o = [obs([0.2; 3], iso(1e-4), 1.0), obs([0.4; 3], iso(1e-4), 2.0)];
        let x = fuse_deterministic(&o, &FusionConfig::default()).unwrap().x;
        for c in 0..3 {
            assert!((x.0[c] - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn all_clipped_channel_is_flagged() {
        let o = [obs([0.99, 0.2, 0.2], iso(1e-4), 1.0), obs([0.995, 0.4, 0.4], iso(1e-4), 2.0)];
        let cfg = FusionConfig::default();
        assert_eq!(fuse_deterministic(&o, &cfg).unwrap().unreliable, [true, false, false]);
        assert_eq!(fuse_probabilistic(&o, &cfg).unwrap().unreliable, [true, false, false]);
    }

    #[test]
    fn clipped_observation_is_ignored_per_channel() {
        let o = [obs([0.3, 0.2, 0.2], iso(1e-4), 1.0), obs([0.99, 0.4, 0.4], iso(1e-4), 2.0)];
        let x = fuse_deterministic(&o, &FusionConfig::default()).unwrap().x;
        assert!((x.0[0] - 0.3).abs() < 1e-15);
        assert!((x.0[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = FusionConfig::default();
        assert!(matches!(fuse_deterministic(&[], &cfg), Err(Error::EmptySet)));
        assert!(matches!(
            fuse_probabilistic(&[obs([0.2; 3], iso(1e-4), 0.0)], &cfg),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn relative_error_examples() {
        let t = RawColor([0.1, 0.2, 0.3]);
        assert_eq!(relative_rmse(&t, &t).unwrap(), 0.0);
        assert!((relative_rmse(&t.scaled(1.1), &t).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(relative_rmse(&t, &RawColor([0.0; 3])), Err(Error::ZeroNorm)));
    }
}
