//! Probabilistic inverse of the forward tone-map.
//!
//! Under a uniform prior on a chromaticity cone and Gaussian model error of
//! std `sigma_f`, `p(x | y)` is proportional to
//! `1[x in prior] exp(-|y - J(x)|^2 / 2 sigma_f^2)`; its mean and covariance
//! are computed by numerical integration over the RAW cube.

mod grid;
pub mod prior;

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::image::{Image, JpegImage};
use crate::model::{CameraModel, JpegColor, RawColor};

pub use grid::{RawGridCache, CLIP_THRESHOLD, CUTOFF_SIGMAS, MIN_RESOLUTION};
pub use prior::{build_prior, PriorSupport};

pub const DEFAULT_RESOLUTION: usize = 64;

/// Gaussian summary of `p(x | y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseGaussian {
    pub mu: RawColor,
    /// Covariance in RAW^2 units, symmetric.
    pub sigma: [[f64; 3]; 3],
    pub clipped: [bool; 3],
    /// Unnormalized evidence: integral of the unnormalized posterior.
    pub mass: f64,
}

impl InverseGaussian {
    pub fn trace(&self) -> f64 {
        self.sigma[0][0] + self.sigma[1][1] + self.sigma[2][2]
    }

    /// Upper-triangular packing `xx, xy, xz, yy, yz, zz`.
    pub fn sigma_packed(&self) -> [f64; 6] {
        let s = &self.sigma;
        [s[0][0], s[0][1], s[0][2], s[1][1], s[1][2], s[2][2]]
    }
}

pub fn build_grid_cache(model: &CameraModel, prior: &PriorSupport, resolution: usize) -> Result<RawGridCache> {
    RawGridCache::build(model, prior, resolution)
}

/// Moments of `p(x | y)` using the model's `sigma_f`.
pub fn inverse_distribution(cache: &RawGridCache, y: &JpegColor) -> Result<InverseGaussian> {
    cache.inverse_with_sigma(y, cache.model().sigma_f)
}

/// The posterior mean, i.e. the deterministic RAW estimate.
pub fn deterministic_inverse(cache: &RawGridCache, y: &JpegColor) -> Result<RawColor> {
    inverse_distribution(cache, y).map(|g| g.mu)
}

/// Log density of a trivariate normal, with `1e-12 I` added to the covariance.
pub fn gaussian_log_density(mu: &[f64; 3], sigma: &[[f64; 3]; 3], x: &[f64; 3]) -> f64 {
    let m = nalgebra::Matrix3::from_fn(|a, b| sigma[a][b] + if a == b { 1e-12 } else { 0.0 });
    let d = nalgebra::Vector3::new(x[0] - mu[0], x[1] - mu[1], x[2] - mu[2]);
    match m.cholesky() {
        Some(ch) => {
            let l = ch.l();
            let logdet = 2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>();
            let maha = d.dot(&ch.solve(&d));
            -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + logdet + maha)
        }
        None => f64::NEG_INFINITY,
    }
}

pub fn log_likelihood(inv: &InverseGaussian, x: &RawColor) -> f64 {
    gaussian_log_density(&inv.mu.0, &inv.sigma, &x.0)
}

/// Memoizing front end over a grid cache. Queries for the same color return
/// identical results whether or not they hit the table.
pub struct Derenderer {
    cache: RawGridCache,
    memo: DashMap<JpegColor, Option<InverseGaussian>>,
}

impl Derenderer {
    pub fn new(model: &CameraModel, prior: &PriorSupport, resolution: usize) -> Result<Self> {
        Ok(Derenderer::from_cache(RawGridCache::build(model, prior, resolution)?))
    }

    pub fn from_cache(cache: RawGridCache) -> Self {
        Derenderer {
            cache,
            memo: DashMap::new(),
        }
    }

    pub fn cache(&self) -> &RawGridCache {
        &self.cache
    }

    pub fn model(&self) -> &CameraModel {
        self.cache.model()
    }

    pub fn inverse(&self, y: &JpegColor) -> Result<InverseGaussian> {
        if let Some(hit) = self.memo.get(y) {
            return hit.ok_or(Error::ZeroMass {
                y: y.0,
                cutoff: CUTOFF_SIGMAS * self.model().sigma_f,
            });
        }
        let r = inverse_distribution(&self.cache, y);
        match &r {
            Ok(g) => {
                self.memo.insert(*y, Some(*g));
            }
            Err(Error::ZeroMass { .. }) => {
                self.memo.insert(*y, None);
            }
            Err(_) => {}
        }
        r
    }

    /// As [`Derenderer::inverse`], doubling `sigma_f` (up to 8 times) for
    /// colors that no RAW value maps close to.
    pub fn inverse_widening(&self, y: &JpegColor) -> Result<InverseGaussian> {
        match self.inverse(y) {
            Err(Error::ZeroMass { .. }) => {
                let mut s = self.model().sigma_f;
                let mut last = None;
                for _ in 0..8 {
                    s *= 2.0;
                    match self.cache.inverse_with_sigma(y, s) {
                        Ok(g) => return Ok(g),
                        Err(e) => last = Some(e),
                    }
                }
                Err(last.expect("at least one attempt"))
            }
            r => r,
        }
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    /// Per-pixel inverse of an image. Each distinct color is solved once.
    pub fn derender_image(&self, img: &JpegImage) -> Result<Image<InverseGaussian>> {
        use rayon::prelude::*;
        let mut distinct: Vec<JpegColor> = img.data.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let solved: Vec<Result<InverseGaussian>> = distinct.par_iter().map(|y| self.inverse_widening(y)).collect();
        let mut table = std::collections::HashMap::with_capacity(distinct.len());
        for (y, r) in distinct.into_iter().zip(solved) {
            table.insert(y, r?);
        }
        Ok(img.map(|y| table[y]))
    }
}

/// Mean log-likelihood of true RAW values under the probabilistic inverse.
pub fn probabilistic_score(pairs: &[(RawColor, JpegColor)], der: &Derenderer) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut total = 0.0;
    for (x, y) in pairs {
        total += log_likelihood(&der.inverse_widening(y)?, x);
    }
    Ok(total / pairs.len() as f64)
}

/// Mean log-likelihood under isotropic Gaussians centered on the posterior
/// means, with a shared per-axis variance equal to the mean squared error of
/// those means (floored at `1e-12`).
pub fn deterministic_baseline_score(pairs: &[(RawColor, JpegColor)], der: &Derenderer) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 pairs".into()));
    }
    let mut mus = Vec::with_capacity(pairs.len());
    for (_, y) in pairs {
        mus.push(der.inverse_widening(y)?.mu);
    }
    Ok(isotropic_score(pairs.iter().map(|p| &p.0), &mus))
}

/// Mean isotropic-Gaussian log-likelihood of `xs` around `mus` with the
/// pooled per-axis squared error as variance.
pub fn isotropic_score<'a>(xs: impl Iterator<Item = &'a RawColor> + Clone, mus: &[RawColor]) -> f64 {
    let n = mus.len() as f64;
    let sse: f64 = xs
        .clone()
        .zip(mus)
        .map(|(x, m)| (0..3).map(|c| (x.0[c] - m.0[c]).powi(2)).sum::<f64>())
        .sum();
    let var = (sse / (3.0 * n)).max(1e-12);
    let sigma = [[var, 0.0, 0.0], [0.0, var, 0.0], [0.0, 0.0, var]];
    xs.zip(mus).map(|(x, m)| gaussian_log_density(&m.0, &sigma, &x.0)).sum::<f64>() / n
}
