//! Lambertian photometric stereo on derendered images.
//!
//! Each pixel's color under light `i` is `x_i = a (l_i . n)` for a color
//! albedo `a`. Colors are projected onto one channel combination `c`, and
//! the pseudo-normal `b = (c . a) n` is solved by (weighted) least squares.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::derender::InverseGaussian;
use crate::error::{Error, Result};
use crate::fft::{frequency, Fft2};
use crate::image::Image;

/// Light directions scaled by source strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightRig {
    pub directions: Vec<[f64; 3]>,
}

impl LightRig {
    pub fn new(directions: Vec<[f64; 3]>) -> Result<Self> {
        if directions.len() < 3 {
            return Err(Error::InsufficientData(format!("{} lights, need at least 3", directions.len())));
        }
        if directions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite light direction".into()));
        }
        let gram = gram(&directions, None);
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.max();
        if !(eig.eigenvalues.min() > 1e-10 * max) {
            return Err(Error::RankDeficient("light directions do not span 3-D".into()));
        }
        Ok(LightRig { directions })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Pseudo-normal `b = rho * nu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalEstimate {
    pub b: [f64; 3],
    pub nu: [f64; 3],
    pub rho: f64,
}

impl NormalEstimate {
    /// `None` for a zero pseudo-normal.
    pub fn from_pseudonormal(b: [f64; 3]) -> Option<Self> {
        let rho = norm(&b);
        if !(rho > 0.0) || !rho.is_finite() {
            return None;
        }
        Some(NormalEstimate {
            b,
            nu: b.map(|v| v / rho),
            rho,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PstereoMode {
    #[serde(alias = "det")]
    Deterministic,
    #[serde(alias = "prob")]
    Probabilistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PstereoConfig {
    /// Sensor noise std added to every covariance, RAW units.
    pub sigma_z: f64,
    /// Lights dropped from each end of the brightness ranking.
    pub trim: usize,
}

impl Default for PstereoConfig {
    fn default() -> Self {
        PstereoConfig { sigma_z: 1e-3, trim: 1 }
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn outer_sum<'a>(vs: impl Iterator<Item = &'a [f64; 3]>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for v in vs {
        let v = Vector3::from(*v);
        m += v * v.transpose();
    }
    m
}

/// `sum_i w_i l_i l_i^T`.
fn gram(l: &[[f64; 3]], w: Option<&[f64]>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (i, li) in l.iter().enumerate() {
        let v = Vector3::from(*li);
        m += v * v.transpose() * w.map_or(1.0, |w| w[i]);
    }
    m
}

/// Unit vector with the sign making `sum_i c . x_i` non-negative.
fn orient(c: Vector3<f64>, xs: &[[f64; 3]]) -> [f64; 3] {
    let c = c.normalize();
    let s: f64 = xs.iter().map(|x| c.dot(&Vector3::from(*x))).sum();
    let c = if s < 0.0 { -c } else { c };
    [c[0], c[1], c[2]]
}

fn top_eigenvector(m: Matrix3<f64>) -> Vector3<f64> {
    let eig = SymmetricEigen::new(m);
    let k = eig.eigenvalues.imax();
    eig.eigenvectors.column(k).into_owned()
}

/// Channel combination capturing the most energy of the colors: the top
/// eigenvector of `sum_i x_i x_i^T`.
pub fn channel_weights_deterministic(colors: &[[f64; 3]]) -> Result<[f64; 3]> {
    if colors.is_empty() {
        return Err(Error::EmptySet);
    }
    let m = outer_sum(colors.iter());
    if !(m.abs().max() > 0.0) {
        return Err(Error::ZeroMatrix("all colors are zero".into()));
    }
    Ok(orient(top_eigenvector(m), colors))
}

/// Channel combination maximizing `sum (c . mu_i)^2 / sum c^T Sigma_i c`:
/// the top generalized eigenvector of `(sum mu mu^T, sum Sigma)`.
pub fn channel_weights_snr(obs: &[InverseGaussian]) -> Result<[f64; 3]> {
    if obs.is_empty() {
        return Err(Error::EmptySet);
    }
    let mus: Vec<[f64; 3]> = obs.iter().map(|o| o.mu.0).collect();
    let a = outer_sum(mus.iter());
    let b = obs
        .iter()
        .fold(Matrix3::zeros(), |acc, o| acc + Matrix3::from_fn(|r, c| o.sigma[r][c]));
    let chol = b
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("summed covariance is not positive definite".into()))?;
    // With B = L L^T the problem becomes symmetric in w = L^T c.
    let l = chol.l();
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("singular Cholesky factor".into()))?;
    let m = l_inv * a * l_inv.transpose();
    let m = 0.5 * (m + m.transpose());
    let w = top_eigenvector(m);
    let c = l_inv.transpose() * w;
    Ok(orient(c, &mus))
}

/// Least-squares `b` minimizing `|L b - I|^2`.
pub fn solve_pseudonormal(l: &[[f64; 3]], intensities: &[f64]) -> Result<[f64; 3]> {
    solve_weighted(l, intensities, None)
}

/// Least squares with weights `1 / variance_i`.
pub fn solve_pseudonormal_weighted(l: &[[f64; 3]], m: &[f64], variances: &[f64]) -> Result<[f64; 3]> {
    if variances.len() != l.len() {
        return Err(Error::DimensionMismatch(format!("{} variances for {} lights", variances.len(), l.len())));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidInput(format!("variance must be positive, got {v}")));
    }
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    solve_weighted(l, m, Some(&w))
}

fn solve_weighted(l: &[[f64; 3]], m: &[f64], w: Option<&[f64]>) -> Result<[f64; 3]> {
    if l.len() != m.len() {
        return Err(Error::DimensionMismatch(format!("{} intensities for {} lights", m.len(), l.len())));
    }
    if l.len() < 3 {
        return Err(Error::InsufficientData(format!("{} lights, need at least 3", l.len())));
    }
    let a = gram(l, w);
    let mut rhs = Vector3::zeros();
    for (i, li) in l.iter().enumerate() {
        rhs += Vector3::from(*li) * (m[i] * w.map_or(1.0, |w| w[i]));
    }
    // Scale-aware rank test: a weight of 1e12 on one row must not hide the
    // remaining rows.
    let eig = SymmetricEigen::new(a);
    if !(eig.eigenvalues.min() > 1e-14 * eig.eigenvalues.max()) {
        return Err(Error::RankDeficient("normal equations are singular".into()));
    }
    let b = a
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("normal equations are not positive definite".into()))?
        .solve(&rhs);
    Ok([b[0], b[1], b[2]])
}

/// Angle between two unit vectors in degrees.
pub fn angular_error(nu: &[f64; 3], nu_true: &[f64; 3]) -> f64 {
    dot(nu, nu_true).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Normal at one pixel from its per-light distributions. `None` when the
/// pixel is dark under every kept light.
pub fn estimate_pixel(
    obs: &[InverseGaussian],
    rig: &LightRig,
    mode: PstereoMode,
    cfg: &PstereoConfig,
) -> Result<Option<NormalEstimate>> {
    if obs.len() != rig.len() {
        return Err(Error::DimensionMismatch(format!("{} observations for {} lights", obs.len(), rig.len())));
    }
    if rig.len() < 2 * cfg.trim + 3 {
        return Err(Error::InsufficientData(format!(
            "{} lights leave fewer than 3 after trimming {} from each end",
            rig.len(),
            cfg.trim
        )));
    }
    // Rank by mean channel value; ties go by light direction so the ranking
    // does not depend on the order the lights are given in.
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let key = |i: usize| obs[i].mu.0.iter().sum::<f64>() / 3.0;
    order.sort_by(|&a, &b| {
        key(a).total_cmp(&key(b)).then_with(|| {
            let (da, db) = (rig.directions[a], rig.directions[b]);
            da[0].total_cmp(&db[0]).then(da[1].total_cmp(&db[1])).then(da[2].total_cmp(&db[2]))
        })
    });
    let kept = &order[cfg.trim..order.len() - cfg.trim];
    let mus: Vec<[f64; 3]> = kept.iter().map(|&i| obs[i].mu.0).collect();
    if mus.iter().flatten().all(|v| *v <= 0.0) {
        return Ok(None);
    }
    let l: Vec<[f64; 3]> = kept.iter().map(|&i| rig.directions[i]).collect();
    let s2 = cfg.sigma_z * cfg.sigma_z;
    let b = match mode {
        PstereoMode::Deterministic => {
            let c = channel_weights_deterministic(&mus)?;
            let m: Vec<f64> = mus.iter().map(|x| dot(&c, x)).collect();
            solve_pseudonormal(&l, &m)?
        }
        PstereoMode::Probabilistic => {
            let padded: Vec<InverseGaussian> = kept
                .iter()
                .map(|&i| {
                    let mut o = obs[i];
                    for d in 0..3 {
                        o.sigma[d][d] += s2;
                    }
                    o
                })
                .collect();
            let c = channel_weights_snr(&padded)?;
            let m: Vec<f64> = mus.iter().map(|x| dot(&c, x)).collect();
            let var: Vec<f64> = padded
                .iter()
                .map(|o| {
                    let sc: [f64; 3] = std::array::from_fn(|r| dot(&o.sigma[r], &c));
                    dot(&c, &sc).max(s2)
                })
                .collect();
            solve_pseudonormal_weighted(&l, &m, &var)?
        }
    };
    Ok(NormalEstimate::from_pseudonormal(b))
}

/// Per-pixel normals from one derendered image per light.
pub fn estimate_normals(
    stack: &[Image<InverseGaussian>],
    rig: &LightRig,
    mode: PstereoMode,
    cfg: &PstereoConfig,
) -> Result<Image<Option<NormalEstimate>>> {
    let first = stack.first().ok_or(Error::EmptySet)?;
    if stack.len() != rig.len() {
        return Err(Error::DimensionMismatch(format!("{} images for {} lights", stack.len(), rig.len())));
    }
    if stack.iter().any(|im| !im.same_size(first)) {
        return Err(Error::DimensionMismatch("images differ in size".into()));
    }
    let data = (0..first.data.len())
        .into_par_iter()
        .map(|p| {
            let obs: Vec<InverseGaussian> = stack.iter().map(|im| im.data[p]).collect();
            estimate_pixel(&obs, rig, mode, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Image::from_vec(first.width, first.height, data)
}

/// Point distributions (zero covariance) for linear images.
pub fn exact_observations(image: &crate::image::RawImage) -> Image<InverseGaussian> {
    image.map(|x| InverseGaussian {
        mu: crate::model::RawColor(*x),
        sigma: [[0.0; 3]; 3],
        clipped: [false; 3],
        mass: 1.0,
    })
}

/// Below this `n_z` a normal yields no usable gradient.
pub const MIN_NZ: f64 = 1e-3;

/// Depth from a normal field by Frankot-Chellappa integration. Normals use
/// x to the right and y up; rows of the image run downward. Pixels without
/// a usable normal take the gradient of the nearest pixel that has one. The
/// result has zero mean.
pub fn integrate_normals(normals: &Image<Option<[f64; 3]>>) -> Image<f64> {
    let (w, h) = (normals.width, normals.height);
    // Surface slope along x and along image rows.
    let mut grad: Vec<Option<(f64, f64)>> = normals
        .data
        .iter()
        .map(|n| match n {
            Some(n) if n[2] > MIN_NZ => Some((-n[0] / n[2], n[1] / n[2])),
            _ => None,
        })
        .collect();
    if grad.iter().all(|g| g.is_none()) {
        return Image::filled(w, h, 0.0);
    }
    fill_nearest(&mut grad, w, h);
    let gx: Vec<f64> = grad.iter().map(|g| g.expect("filled").0).collect();
    let gy: Vec<f64> = grad.iter().map(|g| g.expect("filled").1).collect();
    let z = frankot_chellappa(&gx, &gy, w, h);
    Image::from_vec(w, h, z).expect("size preserved")
}

/// Integrate `dz/dx = gx`, `dz/drow = gy` with the gradients mirrored to a
/// `2w x 2h` periodic domain. Returns the zero-mean depth on the original
/// domain.
pub fn frankot_chellappa(gx: &[f64], gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (pw, ph) = (2 * w, 2 * h);
    let mut px = vec![Complex64::new(0.0, 0.0); pw * ph];
    let mut py = vec![Complex64::new(0.0, 0.0); pw * ph];
    for y in 0..ph {
        let (sy, fy) = if y < h { (y, 1.0) } else { (ph - 1 - y, -1.0) };
        for x in 0..pw {
            let (sx, fx) = if x < w { (x, 1.0) } else { (pw - 1 - x, -1.0) };
            // The depth is mirrored evenly, so each slope flips sign across
            // its own axis.
            px[y * pw + x].re = fx * gx[sy * w + sx];
            py[y * pw + x].re = fy * gy[sy * w + sx];
        }
    }
    let plan = Fft2::new(pw, ph);
    plan.forward(&mut px);
    plan.forward(&mut py);
    let mut z = vec![Complex64::new(0.0, 0.0); pw * ph];
    for v in 0..ph {
        let wy = frequency(v, ph);
        for u in 0..pw {
            let wx = frequency(u, pw);
            let d = wx * wx + wy * wy;
            if d == 0.0 {
                continue;
            }
            let i = v * pw + u;
            // Z = (-j wx Px - j wy Py) / (wx^2 + wy^2)
            z[i] = Complex64::new(0.0, -1.0) * (px[i] * wx + py[i] * wy) / d;
        }
    }
    plan.inverse(&mut z);
    let mut out: Vec<f64> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| z[y * pw + x].re).collect();
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    out
}

/// Replace `None` entries with the value of the nearest `Some` entry
/// (4-connected breadth-first order).
fn fill_nearest<T: Copy>(grid: &mut [Option<T>], w: usize, h: usize) {
    let mut queue: std::collections::VecDeque<usize> = (0..grid.len()).filter(|&i| grid[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let v = grid[i];
        let mut visit = |j: usize| {
            if grid[j].is_none() {
                grid[j] = v;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
}
