//! Non-blind deconvolution with a hyper-Laplacian gradient prior, solved by
//! half-quadratic splitting. The probabilistic variant replaces the
//! squared-error data term with a per-pixel Mahalanobis distance under the
//! derendered covariances, handled by a second level of splitting.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{kernel_otf, Fft2};
use crate::image::{Image, JpegImage, RawImage};

/// Non-negative blur kernel of odd size with unit sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    /// Validates an already normalized kernel.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let k = Kernel::check(width, height, data)?;
        let s: f64 = k.data.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("kernel sums to {s}, expected 1")));
        }
        Ok(k)
    }

    /// Scales a non-negative kernel to unit sum.
    pub fn normalized(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let mut k = Kernel::check(width, height, data)?;
        let s: f64 = k.data.iter().sum();
        k.data.iter_mut().for_each(|v| *v /= s);
        Ok(k)
    }

    pub fn delta() -> Self {
        Kernel {
            width: 1,
            height: 1,
            data: vec![1.0],
        }
    }

    fn check(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::InvalidInput(format!("kernel size {width}x{height} must be odd")));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} taps for a {width}x{height} kernel", data.len())));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("kernel taps must be finite and non-negative".into()));
        }
        if !(data.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidInput("kernel has zero sum".into()));
        }
        Ok(Kernel { width, height, data })
    }
}

/// Exponent of the gradient prior.
pub const DEFAULT_GAMMA: f64 = 2.0 / 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSchedule {
    /// Increasing penalty weights of the gradient splitting.
    pub betas: Vec<f64>,
    /// Number of log-spaced data-splitting weights per `beta`.
    pub alpha_count: usize,
    /// The data-splitting ladder runs from `lo * lambda * min` to
    /// `hi * lambda * max` over the diagonals of all inverse covariances.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// z/u sweeps per `alpha`.
    pub inner: usize,
}

impl Default for SolverSchedule {
    fn default() -> Self {
        SolverSchedule {
            betas: beta_ladder(1.0, 256.0, 2.0 * std::f64::consts::SQRT_2),
            alpha_count: 8,
            alpha_lo: 4.0,
            alpha_hi: 4.0,
            inner: 1,
        }
    }
}

impl SolverSchedule {
    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if self.betas.is_empty() || self.betas.iter().any(|b| !(*b > 0.0)) || !increasing(&self.betas) {
            return Err(Error::Field {
                field: "betas".into(),
                message: "must be positive and strictly increasing".into(),
            });
        }
        if self.alpha_count == 0 || self.inner == 0 {
            return Err(Error::Field {
                field: "alpha_count".into(),
                message: "alpha_count and inner must be at least 1".into(),
            });
        }
        if !(self.alpha_lo > 0.0 && self.alpha_hi >= self.alpha_lo) {
            return Err(Error::Field {
                field: "alpha_lo".into(),
                message: "need 0 < alpha_lo <= alpha_hi".into(),
            });
        }
        Ok(())
    }

    /// Log-spaced weights between `lo` and `hi`.
    pub fn alphas(&self, lo: f64, hi: f64) -> Vec<f64> {
        let n = self.alpha_count;
        if n == 1 {
            return vec![hi];
        }
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

/// `start, start * ratio, ...` below `end`, then `end`.
pub fn beta_ladder(start: f64, end: f64, ratio: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut b = start;
    while b < end * (1.0 - 1e-9) {
        v.push(b);
        b *= ratio;
    }
    v.push(end);
    v
}

/// Derendered blurry image with its per-pixel covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurProblem {
    pub mu: RawImage,
    pub sigma: Image<[[f64; 3]; 3]>,
    pub kernel: Kernel,
    pub lambda: f64,
    pub gamma_exp: f64,
    pub sigma_z: f64,
}

impl BlurProblem {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.same_size(&self.sigma) {
            return Err(Error::DimensionMismatch("mean and covariance fields differ in size".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gamma_exp > 0.0 && self.gamma_exp <= 1.0) {
            return Err(Error::InvalidInput(format!("prior exponent must be in (0, 1], got {}", self.gamma_exp)));
        }
        if !(self.sigma_z >= 0.0) {
            return Err(Error::InvalidInput("sigma_z must be non-negative".into()));
        }
        Ok(())
    }
}

type Planes = [Vec<f64>; 3];

fn to_planes(img: &RawImage) -> Planes {
    std::array::from_fn(|c| img.channel(c))
}

fn from_planes(w: usize, h: usize, p: &Planes) -> RawImage {
    RawImage::from_planes(w, h, p).expect("planes match the image size")
}

/// Index with half-sample symmetric extension: `-1 -> 0`, `n -> n - 1`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// `(k * z)(n) = sum_m k(m) z(n - m)` with mirrored borders.
pub fn convolve_spatial(img: &RawImage, k: &Kernel) -> RawImage {
    let (cx, cy) = ((k.width / 2) as isize, (k.height / 2) as isize);
    let (w, h) = (img.width, img.height);
    Image::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for ky in 0..k.height {
            for kx in 0..k.width {
                let t = k.data[ky * k.width + kx];
                if t == 0.0 {
                    continue;
                }
                let sx = mirror(x as isize - (kx as isize - cx), w);
                let sy = mirror(y as isize - (ky as isize - cy), h);
                let p = img.get(sx, sy);
                for c in 0..3 {
                    acc[c] += t * p[c];
                }
            }
        }
        acc
    })
}

/// Convolution with periodic borders, through the FFT.
pub fn convolve_fft(img: &RawImage, k: &Kernel) -> RawImage {
    let plan = Fft2::new(img.width, img.height);
    let otf = kernel_otf(&plan, &k.data, k.width, k.height);
    let planes = to_planes(img);
    let out: Planes = std::array::from_fn(|c| apply_otf(&plan, &otf, &planes[c]));
    from_planes(img.width, img.height, &out)
}

fn apply_otf(plan: &Fft2, otf: &[Complex64], x: &[f64]) -> Vec<f64> {
    let mut f = plan.forward_real(x);
    for (v, k) in f.iter_mut().zip(otf) {
        *v *= k;
    }
    plan.inverse_real(f)
}

/// Minimizer of `beta/2 (v - w)^2 + |w|^gamma` over `w`.
pub fn shrinkage(v: f64, beta: f64, gamma: f64) -> f64 {
    assert!(beta > 0.0 && gamma > 0.0, "shrinkage needs beta > 0 and gamma > 0");
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { 0.0 } else { v };
    }
    let a = v.abs();
    let w = if gamma == 2.0 {
        beta * a / (beta + 2.0)
    } else if gamma == 1.0 {
        (a - 1.0 / beta).max(0.0)
    } else if (gamma - 2.0 / 3.0).abs() < 1e-15 {
        shrink_two_thirds(a, beta)
    } else {
        shrink_general(a, beta, gamma)
    };
    w.copysign(v)
}

fn shrink_cost(w: f64, a: f64, beta: f64, gamma: f64) -> f64 {
    0.5 * beta * (w - a) * (w - a) + w.abs().powf(gamma)
}

/// `gamma = 2/3`, `a > 0`. With `w = s^3` a stationary point satisfies the
/// quartic `s^4 - a s + q = 0`, `q = 2 / (3 beta)`.
fn shrink_two_thirds(a: f64, beta: f64) -> f64 {
    let q = 2.0 / (3.0 * beta);
    let mut best = 0.0;
    let mut best_cost = shrink_cost(0.0, a, beta, 2.0 / 3.0);
    let roots = quartic_positive_roots(a, q).unwrap_or_else(|| quartic_newton(a, q).into_iter().collect());
    for s in roots {
        let w = s * s * s;
        if w > 0.0 && w <= a {
            let c = shrink_cost(w, a, beta, 2.0 / 3.0);
            if c < best_cost {
                best = w;
                best_cost = c;
            }
        }
    }
    best
}

/// Positive real roots of `s^4 - a s + q` by Ferrari's method, or `None`
/// when the resolvent cubic's discriminant is too close to zero.
fn quartic_positive_roots(a: f64, q: f64) -> Option<Vec<f64>> {
    // (s^2 + y)^2 = 2y s^2 + a s + y^2 - q is a perfect square when
    // y^3 - q y - a^2 / 8 = 0.
    let r = a * a / 8.0;
    let disc = 0.25 * r * r - (q / 3.0).powi(3);
    let scale = (0.25 * r * r).max((q / 3.0).powi(3));
    if disc.abs() < 1e-12 * scale {
        return None;
    }
    let y = if disc > 0.0 {
        let sd = disc.sqrt();
        (0.5 * r + sd).cbrt() + (0.5 * r - sd).cbrt()
    } else {
        let m = 2.0 * (q / 3.0).sqrt();
        let theta = ((0.5 * r) / (q / 3.0).powf(1.5)).clamp(-1.0, 1.0).acos() / 3.0;
        m * theta.cos()
    };
    if !(y > 0.0) {
        return None;
    }
    let t = (2.0 * y).sqrt();
    // s^2 -+ t s + y -+ a / (2t) = 0
    let mut roots = Vec::with_capacity(4);
    for sign in [1.0, -1.0] {
        let b = -sign * t;
        let c = y - sign * a / (2.0 * t);
        let d = b * b - 4.0 * c;
        if d >= 0.0 {
            let sd = d.sqrt();
            roots.extend([(-b + sd) / 2.0, (-b - sd) / 2.0]);
        }
    }
    Some(roots.into_iter().filter(|s| *s > 0.0).map(|s| polish(s, a, q)).collect())
}

/// One Newton step on the quartic to clean up rounding.
fn polish(s: f64, a: f64, q: f64) -> f64 {
    let g = s.powi(4) - a * s + q;
    let dg = 4.0 * s.powi(3) - a;
    if dg.abs() > 1e-300 {
        let n = s - g / dg;
        if n > 0.0 {
            return n;
        }
    }
    s
}

/// The largest positive root of `s^4 - a s + q` by safeguarded Newton. The
/// quartic is convex for `s > 0` with its minimum at `(a/4)^(1/3)`; the
/// larger root is the one giving a local minimum of the shrinkage cost.
fn quartic_newton(a: f64, q: f64) -> Option<f64> {
    let g = |s: f64| s.powi(4) - a * s + q;
    let lo0 = (a / 4.0).cbrt();
    if g(lo0) > 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (lo0, a.cbrt());
    let mut s = hi;
    for _ in 0..200 {
        let dg = 4.0 * s.powi(3) - a;
        let mut n = s - g(s) / dg;
        if !(n > lo && n < hi) {
            n = 0.5 * (lo + hi);
        }
        if g(n) > 0.0 {
            hi = n;
        } else {
            lo = n;
        }
        if (n - s).abs() <= 1e-15 * n {
            return Some(n);
        }
        s = n;
    }
    Some(s)
}

/// Any exponent: the cost is convex on `w > w*`, `w* = (gamma (1 - gamma) / beta)^(1/(2 - gamma))`
/// (everywhere when `gamma >= 1`), so its only candidate minimizer besides
/// zero is the root of the derivative there.
fn shrink_general(a: f64, beta: f64, gamma: f64) -> f64 {
    let d = |w: f64| beta * (w - a) + gamma * w.powf(gamma - 1.0);
    let start = if gamma < 1.0 {
        (gamma * (1.0 - gamma) / beta).powf(1.0 / (2.0 - gamma)).min(a)
    } else {
        0.0
    };
    let mut best = 0.0;
    if d(start.max(1e-300)) < 0.0 {
        let (mut lo, mut hi) = (start, a);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if d(m) < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        let w = 0.5 * (lo + hi);
        if shrink_cost(w, a, beta, gamma) < shrink_cost(0.0, a, beta, gamma) {
            best = w;
        }
    }
    best
}

/// Periodic forward-difference transfer functions `e^{j w} - 1`.
fn gradient_otfs(w: usize, h: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let ax = 2.0 * std::f64::consts::PI * u as f64 / w as f64;
            let ay = 2.0 * std::f64::consts::PI * v as f64 / h as f64;
            dx.push(Complex64::new(ax.cos() - 1.0, ax.sin()));
            dy.push(Complex64::new(ay.cos() - 1.0, ay.sin()));
        }
    }
    (dx, dy)
}

/// Periodic forward differences along x and along rows.
pub fn gradients(z: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = z[y * w + (x + 1) % w] - z[i];
            gy[i] = z[((y + 1) % h) * w + x] - z[i];
        }
    }
    (gx, gy)
}

/// Fourier-domain operators shared by every solve on one image size.
pub struct Operators {
    pub width: usize,
    pub height: usize,
    plan: Fft2,
    k: Vec<Complex64>,
    dx: Vec<Complex64>,
    dy: Vec<Complex64>,
}

impl Operators {
    pub fn new(width: usize, height: usize, kernel: &Kernel) -> Self {
        let plan = Fft2::new(width, height);
        let k = kernel_otf(&plan, &kernel.data, kernel.width, kernel.height);
        let (dx, dy) = gradient_otfs(width, height);
        Operators {
            width,
            height,
            plan,
            k,
            dx,
            dy,
        }
    }

    /// Periodic `k * z` on one plane.
    pub fn blur(&self, z: &[f64]) -> Vec<f64> {
        apply_otf(&self.plan, &self.k, z)
    }

    /// Minimizer over `z` of
    /// `alpha/2 |k * z - u|^2 + beta/2 sum_i |grad_i z - w_i|^2` for one plane.
    pub fn z_update(&self, u: &[f64], wx: &[f64], wy: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
        let fu = self.plan.forward_real(u);
        let fx = self.plan.forward_real(wx);
        let fy = self.plan.forward_real(wy);
        let mut out = Vec::with_capacity(fu.len());
        for i in 0..fu.len() {
            let num = self.k[i].conj() * fu[i] * alpha + (self.dx[i].conj() * fx[i] + self.dy[i].conj() * fy[i]) * beta;
            let den = alpha * self.k[i].norm_sqr() + beta * (self.dx[i].norm_sqr() + self.dy[i].norm_sqr());
            assert!(den > 0.0, "z-update denominator vanished");
            out.push(num / den);
        }
        self.plan.inverse_real(out)
    }
}

/// Per-pixel minimizer of `lambda/2 (u - mu)^T S (u - mu) + alpha/2 |kz - u|^2`,
/// with `S` the inverse covariance.
pub fn u_update(mu: &[f64; 3], sigma_inv: &[[f64; 3]; 3], kz: &[f64; 3], lambda: f64, alpha: f64) -> [f64; 3] {
    let a = nalgebra::Matrix3::from_fn(|r, c| lambda * sigma_inv[r][c] + if r == c { alpha } else { 0.0 });
    let s = nalgebra::Matrix3::from_fn(|r, c| sigma_inv[r][c]);
    let rhs = s * nalgebra::Vector3::from(*mu) * lambda + nalgebra::Vector3::from(*kz) * alpha;
    let u = a
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| a.try_inverse().map(|i| i * rhs))
        .expect("alpha > 0 keeps the u-system positive definite");
    [u[0], u[1], u[2]]
}

/// Split objective value recorded after each step of the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub beta_index: usize,
    /// `None` for steps outside the data-splitting loop.
    pub alpha_index: Option<usize>,
    pub step: String,
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub entries: Vec<TraceEntry>,
}

impl SolverTrace {
    /// Whether the cost never rises (beyond a relative `tol`) within a group
    /// of steps sharing the same penalty weights.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.violations(tol).is_empty()
    }

    pub fn violations(&self, tol: f64) -> Vec<(usize, f64, f64)> {
        self.entries
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].beta_index == w[1].beta_index && w[0].alpha_index == w[1].alpha_index)
            .filter(|(_, w)| w[1].cost > w[0].cost + tol * w[0].cost.abs().max(1e-300))
            .map(|(i, w)| (i + 1, w[0].cost, w[1].cost))
            .collect()
    }
}

struct Tracer {
    enabled: bool,
    trace: SolverTrace,
}

impl Tracer {
    fn log(&mut self, beta_index: usize, alpha_index: Option<usize>, step: &str, cost: impl FnOnce() -> f64) {
        if self.enabled {
            self.trace.entries.push(TraceEntry {
                beta_index,
                alpha_index,
                step: step.into(),
                cost: cost(),
            });
        }
    }
}

fn prior_cost(w: &[Vec<f64>; 2], gamma: f64) -> f64 {
    w.iter().flatten().map(|v| v.abs().powf(gamma)).sum()
}

fn split_cost(ops: &Operators, z: &[f64], w: &[Vec<f64>; 2], beta: f64) -> f64 {
    let (gx, gy) = gradients(z, ops.width, ops.height);
    0.5 * beta
        * (gx.iter().zip(&w[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            + gy.iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn shrink_planes(ops: &Operators, z: &[f64], beta: f64, gamma: f64) -> [Vec<f64>; 2] {
    let (gx, gy) = gradients(z, ops.width, ops.height);
    [
        gx.iter().map(|&v| shrinkage(v, beta, gamma)).collect(),
        gy.iter().map(|&v| shrinkage(v, beta, gamma)).collect(),
    ]
}

/// Blend the borders toward a periodic blur of the image so the FFT solver
/// sees no wrap-around discontinuity. The blend weight rises from 0 at the
/// border to 1 one kernel autocorrelation length inside.
pub fn edge_taper(img: &RawImage, k: &Kernel) -> RawImage {
    let blurred = convolve_fft(img, k);
    let wx = taper_profile(img.width, &projection(k, true));
    let wy = taper_profile(img.height, &projection(k, false));
    Image::from_fn(img.width, img.height, |x, y| {
        let a = wx[x] * wy[y];
        let (p, b) = (img.get(x, y), blurred.get(x, y));
        std::array::from_fn(|c| a * p[c] + (1.0 - a) * b[c])
    })
}

fn projection(k: &Kernel, along_x: bool) -> Vec<f64> {
    if along_x {
        (0..k.width).map(|x| (0..k.height).map(|y| k.data[y * k.width + x]).sum()).collect()
    } else {
        (0..k.height).map(|y| k.data[y * k.width..(y + 1) * k.width].iter().sum()).collect()
    }
}

fn taper_profile(n: usize, p: &[f64]) -> Vec<f64> {
    // Normalized autocorrelation at lags 0..len(p).
    let ac: Vec<f64> = (0..p.len())
        .map(|lag| p.iter().zip(&p[lag..]).map(|(a, b)| a * b).sum())
        .collect();
    let ac0 = ac[0].max(1e-300);
    (0..n)
        .map(|i| {
            let d = i.min(n - 1 - i);
            1.0 - ac.get(d).map_or(0.0, |v| v / ac0)
        })
        .collect()
}

/// Hyper-Laplacian deconvolution of a linear image.
pub fn deconvolve_deterministic(x: &RawImage, k: &Kernel, lambda: f64, gamma: f64, schedule: &SolverSchedule) -> Result<RawImage> {
    deconvolve_deterministic_traced(x, k, lambda, gamma, schedule, false).map(|r| r.0)
}

pub fn deconvolve_deterministic_traced(
    x: &RawImage,
    k: &Kernel,
    lambda: f64,
    gamma: f64,
    schedule: &SolverSchedule,
    trace: bool,
) -> Result<(RawImage, SolverTrace)> {
    schedule.validate()?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("prior exponent must be positive, got {gamma}")));
    }
    let (w, h) = (x.width, x.height);
    let ops = Operators::new(w, h, k);
    let obs = to_planes(&edge_taper(x, k));
    let results: Vec<(Vec<f64>, SolverTrace)> = (0..3)
        .into_par_iter()
        .map(|c| {
            let mut tr = Tracer {
                enabled: trace,
                trace: SolverTrace::default(),
            };
            let xc = &obs[c];
            let mut z = xc.clone();
            let mut wf = [vec![0.0; w * h], vec![0.0; w * h]];
            for (bi, &beta) in schedule.betas.iter().enumerate() {
                let cost = |z: &[f64], wf: &[Vec<f64>; 2]| {
                    0.5 * lambda * sq_dist(&ops.blur(z), xc) + prior_cost(wf, gamma) + split_cost(&ops, z, wf, beta)
                };
                tr.log(bi, None, "start", || cost(&z, &wf));
                wf = shrink_planes(&ops, &z, beta, gamma);
                tr.log(bi, None, "w", || cost(&z, &wf));
                z = ops.z_update(xc, &wf[0], &wf[1], lambda, beta);
                tr.log(bi, None, "z", || cost(&z, &wf));
            }
            (z, tr.trace)
        })
        .collect();
    finish(w, h, results)
}

fn finish(w: usize, h: usize, results: Vec<(Vec<f64>, SolverTrace)>) -> Result<(RawImage, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (z, t) in results {
        planes.push(z.into_iter().map(|v| v.max(0.0)).collect());
        trace.entries.extend(t.entries);
    }
    let planes: Planes = planes.try_into().expect("three channels");
    Ok((from_planes(w, h, &planes), trace))
}

/// Median per-channel variance `Sigma_cc + sigma_z^2` over an image. Scales a
/// deterministic data weight to the probabilistic one.
pub fn median_variance(sigma: &Image<[[f64; 3]; 3]>, sigma_z: f64) -> f64 {
    let s2 = sigma_z * sigma_z;
    let mut diag: Vec<f64> = sigma.data.iter().flat_map(|s| (0..3).map(move |c| s[c][c] + s2)).collect();
    if diag.is_empty() {
        return s2;
    }
    diag.sort_by(|a, b| a.total_cmp(b));
    diag[diag.len() / 2]
}

/// Per-pixel `(Sigma + sigma_z^2 I)^{-1}`.
pub fn inverse_covariances(sigma: &Image<[[f64; 3]; 3]>, sigma_z: f64) -> Result<Vec<[[f64; 3]; 3]>> {
    let s2 = sigma_z * sigma_z;
    sigma
        .data
        .iter()
        .map(|s| {
            let m = nalgebra::Matrix3::from_fn(|r, c| s[r][c] + if r == c { s2 } else { 0.0 });
            let inv = m
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::RankDeficient("pixel covariance is not positive definite".into()))?;
            Ok(std::array::from_fn(|r| std::array::from_fn(|c| 0.5 * (inv[(r, c)] + inv[(c, r)]))))
        })
        .collect()
}

/// Deconvolution weighting each pixel's data term by its inverse covariance.
pub fn deconvolve_probabilistic(problem: &BlurProblem, schedule: &SolverSchedule) -> Result<RawImage> {
    deconvolve_probabilistic_traced(problem, schedule, false).map(|r| r.0)
}

pub fn deconvolve_probabilistic_traced(
    problem: &BlurProblem,
    schedule: &SolverSchedule,
    trace: bool,
) -> Result<(RawImage, SolverTrace)> {
    problem.validate()?;
    schedule.validate()?;
    let (w, h) = (problem.mu.width, problem.mu.height);
    let n = w * h;
    let lambda = problem.lambda;
    let gamma = problem.gamma_exp;
    let ops = Operators::new(w, h, &problem.kernel);
    let mu_img = edge_taper(&problem.mu, &problem.kernel);
    let mu = &mu_img.data;
    let sinv = inverse_covariances(&problem.sigma, problem.sigma_z)?;
    let (dmin, dmax) = sinv
        .iter()
        .flat_map(|s| (0..3).map(move |c| s[c][c]))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let alphas = schedule.alphas(schedule.alpha_lo * lambda * dmin, schedule.alpha_hi * lambda * dmax);

    let mut tr = Tracer {
        enabled: trace,
        trace: SolverTrace::default(),
    };
    let data_cost = |u: &[[f64; 3]]| -> f64 {
        0.5 * lambda
            * u.iter()
                .zip(mu)
                .zip(&sinv)
                .map(|((u, m), s)| {
                    let d: [f64; 3] = std::array::from_fn(|c| u[c] - m[c]);
                    (0..3).map(|r| d[r] * (0..3).map(|c| s[r][c] * d[c]).sum::<f64>()).sum::<f64>()
                })
                .sum::<f64>()
    };
    let mut z: Planes = std::array::from_fn(|c| mu_img.channel(c));
    let mut wf: [[Vec<f64>; 2]; 3] = std::array::from_fn(|_| [vec![0.0; n], vec![0.0; n]]);
    let mut u: Vec<[f64; 3]> = mu.clone();
    for (bi, &beta) in schedule.betas.iter().enumerate() {
        let cost = |z: &Planes, wf: &[[Vec<f64>; 2]; 3], u: &[[f64; 3]], alpha: f64| {
            let mut c = data_cost(u);
            for ch in 0..3 {
                let kz = ops.blur(&z[ch]);
                c += 0.5 * alpha * kz.iter().zip(u).map(|(a, b)| (a - b[ch]).powi(2)).sum::<f64>();
                c += prior_cost(&wf[ch], gamma) + split_cost(&ops, &z[ch], &wf[ch], beta);
            }
            c
        };
        // The w-step is checked against the cost at the last data-splitting
        // weight, with `u` as left by the previous round.
        let a_prev = *alphas.last().expect("non-empty ladder");
        tr.log(bi, None, "start", || cost(&z, &wf, &u, a_prev));
        for ch in 0..3 {
            wf[ch] = shrink_planes(&ops, &z[ch], beta, gamma);
        }
        tr.log(bi, None, "w", || cost(&z, &wf, &u, a_prev));
        u.clone_from(mu);
        for (ai, &alpha) in alphas.iter().enumerate() {
            tr.log(bi, Some(ai), "start", || cost(&z, &wf, &u, alpha));
            for _ in 0..schedule.inner {
                let next: Vec<Vec<f64>> = (0..3)
                    .into_par_iter()
                    .map(|ch| {
                        let uc: Vec<f64> = u.iter().map(|p| p[ch]).collect();
                        ops.z_update(&uc, &wf[ch][0], &wf[ch][1], alpha, beta)
                    })
                    .collect();
                z = next.try_into().expect("three channels");
                tr.log(bi, Some(ai), "z", || cost(&z, &wf, &u, alpha));
                let kz: Planes = std::array::from_fn(|ch| ops.blur(&z[ch]));
                u = (0..n)
                    .into_par_iter()
                    .map(|p| u_update(&mu[p], &sinv[p], &[kz[0][p], kz[1][p], kz[2][p]], lambda, alpha))
                    .collect();
                tr.log(bi, Some(ai), "u", || cost(&z, &wf, &u, alpha));
            }
        }
    }
    let planes = z.map(|p| p.into_iter().map(|v| v.max(0.0)).collect());
    Ok((from_planes(w, h, &planes), tr.trace))
}

/// PSNR of two 8-bit images in dB, capped at 99 for identical images.
pub fn psnr(a: &JpegImage, b: &JpegImage) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.data.is_empty() {
        return Err(Error::EmptySet);
    }
    let se: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .flat_map(|(p, q)| (0..3).map(move |c| (p.0[c] as f64 - q.0[c] as f64).powi(2)))
        .sum();
    let mse = se / (3 * a.data.len()) as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(99.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_ends_at_256() {
        let b = beta_ladder(1.0, 256.0, 2.0 * std::f64::consts::SQRT_2);
        assert_eq!(b.first(), Some(&1.0));
        assert_eq!(b.last(), Some(&256.0));
        assert!(b.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn shrinkage_landmarks() {
        assert_eq!(shrinkage(0.0, 3.0, DEFAULT_GAMMA), 0.0);
        assert!((shrinkage(0.7, 3.0, 2.0) - 3.0 * 0.7 / 5.0).abs() < 1e-15);
        assert_eq!(shrinkage(-0.4, 2.0, DEFAULT_GAMMA), -shrinkage(0.4, 2.0, DEFAULT_GAMMA));
    }

    #[test]
    fn even_kernel_is_rejected() {
        assert!(Kernel::new(2, 1, vec![0.5, 0.5]).is_err());
        assert!(Kernel::new(3, 1, vec![0.5, 0.5, 0.5]).is_err());
        assert!(Kernel::normalized(3, 1, vec![1.0, 2.0, 1.0]).is_ok());
    }
}
