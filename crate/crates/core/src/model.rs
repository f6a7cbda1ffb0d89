//! Forward tone-map: linear transform, per-channel monotone polynomial,
//! bound, cross-channel RBF gamut correction and 8-bit quantization.

use serde::{Deserialize, Serialize};

/// Polynomial degree of the per-channel tone curve.
pub const POLY_DEGREE: usize = 7;
pub const POLY_LEN: usize = POLY_DEGREE + 1;

/// Linear sensor color, nominally in `[0, 1]^3`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RawColor(pub [f64; 3]);

impl RawColor {
    pub fn new(r: f64, g: f64, b: f64) -> Self {
        RawColor([r, g, b])
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|c| c.is_finite() && *c >= 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        RawColor([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Rendered 8-bit color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct JpegColor(pub [u8; 3]);

impl JpegColor {
    pub fn new(r: u8, g: u8, b: u8) -> Self {
        JpegColor([r, g, b])
    }

    pub fn as_f64(&self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }
}

/// One term of a channel's gamut correction: `w * exp(-gamma * |y - center|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfTerm {
    pub center: [f64; 3],
    pub w: f64,
}

/// Full forward tone-map. Immutable once built; every method is pure.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    /// Rows of the linear color transform.
    pub v: [[f64; 3]; 3],
    /// Polynomial coefficients, lowest order first, codomain in gray levels.
    pub alpha: [f64; POLY_LEN],
    /// Gamut-correction terms per output channel.
    pub rbf: [Vec<RbfTerm>; 3],
    /// RBF inverse bandwidth per channel, gray-level^-2.
    pub gamma: [f64; 3],
    /// Model-error standard deviation in gray levels.
    pub sigma_f: f64,
}

impl CameraModel {
    /// `v = I`, `f(t) = 255 t`, no gamut correction.
    pub fn identity() -> Self {
        let mut alpha = [0.0; POLY_LEN];
        alpha[1] = 255.0;
        CameraModel {
            v: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            alpha,
            rbf: [Vec::new(), Vec::new(), Vec::new()],
            gamma: [1e-4; 3],
            sigma_f: 1.0,
        }
    }

    /// Base (pre-bound) tone-mapped values `f(v_c . x)`.
    pub fn tone(&self, x: &RawColor) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = eval_polynomial(&self.alpha, dot(&self.v[c], &x.0));
        }
        out
    }

    pub fn gamut_correction(&self, ytilde: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = rbf_sum(&self.rbf[c], self.gamma[c], ytilde);
        }
        out
    }

    /// `B(f(Vx)) + g(f(Vx))`, before quantization.
    pub fn render_continuous(&self, x: &RawColor) -> [f64; 3] {
        let yt = self.tone(x);
        let g = self.gamut_correction(&yt);
        [
            bound(yt[0]) + g[0],
            bound(yt[1]) + g[1],
            bound(yt[2]) + g[2],
        ]
    }

    pub fn render(&self, x: &RawColor) -> JpegColor {
        quantize(&self.render_continuous(x))
    }

    pub fn has_gamut_correction(&self) -> bool {
        self.rbf.iter().any(|r| !r.is_empty())
    }

    pub fn polynomial_derivative(&self, t: f64) -> f64 {
        eval_polynomial_derivative(&self.alpha, t)
    }
}

/// Horner evaluation of `sum_i alpha_i t^i`.
pub fn eval_polynomial(alpha: &[f64], t: f64) -> f64 {
    alpha.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

pub fn eval_polynomial_derivative(alpha: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for i in (1..alpha.len()).rev() {
        acc = acc * t + alpha[i] * i as f64;
    }
    acc
}

pub fn rbf_sum(terms: &[RbfTerm], gamma: f64, y: &[f64; 3]) -> f64 {
    terms
        .iter()
        .map(|t| {
            let d0 = y[0] - t.center[0];
            let d1 = y[1] - t.center[1];
            let d2 = y[2] - t.center[2];
            t.w * (-gamma * (d0 * d0 + d1 * d1 + d2 * d2)).exp()
        })
        .sum()
}

/// Clamp to the 8-bit range.
pub fn bound(t: f64) -> f64 {
    t.clamp(0.0, 255.0)
}

/// Round half away from zero, then clamp to `[0, 255]`.
pub fn quantize_channel(t: f64) -> u8 {
    if t.is_nan() {
        return 0;
    }
    t.round().clamp(0.0, 255.0) as u8
}

pub fn quantize(y: &[f64; 3]) -> JpegColor {
    JpegColor([
        quantize_channel(y[0]),
        quantize_channel(y[1]),
        quantize_channel(y[2]),
    ])
}

#[inline]
pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
