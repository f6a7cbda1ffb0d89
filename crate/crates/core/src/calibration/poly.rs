//! Monotone polynomial step of the alternating base-model fit.
//!
//! The QP is posed in a shifted Legendre basis over `[0, t_max]` for
//! conditioning and converted back to monomial coefficients in `t`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{dot, POLY_LEN};

use super::qp::Qp;
use super::CalibrationSet;

/// Number of intervals of the monotonicity constraint grid.
pub const MONO_GRID_INTERVALS: usize = 200;

#[derive(Debug, Clone)]
pub struct PolyFit {
    pub alpha: [f64; POLY_LEN],
    /// Weighted objective of the fit.
    pub objective: f64,
    pub t_max: f64,
    /// Largest KKT violation reported by the QP, in the scaled problem.
    pub kkt_violation: f64,
}

/// Constraint points `t_k = t_max * k / 200`.
pub fn monotonicity_grid(t_max: f64) -> Vec<f64> {
    (0..=MONO_GRID_INTERVALS)
        .map(|k| t_max * k as f64 / MONO_GRID_INTERVALS as f64)
        .collect()
}

fn legendre_values(s: f64) -> [f64; POLY_LEN] {
    let mut p = [0.0; POLY_LEN];
    p[0] = 1.0;
    p[1] = s;
    for j in 1..POLY_LEN - 1 {
        let jf = j as f64;
        p[j + 1] = ((2.0 * jf + 1.0) * s * p[j] - jf * p[j - 1]) / (jf + 1.0);
    }
    p
}

fn legendre_derivatives(s: f64) -> [f64; POLY_LEN] {
    let p = legendre_values(s);
    let mut d = [0.0; POLY_LEN];
    d[1] = 1.0;
    for j in 1..POLY_LEN - 1 {
        d[j + 1] = d[j - 1] + (2.0 * j as f64 + 1.0) * p[j];
    }
    d
}

/// Monomial coefficients (in `t`) of `P_j(s)`, `s = 2 (t - lo) / (hi - lo) - 1`,
/// for every `j`.
fn legendre_to_monomial(lo: f64, hi: f64) -> [[f64; POLY_LEN]; POLY_LEN] {
    // Coefficients of P_j in s.
    let mut ps = [[0.0; POLY_LEN]; POLY_LEN];
    ps[0][0] = 1.0;
    ps[1][1] = 1.0;
    for j in 1..POLY_LEN - 1 {
        let jf = j as f64;
        for k in 0..POLY_LEN {
            let mut v = -jf * ps[j - 1][k];
            if k > 0 {
                v += (2.0 * jf + 1.0) * ps[j][k - 1];
            }
            ps[j + 1][k] = v / (jf + 1.0);
        }
    }
    // Substitute s = a t + b.
    let a = 2.0 / (hi - lo);
    let b: f64 = -1.0 - a * lo;
    let mut binom = [[0.0; POLY_LEN]; POLY_LEN];
    for n in 0..POLY_LEN {
        binom[n][0] = 1.0;
        for k in 1..=n {
            binom[n][k] = binom[n - 1][k - 1] + if k < n { binom[n - 1][k] } else { 0.0 };
        }
    }
    let mut out = [[0.0; POLY_LEN]; POLY_LEN];
    for j in 0..POLY_LEN {
        for (k, &ck) in ps[j].iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            for i in 0..=k {
                out[j][i] += ck * binom[k][i] * a.powi(i as i32) * b.powi((k - i) as i32);
            }
        }
    }
    out
}

/// Weighted cost `sum_t w_t sum_c (f(v_c . x_t) - y_tc)^2`.
pub fn weighted_objective(set: &CalibrationSet, v: &[[f64; 3]; 3], alpha: &[f64; POLY_LEN]) -> f64 {
    set.samples
        .iter()
        .zip(&set.weights)
        .map(|(s, &w)| {
            let y = s.y.as_f64();
            (0..3)
                .map(|c| {
                    let r = crate::model::eval_polynomial(alpha, dot(&v[c], &s.x.0)) - y[c];
                    r * r
                })
                .sum::<f64>()
                * w
        })
        .sum()
}

/// Weighted least-squares polynomial through `(t, y, w)` points with
/// `f'(t_k) >= 0` on the 201-point grid over `[lo, hi]`. Returns the
/// coefficients and the KKT violation of the (scaled) QP.
pub fn fit_monotone_polynomial(points: &[(f64, f64, f64)], lo: f64, hi: f64) -> Result<([f64; POLY_LEN], f64)> {
    if !(hi > lo) {
        return Err(Error::InvalidInput(format!("empty fit interval [{lo}, {hi}]")));
    }
    let to_s = |t: f64| 2.0 * (t - lo) / (hi - lo) - 1.0;
    let mut h = DMatrix::<f64>::zeros(POLY_LEN, POLY_LEN);
    let mut g = DVector::<f64>::zeros(POLY_LEN);
    for &(t, y, w) in points {
        if w == 0.0 {
            continue;
        }
        let phi = legendre_values(to_s(t));
        for i in 0..POLY_LEN {
            g[i] += w * y * phi[i];
            for j in i..POLY_LEN {
                h[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    for i in 0..POLY_LEN {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    let scale = h.trace() / POLY_LEN as f64;
    if !(scale > 0.0) {
        return Err(Error::InsufficientData("all weights are zero".into()));
    }
    // Tiny ridge keeps H strictly convex when data cannot pin every coefficient.
    let mut h = h / scale;
    for i in 0..POLY_LEN {
        h[(i, i)] += 1e-12;
    }
    let c = -g / scale;

    let grid: Vec<f64> = (0..=MONO_GRID_INTERVALS)
        .map(|k| lo + (hi - lo) * k as f64 / MONO_GRID_INTERVALS as f64)
        .collect();
    let mut a = DMatrix::<f64>::zeros(grid.len(), POLY_LEN);
    for (k, &t) in grid.iter().enumerate() {
        let d = legendre_derivatives(to_s(t));
        for j in 0..POLY_LEN {
            a[(k, j)] = d[j];
        }
    }
    let b = DVector::<f64>::zeros(grid.len());

    let qp = Qp { h: &h, c: &c, a: &a, b: &b };
    let sol = qp.solve(2000)?;
    let kkt_violation = qp.kkt_violation(&sol);

    let conv = legendre_to_monomial(lo, hi);
    let mut alpha = [0.0; POLY_LEN];
    for j in 0..POLY_LEN {
        for i in 0..POLY_LEN {
            alpha[i] += sol.x[j] * conv[j][i];
        }
    }
    Ok((alpha, kkt_violation))
}

/// Weighted least-squares fit of `f` for fixed `v`, with `f'(t_k) >= 0` on
/// the constraint grid over `[0, t_max]`.
pub fn fit_polynomial_step(set: &CalibrationSet, v: &[[f64; 3]; 3]) -> Result<PolyFit> {
    if set.weights.len() != set.samples.len() {
        return Err(Error::InvalidInput("weights not computed".into()));
    }
    let t_max = set
        .samples
        .iter()
        .flat_map(|s| (0..3).map(move |c| dot(&v[c], &s.x.0)))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::InsufficientData(
            "linear transform maps every sample to a non-positive value".into(),
        ));
    }
    let points: Vec<(f64, f64, f64)> = set
        .samples
        .iter()
        .zip(&set.weights)
        .flat_map(|(s, &w)| (0..3).map(move |c| (dot(&v[c], &s.x.0), s.y.0[c] as f64, w)))
        .collect();
    let (alpha, kkt_violation) = fit_monotone_polynomial(&points, 0.0, t_max)?;
    let objective = weighted_objective(set, v, &alpha);
    Ok(PolyFit {
        alpha,
        objective,
        t_max,
        kkt_violation,
    })
}
