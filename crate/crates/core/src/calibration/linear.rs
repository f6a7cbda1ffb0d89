//! Linear-transform step: descent on the rows `v_c` with the polynomial fixed.

use nalgebra::{Matrix3, Vector3};

use crate::model::{dot, eval_polynomial, eval_polynomial_derivative, POLY_LEN};

use super::CalibrationSet;

pub const MAX_LINEAR_ITERS: usize = 500;
pub const LINEAR_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub v: [[f64; 3]; 3],
    pub objective: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Per-channel objective and gradient with respect to `v_c`.
fn channel_terms(
    set: &CalibrationSet,
    alpha: &[f64; POLY_LEN],
    vc: &[f64; 3],
    c: usize,
) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let mut obj = 0.0;
    let mut grad = Vector3::zeros();
    let mut gn = Matrix3::zeros();
    for (s, &w) in set.samples.iter().zip(&set.weights) {
        let x = &s.x.0;
        let t = dot(vc, x);
        let r = eval_polynomial(alpha, t) - s.y.0[c] as f64;
        let d = eval_polynomial_derivative(alpha, t);
        obj += w * r * r;
        let xv = Vector3::new(x[0], x[1], x[2]);
        grad += xv * (2.0 * w * r * d);
        gn += xv * xv.transpose() * (2.0 * w * d * d);
    }
    (obj, grad, gn)
}

fn channel_objective(set: &CalibrationSet, alpha: &[f64; POLY_LEN], vc: &[f64; 3], c: usize) -> f64 {
    set.samples
        .iter()
        .zip(&set.weights)
        .map(|(s, &w)| {
            let r = eval_polynomial(alpha, dot(vc, &s.x.0)) - s.y.0[c] as f64;
            w * r * r
        })
        .sum()
}

/// Objective of the base model as a function of `v` (all three channels).
pub fn linear_objective(set: &CalibrationSet, alpha: &[f64; POLY_LEN], v: &[[f64; 3]; 3]) -> f64 {
    (0..3).map(|c| channel_objective(set, alpha, &v[c], c)).sum()
}

/// Analytic gradient of [`linear_objective`], row-major over `v`.
pub fn linear_gradient(set: &CalibrationSet, alpha: &[f64; POLY_LEN], v: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for c in 0..3 {
        let (_, g, _) = channel_terms(set, alpha, &v[c], c);
        out[c] = [g[0], g[1], g[2]];
    }
    out
}

/// Descent with Armijo backtracking. The search direction is the gradient
/// preconditioned by the (damped) Gauss-Newton matrix of each channel, so
/// every accepted step strictly decreases the objective.
pub fn fit_linear_step(set: &CalibrationSet, alpha: &[f64; POLY_LEN], v0: &[[f64; 3]; 3]) -> LinearFit {
    let mut v = *v0;
    let mut terms: Vec<_> = (0..3).map(|c| channel_terms(set, alpha, &v[c], c)).collect();
    let mut total: f64 = terms.iter().map(|t| t.0).sum();
    let mut trace = vec![total];
    let mut iterations = 0;

    while iterations < MAX_LINEAR_ITERS {
        iterations += 1;
        let mut candidate = v;
        let mut dirs = [Vector3::zeros(); 3];
        let mut slope = 0.0;
        for c in 0..3 {
            let (_, g, gn) = &terms[c];
            let damp = 1e-9 * gn.trace().max(1e-300);
            let precond = gn + Matrix3::identity() * damp;
            let d = match precond.cholesky() {
                Some(ch) => -ch.solve(g),
                None => -g,
            };
            let d = if d.dot(g) < 0.0 { d } else { -g };
            slope += d.dot(g);
            dirs[c] = d;
        }
        if slope >= 0.0 || !slope.is_finite() {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            for c in 0..3 {
                for k in 0..3 {
                    candidate[c][k] = v[c][k] + step * dirs[c][k];
                }
            }
            let obj = linear_objective(set, alpha, &candidate);
            if obj.is_finite() && obj <= total + 1e-4 * step * slope && obj < total {
                accepted = Some(obj);
                break;
            }
            step *= 0.5;
        }
        let Some(obj) = accepted else { break };
        let rel = (total - obj) / total.max(1e-300);
        v = candidate;
        total = obj;
        trace.push(total);
        terms = (0..3).map(|c| channel_terms(set, alpha, &v[c], c)).collect();
        if rel < LINEAR_REL_TOL {
            break;
        }
    }

    LinearFit {
        v,
        objective: total,
        trace,
        iterations,
    }
}
