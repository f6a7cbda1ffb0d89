//! Kernel ridge regression with a Gaussian RBF kernel, with the bandwidth
//! and ridge chosen per output channel by k-fold cross-validation.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::RbfTerm;

#[derive(Debug, Clone)]
pub struct KrrConfig {
    pub max_centers: usize,
    pub folds: usize,
    pub gammas: Vec<f64>,
    pub ridges: Vec<f64>,
}

impl Default for KrrConfig {
    fn default() -> Self {
        KrrConfig {
            max_centers: 500,
            folds: 5,
            // 10^-5, 10^-4.5, ..., 10^-2 (gray levels^-2)
            gammas: (0..7).map(|i| 10f64.powf(-5.0 + 0.5 * i as f64)).collect(),
            ridges: vec![1e-3, 1e-1, 1e1],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RbfFit {
    pub terms: [Vec<RbfTerm>; 3],
    pub gamma: [f64; 3],
    pub ridge: [f64; 3],
    pub cv_mse: [f64; 3],
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Distinct inputs, shuffled, truncated to `max`.
fn subsample<R: Rng>(inputs: &[[f64; 3]], max: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..inputs.len()).collect();
    idx.shuffle(rng);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(max.min(inputs.len()));
    for i in idx {
        let key = inputs[i].map(f64::to_bits);
        if seen.insert(key) {
            out.push(i);
            if out.len() == max {
                break;
            }
        }
    }
    out
}

fn solve_ridge(k: &DMatrix<f64>, ridge: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let ch = a
        .cholesky()
        .ok_or_else(|| Error::Internal("kernel matrix is not positive definite".into()))?;
    Ok(ch.solve(rhs))
}

/// Fit `targets[t][c] ~ sum_i a_ci exp(-gamma_c |inputs[t] - center_i|^2)`.
pub fn fit_rbf<R: Rng>(
    inputs: &[[f64; 3]],
    targets: &[[f64; 3]],
    cfg: &KrrConfig,
    rng: &mut R,
) -> Result<RbfFit> {
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch("inputs and targets differ in length".into()));
    }
    let picked = subsample(inputs, cfg.max_centers, rng);
    let m = picked.len();
    if m < cfg.folds.max(2) {
        return Err(Error::InsufficientData(format!("{m} distinct points for regression")));
    }
    let xs: Vec<[f64; 3]> = picked.iter().map(|&i| inputs[i]).collect();
    let ys = DMatrix::from_fn(m, 3, |r, c| targets[picked[r]][c]);
    let d2 = DMatrix::from_fn(m, m, |i, j| sq_dist(&xs[i], &xs[j]));

    let folds: Vec<usize> = (0..m).map(|i| i % cfg.folds).collect();
    let ng = cfg.gammas.len();
    let nr = cfg.ridges.len();
    let mut sse = vec![[0.0f64; 3]; ng * nr];

    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        let k = d2.map(|d| (-gamma * d).exp());
        for f in 0..cfg.folds {
            let tr: Vec<usize> = (0..m).filter(|&i| folds[i] != f).collect();
            let va: Vec<usize> = (0..m).filter(|&i| folds[i] == f).collect();
            let k_tr = DMatrix::from_fn(tr.len(), tr.len(), |i, j| k[(tr[i], tr[j])]);
            let k_va = DMatrix::from_fn(va.len(), tr.len(), |i, j| k[(va[i], tr[j])]);
            let y_tr = DMatrix::from_fn(tr.len(), 3, |i, c| ys[(tr[i], c)]);
            for (ri, &ridge) in cfg.ridges.iter().enumerate() {
                let a = solve_ridge(&k_tr, ridge, &y_tr)?;
                let pred = &k_va * a;
                for (row, &vi) in va.iter().enumerate() {
                    for c in 0..3 {
                        sse[gi * nr + ri][c] += (pred[(row, c)] - ys[(vi, c)]).powi(2);
                    }
                }
            }
        }
    }

    let mut gamma = [0.0; 3];
    let mut ridge = [0.0; 3];
    let mut cv_mse = [f64::INFINITY; 3];
    for c in 0..3 {
        for gi in 0..ng {
            for ri in 0..nr {
                let mse = sse[gi * nr + ri][c] / m as f64;
                if mse < cv_mse[c] {
                    cv_mse[c] = mse;
                    gamma[c] = cfg.gammas[gi];
                    ridge[c] = cfg.ridges[ri];
                }
            }
        }
    }

    let mut terms: [Vec<RbfTerm>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..3 {
        let k = d2.map(|d| (-gamma[c] * d).exp());
        let rhs = DMatrix::from_column_slice(m, 1, ys.column(c).as_slice());
        let a = solve_ridge(&k, ridge[c], &rhs)?;
        terms[c] = xs
            .iter()
            .zip(a.column(0).iter())
            .map(|(x, &w)| RbfTerm { center: *x, w })
            .collect();
    }
    Ok(RbfFit {
        terms,
        gamma,
        ridge,
        cv_mse,
    })
}

/// Kernel-expansion prediction, evaluated with matrix algebra rather than the
/// per-term loop used by the forward model.
pub fn predict_matrix(terms: &[RbfTerm], gamma: f64, queries: &[[f64; 3]]) -> Vec<f64> {
    let k = DMatrix::from_fn(queries.len(), terms.len(), |i, j| {
        (-gamma * sq_dist(&queries[i], &terms[j].center)).exp()
    });
    let w = DVector::from_iterator(terms.len(), terms.iter().map(|t| t.w));
    (k * w).iter().copied().collect()
}
