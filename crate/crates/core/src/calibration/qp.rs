//! Dense solver for small strictly convex QPs
//!
//! ```text
//! minimize   1/2 x^T H x + c^T x
//! subject to A x >= b
//! ```
//!
//! With `H = R^T R` and `z = R x + R^-T c` the problem becomes a least
//! distance program `min |z|  s.t.  G z >= h`, which is solved through its
//! dual non-negative least-squares problem (Lawson-Hanson). The dual route
//! stays finite under the heavy degeneracy of dense constraint grids where
//! many constraints are simultaneously active.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// `(constraint index, multiplier)` for constraints with positive multiplier.
    pub multipliers: Vec<(usize, f64)>,
    pub iterations: usize,
}

pub struct Qp<'a> {
    pub h: &'a DMatrix<f64>,
    pub c: &'a DVector<f64>,
    pub a: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
}

/// Lawson-Hanson active-set NNLS: `min |E u - f|` subject to `u >= 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>, max_iter: usize) -> Result<(DVector<f64>, usize)> {
    let m = e.ncols();
    let mut u = DVector::<f64>::zeros(m);
    let mut passive = vec![false; m];
    let tol = 1e-12 * e.amax().max(1e-300) * f.amax().max(1.0) * m as f64;
    let mut iterations = 0;

    let solve_passive = |passive: &[bool]| -> Result<DVector<f64>> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(e.nrows(), idx.len(), |r, k| e[(r, idx[k])]);
        let sol = sub
            .svd(true, true)
            .solve(f, 1e-14)
            .map_err(|err| Error::Internal(err.to_string()))?;
        let mut full = DVector::zeros(m);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        Ok(full)
    };

    loop {
        let w = e.transpose() * (f - e * &u);
        let next = (0..m)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = next else { break };
        passive[j] = true;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Internal("NNLS iteration limit reached".into()));
            }
            let s = solve_passive(&passive)?;
            if (0..m).filter(|&k| passive[k]).all(|k| s[k] > 0.0) {
                u = s;
                break;
            }
            // Step back to the boundary and release the variables that hit zero.
            let mut t = f64::INFINITY;
            for k in (0..m).filter(|&k| passive[k] && s[k] <= 0.0) {
                t = t.min(u[k] / (u[k] - s[k]));
            }
            u += (s - &u) * t;
            for k in 0..m {
                if passive[k] && u[k] <= tol {
                    passive[k] = false;
                    u[k] = 0.0;
                }
            }
        }
    }
    Ok((u, iterations))
}

impl Qp<'_> {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.h * x)) + self.c.dot(x)
    }

    pub fn solve(&self, max_iter: usize) -> Result<QpSolution> {
        let n = self.h.nrows();
        let m = self.a.nrows();
        let chol = self
            .h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Internal("QP Hessian is not positive definite".into()))?;
        // H = L L^T, so R = L^T.
        let l = chol.l();
        let hinv_c = chol.solve(self.c);
        // G = A R^-1 = A L^-T, i.e. G^T = L^-1 A^T.
        let gt = l
            .solve_lower_triangular(&self.a.transpose())
            .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
        let hvec = self.b + self.a * &hinv_c;

        let mut e = DMatrix::<f64>::zeros(n + 1, m);
        e.view_mut((0, 0), (n, m)).copy_from(&gt);
        for j in 0..m {
            e[(n, j)] = hvec[j];
        }
        let mut f = DVector::<f64>::zeros(n + 1);
        f[n] = 1.0;
        let (u, iterations) = nnls(&e, &f, max_iter)?;
        let r = &e * &u - &f;
        let denom = -r[n];
        if !(denom > 1e-12) {
            return Err(Error::Internal("QP constraints are infeasible".into()));
        }
        let z = -r.rows(0, n) / r[n];
        // x = R^-1 z - H^-1 c = L^-T z - H^-1 c
        let x = l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?
            - hinv_c;
        let multipliers = (0..m)
            .filter(|&j| u[j] > 0.0)
            .map(|j| (j, u[j] / denom))
            .collect();
        Ok(QpSolution {
            x,
            multipliers,
            iterations,
        })
    }

    /// Largest KKT violation: primal infeasibility, negative multipliers,
    /// complementarity and stationarity residual.
    pub fn kkt_violation(&self, sol: &QpSolution) -> f64 {
        let slack = self.a * &sol.x - self.b;
        let infeas = slack.iter().fold(0.0f64, |acc, s| acc.max(-s));
        let mut resid = self.h * &sol.x + self.c;
        let mut neg = 0.0f64;
        let mut compl = 0.0f64;
        for &(i, l) in &sol.multipliers {
            resid -= self.a.row(i).transpose() * l;
            neg = neg.max(-l);
            compl = compl.max((l * slack[i]).abs());
        }
        infeas.max(neg).max(resid.amax()).max(compl)
    }
}
