//! Rank-revealing least squares with optional ridge regularization.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdmrError, Result};

/// Reusable factorization `Psi = U diag(s) V^T` for repeated solves against
/// different right-hand sides.
#[derive(Clone, Debug)]
pub struct LsFactor {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
    nq: usize,
    p: usize,
}

impl LsFactor {
    /// Tall matrices are reduced by Householder QR before the SVD of `R`.
    pub fn new(psi: &DMatrix<f64>) -> Result<Self> {
        let (nq, p) = psi.shape();
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(HdmrError::NonFinite("design matrix".into()));
        }
        if p == 0 || nq == 0 {
            return Ok(LsFactor {
                u: DMatrix::zeros(nq, 0),
                s: Vec::new(),
                v: DMatrix::zeros(p, 0),
                nq,
                p,
            });
        }
        let (u, s, v) = if nq >= 2 * p {
            let qr = psi.clone().qr();
            let q = qr.q();
            let r = qr.r();
            let svd = r
                .try_svd(true, true, f64::EPSILON, 0)
                .ok_or_else(|| HdmrError::Numerical("SVD of R did not converge".into()))?;
            let u = q * svd.u.unwrap();
            (u, svd.singular_values, svd.v_t.unwrap().transpose())
        } else {
            let svd = psi
                .clone()
                .try_svd(true, true, f64::EPSILON, 0)
                .ok_or_else(|| HdmrError::Numerical("SVD did not converge".into()))?;
            (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap().transpose())
        };
        Ok(LsFactor {
            u,
            s: s.iter().copied().collect(),
            v,
            nq,
            p,
        })
    }

    pub fn cols(&self) -> usize {
        self.p
    }

    pub fn rank(&self) -> usize {
        let tol = self.cutoff();
        self.s.iter().filter(|&&s| s > tol).count()
    }

    fn cutoff(&self) -> f64 {
        let smax = self.s.iter().cloned().fold(0.0, f64::max);
        smax * self.nq.max(self.p) as f64 * f64::EPSILON
    }

    /// Minimizer of `||r - Psi c||^2 + beta^2 ||c||^2`; minimum norm when `beta = 0`.
    pub fn solve(&self, r: &[f64], beta: f64) -> Vec<f64> {
        debug_assert_eq!(r.len(), self.nq);
        if self.p == 0 {
            return Vec::new();
        }
        let rv = DVector::from_column_slice(r);
        let mut coef = self.u.tr_mul(&rv);
        let tol = self.cutoff();
        for (k, s) in self.s.iter().enumerate() {
            let f = if beta > 0.0 {
                s / (s * s + beta * beta)
            } else if *s > tol {
                1.0 / s
            } else {
                0.0
            };
            coef[k] *= f;
        }
        (&self.v * coef).iter().copied().collect()
    }
}

/// Regularized least-squares solve.
pub fn ls_solve(psi: &DMatrix<f64>, r: &[f64], beta: f64) -> Result<Vec<f64>> {
    if psi.nrows() != r.len() {
        return Err(HdmrError::Shape(format!("design has {} rows, right-hand side {}", psi.nrows(), r.len())));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(HdmrError::NonFinite("right-hand side".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(HdmrError::Config(format!("ridge parameter must be finite and non-negative, got {beta}")));
    }
    Ok(LsFactor::new(psi)?.solve(r, beta))
}
