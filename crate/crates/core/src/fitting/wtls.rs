//! Errors-in-variables regression by weighted total least squares.
//!
//! Each sample `x_q = (Psi_q, r_q)` carries a covariance block `Lambda_q`.
//! For fixed coefficients the maximum-likelihood correction of `x_q` along
//! `a = (c, -1)` leaves the weighted residual `rho^2 = sum_q e_q^2 / (a^T Lambda_q a)`
//! with `e_q = r_q - Psi_q c`, which is minimized over `c` by iterating the
//! stationarity conditions.

use nalgebra::{DMatrix, DVector};

use super::ls::LsFactor;
use crate::basis::BasisConfig;
use crate::dataset::NoiseModel;
use crate::error::{HdmrError, Result};

/// Per-sample covariance blocks in factored form: the predictor block is
/// `F_q F_q^T`, the residual entry is `residual_var[q]` and cross terms vanish.
#[derive(Clone, Debug)]
pub struct CovarianceBlocks {
    p: usize,
    factors: Vec<DMatrix<f64>>,
    residual_var: Vec<f64>,
}

impl CovarianceBlocks {
    pub fn new(p: usize) -> Self {
        CovarianceBlocks {
            p,
            factors: Vec::new(),
            residual_var: Vec::new(),
        }
    }

    pub fn push(&mut self, factor: DMatrix<f64>, residual_var: f64) -> Result<()> {
        if factor.nrows() != self.p {
            return Err(HdmrError::Shape(format!("block factor has {} rows, expected {}", factor.nrows(), self.p)));
        }
        if !(residual_var >= 0.0) {
            return Err(HdmrError::Config("residual variance must be non-negative".into()));
        }
        self.factors.push(factor);
        self.residual_var.push(residual_var);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn predictors(&self) -> usize {
        self.p
    }

    /// Dense `(p + 1) x (p + 1)` block of sample `q`, residual row last.
    pub fn block(&self, q: usize) -> DMatrix<f64> {
        let p = self.p;
        let f = &self.factors[q];
        let mut b = DMatrix::zeros(p + 1, p + 1);
        b.view_mut((0, 0), (p, p)).copy_from(&(f * f.transpose()));
        b[(p, p)] = self.residual_var[q];
        b
    }

    fn trace(&self, q: usize) -> f64 {
        self.factors[q].norm_squared() + self.residual_var[q]
    }

    fn variance_along(&self, q: usize, c: &DVector<f64>) -> f64 {
        (self.factors[q].transpose() * c).norm_squared() + self.residual_var[q]
    }
}

/// Gradient factor of one sample: row `a` holds `w * s * d psi_a / d xi_i`
/// for every coordinate `i` of `dims`.
pub(crate) fn gradient_factor(
    basis: &BasisConfig,
    xi_q: &[f64],
    dims: &[usize],
    indices: &[Vec<usize>],
    s: f64,
    weight: f64,
) -> DMatrix<f64> {
    let n = basis.max_index();
    let mut vals = vec![vec![0.0; n]; dims.len()];
    let mut ders = vec![vec![0.0; n]; dims.len()];
    for (k, &d) in dims.iter().enumerate() {
        basis.eval_all_with_deriv(xi_q[d], &mut vals[k], &mut ders[k]);
    }
    DMatrix::from_fn(indices.len(), dims.len(), |a, i| {
        let alpha = &indices[a];
        let mut g = ders[i][alpha[i] - 1];
        for (k, &ak) in alpha.iter().enumerate() {
            if k != i {
                g *= vals[k][ak - 1];
            }
        }
        g * s * weight
    })
}

/// First-order covariance block of one sample for the predictors
/// `psi_alpha(xi_dims)`, residual row last.
pub fn build_sample_covariance(
    basis: &BasisConfig,
    xi_q: &[f64],
    dims: &[usize],
    indices: &[Vec<usize>],
    noise: &NoiseModel,
    u_q: f64,
) -> Result<DMatrix<f64>> {
    noise.validate()?;
    if indices.iter().any(|a| a.len() != dims.len()) || dims.iter().any(|&d| d >= xi_q.len()) {
        return Err(HdmrError::Shape("multi-index length must match the group".into()));
    }
    let f = gradient_factor(basis, xi_q, dims, indices, noise.s, 1.0);
    let mut blocks = CovarianceBlocks::new(indices.len());
    blocks.push(f, (noise.s_u * u_q).powi(2))?;
    Ok(blocks.block(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WtlsResult {
    pub coeffs: Vec<f64>,
    pub rho2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iterate, starting from the initial guess.
    pub trace: Vec<f64>,
}

struct Objective<'a> {
    psi: &'a DMatrix<f64>,
    r: &'a DVector<f64>,
    blocks: &'a CovarianceBlocks,
    jitter: Vec<f64>,
    floor: f64,
}

impl Objective<'_> {
    fn variances(&self, c: &DVector<f64>) -> Vec<f64> {
        let a2 = c.norm_squared() + 1.0;
        (0..self.blocks.len())
            .map(|q| (self.blocks.variance_along(q, c) + self.jitter[q] * a2).max(self.floor))
            .collect()
    }

    fn residuals(&self, c: &DVector<f64>) -> DVector<f64> {
        self.r - self.psi * c
    }

    fn rho2(&self, c: &DVector<f64>) -> f64 {
        let e = self.residuals(c);
        self.variances(c).iter().zip(e.iter()).map(|(v, e)| e * e / v).sum()
    }

    /// Solves the stationarity equations with weights frozen at `c`.
    fn update(&self, c: &DVector<f64>) -> DVector<f64> {
        let p = self.psi.ncols();
        let e = self.residuals(c);
        let v = self.variances(c);
        let mut weighted = self.psi.clone();
        for (q, vq) in v.iter().enumerate() {
            let s = vq.sqrt().recip();
            weighted.row_mut(q).scale_mut(s);
        }
        let mut m = weighted.tr_mul(&weighted);
        let rhs_r = DVector::from_iterator(self.r.len(), self.r.iter().zip(&v).map(|(r, v)| r / v));
        let rhs = self.psi.tr_mul(&rhs_r);
        for q in 0..self.blocks.len() {
            let coef = (e[q] / v[q]).powi(2);
            if coef != 0.0 {
                let f = &self.blocks.factors[q];
                m -= (f * f.transpose()) * coef;
            }
        }
        symmetric_pinv_solve(m, &rhs, p)
    }
}

fn symmetric_pinv_solve(m: DMatrix<f64>, rhs: &DVector<f64>, p: usize) -> DVector<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = lmax * 1e-12 * p.max(1) as f64;
    let proj = eig.eigenvectors.tr_mul(rhs);
    let scaled = DVector::from_iterator(
        p,
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(x, l)| if l.abs() > tol { x / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

/// Minimizes the weighted total least squares objective starting from `c0`
/// (the least-squares solution when `None`). Iterates only ever lower the
/// objective; the best one is returned together with a convergence flag.
pub fn wtls_solve(
    psi: &DMatrix<f64>,
    r: &[f64],
    blocks: &CovarianceBlocks,
    c0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<WtlsResult> {
    let (nq, p) = psi.shape();
    if r.len() != nq || blocks.len() != nq || blocks.predictors() != p {
        return Err(HdmrError::Shape(format!(
            "wTLS: design {nq}x{p}, rhs {}, {} blocks of {} predictors",
            r.len(),
            blocks.len(),
            blocks.predictors()
        )));
    }
    if psi.iter().chain(r).any(|v| !v.is_finite()) {
        return Err(HdmrError::NonFinite("wTLS input".into()));
    }
    let start: Vec<f64> = match c0 {
        Some(c) if c.len() == p => c.to_vec(),
        Some(_) => return Err(HdmrError::Shape("initial coefficients have the wrong length".into())),
        None => LsFactor::new(psi)?.solve(r, 0.0),
    };
    let traces: Vec<f64> = (0..nq).map(|q| blocks.trace(q)).collect();
    let mean_trace = traces.iter().sum::<f64>() / nq.max(1) as f64;
    if !(mean_trace > 0.0) {
        return Ok(WtlsResult {
            coeffs: start,
            rho2: 0.0,
            iterations: 0,
            converged: true,
            trace: vec![0.0],
        });
    }
    let rv = DVector::from_column_slice(r);
    let obj = Objective {
        psi,
        r: &rv,
        blocks,
        jitter: traces.iter().map(|t| 1e-12 * t).collect(),
        floor: 1e-12 * mean_trace,
    };
    let mut c = DVector::from_vec(start);
    let mut rho = obj.rho2(&c);
    let mut trace = vec![rho];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        if rho == 0.0 {
            converged = true;
            break;
        }
        let cand = obj.update(&c);
        let dir = &cand - &c;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &c + &dir * step;
            let val = obj.rho2(&trial);
            if val.is_finite() && val <= rho {
                accepted = Some((trial, val));
                break;
            }
            step *= 0.5;
        }
        let Some((next, val)) = accepted else {
            converged = true;
            break;
        };
        let change = (rho - val) / rho;
        c = next;
        rho = val;
        trace.push(rho);
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("wTLS did not converge in {max_iter} iterations; returning best iterate");
    }
    Ok(WtlsResult {
        coeffs: c.iter().copied().collect(),
        rho2: rho,
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::ls::ls_solve;
    use crate::rng::{stream, StreamTag};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sym() -> BasisConfig {
        BasisConfig::legendre(-1.0, 1.0, 4).unwrap()
    }

    #[test]
    fn covariance_examples() {
        let b = sym();
        let idx = vec![vec![2], vec![3]];
        let zero = build_sample_covariance(&b, &[0.3], &[0], &idx, &NoiseModel::new(0.0, 0.0, -1.0, 1.0).unwrap(), 2.0)
            .unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));

        let val = build_sample_covariance(&b, &[0.3], &[0], &idx, &NoiseModel::new(0.0, 0.2, -1.0, 1.0).unwrap(), 2.0)
            .unwrap();
        assert_abs_diff_eq!(val[(2, 2)], 0.16, epsilon = 1e-15);
        assert_eq!(val.iter().filter(|v| **v != 0.0).count(), 1);

        let noise = NoiseModel::new(0.1, 0.2, -1.0, 1.0).unwrap();
        let blk = build_sample_covariance(&b, &[0.3, -0.4], &[0, 1], &[vec![1, 1], vec![2, 3]], &noise, 1.0).unwrap();
        for k in 0..3 {
            assert_eq!(blk[(0, k)], 0.0);
            assert_eq!(blk[(k, 0)], 0.0);
        }
        // s^2 * (dpsi/dxi1^2 + dpsi/dxi2^2) for psi_2(xi1) psi_3(xi2)
        let g1 = b.eval_deriv(2, 0.3).unwrap() * b.eval(3, -0.4).unwrap();
        let g2 = b.eval(2, 0.3).unwrap() * b.eval_deriv(3, -0.4).unwrap();
        assert_abs_diff_eq!(blk[(1, 1)], 0.01 * (g1 * g1 + g2 * g2), epsilon = 1e-14);
        assert_eq!(blk[(1, 2)], 0.0);
        assert_abs_diff_eq!((&blk - blk.transpose()).amax(), 0.0, epsilon = 1e-12);
    }

    fn random_design(nq: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, StreamTag::Test, 20, 0);
        DMatrix::from_fn(nq, p, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn noisy_blocks(nq: usize, p: usize, seed: u64, s: f64, sr: f64) -> CovarianceBlocks {
        let mut rng = stream(seed, StreamTag::Test, 21, 0);
        let mut blocks = CovarianceBlocks::new(p);
        for _ in 0..nq {
            let f = DMatrix::from_fn(p, 2, |_, _| s * rng.gen_range(-1.0..1.0));
            blocks.push(f, sr * sr).unwrap();
        }
        blocks
    }

    #[test]
    fn exact_data_is_a_fixed_point() {
        let psi = random_design(60, 3, 1);
        let truth = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let r: Vec<f64> = (&psi * &truth).iter().copied().collect();
        let res = wtls_solve(&psi, &r, &noisy_blocks(60, 3, 2, 0.1, 0.1), None, 1e-12, 50).unwrap();
        for (a, b) in res.coeffs.iter().zip(truth.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(res.rho2 < 1e-20);
    }

    #[test]
    fn residual_only_noise_reduces_to_ls() {
        let psi = random_design(80, 4, 3);
        let mut rng = stream(4, StreamTag::Test, 0, 0);
        let r: Vec<f64> = (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let res = wtls_solve(&psi, &r, &noisy_blocks(80, 4, 5, 0.0, 0.3), None, 1e-14, 100).unwrap();
        let ls = ls_solve(&psi, &r, 0.0).unwrap();
        for (a, b) in res.coeffs.iter().zip(&ls) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_blocks_return_start() {
        let psi = random_design(20, 2, 6);
        let r = vec![1.0; 20];
        let res = wtls_solve(&psi, &r, &noisy_blocks(20, 2, 7, 0.0, 0.0), None, 1e-10, 10).unwrap();
        assert_eq!(res.coeffs, ls_solve(&psi, &r, 0.0).unwrap());
    }

    #[test]
    fn objective_never_increases() {
        let psi = random_design(100, 3, 8);
        let mut rng = stream(9, StreamTag::Test, 0, 0);
        let r: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let res = wtls_solve(&psi, &r, &noisy_blocks(100, 3, 10, 0.3, 0.1), None, 1e-14, 60).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    /// Errors-in-variables simulation: u = c psi_2(xi*) observed at noisy xi.
    #[test]
    fn attenuation_bias_is_reduced() {
        let b = sym();
        let s = 0.02;
        let c_true = 1.5;
        let nq = 2000;
        let mut wins = 0;
        for rep in 0..10u64 {
            let mut rng = stream(rep, StreamTag::Test, 30, 0);
            let mut psi = DMatrix::zeros(nq, 1);
            let mut r = vec![0.0; nq];
            let mut blocks = CovarianceBlocks::new(1);
            let noise = NoiseModel::new(s, 0.0, -1.0, 1.0).unwrap();
            for q in 0..nq {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let z: f64 = rng.sample(StandardNormal);
                let xn = x + s * z;
                r[q] = c_true * b.eval(2, x).unwrap() + 0.01 * rng.sample::<f64, _>(StandardNormal);
                psi[(q, 0)] = b.eval(2, xn).unwrap();
                let f = gradient_factor(&b, &[xn], &[0], &[vec![2]], noise.s, 1.0);
                blocks.push(f, 1e-4).unwrap();
            }
            let ls = ls_solve(&psi, &r, 0.0).unwrap()[0];
            let wt = wtls_solve(&psi, &r, &blocks, None, 1e-12, 100).unwrap().coeffs[0];
            if (wt - c_true).powi(2) <= (ls - c_true).powi(2) {
                wins += 1;
            }
        }
        assert!(wins >= 8, "wTLS won {wins}/10");
    }
}
