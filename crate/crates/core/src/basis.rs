//! Orthonormal Legendre polynomials under the uniform probability measure.
//!
//! Index convention: `alpha = degree + 1`, so `alpha == 1` is the constant
//! polynomial. A basis with `max_order = No` evaluates degrees `0..=No`,
//! i.e. indices `1..=No + 1`; interaction modes only ever use indices `>= 2`.

use serde::{Deserialize, Serialize};

use crate::error::{HdmrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Legendre,
}

/// Univariate family, support interval and maximum polynomial degree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub family: Family,
    pub lo: f64,
    pub hi: f64,
    #[serde(rename = "No")]
    pub max_order: usize,
}

impl BasisConfig {
    pub fn legendre(lo: f64, hi: f64, max_order: usize) -> Result<Self> {
        let cfg = BasisConfig {
            family: Family::Legendre,
            lo,
            hi,
            max_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(HdmrError::Config(format!(
                "basis interval [{}, {}] must satisfy lo < hi",
                self.lo, self.hi
            )));
        }
        if self.max_order < 1 {
            return Err(HdmrError::Config("basis max order must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest valid index `alpha` (degree `max_order`).
    pub fn max_index(&self) -> usize {
        self.max_order + 1
    }

    pub fn contains(&self, xi: f64) -> bool {
        xi >= self.lo && xi <= self.hi
    }

    #[inline]
    fn to_reference(&self, xi: f64) -> f64 {
        (2.0 * xi - self.lo - self.hi) / (self.hi - self.lo)
    }

    #[inline]
    fn jacobian(&self) -> f64 {
        2.0 / (self.hi - self.lo)
    }

    fn check_index(&self, alpha: usize) -> Result<()> {
        if alpha == 0 || alpha > self.max_index() {
            return Err(HdmrError::IndexOutOfRange {
                index: alpha,
                max: self.max_index(),
            });
        }
        Ok(())
    }

    /// Value of `psi_alpha(xi)`.
    pub fn eval(&self, alpha: usize, xi: f64) -> Result<f64> {
        self.check_index(alpha)?;
        if !self.contains(xi) {
            log::trace!("evaluating basis outside [{}, {}] at {xi}", self.lo, self.hi);
        }
        let mut vals = vec![0.0; alpha];
        legendre_values(self.to_reference(xi), &mut vals);
        Ok(vals[alpha - 1])
    }

    /// Derivative of `psi_alpha` with respect to the physical coordinate.
    pub fn eval_deriv(&self, alpha: usize, xi: f64) -> Result<f64> {
        self.check_index(alpha)?;
        let mut vals = vec![0.0; alpha];
        let mut ders = vec![0.0; alpha];
        legendre_values_and_derivs(self.to_reference(xi), &mut vals, &mut ders);
        Ok(ders[alpha - 1] * self.jacobian())
    }

    /// Fills `out[k] = psi_{k+1}(xi)` for every `k < out.len()`.
    pub fn eval_all(&self, xi: f64, out: &mut [f64]) {
        legendre_values(self.to_reference(xi), out);
    }

    /// Values and physical-coordinate derivatives for indices `1..=out.len()`.
    pub fn eval_all_with_deriv(&self, xi: f64, vals: &mut [f64], ders: &mut [f64]) {
        legendre_values_and_derivs(self.to_reference(xi), vals, ders);
        let jac = self.jacobian();
        ders.iter_mut().for_each(|d| *d *= jac);
    }

    /// Tensor-product polynomial `prod_i psi_{alphas[i]}(xis[i])`.
    pub fn eval_tensor(&self, alphas: &[usize], xis: &[f64]) -> Result<f64> {
        if alphas.len() != xis.len() {
            return Err(HdmrError::Shape(format!(
                "multi-index has {} entries but {} coordinates were given",
                alphas.len(),
                xis.len()
            )));
        }
        alphas
            .iter()
            .zip(xis)
            .try_fold(1.0, |acc, (&a, &x)| Ok(acc * self.eval(a, x)?))
    }
}

/// Orthonormal Legendre values on [-1, 1] for degrees `0..out.len()`.
fn legendre_values(t: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    // Plain Legendre recurrence, normalized afterwards.
    let mut p_prev = 1.0;
    out[0] = 1.0;
    if n > 1 {
        let mut p = t;
        out[1] = 3f64.sqrt() * p;
        for k in 1..n - 1 {
            let kf = k as f64;
            let p_next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
            p_prev = p;
            p = p_next;
            out[k + 1] = (2.0 * kf + 3.0).sqrt() * p;
        }
    }
}

fn legendre_values_and_derivs(t: f64, vals: &mut [f64], ders: &mut [f64]) {
    let n = vals.len();
    debug_assert_eq!(n, ders.len());
    if n == 0 {
        return;
    }
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    p[0] = 1.0;
    if n > 1 {
        p[1] = t;
        dp[1] = 1.0;
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * t * p[k] - kf * p[k - 1]) / (kf + 1.0);
        // P'_{k+1} = P'_{k-1} + (2k+1) P_k
        dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
    }
    for k in 0..n {
        let norm = (2.0 * k as f64 + 1.0).sqrt();
        vals[k] = norm * p[k];
        ders[k] = norm * dp[k];
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] (weights sum to 2).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[lo, hi]` with weights summing to one
/// (uniform probability measure).
pub fn gauss_uniform(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| 0.5 * wi).collect(),
    )
}

/// Basis values for a batch of samples, laid out per dimension and degree
/// so that one degree of one dimension is a contiguous slice over samples.
#[derive(Clone, Debug)]
pub struct UnivariateTable {
    nq: usize,
    n_deg: usize,
    // [dim][deg][q]
    values: Vec<Vec<f64>>,
}

impl UnivariateTable {
    /// `xi` is row-major `nq x nd`.
    pub fn new(basis: &BasisConfig, xi: &[f64], nq: usize, nd: usize, max_degree: usize) -> Self {
        Self::for_dims(basis, xi, nq, nd, max_degree, &vec![true; nd])
    }

    /// Tabulates only the dimensions flagged in `used`; columns of the others
    /// must not be requested.
    pub fn for_dims(basis: &BasisConfig, xi: &[f64], nq: usize, nd: usize, max_degree: usize, used: &[bool]) -> Self {
        let n_deg = max_degree + 1;
        let mut values: Vec<Vec<f64>> = used
            .iter()
            .map(|&u| if u { vec![0.0; n_deg * nq] } else { Vec::new() })
            .collect();
        let mut buf = vec![0.0; n_deg];
        for q in 0..nq {
            for d in (0..nd).filter(|&d| used[d]) {
                basis.eval_all(xi[q * nd + d], &mut buf);
                for (k, v) in buf.iter().enumerate() {
                    values[d][k * nq + q] = *v;
                }
            }
        }
        UnivariateTable { nq, n_deg, values }
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn max_index(&self) -> usize {
        self.n_deg
    }

    /// `psi_alpha(xi_dim)` over all samples.
    #[inline]
    pub fn column(&self, dim: usize, alpha: usize) -> &[f64] {
        let k = alpha - 1;
        &self.values[dim][k * self.nq..(k + 1) * self.nq]
    }

    /// Writes the tensor-product predictor `prod_i psi_{alphas[i]}(xi_{dims[i]})`,
    /// optionally scaled row-wise, into `out`.
    pub fn fill_product(&self, dims: &[usize], alphas: &[usize], weights: Option<&[f64]>, out: &mut [f64]) {
        match weights {
            Some(w) => out.copy_from_slice(w),
            None => out.iter_mut().for_each(|v| *v = 1.0),
        }
        for (&d, &a) in dims.iter().zip(alphas) {
            let col = self.column(d, a);
            out.iter_mut().zip(col).for_each(|(o, c)| *o *= c);
        }
    }
}
