//! Coefficient evaluation: least squares for dense modes, alternating least
//! squares for CP modes, the pass-wise driver with cross-validated stopping,
//! and robust errors-in-variables regression.

mod als;
mod driver;
mod ls;
mod wtls;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use driver::{fit_hdmr, FitDiagnostics, PassRecord};
pub(crate) use driver::{fit_problem, refit_skeleton};
pub use ls::{ls_solve, LsFactor};
pub use wtls::{build_sample_covariance, wtls_solve, CovarianceBlocks, WtlsResult};

use crate::basis::{BasisConfig, UnivariateTable};
use crate::dataset::{norm, NoiseModel, SampleSet};
use crate::design::Problem;
use crate::error::{HdmrError, Result};
use crate::model::{enumerate_dense_indices, CpMode, DenseMode, Group, HdmrModel};

/// Robust (wTLS) coefficient evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub noise: NoiseModel,
    pub tol: f64,
    pub max_iter: usize,
}

impl RobustConfig {
    pub fn new(noise: NoiseModel) -> Self {
        RobustConfig {
            noise,
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Maximum total degree of the mode expansions.
    pub no: usize,
    pub n_pc: usize,
    pub n_inter: usize,
    /// Rank of CP modes.
    pub nr: usize,
    pub als_tol: f64,
    pub als_max_sweeps: usize,
    pub update_sweeps: bool,
    pub update_sweeps_tol: f64,
    pub max_update_sweeps: usize,
    pub ridge: f64,
    pub seed: u64,
    pub robust: Option<RobustConfig>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            no: 6,
            n_pc: 3,
            n_inter: 3,
            nr: 3,
            als_tol: 1e-8,
            als_max_sweeps: 100,
            update_sweeps: true,
            update_sweeps_tol: 1e-6,
            max_update_sweeps: 20,
            ridge: 0.0,
            seed: 0,
            robust: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, nd: usize) -> Result<()> {
        if self.no == 0 {
            return Err(HdmrError::Config("No must be at least 1".into()));
        }
        if self.n_pc > self.n_inter || self.n_inter > nd {
            return Err(HdmrError::Config(format!(
                "need N_PC ({}) <= Ninter ({}) <= Nd ({nd})",
                self.n_pc, self.n_inter
            )));
        }
        if self.nr == 0 {
            return Err(HdmrError::Config("CP rank must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(HdmrError::Config("ridge must be finite and non-negative".into()));
        }
        if let Some(r) = &self.robust {
            r.noise.validate()?;
        }
        Ok(())
    }

    pub fn basis(&self, lo: f64, hi: f64) -> Result<BasisConfig> {
        BasisConfig::legendre(lo, hi, self.no)
    }
}

/// Weighted design matrix of a dense mode, `nq x p`, assembled column-wise in parallel.
pub(crate) fn dense_matrix(table: &UnivariateTable, weights: Option<&[f64]>, group: &Group, indices: &[Vec<usize>]) -> DMatrix<f64> {
    let nq = table.nq();
    let cols: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|alpha| {
            let mut c = vec![0.0; nq];
            table.fill_product(group.dims(), alpha, weights, &mut c);
            c
        })
        .collect();
    DMatrix::from_vec(nq, indices.len(), cols.concat())
}

/// Design and cached factorization of one dense mode.
#[derive(Clone, Debug)]
pub(crate) struct DenseDesign {
    pub indices: Vec<Vec<usize>>,
    pub psi: DMatrix<f64>,
    pub factor: LsFactor,
}

impl DenseDesign {
    pub fn build(table: &UnivariateTable, weights: Option<&[f64]>, group: &Group, no: usize) -> Result<Option<Self>> {
        let indices = enumerate_dense_indices(group.order(), no);
        if indices.is_empty() {
            return Ok(None);
        }
        let psi = dense_matrix(table, weights, group, &indices);
        let factor = LsFactor::new(&psi)?;
        Ok(Some(DenseDesign { indices, psi, factor }))
    }

    pub fn values(&self, c: &[f64]) -> Vec<f64> {
        (&self.psi * nalgebra::DVector::from_column_slice(c)).iter().copied().collect()
    }
}

fn check_residual(residual: &[f64], train: &SampleSet) -> Result<()> {
    if residual.len() != train.len() {
        return Err(HdmrError::Shape(format!(
            "residual has {} entries for {} samples",
            residual.len(),
            train.len()
        )));
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return Err(HdmrError::NonFinite("residual".into()));
    }
    Ok(())
}

/// Least-squares fit of a dense mode to `residual`. `None` when the group
/// admits no predictor at this order.
pub fn fit_dense_mode(
    group: &Group,
    residual: &[f64],
    train: &SampleSet,
    cfg: &FitConfig,
    basis: &BasisConfig,
) -> Result<Option<DenseMode>> {
    check_residual(residual, train)?;
    if group.order() > cfg.n_pc || group.dims().iter().any(|&d| d >= train.nd()) {
        return Err(HdmrError::Config(format!("group {group} cannot carry a dense mode")));
    }
    let table = Problem::from_set(train).table(basis, cfg.no);
    let Some(design) = DenseDesign::build(&table, None, group, cfg.no)? else {
        return Ok(None);
    };
    let coeffs = design.factor.solve(residual, cfg.ridge);
    Ok(Some(DenseMode {
        group: group.clone(),
        indices: design.indices,
        coeffs,
    }))
}

/// Greedy rank-by-rank ALS fit of a CP mode to `residual`.
pub fn fit_cp_mode(
    group: &Group,
    residual: &[f64],
    train: &SampleSet,
    cfg: &FitConfig,
    basis: &BasisConfig,
) -> Result<Option<CpMode>> {
    check_residual(residual, train)?;
    if group.order() <= cfg.n_pc || group.order() > cfg.n_inter || group.dims().iter().any(|&d| d >= train.nd()) {
        return Err(HdmrError::Config(format!("group {group} cannot carry a CP mode")));
    }
    let table = Problem::from_set(train).table(basis, cfg.no);
    let ctx = als::CpContext {
        table: &table,
        weights: None,
        no: cfg.no,
    };
    let mut warnings = Vec::new();
    ctx.fit_mode(group, residual, cfg, &mut warnings)
}

/// Anything that predicts values at the rows of a sample set.
pub trait Surrogate {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<f64>>;
}

impl Surrogate for HdmrModel {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        if set.nd() != self.nd {
            return Err(HdmrError::Shape(format!("model has Nd = {}, samples have {}", self.nd, set.nd())));
        }
        self.evaluate_rows(set.xi())
    }
}

/// `||u - u_hat|| / ||u||` over `truth`.
pub fn relative_error_values(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(HdmrError::Shape("prediction and truth lengths differ".into()));
    }
    if truth.is_empty() {
        return Err(HdmrError::Size("empty test set".into()));
    }
    let un = norm(truth);
    if un == 0.0 {
        return Err(HdmrError::ZeroNorm);
    }
    let diff: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / un)
}

pub fn relative_error<S: Surrogate + ?Sized>(surrogate: &S, test: &SampleSet) -> Result<f64> {
    relative_error_values(&surrogate.predict_set(test)?, test.u())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamTag};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sym(no: usize) -> BasisConfig {
        BasisConfig::legendre(-1.0, 1.0, no).unwrap()
    }

    fn uniform_set(nd: usize, nq: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> SampleSet {
        let mut rng = stream(seed, StreamTag::Test, 40, 0);
        let xi: Vec<f64> = (0..nd * nq).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = xi.chunks(nd).map(&f).collect();
        SampleSet::from_xi(nd, xi, u).unwrap()
    }

    fn p2(x: f64) -> f64 {
        3f64.sqrt() * x
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error_values(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(relative_error_values(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(relative_error_values(&[3.0, 0.0], &[3.0, 4.0]).unwrap(), 0.8, epsilon = 1e-15);
        assert!(matches!(relative_error_values(&[1.0], &[0.0]), Err(HdmrError::ZeroNorm)));
    }

    #[test]
    fn dense_mode_recovers_interaction() {
        let set = uniform_set(2, 500, 1, |x| 2.0 * p2(x[0]) * p2(x[1]));
        let cfg = FitConfig {
            no: 4,
            n_pc: 2,
            n_inter: 2,
            ..Default::default()
        };
        let g = Group::from_labels(&[1, 2]).unwrap();
        let m = fit_dense_mode(&g, set.u(), &set, &cfg, &sym(4)).unwrap().unwrap();
        for (alpha, c) in m.indices.iter().zip(&m.coeffs) {
            let want = if alpha == &vec![2, 2] { 2.0 } else { 0.0 };
            assert_abs_diff_eq!(*c, want, epsilon = 1e-8);
        }
        let zero = fit_dense_mode(&g, &vec![0.0; 500], &set, &cfg, &sym(4)).unwrap().unwrap();
        assert!(zero.coeffs.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn dense_mode_ignores_orthogonal_residual() {
        let set = uniform_set(2, 300, 2, |_| 0.0);
        let cfg = FitConfig {
            no: 3,
            n_pc: 1,
            n_inter: 1,
            ..Default::default()
        };
        let g = Group::from_labels(&[1]).unwrap();
        let table = Problem::from_set(&set).table(&sym(3), 3);
        let design = DenseDesign::build(&table, None, &g, 3).unwrap().unwrap();
        // project a random vector onto the orthogonal complement of the columns
        let mut rng = stream(3, StreamTag::Test, 0, 0);
        let v: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = design.factor.solve(&v, 0.0);
        let fit = design.values(&c);
        let resid: Vec<f64> = v.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let m = fit_dense_mode(&g, &resid, &set, &cfg, &sym(3)).unwrap().unwrap();
        assert!(norm(&m.coeffs) <= 1e-10);
    }

    #[test]
    fn cp_mode_recovers_rank_one_product() {
        let set = uniform_set(4, 2000, 4, |x| x.iter().map(|v| p2(*v)).product());
        let cfg = FitConfig {
            no: 3,
            n_pc: 1,
            n_inter: 4,
            nr: 1,
            ..Default::default()
        };
        let g = Group::from_labels(&[1, 2, 3, 4]).unwrap();
        let m = fit_cp_mode(&g, set.u(), &set, &cfg, &sym(3)).unwrap().unwrap();
        let mut model = HdmrModel::constant(sym(3), 4, 1, 4, 0.0).unwrap();
        model.insert_mode(crate::model::Mode::Cp(m)).unwrap();
        let pred = model.predict_set(&set).unwrap();
        let err: f64 = pred.iter().zip(set.u()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm(set.u());
        assert!(err <= 1e-6, "reconstruction error {err}");
    }

    #[test]
    fn cp_zero_residual_and_determinism() {
        let set = uniform_set(3, 200, 5, |x| (x[0] * x[1] * x[2]).sin());
        let cfg = FitConfig {
            no: 3,
            n_pc: 1,
            n_inter: 3,
            nr: 2,
            seed: 9,
            ..Default::default()
        };
        let g = Group::from_labels(&[1, 2, 3]).unwrap();
        let zero = fit_cp_mode(&g, &vec![0.0; 200], &set, &cfg, &sym(3)).unwrap().unwrap();
        assert!(zero.factors.iter().flatten().flatten().all(|c| *c == 0.0));
        let a = fit_cp_mode(&g, set.u(), &set, &cfg, &sym(3)).unwrap().unwrap();
        let b = fit_cp_mode(&g, set.u(), &set, &cfg, &sym(3)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn als_substeps_never_increase_residual() {
        let set = uniform_set(3, 300, 6, |x| (x[0] + x[1] * x[2]).cos() * x[0]);
        let cfg = FitConfig {
            no: 4,
            als_max_sweeps: 15,
            ..Default::default()
        };
        let basis = sym(4);
        let table = Problem::from_set(&set).table(&basis, 4);
        let ctx = als::CpContext {
            table: &table,
            weights: None,
            no: 4,
        };
        let g = Group::from_labels(&[1, 2, 3]).unwrap();
        let init = vec![vec![0.3, -0.2, 0.5, 0.1]; 3];
        let fit = ctx.fit_rank(&g, set.u(), init, &cfg).unwrap();
        for w in fit.substeps.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }
}
