//! Alternating least squares for CP interaction modes.

use nalgebra::DMatrix;
use rand::Rng;

use super::ls::LsFactor;
use super::FitConfig;
use crate::basis::UnivariateTable;
use crate::dataset::norm;
use crate::error::Result;
use crate::model::{CpMode, Group};
use crate::rng::{key_of, stream, StreamTag};

pub(crate) struct CpContext<'a> {
    pub table: &'a UnivariateTable,
    pub weights: Option<&'a [f64]>,
    pub no: usize,
}

/// Outcome of one rank-1 ALS run; `substeps` holds the residual norm after
/// every single-factor update.
pub(crate) struct RankFit {
    pub factors: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub substeps: Vec<f64>,
    pub vanished: bool,
}

impl CpContext<'_> {
    fn nq(&self) -> usize {
        self.table.nq()
    }

    /// `sum_a c_a psi_{a+2}(xi_dim)` over samples.
    pub fn factor_values(&self, dim: usize, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nq()];
        for (a, c) in coeffs.iter().enumerate() {
            let col = self.table.column(dim, a + 2);
            out.iter_mut().zip(col).for_each(|(o, v)| *o += c * v);
        }
        out
    }

    fn product(&self, fv: &[Vec<f64>], skip: Option<usize>) -> Vec<f64> {
        let mut out = match self.weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; self.nq()],
        };
        for (i, f) in fv.iter().enumerate() {
            if Some(i) != skip {
                out.iter_mut().zip(f).for_each(|(o, v)| *o *= v);
            }
        }
        out
    }

    pub fn rank_values(&self, group: &Group, factors: &[Vec<f64>]) -> Vec<f64> {
        let fv: Vec<Vec<f64>> = group.dims().iter().zip(factors).map(|(&d, c)| self.factor_values(d, c)).collect();
        self.product(&fv, None)
    }

    pub fn mode_values(&self, mode: &CpMode) -> Vec<f64> {
        let mut out = vec![0.0; self.nq()];
        for rank in &mode.factors {
            let v = self.rank_values(&mode.group, rank);
            out.iter_mut().zip(&v).for_each(|(o, x)| *o += x);
        }
        out
    }

    /// ALS sweeps for one rank-1 term against `target`, starting from `init`.
    pub fn fit_rank(&self, group: &Group, target: &[f64], init: Vec<Vec<f64>>, cfg: &FitConfig) -> Result<RankFit> {
        let dims = group.dims();
        let nq = self.nq();
        let mut factors = init;
        let mut fv: Vec<Vec<f64>> = dims.iter().zip(&factors).map(|(&d, c)| self.factor_values(d, c)).collect();
        let mut substeps = Vec::new();
        let tnorm = norm(target);
        let mut prev = f64::INFINITY;
        for _ in 0..cfg.als_max_sweeps.max(1) {
            for (i, &d) in dims.iter().enumerate() {
                let partial = self.product(&fv, Some(i));
                if partial.iter().all(|v| *v == 0.0) {
                    return Ok(RankFit {
                        factors,
                        values: vec![0.0; nq],
                        substeps,
                        vanished: true,
                    });
                }
                let psi = DMatrix::from_fn(nq, self.no, |q, a| self.table.column(d, a + 2)[q] * partial[q]);
                let c = LsFactor::new(&psi)?.solve(target, cfg.ridge);
                fv[i] = self.factor_values(d, &c);
                factors[i] = c;
                let vals = self.product(&fv, None);
                substeps.push(residual_norm(target, &vals));
            }
            let cur = *substeps.last().unwrap();
            let converged = cur <= 1e-14 * tnorm || (prev.is_finite() && (prev - cur).abs() <= cfg.als_tol * prev);
            prev = cur;
            if converged {
                break;
            }
        }
        let values = self.product(&fv, None);
        Ok(RankFit {
            factors,
            values,
            substeps,
            vanished: false,
        })
    }

    fn random_init(&self, group: &Group, seed: u64, rank: usize, attempt: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, StreamTag::CpInit, key_of(group.dims()), rank as u64 + (attempt << 32));
        (0..group.order())
            .map(|_| (0..self.no).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Greedy rank-by-rank fit with deflation. Returns `None` when no rank
    /// could be fitted.
    pub fn fit_mode(&self, group: &Group, target: &[f64], cfg: &FitConfig, warnings: &mut Vec<String>) -> Result<Option<CpMode>> {
        let tnorm = norm(target);
        let mut resid = target.to_vec();
        let mut factors: Vec<Vec<Vec<f64>>> = Vec::new();
        if tnorm == 0.0 {
            return Ok(Some(CpMode {
                group: group.clone(),
                factors: vec![vec![vec![0.0; self.no]; group.order()]],
            }));
        }
        for r in 0..cfg.nr {
            if norm(&resid) <= 1e-14 * tnorm {
                break;
            }
            let mut fit = self.fit_rank(group, &resid, self.random_init(group, cfg.seed, r, 0), cfg)?;
            if fit.vanished {
                fit = self.fit_rank(group, &resid, self.random_init(group, cfg.seed, r, 1), cfg)?;
            }
            if fit.vanished {
                let msg = format!("group {group}: rank {} skipped after vanishing partial product", r + 1);
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
            resid.iter_mut().zip(&fit.values).for_each(|(a, b)| *a -= b);
            factors.push(fit.factors);
        }
        if factors.is_empty() {
            return Ok(None);
        }
        Ok(Some(CpMode {
            group: group.clone(),
            factors,
        }))
    }

    /// Warm-started block update of every rank of an existing mode.
    pub fn refit_mode(&self, mode: &mut CpMode, target: &[f64], cfg: &FitConfig) -> Result<()> {
        let mut rank_vals: Vec<Vec<f64>> = mode.factors.iter().map(|f| self.rank_values(&mode.group, f)).collect();
        for r in 0..mode.factors.len() {
            let mut t = target.to_vec();
            for (k, v) in rank_vals.iter().enumerate() {
                if k != r {
                    t.iter_mut().zip(v).for_each(|(a, b)| *a -= b);
                }
            }
            let before = residual_norm(&t, &rank_vals[r]);
            let fit = self.fit_rank(&mode.group, &t, mode.factors[r].clone(), cfg)?;
            if !fit.vanished && residual_norm(&t, &fit.values) <= before {
                mode.factors[r] = fit.factors;
                rank_vals[r] = fit.values;
            }
        }
        Ok(())
    }
}

fn residual_norm(target: &[f64], vals: &[f64]) -> f64 {
    target.iter().zip(vals).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}
