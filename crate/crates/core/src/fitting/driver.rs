//! Pass-wise HDMR construction along a selection path with cross-validated
//! stopping and a final refit on the pooled data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::als::CpContext;
use super::wtls::{gradient_factor, wtls_solve, CovarianceBlocks};
use super::{DenseDesign, FitConfig};
use crate::basis::{BasisConfig, UnivariateTable};
use crate::dataset::{norm, SampleSet};
use crate::design::Problem;
use crate::error::{HdmrError, Result};
use crate::model::{CpMode, DenseMode, Group, HdmrModel, Mode};
use crate::selection::SelectionPath;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: usize,
    /// Group added in this pass; `None` for the constant model.
    pub group: Option<Group>,
    pub train_residual: f64,
    pub cv: Option<f64>,
    pub sweeps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub passes: Vec<PassRecord>,
    /// Number of groups kept in the returned model.
    pub retained: usize,
    pub warnings: Vec<String>,
}

impl FitDiagnostics {
    pub fn cv_trace(&self) -> Vec<f64> {
        self.passes.iter().filter_map(|p| p.cv).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "pass,dims,train_residual,cv")?;
        for p in &self.passes {
            let dims = p.group.as_ref().map(|g| g.to_string()).unwrap_or_default();
            let cv = p.cv.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", p.pass, dims, p.train_residual, cv)?;
        }
        Ok(())
    }
}

enum State {
    Dense {
        design: DenseDesign,
        coeffs: Vec<f64>,
        blocks: Option<CovarianceBlocks>,
    },
    Cp(CpMode),
}

struct Active {
    group: Group,
    state: State,
    vals: Vec<f64>,
}

struct Driver<'a> {
    prob: Problem<'a>,
    table: UnivariateTable,
    cfg: &'a FitConfig,
    basis: &'a BasisConfig,
    z: Vec<f64>,
    f_empty: f64,
    resid: Vec<f64>,
    modes: Vec<Active>,
    warnings: Vec<String>,
}

impl<'a> Driver<'a> {
    fn new(prob: Problem<'a>, cfg: &'a FitConfig, basis: &'a BasisConfig, groups: &[Group]) -> Self {
        let z = prob.intercept();
        let f_empty = prob.constant_fit(prob.target);
        let resid = prob.target.iter().zip(&z).map(|(u, z)| u - f_empty * z).collect();
        Driver {
            table: prob.table_for(basis, cfg.no, groups),
            prob,
            cfg,
            basis,
            z,
            f_empty,
            resid,
            modes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn cp_ctx(&self) -> CpContext<'_> {
        CpContext {
            table: &self.table,
            weights: self.prob.weights,
            no: self.cfg.no,
        }
    }

    /// Value noise is scaled by the current fitted value: the observed
    /// value is itself noisy and weighting by it biases the fit low.
    fn blocks_for(&self, group: &Group, indices: &[Vec<usize>]) -> Result<Option<CovarianceBlocks>> {
        let Some(robust) = &self.cfg.robust else { return Ok(None) };
        let mut blocks = CovarianceBlocks::new(indices.len());
        for q in 0..self.prob.nq() {
            let w = self.prob.weights.map_or(1.0, |w| w[q]);
            let f = gradient_factor(self.basis, self.prob.xi_row(q), group.dims(), indices, robust.noise.s, w);
            let fitted = self.prob.target[q] - self.resid[q];
            blocks.push(f, (robust.noise.s_u * fitted).powi(2))?;
        }
        Ok(Some(blocks))
    }

    fn solve_dense(&mut self, design: &DenseDesign, blocks: Option<&CovarianceBlocks>, target: &[f64]) -> Result<Vec<f64>> {
        let c0 = design.factor.solve(target, self.cfg.ridge);
        match (blocks, &self.cfg.robust) {
            (Some(b), Some(robust)) => {
                let res = wtls_solve(&design.psi, target, b, Some(&c0), robust.tol, robust.max_iter)?;
                if !res.converged {
                    self.warnings.push("wTLS reached its iteration limit".into());
                }
                Ok(res.coeffs)
            }
            _ => Ok(c0),
        }
    }

    /// Fits a new mode on the current residual. `false` if the group was skipped.
    fn add(&mut self, group: &Group) -> Result<bool> {
        let target = self.resid.clone();
        let active = if group.order() <= self.cfg.n_pc {
            let Some(design) = DenseDesign::build(&self.table, self.prob.weights, group, self.cfg.no)? else {
                return Ok(false);
            };
            let blocks = self.blocks_for(group, &design.indices)?;
            let coeffs = self.solve_dense(&design, blocks.as_ref(), &target)?;
            let vals = design.values(&coeffs);
            Active {
                group: group.clone(),
                state: State::Dense { design, coeffs, blocks },
                vals,
            }
        } else {
            let mut warnings = Vec::new();
            let mode = self.cp_ctx().fit_mode(group, &target, self.cfg, &mut warnings)?;
            self.warnings.extend(warnings);
            let Some(mode) = mode else { return Ok(false) };
            let vals = self.cp_ctx().mode_values(&mode);
            Active {
                group: group.clone(),
                state: State::Cp(mode),
                vals,
            }
        };
        self.resid.iter_mut().zip(&active.vals).for_each(|(r, v)| *r -= v);
        self.modes.push(active);
        Ok(true)
    }

    fn refit(&mut self, k: usize) -> Result<()> {
        let mut active = std::mem::replace(
            &mut self.modes[k],
            Active {
                group: Group::from_sorted(vec![0]),
                state: State::Cp(CpMode {
                    group: Group::from_sorted(vec![0]),
                    factors: Vec::new(),
                }),
                vals: Vec::new(),
            },
        );
        self.resid.iter_mut().zip(&active.vals).for_each(|(r, v)| *r += v);
        let target = self.resid.clone();
        match &mut active.state {
            State::Dense { design, coeffs, blocks } => {
                if blocks.is_some() {
                    // fitted values including this mode
                    self.resid.iter_mut().zip(&active.vals).for_each(|(r, v)| *r -= v);
                    *blocks = self.blocks_for(&active.group, &design.indices)?;
                    self.resid.copy_from_slice(&target);
                }
                let c0 = design.factor.solve(&target, self.cfg.ridge);
                *coeffs = match (blocks.as_ref(), &self.cfg.robust) {
                    (Some(b), Some(robust)) => {
                        let res = wtls_solve(&design.psi, &target, b, Some(&c0), robust.tol, robust.max_iter)?;
                        if !res.converged {
                            self.warnings.push("wTLS reached its iteration limit".into());
                        }
                        res.coeffs
                    }
                    _ => c0,
                };
                active.vals = design.values(coeffs);
            }
            State::Cp(mode) => {
                self.cp_ctx().refit_mode(mode, &target, self.cfg)?;
                active.vals = self.cp_ctx().mode_values(mode);
            }
        }
        self.resid.iter_mut().zip(&active.vals).for_each(|(r, v)| *r -= v);
        self.modes[k] = active;
        Ok(())
    }

    /// Constant update, weighted by the inverse value-noise variance when robust.
    fn constant_delta(&self) -> f64 {
        let Some(robust) = self.cfg.robust.as_ref().filter(|r| r.noise.s_u > 0.0) else {
            return self.prob.constant_fit(&self.resid);
        };
        let var: Vec<f64> = (0..self.prob.nq())
            .map(|q| (robust.noise.s_u * (self.prob.target[q] - self.resid[q])).powi(2))
            .collect();
        let floor = 1e-12 * var.iter().cloned().fold(0.0, f64::max);
        if floor <= 0.0 {
            return self.prob.constant_fit(&self.resid);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for q in 0..var.len() {
            let w = 1.0 / var[q].max(floor);
            num += w * self.z[q] * self.resid[q];
            den += w * self.z[q] * self.z[q];
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Cyclic re-estimation of the constant and every mode.
    fn sweeps(&mut self) -> Result<usize> {
        if !self.cfg.update_sweeps {
            return Ok(0);
        }
        let mut count = 0;
        for _ in 0..self.cfg.max_update_sweeps {
            count += 1;
            let before = norm(&self.resid);
            let delta = self.constant_delta();
            self.f_empty += delta;
            self.resid.iter_mut().zip(&self.z).for_each(|(r, z)| *r -= delta * z);
            for k in 0..self.modes.len() {
                self.refit(k)?;
            }
            let after = norm(&self.resid);
            if before == 0.0 || (before - after).abs() <= self.cfg.update_sweeps_tol * before {
                break;
            }
        }
        Ok(count)
    }

    fn model(&self) -> Result<HdmrModel> {
        let mut m = HdmrModel::constant(*self.basis, self.prob.nd, self.cfg.n_pc, self.cfg.n_inter, self.f_empty)?;
        for a in &self.modes {
            let mode = match &a.state {
                State::Dense { design, coeffs, .. } => Mode::Dense(DenseMode {
                    group: a.group.clone(),
                    indices: design.indices.clone(),
                    coeffs: coeffs.clone(),
                }),
                State::Cp(cp) => Mode::Cp(cp.clone()),
            };
            m.insert_mode(mode)?;
        }
        Ok(m)
    }
}

/// Relative validation error of `model` on a (possibly weighted) problem.
fn cv_error(model: &HdmrModel, val: &Problem) -> Result<f64> {
    let pred = model.evaluate_rows(val.xi)?;
    let mut num = 0.0;
    for (q, (p, u)) in pred.iter().zip(val.target).enumerate() {
        let w = val.weights.map_or(1.0, |w| w[q]);
        num += (u - w * p).powi(2);
    }
    let den = norm(val.target);
    Ok(if den > 0.0 { num.sqrt() / den } else { num.sqrt() })
}

/// Owned concatenation of two problems.
pub(crate) struct Pooled {
    nd: usize,
    xi: Vec<f64>,
    target: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl Pooled {
    pub fn new(a: &Problem, b: &Problem) -> Self {
        let weights = match (a.weights, b.weights) {
            (None, None) => None,
            _ => {
                let wa = a.intercept();
                let wb = b.intercept();
                Some([wa, wb].concat())
            }
        };
        Pooled {
            nd: a.nd,
            xi: [a.xi, b.xi].concat(),
            target: [a.target, b.target].concat(),
            weights,
        }
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            nd: self.nd,
            xi: &self.xi,
            target: &self.target,
            weights: self.weights.as_deref(),
        }
    }
}

/// Fits the given groups in order on one problem, with update sweeps after
/// every addition. Returns the model and the final training residual norm.
pub(crate) fn refit_skeleton(
    prob: &Problem,
    groups: &[Group],
    cfg: &FitConfig,
    basis: &BasisConfig,
    warnings: &mut Vec<String>,
) -> Result<(HdmrModel, f64)> {
    let mut d = Driver::new(*prob, cfg, basis, groups);
    for g in groups {
        if d.add(g)? {
            d.sweeps()?;
        }
    }
    warnings.append(&mut d.warnings);
    Ok((d.model()?, norm(&d.resid)))
}

pub(crate) fn fit_problem(
    train: &Problem,
    val: Option<&Problem>,
    groups: &[Group],
    cfg: &FitConfig,
    basis: &BasisConfig,
) -> Result<(HdmrModel, FitDiagnostics)> {
    cfg.validate(train.nd)?;
    basis.validate()?;
    if basis.max_order != cfg.no {
        return Err(HdmrError::Config(format!(
            "basis order {} differs from No = {}",
            basis.max_order, cfg.no
        )));
    }
    if train.nq() == 0 {
        return Err(HdmrError::Size("training set is empty".into()));
    }
    let mut diag = FitDiagnostics::default();
    let mut d = Driver::new(*train, cfg, basis, groups);
    let cv0 = match val {
        Some(v) => Some(cv_error(&d.model()?, v)?),
        None => None,
    };
    diag.passes.push(PassRecord {
        pass: 0,
        group: None,
        train_residual: norm(&d.resid),
        cv: cv0,
        sweeps: 0,
    });
    for g in groups {
        if g.order() > cfg.n_inter || g.dims().iter().any(|&k| k >= train.nd) {
            diag.warnings.push(format!("group {g} exceeds the model layout; skipped"));
            continue;
        }
        if !d.add(g)? {
            diag.warnings.push(format!("group {g} has no predictors at No = {}; skipped", cfg.no));
            continue;
        }
        let sweeps = d.sweeps()?;
        let cv = match val {
            Some(v) => Some(cv_error(&d.model()?, v)?),
            None => None,
        };
        diag.passes.push(PassRecord {
            pass: diag.passes.len(),
            group: Some(g.clone()),
            train_residual: norm(&d.resid),
            cv,
            sweeps,
        });
        let n = diag.passes.len();
        if n >= 3 {
            if let (Some(a), Some(b), Some(c)) = (diag.passes[n - 3].cv, diag.passes[n - 2].cv, diag.passes[n - 1].cv) {
                if c > b && b > a {
                    break;
                }
            }
        }
    }
    diag.warnings.append(&mut d.warnings);

    let best = if val.is_some() {
        // shortest prefix within round-off of the minimum
        let cvs: Vec<f64> = diag.passes.iter().map(|p| p.cv.unwrap_or(f64::INFINITY)).collect();
        let min = cvs.iter().cloned().fold(f64::INFINITY, f64::min);
        let slack = 1e-10 * cvs[0].max(min);
        cvs.iter().position(|&c| c <= min + slack).unwrap_or(0)
    } else {
        let msg = "validation set empty: keeping every path group".to_string();
        log::warn!("{msg}");
        diag.warnings.push(msg);
        diag.passes.len() - 1
    };
    let retained: Vec<Group> = diag.passes[1..=best].iter().filter_map(|p| p.group.clone()).collect();
    diag.retained = retained.len();

    let model = match val {
        Some(v) if v.nq() > 0 => {
            let pooled = Pooled::new(train, v);
            refit_skeleton(&pooled.problem(), &retained, cfg, basis, &mut diag.warnings)?.0
        }
        _ => refit_skeleton(train, &retained, cfg, basis, &mut diag.warnings)?.0,
    };
    Ok((model, diag))
}

/// Builds an HDMR model along `path`, stopping on the validation error and
/// refitting the retained groups on training plus validation samples.
pub fn fit_hdmr(
    train: &SampleSet,
    validation: &SampleSet,
    path: &SelectionPath,
    cfg: &FitConfig,
    basis: &BasisConfig,
) -> Result<(HdmrModel, FitDiagnostics)> {
    if train.is_empty() {
        return Err(HdmrError::Size("training set is empty".into()));
    }
    if !validation.is_empty() && validation.nd() != train.nd() {
        return Err(HdmrError::Shape("training and validation sets differ in Nd".into()));
    }
    let tp = Problem::from_set(train);
    let vp = Problem::from_set(validation);
    let val = if validation.is_empty() { None } else { Some(&vp) };
    fit_problem(&tp, val, &path.groups(), cfg, basis)
}
