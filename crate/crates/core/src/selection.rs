//! Group least angle regression over the linear selection dictionary.
//!
//! Each candidate group carries the dense tensor predictors of total degree
//! at most `NoLARS`, orthonormalized within the group under the empirical
//! inner product. The path adds whole groups at the points where their
//! normalized correlation with the residual catches up with the active set.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, UnivariateTable};
use crate::dataset::{dot, norm, SampleSet};
use crate::design::Problem;
use crate::error::{HdmrError, Result};
use crate::model::{binomial, enumerate_dense_indices, Group};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Maximum total degree of the selection predictors.
    pub no_lars: usize,
    pub n_inter: usize,
    pub max_groups: usize,
    pub residual_tol: f64,
    pub hierarchical: bool,
    /// Margin kept between the active predictor count and the sample count.
    pub dof_buffer: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            no_lars: 4,
            n_inter: 3,
            max_groups: 100,
            residual_tol: 1e-10,
            hierarchical: false,
            dof_buffer: 1,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, nd: usize) -> Result<()> {
        if self.no_lars == 0 || self.max_groups == 0 || self.n_inter == 0 {
            return Err(HdmrError::Config("NoLARS, Ninter and max_groups must be at least 1".into()));
        }
        if self.n_inter > nd {
            return Err(HdmrError::Config(format!("Ninter = {} exceeds Nd = {nd}", self.n_inter)));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(HdmrError::Config("residual_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Lazily enumerated candidate groups.
#[derive(Clone, Debug)]
pub struct GroupDictionary {
    nd: usize,
    n_inter: usize,
    no_lars: usize,
    hierarchical: bool,
}

pub fn build_group_dictionary(nd: usize, cfg: &SelectionConfig) -> GroupDictionary {
    GroupDictionary {
        nd,
        n_inter: cfg.n_inter.min(nd),
        no_lars: cfg.no_lars,
        hierarchical: cfg.hierarchical,
    }
}

impl GroupDictionary {
    /// All groups by increasing order, lexicographic within an order.
    pub fn iter(&self) -> GroupIter {
        GroupIter {
            nd: self.nd,
            max_order: self.n_inter,
            cur: if self.nd == 0 || self.n_inter == 0 { None } else { Some(vec![0]) },
        }
    }

    pub fn group_count(&self) -> u128 {
        (1..=self.n_inter).map(|l| binomial(self.nd, l)).sum()
    }

    /// Selection predictors of `g`.
    pub fn predictors(&self, g: &Group) -> Vec<Vec<usize>> {
        enumerate_dense_indices(g.order(), self.no_lars)
    }

    /// Groups that may enter given the active set. In hierarchical mode a
    /// group of order > 1 needs all its sub-groups one order lower active.
    pub fn is_eligible(&self, g: &Group, active: &BTreeSet<Group>) -> bool {
        if !self.hierarchical || g.order() == 1 {
            return true;
        }
        let dims = g.dims();
        (0..dims.len()).all(|skip| {
            let sub: Vec<usize> = dims.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &d)| d).collect();
            active.contains(&Group::from_sorted(sub))
        })
    }
}

pub struct GroupIter {
    nd: usize,
    max_order: usize,
    cur: Option<Vec<usize>>,
}

impl Iterator for GroupIter {
    type Item = Group;

    fn next(&mut self) -> Option<Group> {
        let cur = self.cur.take()?;
        let out = Group::from_sorted(cur.clone());
        let mut next = cur;
        let k = next.len();
        // advance to the next k-combination of 0..nd
        let mut i = k;
        while i > 0 && next[i - 1] == self.nd - k + i - 1 {
            i -= 1;
        }
        if i > 0 {
            next[i - 1] += 1;
            for j in i..k {
                next[j] = next[j - 1] + 1;
            }
            self.cur = Some(next);
        } else if k < self.max_order && k < self.nd {
            self.cur = Some((0..=k).collect());
        }
        Some(out)
    }
}

/// Normalized group correlation `||Psi^T r||^2 / p` for columns that are
/// orthonormal under the empirical inner product. `None` for an empty group.
pub fn group_correlation(residual: &[f64], columns: &[Vec<f64>]) -> Option<f64> {
    if columns.is_empty() {
        return None;
    }
    let s: f64 = columns.iter().map(|c| dot(c, residual).powi(2)).sum();
    Some(s / columns.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub group: Group,
    /// Common score of the active set when the group entered.
    pub entry_score: f64,
    /// Step length (fraction of the least-squares direction) taken just before entry.
    pub step_size: f64,
    pub residual_norm_after: f64,
    /// Relative spread of the exact active scores right after entry.
    pub score_spread: f64,
    /// Wall time of the candidate scan that produced this entry.
    pub scan_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub steps: Vec<PathStep>,
}

impl SelectionPath {
    /// Path with the given entry order and no selection statistics.
    pub fn from_groups(groups: &[Group]) -> Self {
        SelectionPath {
            steps: groups
                .iter()
                .map(|g| PathStep {
                    group: g.clone(),
                    entry_score: f64::NAN,
                    step_size: f64::NAN,
                    residual_norm_after: f64::NAN,
                    score_spread: f64::NAN,
                    scan_seconds: 0.0,
                })
                .collect(),
        }
    }

    pub fn groups(&self) -> Vec<Group> {
        self.steps.iter().map(|s| s.group.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_scan_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.scan_seconds).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,dims,entry_score,residual_norm")?;
        for (k, s) in self.steps.iter().enumerate() {
            writeln!(w, "{},{},{},{}", k + 1, s.group, s.entry_score, s.residual_norm_after)?;
        }
        Ok(())
    }
}

struct Candidate {
    group: Group,
    alphas: Vec<Vec<usize>>,
    /// Projection of each raw column on the normalized intercept.
    m: Vec<f64>,
    /// Row-major inverse Cholesky factor of the centered Gram matrix.
    linv: Vec<f64>,
    a: Vec<f64>,
}

impl Candidate {
    fn p(&self) -> usize {
        self.alphas.len()
    }

    fn score(&self) -> f64 {
        dot(&self.a, &self.a) / self.p() as f64
    }
}

struct Context<'a> {
    table: UnivariateTable,
    weights: Option<&'a [f64]>,
    zhat: Vec<f64>,
    nq: usize,
}

impl Context<'_> {
    fn column(&self, g: &Group, alpha: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.nq];
        self.table.fill_product(g.dims(), alpha, self.weights, &mut out);
        out
    }

    /// `sum_q v_q prod_i psi_{alpha_i}(xi_{q,i})` with `v` already row-weighted.
    fn project(&self, g: &Group, alpha: &[usize], v: &[f64]) -> f64 {
        let cols: Vec<&[f64]> = g.dims().iter().zip(alpha).map(|(&d, &a)| self.table.column(d, a)).collect();
        match cols.as_slice() {
            [c0] => dot(c0, v),
            [c0, c1] => (0..self.nq).map(|q| v[q] * c0[q] * c1[q]).sum(),
            [c0, c1, c2] => (0..self.nq).map(|q| v[q] * c0[q] * c1[q] * c2[q]).sum(),
            _ => (0..self.nq).map(|q| v[q] * cols.iter().map(|c| c[q]).product::<f64>()).sum(),
        }
    }

    fn centered_columns(&self, g: &Group, alphas: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut cols = Vec::with_capacity(alphas.len());
        let mut m = Vec::with_capacity(alphas.len());
        for alpha in alphas {
            let mut c = self.column(g, alpha);
            let mk = dot(&self.zhat, &c);
            c.iter_mut().zip(&self.zhat).for_each(|(ci, zi)| *ci -= mk * zi);
            cols.push(c);
            m.push(mk);
        }
        (cols, m)
    }

    fn prepare(&self, g: Group, alphas: Vec<Vec<usize>>, r: &[f64]) -> Option<Candidate> {
        if alphas.is_empty() {
            return None;
        }
        let (cols, m_all) = self.centered_columns(&g, &alphas);
        // Cholesky of the Gram matrix in column order, dropping dependent columns
        let mut kept: Vec<usize> = Vec::new();
        let mut l_rows: Vec<Vec<f64>> = Vec::new();
        for j in 0..cols.len() {
            let gjj = dot(&cols[j], &cols[j]);
            if !(gjj > 1e-300) {
                continue;
            }
            let mut l = Vec::with_capacity(kept.len() + 1);
            for (row, &k) in kept.iter().enumerate() {
                let gkj = dot(&cols[k], &cols[j]);
                let s: f64 = (0..row).map(|t| l_rows[row][t] * l[t]).sum();
                l.push((gkj - s) / l_rows[row][row]);
            }
            let piv2 = gjj - dot(&l, &l);
            if piv2 <= 1e-10 * gjj {
                continue;
            }
            l.push(piv2.sqrt());
            l_rows.push(l);
            kept.push(j);
        }
        if kept.len() < alphas.len() {
            log::debug!("group {g}: dropped {} dependent columns", alphas.len() - kept.len());
        }
        if kept.is_empty() {
            return None;
        }
        let p = kept.len();
        let linv = invert_lower(&l_rows);
        let g_r: Vec<f64> = kept.iter().map(|&k| dot(&cols[k], r)).collect();
        let a = lower_mul(&linv, p, &g_r);
        Some(Candidate {
            group: g,
            alphas: kept.iter().map(|&k| alphas[k].clone()).collect(),
            m: kept.iter().map(|&k| m_all[k]).collect(),
            linv,
            a,
        })
    }

    /// Orthonormal basis of the centered group columns.
    fn orthonormal_columns(&self, c: &Candidate) -> Vec<Vec<f64>> {
        let (cols, _) = self.centered_columns(&c.group, &c.alphas);
        let p = c.p();
        (0..p)
            .map(|j| {
                let mut q = vec![0.0; self.nq];
                for k in 0..=j {
                    let coef = c.linv[j * p + k];
                    q.iter_mut().zip(&cols[k]).for_each(|(qi, ci)| *qi += coef * ci);
                }
                q
            })
            .collect()
    }
}

fn invert_lower(l: &[Vec<f64>]) -> Vec<f64> {
    let p = l.len();
    let mut inv = vec![0.0; p * p];
    for j in 0..p {
        inv[j * p + j] = 1.0 / l[j][j];
        for i in j + 1..p {
            let s: f64 = (j..i).map(|k| l[i][k] * inv[k * p + j]).sum();
            inv[i * p + j] = -s / l[i][i];
        }
    }
    inv
}

fn lower_mul(linv: &[f64], p: usize, v: &[f64]) -> Vec<f64> {
    (0..p).map(|i| (0..=i).map(|k| linv[i * p + k] * v[k]).sum()).collect()
}

/// Smallest `t` in `[0, 1]` with `||a - t b||^2 = p c (1 - t)^2`.
fn entry_time(a: &[f64], b: &[f64], p: f64, c: f64) -> Option<f64> {
    let qa = dot(b, b) - p * c;
    let qb = -2.0 * (dot(a, b) - p * c);
    let qc = dot(a, a) - p * c;
    if qc >= 0.0 {
        return Some(0.0);
    }
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    let mut roots = Vec::with_capacity(2);
    if qa.abs() <= 1e-14 * scale {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let k = -0.5 * (qb + qb.signum() * sq);
            if k != 0.0 {
                roots.push(k / qa);
                roots.push(qc / k);
            } else {
                roots.push(-qb / (2.0 * qa));
            }
        }
    }
    roots
        .into_iter()
        .filter(|t| t.is_finite() && *t >= 0.0 && *t <= 1.0 + 1e-12)
        .map(|t| t.min(1.0))
        .min_by(|x, y| x.total_cmp(y))
}

/// Runs group-LARS on a training set.
pub fn glars_select(train: &SampleSet, cfg: &SelectionConfig, basis: &BasisConfig) -> Result<SelectionPath> {
    glars_problem(&Problem::from_set(train), cfg, basis)
}

pub(crate) fn glars_problem(prob: &Problem, cfg: &SelectionConfig, basis: &BasisConfig) -> Result<SelectionPath> {
    cfg.validate(prob.nd)?;
    basis.validate()?;
    let nq = prob.nq();
    if nq < 2 {
        return Err(HdmrError::Size(format!("group-LARS needs at least 2 samples, got {nq}")));
    }
    if prob.target.iter().any(|v| !v.is_finite()) {
        return Err(HdmrError::NonFinite("training values".into()));
    }
    let dict = build_group_dictionary(prob.nd, cfg);
    let z = prob.intercept();
    let zn = norm(&z);
    if !(zn > 0.0) {
        return Err(HdmrError::Degenerate("all row weights vanish".into()));
    }
    let zhat: Vec<f64> = z.iter().map(|v| v / zn).collect();
    let ctx = Context {
        table: prob.table(basis, cfg.no_lars),
        weights: prob.weights,
        zhat,
        nq,
    };

    let unorm = norm(prob.target);
    let zu = dot(&ctx.zhat, prob.target);
    let mut r: Vec<f64> = prob.target.iter().zip(&ctx.zhat).map(|(u, z)| u - zu * z).collect();
    let mut path = SelectionPath::default();
    if norm(&r) <= cfg.residual_tol * unorm || norm(&r) == 0.0 {
        return Ok(path);
    }

    let mut active_set: BTreeSet<Group> = BTreeSet::new();
    let clock = Instant::now();
    let initial: Vec<Group> = dict.iter().filter(|g| dict.is_eligible(g, &active_set)).collect();
    let mut cands: Vec<Candidate> = initial
        .into_par_iter()
        .map(|g| {
            let alphas = dict.predictors(&g);
            ctx.prepare(g, alphas, &r)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut scan_seconds = clock.elapsed().as_secs_f64();
    if cands.is_empty() {
        return Ok(path);
    }

    // first entry: highest score, ties to the smallest group
    let mut entering = 0;
    for (k, cand) in cands.iter().enumerate() {
        if cand.score() > cands[entering].score() {
            entering = k;
        }
    }
    let mut c = cands[entering].score();
    let c0 = c;
    let mut step_size = 0.0;

    let mut basis_u: Vec<Vec<f64>> = Vec::new();
    let mut active: Vec<(Group, Vec<Vec<f64>>)> = Vec::new();

    loop {
        let p_new = cands[entering].p();
        if basis_u.len() + 1 + p_new + cfg.dof_buffer > nq {
            log::debug!("selection stopped: predictor budget reached");
            break;
        }
        let cand = cands.remove(entering);
        let q_cols = ctx.orthonormal_columns(&cand);
        for q in &q_cols {
            let mut v = q.clone();
            for _ in 0..2 {
                for u in &basis_u {
                    let h = dot(u, &v);
                    v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= h * ui);
                }
            }
            let nv = norm(&v);
            if nv > 1e-10 {
                v.iter_mut().for_each(|vi| *vi /= nv);
                basis_u.push(v);
            }
        }
        active.push((cand.group.clone(), q_cols));
        active_set.insert(cand.group.clone());

        let exact: Vec<f64> = active
            .iter()
            .map(|(_, q)| group_correlation(&r, q).unwrap_or(0.0))
            .collect();
        let hi = exact.iter().cloned().fold(f64::MIN, f64::max);
        let lo = exact.iter().cloned().fold(f64::MAX, f64::min);
        path.steps.push(PathStep {
            group: cand.group.clone(),
            entry_score: c,
            step_size,
            residual_norm_after: norm(&r),
            score_spread: if hi > 0.0 { (hi - lo) / hi } else { 0.0 },
            scan_seconds,
        });

        if path.len() >= cfg.max_groups {
            break;
        }
        if dict.hierarchical {
            let known: BTreeSet<Group> = cands.iter().map(|c| c.group.clone()).collect();
            let fresh: Vec<Group> = dict
                .iter()
                .filter(|g| g.order() > 1 && !active_set.contains(g) && !known.contains(g))
                .filter(|g| g.dims().iter().any(|d| cand.group.contains(*d)))
                .filter(|g| dict.is_eligible(g, &active_set))
                .collect();
            for g in fresh {
                let alphas = dict.predictors(&g);
                if let Some(c) = ctx.prepare(g, alphas, &r) {
                    cands.push(c);
                }
            }
            cands.sort_by(|x, y| x.group.cmp(&y.group));
        }
        if cands.is_empty() {
            break;
        }

        // least-squares direction on the active span
        let mut d = vec![0.0; nq];
        for u in &basis_u {
            let h = dot(u, &r);
            d.iter_mut().zip(u).for_each(|(di, ui)| *di += h * ui);
        }
        let zd = dot(&ctx.zhat, &d);
        let dw: Vec<f64> = match prob.weights {
            Some(w) => d.iter().zip(w).map(|(a, b)| a * b).collect(),
            None => d.clone(),
        };

        let clock = Instant::now();
        let scan: Vec<(Vec<f64>, Option<f64>)> = cands
            .par_iter()
            .map(|cand| {
                let p = cand.p();
                let g_d: Vec<f64> = cand
                    .alphas
                    .iter()
                    .zip(&cand.m)
                    .map(|(alpha, mk)| ctx.project(&cand.group, alpha, &dw) - mk * zd)
                    .collect();
                let b = lower_mul(&cand.linv, p, &g_d);
                let t = entry_time(&cand.a, &b, p as f64, c);
                (b, t)
            })
            .collect();
        scan_seconds = clock.elapsed().as_secs_f64();

        let mut best: Option<(usize, f64)> = None;
        for (k, (_, t)) in scan.iter().enumerate() {
            if let Some(t) = t {
                if best.map_or(true, |(_, bt)| *t < bt) {
                    best = Some((k, *t));
                }
            }
        }
        let Some((next, t)) = best else {
            log::debug!("selection stopped: no candidate reaches the active score");
            break;
        };

        r.iter_mut().zip(&d).for_each(|(ri, di)| *ri -= t * di);
        for (cand, (b, _)) in cands.iter_mut().zip(&scan) {
            cand.a.iter_mut().zip(b).for_each(|(ai, bi)| *ai -= t * bi);
        }
        c *= (1.0 - t) * (1.0 - t);
        step_size = t;
        entering = next;

        if norm(&r) <= cfg.residual_tol * unorm || c <= 1e-28 * c0 {
            break;
        }
    }
    Ok(path)
}
