//! Separated spatial x stochastic surrogates `u(x, xi) ~ sum_n w_n(x) l_n(xi)`
//! built by deflation, alternating spatial least squares with weighted HDMR
//! fits of the stochastic modes.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisConfig;
use crate::dataset::{dot, SampleSet};
use crate::design::Problem;
use crate::error::{HdmrError, Result};
use crate::fitting::{fit_problem, ls_solve, refit_skeleton, FitConfig, Surrogate};
use crate::model::{Group, HdmrModel, SCHEMA_VERSION};
use crate::selection::{glars_problem, SelectionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialKind {
    NodalPiecewiseLinear,
    LegendreTensor,
}

/// Tensor-product basis over a box, `per_dim` functions per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialBasis {
    pub kind: SpatialKind,
    pub per_dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SpatialBasis {
    /// Hat functions on `per_dim` uniform nodes per coordinate.
    pub fn hat(per_dim: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = SpatialBasis {
            kind: SpatialKind::NodalPiecewiseLinear,
            per_dim,
            lo,
            hi,
        };
        b.validate()?;
        Ok(b)
    }

    /// Orthonormal Legendre polynomials of degree `< per_dim` per coordinate.
    pub fn legendre(per_dim: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = SpatialBasis {
            kind: SpatialKind::LegendreTensor,
            per_dim,
            lo,
            hi,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_dim == 0 {
            return Err(HdmrError::Config("spatial basis needs at least one function".into()));
        }
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(HdmrError::Config("spatial domain bounds are missing or mismatched".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(HdmrError::Config("empty spatial domain".into()));
        }
        Ok(())
    }

    pub fn ndx(&self) -> usize {
        self.lo.len()
    }

    pub fn cardx(&self) -> usize {
        self.per_dim.pow(self.ndx() as u32)
    }

    fn univariate(&self, d: usize, x: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = (self.lo[d], self.hi[d]);
        let slack = 1e-12 * (hi - lo);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(HdmrError::Config(format!("x = {x} outside the spatial domain [{lo}, {hi}]")));
        }
        let x = x.clamp(lo, hi);
        let n = self.per_dim;
        match self.kind {
            SpatialKind::NodalPiecewiseLinear => {
                out.iter_mut().for_each(|v| *v = 0.0);
                if n == 1 {
                    out[0] = 1.0;
                    return Ok(());
                }
                let t = (x - lo) / (hi - lo) * (n - 1) as f64;
                let i = (t.floor() as usize).min(n - 2);
                let f = t - i as f64;
                out[i] = 1.0 - f;
                out[i + 1] = f;
            }
            SpatialKind::LegendreTensor => {
                BasisConfig::legendre(lo, hi, n.max(2) - 1)?.eval_all(x, out);
            }
        }
        Ok(())
    }

    /// All `cardx` basis values at `x`, last coordinate fastest.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ndx() {
            return Err(HdmrError::Shape(format!("point of dimension {} for Ndx = {}", x.len(), self.ndx())));
        }
        let n = self.per_dim;
        let mut out = vec![1.0];
        let mut uni = vec![0.0; n];
        for (d, &xd) in x.iter().enumerate() {
            self.univariate(d, xd, &mut uni)?;
            out = out.iter().flat_map(|a| uni.iter().map(move |b| a * b)).collect();
        }
        Ok(out)
    }

    /// `Nq x cardx` design for row-major points.
    pub fn design(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let ndx = self.ndx();
        let nq = x.len() / ndx;
        let mut m = DMatrix::zeros(nq, self.cardx());
        for q in 0..nq {
            for (l, v) in self.eval(&x[q * ndx..(q + 1) * ndx])?.into_iter().enumerate() {
                m[(q, l)] = v;
            }
        }
        Ok(m)
    }
}

/// Root-mean-square over samples.
fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (dot(v, v) / v.len() as f64).sqrt()
    }
}

fn mat_vec(m: &DMatrix<f64>, c: &[f64]) -> Vec<f64> {
    (m * nalgebra::DVector::from_column_slice(c)).iter().copied().collect()
}

/// Spatial coefficients normalized to unit sample RMS, and the scale removed.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFit {
    pub coeffs: Vec<f64>,
    pub scale: f64,
}

fn spatial_from_design(phi: &DMatrix<f64>, residual: &[f64], lambda: &[f64]) -> Result<SpatialFit> {
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(HdmrError::NonFinite("stochastic mode values".into()));
    }
    if lambda.iter().all(|v| *v == 0.0) {
        return Err(HdmrError::Degenerate("stochastic mode vanishes at every sample".into()));
    }
    let mut scaled = phi.clone();
    for (q, l) in lambda.iter().enumerate() {
        scaled.row_mut(q).scale_mut(*l);
    }
    let mut c = ls_solve(&scaled, residual, 0.0)?;
    let scale = rms(&mat_vec(phi, &c));
    if scale > 0.0 {
        c.iter_mut().for_each(|v| *v /= scale);
    } else {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(SpatialFit { coeffs: c, scale })
}

/// Least-squares spatial mode `w = Phi c` minimizing `||res - w .* lambda||`.
/// `x` holds the training locations row-major. A zero `scale` signals a
/// vanishing mode.
pub fn fit_spatial_mode(residual: &[f64], lambda: &[f64], x: &[f64], basis: &SpatialBasis) -> Result<SpatialFit> {
    let nq = residual.len();
    if lambda.len() != nq || x.len() != nq * basis.ndx() {
        return Err(HdmrError::Shape(format!(
            "residual of length {nq}, mode values {}, locations {}",
            lambda.len(),
            x.len()
        )));
    }
    spatial_from_design(&basis.design(x)?, residual, lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatedConfig {
    pub lambda_max: usize,
    pub outer_tol: f64,
    pub stop_norm_frac: f64,
    pub max_outer_iters: usize,
    /// Re-solve every spatial mode jointly after each new pair.
    pub joint_update: bool,
}

impl Default for SeparatedConfig {
    fn default() -> Self {
        SeparatedConfig {
            lambda_max: 3,
            outer_tol: 1e-4,
            stop_norm_frac: 1e-3,
            max_outer_iters: 50,
            joint_update: false,
        }
    }
}

impl SeparatedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) || !(self.stop_norm_frac >= 0.0) || self.max_outer_iters == 0 {
            return Err(HdmrError::Config(
                "outer_tol must be positive, stop_norm_frac non-negative and max_outer_iters at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One `(w_n, lambda_n)` pair; `lambda = None` is the unit mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub w_coeffs: Vec<f64>,
    pub lambda: Option<HdmrModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatedModel {
    pub spatial: SpatialBasis,
    pub nd: usize,
    pairs: Vec<Pair>,
}

impl SeparatedModel {
    /// The first pair must carry the unit mode and no later pair may.
    pub fn new(spatial: SpatialBasis, nd: usize, pairs: Vec<Pair>) -> Result<Self> {
        spatial.validate()?;
        if pairs.is_empty() || pairs[0].lambda.is_some() {
            return Err(HdmrError::Malformed("the first pair must be the unit mode".into()));
        }
        for p in &pairs {
            if p.w_coeffs.len() != spatial.cardx() {
                return Err(HdmrError::Shape(format!(
                    "spatial coefficients of length {} for cardx = {}",
                    p.w_coeffs.len(),
                    spatial.cardx()
                )));
            }
        }
        for p in &pairs[1..] {
            match &p.lambda {
                None => return Err(HdmrError::Malformed("unit mode after the first pair".into())),
                Some(m) if m.nd != nd => {
                    return Err(HdmrError::Shape(format!("stochastic mode has Nd = {}, expected {nd}", m.nd)))
                }
                _ => {}
            }
        }
        Ok(SeparatedModel { spatial, nd, pairs })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Number of stochastic modes besides the unit one.
    pub fn rank(&self) -> usize {
        self.pairs.len() - 1
    }

    /// Leading pairs up to rank `r`.
    pub fn truncated(&self, r: usize) -> SeparatedModel {
        SeparatedModel {
            spatial: self.spatial.clone(),
            nd: self.nd,
            pairs: self.pairs[..(r + 1).min(self.pairs.len())].to_vec(),
        }
    }

    pub fn evaluate(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        if xi.len() != self.nd {
            return Err(HdmrError::Shape(format!("xi of length {} for Nd = {}", xi.len(), self.nd)));
        }
        let phi = self.spatial.eval(x)?;
        let mut v = 0.0;
        for p in &self.pairs {
            let w = dot(&phi, &p.w_coeffs);
            v += match &p.lambda {
                None => w,
                Some(m) => w * m.evaluate(xi)?,
            };
        }
        Ok(v)
    }

    /// Row-major batch evaluation.
    pub fn evaluate_rows(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let (ndx, nd) = (self.spatial.ndx(), self.nd);
        if x.len() % ndx != 0 || xi.len() % nd != 0 || x.len() / ndx != xi.len() / nd {
            return Err(HdmrError::Shape("location and germ arrays disagree in row count".into()));
        }
        x.par_chunks(ndx)
            .zip(xi.par_chunks(nd))
            .map(|(x, xi)| self.evaluate(x, xi))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&SeparatedDoc::from(self)).map_err(|e| HdmrError::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SeparatedDoc = serde_json::from_str(text).map_err(|e| HdmrError::Malformed(e.to_string()))?;
        doc.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

impl Surrogate for SeparatedModel {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        if set.ndx() != self.spatial.ndx() || set.nd() != self.nd {
            return Err(HdmrError::Shape(format!(
                "model expects Ndx = {}, Nd = {}; samples have {}, {}",
                self.spatial.ndx(),
                self.nd,
                set.ndx(),
                set.nd()
            )));
        }
        self.evaluate_rows(set.x(), set.xi())
    }
}

#[derive(Serialize, Deserialize)]
struct PairDoc {
    w_coeffs: Vec<f64>,
    lambda: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct SeparatedDoc {
    schema: u64,
    nd: usize,
    spatial_basis: SpatialBasis,
    pairs: Vec<PairDoc>,
}

impl From<&SeparatedModel> for SeparatedDoc {
    fn from(m: &SeparatedModel) -> Self {
        SeparatedDoc {
            schema: SCHEMA_VERSION,
            nd: m.nd,
            spatial_basis: m.spatial.clone(),
            pairs: m
                .pairs
                .iter()
                .map(|p| PairDoc {
                    w_coeffs: p.w_coeffs.clone(),
                    lambda: match &p.lambda {
                        None => serde_json::Value::String("unit".into()),
                        Some(m) => serde_json::to_value(m).expect("model serializes"),
                    },
                })
                .collect(),
        }
    }
}

impl SeparatedDoc {
    fn into_model(self) -> Result<SeparatedModel> {
        if self.schema != SCHEMA_VERSION {
            return Err(HdmrError::Schema {
                found: self.schema,
                expected: SCHEMA_VERSION,
            });
        }
        let pairs = self
            .pairs
            .into_iter()
            .map(|p| {
                let lambda = match p.lambda {
                    serde_json::Value::String(s) if s == "unit" => None,
                    v => Some(serde_json::from_value(v).map_err(|e| HdmrError::Malformed(e.to_string()))?),
                };
                Ok(Pair {
                    w_coeffs: p.w_coeffs,
                    lambda,
                })
            })
            .collect::<Result<_>>()?;
        SeparatedModel::new(self.spatial_basis, self.nd, pairs)
    }
}

/// Either kind of model file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Hdmr(HdmrModel),
    Separated(SeparatedModel),
}

impl AnyModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| HdmrError::Malformed(e.to_string()))?;
        if v.get("pairs").is_some() {
            Ok(AnyModel::Separated(SeparatedModel::from_json(text)?))
        } else {
            Ok(AnyModel::Hdmr(HdmrModel::from_json(text)?))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        AnyModel::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            AnyModel::Hdmr(m) => m.to_json(),
            AnyModel::Separated(m) => m.to_json(),
        }
    }
}

impl Surrogate for AnyModel {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        match self {
            AnyModel::Hdmr(m) => m.predict_set(set),
            AnyModel::Separated(m) => m.predict_set(set),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRecord {
    pub rank: usize,
    pub outer_iters: usize,
    pub converged: bool,
    pub lambda_norm: f64,
    pub train_residual: f64,
    pub groups: Vec<Group>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeparatedDiagnostics {
    pub ranks: Vec<RankRecord>,
    pub warnings: Vec<String>,
}

impl SeparatedDiagnostics {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,outer_iters,converged,lambda_norm,train_residual,groups")?;
        for r in &self.ranks {
            let groups: Vec<String> = r.groups.iter().map(|g| g.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.rank,
                r.outer_iters,
                r.converged,
                r.lambda_norm,
                r.train_residual,
                groups.join(" ")
            )?;
        }
        Ok(())
    }
}

fn weighted<'a>(nd: usize, xi: &'a [f64], target: &'a [f64], w: &'a [f64]) -> Problem<'a> {
    Problem {
        nd,
        xi,
        target,
        weights: Some(w),
    }
}

/// Deflation fit of a separated model. Groups for each stochastic mode are
/// chosen once by weighted group-LARS on `train` with cross-validated
/// stopping on `validation`; the alternation then runs on both sets pooled.
pub fn fit_separated(
    train: &SampleSet,
    validation: &SampleSet,
    spatial: &SpatialBasis,
    sel_cfg: &SelectionConfig,
    fit_cfg: &FitConfig,
    basis: &BasisConfig,
    sep_cfg: &SeparatedConfig,
) -> Result<(SeparatedModel, SeparatedDiagnostics)> {
    if train.is_empty() {
        return Err(HdmrError::Size("training set is empty".into()));
    }
    spatial.validate()?;
    sep_cfg.validate()?;
    let nd = train.nd();
    sel_cfg.validate(nd)?;
    fit_cfg.validate(nd)?;
    if train.ndx() != spatial.ndx() {
        return Err(HdmrError::Shape(format!(
            "samples have Ndx = {}, spatial basis {}",
            train.ndx(),
            spatial.ndx()
        )));
    }
    let pool = if validation.is_empty() {
        train.clone()
    } else {
        train.concat(validation)?
    };
    let (nt, np) = (train.len(), pool.len());
    let phi = spatial.design(pool.x())?;
    let mut diag = SeparatedDiagnostics::default();

    // rank 0: lambda_0 = 1
    let c0 = ls_solve(&phi, pool.u(), 0.0)?;
    let mut pairs = vec![Pair {
        w_coeffs: c0,
        lambda: None,
    }];
    let mut lam_vals = vec![vec![1.0; np]];
    let mut res = deflated(&phi, pool.u(), &pairs, &lam_vals);
    let u_norm = rms(pool.u());
    let first_order: Vec<Group> = (0..nd).map(|k| Group::from_sorted(vec![k])).collect();

    for n in 1..=sep_cfg.lambda_max {
        let before = dot(&res, &res).sqrt();
        if before == 0.0 {
            break;
        }
        let snapshot = pairs.clone();
        // envelope of the residual, then a provisional first-order mode
        let abs_res: Vec<f64> = res.iter().map(|r| r.abs()).collect();
        let env = spatial_from_design(&phi, &abs_res, &vec![1.0; np])?;
        if env.scale == 0.0 {
            break;
        }
        let w_env = mat_vec(&phi, &env.coeffs);
        let (provisional, _) =
            refit_skeleton(&weighted(nd, pool.xi(), &res, &w_env), &first_order, fit_cfg, basis, &mut diag.warnings)?;
        let mut lam = provisional.evaluate_rows(pool.xi())?;
        if lam.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut sf = spatial_from_design(&phi, &res, &lam)?;
        if sf.scale == 0.0 {
            break;
        }
        let mut w = mat_vec(&phi, &sf.coeffs);

        // skeleton selection on the training rows
        let tp = weighted(nd, &pool.xi()[..nt * nd], &res[..nt], &w[..nt]);
        let vp = weighted(nd, &pool.xi()[nt * nd..], &res[nt..], &w[nt..]);
        let path = glars_problem(&tp, sel_cfg, basis)?;
        let (mut model, fd) = fit_problem(&tp, if np > nt { Some(&vp) } else { None }, &path.groups(), fit_cfg, basis)?;
        diag.warnings.extend(fd.warnings.iter().cloned());
        let skeleton: Vec<Group> = fd.passes.iter().skip(1).take(fd.retained).filter_map(|p| p.group.clone()).collect();
        lam = model.evaluate_rows(pool.xi())?;

        let mut iters = 0;
        let mut converged = false;
        while iters < sep_cfg.max_outer_iters {
            iters += 1;
            let prev = rms(&lam);
            if prev == 0.0 {
                break;
            }
            if sep_cfg.joint_update {
                let mut all = lam_vals.clone();
                all.push(lam.clone());
                let mut blocks = joint_coefficients(&phi, pool.u(), &all)?;
                let cn = blocks.pop().expect("current block");
                for (m, c) in blocks.into_iter().enumerate() {
                    set_spatial(&phi, &mut pairs[m], &mut lam_vals[m], c);
                }
                res = deflated(&phi, pool.u(), &pairs, &lam_vals);
                sf = normalized(&phi, cn);
            } else {
                sf = spatial_from_design(&phi, &res, &lam)?;
            }
            if sf.scale == 0.0 {
                break;
            }
            w = mat_vec(&phi, &sf.coeffs);
            model = refit_skeleton(&weighted(nd, pool.xi(), &res, &w), &skeleton, fit_cfg, basis, &mut diag.warnings)?.0;
            lam = model.evaluate_rows(pool.xi())?;
            if (rms(&lam) - prev).abs() < sep_cfg.outer_tol * prev {
                converged = true;
                break;
            }
        }
        let lambda_norm = rms(&lam);
        if sf.scale == 0.0 || lambda_norm < sep_cfg.stop_norm_frac * u_norm {
            log::info!("stochastic mode {n} is negligible ({lambda_norm:e}); stopping");
            pairs = snapshot;
            break;
        }
        let next: Vec<f64> = res.iter().zip(w.iter().zip(&lam)).map(|(r, (w, l))| r - w * l).collect();
        let after = dot(&next, &next).sqrt();
        if after > before {
            let msg = format!("pair {n} would raise the residual from {before:e} to {after:e}; stopping");
            log::warn!("{msg}");
            diag.warnings.push(msg);
            pairs = snapshot;
            break;
        }
        res = next;
        pairs.push(Pair {
            w_coeffs: sf.coeffs.clone(),
            lambda: Some(model),
        });
        lam_vals.push(lam);
        diag.ranks.push(RankRecord {
            rank: n,
            outer_iters: iters,
            converged,
            lambda_norm,
            train_residual: after,
            groups: skeleton,
        });
        if !converged {
            diag.warnings.push(format!("rank {n}: alternation stopped after {iters} iterations"));
        }
    }
    Ok((SeparatedModel::new(spatial.clone(), nd, pairs)?, diag))
}

/// `u - sum_n (Phi c_n) .* lambda_n`.
fn deflated(phi: &DMatrix<f64>, u: &[f64], pairs: &[Pair], lam_vals: &[Vec<f64>]) -> Vec<f64> {
    let mut r = u.to_vec();
    for (p, lam) in pairs.iter().zip(lam_vals) {
        let w = mat_vec(phi, &p.w_coeffs);
        r.iter_mut().zip(w.iter().zip(lam)).for_each(|(r, (w, l))| *r -= w * l);
    }
    r
}

fn normalized(phi: &DMatrix<f64>, mut c: Vec<f64>) -> SpatialFit {
    let scale = rms(&mat_vec(phi, &c));
    if scale > 0.0 {
        c.iter_mut().for_each(|v| *v /= scale);
    } else {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    SpatialFit { coeffs: c, scale }
}

/// Stores `c` in `pair`, moving the scale of non-unit modes into `lambda`.
fn set_spatial(phi: &DMatrix<f64>, pair: &mut Pair, lam: &mut [f64], c: Vec<f64>) {
    match &mut pair.lambda {
        None => pair.w_coeffs = c,
        Some(m) => {
            let sf = normalized(phi, c);
            if sf.scale > 0.0 {
                m.scale(sf.scale);
                lam.iter_mut().for_each(|v| *v *= sf.scale);
                pair.w_coeffs = sf.coeffs;
            } else {
                // keep the direction, zero the contribution
                m.scale(0.0);
                lam.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Least-squares spatial coefficients for every mode at once, the stochastic
/// values held fixed.
fn joint_coefficients(phi: &DMatrix<f64>, u: &[f64], lam_vals: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (np, cardx) = phi.shape();
    let mut a = DMatrix::zeros(np, cardx * lam_vals.len());
    for (n, lam) in lam_vals.iter().enumerate() {
        for l in 0..cardx {
            for q in 0..np {
                a[(q, n * cardx + l)] = phi[(q, l)] * lam[q];
            }
        }
    }
    let c = ls_solve(&a, u, 0.0)?;
    Ok(c.chunks(cardx).map(|b| b.to_vec()).collect())
}

/// Re-solves all spatial modes of `model` jointly on `data`, keeping the
/// result only if the residual does not grow. Returns the residual norms
/// before and after.
pub fn joint_spatial_update(model: &mut SeparatedModel, data: &SampleSet) -> Result<(f64, f64)> {
    let phi = model.spatial.design(data.x())?;
    let np = data.len();
    let mut lam_vals: Vec<Vec<f64>> = model
        .pairs
        .iter()
        .map(|p| match &p.lambda {
            None => Ok(vec![1.0; np]),
            Some(m) => m.evaluate_rows(data.xi()),
        })
        .collect::<Result<_>>()?;
    let r0 = deflated(&phi, data.u(), &model.pairs, &lam_vals);
    let before = dot(&r0, &r0).sqrt();
    let blocks = joint_coefficients(&phi, data.u(), &lam_vals)?;
    let mut pairs = model.pairs.clone();
    for (m, c) in blocks.into_iter().enumerate() {
        set_spatial(&phi, &mut pairs[m], &mut lam_vals[m], c);
    }
    let r1 = deflated(&phi, data.u(), &pairs, &lam_vals);
    let after = dot(&r1, &r1).sqrt();
    if after <= before {
        model.pairs = pairs;
        Ok((before, after))
    } else {
        Ok((before, before))
    }
}
