//! HDMR (ANOVA) surrogate: a constant plus interaction modes over groups of
//! stochastic dimensions.
//!
//! Every mode is built from univariate factors that exclude the constant
//! polynomial (`alpha >= 2`), so each mode has zero mean and distinct modes
//! are orthogonal under the uniform product measure. Mean, variance and
//! Sobol indices therefore follow in closed form from the coefficients.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::basis::BasisConfig;
use crate::error::{HdmrError, Result};

pub const SCHEMA_VERSION: u64 = 1;

/// Sorted set of (zero-based) stochastic dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Group(Vec<usize>);

impl Group {
    pub fn new(mut dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(HdmrError::Config("a group needs at least one dimension".into()));
        }
        dims.sort_unstable();
        if dims.windows(2).any(|w| w[0] == w[1]) {
            return Err(HdmrError::Config(format!("duplicate dimension in group {dims:?}")));
        }
        Ok(Group(dims))
    }

    /// Builds a group from one-based dimension labels.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.contains(&0) {
            return Err(HdmrError::Config("dimension labels are one-based".into()));
        }
        Group::new(labels.iter().map(|l| l - 1).collect())
    }

    pub(crate) fn from_sorted(dims: Vec<usize>) -> Self {
        debug_assert!(dims.windows(2).all(|w| w[0] < w[1]));
        Group(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, dim: usize) -> bool {
        self.0.binary_search(&dim).is_ok()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|d| d + 1).collect()
    }

    /// Applies a relabeling of dimensions.
    pub fn permuted(&self, perm: &[usize]) -> Group {
        let mut dims: Vec<usize> = self.0.iter().map(|&d| perm[d]).collect();
        dims.sort_unstable();
        Group(dims)
    }
}

impl fmt::Display for Group {
    /// One-based labels joined by ';'.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| (d + 1).to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

impl Serialize for Group {
    /// Serialized as one-based labels.
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<usize>::deserialize(d)?;
        group_from_labels(&labels).map_err(serde::de::Error::custom)
    }
}

/// All multi-indices `alpha` of length `order` with every `alpha_i >= 2`
/// and total degree `sum(alpha_i - 1) <= no`, in lexicographic order.
/// There are `C(no, order)` of them.
pub fn enumerate_dense_indices(order: usize, no: usize) -> Vec<Vec<usize>> {
    if order == 0 || order > no {
        if order > no {
            log::debug!("interaction order {order} exceeds polynomial order {no}: no dense predictors");
        }
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(order);
    fn rec(order: usize, budget: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let remaining = order - cur.len();
        if remaining == 0 {
            out.push(cur.clone());
            return;
        }
        // leave at least degree 1 for each later slot
        let max_deg = budget - (remaining - 1);
        for deg in 1..=max_deg {
            cur.push(deg + 1);
            rec(order, budget - deg, cur, out);
            cur.pop();
        }
    }
    rec(order, no, &mut cur, &mut out);
    out
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Upper bound on the size of the a-priori approximation basis:
/// dense modes up to order `n_pc`, rank-`nr` CP modes above it.
pub fn dictionary_cardinality(nd: usize, no: usize, n_inter: usize, n_pc: usize, nr: usize) -> Result<u128> {
    if n_pc > n_inter || n_inter > nd {
        return Err(HdmrError::Config(format!(
            "thresholds must satisfy 0 <= N_PC ({n_pc}) <= Ninter ({n_inter}) <= Nd ({nd})"
        )));
    }
    let dense: u128 = (0..=n_pc).map(|l| binomial(nd, l) * binomial(no, l)).sum();
    let cp: u128 = (n_pc + 1..=n_inter)
        .map(|l| binomial(nd, l) * (nr * l * no) as u128)
        .sum();
    Ok(dense + cp)
}

/// Mode expanded on tensor-product polynomials of bounded total degree.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMode {
    pub group: Group,
    pub indices: Vec<Vec<usize>>,
    pub coeffs: Vec<f64>,
}

/// Mode in canonical polyadic form: `sum_r prod_{i in group} f_{r,i}(xi_i)`
/// where each univariate factor has coefficients on `psi_2..=psi_{No+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpMode {
    pub group: Group,
    /// `factors[r][k][a]`: rank `r`, k-th dimension of the group, index `a + 2`.
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl CpMode {
    pub fn rank(&self) -> usize {
        self.factors.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    Dense(DenseMode),
    Cp(CpMode),
}

impl Mode {
    pub fn group(&self) -> &Group {
        match self {
            Mode::Dense(m) => &m.group,
            Mode::Cp(m) => &m.group,
        }
    }

    /// `psi[d][k]` holds `psi_{k+1}(xi_d)`.
    pub fn evaluate_with(&self, psi: &[Vec<f64>]) -> f64 {
        match self {
            Mode::Dense(m) => m
                .indices
                .iter()
                .zip(&m.coeffs)
                .map(|(alpha, c)| {
                    c * m
                        .group
                        .dims()
                        .iter()
                        .zip(alpha)
                        .map(|(&d, &a)| psi[d][a - 1])
                        .product::<f64>()
                })
                .sum(),
            Mode::Cp(m) => m
                .factors
                .iter()
                .map(|rank| {
                    rank.iter()
                        .zip(m.group.dims())
                        .map(|(coef, &d)| coef.iter().enumerate().map(|(a, c)| c * psi[d][a + 1]).sum::<f64>())
                        .product::<f64>()
                })
                .sum(),
        }
    }

    /// Exact variance under orthonormal univariate factors.
    pub fn variance(&self) -> f64 {
        match self {
            Mode::Dense(m) => m.coeffs.iter().map(|c| c * c).sum(),
            Mode::Cp(m) => {
                let mut total = 0.0;
                for r in &m.factors {
                    for s in &m.factors {
                        total += r
                            .iter()
                            .zip(s)
                            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                            .product::<f64>();
                    }
                }
                total
            }
        }
    }

    pub fn coefficient_count(&self) -> usize {
        match self {
            Mode::Dense(m) => m.coeffs.len(),
            Mode::Cp(m) => m.factors.iter().flatten().map(Vec::len).sum(),
        }
    }

    fn scale(&mut self, s: f64) {
        match self {
            Mode::Dense(m) => m.coeffs.iter_mut().for_each(|c| *c *= s),
            Mode::Cp(m) => {
                for rank in &mut m.factors {
                    if let Some(first) = rank.first_mut() {
                        first.iter_mut().for_each(|c| *c *= s);
                    }
                }
            }
        }
    }
}

/// HDMR surrogate of a random variable.
#[derive(Clone, Debug, PartialEq)]
pub struct HdmrModel {
    pub basis: BasisConfig,
    pub nd: usize,
    pub f_empty: f64,
    pub n_pc: usize,
    pub n_inter: usize,
    modes: BTreeMap<Group, Mode>,
}

impl HdmrModel {
    /// Constant model.
    pub fn constant(basis: BasisConfig, nd: usize, n_pc: usize, n_inter: usize, f_empty: f64) -> Result<Self> {
        basis.validate()?;
        if nd == 0 || n_pc > n_inter || n_inter > nd {
            return Err(HdmrError::Config(format!(
                "need 1 <= Nd ({nd}) and N_PC ({n_pc}) <= Ninter ({n_inter}) <= Nd"
            )));
        }
        Ok(HdmrModel {
            basis,
            nd,
            f_empty,
            n_pc,
            n_inter,
            modes: BTreeMap::new(),
        })
    }

    pub fn modes(&self) -> impl Iterator<Item = &Mode> {
        self.modes.values()
    }

    pub fn mode(&self, g: &Group) -> Option<&Mode> {
        self.modes.get(g)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.modes.keys()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn coefficient_count(&self) -> usize {
        1 + self.modes.values().map(Mode::coefficient_count).sum::<usize>()
    }

    /// Adds or replaces a mode after checking it against the model layout.
    pub fn insert_mode(&mut self, mode: Mode) -> Result<()> {
        self.check_mode(&mode)?;
        self.modes.insert(mode.group().clone(), mode);
        Ok(())
    }

    fn check_mode(&self, mode: &Mode) -> Result<()> {
        let g = mode.group();
        let no = self.basis.max_order;
        if g.dims().iter().any(|&d| d >= self.nd) {
            return Err(HdmrError::Shape(format!("group {g} exceeds Nd = {}", self.nd)));
        }
        if g.order() > self.n_inter {
            return Err(HdmrError::Shape(format!("group {g} exceeds Ninter = {}", self.n_inter)));
        }
        match mode {
            Mode::Dense(m) => {
                if g.order() > self.n_pc {
                    return Err(HdmrError::Shape(format!("dense mode {g} above N_PC = {}", self.n_pc)));
                }
                if m.indices.len() != m.coeffs.len() {
                    return Err(HdmrError::Shape(format!("dense mode {g}: index/coefficient count mismatch")));
                }
                for alpha in &m.indices {
                    let deg: usize = alpha.iter().map(|a| a.saturating_sub(1)).sum();
                    if alpha.len() != g.order() || alpha.iter().any(|&a| a < 2 || a > no + 1) || deg > no {
                        return Err(HdmrError::Shape(format!("dense mode {g}: invalid multi-index {alpha:?}")));
                    }
                }
            }
            Mode::Cp(m) => {
                if g.order() <= self.n_pc {
                    return Err(HdmrError::Shape(format!("CP mode {g} at or below N_PC = {}", self.n_pc)));
                }
                if m.factors.is_empty() {
                    return Err(HdmrError::Shape(format!("CP mode {g} has rank 0")));
                }
                for rank in &m.factors {
                    if rank.len() != g.order() || rank.iter().any(|f| f.len() != no) {
                        return Err(HdmrError::Shape(format!("CP mode {g}: factor shape mismatch")));
                    }
                }
            }
        }
        Ok(())
    }

    fn used_dims(&self) -> Vec<bool> {
        let mut used = vec![false; self.nd];
        for g in self.modes.keys() {
            g.dims().iter().for_each(|&d| used[d] = true);
        }
        used
    }

    fn univariate_table(&self, xi: &[f64], used: &[bool]) -> Vec<Vec<f64>> {
        let n = self.basis.max_index();
        xi.iter()
            .zip(used)
            .map(|(&x, &u)| {
                if !u {
                    return Vec::new();
                }
                let mut v = vec![0.0; n];
                self.basis.eval_all(x, &mut v);
                v
            })
            .collect()
    }

    fn evaluate_masked(&self, xi: &[f64], used: &[bool]) -> f64 {
        let psi = self.univariate_table(xi, used);
        self.f_empty + self.modes.values().map(|m| m.evaluate_with(&psi)).sum::<f64>()
    }

    /// Surrogate value at one point.
    pub fn evaluate(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.nd {
            return Err(HdmrError::Shape(format!("expected {} coordinates, got {}", self.nd, xi.len())));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(HdmrError::NonFinite("evaluation point".into()));
        }
        Ok(self.evaluate_masked(xi, &self.used_dims()))
    }

    /// Values at every row of the row-major `xi` (`n x nd`).
    pub fn evaluate_rows(&self, xi: &[f64]) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        if xi.len() % self.nd != 0 {
            return Err(HdmrError::Shape("coordinate array is not a multiple of Nd".into()));
        }
        let used = self.used_dims();
        xi.par_chunks(self.nd)
            .map(|row| {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(HdmrError::NonFinite("evaluation point".into()));
                }
                Ok(self.evaluate_masked(row, &used))
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.f_empty
    }

    pub fn mode_variances(&self) -> BTreeMap<Group, f64> {
        self.modes.iter().map(|(g, m)| (g.clone(), m.variance())).collect()
    }

    pub fn variance(&self) -> f64 {
        self.modes.values().map(Mode::variance).sum()
    }

    /// First-order-in-group Sobol indices `Var(f_g) / Var(u)`.
    pub fn sobol_indices(&self) -> Result<BTreeMap<Group, f64>> {
        let total = self.variance();
        if !(total > 0.0) {
            return Err(HdmrError::ZeroVariance);
        }
        Ok(self.mode_variances().into_iter().map(|(g, v)| (g, v / total)).collect())
    }

    /// Total indices: for each dimension, the variance share of all groups containing it.
    pub fn total_sobol(&self) -> Result<Vec<f64>> {
        let s = self.sobol_indices()?;
        let mut totals = vec![0.0; self.nd];
        for (g, v) in &s {
            for &d in g.dims() {
                totals[d] += v;
            }
        }
        Ok(totals)
    }

    /// Multiplies the whole surrogate by `s`.
    pub fn scale(&mut self, s: f64) {
        self.f_empty *= s;
        self.modes.values_mut().for_each(|m| m.scale(s));
    }

    pub fn to_json(&self) -> Result<String> {
        let mut doc = ModelBody::from(self);
        doc.schema = Some(SCHEMA_VERSION);
        serde_json::to_string_pretty(&doc).map_err(|e| HdmrError::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelBody = serde_json::from_str(text).map_err(|e| HdmrError::Malformed(e.to_string()))?;
        match doc.schema {
            Some(SCHEMA_VERSION) => {}
            Some(found) => {
                return Err(HdmrError::Schema {
                    found,
                    expected: SCHEMA_VERSION,
                })
            }
            None => return Err(HdmrError::Malformed("missing schema version".into())),
        }
        HdmrModel::try_from(doc)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        HdmrModel::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModeDoc {
    Dense {
        dims: Vec<usize>,
        indices: Vec<Vec<usize>>,
        coeffs: Vec<f64>,
    },
    Cp {
        dims: Vec<usize>,
        factors: Vec<Vec<Vec<f64>>>,
    },
}

/// On-disk layout. `schema` is present at file level and omitted when the
/// model is embedded in another document.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub(crate) struct ModelBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<u64>,
    basis: BasisConfig,
    #[serde(rename = "Nd")]
    nd: usize,
    #[serde(rename = "N_PC")]
    n_pc: usize,
    #[serde(rename = "Ninter")]
    n_inter: usize,
    f_empty: f64,
    modes: Vec<ModeDoc>,
}

impl From<&HdmrModel> for ModelBody {
    fn from(m: &HdmrModel) -> Self {
        let modes = m
            .modes
            .values()
            .map(|mode| match mode {
                Mode::Dense(d) => ModeDoc::Dense {
                    dims: d.group.labels(),
                    indices: d.indices.clone(),
                    coeffs: d.coeffs.clone(),
                },
                Mode::Cp(c) => ModeDoc::Cp {
                    dims: c.group.labels(),
                    factors: c.factors.clone(),
                },
            })
            .collect();
        ModelBody {
            schema: None,
            basis: m.basis,
            nd: m.nd,
            n_pc: m.n_pc,
            n_inter: m.n_inter,
            f_empty: m.f_empty,
            modes,
        }
    }
}

impl TryFrom<ModelBody> for HdmrModel {
    type Error = HdmrError;

    fn try_from(doc: ModelBody) -> Result<Self> {
        let bad = |e: HdmrError| HdmrError::Malformed(e.to_string());
        let mut model = HdmrModel::constant(doc.basis, doc.nd, doc.n_pc, doc.n_inter, doc.f_empty).map_err(bad)?;
        for mode in doc.modes {
            let (dims, mode_of) = match mode {
                ModeDoc::Dense { dims, indices, coeffs } => {
                    let g = group_from_labels(&dims)?;
                    (dims, Mode::Dense(DenseMode { group: g, indices, coeffs }))
                }
                ModeDoc::Cp { dims, factors } => {
                    let g = group_from_labels(&dims)?;
                    (dims, Mode::Cp(CpMode { group: g, factors }))
                }
            };
            if model.modes.contains_key(mode_of.group()) {
                return Err(HdmrError::Malformed(format!("duplicate mode {dims:?}")));
            }
            model.insert_mode(mode_of).map_err(bad)?;
        }
        Ok(model)
    }
}

fn group_from_labels(labels: &[usize]) -> Result<Group> {
    if labels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HdmrError::Malformed(format!("mode dims {labels:?} must be strictly increasing")));
    }
    Group::from_labels(labels).map_err(|e| HdmrError::Malformed(e.to_string()))
}

impl Serialize for HdmrModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelBody::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for HdmrModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let body = ModelBody::deserialize(d)?;
        HdmrModel::try_from(body).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::gauss_uniform;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn basis(no: usize) -> BasisConfig {
        BasisConfig::legendre(-1.0, 1.0, no).unwrap()
    }

    fn dense(labels: &[usize], indices: Vec<Vec<usize>>, coeffs: Vec<f64>) -> Mode {
        Mode::Dense(DenseMode {
            group: Group::from_labels(labels).unwrap(),
            indices,
            coeffs,
        })
    }

    #[test]
    fn dense_index_enumeration() {
        assert_eq!(enumerate_dense_indices(1, 3), vec![vec![2], vec![3], vec![4]]);
        assert_eq!(enumerate_dense_indices(2, 8).len(), 28);
        assert!(enumerate_dense_indices(3, 2).is_empty());
        for order in 1..=4 {
            for no in 1..=9 {
                let idx = enumerate_dense_indices(order, no);
                assert_eq!(idx.len() as u128, binomial(no, order));
                assert!(idx.windows(2).all(|w| w[0] < w[1]), "lexicographic");
            }
        }
    }

    #[test]
    fn cardinality_examples() {
        assert_eq!(dictionary_cardinality(2, 2, 1, 1, 1).unwrap(), 5);
        assert_eq!(dictionary_cardinality(3, 2, 2, 1, 1).unwrap(), 19);
        assert_eq!(dictionary_cardinality(8, 8, 3, 3, 7).unwrap(), 3985);
        assert!(dictionary_cardinality(3, 2, 1, 2, 1).is_err());
        assert!(dictionary_cardinality(3, 2, 4, 2, 1).is_err());
    }

    #[test]
    fn group_labels_and_ordering() {
        let g = Group::new(vec![3, 0, 2]).unwrap();
        assert_eq!(g.dims(), &[0, 2, 3]);
        assert_eq!(g.to_string(), "1;3;4");
        assert!(Group::new(vec![1, 1]).is_err());
        assert!(Group::from_labels(&[0]).is_err());
        assert!(Group::from_labels(&[1]).unwrap() < Group::from_labels(&[1, 2]).unwrap());
        assert!(Group::from_labels(&[1, 2]).unwrap() < Group::from_labels(&[2]).unwrap());
    }

    #[test]
    fn evaluate_examples() {
        let mut m = HdmrModel::constant(basis(3), 3, 1, 2, 3.5).unwrap();
        assert_eq!(m.evaluate(&[0.1, 0.2, 0.3]).unwrap(), 3.5);
        m.f_empty = 0.0;
        m.insert_mode(dense(&[1], vec![vec![2]], vec![1.0])).unwrap();
        assert_abs_diff_eq!(m.evaluate(&[0.5, 0.0, 0.0]).unwrap(), 0.866_025_403_784_438_6, epsilon = 1e-14);

        let mut cp = HdmrModel::constant(basis(3), 2, 1, 2, 0.0).unwrap();
        cp.insert_mode(Mode::Cp(CpMode {
            group: Group::from_labels(&[1, 2]).unwrap(),
            factors: vec![vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]],
        }))
        .unwrap();
        assert_abs_diff_eq!(cp.evaluate(&[1.0, 1.0]).unwrap(), 3.0, epsilon = 1e-13);
        assert!(cp.evaluate(&[1.0]).is_err());
        assert!(cp.evaluate(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn layout_checks() {
        let mut m = HdmrModel::constant(basis(3), 3, 1, 2, 0.0).unwrap();
        // dense above N_PC
        assert!(m.insert_mode(dense(&[1, 2], vec![vec![2, 2]], vec![1.0])).is_err());
        // constant factor
        assert!(m.insert_mode(dense(&[1], vec![vec![1]], vec![1.0])).is_err());
        // degree beyond No
        assert!(m.insert_mode(dense(&[1], vec![vec![5]], vec![1.0])).is_err());
        // beyond Ninter
        assert!(m.insert_mode(dense(&[1, 2, 3], vec![vec![2, 2, 2]], vec![1.0])).is_err());
    }

    #[test]
    fn statistics_examples() {
        let b = basis(4);
        let mut m = HdmrModel::constant(b, 2, 2, 2, 2.0).unwrap();
        assert_eq!(m.mean(), 2.0);
        assert_eq!(m.variance(), 0.0);
        assert!(matches!(m.sobol_indices(), Err(HdmrError::ZeroVariance)));
        assert!(matches!(m.total_sobol(), Err(HdmrError::ZeroVariance)));
        m.insert_mode(dense(&[1], vec![vec![2], vec![3]], vec![1.0, 2.0])).unwrap();
        assert_eq!(m.variance(), 5.0);
        let s = m.sobol_indices().unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(*s.values().next().unwrap(), 1.0);
    }

    #[test]
    fn sobol_shares_and_totals() {
        let b = basis(4);
        let mut m = HdmrModel::constant(b, 3, 2, 2, 0.0).unwrap();
        m.insert_mode(dense(&[1], vec![vec![2]], vec![1.0])).unwrap();
        m.insert_mode(dense(&[1, 2], vec![vec![2, 2]], vec![1.0])).unwrap();
        let t = m.total_sobol().unwrap();
        assert_eq!(t, vec![1.0, 0.5, 0.0]);

        let mut m = HdmrModel::constant(b, 2, 1, 1, 0.0).unwrap();
        m.insert_mode(dense(&[1], vec![vec![2]], vec![1.0])).unwrap();
        m.insert_mode(dense(&[2], vec![vec![2]], vec![3f64.sqrt()])).unwrap();
        let s = m.sobol_indices().unwrap();
        assert_abs_diff_eq!(s[&Group::from_labels(&[1]).unwrap()], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s[&Group::from_labels(&[2]).unwrap()], 0.75, epsilon = 1e-15);

        let mut single = HdmrModel::constant(b, 4, 1, 1, 0.0).unwrap();
        single.insert_mode(dense(&[1], vec![vec![2]], vec![1.0])).unwrap();
        assert_eq!(single.total_sobol().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    /// Random model mixing dense and CP modes on overlapping dimensions.
    fn random_model(seed: u64, no: usize) -> HdmrModel {
        let mut rng = crate::rng::stream(seed, crate::rng::StreamTag::Test, 0, 0);
        let mut m = HdmrModel::constant(basis(no), 3, 2, 3, rng.gen_range(-1.0..1.0)).unwrap();
        for labels in [&[1usize][..], &[2], &[1, 2], &[2, 3]] {
            let idx = enumerate_dense_indices(labels.len(), no);
            let coeffs = idx.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            m.insert_mode(dense(labels, idx, coeffs)).unwrap();
        }
        let factors = (0..2)
            .map(|_| (0..3).map(|_| (0..no).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
            .collect();
        m.insert_mode(Mode::Cp(CpMode {
            group: Group::from_labels(&[1, 2, 3]).unwrap(),
            factors,
        }))
        .unwrap();
        m
    }

    /// Tensor Gauss quadrature over [-1, 1]^3 of a functional of the mode values.
    fn quadrature<F: Fn(&[f64]) -> f64>(n: usize, f: F) -> f64 {
        let (x, w) = gauss_uniform(n, -1.0, 1.0);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    acc += w[i] * w[j] * w[k] * f(&[x[i], x[j], x[k]]);
                }
            }
        }
        acc
    }

    #[test]
    fn modes_are_zero_mean_and_orthogonal() {
        let no = 4;
        let m = random_model(11, no);
        let modes: Vec<&Mode> = m.modes().collect();
        let psi = |xi: &[f64]| m.univariate_table(xi, &vec![true; xi.len()]);
        // exact for products of two degree-4-per-dim polynomials with 6 points
        let n = 6;
        for a in &modes {
            let mean = quadrature(n, |xi| a.evaluate_with(&psi(xi)));
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            for b in &modes {
                if a.group() == b.group() {
                    continue;
                }
                let ip = quadrature(n, |xi| {
                    let p = psi(xi);
                    a.evaluate_with(&p) * b.evaluate_with(&p)
                });
                assert_abs_diff_eq!(ip, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn variance_matches_quadrature() {
        let m = random_model(3, 4);
        let mean = quadrature(6, |xi| m.evaluate(xi).unwrap());
        let second = quadrature(6, |xi| m.evaluate(xi).unwrap().powi(2));
        assert_abs_diff_eq!(mean, m.mean(), epsilon = 1e-12);
        let var = second - mean * mean;
        assert!((var - m.variance()).abs() <= 1e-10 * m.variance().max(1.0));
        let sum: f64 = m.sobol_indices().unwrap().values().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn evaluation_is_linear_in_coefficients() {
        let m = random_model(5, 3);
        let xi = [0.3, -0.7, 0.55];
        let base = m.evaluate(&xi).unwrap();
        let g = Group::from_labels(&[1, 2]).unwrap();
        let Some(Mode::Dense(d)) = m.mode(&g) else { panic!() };
        for (k, alpha) in d.indices.iter().enumerate() {
            let mut m2 = m.clone();
            let Some(Mode::Dense(d2)) = m2.modes.get_mut(&g) else { panic!() };
            d2.coeffs[k] += 0.5;
            let sens = m.basis.eval_tensor(alpha, &[xi[0], xi[1]]).unwrap();
            assert_abs_diff_eq!(m2.evaluate(&xi).unwrap() - base, 0.5 * sens, epsilon = 1e-12);
        }
    }

    #[test]
    fn json_round_trip_exact() {
        let m = random_model(17, 5);
        let text = m.to_json().unwrap();
        let back = HdmrModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        let mut rng = crate::rng::stream(1, crate::rng::StreamTag::Test, 1, 0);
        for _ in 0..100 {
            let xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(m.evaluate(&xi).unwrap(), back.evaluate(&xi).unwrap());
        }
    }

    #[test]
    fn json_errors() {
        let text = random_model(2, 3).to_json().unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(matches!(HdmrModel::from_json(truncated), Err(HdmrError::Malformed(_))));
        let wrong = text.replacen("\"schema\": 1", "\"schema\": 7", 1);
        assert!(matches!(HdmrModel::from_json(&wrong), Err(HdmrError::Schema { found: 7, .. })));
        let unsorted = text.replacen("\"dims\": [\n        1,\n        2\n      ]", "\"dims\": [\n        2,\n        1\n      ]", 1);
        if unsorted != text {
            assert!(HdmrModel::from_json(&unsorted).is_err());
        }
    }
}
