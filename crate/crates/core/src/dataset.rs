//! Sample collections `{x_q, xi_q, u_q}`: CSV ingestion, seeded splitting and
//! noise injection.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HdmrError, Result};
use crate::rng::{stream, StreamTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Unsplit,
}

/// Scattered samples. Coordinates are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    ndx: usize,
    nd: usize,
    x: Vec<f64>,
    xi: Vec<f64>,
    u: Vec<f64>,
    tag: SplitTag,
}

impl SampleSet {
    /// Builds a set from row-major spatial coordinates `x` (`nq * ndx`),
    /// stochastic coordinates `xi` (`nq * nd`) and values `u` (`nq`).
    ///
    /// Empty sets are allowed here (a split may legitimately produce one);
    /// file ingestion rejects them.
    pub fn new(ndx: usize, nd: usize, x: Vec<f64>, xi: Vec<f64>, u: Vec<f64>, tag: SplitTag) -> Result<Self> {
        if nd == 0 {
            return Err(HdmrError::Shape("at least one stochastic dimension is required".into()));
        }
        let nq = u.len();
        if x.len() != nq * ndx || xi.len() != nq * nd {
            return Err(HdmrError::Shape(format!(
                "inconsistent sample arrays: {} values, {} x entries (ndx={ndx}), {} xi entries (nd={nd})",
                nq,
                x.len(),
                xi.len()
            )));
        }
        if let Some(pos) = x.iter().chain(&xi).chain(&u).position(|v| !v.is_finite()) {
            return Err(HdmrError::NonFinite(format!("sample array entry {pos}")));
        }
        Ok(SampleSet { ndx, nd, x, xi, u, tag })
    }

    /// Stochastic-only samples (`ndx = 0`).
    pub fn from_xi(nd: usize, xi: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        SampleSet::new(0, nd, Vec::new(), xi, u, SplitTag::Unsplit)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn ndx(&self) -> usize {
        self.ndx
    }

    pub fn nd(&self) -> usize {
        self.nd
    }

    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: SplitTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn x_row(&self, q: usize) -> &[f64] {
        &self.x[q * self.ndx..(q + 1) * self.ndx]
    }

    pub fn xi_row(&self, q: usize) -> &[f64] {
        &self.xi[q * self.nd..(q + 1) * self.nd]
    }

    /// Same coordinates, new values.
    pub fn with_values(&self, u: Vec<f64>) -> Result<Self> {
        SampleSet::new(self.ndx, self.nd, self.x.clone(), self.xi.clone(), u, self.tag)
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize], tag: SplitTag) -> SampleSet {
        let mut x = Vec::with_capacity(idx.len() * self.ndx);
        let mut xi = Vec::with_capacity(idx.len() * self.nd);
        let mut u = Vec::with_capacity(idx.len());
        for &q in idx {
            x.extend_from_slice(self.x_row(q));
            xi.extend_from_slice(self.xi_row(q));
            u.push(self.u[q]);
        }
        SampleSet {
            ndx: self.ndx,
            nd: self.nd,
            x,
            xi,
            u,
            tag,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &SampleSet) -> Result<SampleSet> {
        if self.ndx != other.ndx || self.nd != other.nd {
            return Err(HdmrError::Shape(format!(
                "cannot join sets with (ndx, nd) = ({}, {}) and ({}, {})",
                self.ndx, self.nd, other.ndx, other.nd
            )));
        }
        let mut out = self.clone();
        out.x.extend_from_slice(&other.x);
        out.xi.extend_from_slice(&other.xi);
        out.u.extend_from_slice(&other.u);
        out.tag = SplitTag::Unsplit;
        Ok(out)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        Ok(Self::read_csv_impl(reader, true)?.0)
    }

    /// Like [`SampleSet::read_csv`] but the `u` column may be absent, in
    /// which case values are zero and the flag is false.
    pub fn read_points_csv<R: Read>(reader: R) -> Result<(Self, bool)> {
        Self::read_csv_impl(reader, false)
    }

    fn read_csv_impl<R: Read>(reader: R, require_u: bool) -> Result<(Self, bool)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| HdmrError::Parse { row: 0, msg: e.to_string() })?
            .clone();
        let has_u = require_u || header.iter().last() == Some("u");
        let (ndx, nd) = parse_header(&header, has_u)?;
        let width = ndx + nd + usize::from(has_u);
        let (mut x, mut xi, mut u) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| HdmrError::Parse { row, msg: e.to_string() })?;
            if rec.len() != width {
                return Err(HdmrError::Parse {
                    row,
                    msg: format!("expected {width} columns, found {}", rec.len()),
                });
            }
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| HdmrError::Parse {
                    row,
                    msg: format!("column '{}' is not a number: '{cell}'", &header[c]),
                })?;
                if !v.is_finite() {
                    return Err(HdmrError::Parse {
                        row,
                        msg: format!("column '{}' holds non-finite value '{cell}'", &header[c]),
                    });
                }
                if c < ndx {
                    x.push(v);
                } else if c < ndx + nd {
                    xi.push(v);
                } else {
                    u.push(v);
                }
            }
        }
        let rows = if nd > 0 { xi.len() / nd } else { 0 };
        if rows == 0 {
            return Err(HdmrError::Parse { row: 1, msg: "no data rows".into() });
        }
        if !has_u {
            u = vec![0.0; rows];
        }
        Ok((SampleSet::new(ndx, nd, x, xi, u, SplitTag::Unsplit)?, has_u))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(header_names(self.ndx, self.nd)).map_err(csv_io)?;
        for q in 0..self.len() {
            let rec: Vec<String> = self
                .x_row(q)
                .iter()
                .chain(self.xi_row(q))
                .chain(std::iter::once(&self.u[q]))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub(crate) fn csv_io(e: csv::Error) -> HdmrError {
    HdmrError::Io(std::io::Error::other(e.to_string()))
}

pub fn header_names(ndx: usize, nd: usize) -> Vec<String> {
    (1..=ndx)
        .map(|i| format!("x{i}"))
        .chain((1..=nd).map(|i| format!("xi{i}")))
        .chain(std::iter::once("u".to_string()))
        .collect()
}

fn parse_header(header: &csv::StringRecord, has_u: bool) -> Result<(usize, usize)> {
    let err = |msg: String| HdmrError::Parse { row: 0, msg };
    let mut cols: Vec<&str> = header.iter().collect();
    if has_u {
        if cols.last() != Some(&"u") {
            return Err(err("last column must be 'u'".into()));
        }
    } else {
        cols.push("u");
    }
    let ndx = cols.iter().take_while(|c| c.starts_with('x') && !c.starts_with("xi")).count();
    let nd = cols.len() - 1 - ndx;
    if nd == 0 {
        return Err(err("at least one 'xi' column is required".into()));
    }
    let expected = header_names(ndx, nd);
    if let Some((i, (got, want))) = cols.iter().zip(&expected).enumerate().find(|(_, (g, w))| *g != w) {
        return Err(err(format!("column {} is '{got}', expected '{want}'", i + 1)));
    }
    Ok((ndx, nd))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SampleSet> {
    let f = std::fs::File::open(path)?;
    SampleSet::read_csv(std::io::BufReader::new(f))
}

/// Disjoint seeded partition into train, validation and test sets.
pub fn split(
    set: &SampleSet,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<(SampleSet, SampleSet, SampleSet)> {
    let total = n_train + n_val + n_test;
    if total > set.len() {
        return Err(HdmrError::Size(format!(
            "requested {n_train} + {n_val} + {n_test} = {total} samples from a set of {}",
            set.len()
        )));
    }
    if n_train == 0 {
        return Err(HdmrError::Size("training set must not be empty".into()));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut stream(seed, StreamTag::Split, 0, 0));
    let train = set.select(&idx[..n_train], SplitTag::Train);
    let val = set.select(&idx[n_train..n_train + n_val], SplitTag::Validation);
    let test = set.select(&idx[n_train + n_val..total], SplitTag::Test);
    Ok((train, val, test))
}

/// Coordinate and value noise description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of the additive coordinate noise.
    pub s: f64,
    /// Relative standard deviation of the multiplicative value noise.
    pub s_u: f64,
    pub box_lo: f64,
    pub box_hi: f64,
}

impl NoiseModel {
    pub fn new(s: f64, s_u: f64, box_lo: f64, box_hi: f64) -> Result<Self> {
        let m = NoiseModel { s, s_u, box_lo, box_hi };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s >= 0.0 && self.s_u.is_finite() && self.s_u >= 0.0) {
            return Err(HdmrError::Config(format!(
                "noise scales must be finite and non-negative (s={}, s_u={})",
                self.s, self.s_u
            )));
        }
        if !(self.box_lo < self.box_hi) {
            return Err(HdmrError::Config("noise box must satisfy lo < hi".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.s == 0.0 && self.s_u == 0.0
    }
}

/// Folds `v` back into `[lo, hi]` by mirror reflection at the faces.
pub fn reflect_into(mut v: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if v < lo || v > hi {
        // reduce to one period of the reflected sawtooth
        let period = 2.0 * width;
        let mut t = (v - lo) % period;
        if t < 0.0 {
            t += period;
        }
        v = if t <= width { lo + t } else { hi - (t - width) };
    }
    v.clamp(lo, hi)
}

/// Perturbs coordinates additively and values multiplicatively.
pub fn inject_noise(set: &SampleSet, noise: &NoiseModel, seed: u64) -> Result<SampleSet> {
    noise.validate()?;
    let nd = set.nd;
    let mut xi = set.xi.clone();
    let mut u = set.u.clone();
    if noise.s > 0.0 {
        for q in 0..set.len() {
            for d in 0..nd {
                let z: f64 = stream(seed, StreamTag::CoordinateNoise, q as u64, d as u64).sample(StandardNormal);
                let v = &mut xi[q * nd + d];
                *v = reflect_into(*v + noise.s * z, noise.box_lo, noise.box_hi);
            }
        }
    }
    if noise.s_u > 0.0 {
        for (q, v) in u.iter_mut().enumerate() {
            let z: f64 = stream(seed, StreamTag::ValueNoise, q as u64, nd as u64).sample(StandardNormal);
            *v *= 1.0 + noise.s_u * z;
        }
    }
    SampleSet::new(set.ndx, nd, set.x.clone(), xi, u, set.tag)
}

/// Data-driven inner product `sum_q v_q w_q`.
pub fn empirical_inner(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(HdmrError::Shape(format!("vectors of length {} and {}", v.len(), w.len())));
    }
    Ok(dot(v, w))
}

#[inline]
pub(crate) fn dot(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy(nq: usize) -> SampleSet {
        let xi: Vec<f64> = (0..nq * 2).map(|i| (i as f64 * 0.37).sin() * 0.9).collect();
        let u: Vec<f64> = (0..nq).map(|i| i as f64).collect();
        SampleSet::from_xi(2, xi, u).unwrap()
    }

    #[test]
    fn csv_header_shapes() {
        let s = SampleSet::read_csv("xi1,xi2,u\n0.1,0.2,1\n0.3,0.4,2\n0.5,0.6,3\n".as_bytes()).unwrap();
        assert_eq!((s.ndx(), s.nd(), s.len()), (0, 2, 3));
        let s = SampleSet::read_csv("x1,xi1,u\n0.5,0.2,1.0\n".as_bytes()).unwrap();
        assert_eq!(s.x_row(0), &[0.5]);
        assert_eq!(s.xi_row(0), &[0.2]);
        assert_eq!(s.u(), &[1.0]);
    }

    #[test]
    fn points_csv_without_values() {
        let (set, has_u) = SampleSet::read_points_csv("x1,xi1,xi2\n0.5,0.1,0.2\n0.25,0.3,0.4\n".as_bytes()).unwrap();
        assert!(!has_u);
        assert_eq!((set.ndx(), set.nd(), set.len()), (1, 2, 2));
        assert_eq!(set.u(), &[0.0, 0.0]);
        let (set, has_u) = SampleSet::read_points_csv("xi1,u\n0.1,3\n".as_bytes()).unwrap();
        assert!(has_u);
        assert_eq!(set.u(), &[3.0]);
        assert!(SampleSet::read_csv("xi1,xi2\n0.1,0.2\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_rejects_nan_with_row() {
        let err = SampleSet::read_csv("xi1,u\n0.1,NaN\n".as_bytes()).unwrap_err();
        match err {
            HdmrError::Parse { row, .. } => assert_eq!(row, 1),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn csv_rejects_bad_layouts() {
        assert!(SampleSet::read_csv("xi1,v\n0.1,2\n".as_bytes()).is_err());
        assert!(SampleSet::read_csv("xi2,u\n0.1,2\n".as_bytes()).is_err());
        assert!(SampleSet::read_csv("xi1,u\n0.1\n".as_bytes()).is_err());
        assert!(SampleSet::read_csv("xi1,u\n0.1,abc\n".as_bytes()).is_err());
        assert!(SampleSet::read_csv("xi1,u\n".as_bytes()).is_err());
        assert!(SampleSet::read_csv("x1,u\n0.1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let xi = vec![0.1, 1.0 / 3.0, -2e-17, 0.7];
        let s = SampleSet::new(1, 2, vec![0.25, std::f64::consts::PI], xi, vec![1e300, -0.1], SplitTag::Unsplit).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SampleSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let s = toy(10);
        let (a, b, c) = split(&s, 6, 2, 2, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let mut all: Vec<f64> = a.u().iter().chain(b.u()).chain(c.u()).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        assert_eq!(all.len(), 10);
        let again = split(&s, 6, 2, 2, 1).unwrap();
        assert_eq!(again.0, a);
        assert_eq!(again.2, c);
        let other = split(&s, 6, 2, 2, 2).unwrap();
        assert_ne!(other.0.u(), a.u());
    }

    #[test]
    fn split_size_error() {
        assert!(matches!(split(&toy(5), 4, 1, 1, 0), Err(HdmrError::Size(_))));
        assert!(matches!(split(&toy(5), 0, 1, 1, 0), Err(HdmrError::Size(_))));
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = toy(20);
        let n = NoiseModel::new(0.0, 0.0, -1.0, 1.0).unwrap();
        assert_eq!(inject_noise(&s, &n, 3).unwrap(), s);
    }

    #[test]
    fn multiplicative_noise_keeps_zero() {
        let s = SampleSet::from_xi(1, vec![0.0, 0.5], vec![0.0, 1.0]).unwrap();
        let n = NoiseModel::new(0.0, 0.2, -1.0, 1.0).unwrap();
        let out = inject_noise(&s, &n, 9).unwrap();
        assert_eq!(out.u()[0], 0.0);
        assert_ne!(out.u()[1], 1.0);
    }

    #[test]
    fn coordinate_noise_statistics() {
        // 10^5 interior entries
        let nq = 50_000;
        let xi: Vec<f64> = (0..nq * 2).map(|i| ((i % 97) as f64 / 97.0 - 0.5) * 1.6).collect();
        let s = SampleSet::from_xi(2, xi.clone(), vec![1.0; nq]).unwrap();
        let n = NoiseModel::new(1e-3, 0.0, -1.0, 1.0).unwrap();
        let out = inject_noise(&s, &n, 5).unwrap();
        assert!(out.xi().iter().all(|v| (-1.0..=1.0).contains(v)));
        let diffs: Vec<f64> = out.xi().iter().zip(&xi).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!(sd > 0.8e-3 && sd < 1.2e-3, "sd = {sd}");
    }

    #[test]
    fn noise_keeps_box_near_faces() {
        let s = SampleSet::from_xi(1, vec![-1.0, 1.0, 0.999, -0.9999], vec![1.0; 4]).unwrap();
        let n = NoiseModel::new(0.5, 0.0, -1.0, 1.0).unwrap();
        for seed in 0..50 {
            let out = inject_noise(&s, &n, seed).unwrap();
            assert!(out.xi().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!((out.len(), out.nd(), out.ndx()), (4, 1, 0));
        }
    }

    #[test]
    fn reflection() {
        assert_abs_diff_eq!(reflect_into(1.2, -1.0, 1.0), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(reflect_into(-1.5, -1.0, 1.0), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(reflect_into(3.5, -1.0, 1.0), -0.5, epsilon = 1e-15);
        assert_eq!(reflect_into(0.3, -1.0, 1.0), 0.3);
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(empirical_inner(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(empirical_inner(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(empirical_inner(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(empirical_inner(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn inner_product_symmetric_bilinear(
            v in proptest::collection::vec(-10.0f64..10.0, 8),
            w in proptest::collection::vec(-10.0f64..10.0, 8),
            z in proptest::collection::vec(-10.0f64..10.0, 8),
            a in -3.0f64..3.0,
        ) {
            let vw = empirical_inner(&v, &w).unwrap();
            prop_assert_eq!(vw, empirical_inner(&w, &v).unwrap());
            let comb: Vec<f64> = v.iter().zip(&z).map(|(x, y)| a * x + y).collect();
            let lhs = empirical_inner(&comb, &w).unwrap();
            let rhs = a * vw + empirical_inner(&z, &w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
