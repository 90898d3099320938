//! Row-weighted regression problems shared by selection and fitting.
//!
//! A problem asks for `g` minimizing `|| target - w .* g(xi) ||` where `w` is
//! an optional per-row weight (the spatial mode value in separated fits).

use crate::basis::{BasisConfig, UnivariateTable};
use crate::dataset::{dot, SampleSet};
use crate::model::Group;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Problem<'a> {
    pub nd: usize,
    pub xi: &'a [f64],
    pub target: &'a [f64],
    pub weights: Option<&'a [f64]>,
}

impl<'a> Problem<'a> {
    pub fn from_set(set: &'a SampleSet) -> Self {
        Problem {
            nd: set.nd(),
            xi: set.xi(),
            target: set.u(),
            weights: None,
        }
    }

    pub fn nq(&self) -> usize {
        self.target.len()
    }

    pub fn xi_row(&self, q: usize) -> &'a [f64] {
        &self.xi[q * self.nd..(q + 1) * self.nd]
    }

    /// Column multiplying the constant term.
    pub fn intercept(&self) -> Vec<f64> {
        match self.weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; self.nq()],
        }
    }

    /// Least-squares constant for `target ~ f * intercept`.
    pub fn constant_fit(&self, r: &[f64]) -> f64 {
        let z = self.intercept();
        let zz = dot(&z, &z);
        if zz > 0.0 {
            dot(&z, r) / zz
        } else {
            0.0
        }
    }

    pub fn table(&self, basis: &BasisConfig, max_degree: usize) -> UnivariateTable {
        UnivariateTable::new(basis, self.xi, self.nq(), self.nd, max_degree)
    }

    /// Table restricted to the dimensions of `groups`.
    pub fn table_for(&self, basis: &BasisConfig, max_degree: usize, groups: &[Group]) -> UnivariateTable {
        let mut used = vec![false; self.nd];
        for g in groups {
            for &d in g.dims() {
                if d < self.nd {
                    used[d] = true;
                }
            }
        }
        UnivariateTable::for_dims(basis, self.xi, self.nq(), self.nd, max_degree, &used)
    }
}
