//! One-dimensional stochastic diffusion test bed: Gaussian-kernel
//! Karhunen-Loeve fields for the diffusivity and the source, a conservative
//! finite-difference solver and dataset emission.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SampleSet, SplitTag};
use crate::error::{HdmrError, Result};
use crate::rng::{stream, StreamTag};

/// Truncated Karhunen-Loeve expansion of a 1-D Gaussian-kernel random field.
#[derive(Clone, Debug)]
pub struct KlField {
    pub mean_value: f64,
    pub sigma: f64,
    pub lc: f64,
    pub lo: f64,
    pub hi: f64,
    nodes: Vec<f64>,
    h: f64,
    spectrum: Vec<f64>,
    modes: Vec<Vec<f64>>,
}

/// Nystrom discretization of `int K(x, y) w(y) dy = s w(x)` with
/// `K(x, y) = sigma^2 exp(-(x - y)^2 / (2 lc^2))` on `m_k` midpoints.
pub fn kl_eigendecompose(sigma: f64, lc: f64, domain: (f64, f64), m_k: usize, nterms: usize) -> Result<KlField> {
    let (lo, hi) = domain;
    if !(lo < hi) || !(lc > 0.0) || !(sigma >= 0.0) || m_k == 0 {
        return Err(HdmrError::Config(format!(
            "invalid field parameters sigma={sigma}, lc={lc}, domain=[{lo}, {hi}], M_k={m_k}"
        )));
    }
    if nterms > m_k {
        return Err(HdmrError::Config(format!("{nterms} KL terms requested from {m_k} quadrature points")));
    }
    if m_k < 4 * nterms {
        log::warn!("M_k = {m_k} is below 4 x Nterms = {}", 4 * nterms);
    }
    let h = (hi - lo) / m_k as f64;
    let nodes: Vec<f64> = (0..m_k).map(|i| lo + (i as f64 + 0.5) * h).collect();
    let s2 = sigma * sigma;
    let a = DMatrix::from_fn(m_k, m_k, |i, j| {
        let d = nodes[i] - nodes[j];
        h * s2 * (-d * d / (2.0 * lc * lc)).exp()
    });
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..m_k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let spectrum: Vec<f64> = order
        .iter()
        .map(|&k| {
            let v = eig.eigenvalues[k];
            if v < 0.0 {
                if v < -1e-12 {
                    log::debug!("negative Nystrom eigenvalue {v} clipped");
                }
                0.0
            } else {
                v
            }
        })
        .collect();
    let scale = h.sqrt().recip();
    let modes = order[..nterms]
        .iter()
        .map(|&k| {
            let mut w: Vec<f64> = eig.eigenvectors.column(k).iter().map(|v| v * scale).collect();
            // sign convention: non-negative mean
            if w.iter().sum::<f64>() < 0.0 {
                w.iter_mut().for_each(|v| *v = -*v);
            }
            w
        })
        .collect();
    Ok(KlField {
        mean_value: 0.0,
        sigma,
        lc,
        lo,
        hi,
        nodes,
        h,
        spectrum,
        modes,
    })
}

impl KlField {
    pub fn with_mean(mut self, mean_value: f64) -> Self {
        self.mean_value = mean_value;
        self
    }

    pub fn nterms(&self) -> usize {
        self.modes.len()
    }

    /// Retained eigenvalues, non-increasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum[..self.modes.len()]
    }

    /// All `M_k` discrete eigenvalues, non-increasing.
    pub fn full_spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Eigenfunction `k` at the quadrature nodes.
    pub fn mode_values(&self, k: usize) -> &[f64] {
        &self.modes[k]
    }

    /// Discrete `L2` norm of eigenfunction `k` (midpoint rule).
    pub fn mode_norm(&self, k: usize) -> f64 {
        (self.h * self.modes[k].iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Piecewise-linear interpolation of eigenfunction `k`, constant beyond
    /// the outermost midpoints.
    pub fn eigenfunction(&self, k: usize, x: f64) -> Result<f64> {
        if !(x >= self.lo - 1e-12 && x <= self.hi + 1e-12) {
            return Err(HdmrError::Config(format!("x = {x} outside [{}, {}]", self.lo, self.hi)));
        }
        let w = &self.modes[k];
        let t = (x - self.lo) / self.h - 0.5;
        if t <= 0.0 {
            return Ok(w[0]);
        }
        let i = t.floor() as usize;
        if i + 1 >= w.len() {
            return Ok(w[w.len() - 1]);
        }
        let f = t - i as f64;
        Ok(w[i] * (1.0 - f) + w[i + 1] * f)
    }

    /// `mean + sum_k sqrt(s_k) w_k(x) germ_k`.
    pub fn sample(&self, germ: &[f64], x: f64) -> Result<f64> {
        if germ.len() != self.nterms() {
            return Err(HdmrError::Shape(format!("germ of length {} for {} terms", germ.len(), self.nterms())));
        }
        let mut v = self.mean_value;
        for (k, g) in germ.iter().enumerate() {
            v += self.spectrum[k].sqrt() * self.eigenfunction(k, x)? * g;
        }
        Ok(v)
    }

    pub fn write_spectrum_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,eigenvalue")?;
        for (k, v) in self.spectrum.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, v)?;
        }
        Ok(())
    }
}

/// Second-order conservative finite differences for `(nu u')' = F` on a
/// uniform grid over `[lo, hi]` with Dirichlet ends. `nu` and `f` hold nodal
/// values at the `M_x + 1` grid points.
pub fn solve_diffusion(nu: &[f64], f: &[f64], u_minus: f64, u_plus: f64, domain: (f64, f64)) -> Result<Vec<f64>> {
    let n = nu.len();
    if n < 3 || f.len() != n {
        return Err(HdmrError::Shape(format!("need matching nodal arrays of length >= 3, got {n} and {}", f.len())));
    }
    if let Some(pos) = nu.iter().position(|v| !(*v > 0.0)) {
        return Err(HdmrError::Coercivity(format!("nu = {} at node {pos}", nu[pos])));
    }
    let h = (domain.1 - domain.0) / (n - 1) as f64;
    let face = |j: usize| 2.0 * nu[j] * nu[j + 1] / (nu[j] + nu[j + 1]);
    // tridiagonal system for interior nodes 1..n-1
    let m = n - 2;
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        let j = k + 1;
        let (wl, wr) = (face(j - 1), face(j));
        lower[k] = wl;
        upper[k] = wr;
        diag[k] = -(wl + wr);
        rhs[k] = f[j] * h * h;
    }
    rhs[0] -= lower[0] * u_minus;
    rhs[m - 1] -= upper[m - 1] * u_plus;
    // Thomas algorithm
    for k in 1..m {
        let w = lower[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut u = vec![0.0; n];
    u[0] = u_minus;
    u[n - 1] = u_plus;
    u[m] = rhs[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        u[k + 1] = (rhs[k] - upper[k] * u[k + 2]) / diag[k];
    }
    Ok(u)
}

/// Discrete operator residual `(nu u')'_h - F` at interior nodes.
pub fn diffusion_residual(nu: &[f64], f: &[f64], u: &[f64], domain: (f64, f64)) -> Vec<f64> {
    let n = nu.len();
    let h = (domain.1 - domain.0) / (n - 1) as f64;
    let face = |j: usize| 2.0 * nu[j] * nu[j + 1] / (nu[j] + nu[j + 1]);
    (1..n - 1)
        .map(|j| (face(j) * (u[j + 1] - u[j]) - face(j - 1) * (u[j] - u[j - 1])) / (h * h) - f[j])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub nd_nu: usize,
    pub nd_f: usize,
    pub sigma_nu: f64,
    pub sigma_f: f64,
    pub lc_nu: f64,
    pub lc_f: f64,
    pub nu0: f64,
    pub f0: f64,
    pub u_minus: f64,
    pub u_plus: f64,
    pub m_x: usize,
    pub m_k: usize,
    pub domain: (f64, f64),
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            nd_nu: 5,
            nd_f: 5,
            sigma_nu: 0.7,
            sigma_f: 0.7,
            lc_nu: 0.3,
            lc_f: 0.3,
            nu0: 1.0,
            f0: -1.0,
            u_minus: 0.0,
            u_plus: 0.0,
            m_x: 512,
            m_k: 400,
            domain: (0.0, 1.0),
        }
    }
}

impl DiffusionConfig {
    pub fn nd(&self) -> usize {
        self.nd_nu + self.nd_f
    }

    pub fn validate(&self) -> Result<()> {
        if self.nd() == 0 {
            return Err(HdmrError::Config("at least one stochastic dimension is required".into()));
        }
        if self.m_x < 16 {
            return Err(HdmrError::Config(format!("M_x = {} is below 16", self.m_x)));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(HdmrError::Config("empty domain".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SampleMode {
    /// Solution value at a fixed probe location.
    Point { x: f64 },
    /// Solution value at a per-sample uniform random location.
    Scattered,
}

/// Precomputed fields on the PDE grid.
#[derive(Clone, Debug)]
pub struct DiffusionGenerator {
    pub cfg: DiffusionConfig,
    pub nu_field: KlField,
    pub f_field: KlField,
    grid: Vec<f64>,
    // sqrt(s_k) w_k at grid nodes
    nu_modes: Vec<Vec<f64>>,
    f_modes: Vec<Vec<f64>>,
}

impl DiffusionGenerator {
    pub fn new(cfg: &DiffusionConfig) -> Result<Self> {
        cfg.validate()?;
        let nu_field = kl_eigendecompose(cfg.sigma_nu, cfg.lc_nu, cfg.domain, cfg.m_k, cfg.nd_nu)?.with_mean(cfg.nu0);
        let f_field = kl_eigendecompose(cfg.sigma_f, cfg.lc_f, cfg.domain, cfg.m_k, cfg.nd_f)?.with_mean(cfg.f0);
        let (lo, hi) = cfg.domain;
        let grid: Vec<f64> = (0..=cfg.m_x).map(|j| lo + (hi - lo) * j as f64 / cfg.m_x as f64).collect();
        let on_grid = |field: &KlField| -> Result<Vec<Vec<f64>>> {
            (0..field.nterms())
                .map(|k| {
                    let a = field.eigenvalues()[k].sqrt();
                    grid.iter().map(|&x| Ok(a * field.eigenfunction(k, x)?)).collect()
                })
                .collect()
        };
        let nu_modes = on_grid(&nu_field)?;
        let f_modes = on_grid(&f_field)?;
        Ok(DiffusionGenerator {
            cfg: cfg.clone(),
            nu_field,
            f_field,
            grid,
            nu_modes,
            f_modes,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn field_on_grid(mean: f64, modes: &[Vec<f64>], germ: &[f64]) -> Vec<f64> {
        let mut v = vec![mean; modes.first().map_or(0, |m| m.len())];
        for (m, g) in modes.iter().zip(germ) {
            v.iter_mut().zip(m).for_each(|(a, b)| *a += b * g);
        }
        v
    }

    /// Solution on the grid for one germ (diffusivity dims first).
    pub fn solve(&self, germ: &[f64]) -> Result<Vec<f64>> {
        if germ.len() != self.cfg.nd() {
            return Err(HdmrError::Shape(format!("germ of length {} for Nd = {}", germ.len(), self.cfg.nd())));
        }
        let (g_nu, g_f) = germ.split_at(self.cfg.nd_nu);
        let n = self.grid.len();
        let mut nu = Self::field_on_grid(self.cfg.nu0, &self.nu_modes, g_nu);
        let mut f = Self::field_on_grid(self.cfg.f0, &self.f_modes, g_f);
        if self.nu_modes.is_empty() {
            nu = vec![self.cfg.nu0; n];
        }
        if self.f_modes.is_empty() {
            f = vec![self.cfg.f0; n];
        }
        solve_diffusion(&nu, &f, self.cfg.u_minus, self.cfg.u_plus, self.cfg.domain)
    }

    /// Linear interpolation of grid values at `x`.
    pub fn interpolate(&self, u: &[f64], x: f64) -> Result<f64> {
        let (lo, hi) = self.cfg.domain;
        if !(x >= lo && x <= hi) {
            return Err(HdmrError::Config(format!("x = {x} outside [{lo}, {hi}]")));
        }
        let t = (x - lo) / (hi - lo) * self.cfg.m_x as f64;
        let i = (t.floor() as usize).min(self.cfg.m_x - 1);
        let f = t - i as f64;
        Ok(u[i] * (1.0 - f) + u[i + 1] * f)
    }

    pub fn sample(&self, germ: &[f64], x: f64) -> Result<f64> {
        let u = self.solve(germ)?;
        self.interpolate(&u, x)
    }

    pub fn generate(&self, nq: usize, seed: u64, mode: SampleMode) -> Result<SampleSet> {
        let nd = self.cfg.nd();
        let rows: Vec<(f64, Vec<f64>, f64)> = (0..nq)
            .into_par_iter()
            .map(|q| {
                let mut rng = stream(seed, StreamTag::Germ, q as u64, 0);
                let germ: Vec<f64> = (0..nd).map(|_| rng.gen::<f64>()).collect();
                let x = match mode {
                    SampleMode::Point { x } => x,
                    SampleMode::Scattered => {
                        let (lo, hi) = self.cfg.domain;
                        lo + (hi - lo) * stream(seed, StreamTag::Location, q as u64, 0).gen::<f64>()
                    }
                };
                let u = self.sample(&germ, x)?;
                Ok((x, germ, u))
            })
            .collect::<Result<_>>()?;
        let ndx = usize::from(matches!(mode, SampleMode::Scattered));
        let mut xs = Vec::with_capacity(nq * ndx);
        let mut xi = Vec::with_capacity(nq * nd);
        let mut u = Vec::with_capacity(nq);
        for (x, g, v) in rows {
            if ndx == 1 {
                xs.push(x);
            }
            xi.extend(g);
            u.push(v);
        }
        SampleSet::new(ndx, nd, xs, xi, u, SplitTag::Unsplit)
    }
}

/// Germ-uniform dataset from the diffusion problem.
pub fn generate_dataset(cfg: &DiffusionConfig, nq: usize, seed: u64, mode: SampleMode) -> Result<SampleSet> {
    DiffusionGenerator::new(cfg)?.generate(nq, seed, mode)
}
