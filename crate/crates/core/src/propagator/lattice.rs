//! Independent finite-difference oracle: `H_h = −Δ_h + V` on a Dirichlet square lattice.
//!
//! Small lattices are diagonalized densely. Large ones use Chebyshev expansions for the
//! spectral filter and for `e^{itH_h}`, after deflating bound states computed on a centred sub-box.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretize::Point;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::potential::PotentialSpec;
use crate::specfun::bessel_jn_array;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeBackend {
    Dense,
    Chebyshev,
    Auto,
}

fn default_cap() -> usize {
    2500
}

fn default_backend() -> LatticeBackend {
    LatticeBackend::Auto
}

fn default_subbox() -> f64 {
    12.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub spacing: f64,
    pub half_width: f64,
    #[serde(default = "default_backend")]
    pub backend: LatticeBackend,
    #[serde(default = "default_cap")]
    pub dense_cap: usize,
    /// Half width of the sub-box whose dense spectrum supplies bound states to deflate.
    #[serde(default = "default_subbox")]
    pub bound_state_box: f64,
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::config("evolution.lattice.spacing", "must be positive"));
        }
        if !(self.half_width > self.spacing) {
            return Err(Error::config("evolution.lattice.half_width", "must exceed the spacing"));
        }
        Ok(())
    }

    /// Odd site count per side so that the origin is a site.
    pub fn sites_per_side(&self) -> usize {
        let half = (self.half_width / self.spacing).floor() as usize;
        2 * half + 1
    }
}

/// Dirichlet lattice with sites `(i − (N−1)/2)h`, row-major in `(i, j)`.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub n: usize,
    pub h: f64,
    pub potential: Vec<f64>,
}

impl Lattice {
    pub fn new(n: usize, h: f64, spec: &PotentialSpec) -> Self {
        let mut potential = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                potential.push(spec.eval(Self::coord(n, h, i, j)));
            }
        }
        Lattice { n, h, potential }
    }

    fn coord(n: usize, h: f64, i: usize, j: usize) -> Point {
        let c = (n as f64 - 1.0) / 2.0;
        [(i as f64 - c) * h, (j as f64 - c) * h]
    }

    pub fn sites(&self) -> usize {
        self.n * self.n
    }

    pub fn site_point(&self, k: usize) -> Point {
        Self::coord(self.n, self.h, k / self.n, k % self.n)
    }

    /// Index of the site at `p`, which must lie on the lattice.
    pub fn site_index(&self, p: Point) -> Result<usize> {
        let c = (self.n as f64 - 1.0) / 2.0;
        let fi = p[0] / self.h + c;
        let fj = p[1] / self.h + c;
        let (i, j) = (fi.round(), fj.round());
        if (fi - i).abs() > 1e-9 || (fj - j).abs() > 1e-9 || i < 0.0 || j < 0.0 || i >= self.n as f64 || j >= self.n as f64 {
            return Err(Error::Precondition(format!("point ({}, {}) is not a lattice site", p[0], p[1])));
        }
        Ok(i as usize * self.n + j as usize)
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv = 1.0 / (self.h * self.h);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let mut s = 4.0 * u[k];
                if i > 0 {
                    s -= u[k - n];
                }
                if i + 1 < n {
                    s -= u[k + n];
                }
                if j > 0 {
                    s -= u[k - 1];
                }
                if j + 1 < n {
                    s -= u[k + 1];
                }
                out[k] = s * inv + self.potential[k] * u[k];
            }
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let m = self.sites();
        let n = self.n;
        let inv = 1.0 / (self.h * self.h);
        let mut a = DMatrix::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                a[(k, k)] = 4.0 * inv + self.potential[k];
                if i + 1 < n {
                    a[(k, k + n)] = -inv;
                    a[(k + n, k)] = -inv;
                }
                if j + 1 < n {
                    a[(k, k + 1)] = -inv;
                    a[(k + 1, k)] = -inv;
                }
            }
        }
        a
    }

    /// Gershgorin bounds of the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let vmin = self.potential.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = self.potential.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (vmin.min(0.0), 8.0 / (self.h * self.h) + vmax.max(0.0))
    }
}

/// Options shared by both backends.
#[derive(Clone, Copy)]
pub struct LatticeRun<'a> {
    /// Spectral filter `F(E)` applied together with the projection onto `E ≥ 0`.
    pub filter: Option<&'a (dyn Fn(f64) -> f64 + Sync)>,
    pub project_ac: bool,
}

#[derive(Clone, Debug)]
pub struct LatticeEvolution {
    pub t_list: Vec<f64>,
    /// Sup over the supplied probe sites.
    pub sup_probes: Vec<f64>,
    /// Sup over the whole lattice.
    pub sup_all: Vec<f64>,
    pub probe_values: Vec<Vec<Complex64>>,
    pub l2_norms: Vec<f64>,
    pub initial_l2: f64,
    pub bound_states: usize,
    pub bound_component_norm: f64,
    pub backend: LatticeBackend,
}

fn l2(u: &[Complex64], h: f64) -> f64 {
    (u.iter().map(|z| z.norm_sqr()).sum::<f64>() * h * h).sqrt()
}

/// Evolve `f` (values per site) under `e^{itH_h}` after optional projection and filtering.
pub fn evolve_on_lattice(
    lattice: &Lattice,
    f: &[f64],
    t_list: &[f64],
    probes: &[Point],
    cfg: &LatticeConfig,
    run: LatticeRun<'_>,
) -> Result<LatticeEvolution> {
    let sites = lattice.sites();
    let backend = match cfg.backend {
        LatticeBackend::Auto if sites <= cfg.dense_cap => LatticeBackend::Dense,
        LatticeBackend::Auto => LatticeBackend::Chebyshev,
        b => b,
    };
    if backend == LatticeBackend::Dense && sites > cfg.dense_cap {
        return Err(Error::LatticeTooLarge { sites, cap: cfg.dense_cap });
    }
    let probe_idx = probes.iter().map(|&p| lattice.site_index(p)).collect::<Result<Vec<_>>>()?;
    match backend {
        LatticeBackend::Dense => dense_evolution(lattice, f, t_list, &probe_idx, run),
        _ => chebyshev_evolution(lattice, f, t_list, &probe_idx, cfg, run),
    }
}

fn summarize(
    lattice: &Lattice,
    states: Vec<Vec<Complex64>>,
    t_list: &[f64],
    probe_idx: &[usize],
    f: &[f64],
    bound_states: usize,
    bound_component_norm: f64,
    backend: LatticeBackend,
) -> LatticeEvolution {
    let mut sup_probes = Vec::new();
    let mut sup_all = Vec::new();
    let mut probe_values = Vec::new();
    let mut l2_norms = Vec::new();
    for u in &states {
        let pv: Vec<Complex64> = probe_idx.iter().map(|&k| u[k]).collect();
        sup_probes.push(pv.iter().map(|z| z.norm()).fold(0.0, f64::max));
        sup_all.push(u.iter().map(|z| z.norm()).fold(0.0, f64::max));
        l2_norms.push(l2(u, lattice.h));
        probe_values.push(pv);
    }
    let initial_l2 = (f.iter().map(|x| x * x).sum::<f64>() * lattice.h * lattice.h).sqrt();
    LatticeEvolution {
        t_list: t_list.to_vec(),
        sup_probes,
        sup_all,
        probe_values,
        l2_norms,
        initial_l2,
        bound_states,
        bound_component_norm,
        backend,
    }
}

fn dense_evolution(
    lattice: &Lattice,
    f: &[f64],
    t_list: &[f64],
    probe_idx: &[usize],
    run: LatticeRun<'_>,
) -> Result<LatticeEvolution> {
    let eig = symmetric_eigen(lattice.dense());
    let m = lattice.sites();
    let coeffs: Vec<f64> = (0..m).map(|k| eig.eigenvectors.column(k).iter().zip(f).map(|(a, b)| a * b).sum()).collect();
    let mut bound = 0;
    let mut bound_sq = 0.0;
    let mut weights = vec![0.0; m];
    for k in 0..m {
        let e = eig.eigenvalues[k];
        if e < 0.0 {
            bound += 1;
            bound_sq += coeffs[k] * coeffs[k];
        }
        let keep = if run.project_ac && e < 0.0 { 0.0 } else { 1.0 };
        let filt = run.filter.map(|g| g(e.max(0.0))).unwrap_or(1.0);
        weights[k] = keep * filt * coeffs[k];
    }
    let states: Vec<Vec<Complex64>> = t_list
        .iter()
        .map(|&t| {
            let mut u = vec![Complex64::new(0.0, 0.0); m];
            for k in 0..m {
                if weights[k] == 0.0 {
                    continue;
                }
                let c = Complex64::from_polar(weights[k], t * eig.eigenvalues[k]);
                for (ui, &phi) in u.iter_mut().zip(eig.eigenvectors.column(k).iter()) {
                    *ui += c * phi;
                }
            }
            u
        })
        .collect();
    let bound_norm = (bound_sq * lattice.h * lattice.h).sqrt();
    Ok(summarize(lattice, states, t_list, probe_idx, f, bound, bound_norm, LatticeBackend::Dense))
}

/// Chebyshev coefficients of `g` on `[−1, 1]` until the tail falls below `tol`.
fn chebyshev_coefficients(g: impl Fn(f64) -> f64, tol: f64, max_degree: usize) -> Result<Vec<f64>> {
    let mut deg = 64;
    loop {
        let nodes = 4 * deg;
        let vals: Vec<f64> = (0..nodes)
            .map(|j| g((std::f64::consts::PI * (j as f64 + 0.5) / nodes as f64).cos()))
            .collect();
        let coeffs: Vec<f64> = (0..=deg)
            .map(|k| {
                let s: f64 = vals
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / nodes as f64).cos())
                    .sum();
                let c = 2.0 * s / nodes as f64;
                if k == 0 {
                    0.5 * c
                } else {
                    c
                }
            })
            .collect();
        let tail = coeffs[deg - 8..].iter().map(|c| c.abs()).fold(0.0, f64::max);
        if tail < tol {
            let keep = coeffs.iter().rposition(|c| c.abs() >= tol * 1e-2).unwrap_or(0) + 1;
            return Ok(coeffs[..keep].to_vec());
        }
        if deg >= max_degree {
            return Err(Error::Nonconvergence(format!("chebyshev filter expansion needs more than {max_degree} terms")));
        }
        deg *= 2;
    }
}

struct Scaled<'a> {
    lattice: &'a Lattice,
    center: f64,
    radius: f64,
}

impl Scaled<'_> {
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.lattice.apply(u, out);
        for (o, x) in out.iter_mut().zip(u) {
            *o = (*o - self.center * x) / self.radius;
        }
    }

    /// `Σ c_k T_k(Ĥ) u` for a real vector.
    fn series(&self, coeffs: &[f64], u: &[f64]) -> Vec<f64> {
        let m = u.len();
        let mut prev = u.to_vec();
        let mut out: Vec<f64> = u.iter().map(|x| coeffs[0] * x).collect();
        if coeffs.len() == 1 {
            return out;
        }
        let mut cur = vec![0.0; m];
        self.apply(u, &mut cur);
        for (o, x) in out.iter_mut().zip(&cur) {
            *o += coeffs[1] * x;
        }
        let mut next = vec![0.0; m];
        for &c in &coeffs[2..] {
            self.apply(&cur, &mut next);
            for i in 0..m {
                next[i] = 2.0 * next[i] - prev[i];
                out[i] += c * next[i];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        out
    }

    /// `e^{itH}u = e^{itc} Σ (2 − δ_{k0}) i^k J_k(tr) T_k(Ĥ) u`.
    fn propagate(&self, u: &[f64], t: f64) -> Vec<Complex64> {
        if t == 0.0 {
            return u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        }
        let x = t * self.radius;
        let nmax = (x.abs() + 12.0 * x.abs().cbrt() + 40.0).ceil() as usize;
        let jn = bessel_jn_array(nmax, x.abs());
        let sgn = if x < 0.0 { -1.0 } else { 1.0 };
        let m = u.len();
        let mut acc = vec![Complex64::new(0.0, 0.0); m];
        let mut prev = u.to_vec();
        let mut cur = vec![0.0; m];
        self.apply(u, &mut cur);
        let coef = |k: usize| {
            let jk = jn[k] * if k % 2 == 1 { sgn } else { 1.0 };
            let ik = match k % 4 {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, 1.0),
                2 => Complex64::new(-1.0, 0.0),
                _ => Complex64::new(0.0, -1.0),
            };
            ik * (if k == 0 { jk } else { 2.0 * jk })
        };
        let c0 = coef(0);
        let c1 = coef(1);
        for i in 0..m {
            acc[i] = c0 * prev[i] + c1 * cur[i];
        }
        let mut next = vec![0.0; m];
        for k in 2..=nmax {
            self.apply(&cur, &mut next);
            let ck = coef(k);
            for i in 0..m {
                next[i] = 2.0 * next[i] - prev[i];
                acc[i] += ck * next[i];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        let phase = Complex64::from_polar(1.0, t * self.center);
        acc.iter_mut().for_each(|z| *z *= phase);
        acc
    }
}

/// Negative-energy eigenpairs from a centred dense sub-box, embedded in the full lattice.
fn bound_states(lattice: &Lattice, cfg: &LatticeConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    if lattice.potential.iter().all(|&v| v >= 0.0) {
        return Ok(Vec::new());
    }
    let half = ((cfg.bound_state_box / lattice.h).floor() as usize).min((lattice.n - 1) / 2);
    let ns = 2 * half + 1;
    if ns * ns > cfg.dense_cap {
        return Err(Error::LatticeTooLarge { sites: ns * ns, cap: cfg.dense_cap });
    }
    let offset = (lattice.n - ns) / 2;
    let sub = Lattice {
        n: ns,
        h: lattice.h,
        potential: (0..ns * ns).map(|k| lattice.potential[(k / ns + offset) * lattice.n + k % ns + offset]).collect(),
    };
    let eig = symmetric_eigen(sub.dense());
    let mut out = Vec::new();
    let mut work = vec![0.0; lattice.sites()];
    for k in 0..ns * ns {
        let e = eig.eigenvalues[k];
        if e >= 0.0 {
            continue;
        }
        let mut phi = vec![0.0; lattice.sites()];
        for (s, &val) in eig.eigenvectors.column(k).iter().enumerate() {
            phi[(s / ns + offset) * lattice.n + s % ns + offset] = val;
        }
        lattice.apply(&phi, &mut work);
        let residual = work.iter().zip(&phi).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt();
        if residual > 1e-8 * e.abs().max(1.0) {
            return Err(Error::Precondition(format!(
                "bound state at E = {e:.4e} is not localized in the sub-box (residual {residual:.2e}); enlarge bound_state_box"
            )));
        }
        out.push((e, phi));
    }
    Ok(out)
}

fn chebyshev_evolution(
    lattice: &Lattice,
    f: &[f64],
    t_list: &[f64],
    probe_idx: &[usize],
    cfg: &LatticeConfig,
    run: LatticeRun<'_>,
) -> Result<LatticeEvolution> {
    let (lo, hi) = lattice.spectral_bounds();
    let center = 0.5 * (hi + lo);
    let radius = 0.5 * (hi - lo) * 1.01;
    let op = Scaled { lattice, center, radius };

    let bound = bound_states(lattice, cfg)?;
    let mut g = f.to_vec();
    let mut bound_sq = 0.0;
    for (_, phi) in &bound {
        let c: f64 = phi.iter().zip(f).map(|(a, b)| a * b).sum();
        bound_sq += c * c;
        if run.project_ac {
            g.iter_mut().zip(phi).for_each(|(x, p)| *x -= c * p);
        }
    }
    if let Some(filter) = run.filter {
        let coeffs = chebyshev_coefficients(|x| filter((center + radius * x).max(0.0)), 1e-12, 1 << 16)?;
        g = op.series(&coeffs, &g);
    }
    let states: Vec<Vec<Complex64>> = t_list
        .iter()
        .map(|&t| {
            let mut u = op.propagate(&g, t);
            if !run.project_ac {
                return u;
            }
            // Deflated bound states stay out up to expansion error; remove any leakage.
            for (_, phi) in &bound {
                let c: Complex64 = phi.iter().zip(&u).map(|(a, b)| b * *a).sum();
                u.iter_mut().zip(phi).for_each(|(x, p)| *x -= c * *p);
            }
            u
        })
        .collect();
    let bound_norm = (bound_sq * lattice.h * lattice.h).sqrt();
    Ok(summarize(lattice, states, t_list, probe_idx, f, bound.len(), bound_norm, LatticeBackend::Chebyshev))
}
