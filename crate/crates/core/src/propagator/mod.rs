//! Time evolution `e^{itH}P_ac`: Born partial sums, the spectral λ-integral with point sources,
//! the free kernel, a lattice oracle, and log-log decay fits.

mod lattice;
mod spectral;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::f64::consts::PI;

use crate::discretize::{distance, r0_matrix, Grid, KernelOperator, Point};
use crate::error::{Error, Result};
use crate::linalg::{weighted_operator_norm, CMatrix};
use crate::oscint::FilonOptions;
use crate::potential::SampledPotential;
use crate::specfun::{smooth_cutoff, CutoffFamily, Sign};

pub use lattice::{evolve_on_lattice, Lattice, LatticeBackend, LatticeConfig, LatticeEvolution, LatticeRun};
pub use spectral::{spectral_evolution, spectral_values, SpectralEvolution, SpectralOptions};

fn default_born_terms() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRay {
    pub length: f64,
    pub spacing: f64,
    #[serde(default)]
    pub angle: f64,
}

impl ProbeRay {
    pub fn points(&self) -> Vec<Point> {
        let count = (self.length / self.spacing + 1e-9).floor() as usize;
        let (s, c) = self.angle.sin_cos();
        (0..=count).map(|k| [k as f64 * self.spacing * c, k as f64 * self.spacing * s]).collect()
    }
}

impl Default for ProbeRay {
    fn default() -> Self {
        ProbeRay { length: 60.0, spacing: 0.5, angle: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub t_list: Vec<f64>,
    pub lambda1: f64,
    pub lambda_max: f64,
    #[serde(default)]
    pub quadrature: FilonOptions,
    #[serde(default = "default_born_terms")]
    pub born_terms: usize,
    /// Location of the unit point source `f`.
    #[serde(default)]
    pub source: Point,
    /// Probe points `g` at which the evolved source is sampled.
    #[serde(default)]
    pub probes: ProbeRay,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    /// Recompute with `lambda_max` doubled and report the relative change.
    #[serde(default)]
    pub tail_check: bool,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() {
            return Err(Error::config("evolution.t_list", "must not be empty"));
        }
        if self.t_list.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::config("evolution.t_list", "times must be positive and finite"));
        }
        if self.t_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("evolution.t_list", "must be sorted ascending without repeats"));
        }
        if !(self.lambda1 > 0.0 && self.lambda1 < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(Error::config("evolution.lambda1", "need 0 < lambda1 < lambda_max"));
        }
        if !(self.probes.spacing > 0.0 && self.probes.length >= 0.0) {
            return Err(Error::config("evolution.probes", "spacing must be positive and length nonnegative"));
        }
        if let Some(l) = &self.lattice {
            l.validate()?;
        }
        Ok(())
    }

    pub fn chi(&self) -> CutoffFamily {
        CutoffFamily::Chi { lambda1: self.lambda1 }
    }

    /// `χ(λ) + (1 − χ(λ))·ρ(λ)` where `ρ` rolls off smoothly between `λmax/2` and `λmax`.
    pub fn filter(&self, lambda: f64) -> f64 {
        let (chi, _) = smooth_cutoff(self.chi(), lambda);
        let (roll, _) = smooth_cutoff(CutoffFamily::Chi { lambda1: 0.5 * self.lambda_max }, lambda);
        chi + (1.0 - chi) * roll
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spectral,
    Lattice,
    Free,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Spectral => "spectral",
            Method::Lattice => "lattice",
            Method::Free => "free",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub t: f64,
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFitResult {
    pub exponent: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci: f64,
    pub intercept: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Least-squares slope of `log value` against `log t`.
pub fn decay_fit(rows: &[DecayRow]) -> Result<DecayFitResult> {
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged && r.value > 0.0 && r.value.is_finite() && r.t > 0.0)
        .map(|r| (r.t.ln(), r.value.ln()))
        .collect();
    let excluded = rows.len() - usable.len();
    if excluded > 0 {
        log::warn!("decay fit: excluded {excluded} nonpositive or unconverged rows");
    }
    if usable.len() < 8 {
        return Err(Error::Fit(format!("need at least 8 usable rows, have {}", usable.len())));
    }
    let lo = usable.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = usable.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < std::f64::consts::LN_10 * (1.0 - 1e-12) {
        return Err(Error::Fit(format!("times span {:.3} decades, need at least 1", (hi - lo) / std::f64::consts::LN_10)));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    let quantile = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::Fit(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(DecayFitResult { exponent: slope, ci: quantile * se, intercept, used: usable.len(), excluded })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub fitted_exponent: f64,
    pub exponent_ci: f64,
    pub method_tag: Method,
}

impl DecayReport {
    pub fn new(rows: Vec<DecayRow>, method: Method) -> Result<Self> {
        let fit = decay_fit(&rows)?;
        Ok(DecayReport { rows, fitted_exponent: fit.exponent, exponent_ci: fit.ci, method_tag: method })
    }
}

/// Kernel of `e^{itH₀}`: `(−4πit)⁻¹ e^{−i r²/4t}`.
pub fn free_kernel(t: f64, r: f64) -> Complex64 {
    Complex64::new(0.0, -4.0 * PI * t).inv() * Complex64::from_polar(1.0, -r * r / (4.0 * t))
}

#[derive(Clone, Debug)]
pub struct FreeEvolution {
    pub values: Vec<Complex64>,
    pub sup: f64,
}

/// `e^{itH₀}f` at `targets` by direct quadrature of `f` sampled on `grid`.
/// At `t = 0` every target must be a grid node and `f` is returned there.
pub fn free_evolution(f: &[f64], grid: &Grid, targets: &[Point], t: f64) -> Result<FreeEvolution> {
    if f.len() != grid.len() {
        return Err(Error::Precondition(format!("f has {} samples for {} nodes", f.len(), grid.len())));
    }
    let values: Vec<Complex64> = if t == 0.0 {
        targets
            .iter()
            .map(|&y| {
                grid.nodes
                    .iter()
                    .position(|&x| distance(x, y) == 0.0)
                    .map(|i| Complex64::new(f[i], 0.0))
                    .ok_or_else(|| Error::Precondition("at t = 0 the targets must be grid nodes".into()))
            })
            .collect::<Result<_>>()?
    } else {
        use rayon::prelude::*;
        targets
            .par_iter()
            .map(|&y| {
                grid.nodes
                    .iter()
                    .zip(&grid.weights)
                    .zip(f)
                    .map(|((&x, &w), &fx)| free_kernel(t, distance(x, y)) * (w * fx))
                    .sum()
            })
            .collect()
    };
    let sup = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(FreeEvolution { values, sup })
}

#[derive(Clone, Debug)]
pub struct BornSeries {
    /// Partial sums for `N = 0, 1, ..., terms`.
    pub partial_sums: Vec<CMatrix>,
    /// `‖vR₀±(λ²)v‖` in the weighted operator norm.
    pub contraction: f64,
}

impl BornSeries {
    pub fn operator(&self, grid: &std::sync::Arc<Grid>, sign: Sign, lambda: f64) -> KernelOperator {
        let n = self.partial_sums.len() - 1;
        KernelOperator::new(self.partial_sums[n].clone(), format!("Born{n}({lambda},{})", sign.tag()), grid.clone())
    }
}

/// `Σ_{ℓ=0}^{N} R₀±(λ²)(−VR₀±(λ²))^ℓ` with every intermediate partial sum.
pub fn born_series_resolvent(sign: Sign, lambda: f64, terms: usize, pot: &SampledPotential) -> Result<BornSeries> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("Born series needs lambda > 0, got {lambda}")));
    }
    let grid = &pot.grid;
    let r0 = r0_matrix(sign, lambda, grid);
    let n = r0.nrows();
    let vr0 = CMatrix::from_fn(n, n, |i, j| r0[(i, j)] * -pot.values[i]);
    let vr0v = CMatrix::from_fn(n, n, |i, j| r0[(i, j)] * (pot.v[i] * pot.v[j]));
    let contraction = weighted_operator_norm(&vr0v, &grid.weights);
    if contraction >= 1.0 {
        log::warn!("Born series at λ = {lambda}: contraction factor {contraction:.3} ≥ 1, partial sums may diverge");
    }
    let mut term = r0.clone();
    let mut sum = r0;
    let mut partial_sums = vec![sum.clone()];
    for _ in 0..terms {
        term = &term * &vr0;
        sum += &term;
        partial_sums.push(sum.clone());
    }
    Ok(BornSeries { partial_sums, contraction })
}

/// Lattice counterpart of [`spectral_evolution`]: a unit discrete delta at the source site,
/// filtered by the same `F(√E)`, projected onto `E ≥ 0` and sampled at the same probes.
pub fn lattice_oracle(spec: &crate::potential::PotentialSpec, cfg: &EvolutionConfig) -> Result<(DecayReport, LatticeEvolution)> {
    cfg.validate()?;
    let lc = cfg
        .lattice
        .as_ref()
        .ok_or_else(|| Error::config("evolution.lattice", "lattice settings are required for the lattice oracle"))?;
    let t_max = *cfg.t_list.last().unwrap();
    let arrival = lc.half_width / (2.0 * cfg.lambda_max);
    if t_max > arrival {
        return Err(Error::config(
            "evolution.lattice.half_width",
            format!("boundary reflections arrive at t ≈ {arrival:.1} < t_max = {t_max}; need half_width ≥ {}", 2.0 * cfg.lambda_max * t_max),
        ));
    }
    let lattice = Lattice::new(lc.sites_per_side(), lc.spacing, spec);
    let mut f = vec![0.0; lattice.sites()];
    f[lattice.site_index(cfg.source)?] = 1.0 / (lc.spacing * lc.spacing);
    let filter = |e: f64| cfg.filter(e.max(0.0).sqrt());
    let run = LatticeRun { filter: Some(&filter), project_ac: true };
    let out = evolve_on_lattice(&lattice, &f, &cfg.t_list, &cfg.probes.points(), lc, run)?;
    let rows = cfg
        .t_list
        .iter()
        .zip(&out.sup_probes)
        .map(|(&t, &value)| DecayRow { t, value, converged: true })
        .collect();
    Ok((DecayReport::new(rows, Method::Lattice)?, out))
}
