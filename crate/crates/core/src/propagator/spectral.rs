//! `⟨e^{itH}P_ac F(√H) δ_x, δ_y⟩ = (πi)⁻¹∫₀^Λ e^{itλ²} λ F(λ) [R_V⁺ − R_V⁻](λ²)(y, x) dλ`.
//!
//! Off-grid kernel values come from `R_V = R₀ − R₀v M⁻¹ vR₀` with the inner factor on the grid.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{DecayReport, DecayRow, EvolutionConfig, Method};
use crate::discretize::{distance, m_operator, Point};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::lowenergy::{regularity_test, DEFAULT_TAU_RELATIVE};
use crate::oscint::{oscillatory_quadrature_many, FilonOptions, QuadratureOutcome};
use crate::potential::SampledPotential;
use crate::specfun::{bessel_j0, free_resolvent_unchecked, Sign};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug)]
pub struct SpectralOptions {
    pub quadrature: FilonOptions,
    /// Use `R_V⁻ = conj R_V⁺`; otherwise `M⁻` is factored separately.
    pub minus_by_conjugation: bool,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { quadrature: FilonOptions::default(), minus_by_conjugation: true }
    }
}

struct Geometry<'a> {
    pot: &'a SampledPotential,
    sources: &'a [(Point, f64)],
    probes: &'a [Point],
}

impl Geometry<'_> {
    fn check(&self) -> Result<()> {
        if self.pot.is_zero() {
            return Ok(());
        }
        for p in self.sources.iter().map(|s| &s.0).chain(self.probes) {
            if self.pot.grid.nodes.iter().any(|&x| distance(x, *p) < 1e-12) {
                return Err(Error::Precondition(format!(
                    "point ({}, {}) coincides with a grid node; move it off the node",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    /// `T±(y_k, x_s) = Σ_i R₀±(y_k, x_i) w_i v_i [M±⁻¹ b_s]_i`.
    fn correction(&self, sign: Sign, lambda: f64) -> Result<Vec<Vec<Complex64>>> {
        let pot = self.pot;
        let grid = &pot.grid;
        let n = pot.len();
        let m = m_operator(sign, lambda, pot).matrix;
        let b = CMatrix::from_fn(n, self.sources.len(), |j, s| {
            free_resolvent_unchecked(sign, lambda * distance(grid.nodes[j], self.sources[s].0)) * pot.v[j]
        });
        let c = m.lu().solve(&b).ok_or_else(|| Error::Singular {
            what: format!("M{}(λ = {lambda})", sign.tag()),
            condition: f64::INFINITY,
        })?;
        Ok(self
            .probes
            .par_iter()
            .map(|&y| {
                let row: Vec<Complex64> = (0..n)
                    .map(|i| free_resolvent_unchecked(sign, lambda * distance(y, grid.nodes[i])) * (grid.weights[i] * pot.v[i]))
                    .collect();
                (0..self.sources.len())
                    .map(|s| row.iter().enumerate().map(|(i, r)| r * c[(i, s)]).sum())
                    .collect()
            })
            .collect())
    }

    /// `[R_V⁺ − R_V⁻](λ²)` applied to the sources, at every probe.
    fn difference(&self, lambda: f64, by_conjugation: bool) -> Result<Vec<Complex64>> {
        let mut out: Vec<Complex64> = self
            .probes
            .iter()
            .map(|&y| {
                self.sources
                    .iter()
                    .map(|&(x, mass)| Ok(0.5 * I * bessel_j0(lambda * distance(x, y))? * mass))
                    .sum::<Result<Complex64>>()
            })
            .collect::<Result<_>>()?;
        if self.pot.is_zero() {
            return Ok(out);
        }
        let plus = self.correction(Sign::Plus, lambda)?;
        let minus = if by_conjugation {
            plus.iter().map(|r| r.iter().map(|z| z.conj()).collect()).collect()
        } else {
            self.correction(Sign::Minus, lambda)?
        };
        for (k, o) in out.iter_mut().enumerate() {
            for (s, &(_, mass)) in self.sources.iter().enumerate() {
                *o -= (plus[k][s] - minus[k][s]) * mass;
            }
        }
        Ok(out)
    }
}

/// Evolved point sources sampled at `probes` for every `t` in `ts` (any sign), `values[t][probe]`.
pub fn spectral_values(
    pot: &SampledPotential,
    sources: &[(Point, f64)],
    probes: &[Point],
    ts: &[f64],
    filter: &(dyn Fn(f64) -> f64 + Sync),
    lambda_max: f64,
    opts: &SpectralOptions,
) -> Result<QuadratureOutcome> {
    let geom = Geometry { pot, sources, probes };
    geom.check()?;
    let prefactor = (std::f64::consts::PI * I).inv();
    oscillatory_quadrature_many(
        |lambda| {
            let f = filter(lambda);
            if f == 0.0 {
                return Ok(vec![Complex64::new(0.0, 0.0); probes.len()]);
            }
            Ok(geom
                .difference(lambda, opts.minus_by_conjugation)?
                .into_iter()
                .map(|d| d * (f * prefactor))
                .collect())
        },
        0.0,
        lambda_max,
        ts,
        0.0,
        &opts.quadrature,
    )
}

#[derive(Clone, Debug)]
pub struct SpectralEvolution {
    pub report: DecayReport,
    pub probes: Vec<Point>,
    /// `values[t][probe]`; rows that failed to converge hold NaN.
    pub values: Vec<Vec<Complex64>>,
    /// Relative change of the sup-norms when `lambda_max` is doubled.
    pub tail_change: Option<f64>,
    pub evaluations: usize,
}

fn sups(values: &[Vec<Complex64>]) -> Vec<f64> {
    values.iter().map(|row| row.iter().map(|z| z.norm()).fold(0.0, f64::max)).collect()
}

/// Sup over the probe ray of `|e^{itH}P_ac F(√H) δ_source|` for each configured `t`.
pub fn spectral_evolution(pot: &SampledPotential, cfg: &EvolutionConfig) -> Result<SpectralEvolution> {
    cfg.validate()?;
    if !pot.is_zero() {
        regularity_test(pot, DEFAULT_TAU_RELATIVE)?.require_regular()?;
    }
    let sources = [(cfg.source, 1.0)];
    let probes = cfg.probes.points();
    let filter = |l: f64| cfg.filter(l);
    let opts = SpectralOptions { quadrature: cfg.quadrature, minus_by_conjugation: true };

    let (values, converged, evaluations) = match spectral_values(pot, &sources, &probes, &cfg.t_list, &filter, cfg.lambda_max, &opts) {
        Ok(out) => (out.values, vec![true; cfg.t_list.len()], out.evaluations),
        Err(Error::Nonconvergence(msg)) => {
            log::warn!("shared quadrature failed ({msg}); retrying each t separately");
            let mut values = Vec::new();
            let mut converged = Vec::new();
            let mut evaluations = 0;
            for &t in &cfg.t_list {
                match spectral_values(pot, &sources, &probes, &[t], &filter, cfg.lambda_max, &opts) {
                    Ok(out) => {
                        evaluations += out.evaluations;
                        values.push(out.values[0].clone());
                        converged.push(true);
                    }
                    Err(Error::Nonconvergence(m)) => {
                        log::warn!("t = {t}: {m}");
                        values.push(vec![Complex64::new(f64::NAN, f64::NAN); probes.len()]);
                        converged.push(false);
                    }
                    Err(e) => return Err(e),
                }
            }
            (values, converged, evaluations)
        }
        Err(e) => return Err(e),
    };

    let tail_change = if cfg.tail_check {
        let doubled = EvolutionConfig { lambda_max: 2.0 * cfg.lambda_max, ..cfg.clone() };
        let filter2 = |l: f64| doubled.filter(l);
        let out = spectral_values(pot, &sources, &probes, &cfg.t_list, &filter2, doubled.lambda_max, &opts)?;
        let change = sups(&values)
            .iter()
            .zip(sups(&out.values))
            .filter(|(a, _)| a.is_finite() && **a > 0.0)
            .map(|(a, b)| (a - b).abs() / a)
            .fold(0.0, f64::max);
        if change > 5e-3 {
            log::warn!("doubling lambda_max changes the sup-norms by {:.2}%", 100.0 * change);
        }
        Some(change)
    } else {
        None
    };

    let rows = cfg
        .t_list
        .iter()
        .zip(sups(&values))
        .zip(&converged)
        .map(|((&t, value), &ok)| DecayRow { t, value, converged: ok })
        .collect();
    let report = DecayReport::new(rows, Method::Spectral)?;
    Ok(SpectralEvolution { report, probes, values, tail_change, evaluations })
}
