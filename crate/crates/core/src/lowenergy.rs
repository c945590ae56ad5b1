//! Zero-energy regularity and the low-energy expansion
//! `M±(λ)⁻¹ = h±(λ)⁻¹S + QD₀Q + E±(λ)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{m_operator, projections, r0_matrix, t_matrix, hs_norm_matrix, KernelOperator, ProjectionPair};
use crate::error::{Error, Result};
use crate::linalg::{c, inner, invert_real, symmetric_eigen, invert_with_condition, weighted_norm, weighted_operator_norm_real, CMatrix, CVector, RMatrix};
use crate::discretize::Grid;
use crate::potential::{build_potential, PotentialSpec, SampledPotential};
use std::sync::Arc;
use crate::specfun::{resolvent_constant, Sign, EULER_GAMMA};

pub const DEFAULT_TAU_RELATIVE: f64 = 1e-8;
/// Below this relative mass `|∫V|/‖V‖₁` the zero-mass inverse is used.
pub const ZERO_MASS_TOL: f64 = 1e-10;
/// Above this relative mass the nonzero-mass inverse is unambiguous.
pub const NONZERO_MASS_TOL: f64 = 1e-6;
/// Geometric ladder density used for scaling fits and finite differences.
pub const LADDER_PER_DECADE: usize = 24;

/// Geometric ladder from `lo` to `hi` with `per_decade` points per factor of ten.
pub fn lambda_ladder(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let steps = ((hi / lo).log10() * per_decade as f64).round().max(1.0) as usize;
    (0..=steps).map(|k| lo * (hi / lo).powf(k as f64 / steps as f64)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub sigma_min: f64,
    pub tau: f64,
    pub regular: bool,
    /// Signed eigenvalue of `QTQ` on `ran Q` closest to zero.
    pub nearest_eigenvalue: f64,
    /// Number of negative eigenvalues of `QTQ` on `ran Q`; it changes by one at each threshold crossing.
    pub negative_count: usize,
    pub qtq_norm: f64,
    pub integral_of_v: f64,
    pub l1_norm: f64,
    pub abs_bound: Option<f64>,
    pub inverse_residual: Option<f64>,
    #[serde(skip)]
    pub t: RMatrix,
    #[serde(skip)]
    pub projections: ProjectionPair,
    #[serde(skip)]
    pub d0: Option<RMatrix>,
}

impl RegularityReport {
    pub fn require_regular(&self) -> Result<&RMatrix> {
        self.d0.as_ref().ok_or(Error::NotRegular { sigma_min: self.sigma_min, tau: self.tau })
    }
}

fn symmetrized(a: &RMatrix, weights: &[f64]) -> RMatrix {
    let n = a.nrows();
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let b = RMatrix::from_fn(n, n, |i, j| a[(i, j)] * sq[i] / sq[j]);
    (&b + b.transpose()) * 0.5
}

/// Test whether `Q(U + vG₀v)Q` is invertible on `ran Q`, with threshold `τ = tau_relative·‖QTQ‖`.
pub fn regularity_test(pot: &SampledPotential, tau_relative: f64) -> Result<RegularityReport> {
    if pot.is_zero() {
        return Err(Error::ZeroPotential);
    }
    let grid = &pot.grid;
    let n = pot.len();
    let proj = projections(pot)?;
    let t = t_matrix(pot);
    let qtq = &proj.q * &t * &proj.q;

    // Spectrum of QTQ on ran Q: shift ran P far away and drop the eigenvector along v.
    let sym_qtq = symmetrized(&qtq, &grid.weights);
    let scale = sym_qtq.norm().max(1.0);
    let shifted = &sym_qtq + symmetrized(&proj.p, &grid.weights) * (10.0 * scale);
    let eig = symmetric_eigen(shifted);
    let sv: Vec<f64> = (0..n).map(|i| pot.v[i] * grid.weights[i].sqrt()).collect();
    let along_v = (0..n)
        .max_by(|&a, &b| {
            let pa: f64 = eig.eigenvectors.column(a).iter().zip(&sv).map(|(x, y)| x * y).sum::<f64>().abs();
            let pb: f64 = eig.eigenvectors.column(b).iter().zip(&sv).map(|(x, y)| x * y).sum::<f64>().abs();
            pa.total_cmp(&pb)
        })
        .unwrap();
    let mut sigma_min = f64::INFINITY;
    let mut nearest_eigenvalue = f64::INFINITY;
    let mut qtq_norm = 0.0f64;
    let mut negative_count = 0;
    for (k, &e) in eig.eigenvalues.iter().enumerate() {
        if k == along_v {
            continue;
        }
        if e.abs() < sigma_min {
            sigma_min = e.abs();
            nearest_eigenvalue = e;
        }
        qtq_norm = qtq_norm.max(e.abs());
        if e < 0.0 {
            negative_count += 1;
        }
    }
    let tau = tau_relative * qtq_norm;
    let regular = sigma_min > tau;

    let (d0, abs_bound, inverse_residual) = if regular {
        let inv = invert_real(&(&qtq + &proj.p), "QTQ + P")?;
        let d0 = &proj.q * inv * &proj.q;
        let residual = (&d0 * &qtq - &proj.q).amax();
        let abs = weighted_operator_norm_real(&d0.abs(), &grid.weights);
        (Some(d0), Some(abs), Some(residual))
    } else {
        (None, None, None)
    };
    Ok(RegularityReport {
        sigma_min,
        tau,
        regular,
        nearest_eigenvalue,
        negative_count,
        qtq_norm,
        integral_of_v: pot.integral,
        l1_norm: pot.l1_norm,
        abs_bound,
        inverse_residual,
        t,
        projections: proj,
        d0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassCase {
    NonzeroMass,
    ZeroMass,
    NearDegenerate,
}

#[derive(Clone, Debug)]
pub struct QuqInverse {
    pub case: MassCase,
    /// `f = Ug + c₀Uv` solving `QUQf = g` with `Qf = f`.
    pub nonzero_mass: Option<CVector>,
    /// `f = Ug + c₁v − c₁Uv` solving `(QUQ + π₀)f = g`.
    pub zero_mass: Option<CVector>,
    pub warning: Option<String>,
}

impl QuqInverse {
    pub fn solution(&self) -> &CVector {
        match self.case {
            MassCase::ZeroMass => self.zero_mass.as_ref().unwrap(),
            _ => self.nonzero_mass.as_ref().unwrap(),
        }
    }
}

/// Explicit inverse of `QUQ` on `ran Q`, or of `QUQ + π₀` when `∫V = 0`.
pub fn quq_explicit_inverse(g: &CVector, pot: &SampledPotential) -> Result<QuqInverse> {
    if pot.is_zero() {
        return Err(Error::ZeroPotential);
    }
    let w = &pot.grid.weights;
    let v = CVector::from_iterator(pot.len(), pot.v.iter().map(|&x| c(x)));
    let uv = CVector::from_iterator(pot.len(), pot.v.iter().zip(&pot.u).map(|(x, u)| c(x * u)));
    let ug = CVector::from_iterator(pot.len(), g.iter().zip(&pot.u).map(|(x, u)| x * *u));
    let along = inner(g, &v, w).norm();
    if along > 1e-10 * weighted_norm(g, w) * pot.l1_norm.sqrt() {
        return Err(Error::Precondition(format!("right-hand side is not in ran Q: |<g, v>| = {along:.3e}")));
    }
    let rel_mass = pot.integral.abs() / pot.l1_norm;
    let case = if rel_mass < ZERO_MASS_TOL {
        MassCase::ZeroMass
    } else if rel_mass >= NONZERO_MASS_TOL {
        MassCase::NonzeroMass
    } else {
        MassCase::NearDegenerate
    };
    let nonzero_mass = (case != MassCase::ZeroMass).then(|| {
        let c0 = -inner(&ug, &v, w) / pot.integral;
        &ug + &uv * c0
    });
    let zero_mass = (case != MassCase::NonzeroMass).then(|| {
        let c1 = -inner(g, &uv, w) / pot.l1_norm;
        &ug + &v * c1 - &uv * c1
    });
    let warning = (case == MassCase::NearDegenerate).then(|| {
        let msg = format!("|∫V|/‖V‖₁ = {rel_mass:.3e} lies between the case tolerances; both inverses returned");
        log::warn!("{msg}");
        msg
    });
    Ok(QuqInverse { case, nonzero_mass, zero_mass, warning })
}

/// Inverse of the block matrix `[[a11, a12], [a21, a22]]` through the Schur complement of `a22`.
pub fn feshbach_invert(a11: &CMatrix, a12: &CMatrix, a21: &CMatrix, a22: &CMatrix) -> Result<CMatrix> {
    let (n1, n2) = (a11.nrows(), a22.nrows());
    if a11.ncols() != n1 || a22.ncols() != n2 || a12.shape() != (n1, n2) || a21.shape() != (n2, n1) {
        return Err(Error::Precondition("block shapes are inconsistent".into()));
    }
    let (a22_inv, _) = invert_with_condition(a22, "a22")?;
    let schur = a11 - a12 * &a22_inv * a21;
    let (a, _) = invert_with_condition(&schur, "Schur complement a11 - a12 a22^-1 a21")?;
    let top_right = -(&a * a12 * &a22_inv);
    let bottom_left = -(&a22_inv * a21 * &a);
    let bottom_right = &a22_inv + &a22_inv * a21 * &a * a12 * &a22_inv;
    let mut out = CMatrix::zeros(n1 + n2, n1 + n2);
    out.view_mut((0, 0), (n1, n1)).copy_from(&a);
    out.view_mut((0, n1), (n1, n2)).copy_from(&top_right);
    out.view_mut((n1, 0), (n2, n1)).copy_from(&bottom_left);
    out.view_mut((n1, n1), (n2, n2)).copy_from(&bottom_right);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LowEnergyExpansion {
    pub a: f64,
    pub z: Complex64,
    pub trace_term: f64,
    pub l1_norm: f64,
    pub s: RMatrix,
    pub qd0q: RMatrix,
    pub s_singular_values: Vec<f64>,
    pub rank_s: usize,
    pub sigma_min: f64,
    pot: SampledPotential,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionSummary {
    pub a: f64,
    pub z: [f64; 2],
    pub rank_s: usize,
    pub sigma_min: f64,
    pub trace_term: f64,
    pub s_singular_values: Vec<f64>,
    pub scaling_exponents: Option<ScalingExponents>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingExponents {
    pub ve0v: f64,
    pub e_plus: f64,
}

impl LowEnergyExpansion {
    /// `h±(λ) = a log λ + z` for `+`, its conjugate for `−`.
    pub fn h(&self, sign: Sign, lambda: f64) -> Complex64 {
        let h = self.z + c(self.a * lambda.ln());
        match sign {
            Sign::Plus => h,
            Sign::Minus => h.conj(),
        }
    }

    pub fn potential(&self) -> &SampledPotential {
        &self.pot
    }

    /// `E±(λ) = M±(λ)⁻¹ − h±(λ)⁻¹S − QD₀Q`, with the condition estimate of `M±(λ)`.
    pub fn e_eval(&self, sign: Sign, lambda: f64) -> Result<(CMatrix, f64)> {
        let m = m_operator(sign, lambda, &self.pot);
        let (inv, cond) = invert_with_condition(&m.matrix, &format!("M{}({lambda})", sign.tag()))?;
        let hinv = self.h(sign, lambda).inv();
        let e = CMatrix::from_fn(inv.nrows(), inv.ncols(), |i, j| {
            inv[(i, j)] - hinv * self.s[(i, j)] - self.qd0q[(i, j)]
        });
        Ok((e, cond))
    }

    pub fn summary(&self, scaling_exponents: Option<ScalingExponents>) -> ExpansionSummary {
        ExpansionSummary {
            a: self.a,
            z: [self.z.re, self.z.im],
            rank_s: self.rank_s,
            sigma_min: self.sigma_min,
            trace_term: self.trace_term,
            s_singular_values: self.s_singular_values.clone(),
            scaling_exponents,
        }
    }
}

/// Build the expansion from a regular report, rejecting a ladder on which `h±` vanishes.
pub fn low_energy_expansion_with(
    pot: &SampledPotential,
    report: &RegularityReport,
    ladder: &[f64],
) -> Result<LowEnergyExpansion> {
    let d0 = report.require_regular()?;
    let grid = &pot.grid;
    let n = pot.len();
    let t = &report.t;
    let proj = &report.projections;
    let qd0q = &proj.q * d0 * &proj.q;
    let id = RMatrix::identity(n, n);
    let left = &id - &qd0q * t;
    let right = &id - t * &qd0q;
    let s = &left * &proj.p * &right;

    let v = nalgebra::DVector::from_vec(pot.v.clone());
    let wv = nalgebra::DVector::from_iterator(n, pot.v.iter().zip(&grid.weights).map(|(x, w)| x * w));
    let tv = t * &v;
    let trace_term = (wv.dot(&tv) - wv.dot(&(t * &qd0q * &tv))) / pot.l1_norm;

    let l1 = pot.l1_norm;
    let a = -l1 / (2.0 * PI);
    let z = Complex64::new(l1 * (-EULER_GAMMA + std::f64::consts::LN_2) / (2.0 * PI) + trace_term, l1 / 4.0);

    let mut s_singular_values: Vec<f64> = symmetrized_general(&s, &grid.weights).singular_values().iter().copied().collect();
    s_singular_values.sort_by(|x, y| y.total_cmp(x));
    let top = s_singular_values.first().copied().unwrap_or(0.0);
    let rank_s = s_singular_values.iter().filter(|&&x| x > 1e-10 * top).count();
    s_singular_values.truncate(4);

    let exp = LowEnergyExpansion {
        a,
        z,
        trace_term,
        l1_norm: l1,
        s,
        qd0q,
        s_singular_values,
        rank_s,
        sigma_min: report.sigma_min,
        pot: pot.clone(),
    };
    for &lambda in ladder {
        let h = exp.h(Sign::Plus, lambda).norm();
        if !(h > 1e-12 * l1) {
            return Err(Error::Precondition(format!(
                "h(λ) vanishes at λ = {lambda:.3e}; shrink lambda1 so the ladder stays below the zero of h"
            )));
        }
    }
    Ok(exp)
}

fn symmetrized_general(a: &RMatrix, weights: &[f64]) -> RMatrix {
    let n = a.nrows();
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    RMatrix::from_fn(n, n, |i, j| a[(i, j)] * sq[i] / sq[j])
}

pub fn low_energy_expansion(pot: &SampledPotential, ladder: &[f64]) -> Result<LowEnergyExpansion> {
    let report = regularity_test(pot, DEFAULT_TAU_RELATIVE)?;
    low_energy_expansion_with(pot, &report, ladder)
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorScalingRow {
    pub lambda: f64,
    pub hs: f64,
    pub hs_scaled: f64,
    pub hs_derivative_scaled: Option<f64>,
    pub condition: f64,
}

/// Error diagnostics at one `λ`; the derivative is a central difference over one ladder step.
pub fn m_inverse_expansion_error(exp: &LowEnergyExpansion, sign: Sign, lambda: f64) -> Result<(CMatrix, ErrorScalingRow)> {
    let ratio = 10f64.powf(1.0 / LADDER_PER_DECADE as f64);
    let (e, condition) = exp.e_eval(sign, lambda)?;
    let (hi, _) = exp.e_eval(sign, lambda * ratio)?;
    let (lo, _) = exp.e_eval(sign, lambda / ratio)?;
    let grid = &exp.pot.grid;
    let deriv = (hi - lo) / c(lambda * (ratio - 1.0 / ratio));
    let hs = hs_norm_matrix(&e, grid, 0.0);
    let row = ErrorScalingRow {
        lambda,
        hs,
        hs_scaled: hs / lambda.sqrt(),
        hs_derivative_scaled: Some(lambda.sqrt() * hs_norm_matrix(&deriv, grid, 0.0)),
        condition,
    };
    Ok((e, row))
}

/// Diagnostics over a ladder, reusing neighbouring points for the central differences.
pub fn expansion_error_scan(exp: &LowEnergyExpansion, sign: Sign, ladder: &[f64]) -> Result<Vec<ErrorScalingRow>> {
    let grid = &exp.pot.grid;
    let evaluated: Vec<(CMatrix, f64)> =
        ladder.par_iter().map(|&l| exp.e_eval(sign, l)).collect::<Result<Vec<_>>>()?;
    Ok((0..ladder.len())
        .map(|k| {
            let lambda = ladder[k];
            let hs = hs_norm_matrix(&evaluated[k].0, grid, 0.0);
            let hs_derivative_scaled = (k > 0 && k + 1 < ladder.len()).then(|| {
                let d = (&evaluated[k + 1].0 - &evaluated[k - 1].0) / c(ladder[k + 1] - ladder[k - 1]);
                lambda.sqrt() * hs_norm_matrix(&d, grid, 0.0)
            });
            ErrorScalingRow { lambda, hs, hs_scaled: hs / lambda.sqrt(), hs_derivative_scaled, condition: evaluated[k].1 }
        })
        .collect())
}

/// `R_V±(λ²) = R₀ − R₀v M±(λ)⁻¹ vR₀` on the grid.
pub fn symmetric_resolvent(sign: Sign, lambda: f64, pot: &SampledPotential) -> Result<KernelOperator> {
    let grid = &pot.grid;
    let r0 = r0_matrix(sign, lambda, grid);
    let tag = format!("RV({lambda},{})", sign.tag());
    if pot.is_zero() {
        return Ok(KernelOperator::new(r0, tag, grid.clone()));
    }
    let m = m_operator(sign, lambda, pot);
    let (minv, cond) = invert_with_condition(&m.matrix, &format!("M{}({lambda})", sign.tag()))
        .map_err(|e| match e {
            Error::Singular { condition, .. } => Error::Singular {
                what: format!("M{}(λ = {lambda})", sign.tag()),
                condition,
            },
            other => other,
        })?;
    log::debug!("M{}({lambda}) condition {cond:.3e}", sign.tag());
    let n = pot.len();
    let v = &pot.v;
    let left = CMatrix::from_fn(n, n, |i, j| r0[(i, j)] * v[j]);
    let right = CMatrix::from_fn(n, n, |i, j| v[i] * r0[(i, j)]);
    let rv = &r0 - left * minv * right;
    Ok(KernelOperator::new(rv, tag, grid.clone()))
}

/// Norms of `vᵀW·QD₀Q` and `QD₀Q·v`; both vanish because `Qv = 0`.
pub fn v_annihilation_residual(exp: &LowEnergyExpansion) -> (f64, f64) {
    let pot = &exp.pot;
    let n = pot.len();
    let w = &pot.grid.weights;
    let row = nalgebra::RowDVector::from_iterator(n, (0..n).map(|i| pot.v[i] * w[i]));
    let left = (&row * &exp.qd0q).norm();
    let col = nalgebra::DVector::from_vec(pot.v.clone());
    let right = (&exp.qd0q * col).norm();
    (left, right)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub coupling: f64,
    pub sigma_min: f64,
    pub nearest_eigenvalue: f64,
    pub tau: f64,
    pub regular: bool,
    pub negative_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Crossing {
    /// Scan bracket in which the negative count changed.
    pub bracket: [f64; 2],
    /// Refined coupling where `sigma_min ≤ tau`.
    pub coupling: f64,
    pub sigma_min: f64,
    pub tau: f64,
    /// `sigma_min` decreases toward the crossing and increases after it on a sub-sampling of the bracket.
    pub monotone: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingScan {
    /// Scan samples with the refined crossing points merged in, ordered by coupling.
    pub rows: Vec<ScanRow>,
    pub crossings: Vec<Crossing>,
    /// Number of regular → not-regular transitions along `rows`.
    pub flips: usize,
}

fn scan_row(spec: &PotentialSpec, grid: &Arc<Grid>, coupling: f64, tau_relative: f64) -> Result<ScanRow> {
    let pot = build_potential(&spec.scaled(coupling), grid.clone())?;
    let r = regularity_test(&pot, tau_relative)?;
    Ok(ScanRow {
        coupling,
        sigma_min: r.sigma_min,
        nearest_eigenvalue: r.nearest_eigenvalue,
        tau: r.tau,
        regular: r.regular,
        negative_count: r.negative_count,
    })
}

/// Classify `c·V` along `couplings` and refine every bracket where the negative count changes
/// by bisection until `sigma_min ≤ tau`.
pub fn coupling_scan(spec: &PotentialSpec, grid: &Arc<Grid>, couplings: &[f64], tau_relative: f64) -> Result<CouplingScan> {
    if couplings.len() < 2 || couplings.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("scan.couplings", "need at least two increasing values"));
    }
    let samples: Vec<ScanRow> = couplings
        .par_iter()
        .map(|&c| scan_row(spec, grid, c, tau_relative))
        .collect::<Result<_>>()?;
    let mut rows = samples.clone();
    let mut crossings = Vec::new();
    for w in samples.windows(2) {
        if w[0].negative_count == w[1].negative_count {
            continue;
        }
        let (mut lo, mut hi) = (w[0].coupling, w[1].coupling);
        let mut best: Option<ScanRow> = None;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let row = scan_row(spec, grid, mid, tau_relative)?;
            let hit = !row.regular;
            if row.negative_count == w[0].negative_count {
                lo = mid;
            } else {
                hi = mid;
            }
            if best.as_ref().is_none_or(|b| row.sigma_min < b.sigma_min) {
                best = Some(row);
            }
            if hit {
                break;
            }
        }
        let best = best.expect("bisection evaluates at least once");
        if best.regular {
            log::warn!("crossing in [{}, {}] not resolved below tau", w[0].coupling, w[1].coupling);
        }
        let c = best.coupling;
        let sub = |a: f64, b: f64| -> Result<Vec<f64>> {
            (1..8).map(|k| scan_row(spec, grid, a + (b - a) * k as f64 / 8.0, tau_relative).map(|r| r.sigma_min)).collect()
        };
        let mut left = vec![w[0].sigma_min];
        left.extend(sub(w[0].coupling, c)?);
        left.push(best.sigma_min);
        let mut right = vec![best.sigma_min];
        right.extend(sub(c, w[1].coupling)?);
        right.push(w[1].sigma_min);
        let monotone = left.windows(2).all(|p| p[1] <= p[0]) && right.windows(2).all(|p| p[1] >= p[0]);
        crossings.push(Crossing {
            bracket: [w[0].coupling, w[1].coupling],
            coupling: c,
            sigma_min: best.sigma_min,
            tau: best.tau,
            monotone,
        });
        rows.push(best);
    }
    rows.sort_by(|a, b| a.coupling.total_cmp(&b.coupling));
    let flips = rows.windows(2).filter(|w| w[0].regular && !w[1].regular).count();
    Ok(CouplingScan { rows, crossings, flips })
}

/// `‖vE₀±(λ)v‖_HS = ‖M±(λ) − g±(λ)P − T‖_HS` with `g± = ‖V‖₁·(±i/4 − γ/2π − log(λ/2)/2π)`.
pub fn ve0v_hs(pot: &SampledPotential, sign: Sign, lambda: f64) -> Result<f64> {
    let proj = projections(pot)?;
    let m = m_operator(sign, lambda, pot).matrix;
    let g = resolvent_constant(sign, lambda) * pot.l1_norm;
    let t = t_matrix(pot);
    let rem = CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - g * proj.p[(i, j)] - t[(i, j)]);
    Ok(hs_norm_matrix(&rem, &pot.grid, 0.0))
}
