//! Bessel functions of order zero and one on the positive axis, the outgoing and
//! incoming Hankel functions, their amplitude splits, smooth cutoffs, and the 2D
//! free-resolvent kernels built from them.
//!
//! Evaluation uses three regimes: the ascending power series for `z <= 9`,
//! Miller backward recurrence with the Neumann series for `Y` on `(9, 25)`, and
//! the Hankel asymptotic expansion for `z >= 25`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `γ − log 2`, the constant in `Y₀(z) = (2/π)(log z + c)J₀(z) + r(z)`.
pub const LOG_CONSTANT: f64 = EULER_GAMMA - std::f64::consts::LN_2;

const SERIES_CROSSOVER: f64 = 9.0;
const ASYMPTOTIC_CROSSOVER: f64 = 25.0;
const MAX_SERIES_TERMS: usize = 80;

/// Choice of boundary value `±i0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        }
    }
}

/// `J₀, Y₀, J₁, Y₁` at a single positive argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselPair {
    pub j0: f64,
    pub y0: f64,
    pub j1: f64,
    pub y1: f64,
}

impl BesselPair {
    /// `Y₀′ = −Y₁`.
    pub fn y0_prime(&self) -> f64 {
        -self.y1
    }

    /// `J₀′ = −J₁`.
    pub fn j0_prime(&self) -> f64 {
        -self.j1
    }
}

/// `J₀(z)` for `z >= 0`.
pub fn bessel_j0(z: f64) -> Result<f64> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("J0 requires z >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    Ok(bessel_all(z).j0)
}

/// `(J₀(z), Y₀(z))` for `z > 0`.
pub fn bessel_j0_y0(z: f64) -> Result<(f64, f64)> {
    check_positive("Y0", z)?;
    let b = bessel_all(z);
    Ok((b.j0, b.y0))
}

/// All four of `J₀, Y₀, J₁, Y₁` at `z > 0`.
pub fn bessel_j01_y01(z: f64) -> Result<BesselPair> {
    check_positive("Y0", z)?;
    Ok(bessel_all(z))
}

fn check_positive(what: &str, z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("{what} requires z > 0, got {z}")));
    }
    Ok(())
}

/// Unchecked evaluation; `z` must be positive and finite.
pub(crate) fn bessel_all(z: f64) -> BesselPair {
    if z <= SERIES_CROSSOVER {
        series_regime(z)
    } else if z < ASYMPTOTIC_CROSSOVER {
        miller_regime(z)
    } else {
        asymptotic_regime(z)
    }
}

fn series_regime(z: f64) -> BesselPair {
    let half = 0.5 * z;
    let q = half * half;
    let log_term = half.ln() + EULER_GAMMA;

    // j0 terms: (-q)^k / (k!)^2 ; j1 terms: (z/2)(-q)^k / (k!(k+1)!)
    let mut t0 = 1.0;
    let mut t1 = half;
    let mut j0 = 1.0;
    let mut j1 = half;
    let mut s0 = 0.0; // sum_{k>=1} (-1)^{k+1} H_k q^k/(k!)^2
    let mut s1 = half; // sum_{k>=0} (-1)^k (H_k + H_{k+1}) (z/2)^{2k+1}/(k!(k+1)!)
    let mut harmonic = 0.0;
    for k in 1..MAX_SERIES_TERMS {
        let kf = k as f64;
        t0 *= -q / (kf * kf);
        t1 *= -q / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        j0 += t0;
        j1 += t1;
        s0 -= harmonic * t0;
        s1 += (2.0 * harmonic + 1.0 / (kf + 1.0)) * t1;
        if t0.abs() < 1e-18 * j0.abs().max(1e-3) && t1.abs() < 1e-18 && kf > q.sqrt() {
            break;
        }
    }
    let y0 = (2.0 / PI) * (log_term * j0 + s0);
    let y1 = -2.0 / (PI * z) + (2.0 / PI) * log_term * j1 - s1 / PI;
    BesselPair { j0, y0, j1, y1 }
}

/// Normalized `J_0 … J_nmax` at `x > 0` by Miller backward recurrence.
///
/// The normalization `J₀ + 2 Σ J₂ₖ = 1` fixes the scale.
pub fn bessel_jn_array(nmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0, "bessel_jn_array requires x > 0");
    let start = {
        let base = nmax.max(x.ceil() as usize) as f64;
        let n = base + 10.0 * x.cbrt() + 30.0;
        let n = n as usize;
        n + (n % 2)
    };
    let mut vals = vec![0.0; start + 2];
    let mut next = 0.0;
    let mut cur = 1e-30;
    vals[start] = cur;
    for k in (1..=start).rev() {
        let prev = (2.0 * k as f64 / x) * cur - next;
        next = cur;
        cur = prev;
        vals[k - 1] = cur;
        if cur.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            next *= 1e-250;
            cur *= 1e-250;
        }
    }
    let mut norm = vals[0];
    let mut k = 2;
    while k <= start {
        norm += 2.0 * vals[k];
        k += 2;
    }
    vals.truncate(nmax + 1);
    vals.iter_mut().for_each(|v| *v /= norm);
    vals
}

fn miller_regime(z: f64) -> BesselPair {
    let nmax = (z as usize) + 40;
    let j = bessel_jn_array(nmax + 1, z);
    let log_term = (0.5 * z).ln() + EULER_GAMMA;
    let mut neumann0 = 0.0; // sum (-1)^k J_{2k}/k
    let mut neumann1 = 0.0; // sum (-1)^k (J_{2k-1} - J_{2k+1})/k
    let mut k = 1;
    while 2 * k < nmax {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let kf = k as f64;
        neumann0 += sign * j[2 * k] / kf;
        neumann1 += sign * (j[2 * k - 1] - j[2 * k + 1]) / kf;
        k += 1;
    }
    let y0 = (2.0 / PI) * (log_term * j[0] - 2.0 * neumann0);
    let y1 = -(2.0 / PI) * (j[0] / z - log_term * j[1] - neumann1);
    BesselPair { j0: j[0], y0, j1: j[1], y1 }
}

/// Hankel asymptotic amplitudes `(P, Q)` for order `nu`.
fn hankel_pq(nu: f64, z: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let eight_z = 8.0 * z;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * eight_z);
        let mag = term.abs();
        if mag > last {
            break;
        }
        last = mag;
        let signed = match k % 4 {
            0 => term,
            1 => term,
            2 => -term,
            _ => -term,
        };
        if k % 2 == 0 {
            p += signed;
        } else {
            q += signed;
        }
        if mag < 1e-18 {
            break;
        }
    }
    (p, q)
}

fn asymptotic_regime(z: f64) -> BesselPair {
    let amp = (2.0 / (PI * z)).sqrt();
    let (s, c) = z.sin_cos();
    let (p0, q0) = hankel_pq(0.0, z);
    let (p1, q1) = hankel_pq(1.0, z);
    // chi0 = z - pi/4, chi1 = z - 3pi/4
    let (cos0, sin0) = ((c + s) * FRAC_1_SQRT_2, (s - c) * FRAC_1_SQRT_2);
    let (cos1, sin1) = ((s - c) * FRAC_1_SQRT_2, -(s + c) * FRAC_1_SQRT_2);
    BesselPair {
        j0: amp * (p0 * cos0 - q0 * sin0),
        y0: amp * (p0 * sin0 + q0 * cos0),
        j1: amp * (p1 * cos1 - q1 * sin1),
        y1: amp * (p1 * sin1 + q1 * cos1),
    }
}

/// `H₀±(z) = J₀(z) ± iY₀(z)`.
pub fn hankel_h0(sign: Sign, z: f64) -> Result<Complex64> {
    check_positive("H0", z)?;
    Ok(h0_unchecked(sign, z))
}

pub(crate) fn h0_unchecked(sign: Sign, z: f64) -> Complex64 {
    let b = bessel_all(z);
    Complex64::new(b.j0, sign.as_f64() * b.y0)
}

/// `ρ±(z) = e^{∓iz} H₀±(z)`.
pub fn hankel_rho(sign: Sign, z: f64) -> Result<Complex64> {
    let h = hankel_h0(sign, z)?;
    Ok(h * Complex64::from_polar(1.0, -sign.as_f64() * z))
}

/// `ω(y)`: `H₀⁺(y)` below the seam, `e^{-i(y-1)}H₀⁺(y)` for `y >= 1`.
pub fn hankel_omega(y: f64) -> Result<Complex64> {
    let h = hankel_h0(Sign::Plus, y)?;
    Ok(omega_from_h0(y, h))
}

fn omega_from_h0(y: f64, h: Complex64) -> Complex64 {
    if y >= 1.0 {
        h * Complex64::from_polar(1.0, -(y - 1.0))
    } else {
        h
    }
}

/// Amplitude decomposition of `H₀±` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HankelSplit {
    pub omega: Complex64,
    pub omega_plus: Complex64,
    pub omega_minus: Complex64,
    pub rho_plus: Complex64,
    pub rho_minus: Complex64,
    pub y0: f64,
}

pub const DEFAULT_SPLIT_SCALE: f64 = 8.0;

/// Evaluate `ω, ω₊ = χ₁(·/y₀)ω, ω₋ = ω − ω₊, ρ±` at `z`.
pub fn hankel_split(z: f64, y0: f64) -> Result<HankelSplit> {
    check_positive("hankel_split", z)?;
    if !(y0 >= 4.0) {
        return Err(Error::Domain(format!("split scale y0 must be >= 4, got {y0}")));
    }
    let h = h0_unchecked(Sign::Plus, z);
    let omega = omega_from_h0(z, h);
    let (cut, _) = smooth_cutoff(CutoffFamily::Chi1, z / y0);
    let omega_plus = omega * cut;
    let omega_minus = omega - omega_plus;
    let rho_plus = h * Complex64::from_polar(1.0, -z);
    Ok(HankelSplit {
        omega,
        omega_plus,
        omega_minus,
        rho_plus,
        rho_minus: rho_plus.conj(),
        y0,
    })
}

/// Smooth cutoff families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CutoffFamily {
    /// Low-pass at scale `lambda1`: 1 on `[0, λ₁]`, 0 on `[2λ₁, ∞)`.
    Chi { lambda1: f64 },
    /// High-pass: 0 on `y <= 1`, 1 on `y >= 2`.
    Chi1,
    /// Low-pass: 1 on `y <= 1`, 0 on `y >= 2`.
    Chi2,
}

/// Value and derivative of a cutoff at `y`.
pub fn smooth_cutoff(family: CutoffFamily, y: f64) -> (f64, f64) {
    match family {
        CutoffFamily::Chi1 => smoothstep(y - 1.0),
        CutoffFamily::Chi2 => {
            let (s, ds) = smoothstep(y - 1.0);
            (1.0 - s, -ds)
        }
        CutoffFamily::Chi { lambda1 } => {
            let (s, ds) = smoothstep(y / lambda1 - 1.0);
            (1.0 - s, -ds / lambda1)
        }
    }
}

fn bump(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let s = 2.0 * u - 1.0;
    (1.0 - 1.0 / (1.0 - s * s)).exp()
}

fn bump_integral(a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_24();
    let panels = 3;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        for (x, w) in nodes.iter().zip(weights) {
            total += w * bump(mid + 0.5 * width * x);
        }
    }
    total * 0.5 * width
}

fn bump_total() -> f64 {
    static TOTAL: OnceLock<f64> = OnceLock::new();
    *TOTAL.get_or_init(|| 2.0 * bump_integral(0.0, 0.5))
}

/// Integrated-bump smoothstep on `[0, 1]`: 0 below, 1 above, C^∞.
fn smoothstep(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let total = bump_total();
    let deriv = bump(u) / total;
    let value = if u <= 0.5 {
        bump_integral(0.0, u) / total
    } else {
        1.0 - bump_integral(u, 1.0) / total
    };
    (value, deriv)
}

fn gauss_legendre_24() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(24))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * pn - p0) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `R₀±(λ²)(r) = ±(i/4) H₀±(λr)`.
pub fn free_resolvent_kernel(sign: Sign, lambda: f64, r: f64) -> Result<Complex64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("free resolvent needs lambda > 0, got {lambda}")));
    }
    if !(r > 0.0) {
        return Err(Error::Singularity(format!(
            "free resolvent kernel is singular at r = {r}; regularize the diagonal"
        )));
    }
    Ok(free_resolvent_unchecked(sign, lambda * r))
}

/// `±(i/4)H₀±(z)` with `z = λr > 0`.
pub(crate) fn free_resolvent_unchecked(sign: Sign, z: f64) -> Complex64 {
    let b = bessel_all(z);
    // (i/4)(J0 + iY0) = -Y0/4 + iJ0/4 ; the minus branch is its conjugate
    Complex64::new(-0.25 * b.y0, sign.as_f64() * 0.25 * b.j0)
}

/// The λ-dependent constant `±i/4 − γ/2π − log(λ/2)/2π` of the low-energy expansion.
pub fn resolvent_constant(sign: Sign, lambda: f64) -> Complex64 {
    Complex64::new(
        -(EULER_GAMMA + (0.5 * lambda).ln()) / (2.0 * PI),
        sign.as_f64() * 0.25,
    )
}

/// `E₀±(λ)(r) = R₀±(λ²)(r) − [±i/4 − γ/2π − log(λ/2)/2π] + log(r)/2π`.
pub fn e0_error_kernel(sign: Sign, lambda: f64, r: f64) -> Result<Complex64> {
    if !(lambda > 0.0) || !(r > 0.0) {
        return Err(Error::Domain(format!(
            "E0 kernel needs lambda > 0 and r > 0, got ({lambda}, {r})"
        )));
    }
    Ok(e0_unchecked(sign, lambda, r))
}

pub(crate) fn e0_unchecked(sign: Sign, lambda: f64, r: f64) -> Complex64 {
    let z = lambda * r;
    let plus = if z <= 2.0 {
        let half = 0.5 * z;
        let q = half * half;
        let mut term = 1.0;
        let mut j0_minus_one = 0.0;
        let mut s = 0.0;
        let mut harmonic = 0.0;
        for k in 1..MAX_SERIES_TERMS {
            let kf = k as f64;
            term *= -q / (kf * kf);
            harmonic += 1.0 / kf;
            j0_minus_one += term;
            s -= harmonic * term;
            if term.abs() < 1e-20 {
                break;
            }
        }
        let log_term = half.ln() + EULER_GAMMA;
        let y0_reduced = (2.0 / PI) * (log_term * j0_minus_one + s);
        Complex64::new(-0.25 * y0_reduced, 0.25 * j0_minus_one)
    } else {
        free_resolvent_unchecked(Sign::Plus, z) - resolvent_constant(Sign::Plus, lambda)
            + Complex64::new(r.ln() / (2.0 * PI), 0.0)
    };
    match sign {
        Sign::Plus => plus,
        Sign::Minus => plus.conj(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from a 50-digit arbitrary-precision evaluation.
    const REFERENCE: &[(f64, f64, f64, f64, f64)] = &[
        // z, J0, Y0, J1, Y1
        (1e-3, 0.99999975000001562, -4.4714166113759233, 0.0004999999375000026, -636.62216723113943),
        (0.5, 0.9384698072408129, -0.44451873350670656, 0.24226845767487389, -1.4714723926702431),
        (2.404825557695773, -1.2011950073676861e-16, 0.50992438344847905, 0.51914749728946674, 0.10274668243825965),
        (5.0, -0.1775967713143383, -0.30851762524903378, -0.32757913759146522, 0.14786314339122684),
        (8.9, -0.065253246851244306, 0.25915576172171059, 0.25590237144397589, 0.079869397394136833),
        (9.5, -0.19392874768742236, 0.17121062620272384, 0.16126443075752985, 0.20317989938720767),
        (12.5, 0.1468840547004211, -0.17121430684466929, -0.16548380461475972, -0.15383825653750118),
        (24.0, -0.056230274166859267, -0.15283402879758778, -0.15403806518312122, 0.053059776121202169),
        (30.0, -0.086367983581040211, -0.11729573168666403, -0.11875106261662294, 0.084425570661747235),
        (1000.0, 0.024786686152420175, 0.0047159179776228134, 0.0047283119070895239, -0.024784331292351779),
        (9999.5, -0.004478727403128425, 0.0066034961394446184, 0.0066032722001328391, 0.0044790576000431066),
    ];

    #[test]
    fn matches_reference_values() {
        for &(z, j0, y0, j1, y1) in REFERENCE {
            let b = bessel_j01_y01(z).unwrap();
            let scale0 = (j0 * j0 + y0 * y0).sqrt();
            let scale1 = (j1 * j1 + y1 * y1).sqrt();
            assert!((b.j0 - j0).abs() <= 1e-12 * scale0, "J0({z}) = {} vs {}", b.j0, j0);
            assert!((b.y0 - y0).abs() <= 1e-12 * scale0, "Y0({z}) = {} vs {}", b.y0, y0);
            assert!((b.j1 - j1).abs() <= 1e-12 * scale1, "J1({z}) = {} vs {}", b.j1, j1);
            assert!((b.y1 - y1).abs() <= 1e-12 * scale1, "Y1({z}) = {} vs {}", b.y1, y1);
        }
    }

    #[test]
    fn j0_at_zero_and_first_root() {
        assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
        assert!(bessel_j0(2.404825557695773).unwrap().abs() < 1e-10);
        assert!(bessel_j0(-1.0).is_err());
    }

    #[test]
    fn y0_small_argument_leading_behavior() {
        let (_, y0) = bessel_j0_y0(1e-3).unwrap();
        let lead = (2.0 / PI) * ((5e-4f64).ln() + EULER_GAMMA);
        assert!((y0 - lead).abs() < 1e-5);
        assert!(bessel_j0_y0(0.0).is_err());
        assert!(bessel_j0_y0(-2.0).is_err());
    }

    #[test]
    fn regimes_agree_at_crossovers() {
        for &z in &[SERIES_CROSSOVER, ASYMPTOTIC_CROSSOVER] {
            let lo = series_or_miller(z, false);
            let hi = series_or_miller(z, true);
            assert!((lo.j0 - hi.j0).abs() < 2e-13, "{z}: {lo:?} {hi:?}");
            assert!((lo.y0 - hi.y0).abs() < 2e-13);
            assert!((lo.j1 - hi.j1).abs() < 2e-13);
            assert!((lo.y1 - hi.y1).abs() < 2e-13);
        }
    }

    fn series_or_miller(z: f64, upper: bool) -> BesselPair {
        if z == SERIES_CROSSOVER {
            if upper { miller_regime(z) } else { series_regime(z) }
        } else if upper {
            asymptotic_regime(z)
        } else {
            miller_regime(z)
        }
    }

    #[test]
    fn wronskian_holds_across_regimes() {
        let mut z: f64 = 1e-3;
        while z <= 1e3 {
            let b = bessel_j01_y01(z).unwrap();
            let w = b.j0 * b.y0_prime() - b.j0_prime() * b.y0;
            let expected = 2.0 / (PI * z);
            assert!((w - expected).abs() <= 1e-10 * expected.max(1.0), "z = {z}: {w} vs {expected}");
            z *= 1.07;
        }
    }

    #[test]
    fn hankel_conjugation_and_small_argument() {
        for &z in &[0.01, 0.7, 3.0, 17.0, 250.0] {
            let p = hankel_h0(Sign::Plus, z).unwrap();
            let m = hankel_h0(Sign::Minus, z).unwrap();
            assert_eq!(m, p.conj());
            let rp = hankel_rho(Sign::Plus, z).unwrap();
            let rm = hankel_rho(Sign::Minus, z).unwrap();
            assert_eq!(rm, rp.conj());
        }
        let h = hankel_h0(Sign::Plus, 0.01).unwrap();
        assert!((h.norm() - 3.168).abs() < 1e-3, "{}", h.norm());
        assert!(hankel_h0(Sign::Plus, 0.0).is_err());
    }

    #[test]
    fn hankel_small_argument_remainder_is_second_order() {
        let remainder = |z: f64| {
            let h = hankel_h0(Sign::Plus, z).unwrap();
            let lead = Complex64::new(1.0, (2.0 / PI) * (EULER_GAMMA + (0.5 * z).ln()));
            (h - lead).norm()
        };
        let (z1, z2) = (1e-4, 1e-2);
        let slope = (remainder(z2) / remainder(z1)).ln() / (z2 / z1).ln();
        // z² log z itself has local slope 2 + 1/log z ≈ 1.85 on this window
        let model = |z: f64| z * z * z.ln().abs();
        let model_slope = (model(z2) / model(z1)).ln() / (z2 / z1).ln();
        assert!((1.8..=2.0).contains(&slope) && slope >= model_slope, "slope {slope} vs {model_slope}");
        let ratio = |z: f64| remainder(z) / model(z);
        assert!((ratio(z1) / ratio(z2) - 1.0).abs() < 0.2);
    }

    #[test]
    fn rho_decay_envelopes() {
        let mut c0: f64 = 0.0;
        let mut c1: f64 = 0.0;
        let mut z: f64 = 1e-3;
        while z <= 1e4 {
            let r = hankel_rho(Sign::Plus, z).unwrap();
            let h = 1e-6 * z.max(1e-2);
            let dr = (hankel_rho(Sign::Plus, z + h).unwrap() - hankel_rho(Sign::Plus, z - h).unwrap()) / (2.0 * h);
            c0 = c0.max(r.norm() * (1.0 + z).sqrt());
            if z >= 0.5 {
                c1 = c1.max(dr.norm() * (1.0 + z).powf(1.5));
            }
            z *= 1.1;
        }
        assert!(c0 < 10.0, "{c0}");
        assert!(c1 < 10.0, "{c1}");
    }

    #[test]
    fn y0_derivative_minus_log_pole_is_bounded() {
        let mut worst: f64 = 0.0;
        let mut z = 1e-6;
        while z <= 1.0 {
            let b = bessel_j01_y01(z).unwrap();
            worst = worst.max((b.y0_prime() - 2.0 / (PI * z)).abs());
            z *= 1.3;
        }
        assert!(worst < 1.0, "{worst}");
    }

    #[test]
    fn split_reconstructs_hankel() {
        for &z in &[0.01, 0.5, 1.0, 1.5, 7.9, 9.0, 12.0, 16.5, 100.0, 2000.0] {
            let s = hankel_split(z, DEFAULT_SPLIT_SCALE).unwrap();
            let h = hankel_h0(Sign::Plus, z).unwrap();
            let rebuilt = if z >= 1.0 { Complex64::from_polar(1.0, z - 1.0) * s.omega } else { s.omega };
            assert!((rebuilt - h).norm() <= 1e-12 * h.norm());
            assert_eq!(s.omega_plus + s.omega_minus, s.omega);
            if z <= DEFAULT_SPLIT_SCALE {
                assert_eq!(s.omega_plus, Complex64::new(0.0, 0.0));
            }
        }
        let far = hankel_split(100.0, DEFAULT_SPLIT_SCALE).unwrap();
        let expected = (2.0 / (100.0 * PI)).sqrt();
        assert!((far.omega.norm() - expected).abs() < 0.02 * expected);
        assert!(hankel_split(1.0, 2.0).is_err());
    }

    #[test]
    fn omega_envelopes_and_derivative_decay() {
        let mut c_far: f64 = 0.0;
        let mut c_near: f64 = 0.0;
        let mut c_der: f64 = 0.0;
        let mut y: f64 = 1e-4;
        while y < 1e4 {
            let w = hankel_omega(y).unwrap();
            if y < 0.5 {
                c_near = c_near.max(w.norm() / y.ln().abs());
            } else if y >= 1.0 {
                c_far = c_far.max(w.norm() * y.sqrt());
            }
            if y > 1.5 {
                let h = 1e-5 * y;
                let dw = (hankel_omega(y + h).unwrap() - hankel_omega(y - h).unwrap()) / (2.0 * h);
                c_der = c_der.max(dw.norm() * y.powf(1.5));
            }
            y *= 1.05;
        }
        assert!(c_near < 3.0 && c_far < 3.0 && c_der < 3.0, "{c_near} {c_far} {c_der}");
    }

    #[test]
    fn cutoff_regions_and_derivative() {
        assert_eq!(smooth_cutoff(CutoffFamily::Chi2, 0.5), (1.0, 0.0));
        assert_eq!(smooth_cutoff(CutoffFamily::Chi1, 3.0), (1.0, 0.0));
        assert_eq!(smooth_cutoff(CutoffFamily::Chi { lambda1: 0.1 }, 0.25).0, 0.0);
        assert_eq!(smooth_cutoff(CutoffFamily::Chi { lambda1: 0.1 }, 0.1).0, 1.0);
        for fam in [CutoffFamily::Chi1, CutoffFamily::Chi2, CutoffFamily::Chi { lambda1: 0.7 }] {
            let mut y = -0.5;
            while y < 3.0 {
                let (v, d) = smooth_cutoff(fam, y);
                assert!((0.0..=1.0).contains(&v));
                let h = 1e-6;
                let fd = (smooth_cutoff(fam, y + h).0 - smooth_cutoff(fam, y - h).0) / (2.0 * h);
                assert!((fd - d).abs() < 1e-7, "{fam:?} at {y}: {fd} vs {d}");
                let chi1 = smooth_cutoff(CutoffFamily::Chi1, y).0;
                assert_eq!(chi1 + (1.0 - chi1), 1.0);
                y += 0.013;
            }
        }
        // mid-point symmetry of the step
        let (mid, _) = smooth_cutoff(CutoffFamily::Chi1, 1.5);
        assert!((mid - 0.5).abs() < 1e-14);
    }

    #[test]
    fn resolvent_difference_is_bessel_j0() {
        for &(lam, r) in &[(0.3, 2.0), (1.0, 0.01), (5.0, 7.0), (0.01, 40.0)] {
            let p = free_resolvent_kernel(Sign::Plus, lam, r).unwrap();
            let m = free_resolvent_kernel(Sign::Minus, lam, r).unwrap();
            let j0 = bessel_j0(lam * r).unwrap();
            assert!((p - m - Complex64::new(0.0, 0.5 * j0)).norm() < 1e-15);
            assert_eq!(m, p.conj());
        }
        assert!(free_resolvent_kernel(Sign::Plus, 1.0, 0.0).is_err());
    }

    #[test]
    fn resolvent_real_part_log_slope() {
        // Re R0+ = -(1/2π) log(λr) + O(1): slope against log(λr) is -1/2π
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let z = 1e-6 * 10f64.powf(3.0 * k as f64 / 19.0);
                (z.ln(), free_resolvent_kernel(Sign::Plus, z, 1.0).unwrap().re)
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope + 1.0 / (2.0 * PI)).abs() < 1e-6, "{slope}");
    }

    #[test]
    fn e0_vanishes_and_scales() {
        for &r in &[0.1, 1.0, 10.0] {
            let small = e0_error_kernel(Sign::Plus, 1e-8, r).unwrap();
            assert!(small.norm() < 1e-12);
        }
        let mut worst: f64 = 0.0;
        for i in 0..=40 {
            let lam = 1e-6 * 10f64.powf(4.0 * i as f64 / 40.0);
            for j in 0..=20 {
                let r = 0.1 * 10f64.powf(2.0 * j as f64 / 20.0);
                let e = e0_error_kernel(Sign::Plus, lam, r).unwrap();
                worst = worst.max(e.norm() / (lam.sqrt() * r.sqrt()));
                let em = e0_error_kernel(Sign::Minus, lam, r).unwrap();
                assert_eq!(em, e.conj());
            }
        }
        assert!(worst < 1.0, "{worst}");
    }

    #[test]
    fn e0_series_matches_direct_subtraction_at_moderate_argument() {
        for &(lam, r) in &[(0.5, 1.0), (1.0, 1.9), (0.2, 9.0)] {
            let series = e0_unchecked(Sign::Plus, lam, r);
            let direct = free_resolvent_unchecked(Sign::Plus, lam * r) - resolvent_constant(Sign::Plus, lam)
                + Complex64::new(r.ln() / (2.0 * PI), 0.0);
            assert!((series - direct).norm() < 1e-14, "{series} {direct}");
        }
    }

    #[test]
    fn jn_array_matches_low_orders() {
        for &x in &[0.5, 3.0, 20.0, 150.0] {
            let arr = bessel_jn_array(5, x);
            let b = bessel_all(x);
            assert!((arr[0] - b.j0).abs() < 1e-13);
            assert!((arr[1] - b.j1).abs() < 1e-13);
            // three-term recurrence
            for n in 1..5 {
                let lhs = arr[n - 1] + arr[n + 1];
                let rhs = 2.0 * n as f64 / x * arr[n];
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}
