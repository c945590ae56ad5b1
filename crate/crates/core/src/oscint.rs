//! Oscillatory integrals `∫ λ e^{i(tλ² + σλ)} a(λ) dλ` and the stationary-phase checks built on them.
//!
//! After `μ = λ²` the phase `tμ` is linear, so each panel is integrated exactly in the
//! oscillation against a quadratic interpolant of the amplitude (Filon). A phase `σ√μ`
//! is linearized about each panel centre and the residual folded into the amplitude.

use std::collections::BinaryHeap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::specfun::{gauss_legendre, hankel_omega, smooth_cutoff, CutoffFamily, Sign, DEFAULT_SPLIT_SCALE};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FilonOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
    pub initial_panels: usize,
    /// Lower end of the geometric panels used when the range starts at zero.
    pub lambda_floor: f64,
}

impl Default for FilonOptions {
    fn default() -> Self {
        FilonOptions { rel_tol: 1e-6, abs_tol: 1e-14, max_panels: 20_000, initial_panels: 16, lambda_floor: 1e-10 }
    }
}

/// `∫_{-1}^{1} s^k e^{iθs} ds` for `k = 0, 1, 2`.
pub fn filon_moments(theta: f64) -> [Complex64; 3] {
    if theta.abs() < 1.0 {
        let mut m = [Complex64::new(0.0, 0.0); 3];
        let mut term = Complex64::new(1.0, 0.0);
        for n in 0..40 {
            for (k, mk) in m.iter_mut().enumerate() {
                if (n + k) % 2 == 0 {
                    *mk += term * (2.0 / (n + k + 1) as f64);
                }
            }
            term *= I * theta / (n + 1) as f64;
        }
        return m;
    }
    let (s, c) = theta.sin_cos();
    let t2 = theta * theta;
    [
        Complex64::new(2.0 * s / theta, 0.0),
        Complex64::new(0.0, 2.0 * (s / t2 - c / theta)),
        Complex64::new(2.0 * (s / theta + 2.0 * c / t2 - 2.0 * s / (t2 * theta)), 0.0),
    ]
}

/// Filon rule for `∫_a^b e^{i(tμ + σ√μ)} F(μ) dμ` from `F` at `a`, `(a+b)/2`, `b`.
fn filon_panel(a: f64, b: f64, fa: Complex64, fm: Complex64, fb: Complex64, t: f64, shift: f64) -> Complex64 {
    let h = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    let (rate, psi_m, resid) = if shift == 0.0 {
        (t, 0.0, [0.0; 3])
    } else {
        let sm = m.sqrt();
        let slope = shift / (2.0 * sm);
        let r = |mu: f64| shift * mu.sqrt() - shift * sm - slope * (mu - m);
        (t + slope, shift * sm, [r(a), 0.0, r(b)])
    };
    let ga = fa * Complex64::from_polar(1.0, resid[0]);
    let gm = fm;
    let gb = fb * Complex64::from_polar(1.0, resid[2]);
    let c0 = gm;
    let c1 = (gb - ga) * 0.5;
    let c2 = (ga - gm * 2.0 + gb) * 0.5;
    let [i0, i1, i2] = filon_moments(rate * h);
    Complex64::from_polar(h, t * m + psi_m) * (c0 * i0 + c1 * i1 + c2 * i2)
}

struct Panel {
    a: f64,
    b: f64,
    /// Amplitude at `a`, `a + w/4`, `m`, `m + w/4`, `b`; one vector of components per point.
    f: [Vec<Complex64>; 5],
    /// Fine estimate per `(t, component)`.
    value: Vec<Complex64>,
    /// Coarse-minus-fine per `(t, component)`.
    error: Vec<f64>,
    priority: f64,
}

struct Ranked(f64, usize);

impl PartialEq for Ranked {
    fn eq(&self, o: &Self) -> bool {
        self.0 == o.0 && self.1 == o.1
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ranked {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

/// Result of a multi-time, multi-component quadrature: `values[t][component]`.
#[derive(Clone, Debug)]
pub struct QuadratureOutcome {
    pub values: Vec<Vec<Complex64>>,
    pub error_estimate: Vec<Vec<f64>>,
    pub panels: usize,
    pub evaluations: usize,
}

/// Adaptive Filon quadrature of `∫_{λa}^{λb} λ e^{i(tλ² + shift·λ)} a(λ) dλ` for every `t` in `ts`,
/// where `a` returns one value per component. Panels are refined globally until the
/// summed halving error of every `(t, component)` is below `max(abs_tol, rel_tol·∫λ|a|dλ)`.
pub fn oscillatory_quadrature_many<A>(
    amplitude: A,
    lambda_a: f64,
    lambda_b: f64,
    ts: &[f64],
    shift: f64,
    opts: &FilonOptions,
) -> Result<QuadratureOutcome>
where
    A: Fn(f64) -> Result<Vec<Complex64>>,
{
    if !(lambda_b > lambda_a && lambda_a >= 0.0) {
        return Err(Error::Domain(format!("invalid λ range [{lambda_a}, {lambda_b}]")));
    }
    // In μ the measure λ dλ becomes dμ/2.
    let f = |mu: f64| -> Result<Vec<Complex64>> {
        Ok(amplitude(mu.sqrt())?.into_iter().map(|z| z * 0.5).collect())
    };
    let mu_b = lambda_b * lambda_b;
    let mut edges = Vec::new();
    if lambda_a == 0.0 {
        let mu_g = mu_b / opts.initial_panels as f64;
        let mut mu = (opts.lambda_floor * opts.lambda_floor).min(mu_g * 0.25);
        while mu < mu_g {
            edges.push(mu);
            mu *= 4.0;
        }
        for k in 1..=opts.initial_panels {
            edges.push(mu_g * k as f64);
        }
        *edges.last_mut().unwrap() = mu_b;
    } else {
        let mu_a = lambda_a * lambda_a;
        for k in 0..=opts.initial_panels {
            edges.push(mu_a + (mu_b - mu_a) * k as f64 / opts.initial_panels as f64);
        }
        *edges.last_mut().unwrap() = mu_b;
    }

    let mut evaluations = 0usize;
    let mut eval = |mu: f64| -> Result<Vec<Complex64>> {
        evaluations += 1;
        f(mu)
    };
    let nt = ts.len();
    let mut edge_vals = Vec::with_capacity(edges.len());
    for &e in &edges {
        edge_vals.push(eval(e)?);
    }
    let ncomp = edge_vals[0].len();

    let estimate = |a: f64, b: f64, fs: &[Vec<Complex64>; 5]| -> (Vec<Complex64>, Vec<f64>) {
        let m = 0.5 * (a + b);
        let mut value = Vec::with_capacity(nt * ncomp);
        let mut error = Vec::with_capacity(nt * ncomp);
        for &t in ts {
            for c in 0..ncomp {
                let coarse = filon_panel(a, b, fs[0][c], fs[2][c], fs[4][c], t, shift);
                let fine = filon_panel(a, m, fs[0][c], fs[1][c], fs[2][c], t, shift)
                    + filon_panel(m, b, fs[2][c], fs[3][c], fs[4][c], t, shift);
                value.push(fine);
                error.push((fine - coarse).norm());
            }
        }
        (value, error)
    };

    let mut panels: Vec<Panel> = Vec::new();
    for k in 0..edges.len() - 1 {
        let (a, b) = (edges[k], edges[k + 1]);
        let w = b - a;
        let fs = [
            edge_vals[k].clone(),
            eval(a + 0.25 * w)?,
            eval(a + 0.5 * w)?,
            eval(a + 0.75 * w)?,
            edge_vals[k + 1].clone(),
        ];
        let (value, error) = estimate(a, b, &fs);
        panels.push(Panel { a, b, f: fs, value, error, priority: 0.0 });
    }

    // Scale per component: ∫|F| dμ by Simpson on the fine points.
    let scale_of = |panels: &[Panel]| -> Vec<f64> {
        let mut s = vec![0.0; ncomp];
        for p in panels {
            let q = (p.b - p.a) / 12.0;
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += q * (p.f[0][c].norm() + 4.0 * p.f[1][c].norm() + 2.0 * p.f[2][c].norm()
                    + 4.0 * p.f[3][c].norm() + p.f[4][c].norm());
            }
        }
        s
    };

    loop {
        let scale = scale_of(&panels);
        let tol: Vec<f64> = (0..nt * ncomp).map(|k| opts.abs_tol.max(opts.rel_tol * scale[k % ncomp])).collect();
        let mut total_err = vec![0.0; nt * ncomp];
        for p in panels.iter_mut() {
            let mut pr = 0.0f64;
            for k in 0..nt * ncomp {
                total_err[k] += p.error[k];
                pr = pr.max(p.error[k] / tol[k]);
            }
            p.priority = pr;
        }
        let converged = total_err.iter().zip(&tol).all(|(e, t)| e <= t);
        if converged {
            break;
        }
        if panels.len() >= opts.max_panels {
            let worst = panels.iter().max_by(|x, y| x.priority.total_cmp(&y.priority)).unwrap();
            return Err(Error::Nonconvergence(format!(
                "filon quadrature exhausted {} panels; worst panel λ ∈ [{:.4e}, {:.4e}]",
                panels.len(),
                worst.a.sqrt(),
                worst.b.sqrt()
            )));
        }
        // Split the worst tenth of the panels in one sweep.
        let mut heap: BinaryHeap<Ranked> = panels.iter().enumerate().map(|(i, p)| Ranked(p.priority, i)).collect();
        let count = (panels.len() / 10).max(1);
        let mut chosen = Vec::with_capacity(count);
        while chosen.len() < count {
            match heap.pop() {
                Some(Ranked(pr, i)) if pr > 0.0 => chosen.push(i),
                _ => break,
            }
        }
        if chosen.is_empty() {
            break;
        }
        chosen.sort_unstable_by(|a, b| b.cmp(a));
        for i in chosen {
            let p = panels.swap_remove(i);
            let m = 0.5 * (p.a + p.b);
            let q = 0.25 * (p.b - p.a);
            let [f0, f1, f2, f3, f4] = p.f;
            let left = [f0, eval(p.a + 0.5 * q)?, f1, eval(p.a + 1.5 * q)?, f2.clone()];
            let right = [f2, eval(m + 0.5 * q)?, f3, eval(m + 1.5 * q)?, f4];
            for (a, b, fs) in [(p.a, m, left), (m, p.b, right)] {
                let (value, error) = estimate(a, b, &fs);
                panels.push(Panel { a, b, f: fs, value, error, priority: 0.0 });
            }
        }
    }

    // Sum in order of position so the result does not depend on refinement history.
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut values = vec![vec![Complex64::new(0.0, 0.0); ncomp]; nt];
    let mut error_estimate = vec![vec![0.0; ncomp]; nt];
    for p in &panels {
        for ti in 0..nt {
            for c in 0..ncomp {
                values[ti][c] += p.value[ti * ncomp + c];
                error_estimate[ti][c] += p.error[ti * ncomp + c];
            }
        }
    }
    Ok(QuadratureOutcome { values, error_estimate, panels: panels.len(), evaluations })
}

/// `∫₀^Λ λ e^{itλ²} a(λ) dλ`.
pub fn oscillatory_quadrature<A>(amplitude: A, lambda_max: f64, t: f64, opts: &FilonOptions) -> Result<Complex64>
where
    A: Fn(f64) -> Complex64,
{
    let out = oscillatory_quadrature_many(|l| Ok(vec![amplitude(l)]), 0.0, lambda_max, &[t], 0.0, opts)?;
    Ok(out.values[0][0])
}

/// A real amplitude tabulated with derivatives and interpolated by cubic Hermite splines.
#[derive(Clone, Debug)]
pub struct TabulatedAmplitude {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub da: Vec<f64>,
}

impl TabulatedAmplitude {
    pub fn sample(f: impl Fn(f64) -> (f64, f64), lo: f64, hi: f64, n: usize) -> Self {
        let x: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        let (a, da) = x.iter().map(|&x| f(x)).unzip();
        TabulatedAmplitude { x, a, da }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Value and derivative of the interpolant.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return (0.0, 0.0);
        }
        let k = self.x.partition_point(|&p| p <= x).clamp(1, self.x.len() - 1) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (x - self.x[k]) / h;
        let (y0, y1, d0, d1) = (self.a[k], self.a[k + 1], self.da[k] * h, self.da[k + 1] * h);
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        let v = h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1;
        let dv = ((6.0 * s * s - 6.0 * s) * y0 + (3.0 * s * s - 4.0 * s + 1.0) * d0
            + (-6.0 * s * s + 6.0 * s) * y1 + (3.0 * s * s - 2.0 * s) * d1)
            / h;
        (v, dv)
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0) && self.da.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StationaryPhaseCheck {
    pub t: f64,
    pub delta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Both sides of the stationary phase bound for phase `φ` (returning `(φ, φ′, φ″)`).
pub fn lemma2_check<P>(a: &TabulatedAmplitude, phase: P, t: f64) -> Result<StationaryPhaseCheck>
where
    P: Fn(f64) -> (f64, f64, f64),
{
    if t == 0.0 {
        return Err(Error::Domain("t must be nonzero".into()));
    }
    let delta = t.abs().powf(-0.5);
    let (lo, hi) = a.support();
    let mut dphi_max = 0.0f64;
    for k in 0..=2000 {
        let x = lo + (hi - lo) * k as f64 / 2000.0;
        let (_, d1, d2) = phase(x);
        if d2 < 1.0 {
            return Err(Error::Precondition(format!("phase curvature {d2:.4} < 1 at x = {x:.4}")));
        }
        dphi_max = dphi_max.max(d1.abs());
    }
    let (p0, d0, _) = phase(0.0);
    if p0.abs() > 1e-12 || d0.abs() > 1e-12 {
        return Err(Error::Precondition("phase must satisfy φ(0) = φ′(0) = 0".into()));
    }
    if a.is_zero() {
        return Ok(StationaryPhaseCheck { t, delta, lhs: 0.0, rhs: 0.0, ratio: 0.0 });
    }

    let (gx, gw) = gauss_legendre(16);
    // Breakpoints: table nodes, ±δ, 0; sub-panels short enough that tφ′ turns by at most two radians.
    let mut breaks: Vec<f64> = a.x.clone();
    breaks.extend([-delta, 0.0, delta].iter().filter(|&&b| b > lo && b < hi));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let h_max = 2.0 / (t.abs() * dphi_max).max(1.0);
    let mut lhs = Complex64::new(0.0, 0.0);
    let mut rhs = 0.0;
    for w in breaks.windows(2) {
        let n_sub = ((w[1] - w[0]) / h_max).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n_sub as f64;
        for s in 0..n_sub {
            let left = w[0] + s as f64 * h;
            for (xi, wi) in gx.iter().zip(&gw) {
                let x = left + 0.5 * h * (xi + 1.0);
                let wt = 0.5 * h * wi;
                let (av, dv) = a.eval(x);
                let (ph, _, _) = phase(x);
                lhs += Complex64::from_polar(av * wt, t * ph);
                let mut r = av.abs() / (delta * delta + x * x);
                if x.abs() > delta {
                    r += dv.abs() / x.abs();
                }
                rhs += r * wt;
            }
        }
    }
    let lhs = lhs.norm();
    let rhs = delta * delta * rhs;
    Ok(StationaryPhaseCheck { t, delta, lhs, rhs, ratio: lhs / rhs })
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct BornPhaseInstance {
    /// `J` as zero-based indices into `d`; the complement is `J*`.
    pub j: Vec<usize>,
    pub d: Vec<f64>,
}

impl BornPhaseInstance {
    pub fn new(j: Vec<usize>, d: Vec<f64>) -> Result<Self> {
        if d.is_empty() || d.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Precondition("chain distances must be positive".into()));
        }
        if j.iter().any(|&k| k >= d.len()) {
            return Err(Error::Precondition("J indexes past the chain".into()));
        }
        let mut j = j;
        j.sort_unstable();
        j.dedup();
        Ok(BornPhaseInstance { j, d })
    }

    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn j_star(&self) -> Vec<usize> {
        (0..self.m()).filter(|k| !self.j.contains(k)).collect()
    }

    pub fn s(&self) -> f64 {
        self.j.iter().map(|&k| self.d[k]).sum()
    }

    pub fn lambda0(&self, t: f64) -> f64 {
        self.s() / (2.0 * t)
    }

    /// `∏_{ℓ∈J*} (1 + log⁻ d_ℓ)`.
    pub fn log_weight(&self) -> f64 {
        self.j_star().iter().map(|&k| 1.0 + (-self.d[k].ln()).max(0.0)).product()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BornChainValue {
    pub value: [f64; 2],
    pub t_abs: f64,
    pub log_weight: f64,
    pub ratio: f64,
}

/// The inner λ-integral of a Born chain term with cutoffs `χ₁(λ)χ₂(λ/L)`; `cutoff_scale = None`
/// drops `χ₂`. The phase is `tλ² ± λs` with the `+` sign using `ω₊, ω₋` and `−` their conjugates.
pub fn born_chain_integral(
    inst: &BornPhaseInstance,
    t: f64,
    cutoff_scale: Option<f64>,
    sign: Sign,
    opts: &FilonOptions,
) -> Result<BornChainValue> {
    if inst.m() > 3 {
        return Err(Error::Precondition("chains longer than three are out of range".into()));
    }
    if let Some(l) = cutoff_scale {
        if l < 1.0 {
            return Err(Error::Precondition("cutoff scale L must be at least 1".into()));
        }
    }
    let y0 = DEFAULT_SPLIT_SCALE;
    let j_star = inst.j_star();
    // Support: χ₁ vanishes below 1, χ₂(·/L) above 2L, ω₋(λd) above 2y₀/d, ω₊(λd) below y₀/d.
    let mut lo = 1.0f64;
    for &k in &inst.j {
        lo = lo.max(y0 / inst.d[k]);
    }
    let mut hi = cutoff_scale.map(|l| 2.0 * l).unwrap_or(f64::INFINITY);
    for &k in &j_star {
        hi = hi.min(2.0 * y0 / inst.d[k]);
    }
    let log_weight = inst.log_weight();
    if !(hi > lo) || !hi.is_finite() {
        if !hi.is_finite() {
            return Err(Error::Precondition("amplitude support is unbounded; supply a cutoff scale".into()));
        }
        return Ok(BornChainValue { value: [0.0, 0.0], t_abs: 0.0, log_weight, ratio: 0.0 });
    }
    let omega_parts = |y: f64| -> Result<(Complex64, Complex64)> {
        let w = hankel_omega(y)?;
        let (c1, _) = smooth_cutoff(CutoffFamily::Chi1, y / y0);
        Ok((w * c1, w * (1.0 - c1)))
    };
    let amplitude = |lambda: f64| -> Result<Vec<Complex64>> {
        let (c1, _) = smooth_cutoff(CutoffFamily::Chi1, lambda);
        let c2 = cutoff_scale.map(|l| smooth_cutoff(CutoffFamily::Chi2, lambda / l).0).unwrap_or(1.0);
        let mut amp = Complex64::new(c1 * c2, 0.0);
        for &k in &inst.j {
            amp *= omega_parts(lambda * inst.d[k])?.0;
        }
        for &k in &j_star {
            amp *= omega_parts(lambda * inst.d[k])?.1;
        }
        Ok(vec![match sign {
            Sign::Plus => amp,
            Sign::Minus => amp.conj(),
        }])
    };
    let shift = sign.as_f64() * inst.s();
    let out = oscillatory_quadrature_many(amplitude, lo, hi, &[t], shift, opts)?;
    let v = out.values[0][0];
    let t_abs = t.abs() * v.norm();
    Ok(BornChainValue { value: [v.re, v.im], t_abs, log_weight, ratio: t_abs / log_weight })
}
