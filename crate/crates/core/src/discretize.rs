//! Quadrature grids and the dense kernel matrices built over them.
//!
//! A matrix `A` represents the integral operator `f ↦ ∫ K(·, y) f(y) dy` through
//! `A[i][j] = K(xᵢ, xⱼ)·wⱼ`. The logarithmic diagonal of every kernel is replaced
//! by its mean over the equal-area disk of radius `r_c = sqrt(w/π)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, CVector, RMatrix};
use crate::potential::SampledPotential;
use crate::specfun::{e0_unchecked, free_resolvent_unchecked, resolvent_constant, Sign};

pub type Point = [f64; 2];

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn default_cluster() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawGrid")]
pub enum GridScheme {
    /// Log-clustered polar cells on the disk of radius `r_max`. Radial edges are
    /// `r₀((1 + R/r₀)^{k/n_r} − 1)` with `r₀ = cluster·R`.
    Polar {
        n_r: usize,
        n_theta: usize,
        r_max: f64,
        #[serde(default = "default_cluster")]
        cluster: f64,
    },
    /// Uniform cell-centred grid on `[−L, L]²`.
    Cartesian { n: usize, half_width: f64 },
}

/// Flat form so that deserialization errors point at the offending field.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    kind: String,
    n_r: Option<usize>,
    n_theta: Option<usize>,
    r_max: Option<f64>,
    cluster: Option<f64>,
    n: Option<usize>,
    half_width: Option<f64>,
}

impl TryFrom<RawGrid> for GridScheme {
    type Error = String;

    fn try_from(raw: RawGrid) -> std::result::Result<Self, String> {
        let need = |name: &str, v: Option<usize>| v.ok_or_else(|| format!("missing field `{name}`"));
        let needf = |name: &str, v: Option<f64>| v.ok_or_else(|| format!("missing field `{name}`"));
        let reject = |names: &[(&str, bool)]| match names.iter().find(|(_, set)| *set) {
            Some((name, _)) => Err(format!("field `{name}` does not apply to a {} grid", raw.kind)),
            None => Ok(()),
        };
        match raw.kind.as_str() {
            "polar" => {
                reject(&[("n", raw.n.is_some()), ("half_width", raw.half_width.is_some())])?;
                Ok(GridScheme::Polar {
                    n_r: need("n_r", raw.n_r)?,
                    n_theta: need("n_theta", raw.n_theta)?,
                    r_max: needf("r_max", raw.r_max)?,
                    cluster: raw.cluster.unwrap_or_else(default_cluster),
                })
            }
            "cartesian" => {
                reject(&[
                    ("n_r", raw.n_r.is_some()),
                    ("n_theta", raw.n_theta.is_some()),
                    ("r_max", raw.r_max.is_some()),
                    ("cluster", raw.cluster.is_some()),
                ])?;
                Ok(GridScheme::Cartesian { n: need("n", raw.n)?, half_width: needf("half_width", raw.half_width)? })
            }
            other => Err(format!("unknown grid kind `{other}`; expected `polar` or `cartesian`")),
        }
    }
}

impl GridScheme {
    pub fn polar(n_r: usize, n_theta: usize, r_max: f64) -> Self {
        GridScheme::Polar { n_r, n_theta, r_max, cluster: default_cluster() }
    }

    pub fn cartesian(n: usize, half_width: f64) -> Self {
        GridScheme::Cartesian { n, half_width }
    }

    pub fn area(&self) -> f64 {
        match *self {
            GridScheme::Polar { r_max, .. } => PI * r_max * r_max,
            GridScheme::Cartesian { half_width, .. } => 4.0 * half_width * half_width,
        }
    }

    /// The same scheme with every resolution parameter multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        match *self {
            GridScheme::Polar { n_r, n_theta, r_max, cluster } => {
                GridScheme::Polar { n_r: n_r * factor, n_theta: n_theta * factor, r_max, cluster }
            }
            GridScheme::Cartesian { n, half_width } => GridScheme::Cartesian { n: n * factor, half_width },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GridScheme::Polar { n_r, n_theta, r_max, cluster } => {
                if n_r < 8 {
                    return Err(Error::config("grid.n_r", format!("must be at least 8, got {n_r}")));
                }
                if n_theta < 8 || n_theta % 2 != 0 {
                    return Err(Error::config("grid.n_theta", format!("must be even and at least 8, got {n_theta}")));
                }
                if !(r_max > 0.0 && r_max.is_finite()) {
                    return Err(Error::config("grid.r_max", format!("must be positive, got {r_max}")));
                }
                if !(cluster > 0.0 && cluster.is_finite()) {
                    return Err(Error::config("grid.cluster", format!("must be positive, got {cluster}")));
                }
            }
            GridScheme::Cartesian { n, half_width } => {
                if n < 8 {
                    return Err(Error::config("grid.n", format!("must be at least 8, got {n}")));
                }
                if !(half_width > 0.0 && half_width.is_finite()) {
                    return Err(Error::config("grid.half_width", format!("must be positive, got {half_width}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    pub cell_radius: Vec<f64>,
    pub scheme: GridScheme,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| f(x) * w).sum()
    }
}

pub fn build_grid(scheme: GridScheme) -> Result<Arc<Grid>> {
    scheme.validate()?;
    let (nodes, weights) = match scheme {
        GridScheme::Polar { n_r, n_theta, r_max, cluster } => polar_nodes(n_r, n_theta, r_max, cluster),
        GridScheme::Cartesian { n, half_width } => cartesian_nodes(n, half_width),
    };
    let cell_radius = weights.iter().map(|w| (w / PI).sqrt()).collect();
    Ok(Arc::new(Grid { nodes, weights, cell_radius, scheme }))
}

fn polar_nodes(n_r: usize, n_theta: usize, r_max: f64, cluster: f64) -> (Vec<Point>, Vec<f64>) {
    let r0 = cluster * r_max;
    let mut edges: Vec<f64> =
        (0..=n_r).map(|k| r0 * ((1.0 + r_max / r0).powf(k as f64 / n_r as f64) - 1.0)).collect();
    edges[0] = 0.0;
    edges[n_r] = r_max;
    let dtheta = 2.0 * PI / n_theta as f64;
    let half = n_theta / 2;
    let mut nodes = Vec::with_capacity(n_r * n_theta);
    let mut weights = Vec::with_capacity(n_r * n_theta);
    for k in 0..n_r {
        let (a, b) = (edges[k], edges[k + 1]);
        let radius = (0.5 * (a * a + b * b)).sqrt();
        let weight = 0.5 * dtheta * (b * b - a * a);
        let upper: Vec<Point> = (0..half)
            .map(|j| {
                let theta = (j as f64 + 0.5) * dtheta;
                [radius * theta.cos(), radius * theta.sin()]
            })
            .collect();
        // The lower half is the exact point reflection of the upper half.
        nodes.extend(upper.iter().copied());
        nodes.extend(upper.iter().map(|p| [-p[0], -p[1]]));
        weights.extend(std::iter::repeat_n(weight, n_theta));
    }
    (nodes, weights)
}

fn cartesian_nodes(n: usize, half_width: f64) -> (Vec<Point>, Vec<f64>) {
    let h = 2.0 * half_width / n as f64;
    let mut nodes = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            nodes.push([-half_width + (i as f64 + 0.5) * h, -half_width + (j as f64 + 0.5) * h]);
        }
    }
    (nodes, vec![h * h; n * n])
}

/// Mean of `log|y|` over the disk of radius `r`.
pub fn disk_mean_log(r: f64) -> f64 {
    r.ln() - 0.5
}

#[derive(Clone, Debug)]
pub struct KernelOperator {
    pub matrix: CMatrix,
    pub kernel_tag: String,
    pub grid: Arc<Grid>,
}

impl KernelOperator {
    pub fn new(matrix: CMatrix, kernel_tag: impl Into<String>, grid: Arc<Grid>) -> Self {
        KernelOperator { matrix, kernel_tag: kernel_tag.into(), grid }
    }

    pub fn apply(&self, f: &CVector) -> CVector {
        &self.matrix * f
    }

    /// Kernel value `K(xᵢ, xⱼ)` with the quadrature weight removed.
    pub fn kernel(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)] / self.grid.weights[j]
    }

    pub fn max_kernel_asymmetry(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                let a = self.kernel(i, j);
                let b = self.kernel(j, i);
                worst = worst.max((a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE));
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Assemble `A[i][j] = K(xᵢ, xⱼ)·wⱼ` from a symmetric kernel, rows in parallel.
fn assemble_symmetric<T, F, D>(grid: &Grid, offdiag: F, diag: D) -> nalgebra::DMatrix<T>
where
    T: nalgebra::Scalar + Copy + Send + Sync + std::ops::Mul<f64, Output = T>,
    F: Fn(f64) -> T + Sync,
    D: Fn(usize) -> T + Sync,
{
    let n = grid.len();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let k = if i == j { diag(i) } else { offdiag(distance(grid.nodes[i], grid.nodes[j])) };
                    k * grid.weights[j]
                })
                .collect()
        })
        .collect();
    nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub(crate) fn g0_matrix(grid: &Grid) -> RMatrix {
    let scale = -1.0 / (2.0 * PI);
    assemble_symmetric(grid, |r| scale * r.ln(), |i| scale * disk_mean_log(grid.cell_radius[i]))
}

/// The logarithmic operator `−(1/2π)∫ log|x − y| f(y) dy`.
pub fn g0_operator(grid: &Arc<Grid>) -> KernelOperator {
    KernelOperator::new(g0_matrix(grid).map(c), "G0", grid.clone())
}

/// Free resolvent `R₀±(λ²)` on the grid, diagonal regularized by the cell average.
pub fn r0_matrix(sign: Sign, lambda: f64, grid: &Grid) -> CMatrix {
    let constant = resolvent_constant(sign, lambda);
    assemble_symmetric(
        grid,
        |r| free_resolvent_unchecked(sign, lambda * r),
        |i| {
            let rc = grid.cell_radius[i];
            constant - c(disk_mean_log(rc) / (2.0 * PI)) + e0_unchecked(sign, lambda, rc)
        },
    )
}

pub fn r0_operator(sign: Sign, lambda: f64, grid: &Arc<Grid>) -> KernelOperator {
    KernelOperator::new(r0_matrix(sign, lambda, grid), format!("R0({lambda},{})", sign.tag()), grid.clone())
}

#[derive(Clone, Debug)]
pub struct ProjectionPair {
    pub p: RMatrix,
    pub q: RMatrix,
}

/// `P = v⟨·, v⟩/‖V‖₁` in the weighted inner product and its complement.
pub fn projections(pot: &SampledPotential) -> Result<ProjectionPair> {
    if pot.is_zero() {
        return Err(Error::ZeroPotential);
    }
    let grid = &pot.grid;
    let n = grid.len();
    let norm1 = pot.l1_norm;
    let p = RMatrix::from_fn(n, n, |i, j| pot.v[i] * pot.v[j] * grid.weights[j] / norm1);
    let q = RMatrix::identity(n, n) - &p;
    Ok(ProjectionPair { p, q })
}

fn v_sandwich(pot: &SampledPotential, a: &CMatrix) -> CMatrix {
    let v = &pot.v;
    CMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * (v[i] * v[j]))
}

/// `vR₀±(λ²)v` on the grid.
pub fn vr0v_operator(sign: Sign, lambda: f64, pot: &SampledPotential) -> KernelOperator {
    let a = v_sandwich(pot, &r0_matrix(sign, lambda, &pot.grid));
    KernelOperator::new(a, format!("vR0v({lambda},{})", sign.tag()), pot.grid.clone())
}

/// `M±(λ) = U + vR₀±(λ²)v`.
pub fn m_operator(sign: Sign, lambda: f64, pot: &SampledPotential) -> KernelOperator {
    let mut m = vr0v_operator(sign, lambda, pot).matrix;
    for (i, u) in pot.u.iter().enumerate() {
        m[(i, i)] += c(*u);
    }
    KernelOperator::new(m, format!("M({lambda},{})", sign.tag()), pot.grid.clone())
}

/// `T = U + vG₀v`, real symmetric kernel.
pub fn t_matrix(pot: &SampledPotential) -> RMatrix {
    let g0 = g0_matrix(&pot.grid);
    let v = &pot.v;
    RMatrix::from_fn(g0.nrows(), g0.ncols(), |i, j| {
        let d = if i == j { pot.u[i] } else { 0.0 };
        d + v[i] * g0[(i, j)] * v[j]
    })
}

/// `∬ (1+|x|)^{−2s} |K(x,y)|² (1+|y|)^{−2s} dx dy`, square-rooted.
pub fn weighted_hs_norm(a: &KernelOperator, s: f64) -> f64 {
    hs_norm_matrix(&a.matrix, &a.grid, s)
}

pub fn hs_norm_matrix(a: &CMatrix, grid: &Grid, s: f64) -> f64 {
    let n = a.nrows();
    let damp: Vec<f64> = grid.nodes.iter().map(|&x| (1.0 + norm(x)).powf(-2.0 * s)).collect();
    let mut total = 0.0;
    for j in 0..n {
        let col_scale = damp[j] / grid.weights[j];
        for i in 0..n {
            total += a[(i, j)].norm_sqr() * grid.weights[i] * damp[i] * col_scale;
        }
    }
    total.sqrt()
}
