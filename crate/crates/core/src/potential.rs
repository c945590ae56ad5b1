//! Potentials `V` on the plane sampled on a grid, with the factorization
//! `V = U v²` and the integral norms used by the decay hypotheses.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::{distance, norm, Grid, Point};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialFamily {
    /// `A·exp(−|x−c|²/ℓ²)` summed over centres.
    Gaussian,
    /// `A` on the closed disk of radius `ℓ`.
    DiskIndicator,
    /// `A·exp(1 − 1/(1 − (r/ℓ)²))` inside the disk of radius `ℓ`.
    SmoothBump,
    /// Gaussian well of amplitude `+A` at the first centre and `−A` at the second.
    TwoWellSigned,
    /// Linear interpolation of `values` over increasing `radii`, zero outside.
    RadialTable { radii: Vec<f64>, values: Vec<f64> },
    /// `V ≡ 0`.
    Zero,
}

fn default_beta() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub amplitude: f64,
    pub length_scale: f64,
    #[serde(default)]
    pub centers: Vec<Point>,
    #[serde(default = "default_beta")]
    pub beta_claimed: f64,
}

impl PotentialSpec {
    pub fn new(family: PotentialFamily, amplitude: f64, length_scale: f64) -> Self {
        PotentialSpec { family, amplitude, length_scale, centers: Vec::new(), beta_claimed: default_beta() }
    }

    pub fn gaussian(amplitude: f64, length_scale: f64) -> Self {
        Self::new(PotentialFamily::Gaussian, amplitude, length_scale)
    }

    pub fn zero() -> Self {
        Self::new(PotentialFamily::Zero, 0.0, 1.0)
    }

    pub fn with_centers(mut self, centers: Vec<Point>) -> Self {
        self.centers = centers;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PotentialSpec { amplitude: self.amplitude * factor, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::config("potential.amplitude", "must be finite"));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::config("potential.length_scale", "must be positive"));
        }
        if self.centers.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::config("potential.centers", "must be finite"));
        }
        match &self.family {
            PotentialFamily::TwoWellSigned if !(self.centers.is_empty() || self.centers.len() == 2) => {
                Err(Error::config("potential.centers", "two-well-signed takes exactly two centers"))
            }
            PotentialFamily::RadialTable { radii, values } => {
                if radii.is_empty() || radii.len() != values.len() {
                    return Err(Error::config("potential.family.radii", "radii and values must be nonempty and equally long"));
                }
                if radii[0] < 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::config("potential.family.radii", "radii must be nonnegative and strictly increasing"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("potential.family.values", "must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn centers_or_default(&self) -> Vec<Point> {
        if !self.centers.is_empty() {
            return self.centers.clone();
        }
        match self.family {
            PotentialFamily::TwoWellSigned => {
                let d = 1.5 * self.length_scale;
                vec![[-d, 0.0], [d, 0.0]]
            }
            _ => vec![[0.0, 0.0]],
        }
    }

    /// Pointwise value `V(x)`.
    pub fn eval(&self, x: Point) -> f64 {
        let l = self.length_scale;
        let a = self.amplitude;
        let centers = self.centers_or_default();
        let gauss = |c: Point| {
            let d = [x[0] - c[0], x[1] - c[1]];
            (-(d[0] * d[0] + d[1] * d[1]) / (l * l)).exp()
        };
        match &self.family {
            PotentialFamily::Zero => 0.0,
            PotentialFamily::Gaussian => a * centers.iter().map(|&c| gauss(c)).sum::<f64>(),
            PotentialFamily::DiskIndicator => {
                a * centers.iter().filter(|&&c| distance(x, c) <= l).count() as f64
            }
            PotentialFamily::SmoothBump => {
                a * centers
                    .iter()
                    .map(|&c| {
                        let s = distance(x, c) / l;
                        if s < 1.0 {
                            (1.0 - 1.0 / (1.0 - s * s)).exp()
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            }
            PotentialFamily::TwoWellSigned => a * (gauss(centers[0]) - gauss(centers[1])),
            PotentialFamily::RadialTable { radii, values } => {
                a * centers.iter().map(|&c| interpolate(radii, values, distance(x, c) / l)).sum::<f64>()
            }
        }
    }
}

fn interpolate(radii: &[f64], values: &[f64], r: f64) -> f64 {
    let last = radii.len() - 1;
    if r > radii[last] {
        return 0.0;
    }
    if r <= radii[0] {
        return values[0];
    }
    let k = radii.partition_point(|&x| x < r);
    let (r0, r1) = (radii[k - 1], radii[k]);
    let s = (r - r0) / (r1 - r0);
    values[k - 1] * (1.0 - s) + values[k] * s
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Fitted exponent `β` in `|V| ≈ C(1+|x|)^{−β}`; absent when the samples cannot resolve it.
    pub beta: Option<f64>,
    /// Smallest `C` with `|V(xᵢ)| ≤ C(1+|xᵢ|)^{−β_claimed}` on every node.
    pub envelope_c: f64,
}

#[derive(Clone, Debug)]
pub struct SampledPotential {
    pub grid: Arc<Grid>,
    pub spec: PotentialSpec,
    pub values: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub l1_norm: f64,
    pub integral: f64,
    pub kato_norm: f64,
    pub beta_fit: DecayFit,
}

impl SampledPotential {
    pub fn is_zero(&self) -> bool {
        self.l1_norm == 0.0
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn build_potential(spec: &PotentialSpec, grid: Arc<Grid>) -> Result<SampledPotential> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::config("grid", "grid has no nodes"));
    }
    let raw: Vec<f64> = grid.nodes.iter().map(|&x| spec.eval(x)).collect();
    let v: Vec<f64> = raw.iter().map(|x| x.abs().sqrt()).collect();
    let u: Vec<f64> = raw.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
    // Stored values are rebuilt from the factors so that V = U v² holds bitwise.
    let values: Vec<f64> = u.iter().zip(&v).map(|(u, v)| u * v * v).collect();
    let l1_norm = values.iter().zip(&grid.weights).map(|(x, w)| x.abs() * w).sum();
    let integral = values.iter().zip(&grid.weights).map(|(x, w)| x * w).sum();
    let kato_norm = kato_on_grid(&grid, &values);
    let beta_fit = fit_decay(&grid, &values, spec.beta_claimed);
    Ok(SampledPotential { grid, spec: spec.clone(), values, v, u, l1_norm, integral, kato_norm, beta_fit })
}

fn fit_decay(grid: &Grid, values: &[f64], beta_claimed: f64) -> DecayFit {
    let pts: Vec<(f64, f64)> = grid
        .nodes
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > 1e-14)
        .map(|(&x, v)| ((1.0 + norm(x)).ln(), v.abs().ln()))
        .collect();
    let envelope_c = grid
        .nodes
        .iter()
        .zip(values)
        .map(|(&x, v)| v.abs() * (1.0 + norm(x)).powf(beta_claimed))
        .fold(0.0, f64::max);
    let beta = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 1e-12).then(|| -sxy / sxx)
    } else {
        None
    };
    DecayFit { beta, envelope_c }
}

/// Mean of `(1 + log⁻|y|)²` over the disk of radius `r`.
pub fn disk_mean_kato_weight(r: f64) -> f64 {
    if r <= 1.0 {
        let l = r.ln();
        2.5 - 3.0 * l + l * l
    } else {
        (2.0 / (r * r)) * (1.25 + 0.5 * (r * r - 1.0))
    }
}

fn kato_weight(d: f64) -> f64 {
    let lm = if d < 1.0 { -d.ln() } else { 0.0 };
    (1.0 + lm) * (1.0 + lm)
}

/// `∫ (1 + log⁻|x − y|)² |V(y)| dy` by the grid quadrature, with the cell-averaged
/// diagonal when `x` is the node `self_index`.
pub fn kato_integral_at(grid: &Grid, values: &[f64], x: Point, self_index: Option<usize>) -> f64 {
    let mut total = 0.0;
    for (j, (&y, &vy)) in grid.nodes.iter().zip(values).enumerate() {
        if vy == 0.0 {
            continue;
        }
        let weight = if Some(j) == self_index {
            disk_mean_kato_weight(grid.cell_radius[j])
        } else {
            kato_weight(distance(x, y))
        };
        total += weight * vy.abs() * grid.weights[j];
    }
    total
}

fn kato_on_grid(grid: &Grid, values: &[f64]) -> f64 {
    use rayon::prelude::*;
    (0..grid.len())
        .into_par_iter()
        .map(|i| kato_integral_at(grid, values, grid.nodes[i], Some(i)))
        .reduce(|| 0.0, f64::max)
}

/// Kato-type norm `sup_x ∫ (1 + log⁻|x − y|)² |V(y)| dy`, supremum over nodes.
pub fn kato_norm(pot: &SampledPotential) -> f64 {
    kato_on_grid(&pot.grid, &pot.values)
}

/// `k(x, x₁) = 1 + log⁺|x₁| + log⁻|x − x₁|`.
pub fn log_weight_k(x: Point, x1: Point) -> Result<f64> {
    let d = distance(x, x1);
    if d == 0.0 {
        return Err(Error::Singularity("log_weight_k at coincident points".into()));
    }
    let lp = norm(x1).ln().max(0.0);
    let lm = (-d.ln()).max(0.0);
    Ok(1.0 + lp + lm)
}

/// `2π∫₀^∞ (1 + log⁻ r)² |V(r)| r dr` for a radial profile, by Gauss–Legendre on log-spaced panels.
pub fn radial_kato_at_center(profile: impl Fn(f64) -> f64, r_max: f64) -> f64 {
    let (x, w) = crate::specfun::gauss_legendre(24);
    let mut edges = vec![0.0];
    let mut r = 1e-12;
    while r < r_max {
        edges.push(r);
        r *= 2.0;
    }
    edges.push(r_max);
    if r_max > 1.0 {
        edges.push(1.0);
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut total = 0.0;
    for win in edges.windows(2) {
        let (a, b) = (win[0], win[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, wi) in x.iter().zip(&w) {
            let s = mid + half * xi;
            total += wi * half * kato_weight(s) * profile(s).abs() * s;
        }
    }
    2.0 * PI * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_grid, GridScheme};

    #[test]
    fn interpolation_clamps() {
        let r = [0.0, 1.0, 2.0];
        let v = [1.0, 0.5, 0.0];
        assert_eq!(interpolate(&r, &v, 0.5), 0.75);
        assert_eq!(interpolate(&r, &v, 3.0), 0.0);
    }

    #[test]
    fn disk_weight_continuous_at_one() {
        assert!((disk_mean_kato_weight(1.0) - disk_mean_kato_weight(1.0 + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn zero_potential_flagged() {
        let g = build_grid(GridScheme::polar(8, 8, 2.0)).unwrap();
        let p = build_potential(&PotentialSpec::zero(), g).unwrap();
        assert!(p.is_zero());
        assert_eq!(p.kato_norm, 0.0);
    }
}
