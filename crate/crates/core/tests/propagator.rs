use disp2d::discretize::*;
use disp2d::linalg::{weighted_operator_norm, CMatrix};
use disp2d::lowenergy::symmetric_resolvent;
use disp2d::potential::*;
use disp2d::propagator::*;
use disp2d::specfun::gauss_legendre;
use disp2d::{Error, Sign};
use num_complex::Complex64;
use std::f64::consts::PI;

fn log_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn small_grid() -> std::sync::Arc<Grid> {
    build_grid(GridScheme::polar(16, 16, 5.0)).unwrap()
}

fn evolution(ts: Vec<f64>, lambda1: f64, lambda_max: f64, probes: ProbeRay) -> EvolutionConfig {
    EvolutionConfig {
        t_list: ts,
        lambda1,
        lambda_max,
        quadrature: Default::default(),
        born_terms: 6,
        source: [0.0, 0.0],
        probes,
        lattice: None,
        tail_check: false,
    }
}

fn rows(ts: &[f64], values: &[f64]) -> Vec<DecayRow> {
    ts.iter().zip(values).map(|(&t, &value)| DecayRow { t, value, converged: true }).collect()
}

#[test]
fn born_trivial_cases_equal_free_resolvent() {
    let grid = small_grid();
    let r0 = r0_matrix(Sign::Plus, 1.5, &grid);
    let zero = build_potential(&PotentialSpec::zero(), grid.clone()).unwrap();
    let b = born_series_resolvent(Sign::Plus, 1.5, 5, &zero).unwrap();
    assert!(b.partial_sums.iter().all(|s| *s == r0));
    let pot = build_potential(&PotentialSpec::gaussian(1.0, 1.0), grid).unwrap();
    let b = born_series_resolvent(Sign::Plus, 1.5, 0, &pot).unwrap();
    assert_eq!(b.partial_sums.len(), 1);
    assert_eq!(b.partial_sums[0], r0);
    assert!(born_series_resolvent(Sign::Plus, 0.0, 2, &pot).is_err());
}

#[test]
fn born_small_coupling_converges_geometrically() {
    let grid = small_grid();
    let pot = build_potential(&PotentialSpec::gaussian(0.1, 1.0), grid.clone()).unwrap();
    for sign in [Sign::Plus, Sign::Minus] {
        let born = born_series_resolvent(sign, 2.0, 6, &pot).unwrap();
        let rv = symmetric_resolvent(sign, 2.0, &pot).unwrap().matrix;
        let errs: Vec<f64> = born.partial_sums.iter().map(|s| weighted_operator_norm(&(s - &rv), &grid.weights)).collect();
        let rho = born.contraction;
        assert!(rho < 0.5, "{rho}");
        for w in errs.windows(2) {
            assert!(w[1] <= 2.0 * rho * w[0], "{errs:?} rho {rho}");
        }
    }
}

#[test]
fn born_remainder_bound_at_high_energy() {
    // R_V − Σ₀^N = R₀v·U(−vR₀vU)^N·M⁻¹·vR₀ up to sign, so its norm is at most ‖R₀v‖‖vR₀‖ρ^N/(1 − ρ).
    let grid = small_grid();
    let pot = build_potential(&PotentialSpec::gaussian(0.8, 1.0), grid.clone()).unwrap();
    let lambda = 1.0;
    let born = born_series_resolvent(Sign::Plus, lambda, 6, &pot).unwrap();
    let rho = born.contraction;
    assert!(rho < 0.5);
    let r0 = r0_matrix(Sign::Plus, lambda, &grid);
    let n = r0.nrows();
    let r0v = CMatrix::from_fn(n, n, |i, j| r0[(i, j)] * pot.v[j]);
    let vr0 = CMatrix::from_fn(n, n, |i, j| r0[(i, j)] * pot.v[i]);
    let scale = weighted_operator_norm(&r0v, &grid.weights) * weighted_operator_norm(&vr0, &grid.weights);
    let rv = symmetric_resolvent(Sign::Plus, lambda, &pot).unwrap().matrix;
    let err = weighted_operator_norm(&(&born.partial_sums[6] - &rv), &grid.weights);
    let bound = scale * rho.powi(6) / (1.0 - rho);
    assert!(err <= bound, "{err} {bound}");
    assert!(err >= bound / 100.0, "{err} {bound}");
}

#[test]
fn free_kernel_modulus_is_exact() {
    for &t in &[-30.0, -1e-3, 0.7, 5.0, 1e4] {
        for &r in &[0.0, 1e-6, 0.3, 17.0, 1e3] {
            let m = free_kernel(t, r).norm() * 4.0 * PI * f64::abs(t);
            assert!((m - 1.0).abs() < 1e-15, "{t} {r} {m}");
        }
    }
}

#[test]
fn free_evolution_identity_and_bound() {
    let grid = build_grid(GridScheme::cartesian(8, 0.1)).unwrap();
    let f: Vec<f64> = grid.nodes.iter().map(|x| 1.0 + x[0]).collect();
    let at_zero = free_evolution(&f, &grid, &grid.nodes, 0.0).unwrap();
    assert!(at_zero.values.iter().zip(&f).all(|(z, x)| z.re == *x && z.im == 0.0));
    assert!(free_evolution(&f, &grid, &[[5.0, 5.0]], 0.0).is_err());
    let l1: f64 = f.iter().zip(&grid.weights).map(|(a, w)| a.abs() * w).sum();
    let targets = ProbeRay { length: 3.0, spacing: 0.25, angle: 0.3 }.points();
    let mut last = 0.0;
    for t in [1.0, 10.0, 100.0, 1000.0] {
        let out = free_evolution(&f, &grid, &targets, t).unwrap();
        let bound = l1 / (4.0 * PI * t);
        assert!(out.sup <= bound * (1.0 + 1e-12));
        let ratio = out.sup / bound;
        assert!(ratio >= last);
        last = ratio;
    }
    assert!(last > 0.999);
}

#[test]
fn free_evolution_conserves_mass() {
    let grid = build_grid(GridScheme::cartesian(100, 5.0)).unwrap();
    let f: Vec<f64> = grid.nodes.iter().map(|x| (-(x[0] * x[0] + x[1] * x[1])).exp()).collect();
    let exact = PI / 2.0;
    let (x, w) = gauss_legendre(96);
    for (t, reach) in [(0.5, 12.0), (2.0, 40.0)] {
        let radii: Vec<f64> = x.iter().map(|s| 0.5 * reach * (s + 1.0)).collect();
        let targets: Vec<Point> = radii.iter().map(|&r| [r, 0.0]).collect();
        let out = free_evolution(&f, &grid, &targets, t).unwrap();
        let mass: f64 = out.values.iter().zip(&radii).zip(&w).map(|((u, r), wi)| 0.5 * reach * wi * 2.0 * PI * r * u.norm_sqr()).sum();
        assert!((mass - exact).abs() < 1e-6 * exact, "{t}: {mass} {exact}");
    }
}

#[test]
fn decay_fit_examples() {
    let ts = log_times(5.0, 50.0, 10);
    let exact: Vec<f64> = ts.iter().map(|t| 3.0 / t).collect();
    let fit = decay_fit(&rows(&ts, &exact)).unwrap();
    assert!((fit.exponent + 1.0).abs() < 1e-12 && fit.ci < 1e-10);
    let wobbly: Vec<f64> = ts.iter().map(|t| (1.0 + 0.05 * t.ln().sin()) / t).collect();
    let fit = decay_fit(&rows(&ts, &wobbly)).unwrap();
    assert!((-1.06..=-0.94).contains(&fit.exponent), "{fit:?}");

    let mut with_bad = rows(&ts, &exact);
    with_bad.push(DecayRow { t: 60.0, value: 0.0, converged: true });
    with_bad.push(DecayRow { t: 70.0, value: 1.0, converged: false });
    let fit = decay_fit(&with_bad).unwrap();
    assert_eq!((fit.used, fit.excluded), (10, 2));

    assert!(matches!(decay_fit(&rows(&ts[..7], &exact[..7])), Err(Error::Fit(_))));
    let narrow = log_times(5.0, 40.0, 10);
    assert!(matches!(decay_fit(&rows(&narrow, &exact)), Err(Error::Fit(_))));
}

#[test]
fn free_evolution_decays_like_inverse_time() {
    let grid = build_grid(GridScheme::cartesian(8, 0.05)).unwrap();
    let f = vec![1.0; grid.len()];
    let targets = ProbeRay { length: 10.0, spacing: 0.5, angle: 0.0 }.points();
    let ts = log_times(5.0, 50.0, 10);
    let sups: Vec<f64> = ts.iter().map(|&t| free_evolution(&f, &grid, &targets, t).unwrap().sup).collect();
    let report = DecayReport::new(rows(&ts, &sups), Method::Free).unwrap();
    assert!((report.fitted_exponent + 1.0).abs() <= 0.02, "{}", report.fitted_exponent);
}

#[test]
fn spectral_free_case_matches_free_kernel() {
    let bump_grid = build_grid(GridScheme::cartesian(8, 0.05)).unwrap();
    let mass = 1.0 / bump_grid.total_weight();
    let bump = vec![mass; bump_grid.len()];
    let sources: Vec<(Point, f64)> = bump_grid.nodes.iter().zip(&bump_grid.weights).map(|(&x, &w)| (x, w * mass)).collect();
    let probes = [[0.0, 0.0], [0.7, 0.2], [2.0, 0.0]];
    let zero = build_potential(&PotentialSpec::zero(), small_grid()).unwrap();
    let cfg = evolution(log_times(5.0, 50.0, 6), 0.5, 6.0, ProbeRay::default());
    let filter = |l: f64| cfg.filter(l);
    let out = spectral_values(&zero, &sources, &probes, &cfg.t_list, &filter, cfg.lambda_max, &SpectralOptions::default()).unwrap();
    for (ti, &t) in cfg.t_list.iter().enumerate() {
        let exact = free_evolution(&bump, &bump_grid, &probes, t).unwrap();
        for (got, want) in out.values[ti].iter().zip(&exact.values) {
            assert!((got - want).norm() <= 0.02 * want.norm(), "t {t}: {got} {want}");
        }
    }
}

#[test]
fn spectral_minus_branch_by_conjugation_is_exact() {
    let pot = build_potential(&PotentialSpec::gaussian(0.8, 1.0), small_grid()).unwrap();
    let sources = [([0.0, 0.0], 1.0)];
    let probes = [[1.0, 0.0], [3.0, 0.5]];
    let filter = |l: f64| if l < 1.0 { 1.0 - l * l } else { 0.0 };
    let ts = [2.0, 10.0];
    let a = spectral_values(&pot, &sources, &probes, &ts, &filter, 1.0, &SpectralOptions::default()).unwrap();
    let opts = SpectralOptions { minus_by_conjugation: false, ..Default::default() };
    let b = spectral_values(&pot, &sources, &probes, &ts, &filter, 1.0, &opts).unwrap();
    for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
        assert!((x - y).norm() <= 1e-10 * x.norm(), "{x} {y}");
    }
}

#[test]
fn spectral_time_symmetry() {
    let pot = build_potential(&PotentialSpec::gaussian(0.8, 1.0), small_grid()).unwrap();
    let (x, y) = ([0.3, 0.1], [2.0, -0.4]);
    let cfg = evolution(vec![7.0], 0.5, 1.0, ProbeRay::default());
    let filter = |l: f64| cfg.filter(l);
    let opts = SpectralOptions::default();
    let fwd = spectral_values(&pot, &[(x, 1.0)], &[y], &[7.0], &filter, 1.0, &opts).unwrap();
    let bwd = spectral_values(&pot, &[(y, 1.0)], &[x], &[-7.0], &filter, 1.0, &opts).unwrap();
    let (a, b) = (fwd.values[0][0], bwd.values[0][0]);
    assert!((a.norm() - b.norm()).abs() <= 1e-5 * a.norm(), "{a} {b}");
    assert!((a - b.conj()).norm() <= 1e-5 * a.norm());
}

#[test]
fn spectral_rejects_points_on_grid_nodes() {
    let grid = small_grid();
    let node = grid.nodes[3];
    let pot = build_potential(&PotentialSpec::gaussian(0.8, 1.0), grid).unwrap();
    let filter = |_: f64| 1.0;
    let err = spectral_values(&pot, &[([0.0, 0.0], 1.0)], &[node], &[1.0], &filter, 1.0, &SpectralOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}

#[test]
fn short_time_limit_agrees_with_lattice() {
    let spec = PotentialSpec::gaussian(0.8, 1.0);
    let pot = build_potential(&spec, small_grid()).unwrap();
    let probes = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
    let cfg = evolution(vec![1e-3], 0.5, 1.0, ProbeRay::default());
    let filter = |l: f64| cfg.filter(l);
    let spectral = spectral_values(&pot, &[([0.0, 0.0], 1.0)], &probes, &[1e-3], &filter, 1.0, &SpectralOptions::default()).unwrap();

    let lc = LatticeConfig { spacing: 0.5, half_width: 20.0, backend: LatticeBackend::Chebyshev, dense_cap: 2500, bound_state_box: 12.0 };
    let lattice = Lattice::new(lc.sites_per_side(), lc.spacing, &spec);
    let mut f = vec![0.0; lattice.sites()];
    f[lattice.site_index([0.0, 0.0]).unwrap()] = 4.0;
    let lfilter = |e: f64| cfg.filter(e.max(0.0).sqrt());
    let run = LatticeRun { filter: Some(&lfilter), project_ac: true };
    let oracle = evolve_on_lattice(&lattice, &f, &[1e-3], &probes, &lc, run).unwrap();
    let scale = oracle.probe_values[0][0].norm();
    for (a, b) in spectral.values[0].iter().zip(&oracle.probe_values[0]) {
        assert!((a - b).norm() <= 0.05 * scale, "{a} {b}");
    }
}

fn point_source(lattice: &Lattice) -> Vec<f64> {
    let mut f = vec![0.0; lattice.sites()];
    f[lattice.site_index([0.0, 0.0]).unwrap()] = 1.0 / (lattice.h * lattice.h);
    f
}

#[test]
fn lattice_projection_removes_bound_component() {
    let spec = PotentialSpec::gaussian(-6.0, 1.0);
    let lattice = Lattice::new(31, 0.4, &spec);
    let f = point_source(&lattice);
    let cfg = LatticeConfig { spacing: 0.4, half_width: 6.0, backend: LatticeBackend::Dense, dense_cap: 2500, bound_state_box: 12.0 };
    let out = evolve_on_lattice(&lattice, &f, &[0.0], &[], &cfg, LatticeRun { filter: None, project_ac: true }).unwrap();
    assert!(out.bound_states >= 1);
    let removed = (out.initial_l2.powi(2) - out.l2_norms[0].powi(2)).sqrt();
    assert!((removed - out.bound_component_norm).abs() <= 1e-10 * out.initial_l2, "{removed} {}", out.bound_component_norm);
}

#[test]
fn lattice_evolution_is_unitary() {
    let spec = PotentialSpec::gaussian(-3.0, 1.0);
    let lattice = Lattice::new(25, 0.5, &spec);
    let f = point_source(&lattice);
    for backend in [LatticeBackend::Dense, LatticeBackend::Chebyshev] {
        let cfg = LatticeConfig { spacing: 0.5, half_width: 6.0, backend, dense_cap: 2500, bound_state_box: 12.0 };
        let out = evolve_on_lattice(&lattice, &f, &[0.0, 1.0, 10.0, 40.0], &[], &cfg, LatticeRun { filter: None, project_ac: false }).unwrap();
        for n in &out.l2_norms {
            assert!((n - out.initial_l2).abs() <= 1e-10 * out.initial_l2, "{backend:?} {n} {}", out.initial_l2);
        }
    }
}

#[test]
fn lattice_dense_cap_is_enforced() {
    let lattice = Lattice::new(61, 0.5, &PotentialSpec::zero());
    let f = point_source(&lattice);
    let cfg = LatticeConfig { spacing: 0.5, half_width: 15.0, backend: LatticeBackend::Dense, dense_cap: 2500, bound_state_box: 12.0 };
    let err = evolve_on_lattice(&lattice, &f, &[1.0], &[], &cfg, LatticeRun { filter: None, project_ac: true }).unwrap_err();
    assert!(matches!(err, Error::LatticeTooLarge { sites: 3721, cap: 2500 }));
    assert!(err.to_string().contains("coarser"));
}

#[test]
fn lattice_oracle_enforces_reflection_time() {
    let mut cfg = evolution(log_times(5.0, 50.0, 10), 0.5, 1.0, ProbeRay { length: 10.0, spacing: 0.5, angle: 0.0 });
    cfg.lattice = Some(LatticeConfig { spacing: 0.5, half_width: 60.0, backend: LatticeBackend::Auto, dense_cap: 2500, bound_state_box: 12.0 });
    let err = lattice_oracle(&PotentialSpec::zero(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "evolution.lattice.half_width"));
}

#[test]
fn lattice_free_decay_under_refinement() {
    // Unit-mass Gaussian bump of width σ: |e^{itH₀}f(0)| = 1/(π|σ² + 4it|), slope ≈ −0.99 on [5, 50].
    let sigma: f64 = 2.0;
    let ts = log_times(5.0, 50.0, 10);
    let exact: Vec<f64> = ts.iter().map(|t| 1.0 / (PI * Complex64::new(sigma * sigma, 4.0 * t).norm())).collect();
    let exact_exp = decay_fit(&rows(&ts, &exact)).unwrap().exponent;
    let mut exps = Vec::new();
    for h in [1.0, 0.5] {
        let cfg = LatticeConfig { spacing: h, half_width: 100.0, backend: LatticeBackend::Chebyshev, dense_cap: 2500, bound_state_box: 12.0 };
        let lattice = Lattice::new(cfg.sites_per_side(), h, &PotentialSpec::zero());
        let f: Vec<f64> = (0..lattice.sites())
            .map(|k| {
                let x = lattice.site_point(k);
                (-(x[0] * x[0] + x[1] * x[1]) / (sigma * sigma)).exp() / (PI * sigma * sigma)
            })
            .collect();
        let out = evolve_on_lattice(&lattice, &f, &ts, &[], &cfg, LatticeRun { filter: None, project_ac: true }).unwrap();
        exps.push(decay_fit(&rows(&ts, &out.sup_all)).unwrap().exponent);
    }
    assert!((exps[1] + 1.0).abs() <= 0.1, "{exps:?}");
    assert!((exps[1] - exact_exp).abs() <= (exps[0] - exact_exp).abs() + 1e-3, "{exps:?} {exact_exp}");
}

#[test]
fn evolution_config_validation() {
    let good = evolution(vec![1.0, 2.0], 0.5, 1.0, ProbeRay::default());
    assert!(good.validate().is_ok());
    for bad in [
        evolution(vec![], 0.5, 1.0, ProbeRay::default()),
        evolution(vec![2.0, 1.0], 0.5, 1.0, ProbeRay::default()),
        evolution(vec![-1.0], 0.5, 1.0, ProbeRay::default()),
        evolution(vec![1.0], 1.0, 1.0, ProbeRay::default()),
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
    let parsed: EvolutionConfig = serde_json::from_str(r#"{"t_list":[1,2],"lambda1":0.5,"lambda_max":1}"#).unwrap();
    assert_eq!(parsed.born_terms, 6);
    assert_eq!(parsed.filter(0.1), 1.0);
    assert_eq!(parsed.filter(1.0), 0.0);
}
