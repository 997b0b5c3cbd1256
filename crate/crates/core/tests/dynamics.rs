use std::sync::OnceLock;

use nlslab::branch::BranchSolver;
use nlslab::dynamics::{
    cumulative_integral, evolve_nls, extract_asymptotics, theta_series, Absorber, BranchPath, EvolverConfig,
    LinearizedFlow, NlsProblem,
};
use nlslab::grid::{RadialField, RadialGrid};
use nlslab::hamiltonian::{build_spectral, project_continuous, propagate_h, Potential, PotentialShape, SpectralData};
use nlslab::modulation::Modulator;
use nlslab::nonlinearity::NonlinearitySpec;
use nlslab::sampling::{random_smooth_field, seeded_rng};
use num_complex::Complex64;
use proptest::prelude::*;

fn spectral() -> &'static SpectralData {
    static S: OnceLock<SpectralData> = OnceLock::new();
    S.get_or_init(|| {
        let grid = RadialGrid::new(512, 40.0).unwrap();
        let v = Potential::new(PotentialShape::GaussianWell { width: 1.0 }, 6.9).sample(&grid);
        build_spectral(&v, &grid).unwrap()
    })
}

fn cubic() -> NonlinearitySpec {
    NonlinearitySpec::new(1.0, 1.0, 1.0, 0.0).unwrap()
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn problem(s: &SpectralData, spec: NonlinearitySpec) -> NlsProblem<'_> {
    NlsProblem { grid: s.grid(), potential: s.potential(), spec }
}

fn bump(s: &SpectralData, seed: u64, size: f64) -> RadialField {
    let mut rng = seeded_rng(seed);
    let v = project_continuous(&random_smooth_field(s.grid(), &mut rng), s);
    v.scaled(c(size / v.norm()))
}

#[test]
fn bound_state_rotates_in_place() {
    let s = spectral();
    let point = BranchSolver::new(s, cubic()).solve_point(c(0.01), None).unwrap();
    let t = 10.0;
    let mut phase_rates = Vec::new();
    for dt in [0.01, 0.005] {
        let config = EvolverConfig { dt, t_final: t, record_stride: 10_000, ..Default::default() };
        let rec = evolve_nls(&point.psi, &problem(s, cubic()), &config, None).unwrap();
        let u = &rec.final_field;
        let modulus = u
            .point_values()
            .iter()
            .zip(point.psi.point_values())
            .map(|(x, y)| (x.norm() - y.norm()).abs())
            .fold(0.0, f64::max);
        if dt == 0.005 {
            assert!(modulus <= 1e-6, "max ||u| - |psi|| = {modulus}");
        }
        let z = point.psi.inner(u) * Complex64::from_polar(1.0, point.energy * t);
        phase_rates.push(z.arg() / t);
    }
    // the discrete orbit rotates at E + O(dt^2)
    let order = (phase_rates[0] / phase_rates[1]).log2();
    assert!((order - 2.0).abs() < 0.2, "phase defect order {order}");
    assert!(phase_rates[1].abs() < 1e-4);
}

#[test]
fn mass_is_conserved_and_energy_defect_is_second_order() {
    let s = spectral();
    let spec = cubic();
    let point = BranchSolver::new(s, spec).solve_point(c(0.05), None).unwrap();
    let u0 = &point.psi + &bump(s, 1, 0.03);
    let mut drifts = Vec::new();
    for dt in [0.01, 0.005] {
        let config = EvolverConfig { dt, t_final: 5.0, record_stride: (0.5 / dt) as usize, ..Default::default() };
        let rec = evolve_nls(&u0, &problem(s, spec), &config, None).unwrap();
        let m0 = rec.mass[0];
        assert!(rec.mass.iter().all(|m| (m / m0 - 1.0).abs() <= 1e-8));
        let e0 = rec.hamiltonian[0];
        drifts.push(rec.hamiltonian.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max));
    }
    let order = (drifts[0] / drifts[1]).log2();
    assert!((order - 2.0).abs() < 0.3, "energy defect order {order}: {drifts:?}");
}

#[test]
fn absorber_only_removes_mass() {
    let s = spectral();
    let spec = cubic();
    let u0 = bump(s, 2, 0.05);
    let config = EvolverConfig {
        dt: 0.01,
        t_final: 20.0,
        record_stride: 100,
        absorber: Absorber::Cap { strength: 8.0, onset: 0.75 },
        ..Default::default()
    };
    let rec = evolve_nls(&u0, &problem(s, spec), &config, None).unwrap();
    assert!(rec.mass.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(*rec.mass.last().unwrap() < 0.9 * rec.mass[0], "radiation leaves through the absorber");
    let bad = EvolverConfig { absorber: Absorber::Cap { strength: 8.0, onset: 1.0 }, ..config };
    assert!(evolve_nls(&u0, &problem(s, spec), &bad, None).is_err());
}

#[test]
fn strang_splitting_is_second_order() {
    let s = spectral();
    let spec = cubic();
    let point = BranchSolver::new(s, spec).solve_point(c(0.3), None).unwrap();
    let u0 = &point.psi + &bump(s, 3, 0.2);
    let run = |dt: f64| {
        let config = EvolverConfig { dt, t_final: 1.0, record_stride: 1000, ..Default::default() };
        evolve_nls(&u0, &problem(s, spec), &config, None).unwrap().final_field
    };
    let (u1, u2, u3) = (run(0.02), run(0.01), run(0.005));
    let ratio = (&u1 - &u2).norm() / (&u2 - &u3).norm();
    let order = ratio.log2();
    assert!((order - 2.0).abs() <= 0.2, "observed order {order}");
}

#[test]
fn trajectory_satisfies_modulation_equation() {
    // a' + i E(|a|) a = b, checked with central differences of the recorded a
    let s = spectral();
    let spec = cubic();
    let solver = BranchSolver::new(s, spec);
    let point = solver.solve_point(c(0.05), None).unwrap();
    let u0 = &point.psi + &bump(s, 4, 0.05);
    let modulator = Modulator::new(BranchSolver::new(s, spec));
    // small steps: the discrete orbit frequency is off by ~1.7 dt^2
    let config =
        EvolverConfig { dt: 5e-4, t_final: 0.5, record_stride: 1, decompose_each_record: true, ..Default::default() };
    let rec = evolve_nls(&u0, &problem(s, spec), &config, Some(&modulator)).unwrap();
    assert!(rec.gaps.is_empty());
    let h = config.dt;
    for k in [200usize, 500, 800] {
        let da = (rec.a[k + 1] - rec.a[k - 1]) / (2.0 * h);
        let lhs = da + Complex64::new(0.0, rec.energy[k]) * rec.a[k];
        let b = rec.b_full[k];
        assert!((lhs - b).norm() <= 0.05 * b.norm(), "t = {}: {lhs} vs {b}", rec.times[k]);
    }
}

#[test]
fn linearized_flow_is_derivative_of_nonlinear_flow() {
    let s = spectral();
    let spec = cubic();
    let solver = BranchSolver::new(s, spec);
    let point = solver.solve_point(c(0.2), None).unwrap();
    let v = bump(s, 5, 1.0);
    let t = 1.0;
    let dt = 0.005;
    let nls = |u: &RadialField| {
        let config = EvolverConfig { dt, t_final: t, record_stride: 10_000, ..Default::default() };
        evolve_nls(u, &problem(s, spec), &config, None).unwrap().final_field
    };
    let base = nls(&point.psi);
    let quotient = |eps: f64| (&nls(&(&point.psi + &v.scaled(c(eps)))) - &base).scaled(c(1.0 / eps));
    let d = [quotient(1e-3), quotient(1e-4), quotient(1e-5)];
    let gap1 = (&d[0] - &d[1]).norm();
    let gap2 = (&d[1] - &d[2]).norm();
    assert!(gap1 / gap2 > 7.0 && gap1 / gap2 < 13.0, "difference quotients converge linearly: {gap1} {gap2}");
    let path = BranchPath::Rotating { a0: point.a, energy: point.energy };
    let flow = LinearizedFlow::new(s, &solver, path, dt).unwrap();
    let omega = flow.evolve(&v, 0.0, t).unwrap();
    let err = (&omega - &d[2]).norm() / omega.norm();
    assert!(err < 1e-3, "relative gap {err}");
}

#[test]
fn linearized_flow_without_nonlinearity_is_bare_propagator() {
    let s = spectral();
    let off = BranchSolver::new(s, NonlinearitySpec::zero());
    let flow = LinearizedFlow::new(s, &off, BranchPath::Frozen(c(0.0)), 0.05).unwrap();
    let v = bump(s, 6, 1.0).scaled(Complex64::new(0.3, 0.7));
    let a = flow.evolve(&v, 0.0, 3.0).unwrap();
    let b = propagate_h(&v, 3.0, s);
    assert!((&a - &b).norm() < 1e-12);
}

#[test]
fn theta_matches_closed_form_for_algebraic_settling() {
    // E(t) = E_inf + (1 + t)^{-1/2} gives theta(t) = 2 ((1 + t)^{1/2} - 1) / t
    let (e_inf, h) = (-1.1, 0.01);
    let times: Vec<f64> = (0..=4000).map(|k| k as f64 * h).collect();
    let energies: Vec<f64> = times.iter().map(|t| e_inf + (1.0 + t).powf(-0.5)).collect();
    let theta = theta_series(&times, &energies, e_inf);
    for (t, th) in times.iter().zip(&theta).skip(1) {
        let exact = 2.0 * ((1.0 + t).sqrt() - 1.0) / t;
        assert!((th - exact).abs() <= 1e-8, "t = {t}: {}", th - exact);
    }
}

#[test]
fn asymptotics_need_enough_samples() {
    let s = spectral();
    let point = BranchSolver::new(s, cubic()).solve_point(c(0.01), None).unwrap();
    let modulator = Modulator::new(BranchSolver::new(s, cubic()));
    let config =
        EvolverConfig { dt: 0.01, t_final: 1.0, record_stride: 50, decompose_each_record: true, ..Default::default() };
    let mut rec = evolve_nls(&point.psi, &problem(s, cubic()), &config, Some(&modulator)).unwrap();
    assert!(extract_asymptotics(&mut rec, (5.0, 40.0)).is_err());
}

#[test]
fn nonlinear_flow_is_gauge_covariant() {
    let s = spectral();
    let spec = NonlinearitySpec::new(0.5, 1.5, 1.0, -0.5).unwrap();
    let point = BranchSolver::new(s, spec).solve_point(c(0.05), None).unwrap();
    let u0 = &point.psi + &bump(s, 8, 0.05);
    let config = EvolverConfig { dt: 0.01, t_final: 2.0, record_stride: 10_000, ..Default::default() };
    let rot = Complex64::from_polar(1.0, 1.1);
    let a = evolve_nls(&u0, &problem(s, spec), &config, None).unwrap().final_field;
    let b = evolve_nls(&u0.scaled(rot), &problem(s, spec), &config, None).unwrap().final_field;
    let worst = a.values().iter().zip(b.values()).map(|(x, y)| (x * rot - y).norm()).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn free_evolution_matches_closed_form_gaussian() {
    // i u_t = -Delta u from e^{-r^2/2}: u = (1 + 2 i t)^{-3/2} exp(-r^2 / (2 (1 + 2 i t)))
    let grid = RadialGrid::new((1 << 21) - 1, 400.0).unwrap();
    let zero = vec![0.0; grid.len()];
    let free = NlsProblem { grid: &grid, potential: &zero, spec: NonlinearitySpec::zero() };
    let u0 = RadialField::from_real_profile(&grid, |r| (-0.5 * r * r).exp());
    let config = EvolverConfig { dt: 2.5, t_final: 20.0, record_stride: 1000, ..Default::default() };
    let u = evolve_nls(&u0, &free, &config, None).unwrap().final_field;
    let z = Complex64::new(1.0, 40.0);
    let worst = u
        .values()
        .iter()
        .zip(grid.nodes())
        .step_by(7)
        .map(|(w, r)| (w / r - z.powf(-1.5) * (-(r * r) / (2.0 * z)).exp()).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn error_against_fine_reference_quarters_with_step() {
    let s = spectral();
    let spec = cubic();
    let point = BranchSolver::new(s, spec).solve_point(c(0.3), None).unwrap();
    let u0 = &point.psi + &bump(s, 9, 0.2);
    let run = |dt: f64| {
        let config = EvolverConfig { dt, t_final: 1.0, record_stride: 10_000, ..Default::default() };
        evolve_nls(&u0, &problem(s, spec), &config, None).unwrap().final_field
    };
    let dt = 0.02;
    let reference = run(dt / 8.0);
    let e1 = (&run(dt) - &reference).norm();
    let e2 = (&run(dt / 2.0) - &reference).norm();
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
}

#[test]
fn generator_maps_gauge_mode_to_rotation() {
    // -i (H + F1)(i psi) = E psi because (H + g) psi = E psi and F1(i psi) = i g(psi)
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let point = solver.solve_point(c(0.02), None).unwrap();
    let path = BranchPath::Frozen(point.a);
    let flow = LinearizedFlow::new(s, &solver, path, 0.01).unwrap();
    let ipsi = point.psi.scaled(Complex64::new(0.0, 1.0));
    let out = flow.apply_generator(&ipsi, 0.0).unwrap();
    let expect = point.psi.scaled(c(point.energy));
    assert!((&out - &expect).norm() <= 1e-8 * point.psi.norm());
}

#[test]
fn difference_operator_trivia_and_bound() {
    let s = spectral();
    let v = bump(s, 10, 1.0).scaled(Complex64::new(0.6, 0.8));
    let off = BranchSolver::new(s, NonlinearitySpec::zero());
    let free = LinearizedFlow::new(s, &off, BranchPath::Frozen(c(0.0)), 0.05).unwrap();
    assert!(free.apply_t(&v, 0.0, 7.0).unwrap().norm() < 1e-12);

    let solver = BranchSolver::new(s, cubic());
    let point = solver.solve_point(c(0.05), None).unwrap();
    let flow =
        LinearizedFlow::new(s, &solver, BranchPath::Rotating { a0: point.a, energy: point.energy }, 0.05).unwrap();
    assert!(flow.apply_t(&v, 2.0, 2.0).unwrap().norm() < 1e-14);
    let norms: Vec<f64> = (1..=10).map(|k| flow.apply_t(&v, 0.0, 5.0 * k as f64).unwrap().norm()).collect();
    assert!(norms.iter().all(|n| n.is_finite() && *n <= 2.5), "{norms:?}");
    // complex-scalar linearity fails: the cubic couples zeta and its conjugate
    let i = Complex64::new(0.0, 1.0);
    let a = flow.evolve(&v.scaled(i), 0.0, 3.0).unwrap();
    let b = flow.evolve(&v, 0.0, 3.0).unwrap().scaled(i);
    assert!((&a - &b).norm() > 1e-6);
}

#[test]
fn periodic_orbit_has_no_phase_defect() {
    let s = spectral();
    let point = BranchSolver::new(s, cubic()).solve_point(c(0.01), None).unwrap();
    let modulator = Modulator::new(BranchSolver::new(s, cubic()));
    let config = EvolverConfig {
        dt: 0.005,
        t_final: 12.0,
        record_stride: 40,
        decompose_each_record: true,
        ..Default::default()
    };
    let mut rec = evolve_nls(&point.psi, &problem(s, cubic()), &config, Some(&modulator)).unwrap();
    let asym = extract_asymptotics(&mut rec, (5.0, 12.0)).unwrap();
    assert!((asym.e_inf - point.energy).abs() < 1e-10, "{} vs {}", asym.e_inf, point.energy);
    assert!(rec.theta.iter().all(|th| th.abs() < 1e-9));
    assert!(rec.eta_l2.iter().all(|e| *e < 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cumulative_integral_is_exact_for_cubics(a in -2.0f64..2.0, b in -2.0f64..2.0, cc in -2.0f64..2.0, n in 3usize..60) {
        // trapezoid plus endpoint correction integrates cubics exactly
        let h = 0.1;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
        let f: Vec<f64> = times.iter().map(|t| a + b * t + cc * t * t * t).collect();
        let out = cumulative_integral(&times, &f);
        for (t, v) in times.iter().zip(&out).skip(2) {
            let exact = a * t + 0.5 * b * t * t + 0.25 * cc * t.powi(4);
            prop_assert!((v - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn linearized_flow_is_real_linear(x in -2.0f64..2.0, y in -2.0f64..2.0, seed in 0u64..100) {
        let s = spectral();
        let solver = BranchSolver::new(s, cubic());
        let point = solver.solve_point(c(0.05), None).unwrap();
        let path = BranchPath::Rotating { a0: point.a, energy: point.energy };
        let flow = LinearizedFlow::new(s, &solver, path, 0.05).unwrap();
        let v = bump(s, seed, 1.0);
        let w = bump(s, seed + 1, 1.0).scaled(Complex64::new(0.0, 1.0));
        let combo = &v.scaled(c(x)) + &w.scaled(c(y));
        let lhs = flow.evolve(&combo, 0.0, 0.5).unwrap();
        let rhs = &flow.evolve(&v, 0.0, 0.5).unwrap().scaled(c(x)) + &flow.evolve(&w, 0.0, 0.5).unwrap().scaled(c(y));
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }
}
