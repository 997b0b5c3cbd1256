use std::sync::OnceLock;

use nlslab::branch::BranchSolver;
use nlslab::grid::{lp_norm, RadialField, RadialGrid};
use nlslab::hamiltonian::{build_spectral, project_continuous, Potential, PotentialShape, SpectralData};
use nlslab::modulation::{apply_ra, modulation_rhs, pairings, partners, Modulator};
use nlslab::nonlinearity::{apply_f1, NonlinearitySpec};
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

#[test]
fn decomposition_recovers_planted_splitting() {
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let modulator = Modulator::new(BranchSolver::new(s, cubic()));
    let mut rng = seeded_rng(7);
    for k in 0..20 {
        let a0 = Complex64::from_polar(2e-3 * (1 + k % 5) as f64, 0.4 * k as f64);
        let point = solver.solve_point(a0, None).unwrap();
        let zeta = project_continuous(&random_smooth_field(s.grid(), &mut rng), s);
        let zeta = zeta.scaled(Complex64::from_polar(1e-3 / zeta.norm(), 1.3 * k as f64));
        let eta0 = apply_ra(&zeta, &point, s.ground_state()).unwrap();
        let u = &point.psi + &eta0;
        let d = modulator.decompose(&u, None, None).unwrap();
        assert!((d.a - a0).norm() < 1e-11, "k = {k}: {} vs {}", d.a, a0);
        assert!((&d.eta - &eta0).norm() < 1e-10 * eta0.norm());
        assert!(d.iterations <= 8);
    }
}

#[test]
fn ra_inverts_continuous_projection_into_constraint_space() {
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let mut rng = seeded_rng(11);
    for a in [Complex64::new(0.0, 0.0), c(0.01), Complex64::new(0.006, -0.012)] {
        let point = solver.solve_point(a, None).unwrap();
        let zeta = project_continuous(&random_smooth_field(s.grid(), &mut rng), s);
        let zeta = zeta.scaled(Complex64::new(0.3, 0.8));
        let r = apply_ra(&zeta, &point, s.ground_state()).unwrap();
        assert!((&project_continuous(&r, s) - &zeta).norm() <= 1e-12 * zeta.norm());
        let p = pairings(&point, &r);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12, "{p:?}");
    }
}

#[test]
fn ra_commutes_with_conjugation_for_real_amplitude() {
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let point = solver.solve_point(c(0.015), None).unwrap();
    let mut rng = seeded_rng(3);
    let zeta = project_continuous(&random_smooth_field(s.grid(), &mut rng), s).scaled(Complex64::new(0.6, -0.8));
    let lhs = apply_ra(&zeta.conj(), &point, s.ground_state()).unwrap();
    let rhs = apply_ra(&zeta, &point, s.ground_state()).unwrap().conj();
    assert!((&lhs - &rhs).norm() <= 1e-12 * zeta.norm());
}

#[test]
fn ra_rejects_field_with_ground_component() {
    let s = spectral();
    let point = BranchSolver::new(s, cubic()).solve_point(c(0.01), None).unwrap();
    assert!(apply_ra(s.ground_state(), &point, s.ground_state()).is_err());
}

#[test]
fn modulation_rhs_vanishes_on_the_orbit_and_agrees_to_leading_order() {
    let s = spectral();
    let spec = cubic();
    let solver = BranchSolver::new(s, spec);
    let point = solver.solve_point(c(0.01), None).unwrap();
    let zero = point.psi.scaled(c(0.0));
    let rhs = modulation_rhs(&point, &zero, &spec).unwrap();
    assert!(rhs.beta == [0.0, 0.0] && rhs.full.norm() == 0.0);
    let mut rng = seeded_rng(5);
    let zeta = project_continuous(&random_smooth_field(s.grid(), &mut rng), s);
    let mut prev = f64::INFINITY;
    for eps in [1e-3, 1e-4] {
        let eta = apply_ra(&zeta.scaled(c(eps / zeta.norm())), &point, s.ground_state()).unwrap();
        let r = modulation_rhs(&point, &eta, &spec).unwrap();
        let rel = (r.full - r.b()).norm() / r.b().norm();
        assert!(rel < prev, "the two forms approach each other as eta shrinks");
        prev = rel;
    }
    assert!(prev < 1e-2);
}

#[test]
fn exact_branch_point_decomposes_trivially() {
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let modulator = Modulator::new(BranchSolver::new(s, cubic()));
    for a in [Complex64::new(0.01, 0.0), Complex64::new(-0.004, 0.02)] {
        let point = solver.solve_point(a, None).unwrap();
        let d = modulator.decompose(&point.psi, None, None).unwrap();
        assert!((d.a - a).norm() < 1e-11);
        assert!(d.eta.norm() < 1e-11 * point.psi.norm());
    }
}

/// Remove the components along the pairing vectors by Gram-Schmidt in the
/// real inner product.
fn into_constraint_space(v: &RadialField, partners: &[RadialField; 2]) -> RadialField {
    let e1 = partners[0].scaled(c(1.0 / partners[0].norm()));
    let p2 = &partners[1] - &e1.scaled(c(e1.real_inner(&partners[1])));
    let e2 = p2.scaled(c(1.0 / p2.norm()));
    let mut out = v.clone();
    for e in [&e1, &e2] {
        let k = e.real_inner(&out);
        out = &out - &e.scaled(c(k));
    }
    out
}

#[test]
fn decomposition_recovers_bump_built_by_gram_schmidt() {
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let modulator = Modulator::new(BranchSolver::new(s, cubic()));
    let a = Complex64::new(0.012, 0.005);
    let point = solver.solve_point(a, None).unwrap();
    let mut rng = seeded_rng(21);
    let raw = random_smooth_field(s.grid(), &mut rng).scaled(Complex64::new(0.2, 0.9));
    let bump = into_constraint_space(&raw, &partners(&point));
    let bump = bump.scaled(c(1e-3 / bump.norm()));
    let d = modulator.decompose(&(&point.psi + &bump), None, None).unwrap();
    assert!((d.a - a).norm() < 1e-6 * 1e-3, "{}", (d.a - a).norm());
    assert!((&d.eta - &bump).norm() < 1e-8);
}

#[test]
fn decomposition_controls_both_parts_by_the_data() {
    let s = spectral();
    let modulator = Modulator::new(BranchSolver::new(s, cubic()));
    let mut rng = seeded_rng(23);
    let mut worst: f64 = 0.0;
    for k in 0..12 {
        let f = random_smooth_field(s.grid(), &mut rng).scaled(Complex64::from_polar(1.0, k as f64));
        let phi = f.scaled(c((0.005 + 0.003 * k as f64) / f.norm()));
        let d = modulator.decompose(&phi, None, None).unwrap();
        assert!(d.a.norm() <= 2.0 * phi.norm());
        worst = worst.max(d.eta.norm() / phi.norm());
        let back = &(&d.point.psi + &d.eta) - &phi;
        assert!(back.norm() <= 1e-10 * phi.norm());
        let scale = d.eta.norm() * d.point.d_psi[0].norm().max(d.point.d_psi[1].norm());
        assert!(d.pairings.iter().all(|p| p.abs() <= 1e-10 * scale), "{:?}", d.pairings);
    }
    assert!(worst <= 5.0, "{worst}");
}

#[test]
fn ra_is_identity_at_bifurcation_point_and_bounded_in_lp() {
    let s = spectral();
    let solver = BranchSolver::new(s, cubic());
    let mut rng = seeded_rng(29);
    let zetas: Vec<RadialField> = (0..6)
        .map(|k| {
            project_continuous(&random_smooth_field(s.grid(), &mut rng), s)
                .scaled(Complex64::from_polar(1.0, 0.9 * k as f64))
        })
        .collect();
    let origin = solver.solve_point(c(0.0), None).unwrap();
    for z in &zetas {
        assert!((&apply_ra(z, &origin, s.ground_state()).unwrap() - z).norm() < 1e-13 * z.norm());
    }
    for p in [2.0, 4.0, 6.0] {
        let constants: Vec<f64> = [1e-3, 1e-2, 3e-2]
            .iter()
            .map(|&a| {
                let point = solver.solve_point(c(a), None).unwrap();
                zetas
                    .iter()
                    .map(|z| {
                        lp_norm(&apply_ra(z, &point, s.ground_state()).unwrap(), p).unwrap() / lp_norm(z, p).unwrap()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let (lo, hi) = constants.iter().fold((f64::INFINITY, 0.0f64), |(l, h), c| (l.min(*c), h.max(*c)));
        assert!(hi < 2.0 && hi / lo < 1.2, "p = {p}: {constants:?}");
    }
}

#[test]
fn modulation_coefficients_are_quadratic_in_eta() {
    let s = spectral();
    let spec = cubic();
    let point = BranchSolver::new(s, spec).solve_point(c(0.01), None).unwrap();
    let mut rng = seeded_rng(31);
    let zeta = project_continuous(&random_smooth_field(s.grid(), &mut rng), s);
    let eta = apply_ra(&zeta.scaled(c(1.0 / zeta.norm())), &point, s.ground_state()).unwrap();
    let quotients: Vec<f64> = [1e-4, 1e-3, 1e-2]
        .iter()
        .map(|&sz| {
            let r = modulation_rhs(&point, &eta.scaled(c(sz)), &spec).unwrap();
            (r.beta[0].powi(2) + r.beta[1].powi(2)).sqrt() / (sz * sz)
        })
        .collect();
    let (lo, hi) = quotients.iter().fold((f64::INFINITY, 0.0f64), |(l, h), q| (l.min(*q), h.max(*q)));
    assert!(hi.is_finite() && hi / lo < 2.0, "{quotients:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linearization_and_decomposition_are_gauge_covariant(theta in -3.2f64..3.2, seed in 0u64..1000) {
        let s = spectral();
        let spec = cubic();
        let solver = BranchSolver::new(s, spec);
        let rot = Complex64::from_polar(1.0, theta);
        let point = solver.solve_point(Complex64::new(0.008, 0.003), None).unwrap();
        let mut rng = seeded_rng(seed);
        let zeta = random_smooth_field(s.grid(), &mut rng).scaled(Complex64::new(0.0, 1.0));
        let lhs = apply_f1(&point.psi.scaled(rot), &zeta.scaled(rot), &spec);
        let rhs = apply_f1(&point.psi, &zeta, &spec).scaled(rot);
        prop_assert!((&lhs - &rhs).norm() <= 1e-13 * rhs.norm().max(1e-300));

        let modulator = Modulator::new(BranchSolver::new(s, spec));
        let u = &point.psi + &zeta.scaled(c(2e-3 / zeta.norm()));
        let d = modulator.decompose(&u, None, None).unwrap();
        let dr = modulator.decompose(&u.scaled(rot), None, None).unwrap();
        prop_assert!((dr.a - d.a * rot).norm() <= 1e-12);
        prop_assert!((&dr.eta - &d.eta.scaled(rot)).norm() <= 1e-11 * d.eta.norm());
    }
}
