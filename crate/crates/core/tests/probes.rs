use std::sync::OnceLock;

use nlslab::branch::BranchSolver;
use nlslab::dynamics::{Absorber, BranchPath, LinearizedFlow};
use nlslab::fourier::fourier_l1_norm;
use nlslab::grid::{lp_norm, RadialField, RadialGrid};
use nlslab::hamiltonian::{build_spectral, propagate_free, Potential, PotentialShape, SpectralData};
use nlslab::nonlinearity::NonlinearitySpec;
use nlslab::probes::{
    case_label, fit_decay_exponent, jss_probe, omega_decay_probe, predicted_exponents, wave_operator_probe, CaseLabel,
    DecayModel, Evolution, JssConfig, OmegaProbeConfig, ProbeKind, TimeAxis, WaveOperatorConfig,
};
use nlslab::sampling::{random_smooth_field, seeded_rng};
use num_complex::Complex64;
use proptest::prelude::*;

const DEPTH: f64 = 6.9;

fn coarse() -> &'static SpectralData {
    static S: OnceLock<SpectralData> = OnceLock::new();
    S.get_or_init(|| {
        let grid = RadialGrid::new(256, 20.0).unwrap();
        let v = Potential::new(PotentialShape::GaussianWell { width: 1.0 }, DEPTH).sample(&grid);
        build_spectral(&v, &grid).unwrap()
    })
}

fn cubic() -> NonlinearitySpec {
    NonlinearitySpec::single(1.0, 1.0).unwrap()
}

/// exp(-i H t) on the stored values w = r u by a truncated Taylor series in
/// short substeps of the assembled three-point stencil; no eigensolver involved.
struct DenseFlow {
    diag: Vec<f64>,
    off: f64,
}

impl DenseFlow {
    fn new(n: usize, radius: f64, v: impl Fn(f64) -> f64) -> Self {
        let dr = radius / (n as f64 + 1.0);
        let h2 = 1.0 / (dr * dr);
        DenseFlow { diag: (1..=n).map(|j| 2.0 * h2 + v(j as f64 * dr)).collect(), off: -h2 }
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|j| {
                let mut y = x[j] * self.diag[j];
                if j > 0 {
                    y += x[j - 1] * self.off;
                }
                if j + 1 < n {
                    y += x[j + 1] * self.off;
                }
                y
            })
            .collect()
    }

    fn propagate(&self, w: &[Complex64], t: f64) -> Vec<Complex64> {
        let bound = self.diag.iter().fold(0.0f64, |m, d| m.max(d.abs())) + 2.0 * self.off.abs();
        let steps = (bound * t.abs() / 0.5).ceil().max(1.0) as usize;
        let tau = t / steps as f64;
        let mut x = w.to_vec();
        for _ in 0..steps {
            let mut term = x.clone();
            for k in 1..30 {
                let c = Complex64::new(0.0, -tau / k as f64);
                term = self.apply(&term).into_iter().map(|z| z * c).collect();
                x.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
            }
        }
        x
    }
}

fn field(grid: &std::sync::Arc<RadialGrid>, w: Vec<Complex64>) -> RadialField {
    RadialField::from_values(grid, w).unwrap()
}

fn times(config_t: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| config_t * k as f64 / (count - 1) as f64).collect()
}

#[test]
fn potential_fourier_norm_is_well_depth() {
    // -d e^{-r^2} has a positive-definite transform, so ||V^||_1 = |V(0)| = d
    let s = coarse();
    let mut rng = seeded_rng(1);
    let config = WaveOperatorConfig { samples: 2, time_samples: 2, ..Default::default() };
    let report = wave_operator_probe(s, &config, &mut rng).unwrap();
    let v_hat = report.parameters["v_hat_l1"];
    assert!((v_hat - DEPTH).abs() < 1e-6 * DEPTH, "{v_hat}");
}

#[test]
fn jss_constants_match_dense_oracle() {
    let s = coarse();
    let grid = s.grid();
    let dense = DenseFlow::new(grid.len(), grid.radius(), |r| -DEPTH * (-r * r).exp());
    let point = BranchSolver::new(s, cubic()).solve_point(Complex64::new(0.05, 0.0), None).unwrap();
    let multiplier: Vec<f64> = point.psi.point_values().iter().map(|z| cubic().d1(z.norm())).collect();
    let config = JssConfig { samples: 12, time_samples: 3, ..Default::default() };
    let report = jss_probe(&multiplier, s, &config, &mut seeded_rng(42)).unwrap();
    assert_eq!(report.violations, 0, "{:?}", report.notes);

    // replay the same draws through the dense route
    let ts = times(config.t_max, config.time_samples);
    let mut rng = seeded_rng(42);
    let fields: Vec<RadialField> =
        (0..config.samples.div_ceil(ts.len())).map(|_| random_smooth_field(grid, &mut rng)).collect();
    for (k, &t) in ts.iter().enumerate() {
        let mut best: f64 = 0.0;
        for f in &fields {
            let back = field(grid, dense.propagate(f.values(), -t)).multiply_pointwise(&multiplier);
            let out = field(grid, dense.propagate(back.values(), t));
            for &p in &config.exponents {
                best = best.max(lp_norm(&out, p).unwrap() / lp_norm(f, p).unwrap());
            }
        }
        let got = report.constants[k];
        assert!((got - best).abs() <= 1e-9 * best, "t = {t}: {got} vs {best}");
        assert!(best <= report.bounds[k]);
    }
}

#[test]
fn wave_operator_constants_match_dense_oracle() {
    let s = coarse();
    let grid = s.grid();
    let dense = DenseFlow::new(grid.len(), grid.radius(), |r| -DEPTH * (-r * r).exp());
    let free = DenseFlow::new(grid.len(), grid.radius(), |_| 0.0);
    let config = WaveOperatorConfig { samples: 6, time_samples: 5, ..Default::default() };
    let report = wave_operator_probe(s, &config, &mut seeded_rng(9)).unwrap();
    assert_eq!(report.violations, 0);

    let mut rng = seeded_rng(9);
    let fields: Vec<RadialField> = (0..config.samples).map(|_| random_smooth_field(grid, &mut rng)).collect();
    for (k, &t) in times(config.t_max, config.time_samples).iter().enumerate() {
        // propagate_free(f, -t) = exp(-i Delta t) f = dense free flow at time -t
        let best = fields
            .iter()
            .map(|f| {
                let q = field(grid, dense.propagate(&free.propagate(f.values(), -t), t));
                lp_norm(&q, config.p).unwrap() / lp_norm(f, config.p).unwrap()
            })
            .fold(0.0, f64::max);
        let got = report.constants[k];
        assert!((got - best).abs() <= 1e-9 * best, "t = {t}: {got} vs {best}");
    }
    assert!((report.constants[0] - 1.0).abs() < 1e-12);
}

#[test]
fn wave_operator_is_isometric_in_l2() {
    let s = coarse();
    let config = WaveOperatorConfig { p: 2.0, samples: 5, time_samples: 5, ..Default::default() };
    let report = wave_operator_probe(s, &config, &mut seeded_rng(2)).unwrap();
    for c in &report.constants {
        assert!((c - 1.0).abs() < 1e-10, "{c}");
    }
}

#[test]
fn jss_trivial_multipliers() {
    let s = coarse();
    let grid = s.grid();
    let config = JssConfig { samples: 10, ..Default::default() };
    let zero = vec![0.0; grid.len()];
    let report = jss_probe(&zero, s, &config, &mut seeded_rng(3)).unwrap();
    assert!(report.constants.iter().all(|c| *c == 0.0));

    // V = 0: the free conjugation of W is bounded by ||W^||_1, which is 1 for
    // e^{-r^2/2}. The spectral setup requires a bound state, so the free flow
    // is used directly.
    assert!(build_spectral(&vec![0.0; grid.len()], grid).is_err());
    let w: Vec<f64> = grid.nodes().iter().map(|r| (-0.5 * r * r).exp()).collect();
    let w_hat = fourier_l1_norm(grid, &w);
    assert!((w_hat.norm - 1.0).abs() < 1e-6);
    let mut rng = seeded_rng(3);
    for _ in 0..5 {
        let f = random_smooth_field(grid, &mut rng);
        for t in [0.0, 0.5, 1.0] {
            let out = propagate_free(&propagate_free(&f, -t).multiply_pointwise(&w), t);
            for p in [2.0, 4.0] {
                let ratio = lp_norm(&out, p).unwrap() / lp_norm(&f, p).unwrap();
                assert!(ratio <= w_hat.norm * (1.0 + 1e-9), "t = {t}, p = {p}: {ratio}");
            }
        }
    }
}

#[test]
fn linearized_probe_without_nonlinearity_equals_bare_probe() {
    let s = coarse();
    let off = BranchSolver::new(s, NonlinearitySpec::zero());
    let dt = 0.05;
    let absorber = Absorber::Cap { strength: 8.0, onset: 0.75 };
    let flow =
        LinearizedFlow::new(s, &off, BranchPath::Frozen(Complex64::new(0.0, 0.0)), dt).unwrap().with_absorber(absorber);
    let config = OmegaProbeConfig {
        kind: ProbeKind::LpLp { p: 4.0 },
        samples: 4,
        start: 0.0,
        times: (1..=20).map(|k| 0.5 * k as f64).collect(),
        window: (2.0, 10.0),
    };
    let lin = omega_decay_probe(&Evolution::Linearized(&flow), s, &config, &mut seeded_rng(4)).unwrap();
    let bare =
        omega_decay_probe(&Evolution::BareAbsorbed { spectral: s, absorber, dt }, s, &config, &mut seeded_rng(4))
            .unwrap();
    for (a, b) in lin.constants.iter().zip(&bare.constants) {
        assert!((a - b).abs() <= 0.02 * b, "{a} vs {b}");
    }
}

#[test]
fn unabsorbed_t_probe_rejects_absorber() {
    let s = coarse();
    let config =
        OmegaProbeConfig { kind: ProbeKind::L2T, samples: 2, start: 0.0, times: vec![1.0, 2.0], window: (1.0, 2.0) };
    let ev = Evolution::BareAbsorbed { spectral: s, absorber: Absorber::Cap { strength: 8.0, onset: 0.75 }, dt: 0.05 };
    assert!(omega_decay_probe(&ev, s, &config, &mut seeded_rng(5)).is_err());
}

#[test]
fn noisy_decay_is_flagged() {
    let t: Vec<f64> = (0..80).map(|k| 5.0 + 0.5 * k as f64).collect();
    let v: Vec<f64> = t.iter().enumerate().map(|(k, t)| t.powf(-0.5) * if k % 2 == 0 { 4.0 } else { 0.25 }).collect();
    let fit = fit_decay_exponent(&t, &v, (5.0, 40.0), DecayModel::Power, TimeAxis::T).unwrap();
    assert!(fit.r_squared < 0.95 && !fit.accepted);
    let v: Vec<f64> = t.iter().map(|t| 2.0 * t.powf(-1.25)).collect();
    let fit = fit_decay_exponent(&t, &v, (5.0, 40.0), DecayModel::Power, TimeAxis::T).unwrap();
    assert!((fit.exponent - 1.25).abs() < 1e-10 && fit.accepted);
    assert!(fit_decay_exponent(&t[..2], &v[..2], (5.0, 40.0), DecayModel::Power, TimeAxis::T).is_err());
}

proptest! {
    #[test]
    fn case_labels_partition_the_parameter_square(a1 in 1e-3f64..1.0, span in 0.0f64..1.0) {
        let a2 = a1 + span * (2.0 - a1);
        let label = case_label(a1, a2);
        let threshold = 2.0 * a2 / (3.0 * (3.0 + a2));
        let expect = if (a1 - threshold).abs() <= 1e-12 {
            CaseLabel::II
        } else if a1 < threshold {
            CaseLabel::III
        } else {
            CaseLabel::I
        };
        prop_assert_eq!(label, expect);
        let p = predicted_exponents(a1, a2);
        prop_assert!(p.exp_p1 > 0.0 && p.exp_p2 > 0.0);
        prop_assert!((p.exp_p1 - 3.0 * (0.5 - 1.0 / (3.0 + a1))).abs() < 1e-14);
    }
}
