//! Time evolution: the nonlinear equation i u_t = H u + g(u) by Strang
//! splitting, and the linearized flow around a moving branch point.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branch::{BranchSolver, RealProfile};
use crate::error::{Error, Result};
use crate::grid::{lp_norm, RadialField, RadialGrid};
use crate::hamiltonian::{project_continuous, propagate_h, SpectralData};
use crate::modulation::{modulation_rhs, Modulator};
use crate::nonlinearity::{EffectivePotentials, NonlinearitySpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Absorber {
    Off,
    /// Damping W(r) = strength ((r - r0)/(R - r0))^4 for r > r0 = onset R.
    Cap {
        strength: f64,
        onset: f64,
    },
}

impl Absorber {
    pub fn profile(&self, grid: &RadialGrid) -> Vec<f64> {
        match *self {
            Absorber::Off => vec![0.0; grid.len()],
            Absorber::Cap { strength, onset } => {
                let r0 = onset * grid.radius();
                let width = grid.radius() - r0;
                grid.nodes().iter().map(|&r| if r > r0 { strength * ((r - r0) / width).powi(4) } else { 0.0 }).collect()
            }
        }
    }

    pub fn is_on(&self) -> bool {
        !matches!(self, Absorber::Off)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolverConfig {
    pub dt: f64,
    pub t_final: f64,
    pub absorber: Absorber,
    /// Steps between recorded samples.
    pub record_stride: usize,
    /// Decompose u = psi(a) + eta at every recorded sample.
    pub decompose_each_record: bool,
    pub snapshot_times: Vec<f64>,
}

impl Default for EvolverConfig {
    fn default() -> Self {
        EvolverConfig {
            dt: 0.01,
            t_final: 10.0,
            absorber: Absorber::Off,
            record_stride: 10,
            decompose_each_record: false,
            snapshot_times: Vec::new(),
        }
    }
}

/// Recorded trajectory. Decomposition-dependent entries are NaN where the
/// decomposition failed or was not requested.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub a: Vec<Complex64>,
    pub energy: Vec<f64>,
    pub eta_l2: Vec<f64>,
    pub eta_p1: Vec<f64>,
    pub eta_p2: Vec<f64>,
    pub beta: Vec<[f64; 2]>,
    pub b_full: Vec<Complex64>,
    pub pairing_max: Vec<f64>,
    pub mass: Vec<f64>,
    /// Conserved energy of the flow (as opposed to E(|a|) above).
    pub hamiltonian: Vec<f64>,
    /// integral_0^t E(s) ds (trapezoid over recorded samples)
    pub phase_integral: Vec<f64>,
    /// (1/t) integral_0^t (E - E_inf) ds, filled by `extract_asymptotics`.
    pub theta: Vec<f64>,
    /// Indices of samples where the decomposition failed.
    pub gaps: Vec<usize>,
    pub snapshots: Vec<(f64, RadialField)>,
    pub absorber: Absorber,
    /// (p1, p2) = (3 + alpha1, 3 + alpha2)
    pub exponents: (f64, f64),
    pub e_inf: Option<f64>,
    pub final_field: RadialField,
}

pub struct NlsProblem<'a> {
    pub grid: &'a Arc<RadialGrid>,
    pub potential: &'a [f64],
    pub spec: NonlinearitySpec,
}

/// Conserved energy <u, H u> + integral sum_i 2 l_i |u|^{3+a_i} / (3 + a_i).
pub fn hamiltonian_energy(u: &RadialField, potential: &[f64], spec: &NonlinearitySpec) -> f64 {
    let grid = u.grid();
    let lap = grid.apply_laplacian(u.values());
    let kin: f64 =
        u.values().iter().zip(&lap).zip(potential).map(|((w, l), v)| (w.conj() * (l + w * v)).re).sum::<f64>()
            * 4.0
            * std::f64::consts::PI
            * grid.dr();
    let dens: Vec<f64> = u
        .point_values()
        .iter()
        .map(|z| {
            let s = z.norm();
            let mut e = 0.0;
            for (l, a) in [(spec.lambda1, spec.alpha1), (spec.lambda2, spec.alpha2)] {
                if l != 0.0 {
                    e += 2.0 * l * s.powf(3.0 + a) / (3.0 + a);
                }
            }
            e
        })
        .collect();
    kin + grid.integrate(&dens)
}

struct StrangStepper {
    kinetic: Vec<Complex64>,
    potential: Vec<f64>,
    damping: Vec<f64>,
    spec: NonlinearitySpec,
    nodes: Vec<f64>,
    grid: Arc<RadialGrid>,
}

impl StrangStepper {
    fn new(problem: &NlsProblem<'_>, dt: f64, absorber: &Absorber) -> Self {
        let grid = problem.grid.clone();
        let kinetic = grid.laplacian_symbol().iter().map(|mu| Complex64::from_polar(1.0, -mu * dt)).collect();
        StrangStepper {
            kinetic,
            potential: problem.potential.to_vec(),
            damping: absorber.profile(&grid),
            spec: problem.spec,
            nodes: grid.nodes().to_vec(),
            grid,
        }
    }

    /// Exact flow of u' = -i (V + g(|u|)/|u|) u - W u over time tau.
    fn pointwise(&self, w: &mut [Complex64], tau: f64) {
        let spec = &self.spec;
        for j in 0..w.len() {
            let s0 = w[j].norm() / self.nodes[j];
            let damp = self.damping[j];
            let mut phase = self.potential[j] * tau;
            if damp > 0.0 {
                for (l, a) in [(spec.lambda1, spec.alpha1), (spec.lambda2, spec.alpha2)] {
                    if l != 0.0 {
                        let k = (1.0 + a) * damp;
                        phase += l * s0.powf(1.0 + a) * (-(-k * tau).exp_m1()) / k;
                    }
                }
                w[j] *= Complex64::from_polar((-damp * tau).exp(), -phase);
            } else {
                phase += spec.ratio(s0) * tau;
                w[j] *= Complex64::from_polar(1.0, -phase);
            }
        }
    }

    fn step(&self, w: &mut Vec<Complex64>, dt: f64) {
        self.pointwise(w, 0.5 * dt);
        self.grid.sine_transform().transform(w);
        for (z, k) in w.iter_mut().zip(&self.kinetic) {
            *z *= k;
        }
        self.grid.sine_transform().transform(w);
        self.pointwise(w, 0.5 * dt);
    }
}

/// Evolve the nonlinear equation from u0 over [0, t_final].
pub fn evolve_nls(
    u0: &RadialField,
    problem: &NlsProblem<'_>,
    config: &EvolverConfig,
    modulator: Option<&Modulator<'_>>,
) -> Result<TrajectoryRecord> {
    if !(config.dt > 0.0 && config.t_final >= 0.0) {
        return Err(Error::Precondition("need dt > 0 and t_final >= 0".into()));
    }
    if let Absorber::Cap { onset, strength } = config.absorber {
        if !(onset >= 0.0 && onset < 1.0 && strength >= 0.0) {
            return Err(Error::Precondition(format!("absorber onset {onset} must lie in [0, 1) of R")));
        }
    }
    let steps = (config.t_final / config.dt).round() as usize;
    let stride = config.record_stride.max(1);
    let stepper = StrangStepper::new(problem, config.dt, &config.absorber);
    let mut w: Vec<Complex64> = u0.values().to_vec();
    let grid = problem.grid;
    let mass0 = u0.norm().powi(2);
    let exponents = (3.0 + problem.spec.alpha1, 3.0 + problem.spec.alpha2);

    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        a: Vec::new(),
        energy: Vec::new(),
        eta_l2: Vec::new(),
        eta_p1: Vec::new(),
        eta_p2: Vec::new(),
        beta: Vec::new(),
        b_full: Vec::new(),
        pairing_max: Vec::new(),
        mass: Vec::new(),
        hamiltonian: Vec::new(),
        phase_integral: Vec::new(),
        theta: Vec::new(),
        gaps: Vec::new(),
        snapshots: Vec::new(),
        absorber: config.absorber,
        exponents,
        e_inf: None,
        final_field: u0.clone(),
    };
    let snapshot_steps: Vec<usize> = config.snapshot_times.iter().map(|t| (t / config.dt).round() as usize).collect();
    let mut last: Option<(Complex64, f64, RealProfile, f64)> = None;

    for n in 0..=steps {
        let t = n as f64 * config.dt;
        if n > 0 {
            stepper.step(&mut w, config.dt);
        }
        if snapshot_steps.contains(&n) {
            let f = RadialField::from_values(grid, w.clone())?;
            rec.snapshots.push((t, f));
        }
        if n % stride != 0 && n != steps {
            continue;
        }
        let u = RadialField::from_values(grid, w.clone())?;
        let mass = u.norm().powi(2);
        if !mass.is_finite() || mass > mass0 * (1.0 + 1e-6) + 1e-300 {
            return Err(Error::BlowUp { time: t, reason: format!("mass {mass:e} from {mass0:e}") });
        }
        rec.times.push(t);
        rec.mass.push(mass);
        rec.hamiltonian.push(hamiltonian_energy(&u, problem.potential, &problem.spec));
        let mut decomposed = false;
        if let (true, Some(m)) = (config.decompose_each_record, modulator) {
            let guess = last.as_ref().map(|(a, e, _, tl)| a * Complex64::from_polar(1.0, -e * (t - tl)));
            let warm = last.as_ref().map(|(_, _, p, _)| p);
            if let Ok(d) = m.decompose(&u, guess, warm) {
                let rhs = modulation_rhs(&d.point, &d.eta, &problem.spec);
                rec.a.push(d.a);
                rec.energy.push(d.point.energy);
                rec.eta_l2.push(d.eta.norm());
                rec.eta_p1.push(lp_norm(&d.eta, exponents.0)?);
                rec.eta_p2.push(lp_norm(&d.eta, exponents.1)?);
                match rhs {
                    Ok(r) => {
                        rec.beta.push(r.beta);
                        rec.b_full.push(r.full);
                    }
                    Err(_) => {
                        rec.beta.push([f64::NAN; 2]);
                        rec.b_full.push(Complex64::new(f64::NAN, f64::NAN));
                    }
                }
                rec.pairing_max.push(d.pairings[0].abs().max(d.pairings[1].abs()));
                last = Some((d.a, d.point.energy, d.point.profile.clone(), t));
                decomposed = true;
            } else {
                rec.gaps.push(rec.times.len() - 1);
            }
        }
        if !decomposed {
            rec.a.push(Complex64::new(f64::NAN, f64::NAN));
            rec.energy.push(f64::NAN);
            rec.eta_l2.push(f64::NAN);
            rec.eta_p1.push(f64::NAN);
            rec.eta_p2.push(f64::NAN);
            rec.beta.push([f64::NAN; 2]);
            rec.b_full.push(Complex64::new(f64::NAN, f64::NAN));
            rec.pairing_max.push(f64::NAN);
        }
    }
    rec.phase_integral = cumulative_integral(&rec.times, &rec.energy);
    rec.final_field = RadialField::from_values(grid, w)?;
    Ok(rec)
}

/// Cumulative integral of samples f(t_k). On uniform spacing the trapezoid
/// rule is corrected by the leading Euler-Maclaurin term, with derivatives
/// from five-point (three-point for short series) stencils. NaN samples give
/// NaN from that point on.
pub fn cumulative_integral(times: &[f64], f: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    let mut trap = 0.0;
    for k in 1..n {
        trap += 0.5 * (times[k] - times[k - 1]) * (f[k] + f[k - 1]);
        out[k] = trap;
    }
    if n < 3 {
        return out;
    }
    let h = times[1] - times[0];
    let uniform = times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs());
    if !uniform {
        return out;
    }
    let width = n.min(5);
    let derivative = |k: usize| {
        let start = k.saturating_sub(width / 2).min(n - width);
        let weights = stencil_weights(k as f64 - start as f64, width);
        weights.iter().zip(&f[start..start + width]).map(|(c, v)| c * v).sum::<f64>() / h
    };
    let d0 = derivative(0);
    for (k, v) in out.iter_mut().enumerate().skip(1) {
        *v -= h * h / 12.0 * (derivative(k) - d0);
    }
    out
}

/// Weights for the first derivative at offset x from nodes 0..m (unit spacing).
fn stencil_weights(x: f64, m: usize) -> Vec<f64> {
    // sum_j c_j (j - x)^q = q [q == 1], q = 0..m-1
    let rows = (0..m)
        .map(|q| {
            let mut row: Vec<f64> = (0..m).map(|j| (j as f64 - x).powi(q as i32)).collect();
            row.push(if q == 1 { 1.0 } else { 0.0 });
            row
        })
        .collect();
    crate::linalg::solve_dense(rows)
}

/// theta(t) = (1/t) integral_0^t (E(s) - E_inf) ds, with theta(0) = 0.
pub fn theta_series(times: &[f64], energies: &[f64], e_inf: f64) -> Vec<f64> {
    let shifted: Vec<f64> = energies.iter().map(|e| e - e_inf).collect();
    let integral = cumulative_integral(times, &shifted);
    times.iter().zip(&integral).map(|(t, i)| if *t > 0.0 { i / t } else { 0.0 }).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Asymptotics {
    pub e_inf: f64,
    pub window: (f64, f64),
    /// |E - E_inf| shrinks from block to block over the tail of the window.
    pub energy_settling: bool,
    /// |theta| decreases over the final third of the window.
    pub converged: bool,
    pub theta_final: f64,
}

/// Default fitting window, starting at t = 5. Without an absorber it ends at
/// 0.15 R, before waves with group velocity up to 13 return from the wall.
/// With one it ends once the absorbed mass reaches 1% of the initial
/// radiation mass (1e-3 of the total when eta was not recorded).
pub fn clean_window(record: &TrajectoryRecord, radius: f64) -> (f64, f64) {
    let t_end = record.times.last().copied().unwrap_or(0.0);
    let hi = if record.absorber.is_on() {
        let m0 = record.mass.first().copied().unwrap_or(0.0);
        let eta0 = record.eta_l2.first().copied().unwrap_or(f64::NAN);
        let budget = if eta0.is_finite() && eta0 > 0.0 { 1e-2 * eta0 * eta0 } else { 1e-3 * m0 };
        record.times.iter().zip(&record.mass).find(|(_, m)| m0 - **m >= budget).map_or(t_end, |(t, _)| *t)
    } else {
        t_end.min(0.15 * radius)
    };
    (5.0_f64.min(hi), hi)
}

/// Estimate E_inf from the last third of the window and fill record.theta.
pub fn extract_asymptotics(record: &mut TrajectoryRecord, window: (f64, f64)) -> Result<Asymptotics> {
    let idx: Vec<usize> = (0..record.times.len())
        .filter(|&k| record.times[k] >= window.0 && record.times[k] <= window.1 && record.energy[k].is_finite())
        .collect();
    if idx.len() < 10 {
        return Err(Error::WindowNotFound(format!(
            "only {} usable samples in [{}, {}]",
            idx.len(),
            window.0,
            window.1
        )));
    }
    let tail_start = window.0 + (window.1 - window.0) * 2.0 / 3.0;
    let tail: Vec<usize> = idx.iter().copied().filter(|&k| record.times[k] >= tail_start).collect();
    let e_inf = tail.iter().map(|&k| record.energy[k]).sum::<f64>() / tail.len() as f64;
    record.theta = theta_series(&record.times, &record.energy, e_inf);

    // Compare mean deviation over four consecutive blocks of the window.
    let blocks = 4;
    let chunk = idx.len() / blocks;
    let means: Vec<f64> = (0..blocks)
        .map(|b| {
            let part = &idx[b * chunk..(b + 1) * chunk];
            part.iter().map(|&k| (record.energy[k] - e_inf).abs()).sum::<f64>() / part.len() as f64
        })
        .collect();
    // Deviations below the decomposition noise floor count as settled.
    let floor = 1e-10 * e_inf.abs().max(1.0);
    let energy_settling = means[..blocks - 1].windows(2).all(|w| w[1] <= w[0] * 1.05 || w[1] <= floor);
    let k_start = tail[0];
    let k_end = *idx.last().expect("nonempty");
    let theta_final = record.theta[k_end];
    let converged = theta_final.abs() <= record.theta[k_start].abs();
    record.e_inf = Some(e_inf);
    Ok(Asymptotics { e_inf, window, energy_settling, converged, theta_final })
}

/// Branch amplitude as a function of time for the linearized flow.
#[derive(Clone, Debug)]
pub enum BranchPath {
    Frozen(Complex64),
    /// a(t) = a0 exp(-i E t), the exact motion of a bound state.
    Rotating {
        a0: Complex64,
        energy: f64,
    },
    /// Samples of a(t); modulus and unwrapped phase are interpolated linearly.
    Recorded {
        times: Vec<f64>,
        a: Vec<Complex64>,
    },
}

impl BranchPath {
    pub fn at(&self, t: f64) -> Complex64 {
        match self {
            BranchPath::Frozen(a) => *a,
            BranchPath::Rotating { a0, energy } => a0 * Complex64::from_polar(1.0, -energy * t),
            BranchPath::Recorded { times, a } => {
                if t <= times[0] {
                    return a[0];
                }
                if t >= *times.last().expect("nonempty") {
                    return *a.last().expect("nonempty");
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let s = (t - times[k]) / (times[k + 1] - times[k]);
                let (r0, p0) = a[k].to_polar();
                let (r1, mut p1) = a[k + 1].to_polar();
                while p1 - p0 > std::f64::consts::PI {
                    p1 -= 2.0 * std::f64::consts::PI;
                }
                while p1 - p0 < -std::f64::consts::PI {
                    p1 += 2.0 * std::f64::consts::PI;
                }
                Complex64::from_polar(r0 + s * (r1 - r0), p0 + s * (p1 - p0))
            }
        }
    }

    fn constant_modulus(&self) -> bool {
        !matches!(self, BranchPath::Recorded { .. })
    }
}

/// The linearized flow Omega(t, s) of
///   i zeta_t = H zeta + F1(psi(a(t))) zeta
/// computed by Strang splitting between exp(-i H dt) in the eigenbasis and
/// the exact flow of the pointwise real-linear term. With an absorber the
/// split is instead between the kinetic flow (sine transform) and the
/// pointwise flow of V + F1 - i W.
pub struct LinearizedFlow<'a> {
    spectral: &'a SpectralData,
    solver: &'a BranchSolver<'a>,
    path: BranchPath,
    dt_max: f64,
    frozen: Option<RealProfile>,
    absorber: Absorber,
}

/// Frozen coefficients of the pointwise substep in the frame rotated by
/// `phase`: x' = p y, y' = -q x, then damping by exp(-W t).
struct Pointwise {
    p: Vec<f64>,
    q: Vec<f64>,
    phase: Complex64,
    damping: Option<Vec<f64>>,
}

impl Pointwise {
    fn apply(&self, w: &mut [Complex64], tau: f64) {
        let rot = self.phase;
        for j in 0..w.len() {
            let (p, q) = (self.p[j], self.q[j]);
            let xi = w[j] * rot.conj();
            let s = p * q * tau * tau;
            let (cs, sn) = if s.abs() < 1e-8 {
                (1.0 - s / 2.0 + s * s / 24.0, 1.0 - s / 6.0 + s * s / 120.0)
            } else if s > 0.0 {
                let r = s.sqrt();
                (r.cos(), r.sin() / r)
            } else {
                let r = (-s).sqrt();
                (r.cosh(), r.sinh() / r)
            };
            let x = cs * xi.re + p * tau * sn * xi.im;
            let y = -q * tau * sn * xi.re + cs * xi.im;
            let mut z = Complex64::new(x, y) * rot;
            if let Some(d) = &self.damping {
                z *= (-d[j] * tau).exp();
            }
            w[j] = z;
        }
    }
}

enum Linear<'s> {
    Eigenbasis(&'s SpectralData),
    Kinetic(&'s RadialGrid),
}

/// Strang splitting between a linear flow and pointwise substeps whose
/// coefficients are evaluated at the step endpoints.
fn split_run(
    linear: Linear<'_>,
    vs: &[RadialField],
    s: f64,
    times: &[f64],
    dt_max: f64,
    coefficients: impl Fn(f64) -> Result<Pointwise>,
) -> Result<Vec<Vec<RadialField>>> {
    let mut current: Vec<RadialField> = vs.to_vec();
    let mut out: Vec<Vec<RadialField>> = Vec::with_capacity(times.len());
    let mut t = s;
    for &target in times {
        let span = target - t;
        if span != 0.0 {
            let steps = (span.abs() / dt_max).ceil().max(1.0) as usize;
            let dt = span / steps as f64;
            let phases: Vec<Complex64> = match &linear {
                Linear::Eigenbasis(sp) => {
                    sp.eigenvalues().iter().map(|l| Complex64::from_polar(1.0, -l * dt)).collect()
                }
                Linear::Kinetic(g) => {
                    g.laplacian_symbol().iter().map(|m| Complex64::from_polar(1.0, -m * dt)).collect()
                }
            };
            let mut c_now = coefficients(t)?;
            for k in 0..steps {
                let c_next = coefficients(t + (k + 1) as f64 * dt)?;
                for f in current.iter_mut() {
                    c_now.apply(f.values_mut(), 0.5 * dt);
                }
                match &linear {
                    Linear::Eigenbasis(sp) => {
                        let refs: Vec<&RadialField> = current.iter().collect();
                        current = sp.apply_function_many(&refs, |k, _| phases[k]);
                    }
                    Linear::Kinetic(g) => {
                        for f in current.iter_mut() {
                            let w = f.values_mut();
                            g.sine_transform().transform(w);
                            for (z, ph) in w.iter_mut().zip(&phases) {
                                *z *= ph;
                            }
                            g.sine_transform().transform(w);
                        }
                    }
                }
                for f in current.iter_mut() {
                    c_next.apply(f.values_mut(), 0.5 * dt);
                }
                c_now = c_next;
            }
            t = target;
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// exp(-i (H - i W) t) applied to each field at each of `times`, by Strang
/// splitting with step at most dt_max. Emulates the flow on all of space
/// for data whose waves would otherwise return from the wall.
pub fn propagate_absorbed(
    fields: &[RadialField],
    times: &[f64],
    spectral: &SpectralData,
    absorber: &Absorber,
    dt_max: f64,
) -> Result<Vec<Vec<RadialField>>> {
    let grid = spectral.grid();
    let v = spectral.potential().to_vec();
    let damping = absorber.is_on().then(|| absorber.profile(grid));
    split_run(Linear::Kinetic(grid), fields, 0.0, times, dt_max, |_| {
        Ok(Pointwise { p: v.clone(), q: v.clone(), phase: Complex64::new(1.0, 0.0), damping: damping.clone() })
    })
}

impl<'a> LinearizedFlow<'a> {
    pub fn new(
        spectral: &'a SpectralData,
        solver: &'a BranchSolver<'a>,
        path: BranchPath,
        dt_max: f64,
    ) -> Result<Self> {
        let frozen =
            if path.constant_modulus() { Some(solver.solve_profile(path.at(0.0).norm(), None)?) } else { None };
        Ok(LinearizedFlow { spectral, solver, path, dt_max, frozen, absorber: Absorber::Off })
    }

    pub fn with_absorber(mut self, absorber: Absorber) -> Self {
        self.absorber = absorber;
        self
    }

    pub fn path(&self) -> &BranchPath {
        &self.path
    }

    pub fn absorber(&self) -> &Absorber {
        &self.absorber
    }

    fn profile_at(&self, t: f64) -> Result<(RealProfile, Complex64)> {
        let a = self.path.at(t);
        let phase = if a.norm() > 0.0 { a / a.norm() } else { Complex64::new(1.0, 0.0) };
        match &self.frozen {
            Some(p) => Ok((p.clone(), phase)),
            None => Ok((self.solver.solve_profile(a.norm(), None)?, phase)),
        }
    }

    fn coefficients(&self, t: f64) -> Result<Pointwise> {
        let (prof, phase) = self.profile_at(t)?;
        let spec = self.solver.nonlinearity();
        let nodes = self.spectral.grid().nodes();
        let (mut p, mut q): (Vec<f64>, Vec<f64>) = prof
            .psi
            .iter()
            .zip(nodes)
            .map(|(w, r)| {
                let s = (w / r).abs();
                (spec.ratio(s), spec.d1(s))
            })
            .unzip();
        let mut damping = None;
        if self.absorber.is_on() {
            for ((a, b), v) in p.iter_mut().zip(q.iter_mut()).zip(self.spectral.potential()) {
                *a += v;
                *b += v;
            }
            damping = Some(self.absorber.profile(self.spectral.grid()));
        }
        Ok(Pointwise { p, q, phase, damping })
    }

    /// The branch field psi(a(t)).
    pub fn branch_field(&self, t: f64) -> Result<RadialField> {
        let (prof, phase) = self.profile_at(t)?;
        RadialField::from_values(self.spectral.grid(), prof.psi.iter().map(|x| phase * x).collect())
    }

    /// -i (H zeta + F1(psi(a(t))) zeta)
    pub fn apply_generator(&self, zeta: &RadialField, t: f64) -> Result<RadialField> {
        let psi = self.branch_field(t)?;
        let f1 = EffectivePotentials::tabulate(&psi, self.solver.nonlinearity()).apply(zeta);
        let mut out = self.spectral.apply(zeta);
        out += &f1;
        Ok(out.scaled(Complex64::new(0.0, -1.0)))
    }

    /// Omega(t, s) applied to each v, reported at each of `times` (sorted,
    /// all on the same side of s).
    pub fn run(&self, vs: &[RadialField], s: f64, times: &[f64]) -> Result<Vec<Vec<RadialField>>> {
        if self.absorber.is_on() {
            return split_run(Linear::Kinetic(self.spectral.grid()), vs, s, times, self.dt_max, |t| {
                self.coefficients(t)
            });
        }
        if self.solver.nonlinearity().is_zero() {
            let refs: Vec<&RadialField> = vs.iter().collect();
            return Ok(times
                .iter()
                .map(|&t| crate::hamiltonian::propagate_h_many(&refs, t - s, self.spectral))
                .collect());
        }
        split_run(Linear::Eigenbasis(self.spectral), vs, s, times, self.dt_max, |t| self.coefficients(t))
    }

    pub fn evolve(&self, v: &RadialField, s: f64, t: f64) -> Result<RadialField> {
        Ok(self.run(std::slice::from_ref(v), s, &[t])?.remove(0).remove(0))
    }

    /// T(t, s) v = P_c Omega(t, s) v - exp(-i H (t - s)) P_c v.
    pub fn apply_t(&self, v: &RadialField, s: f64, t: f64) -> Result<RadialField> {
        let omega = self.evolve(v, s, t)?;
        let free = propagate_h(&project_continuous(v, self.spectral), t - s, self.spectral);
        Ok(&project_continuous(&omega, self.spectral) - &free)
    }
}

/// Omega(t, s) v for a single field.
pub fn evolve_linearized(
    v: &RadialField,
    s: f64,
    t: f64,
    path: BranchPath,
    spectral: &SpectralData,
    spec: NonlinearitySpec,
    dt_max: f64,
) -> Result<RadialField> {
    let solver = BranchSolver::new(spectral, spec);
    LinearizedFlow::new(spectral, &solver, path, dt_max)?.evolve(v, s, t)
}
