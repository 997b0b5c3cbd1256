//! The branch of small nonlinear bound states bifurcating from the ground
//! state of H.
//!
//! For real rho > 0 the profile is Psi(rho) = rho psi_0 + h(rho) with h in
//! the continuous subspace, solving
//!
//!   (H - E) Psi + g(Psi) = 0,   E = E_0 + <psi_0, g(Psi)> / rho,
//!
//! by the fixed-point map h = -(H - E)^{-1} P_c g(Psi). Complex amplitudes are
//! obtained by gauge rotation: psi(a) = a/|a| Psi(|a|).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RadialField;
use crate::hamiltonian::{apply_resolvent, refine_tail, Potential, SpectralData};
use crate::linalg::{linear_fit, TridiagonalLu};
use crate::nonlinearity::NonlinearitySpec;

/// Below this amplitude the branch is replaced by its linear limit.
pub const TINY_AMPLITUDE: f64 = 1e-14;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    FixedPoint,
    Newton,
    LinearLimit,
}

/// Real branch profile at amplitude rho with its first two rho-derivatives.
/// Vectors are stored values (r times point values).
#[derive(Clone, Debug)]
pub struct RealProfile {
    pub rho: f64,
    pub energy: f64,
    /// E - E_0, kept separately to avoid cancellation.
    pub energy_shift: f64,
    pub psi: Vec<f64>,
    pub h: Vec<f64>,
    pub d_psi: Vec<f64>,
    pub d_energy: f64,
    pub dd_psi: Vec<f64>,
    pub dd_energy: f64,
    /// Ratio of the second to the first fixed-point increment (0 for Newton).
    pub contraction: f64,
    pub iterations: usize,
    /// ||(H - E) Psi + g(Psi)|| / ||Psi||
    pub residual: f64,
    pub method: SolveMethod,
}

impl RealProfile {
    /// Phi = Psi / rho and its first two derivatives in rho.
    pub fn normalized(&self, ground: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = ground.len();
        if self.rho < TINY_AMPLITUDE {
            return (ground.to_vec(), vec![0.0; n], vec![0.0; n]);
        }
        let r = self.rho;
        let d_psi0: Vec<f64> = self.d_psi.iter().zip(ground).map(|(a, b)| a - b).collect();
        let phi: Vec<f64> = ground.iter().zip(&self.h).map(|(g, h)| g + h / r).collect();
        let dphi: Vec<f64> = d_psi0.iter().zip(&self.h).map(|(dh, h)| (dh - h / r) / r).collect();
        let ddphi: Vec<f64> = self.dd_psi.iter().zip(&dphi).map(|(ddh, dp)| (ddh - 2.0 * dp) / r).collect();
        (phi, dphi, ddphi)
    }
}

/// Branch point at complex amplitude a, with the real-linear derivatives of
/// psi in a = a1 + i a2.
#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub a: Complex64,
    pub energy: f64,
    pub energy_shift: f64,
    pub psi: RadialField,
    pub h: RadialField,
    /// d psi / d a1 and d psi / d a2.
    pub d_psi: [RadialField; 2],
    /// second derivatives d^2 psi / d a_j d a_k (symmetric).
    pub dd_psi: [[RadialField; 2]; 2],
    /// dE/d|a|
    pub d_energy: f64,
    pub residual: f64,
    pub contraction: f64,
    pub profile: RealProfile,
}

#[derive(Clone, Debug)]
pub struct BranchOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub refine_tails: bool,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions { tolerance: 1e-14, max_iterations: 200, refine_tails: true }
    }
}

pub struct BranchSolver<'a> {
    spectral: &'a SpectralData,
    spec: NonlinearitySpec,
    options: BranchOptions,
    ground: Vec<f64>,
    measure: f64,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl<'a> BranchSolver<'a> {
    pub fn new(spectral: &'a SpectralData, spec: NonlinearitySpec) -> Self {
        Self::with_options(spectral, spec, BranchOptions::default())
    }

    pub fn with_options(spectral: &'a SpectralData, spec: NonlinearitySpec, options: BranchOptions) -> Self {
        let ground = spectral.ground_state().real_parts();
        let measure = 4.0 * PI * spectral.grid().dr();
        BranchSolver { spectral, spec, options, ground, measure }
    }

    pub fn spectral(&self) -> &'a SpectralData {
        self.spectral
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.spec
    }

    pub fn ground(&self) -> &[f64] {
        &self.ground
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.measure
    }

    fn project(&self, x: &mut [f64]) {
        let c = self.dot(&self.ground, x);
        for (v, g) in x.iter_mut().zip(&self.ground) {
            *v -= c * g;
        }
    }

    /// Pointwise maps on stored values: g(Psi), g'(Psi) and g''(Psi) as
    /// multipliers (the last two act on stored values of perturbations).
    fn nonlinear_terms(&self, psi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nodes = self.spectral.grid().nodes();
        let mut g = Vec::with_capacity(psi.len());
        let mut d1 = Vec::with_capacity(psi.len());
        let mut d2 = Vec::with_capacity(psi.len());
        for (w, r) in psi.iter().zip(nodes) {
            let u = w / r;
            let s = u.abs();
            let sign = if u < 0.0 { -1.0 } else { 1.0 };
            g.push(w * self.spec.ratio(s));
            d1.push(self.spec.d1(s));
            // g'' is odd in u; acting on r-scaled perturbations it picks up 1/r.
            d2.push(sign * self.spec.d2(s) / r);
        }
        (g, d1, d2)
    }

    /// Solver for (H - E)^{-1} P_c on real vectors.
    fn resolvent(&self, energy_shift: f64) -> Result<Resolvent<'_, 'a>> {
        let energy = self.spectral.ground_energy() + energy_shift;
        if energy >= self.spectral.eigenvalues()[1] {
            return Err(Error::EnergyInSpectrum { energy, distance: energy - self.spectral.eigenvalues()[1] });
        }
        let lu = if energy_shift.abs() > 1e-13 * self.spectral.ground_energy().abs() {
            Some(self.spectral.operator().factor_shifted(energy))
        } else {
            None
        };
        Ok(Resolvent { solver: self, energy, lu })
    }

    /// Solve the real branch at amplitude rho > 0, optionally warm-started.
    pub fn solve_profile(&self, rho: f64, warm: Option<&RealProfile>) -> Result<RealProfile> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Precondition(format!("amplitude must be finite and >= 0, got {rho}")));
        }
        let n = self.ground.len();
        if rho < TINY_AMPLITUDE || self.spec.is_zero() {
            return Ok(self.linear_limit(rho));
        }
        let mut h = match warm {
            Some(w) if w.rho > 0.0 => {
                let s = (rho / w.rho).powf(2.0 + self.spec.alpha1);
                w.h.iter().map(|v| v * s).collect()
            }
            _ => vec![0.0; n],
        };
        let mut psi = vec![0.0; n];
        let mut increments: Vec<f64> = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..self.options.max_iterations {
            iterations = it + 1;
            for j in 0..n {
                psi[j] = rho * self.ground[j] + h[j];
            }
            let (g, _, _) = self.nonlinear_terms(&psi);
            let energy_shift = self.dot(&self.ground, &g) / rho;
            if !energy_shift.is_finite() {
                break;
            }
            let res = match self.resolvent(energy_shift) {
                Ok(r) => r,
                Err(_) => break,
            };
            let mut h_new: Vec<f64> = g.iter().map(|v| -v).collect();
            res.solve(&mut h_new);
            let diff = h_new.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            h = h_new;
            increments.push(diff);
            let scale = norm2(&psi);
            if diff <= self.options.tolerance * scale {
                converged = true;
                break;
            }
            if increments.len() >= 4 {
                let k = increments.len();
                if increments[k - 1] > 0.9 * increments[k - 2] && increments[k - 2] > 0.9 * increments[k - 3] {
                    break;
                }
            }
            if !diff.is_finite() {
                break;
            }
        }
        let contraction =
            if increments.len() >= 2 && increments[0] > 0.0 { increments[1] / increments[0] } else { 0.0 };
        let mut profile = if converged {
            for j in 0..n {
                psi[j] = rho * self.ground[j] + h[j];
            }
            let (g, _, _) = self.nonlinear_terms(&psi);
            let energy_shift = self.dot(&self.ground, &g) / rho;
            self.finish(rho, energy_shift, psi, contraction, iterations, SolveMethod::FixedPoint)?
        } else {
            let start = warm.filter(|w| w.rho > 0.0).map(|w| {
                let s = rho / w.rho;
                (w.psi.iter().map(|v| v * s).collect::<Vec<f64>>(), w.energy_shift * s.powf(1.0 + self.spec.alpha1))
            });
            let (psi0, shift0) = start.unwrap_or_else(|| {
                let p: Vec<f64> = self.ground.iter().map(|g| rho * g).collect();
                let (g, _, _) = self.nonlinear_terms(&p);
                let s = self.dot(&self.ground, &g) / rho;
                (p, s)
            });
            self.newton(rho, psi0, shift0, contraction)?
        };
        profile.contraction = contraction;
        Ok(profile)
    }

    fn linear_limit(&self, rho: f64) -> RealProfile {
        let n = self.ground.len();
        RealProfile {
            rho,
            energy: self.spectral.ground_energy(),
            energy_shift: 0.0,
            psi: self.ground.iter().map(|g| rho * g).collect(),
            h: vec![0.0; n],
            d_psi: self.ground.clone(),
            d_energy: 0.0,
            dd_psi: vec![0.0; n],
            dd_energy: 0.0,
            contraction: 0.0,
            iterations: 0,
            residual: 0.0,
            method: SolveMethod::LinearLimit,
        }
    }

    /// Newton iteration on (Psi, E) with the constraint <psi_0, Psi> = rho,
    /// used when the fixed-point map stops contracting.
    fn newton(&self, rho: f64, mut psi: Vec<f64>, mut shift: f64, contraction: f64) -> Result<RealProfile> {
        let e0 = self.spectral.ground_energy();
        let op = self.spectral.operator();
        for it in 0..60 {
            let energy = e0 + shift;
            let (g, d1, _) = self.nonlinear_terms(&psi);
            let hp = op.apply_real(&psi);
            let f: Vec<f64> = (0..psi.len()).map(|j| hp[j] - energy * psi[j] + g[j]).collect();
            let constraint = self.dot(&self.ground, &psi) - rho;
            let scale = norm2(&psi);
            let fnorm = norm2(&f);
            if !fnorm.is_finite() {
                break;
            }
            if fnorm <= 1e-13 * scale * op.off.abs() && constraint.abs() <= 1e-14 * rho {
                return self.finish(rho, shift, psi, contraction, it, SolveMethod::Newton);
            }
            let diag: Vec<f64> = op.diag.iter().zip(&d1).map(|(a, d)| a - energy + d).collect();
            let lu = TridiagonalLu::factor(&diag, op.off);
            let mut x1: Vec<f64> = f.iter().map(|v| -v).collect();
            lu.solve_real_in_place(&mut x1);
            let mut x2 = psi.clone();
            lu.solve_real_in_place(&mut x2);
            let denom = self.dot(&self.ground, &x2);
            let de = (-constraint - self.dot(&self.ground, &x1)) / denom;
            for j in 0..psi.len() {
                psi[j] += x1[j] + de * x2[j];
            }
            shift += de;
        }
        Err(Error::BranchDiverged { amplitude: rho, reason: "fixed point and Newton both failed".into() })
    }

    fn finish(
        &self,
        rho: f64,
        energy_shift: f64,
        mut psi: Vec<f64>,
        contraction: f64,
        iterations: usize,
        method: SolveMethod,
    ) -> Result<RealProfile> {
        let energy = self.spectral.ground_energy() + energy_shift;
        if self.options.refine_tails && rho > 0.0 {
            let nodes = self.spectral.grid().nodes();
            let extra: Vec<f64> = psi.iter().zip(nodes).map(|(w, r)| self.spec.ratio((w / r).abs())).collect();
            refine_tail(self.spectral.operator(), energy, Some(&extra), &mut psi);
        }
        let h: Vec<f64> = psi.iter().zip(&self.ground).map(|(p, g)| p - rho * g).collect();
        let (g, _, _) = self.nonlinear_terms(&psi);
        let hp = self.spectral.operator().apply_real(&psi);
        let r: Vec<f64> = (0..psi.len()).map(|j| hp[j] - energy * psi[j] + g[j]).collect();
        let residual = norm2(&r) / norm2(&psi);
        let mut profile = RealProfile {
            rho,
            energy,
            energy_shift,
            psi,
            h,
            d_psi: Vec::new(),
            d_energy: 0.0,
            dd_psi: Vec::new(),
            dd_energy: 0.0,
            contraction,
            iterations,
            residual,
            method,
        };
        self.tangents(&mut profile)?;
        Ok(profile)
    }

    /// First and second rho-derivatives of Psi and E.
    fn tangents(&self, p: &mut RealProfile) -> Result<()> {
        if self.tangents_fixed_point(p).is_ok() {
            return Ok(());
        }
        self.tangents_bordered(p)
    }

    /// Tangents from the differentiated fixed-point equations:
    ///   h'  = R(E) [E' h - P_c g'(Psi) Psi'],
    ///   E'  = (<psi_0, g'(Psi) Psi'> - (E - E_0)) / rho,
    /// and similarly for the second derivatives.
    pub fn tangents_fixed_point(&self, p: &mut RealProfile) -> Result<()> {
        let n = p.psi.len();
        let rho = p.rho;
        let (_, d1, d2) = self.nonlinear_terms(&p.psi);
        let res = self.resolvent(p.energy_shift)?;
        let tol = self.options.tolerance;

        let mut dh = vec![0.0; n];
        let mut de = 0.0;
        let mut converged = false;
        let mut last = f64::INFINITY;
        for _ in 0..self.options.max_iterations {
            let q: Vec<f64> = (0..n).map(|j| d1[j] * (self.ground[j] + dh[j])).collect();
            de = (self.dot(&self.ground, &q) - p.energy_shift) / rho;
            let mut rhs: Vec<f64> = (0..n).map(|j| de * p.h[j] - q[j]).collect();
            res.solve(&mut rhs);
            let diff = rhs.iter().zip(&dh).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            dh = rhs;
            if diff <= tol * norm2(&self.ground) {
                converged = true;
                break;
            }
            if !(diff < 0.9 * last) && last.is_finite() {
                break;
            }
            last = diff;
        }
        if !converged {
            return Err(Error::BranchDiverged { amplitude: rho, reason: "tangent iteration stalled".into() });
        }
        let dpsi: Vec<f64> = (0..n).map(|j| self.ground[j] + dh[j]).collect();
        let curv: Vec<f64> = (0..n).map(|j| d2[j] * dpsi[j] * dpsi[j]).collect();
        let curv_ground = self.dot(&self.ground, &curv);

        let mut ddh = vec![0.0; n];
        let mut dde = 0.0;
        converged = false;
        last = f64::INFINITY;
        for _ in 0..self.options.max_iterations {
            let lin: Vec<f64> = (0..n).map(|j| d1[j] * ddh[j]).collect();
            dde = (self.dot(&self.ground, &lin) + curv_ground - 2.0 * de) / rho;
            let mut rhs: Vec<f64> = (0..n).map(|j| dde * p.h[j] + 2.0 * de * dh[j] - curv[j] - lin[j]).collect();
            res.solve(&mut rhs);
            let diff = rhs.iter().zip(&ddh).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            ddh = rhs;
            if diff <= tol * norm2(&self.ground) {
                converged = true;
                break;
            }
            if !(diff < 0.9 * last) && last.is_finite() {
                break;
            }
            last = diff;
        }
        if !converged {
            return Err(Error::BranchDiverged { amplitude: rho, reason: "second tangent iteration stalled".into() });
        }
        p.d_psi = dpsi;
        p.d_energy = de;
        p.dd_psi = ddh;
        p.dd_energy = dde;
        Ok(())
    }

    /// Tangents from the bordered linear systems
    ///   L+ Psi' = E' Psi,            <psi_0, Psi'> = 1,
    ///   L+ Psi'' = E'' Psi + 2 E' Psi' - g''(Psi) Psi'^2,   <psi_0, Psi''> = 0,
    /// with L+ = H - E + g'(Psi).
    pub fn tangents_bordered(&self, p: &mut RealProfile) -> Result<()> {
        let n = p.psi.len();
        let op = self.spectral.operator();
        let (_, d1, d2) = self.nonlinear_terms(&p.psi);
        let diag: Vec<f64> = op.diag.iter().zip(&d1).map(|(a, d)| a - p.energy + d).collect();
        let lu = TridiagonalLu::factor(&diag, op.off);
        let mut x1 = p.psi.clone();
        lu.solve_real_in_place(&mut x1);
        let c1 = self.dot(&self.ground, &x1);
        if !(c1.is_finite() && c1 != 0.0) {
            return Err(Error::BranchDiverged { amplitude: p.rho, reason: "singular linearization".into() });
        }
        let de = 1.0 / c1;
        let dpsi: Vec<f64> = x1.iter().map(|v| v * de).collect();
        let mut x2: Vec<f64> = (0..n).map(|j| 2.0 * de * dpsi[j] - d2[j] * dpsi[j] * dpsi[j]).collect();
        lu.solve_real_in_place(&mut x2);
        let dde = -self.dot(&self.ground, &x2) / c1;
        p.dd_psi = (0..n).map(|j| dde * x1[j] + x2[j]).collect();
        p.d_psi = dpsi;
        p.d_energy = de;
        p.dd_energy = dde;
        Ok(())
    }

    /// Branch point at complex amplitude a.
    pub fn solve_point(&self, a: Complex64, warm: Option<&RealProfile>) -> Result<BranchPoint> {
        let profile = self.solve_profile(a.norm(), warm)?;
        Ok(self.point_from_profile(a, profile))
    }

    /// Assemble the complex branch point at a (with |a| = profile.rho).
    pub fn point_from_profile(&self, a: Complex64, profile: RealProfile) -> BranchPoint {
        let grid = self.spectral.grid();
        let rho = profile.rho;
        let to_field = |v: &[f64], c: Complex64| {
            RadialField::from_values(grid, v.iter().map(|x| c * x).collect()).expect("grid length")
        };
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let e = [one, i];
        let (phi, dphi, ddphi) = profile.normalized(&self.ground);
        let (psi, h) = if rho < TINY_AMPLITUDE {
            (to_field(&self.ground, a), RadialField::zeros(grid))
        } else {
            let phase = a / rho;
            (to_field(&profile.psi, phase), to_field(&profile.h, phase))
        };
        let nvec = if rho < TINY_AMPLITUDE { [0.0, 0.0] } else { [a.re / rho, a.im / rho] };
        let combine = |terms: &[(&[f64], Complex64)]| {
            let vals = (0..self.ground.len()).map(|j| terms.iter().map(|(v, c)| c * v[j]).sum()).collect();
            RadialField::from_values(grid, vals).expect("grid length")
        };
        let d_psi = [0, 1].map(|j| combine(&[(&phi, e[j]), (&dphi, a * nvec[j])]));
        let dd = |j: usize, k: usize| {
            let delta = if j == k { 1.0 } else { 0.0 };
            let curv = if rho < TINY_AMPLITUDE { 0.0 } else { (delta - nvec[j] * nvec[k]) / rho };
            combine(&[(&dphi, e[j] * nvec[k] + e[k] * nvec[j] + a * curv), (&ddphi, a * nvec[j] * nvec[k])])
        };
        let d01 = dd(0, 1);
        let dd_psi = [[dd(0, 0), d01.clone()], [d01, dd(1, 1)]];
        BranchPoint {
            a,
            energy: profile.energy,
            energy_shift: profile.energy_shift,
            psi,
            h,
            d_psi,
            dd_psi,
            d_energy: profile.d_energy,
            residual: profile.residual,
            contraction: profile.contraction,
            profile,
        }
    }

    /// Profiles at log-spaced amplitudes, each warm-started from the last.
    pub fn sample(&self, a_min: f64, a_max: f64, count: usize) -> Result<Vec<RealProfile>> {
        if !(a_min > 0.0 && a_max >= a_min && a_max.is_finite()) || count == 0 {
            return Err(Error::Precondition(format!(
                "need 0 < a_min <= a_max and count > 0, got [{a_min}, {a_max}] x {count}"
            )));
        }
        let mut out: Vec<RealProfile> = Vec::with_capacity(count);
        for k in 0..count {
            let t = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
            let rho = a_min * (a_max / a_min).powf(t);
            let p = self.solve_profile(rho, out.last())?;
            out.push(p);
        }
        Ok(out)
    }

    /// Largest amplitude (on a geometric ladder from `start`) at which the
    /// cold-started fixed-point map still contracts by at least a factor two.
    pub fn validity_radius(&self, start: f64, ratio: f64, max_steps: usize) -> f64 {
        let mut best = 0.0;
        let mut rho = start;
        for _ in 0..max_steps {
            match self.solve_profile(rho, None) {
                Ok(p) if p.method == SolveMethod::FixedPoint && p.contraction < 0.5 => best = rho,
                _ => break,
            }
            rho *= ratio;
        }
        best
    }
}

struct Resolvent<'s, 'a> {
    solver: &'s BranchSolver<'a>,
    energy: f64,
    lu: Option<TridiagonalLu>,
}

impl Resolvent<'_, '_> {
    /// x <- (H - E)^{-1} P_c x
    fn solve(&self, x: &mut [f64]) {
        self.solver.project(x);
        match &self.lu {
            Some(lu) => lu.solve_real_in_place(x),
            None => {
                let spectral = self.solver.spectral;
                let f = RadialField::from_real(spectral.grid(), x).expect("grid length");
                let y = apply_resolvent(&f, self.energy, spectral).expect("energy below the continuum");
                for (a, b) in x.iter_mut().zip(y.values()) {
                    *a = b.re;
                }
            }
        }
        self.solver.project(x);
    }
}

/// Solve the branch point at a (fresh solver, no warm start).
pub fn solve_branch_point(a: Complex64, spectral: &SpectralData, spec: &NonlinearitySpec) -> Result<BranchPoint> {
    BranchSolver::new(spectral, *spec).solve_point(a, None)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchScalings {
    /// Fitted p in |E - E_0| ~ |a|^p.
    pub energy_exponent: f64,
    /// Fitted q in ||h||_2 ~ |a|^q.
    pub correction_exponent: f64,
    pub energy_r_squared: f64,
    pub correction_r_squared: f64,
    pub expected_energy_exponent: f64,
    pub expected_correction_exponent: f64,
    pub samples: usize,
}

pub fn fit_branch_scalings(profiles: &[RealProfile], spec: &NonlinearitySpec, measure: f64) -> Result<BranchScalings> {
    let usable: Vec<&RealProfile> = profiles.iter().filter(|p| p.rho > 0.0 && p.energy_shift != 0.0).collect();
    let span = if usable.is_empty() {
        0.0
    } else {
        let lo = usable.iter().map(|p| p.rho).fold(f64::INFINITY, f64::min);
        let hi = usable.iter().map(|p| p.rho).fold(0.0, f64::max);
        (hi / lo).log10()
    };
    if usable.len() < 6 || span < 1.0 - 1e-9 {
        return Err(Error::InsufficientSamples { needed: 6, got: usable.len() });
    }
    let x: Vec<f64> = usable.iter().map(|p| p.rho.ln()).collect();
    let ye: Vec<f64> = usable.iter().map(|p| p.energy_shift.abs().ln()).collect();
    let yh: Vec<f64> = usable.iter().map(|p| (norm2(&p.h) * measure.sqrt()).ln()).collect();
    let (se, _, re) = linear_fit(&x, &ye);
    let (sh, _, rh) = linear_fit(&x, &yh);
    Ok(BranchScalings {
        energy_exponent: se,
        correction_exponent: sh,
        energy_r_squared: re,
        correction_r_squared: rh,
        expected_energy_exponent: 1.0 + spec.alpha1,
        expected_correction_exponent: 2.0 + spec.alpha1,
        samples: usable.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// Exponential rate squared (A in exp(-sqrt(A) r)).
    pub rate_squared: f64,
    pub r0: f64,
    pub constant: f64,
    /// Smallest relative margin over the checked nodes (negative = violated).
    pub min_margin: f64,
    pub violations: usize,
    pub checked_nodes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub amplitude: f64,
    pub energy: f64,
    pub upper: EnvelopeCheck,
    pub lower: EnvelopeCheck,
    pub gradient: EnvelopeCheck,
}

impl EnvelopeReport {
    pub fn holds(&self) -> bool {
        [&self.upper, &self.lower, &self.gradient].iter().all(|c| c.violations == 0 && c.checked_nodes > 0)
    }
}

/// Rates (as multiples of |E|) used by the envelope checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeRates {
    pub upper: f64,
    pub lower: f64,
    pub gradient: f64,
}

impl Default for EnvelopeRates {
    fn default() -> Self {
        EnvelopeRates { upper: 0.9, lower: 1.1, gradient: 0.9 }
    }
}

const ENVELOPE_TOLERANCE: f64 = 1e-9;

/// Check exponential envelopes for a real positive branch profile:
///   psi <= C e^{-sqrt(A) r},  psi >= C e^{-sqrt(A2) r},  |psi'| <= C e^{-sqrt(A1) r}
/// on [R0, 0.8 R], with R0 chosen beyond the region where the potential and
/// nonlinearity are not negligible.
pub fn check_envelopes(
    profile: &RealProfile,
    spectral: &SpectralData,
    potential: &Potential,
    spec: &NonlinearitySpec,
    rates: &EnvelopeRates,
) -> EnvelopeReport {
    let grid = spectral.grid();
    let nodes = grid.nodes();
    let n = nodes.len();
    let dr = grid.dr();
    let e = profile.energy;
    let abs_e = e.abs();
    let u: Vec<f64> = profile.psi.iter().zip(nodes).map(|(w, r)| w / r).collect();
    let du: Vec<f64> = (0..n)
        .map(|j| {
            let left = if j > 0 { u[j - 1] } else { u[0] };
            let right = if j + 1 < n { u[j + 1] } else { 0.0 };
            if j > 0 {
                (right - left) / (2.0 * dr)
            } else {
                (right - left) / dr
            }
        })
        .collect();
    let r_max = 0.8 * grid.radius();
    let v: Vec<f64> = nodes.iter().map(|&r| potential.value(r)).collect();
    let dv: Vec<f64> = nodes.iter().map(|&r| potential.derivative(r).abs()).collect();
    // First radius beyond which `ok` holds at every node up to r_max.
    let onset = |ok: &dyn Fn(usize) -> bool| -> f64 {
        let mut r0 = nodes[0];
        for j in 0..n {
            if nodes[j] > r_max {
                break;
            }
            if !ok(j) {
                r0 = nodes[(j + 1).min(n - 1)];
            }
        }
        r0
    };

    let a_up = rates.upper * abs_e;
    let r_up = onset(&|j| -e + v[j] + spec.ratio(u[j].abs()) >= a_up);
    let a_grad = rates.gradient * abs_e;
    let r_grad = onset(&|j| -e + v[j] + spec.d1(u[j].abs()) - dv[j] >= a_grad);
    let a_low = rates.lower * abs_e;
    let eps = 0.5 * (a_low - abs_e);
    let r_cond = onset(&|j| v[j] + spec.ratio(u[j].abs()) <= eps);
    let r_low = r_cond.max(4.0 * a_low.sqrt() / (a_low - abs_e));

    let check = |values: &[f64], rate2: f64, r0: f64, upper: bool| -> EnvelopeCheck {
        let k = rate2.sqrt();
        let j0 = nodes.iter().position(|&r| r >= r0).unwrap_or(n);
        let mut check = EnvelopeCheck {
            rate_squared: rate2,
            r0,
            constant: 0.0,
            min_margin: f64::INFINITY,
            violations: 0,
            checked_nodes: 0,
        };
        if j0 >= n || nodes[j0] > r_max {
            return check;
        }
        let c = values[j0].abs() * (k * nodes[j0]).exp();
        check.constant = c;
        for j in j0..n {
            if nodes[j] > r_max {
                break;
            }
            let scaled = values[j].abs() * (k * nodes[j]).exp();
            let margin = if upper { 1.0 - scaled / c } else { scaled / c - 1.0 };
            check.min_margin = check.min_margin.min(margin);
            if margin < -ENVELOPE_TOLERANCE {
                check.violations += 1;
            }
            check.checked_nodes += 1;
        }
        check
    };
    EnvelopeReport {
        amplitude: profile.rho,
        energy: e,
        upper: check(&u, a_up, r_up, true),
        lower: check(&u, a_low, r_low, false),
        gradient: check(&du, a_grad, r_grad, true),
    }
}
