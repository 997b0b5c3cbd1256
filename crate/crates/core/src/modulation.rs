//! Decomposition of a field near the branch as u = psi(a) + eta with eta
//! symplectically orthogonal to the tangent space of the branch at a, and
//! the modulation equations for a(t).
//!
//! With phi_1 = -i d2psi and phi_2 = i d1psi the constraint is
//! Re<phi_j, eta> = 0, j = 1, 2.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branch::{BranchPoint, BranchSolver, RealProfile};
use crate::error::{Error, Result};
use crate::grid::RadialField;
use crate::nonlinearity::apply_f2;
use crate::sampling::random_smooth_field;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub a: Complex64,
    pub eta: RadialField,
    pub point: BranchPoint,
    /// Re<phi_j, eta> / (||phi_j|| ||eta||)
    pub pairings: [f64; 2],
    pub iterations: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModulationOptions {
    /// Optional cap on ||u||_2 for fields to be decomposed.
    pub field_cap: Option<f64>,
    /// Optional cap on |a| along the Newton iteration.
    pub amplitude_cap: Option<f64>,
}

pub const MAX_NEWTON_ITERATIONS: usize = 50;
const DET_FLOOR: f64 = 1e-8;

/// The symplectic partners phi_1 = -i d2psi, phi_2 = i d1psi.
pub fn partners(point: &BranchPoint) -> [RadialField; 2] {
    [point.d_psi[1].scaled(-I), point.d_psi[0].scaled(I)]
}

pub struct Modulator<'a> {
    solver: BranchSolver<'a>,
    options: ModulationOptions,
}

impl<'a> Modulator<'a> {
    pub fn new(solver: BranchSolver<'a>) -> Self {
        Modulator { solver, options: ModulationOptions::default() }
    }

    pub fn with_options(solver: BranchSolver<'a>, options: ModulationOptions) -> Self {
        Modulator { solver, options }
    }

    pub fn solver(&self) -> &BranchSolver<'a> {
        &self.solver
    }

    pub fn options(&self) -> &ModulationOptions {
        &self.options
    }

    pub fn set_options(&mut self, options: ModulationOptions) {
        self.options = options;
    }

    /// Decompose u = psi(a) + eta. Newton on the two orthogonality conditions
    /// starting from a = <psi_0, u> unless an initial guess is given.
    pub fn decompose(
        &self,
        u: &RadialField,
        initial: Option<Complex64>,
        warm: Option<&RealProfile>,
    ) -> Result<Decomposition> {
        if let Some(cap) = self.options.field_cap {
            let norm = u.norm();
            if norm > cap {
                return Err(Error::Precondition(format!("||u||_2 = {norm:e} exceeds the cap {cap:e}")));
            }
        }
        let mut a = initial.unwrap_or_else(|| self.solver.spectral().ground_coefficient(u));
        let mut warm_profile: Option<RealProfile> = warm.cloned();
        let scale = u.norm().max(f64::MIN_POSITIVE);
        for it in 0..MAX_NEWTON_ITERATIONS {
            if let Some(cap) = self.options.amplitude_cap {
                if a.norm() > cap {
                    return Err(Error::DecompositionFailed(format!("|a| = {:e} left the cap", a.norm())));
                }
            }
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(Error::DecompositionFailed("Newton iterate is not finite".into()));
            }
            let point = self.solver.solve_point(a, warm_profile.as_ref())?;
            let eta = u - &point.psi;
            let phi = partners(&point);
            let f = [phi[0].real_inner(&eta), phi[1].real_inner(&eta)];
            let dphi = [
                [point.dd_psi[0][1].scaled(-I), point.dd_psi[1][1].scaled(-I)],
                [point.dd_psi[0][0].scaled(I), point.dd_psi[1][0].scaled(I)],
            ];
            let mut jac = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    jac[i][j] = dphi[i][j].real_inner(&eta) - phi[i].real_inner(&point.d_psi[j]);
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < DET_FLOOR {
                return Err(Error::DecompositionFailed(format!("singular Jacobian, det = {det:e}")));
            }
            let d1 = (jac[1][1] * f[0] - jac[0][1] * f[1]) / det;
            let d2 = (-jac[1][0] * f[0] + jac[0][0] * f[1]) / det;
            let step = Complex64::new(d1, d2);
            a -= step;
            warm_profile = Some(point.profile.clone());
            if step.norm() <= 1e-13 * a.norm().max(scale) {
                let point = self.solver.solve_point(a, warm_profile.as_ref())?;
                let eta = u - &point.psi;
                let pairings = pairings(&point, &eta);
                return Ok(Decomposition { a, eta, point, pairings, iterations: it + 1 });
            }
        }
        Err(Error::DecompositionFailed(format!("Newton did not converge in {MAX_NEWTON_ITERATIONS} iterations")))
    }

    /// R_a zeta = zeta + z psi_0, the unique element of the constraint space
    /// with the same continuous part as zeta.
    pub fn apply_ra(&self, zeta: &RadialField, point: &BranchPoint) -> Result<RadialField> {
        apply_ra(zeta, point, self.solver.spectral().ground_state())
    }

    /// Largest scale on a geometric ladder at which every random field of
    /// that L^2 size decomposes.
    pub fn calibrate_field_cap<R: Rng>(&self, rng: &mut R, trials: usize, scales: &[f64]) -> f64 {
        let grid = self.solver.spectral().grid().clone();
        let mut best = 0.0;
        for &s in scales {
            let ok = (0..trials).all(|_| {
                let f = random_smooth_field(&grid, rng);
                let f = f.scaled(Complex64::new(s / f.norm(), 0.0));
                self.decompose(&f, None, None).is_ok()
            });
            if !ok {
                break;
            }
            best = s;
        }
        best
    }
}

pub fn pairings(point: &BranchPoint, eta: &RadialField) -> [f64; 2] {
    let phi = partners(point);
    let en = eta.norm();
    [0, 1].map(|j| {
        let d = phi[j].norm() * en;
        if d > 0.0 {
            phi[j].real_inner(eta) / d
        } else {
            0.0
        }
    })
}

pub fn apply_ra(zeta: &RadialField, point: &BranchPoint, ground: &RadialField) -> Result<RadialField> {
    let c0 = ground.inner(zeta);
    if c0.norm() > 1e-10 * zeta.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition(format!("argument is not in the continuous subspace: <psi_0, zeta> = {c0:e}")));
    }
    let phi = partners(point);
    let c = [phi[0].inner(ground), phi[1].inner(ground)];
    let m = [[c[0].re, -c[0].im], [c[1].re, -c[1].im]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < DET_FLOOR {
        return Err(Error::GroundStateInSubspace(det));
    }
    let rhs = [-phi[0].real_inner(zeta), -phi[1].real_inner(zeta)];
    let x = (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det;
    let y = (-m[1][0] * rhs[0] + m[0][0] * rhs[1]) / det;
    let mut out = zeta.clone();
    out.axpy(Complex64::new(x, y), ground);
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulationRhs {
    /// Diagonal pairing formula: beta_j = Re<phi_j, -i F2> / Re<phi_j, d_j psi>.
    pub beta: [f64; 2],
    /// Solution of the full 2x2 system including the eta-dependent terms,
    /// b = a' + i E a exactly.
    pub full: Complex64,
}

impl ModulationRhs {
    pub fn b(&self) -> Complex64 {
        Complex64::new(self.beta[0], self.beta[1])
    }
}

/// Right-hand side of a' + i E a = b for the decomposition (point, eta).
pub fn modulation_rhs(
    point: &BranchPoint,
    eta: &RadialField,
    spec: &crate::nonlinearity::NonlinearitySpec,
) -> Result<ModulationRhs> {
    let f2 = apply_f2(&point.psi, eta, spec).scaled(-I);
    let phi = partners(point);
    let proj = [phi[0].real_inner(&f2), phi[1].real_inner(&f2)];
    let d = [phi[0].real_inner(&point.d_psi[0]), phi[1].real_inner(&point.d_psi[1])];
    for den in d {
        if den < 0.25 {
            return Err(Error::DegeneratePairing(den));
        }
    }
    let beta = [proj[0] / d[0], proj[1] / d[1]];
    let dphi = [
        [point.dd_psi[0][1].scaled(-I), point.dd_psi[1][1].scaled(-I)],
        [point.dd_psi[0][0].scaled(I), point.dd_psi[1][0].scaled(I)],
    ];
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = phi[i].real_inner(&point.d_psi[j]) - dphi[i][j].real_inner(eta);
        }
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let b1 = (m[1][1] * proj[0] - m[0][1] * proj[1]) / det;
    let b2 = (-m[1][0] * proj[0] + m[0][0] * proj[1]) / det;
    Ok(ModulationRhs { beta, full: Complex64::new(b1, b2) })
}
