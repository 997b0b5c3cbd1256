//! The linear operator H = -Delta + V on the radial grid and its spectral
//! calculus: eigendecomposition, projection onto the continuous part,
//! resolvents and unitary propagators.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};
use crate::linalg::Tridiagonal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PotentialShape {
    /// V(r) = -depth exp(-r^2 / width^2)
    GaussianWell { width: f64 },
    /// V(r) = -depth exp(-rate r)
    ExponentialWell { rate: f64 },
}

impl PotentialShape {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialShape::GaussianWell { .. } => "gaussian_well",
            PotentialShape::ExponentialWell { .. } => "exponential_well",
        }
    }

    fn profile(&self, r: f64) -> f64 {
        match *self {
            PotentialShape::GaussianWell { width } => -(-(r / width).powi(2)).exp(),
            PotentialShape::ExponentialWell { rate } => -(-rate * r).exp(),
        }
    }

    fn profile_derivative(&self, r: f64) -> f64 {
        match *self {
            PotentialShape::GaussianWell { width } => 2.0 * r / (width * width) * (-(r / width).powi(2)).exp(),
            PotentialShape::ExponentialWell { rate } => rate * (-rate * r).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub shape: PotentialShape,
    pub depth: f64,
}

impl Potential {
    pub fn new(shape: PotentialShape, depth: f64) -> Self {
        Potential { shape, depth }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.depth * self.shape.profile(r)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.depth * self.shape.profile_derivative(r)
    }

    pub fn sample(&self, grid: &RadialGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&r| self.value(r)).collect()
    }

    /// Radius beyond which |V| and |V'| stay below `level`.
    pub fn support_radius(&self, level: f64) -> f64 {
        let mut r = 0.0;
        let mut last = 0.0;
        while r < 1e4 {
            if self.value(r).abs() > level || self.derivative(r).abs() > level {
                last = r;
            }
            r += 0.01;
            if r > last + 50.0 {
                break;
            }
        }
        last
    }
}

/// Discrete H = -d^2/dr^2 + V acting on w = r u.
pub fn hamiltonian_matrix(grid: &RadialGrid, potential: &[f64]) -> Tridiagonal {
    let h2 = 1.0 / (grid.dr() * grid.dr());
    Tridiagonal { diag: potential.iter().map(|v| 2.0 * h2 + v).collect(), off: -h2 }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DepthTuning {
    pub depth: f64,
    /// Smallest depth with one bound state on this grid.
    pub first_threshold: f64,
    /// Smallest depth with two bound states on this grid.
    pub second_threshold: f64,
}

/// Choose a well depth with exactly one bound state, placed at the geometric
/// mean of the two binding thresholds so that neither threshold (where zero
/// energy is resonant) is close.
pub fn tune_well_depth(shape: PotentialShape, grid: &RadialGrid) -> Result<DepthTuning> {
    let bound_states = |depth: f64| {
        let v = Potential::new(shape, depth).sample(grid);
        hamiltonian_matrix(grid, &v).count_below(0.0)
    };
    let threshold = |count: usize| -> Result<f64> {
        let mut hi = 1.0;
        let mut steps = 0;
        while bound_states(hi) < count {
            hi *= 2.0;
            steps += 1;
            if steps > 60 {
                return Err(Error::DepthTuning(format!("no depth yields {count} bound states")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if bound_states(mid) >= count {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    };
    let d1 = threshold(1)?;
    let d2 = threshold(2)?;
    let depth = (d1 * d2).sqrt();
    if bound_states(depth) != 1 {
        return Err(Error::DepthTuning("tuned depth does not give one bound state".into()));
    }
    Ok(DepthTuning { depth, first_threshold: d1, second_threshold: d2 })
}

/// Rebuild the far tail of a decaying solution of (H - E) w = 0 from the
/// Dirichlet wall inward.
///
/// Solutions obtained from dense or global solves are only accurate to
/// round-off relative to their maximum, so their tails are noise once they
/// fall below ~1e-16. The inward recurrence from the wall is stable for the
/// decaying solution, so splicing it in at a node where the solution is still
/// resolved recovers relative accuracy out to R. `extra` is an additional
/// diagonal potential (in w-units) such as a nonlinear term.
pub fn refine_tail(op: &Tridiagonal, energy: f64, extra: Option<&[f64]>, w: &mut [f64]) {
    let n = w.len();
    let peak = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return;
    }
    let ipeak = w.iter().position(|x| x.abs() == peak).unwrap_or(0);
    let level = 1e-6 * peak;
    let Some(offset) = w[ipeak..].iter().rposition(|x| x.abs() >= level) else {
        return;
    };
    let m = ipeak + offset;
    if m + 2 >= n {
        return;
    }
    let mut t = vec![0.0; n + 1];
    t[n - 1] = 1.0;
    let off = op.off;
    for j in (m + 1..n).rev() {
        let d = op.diag[j] - energy + extra.map_or(0.0, |e| e[j]);
        let next = -(d * t[j] + off * t[j + 1]) / off;
        t[j - 1] = next;
        if next.abs() > 1e200 {
            for x in t[j - 1..].iter_mut() {
                *x *= 1e-200;
            }
        }
    }
    if t[m] == 0.0 || !t[m].is_finite() {
        return;
    }
    let scale = w[m] / t[m];
    for j in m + 1..n {
        w[j] = scale * t[j];
    }
}

/// Eigendecomposition of H on the grid.
pub struct SpectralData {
    grid: Arc<RadialGrid>,
    potential: Vec<f64>,
    operator: Tridiagonal,
    eigenvalues: Vec<f64>,
    // Columns are Euclidean-orthonormal eigenvectors in w-space.
    eigenvectors: Mat<f64>,
    ground_state: RadialField,
    ground_energy: f64,
    resonance_ratio: f64,
}

impl std::fmt::Debug for SpectralData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralData")
            .field("n", &self.grid.len())
            .field("radius", &self.grid.radius())
            .field("ground_energy", &self.ground_energy)
            .field("resonance_ratio", &self.resonance_ratio)
            .finish()
    }
}

/// Diagonalize H = -Delta + V. Requires exactly one negative eigenvalue.
pub fn build_spectral(potential: &[f64], grid: &Arc<RadialGrid>) -> Result<SpectralData> {
    let n = grid.len();
    if potential.len() != n {
        return Err(Error::InvalidGrid("potential length differs from grid".into()));
    }
    let op = hamiltonian_matrix(grid, potential);
    let negatives = op.count_below(0.0);
    if negatives != 1 {
        return Err(Error::BoundStateCount(negatives));
    }
    let dense = Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j {
            op.diag[i]
        } else if i + 1 == j || j + 1 == i {
            op.off
        } else {
            0.0
        }
    });
    let evd = dense.self_adjoint_eigen(faer::Side::Lower).map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = evd.S();
    let eigenvalues: Vec<f64> = (0..n).map(|k| s[k]).collect();
    let eigenvectors = evd.U().to_owned();
    let ground_energy = eigenvalues[0];
    if !(ground_energy < 0.0 && eigenvalues[1] >= 0.0) {
        return Err(Error::Eigensolver("inconsistent inertia".into()));
    }

    let mut g: Vec<f64> = (0..n).map(|j| eigenvectors[(j, 0)]).collect();
    let sum: f64 = g.iter().sum();
    if sum < 0.0 {
        g.iter_mut().for_each(|x| *x = -*x);
    }
    refine_tail(&op, ground_energy, None, &mut g);
    let norm = (g.iter().map(|x| x * x).sum::<f64>() * 4.0 * PI * grid.dr()).sqrt();
    g.iter_mut().for_each(|x| *x /= norm);
    let ground_state = RadialField::from_real(grid, &g)?;

    let free_lowest = (PI / grid.radius()).powi(2);
    let resonance_ratio = eigenvalues[1] / free_lowest;
    if resonance_ratio < 0.5 {
        log::warn!(
            "lowest continuum eigenvalue {:.3e} is {:.2} times the free box value; zero energy may be resonant",
            eigenvalues[1],
            resonance_ratio
        );
    }
    Ok(SpectralData {
        grid: grid.clone(),
        potential: potential.to_vec(),
        operator: op,
        eigenvalues,
        eigenvectors,
        ground_state,
        ground_energy,
        resonance_ratio,
    })
}

impl SpectralData {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn operator(&self) -> &Tridiagonal {
        &self.operator
    }

    /// Ascending eigenvalues; index 0 is the ground state.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Mat<f64> {
        &self.eigenvectors
    }

    /// Normalized, strictly positive ground state.
    pub fn ground_state(&self) -> &RadialField {
        &self.ground_state
    }

    pub fn ground_energy(&self) -> f64 {
        self.ground_energy
    }

    /// Lowest continuum eigenvalue divided by the free value (pi/R)^2. Values
    /// well below one indicate a zero-energy resonance.
    pub fn resonance_ratio(&self) -> f64 {
        self.resonance_ratio
    }

    /// k-th eigenfunction normalized in the field inner product.
    pub fn eigenfunction(&self, k: usize) -> RadialField {
        let scale = 1.0 / (4.0 * PI * self.grid.dr()).sqrt();
        let vals: Vec<f64> = (0..self.grid.len()).map(|j| self.eigenvectors[(j, k)] * scale).collect();
        RadialField::from_real(&self.grid, &vals).expect("grid length")
    }

    pub fn apply(&self, f: &RadialField) -> RadialField {
        RadialField::from_values(&self.grid, self.operator.apply(f.values())).expect("grid length")
    }

    /// Apply a function of H given per eigenpair, to several fields at once.
    pub fn apply_function_many(
        &self,
        fields: &[&RadialField],
        multiplier: impl Fn(usize, f64) -> Complex64,
    ) -> Vec<RadialField> {
        let n = self.grid.len();
        let m = fields.len();
        if m == 0 {
            return Vec::new();
        }
        let x = Mat::<f64>::from_fn(n, 2 * m, |j, c| {
            let z = fields[c / 2].values()[j];
            if c % 2 == 0 {
                z.re
            } else {
                z.im
            }
        });
        let mut coeffs = Mat::<f64>::zeros(n, 2 * m);
        matmul(coeffs.as_mut(), Accum::Replace, self.eigenvectors.transpose(), x.as_ref(), 1.0, Par::Seq);
        for k in 0..n {
            let mult = multiplier(k, self.eigenvalues[k]);
            for c in 0..m {
                let z = Complex64::new(coeffs[(k, 2 * c)], coeffs[(k, 2 * c + 1)]) * mult;
                coeffs[(k, 2 * c)] = z.re;
                coeffs[(k, 2 * c + 1)] = z.im;
            }
        }
        let mut y = Mat::<f64>::zeros(n, 2 * m);
        matmul(y.as_mut(), Accum::Replace, self.eigenvectors.as_ref(), coeffs.as_ref(), 1.0, Par::Seq);
        (0..m)
            .map(|c| {
                let vals = (0..n).map(|j| Complex64::new(y[(j, 2 * c)], y[(j, 2 * c + 1)])).collect();
                RadialField::from_values(&self.grid, vals).expect("grid length")
            })
            .collect()
    }

    pub fn apply_function(&self, f: &RadialField, multiplier: impl Fn(usize, f64) -> Complex64) -> RadialField {
        self.apply_function_many(&[f], multiplier).pop().expect("one field")
    }

    /// <psi_0, f>
    pub fn ground_coefficient(&self, f: &RadialField) -> Complex64 {
        self.ground_state.inner(f)
    }
}

/// P_c f = f - <psi_0, f> psi_0.
pub fn project_continuous(f: &RadialField, spectral: &SpectralData) -> RadialField {
    let c = spectral.ground_coefficient(f);
    let mut out = f.clone();
    out.axpy(-c, spectral.ground_state());
    out
}

/// (H - E)^{-1} P_c f via the eigenbasis.
pub fn apply_resolvent(f: &RadialField, energy: f64, spectral: &SpectralData) -> Result<RadialField> {
    let distance = spectral.eigenvalues()[1..].iter().map(|l| (l - energy).abs()).fold(f64::INFINITY, f64::min);
    if distance < 1e-10 {
        return Err(Error::EnergyInSpectrum { energy, distance });
    }
    let g = spectral.apply_function(f, |k, l| {
        if k == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0 / (l - energy), 0.0)
        }
    });
    // The refined ground state differs from the dense eigenvector only in
    // its round-off tail; re-project against the one used by P_c.
    Ok(project_continuous(&g, spectral))
}

/// exp(-i H t) f.
pub fn propagate_h(f: &RadialField, t: f64, spectral: &SpectralData) -> RadialField {
    spectral.apply_function(f, |_, l| Complex64::from_polar(1.0, -l * t))
}

pub fn propagate_h_many(fields: &[&RadialField], t: f64, spectral: &SpectralData) -> Vec<RadialField> {
    spectral.apply_function_many(fields, |_, l| Complex64::from_polar(1.0, -l * t))
}

/// exp(i t Delta) f, the free flow with the same discrete Laplacian.
pub fn propagate_free(f: &RadialField, t: f64) -> RadialField {
    let grid = f.grid();
    let mut c = f.sine_coefficients();
    for (z, mu) in c.iter_mut().zip(grid.laplacian_symbol()) {
        *z *= Complex64::from_polar(1.0, -mu * t);
    }
    RadialField::from_sine_coefficients(grid, &c).expect("grid length")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_propagation_is_unitary() {
        let grid = RadialGrid::new(300, 30.0).unwrap();
        let f = RadialField::from_real_profile(&grid, |r| (-r * r).exp());
        let g = propagate_free(&f, 3.7);
        assert!((g.norm() - f.norm()).abs() < 1e-13);
    }

    #[test]
    fn tail_refinement_keeps_resolved_part() {
        let grid = RadialGrid::new(400, 60.0).unwrap();
        let v = Potential::new(PotentialShape::GaussianWell { width: 1.0 }, 8.0).sample(&grid);
        let op = hamiltonian_matrix(&grid, &v);
        let e = op.lowest_eigenvalue();
        let mut w: Vec<f64> = grid.nodes().iter().map(|r| r * (-(-e).sqrt() * r).exp()).collect();
        let before = w.clone();
        refine_tail(&op, e, None, &mut w);
        assert!(w.iter().all(|x| *x > 0.0));
        assert_eq!(&w[..20], &before[..20]);
    }
}
