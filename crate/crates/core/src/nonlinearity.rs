//! The gauge-invariant nonlinearity g(z) = (l1 |z|^{1+a1} + l2 |z|^{1+a2}) z,
//! its real-linearization and the second-order remainder.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fourier_l1_norm, FourierL1};
use crate::grid::RadialField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl NonlinearitySpec {
    /// Requires 0 < alpha1 <= alpha2 < 3.
    pub fn new(alpha1: f64, alpha2: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        let ok = alpha1 > 0.0 && alpha1 <= alpha2 && alpha2 < 3.0;
        if !ok {
            return Err(Error::InvalidNonlinearity(format!(
                "need 0 < alpha1 <= alpha2 < 3, got alpha1 = {alpha1}, alpha2 = {alpha2}"
            )));
        }
        if !(lambda1.is_finite() && lambda2.is_finite()) {
            return Err(Error::InvalidNonlinearity("coefficients must be finite".into()));
        }
        Ok(NonlinearitySpec { alpha1, alpha2, lambda1, lambda2 })
    }

    /// A single power l |z|^{1+a} z.
    pub fn single(alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(alpha, alpha, lambda, 0.0)
    }

    /// g identically zero (exponents are placeholders).
    pub fn zero() -> Self {
        NonlinearitySpec { alpha1: 1.0, alpha2: 1.0, lambda1: 0.0, lambda2: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0
    }

    fn terms(&self) -> [(f64, f64); 2] {
        [(self.lambda1, self.alpha1), (self.lambda2, self.alpha2)]
    }

    /// g(s)/s = l1 s^{1+a1} + l2 s^{1+a2} for s = |z| >= 0.
    pub fn ratio(&self, s: f64) -> f64 {
        self.terms().iter().filter(|(l, _)| *l != 0.0).map(|(l, a)| l * s.powf(1.0 + a)).sum()
    }

    pub fn value(&self, z: Complex64) -> Complex64 {
        z * self.ratio(z.norm())
    }

    /// Derivatives of the real profile g(s) = ratio(s) s at s >= 0.
    pub fn d1(&self, s: f64) -> f64 {
        self.terms().iter().filter(|(l, _)| *l != 0.0).map(|(l, a)| l * (2.0 + a) * s.powf(1.0 + a)).sum()
    }

    pub fn d2(&self, s: f64) -> f64 {
        self.terms().iter().filter(|(l, _)| *l != 0.0).map(|(l, a)| l * (2.0 + a) * (1.0 + a) * s.powf(*a)).sum()
    }

    pub fn d3(&self, s: f64) -> f64 {
        self.terms()
            .iter()
            .filter(|(l, _)| *l != 0.0)
            .map(|(l, a)| l * (2.0 + a) * (1.0 + a) * a * s.powf(a - 1.0))
            .sum()
    }

    /// Wirtinger derivatives (g_u, g_ubar) at z. g_u is real for this family.
    pub fn wirtinger(&self, z: Complex64) -> (f64, Complex64) {
        let s = z.norm();
        let mut gu = 0.0;
        let mut mag = 0.0;
        for (l, a) in self.terms() {
            if l != 0.0 {
                let p = l * s.powf(1.0 + a);
                gu += 0.5 * (3.0 + a) * p;
                mag += 0.5 * (1.0 + a) * p;
            }
        }
        let phase2 = if s > 0.0 { (z / s) * (z / s) } else { Complex64::new(1.0, 0.0) };
        (gu, phase2 * mag)
    }

    /// Constant in |g''(s)| <= C (s^{a1} + s^{a2}).
    pub fn second_derivative_constant(&self) -> f64 {
        (2.0 + self.alpha2) * (1.0 + self.alpha2) * (self.lambda1.abs() + self.lambda2.abs())
    }
}

/// g applied to a field (acting on point values u = w/r).
pub fn evaluate_g(f: &RadialField, spec: &NonlinearitySpec) -> RadialField {
    let nodes = f.grid().nodes();
    let vals = f.values().iter().zip(nodes).map(|(w, r)| w * spec.ratio(w.norm() / r)).collect();
    RadialField::from_values(f.grid(), vals).expect("grid length")
}

/// Tabulated linearization coefficients around a profile psi.
#[derive(Clone, Debug)]
pub struct EffectivePotentials {
    pub g_u: Vec<f64>,
    pub g_ubar: Vec<Complex64>,
}

impl EffectivePotentials {
    pub fn tabulate(psi: &RadialField, spec: &NonlinearitySpec) -> Self {
        let nodes = psi.grid().nodes();
        let (g_u, g_ubar) = psi.values().iter().zip(nodes).map(|(w, r)| spec.wirtinger(w / r)).unzip();
        EffectivePotentials { g_u, g_ubar }
    }

    /// F1 zeta = g_u zeta + g_ubar conj(zeta). The map is real-linear and
    /// commutes with multiplication by r, so it acts on stored values as is.
    pub fn apply(&self, zeta: &RadialField) -> RadialField {
        let vals = zeta
            .values()
            .iter()
            .zip(self.g_u.iter().zip(&self.g_ubar))
            .map(|(z, (a, b))| z * a + b * z.conj())
            .collect();
        RadialField::from_values(zeta.grid(), vals).expect("grid length")
    }
}

pub fn apply_f1(psi: &RadialField, zeta: &RadialField, spec: &NonlinearitySpec) -> RadialField {
    EffectivePotentials::tabulate(psi, spec).apply(zeta)
}

/// F2(psi, eta) = g(psi + eta) - g(psi) - F1(psi) eta.
pub fn apply_f2(psi: &RadialField, eta: &RadialField, spec: &NonlinearitySpec) -> RadialField {
    let nodes = psi.grid().nodes();
    let vals = psi
        .values()
        .iter()
        .zip(eta.values())
        .zip(nodes)
        .map(|((p, e), r)| {
            let s = p + e;
            let up = p / r;
            let (gu, gb) = spec.wirtinger(up);
            s * spec.ratio(s.norm() / r) - p * spec.ratio(up.norm()) - e * gu - gb * e.conj()
        })
        .collect();
    RadialField::from_values(psi.grid(), vals).expect("grid length")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct H2Report {
    /// Transform of g'(psi), the coefficient of the linearization.
    pub derivative: FourierL1,
    /// Transform of g(psi)/psi.
    pub ratio: FourierL1,
    pub finite: bool,
}

/// Check that g'(psi) and g(psi)/psi have Fourier transforms in L^1 for a
/// real positive profile psi.
pub fn check_h2(psi: &RadialField, spec: &NonlinearitySpec) -> Result<H2Report> {
    let grid = psi.grid();
    let mut pts = Vec::with_capacity(psi.len());
    for (j, z) in psi.point_values().iter().enumerate() {
        if !(z.re > 0.0) || z.im.abs() > 1e-12 * z.re.abs().max(1e-300) {
            return Err(Error::InvalidProfile(format!("profile must be real and positive; node {j} has value {z}")));
        }
        pts.push(z.re);
    }
    let d: Vec<f64> = pts.iter().map(|&s| spec.d1(s)).collect();
    let q: Vec<f64> = pts.iter().map(|&s| spec.ratio(s)).collect();
    let derivative = fourier_l1_norm(grid, &d);
    let ratio = fourier_l1_norm(grid, &q);
    let finite = derivative.finite && ratio.finite;
    Ok(H2Report { derivative, ratio, finite })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothnessSample {
    /// max over samples of |g'''(s)| / (s^{a1-1} + s^{a2-1})
    pub third_derivative_constant: f64,
    /// max over samples of |g''(s)| / (s^{a1} + s^{a2})
    pub second_derivative_ratio: f64,
    pub second_derivative_bound: f64,
    pub holds: bool,
}

/// Sample the growth bounds on g'' and g''' on (0, s_max].
pub fn sample_smoothness(spec: &NonlinearitySpec, s_max: f64, samples: usize) -> SmoothnessSample {
    let mut c3: f64 = 0.0;
    let mut c2: f64 = 0.0;
    for i in 1..=samples {
        // Log-spaced to probe small s as well.
        let s = s_max * 10f64.powf(-8.0 * (1.0 - i as f64 / samples as f64));
        let w3 = s.powf(spec.alpha1 - 1.0) + s.powf(spec.alpha2 - 1.0);
        let w2 = s.powf(spec.alpha1) + s.powf(spec.alpha2);
        c3 = c3.max(spec.d3(s).abs() / w3);
        c2 = c2.max(spec.d2(s).abs() / w2);
    }
    let bound = spec.second_derivative_constant();
    SmoothnessSample {
        third_derivative_constant: c3,
        second_derivative_ratio: c2,
        second_derivative_bound: bound,
        holds: c3.is_finite() && c2 <= bound * (1.0 + 1e-12),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_exponents_out_of_range() {
        assert!(NonlinearitySpec::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(NonlinearitySpec::new(2.0, 1.0, 1.0, 0.0).is_err());
        assert!(NonlinearitySpec::new(1.0, 3.0, 1.0, 0.0).is_err());
        assert!(NonlinearitySpec::new(0.5, 2.5, 1.0, -1.0).is_ok());
    }

    #[test]
    fn cubic_wirtinger_derivatives() {
        let spec = NonlinearitySpec::single(1.0, 1.0).unwrap();
        let z = Complex64::new(0.3, -0.4);
        let (gu, gb) = spec.wirtinger(z);
        assert!((gu - 2.0 * z.norm_sqr()).abs() < 1e-15);
        assert!((gb - z * z).norm() < 1e-15);
    }
}
