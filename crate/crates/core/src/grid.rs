//! Uniform radial grid for radially symmetric functions on a ball.
//!
//! A radial function u(r) is stored as w = r u sampled at the interior nodes
//! r_j = j dr, j = 1..N, with dr = R/(N+1). Dirichlet conditions hold at both
//! ends (w(0) = 0 is automatic, w(R) = 0 is imposed). In this variable the
//! three-dimensional radial Laplacian becomes d^2/dr^2, which is discretized
//! by the standard three-point stencil and diagonalized exactly by the type-I
//! discrete sine transform.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Right-end quadrature corrections for the nodes R - dr, ..., R - 6 dr.
///
/// They supply the missing endpoint terms of the Euler-Maclaurin expansion
/// (the value at R and odd derivatives up to fifth order) by polynomial
/// extrapolation, so that sum(c_j f(r_j)) integrates smooth radial integrands
/// to high order even though the node at R is not stored. No correction is
/// needed at the origin because r^2 f(r) is even for smooth radial f.
fn endpoint_corrections() -> [f64; 6] {
    let mut a = [[0.0f64; 7]; 6];
    let targets = [0.5, -1.0 / 12.0, 0.0, 1.0 / 120.0, 0.0, -1.0 / 252.0];
    for (m, row) in a.iter_mut().enumerate() {
        for (k, entry) in row.iter_mut().take(6).enumerate() {
            *entry = (-(k as f64 + 1.0)).powi(m as i32);
        }
        row[6] = targets[m];
    }
    let x = crate::linalg::solve_dense(a.iter().map(|r| r.to_vec()).collect());
    let mut out = [0.0; 6];
    out.copy_from_slice(&x);
    out
}

/// Orthonormal type-I discrete sine transform of length N.
///
/// forward and inverse coincide: c_k = sqrt(2/(N+1)) sum_j w_j sin(pi j k/(N+1)).
pub struct SineTransform {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl SineTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * (n + 1));
        SineTransform { n, fft, scale: (2.0 / (n as f64 + 1.0)).sqrt() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Transform complex data in place. The transform is real, so real and
    /// imaginary parts are transformed independently.
    pub fn transform(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        let n = self.n;
        let m = 2 * (n + 1);
        // Pack two real odd extensions into one complex buffer: the real part
        // carries Re(data), the imaginary part Im(data). Each extension is odd,
        // so its FFT is purely imaginary and the two can be separated.
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..n {
            buf[j + 1] = data[j];
            buf[m - 1 - j] = -data[j];
        }
        self.fft.process(&mut buf);
        // For odd real x, FFT(x)_k = -2i S_k. With y = x_re + i x_im,
        // FFT(y)_k = -2i S_re,k + 2 S_im,k.
        for k in 0..n {
            let y = buf[k + 1];
            let s_re = -y.im / 2.0;
            let s_im = y.re / 2.0;
            data[k] = Complex64::new(s_re, s_im) * self.scale;
        }
    }

    pub fn transform_real(&self, data: &mut [f64]) {
        let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut c);
        for (d, v) in data.iter_mut().zip(c) {
            *d = v.re;
        }
    }
}

impl fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineTransform").field("n", &self.n).finish()
    }
}

#[derive(Debug)]
pub struct RadialGrid {
    n: usize,
    radius: f64,
    dr: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    symbol: Vec<f64>,
    dst: SineTransform,
}

impl RadialGrid {
    pub fn new(n: usize, radius: f64) -> Result<Arc<Self>> {
        if n < 16 {
            return Err(Error::InvalidGrid(format!("need at least 16 nodes, got {n}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidGrid(format!("radius must be positive, got {radius}")));
        }
        let dr = radius / (n as f64 + 1.0);
        let nodes: Vec<f64> = (1..=n).map(|j| j as f64 * dr).collect();
        let mut weights: Vec<f64> = nodes.iter().map(|r| 4.0 * PI * dr * r * r).collect();
        for (k, g) in endpoint_corrections().iter().enumerate() {
            let j = n - 1 - k;
            weights[j] += 4.0 * PI * dr * nodes[j] * nodes[j] * g;
        }
        let symbol = (1..=n)
            .map(|k| {
                let s = (PI * k as f64 / (2.0 * (n as f64 + 1.0))).sin();
                4.0 * s * s / (dr * dr)
            })
            .collect();
        Ok(Arc::new(RadialGrid { n, radius, dr, nodes, weights, symbol, dst: SineTransform::new(n) }))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weights for integrals of radial functions over the ball.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Eigenvalues of the discrete -d^2/dr^2 in sine-mode order k = 1..N.
    pub fn laplacian_symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Wavenumbers pi k / R matching the sine modes.
    pub fn wavenumbers(&self) -> Vec<f64> {
        (1..=self.n).map(|k| PI * k as f64 / self.radius).collect()
    }

    pub fn sine_transform(&self) -> &SineTransform {
        &self.dst
    }

    /// Integral of a radial function given by its nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(c, v)| c * v).sum()
    }

    /// Apply the discrete -d^2/dr^2 (Dirichlet) to w.
    pub fn apply_laplacian(&self, w: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let h2 = 1.0 / (self.dr * self.dr);
        (0..n)
            .map(|j| {
                let left = if j > 0 { w[j - 1] } else { Complex64::new(0.0, 0.0) };
                let right = if j + 1 < n { w[j + 1] } else { Complex64::new(0.0, 0.0) };
                (w[j] * 2.0 - left - right) * h2
            })
            .collect()
    }

    pub fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || (self.n == other.n && self.radius == other.radius)
    }
}

/// A radial complex field, stored as w = r u on the grid nodes.
#[derive(Clone, Debug)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<Complex64>,
}

impl RadialField {
    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        RadialField { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    /// Build from stored values w_j = r_j u(r_j).
    pub fn from_values(grid: &Arc<RadialGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        Ok(RadialField { grid: grid.clone(), values })
    }

    pub fn from_real(grid: &Arc<RadialGrid>, values: &[f64]) -> Result<Self> {
        Self::from_values(grid, values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Sample a radial profile u(r).
    pub fn from_profile(grid: &Arc<RadialGrid>, u: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.nodes().iter().map(|&r| u(r) * r).collect();
        RadialField { grid: grid.clone(), values }
    }

    pub fn from_real_profile(grid: &Arc<RadialGrid>, u: impl Fn(f64) -> f64) -> Self {
        Self::from_profile(grid, |r| Complex64::new(u(r), 0.0))
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The stored values w = r u.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Point values u(r_j).
    pub fn point_values(&self) -> Vec<Complex64> {
        self.values.iter().zip(self.grid.nodes()).map(|(w, r)| w / r).collect()
    }

    pub fn point_value(&self, j: usize) -> Complex64 {
        self.values[j] / self.grid.nodes()[j]
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn check_same_grid(&self, other: &RadialField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// L^2 inner product <self, other>, conjugate-linear in self.
    pub fn inner(&self, other: &RadialField) -> Complex64 {
        assert_eq!(self.len(), other.len(), "fields on different grids");
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum();
        s * (4.0 * PI * self.grid.dr())
    }

    /// Real part of the inner product, the natural pairing on the underlying
    /// real Hilbert space.
    pub fn real_inner(&self, other: &RadialField) -> f64 {
        self.inner(other).re
    }

    pub fn norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|z| z.norm_sqr()).sum();
        (s * 4.0 * PI * self.grid.dr()).sqrt()
    }

    pub fn conj(&self) -> RadialField {
        RadialField { grid: self.grid.clone(), values: self.values.iter().map(|z| z.conj()).collect() }
    }

    pub fn scaled(&self, c: Complex64) -> RadialField {
        RadialField { grid: self.grid.clone(), values: self.values.iter().map(|z| z * c).collect() }
    }

    /// self += c * other
    pub fn axpy(&mut self, c: Complex64, other: &RadialField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Multiply pointwise by a real function of r given at the nodes.
    pub fn multiply_pointwise(&self, m: &[f64]) -> RadialField {
        RadialField { grid: self.grid.clone(), values: self.values.iter().zip(m).map(|(z, f)| z * f).collect() }
    }

    pub fn map_values(&self, f: impl Fn(Complex64) -> Complex64) -> RadialField {
        RadialField { grid: self.grid.clone(), values: self.values.iter().map(|&z| f(z)).collect() }
    }

    /// Orthonormal sine-mode coefficients of w.
    pub fn sine_coefficients(&self) -> Vec<Complex64> {
        let mut c = self.values.clone();
        self.grid.sine_transform().transform(&mut c);
        c
    }

    pub fn from_sine_coefficients(grid: &Arc<RadialGrid>, coefficients: &[Complex64]) -> Result<Self> {
        let mut v = coefficients.to_vec();
        if v.len() != grid.len() {
            return Err(Error::InvalidGrid("coefficient length mismatch".into()));
        }
        grid.sine_transform().transform(&mut v);
        Ok(RadialField { grid: grid.clone(), values: v })
    }
}

impl Index<usize> for RadialField {
    type Output = Complex64;
    fn index(&self, j: usize) -> &Complex64 {
        &self.values[j]
    }
}

impl IndexMut<usize> for RadialField {
    fn index_mut(&mut self, j: usize) -> &mut Complex64 {
        &mut self.values[j]
    }
}

impl Add<&RadialField> for &RadialField {
    type Output = RadialField;
    fn add(self, rhs: &RadialField) -> RadialField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&RadialField> for &RadialField {
    type Output = RadialField;
    fn sub(self, rhs: &RadialField) -> RadialField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&RadialField> for RadialField {
    fn add_assign(&mut self, rhs: &RadialField) {
        assert_eq!(self.len(), rhs.len(), "fields on different grids");
        for (a, b) in self.values.iter_mut().zip(&rhs.values) {
            *a += b;
        }
    }
}

impl SubAssign<&RadialField> for RadialField {
    fn sub_assign(&mut self, rhs: &RadialField) {
        assert_eq!(self.len(), rhs.len(), "fields on different grids");
        for (a, b) in self.values.iter_mut().zip(&rhs.values) {
            *a -= b;
        }
    }
}

impl Mul<Complex64> for &RadialField {
    type Output = RadialField;
    fn mul(self, c: Complex64) -> RadialField {
        self.scaled(c)
    }
}

impl Mul<f64> for &RadialField {
    type Output = RadialField;
    fn mul(self, c: f64) -> RadialField {
        self.scaled(Complex64::new(c, 0.0))
    }
}

impl MulAssign<Complex64> for RadialField {
    fn mul_assign(&mut self, c: Complex64) {
        for z in &mut self.values {
            *z *= c;
        }
    }
}

impl Neg for &RadialField {
    type Output = RadialField;
    fn neg(self) -> RadialField {
        self.scaled(Complex64::new(-1.0, 0.0))
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        Err(Error::InvalidExponent(p))
    } else {
        Ok(())
    }
}

/// L^p norm over the ball; p = f64::INFINITY gives the sup norm over nodes.
pub fn lp_norm(f: &RadialField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let grid = f.grid();
    if p.is_infinite() {
        return Ok(f.values().iter().zip(grid.nodes()).map(|(w, r)| w.norm() / r).fold(0.0, f64::max));
    }
    let scale = f.values().iter().zip(grid.nodes()).map(|(w, r)| w.norm() / r).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Normalize by the sup norm so that large p does not underflow.
    let s: f64 = f
        .values()
        .iter()
        .zip(grid.nodes())
        .zip(grid.weights())
        .map(|((w, r), c)| c * (w.norm() / r / scale).powf(p))
        .sum();
    Ok(scale * s.max(0.0).powf(1.0 / p))
}

/// Weighted norm || <r>^sigma f ||_2 with <r> = sqrt(1 + r^2).
pub fn weighted_l2_norm(f: &RadialField, sigma: f64) -> f64 {
    let grid = f.grid();
    let s: f64 = f
        .values()
        .iter()
        .zip(grid.nodes())
        .zip(grid.weights())
        .map(|((w, r), c)| c * (1.0 + r * r).powf(sigma) * w.norm_sqr() / (r * r))
        .sum();
    s.max(0.0).sqrt()
}

/// Hoelder conjugate exponent.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}
