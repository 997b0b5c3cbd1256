//! Small dense and tridiagonal solvers used throughout the crate.

use num_complex::Complex64;

/// Solve a square system given as an augmented matrix [A | b] by Gaussian
/// elimination with partial pivoting. Intended for tiny systems.
pub fn solve_dense(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f != 0.0 {
                for k in col..=n {
                    let v = a[col][k];
                    a[row][k] -= f * v;
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = a[i][n];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    x
}

/// Ordinary least squares: minimize |X beta - y|. Columns of X are given as
/// slices. Returns (beta, r_squared).
pub fn least_squares(columns: &[&[f64]], y: &[f64]) -> (Vec<f64>, f64) {
    let p = columns.len();
    let mut aug = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            aug[i][j] = columns[i].iter().zip(columns[j]).map(|(a, b)| a * b).sum();
        }
        aug[i][p] = columns[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let beta = solve_dense(aug);
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let pred: f64 = (0..p).map(|k| beta[k] * columns[k][i]).sum();
        ss_res += (yi - pred).powi(2);
        ss_tot += (yi - mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (beta, r2)
}

/// Fit y = c + s x; returns (slope, intercept, r_squared).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let ones = vec![1.0; x.len()];
    let (beta, r2) = least_squares(&[&ones, x], y);
    (beta[1], beta[0], r2)
}

/// Symmetric tridiagonal matrix with constant off-diagonal.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: f64,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.diag.len();
        (0..n)
            .map(|j| {
                let mut s = x[j] * self.diag[j];
                if j > 0 {
                    s += x[j - 1] * self.off;
                }
                if j + 1 < n {
                    s += x[j + 1] * self.off;
                }
                s
            })
            .collect()
    }

    pub fn apply_real(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|j| {
                let mut s = x[j] * self.diag[j];
                if j > 0 {
                    s += x[j - 1] * self.off;
                }
                if j + 1 < n {
                    s += x[j + 1] * self.off;
                }
                s
            })
            .collect()
    }

    /// Number of eigenvalues strictly below `shift` (Sylvester inertia of
    /// the LDL^T factorization of T - shift).
    pub fn count_below(&self, shift: f64) -> usize {
        let b2 = self.off * self.off;
        let mut count = 0;
        let mut d = 1.0;
        for (j, &a) in self.diag.iter().enumerate() {
            d = if j == 0 { a - shift } else { a - shift - b2 / d };
            if d == 0.0 {
                d = -f64::EPSILON * (a.abs() + self.off.abs()).max(f64::MIN_POSITIVE);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Smallest eigenvalue by bisection on the inertia count.
    pub fn lowest_eigenvalue(&self) -> f64 {
        let gersh_lo = self.diag.iter().map(|a| a - 2.0 * self.off.abs()).fold(f64::INFINITY, f64::min);
        let gersh_hi = self.diag.iter().map(|a| a + 2.0 * self.off.abs()).fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (gersh_lo, gersh_hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// LU factorization of T - shift with partial pivoting.
    pub fn factor_shifted(&self, shift: f64) -> TridiagonalLu {
        TridiagonalLu::new(&self.diag, self.off, shift)
    }
}

/// Gaussian elimination with partial pivoting for a tridiagonal matrix, as in
/// LAPACK's gttrf. Backward stable even when the matrix is nearly singular.
#[derive(Clone, Debug)]
pub struct TridiagonalLu {
    // U has up to two superdiagonals after pivoting.
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    l: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    /// Factor the tridiagonal matrix with the given diagonal and constant
    /// off-diagonal.
    pub fn factor(diag: &[f64], off: f64) -> Self {
        Self::new(diag, off, 0.0)
    }

    fn new(diag: &[f64], off: f64, shift: f64) -> Self {
        let n = diag.len();
        let mut d: Vec<f64> = diag.iter().map(|a| a - shift).collect();
        let mut dl = vec![off; n.saturating_sub(1)];
        let mut du = vec![off; n.saturating_sub(1)];
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut l = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                let f = if d[i] != 0.0 { dl[i] / d[i] } else { 0.0 };
                l[i] = f;
                d[i + 1] -= f * du[i];
            } else {
                let f = d[i] / dl[i];
                l[i] = f;
                swapped[i] = true;
                d[i] = dl[i];
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - f * d[i + 1];
                if i + 1 < n - 1 {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du[i + 1];
                }
            }
            dl[i] = 0.0;
        }
        for x in d.iter_mut() {
            if *x == 0.0 {
                *x = f64::MIN_POSITIVE;
            }
        }
        TridiagonalLu { d, du, du2, l, swapped }
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
                let t = b[i];
                b[i + 1] -= t * self.l[i];
            } else {
                let t = b[i];
                b[i + 1] -= t * self.l[i];
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= b[i + 1] * self.du[i];
            }
            if i + 2 < n {
                s -= b[i + 2] * self.du2[i];
            }
            b[i] = s / self.d[i];
        }
    }

    pub fn solve_real_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            let t = b[i];
            b[i + 1] -= t * self.l[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= b[i + 1] * self.du[i];
            }
            if i + 2 < n {
                s -= b[i + 2] * self.du2[i];
            }
            b[i] = s / self.d[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tri(n: usize, seed: u64) -> Tridiagonal {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        Tridiagonal { diag: (0..n).map(|_| next() * 4.0).collect(), off: -1.3 }
    }

    #[test]
    fn lu_solve_matches_apply() {
        let t = random_tri(50, 3);
        let x: Vec<f64> = (0..50).map(|j| (j as f64 * 0.7).sin()).collect();
        let b = t.apply_real(&x);
        let lu = t.factor_shifted(0.0);
        let mut y = b.clone();
        lu.solve_real_in_place(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, -2.0 * v)).collect();
        let mut bc = t.apply(&xc);
        lu.solve_in_place(&mut bc);
        for (a, b) in xc.iter().zip(&bc) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn inertia_counts_agree_with_bisection() {
        let t = random_tri(40, 9);
        let lo = t.lowest_eigenvalue();
        assert_eq!(t.count_below(lo - 1e-9), 0);
        assert_eq!(t.count_below(lo + 1e-9), 1);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (s, c, r2) = linear_fit(&x, &y);
        assert!((s + 0.5).abs() < 1e-12 && (c - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
