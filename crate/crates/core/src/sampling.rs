//! Seeded random test fields.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use std::sync::Arc;

use crate::grid::{RadialField, RadialGrid};
use crate::hamiltonian::{project_continuous, SpectralData};

pub type SeededRng = SplitMix64;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SplitMix64::seed_from_u64(seed)
}

/// Derive an independent stream for a labelled sub-task.
pub fn substream(seed: u64, label: &str) -> SeededRng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    SplitMix64::seed_from_u64(h)
}

fn uniform_complex<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// A Gaussian times an even polynomial in r with random width and complex
/// coefficients. Even profiles keep the field smooth at the origin; the
/// polynomial moves the bulk of the field off the origin into shells.
pub fn random_smooth_field<R: Rng>(grid: &Arc<RadialGrid>, rng: &mut R) -> RadialField {
    let width: f64 = rng.random_range(0.8..2.0);
    let c = [uniform_complex(rng), uniform_complex(rng), uniform_complex(rng)];
    RadialField::from_profile(grid, |r| {
        let x = (r / width).powi(2);
        (c[0] + c[1] * x + c[2] * x * x * 0.5) * (-0.5 * x).exp()
    })
}

/// Random fields normalized in L^2, projected onto the continuous subspace
/// when spectral data are given.
pub fn random_probe_set<R: Rng>(
    grid: &Arc<RadialGrid>,
    rng: &mut R,
    count: usize,
    spectral: Option<&SpectralData>,
) -> Vec<RadialField> {
    (0..count)
        .map(|_| {
            let mut f = random_smooth_field(grid, rng);
            if let Some(s) = spectral {
                f = project_continuous(&f, s);
            }
            let n = f.norm();
            f.scaled(Complex64::new(1.0 / n, 0.0))
        })
        .collect()
}
