//! Test oracles shared by the integration tests.
#![allow(dead_code)]

pub mod dd;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_codec::cmt::CmtModel;
use spectral_codec::spectra::SpectralGrid;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Swap-background model with resonances inside the grid and couplings in (-0.5, 0.5).
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, grid: &SpectralGrid) -> CmtModel {
    let (lo, hi) = grid.omega_range();
    let freqs = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let k: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
    CmtModel::with_swap_background(freqs, &k).unwrap()
}

/// Random matrix with orthonormal rows (Gram-Schmidt on Gaussian rows).
pub fn random_orthonormal_rows(rng: &mut ChaCha8Rng, k: usize, n: usize) -> DMatrix<f64> {
    let normal = rand_distr::StandardNormal;
    let mut q = DMatrix::<f64>::zeros(k, n);
    for r in 0..k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(normal)).collect();
        for _ in 0..2 {
            for p in 0..r {
                let d: f64 = (0..n).map(|c| v[c] * q[(p, c)]).sum();
                for c in 0..n {
                    v[c] -= d * q[(p, c)];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for c in 0..n {
            q[(r, c)] = v[c] / norm;
        }
    }
    q
}
