//! Encode/decode throughput measurement.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::{encode, LinearDecoder, ProjectorBank};
use crate::spectra::{HsiCube, SpectralGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub k: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            bands: 31,
            k: 9,
            repetitions: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub config: BenchConfig,
    pub encode_median_s: f64,
    pub decode_median_s: f64,
    pub encode_fps: f64,
    pub decode_fps: f64,
    pub encode_pixels_per_s: f64,
    pub threads: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `encode` and linear decoding of a random cube through a random
/// bank; reports medians over the repetitions.
pub fn measure_throughput(cfg: &BenchConfig) -> Result<ThroughputReport> {
    if cfg.height == 0 || cfg.width == 0 || cfg.bands < 2 || cfg.k == 0 || cfg.k > cfg.bands || cfg.repetitions == 0 {
        return Err(Error::InvalidArgument("bench needs positive dims, 1 <= k <= bands and >= 1 repetition".into()));
    }
    let grid = SpectralGrid::uniform(400.0, 700.0, cfg.bands)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.height * cfg.width * cfg.bands;
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let cube = HsiCube::new(grid.clone(), cfg.height, cfg.width, data)?;
    let curves = DMatrix::from_fn(cfg.k, cfg.bands, |_, _| rng.random_range(0.02..0.98));
    let bank = ProjectorBank::new(grid, curves)?;
    let decoder = LinearDecoder::new(&bank)?;
    let mut enc = Vec::with_capacity(cfg.repetitions);
    let mut dec = Vec::with_capacity(cfg.repetitions);
    // warm-up
    std::hint::black_box(encode(&cube, &bank)?);
    for _ in 0..cfg.repetitions {
        let t = Instant::now();
        let code = encode(&cube, &bank)?;
        enc.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(decoder.decode(&code)?);
        dec.push(t.elapsed().as_secs_f64());
    }
    let e = median(enc).max(1e-12);
    let d = median(dec).max(1e-12);
    Ok(ThroughputReport {
        config: *cfg,
        encode_median_s: e,
        decode_median_s: d,
        encode_fps: 1.0 / e,
        decode_fps: 1.0 / d,
        encode_pixels_per_s: (cfg.height * cfg.width) as f64 / e,
        threads: rayon::current_num_threads(),
    })
}
