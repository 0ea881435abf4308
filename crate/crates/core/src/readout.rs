//! Monochrome sensor readout of a barcode: gain to full scale, optional
//! additive Gaussian noise, clamping and integer quantization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::Barcode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// Each channel's maximum maps to full scale.
    PerChannelMax,
    /// The maximum over all channels maps to full scale.
    GlobalMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub bit_depth: u32,
    /// Standard deviation as a fraction of full scale.
    pub noise_sigma: f64,
    pub gain: GainMode,
    pub seed: u64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            bit_depth: 8,
            noise_sigma: 0.0,
            gain: GainMode::PerChannelMax,
            seed: 0,
        }
    }
}

impl ReadoutConfig {
    pub fn full_scale(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if !(8..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidArgument(format!(
                "bit depth {} outside [8, 16]",
                self.bit_depth
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument("noise sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Quantized counts plus the gain applied to each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub counts: Barcode,
    pub gains: Vec<f64>,
}

impl SensorFrame {
    /// Counts divided by gain: the quantized barcode in the input units.
    pub fn to_physical(&self) -> Barcode {
        let mut out = self.counts.clone();
        let k = out.k();
        for px in out.data_mut().chunks_exact_mut(k) {
            for (v, g) in px.iter_mut().zip(&self.gains) {
                *v /= g;
            }
        }
        out
    }
}

pub fn read_sensor(barcode: &Barcode, cfg: &ReadoutConfig) -> Result<SensorFrame> {
    cfg.validate()?;
    let k = barcode.k();
    if let Some((index, &value)) = barcode.data().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeIntensity { index, value });
    }
    let mut max = vec![0.0f64; k];
    for px in barcode.data().chunks_exact(k) {
        for (m, &v) in max.iter_mut().zip(px) {
            *m = m.max(v);
        }
    }
    let full = cfg.full_scale();
    let gains: Vec<f64> = match cfg.gain {
        GainMode::PerChannelMax => {
            if let Some(channel) = max.iter().position(|&m| m <= 0.0) {
                return Err(Error::GainDegenerate { channel });
            }
            max.iter().map(|m| full / m).collect()
        }
        GainMode::GlobalMax => {
            let g = max.iter().cloned().fold(0.0, f64::max);
            if g <= 0.0 {
                return Err(Error::GainDegenerate { channel: 0 });
            }
            vec![full / g; k]
        }
    };
    let sigma = cfg.noise_sigma * full;
    let mut data = barcode.data().to_vec();
    data.par_chunks_mut(k).enumerate().for_each(|(j, px)| {
        let mut rng = (sigma > 0.0).then(|| ChaCha8Rng::seed_from_u64(cfg.seed ^ j as u64));
        for (v, g) in px.iter_mut().zip(&gains) {
            let mut x = *v * g;
            if let Some(rng) = rng.as_mut() {
                let z: f64 = StandardNormal.sample(rng);
                x += sigma * z;
            }
            *v = x.clamp(0.0, full).round();
        }
    });
    Ok(SensorFrame {
        counts: Barcode::new(barcode.height(), barcode.width(), k, data)?,
        gains,
    })
}
