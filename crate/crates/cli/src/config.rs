//! Pipeline configuration (TOML). Every field has a default, so an empty
//! file is a valid config.

use serde::{Deserialize, Serialize};
use spectral_codec::fitting::FitConfig;
use spectral_codec::nn::{AdamConfig, LossKind, TrainConfig};
use spectral_codec::readout::{GainMode, ReadoutConfig};
use spectral_codec::spectra::{default_corpus_descriptor, metamer_descriptor, SceneDescriptor, SpectralGrid};
use spectral_codec::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: usize,
    pub grid: GridConfig,
    pub synth: SynthConfig,
    pub design: DesignConfig,
    pub fit: FitSection,
    pub readout: ReadoutSection,
    pub decoder: NetSection,
    pub classifier: NetSection,
    pub bench: BenchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            grid: GridConfig::default(),
            synth: SynthConfig::default(),
            design: DesignConfig::default(),
            fit: FitSection::default(),
            readout: ReadoutSection::default(),
            decoder: NetSection {
                hidden: vec![64, 64],
                epochs: 60,
                batch_size: 128,
                lr: 3e-3,
                step_size: 25,
                gamma: 0.3,
                samples: 40_000,
            },
            classifier: NetSection {
                hidden: vec![32, 32],
                epochs: 30,
                batch_size: 128,
                lr: 3e-3,
                step_size: 15,
                gamma: 0.3,
                samples: 0,
            },
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub start_nm: f64,
    pub stop_nm: f64,
    pub bands: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { start_nm: 400.0, stop_nm: 700.0, bands: 31 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Five fruit-like classes, two of them metamers.
    Default,
    /// Only the metamer pair.
    Metamer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneKind,
    /// Optional scene descriptor file (TOML) replacing the built-in scene.
    pub descriptor: Option<String>,
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub val: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneKind::Default,
            descriptor: None,
            height: 64,
            width: 64,
            train: 50,
            val: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankChoice {
    /// Raw PCA curves (may be negative; not readable by a sensor).
    Pca,
    /// PCA curves remapped into [0.02, 0.98].
    Physical,
    /// Transmission curves of the fitted filter models.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub k: usize,
    pub centered: bool,
    /// Bank used by encode, decode and the trained decoders.
    pub bank: BankChoice,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { k: 9, centered: false, bank: BankChoice::Physical }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub n_modes: usize,
    pub lr: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub step_size: usize,
    pub gamma: f64,
    pub restarts: usize,
    pub tol: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            n_modes: f.n_modes,
            lr: f.lr,
            epochs: f.epochs,
            iters_per_epoch: f.iters_per_epoch,
            step_size: f.step_size,
            gamma: f.gamma,
            restarts: f.restarts,
            tol: f.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    /// Skip the sensor model and keep full-precision barcodes.
    pub disabled: bool,
    pub bit_depth: u32,
    pub noise_sigma: f64,
    pub gain: GainMode,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        let r = ReadoutConfig::default();
        Self { disabled: false, bit_depth: r.bit_depth, noise_sigma: r.noise_sigma, gain: r.gain }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub step_size: usize,
    pub gamma: f64,
    /// Training pixels sampled from the scenes; 0 uses every pixel.
    pub samples: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        PipelineConfig::default().decoder
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub k: usize,
    pub repetitions: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { height: 512, width: 512, bands: 31, k: 9, repetitions: 20 }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.synth.height == 0 || self.synth.width == 0 {
            return bad("synth.height and synth.width must be positive");
        }
        if self.design.k == 0 || self.design.k > self.grid.bands {
            return bad("design.k must be in 1..=grid.bands");
        }
        for (name, n) in [("decoder", &self.decoder), ("classifier", &self.classifier)] {
            if n.epochs == 0 || n.batch_size == 0 || !(n.lr > 0.0) {
                return Err(Error::Config(format!("{name}: epochs, batch_size and lr must be positive")));
            }
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::uniform(self.grid.start_nm, self.grid.stop_nm, self.grid.bands)
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn scene_descriptor(&self) -> Result<SceneDescriptor> {
        if let Some(path) = &self.synth.descriptor {
            let text = std::fs::read_to_string(path)?;
            return toml::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")));
        }
        let (h, w) = (self.synth.height, self.synth.width);
        let mut d = match self.synth.scene {
            SceneKind::Default => default_corpus_descriptor(h, w),
            SceneKind::Metamer => metamer_descriptor(h, w),
        };
        d.wavelengths_nm = self.grid()?.wavelengths_nm().to_vec();
        Ok(d)
    }

    pub fn fit_config(&self) -> FitConfig {
        let f = &self.fit;
        FitConfig {
            n_modes: f.n_modes,
            lr: f.lr,
            epochs: f.epochs,
            iters_per_epoch: f.iters_per_epoch,
            step_size: f.step_size,
            gamma: f.gamma,
            restarts: f.restarts,
            seed: self.seed,
            tol: f.tol,
        }
    }

    pub fn readout_config(&self) -> Option<ReadoutConfig> {
        (!self.readout.disabled).then_some(ReadoutConfig {
            bit_depth: self.readout.bit_depth,
            noise_sigma: self.readout.noise_sigma,
            gain: self.readout.gain,
            seed: self.seed,
        })
    }

    pub fn train_config(&self, net: &NetSection, loss: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: net.epochs,
            batch_size: net.batch_size,
            seed: self.seed,
            loss,
            adam: AdamConfig { step_size: net.step_size, gamma: net.gamma, ..AdamConfig::with_lr(net.lr) },
        }
    }
}
