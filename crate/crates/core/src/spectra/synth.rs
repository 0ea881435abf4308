//! Seeded synthetic scenes: elliptical objects with smooth reflectance
//! spectra on a background, optionally with metamer class pairs.
//!
//! A metamer of class `s1` is `s2 = s1 + n` where `n` lies in the null space
//! of the RGB response matrix, so both render to the same RGB triplet while
//! their spectra differ by at least 20 % in L2.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelMask, RgbResponse, SpectralGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
}

/// A reflectance spectrum: explicit Gaussian mixture or randomly drawn from the scene seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSpec {
    Mixture { offset: f64, bumps: Vec<GaussianBump> },
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub spectrum: SpectrumSpec,
    /// When set, the class spectrum is a metamer of the referenced class
    /// (1-based class index; the spectrum field is ignored).
    #[serde(default)]
    pub metamer_of: Option<usize>,
    /// Instances per scene, inclusive range.
    pub instances: (usize, usize),
    /// Multiplicative brightness jitter per instance, as a fraction.
    #[serde(default)]
    pub scale_jitter: f64,
    /// Amplitude of an additive smooth bump per instance.
    #[serde(default)]
    pub shape_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub height: usize,
    pub width: usize,
    pub wavelengths_nm: Vec<f64>,
    pub background: SpectrumSpec,
    pub classes: Vec<ClassSpec>,
    /// Ellipse semi-axis range in pixels.
    pub radius: (f64, f64),
    /// Per-band Gaussian noise added to every pixel.
    #[serde(default)]
    pub pixel_noise: f64,
    /// Seed for class base spectra; scenes sharing it share their classes.
    pub class_seed: u64,
    /// Square white panel (side in pixels) in the top-left corner.
    #[serde(default)]
    pub white_panel: Option<usize>,
    /// Multiplies every pixel, turning reflectance into radiance.
    #[serde(default)]
    pub illuminant: Option<SpectrumSpec>,
}

impl SceneDescriptor {
    pub fn grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.wavelengths_nm.clone())
    }

    pub fn class_names(&self) -> Vec<String> {
        std::iter::once("background".to_string())
            .chain(self.classes.iter().map(|c| c.name.clone()))
            .collect()
    }

    /// Base reflectance of background (index 0) and every class.
    pub fn class_spectra(&self) -> Result<Vec<Vec<f64>>> {
        let grid = self.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.class_seed);
        let mut out = vec![eval_spectrum(&self.background, &grid, &mut rng)];
        for (i, class) in self.classes.iter().enumerate() {
            let s = match class.metamer_of {
                Some(src) => {
                    if src == 0 || src > i {
                        return Err(Error::InvalidArgument(format!(
                            "class {} is a metamer of class {src}, which must be an earlier class",
                            i + 1
                        )));
                    }
                    metamer_of(&out[src], &grid, &mut rng)?
                }
                None => eval_spectrum(&class.spectrum, &grid, &mut rng),
            };
            out.push(s);
        }
        Ok(out)
    }
}

fn eval_spectrum(spec: &SpectrumSpec, grid: &SpectralGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (offset, bumps) = match spec {
        SpectrumSpec::Mixture { offset, bumps } => (*offset, bumps.clone()),
        SpectrumSpec::Random => random_mixture(grid, rng),
    };
    grid.wavelengths_nm()
        .iter()
        .map(|&l| {
            let v = offset
                + bumps
                    .iter()
                    .map(|b| b.amplitude * (-(l - b.center_nm).powi(2) / (2.0 * b.width_nm.powi(2))).exp())
                    .sum::<f64>();
            v.clamp(0.0, 1.0)
        })
        .collect()
}

fn random_mixture(grid: &SpectralGrid, rng: &mut ChaCha8Rng) -> (f64, Vec<GaussianBump>) {
    let wl = grid.wavelengths_nm();
    let (lo, hi) = (wl[0], wl[wl.len() - 1]);
    let offset = rng.random_range(0.1..0.3);
    let n = rng.random_range(2..=3);
    let bumps = (0..n)
        .map(|_| GaussianBump {
            center_nm: rng.random_range(lo..hi),
            width_nm: rng.random_range(0.07..0.25) * (hi - lo),
            amplitude: rng.random_range(0.1..0.3),
        })
        .collect();
    (offset, bumps)
}

/// Builds a metamer of `source` under the default Gaussian RGB responses.
pub fn metamer_of(source: &[f64], grid: &SpectralGrid, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let bands = grid.bands();
    if bands <= 3 {
        return Err(Error::MetamerInfeasible(format!(
            "a {bands}-band grid leaves no null space under 3 RGB responses"
        )));
    }
    let r = RgbResponse::gaussian(grid).matrix();
    let rrt = (&r * r.transpose())
        .try_inverse()
        .ok_or_else(|| Error::MetamerInfeasible("RGB response matrix is rank deficient".into()))?;
    let project = |d: &DVector<f64>| -> DVector<f64> { d - r.transpose() * (&rrt * (&r * d)) };
    let s1 = DVector::from_column_slice(source);
    let norm1 = s1.norm();
    let wl = grid.wavelengths_nm();
    let (lo, hi) = (wl[0], wl[wl.len() - 1]);

    for _attempt in 0..64 {
        let n_bumps = rng.random_range(2..=4);
        let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (
                    rng.random_range(lo..hi),
                    rng.random_range(0.08..0.2) * (hi - lo),
                    sign * rng.random_range(0.5..1.0),
                )
            })
            .collect();
        let d = DVector::from_iterator(
            bands,
            wl.iter().map(|&l| {
                bumps
                    .iter()
                    .map(|&(c, w, a)| a * (-(l - c).powi(2) / (2.0 * w * w)).exp())
                    .sum::<f64>()
            }),
        );
        let n = project(&d);
        let nn = n.norm();
        if nn < 1e-9 {
            continue;
        }
        for rel in [0.4, 0.35, 0.3, 0.25, 0.21] {
            let s2 = &s1 + &n * (rel * norm1 / nn);
            if s2.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                let diff = &r * (&s2 - &s1);
                let residual = diff.amax();
                assert!(residual <= 1e-6, "null-space residual {residual}");
                return Ok(s2.as_slice().to_vec());
            }
        }
    }
    Err(Error::MetamerInfeasible(
        "no null-space perturbation keeps the spectrum inside [0, 1]".into(),
    ))
}

/// Renders one scene. Deterministic for a fixed descriptor and seed.
pub fn synth_scene(desc: &SceneDescriptor, seed: u64) -> Result<(HsiCube, LabelMask)> {
    let grid = desc.grid()?;
    let bands = grid.bands();
    let (h, w) = (desc.height, desc.width);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("scene must have at least one pixel".into()));
    }
    let spectra = desc.class_spectra()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut cube = HsiCube::zeros(grid.clone(), h, w);
    let mut labels = vec![0u16; h * w];
    for y in 0..h {
        for x in 0..w {
            cube.pixel_mut(y, x).copy_from_slice(&spectra[0]);
        }
    }

    struct Instance {
        class: usize,
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        spectrum: Vec<f64>,
    }
    let mut instances = Vec::new();
    for (ci, class) in desc.classes.iter().enumerate() {
        let count = rng.random_range(class.instances.0..=class.instances.1.max(class.instances.0));
        for _ in 0..count {
            let ry = rng.random_range(desc.radius.0..=desc.radius.1);
            let rx = rng.random_range(desc.radius.0..=desc.radius.1);
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let scale = 1.0 + class.scale_jitter * rng.random_range(-1.0..1.0);
            let bump_c = rng.random_range(grid.wavelengths_nm()[0]..grid.wavelengths_nm()[bands - 1]);
            let bump_a = class.shape_jitter * rng.random_range(-1.0..1.0);
            let span = grid.wavelengths_nm()[bands - 1] - grid.wavelengths_nm()[0];
            let spectrum = spectra[ci + 1]
                .iter()
                .zip(grid.wavelengths_nm())
                .map(|(&s, &l)| {
                    let bump = bump_a * (-(l - bump_c).powi(2) / (2.0 * (0.12 * span).powi(2))).exp();
                    (scale * s + bump).clamp(0.0, 1.0)
                })
                .collect();
            instances.push(Instance {
                class: ci + 1,
                cy,
                cx,
                ry,
                rx,
                spectrum,
            });
        }
    }
    // painter's order: later instances occlude earlier ones
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    for &i in &order {
        let inst = &instances[i];
        let y0 = (inst.cy - inst.ry).floor().max(0.0) as usize;
        let y1 = ((inst.cy + inst.ry).ceil() as usize).min(h - 1);
        let x0 = (inst.cx - inst.rx).floor().max(0.0) as usize;
        let x1 = ((inst.cx + inst.rx).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dy = (y as f64 + 0.5 - inst.cy) / inst.ry;
                let dx = (x as f64 + 0.5 - inst.cx) / inst.rx;
                if dy * dy + dx * dx <= 1.0 {
                    cube.pixel_mut(y, x).copy_from_slice(&inst.spectrum);
                    labels[y * w + x] = inst.class as u16;
                }
            }
        }
    }

    if let Some(side) = desc.white_panel {
        for y in 0..side.min(h) {
            for x in 0..side.min(w) {
                cube.pixel_mut(y, x).fill(1.0);
                labels[y * w + x] = 0;
            }
        }
    }

    if desc.pixel_noise > 0.0 {
        let normal = Normal::new(0.0, desc.pixel_noise)
            .map_err(|e| Error::InvalidArgument(format!("pixel noise: {e}")))?;
        for v in cube.data_mut() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }

    if let Some(illum) = &desc.illuminant {
        let mut illum_rng = ChaCha8Rng::seed_from_u64(desc.class_seed ^ 0x1111_1111);
        let e = eval_spectrum(illum, &grid, &mut illum_rng);
        for px in cube.data_mut().chunks_exact_mut(bands) {
            for (v, ev) in px.iter_mut().zip(&e) {
                *v *= ev;
            }
        }
    }

    let mask = LabelMask::new(h, w, labels, desc.class_names())?;
    Ok((cube, mask))
}

/// The default desk-scale corpus: five fruit-like classes, two of which
/// are metamers of each other, on a 31-band visible grid.
pub fn default_corpus_descriptor(height: usize, width: usize) -> SceneDescriptor {
    let grid = SpectralGrid::visible();
    let class = |name: &str, metamer_of: Option<usize>, shape_jitter: f64| ClassSpec {
        name: name.to_string(),
        spectrum: SpectrumSpec::Random,
        metamer_of,
        instances: (1, 2),
        scale_jitter: 0.15,
        shape_jitter,
    };
    SceneDescriptor {
        height,
        width,
        wavelengths_nm: grid.wavelengths_nm().to_vec(),
        background: SpectrumSpec::Mixture {
            offset: 0.2,
            bumps: vec![GaussianBump {
                center_nm: 620.0,
                width_nm: 80.0,
                amplitude: 0.08,
            }],
        },
        classes: vec![
            class("real grape", None, 0.0),
            class("artificial grape", Some(1), 0.0),
            class("real orange", None, 0.05),
            class("real lemon", None, 0.05),
            class("leaf", None, 0.05),
        ],
        radius: (height as f64 / 10.0, height as f64 / 5.0),
        pixel_noise: 0.004,
        class_seed: 20_240_517,
        white_panel: None,
        illuminant: None,
    }
}

/// Two classes that render identically in RGB.
pub fn metamer_descriptor(height: usize, width: usize) -> SceneDescriptor {
    let mut d = default_corpus_descriptor(height, width);
    d.classes.truncate(2);
    d.classes.iter_mut().for_each(|c| c.instances = (2, 3));
    d
}
