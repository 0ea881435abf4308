//! Hyperspectral cubes, spectral grids, label masks and the RGB baseline.
//!
//! Spectra are sampled in wavelength (nm); everything that integrates over
//! the spectral axis does so in angular frequency, `omega = 2*pi*c / lambda`
//! in rad/fs, with trapezoidal weights.

mod io;
mod synth;

pub use io::{load_cube, load_mask, read_cube, read_mask, save_cube, save_mask, write_cube, write_mask};
pub use synth::{
    default_corpus_descriptor, metamer_descriptor, metamer_of, synth_scene, ClassSpec, GaussianBump,
    SceneDescriptor, SpectrumSpec,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in nm/fs.
pub const SPEED_OF_LIGHT_NM_PER_FS: f64 = 299.792458;

pub fn wavelength_to_omega(lambda_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_NM_PER_FS / lambda_nm
}

pub fn omega_to_wavelength(omega: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_NM_PER_FS / omega
}

/// Sampled spectral axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    wavelengths_nm: Vec<f64>,
    omega: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 samples, got {}",
                wavelengths_nm.len()
            )));
        }
        for (i, &w) in wavelengths_nm.iter().enumerate() {
            if !(w > 100.0 && w < 20000.0) {
                return Err(Error::InvalidGrid(format!(
                    "wavelength {w} nm at index {i} outside (100, 20000)"
                )));
            }
        }
        if let Some(i) = wavelengths_nm.windows(2).position(|p| p[1] <= p[0]) {
            return Err(Error::NonIncreasingWavelengths { index: i + 1 });
        }
        let omega: Vec<f64> = wavelengths_nm.iter().map(|&w| wavelength_to_omega(w)).collect();
        let n = omega.len();
        let weights = (0..n)
            .map(|i| {
                let lo = if i == 0 { omega[0] } else { omega[i - 1] };
                let hi = if i + 1 == n { omega[n - 1] } else { omega[i + 1] };
                0.5 * (lo - hi).abs()
            })
            .collect();
        Ok(Self {
            wavelengths_nm,
            omega,
            weights,
        })
    }

    /// `bands` equally spaced wavelengths from `start_nm` to `stop_nm` inclusive.
    pub fn uniform(start_nm: f64, stop_nm: f64, bands: usize) -> Result<Self> {
        if bands < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 bands, got {bands}")));
        }
        let step = (stop_nm - start_nm) / (bands - 1) as f64;
        Self::new((0..bands).map(|i| start_nm + step * i as f64).collect())
    }

    /// 31 bands, 400-700 nm, 10 nm step.
    pub fn visible() -> Self {
        Self::uniform(400.0, 700.0, 31).expect("static grid is valid")
    }

    pub fn bands(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    /// Angular frequencies in rad/fs, one per band (decreasing with band index).
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Trapezoidal quadrature weights over omega.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega_range(&self) -> (f64, f64) {
        let a = self.omega[0];
        let b = self.omega[self.omega.len() - 1];
        (a.min(b), a.max(b))
    }

    /// Width of the grid in omega; equals the sum of the weights.
    pub fn span(&self) -> f64 {
        let (lo, hi) = self.omega_range();
        hi - lo
    }

    /// Trapezoidal integral of `values` over omega.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

/// Hyperspectral cube stored as (y, x, band), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    grid: SpectralGrid,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(grid: SpectralGrid, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * grid.bands();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "cube data has {} values, {height}x{width}x{} needs {expected}",
                data.len(),
                grid.bands()
            )));
        }
        Ok(Self {
            grid,
            height,
            width,
            data,
        })
    }

    pub fn zeros(grid: SpectralGrid, height: usize, width: usize) -> Self {
        let n = height * width * grid.bands();
        Self {
            grid,
            height,
            width,
            data: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.grid.bands()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let b = self.bands();
        let i = (y * self.width + x) * b;
        &self.data[i..i + b]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let b = self.bands();
        let i = (y * self.width + x) * b;
        &mut self.data[i..i + b]
    }

    /// Spectrum of the pixel with flat index `j = y * width + x`.
    pub fn spectrum(&self, j: usize) -> &[f64] {
        let b = self.bands();
        &self.data[j * b..(j + 1) * b]
    }

    pub fn spectra(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.bands())
    }

    /// Divides every pixel band-wise by the mean spectrum of `region`.
    pub fn normalize_white(&self, region: Rect) -> Result<HsiCube> {
        if region.height == 0
            || region.width == 0
            || region.y + region.height > self.height
            || region.x + region.width > self.width
        {
            return Err(Error::InvalidArgument(format!(
                "white region {region:?} not inside {}x{} image",
                self.height, self.width
            )));
        }
        let bands = self.bands();
        let mut mean = vec![0.0; bands];
        for y in region.y..region.y + region.height {
            for x in region.x..region.x + region.width {
                for (m, v) in mean.iter_mut().zip(self.pixel(y, x)) {
                    *m += v;
                }
            }
        }
        let count = (region.height * region.width) as f64;
        for (band, m) in mean.iter_mut().enumerate() {
            *m /= count;
            if *m <= 1e-9 {
                return Err(Error::DegenerateWhite { band, value: *m });
            }
        }
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(bands) {
            for (v, m) in px.iter_mut().zip(&mean) {
                *v /= m;
            }
        }
        Ok(out)
    }

    /// Column `j` of the result is the spectrum of pixel `j = y * width + x`.
    pub fn flatten(&self) -> SpectraMatrix {
        SpectraMatrix {
            matrix: DMatrix::from_column_slice(self.bands(), self.pixels(), &self.data),
        }
    }

    /// Renders the cube through three response curves; see [`RgbImage`].
    pub fn to_rgb(&self, resp: &RgbResponse) -> Result<RgbImage> {
        if resp.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let m = resp.matrix();
        let mut data = Vec::with_capacity(self.pixels() * 3);
        for px in self.spectra() {
            for c in 0..3 {
                data.push((0..px.len()).map(|b| m[(c, b)] * px[b]).sum::<f64>());
            }
        }
        let max = data.iter().cloned().fold(0.0_f64, f64::max);
        if max > 0.0 {
            for v in &mut data {
                *v /= max;
            }
        }
        Ok(RgbImage {
            height: self.height,
            width: self.width,
            data,
        })
    }
}

/// Matrix of spectra, one column per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraMatrix {
    pub matrix: DMatrix<f64>,
}

impl SpectraMatrix {
    pub fn bands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn deflatten(&self, grid: SpectralGrid, height: usize, width: usize) -> Result<HsiCube> {
        if grid.bands() != self.bands() || height * width != self.columns() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} spectra matrix cannot form a {height}x{width}x{} cube",
                self.bands(),
                self.columns(),
                grid.bands()
            )));
        }
        HsiCube::new(grid, height, width, self.matrix.as_slice().to_vec())
    }
}

/// Per-pixel class indices, row-major. Index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, class_names: Vec<String>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} labels for a {height}x{width} image",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside class table of length {}",
                class_names.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }
}

/// Three spectral response curves (R, G, B).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbResponse {
    grid: SpectralGrid,
    curves: [Vec<f64>; 3],
}

impl RgbResponse {
    pub fn new(grid: SpectralGrid, curves: [Vec<f64>; 3]) -> Result<Self> {
        let mut curves = curves;
        for c in &mut curves {
            if c.len() != grid.bands() {
                return Err(Error::DimensionMismatch("response curve length".into()));
            }
            if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument("response curves must be finite and non-negative".into()));
            }
            let max = c.iter().cloned().fold(0.0, f64::max);
            if max <= 0.0 {
                return Err(Error::InvalidArgument("response curve is identically zero".into()));
            }
            c.iter_mut().for_each(|v| *v /= max);
        }
        Ok(Self { grid, curves })
    }

    /// Gaussian responses centred at 600/550/450 nm with sigma 30 nm.
    pub fn gaussian(grid: &SpectralGrid) -> Self {
        let g = |center: f64| -> Vec<f64> {
            grid.wavelengths_nm()
                .iter()
                .map(|&l| (-(l - center).powi(2) / (2.0 * 30.0 * 30.0)).exp())
                .collect()
        };
        Self::new(grid.clone(), [g(600.0), g(550.0), g(450.0)]).expect("gaussian responses are valid")
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn curves(&self) -> &[Vec<f64>; 3] {
        &self.curves
    }

    /// 3 x bands matrix mapping a spectrum to unnormalized RGB, quadrature weights included.
    pub fn matrix(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        DMatrix::from_fn(3, self.grid.bands(), |c, b| self.curves[c][b] * w[b])
    }
}

/// 3-channel image stored as (y, x, channel), values in [0, 1] after
/// normalization by the image maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * 3;
        &self.data[i..i + 3]
    }
}
