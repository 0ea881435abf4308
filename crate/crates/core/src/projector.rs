//! Projector banks: PCA design, barcode encoding and linear decoding.
//!
//! A pixel spectrum `beta(omega)` is encoded into `k` numbers
//! `S_k = integral Lambda_k(omega) beta(omega) domega`, evaluated with the
//! grid's trapezoidal weights. Linear decoding returns the weighted
//! least-squares spectrum in the span of the curves,
//! `beta_hat = Lambda^T G^-1 S` with `G = Lambda diag(w) Lambda^T`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{dim_u32, put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::spectra::{HsiCube, SpectraMatrix, SpectralGrid};

pub const DEFAULT_K: usize = 9;
pub const PHYSICAL_LOW: f64 = 0.02;
pub const PHYSICAL_HIGH: f64 = 0.98;
const GRAM_CONDITION_LIMIT: f64 = 1e12;
const PIXEL_CHUNK: usize = 4096;

/// `physical = scale * raw + offset`. Degenerate (constant) curves store
/// `scale = 0` and keep the raw constant so the map stays invertible on barcodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
    pub degenerate: bool,
    #[serde(default)]
    pub raw_constant: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        scale: 1.0,
        offset: 0.0,
        degenerate: false,
        raw_constant: 0.0,
    };

    pub fn apply(&self, raw: f64) -> f64 {
        self.scale * raw + self.offset
    }

    pub fn invert(&self, physical: f64) -> f64 {
        if self.degenerate {
            self.raw_constant
        } else {
            (physical - self.offset) / self.scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorBank {
    grid: SpectralGrid,
    /// k x bands, one curve per row.
    curves: DMatrix<f64>,
    affine: Vec<AffineMap>,
    orthonormal: bool,
    physical: bool,
    singular_values: Vec<f64>,
}

impl ProjectorBank {
    /// Arbitrary bank; flags are derived from the curve values.
    pub fn new(grid: SpectralGrid, curves: DMatrix<f64>) -> Result<Self> {
        if curves.nrows() == 0 {
            return Err(Error::InvalidArgument("a bank needs at least one curve".into()));
        }
        if curves.ncols() != grid.bands() {
            return Err(Error::DimensionMismatch(format!(
                "curves have {} samples, grid has {} bands",
                curves.ncols(),
                grid.bands()
            )));
        }
        if curves.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite curve value".into()));
        }
        let k = curves.nrows();
        let physical = curves.iter().all(|v| (0.0..=1.0).contains(v));
        let gram = &curves * curves.transpose();
        let orthonormal = (gram - DMatrix::identity(k, k)).amax() <= 1e-10;
        Ok(Self {
            grid,
            curves,
            affine: vec![AffineMap::IDENTITY; k],
            orthonormal,
            physical,
            singular_values: Vec::new(),
        })
    }

    /// Replaces the curves, keeping the affine metadata (used for realized banks).
    pub fn with_curves(&self, curves: DMatrix<f64>) -> Result<Self> {
        let mut b = Self::new(self.grid.clone(), curves)?;
        if b.k() != self.k() {
            return Err(Error::DimensionMismatch("curve count changed".into()));
        }
        b.affine = self.affine.clone();
        Ok(b)
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.curves.nrows()
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn curve(&self, i: usize) -> Vec<f64> {
        self.curves.row(i).iter().copied().collect()
    }

    pub fn affine(&self) -> &[AffineMap] {
        &self.affine
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn is_physical(&self) -> bool {
        self.physical
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `A[k][b] = Lambda_k(omega_b) * w_b`, so that `S = A beta`.
    pub fn encoding_matrix(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        DMatrix::from_fn(self.k(), self.grid.bands(), |r, b| self.curves[(r, b)] * w[b])
    }

    /// Quadrature Gram matrix `Lambda diag(w) Lambda^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.encoding_matrix() * self.curves.transpose()
    }

    /// Ratio of extreme eigenvalues of the Gram matrix.
    pub fn gram_condition(&self) -> f64 {
        let eig = self.gram().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Top-`k` left singular vectors of `spectra` (optionally mean-centred),
/// sign-fixed so each curve's largest-magnitude entry is positive.
pub fn design_pca(spectra: &SpectraMatrix, grid: &SpectralGrid, k: usize, centered: bool) -> Result<ProjectorBank> {
    let (bands, n) = (spectra.bands(), spectra.columns());
    if bands != grid.bands() {
        return Err(Error::GridMismatch);
    }
    if k == 0 || k > bands.min(n) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={} for a {bands}x{n} matrix",
            bands.min(n)
        )));
    }
    if spectra.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("spectra contain non-finite values".into()));
    }
    let mut b = spectra.matrix.clone();
    if centered {
        let mean = b.column_mean();
        for mut col in b.column_iter_mut() {
            col -= &mean;
        }
    }
    // B^T = Q R  =>  B = R^T Q^T, so B and R^T share left singular vectors.
    let small = if n > bands {
        b.transpose().qr().r().transpose()
    } else {
        b
    };
    let svd = small
        .try_svd(true, false, f64::EPSILON, 10_000)
        .ok_or(Error::SvdNotConverged)?;
    let u = svd.u.ok_or(Error::SvdNotConverged)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut curves = DMatrix::zeros(k, bands);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let col = u.column(idx);
        let (mut best, mut best_abs) = (0, -1.0);
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for bnd in 0..bands {
            curves[(row, bnd)] = sign * col[bnd];
        }
    }
    let mut bank = ProjectorBank::new(grid.clone(), curves)?;
    bank.orthonormal = true;
    bank.singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok(bank)
}

/// Frobenius norm of `B - Q^T Q B` for a bank with orthonormal rows `Q`.
pub fn reconstruction_error(spectra: &SpectraMatrix, bank: &ProjectorBank) -> f64 {
    let q = bank.curves();
    let coeffs = q * &spectra.matrix;
    let residual = &spectra.matrix - q.transpose() * coeffs;
    residual.norm()
}

/// Maps every curve affinely onto `[0.02, 0.98]`.
pub fn remap_physical(bank: &ProjectorBank) -> ProjectorBank {
    let mut curves = bank.curves.clone();
    let mut affine = Vec::with_capacity(bank.k());
    for r in 0..bank.k() {
        let row = bank.curves.row(r);
        let (lo, hi) = (row.min(), row.max());
        let map = if hi - lo > 0.0 {
            let scale = (PHYSICAL_HIGH - PHYSICAL_LOW) / (hi - lo);
            AffineMap {
                scale,
                offset: PHYSICAL_LOW - scale * lo,
                degenerate: false,
                raw_constant: 0.0,
            }
        } else {
            AffineMap {
                scale: 0.0,
                offset: 0.5 * (PHYSICAL_LOW + PHYSICAL_HIGH),
                degenerate: true,
                raw_constant: lo,
            }
        };
        for b in 0..bank.grid.bands() {
            curves[(r, b)] = map.apply(bank.curves[(r, b)]);
        }
        affine.push(map);
    }
    ProjectorBank {
        grid: bank.grid.clone(),
        curves,
        affine,
        orthonormal: false,
        physical: true,
        singular_values: bank.singular_values.clone(),
    }
}

/// Per-pixel encoded intensities, (y, x, channel) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Barcode {
    height: usize,
    width: usize,
    k: usize,
    data: Vec<f64>,
}

impl Barcode {
    pub fn new(height: usize, width: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * k {
            return Err(Error::DimensionMismatch(format!(
                "barcode has {} values, {height}x{width}x{k} needs {}",
                data.len(),
                height * width * k
            )));
        }
        Ok(Self { height, width, k, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
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

    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.data[j * self.k..(j + 1) * self.k]
    }
}

/// Stacks the pixels of several barcodes as columns of a `k x pixels` matrix.
pub fn barcode_columns(codes: &[Barcode]) -> Result<DMatrix<f64>> {
    let k = codes.first().map(|c| c.k).ok_or_else(|| Error::InvalidArgument("no barcodes".into()))?;
    if codes.iter().any(|c| c.k != k) {
        return Err(Error::DimensionMismatch("barcodes differ in channel count".into()));
    }
    let data: Vec<f64> = codes.iter().flat_map(|c| c.data.iter().copied()).collect();
    Ok(DMatrix::from_column_slice(k, data.len() / k, &data))
}

/// `out[p][r] = sum_b x[p][b] * a[r][b]` for row-major `x` (pixels x bands)
/// and `out` (pixels x rows).
fn apply_rows(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (rows, bands) = (a.nrows(), a.ncols());
    if rows == 0 || bands == 0 {
        return;
    }
    // column-major a: a[(r, b)] sits at r + b * rows
    let a = a.as_slice();
    let chunk_in = PIXEL_CHUNK * bands;
    let chunk_out = PIXEL_CHUNK * rows;
    x.par_chunks(chunk_in)
        .zip(out.par_chunks_mut(chunk_out))
        .for_each(|(xc, oc)| {
            let m = xc.len() / bands;
            // SAFETY: slices cover m*bands, bands*rows and m*rows elements with the given strides.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    bands,
                    rows,
                    1.0,
                    xc.as_ptr(),
                    bands as isize,
                    1,
                    a.as_ptr(),
                    rows as isize,
                    1,
                    0.0,
                    oc.as_mut_ptr(),
                    rows as isize,
                    1,
                );
            }
        });
}

/// Encodes every pixel of `cube` through `bank`.
pub fn encode(cube: &HsiCube, bank: &ProjectorBank) -> Result<Barcode> {
    if cube.grid() != bank.grid() {
        return Err(Error::GridMismatch);
    }
    let mut data = vec![0.0; cube.pixels() * bank.k()];
    apply_rows(&bank.encoding_matrix(), cube.data(), &mut data);
    Barcode::new(cube.height(), cube.width(), bank.k(), data)
}

/// Per-pixel `integral beta domega`, i.e. the reading of an unfiltered channel.
pub fn intensity(cube: &HsiCube) -> Vec<f64> {
    let w = cube.grid().weights();
    cube.spectra()
        .map(|px| px.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

/// Converts a barcode taken through a remapped bank back to the barcode of
/// the raw curves: `S_raw = (S_phys - offset * I) / scale`, `I` the
/// per-pixel [`intensity`].
pub fn undo_remap(barcode: &Barcode, bank: &ProjectorBank, intensity: &[f64]) -> Result<Barcode> {
    if barcode.k() != bank.k() || intensity.len() != barcode.pixels() {
        return Err(Error::DimensionMismatch("barcode, bank and intensity disagree".into()));
    }
    let mut out = barcode.clone();
    for (j, px) in out.data.chunks_exact_mut(barcode.k).enumerate() {
        for (v, map) in px.iter_mut().zip(bank.affine()) {
            *v = if map.degenerate {
                map.raw_constant * intensity[j]
            } else {
                (*v - map.offset * intensity[j]) / map.scale
            };
        }
    }
    Ok(out)
}

/// Precomputed `Lambda^T G^-1`.
#[derive(Debug, Clone)]
pub struct LinearDecoder {
    grid: SpectralGrid,
    /// bands x k
    reconstruct: DMatrix<f64>,
}

impl LinearDecoder {
    pub fn new(bank: &ProjectorBank) -> Result<Self> {
        let cond = bank.gram_condition();
        if !(cond <= GRAM_CONDITION_LIMIT) {
            return Err(Error::IllConditioned(cond));
        }
        let gram = bank.gram();
        let inv = gram
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::IllConditioned(cond))?;
        Ok(Self {
            grid: bank.grid().clone(),
            reconstruct: bank.curves().transpose() * inv,
        })
    }

    pub fn decode_pixel(&self, s: &[f64]) -> Vec<f64> {
        (&self.reconstruct * DVector::from_column_slice(s)).as_slice().to_vec()
    }

    pub fn decode(&self, barcode: &Barcode) -> Result<HsiCube> {
        if barcode.k() != self.reconstruct.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "barcode has {} channels, decoder expects {}",
                barcode.k(),
                self.reconstruct.ncols()
            )));
        }
        let bands = self.grid.bands();
        let mut data = vec![0.0; barcode.pixels() * bands];
        apply_rows(&self.reconstruct, barcode.data(), &mut data);
        HsiCube::new(self.grid.clone(), barcode.height(), barcode.width(), data)
    }
}

pub fn decode_linear(barcode: &Barcode, bank: &ProjectorBank) -> Result<HsiCube> {
    LinearDecoder::new(bank)?.decode(barcode)
}

/// Plain-text (TOML) bank file; curves are stored as f32.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankFile {
    k: usize,
    bands: usize,
    flags: Vec<String>,
    wavelengths_nm: Vec<f64>,
    affine_map: Vec<AffineMap>,
    #[serde(default)]
    singular_values: Vec<f64>,
    curves: Vec<Vec<f32>>,
}

impl ProjectorBank {
    pub fn to_toml(&self) -> String {
        let mut flags = Vec::new();
        if self.orthonormal {
            flags.push("orthonormal".to_string());
        }
        if self.physical {
            flags.push("physical".to_string());
        }
        let file = BankFile {
            k: self.k(),
            bands: self.grid.bands(),
            flags,
            wavelengths_nm: self.grid.wavelengths_nm().to_vec(),
            affine_map: self.affine.clone(),
            singular_values: self.singular_values.clone(),
            curves: (0..self.k())
                .map(|r| self.curves.row(r).iter().map(|&v| v as f32).collect())
                .collect(),
        };
        toml::to_string(&file).expect("bank serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: BankFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if f.curves.len() != f.k || f.affine_map.len() != f.k || f.wavelengths_nm.len() != f.bands {
            return Err(Error::Format("bank field lengths disagree with header".into()));
        }
        if f.curves.iter().any(|c| c.len() != f.bands) {
            return Err(Error::Format("curve length differs from band count".into()));
        }
        let grid = SpectralGrid::new(f.wavelengths_nm)?;
        let curves = DMatrix::from_fn(f.k, f.bands, |r, b| f.curves[r][b] as f64);
        let mut bank = ProjectorBank::new(grid, curves)?;
        bank.affine = f.affine_map;
        // f32 storage breaks exact orthonormality; trust the recorded flag
        bank.orthonormal = f.flags.iter().any(|s| s == "orthonormal");
        bank.physical = f.flags.iter().any(|s| s == "physical") && bank.physical;
        bank.singular_values = f.singular_values;
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

const BARCODE_MAGIC: &[u8; 4] = b"HXB1";

/// HXB1: `"HXB1"`, u32 height, u32 width, u32 k, f32 data in (y, x, channel) order.
pub fn write_barcode(b: &Barcode) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * b.data.len());
    out.extend_from_slice(BARCODE_MAGIC);
    put_u32(&mut out, dim_u32(b.height, "height")?);
    put_u32(&mut out, dim_u32(b.width, "width")?);
    put_u32(&mut out, dim_u32(b.k, "k")?);
    put_f32s(&mut out, &b.data);
    Ok(out)
}

pub fn read_barcode(bytes: &[u8]) -> Result<Barcode> {
    let mut r = Reader::new(bytes);
    r.magic(BARCODE_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(k))
        .ok_or_else(|| Error::Format("barcode dimensions overflow".into()))?;
    let data = r.f32_vec(n)?;
    r.finish()?;
    Barcode::new(h, w, k, data)
}

pub fn save_barcode(b: &Barcode, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_barcode(b)?)?;
    Ok(())
}

pub fn load_barcode(path: impl AsRef<Path>) -> Result<Barcode> {
    read_barcode(&std::fs::read(path)?)
}
