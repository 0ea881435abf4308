//! Browser bindings for the static demo page in `www/`.
//!
//! Every export returns a flat `Float64Array`; layouts are documented per
//! function. The `*_impl` functions hold the logic and are tested natively.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectral_codec::cmt::CmtModel;
use spectral_codec::projector::{design_pca, remap_physical, ProjectorBank};
use spectral_codec::spectra::{
    default_corpus_descriptor, metamer_of, synth_scene, wavelength_to_omega, RgbResponse, SpectralGrid,
};
use wasm_bindgen::prelude::*;

type Res<T> = std::result::Result<T, String>;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn wavelengths() -> Vec<f64> {
    SpectralGrid::visible().wavelengths_nm().to_vec()
}

pub fn filter_transmission_impl(centers_nm: &[f64], couplings: &[f64]) -> Res<Vec<f64>> {
    let grid = SpectralGrid::visible();
    let freqs = centers_nm.iter().map(|&l| wavelength_to_omega(l)).collect();
    let model = CmtModel::with_swap_background(freqs, couplings).map_err(|e| e.to_string())?;
    model.transmission_response(&grid).map_err(|e| e.to_string())
}

/// Transmission on the 31-band visible grid of a filter with one resonance
/// per entry of `centers_nm` and two port couplings per resonance.
#[wasm_bindgen]
pub fn filter_transmission(centers_nm: &[f64], couplings: &[f64]) -> Result<Vec<f64>, JsError> {
    filter_transmission_impl(centers_nm, couplings).map_err(js)
}

fn scene_bank(seed: u32, k: usize) -> Res<ProjectorBank> {
    let desc = default_corpus_descriptor(48, 48);
    let (cube, _) = synth_scene(&desc, seed as u64).map_err(|e| e.to_string())?;
    design_pca(&cube.flatten(), cube.grid(), k, false).map_err(|e| e.to_string())
}

pub fn pca_curves_impl(seed: u32, k: usize, physical: bool) -> Res<Vec<f64>> {
    let bank = scene_bank(seed, k)?;
    let bank = if physical { remap_physical(&bank) } else { bank };
    let c = bank.curves();
    Ok((0..c.nrows()).flat_map(|r| c.row(r).iter().copied().collect::<Vec<_>>()).collect())
}

/// PCA projector curves of one synthetic scene: `k` rows of 31 values,
/// row-major. With `physical`, each curve is remapped into [0.02, 0.98].
#[wasm_bindgen]
pub fn pca_curves(seed: u32, k: usize, physical: bool) -> Result<Vec<f64>, JsError> {
    pca_curves_impl(seed, k, physical).map_err(js)
}

pub fn metamer_pair_impl(seed: u32, k: usize) -> Res<Vec<f64>> {
    let grid = SpectralGrid::visible();
    let desc = default_corpus_descriptor(48, 48);
    let spectra = desc.class_spectra().map_err(|e| e.to_string())?;
    let source = &spectra[1 + seed as usize % 5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let twin = metamer_of(source, &grid, &mut rng).map_err(|e| e.to_string())?;
    let rgb = RgbResponse::gaussian(&grid).matrix();
    let bank = remap_physical(&scene_bank(0, k)?);
    let a = bank.encoding_matrix();
    let mut out = Vec::with_capacity(2 * (31 + 3 + k));
    for s in [source, &twin] {
        out.extend_from_slice(s);
    }
    for s in [source, &twin] {
        out.extend((&rgb * DVector::from_column_slice(s)).iter());
    }
    for s in [source, &twin] {
        out.extend((&a * DVector::from_column_slice(s)).iter());
    }
    Ok(out)
}

/// A class spectrum and a metamer of it. Layout: spectrum A (31), spectrum
/// B (31), RGB of A (3), RGB of B (3), barcode of A (k), barcode of B (k).
#[wasm_bindgen]
pub fn metamer_pair(seed: u32, k: usize) -> Result<Vec<f64>, JsError> {
    metamer_pair_impl(seed, k).map_err(js)
}
