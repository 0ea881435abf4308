//! HXC1 cube and HXM1 mask files.
//!
//! HXC1 (little-endian): `"HXC1"`, u32 height, u32 width, u32 bands,
//! f32[bands] wavelengths in nm, f32[height*width*bands] data in (y, x, band) order.
//!
//! HXM1: `"HXM1"`, u32 height, u32 width, u16[height*width] labels, u32 class
//! count, then per class a u32 byte length followed by UTF-8 bytes.
//!
//! Values are stored as f32, so a cube round-trips bit-exactly whenever its
//! samples are f32-representable (in particular anything read from disk).

use std::fs;
use std::path::Path;

use super::{HsiCube, LabelMask, SpectralGrid};
use crate::binio::{dim_u32, put_f32s, put_u32, Reader};
use crate::error::{Error, Result};

const CUBE_MAGIC: &[u8; 4] = b"HXC1";
const MASK_MAGIC: &[u8; 4] = b"HXM1";

pub fn write_cube(cube: &HsiCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * (cube.bands() + cube.data().len()));
    out.extend_from_slice(CUBE_MAGIC);
    put_u32(&mut out, dim_u32(cube.height(), "height")?);
    put_u32(&mut out, dim_u32(cube.width(), "width")?);
    put_u32(&mut out, dim_u32(cube.bands(), "bands")?);
    put_f32s(&mut out, cube.grid().wavelengths_nm());
    put_f32s(&mut out, cube.data());
    Ok(out)
}

pub fn read_cube(bytes: &[u8]) -> Result<HsiCube> {
    let mut r = Reader::new(bytes);
    r.magic(CUBE_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let bands = r.u32()? as usize;
    let wavelengths = r.f32_vec(bands)?;
    let n = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(bands))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
    let data = r.f32_vec(n)?;
    r.finish()?;
    let grid = SpectralGrid::new(wavelengths)?;
    HsiCube::new(grid, height, width, data)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_cube(cube)?)?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    read_cube(&fs::read(path)?)
}

pub fn write_mask(mask: &LabelMask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 2 * mask.labels().len());
    out.extend_from_slice(MASK_MAGIC);
    put_u32(&mut out, dim_u32(mask.height(), "height")?);
    put_u32(&mut out, dim_u32(mask.width(), "width")?);
    for &l in mask.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    put_u32(&mut out, dim_u32(mask.class_names().len(), "class count")?);
    for name in mask.class_names() {
        put_u32(&mut out, dim_u32(name.len(), "class name length")?);
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

pub fn read_mask(bytes: &[u8]) -> Result<LabelMask> {
    let mut r = Reader::new(bytes);
    r.magic(MASK_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format("mask dimensions overflow".into()))?;
    let raw = r.take(n.checked_mul(2).ok_or_else(|| Error::Format("mask size overflow".into()))?)?;
    let labels = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let count = r.u32()? as usize;
    let mut names = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let bytes = r.take(len)?;
        let name = std::str::from_utf8(bytes)
            .map_err(|e| Error::Format(format!("class name is not UTF-8: {e}")))?;
        names.push(name.to_owned());
    }
    r.finish()?;
    LabelMask::new(height, width, labels, names)
}

pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_mask(mask)?)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    read_mask(&fs::read(path)?)
}
