//! 8-bit PNG conversion. Reals in [0, 1] are quantized with rounding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Mask, Raster, RgbImage};

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, image: &RgbImage) -> Result<()> {
    let (w, h) = image.dims();
    let buf: Vec<u8> = image.as_slice().iter().flat_map(|c| c.map(quantize)).collect();
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Raster::from_vec(w, h, data))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = mask.dims();
    let buf: Vec<u8> = mask.as_slice().iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::L8)?;
    Ok(())
}

/// Any non-zero value is a participating pixel.
pub fn read_mask(path: &Path) -> Result<Mask> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Raster::from_vec(w, h, img.pixels().map(|p| p[0] != 0).collect()))
}

/// Single-channel visualization of a scalar field normalized to `[lo, hi]`.
pub fn write_gray(path: &Path, values: &Raster<f64>, lo: f64, hi: f64) -> Result<()> {
    let (w, h) = values.dims();
    let span = (hi - lo).max(1e-12);
    let buf: Vec<u8> = values.as_slice().iter().map(|v| quantize((v - lo) / span)).collect();
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::L8)?;
    Ok(())
}
