//! Attention-map export: 8-bit min-max scaling, nearest-neighbor
//! upsampling back to image resolution, and a 50% overlay blend. The
//! outputs are plain PGM/PPM files so any image viewer can read them.

use std::path::Path;

use crate::data::netpbm;
use crate::error::{Error, Result};

/// Min-max scale to [0, 255]: the smallest cell maps to 0, the largest to
/// 255. A constant map carries no ordering information, so it becomes
/// mid-gray 128 everywhere.
pub fn scale_to_bytes(values: &[f64]) -> Result<Vec<u8>> {
    if values.is_empty() {
        return Err(Error::param("cannot scale an empty map"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("attention map holds non-finite values"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![128; values.len()]);
    }
    Ok(values
        .iter()
        .map(|v| ((v - min) / (max - min) * 255.0).round() as u8)
        .collect())
}

/// Nearest-neighbor resize of a single-channel byte grid; output cell
/// (r, c) reads source cell (r*src_h/dst_h, c*src_w/dst_w).
pub fn upsample_nearest(
    map: &[u8],
    src: (usize, usize),
    dst: (usize, usize),
) -> Result<Vec<u8>> {
    let (sh, sw) = src;
    let (dh, dw) = dst;
    if sh == 0 || sw == 0 || dh == 0 || dw == 0 || map.len() != sh * sw {
        return Err(Error::shape(
            "upsample_nearest",
            format!("{} bytes for {sh}x{sw} -> {dh}x{dw}", map.len()),
        ));
    }
    let mut out = Vec::with_capacity(dh * dw);
    for r in 0..dh {
        let sr = r * sh / dh;
        for c in 0..dw {
            out.push(map[sr * sw + c * sw / dw]);
        }
    }
    Ok(out)
}

/// 50% blend of a gray heat layer over an image in [0,1]; always returns
/// RGB bytes (single-channel inputs are replicated), rounding half up.
pub fn overlay(
    pixels: &[f64],
    dims: (usize, usize, usize),
    heat: &[u8],
) -> Result<Vec<u8>> {
    let (h, w, c) = dims;
    if pixels.len() != h * w * c || (c != 1 && c != 3) {
        return Err(Error::shape(
            "overlay",
            format!("{} pixel values for {h}x{w}x{c}", pixels.len()),
        ));
    }
    if heat.len() != h * w {
        return Err(Error::shape(
            "overlay",
            format!("heat layer has {} cells, image {h}x{w} needs {}", heat.len(), h * w),
        ));
    }
    let mut out = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for ch in 0..3 {
            let v = pixels[i * c + if c == 3 { ch } else { 0 }];
            let img = (v.clamp(0.0, 1.0) * 255.0).round() as u16;
            out.push(((img + heat[i] as u16 + 1) / 2) as u8);
        }
    }
    Ok(out)
}

/// Raw map as an 8-bit PGM at grid resolution.
pub fn write_heatmap(path: &Path, values: &[f64], grid: (usize, usize)) -> Result<()> {
    let (h, w) = grid;
    if values.len() != h * w {
        return Err(Error::shape(
            "write_heatmap",
            format!("{} values for a {h}x{w} grid", values.len()),
        ));
    }
    let bytes = scale_to_bytes(values)?;
    netpbm::write_pgm(path, w, h, &bytes)
}

/// Upsampled 50% overlay onto the source image as PPM.
pub fn write_overlay(
    path: &Path,
    pixels: &[f64],
    dims: (usize, usize, usize),
    values: &[f64],
    grid: (usize, usize),
) -> Result<()> {
    if values.len() != grid.0 * grid.1 {
        return Err(Error::shape(
            "write_overlay",
            format!("{} values for a {}x{} grid", values.len(), grid.0, grid.1),
        ));
    }
    let bytes = scale_to_bytes(values)?;
    let up = upsample_nearest(&bytes, grid, (dims.0, dims.1))?;
    let blended = overlay(pixels, dims, &up)?;
    netpbm::write_ppm(path, dims.1, dims.0, &blended)
}
