//! Image-folder datasets: one subdirectory per class holding binary PPM
//! (color) or PGM (grayscale) files. Class indices follow lexicographic
//! directory order; files load in sorted order, so a byte-identical tree
//! always produces an identical dataset.

use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm;
use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

pub fn load_image_folder(root: &Path) -> Result<Dataset> {
    let class_dirs = sorted_entries(root, |p| p.is_dir())?;
    if class_dirs.is_empty() {
        return Err(Error::format(root, "no class directories found"));
    }
    let mut images = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut next_id = 0;
    for (label, dir) in class_dirs.iter().enumerate() {
        let files = sorted_entries(dir, |p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("ppm") | Some("pgm")
                )
        })?;
        if files.is_empty() {
            return Err(Error::format(dir, "class directory contains no .ppm or .pgm images"));
        }
        for file in files {
            let raw = netpbm::read(&file)?;
            let got = (raw.height, raw.width, raw.channels);
            match dims {
                None => dims = Some(got),
                Some(want) if want != got => {
                    return Err(Error::format(
                        &file,
                        format!(
                            "image is {}x{}x{} but the rest of the dataset is {}x{}x{}",
                            got.0, got.1, got.2, want.0, want.1, want.2
                        ),
                    ));
                }
                Some(_) => {}
            }
            images.push(LabeledImage {
                pixels: raw.data.iter().map(|&b| b as f64 / 255.0).collect(),
                label,
                id: next_id,
            });
            next_id += 1;
        }
    }
    let (height, width, channels) = dims.unwrap();
    Dataset::new(images, class_dirs.len(), height, width, channels)
}

/// Writes `root/class_NNN/img_NNNNN.ppm` (or `.pgm` for single-channel
/// data). [`load_image_folder`] on the result reproduces the dataset up to
/// 1/255 quantization.
pub fn export_image_folder(root: &Path, dataset: &Dataset) -> Result<()> {
    if dataset.channels != 1 && dataset.channels != 3 {
        return Err(Error::param(format!(
            "can only export 1- or 3-channel images, got {}",
            dataset.channels
        )));
    }
    for img in &dataset.images {
        let dir = root.join(format!("class_{:03}", img.label));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let bytes: Vec<u8> = img
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        if dataset.channels == 3 {
            let path = dir.join(format!("img_{:05}.ppm", img.id));
            netpbm::write_ppm(&path, dataset.width, dataset.height, &bytes)?;
        } else {
            let path = dir.join(format!("img_{:05}.pgm", img.id));
            netpbm::write_pgm(&path, dataset.width, dataset.height, &bytes)?;
        }
    }
    Ok(())
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if keep(&path) {
            out.push(path);
        }
    }
    // Sort by name, not full path, so ordering is stable across roots.
    out.sort_by_key(|p| p.file_name().map(|n| n.to_owned()));
    Ok(out)
}
