//! Seeded synthetic benchmark with a controllable spurious cue. Every image
//! is a pastel background tint with one small two-color signature patch
//! pasted at a random spot. The patch texture identifies the class (the true
//! signal); the tint tracks the label with probability ρ at train time but
//! is uniform at test time, so a model that keys on background color aces
//! training and collapses to chance on the test split.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::{component_rng, STREAM_CLASS_STYLE, STREAM_IMAGE};

// ── Spec ──────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Train images per class; the test split gets twice as many.
    pub images_per_class: usize,
    /// Images are square, `image_size` pixels on a side, 3 channels.
    pub image_size: usize,
    pub patch_size: usize,
    /// ρ: probability a train image's tint is the class-linked one rather
    /// than a uniform draw.
    pub spurious_correlation: f64,
    /// σ of the Gaussian pixel noise added after compositing.
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Minutes-scale defaults: a shortcut strong enough (ρ=0.95) that small
    /// training subsets reliably bait a classifier into using it.
    pub fn desk(seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 8,
            images_per_class: 100,
            image_size: 32,
            patch_size: 8,
            spurious_correlation: 0.95,
            noise_level: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::param(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.images_per_class == 0 {
            return Err(Error::param("images_per_class must be at least 1"));
        }
        if self.patch_size == 0 || self.patch_size >= self.image_size {
            return Err(Error::param(format!(
                "patch size {} must be in 1..{} (image size)",
                self.patch_size, self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.spurious_correlation) {
            return Err(Error::param(format!(
                "spurious correlation must be in [0,1], got {}",
                self.spurious_correlation
            )));
        }
        if !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return Err(Error::param(format!(
                "noise level must be finite and >= 0, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }

    fn test_per_class(&self) -> usize {
        2 * self.images_per_class
    }
}

// ── Generation ────────────────────────────────────────────────────────────

/// Ground truth the generator used for one image; the pixels only hint at it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMeta {
    pub tint: usize,
    pub patch_row: usize,
    pub patch_col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSplit {
    pub data: Dataset,
    /// Parallel to `data.images`.
    pub meta: Vec<SampleMeta>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = generate_synthetic_with_meta(spec)?;
    Ok((train.data, test.data))
}

/// Like [`generate_synthetic`] but also returns each image's tint index and
/// patch position, for auditing how much the spurious cue leaks.
pub fn generate_synthetic_with_meta(
    spec: &SyntheticSpec,
) -> Result<(GeneratedSplit, GeneratedSplit)> {
    spec.validate()?;
    let styles: Vec<ClassStyle> = (0..spec.num_classes)
        .map(|label| ClassStyle::new(spec, label))
        .collect();
    let palette = tint_palette(spec.num_classes);
    // Ids run train-then-test so every image keeps its own stream no matter
    // how the splits are consumed later.
    let mut next_id = 0;
    let train = render_split(
        spec,
        &styles,
        &palette,
        spec.images_per_class,
        spec.spurious_correlation,
        &mut next_id,
    )?;
    // Test tints are a uniform draw, exactly the ρ=0 path: chance-level
    // association with the label.
    let test = render_split(spec, &styles, &palette, spec.test_per_class(), 0.0, &mut next_id)?;
    Ok((train, test))
}

fn render_split(
    spec: &SyntheticSpec,
    styles: &[ClassStyle],
    palette: &[[f64; 3]],
    per_class: usize,
    rho: f64,
    next_id: &mut u64,
) -> Result<GeneratedSplit> {
    let noise = if spec.noise_level > 0.0 {
        Some(
            Normal::new(0.0, spec.noise_level)
                .map_err(|e| Error::param(format!("bad noise level: {e}")))?,
        )
    } else {
        None
    };
    let total = per_class * spec.num_classes;
    let mut images = Vec::with_capacity(total);
    let mut meta = Vec::with_capacity(total);
    let span = spec.image_size - spec.patch_size + 1;
    for label in 0..spec.num_classes {
        for _ in 0..per_class {
            let id = *next_id;
            *next_id += 1;
            let mut rng = component_rng(spec.seed, STREAM_IMAGE + id);
            // random::<f64>() < 1.0 always holds, so ρ=1 never falls through.
            let tint = if rng.random::<f64>() < rho {
                label
            } else {
                rng.random_range(0..spec.num_classes)
            };
            let patch_row = rng.random_range(0..span);
            let patch_col = rng.random_range(0..span);
            let pixels = render_image(
                spec,
                &styles[label],
                &palette[tint],
                patch_row,
                patch_col,
                noise.as_ref(),
                &mut rng,
            );
            images.push(LabeledImage { pixels, label, id });
            meta.push(SampleMeta { tint, patch_row, patch_col });
        }
    }
    let data = Dataset::new(images, spec.num_classes, spec.image_size, spec.image_size, 3)?;
    Ok(GeneratedSplit { data, meta })
}

fn render_image(
    spec: &SyntheticSpec,
    style: &ClassStyle,
    tint: &[f64; 3],
    row0: usize,
    col0: usize,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let size = spec.image_size;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size {
        pixels.extend_from_slice(tint);
    }
    for r in 0..spec.patch_size {
        for c in 0..spec.patch_size {
            let color = if style.mask[r * spec.patch_size + c] {
                &style.color_a
            } else {
                &style.color_b
            };
            let base = ((row0 + r) * size + (col0 + c)) * 3;
            pixels[base..base + 3].copy_from_slice(color);
        }
    }
    if let Some(noise) = noise {
        for v in &mut pixels {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    pixels
}

// ── Class styles and colors ───────────────────────────────────────────────

/// A class's signature: a fixed two-color layout for the patch cells.
struct ClassStyle {
    mask: Vec<bool>,
    color_a: [f64; 3],
    color_b: [f64; 3],
}

impl ClassStyle {
    fn new(spec: &SyntheticSpec, label: usize) -> Self {
        let mut rng = component_rng(spec.seed, STREAM_CLASS_STYLE + label as u64);
        let mask = (0..spec.patch_size * spec.patch_size)
            .map(|_| rng.random_bool(0.5))
            .collect();
        let color_a = dark_color(&mut rng);
        let color_b = dark_color(&mut rng);
        ClassStyle { mask, color_a, color_b }
    }
}

/// Saturated and dark (brightest channel <= 0.55), so patch cells stay
/// separable from every pastel tint even under noise.
fn dark_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let hue = rng.random::<f64>();
    let value = 0.25 + 0.30 * rng.random::<f64>();
    hsv_to_rgb(hue, 0.9, value)
}

/// Evenly spaced pastel hues; channels span [0.60, 0.92], well above any
/// patch color.
fn tint_palette(num_classes: usize) -> Vec<[f64; 3]> {
    (0..num_classes)
        .map(|c| hsv_to_rgb(c as f64 / num_classes as f64, 0.35, 0.92))
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() + 1.0).fract() * 6.0;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match h6.floor() as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, t],
    }
}

// ── Tests ─────────────────────────────────────────────────────────────────
