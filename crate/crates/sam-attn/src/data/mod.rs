//! Datasets: a synthetic spurious-correlation generator, an image-folder
//! loader, stratified low-label subsampling, and seeded batch iteration.

use crate::error::{Error, Result};
use crate::rng::{component_rng, STREAM_EPOCH, STREAM_SUBSAMPLE};

pub mod folder;
pub mod netpbm;
pub mod synthetic;

pub use folder::{export_image_folder, load_image_folder};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// One sample. `id` is stable across subsampling and shuffling; per-sample
/// randomness (crops, synthesis) keys off it, so the same image always sees
/// the same stream no matter which subset it lands in.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// Row-major `[H, W, C]`, values in [0,1].
    pub pixels: Vec<f64>,
    pub label: usize,
    pub id: u64,
}

/// A uniform-sized labeled image collection.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<LabeledImage>,
        num_classes: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        let pixel_len = height * width * channels;
        for img in &images {
            if img.pixels.len() != pixel_len {
                return Err(Error::contract(format!(
                    "image {} has {} values, expected {height}x{width}x{channels} = {pixel_len}",
                    img.id,
                    img.pixels.len()
                )));
            }
            if img.label >= num_classes {
                return Err(Error::contract(format!(
                    "image {} has label {} but only {num_classes} classes exist",
                    img.id, img.label
                )));
            }
            if img.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::contract(format!(
                    "image {} has pixel values outside [0,1]",
                    img.id
                )));
            }
        }
        Ok(Dataset {
            images,
            num_classes,
            height,
            width,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }
}

/// Low-label experiment knobs: keep a fraction of each class's images over a
/// subset of the classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub label_proportion: f64,
    pub category_count: usize,
    pub seed: u64,
}

/// Stratified subsampling: a seeded shuffle picks `category_count` classes,
/// then each kept class retains floor(proportion * n) of its images (at
/// least one), sampled by the same seeded stream. Kept labels are re-indexed
/// densely in ascending original-class order; image ids are preserved.
pub fn subsample(dataset: &Dataset, split: &SplitSpec) -> Result<Dataset> {
    let p = split.label_proportion;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param(format!(
            "label proportion must be in (0,1], got {p}"
        )));
    }
    if split.category_count == 0 || split.category_count > dataset.num_classes {
        return Err(Error::param(format!(
            "category count {} out of range for {} classes",
            split.category_count, dataset.num_classes
        )));
    }
    if dataset.is_empty() {
        return Err(Error::param("cannot subsample an empty dataset"));
    }
    let mut rng = component_rng(split.seed, STREAM_SUBSAMPLE);
    let mut classes: Vec<usize> = (0..dataset.num_classes).collect();
    shuffle(&mut classes, &mut rng);
    let mut kept_classes = classes[..split.category_count].to_vec();
    kept_classes.sort_unstable();
    let new_label: Vec<Option<usize>> = {
        let mut map = vec![None; dataset.num_classes];
        for (new, &old) in kept_classes.iter().enumerate() {
            map[old] = Some(new);
        }
        map
    };

    let mut selected: Vec<usize> = Vec::new();
    for &class in &kept_classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.images[i].label == class)
            .collect();
        if members.is_empty() {
            return Err(Error::param(format!("class {class} has no images to sample")));
        }
        shuffle(&mut members, &mut rng);
        let keep = ((p * members.len() as f64).floor() as usize).max(1);
        selected.extend_from_slice(&members[..keep]);
    }
    // Ascending original order, so proportion 1.0 over all classes is the
    // identity and batch streams see a stable base order.
    selected.sort_unstable();

    let images = selected
        .into_iter()
        .map(|i| {
            let img = &dataset.images[i];
            LabeledImage {
                pixels: img.pixels.clone(),
                label: new_label[img.label].unwrap(),
                id: img.id,
            }
        })
        .collect();
    Dataset::new(
        images,
        split.category_count,
        dataset.height,
        dataset.width,
        dataset.channels,
    )
}

/// Index batches for one epoch: a seeded shuffle of the whole dataset,
/// chunked; the final short batch is kept.
pub fn batch_indices(
    len: usize,
    batch_size: usize,
    epoch_seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = component_rng(epoch_seed, STREAM_EPOCH + epoch as u64);
    shuffle(&mut order, &mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Fisher-Yates with draws from our own stream discipline, so shuffles stay
/// reproducible regardless of what the rand crate changes internally.
fn shuffle<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(classes: usize, per_class: usize) -> Dataset {
        let mut images = Vec::new();
        let mut id = 0;
        for class in 0..classes {
            for _ in 0..per_class {
                images.push(LabeledImage {
                    pixels: vec![class as f64 / classes as f64; 4 * 4 * 1],
                    label: class,
                    id,
                });
                id += 1;
            }
        }
        Dataset::new(images, classes, 4, 4, 1).unwrap()
    }

    #[test]
    fn dataset_validation_rejects_bad_members() {
        let img = LabeledImage { pixels: vec![0.5; 16], label: 0, id: 0 };
        assert!(Dataset::new(vec![img.clone()], 1, 4, 4, 1).is_ok());
        let wrong_len = LabeledImage { pixels: vec![0.5; 15], ..img.clone() };
        assert!(Dataset::new(vec![wrong_len], 1, 4, 4, 1).is_err());
        let bad_label = LabeledImage { label: 3, ..img.clone() };
        assert!(Dataset::new(vec![bad_label], 1, 4, 4, 1).is_err());
        let out_of_range = LabeledImage { pixels: vec![1.5; 16], ..img };
        assert!(Dataset::new(vec![out_of_range], 1, 4, 4, 1).is_err());
    }

    #[test]
    fn full_proportion_over_all_classes_is_identity() {
        let ds = toy_dataset(4, 5);
        let out = subsample(
            &ds,
            &SplitSpec { label_proportion: 1.0, category_count: 4, seed: 3 },
        )
        .unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn ten_percent_of_thirty_keeps_three_per_class() {
        let ds = toy_dataset(4, 30);
        let out = subsample(
            &ds,
            &SplitSpec { label_proportion: 0.10, category_count: 4, seed: 1 },
        )
        .unwrap();
        assert_eq!(out.per_class_counts(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn tiny_proportion_keeps_at_least_one_per_class() {
        let ds = toy_dataset(3, 4);
        let out = subsample(
            &ds,
            &SplitSpec { label_proportion: 0.01, category_count: 3, seed: 0 },
        )
        .unwrap();
        assert_eq!(out.per_class_counts(), vec![1, 1, 1]);
    }

    #[test]
    fn category_subsets_relabel_densely_and_keep_ids() {
        let ds = toy_dataset(6, 2);
        let out = subsample(
            &ds,
            &SplitSpec { label_proportion: 1.0, category_count: 2, seed: 9 },
        )
        .unwrap();
        assert_eq!(out.num_classes, 2);
        assert_eq!(out.len(), 4);
        assert_eq!(out.per_class_counts(), vec![2, 2]);
        // Ids survive; the pixels tell us which original class each came
        // from, and the dense labels must preserve ascending class order.
        let mut seen = std::collections::BTreeSet::new();
        for img in &out.images {
            seen.insert((img.label, (img.pixels[0] * 6.0).round() as usize));
            assert!(ds.images.iter().any(|o| o.id == img.id && o.pixels == img.pixels));
        }
        let pairs: Vec<_> = seen.into_iter().collect();
        assert_eq!(pairs.len(), 2, "one (label, origin) pair per kept class");
        assert!(pairs[0].1 < pairs[1].1, "label 0 maps to the smaller original class");
    }

    #[test]
    fn different_seeds_select_different_images_but_equal_counts() {
        let ds = toy_dataset(4, 20);
        let a = subsample(&ds, &SplitSpec { label_proportion: 0.30, category_count: 4, seed: 1 }).unwrap();
        let b = subsample(&ds, &SplitSpec { label_proportion: 0.30, category_count: 4, seed: 2 }).unwrap();
        assert_eq!(a.per_class_counts(), b.per_class_counts());
        let ids = |d: &Dataset| d.images.iter().map(|i| i.id).collect::<Vec<_>>();
        assert_ne!(ids(&a), ids(&b));
        // Idempotence: the same seed reproduces the same subset.
        let a2 = subsample(&ds, &SplitSpec { label_proportion: 0.30, category_count: 4, seed: 1 }).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn subsample_validates_its_inputs() {
        let ds = toy_dataset(2, 3);
        assert!(subsample(&ds, &SplitSpec { label_proportion: 0.0, category_count: 2, seed: 0 }).is_err());
        assert!(subsample(&ds, &SplitSpec { label_proportion: 1.1, category_count: 2, seed: 0 }).is_err());
        assert!(subsample(&ds, &SplitSpec { label_proportion: 0.5, category_count: 3, seed: 0 }).is_err());
        assert!(subsample(&ds, &SplitSpec { label_proportion: 0.5, category_count: 0, seed: 0 }).is_err());
    }

    #[test]
    fn batches_partition_the_dataset() {
        let batches = batch_indices(25, 8, 7, 0).unwrap();
        assert_eq!(batches.len(), 4);
        assert_eq!(batches.last().unwrap().len(), 1);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch_yields_a_single_batch() {
        let batches = batch_indices(5, 100, 0, 0).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 5);
    }

    #[test]
    fn batch_order_is_seed_and_epoch_determined() {
        let a = batch_indices(40, 8, 3, 2).unwrap();
        let b = batch_indices(40, 8, 3, 2).unwrap();
        let c = batch_indices(40, 8, 3, 3).unwrap();
        let d = batch_indices(40, 8, 4, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert!(batch_indices(10, 0, 0, 0).is_err());
    }
}
