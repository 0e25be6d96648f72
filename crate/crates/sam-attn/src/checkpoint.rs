//! Versioned binary checkpoints. Layout: the magic string `SAMCKPT1`, a
//! length-prefixed text record describing the architecture (same flat
//! `key = value` format as config files), then every parameter tensor in
//! declaration order, each prefixed by rank and dims, values as
//! little-endian doubles.

use std::path::Path;

use crate::backbone::BackboneConfig;
use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::trainer::{Mode, Model, Seeds, TrainConfig};

const MAGIC: &[u8; 8] = b"SAMCKPT1";

// ── Save ──────────────────────────────────────────────────────────────────

fn architecture_record(model: &Model) -> ConfigMap {
    let cfg = &model.backbone.config;
    let mut record = ConfigMap::new();
    record.set("mode", model.mode);
    record.set("input_height", cfg.input_size.0);
    record.set("input_width", cfg.input_size.1);
    record.set("input_channels", cfg.input_size.2);
    let blocks: Vec<String> = cfg.block_channels.iter().map(|c| c.to_string()).collect();
    record.set("blocks", blocks.join(","));
    record.set("classes", cfg.num_classes);
    if let Some(bank) = &model.bank {
        record.set("k", bank.k);
    }
    record
}

fn param_shapes(model: &Model) -> Vec<Vec<usize>> {
    let mut shapes: Vec<Vec<usize>> = (0..model.backbone.kernels.len())
        .map(|b| model.backbone.kernel_shape(b).dims().to_vec())
        .collect();
    shapes.push(vec![model.head.num_classes, model.head.dim]);
    shapes.push(vec![model.head.num_classes]);
    if let Some(p) = &model.sam_projection {
        shapes.push(vec![p.w.len()]);
    }
    if let Some(b) = &model.bank {
        shapes.push(vec![b.k, b.dim]);
    }
    shapes
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    let record = architecture_record(model).to_text();
    bytes.extend_from_slice(&(record.len() as u32).to_le_bytes());
    bytes.extend_from_slice(record.as_bytes());
    let params = model.params();
    let shapes = param_shapes(model);
    bytes.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (values, dims) in params.iter().zip(&shapes) {
        debug_assert_eq!(values.len(), dims.iter().product::<usize>());
        bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ── Load ──────────────────────────────────────────────────────────────────

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("checkpoint truncated while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format(path, "not a model checkpoint (bad magic)"));
    }
    let record_len = r.u32("record length")?;
    let record_text = std::str::from_utf8(r.take(record_len, "architecture record")?)
        .map_err(|_| Error::format(path, "architecture record is not UTF-8"))?;
    let record =
        ConfigMap::parse(record_text).map_err(|e| Error::format(path, e.to_string()))?;

    let missing = |key: &str| Error::format(path, format!("architecture record lacks '{key}'"));
    let mode: Mode = record.get("mode").ok_or_else(|| missing("mode"))?.parse()?;
    let input_size = (
        record.get_parsed("input_height")?.ok_or_else(|| missing("input_height"))?,
        record.get_parsed("input_width")?.ok_or_else(|| missing("input_width"))?,
        record.get_parsed("input_channels")?.ok_or_else(|| missing("input_channels"))?,
    );
    let blocks_raw = record.get("blocks").ok_or_else(|| missing("blocks"))?;
    let block_channels = blocks_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad block list '{blocks_raw}'")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let num_classes = record.get_parsed("classes")?.ok_or_else(|| missing("classes"))?;

    let mut train_cfg = TrainConfig::new(mode);
    train_cfg.seeds = Seeds::all(0); // every parameter is overwritten below
    if mode.bilinear() {
        train_cfg.k = record.get_parsed("k")?.ok_or_else(|| missing("k"))?;
    }
    let backbone_cfg =
        BackboneConfig { input_size, block_channels, num_classes, init_seed: 0 };
    let mut model = Model::new(&train_cfg, backbone_cfg)?;

    let expected_shapes = param_shapes(&model);
    let count = r.u32("parameter count")?;
    if count != expected_shapes.len() {
        return Err(Error::format(
            path,
            format!(
                "architecture calls for {} parameter tensors, file has {count}",
                expected_shapes.len()
            ),
        ));
    }
    let mut params = model.params_mut();
    for (index, (param, expected)) in params.iter_mut().zip(&expected_shapes).enumerate() {
        let rank = r.u32("tensor rank")?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dims")?);
        }
        if &dims != expected {
            return Err(Error::format(
                path,
                format!("tensor {index}: expected shape {expected:?}, file has {dims:?}"),
            ));
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 8, "tensor values")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        **param = values;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::trainer::{evaluate, predict};

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 3,
            images_per_class: 4,
            image_size: 14,
            patch_size: 5,
            spurious_correlation: 0.9,
            noise_level: 0.05,
            seed: 2,
        }
    }

    fn build(mode: Mode) -> Model {
        let mut cfg = TrainConfig::new(mode);
        cfg.k = 3;
        cfg.seeds = Seeds::all(11);
        let backbone = BackboneConfig {
            input_size: (12, 12, 3),
            block_channels: vec![5, 9],
            num_classes: 3,
            init_seed: 11,
        };
        Model::new(&cfg, backbone).unwrap()
    }

    #[test]
    fn every_mode_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = generate_synthetic(&spec()).unwrap();
        for mode in [Mode::Baseline, Mode::Sam, Mode::Fbp, Mode::SamBilinear] {
            let model = build(mode);
            let path = dir.path().join(format!("{mode}.ckpt"));
            save_model(&path, &model).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded.mode, mode);
            assert_eq!(loaded.params(), model.params(), "{mode}");
            assert_eq!(
                loaded.backbone.config.block_channels,
                model.backbone.config.block_channels
            );
            // Same bytes in, same predictions out.
            for img in &train.images {
                assert_eq!(
                    predict(&loaded, img, &train).unwrap(),
                    predict(&model, img, &train).unwrap()
                );
            }
            assert_eq!(
                evaluate(&loaded, &train).unwrap(),
                evaluate(&model, &train).unwrap()
            );
        }
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let model = build(Mode::SamBilinear);
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_model(&a, &model).unwrap();
        save_model(&b, &model).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn record_is_human_readable_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&path, &build(Mode::Sam)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("mode = sam"));
        assert!(text.contains("blocks = 5,9"));
    }

    #[test]
    fn malformed_files_are_rejected_with_the_path_named() {
        let dir = tempfile::tempdir().unwrap();
        let model = build(Mode::Baseline);
        let good = dir.path().join("good.ckpt");
        save_model(&good, &model).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let bad_magic = dir.path().join("magic.ckpt");
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        std::fs::write(&bad_magic, &corrupted).unwrap();
        let err = load_model(&bad_magic).unwrap_err().to_string();
        assert!(err.contains("magic.ckpt") && err.contains("magic"), "{err}");

        let truncated = dir.path().join("short.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_model(&truncated).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let padded = dir.path().join("padded.ckpt");
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0]);
        std::fs::write(&padded, &extra).unwrap();
        let err = load_model(&padded).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");

        let err = load_model(&dir.path().join("absent.ckpt")).unwrap_err().to_string();
        assert!(err.contains("absent.ckpt"), "{err}");
    }
}
