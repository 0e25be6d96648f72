//! End-to-end heatmap export: train a small model for a few epochs, read
//! its attention for one test image, and write the raw map plus an overlay
//! as netpbm files.
//!
//!     cargo run --example export_heatmaps

use sam_attn::heatmap::{write_heatmap, write_overlay};
use sam_attn::trainer::{train, Mode, Model, Seeds, TrainConfig};
use sam_attn::{cam, BackboneConfig, Result, SyntheticSpec, Tape};

fn main() -> Result<()> {
    let spec = SyntheticSpec {
        num_classes: 4,
        images_per_class: 12,
        image_size: 32,
        patch_size: 8,
        spurious_correlation: 0.95,
        noise_level: 0.05,
        seed: 9,
    };
    let (train_set, test_set) = sam_attn::generate_synthetic(&spec)?;

    let mut cfg = TrainConfig::new(Mode::Sam);
    cfg.epochs = 6;
    cfg.batch_size = 12;
    cfg.seeds = Seeds::all(9);
    let mut model = Model::new(&cfg, BackboneConfig::desk(spec.num_classes, 9))?;
    let metrics = train(&mut model, &train_set, &test_set, &cfg)?;
    println!(
        "trained {} epochs, test accuracy {:.3}",
        cfg.epochs,
        metrics.final_test_acc().unwrap()
    );

    // Forward one test image at the model's input size (center crop) and
    // read the class activation map for its label.
    let img = &test_set.images[0];
    let input = model.backbone.config.input_size;
    let offset = (spec.image_size - input.0) / 2;
    let mut cropped = Vec::with_capacity(input.0 * input.1 * input.2);
    for r in 0..input.0 {
        let start = ((offset + r) * spec.image_size + offset) * 3;
        cropped.extend_from_slice(&img.pixels[start..start + input.1 * 3]);
    }

    let mut tape = Tape::new();
    let staged = model.stage(&mut tape, false)?;
    let image = tape.constant(cropped.clone(), [input.0, input.1, input.2])?;
    let fwd = staged.forward(&mut tape, image)?;
    let map = cam(&mut tape, fwd.features, &model.head, img.label)?;
    let dims = tape.shape(map.grid).dims().to_vec();
    let values = tape.values(map.grid).to_vec();

    let dir = std::env::temp_dir().join("sam-attn-heatmaps");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let pgm = dir.join("cam.pgm");
    let ppm = dir.join("cam_overlay.ppm");
    write_heatmap(&pgm, &values, (dims[0], dims[1]))?;
    write_overlay(&ppm, &cropped, input, &values, (dims[0], dims[1]))?;

    println!("class {} map over a {}x{} grid:", img.label, dims[0], dims[1]);
    for row in values.chunks(dims[1]) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>7.3}")).collect();
        println!("  {}", cells.join(" "));
    }
    println!("wrote {}", pgm.display());
    println!("wrote {} (50% blend over the image)", ppm.display());
    Ok(())
}
