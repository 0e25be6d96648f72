//! Two readings of where a GAP+linear classifier looks: the weight-based
//! class activation map and the gradient-based map. On this architecture
//! they agree exactly, up to rectification and the pooling constant:
//! grad map = relu(cam) / (H*W).
//!
//!     cargo run --example attention_identity

use sam_attn::{cam, grad_cam_from_graph, Backbone, BackboneConfig, ClassifierHead, Result, Tape};

fn main() -> Result<()> {
    let backbone = Backbone::new(BackboneConfig {
        input_size: (16, 16, 3),
        block_channels: vec![8, 12],
        num_classes: 4,
        init_seed: 7,
    })?;
    let (h, w, d) = backbone.config.feature_shape()?;
    let head = ClassifierHead::new(4, d, 8)?;

    // Any input works; a deterministic ramp keeps the output reproducible.
    let (ih, iw, ic) = backbone.config.input_size;
    let image: Vec<f64> = (0..ih * iw * ic).map(|i| (i % 97) as f64 / 96.0).collect();

    let mut tape = Tape::new();
    let img = tape.constant(image, [ih, iw, ic])?;
    let features = backbone.stage(&mut tape, true)?.forward_features(&mut tape, img)?;
    let logits = head.stage(&mut tape, true)?.forward_logits(&mut tape, features)?;

    let y = 2;
    let cam_map = cam(&mut tape, features, &head, y)?;
    let grad_map = grad_cam_from_graph(&mut tape, features, logits, y)?;
    let cam_vals = tape.values(cam_map.grid).to_vec();
    let grad_vals = tape.values(grad_map.grid).to_vec();

    println!("feature grid {h}x{w} ({d} channels), explaining class {y}");
    println!("{:>5} {:>14} {:>14} {:>14}", "cell", "cam", "relu(cam)/HW", "grad map");
    let cells = h * w;
    let mut worst = 0.0f64;
    for i in 0..cells {
        let scaled = cam_vals[i].max(0.0) / cells as f64;
        worst = worst.max((scaled - grad_vals[i]).abs());
        if i < 6 {
            println!(
                "{i:>5} {:>14.9} {scaled:>14.9} {:>14.9}",
                cam_vals[i], grad_vals[i]
            );
        }
    }
    println!("  ... largest |relu(cam)/HW - grad| over {cells} cells: {worst:.2e}");
    Ok(())
}
