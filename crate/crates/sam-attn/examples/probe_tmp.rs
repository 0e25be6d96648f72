//! Scratch probe: how much predicted-attention mass lands inside the true
//! patch box, for a trained checkpoint vs its dataset's metadata.

use sam_attn::data::synthetic::generate_synthetic_with_meta;
use sam_attn::{load_model, normalize_attention, predict_attention, SyntheticSpec, Tape};

fn center_crop(pixels: &[f64], (h, w, c): (usize, usize, usize), th: usize, tw: usize) -> Vec<f64> {
    let (r0, c0) = ((h - th) / 2, (w - tw) / 2);
    let mut out = Vec::with_capacity(th * tw * c);
    for r in 0..th {
        let start = ((r0 + r) * w + c0) * c;
        out.extend_from_slice(&pixels[start..start + tw * c]);
    }
    out
}

fn main() {
    let ckpt = std::env::args().nth(1).expect("usage: probe <ckpt> [kind]");
    let mut spec = SyntheticSpec::desk(0);
    spec.noise_level = 0.01;
    spec.patch_size = 12;
    let (_, test) = generate_synthetic_with_meta(&spec).unwrap();
    let model = load_model(std::path::Path::new(&ckpt)).unwrap();
    let input = model.backbone.config.input_size;

    let mut in_mass_sum = 0.0;
    let mut count = 0;
    // Feature grid is 4x4 over a 28x28 crop: cell (r,c) covers rows 7r..7r+7.
    for (img, meta) in test.data.images.iter().take(64).zip(&test.meta) {
        let pixels = center_crop(
            &img.pixels,
            (test.data.height, test.data.width, test.data.channels),
            input.0,
            input.1,
        );
        let mut tape = Tape::new();
        let x = tape.constant(pixels, [input.0, input.1, input.2]).unwrap();
        let staged = model.stage(&mut tape, false).unwrap();
        let feat = staged.backbone.forward_features(&mut tape, x).unwrap();
        let want_cam = std::env::args().nth(2).as_deref() == Some("cam");
        let map = match (staged.proj, staged.bank) {
            (Some(proj), _) if !want_cam => predict_attention(&mut tape, feat, proj).unwrap(),
            (_, Some(bank)) if !want_cam => {
                let maps = sam_attn::project_attention_maps(&mut tape, feat, bank).unwrap();
                sam_attn::union_max(&mut tape, maps).unwrap()
            }
            _ => sam_attn::cam(&mut tape, feat, &model.head, img.label).unwrap(),
        };
        let norm = normalize_attention(&mut tape, map.grid, 0.4).unwrap();
        let vals = tape.values(norm.grid);

        // Patch box in crop coordinates (crop offset is (32-28)/2 = 2).
        let (r0, c0) = (meta.patch_row as f64 - 2.0, meta.patch_col as f64 - 2.0);
        let (r1, c1) = (r0 + 12.0, c0 + 12.0);
        let mut inside = 0.0;
        for gr in 0..4 {
            for gc in 0..4 {
                let (cr0, cc0) = (7.0 * gr as f64, 7.0 * gc as f64);
                let (cr1, cc1) = (cr0 + 7.0, cc0 + 7.0);
                let overlap_r = (r1.min(cr1) - r0.max(cr0)).max(0.0);
                let overlap_c = (c1.min(cc1) - c0.max(cc0)).max(0.0);
                let frac = (overlap_r * overlap_c) / 49.0;
                inside += vals[gr * 4 + gc] * frac;
            }
        }
        in_mass_sum += inside;
        count += 1;
    }
    // A uniform map puts patch-area/crop-area ~ 144/784 = 18.4% inside.
    println!(
        "mean predicted-attention mass inside patch box over {count} images: {:.3} (uniform ~ {:.3})",
        in_mass_sum / count as f64,
        144.0 / 784.0
    );
}
