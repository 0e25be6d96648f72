//! The bilinear head: K projection filters each produce an attention map,
//! each map attentively pools the features, and the K pooled vectors are
//! concatenated. Checked here against a brute-force outer-product pooling,
//! plus the K=1 reduction to plain attentive pooling.
//!
//!     cargo run --example bilinear_pooling

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sam_attn::{bilinear_concat, project_attention_maps, union_max, ProjectionBank, Result, Tape};

fn main() -> Result<()> {
    let (h, w, d, k) = (3, 4, 5, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let features_raw: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();

    let bank = ProjectionBank::new(k, d, 11)?;
    let mut tape = Tape::new();
    let features = tape.constant(features_raw.clone(), [h, w, d])?;
    let staged_bank = bank.stage(&mut tape, false)?;
    let maps = project_attention_maps(&mut tape, features, staged_bank)?;
    let pooled = bilinear_concat(&mut tape, maps, features)?;
    let got = tape.values(pooled.f).to_vec();
    println!("bank of {k} filters over a {h}x{w}x{d} feature map");
    println!("concatenated feature length = {} (= K*D = {})", got.len(), k * d);

    // Brute force: f[k*D + c] = sum_ij maps[i,j,k] * phi[i,j,c].
    let map_vals = tape.values(maps).to_vec();
    let mut want = vec![0.0; k * d];
    for filter in 0..k {
        for c in 0..d {
            want[filter * d + c] = (0..h * w)
                .map(|pos| map_vals[pos * k + filter] * features_raw[pos * d + c])
                .sum();
        }
    }
    let worst = got
        .iter()
        .zip(&want)
        .map(|(g, b)| (g - b).abs())
        .fold(0.0, f64::max);
    println!("largest |concat - outer product oracle| = {worst:.2e}");

    // K=1: the bilinear feature is exactly one attentive pooling.
    let single = ProjectionBank::new(1, d, 11)?;
    let mut tape = Tape::new();
    let features = tape.constant(features_raw.clone(), [h, w, d])?;
    let staged = single.stage(&mut tape, false)?;
    let maps = project_attention_maps(&mut tape, features, staged)?;
    let concat = bilinear_concat(&mut tape, maps, features)?;
    let map0 = tape.channel_slice(maps, 0)?;
    let direct = tape.attentive_pool(map0, features)?;
    let gap = tape
        .values(concat.f)
        .iter()
        .zip(tape.values(direct))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("K=1 vs plain attentive pooling: largest gap = {gap:.2e}");

    // The union map takes the cell-wise max over filters; it is what the
    // bilinear model fits to its gradient-based target.
    let union = union_max(&mut tape, maps)?;
    let rounded: Vec<f64> = tape
        .values(union.grid)
        .iter()
        .map(|v| (v * 1e3).round() / 1e3)
        .collect();
    println!("union map (K=1 is just that map): {rounded:?}");
    Ok(())
}
