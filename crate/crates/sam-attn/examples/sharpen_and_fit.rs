//! The attention-fitting loss in isolation. A raw map is sharpened by a
//! temperature softmax and detached as the target; the predicted map is
//! normalized the same way and pulled toward it under KL divergence. The
//! gradient reaches only the prediction side.
//!
//!     cargo run --example sharpen_and_fit

use sam_attn::{normalize_attention, Result, Tape};

fn main() -> Result<()> {
    // Sharpening: lower temperature concentrates mass on the peak cell.
    let raw = vec![0.0, 0.4];
    println!("raw map {raw:?} under the temperature softmax:");
    for tau in [2.0, 1.0, 0.4, 0.1] {
        let mut tape = Tape::new();
        let map = tape.constant(raw.clone(), [1, 2])?;
        let norm = normalize_attention(&mut tape, map, tau)?;
        let v = tape.values(norm.grid);
        println!("  tau = {tau:<4} -> [{:.5}, {:.5}]  (sum {:.12})", v[0], v[1], v[0] + v[1]);
    }

    // Fitting: KL(pred || target) is zero at the target and grows with
    // distance; its gradient points the peak toward the target's peak.
    let target_raw = vec![0.1, 0.9, 0.2, 0.3];
    let pred_raw = vec![0.5, 0.2, 0.6, 0.1];
    let tau = 0.4;

    let mut tape = Tape::new();
    let pred = tape.param(pred_raw.clone(), [2, 2])?;
    let target = tape.constant(target_raw.clone(), [2, 2])?;
    let pred_norm = normalize_attention(&mut tape, pred, tau)?;
    let target_norm = normalize_attention(&mut tape, target, tau)?;
    let kl = tape.kl_div(pred_norm.grid, target_norm.grid)?;
    tape.backward(kl)?;

    println!("\ntarget (raw)    = {target_raw:?}, peak at cell 1");
    println!("predicted (raw) = {pred_raw:?}, peak at cell 2");
    println!("KL(pred || target) = {:.6}", tape.values(kl)[0]);
    let g = tape.grad(pred).expect("prediction is a parameter");
    println!("dKL/dpred          = {:?}", g.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("  negative where the target holds more mass than the prediction;");
    println!("  a gradient step moves the prediction's mass onto the target.");

    // Self-fitting is degenerate, so a live target is rejected.
    let mut tape = Tape::new();
    let live = tape.param(target_raw, [2, 2])?;
    let live_map = sam_attn::AttentionMap {
        grid: live,
        source: sam_attn::AttentionSource::Predicted,
        class_used: None,
    };
    let pred_id = tape.param(pred_raw, [2, 2])?;
    let pred_map = sam_attn::AttentionMap {
        grid: pred_id,
        source: sam_attn::AttentionSource::Predicted,
        class_used: None,
    };
    let err = sam_attn::sam_loss(&mut tape, &pred_map, &live_map, &Default::default())
        .expect_err("live targets must be rejected");
    println!("\nfitting against a live (undetached) target: {err}");
    Ok(())
}
