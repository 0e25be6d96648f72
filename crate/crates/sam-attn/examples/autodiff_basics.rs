//! A tour of the reverse-mode tape: stage values, compose ops, run one
//! backward pass, and check a gradient against central finite differences.
//!
//!     cargo run --example autodiff_basics

use sam_attn::{Result, Tape};

// f(w) = sum(relu(w * x)) + 0.5 * sum(w^2), elementwise product.
fn f(w: &[f64], x: &[f64]) -> f64 {
    let hinge: f64 = w.iter().zip(x).map(|(w, x)| (w * x).max(0.0)).sum();
    let bowl: f64 = w.iter().map(|w| 0.5 * w * w).sum();
    hinge + bowl
}

fn main() -> Result<()> {
    let w0 = [0.4, -1.2, 0.7];
    let x0 = [1.0, 2.0, 3.0];

    let mut tape = Tape::new();
    let w = tape.param(w0.to_vec(), [3])?;
    let x = tape.constant(x0.to_vec(), [3])?;
    let wx = tape.mul(w, x)?;
    let hinge = tape.relu(wx)?;
    let hinge_sum = tape.sum(hinge)?;
    let w2 = tape.mul(w, w)?;
    let bowl = tape.sum(w2)?;
    let bowl_half = tape.scale(bowl, 0.5)?;
    let loss = tape.add(hinge_sum, bowl_half)?;

    tape.backward(loss)?;
    let grad = tape.grad(w).expect("params accumulate gradients").to_vec();

    println!("loss        = {:.9}", tape.values(loss)[0]);
    println!("tape grad   = {grad:?}");

    // Central differences on the same scalar function.
    let eps = 1e-6;
    let fd: Vec<f64> = (0..w0.len())
        .map(|i| {
            let mut hi = w0;
            let mut lo = w0;
            hi[i] += eps;
            lo[i] -= eps;
            (f(&hi, &x0) - f(&lo, &x0)) / (2.0 * eps)
        })
        .collect();
    println!("finite diff = {fd:?}");

    let worst = grad
        .iter()
        .zip(&fd)
        .map(|(g, d)| (g - d).abs())
        .fold(0.0, f64::max);
    println!("largest gap = {worst:.3e}");

    // The relu kink: w[1] * x[1] is negative, so that coordinate's hinge
    // gradient is zero and only the bowl term remains.
    println!("dloss/dw[1] = {} (bowl only: w[1] = {})", grad[1], w0[1]);
    Ok(())
}
