//! Attention maps read out of a classifier.
//!
//! Two target flavors exist. `cam` projects a class's head weights onto the
//! feature grid: cell (i,j) scores w_y . phi_ij, no bias, no rectification.
//! `grad_cam` differentiates the class logit w.r.t. the feature map in an
//! isolated scratch pass and takes the rectified per-cell inner product
//! between that gradient and the features. Both come back detached: they are
//! training targets and must never carry gradient themselves.
//!
//! `normalize_attention` turns any map into a distribution via a temperature
//! softmax so that predicted and target maps can meet in a KL term.

use crate::backbone::{Backbone, ClassifierHead};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tape, TensorId};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AttentionSource {
    Cam,
    GradCam,
    Predicted,
}

/// A raw spatial attention grid living on a tape. Target-sourced maps
/// (`Cam`, `GradCam`) are detached constants; `Predicted` maps stay live so
/// gradients can flow back into the model.
#[derive(Copy, Clone, Debug)]
pub struct AttentionMap {
    pub grid: TensorId,
    pub source: AttentionSource,
    /// Class the map was computed for; `None` marks a class-agnostic map.
    pub class_used: Option<usize>,
}

/// A map pushed through the temperature softmax: positive, sums to 1.
#[derive(Copy, Clone, Debug)]
pub struct NormalizedAttention {
    pub grid: TensorId,
}

/// Class activation map: grid_ij = w_y . phi_ij. Bias is omitted; it is
/// spatially constant and vanishes under the shift-invariant normalization.
pub fn cam(
    tape: &mut Tape,
    features: TensorId,
    head: &ClassifierHead,
    y: usize,
) -> Result<AttentionMap> {
    let dims = tape.shape(features).dims();
    if dims.len() != 3 {
        return Err(Error::shape(
            "cam",
            format!("expected [H,W,D] features, got {}", tape.shape(features)),
        ));
    }
    let (h, w, d) = (dims[0], dims[1], dims[2]);
    if d != head.dim {
        return Err(Error::shape(
            "cam",
            format!("features have {d} channels but head expects {}", head.dim),
        ));
    }
    let wy = head.class_weights(y)?;
    let phi = tape.values(features);
    let mut grid = vec![0.0; h * w];
    for (pos, cell) in grid.iter_mut().enumerate() {
        *cell = (0..d).map(|c| wy[c] * phi[pos * d + c]).sum();
    }
    let id = tape.constant(grid, Shape::from([h, w]))?;
    Ok(AttentionMap {
        grid: id,
        source: AttentionSource::Cam,
        class_used: Some(y),
    })
}

/// Gradient-based attention from an already-built graph: differentiate
/// `logits[y]` w.r.t. `features` in a scratch buffer, then take the
/// rectified per-cell inner product with the features themselves.
///
/// The scratch pass leaves every accumulated training gradient on the tape
/// untouched, so this is safe to call mid-step.
pub fn grad_cam_from_graph(
    tape: &mut Tape,
    features: TensorId,
    logits: TensorId,
    y: usize,
) -> Result<AttentionMap> {
    let dims = tape.shape(features).dims();
    if dims.len() != 3 {
        return Err(Error::shape(
            "grad_cam",
            format!("expected [H,W,D] features, got {}", tape.shape(features)),
        ));
    }
    let num_classes = tape.shape(logits).numel();
    if y >= num_classes {
        return Err(Error::param(format!(
            "class {y} out of range for {num_classes} classes"
        )));
    }
    if !tape.requires_grad(features) {
        return Err(Error::contract(
            "grad_cam needs a differentiable feature map; stage the model as trainable",
        ));
    }
    let (h, w, d) = (dims[0], dims[1], dims[2]);
    let ly = tape.index(logits, y)?;
    let scratch = tape.backward_scratch(ly)?;
    let g = scratch.grad(features).ok_or_else(|| {
        Error::contract("logit does not depend on the given feature map")
    })?;
    let phi = tape.values(features);
    let mut grid = vec![0.0; h * w];
    for (pos, cell) in grid.iter_mut().enumerate() {
        let inner: f64 = (0..d).map(|c| g[pos * d + c] * phi[pos * d + c]).sum();
        *cell = inner.max(0.0);
    }
    let id = tape.constant(grid, Shape::from([h, w]))?;
    Ok(AttentionMap {
        grid: id,
        source: AttentionSource::GradCam,
        class_used: Some(y),
    })
}

/// Convenience for standalone use: run the GAP+linear forward on a fresh
/// graph and read the gradient attention from it.
pub fn grad_cam(
    tape: &mut Tape,
    backbone: &Backbone,
    head: &ClassifierHead,
    image: &[f64],
    y: usize,
) -> Result<AttentionMap> {
    let (h, w, c) = backbone.config.input_size;
    let img = tape.constant(image.to_vec(), Shape::from([h, w, c]))?;
    let staged = backbone.stage(tape, true)?;
    let features = staged.forward_features(tape, img)?;
    let staged_head = head.stage(tape, true)?;
    let logits = staged_head.forward_logits(tape, features)?;
    grad_cam_from_graph(tape, features, logits, y)
}

/// Total uniform mass mixed into every normalized map. Keeps each cell
/// strictly positive so the KL between two normalized maps is always
/// defined, while staying invisible at working tolerances.
const MASS_FLOOR: f64 = 1e-9;

/// Temperature softmax over the grid (the shared normalization for targets
/// and predictions), with a vanishing uniform mass mixed in: maps whose
/// range spans hundreds of temperatures underflow `exp` to exact zero, and
/// a zero cell would make the divergence against this map undefined.
/// Differentiable; pass a detached grid to get a detached distribution.
pub fn normalize_attention(tape: &mut Tape, map: TensorId, tau: f64) -> Result<NormalizedAttention> {
    let soft = tape.softmax_tau(map, tau)?;
    let dims = tape.shape(soft).dims().to_vec();
    let n = tape.shape(soft).numel();
    let scaled = tape.scale(soft, 1.0 - MASS_FLOOR)?;
    let uniform = tape.constant(vec![MASS_FLOOR / n as f64; n], Shape::from(dims))?;
    let grid = tape.add(scaled, uniform)?;
    Ok(NormalizedAttention { grid })
}
