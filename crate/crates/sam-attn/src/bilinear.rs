//! The multi-filter extension: K projection filters each predict an
//! attention map, the per-cell max over the K maps fits the gradient
//! attention target, and each map separately pools the features. The K
//! pooled vectors concatenate into one bilinear feature that feeds the
//! classifier, so every filter ends up owning a part of the object.

use rand::Rng;

use crate::attention::{AttentionMap, AttentionSource};
use crate::error::{Error, Result};
use crate::rng::{component_rng, STREAM_PROJECTION_BANK};
use crate::sam::{sam_loss, SamLossConfig};
use crate::tensor::{Shape, Tape, TensorId};

/// K projection filters, one per row.
#[derive(Clone, Debug)]
pub struct ProjectionBank {
    /// Row-major `[K, D]`; row k is filter w_k.
    pub weights: Vec<f64>,
    pub k: usize,
    pub dim: usize,
}

impl ProjectionBank {
    pub fn new(k: usize, dim: usize, init_seed: u64) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::param(format!(
                "projection bank needs positive dims, got {k} x {dim}"
            )));
        }
        let mut rng = component_rng(init_seed, STREAM_PROJECTION_BANK);
        let bound = (6.0 / dim as f64).sqrt();
        let weights = (0..k * dim).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(ProjectionBank { weights, k, dim })
    }

    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> Result<TensorId> {
        let shape = Shape::from([self.k, self.dim]);
        if trainable {
            tape.param(self.weights.clone(), shape)
        } else {
            tape.constant(self.weights.clone(), shape)
        }
    }
}

/// Concatenated attentive poolings, one segment per filter.
#[derive(Copy, Clone, Debug)]
pub struct BilinearFeature {
    /// Vector of length `dim * k`.
    pub f: TensorId,
    pub k: usize,
    pub dim: usize,
}

/// All K maps at once: maps_ijk = w_k . phi_ij, live. The bank rows become
/// a 1x1 convolution via an on-tape transpose, so gradients land straight
/// back in the `[K, D]` layout.
pub fn project_attention_maps(
    tape: &mut Tape,
    features: TensorId,
    bank: TensorId,
) -> Result<TensorId> {
    let fdims = tape.shape(features).dims();
    let bdims = tape.shape(bank).dims();
    if fdims.len() != 3 || bdims.len() != 2 {
        return Err(Error::shape(
            "project_attention_maps",
            format!(
                "expected [H,W,D] features and [K,D] bank, got {} and {}",
                tape.shape(features),
                tape.shape(bank)
            ),
        ));
    }
    let d = fdims[2];
    if bdims[1] != d {
        return Err(Error::shape(
            "project_attention_maps",
            format!("features have {d} channels but bank rows have {}", bdims[1]),
        ));
    }
    let k = bdims[0];
    let transposed = tape.transpose2d(bank)?;
    let kernel = tape.reshape(transposed, [1, 1, d, k])?;
    tape.conv2d(features, kernel, 1, 0)
}

/// Per-cell max over the K maps: the union of everything any filter found.
pub fn union_max(tape: &mut Tape, maps: TensorId) -> Result<AttentionMap> {
    let grid = tape.channel_max(maps)?;
    Ok(AttentionMap {
        grid,
        source: AttentionSource::Predicted,
        class_used: None,
    })
}

/// Concatenate the K attentive poolings: segment k is
/// sum_ij maps_ijk * phi_ij, and the whole vector equals the flattened sum
/// of per-location outer products between the projected maps and features.
pub fn bilinear_concat(
    tape: &mut Tape,
    maps: TensorId,
    features: TensorId,
) -> Result<BilinearFeature> {
    let mdims = tape.shape(maps).dims();
    let fdims = tape.shape(features).dims();
    if mdims.len() != 3 || fdims.len() != 3 {
        return Err(Error::shape(
            "bilinear_concat",
            format!(
                "expected [H,W,K] maps and [H,W,D] features, got {} and {}",
                tape.shape(maps),
                tape.shape(features)
            ),
        ));
    }
    if mdims[0] != fdims[0] || mdims[1] != fdims[1] {
        return Err(Error::shape(
            "bilinear_concat",
            format!(
                "map grid {}x{} does not match feature grid {}x{}",
                mdims[0], mdims[1], fdims[0], fdims[1]
            ),
        ));
    }
    let k = mdims[2];
    let dim = fdims[2];
    let mut segments = Vec::with_capacity(k);
    for ch in 0..k {
        let map = tape.channel_slice(maps, ch)?;
        segments.push(tape.attentive_pool(map, features)?);
    }
    let f = tape.concat(&segments)?;
    Ok(BilinearFeature { f, k, dim })
}

/// Fit the union of the K maps to a detached gradient-attention target.
pub fn sam_bilinear_loss(
    tape: &mut Tape,
    maps: TensorId,
    target: &AttentionMap,
    cfg: &SamLossConfig,
) -> Result<TensorId> {
    if target.source != AttentionSource::GradCam {
        return Err(Error::contract(
            "bilinear attention fitting expects a gradient-attention target",
        ));
    }
    let union = union_max(tape, maps)?;
    sam_loss(tape, &union, target, cfg)
}
