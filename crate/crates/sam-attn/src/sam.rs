//! The self-boosting attention loss.
//!
//! A single 1x1 filter predicts an attention map from the feature grid
//! without seeing the label. The map the classifier itself induces (CAM or
//! gradient attention for the ground-truth class) is detached and used as a
//! target: both maps are temperature-normalized and the predicted
//! distribution is pulled toward the target with a KL term. Because the
//! target is recomputed from the live model every step, sharpening the
//! prediction also sharpens next step's target, hence "self-boosting".

use rand::Rng;

use crate::attention::{normalize_attention, AttentionMap, AttentionSource};
use crate::error::{Error, Result};
use crate::rng::{component_rng, STREAM_SAM_PROJECTION};
use crate::tensor::{Shape, Tape, TensorId};

/// Which attention readout supplies the target map.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Cam,
    GradCam,
}

/// Weights of the class-agnostic 1x1 projection filter.
#[derive(Clone, Debug)]
pub struct SamProjection {
    pub w: Vec<f64>,
}

impl SamProjection {
    pub fn new(dim: usize, init_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("projection needs a positive channel count"));
        }
        let mut rng = component_rng(init_seed, STREAM_SAM_PROJECTION);
        let bound = (6.0 / dim as f64).sqrt();
        let w = (0..dim).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(SamProjection { w })
    }

    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> Result<TensorId> {
        let shape = Shape::from([self.w.len()]);
        if trainable {
            tape.param(self.w.clone(), shape)
        } else {
            tape.constant(self.w.clone(), shape)
        }
    }
}

/// Knobs of the attention-fitting term.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SamLossConfig {
    /// Softmax temperature shared by prediction and target.
    pub tau: f64,
    /// Weight of the KL term in the total loss.
    pub lambda: f64,
    pub target_kind: TargetKind,
}

impl Default for SamLossConfig {
    fn default() -> Self {
        SamLossConfig {
            tau: 0.4,
            lambda: 0.01,
            target_kind: TargetKind::Cam,
        }
    }
}

impl SamLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::param(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Project the feature map through the single staged filter:
/// grid_ij = w . phi_ij. Stays live; gradients reach both the filter and
/// the backbone through this path.
pub fn predict_attention(
    tape: &mut Tape,
    features: TensorId,
    proj: TensorId,
) -> Result<AttentionMap> {
    let fdims = tape.shape(features).dims();
    if fdims.len() != 3 {
        return Err(Error::shape(
            "predict_attention",
            format!("expected [H,W,D] features, got {}", tape.shape(features)),
        ));
    }
    let (h, w, d) = (fdims[0], fdims[1], fdims[2]);
    if tape.shape(proj).dims() != [d] {
        return Err(Error::shape(
            "predict_attention",
            format!(
                "features have {d} channels but projection is {}",
                tape.shape(proj)
            ),
        ));
    }
    let kernel = tape.reshape(proj, [1, 1, d, 1])?;
    let conv = tape.conv2d(features, kernel, 1, 0)?;
    let grid = tape.reshape(conv, [h, w])?;
    Ok(AttentionMap {
        grid,
        source: AttentionSource::Predicted,
        class_used: None,
    })
}

/// KL between the normalized predicted map and the normalized detached
/// target, predicted distribution first. Gradient flows through the
/// prediction only; a live target is rejected outright, since fitting a map
/// to itself would silently cancel the mechanism.
pub fn sam_loss(
    tape: &mut Tape,
    predicted: &AttentionMap,
    target: &AttentionMap,
    cfg: &SamLossConfig,
) -> Result<TensorId> {
    cfg.validate()?;
    if !tape.is_detached(target.grid) {
        return Err(Error::contract(
            "attention target must be detached; pass a map produced by cam/grad_cam",
        ));
    }
    if tape.shape(predicted.grid) != tape.shape(target.grid) {
        return Err(Error::shape(
            "sam_loss",
            format!(
                "predicted map is {} but target is {}",
                tape.shape(predicted.grid),
                tape.shape(target.grid)
            ),
        ));
    }
    let pred_norm = normalize_attention(tape, predicted.grid, cfg.tau)?;
    let target_norm = normalize_attention(tape, target.grid, cfg.tau)?;
    tape.kl_div(pred_norm.grid, target_norm.grid)
}

/// Total objective: cross-entropy plus the weighted attention term.
pub fn total_loss(tape: &mut Tape, ce: TensorId, sam: TensorId, lambda: f64) -> Result<TensorId> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be non-negative, got {lambda}")));
    }
    let weighted = tape.scale(sam, lambda)?;
    tape.add(ce, weighted)
}
