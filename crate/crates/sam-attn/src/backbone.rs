//! A small convolutional classifier: stacked conv-relu blocks with stride-2
//! downsampling, global average pooling, and a linear head. The GAP+linear
//! layout is load-bearing: it is what lets classifier weights be projected
//! back onto the feature grid as an attention map.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::component_rng;
use crate::tensor::{Shape, Tape, TensorId};

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;

/// Architecture and initialization choices for [`Backbone`].
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Input image dims as (height, width, channels).
    pub input_size: (usize, usize, usize),
    /// Output channels of each conv-relu block, applied in order.
    pub block_channels: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl BackboneConfig {
    /// Defaults sized so training runs in minutes on one core: three blocks
    /// taking 28x28 crops down to a 4x4x64 feature map.
    pub fn desk(num_classes: usize, init_seed: u64) -> Self {
        BackboneConfig {
            input_size: (28, 28, 3),
            block_channels: vec![16, 32, 64],
            num_classes,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::param(format!("input size {h}x{w}x{c} has a zero dim")));
        }
        if self.num_classes < 2 {
            return Err(Error::param(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.block_channels.is_empty() {
            return Err(Error::param("at least one conv block is required"));
        }
        if self.block_channels.iter().any(|&c| c == 0) {
            return Err(Error::param("block channel counts must be positive"));
        }
        let (fh, fw, _) = self.feature_shape()?;
        if fh < 2 || fw < 2 {
            return Err(Error::param(format!(
                "feature map would be {fh}x{fw}; attention needs at least 2x2"
            )));
        }
        Ok(())
    }

    /// Spatial and channel dims of the feature map the blocks produce.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut h, mut w, _) = self.input_size;
        for _ in &self.block_channels {
            if h + 2 * PADDING < KERNEL || w + 2 * PADDING < KERNEL {
                return Err(Error::param(format!(
                    "input collapses below the {KERNEL}x{KERNEL} kernel at {h}x{w}"
                )));
            }
            h = (h + 2 * PADDING - KERNEL) / STRIDE + 1;
            w = (w + 2 * PADDING - KERNEL) / STRIDE + 1;
        }
        Ok((h, w, *self.block_channels.last().unwrap()))
    }
}

/// Stacked conv kernels; parameter storage lives here as plain buffers and
/// is staged onto a fresh tape per training step.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    /// One kernel per block, shape `[KERNEL, KERNEL, c_in, c_out]`.
    pub kernels: Vec<Vec<f64>>,
}

impl Backbone {
    /// Seeded uniform init in +-sqrt(6/fan_in) per block. Block k draws from
    /// its own rng stream, so adding unrelated components elsewhere in the
    /// model cannot shift these values.
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut kernels = Vec::with_capacity(config.block_channels.len());
        let mut c_in = config.input_size.2;
        for (block, &c_out) in config.block_channels.iter().enumerate() {
            let mut rng = component_rng(config.init_seed, crate::rng::STREAM_BACKBONE + block as u64);
            let fan_in = (KERNEL * KERNEL * c_in) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let kernel = (0..KERNEL * KERNEL * c_in * c_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            kernels.push(kernel);
            c_in = c_out;
        }
        Ok(Backbone { config, kernels })
    }

    pub fn kernel_shape(&self, block: usize) -> Shape {
        let c_in = if block == 0 {
            self.config.input_size.2
        } else {
            self.config.block_channels[block - 1]
        };
        Shape::from([KERNEL, KERNEL, c_in, self.config.block_channels[block]])
    }

    /// Put the kernels on a tape, as trainable params or frozen constants.
    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> Result<StagedBackbone> {
        let mut kernel_ids = Vec::with_capacity(self.kernels.len());
        for (block, kernel) in self.kernels.iter().enumerate() {
            let shape = self.kernel_shape(block);
            let id = if trainable {
                tape.param(kernel.clone(), shape)?
            } else {
                tape.constant(kernel.clone(), shape)?
            };
            kernel_ids.push(id);
        }
        Ok(StagedBackbone {
            kernel_ids,
            input_size: self.config.input_size,
        })
    }
}

/// Tape-resident backbone parameters for one forward/backward cycle.
pub struct StagedBackbone {
    pub kernel_ids: Vec<TensorId>,
    input_size: (usize, usize, usize),
}

impl StagedBackbone {
    /// conv-relu chain from an image to the feature map phi(I).
    pub fn forward_features(&self, tape: &mut Tape, image: TensorId) -> Result<TensorId> {
        let (h, w, c) = self.input_size;
        let got = tape.shape(image).dims();
        if got != [h, w, c] {
            return Err(Error::shape(
                "forward_features",
                format!("expected [{h}x{w}x{c}] image, got {}", tape.shape(image)),
            ));
        }
        let mut x = image;
        for &kernel in &self.kernel_ids {
            let conv = tape.conv2d(x, kernel, STRIDE, PADDING)?;
            x = tape.relu(conv)?;
        }
        Ok(x)
    }
}

/// Linear classifier over a pooled feature vector; rows are per-class weights.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
}

impl ClassifierHead {
    pub fn new(num_classes: usize, dim: usize, init_seed: u64) -> Result<Self> {
        if num_classes < 2 || dim == 0 {
            return Err(Error::param(format!(
                "classifier needs >= 2 classes and a positive input dim, got {num_classes} x {dim}"
            )));
        }
        let mut rng = component_rng(init_seed, crate::rng::STREAM_HEAD);
        let bound = (6.0 / dim as f64).sqrt();
        let weights = (0..num_classes * dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(ClassifierHead {
            weights,
            bias: vec![0.0; num_classes],
            num_classes,
            dim,
        })
    }

    /// Row y: the weight vector w_y that attention projection reuses.
    pub fn class_weights(&self, y: usize) -> Result<&[f64]> {
        if y >= self.num_classes {
            return Err(Error::param(format!(
                "class {y} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(&self.weights[y * self.dim..(y + 1) * self.dim])
    }

    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> Result<StagedHead> {
        let wshape = Shape::from([self.num_classes, self.dim]);
        let bshape = Shape::from([self.num_classes]);
        let (weights, bias) = if trainable {
            (
                tape.param(self.weights.clone(), wshape)?,
                tape.param(self.bias.clone(), bshape)?,
            )
        } else {
            (
                tape.constant(self.weights.clone(), wshape)?,
                tape.constant(self.bias.clone(), bshape)?,
            )
        };
        Ok(StagedHead { weights, bias })
    }
}

pub struct StagedHead {
    pub weights: TensorId,
    pub bias: TensorId,
}

impl StagedHead {
    /// Logits from a feature map: GAP then linear. The GAP+linear form makes
    /// each logit equal the grid mean of per-cell projections, which is what
    /// justifies reading the head weights as attention.
    pub fn forward_logits(&self, tape: &mut Tape, features: TensorId) -> Result<TensorId> {
        let pooled = tape.global_avg_pool(features)?;
        self.forward_pooled(tape, pooled)
    }

    /// Logits from an already-pooled vector (bilinear features use this).
    pub fn forward_pooled(&self, tape: &mut Tape, pooled: TensorId) -> Result<TensorId> {
        let wdims = tape.shape(self.weights).dims();
        let got = tape.shape(pooled).dims();
        if got.len() != 1 || got[0] != wdims[1] {
            return Err(Error::shape(
                "forward_logits",
                format!(
                    "head expects a [{}] feature vector, got {}",
                    wdims[1],
                    tape.shape(pooled)
                ),
            ));
        }
        let scores = tape.matvec(self.weights, pooled)?;
        tape.add(scores, self.bias)
    }
}
