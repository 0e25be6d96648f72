//! Deterministic SGD training: wires the backbone, classifier head, and
//! attention losses into a per-step graph, updates parameters with
//! momentum + weight decay, and records per-epoch metrics. Identical
//! configs and seeds reproduce runs exactly.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::attention::cam;
use crate::attention::grad_cam_from_graph;
use crate::backbone::{Backbone, BackboneConfig, ClassifierHead, StagedBackbone, StagedHead};
use crate::bilinear::{bilinear_concat, project_attention_maps, sam_bilinear_loss, ProjectionBank};
use crate::data::{batch_indices, Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::{component_rng, mix_seed, STREAM_CROP};
use crate::sam::{predict_attention, sam_loss, total_loss, SamLossConfig, SamProjection, TargetKind};
use crate::tensor::{Tape, TensorId};

// ── Configuration ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Plain GAP + linear classifier, cross-entropy only.
    Baseline,
    /// GAP head plus attention fitting: a class-agnostic projection is
    /// trained to match the detached ground-truth-class map.
    Sam,
    /// Bilinear head (K attention filters, concatenated attentive pooling)
    /// without attention fitting.
    Fbp,
    /// Bilinear head with the max-union of its K maps fitted to the
    /// detached gradient-attention target.
    SamBilinear,
}

impl Mode {
    pub fn fits_attention(self) -> bool {
        matches!(self, Mode::Sam | Mode::SamBilinear)
    }

    pub fn bilinear(self) -> bool {
        matches!(self, Mode::Fbp | Mode::SamBilinear)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Baseline => "baseline",
            Mode::Sam => "sam",
            Mode::Fbp => "fbp",
            Mode::SamBilinear => "sam_bilinear",
        };
        f.write_str(name)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "sam" => Ok(Mode::Sam),
            "fbp" => Ok(Mode::Fbp),
            "sam_bilinear" => Ok(Mode::SamBilinear),
            other => Err(Error::param(format!(
                "unknown mode '{other}' (expected baseline, sam, fbp, or sam_bilinear)"
            ))),
        }
    }
}

/// Independent seeds for the three sources of randomness. Each feeds its
/// own rng streams, so they may all share one value without coupling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    /// Parameter initialization.
    pub init: u64,
    /// Per-sample data transforms (train-time crops).
    pub data: u64,
    /// Per-epoch batch shuffling.
    pub epoch: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds { init: seed, data: seed, epoch: seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub sam: SamLossConfig,
    /// Number of attention filters in the bilinear bank.
    pub k: usize,
    pub seeds: Seeds,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        let mut sam = SamLossConfig::default();
        if mode == Mode::SamBilinear {
            // The union of class-agnostic maps has no single class to read a
            // weight row from, so only the gradient target is meaningful.
            sam.target_kind = TargetKind::GradCam;
        }
        TrainConfig {
            mode,
            epochs: 60,
            batch_size: 24,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            sam,
            k: 16,
            seeds: Seeds::all(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("need at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.k == 0 {
            return Err(Error::param("need at least one attention filter"));
        }
        if self.mode == Mode::SamBilinear && self.sam.target_kind != TargetKind::GradCam {
            return Err(Error::param(
                "bilinear attention fitting needs the gradient target kind",
            ));
        }
        self.sam.validate()
    }
}

// ── Model ─────────────────────────────────────────────────────────────────

/// A mode-consistent bundle of trainable components. The bilinear modes
/// widen the head to D*K inputs and carry a projection bank; sam mode
/// carries the single class-agnostic projection.
#[derive(Clone, Debug)]
pub struct Model {
    pub mode: Mode,
    pub backbone: Backbone,
    pub head: ClassifierHead,
    pub sam_projection: Option<SamProjection>,
    pub bank: Option<ProjectionBank>,
}

impl Model {
    pub fn new(cfg: &TrainConfig, backbone_cfg: BackboneConfig) -> Result<Model> {
        cfg.validate()?;
        let backbone = Backbone::new(backbone_cfg)?;
        let (_, _, dim) = backbone.config.feature_shape()?;
        let head_dim = if cfg.mode.bilinear() { dim * cfg.k } else { dim };
        let head = ClassifierHead::new(backbone.config.num_classes, head_dim, cfg.seeds.init)?;
        let sam_projection = if cfg.mode == Mode::Sam {
            Some(SamProjection::new(dim, cfg.seeds.init)?)
        } else {
            None
        };
        let bank = if cfg.mode.bilinear() {
            Some(ProjectionBank::new(cfg.k, dim, cfg.seeds.init)?)
        } else {
            None
        };
        Ok(Model { mode: cfg.mode, backbone, head, sam_projection, bank })
    }

    pub fn num_classes(&self) -> usize {
        self.backbone.config.num_classes
    }

    /// Parameter buffers in declaration order: backbone blocks, head
    /// weights, head bias, sam projection, projection bank. The optimizer
    /// and the checkpoint format both rely on this order.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = self.backbone.kernels.iter().collect();
        out.push(&self.head.weights);
        out.push(&self.head.bias);
        if let Some(p) = &self.sam_projection {
            out.push(&p.w);
        }
        if let Some(b) = &self.bank {
            out.push(&b.weights);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = self.backbone.kernels.iter_mut().collect();
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        if let Some(p) = &mut self.sam_projection {
            out.push(&mut p.w);
        }
        if let Some(b) = &mut self.bank {
            out.push(&mut b.weights);
        }
        out
    }

    pub fn stage(&self, tape: &mut Tape, trainable: bool) -> Result<StagedModel> {
        Ok(StagedModel {
            backbone: self.backbone.stage(tape, trainable)?,
            head: self.head.stage(tape, trainable)?,
            proj: match &self.sam_projection {
                Some(p) => Some(p.stage(tape, trainable)?),
                None => None,
            },
            bank: match &self.bank {
                Some(b) => Some(b.stage(tape, trainable)?),
                None => None,
            },
        })
    }
}

pub struct StagedModel {
    pub backbone: StagedBackbone,
    pub head: StagedHead,
    pub proj: Option<TensorId>,
    pub bank: Option<TensorId>,
}

pub struct ForwardPass {
    pub features: TensorId,
    /// `[H, W, K]` bank responses, present on bilinear models.
    pub maps: Option<TensorId>,
    pub logits: TensorId,
}

impl StagedModel {
    /// Same order as [`Model::params`].
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = self.backbone.kernel_ids.clone();
        out.push(self.head.weights);
        out.push(self.head.bias);
        if let Some(p) = self.proj {
            out.push(p);
        }
        if let Some(b) = self.bank {
            out.push(b);
        }
        out
    }

    pub fn forward(&self, tape: &mut Tape, image: TensorId) -> Result<ForwardPass> {
        let features = self.backbone.forward_features(tape, image)?;
        match self.bank {
            Some(bank) => {
                let maps = project_attention_maps(tape, features, bank)?;
                let pooled = bilinear_concat(tape, maps, features)?;
                let logits = self.head.forward_pooled(tape, pooled.f)?;
                Ok(ForwardPass { features, maps: Some(maps), logits })
            }
            None => {
                let logits = self.head.forward_logits(tape, features)?;
                Ok(ForwardPass { features, maps: None, logits })
            }
        }
    }
}

fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    let (h, w, c) = model.backbone.config.input_size;
    if data.channels != c || data.height < h || data.width < w {
        return Err(Error::contract(format!(
            "model takes {h}x{w}x{c} inputs but the dataset holds {}x{}x{} images",
            data.height, data.width, data.channels
        )));
    }
    if data.num_classes != model.num_classes() {
        return Err(Error::contract(format!(
            "model has {} classes but the dataset has {}",
            model.num_classes(),
            data.num_classes
        )));
    }
    Ok(())
}

// ── Crops ─────────────────────────────────────────────────────────────────

pub(crate) fn crop_window(
    pixels: &[f64],
    size: (usize, usize, usize),
    row0: usize,
    col0: usize,
    crop_h: usize,
    crop_w: usize,
) -> Vec<f64> {
    let (_, width, c) = size;
    let mut out = Vec::with_capacity(crop_h * crop_w * c);
    for r in 0..crop_h {
        let start = ((row0 + r) * width + col0) * c;
        out.extend_from_slice(&pixels[start..start + crop_w * c]);
    }
    out
}

/// Train-time augmentation: a random crop to the model's input size, drawn
/// from a stream keyed by (epoch, image id) so it is independent of batch
/// order and of every other component.
fn train_crop(
    img: &LabeledImage,
    data: &Dataset,
    input: (usize, usize, usize),
    data_seed: u64,
    epoch: usize,
) -> Vec<f64> {
    let (h, w, _) = input;
    let mut rng = component_rng(mix_seed(data_seed, epoch as u64), STREAM_CROP + img.id);
    use rand::Rng;
    let row0 = rng.random_range(0..=data.height - h);
    let col0 = rng.random_range(0..=data.width - w);
    crop_window(&img.pixels, (data.height, data.width, data.channels), row0, col0, h, w)
}

/// Eval-time counterpart: the deterministic center crop.
pub(crate) fn center_crop_window(
    pixels: &[f64],
    size: (usize, usize, usize),
    target: (usize, usize, usize),
) -> Vec<f64> {
    let (h, w, _) = target;
    crop_window(pixels, size, (size.0 - h) / 2, (size.1 - w) / 2, h, w)
}

fn center_crop(img: &LabeledImage, data: &Dataset, input: (usize, usize, usize)) -> Vec<f64> {
    center_crop_window(&img.pixels, (data.height, data.width, data.channels), input)
}

// ── Optimizer ─────────────────────────────────────────────────────────────

/// One velocity buffer per parameter, zero-initialized.
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn for_model(model: &Model) -> SgdState {
        SgdState {
            velocity: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// Classic momentum with L2 folded into the gradient:
/// v <- m*v + (g + wd*p); p <- p - lr*v.
pub fn sgd_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut SgdState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("param of {} values with grad of {} / velocity of {}", p.len(), g.len(), v.len()),
            ));
        }
        for i in 0..p.len() {
            v[i] = cfg.momentum * v[i] + (g[i] + cfg.weight_decay * p[i]);
            p[i] -= cfg.lr * v[i];
        }
    }
    Ok(())
}

// ── Metrics ───────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample total loss over the epoch.
    pub train_loss: f64,
    pub train_ce: f64,
    /// Mean attention-fitting term (before the lambda weight); 0 when unused.
    pub train_sam: f64,
    pub test_acc: f64,
    /// Wall clock, the one field that is not reproducible across runs.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn final_test_acc(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_ce,train_sam,test_acc,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch, r.train_loss, r.train_ce, r.train_sam, r.test_acc, r.seconds
            ));
        }
        out
    }

    /// Equality on everything the computation determines, i.e. all columns
    /// except wall-clock seconds.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss == b.train_loss
                    && a.train_ce == b.train_ce
                    && a.train_sam == b.train_sam
                    && a.test_acc == b.test_acc
            })
    }
}

// ── Training loop ─────────────────────────────────────────────────────────

struct StepLoss {
    loss: TensorId,
    ce: TensorId,
    sam: Option<TensorId>,
}

/// Builds the full differentiable graph for one batch: per-sample forward,
/// CE, and (when fitting attention) the detached target plus KL term, all
/// averaged over the batch.
fn step_graph(
    model: &Model,
    tape: &mut Tape,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(StagedModel, StepLoss)> {
    let staged = model.stage(tape, true)?;
    let input = model.backbone.config.input_size;
    // lambda = 0 skips the attention branch entirely, which is what makes
    // such runs bit-identical to baseline ones rather than merely close.
    let fit_attention = cfg.mode.fits_attention() && cfg.sam.lambda > 0.0;
    let mut ce_terms = Vec::with_capacity(batch.len());
    let mut sam_terms = Vec::with_capacity(batch.len());
    for &index in batch {
        let img = &data.images[index];
        let pixels = train_crop(img, data, input, cfg.seeds.data, epoch);
        let image = tape.constant(pixels, [input.0, input.1, input.2])?;
        let fwd = staged.forward(tape, image)?;
        ce_terms.push(tape.cross_entropy(fwd.logits, img.label)?);
        if fit_attention {
            match cfg.mode {
                Mode::Sam => {
                    let target = match cfg.sam.target_kind {
                        TargetKind::Cam => cam(tape, fwd.features, &model.head, img.label)?,
                        TargetKind::GradCam => {
                            grad_cam_from_graph(tape, fwd.features, fwd.logits, img.label)?
                        }
                    };
                    let proj = staged.proj.expect("sam mode carries a projection");
                    let predicted = predict_attention(tape, fwd.features, proj)?;
                    sam_terms.push(sam_loss(tape, &predicted, &target, &cfg.sam)?);
                }
                Mode::SamBilinear => {
                    let target = grad_cam_from_graph(tape, fwd.features, fwd.logits, img.label)?;
                    let maps = fwd.maps.expect("bilinear mode carries a bank");
                    sam_terms.push(sam_bilinear_loss(tape, maps, &target, &cfg.sam)?);
                }
                Mode::Baseline | Mode::Fbp => unreachable!("modes without attention fitting"),
            }
        }
    }
    let ce = tape.mean_of(&ce_terms)?;
    let (loss, sam) = if fit_attention {
        let sam = tape.mean_of(&sam_terms)?;
        (total_loss(tape, ce, sam, cfg.sam.lambda)?, Some(sam))
    } else {
        (ce, None)
    };
    Ok((staged, StepLoss { loss, ce, sam }))
}

/// One optimizer step over one batch; returns (total, ce, sam) loss values.
fn train_step(
    model: &mut Model,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    state: &mut SgdState,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let (staged, step) = step_graph(model, &mut tape, data, batch, cfg, epoch)?;
    let loss_value = tape.values(step.loss)[0];
    let ce_value = tape.values(step.ce)[0];
    let sam_value = step.sam.map_or(0.0, |id| tape.values(id)[0]);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite {
            op: "train_step",
            context: Some(format!("loss value {loss_value}")),
        });
    }
    tape.backward(step.loss)?;
    let grads: Vec<Vec<f64>> = staged
        .param_ids()
        .iter()
        .map(|&id| match tape.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.values(id).len()],
        })
        .collect();
    let mut params = model.params_mut();
    sgd_step(&mut params, &grads, state, cfg)?;
    Ok((loss_value, ce_value, sam_value))
}

/// Runs the full schedule, evaluating on the test split after every epoch.
/// Any failure is wrapped with the epoch and step where it happened.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    check_compatible(model, train_set)?;
    check_compatible(model, test_set)?;
    if model.mode != cfg.mode {
        return Err(Error::contract(format!(
            "model was built for mode {} but the config says {}",
            model.mode, cfg.mode
        )));
    }
    if train_set.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let mut state = SgdState::for_model(model);
    let mut metrics = RunMetrics::default();
    let mut step_index = 0usize;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut sam_sum = 0.0;
        for batch in batch_indices(train_set.len(), cfg.batch_size, cfg.seeds.epoch, epoch)? {
            step_index += 1;
            let (loss, ce, sam) =
                train_step(model, train_set, &batch, cfg, epoch, &mut state).map_err(|e| {
                    Error::contract(format!(
                        "training aborted at epoch {}, step {step_index}: {e}",
                        epoch + 1
                    ))
                })?;
            let weight = batch.len() as f64;
            loss_sum += loss * weight;
            ce_sum += ce * weight;
            sam_sum += sam * weight;
        }
        let n = train_set.len() as f64;
        let test_acc = evaluate(model, test_set)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_ce: ce_sum / n,
            train_sam: sam_sum / n,
            test_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}/{}: loss {:.4} (ce {:.4}, sam {:.4}) test_acc {:.4} [{:.1}s]",
            record.epoch,
            cfg.epochs,
            record.train_loss,
            record.train_ce,
            record.train_sam,
            record.test_acc,
            record.seconds
        );
        metrics.records.push(record);
    }
    Ok(metrics)
}

// ── Evaluation ────────────────────────────────────────────────────────────

/// Lowest index wins ties, so a constant-logit model predicts class 0.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Center-crops one image and returns the predicted class. No gradient
/// bookkeeping: parameters are staged as constants.
pub fn predict(model: &Model, img: &LabeledImage, data: &Dataset) -> Result<usize> {
    let input = model.backbone.config.input_size;
    let mut tape = Tape::new();
    let staged = model.stage(&mut tape, false)?;
    let pixels = center_crop(img, data, input);
    let image = tape.constant(pixels, [input.0, input.1, input.2])?;
    let fwd = staged.forward(&mut tape, image)?;
    Ok(argmax(tape.values(fwd.logits)))
}

/// Fraction of images whose argmax logit matches the label.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    check_compatible(model, dataset)?;
    let mut hits = 0usize;
    for img in &dataset.images {
        if predict(model, img, dataset)? == img.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

// ── Tests ─────────────────────────────────────────────────────────────────
