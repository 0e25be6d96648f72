//! Self-boosting attention regularization for image classifiers.
//!
//! The crate trains small convolutional classifiers whose own attention maps
//! are used as a regularization target: the model's gradient-based saliency
//! is sharpened, normalized, and distilled back into the predicted attention
//! each step, which steers the classifier toward class-evidence regions even
//! when labels are scarce. A bilinear head extends the idea to several
//! attention filters pooled into one feature.
//!
//! Everything runs on a small reverse-mode autodiff core over `f64` buffers;
//! there are no external numeric dependencies and all computation is
//! sequential and deterministic.

pub mod attention;
pub mod backbone;
pub mod bilinear;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod heatmap;
pub mod logging;
mod rng;
pub mod sam;
pub mod tensor;
pub mod trainer;

pub use attention::{
    cam, grad_cam, grad_cam_from_graph, normalize_attention, AttentionMap, AttentionSource,
};
pub use checkpoint::{load_model, save_model};
pub use config::ConfigMap;
pub use data::{
    batch_indices, generate_synthetic, load_image_folder, subsample, Dataset, LabeledImage,
    SplitSpec, SyntheticSpec,
};
pub use backbone::{Backbone, BackboneConfig, ClassifierHead};
pub use bilinear::{
    bilinear_concat, project_attention_maps, sam_bilinear_loss, union_max, BilinearFeature,
    ProjectionBank,
};
pub use sam::{predict_attention, sam_loss, total_loss, SamLossConfig, SamProjection, TargetKind};
pub use error::{Error, Result};
pub use tensor::{GradMap, Shape, Tape, TensorId};
pub use trainer::{
    evaluate, predict, sgd_step, train, EpochRecord, Mode, Model, RunMetrics, Seeds, SgdState,
    TrainConfig,
};
