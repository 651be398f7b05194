//! Single-image human digitization through double-sided orthographic re-projection.
//!
//! A perspective photograph of a person goes through three convolutional
//! predictors. The first predicts front and back normal maps, the second
//! predicts front and back shade-free color images, and the third fuses the
//! feature maps of the first two to predict front and back depth maps. All
//! outputs live on one orthographic pixel grid, so the depth pair bounds the
//! body along each pixel column and can be carved straight into a volume and
//! meshed.
//!
//! The crate covers the whole loop:
//!
//! - [`geometry`]: meshes, cameras, orthographic/perspective rendering, depth and normal maps
//! - [`datagen`]: training samples from colored meshes and background photos
//! - [`networks`]: the attention U-Nets and the multi-headed depth network
//! - [`losses`]: masked L1, SSIM, Gram-matrix perceptual loss and the weighted total
//! - [`fusion`]: depth pair to signed volume to colored mesh
//! - [`eval`]: P2S, Chamfer and normal-error metrics
//! - [`runtime`]: training, checkpoints and inference
//!
//! Runnable walkthroughs live in `examples/`; the `orthohuman` binary wraps the
//! same functionality as `datagen | train | infer | fuse | eval` subcommands.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod networks;
pub mod runtime;

pub use datagen::{build_dataset, make_sample, DatagenConfig, DatasetManifest, Sample};
pub use losses::{LossReport, LossWeights};
pub use networks::{AblationMode, ModelConfig, OrthoHumanNet, PipelineOutput};
pub use runtime::{Checkpoint, TrainConfig};
pub use eval::{evaluate_model, EvalConfig, Metrics};
pub use fusion::{reconstruct, ReconstructionConfig};
pub use geometry::{DepthMap, Image, Mask, Mesh, NormalMap, OrthoFrame, OrthographicCamera, PerspectiveCamera, Side};

/// Crate-level error that unifies the per-module error types.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Datagen(#[from] datagen::DatagenError),
    #[error(transparent)]
    Network(#[from] networks::NetworkError),
    #[error(transparent)]
    Loss(#[from] losses::LossError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Runtime(#[from] runtime::RuntimeError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
