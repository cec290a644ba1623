//! JPEG steganalysis laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: a small differentiable tensor engine (convolution, batch
//!   normalization, activations, concatenation, pooling, softmax loss).
//! * [`jpeg`]: blockwise DCT codec, non-rounded decompression, PGM and
//!   coefficient-container I/O.
//! * [`stego`]: ±1 payload-rate embedding simulator over nonzero AC
//!   coefficients.
//! * [`net`]: the dense feature-reuse detector, its ablation variants,
//!   checkpoints and feature extraction.
//! * [`train`]: SGD training loop, augmentation and checkpoint ensembling.
//! * [`gfr`]: Gabor residual histogram features.
//! * [`fld`]: random-subspace Fisher linear discriminant ensemble.
//! * [`fusion`]: CNN feature + classical feature classifier fusion.
//! * [`manifest`]: canonical run manifests with input/output hashes.
//! * [`synth`]: synthetic textures and cover/stego benchmarks.

pub mod binio;
pub mod error;
pub mod fld;
pub mod fusion;
pub mod gfr;
pub mod jpeg;
pub mod manifest;
pub mod net;
pub mod rng;
pub mod stego;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use fld::{EnsembleConfig, EnsembleModel};
pub use fusion::{FusionConfig, FusionModel};
pub use gfr::{FeatureMatrix, FeatureVector, GaborBank, GfrConfig};
pub use jpeg::{CoefficientImage, GrayImage, QuantTable, RealImage};
pub use net::{NetGraph, Variant};
pub use stego::EmbedConfig;
pub use tensor::{Shape4, Tensor4};
pub use train::{PairedDataset, TrainConfig};

