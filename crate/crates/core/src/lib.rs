//! Future-frame prediction for cine-MR style image sequences.
//!
//! The pipeline registers every frame of a sequence onto the first one with
//! dense pyramidal Lucas-Kanade optical flow, compresses the displacement
//! fields with a PCA motion model, forecasts the time-dependent PCA weights
//! online (RNNs trained by RTRL, UORO, SnAp-1 or DNI, an LMS filter, offline
//! linear regression, and baselines), reconstructs future fields from the
//! predicted weights, warps the first frame with Nadaraya-Watson regression,
//! and scores the result.

pub mod dvf;
pub mod error;
pub mod flow;
pub mod forecast;
pub mod image;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod sequence;
pub mod synth;
pub mod warp;

pub use dvf::DisplacementField;
pub use error::{Error, Result};
pub use image::Image;
pub use sequence::ImageSequence;
pub use synth::{generate_synthetic_sequence, SyntheticGroundTruth, SyntheticSpec};
