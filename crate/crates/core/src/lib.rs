//! Flow-adaptive occlusion sensitivity analysis for video classifiers.
//!
//! The pipeline tracks a grid of anchor points through a clip with sparse
//! pyramidal Lucas-Kanade flow, turns each trajectory into a moving
//! rectangular occlusion tube, merges tubes whose motion co-occurs, and
//! scores each occluded clip with a [`model::ScoreModel`]. Scores are either
//! exact (one forward per mask) or approximated to first order from a single
//! input gradient, optionally with conditional-sampling fill.
//!
//! Maps are evaluated with deletion/insertion AUC and the spatial pointing
//! game in [`metrics`].

pub mod error;
pub mod flow;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod saliency;
pub mod selftest;
pub mod synthetic;
pub mod tensor_io;
pub mod video;

pub use error::{Error, Result};
pub use video::{GroundTruthBoxes, Rect, VideoDims, VideoTensor};
