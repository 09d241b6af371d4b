//! Valence-arousal driven facial expression editing.
//!
//! * [`dataset`]: (VA, expression coefficient) pairs, validation, splits.
//! * [`decoder`]: the VA to coefficient MLP, training and weight files.
//! * [`semantics`]: label regions, keypoint trajectories, blending, smoothing.
//! * [`face3d`]: blendshape model, preview renderer and masks.
//! * [`eval`]: pixel distance metrics and self-reenactment runs.
//! * [`project`]: timelines of edits and their compilation.
//! * [`synth`]: seeded synthetic data used by tests and demos.

pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod face3d;
pub mod par;
pub mod project;
pub mod semantics;
pub mod synth;

pub use dataset::{ExprCoeffs, ExprSample, ExpressionDataset, VaPoint, EXPR_DIM};
pub use decoder::{DecoderConfig, DecoderWeights, ExpressionDecoder};
pub use error::{Error, ErrorKind};
pub use semantics::{CoeffTrack, EmotionLabel, Intensity, VaTrajectory};
