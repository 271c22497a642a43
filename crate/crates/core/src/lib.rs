//! Dual-camera wide/telephoto fusion through a view transition.
//!
//! The telephoto image is warped by a revised flow so that its content
//! drifts smoothly from the wide camera's viewpoint at the overlap border
//! towards a virtual viewpoint in the interior, which shrinks occluded
//! regions before the two images are tone-matched and blended.

pub mod config;
pub mod error;
pub mod flowio;
pub mod imagecore;
pub mod occlusion;
pub mod pipeline;
pub mod synth;
pub mod toneblend;
pub mod viewtransition;
pub mod warp;

pub use config::{FusionConfig, PyramidLevels, TransitionMode};
pub use error::{FuseError, Result};
pub use imagecore::{BinaryMask, DistanceMap, FlowField, ImageBuffer, WeightMap};
