//! Text-conditioned 2D human pose generation.
//!
//! A caption embedding is mapped to 18 OpenPose keypoints plus per-joint
//! visibility by an MLP projector and a transformer encoder, trained with a
//! masked coordinate loss, visibility cross-entropy, an invisible-joint
//! penalty, bone-length consistency and a bidirectional InfoNCE term.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod render;
pub mod skeleton;
pub mod synthcorpus;
pub mod textenc;
pub mod trainer;

pub use error::{Error, Result};
