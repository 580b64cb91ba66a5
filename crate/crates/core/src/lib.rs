//! Multi-object tracking association built on entropic optimal transport.
//!
//! Detections in two frames are compared through a cosine appearance cost
//! (optionally blended with an IoU cost), the cost matrix is augmented with a
//! dustbin row and column, and a log-domain Sinkhorn solver produces a soft
//! assignment that is differentiable with respect to the costs. Training
//! supervision comes from pseudo-labels obtained by motion-compensating boxes
//! and matching them by overlap with the Hungarian algorithm.
//!
//! Module map:
//!
//! - [`geom`]: boxes, IoU, NMS, bilinear sampling of motion fields
//! - [`costs`]: cosine / IoU cost matrices and dustbin augmentation
//! - [`assign`]: Sinkhorn forward and backward passes, Hungarian, decoding
//! - [`pseudo`]: pseudo-label generation and stereo occlusion masks
//! - [`loss`]: NLL and triplet objectives with gradients
//! - [`tracker`]: online tracker with ID management
//! - [`metrics`]: IDF1, ID switches, association precision/recall
//! - [`synth`]: seeded synthetic scenarios with ground truth
//! - [`io`]: file formats and configuration
//! - [`selfcheck`]: runtime oracle battery

pub mod assign;
pub mod costs;
pub mod error;
pub mod geom;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod pseudo;
pub mod selfcheck;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
