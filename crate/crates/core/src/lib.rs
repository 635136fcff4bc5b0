//! Heatmap-guided 6-DoF grasp detection on RGB-D frames, plus the synthetic
//! scene benchmark used to score it.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`nn`], [`weights`]: a small from-scratch NN substrate
//!   (dense tensors, conv/linear/sampling layers with hand-derived backward
//!   passes, SGD, and a binary weight format).
//! - [`geometry`]: camera model, grasp poses, Euler conventions.
//! - [`backbone`], [`region`], [`rotation`]: the detection pipeline — a
//!   fully-convolutional encoder with a feature pyramid and a graspability
//!   heatmap, depth-scaled region feature sampling, and an anchor-grid
//!   rotation head with bounded refinements.
//! - [`scene`], [`metrics`]: analytic primitive scenes (ray-cast rendering,
//!   antipodal grasp labels) and force-closure AP scoring.
//! - [`pipeline`]: ties the above into a trainable/inferable model.
//! - [`imgio`]: PGM/PPM image files.

pub mod backbone;
pub mod error;
pub mod geometry;
pub mod imgio;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod region;
pub mod rotation;
pub mod scene;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
