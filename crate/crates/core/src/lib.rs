//! Evolves static images that a frame predictor mistakes for moving content.
//!
//! A CPPN genome paints an image over a set of concentric rings. The image is
//! repeated into a static clip, a predictor extrapolates the next frames, and
//! sparse optical flow between input and prediction measures how much motion
//! the predictor hallucinated. NEAT evolves the genomes against that score.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cppn;
pub mod fitness;
pub mod flow;
pub mod imaging;
pub mod neat;
pub mod pipeline;
pub mod predictor;
pub mod protocol;
