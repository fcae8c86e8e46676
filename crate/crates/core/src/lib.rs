//! Two-stream hierarchical attention LSTM for sequence classification over
//! per-frame spatial feature cubes.
//!
//! The network scores the K*K regions of each frame with one joint softmax
//! conditioned on both streams' previous hidden states, feeds the attended
//! inputs through per-stream two-layer skip-k LSTM hierarchies, and
//! classifies the concatenated final states. Everything is plain `f64` with
//! hand-derived backpropagation, verified against a finite-difference oracle.
//!
//! Crate layout:
//! * [`numerics`] - matrices, the seeded PRNG, softmax/sigmoid, finite differences
//! * [`lstm`] - the LSTM cell, forward and backward
//! * [`attention`] - joint spatial attention over feature cubes
//! * [`model`] - the assembled network, BPTT, parameter layout
//! * [`checkpoint`] - bit-exact binary model snapshots
//! * [`train`] - loss, dropout, clipping, Adadelta, the epoch loop
//! * [`data`] - the HFC1 container format, manifests, frame subsampling
//! * [`synth`] - synthetic datasets with planted attention and order structure
//! * [`gradcheck`] - whole-model gradient verification

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
