//! Fine-grained video classification and captioning at desk scale.
//!
//! A shared two-channel video encoder (parallel 2D and 3D convolutions,
//! bidirectional LSTM aggregation) feeds an action classifier and a caption
//! decoder trained with a weighted joint loss. Around it: a deterministic
//! synthetic-video world for end-to-end verification, caption metrics with
//! brute-force oracles, a frozen-feature few-shot transfer benchmark, and
//! video Grad-CAM saliency.
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability, and the `finegrain` binary for the pipeline subcommands.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod seeds;
pub mod stats;
pub mod toyworld;
pub mod training;
pub mod transfer;
pub mod videoio;

pub use error::{Error, Result};
