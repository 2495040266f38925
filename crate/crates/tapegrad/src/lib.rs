//! Reverse-mode autodiff on a tape of `f64` ndarrays.
//!
//! The design is deliberately small: a [`Tape`] records operations as they
//! run, each node keeping a closure that maps the output gradient to the
//! parent gradients. Parameters live outside the tape in a [`ParamStore`]
//! and are leased into a [`Session`] per forward pass, so one model can be
//! driven by many tapes (training steps, inference, saliency probes).
//!
//! Everything is `f64`. At the model sizes this workspace targets, the
//! bandwidth cost is acceptable and it keeps finite-difference gradient
//! checks meaningful.

mod adam;
mod conv;
mod gradcheck;
mod norm;
mod ops;
mod store;
mod tape;

pub mod checkpoint;
pub mod init;
pub mod layers;

pub use adam::{clip_global_norm, Adam};
pub use gradcheck::{finite_difference_check, sample_param_indices, GradCheckResult};
pub use store::{ParamId, ParamStore, Session};
pub use tape::{Arr, Grads, Tape, Var};
