//! Interpretable image classification on a synthetic grid-of-shapes task.
//!
//! The model pipeline: a small convolutional backbone, a bank of prototype
//! vectors compared by cosine similarity against every latent position, a
//! channel-wise max filter that keeps each prototype's best match at its
//! location, learned linear combinations folded into one per-class
//! "super-prototype" map, and an MLP classifier over the per-class similarity
//! scores. The trained MLP is translated into a quantitative bipolar
//! argumentation framework (arguments with base scores, weighted attack and
//! support edges) which can be shrunk by clustering hidden neurons with
//! similar activations, giving compact graph explanations alongside per-class
//! image heatmaps.
//!
//! Crate layout follows the pipeline: [`tensor`] (autodiff engine),
//! [`shapes`] (dataset), [`model`] (forward architecture), [`train`]
//! (optimization), [`qbaf`] (argumentation translation and sparsification),
//! and [`explain`] (assembled per-input explanations).

pub mod explain;
pub mod hash;
pub mod model;
pub mod qbaf;
pub mod rng;
pub mod shapes;
pub mod tensor;
pub mod train;

pub use tensor::{grad_check, GradCheckReport, Tape, Tensor, TensorError, ValueId};
