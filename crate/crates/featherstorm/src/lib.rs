//! Feature-level adversarial transfer attacks on a self-contained CPU stack.
//!
//! The crate bundles everything needed to study surrogate-to-target
//! transferability of feature-level attacks at desk scale: a small
//! reverse-mode autodiff engine ([`graph`]), a zoo of compact CNN
//! classifiers ([`model`]), spatial and spectral input mixing
//! ([`transforms`], [`frequency`]), the momentum iterative attack with
//! aggregated feature-importance weight matrices ([`attack`]), and a
//! deterministic evaluation harness ([`eval`]).
//!
//! Every stochastic operation takes an explicit [`rng::RandomStream`];
//! identical seeds produce bitwise-identical tensors, checkpoints, and
//! reports regardless of worker count.

pub mod attack;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod frequency;
pub mod graph;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::Tensor;
