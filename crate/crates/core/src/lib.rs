//! Spatio-temporal graph complementary scattering networks.
//!
//! A fixed scattering tree of diffusion wavelets on a spatial skeleton graph
//! and a temporal path graph extracts interpretable features; energy-ratio
//! pruning keeps the informative branches, and every kept branch gets a
//! trainable sibling built from the complementary filters `I - H` on
//! softmax-parameterized random walks. A one-hidden-layer perceptron
//! classifies the temporally pooled features.
//!
//! Module map:
//!
//! * [`graph`] – graphs, lazy random walks, dyadic powers, norms
//! * [`signal`] – the `C x N x T` signal tensor
//! * [`filterbank`] – diffusion wavelet banks and separable filtering
//! * [`scattering`] – scattering tree, pruning, pooled features
//! * [`complementary`] – agent-parameterized complementary nodes
//! * [`training`] – reverse-mode gradients, classifier, optimizers, loops
//! * [`data`] – skeleton sequences, preprocessing, synthetic datasets
//! * [`io`] – checkpoint, feature cache and mask files
//! * [`config`] – `key=value` run configuration
//! * `cli` – the command-line tool (feature `cli`)

pub mod complementary;
pub mod config;
pub mod data;
pub mod error;
pub mod filterbank;
pub mod graph;
pub mod io;
pub mod scattering;
mod par;
pub mod signal;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
