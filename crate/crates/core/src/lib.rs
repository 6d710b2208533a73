//! # regen-snn
//!
//! An event-driven spiking convolutional network trained without labels,
//! one layer at a time, by making a pseudo-visible decoder layer regenerate
//! the layer's input spike pattern; a fully connected readout is then
//! trained against label-derived Poisson target trains.
//!
//! Modules:
//!
//! - [`lif`]: leaky integrate-and-fire populations
//! - [`raster`]: spike rasters and Poisson rate coding
//! - [`tensor`]: valid/full correlation, flipping, average pooling
//! - [`network`]: topology strings, weights, spiking forward passes
//! - [`regen`]: the regenerative auto-encoder learning rule
//! - [`readout`]: supervised output layer and classification
//! - [`trainer`]: layer-wise schedule, probes, evaluation
//! - [`checkpoint`]: binary weight snapshots
//! - [`config`]: TOML run configuration
//! - [`metrics`]: reconstruction error, sparsity, CSV log
//! - [`data`]: MNIST IDX / CIFAR-10 readers, graymap output
//! - [`rng`]: seeded per-purpose random streams

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod lif;
pub mod metrics;
pub mod network;
pub mod raster;
pub mod readout;
pub mod regen;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
