//! MAFFSRN: a lightweight single-image super-resolution network built on a
//! small NCHW tensor engine with reverse-mode autodiff.
//!
//! Layers, bottom up: [`tensor`] (tensors, operators, tape), [`exec`]
//! (executors the graph is written against), [`blocks`] and [`model`] (the
//! network), [`complexity`] (parameter, multi-add and memory accounting),
//! [`imaging`] (PNG, bicubic resize, metrics, datasets) and [`training`].

pub mod blocks;
pub mod complexity;
mod error;
pub mod exec;
pub mod imaging;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{NetConfig, Network};
