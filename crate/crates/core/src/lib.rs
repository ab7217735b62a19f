//! Core algorithms for treatment-aware, query-driven video summarization.
//!
//! The crate covers the full pipeline at desk scale: seeded visual/textual
//! perturbations ([`treatments`]), construction of a treatment-labeled corpus
//! ([`dataset`]), multi-modal featurization and fusion ([`features`],
//! [`fusion`]), a treatment-gated variational encoder/decoder with dual
//! attention ([`encoder`], [`decoder`], [`attention`]), the training
//! objective and optimizer ([`loss`], [`train`]), and budgeted summary
//! selection with accuracy/F1 scoring ([`eval`]).
//!
//! Everything here is pure computation over `f64` buffers; the crate is
//! `no_std` (with `alloc`). File formats, configuration files, and the
//! command-line driver live in the companion `vidsum-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod loss;
pub mod model;
pub mod nn;
pub mod rng;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod train;
pub mod treatments;
pub mod types;

pub use error::{Error, Result};
pub use types::{FeatureMap, Frame, FrameData, Query};
