//! Fusion of functional (fMRI) and structural (DTI) brain connectivity in a
//! subject-level heterogeneous graph, classified by a hierarchical
//! attention network with type-preserving pooling.
//!
//! * [`graphbuild`]: per-modality graphs and cross-modal meta-paths;
//! * [`augment`]: dynamic-connectivity graph augmentation;
//! * [`autodiff`]: reverse-mode differentiation over dense matrices;
//! * [`model`]: the classifier;
//! * [`train`]: loss, optimiser and the per-fold training loop;
//! * [`harness`]: cross-validation, metrics, synthetic cohorts and export;
//! * [`io`] and [`cli`]: file formats and the command-line front end.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod graphbuild;
pub mod harness;
pub mod io;
pub mod model;
pub mod train;

pub use error::{Error, Result};
