//! Few-shot classification with a frequency-aware dual-view metric.
//!
//! The pipeline takes per-sample feature tensors (channels x height x
//! width), splits each into a raw spatial view and a low-frequency
//! "shape" view (orthonormal cosine transform, Manhattan low-pass mask,
//! learned channel reweighting), builds a small subspace per class and
//! view from the support samples, and classifies queries by a learned
//! convex fusion of the two projection distances. Evaluation follows
//! the standard episodic N-way K-shot protocol over disjoint
//! base/validation/novel class splits.
//!
//! Modules:
//! - [`tensor`]: validated dense tensors and spectra
//! - [`spectral`]: cosine transform, inverse, low-pass masks
//! - [`attention`]: channel reweighting of the low-frequency view
//! - [`subspace`]: per-class subspaces, projection metric, fusion
//! - [`pipeline`]: end-to-end episode forward pass and ablation variants
//! - [`objective`]: loss, finite-difference gradients, training loop
//! - [`episodic`]: episode sampling and evaluation protocol
//! - [`data_io`]: dataset file format and the synthetic benchmark
//! - [`oracle`]: slow reference implementations used for verification
//! - [`selftest`]: named runtime cross-checks against the oracles

pub mod attention;
pub mod config;
pub mod data_io;
pub mod episodic;
pub mod error;
pub mod objective;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod spectral;
pub mod subspace;
pub mod tensor;

pub use config::Config;
pub use error::{Error, Result};
