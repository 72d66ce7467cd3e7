//! Conditional latent tree models (CLTM) for multivariate binary and Gaussian
//! time series.
//!
//! The crate is organised along the learning pipeline:
//!
//! * [`model`]: shared domain types (latent tree, covariate schema, dataset,
//!   parameters) plus validation and JSON serialization.
//! * [`distances`]: unconditional and covariate-conditioned information
//!   distances between observed series.
//! * [`structure`]: Chow-Liu skeleton + recursive grouping to recover a
//!   latent tree from a distance matrix, cluster extraction and tree export.
//! * [`inference`]: exact sum-product belief propagation and ancestral
//!   sampling on the conditional latent tree.
//! * [`em`]: expectation-maximization parameter fitting and the chain CRF
//!   baseline.
//! * [`predict`]: one-step-ahead node and edge prediction and the CP/CA/EP/EA
//!   and RDA/RDM scores.
//! * [`pipeline`]: ingestion, preprocessing, covariate builders, synthetic
//!   data generation and experiment orchestration.
//!
//! Data-parallel loops (distance pairs, per-time-point inference, Monte Carlo
//! prediction) run on rayon when the `parallel` feature is enabled and fall
//! back to plain iteration otherwise. Results never depend on scheduling.

pub mod distances;
pub mod em;
pub mod error;
pub mod exec;
pub mod inference;
pub mod model;
pub mod pipeline;
pub mod predict;
pub mod structure;

pub use error::{CltmError, Result};
pub use exec::Execution;
