//! GAN-based oversampling of minority attack classes in netflow intrusion
//! datasets.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingest`] parses netflow CSV rows, chunks large files and builds
//!   per-attack-family binary datasets.
//! - [`preprocess`] turns flow records into numeric vectors and min-max
//!   normalizes them into `[0, 1]`.
//! - [`neuralnet`] is the dense feed-forward network shared by the
//!   classifier, the generator and the discriminator.
//! - [`optimizer`] provides L-BFGS (classifier) and plain gradient descent
//!   (GAN training).
//! - [`classifier`] splits, trains and applies the attack/non-attack MLP.
//! - [`gan`] trains the generator/discriminator pair and balances datasets
//!   with synthetic minority samples.
//! - [`evalmetrics`] computes confusion counts, metrics, ROC/PR curves and
//!   before/after comparison reports.
//! - [`synthdata`] produces seeded synthetic imbalanced datasets.
//!
//! Batch loss/gradient evaluation runs on rayon when the `parallel` feature
//! is enabled (the default). Reductions use fixed-size chunks summed in
//! order, so sequential and parallel execution give bit-identical results.

pub mod classifier;
pub mod evalmetrics;
pub mod gan;
pub mod ingest;
pub mod io;
pub mod neuralnet;
pub mod optimizer;
pub mod par;
pub mod preprocess;
pub mod synthdata;

mod sample;

pub use sample::{class_counts, Class, EncodedSample};

/// Number of flow features carried by every record.
pub const N_FEATURES: usize = 12;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
