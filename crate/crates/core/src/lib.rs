//! Sanitation of structurally poisoned graphs.
//!
//! The main entry point is [`sanitize::focused_sanitize`], which alternates
//! between training a linearized GNN, detecting victim nodes, and deleting the
//! edge with the largest meta-gradient of a victim-focused outer loss.

pub mod bundle_io;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod gnn;
pub mod graph;
pub mod metagrad;
pub mod metrics;
pub mod optim;
pub mod pca;
pub mod poison;
pub mod sanitize;
pub mod sbm;

pub use error::{Error, Result};
pub use graph::{EdgeSet, GraphBundle, PoisonRecord, Split};
