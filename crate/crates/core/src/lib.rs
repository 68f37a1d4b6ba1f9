//! Horizontal graph federated learning simulator with a malicious-client
//! link reconstruction attack.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] – attributed graphs, file I/O, stochastic block model
//!   generation, client partitioning and data splits.
//! * [`nn`] – dense GCN / GraphSAGE / GAT models with hand-written reverse
//!   mode gradients for parameters *and* input features, plus Adam.
//! * [`federation`] – FedAvg rounds and the query-only posterior oracle.
//! * [`manipulation`] – label smoothing, attraction/repulsion penalties and
//!   projected gradient descent on the malicious client's node features.
//! * [`attack`] – pairwise posterior features, shadow datasets, attack
//!   classifiers and reconstruction.
//! * [`eval`] – metrics, stealth diagnostics and output-noise defenses.

pub mod attack;
pub mod error;
pub mod eval;
pub mod federation;
pub mod graph;
pub mod manipulation;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
