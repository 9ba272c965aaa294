//! Hierarchical strategy networks for sequential truss design.
//!
//! The crate bundles everything needed to learn and evaluate design
//! strategies over a divergent hybrid action space:
//!
//! * [`env`] — the truss-design environment: states, generative actions,
//!   structural evaluation and deterministic rendering;
//! * [`sampler`] — spatial-region based sampling of bounded feasible action
//!   sets from the environment;
//! * [`nn`] — the three-network hierarchical policy (encoder, spatial action
//!   network, set-invariant selection network) with forward and backward
//!   passes, plus the checkpoint format;
//! * [`baseline`] — the non-hierarchical imitation network and its
//!   nearest-feasible-action projection;
//! * [`data`] — trajectory files, ingestion, dataset construction and k-fold
//!   splitting;
//! * [`demogen`] — scripted heuristic designers producing synthetic
//!   demonstration corpora;
//! * [`train`] — losses, the Adam optimizer, the alternating training loop
//!   and cross validation;
//! * [`eval`] — spatial / top-k accuracy metrics and report files;
//! * [`config`] — the TOML configuration surface shared by the CLI tools.

pub mod baseline;
pub mod config;
pub mod data;
pub mod demogen;
pub mod env;
pub mod eval;
pub mod nn;
pub mod sampler;
pub mod train;
