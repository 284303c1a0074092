//! Decentralized stochastic optimization over random, time-varying and
//! coordinate-sparsified communication graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: static topology, incidence structure, random subgraph
//!   sampling with coordinate masks, and the spectral/variance constants of
//!   the expected Laplacian.
//! - [`objectives`]: local objective suites with deterministic and stochastic
//!   gradient oracles and known constants.
//! - [`algorithms`]: pure update rules (FSPDA-SA, FSPDA-STORM, DSGD) and the
//!   algebraic diagnostics (primal-only recursion, dual residual, potential).
//! - [`engine`]: the synchronous iteration driver with metrics and bit
//!   accounting.
//! - [`async_rt`]: a discrete-event runtime with per-agent communication and
//!   computation threads.
//! - [`harness`]: JSON configuration, experiment presets and multi-seed batches.

pub mod algorithms;
pub mod async_rt;
pub mod blocks;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod objectives;
pub mod rng;

pub use blocks::Blocks;
pub use error::{Error, Result};
