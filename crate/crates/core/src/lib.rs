//! Cascade speculative decoding in simulation.
//!
//! The crate covers four layers:
//!
//! - [`ewif`]: closed-form expected walltime improvement factors (EWIF) for
//!   plain speculative decoding, vertical and horizontal cascades, their
//!   hyperparameter optima, cost-coefficient bounds and borderline curves.
//! - [`hierarchy`]: simulated draft models (neural stand-ins, a statistical
//!   bottom and a prompt-lookup n-gram drafter), synthetic target streams and
//!   single-round draft/verify primitives.
//! - [`estimation`], [`tree`], [`scheduler`]: online acceptance/latency
//!   estimation, the draft token tree and the dynamic tree-cascade scheduler
//!   together with its greedy and static baselines.
//! - [`sim`]: the decode loop, cost ledger, scenario presets and paired-seed
//!   ensembles.
//!
//! The crate is `no_std` and only needs `alloc`. Enable the `serde` feature
//! for (de)serializable configuration and log records.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
pub mod estimation;
pub mod ewif;
pub mod hierarchy;
pub mod math;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod tree;

pub use error::{Error, Result};
