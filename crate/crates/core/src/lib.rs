//! Simulation laboratory for two-layer ReLU networks trained by full-batch
//! gradient descent on label-corrupted, nearly orthogonal data.
//!
//! The crate generates data, trains with exact update bookkeeping, checks
//! trajectory-level inequalities at runtime, and runs phase-diagram sweeps.

pub mod data;
pub mod error;
pub mod experiment;
pub mod init;
pub mod io;
pub mod ledger;
pub mod linalg;
pub mod network;
pub mod plot;
pub mod rng;
pub mod sweep;
pub mod trainer;
pub mod verify;

pub use error::{LabError, Result};
