//! Microbenchmark harness for one-sided PGAS communication.
//!
//! An embedded runtime hosts several processing elements (PEs) in one
//! process. Measurement routines for put/get, non-blocking transfers,
//! collectives, memory management, contexts, memory ordering and locks run
//! on top of it, driven by `.ski` benchmark scripts.

pub mod cli;
pub mod clock;
pub mod dsl;
pub mod error;
pub mod measure;
pub mod routines;
pub mod runtime;

pub use clock::{ClockKind, ClockModel, CostModel};
pub use error::{Error, Result};
pub use runtime::{Pe, ProgressMode, World, WorldConfig};
