//! Permissioned-ledger engine for autonomous SLA lifecycles.
//!
//! Everything here is deterministic and free of IO so it builds under
//! `no_std` with an allocator. File formats and the command line live in the
//! companion `sla-ledger` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod hash;
pub mod intent;
pub mod interop;
pub mod contract;
pub mod ledger;
pub mod lifecycle;
pub mod monitoring;
pub mod sla;
pub mod sim;

pub use config::{Config, Tick};
pub use hash::{Canonical, Digest};
