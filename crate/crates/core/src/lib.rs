//! External sorting for byte-addressable storage.
//!
//! `braidsort` sorts files of fixed-size or key-length-value records that live
//! on a storage [`device`](crate::device): either real files, or an emulated
//! byte-addressable device whose read/write asymmetry, random-read penalty,
//! read-write interference and thread scaling are configurable. Every byte
//! moved is charged to a traffic ledger, so algorithms can be compared by
//! exact traffic and by injected device delay rather than by host timing.
//!
//! The main algorithm ([`wiscsort`]) separates keys from values: it gathers
//! only keys into an in-memory index of `(key, locator)` entries, sorts that,
//! and either materializes the output directly (one pass) or persists sorted
//! index runs and merges them, fetching values with batched random reads.
//! [`baselines`] holds the comparison sorters.

pub mod baselines;
pub mod clock;
pub mod device;
mod error;
pub mod job;
pub mod profiler;
pub mod recfmt;
pub mod report;
pub mod sched;
pub mod wiscsort;

pub use error::{Error, Result};
