//! Persistent object heap with failure-atomic transactions and lazily
//! extendible records.
//!
//! The crate is `no_std` (it needs `alloc`). Everything operates on a byte
//! [`Region`](pool::Region): a memory-mapped pool file in production, a plain
//! `Vec<u8>` in tests. File handling, locking and the benchmark harness live in
//! the `leds` companion crate.
//!
//! Module map:
//!
//! - [`pool`]: header, size-class allocator, root object, `ObjectId` translation
//!   and byte accounting.
//! - [`txn`]: undo-log transactions, crash injection and recovery.
//! - [`leds`]: extendible type descriptors and the lazy extension runtime.
//! - [`retention`]: migration passes for the manual retention model.
//! - [`kernels`]: the five persistent maps in their versioned layouts.
#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

mod error;
pub mod kernels;
pub mod layout;
pub mod leds;
mod oid;
pub mod pool;
pub mod retention;
mod stats;
pub mod txn;

pub use error::{Error, Result};
pub use oid::ObjectId;
pub use pool::{Pool, Region, TranslationMode};
pub use stats::{Attribution, WriteStats};
pub use txn::CrashPlan;
