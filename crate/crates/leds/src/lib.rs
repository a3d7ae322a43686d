//! File-backed pools, retention policies and the retention benchmark
//! harness built on [`leds_core`].
//!
//! ```no_run
//! use leds::file::PoolFile;
//! use leds_core::kernels::{EntryFormat, KernelKind, Map};
//!
//! let mut pool = PoolFile::create("/tmp/example.pool", "kvmap", 8 << 20)?;
//! let map = Map::create(&mut pool, KernelKind::Btree, EntryFormat::V1)?;
//! map.insert(&mut pool, 7, 70)?;
//! assert_eq!(map.lookup(&mut pool, 7)?, Some(70));
//! pool.close()?;
//! # Ok::<(), leds::Error>(())
//! ```

pub mod bench;
pub mod error;
pub mod file;
pub mod retention;
pub mod schema;

pub use error::{Error, Result};
pub use leds_core;
