//! Opening pool files under a retention policy.

use std::path::Path;

use leds_core::pool::FormatOptions;
use leds_core::retention::{apply, RetentionPolicy, Strategy, Verdict};

use crate::error::Result;
use crate::file::{delete_pool, fresh_uuid, PoolFile};

pub use leds_core::retention::{
    manual_migrator, run_migration, MigrationPass, MigrationRegistry, MigrationStats, VERSION_ORIGINAL,
    VERSION_UPDATED,
};

fn create(path: &Path, policy: &RetentionPolicy, capacity: u64) -> Result<PoolFile> {
    let mut opts = FormatOptions::new(&policy.layout_name, fresh_uuid());
    opts.layout_version = policy.layout_version;
    let mut pool = PoolFile::create_with(path, capacity, opts)?;
    if let Strategy::Automatic { fingerprint } = policy.strategy {
        pool.set_schema_fingerprint(fingerprint)?;
    }
    Ok(pool)
}

/// Opens the pool at `path` and brings it in line with `policy`.
///
/// Under the reset policy a missing pool is created and a pool with any
/// other layout is deleted and recreated empty (`capacity` bytes). The
/// other policies require an existing pool; manual runs pending migration
/// passes before returning, automatic records the new version.
pub fn open_with_policy(path: impl AsRef<Path>, policy: &RetentionPolicy, capacity: u64) -> Result<(PoolFile, Verdict)> {
    let path = path.as_ref();
    if matches!(policy.strategy, Strategy::Reset) && !path.exists() {
        return Ok((create(path, policy, capacity)?, Verdict::ResetRequired));
    }
    let mut pool = PoolFile::recover(path)?;
    let verdict = apply(&mut pool, policy)?;
    if verdict == Verdict::ResetRequired {
        drop(pool);
        delete_pool(path)?;
        pool = create(path, policy, capacity)?;
    }
    Ok((pool, verdict))
}
