//! Retention models over an open pool.
//!
//! A pool's layout identity is its layout name, a monotone layout version
//! and the fingerprint of the extendible base layout. [`apply`] compares
//! that identity against a [`RetentionPolicy`] and either accepts the pool,
//! runs the registered manual migration passes, records an automatic
//! upgrade, or reports that the pool must be discarded. Deleting and
//! recreating the pool file is left to the caller.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::kernels::{EntryFormat, KernelKind, LayoutChange, Map};
use crate::{Error, ObjectId, Pool, Result, WriteStats};

/// Layout version written by the original program.
pub const VERSION_ORIGINAL: u32 = 1;
/// Layout version of the updated program.
pub const VERSION_UPDATED: u32 = 2;

/// Root transform: receives the current root id inside the pass's
/// transaction and returns the new root id.
pub type RootTransform = dyn Fn(&mut Pool, ObjectId) -> Result<ObjectId> + Send + Sync;

#[derive(Clone)]
pub struct MigrationPass {
    pub from_version: u32,
    pub to_version: u32,
    pub label: String,
    transform: Arc<RootTransform>,
}

impl MigrationPass {
    pub fn new(
        from_version: u32,
        to_version: u32,
        label: impl Into<String>,
        transform: impl Fn(&mut Pool, ObjectId) -> Result<ObjectId> + Send + Sync + 'static,
    ) -> Result<Self> {
        if to_version <= from_version {
            return Err(Error::InvalidArgument("migration must raise the layout version"));
        }
        Ok(MigrationPass { from_version, to_version, label: label.into(), transform: Arc::new(transform) })
    }
}

impl fmt::Debug for MigrationPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MigrationPass")
            .field("from_version", &self.from_version)
            .field("to_version", &self.to_version)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

/// What one pass wrote and moved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MigrationStats {
    pub from_version: u32,
    pub to_version: u32,
    pub records_migrated: u64,
    pub objects_created: u64,
    pub objects_freed: u64,
    pub bytes: WriteStats,
}

/// Runs `pass` in one transaction, bumping the layout version with it, so
/// a crash leaves either the old or the new version and a restart simply
/// reruns the pass.
pub fn run_migration(pool: &mut Pool, pass: &MigrationPass) -> Result<MigrationStats> {
    let current = pool.layout_version();
    if current != pass.from_version {
        return Err(Error::MigrationMissing { from: current, to: pass.to_version });
    }
    let before = pool.stats();
    pool.transact(|p| {
        let root = p.root_id();
        let new_root = (pass.transform)(p, root)?;
        if new_root != p.root_id() {
            return Err(Error::Corrupt("migration returned a root the pool does not hold"));
        }
        p.set_layout_version(pass.to_version)
    })?;
    let bytes = pool.stats().delta(&before);
    Ok(MigrationStats {
        from_version: pass.from_version,
        to_version: pass.to_version,
        records_migrated: bytes.records_migrated,
        objects_created: bytes.allocations,
        objects_freed: bytes.frees,
        bytes,
    })
}

/// Migration passes keyed by their source version.
#[derive(Clone, Debug, Default)]
pub struct MigrationRegistry {
    passes: BTreeMap<u32, MigrationPass>,
}

impl MigrationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, pass: MigrationPass) -> Result<()> {
        if self.passes.contains_key(&pass.from_version) {
            return Err(Error::InvalidArgument("a pass from this version is already registered"));
        }
        self.passes.insert(pass.from_version, pass);
        Ok(())
    }

    pub fn with(mut self, pass: MigrationPass) -> Result<Self> {
        self.register(pass)?;
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    /// The passes leading from `from` to exactly `to`, in order.
    pub fn chain(&self, from: u32, to: u32) -> Result<Vec<&MigrationPass>> {
        let mut out = Vec::new();
        let mut v = from;
        while v < to {
            let pass = self.passes.get(&v).ok_or(Error::MigrationMissing { from: v, to })?;
            if pass.to_version > to {
                return Err(Error::MigrationMissing { from: v, to });
            }
            out.push(pass);
            v = pass.to_version;
        }
        Ok(out)
    }

    /// Runs every pass from the pool's version up to `to`, one transaction
    /// each.
    pub fn run(&self, pool: &mut Pool, to: u32) -> Result<Vec<MigrationStats>> {
        let chain = self.chain(pool.layout_version(), to)?;
        chain.into_iter().map(|pass| run_migration(pool, pass)).collect()
    }
}

#[derive(Clone, Debug)]
pub enum Strategy {
    /// Discard the pool whenever its layout differs.
    Reset,
    /// Run registered passes before use.
    Manual(MigrationRegistry),
    /// Accept pools whose base layout matches; records upgrade lazily.
    Automatic { fingerprint: u64 },
}

#[derive(Clone, Debug)]
pub struct RetentionPolicy {
    pub layout_name: String,
    pub layout_version: u32,
    pub strategy: Strategy,
}

impl RetentionPolicy {
    pub fn reset(layout_name: impl Into<String>, layout_version: u32) -> Self {
        RetentionPolicy { layout_name: layout_name.into(), layout_version, strategy: Strategy::Reset }
    }

    pub fn manual(layout_name: impl Into<String>, layout_version: u32, passes: MigrationRegistry) -> Self {
        RetentionPolicy { layout_name: layout_name.into(), layout_version, strategy: Strategy::Manual(passes) }
    }

    pub fn automatic(layout_name: impl Into<String>, layout_version: u32, fingerprint: u64) -> Self {
        RetentionPolicy {
            layout_name: layout_name.into(),
            layout_version,
            strategy: Strategy::Automatic { fingerprint },
        }
    }
}

/// Outcome of [`apply`].
#[derive(Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Layout already current.
    Current,
    /// The pool must be deleted and recreated.
    ResetRequired,
    Migrated(Vec<MigrationStats>),
    /// Automatic model: version recorded, objects upgrade on access.
    Upgraded { from: u32 },
}

/// Brings an open pool in line with `policy`.
pub fn apply(pool: &mut Pool, policy: &RetentionPolicy) -> Result<Verdict> {
    let name = pool.layout_name();
    let version = pool.layout_version();
    if name != policy.layout_name {
        return match policy.strategy {
            Strategy::Reset => Ok(Verdict::ResetRequired),
            _ => Err(Error::LayoutMismatch { expected: policy.layout_name.clone(), found: name }),
        };
    }
    if version > policy.layout_version && !matches!(policy.strategy, Strategy::Reset) {
        return Err(Error::InvalidArgument("pool layout is newer than the program"));
    }
    match &policy.strategy {
        Strategy::Reset if version != policy.layout_version => Ok(Verdict::ResetRequired),
        Strategy::Reset => Ok(Verdict::Current),
        Strategy::Manual(_) if version == policy.layout_version => Ok(Verdict::Current),
        Strategy::Manual(passes) => Ok(Verdict::Migrated(passes.run(pool, policy.layout_version)?)),
        Strategy::Automatic { fingerprint } => {
            let stored = pool.schema_fingerprint();
            if stored != 0 && stored != *fingerprint {
                return Err(Error::FingerprintMismatch { expected: *fingerprint, found: stored });
            }
            if stored == 0 {
                pool.set_schema_fingerprint(*fingerprint)?;
            }
            if version == policy.layout_version {
                return Ok(Verdict::Current);
            }
            pool.set_layout_version(policy.layout_version)?;
            Ok(Verdict::Upgraded { from: version })
        }
    }
}

/// Manual pass converting a `kind` map from the original entry layout to
/// the one `change` calls for.
pub fn manual_migrator(kind: KernelKind, change: LayoutChange) -> MigrationPass {
    let target = EntryFormat::manual_target(change);
    MigrationPass::new(VERSION_ORIGINAL, VERSION_UPDATED, alloc::format!("{kind} {change:?}"), move |p, _| {
        let m = Map::open(p, kind, EntryFormat::V1)?;
        Ok(m.migrate_to(p, target)?.root)
    })
    .expect("versions increase")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::entry_descriptor;
    use crate::pool::FormatOptions;
    use alloc::boxed::Box;
    use alloc::vec;

    fn pool(name: &str) -> Pool {
        Pool::format(Box::new(vec![0u8; 4 << 20]), FormatOptions::new(name, 9)).unwrap()
    }

    fn hashmap_pool(keys: &[u64]) -> Pool {
        let mut p = pool("map");
        let m = Map::create(&mut p, KernelKind::Hashmap, EntryFormat::V1).unwrap();
        for k in keys {
            m.insert(&mut p, *k, *k * 10).unwrap();
        }
        p
    }

    #[test]
    fn hashmap_change_writes_forty_bytes_per_node() {
        let mut p = hashmap_pool(&[1, 2, 3]);
        let s = run_migration(&mut p, &manual_migrator(KernelKind::Hashmap, LayoutChange::Change)).unwrap();
        assert_eq!(s.records_migrated, 3);
        assert_eq!(s.bytes.user_bytes(crate::Attribution::Migration), 3 * 40);
        assert_eq!(p.layout_version(), VERSION_UPDATED);
        let m = Map::open(&mut p, KernelKind::Hashmap, EntryFormat::V2Change).unwrap();
        let mut got = m.scan(&mut p).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![(1, 10), (2, 20), (3, 30)]);
    }

    #[test]
    fn empty_map_migrates_only_the_root() {
        let mut p = hashmap_pool(&[]);
        let s = run_migration(&mut p, &manual_migrator(KernelKind::Hashmap, LayoutChange::Add)).unwrap();
        assert_eq!(s.records_migrated, 0);
        assert_eq!(s.bytes.user_bytes(crate::Attribution::Migration), 0);
        assert!(s.bytes.user_bytes(crate::Attribution::Structure) > 0);
    }

    #[test]
    fn version_gap_without_pass_is_reported() {
        let mut p = hashmap_pool(&[4]);
        let reg = MigrationRegistry::new();
        assert_eq!(reg.run(&mut p, 2).unwrap_err(), Error::MigrationMissing { from: 1, to: 2 });
        let policy = RetentionPolicy::manual("map", 3, MigrationRegistry::new()
            .with(manual_migrator(KernelKind::Hashmap, LayoutChange::Change))
            .unwrap());
        assert_eq!(apply(&mut p, &policy).unwrap_err(), Error::MigrationMissing { from: 2, to: 3 });
        // the whole chain is resolved before any pass runs
        assert_eq!(p.layout_version(), 1);
    }

    #[test]
    fn passes_chain_in_order() {
        let mut p = hashmap_pool(&[4, 5]);
        let reg = MigrationRegistry::new()
            .with(manual_migrator(KernelKind::Hashmap, LayoutChange::Change))
            .unwrap()
            .with(MigrationPass::new(2, 3, "noop", |_, root| Ok(root)).unwrap())
            .unwrap();
        let policy = RetentionPolicy::manual("map", 3, reg);
        let Verdict::Migrated(stats) = apply(&mut p, &policy).unwrap() else { panic!() };
        assert_eq!(stats.len(), 2);
        assert_eq!(p.layout_version(), 3);
        assert_eq!(apply(&mut p, &policy).unwrap(), Verdict::Current);
    }

    #[test]
    fn duplicate_or_backwards_passes_are_rejected() {
        assert!(MigrationPass::new(2, 2, "x", |_, r| Ok(r)).is_err());
        let mut reg = MigrationRegistry::new();
        reg.register(MigrationPass::new(1, 2, "a", |_, r| Ok(r)).unwrap()).unwrap();
        assert!(reg.register(MigrationPass::new(1, 3, "b", |_, r| Ok(r)).unwrap()).is_err());
    }

    #[test]
    fn failed_pass_leaves_version_and_data() {
        let mut p = hashmap_pool(&[7, 8]);
        let pass = MigrationPass::new(1, 2, "fails", |p, root| {
            let m = Map::open(p, KernelKind::Hashmap, EntryFormat::V1)?;
            m.migrate_to(p, EntryFormat::V2Add)?;
            let _ = root;
            Err(Error::InvalidArgument("boom"))
        })
        .unwrap();
        assert!(run_migration(&mut p, &pass).is_err());
        assert_eq!(p.layout_version(), 1);
        let m = Map::open(&mut p, KernelKind::Hashmap, EntryFormat::V1).unwrap();
        assert_eq!(m.validate(&mut p).unwrap(), 2);
    }

    #[test]
    fn reset_policy_flags_name_and_version_changes() {
        let mut p = pool("old");
        assert_eq!(apply(&mut p, &RetentionPolicy::reset("new", 1)).unwrap(), Verdict::ResetRequired);
        assert_eq!(apply(&mut p, &RetentionPolicy::reset("old", 2)).unwrap(), Verdict::ResetRequired);
        assert_eq!(apply(&mut p, &RetentionPolicy::reset("old", 1)).unwrap(), Verdict::Current);
    }

    #[test]
    fn manual_policy_rejects_other_layout_names() {
        let mut p = pool("old");
        let err = apply(&mut p, &RetentionPolicy::manual("new", 2, MigrationRegistry::new())).unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch { .. }));
    }

    #[test]
    fn automatic_policy_checks_base_fingerprint() {
        let mut p = pool("auto");
        let fp = entry_descriptor(None).fingerprint();
        assert_eq!(apply(&mut p, &RetentionPolicy::automatic("auto", 1, fp)).unwrap(), Verdict::Current);
        assert_eq!(p.schema_fingerprint(), fp);
        let changed = entry_descriptor(Some(LayoutChange::Change)).fingerprint();
        assert_eq!(changed, fp);
        assert_eq!(
            apply(&mut p, &RetentionPolicy::automatic("auto", 2, changed)).unwrap(),
            Verdict::Upgraded { from: 1 }
        );
        assert_eq!(p.layout_version(), 2);
        let err = apply(&mut p, &RetentionPolicy::automatic("auto", 2, fp ^ 1)).unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }));
    }

    #[test]
    fn newer_pool_is_refused() {
        let mut p = pool("v");
        p.set_layout_version(5).unwrap();
        assert!(apply(&mut p, &RetentionPolicy::manual("v", 2, MigrationRegistry::new())).is_err());
    }
}
