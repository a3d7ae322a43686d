//! Persistent ordered and hashed maps over the pool: a four-level skip
//! list, a crit-bit tree, an order-8 B-tree, a red-black tree and a
//! chained hash map.
//!
//! Every kernel stores its entries in one of the [`EntryFormat`]s and keeps
//! its anchor in the pool root:
//!
//! ```text
//! root: [kind u32 @0][format code u32 @4][count u64 @8][kernel fields @16..]
//! ```
//!
//! Kernel node layouts, with `E` the entry size:
//!
//! | kernel   | node                                                          |
//! |----------|---------------------------------------------------------------|
//! | skiplist | entry @0, next[4] @E                                          |
//! | ctree    | diff i32 @0, entries[2] @4 (slot = child node, value or null) |
//! | btree    | n i32 @0, items[8] @4, slots[8] @4+8E                         |
//! | rbtree   | entry @0, color u32 @E, parent @E+4, left @E+20, right @E+36  |
//! | hashmap  | entry @0, next @E                                             |

use alloc::vec::Vec;

use crate::leds::{CopyMode, Place};
use crate::{Attribution, Error, ObjectId, Pool, Result};

mod btree;
mod ctree;
pub mod entry;
mod hashmap;
mod migrate;
mod rbtree;
mod skiplist;

pub use entry::{entry_descriptor, Entries, EntryFormat, LayoutChange, NAME_LEN};
pub use migrate::Remap;

pub(crate) const OFF_KIND: u64 = 0;
pub(crate) const OFF_FORMAT: u64 = 4;
pub(crate) const OFF_COUNT: u64 = 8;
pub(crate) const ROOT_PREFIX: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    Skiplist,
    Ctree,
    Btree,
    Rbtree,
    Hashmap,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Skiplist,
        KernelKind::Ctree,
        KernelKind::Btree,
        KernelKind::Rbtree,
        KernelKind::Hashmap,
    ];

    pub fn code(self) -> u32 {
        self as u32 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Skiplist => "skiplist",
            KernelKind::Ctree => "ctree",
            KernelKind::Btree => "btree",
            KernelKind::Rbtree => "rbtree",
            KernelKind::Hashmap => "hashmap",
        }
    }

    pub fn from_name(name: &str) -> Option<KernelKind> {
        KernelKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Kernels that allocate exactly one node record per key.
    pub fn node_per_key(self) -> bool {
        matches!(self, KernelKind::Skiplist | KernelKind::Rbtree | KernelKind::Hashmap)
    }

    /// Size of one node record under `format`.
    pub fn node_size(self, format: EntryFormat) -> u64 {
        let e = format.size();
        match self {
            KernelKind::Skiplist => e + 4 * 16,
            KernelKind::Ctree => 4 + 2 * e,
            KernelKind::Btree => 4 + 8 * e + 8 * 16,
            KernelKind::Rbtree => e + 52,
            KernelKind::Hashmap => e + 16,
        }
    }
}

impl core::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-kernel operations. Insert and remove run inside the caller's
/// transaction and maintain the root count themselves.
pub(crate) trait Kernel {
    fn root_size(e: &Entries) -> u64;
    fn init(pool: &mut Pool, m: &Map) -> Result<()>;
    fn insert(pool: &mut Pool, m: &Map, key: u64, value: u64) -> Result<bool>;
    fn remove(pool: &mut Pool, m: &Map, key: u64) -> Result<bool>;
    fn lookup(pool: &mut Pool, m: &Map, key: u64) -> Result<Option<Place>>;
    /// Leaf entries, in key order for the ordered kernels.
    fn entries(pool: &mut Pool, m: &Map) -> Result<Vec<Place>>;
    /// Checks structural invariants; returns the number of entries.
    fn validate(pool: &mut Pool, m: &Map) -> Result<u64>;
    /// Every node record that a manual migration converts.
    fn nodes(pool: &mut Pool, m: &Map) -> Result<Vec<ObjectId>>;
    fn convert_node(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>>;
    /// Converts the kernel part of the root (bytes from `ROOT_PREFIX` on),
    /// re-creating auxiliary records such as bucket arrays or sentinels.
    fn convert_root(pool: &mut Pool, m: &Map, to: &Entries, remap: &Remap) -> Result<Vec<u8>>;
}

macro_rules! dispatch {
    ($kind:expr, $f:ident ( $($arg:expr),* )) => {
        match $kind {
            KernelKind::Skiplist => skiplist::Skiplist::$f($($arg),*),
            KernelKind::Ctree => ctree::Ctree::$f($($arg),*),
            KernelKind::Btree => btree::Btree::$f($($arg),*),
            KernelKind::Rbtree => rbtree::Rbtree::$f($($arg),*),
            KernelKind::Hashmap => hashmap::Hashmap::$f($($arg),*),
        }
    };
}

/// A map kernel living in a pool's root object.
#[derive(Clone, Debug)]
pub struct Map {
    pub kind: KernelKind,
    pub entries: Entries,
    pub root: ObjectId,
}

/// One entry as seen by the running program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EntryView {
    pub key: u64,
    pub value: u64,
    pub name: Option<[u8; NAME_LEN]>,
}

impl Map {
    /// Creates an empty map in the pool root.
    pub fn create(pool: &mut Pool, kind: KernelKind, format: EntryFormat) -> Result<Map> {
        let entries = Entries::new(format);
        let size = dispatch!(kind, root_size(&entries));
        pool.in_implicit_tx(|p| {
            let root = p.get_root(size)?;
            if p.read_u32(root, OFF_KIND)? != 0 {
                return Err(Error::InvalidArgument("pool already holds a map"));
            }
            let m = Map { kind, entries, root };
            p.with_attribution(Attribution::Structure, |p| {
                let mut prefix = [0u8; 8];
                prefix[..4].copy_from_slice(&kind.code().to_le_bytes());
                prefix[4..].copy_from_slice(&format.code().to_le_bytes());
                p.write_bytes(root, OFF_KIND, &prefix)?;
                dispatch!(kind, init(p, &m))
            })?;
            Ok(m)
        })
    }

    /// Attaches to the map in the pool root, checking kind and format.
    pub fn open(pool: &mut Pool, kind: KernelKind, format: EntryFormat) -> Result<Map> {
        let root = pool.root_id();
        if root.is_null() {
            return Err(Error::WrongKernel { expected: kind.code(), found: 0 });
        }
        let found = pool.read_u32(root, OFF_KIND)?;
        if found != kind.code() {
            return Err(Error::WrongKernel { expected: kind.code(), found });
        }
        let code = pool.read_u32(root, OFF_FORMAT)?;
        if code != format.code() {
            return Err(Error::InvalidArgument("map entry format differs from the requested one"));
        }
        Ok(Map { kind, entries: Entries::new(format), root })
    }

    /// Kind and format code stored in the pool root, if any.
    pub fn probe(pool: &mut Pool) -> Result<Option<(KernelKind, u32)>> {
        let root = pool.root_id();
        if root.is_null() {
            return Ok(None);
        }
        let code = pool.read_u32(root, OFF_KIND)?;
        let Some(kind) = KernelKind::ALL.into_iter().find(|k| k.code() == code) else {
            return Ok(None);
        };
        Ok(Some((kind, pool.read_u32(root, OFF_FORMAT)?)))
    }

    pub fn format(&self) -> EntryFormat {
        self.entries.format
    }

    pub fn set_copy_mode(&mut self, mode: CopyMode) {
        self.entries.copy_mode = mode;
    }

    /// See [`Entries::free_on_drop`].
    pub fn set_free_on_drop(&mut self, free: bool) {
        self.entries.free_on_drop = free;
    }

    pub fn len(&self, pool: &mut Pool) -> Result<u64> {
        pool.read_u64(self.root, OFF_COUNT)
    }

    pub fn is_empty(&self, pool: &mut Pool) -> Result<bool> {
        Ok(self.len(pool)? == 0)
    }

    pub(crate) fn bump_count(&self, pool: &mut Pool, up: bool) -> Result<()> {
        let n = pool.read_u64(self.root, OFF_COUNT)?;
        let n = if up { n + 1 } else { n.checked_sub(1).ok_or(Error::Corrupt("count underflow"))? };
        pool.write_u64(self.root, OFF_COUNT, n)
    }

    /// Inserts `key`; returns false without modification if present.
    pub fn insert(&self, pool: &mut Pool, key: u64, value: u64) -> Result<bool> {
        pool.in_implicit_tx(|p| dispatch!(self.kind, insert(p, self, key, value)))
    }

    pub fn remove(&self, pool: &mut Pool, key: u64) -> Result<bool> {
        pool.in_implicit_tx(|p| dispatch!(self.kind, remove(p, self, key)))
    }

    pub fn lookup(&self, pool: &mut Pool, key: u64) -> Result<Option<u64>> {
        match dispatch!(self.kind, lookup(pool, self, key))? {
            Some(at) => Ok(Some(self.entries.value(pool, at)?)),
            None => Ok(None),
        }
    }

    /// The name field of `key`'s entry (formats with a name only).
    pub fn name(&self, pool: &mut Pool, key: u64) -> Result<Option<[u8; NAME_LEN]>> {
        match dispatch!(self.kind, lookup(pool, self, key))? {
            Some(at) => self.entries.name(pool, at),
            None => Ok(None),
        }
    }

    pub fn entry_places(&self, pool: &mut Pool) -> Result<Vec<Place>> {
        dispatch!(self.kind, entries(pool, self))
    }

    /// Every entry, read through the running program's accessors (which
    /// may materialize extensions).
    pub fn scan(&self, pool: &mut Pool) -> Result<Vec<(u64, u64)>> {
        let places = self.entry_places(pool)?;
        places
            .into_iter()
            .map(|at| Ok((self.entries.key(pool, at)?, self.entries.value(pool, at)?)))
            .collect()
    }

    /// Like [`Map::scan`], including the name field.
    pub fn scan_full(&self, pool: &mut Pool) -> Result<Vec<EntryView>> {
        let places = self.entry_places(pool)?;
        places
            .into_iter()
            .map(|at| {
                Ok(EntryView {
                    key: self.entries.key(pool, at)?,
                    value: self.entries.value(pool, at)?,
                    name: self.entries.name(pool, at)?,
                })
            })
            .collect()
    }

    /// Checks structure invariants and the stored count.
    pub fn validate(&self, pool: &mut Pool) -> Result<u64> {
        let n = dispatch!(self.kind, validate(pool, self))?;
        if n != self.len(pool)? {
            return Err(Error::Corrupt("stored count differs from entry count"));
        }
        Ok(n)
    }

    pub fn nodes(&self, pool: &mut Pool) -> Result<Vec<ObjectId>> {
        dispatch!(self.kind, nodes(pool, self))
    }

    /// Extension records reachable from leaf entries, without
    /// materializing any.
    pub fn extension_count(&self, pool: &mut Pool) -> Result<u64> {
        let places = self.entry_places(pool)?;
        let mut n = 0;
        for at in places {
            n += self.entries.extension_count(pool, at)? as u64;
        }
        Ok(n)
    }

    /// Materializes the declared extensions of every entry.
    pub fn materialize_all(&self, pool: &mut Pool) -> Result<()> {
        let places = self.entry_places(pool)?;
        for at in places {
            self.entries.materialize(pool, at)?;
        }
        Ok(())
    }

    /// Rewrites every node into `target` inside the active transaction and
    /// returns the converted map. See [`migrate`].
    pub fn migrate_to(&self, pool: &mut Pool, target: EntryFormat) -> Result<Map> {
        migrate::run(pool, self, target)
    }

    pub(crate) fn kernel_convert_node(
        kind: KernelKind,
        bytes: &[u8],
        from: &Entries,
        to: &Entries,
        remap: &Remap,
    ) -> Result<Vec<u8>> {
        dispatch!(kind, convert_node(bytes, from, to, remap))
    }

    pub(crate) fn kernel_convert_root(&self, pool: &mut Pool, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        dispatch!(self.kind, convert_root(pool, self, to, remap))
    }

    pub(crate) fn kernel_root_size(kind: KernelKind, e: &Entries) -> u64 {
        dispatch!(kind, root_size(e))
    }
}

// ----- shared node helpers ---------------------------------------------------

pub(crate) fn place(oid: ObjectId, offset: u64) -> Place {
    Place::new(oid, offset)
}

/// Reads a link and treats null as absent.
pub(crate) fn link(pool: &mut Pool, oid: ObjectId, off: u64) -> Result<Option<ObjectId>> {
    let l = pool.read_oid(oid, off)?;
    Ok(if l.is_null() { None } else { Some(l) })
}

pub(crate) fn oid_at(bytes: &[u8], off: u64) -> ObjectId {
    ObjectId::from_bytes(&bytes[off as usize..off as usize + 16])
}

pub(crate) fn put_oid(bytes: &mut [u8], off: u64, oid: ObjectId) {
    bytes[off as usize..off as usize + 16].copy_from_slice(&oid.to_bytes());
}
