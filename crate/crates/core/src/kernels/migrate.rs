//! Manual-model conversion of a whole map to a new entry format.
//!
//! The pass runs inside the caller's transaction:
//!
//! 1. allocate one new node per old node and record the old→new mapping;
//! 2. write every new node once, converting entries and remapping links;
//! 3. rebuild auxiliary records (bucket arrays, sentinels) and free the old
//!    nodes;
//! 4. swap the root through a temporary holder: fill the temporary, obtain
//!    the (possibly grown) root, copy the temporary over it, free it.
//!
//! Node bytes are charged to [`Attribution::Migration`]; roots and
//! auxiliary records to [`Attribution::Structure`].

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{Entries, EntryFormat, Map, OFF_COUNT, ROOT_PREFIX};
use crate::{Attribution, Error, ObjectId, Pool, Result};

/// Old node offset to new node id.
#[derive(Debug, Default)]
pub struct Remap {
    map: BTreeMap<u64, ObjectId>,
}

impl Remap {
    pub fn insert(&mut self, old: ObjectId, new: ObjectId) {
        self.map.insert(old.offset, new);
    }

    /// Maps a link or slot. Null and inline values pass through.
    pub fn get(&self, old: ObjectId) -> Result<ObjectId> {
        if old.is_null() || old.as_inline_value().is_some() {
            return Ok(old);
        }
        self.map.get(&old.offset).copied().ok_or(Error::Corrupt("link to a node outside the map"))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Converts one entry image between formats, remapping its slot.
pub(crate) fn convert_entry(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
    let (key, slot_off) = match from.format {
        EntryFormat::V2Change => (u64::from_le_bytes(bytes[..8].try_into().expect("8")), 8),
        _ => (u64::from(u32::from_le_bytes(bytes[..4].try_into().expect("4"))), 4),
    };
    let slot = ObjectId::from_bytes(&bytes[slot_off..slot_off + 16]);
    to.encode(key, remap.get(slot)?)
}

pub(crate) fn run(pool: &mut Pool, m: &Map, target: EntryFormat) -> Result<Map> {
    if !pool.in_transaction() {
        return Err(Error::TxRequired);
    }
    if matches!(m.entries.format, EntryFormat::Extendible { .. }) || matches!(target, EntryFormat::Extendible { .. }) {
        return Err(Error::InvalidArgument("manual migration converts between plain formats"));
    }
    let to = Entries::new(target);
    let old_size = m.kind.node_size(m.entries.format);
    let new_size = m.kind.node_size(target);
    let nodes = m.nodes(pool)?;

    let mut remap = Remap::default();
    for old in &nodes {
        let new = pool.tx_alloc_uninit(new_size)?;
        remap.insert(*old, new);
    }
    pool.with_attribution(Attribution::Migration, |p| {
        for old in &nodes {
            let bytes = p.read_vec(*old, 0, old_size)?;
            let converted = Map::kernel_convert_node(m.kind, &bytes, &m.entries, &to, &remap)?;
            debug_assert_eq!(converted.len() as u64, new_size);
            p.write_bytes(remap.get(*old)?, 0, &converted)?;
            p.note_record_migrated();
        }
        Ok(())
    })?;

    pool.with_attribution(Attribution::Structure, |p| {
        let tail = m.kernel_convert_root(p, &to, &remap)?;
        for old in &nodes {
            p.tx_free(*old)?;
        }
        let size = Map::kernel_root_size(m.kind, &to);
        let count = p.read_u64(m.root, OFF_COUNT)?;
        let mut image = Vec::with_capacity(size as usize);
        image.extend_from_slice(&m.kind.code().to_le_bytes());
        image.extend_from_slice(&target.code().to_le_bytes());
        image.extend_from_slice(&count.to_le_bytes());
        image.extend_from_slice(&tail);
        debug_assert_eq!(image.len() as u64, size);
        debug_assert_eq!(tail.len() as u64, size - ROOT_PREFIX);

        let temp = p.tx_alloc(size)?;
        p.write_bytes(temp, 0, &image)?;
        let root = p.get_root(size)?;
        p.tx_copy_bytes(root, temp, size)?;
        p.tx_free(temp)?;
        Ok(Map { kind: m.kind, entries: to, root })
    })
}
