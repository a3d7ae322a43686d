//! Key/value entries as they are laid out inside kernel nodes.
//!
//! | format        | layout                                   | size |
//! |---------------|------------------------------------------|------|
//! | `V1`          | key u32 @0, slot @4                      | 20   |
//! | `V2Change`    | key u64 @0, slot @8                      | 24   |
//! | `V2Add`       | key u32 @0, slot @4, name [u8; 16] @20   | 36   |
//! | `Extendible`  | key u32 @0, slot @4, extension link @20  | 36   |
//!
//! A slot is an [`ObjectId`]: an inline value, a child node, or null.
//! Extendible entries carry the V1 fields as their base; the layout change
//! applied by the running program is an appended extension.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::leds::{Conversion, CopyMode, FieldInit, FieldLayout, InitRule, Place, TypeDescriptor};
use crate::{Error, ObjectId, Pool, Result};

pub const NAME_LEN: usize = 16;

/// The two studied schema edits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayoutChange {
    /// Widen the key from 32 to 64 bits.
    Change,
    /// Add a 16-byte name.
    Add,
}

/// Entry layout of a kernel instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryFormat {
    V1,
    V2Change,
    V2Add,
    /// V1 base with a trailing extension link; `change` is the extension the
    /// running program declares (none for the original program).
    Extendible { change: Option<LayoutChange> },
}

impl EntryFormat {
    /// Persistent variant code, stored in the map root.
    pub fn code(self) -> u32 {
        match self {
            EntryFormat::V1 => 1,
            EntryFormat::V2Change => 2,
            EntryFormat::V2Add => 3,
            EntryFormat::Extendible { .. } => 4,
        }
    }

    pub fn size(self) -> u64 {
        match self {
            EntryFormat::V1 => 20,
            EntryFormat::V2Change => 24,
            EntryFormat::V2Add | EntryFormat::Extendible { .. } => 36,
        }
    }

    fn key_width(self) -> u64 {
        if self == EntryFormat::V2Change {
            8
        } else {
            4
        }
    }

    fn slot_offset(self) -> u64 {
        self.key_width()
    }

    /// Manual-model target of a layout change.
    pub fn manual_target(change: LayoutChange) -> EntryFormat {
        match change {
            LayoutChange::Change => EntryFormat::V2Change,
            LayoutChange::Add => EntryFormat::V2Add,
        }
    }
}

/// Descriptor of extendible entries under `change`.
pub fn entry_descriptor(change: Option<LayoutChange>) -> TypeDescriptor {
    let base = TypeDescriptor::define(
        "map_entry",
        vec![FieldLayout::scalar("key", 0, 4), FieldLayout::object_id("value", 4)],
    )
    .expect("static layout");
    let ext = match change {
        None => return base,
        Some(LayoutChange::Change) => (
            FieldLayout::scalar("key64", 0, 8),
            FieldInit::Copy { from: String::from("key"), conversion: Conversion::ZeroExtend },
        ),
        Some(LayoutChange::Add) => (FieldLayout::bytes("name", 0, NAME_LEN as u64), FieldInit::Zero),
    };
    base.append_extension(vec![ext.0], InitRule::Fields(vec![ext.1])).expect("static layout")
}

/// Entry accessor bound to one format.
#[derive(Clone, Debug)]
pub struct Entries {
    pub format: EntryFormat,
    desc: Option<Arc<TypeDescriptor>>,
    pub copy_mode: CopyMode,
    /// When false, removed entries leave their extension records
    /// allocated. Only for differential cost measurements.
    pub free_on_drop: bool,
}

impl Entries {
    pub fn new(format: EntryFormat) -> Self {
        let desc = match format {
            EntryFormat::Extendible { change } => Some(Arc::new(entry_descriptor(change))),
            _ => None,
        };
        Entries { format, desc, copy_mode: CopyMode::Deep, free_on_drop: true }
    }

    pub fn size(&self) -> u64 {
        self.format.size()
    }

    pub fn descriptor(&self) -> Option<&TypeDescriptor> {
        self.desc.as_deref()
    }

    fn extended_desc(&self) -> Option<&TypeDescriptor> {
        self.desc.as_deref().filter(|d| d.max_level() > 0)
    }

    fn change(&self) -> Option<LayoutChange> {
        match self.format {
            EntryFormat::Extendible { change } => change,
            _ => None,
        }
    }

    /// The key as the running program sees it. Under an extendible key
    /// change this reads the widened key, materializing it on first use.
    pub fn key(&self, pool: &mut Pool, at: Place) -> Result<u64> {
        if self.change() == Some(LayoutChange::Change) {
            let desc = self.desc.as_deref().expect("extendible");
            let ext = pool.ensure_extension(at, desc, 1)?;
            return pool.read_u64(ext.oid, ext.offset);
        }
        self.base_key(pool, at)
    }

    /// The key field stored in the entry itself, never materializing.
    pub fn base_key(&self, pool: &mut Pool, at: Place) -> Result<u64> {
        if self.format.key_width() == 8 {
            pool.read_u64(at.oid, at.offset)
        } else {
            Ok(u64::from(pool.read_u32(at.oid, at.offset)?))
        }
    }

    pub fn slot(&self, pool: &mut Pool, at: Place) -> Result<ObjectId> {
        pool.read_oid(at.oid, at.offset + self.format.slot_offset())
    }

    pub fn value(&self, pool: &mut Pool, at: Place) -> Result<u64> {
        self.slot(pool, at)?
            .as_inline_value()
            .ok_or(Error::Corrupt("entry slot does not hold a value"))
    }

    pub fn set_slot(&self, pool: &mut Pool, at: Place, slot: ObjectId) -> Result<()> {
        pool.write_oid(at.oid, at.offset + self.format.slot_offset(), slot)
    }

    /// The name field, for formats that have one. Extendible entries
    /// materialize it.
    pub fn name(&self, pool: &mut Pool, at: Place) -> Result<Option<[u8; NAME_LEN]>> {
        let mut out = [0u8; NAME_LEN];
        match self.format {
            EntryFormat::V2Add => pool.read_bytes(at.oid, at.offset + 20, &mut out)?,
            EntryFormat::Extendible { change: Some(LayoutChange::Add) } => {
                let desc = self.desc.as_deref().expect("extendible");
                let ext = pool.ensure_extension(at, desc, 1)?;
                pool.read_bytes(ext.oid, ext.offset, &mut out)?;
            }
            _ => return Ok(None),
        }
        Ok(Some(out))
    }

    /// Encodes a fresh entry without extension.
    pub fn encode(&self, key: u64, slot: ObjectId) -> Result<Vec<u8>> {
        self.encode_as(self.format, key, slot)
    }

    pub(crate) fn encode_as(&self, format: EntryFormat, key: u64, slot: ObjectId) -> Result<Vec<u8>> {
        let mut out = vec![0u8; format.size() as usize];
        if format.key_width() == 8 {
            out[..8].copy_from_slice(&key.to_le_bytes());
        } else {
            let k = u32::try_from(key).map_err(|_| Error::InvalidArgument("key exceeds 32 bits"))?;
            out[..4].copy_from_slice(&k.to_le_bytes());
        }
        let s = format.slot_offset() as usize;
        out[s..s + 16].copy_from_slice(&slot.to_bytes());
        Ok(out)
    }

    /// Writes a new entry at `at`. Leaf entries written under an extendible
    /// key change get their widened key attached immediately.
    pub fn write_new(&self, pool: &mut Pool, at: Place, key: u64, slot: ObjectId, leaf: bool) -> Result<()> {
        if leaf && self.change() == Some(LayoutChange::Change) {
            let desc = self.desc.as_deref().expect("extendible");
            let ext = pool.tx_alloc(desc.extension(1)?.record_size())?;
            pool.write_bytes(ext, 0, &key.to_le_bytes())?;
            pool.note_extension_allocated();
            let mut bytes = self.encode(key & u64::from(u32::MAX), slot)?;
            bytes[20..36].copy_from_slice(&ext.to_bytes());
            return pool.write_bytes(at.oid, at.offset, &bytes);
        }
        let bytes = self.encode(key, slot)?;
        pool.write_bytes(at.oid, at.offset, &bytes)
    }

    /// Relocates `count` consecutive entries; extension links travel with
    /// the bytes.
    pub fn move_entries(&self, pool: &mut Pool, src: Place, dst: Place, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let bytes = pool.read_vec(src.oid, src.offset, count * self.size())?;
        pool.write_bytes(dst.oid, dst.offset, &bytes)
    }

    /// Copies an entry through a temporary. Extendible entries are deep or
    /// shallow copied per `copy_mode`; the caller then clears the source
    /// and calls [`Entries::release_copied`] on it.
    pub fn copy_through_temp(&self, pool: &mut Pool, src: Place, dst: Place) -> Result<()> {
        match self.extended_desc() {
            Some(desc) => pool.copy_extendible_into(src, dst, desc, self.copy_mode),
            None => self.move_entries(pool, src, dst, 1),
        }
    }

    /// Releases what a cleared copy source still owns: its extension chain
    /// after a deep copy.
    pub fn release_copied(&self, pool: &mut Pool, src: Place) -> Result<()> {
        match (self.extended_desc(), self.copy_mode) {
            (Some(desc), CopyMode::Deep) => pool.free_extensions(src, desc).map(drop),
            _ => Ok(()),
        }
    }

    /// Frees everything an entry owns besides its own bytes.
    pub fn drop_entry(&self, pool: &mut Pool, at: Place) -> Result<()> {
        match self.extended_desc() {
            Some(desc) if self.free_on_drop => pool.free_extensions(at, desc).map(drop),
            _ => Ok(()),
        }
    }

    /// Extensions hanging off an entry, without materializing.
    pub fn extension_count(&self, pool: &mut Pool, at: Place) -> Result<usize> {
        match self.descriptor() {
            Some(desc) => Ok(pool.extension_chain(at, desc)?.len()),
            None => Ok(0),
        }
    }

    /// Materializes every declared extension of a leaf entry.
    pub fn materialize(&self, pool: &mut Pool, at: Place) -> Result<()> {
        if let Some(desc) = self.extended_desc() {
            pool.ensure_extension(at, desc, desc.max_level())?;
        }
        Ok(())
    }
}

impl Pool {
    pub(crate) fn note_extension_allocated(&mut self) {
        self.stats.extensions_allocated += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::FormatOptions;
    use crate::Attribution;
    use alloc::boxed::Box;

    fn pool() -> Pool {
        Pool::format(Box::new(vec![0u8; 1 << 20]), FormatOptions::new("e", 5)).unwrap()
    }

    #[test]
    fn sizes_match_formats() {
        assert_eq!(EntryFormat::V1.size(), 20);
        assert_eq!(EntryFormat::V2Change.size(), 24);
        assert_eq!(EntryFormat::V2Add.size(), 36);
        let d = entry_descriptor(Some(LayoutChange::Change));
        assert_eq!(d.base_size(), 36);
        assert_eq!(d.extension(1).unwrap().record_size(), 24);
        assert_eq!(d.fingerprint(), entry_descriptor(None).fingerprint());
        assert_eq!(d.fingerprint(), entry_descriptor(Some(LayoutChange::Add)).fingerprint());
    }

    #[test]
    fn change_extension_widens_old_key() {
        let mut p = pool();
        let old = Entries::new(EntryFormat::Extendible { change: None });
        let new = Entries::new(EntryFormat::Extendible { change: Some(LayoutChange::Change) });
        let o = p.raw_alloc(48, true).unwrap();
        p.transact(|p| old.write_new(p, o.into(), 0xdead_beef, ObjectId::inline_value(3), true)).unwrap();
        assert_eq!(old.key(&mut p, o.into()).unwrap(), 0xdead_beef);
        let before = p.stats();
        assert_eq!(new.key(&mut p, o.into()).unwrap(), 0xdead_beef);
        let d = p.stats().delta(&before);
        assert_eq!(d.records_migrated, 1);
        assert_eq!(d.user_bytes(Attribution::Migration), 40);
        assert_eq!(new.value(&mut p, o.into()).unwrap(), 3);
    }

    #[test]
    fn add_extension_leaves_keys_alone() {
        let mut p = pool();
        let old = Entries::new(EntryFormat::Extendible { change: None });
        let new = Entries::new(EntryFormat::Extendible { change: Some(LayoutChange::Add) });
        let o = p.raw_alloc(48, true).unwrap();
        p.transact(|p| old.write_new(p, o.into(), 11, ObjectId::inline_value(3), true)).unwrap();
        let before = p.stats();
        assert_eq!(new.key(&mut p, o.into()).unwrap(), 11);
        assert_eq!(p.stats().delta(&before).extensions_allocated, 0);
        assert_eq!(new.name(&mut p, o.into()).unwrap(), Some([0u8; 16]));
        assert_eq!(p.stats().delta(&before).extensions_allocated, 1);
    }

    #[test]
    fn v1_rejects_wide_keys() {
        let e = Entries::new(EntryFormat::V1);
        assert!(e.encode(1 << 40, ObjectId::NULL).is_err());
        assert!(Entries::new(EntryFormat::V2Change).encode(1 << 40, ObjectId::NULL).is_ok());
    }
}
