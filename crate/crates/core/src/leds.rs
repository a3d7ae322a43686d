//! Lazily extendible records.
//!
//! An extendible record is a base payload followed by a 16-byte link. The
//! link is null until a field of the first extension is touched; then an
//! extension record (that extension's payload plus its own trailing link) is
//! allocated in the same pool, filled by the extension's init rule and
//! linked in. Further extensions chain the same way, so non-null links
//! always form a prefix of the declared levels.
//!
//! Records may be standalone objects or embedded at an offset inside a
//! larger object (see [`Place`]).

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::layout::align_up;
use crate::{Attribution, Error, ObjectId, Pool, Result};

pub const LINK_SIZE: u64 = ObjectId::SIZE as u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Scalar,
    ObjectId,
    Bytes,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FieldLayout {
    pub name: String,
    pub offset: u64,
    pub size: u64,
    pub kind: FieldKind,
}

impl FieldLayout {
    pub fn new(name: &str, offset: u64, size: u64, kind: FieldKind) -> Self {
        FieldLayout { name: String::from(name), offset, size, kind }
    }

    pub fn scalar(name: &str, offset: u64, size: u64) -> Self {
        Self::new(name, offset, size, FieldKind::Scalar)
    }

    pub fn object_id(name: &str, offset: u64) -> Self {
        Self::new(name, offset, LINK_SIZE, FieldKind::ObjectId)
    }

    pub fn bytes(name: &str, offset: u64, size: u64) -> Self {
        Self::new(name, offset, size, FieldKind::Bytes)
    }

    fn end(&self) -> u64 {
        self.offset + self.size
    }
}

/// How a copied field is widened or narrowed into its new slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conversion {
    /// Byte copy; a wider target is zero-filled.
    Raw,
    ZeroExtend,
    SignExtend,
    /// Signed integer to IEEE float (4- or 8-byte target).
    IntToFloat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FieldInit {
    Zero,
    /// Copy the named field of the base record or a lower extension.
    Copy { from: String, conversion: Conversion },
}

/// Read-only view handed to init rules: the base payload and the payloads of
/// every lower extension.
pub struct InitView<'a> {
    desc: &'a TypeDescriptor,
    records: &'a [Vec<u8>],
}

impl InitView<'_> {
    pub fn field(&self, name: &str) -> Option<&[u8]> {
        let (level, f) = self.desc.locate(name)?;
        let rec = self.records.get(level as usize)?;
        Some(&rec[f.offset as usize..f.end() as usize])
    }

    pub fn base(&self) -> &[u8] {
        &self.records[0]
    }
}

pub type InitFn = dyn Fn(&InitView<'_>) -> Vec<u8> + Send + Sync;

#[derive(Clone)]
pub enum InitRule {
    /// One initializer per payload field, in declaration order. Bytes not
    /// covered by any field start zeroed.
    Fields(Vec<FieldInit>),
    /// Produces the whole payload.
    Custom(Arc<InitFn>),
}

impl fmt::Debug for InitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitRule::Fields(v) => f.debug_tuple("Fields").field(v).finish(),
            InitRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtensionDescriptor {
    pub level: u32,
    pub payload_fields: Vec<FieldLayout>,
    pub payload_size: u64,
    pub init: InitRule,
}

impl ExtensionDescriptor {
    /// Offset of this record's trailing link.
    pub fn link_offset(&self) -> u64 {
        self.payload_size
    }

    pub fn record_size(&self) -> u64 {
        self.payload_size + LINK_SIZE
    }
}

#[derive(Clone, Debug)]
pub struct TypeDescriptor {
    pub name: String,
    pub base_fields: Vec<FieldLayout>,
    pub base_payload_size: u64,
    pub extensions: Vec<ExtensionDescriptor>,
    fingerprint: u64,
}

fn check_fields(fields: &[FieldLayout]) -> Result<u64> {
    let mut sorted: Vec<&FieldLayout> = fields.iter().collect();
    sorted.sort_by_key(|f| f.offset);
    for w in sorted.windows(2) {
        if w[0].end() > w[1].offset {
            return Err(Error::OverlappingFields {
                first: w[0].name.clone(),
                second: w[1].name.clone(),
            });
        }
    }
    for (i, f) in fields.iter().enumerate() {
        if f.size == 0 || fields[..i].iter().any(|g| g.name == f.name) {
            return Err(Error::InvalidArgument("field names must be unique and sizes positive"));
        }
    }
    Ok(fields.iter().map(FieldLayout::end).max().unwrap_or(0))
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *hash ^= u64::from(*b);
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

/// Hash of a base field list; extensions never contribute.
pub fn fingerprint_of(fields: &[FieldLayout]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for f in fields {
        fnv1a(&mut h, f.name.as_bytes());
        fnv1a(&mut h, &[0]);
        fnv1a(&mut h, &f.offset.to_le_bytes());
        fnv1a(&mut h, &f.size.to_le_bytes());
        fnv1a(&mut h, &[f.kind as u8]);
    }
    h
}

impl TypeDescriptor {
    /// Declares a base record. Its payload ends at the furthest field end and
    /// is followed by the extension link.
    pub fn define(name: &str, base_fields: Vec<FieldLayout>) -> Result<TypeDescriptor> {
        let base_payload_size = check_fields(&base_fields)?;
        if base_payload_size == 0 {
            return Err(Error::EmptyExtension);
        }
        let fingerprint = fingerprint_of(&base_fields);
        Ok(TypeDescriptor {
            name: String::from(name),
            base_fields,
            base_payload_size,
            extensions: Vec::new(),
            fingerprint,
        })
    }

    /// Appends the next extension level.
    pub fn append_extension(self, payload_fields: Vec<FieldLayout>, init: InitRule) -> Result<Self> {
        let level = self.max_level() + 1;
        self.append_extension_at(level, payload_fields, init)
    }

    pub fn append_extension_at(
        mut self,
        level: u32,
        payload_fields: Vec<FieldLayout>,
        init: InitRule,
    ) -> Result<Self> {
        let expected = self.max_level() + 1;
        if level != expected {
            return Err(Error::NonContiguousLevel { expected, got: level });
        }
        let payload_size = check_fields(&payload_fields)?;
        if payload_size == 0 {
            return Err(Error::EmptyExtension);
        }
        for f in &payload_fields {
            if self.locate(&f.name).is_some() {
                return Err(Error::InvalidArgument("extension field shadows an existing field"));
            }
        }
        if let InitRule::Fields(inits) = &init {
            if inits.len() != payload_fields.len() {
                return Err(Error::InvalidArgument("one initializer per payload field"));
            }
            for i in inits {
                if let FieldInit::Copy { from, .. } = i {
                    if self.locate(from).is_none() {
                        return Err(Error::NoSuchField(from.clone()));
                    }
                }
            }
        }
        self.extensions.push(ExtensionDescriptor { level, payload_fields, payload_size, init });
        Ok(self)
    }

    pub fn max_level(&self) -> u32 {
        self.extensions.len() as u32
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn link_offset(&self) -> u64 {
        self.base_payload_size
    }

    /// Base payload plus link.
    pub fn base_size(&self) -> u64 {
        self.base_payload_size + LINK_SIZE
    }

    /// Allocation size of a standalone base record.
    pub fn alloc_size(&self) -> u64 {
        align_up(self.base_size())
    }

    pub fn extension(&self, level: u32) -> Result<&ExtensionDescriptor> {
        if level == 0 {
            return Err(Error::UnknownLevel(0));
        }
        self.extensions.get(level as usize - 1).ok_or(Error::UnknownLevel(level))
    }

    /// Finds a field by name: level 0 is the base record.
    pub fn locate(&self, name: &str) -> Option<(u32, &FieldLayout)> {
        if let Some(f) = self.base_fields.iter().find(|f| f.name == name) {
            return Some((0, f));
        }
        self.extensions
            .iter()
            .find_map(|e| e.payload_fields.iter().find(|f| f.name == name).map(|f| (e.level, f)))
    }

    fn link_offset_of(&self, level: u32) -> u64 {
        if level == 0 {
            self.base_payload_size
        } else {
            self.extensions[level as usize - 1].payload_size
        }
    }

    fn payload_size_of(&self, level: u32) -> u64 {
        self.link_offset_of(level)
    }

    fn run_init(&self, level: u32, lower: &[Vec<u8>]) -> Result<Vec<u8>> {
        let ext = self.extension(level)?;
        let view = InitView { desc: self, records: lower };
        match &ext.init {
            InitRule::Custom(f) => {
                let out = f(&view);
                if out.len() as u64 != ext.payload_size {
                    return Err(Error::InvalidArgument("init rule returned wrong payload size"));
                }
                Ok(out)
            }
            InitRule::Fields(inits) => {
                let mut out = vec![0u8; ext.payload_size as usize];
                for (field, init) in ext.payload_fields.iter().zip(inits) {
                    if let FieldInit::Copy { from, conversion } = init {
                        let src = view.field(from).ok_or_else(|| Error::NoSuchField(from.clone()))?;
                        let dst = &mut out[field.offset as usize..field.end() as usize];
                        convert(src, dst, *conversion)?;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn signed(src: &[u8]) -> Result<i64> {
    Ok(match src.len() {
        1 => i64::from(src[0] as i8),
        2 => i64::from(i16::from_le_bytes([src[0], src[1]])),
        4 => i64::from(i32::from_le_bytes([src[0], src[1], src[2], src[3]])),
        8 => i64::from_le_bytes(src.try_into().expect("len 8")),
        _ => return Err(Error::InvalidArgument("integer fields are 1, 2, 4 or 8 bytes")),
    })
}

fn convert(src: &[u8], dst: &mut [u8], conversion: Conversion) -> Result<()> {
    let n = src.len().min(dst.len());
    match conversion {
        Conversion::Raw | Conversion::ZeroExtend => dst[..n].copy_from_slice(&src[..n]),
        Conversion::SignExtend => {
            let fill = if src.last().is_some_and(|b| b & 0x80 != 0) { 0xff } else { 0 };
            dst.fill(fill);
            dst[..n].copy_from_slice(&src[..n]);
        }
        Conversion::IntToFloat => {
            let v = signed(src)?;
            match dst.len() {
                8 => dst.copy_from_slice(&(v as f64).to_le_bytes()),
                4 => dst.copy_from_slice(&(v as f32).to_le_bytes()),
                _ => return Err(Error::InvalidArgument("float fields are 4 or 8 bytes")),
            }
        }
    }
    Ok(())
}

/// Location of an extendible record: a standalone object (`offset` 0) or an
/// entry embedded inside a larger object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Place {
    pub oid: ObjectId,
    pub offset: u64,
}

impl Place {
    pub const fn new(oid: ObjectId, offset: u64) -> Self {
        Place { oid, offset }
    }
}

impl From<ObjectId> for Place {
    fn from(oid: ObjectId) -> Self {
        Place { oid, offset: 0 }
    }
}

/// Whether entry copies clone the extension chain or share it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CopyMode {
    #[default]
    Deep,
    Shallow,
}

impl Pool {
    /// The record at `level` (0 = the base place itself), materializing
    /// every missing level on the way. One check is counted per level
    /// traversed.
    pub fn ensure_extension(
        &mut self,
        place: impl Into<Place>,
        desc: &TypeDescriptor,
        level: u32,
    ) -> Result<Place> {
        let base = place.into();
        if level > desc.max_level() {
            return Err(Error::UnknownLevel(level));
        }
        let mut cur = base;
        for lvl in 1..=level {
            self.stats.checks += 1;
            let link_at = cur.offset + desc.link_offset_of(lvl - 1);
            let mut next = self.read_oid(cur.oid, link_at)?;
            if next.is_null() {
                next = self.in_implicit_tx(|p| p.materialize(base, desc, lvl, cur, link_at))?;
            }
            cur = Place::from(next);
        }
        Ok(cur)
    }

    fn materialize(
        &mut self,
        base: Place,
        desc: &TypeDescriptor,
        level: u32,
        pred: Place,
        link_at: u64,
    ) -> Result<ObjectId> {
        let lower = self.chain_payloads(base, desc, level - 1)?;
        let payload = desc.run_init(level, &lower)?;
        let ext = desc.extension(level)?;
        self.with_attribution(Attribution::Migration, |p| {
            let oid = p.tx_alloc(ext.record_size())?;
            let mut record = payload;
            record.resize(ext.record_size() as usize, 0);
            p.write_bytes(oid, 0, &record)?;
            p.write_oid(pred.oid, link_at, oid)?;
            p.stats.extensions_allocated += 1;
            p.stats.records_migrated += 1;
            Ok(oid)
        })
    }

    /// Payloads of the base and the first `upto` extensions, which must exist.
    fn chain_payloads(&mut self, base: Place, desc: &TypeDescriptor, upto: u32) -> Result<Vec<Vec<u8>>> {
        let mut out = Vec::with_capacity(upto as usize + 1);
        let mut cur = base;
        for lvl in 0..=upto {
            let size = desc.payload_size_of(lvl);
            out.push(self.read_vec(cur.oid, cur.offset, size)?);
            if lvl < upto {
                let next = self.read_oid(cur.oid, cur.offset + size)?;
                if next.is_null() {
                    return Err(Error::Corrupt("gap in extension chain"));
                }
                cur = Place::from(next);
            }
        }
        Ok(out)
    }

    /// Non-null extension records, level 1 first. Counts no checks.
    pub fn extension_chain(&mut self, place: impl Into<Place>, desc: &TypeDescriptor) -> Result<Vec<ObjectId>> {
        let mut cur = place.into();
        let mut out = Vec::new();
        for lvl in 0..desc.max_level() {
            let next = self.read_oid(cur.oid, cur.offset + desc.link_offset_of(lvl))?;
            if next.is_null() {
                break;
            }
            out.push(next);
            cur = Place::from(next);
        }
        Ok(out)
    }

    fn field_place(&mut self, place: Place, desc: &TypeDescriptor, name: &str) -> Result<(Place, FieldLayout)> {
        let (level, f) = desc.locate(name).ok_or_else(|| Error::NoSuchField(String::from(name)))?;
        let f = f.clone();
        let rec = if level == 0 { place } else { self.ensure_extension(place, desc, level)? };
        Ok((rec, f))
    }

    /// Reads a field by name. Extension fields are materialized first, in
    /// an implicit transaction if none is active.
    pub fn read_field(&mut self, place: impl Into<Place>, desc: &TypeDescriptor, name: &str) -> Result<Vec<u8>> {
        let (rec, f) = self.field_place(place.into(), desc, name)?;
        self.read_vec(rec.oid, rec.offset + f.offset, f.size)
    }

    /// A scalar field of up to 8 bytes, zero-extended.
    pub fn read_field_u64(&mut self, place: impl Into<Place>, desc: &TypeDescriptor, name: &str) -> Result<u64> {
        let raw = self.read_field(place, desc, name)?;
        if raw.len() > 8 {
            return Err(Error::InvalidArgument("field wider than 8 bytes"));
        }
        let mut b = [0u8; 8];
        b[..raw.len()].copy_from_slice(&raw);
        Ok(u64::from_le_bytes(b))
    }

    /// Writes a field by name; requires an active transaction. Shorter
    /// values are zero-padded to the field size.
    pub fn write_field(
        &mut self,
        place: impl Into<Place>,
        desc: &TypeDescriptor,
        name: &str,
        value: &[u8],
    ) -> Result<()> {
        if !self.in_transaction() {
            self.ensure_live()?;
            return Err(Error::TxRequired);
        }
        let (rec, f) = self.field_place(place.into(), desc, name)?;
        if value.len() as u64 > f.size {
            return Err(Error::InvalidArgument("value wider than field"));
        }
        let mut buf = vec![0u8; f.size as usize];
        buf[..value.len()].copy_from_slice(value);
        self.write_bytes(rec.oid, rec.offset + f.offset, &buf)
    }

    /// Copies the extendible record at `src` over the one at `dst` (base
    /// payload and link). In deep mode the source's extension chain is
    /// cloned and the copy links the clones; in shallow mode both share it.
    pub fn copy_extendible_into(
        &mut self,
        src: Place,
        dst: Place,
        desc: &TypeDescriptor,
        mode: CopyMode,
    ) -> Result<()> {
        let mut bytes = self.read_vec(src.oid, src.offset, desc.base_size())?;
        if mode == CopyMode::Deep {
            let head = self.clone_chain(src, desc)?;
            let link = desc.link_offset() as usize;
            bytes[link..link + LINK_SIZE as usize].copy_from_slice(&head.to_bytes());
        }
        self.write_bytes(dst.oid, dst.offset, &bytes)
    }

    /// Clones every extension record reachable from `src`, tail first, and
    /// returns the clone of level 1 (null when unextended).
    pub(crate) fn clone_chain(&mut self, src: Place, desc: &TypeDescriptor) -> Result<ObjectId> {
        let chain = self.extension_chain(src, desc)?;
        if chain.is_empty() {
            return Ok(ObjectId::NULL);
        }
        self.with_attribution(Attribution::DeepCopy, |p| {
            let mut next = ObjectId::NULL;
            for (i, ext) in chain.iter().enumerate().rev() {
                let ed = &desc.extensions[i];
                let mut rec = p.read_vec(*ext, 0, ed.payload_size)?;
                rec.extend_from_slice(&next.to_bytes());
                let copy = p.tx_alloc(ed.record_size())?;
                p.write_bytes(copy, 0, &rec)?;
                p.stats.deep_copies += 1;
                next = copy;
            }
            Ok(next)
        })
    }

    /// Allocates a standalone copy of the record at `src`.
    pub fn deep_copy(&mut self, src: impl Into<Place>, desc: &TypeDescriptor, mode: CopyMode) -> Result<ObjectId> {
        let src = src.into();
        let dst = self.tx_alloc(desc.alloc_size())?;
        self.copy_extendible_into(src, Place::from(dst), desc, mode)?;
        Ok(dst)
    }

    /// Frees the extension chain hanging off `place` but not the place
    /// itself. The caller clears or frees the record holding the link.
    pub fn free_extensions(&mut self, place: impl Into<Place>, desc: &TypeDescriptor) -> Result<usize> {
        let chain = self.extension_chain(place, desc)?;
        for ext in &chain {
            self.tx_free(*ext)?;
        }
        Ok(chain.len())
    }

    /// Frees a standalone extendible object and its whole chain.
    pub fn free_extendible(&mut self, oid: ObjectId, desc: &TypeDescriptor) -> Result<()> {
        self.check_allocated(oid)?;
        self.free_extensions(oid, desc)?;
        self.tx_free(oid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::FormatOptions;
    use alloc::boxed::Box;

    fn pool() -> Pool {
        Pool::format(Box::new(vec![0u8; 1 << 20]), FormatOptions::new("leds", 3)).unwrap()
    }

    fn ll() -> TypeDescriptor {
        TypeDescriptor::define(
            "LL",
            vec![FieldLayout::scalar("val", 0, 4), FieldLayout::object_id("next", 4)],
        )
        .unwrap()
    }

    fn ll_ext() -> TypeDescriptor {
        ll().append_extension(
            vec![FieldLayout::scalar("val_fl", 0, 8)],
            InitRule::Fields(vec![FieldInit::Copy {
                from: String::from("val"),
                conversion: Conversion::IntToFloat,
            }]),
        )
        .unwrap()
    }

    fn new_ll(p: &mut Pool, d: &TypeDescriptor, val: i32) -> ObjectId {
        p.transact(|p| {
            let o = p.tx_alloc(d.alloc_size())?;
            p.write_field(o, d, "val", &val.to_le_bytes())?;
            Ok(o)
        })
        .unwrap()
    }

    #[test]
    fn base_layout_sizes() {
        let d = ll();
        assert_eq!(d.base_size(), 36);
        assert_eq!(d.alloc_size(), 48);
        assert_eq!(d.link_offset(), 20);
        let e = ll_ext();
        assert_eq!(e.extension(1).unwrap().record_size(), 24);
        assert_eq!(e.fingerprint(), d.fingerprint());
    }

    #[test]
    fn overlapping_and_non_contiguous_are_rejected() {
        let err = TypeDescriptor::define(
            "x",
            vec![FieldLayout::scalar("a", 0, 8), FieldLayout::scalar("b", 4, 4)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::OverlappingFields { .. }));
        let err = ll()
            .append_extension_at(3, vec![FieldLayout::scalar("z", 0, 8)], InitRule::Fields(vec![FieldInit::Zero]))
            .unwrap_err();
        assert_eq!(err, Error::NonContiguousLevel { expected: 1, got: 3 });
        let err = ll().append_extension(vec![], InitRule::Fields(vec![])).unwrap_err();
        assert_eq!(err, Error::EmptyExtension);
    }

    #[test]
    fn first_extension_costs_forty_user_bytes() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, 7);
        let before = p.stats();
        p.tx_begin().unwrap();
        p.ensure_extension(o, &d, 1).unwrap();
        p.tx_commit().unwrap();
        let delta = p.stats().delta(&before);
        assert_eq!(delta.bytes_user, 40);
        assert_eq!(delta.user_bytes(Attribution::Migration), 40);
        assert_eq!(delta.extensions_allocated, 1);
        assert_eq!(delta.allocations, 1);
    }

    #[test]
    fn init_converts_int_to_float_and_is_idempotent() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, 7);
        let raw = p.read_field(o, &d, "val_fl").unwrap();
        assert_eq!(f64::from_le_bytes(raw.try_into().unwrap()), 7.0);
        let ext = p.extension_chain(o, &d).unwrap();
        let before = p.stats();
        for _ in 0..1000 {
            p.read_field(o, &d, "val_fl").unwrap();
        }
        let delta = p.stats().delta(&before);
        assert_eq!(delta.allocations, 0);
        assert_eq!(delta.checks, 1000);
        assert_eq!(p.extension_chain(o, &d).unwrap(), ext);
    }

    #[test]
    fn base_reads_do_not_extend() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, -3);
        let before = p.stats();
        assert_eq!(p.read_field_u64(o, &d, "val").unwrap(), (-3i32) as u32 as u64);
        assert_eq!(p.stats().delta(&before).allocations, 0);
        assert!(p.extension_chain(o, &d).unwrap().is_empty());
    }

    #[test]
    fn two_levels_chain_in_order() {
        let mut p = pool();
        let d = ll_ext()
            .append_extension(
                vec![FieldLayout::scalar("wide", 0, 8)],
                InitRule::Fields(vec![FieldInit::Copy {
                    from: String::from("val"),
                    conversion: Conversion::SignExtend,
                }]),
            )
            .unwrap();
        let o = new_ll(&mut p, &d, -5);
        let before = p.stats();
        let got = p.read_field_u64(o, &d, "wide").unwrap();
        assert_eq!(got as i64, -5);
        assert_eq!(p.stats().delta(&before).extensions_allocated, 2);
        assert_eq!(p.extension_chain(o, &d).unwrap().len(), 2);
    }

    #[test]
    fn writes_outside_tx_are_rejected() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, 1);
        assert_eq!(p.write_field(o, &d, "val_fl", &[0; 8]).unwrap_err(), Error::TxRequired);
        assert!(matches!(p.read_field(o, &d, "nope"), Err(Error::NoSuchField(_))));
    }

    #[test]
    fn deep_copy_clones_and_shallow_shares() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, 9);
        p.read_field(o, &d, "val_fl").unwrap();
        let before = p.stats();
        let (deep, shallow) = p
            .transact(|p| Ok((p.deep_copy(o, &d, CopyMode::Deep)?, p.deep_copy(o, &d, CopyMode::Shallow)?)))
            .unwrap();
        assert_eq!(p.stats().delta(&before).allocations, 3);
        let orig_chain = p.extension_chain(o, &d).unwrap();
        assert_ne!(p.extension_chain(deep, &d).unwrap(), orig_chain);
        assert_eq!(p.extension_chain(shallow, &d).unwrap(), orig_chain);
        p.transact(|p| p.write_field(deep, &d, "val_fl", &1.5f64.to_le_bytes())).unwrap();
        let orig = p.read_field(o, &d, "val_fl").unwrap();
        assert_eq!(f64::from_le_bytes(orig.try_into().unwrap()), 9.0);
    }

    #[test]
    fn free_extendible_releases_chain() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, 9);
        p.read_field(o, &d, "val_fl").unwrap();
        let live = p.live_bytes();
        p.transact(|p| p.free_extendible(o, &d)).unwrap();
        assert_eq!(live - p.live_bytes(), 48 + 32);
        let err = p.transact(|p| p.free_extendible(o, &d)).unwrap_err();
        assert!(matches!(err, Error::DoubleFree { .. }));
    }

    #[test]
    fn custom_init_sees_lower_levels() {
        let d = ll()
            .append_extension(
                vec![FieldLayout::scalar("twice", 0, 8)],
                InitRule::Custom(Arc::new(|v: &InitView<'_>| {
                    let val = i32::from_le_bytes(v.field("val").unwrap().try_into().unwrap());
                    (i64::from(val) * 2).to_le_bytes().to_vec()
                })),
            )
            .unwrap();
        let mut p = pool();
        let o = new_ll(&mut p, &d, 21);
        assert_eq!(p.read_field_u64(o, &d, "twice").unwrap(), 42);
    }

    #[test]
    fn cached_translation_counts_misses_only() {
        let mut p = pool();
        let d = ll_ext();
        let o = new_ll(&mut p, &d, 1);
        p.set_translation_mode(crate::TranslationMode::Cached);
        p.tx_begin().unwrap();
        let before = p.stats();
        for _ in 0..1000 {
            p.read_field(o, &d, "val").unwrap();
        }
        assert_eq!(p.stats().delta(&before).translations, 1);
        p.tx_commit().unwrap();
        let before = p.stats();
        p.read_field(o, &d, "val").unwrap();
        assert_eq!(p.stats().delta(&before).translations, 1);
    }
}
