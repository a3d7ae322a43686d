use core::fmt;

/// 128-bit persistent reference: the owning pool's identity token and a byte
/// offset from the pool base.
///
/// The all-zero value is the null id. Valid ids point at a 16-byte aligned
/// payload inside the pool heap.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId {
    pub pool_uuid: u64,
    pub offset: u64,
}

/// Identity token used for values stored inline in an id-sized slot.
/// Pool uuids are never generated with this value (nor zero).
pub const INLINE_VALUE_TAG: u64 = u64::MAX;

impl ObjectId {
    pub const NULL: ObjectId = ObjectId { pool_uuid: 0, offset: 0 };
    pub const SIZE: usize = 16;

    pub const fn new(pool_uuid: u64, offset: u64) -> Self {
        ObjectId { pool_uuid, offset }
    }

    pub const fn is_null(&self) -> bool {
        self.pool_uuid == 0 && self.offset == 0
    }

    /// Packs an opaque 64-bit payload into an id-sized slot.
    pub const fn inline_value(value: u64) -> Self {
        ObjectId { pool_uuid: INLINE_VALUE_TAG, offset: value }
    }

    pub const fn as_inline_value(&self) -> Option<u64> {
        if self.pool_uuid == INLINE_VALUE_TAG {
            Some(self.offset)
        } else {
            None
        }
    }

    pub fn to_bytes(self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.pool_uuid.to_le_bytes());
        out[8..].copy_from_slice(&self.offset.to_le_bytes());
        out
    }

    /// Decodes the first 16 bytes of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut lo = [0u8; 8];
        let mut hi = [0u8; 8];
        lo.copy_from_slice(&bytes[..8]);
        hi.copy_from_slice(&bytes[8..16]);
        ObjectId { pool_uuid: u64::from_le_bytes(lo), offset: u64::from_le_bytes(hi) }
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_null() {
            f.write_str("ObjectId(null)")
        } else if let Some(v) = self.as_inline_value() {
            write!(f, "ObjectId(value {v})")
        } else {
            write!(f, "ObjectId({:#x}:{:#x})", self.pool_uuid, self.offset)
        }
    }
}
