//! On-media layout of a pool file. All integers are little-endian.
//!
//! ```text
//! 0..8      magic "LEDSPOOL"
//! 8..12     format_version
//! 16..80    layout_name (zero padded, at most 63 bytes of text)
//! 80..84    layout_version
//! 88..96    pool_uuid
//! 96..112   root_id
//! 112..120  root_size
//! 120..128  heap_offset
//! 128..136  capacity (total file size)
//! 136..144  allocator_state_offset
//! 144..152  schema fingerprint of the extendible base layouts (0 when unused)
//! 152..160  log_offset
//! 160..168  log_capacity
//! 168..176  log_len; zeroing it is the transaction commit point
//! ```
//!
//! The header owns the first 4 KiB page, allocator state included. The heap
//! spans `[heap_offset, log_offset)` and the undo log occupies the tail of the
//! file.

pub const MAGIC: [u8; 8] = *b"LEDSPOOL";
pub const FORMAT_VERSION: u32 = 1;

pub const OFF_MAGIC: usize = 0;
pub const OFF_FORMAT_VERSION: usize = 8;
pub const OFF_LAYOUT_NAME: usize = 16;
pub const LAYOUT_NAME_LEN: usize = 64;
pub const OFF_LAYOUT_VERSION: usize = 80;
pub const OFF_POOL_UUID: usize = 88;
pub const OFF_ROOT_ID: usize = 96;
pub const OFF_ROOT_SIZE: usize = 112;
pub const OFF_HEAP_OFFSET: usize = 120;
pub const OFF_CAPACITY: usize = 128;
pub const OFF_ALLOC_STATE: usize = 136;
pub const OFF_FINGERPRINT: usize = 144;
pub const OFF_LOG_OFFSET: usize = 152;
pub const OFF_LOG_CAPACITY: usize = 160;
pub const OFF_LOG_LEN: usize = 168;

pub const HEADER_SIZE: u64 = 4096;
pub const DEFAULT_HEAP_OFFSET: u64 = HEADER_SIZE;
pub const MIN_CAPACITY: u64 = 1 << 20;

/// Allocator state block, placed inside the header page.
pub const ALLOC_STATE_OFFSET: u64 = 512;
pub const ALLOC_FRONTIER: u64 = 0;
pub const ALLOC_LIVE_BYTES: u64 = 8;
pub const ALLOC_LIVE_BLOCKS: u64 = 16;
pub const ALLOC_HEADS: u64 = 32;

/// Every payload and every block header is aligned to this.
pub const ALIGN: u64 = 16;
pub const BLOCK_HEADER: u64 = 16;
/// Block header tag word of an allocated block. Free blocks store the payload
/// offset of the next free block of their class there (0 ends the list).
pub const ALLOCATED_TAG: u64 = u64::MAX;

/// Exact-fit classes cover payloads up to this size in 16-byte steps.
pub const SMALL_LIMIT: u64 = 2048;
const SMALL_CLASSES: usize = (SMALL_LIMIT / ALIGN) as usize;
/// Power-of-two classes from 4 KiB up to 2^48 bytes.
const LARGE_CLASSES: usize = 37;
pub const NUM_CLASSES: usize = SMALL_CLASSES + LARGE_CLASSES;

const _: () = assert!(ALLOC_STATE_OFFSET + ALLOC_HEADS + 8 * NUM_CLASSES as u64 <= HEADER_SIZE);

/// Rounds `n` up to the next multiple of 16.
pub const fn align_up(n: u64) -> u64 {
    (n + ALIGN - 1) & !(ALIGN - 1)
}

/// Size class and block capacity for a requested payload size.
pub fn size_class(size: u64) -> Option<(usize, u64)> {
    let size = size.max(1);
    if size <= SMALL_LIMIT {
        let cap = align_up(size);
        return Some(((cap / ALIGN - 1) as usize, cap));
    }
    let cap = size.checked_next_power_of_two()?;
    let class = SMALL_CLASSES + (cap.trailing_zeros() - 12) as usize;
    (class < NUM_CLASSES).then_some((class, cap))
}

/// Inverse of [`size_class`] for a block capacity found in a header.
pub fn class_of_capacity(cap: u64) -> Option<usize> {
    match size_class(cap) {
        Some((class, c)) if c == cap => Some(class),
        _ => None,
    }
}

pub fn get_u32(buf: &[u8], at: usize) -> u32 {
    let mut b = [0u8; 4];
    b.copy_from_slice(&buf[at..at + 4]);
    u32::from_le_bytes(b)
}

pub fn get_u64(buf: &[u8], at: usize) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&buf[at..at + 8]);
    u64::from_le_bytes(b)
}

pub fn put_u32(buf: &mut [u8], at: usize, v: u32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut [u8], at: usize, v: u64) {
    buf[at..at + 8].copy_from_slice(&v.to_le_bytes());
}
