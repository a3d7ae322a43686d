//! The persistent heap: header, size-class allocator, root object and
//! `ObjectId` translation over a byte [`Region`].
//!
//! Every byte stored to the region goes through one store primitive that
//! charges it to exactly one of the user/log/meta ledgers and ticks the
//! persistent-write ordinal that crash plans count.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::layout::*;
use crate::oid::INLINE_VALUE_TAG;
use crate::stats::{Attribution, WriteStats};
use crate::txn::TxState;
use crate::{Error, ObjectId, Result};

/// Backing bytes of a pool. The whole file, header included.
pub trait Region {
    fn bytes(&self) -> &[u8];
    fn bytes_mut(&mut self) -> &mut [u8];
    /// Makes stored bytes durable. In-memory regions have nothing to do.
    fn sync(&mut self) -> Result<()> {
        Ok(())
    }
}

impl Region for Vec<u8> {
    fn bytes(&self) -> &[u8] {
        self
    }
    fn bytes_mut(&mut self) -> &mut [u8] {
        self
    }
}

impl Region for Box<[u8]> {
    fn bytes(&self) -> &[u8] {
        self
    }
    fn bytes_mut(&mut self) -> &mut [u8] {
        self
    }
}

/// How [`Pool::translate`] resolves ids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TranslationMode {
    /// Validate and count every translation.
    #[default]
    Checked,
    /// Serve repeated translations of an id from a per-transaction cache;
    /// only misses are validated and counted.
    Cached,
    /// No validation and no counting. Used to neutralize translation cost in
    /// differential measurements.
    Unchecked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ByteClass {
    User,
    Log,
    Meta,
}

/// Parameters for [`Pool::format`].
#[derive(Clone, Debug)]
pub struct FormatOptions {
    pub layout_name: String,
    pub layout_version: u32,
    pub pool_uuid: u64,
    /// Bytes reserved for the undo log; defaults to a quarter of the pool.
    pub log_capacity: Option<u64>,
}

impl FormatOptions {
    pub fn new(layout_name: &str, pool_uuid: u64) -> Self {
        FormatOptions {
            layout_name: String::from(layout_name),
            layout_version: 1,
            pool_uuid,
            log_capacity: None,
        }
    }
}

/// One allocated or free block found by [`Pool::heap_walk`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockInfo {
    pub oid: ObjectId,
    pub capacity: u64,
    pub allocated: bool,
}

/// An open pool. See the crate docs for the module layout; transactional
/// operations are implemented in [`crate::txn`].
pub struct Pool {
    region: Box<dyn Region>,
    pub(crate) uuid: u64,
    pub(crate) heap_start: u64,
    pub(crate) heap_end: u64,
    pub(crate) log_off: u64,
    pub(crate) log_cap: u64,
    pub(crate) alloc_state: u64,
    pub(crate) stats: WriteStats,
    attribution: Attribution,
    pub(crate) tx: Option<TxState>,
    crash_at: Option<u64>,
    pub(crate) poisoned: bool,
    translation: TranslationMode,
    pub(crate) cache: BTreeMap<u64, u64>,
}

impl core::fmt::Debug for Pool {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Pool")
            .field("uuid", &format_args!("{:#x}", self.uuid))
            .field("heap", &(self.heap_start..self.heap_end))
            .field("in_tx", &self.tx.is_some())
            .field("poisoned", &self.poisoned)
            .finish()
    }
}

impl Pool {
    /// Initializes an empty pool over a zero-filled region whose length is
    /// the pool capacity.
    pub fn format(region: Box<dyn Region>, opts: FormatOptions) -> Result<Pool> {
        let capacity = region.bytes().len() as u64;
        if capacity < MIN_CAPACITY {
            return Err(Error::CapacityTooSmall { requested: capacity, minimum: MIN_CAPACITY });
        }
        if opts.layout_name.len() >= LAYOUT_NAME_LEN {
            return Err(Error::LayoutNameTooLong(opts.layout_name.len()));
        }
        if opts.pool_uuid == 0 || opts.pool_uuid == INLINE_VALUE_TAG {
            return Err(Error::InvalidArgument("reserved pool uuid"));
        }
        let log_cap = opts
            .log_capacity
            .unwrap_or(capacity / 4)
            .max(64 * 1024)
            .next_multiple_of(HEADER_SIZE);
        if log_cap + DEFAULT_HEAP_OFFSET + HEADER_SIZE > capacity {
            return Err(Error::CapacityTooSmall {
                requested: capacity,
                minimum: log_cap + DEFAULT_HEAP_OFFSET + HEADER_SIZE,
            });
        }
        let log_off = capacity - log_cap;

        let mut head = [0u8; OFF_LOG_LEN + 8];
        head[OFF_MAGIC..OFF_MAGIC + 8].copy_from_slice(&MAGIC);
        put_u32(&mut head, OFF_FORMAT_VERSION, FORMAT_VERSION);
        head[OFF_LAYOUT_NAME..OFF_LAYOUT_NAME + opts.layout_name.len()]
            .copy_from_slice(opts.layout_name.as_bytes());
        put_u32(&mut head, OFF_LAYOUT_VERSION, opts.layout_version);
        put_u64(&mut head, OFF_POOL_UUID, opts.pool_uuid);
        put_u64(&mut head, OFF_HEAP_OFFSET, DEFAULT_HEAP_OFFSET);
        put_u64(&mut head, OFF_CAPACITY, capacity);
        put_u64(&mut head, OFF_ALLOC_STATE, ALLOC_STATE_OFFSET);
        put_u64(&mut head, OFF_LOG_OFFSET, log_off);
        put_u64(&mut head, OFF_LOG_CAPACITY, log_cap);

        let mut pool = Pool::with_geometry(region, opts.pool_uuid, DEFAULT_HEAP_OFFSET, log_off, log_cap, ALLOC_STATE_OFFSET);
        pool.store(0, &head, ByteClass::Meta)?;
        pool.store(
            ALLOC_STATE_OFFSET + ALLOC_FRONTIER,
            &DEFAULT_HEAP_OFFSET.to_le_bytes(),
            ByteClass::Meta,
        )?;
        Ok(pool)
    }

    /// Opens a pool, rolling back any interrupted transaction, and checks the
    /// stored layout name.
    pub fn open(region: Box<dyn Region>, layout_name: &str) -> Result<Pool> {
        let pool = Pool::recover(region)?;
        let found = pool.layout_name();
        if found != layout_name {
            return Err(Error::LayoutMismatch { expected: String::from(layout_name), found });
        }
        Ok(pool)
    }

    /// Validates the header of `region` and attaches to it without touching
    /// the undo log. Callers go through [`Pool::open`] or [`Pool::recover`].
    pub(crate) fn attach(region: Box<dyn Region>) -> Result<Pool> {
        let bytes = region.bytes();
        if bytes.len() < HEADER_SIZE as usize || bytes[OFF_MAGIC..OFF_MAGIC + 8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = get_u32(bytes, OFF_FORMAT_VERSION);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(version));
        }
        let len = bytes.len() as u64;
        let capacity = get_u64(bytes, OFF_CAPACITY);
        let heap_start = get_u64(bytes, OFF_HEAP_OFFSET);
        let alloc_state = get_u64(bytes, OFF_ALLOC_STATE);
        let log_off = get_u64(bytes, OFF_LOG_OFFSET);
        let log_cap = get_u64(bytes, OFF_LOG_CAPACITY);
        let uuid = get_u64(bytes, OFF_POOL_UUID);
        if capacity != len {
            return Err(Error::Corrupt("capacity does not match region length"));
        }
        if heap_start < HEADER_SIZE
            || heap_start % ALIGN != 0
            || log_off < heap_start
            || log_off.checked_add(log_cap) != Some(capacity)
            || alloc_state + ALLOC_HEADS + 8 * NUM_CLASSES as u64 > HEADER_SIZE
        {
            return Err(Error::Corrupt("inconsistent header geometry"));
        }
        let pool = Pool::with_geometry(region, uuid, heap_start, log_off, log_cap, alloc_state);
        let frontier = pool.alloc_word(ALLOC_FRONTIER);
        if frontier < heap_start || frontier > log_off {
            return Err(Error::Corrupt("allocator frontier out of range"));
        }
        Ok(pool)
    }

    fn with_geometry(
        region: Box<dyn Region>,
        uuid: u64,
        heap_start: u64,
        log_off: u64,
        log_cap: u64,
        alloc_state: u64,
    ) -> Pool {
        Pool {
            region,
            uuid,
            heap_start,
            heap_end: log_off,
            log_off,
            log_cap,
            alloc_state,
            stats: WriteStats::default(),
            attribution: Attribution::Workload,
            tx: None,
            crash_at: None,
            poisoned: false,
            translation: TranslationMode::Checked,
            cache: BTreeMap::new(),
        }
    }

    // ----- header -------------------------------------------------------

    pub fn uuid(&self) -> u64 {
        self.uuid
    }

    pub fn layout_name(&self) -> String {
        let raw = &self.region.bytes()[OFF_LAYOUT_NAME..OFF_LAYOUT_NAME + LAYOUT_NAME_LEN];
        let end = raw.iter().position(|b| *b == 0).unwrap_or(raw.len());
        String::from_utf8_lossy(&raw[..end]).into_owned()
    }

    pub fn layout_version(&self) -> u32 {
        get_u32(self.region.bytes(), OFF_LAYOUT_VERSION)
    }

    pub fn schema_fingerprint(&self) -> u64 {
        get_u64(self.region.bytes(), OFF_FINGERPRINT)
    }

    pub fn root_id(&self) -> ObjectId {
        ObjectId::from_bytes(&self.region.bytes()[OFF_ROOT_ID..OFF_ROOT_ID + 16])
    }

    pub fn root_size(&self) -> u64 {
        get_u64(self.region.bytes(), OFF_ROOT_SIZE)
    }

    pub fn capacity(&self) -> u64 {
        self.region.bytes().len() as u64
    }

    pub fn heap_range(&self) -> core::ops::Range<u64> {
        self.heap_start..self.heap_end
    }

    pub fn log_capacity(&self) -> u64 {
        self.log_cap
    }

    /// Sets the layout version inside the active transaction, or in an
    /// implicit one.
    pub fn set_layout_version(&mut self, version: u32) -> Result<()> {
        self.in_implicit_tx(|p| p.write_meta(OFF_LAYOUT_VERSION as u64, &version.to_le_bytes()))
    }

    pub fn set_schema_fingerprint(&mut self, fingerprint: u64) -> Result<()> {
        self.in_implicit_tx(|p| p.write_meta(OFF_FINGERPRINT as u64, &fingerprint.to_le_bytes()))
    }

    // ----- accounting ---------------------------------------------------

    pub fn stats(&self) -> WriteStats {
        self.stats
    }

    pub fn attribution(&self) -> Attribution {
        self.attribution
    }

    /// Runs `f` with user bytes charged to `attribution`.
    pub fn with_attribution<T>(
        &mut self,
        attribution: Attribution,
        f: impl FnOnce(&mut Pool) -> Result<T>,
    ) -> Result<T> {
        let saved = core::mem::replace(&mut self.attribution, attribution);
        let out = f(self);
        self.attribution = saved;
        out
    }

    /// Counts one manually migrated record (the write side is charged by
    /// the caller under [`Attribution::Migration`]).
    pub fn note_record_migrated(&mut self) {
        self.stats.records_migrated += 1;
    }

    pub fn translation_mode(&self) -> TranslationMode {
        self.translation
    }

    pub fn set_translation_mode(&mut self, mode: TranslationMode) {
        self.translation = mode;
        self.cache.clear();
    }

    // ----- crash plans --------------------------------------------------

    /// Arms a crash at the `plan.trigger`-th persistent store from now.
    pub fn arm_crash(&mut self, plan: crate::CrashPlan) -> Result<()> {
        if plan.trigger == 0 {
            return Err(Error::InvalidArgument("crash trigger must be at least 1"));
        }
        self.crash_at = Some(self.stats.store_events + plan.trigger);
        Ok(())
    }

    pub fn disarm_crash(&mut self) {
        self.crash_at = None;
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    pub(crate) fn ensure_live(&self) -> Result<()> {
        if self.poisoned {
            Err(Error::Poisoned)
        } else {
            Ok(())
        }
    }

    // ----- raw region access --------------------------------------------

    /// Current image of the whole pool, header and log included.
    pub fn region_bytes(&self) -> &[u8] {
        self.region.bytes()
    }

    pub fn sync(&mut self) -> Result<()> {
        self.ensure_live()?;
        self.stats.flush_events += 1;
        self.region.sync()
    }

    pub fn into_region(self) -> Box<dyn Region> {
        self.region
    }

    /// The single store primitive. Every persistent byte passes through here.
    pub(crate) fn store(&mut self, abs: u64, bytes: &[u8], class: ByteClass) -> Result<()> {
        self.tick()?;
        let start = abs as usize;
        self.region.bytes_mut()[start..start + bytes.len()].copy_from_slice(bytes);
        self.charge(class, bytes.len() as u64);
        Ok(())
    }

    pub(crate) fn store_zero(&mut self, abs: u64, len: u64, class: ByteClass) -> Result<()> {
        self.tick()?;
        let start = abs as usize;
        self.region.bytes_mut()[start..start + len as usize].fill(0);
        self.charge(class, len);
        Ok(())
    }

    fn tick(&mut self) -> Result<()> {
        self.ensure_live()?;
        self.stats.store_events += 1;
        if self.crash_at == Some(self.stats.store_events) {
            self.poisoned = true;
            self.crash_at = None;
            return Err(Error::SimulatedCrash { ordinal: self.stats.store_events });
        }
        Ok(())
    }

    fn charge(&mut self, class: ByteClass, n: u64) {
        match class {
            ByteClass::User => self.stats.charge_user(self.attribution, n),
            ByteClass::Log => self.stats.bytes_log += n,
            ByteClass::Meta => self.stats.bytes_meta += n,
        }
    }

    pub(crate) fn raw(&self, abs: u64, len: u64) -> &[u8] {
        &self.region.bytes()[abs as usize..(abs + len) as usize]
    }

    pub(crate) fn raw_u64(&self, abs: u64) -> u64 {
        get_u64(self.region.bytes(), abs as usize)
    }

    /// Writes header or allocator words, snapshotting them first when a
    /// transaction is active.
    pub(crate) fn write_meta(&mut self, abs: u64, bytes: &[u8]) -> Result<()> {
        if self.tx.is_some() {
            self.snapshot_abs(abs, bytes.len() as u64)?;
        }
        self.store(abs, bytes, ByteClass::Meta)
    }

    // ----- translation ----------------------------------------------------

    fn check_oid(&self, oid: ObjectId) -> Result<()> {
        if oid.pool_uuid != self.uuid {
            if oid.is_null() {
                return Err(Error::OutOfBounds { offset: 0 });
            }
            return Err(Error::ForeignPool { expected: self.uuid, found: oid.pool_uuid });
        }
        if oid.offset < self.heap_start + BLOCK_HEADER
            || oid.offset >= self.heap_end
            || oid.offset % ALIGN != 0
        {
            return Err(Error::OutOfBounds { offset: oid.offset });
        }
        Ok(())
    }

    /// Resolves `oid` to a byte offset into the mapped region (the session
    /// address). Deterministic within a session.
    pub fn translate(&mut self, oid: ObjectId) -> Result<u64> {
        self.ensure_live()?;
        match self.translation {
            TranslationMode::Unchecked => Ok(oid.offset),
            TranslationMode::Checked => {
                self.check_oid(oid)?;
                self.stats.translations += 1;
                Ok(oid.offset)
            }
            TranslationMode::Cached => {
                if oid.pool_uuid == self.uuid {
                    if let Some(addr) = self.cache.get(&oid.offset) {
                        return Ok(*addr);
                    }
                }
                self.check_oid(oid)?;
                self.stats.translations += 1;
                self.cache.insert(oid.offset, oid.offset);
                Ok(oid.offset)
            }
        }
    }

    /// Raw pointer to the translated payload, valid until the region is
    /// unmapped or a store invalidates the borrow.
    pub fn translate_ptr(&mut self, oid: ObjectId) -> Result<*const u8> {
        let addr = self.translate(oid)?;
        Ok(self.region.bytes()[addr as usize..].as_ptr())
    }

    fn span(&mut self, oid: ObjectId, off: u64, len: u64) -> Result<u64> {
        let base = self.translate(oid)?;
        let abs = base + off;
        if abs + len > self.heap_end {
            return Err(Error::OutOfBounds { offset: abs });
        }
        Ok(abs)
    }

    // ----- reads ------------------------------------------------------------

    pub fn read_bytes(&mut self, oid: ObjectId, off: u64, buf: &mut [u8]) -> Result<()> {
        let abs = self.span(oid, off, buf.len() as u64)?;
        buf.copy_from_slice(self.raw(abs, buf.len() as u64));
        Ok(())
    }

    pub fn read_vec(&mut self, oid: ObjectId, off: u64, len: u64) -> Result<Vec<u8>> {
        let mut out = vec![0u8; len as usize];
        self.read_bytes(oid, off, &mut out)?;
        Ok(out)
    }

    pub fn read_u32(&mut self, oid: ObjectId, off: u64) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(oid, off, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self, oid: ObjectId, off: u64) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_bytes(oid, off, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_oid(&mut self, oid: ObjectId, off: u64) -> Result<ObjectId> {
        let mut b = [0u8; 16];
        self.read_bytes(oid, off, &mut b)?;
        Ok(ObjectId::from_bytes(&b))
    }

    // ----- writes -------------------------------------------------------------

    /// Transactional store: snapshots the range (unless it was allocated in
    /// this transaction or already covered) and writes `bytes`.
    pub fn write_bytes(&mut self, oid: ObjectId, off: u64, bytes: &[u8]) -> Result<()> {
        if self.tx.is_none() {
            self.ensure_live()?;
            return Err(Error::TxRequired);
        }
        let abs = self.span(oid, off, bytes.len() as u64)?;
        self.snapshot_abs(abs, bytes.len() as u64)?;
        self.store(abs, bytes, ByteClass::User)
    }

    pub fn write_u32(&mut self, oid: ObjectId, off: u64, v: u32) -> Result<()> {
        self.write_bytes(oid, off, &v.to_le_bytes())
    }

    pub fn write_u64(&mut self, oid: ObjectId, off: u64, v: u64) -> Result<()> {
        self.write_bytes(oid, off, &v.to_le_bytes())
    }

    pub fn write_oid(&mut self, oid: ObjectId, off: u64, v: ObjectId) -> Result<()> {
        self.write_bytes(oid, off, &v.to_bytes())
    }

    /// Non-transactional store; a crash can leave it partially applied
    /// relative to other writes.
    pub fn write_unlogged(&mut self, oid: ObjectId, off: u64, bytes: &[u8]) -> Result<()> {
        let abs = self.span(oid, off, bytes.len() as u64)?;
        self.store(abs, bytes, ByteClass::User)?;
        self.stats.flush_events += 1;
        Ok(())
    }

    // ----- allocator ------------------------------------------------------------

    fn alloc_word(&self, field: u64) -> u64 {
        self.raw_u64(self.alloc_state + field)
    }

    fn head_word(&self, class: usize) -> u64 {
        self.alloc_state + ALLOC_HEADS + 8 * class as u64
    }

    pub fn live_bytes(&self) -> u64 {
        self.alloc_word(ALLOC_LIVE_BYTES)
    }

    pub fn live_blocks(&self) -> u64 {
        self.alloc_word(ALLOC_LIVE_BLOCKS)
    }

    pub fn frontier(&self) -> u64 {
        self.alloc_word(ALLOC_FRONTIER)
    }

    /// Allocates a block. Inside a transaction every allocator word it
    /// changes is snapshotted, so rollback reclaims the block.
    pub(crate) fn alloc_block(&mut self, size: u64, zeroed: bool) -> Result<ObjectId> {
        self.ensure_live()?;
        if size == 0 {
            return Err(Error::InvalidArgument("allocation size must be positive"));
        }
        let (class, cap) = size_class(size).ok_or(Error::OutOfSpace { requested: size })?;
        let head_abs = self.head_word(class);
        let head = self.raw_u64(head_abs);
        let payload = if head != 0 {
            let next = self.raw_u64(head - BLOCK_HEADER + 8);
            self.write_meta(head_abs, &next.to_le_bytes())?;
            self.write_meta(head - BLOCK_HEADER + 8, &ALLOCATED_TAG.to_le_bytes())?;
            if self.tx.is_some() {
                // stale payload of a reused block: keep it for rollback
                self.snapshot_abs(head, cap)?;
            }
            head
        } else {
            let frontier = self.alloc_word(ALLOC_FRONTIER);
            let end = frontier + BLOCK_HEADER + cap;
            if end > self.heap_end {
                return Err(Error::OutOfSpace { requested: size });
            }
            self.write_meta(self.alloc_state + ALLOC_FRONTIER, &end.to_le_bytes())?;
            let mut hdr = [0u8; 16];
            put_u64(&mut hdr, 0, cap);
            put_u64(&mut hdr, 8, ALLOCATED_TAG);
            // Beyond the old frontier: rollback re-zeroes it.
            self.store(frontier, &hdr, ByteClass::Meta)?;
            if let Some(tx) = self.tx.as_mut() {
                tx.mark_fresh(frontier, end);
            }
            frontier + BLOCK_HEADER
        };
        let live = self.live_bytes() + cap;
        let blocks = self.live_blocks() + 1;
        self.write_meta(self.alloc_state + ALLOC_LIVE_BYTES, &live.to_le_bytes())?;
        self.write_meta(self.alloc_state + ALLOC_LIVE_BLOCKS, &blocks.to_le_bytes())?;
        if zeroed {
            self.store_zero(payload, cap, ByteClass::Meta)?;
        }
        self.stats.allocations += 1;
        Ok(ObjectId::new(self.uuid, payload))
    }

    /// Returns the capacity of the allocated block `oid` or the reason it
    /// cannot be freed.
    pub(crate) fn check_allocated(&self, oid: ObjectId) -> Result<u64> {
        self.check_oid(oid)?;
        let hdr = oid.offset - BLOCK_HEADER;
        let cap = self.raw_u64(hdr);
        if class_of_capacity(cap).is_none() || oid.offset + cap > self.frontier() {
            return Err(Error::OutOfBounds { offset: oid.offset });
        }
        if self.raw_u64(hdr + 8) != ALLOCATED_TAG {
            return Err(Error::DoubleFree { offset: oid.offset });
        }
        Ok(cap)
    }

    pub(crate) fn free_block(&mut self, oid: ObjectId) -> Result<()> {
        self.ensure_live()?;
        let cap = self.check_allocated(oid)?;
        let class = class_of_capacity(cap).expect("checked capacity");
        let head_abs = self.head_word(class);
        let head = self.raw_u64(head_abs);
        self.write_meta(oid.offset - BLOCK_HEADER + 8, &head.to_le_bytes())?;
        self.write_meta(head_abs, &oid.offset.to_le_bytes())?;
        let live = self.live_bytes() - cap;
        let blocks = self.live_blocks() - 1;
        self.write_meta(self.alloc_state + ALLOC_LIVE_BYTES, &live.to_le_bytes())?;
        self.write_meta(self.alloc_state + ALLOC_LIVE_BLOCKS, &blocks.to_le_bytes())?;
        self.cache.remove(&oid.offset);
        self.stats.frees += 1;
        Ok(())
    }

    /// Non-transactional allocation. Inside a transaction use
    /// [`Pool::tx_alloc`] instead.
    pub fn raw_alloc(&mut self, size: u64, zeroed: bool) -> Result<ObjectId> {
        if self.tx.is_some() {
            return Err(Error::TxStateError("raw_alloc inside a transaction"));
        }
        self.alloc_block(size, zeroed)
    }

    pub fn raw_free(&mut self, oid: ObjectId) -> Result<()> {
        if self.tx.is_some() {
            return Err(Error::TxStateError("raw_free inside a transaction"));
        }
        self.free_block(oid)
    }

    /// Usable bytes of an allocated block.
    pub fn block_capacity(&self, oid: ObjectId) -> Result<u64> {
        self.check_allocated(oid)
    }

    pub fn is_allocated(&self, oid: ObjectId) -> bool {
        self.check_allocated(oid).is_ok()
    }

    /// Every block between the heap start and the allocator frontier.
    pub fn heap_walk(&self) -> Result<Vec<BlockInfo>> {
        let mut out = Vec::new();
        let frontier = self.frontier();
        let mut at = self.heap_start;
        while at < frontier {
            let cap = self.raw_u64(at);
            if class_of_capacity(cap).is_none() || at + BLOCK_HEADER + cap > frontier {
                return Err(Error::Corrupt("bad block header in heap walk"));
            }
            out.push(BlockInfo {
                oid: ObjectId::new(self.uuid, at + BLOCK_HEADER),
                capacity: cap,
                allocated: self.raw_u64(at + 8) == ALLOCATED_TAG,
            });
            at += BLOCK_HEADER + cap;
        }
        Ok(out)
    }

    // ----- root object -------------------------------------------------------

    /// Returns the root object, creating it zeroed on first use and growing
    /// it (prefix preserved, tail zeroed) when `size` exceeds the current
    /// root size.
    pub fn get_root(&mut self, size: u64) -> Result<ObjectId> {
        if size == 0 {
            return Err(Error::InvalidArgument("root size must be positive"));
        }
        let current = self.root_id();
        let current_size = self.root_size();
        if !current.is_null() && size <= current_size {
            return Ok(current);
        }
        self.in_implicit_tx(|p| {
            p.with_attribution(Attribution::Structure, |p| {
                let fresh = p.tx_alloc(size)?;
                if !current.is_null() {
                    p.tx_copy_bytes(fresh, current, current_size)?;
                    p.tx_free(current)?;
                }
                let mut hdr = [0u8; 24];
                hdr[..16].copy_from_slice(&fresh.to_bytes());
                put_u64(&mut hdr, 16, size);
                p.write_meta(OFF_ROOT_ID as u64, &hdr)?;
                Ok(fresh)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh(cap: usize) -> Pool {
        Pool::format(Box::new(vec![0u8; cap]), FormatOptions::new("test", 0x1234)).unwrap()
    }

    #[test]
    fn format_writes_only_metadata() {
        let pool = fresh(1 << 20);
        let s = pool.stats();
        assert_eq!(s.bytes_user, 0);
        assert!(s.bytes_meta > 0);
        assert_eq!(pool.live_blocks(), 0);
        assert!(pool.root_id().is_null());
        assert_eq!(&pool.region_bytes()[0..8], b"LEDSPOOL");
    }

    #[test]
    fn format_rejects_small_capacity() {
        let err = Pool::format(Box::new(vec![0u8; 4096]), FormatOptions::new("x", 1)).unwrap_err();
        assert!(matches!(err, Error::CapacityTooSmall { .. }));
    }

    #[test]
    fn format_rejects_long_layout_names() {
        let name = "n".repeat(64);
        let err = Pool::format(Box::new(vec![0u8; 1 << 20]), FormatOptions::new(&name, 1));
        assert_eq!(err.unwrap_err(), Error::LayoutNameTooLong(64));
    }

    #[test]
    fn open_checks_magic_and_layout_name() {
        assert_eq!(Pool::open(Box::new(vec![0u8; 1 << 20]), "L").unwrap_err(), Error::BadMagic);
        let pool = fresh(1 << 20);
        let image = pool.region_bytes().to_vec();
        let err = Pool::open(Box::new(image.clone()), "other").unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch { .. }));
        assert_eq!(Pool::open(Box::new(image), "test").unwrap().uuid(), 0x1234);
    }

    #[test]
    fn raw_alloc_is_aligned_and_zeroed() {
        let mut pool = fresh(1 << 20);
        let a = pool.raw_alloc(24, true).unwrap();
        let b = pool.raw_alloc(1, false).unwrap();
        assert_eq!(a.offset % 16, 0);
        assert_eq!(b.offset % 16, 0);
        assert_eq!(pool.read_vec(a, 0, 24).unwrap(), vec![0u8; 24]);
        assert_eq!(pool.block_capacity(a).unwrap(), 32);
    }

    #[test]
    fn raw_free_returns_to_baseline_and_detects_double_free() {
        let mut pool = fresh(1 << 20);
        let base = pool.live_bytes();
        let ids: Vec<_> = (1..50u64).map(|i| pool.raw_alloc(i * 7, true).unwrap()).collect();
        assert!(pool.live_bytes() > base);
        for id in &ids {
            pool.raw_free(*id).unwrap();
        }
        assert_eq!(pool.live_bytes(), base);
        assert_eq!(pool.live_blocks(), 0);
        assert_eq!(pool.raw_free(ids[0]).unwrap_err(), Error::DoubleFree { offset: ids[0].offset });
        // free lists are LIFO: ids[1] (14 B) was the last 16 B block freed
        let again = pool.raw_alloc(7, false).unwrap();
        assert_eq!(again, ids[1]);
    }

    #[test]
    fn translate_rejects_null_foreign_and_misaligned() {
        let mut pool = fresh(1 << 20);
        let a = pool.raw_alloc(16, true).unwrap();
        assert_eq!(pool.translate(a).unwrap(), pool.translate(a).unwrap());
        assert!(matches!(pool.translate(ObjectId::NULL), Err(Error::OutOfBounds { .. })));
        assert!(matches!(
            pool.translate(ObjectId::new(99, a.offset)),
            Err(Error::ForeignPool { .. })
        ));
        assert!(matches!(
            pool.translate(ObjectId::new(a.pool_uuid, a.offset + 8)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn out_of_space_is_reported() {
        let mut pool = fresh(1 << 20);
        let err = pool.raw_alloc(1 << 20, false).unwrap_err();
        assert!(matches!(err, Error::OutOfSpace { .. }));
    }

    #[test]
    fn root_is_created_reused_and_grown() {
        let mut pool = fresh(1 << 20);
        let r = pool.get_root(64).unwrap();
        assert_eq!(pool.read_vec(r, 0, 64).unwrap(), vec![0u8; 64]);
        assert_eq!(pool.get_root(64).unwrap(), r);
        assert_eq!(pool.get_root(10).unwrap(), r);
        pool.tx_begin().unwrap();
        let pattern: Vec<u8> = (0..64u8).collect();
        pool.write_bytes(r, 0, &pattern).unwrap();
        pool.tx_commit().unwrap();
        let before = pool.read_vec(r, 0, 64).unwrap();
        let grown = pool.get_root(128).unwrap();
        assert_ne!(grown, r);
        assert_eq!(pool.read_vec(grown, 0, 64).unwrap(), before);
        assert_eq!(pool.read_vec(grown, 64, 64).unwrap(), vec![0u8; 64]);
        assert_eq!(pool.root_size(), 128);
        assert!(!pool.is_allocated(r));
    }

    #[test]
    fn heap_walk_sees_every_block() {
        let mut pool = fresh(1 << 20);
        let a = pool.raw_alloc(10, true).unwrap();
        let b = pool.raw_alloc(3000, true).unwrap();
        pool.raw_free(a).unwrap();
        let walk = pool.heap_walk().unwrap();
        assert_eq!(walk.len(), 2);
        assert_eq!(walk[0], BlockInfo { oid: a, capacity: 16, allocated: false });
        assert_eq!(walk[1], BlockInfo { oid: b, capacity: 4096, allocated: true });
    }
}
