//! Flat undo-log transactions.
//!
//! Before a range is first modified inside a transaction its old bytes are
//! appended to the log at the pool tail, and only then is the persistent
//! log length advanced. Commit executes deferred frees and resets the log
//! length to zero; that single store is the commit point. Opening a pool
//! with a non-empty log rolls the records back in reverse order.
//!
//! Blocks allocated inside a transaction are not logged when they come
//! from past the allocation frontier (rollback zeroes that area again);
//! blocks reused from a free list have their stale payload logged, so an
//! abort restores the heap byte for byte.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::layout::{get_u64, ALLOC_FRONTIER, OFF_LOG_LEN};
use crate::pool::{ByteClass, Region};
use crate::{Error, ObjectId, Pool, Result, TranslationMode};

const RECORD_HEADER: u64 = 16;

/// Injects a simulated power failure: the `trigger`-th persistent store
/// after arming fails and poisons the handle. The bytes already in the
/// region are what a restart sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrashPlan {
    pub trigger: u64,
}

impl CrashPlan {
    pub fn at(trigger: u64) -> Self {
        CrashPlan { trigger }
    }
}

#[derive(Debug, Default)]
pub(crate) struct TxState {
    /// Disjoint half-open ranges that need no further snapshot, keyed by
    /// start: already-logged ranges and blocks allocated in this transaction.
    covered: BTreeMap<u64, u64>,
    deferred_frees: Vec<ObjectId>,
    freed: BTreeSet<u64>,
}

impl TxState {
    pub(crate) fn mark_fresh(&mut self, start: u64, end: u64) {
        self.cover(start, end);
    }

    fn cover(&mut self, mut start: u64, mut end: u64) {
        if let Some((&s, &e)) = self.covered.range(..=start).next_back() {
            if e >= start {
                start = s;
                end = end.max(e);
                self.covered.remove(&s);
            }
        }
        while let Some((&s, &e)) = self.covered.range(start..=end).next() {
            end = end.max(e);
            self.covered.remove(&s);
        }
        self.covered.insert(start, end);
    }

    /// Sub-ranges of `[start, end)` not yet covered.
    fn gaps(&self, start: u64, end: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut at = start;
        if let Some((_, &e)) = self.covered.range(..=start).next_back() {
            at = at.max(e);
        }
        for (&s, &e) in self.covered.range(start..end) {
            if s > at {
                out.push((at, s));
            }
            at = at.max(e);
        }
        if at < end {
            out.push((at, end));
        }
        out
    }
}

impl Pool {
    pub fn in_transaction(&self) -> bool {
        self.tx.is_some()
    }

    /// Begins a flat transaction. A second begin fails with
    /// [`Error::NestedTransaction`].
    pub fn tx_begin(&mut self) -> Result<()> {
        self.ensure_live()?;
        if self.tx.is_some() {
            return Err(Error::NestedTransaction);
        }
        if self.log_len() != 0 {
            return Err(Error::TxStateError("undo log not empty"));
        }
        self.tx = Some(TxState::default());
        self.reset_cache();
        Ok(())
    }

    pub fn tx_commit(&mut self) -> Result<()> {
        self.ensure_live()?;
        let frees = match self.tx.as_mut() {
            Some(tx) => core::mem::take(&mut tx.deferred_frees),
            None => return Err(Error::TxStateError("commit without transaction")),
        };
        for oid in frees {
            self.free_block(oid)?;
        }
        self.store(OFF_LOG_LEN as u64, &0u64.to_le_bytes(), ByteClass::Log)?;
        self.stats.flush_events += 1;
        self.stats.commits += 1;
        self.tx = None;
        self.reset_cache();
        Ok(())
    }

    /// Rolls back every change made by the active transaction.
    pub fn tx_abort(&mut self) -> Result<()> {
        self.ensure_live()?;
        if self.tx.is_none() {
            return Err(Error::TxStateError("abort without transaction"));
        }
        self.rollback()?;
        self.stats.aborts += 1;
        self.tx = None;
        self.reset_cache();
        Ok(())
    }

    fn reset_cache(&mut self) {
        if self.translation_mode() == TranslationMode::Cached {
            self.cache.clear();
        }
    }

    fn log_len(&self) -> u64 {
        self.raw_u64(OFF_LOG_LEN as u64)
    }

    fn rollback(&mut self) -> Result<()> {
        let records = self.log_records()?;
        // Blocks carved past the old frontier were never logged; the heap
        // above the frontier is kept all-zero, so clear what they wrote.
        let word = self.alloc_state + ALLOC_FRONTIER;
        let current = self.raw_u64(word);
        let mut old = current;
        if let Some((abs, data)) = records.iter().find(|(a, d)| *a <= word && word + 8 <= a + d.len() as u64) {
            old = get_u64(data, (word - abs) as usize);
        }
        if current > old {
            self.store_zero(old, current - old, ByteClass::Log)?;
        }
        for (abs, data) in records.into_iter().rev() {
            self.store(abs, &data, ByteClass::Log)?;
        }
        self.store(OFF_LOG_LEN as u64, &0u64.to_le_bytes(), ByteClass::Log)?;
        self.stats.flush_events += 1;
        Ok(())
    }

    fn log_records(&self) -> Result<Vec<(u64, Vec<u8>)>> {
        let len = self.log_len();
        if len > self.log_cap {
            return Err(Error::Corrupt("undo log length exceeds capacity"));
        }
        let log = self.raw(self.log_off, len);
        let mut out = Vec::new();
        let mut at = 0usize;
        while (at as u64) < len {
            if at as u64 + RECORD_HEADER > len {
                return Err(Error::Corrupt("truncated undo record"));
            }
            let abs = get_u64(log, at);
            let n = get_u64(log, at + 8);
            let body = at + RECORD_HEADER as usize;
            let padded = n.next_multiple_of(8) as usize;
            if (body + padded) as u64 > len || abs.checked_add(n).is_none_or(|e| e > self.log_off) {
                return Err(Error::Corrupt("undo record out of range"));
            }
            out.push((abs, log[body..body + n as usize].to_vec()));
            at = body + padded;
        }
        Ok(out)
    }

    /// Attaches to `region`, rolling back an interrupted transaction if the
    /// undo log is non-empty. Does not check the layout name.
    pub fn recover(region: Box<dyn Region>) -> Result<Pool> {
        let mut pool = Pool::attach(region)?;
        if pool.log_len() != 0 {
            pool.rollback()?;
        }
        Ok(pool)
    }

    /// Logs the uncovered parts of `[abs, abs + len)`.
    pub(crate) fn snapshot_abs(&mut self, abs: u64, len: u64) -> Result<()> {
        let gaps = match self.tx.as_ref() {
            Some(tx) => tx.gaps(abs, abs + len),
            None => return Err(Error::TxRequired),
        };
        for (s, e) in gaps {
            let n = e - s;
            let padded = n.next_multiple_of(8);
            let needed = RECORD_HEADER + padded;
            let used = self.log_len();
            if used + needed > self.log_cap {
                return Err(Error::LogOverflow { needed: used + needed, capacity: self.log_cap });
            }
            let mut rec = Vec::with_capacity(needed as usize);
            rec.extend_from_slice(&s.to_le_bytes());
            rec.extend_from_slice(&n.to_le_bytes());
            rec.extend_from_slice(self.raw(s, n));
            rec.resize(needed as usize, 0);
            self.store(self.log_off + used, &rec, ByteClass::Log)?;
            self.store(OFF_LOG_LEN as u64, &(used + needed).to_le_bytes(), ByteClass::Log)?;
            self.stats.flush_events += 1;
            if let Some(tx) = self.tx.as_mut() {
                tx.cover(s, e);
            }
        }
        Ok(())
    }

    /// Snapshots a range of an object without writing it, for callers that
    /// modify it through several smaller writes.
    pub fn tx_add_range(&mut self, oid: ObjectId, off: u64, len: u64) -> Result<()> {
        self.require_tx()?;
        let base = self.translate(oid)?;
        self.snapshot_abs(base + off, len)
    }

    /// Allocates a zeroed object owned by the active transaction; rollback
    /// reclaims it.
    pub fn tx_alloc(&mut self, size: u64) -> Result<ObjectId> {
        self.require_tx()?;
        self.alloc_block(size, true)
    }

    /// Like [`Pool::tx_alloc`] but leaves the contents unspecified.
    pub fn tx_alloc_uninit(&mut self, size: u64) -> Result<ObjectId> {
        self.require_tx()?;
        self.alloc_block(size, false)
    }

    /// Frees `oid` when the transaction commits.
    pub fn tx_free(&mut self, oid: ObjectId) -> Result<()> {
        self.require_tx()?;
        self.check_allocated(oid)?;
        let tx = self.tx.as_mut().expect("checked");
        if !tx.freed.insert(oid.offset) {
            return Err(Error::DoubleFree { offset: oid.offset });
        }
        tx.deferred_frees.push(oid);
        Ok(())
    }

    /// Copies `len` bytes between objects transactionally.
    pub fn tx_copy_bytes(&mut self, dst: ObjectId, src: ObjectId, len: u64) -> Result<()> {
        self.require_tx()?;
        if len == 0 {
            return Ok(());
        }
        let bytes = self.read_vec(src, 0, len)?;
        self.write_bytes(dst, 0, &bytes)
    }

    fn require_tx(&self) -> Result<()> {
        self.ensure_live()?;
        if self.tx.is_none() {
            return Err(Error::TxStateError("no active transaction"));
        }
        Ok(())
    }

    /// Runs `f` in a fresh transaction: committed on `Ok`, rolled back on
    /// `Err`.
    pub fn transact<T>(&mut self, f: impl FnOnce(&mut Pool) -> Result<T>) -> Result<T> {
        self.tx_begin()?;
        self.finish(f)
    }

    /// Runs `f` inside the active transaction, or in a fresh one when none
    /// is active.
    pub fn in_implicit_tx<T>(&mut self, f: impl FnOnce(&mut Pool) -> Result<T>) -> Result<T> {
        if self.tx.is_some() {
            return f(self);
        }
        self.tx_begin()?;
        self.finish(f)
    }

    fn finish<T>(&mut self, f: impl FnOnce(&mut Pool) -> Result<T>) -> Result<T> {
        match f(self) {
            Ok(v) => {
                self.tx_commit()?;
                Ok(v)
            }
            Err(e) => {
                if !self.poisoned {
                    self.tx_abort()?;
                }
                Err(e)
            }
        }
    }

    /// Begins a transaction that aborts unless committed.
    pub fn transaction(&mut self) -> Result<Transaction<'_>> {
        self.tx_begin()?;
        Ok(Transaction { pool: self, done: false })
    }
}

/// Scope guard for a transaction. Dropping it without [`Transaction::commit`]
/// rolls back.
pub struct Transaction<'a> {
    pool: &'a mut Pool,
    done: bool,
}

impl Transaction<'_> {
    pub fn commit(mut self) -> Result<()> {
        self.done = true;
        self.pool.tx_commit()
    }

    pub fn abort(mut self) -> Result<()> {
        self.done = true;
        self.pool.tx_abort()
    }
}

impl Deref for Transaction<'_> {
    type Target = Pool;
    fn deref(&self) -> &Pool {
        self.pool
    }
}

impl DerefMut for Transaction<'_> {
    fn deref_mut(&mut self) -> &mut Pool {
        self.pool
    }
}

impl Drop for Transaction<'_> {
    fn drop(&mut self) {
        if !self.done && self.pool.in_transaction() && !self.pool.is_poisoned() {
            let _ = self.pool.tx_abort();
        }
    }
}
