/// What a stored user byte was spent on. Every user byte is charged to exactly
/// one attribution, so the per-attribution totals sum to `bytes_user`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribution {
    /// Ordinary map operations.
    Workload,
    /// Converting old-layout records: manual node copies, extension records
    /// and the link stores that attach them.
    Migration,
    /// Extension clones made by deep copies.
    DeepCopy,
    /// Roots, bucket arrays, sentinels and other bookkeeping records.
    Structure,
}

impl Attribution {
    pub const ALL: [Attribution; 4] = [
        Attribution::Workload,
        Attribution::Migration,
        Attribution::DeepCopy,
        Attribution::Structure,
    ];

    const fn index(self) -> usize {
        self as usize
    }
}

/// Byte ledger and event counters of one pool session. All counters are
/// monotone within a session; compare snapshots with [`WriteStats::delta`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteStats {
    /// Payload bytes stored to the persistent region.
    pub bytes_user: u64,
    /// Undo-log records, the log length word and rollback restores.
    pub bytes_log: u64,
    /// Allocator state, block headers, zero fill and header fields.
    pub bytes_meta: u64,
    pub flush_events: u64,
    /// Ordinal of persistent store events (what crash plans count).
    pub store_events: u64,
    user_by: [u64; 4],

    pub allocations: u64,
    pub frees: u64,
    pub translations: u64,
    pub checks: u64,
    pub extensions_allocated: u64,
    pub deep_copies: u64,
    pub records_migrated: u64,
    pub commits: u64,
    pub aborts: u64,
}

impl WriteStats {
    pub fn user_bytes(&self, attribution: Attribution) -> u64 {
        self.user_by[attribution.index()]
    }

    pub(crate) fn charge_user(&mut self, attribution: Attribution, n: u64) {
        self.bytes_user += n;
        self.user_by[attribution.index()] += n;
    }

    /// Counter increase from `earlier` to `self`.
    pub fn delta(&self, earlier: &WriteStats) -> WriteStats {
        let mut user_by = [0u64; 4];
        for (i, slot) in user_by.iter_mut().enumerate() {
            *slot = self.user_by[i] - earlier.user_by[i];
        }
        WriteStats {
            bytes_user: self.bytes_user - earlier.bytes_user,
            bytes_log: self.bytes_log - earlier.bytes_log,
            bytes_meta: self.bytes_meta - earlier.bytes_meta,
            flush_events: self.flush_events - earlier.flush_events,
            store_events: self.store_events - earlier.store_events,
            user_by,
            allocations: self.allocations - earlier.allocations,
            frees: self.frees - earlier.frees,
            translations: self.translations - earlier.translations,
            checks: self.checks - earlier.checks,
            extensions_allocated: self.extensions_allocated - earlier.extensions_allocated,
            deep_copies: self.deep_copies - earlier.deep_copies,
            records_migrated: self.records_migrated - earlier.records_migrated,
            commits: self.commits - earlier.commits,
            aborts: self.aborts - earlier.aborts,
        }
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_user + self.bytes_log + self.bytes_meta
    }
}
