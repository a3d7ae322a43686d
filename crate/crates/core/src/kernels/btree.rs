//! B-tree of order 8: at most 7 items per node, at least 3 outside the
//! root. Inserts split full nodes on the way down; removals top up thin
//! children on the way down (rotation through the parent, or merge), so
//! neither ever walks back up.
//!
//! Split medians, rotated separators and merge separators pass through a
//! temporary copy, which for extendible entries is deep or shallow per the
//! entry copy mode. Every other relocation moves entry bytes as they are.

use alloc::vec;
use alloc::vec::Vec;

use super::migrate::convert_entry;
use super::{link, oid_at, put_oid, Entries, Kernel, Map, Remap, ROOT_PREFIX};
use crate::leds::Place;
use crate::{Error, ObjectId, Pool, Result};

pub(crate) const MAX_ITEMS: u64 = 7;
pub(crate) const MIN_ITEMS: u64 = 3;
const CAPACITY: u64 = 8;
const OFF_TOP: u64 = 16;

pub(crate) struct Btree;

struct Tree<'a> {
    m: &'a Map,
    e: &'a Entries,
}

impl Tree<'_> {
    fn new(m: &Map) -> Tree<'_> {
        Tree { m, e: &m.entries }
    }

    fn top(&self, pool: &mut Pool) -> Result<Option<ObjectId>> {
        link(pool, self.m.root, OFF_TOP)
    }

    fn set_top(&self, pool: &mut Pool, n: Option<ObjectId>) -> Result<()> {
        pool.write_oid(self.m.root, OFF_TOP, n.unwrap_or(ObjectId::NULL))
    }

    fn n(&self, pool: &mut Pool, x: ObjectId) -> Result<u64> {
        let n = u64::from(pool.read_u32(x, 0)?);
        if n > MAX_ITEMS {
            return Err(Error::Corrupt("btree: item count out of range"));
        }
        Ok(n)
    }

    fn set_n(&self, pool: &mut Pool, x: ObjectId, n: u64) -> Result<()> {
        pool.write_u32(x, 0, n as u32)
    }

    fn item(&self, x: ObjectId, i: u64) -> Place {
        Place::new(x, 4 + i * self.e.size())
    }

    fn slot_off(&self, i: u64) -> u64 {
        4 + CAPACITY * self.e.size() + 16 * i
    }

    fn child(&self, pool: &mut Pool, x: ObjectId, i: u64) -> Result<ObjectId> {
        link(pool, x, self.slot_off(i))?.ok_or(Error::Corrupt("btree: missing child"))
    }

    fn set_child(&self, pool: &mut Pool, x: ObjectId, i: u64, c: ObjectId) -> Result<()> {
        pool.write_oid(x, self.slot_off(i), c)
    }

    fn is_leaf(&self, pool: &mut Pool, x: ObjectId) -> Result<bool> {
        Ok(pool.read_oid(x, self.slot_off(0))?.is_null())
    }

    fn key(&self, pool: &mut Pool, x: ObjectId, i: u64) -> Result<u64> {
        self.e.key(pool, self.item(x, i))
    }

    fn move_items(&self, pool: &mut Pool, x: ObjectId, from: u64, to: u64, count: u64) -> Result<()> {
        self.e.move_entries(pool, self.item(x, from), self.item(x, to), count)
    }

    fn move_slots(&self, pool: &mut Pool, src: ObjectId, from: u64, dst: ObjectId, to: u64, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let bytes = pool.read_vec(src, self.slot_off(from), 16 * count)?;
        pool.write_bytes(dst, self.slot_off(to), &bytes)
    }

    /// First index whose key is not below `key`, and whether it matches.
    fn position(&self, pool: &mut Pool, x: ObjectId, key: u64) -> Result<(u64, bool)> {
        let n = self.n(pool, x)?;
        for i in 0..n {
            let k = self.key(pool, x, i)?;
            if k >= key {
                return Ok((i, k == key));
            }
        }
        Ok((n, false))
    }

    fn find(&self, pool: &mut Pool, key: u64) -> Result<Option<Place>> {
        let mut cur = self.top(pool)?;
        while let Some(x) = cur {
            let (i, found) = self.position(pool, x, key)?;
            if found {
                return Ok(Some(self.item(x, i)));
            }
            cur = if self.is_leaf(pool, x)? { None } else { Some(self.child(pool, x, i)?) };
        }
        Ok(None)
    }

    fn new_node(&self, pool: &mut Pool) -> Result<ObjectId> {
        pool.tx_alloc(self.m.kind.node_size(self.e.format))
    }

    /// Splits the full child `i` of `x` around its median.
    fn split_child(&self, pool: &mut Pool, x: ObjectId, i: u64) -> Result<()> {
        let y = self.child(pool, x, i)?;
        let z = self.new_node(pool)?;
        let xn = self.n(pool, x)?;
        let upper = MAX_ITEMS - MIN_ITEMS - 1;
        self.e.move_entries(pool, self.item(y, MIN_ITEMS + 1), self.item(z, 0), upper)?;
        if !self.is_leaf(pool, y)? {
            self.move_slots(pool, y, MIN_ITEMS + 1, z, 0, upper + 1)?;
        }
        self.set_n(pool, z, upper)?;
        self.move_items(pool, x, i, i + 1, xn - i)?;
        self.move_slots(pool, x, i + 1, x, i + 2, xn - i)?;
        let median = self.item(y, MIN_ITEMS);
        self.e.copy_through_temp(pool, median, self.item(x, i))?;
        self.e.release_copied(pool, median)?;
        self.set_child(pool, x, i + 1, z)?;
        self.set_n(pool, y, MIN_ITEMS)?;
        self.set_n(pool, x, xn + 1)
    }

    fn insert(&self, pool: &mut Pool, key: u64, value: u64) -> Result<()> {
        let val = ObjectId::inline_value(value);
        let Some(mut x) = self.top(pool)? else {
            let r = self.new_node(pool)?;
            self.e.write_new(pool, self.item(r, 0), key, val, true)?;
            self.set_n(pool, r, 1)?;
            return self.set_top(pool, Some(r));
        };
        if self.n(pool, x)? == MAX_ITEMS {
            let s = self.new_node(pool)?;
            self.set_child(pool, s, 0, x)?;
            self.split_child(pool, s, 0)?;
            self.set_top(pool, Some(s))?;
            x = s;
        }
        loop {
            let (mut i, _) = self.position(pool, x, key)?;
            if self.is_leaf(pool, x)? {
                let n = self.n(pool, x)?;
                self.move_items(pool, x, i, i + 1, n - i)?;
                self.e.write_new(pool, self.item(x, i), key, val, true)?;
                return self.set_n(pool, x, n + 1);
            }
            let c = self.child(pool, x, i)?;
            if self.n(pool, c)? == MAX_ITEMS {
                self.split_child(pool, x, i)?;
                if key > self.key(pool, x, i)? {
                    i += 1;
                }
            }
            x = self.child(pool, x, i)?;
        }
    }

    /// Merges child `i + 1` of `x` and the separator `i` into child `i`.
    fn merge(&self, pool: &mut Pool, x: ObjectId, i: u64) -> Result<ObjectId> {
        let y = self.child(pool, x, i)?;
        let z = self.child(pool, x, i + 1)?;
        let (yn, zn, xn) = (self.n(pool, y)?, self.n(pool, z)?, self.n(pool, x)?);
        let sep = self.item(x, i);
        self.e.copy_through_temp(pool, sep, self.item(y, yn))?;
        self.e.release_copied(pool, sep)?;
        self.e.move_entries(pool, self.item(z, 0), self.item(y, yn + 1), zn)?;
        if !self.is_leaf(pool, y)? {
            self.move_slots(pool, z, 0, y, yn + 1, zn + 1)?;
        }
        self.move_items(pool, x, i + 1, i, xn - i - 1)?;
        self.move_slots(pool, x, i + 2, x, i + 1, xn - i - 1)?;
        self.set_n(pool, y, yn + zn + 1)?;
        self.set_n(pool, x, xn - 1)?;
        pool.tx_free(z)?;
        Ok(y)
    }

    /// Returns child `i` of `x` after making sure it holds more than the
    /// minimum, borrowing from a sibling or merging with one.
    fn fat_child(&self, pool: &mut Pool, x: ObjectId, i: u64) -> Result<ObjectId> {
        let c = self.child(pool, x, i)?;
        let cn = self.n(pool, c)?;
        if cn > MIN_ITEMS {
            return Ok(c);
        }
        let xn = self.n(pool, x)?;
        let internal = !self.is_leaf(pool, c)?;
        if i > 0 {
            let l = self.child(pool, x, i - 1)?;
            let ln = self.n(pool, l)?;
            if ln > MIN_ITEMS {
                self.move_items(pool, c, 0, 1, cn)?;
                if internal {
                    self.move_slots(pool, c, 0, c, 1, cn + 1)?;
                }
                let sep = self.item(x, i - 1);
                self.e.copy_through_temp(pool, sep, self.item(c, 0))?;
                self.e.release_copied(pool, sep)?;
                self.e.move_entries(pool, self.item(l, ln - 1), sep, 1)?;
                if internal {
                    self.move_slots(pool, l, ln, c, 0, 1)?;
                }
                self.set_n(pool, l, ln - 1)?;
                self.set_n(pool, c, cn + 1)?;
                return Ok(c);
            }
        }
        if i < xn {
            let r = self.child(pool, x, i + 1)?;
            let rn = self.n(pool, r)?;
            if rn > MIN_ITEMS {
                let sep = self.item(x, i);
                self.e.copy_through_temp(pool, sep, self.item(c, cn))?;
                self.e.release_copied(pool, sep)?;
                self.e.move_entries(pool, self.item(r, 0), sep, 1)?;
                if internal {
                    self.move_slots(pool, r, 0, c, cn + 1, 1)?;
                    self.move_slots(pool, r, 1, r, 0, rn)?;
                }
                self.move_items(pool, r, 1, 0, rn - 1)?;
                self.set_n(pool, r, rn - 1)?;
                self.set_n(pool, c, cn + 1)?;
                return Ok(c);
            }
            return self.merge(pool, x, i);
        }
        self.merge(pool, x, i - 1)
    }

    /// Removes and returns the raw bytes of the largest (or smallest) entry
    /// below `x`, whose own item count exceeds the minimum.
    fn extract(&self, pool: &mut Pool, mut x: ObjectId, max: bool) -> Result<Vec<u8>> {
        loop {
            let n = self.n(pool, x)?;
            if self.is_leaf(pool, x)? {
                let i = if max { n - 1 } else { 0 };
                let at = self.item(x, i);
                let bytes = pool.read_vec(at.oid, at.offset, self.e.size())?;
                if !max {
                    self.move_items(pool, x, 1, 0, n - 1)?;
                }
                self.set_n(pool, x, n - 1)?;
                return Ok(bytes);
            }
            x = self.fat_child(pool, x, if max { n } else { 0 })?;
        }
    }

    fn delete(&self, pool: &mut Pool, mut x: ObjectId, key: u64) -> Result<bool> {
        loop {
            let (i, found) = self.position(pool, x, key)?;
            if self.is_leaf(pool, x)? {
                if !found {
                    return Ok(false);
                }
                let n = self.n(pool, x)?;
                self.e.drop_entry(pool, self.item(x, i))?;
                self.move_items(pool, x, i + 1, i, n - i - 1)?;
                self.set_n(pool, x, n - 1)?;
                return Ok(true);
            }
            if !found {
                x = self.fat_child(pool, x, i)?;
                continue;
            }
            let y = self.child(pool, x, i)?;
            let z = self.child(pool, x, i + 1)?;
            let replacement = if self.n(pool, y)? > MIN_ITEMS {
                Some(self.extract(pool, y, true)?)
            } else if self.n(pool, z)? > MIN_ITEMS {
                Some(self.extract(pool, z, false)?)
            } else {
                None
            };
            match replacement {
                Some(bytes) => {
                    let at = self.item(x, i);
                    self.e.drop_entry(pool, at)?;
                    pool.write_bytes(at.oid, at.offset, &bytes)?;
                    return Ok(true);
                }
                None => x = self.merge(pool, x, i)?,
            }
        }
    }

    fn walk(&self, pool: &mut Pool, x: ObjectId, out: &mut Vec<Place>) -> Result<()> {
        let n = self.n(pool, x)?;
        let leaf = self.is_leaf(pool, x)?;
        for i in 0..n {
            if !leaf {
                let c = self.child(pool, x, i)?;
                self.walk(pool, c, out)?;
            }
            out.push(self.item(x, i));
        }
        if !leaf {
            let c = self.child(pool, x, n)?;
            self.walk(pool, c, out)?;
        }
        Ok(())
    }

    /// Returns (entries, leaf depth) of the subtree, checking occupancy,
    /// ordering and child presence.
    fn check(&self, pool: &mut Pool, x: ObjectId, is_root: bool, lo: Option<u64>, hi: Option<u64>) -> Result<(u64, u32)> {
        let n = self.n(pool, x)?;
        if n == 0 || (!is_root && n < MIN_ITEMS) {
            return Err(Error::Corrupt("btree: node below minimum occupancy"));
        }
        let mut keys = Vec::with_capacity(n as usize);
        for i in 0..n {
            keys.push(self.e.base_key(pool, self.item(x, i))?);
        }
        if keys.windows(2).any(|w| w[0] >= w[1])
            || lo.is_some_and(|l| keys[0] <= l)
            || hi.is_some_and(|h| keys[n as usize - 1] >= h)
        {
            return Err(Error::Corrupt("btree: keys out of order"));
        }
        if self.is_leaf(pool, x)? {
            for i in 0..=n {
                if !pool.read_oid(x, self.slot_off(i))?.is_null() {
                    return Err(Error::Corrupt("btree: leaf with a child"));
                }
            }
            return Ok((n, 0));
        }
        let mut total = n;
        let mut depth = None;
        for i in 0..=n {
            let c = self.child(pool, x, i)?;
            let clo = if i == 0 { lo } else { Some(keys[i as usize - 1]) };
            let chi = if i == n { hi } else { Some(keys[i as usize]) };
            let (cnt, d) = self.check(pool, c, false, clo, chi)?;
            if depth.is_some_and(|dd| dd != d) {
                return Err(Error::Corrupt("btree: leaves at different depths"));
            }
            depth = Some(d);
            total += cnt;
        }
        Ok((total, depth.expect("internal node") + 1))
    }
}

impl Kernel for Btree {
    fn root_size(_e: &Entries) -> u64 {
        ROOT_PREFIX + 16
    }

    fn init(_pool: &mut Pool, _m: &Map) -> Result<()> {
        Ok(())
    }

    fn insert(pool: &mut Pool, m: &Map, key: u64, value: u64) -> Result<bool> {
        let t = Tree::new(m);
        if t.find(pool, key)?.is_some() {
            return Ok(false);
        }
        t.insert(pool, key, value)?;
        m.bump_count(pool, true)?;
        Ok(true)
    }

    fn remove(pool: &mut Pool, m: &Map, key: u64) -> Result<bool> {
        let t = Tree::new(m);
        let Some(top) = t.top(pool)? else { return Ok(false) };
        let removed = t.delete(pool, top, key)?;
        if t.n(pool, top)? == 0 {
            let next = if t.is_leaf(pool, top)? { None } else { Some(t.child(pool, top, 0)?) };
            t.set_top(pool, next)?;
            pool.tx_free(top)?;
        }
        if removed {
            m.bump_count(pool, false)?;
        }
        Ok(removed)
    }

    fn lookup(pool: &mut Pool, m: &Map, key: u64) -> Result<Option<Place>> {
        Tree::new(m).find(pool, key)
    }

    fn entries(pool: &mut Pool, m: &Map) -> Result<Vec<Place>> {
        let t = Tree::new(m);
        let mut out = Vec::new();
        if let Some(top) = t.top(pool)? {
            t.walk(pool, top, &mut out)?;
        }
        Ok(out)
    }

    fn validate(pool: &mut Pool, m: &Map) -> Result<u64> {
        let t = Tree::new(m);
        match t.top(pool)? {
            None => Ok(0),
            Some(top) => Ok(t.check(pool, top, true, None, None)?.0),
        }
    }

    fn nodes(pool: &mut Pool, m: &Map) -> Result<Vec<ObjectId>> {
        let t = Tree::new(m);
        let mut out = Vec::new();
        let Some(top) = t.top(pool)? else { return Ok(out) };
        out.push(top);
        let mut i = 0;
        while i < out.len() {
            let x = out[i];
            if !t.is_leaf(pool, x)? {
                let n = t.n(pool, x)?;
                for c in 0..=n {
                    out.push(t.child(pool, x, c)?);
                }
            }
            i += 1;
        }
        Ok(out)
    }

    fn convert_node(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let n = u64::from(u32::from_le_bytes(bytes[..4].try_into().expect("4")));
        let (fe, te) = (from.size(), to.size());
        let mut out = vec![0u8; (4 + CAPACITY * te + CAPACITY * 16) as usize];
        out[..4].copy_from_slice(&bytes[..4]);
        for i in 0..n {
            let s = (4 + i * fe) as usize;
            let item = convert_entry(&bytes[s..s + fe as usize], from, to, remap)?;
            let d = (4 + i * te) as usize;
            out[d..d + te as usize].copy_from_slice(&item);
        }
        let (fs, ts) = (4 + CAPACITY * fe, 4 + CAPACITY * te);
        if !oid_at(bytes, fs).is_null() {
            for i in 0..=n {
                put_oid(&mut out, ts + 16 * i, remap.get(oid_at(bytes, fs + 16 * i))?);
            }
        }
        Ok(out)
    }

    fn convert_root(pool: &mut Pool, m: &Map, _to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let top = pool.read_oid(m.root, OFF_TOP)?;
        let mut tail = vec![0u8; 16];
        put_oid(&mut tail, 0, remap.get(top)?);
        Ok(tail)
    }
}
