//! Red-black tree with null leaves and parent links.

use alloc::vec;
use alloc::vec::Vec;

use super::migrate::convert_entry;
use super::{link, oid_at, put_oid, Entries, Kernel, Map, Remap, ROOT_PREFIX};
use crate::leds::Place;
use crate::{Error, ObjectId, Pool, Result};

const OFF_TOP: u64 = 16;
const BLACK: u32 = 0;
const RED: u32 = 1;

pub(crate) struct Rbtree;

#[derive(Clone, Copy)]
struct Off {
    color: u64,
    parent: u64,
    left: u64,
    right: u64,
}

impl Off {
    fn of(e: &Entries) -> Off {
        let s = e.size();
        Off { color: s, parent: s + 4, left: s + 20, right: s + 36 }
    }

    fn child(self, right: bool) -> u64 {
        if right {
            self.right
        } else {
            self.left
        }
    }
}

struct Tree<'a> {
    m: &'a Map,
    o: Off,
}

type Node = Option<ObjectId>;

impl Tree<'_> {
    fn top(&self, pool: &mut Pool) -> Result<Node> {
        link(pool, self.m.root, OFF_TOP)
    }

    fn set_top(&self, pool: &mut Pool, n: Node) -> Result<()> {
        pool.write_oid(self.m.root, OFF_TOP, n.unwrap_or(ObjectId::NULL))
    }

    fn color(&self, pool: &mut Pool, n: Node) -> Result<u32> {
        match n {
            Some(x) => pool.read_u32(x, self.o.color),
            None => Ok(BLACK),
        }
    }

    fn set_color(&self, pool: &mut Pool, x: ObjectId, c: u32) -> Result<()> {
        pool.write_u32(x, self.o.color, c)
    }

    fn parent(&self, pool: &mut Pool, x: ObjectId) -> Result<Node> {
        link(pool, x, self.o.parent)
    }

    fn set_parent(&self, pool: &mut Pool, x: ObjectId, p: Node) -> Result<()> {
        pool.write_oid(x, self.o.parent, p.unwrap_or(ObjectId::NULL))
    }

    fn child(&self, pool: &mut Pool, x: ObjectId, right: bool) -> Result<Node> {
        link(pool, x, self.o.child(right))
    }

    fn set_child(&self, pool: &mut Pool, x: ObjectId, right: bool, c: Node) -> Result<()> {
        pool.write_oid(x, self.o.child(right), c.unwrap_or(ObjectId::NULL))
    }

    fn key(&self, pool: &mut Pool, x: ObjectId) -> Result<u64> {
        self.m.entries.key(pool, x.into())
    }

    fn find(&self, pool: &mut Pool, key: u64) -> Result<Node> {
        let mut cur = self.top(pool)?;
        while let Some(x) = cur {
            let k = self.key(pool, x)?;
            if k == key {
                return Ok(Some(x));
            }
            cur = self.child(pool, x, key > k)?;
        }
        Ok(None)
    }

    /// Rotates `x` down towards `dir` (false = left rotation).
    fn rotate(&self, pool: &mut Pool, x: ObjectId, to_left: bool) -> Result<()> {
        let up = !to_left;
        // y is x's child on the side opposite to the rotation direction
        let y = self.child(pool, x, to_left)?.ok_or(Error::Corrupt("rbtree: rotate without child"))?;
        let beta = self.child(pool, y, up)?;
        self.set_child(pool, x, to_left, beta)?;
        if let Some(b) = beta {
            self.set_parent(pool, b, Some(x))?;
        }
        let xp = self.parent(pool, x)?;
        self.set_parent(pool, y, xp)?;
        self.replace_child(pool, xp, x, Some(y))?;
        self.set_child(pool, y, up, Some(x))?;
        self.set_parent(pool, x, Some(y))
    }

    fn replace_child(&self, pool: &mut Pool, parent: Node, old: ObjectId, new: Node) -> Result<()> {
        match parent {
            None => self.set_top(pool, new),
            Some(p) => {
                let right = self.child(pool, p, true)? == Some(old);
                self.set_child(pool, p, right, new)
            }
        }
    }

    fn insert_fixup(&self, pool: &mut Pool, mut z: ObjectId) -> Result<()> {
        loop {
            let Some(p) = self.parent(pool, z)? else { break };
            if self.color(pool, Some(p))? != RED {
                break;
            }
            let g = self.parent(pool, p)?.ok_or(Error::Corrupt("rbtree: red root"))?;
            let p_is_right = self.child(pool, g, true)? == Some(p);
            let uncle = self.child(pool, g, !p_is_right)?;
            if self.color(pool, uncle)? == RED {
                self.set_color(pool, p, BLACK)?;
                self.set_color(pool, uncle.expect("red node"), BLACK)?;
                self.set_color(pool, g, RED)?;
                z = g;
                continue;
            }
            let mut p = p;
            if self.child(pool, p, !p_is_right)? == Some(z) {
                z = p;
                // rotate z away from the inner side
                self.rotate(pool, z, !p_is_right)?;
                p = self.parent(pool, z)?.expect("rotated");
            }
            self.set_color(pool, p, BLACK)?;
            self.set_color(pool, g, RED)?;
            self.rotate(pool, g, p_is_right)?;
        }
        if let Some(t) = self.top(pool)? {
            if self.color(pool, Some(t))? != BLACK {
                self.set_color(pool, t, BLACK)?;
            }
        }
        Ok(())
    }

    fn transplant(&self, pool: &mut Pool, u: ObjectId, v: Node) -> Result<()> {
        let up = self.parent(pool, u)?;
        self.replace_child(pool, up, u, v)?;
        if let Some(v) = v {
            self.set_parent(pool, v, up)?;
        }
        Ok(())
    }

    fn minimum(&self, pool: &mut Pool, mut x: ObjectId) -> Result<ObjectId> {
        while let Some(l) = self.child(pool, x, false)? {
            x = l;
        }
        Ok(x)
    }

    fn delete(&self, pool: &mut Pool, z: ObjectId) -> Result<()> {
        let zl = self.child(pool, z, false)?;
        let zr = self.child(pool, z, true)?;
        let mut removed_color = self.color(pool, Some(z))?;
        let x: Node;
        let x_parent: Node;
        if zl.is_none() {
            x = zr;
            x_parent = self.parent(pool, z)?;
            self.transplant(pool, z, zr)?;
        } else if zr.is_none() {
            x = zl;
            x_parent = self.parent(pool, z)?;
            self.transplant(pool, z, zl)?;
        } else {
            let y = self.minimum(pool, zr.expect("checked"))?;
            removed_color = self.color(pool, Some(y))?;
            x = self.child(pool, y, true)?;
            if self.parent(pool, y)? == Some(z) {
                x_parent = Some(y);
            } else {
                x_parent = self.parent(pool, y)?;
                self.transplant(pool, y, x)?;
                self.set_child(pool, y, true, zr)?;
                self.set_parent(pool, zr.expect("checked"), Some(y))?;
            }
            self.transplant(pool, z, Some(y))?;
            self.set_child(pool, y, false, zl)?;
            self.set_parent(pool, zl.expect("checked"), Some(y))?;
            let zc = self.color(pool, Some(z))?;
            self.set_color(pool, y, zc)?;
        }
        if removed_color == BLACK {
            self.delete_fixup(pool, x, x_parent)?;
        }
        Ok(())
    }

    fn delete_fixup(&self, pool: &mut Pool, mut x: Node, mut xp: Node) -> Result<()> {
        while x != self.top(pool)? && self.color(pool, x)? == BLACK {
            let p = xp.ok_or(Error::Corrupt("rbtree: fixup lost parent"))?;
            let x_is_right = self.child(pool, p, true)? == x && x.is_some()
                || (x.is_none() && self.child(pool, p, false)?.is_some());
            let mut w = self
                .child(pool, p, !x_is_right)?
                .ok_or(Error::Corrupt("rbtree: missing sibling"))?;
            if self.color(pool, Some(w))? == RED {
                self.set_color(pool, w, BLACK)?;
                self.set_color(pool, p, RED)?;
                self.rotate(pool, p, !x_is_right)?;
                w = self.child(pool, p, !x_is_right)?.ok_or(Error::Corrupt("rbtree: missing sibling"))?;
            }
            let near = self.child(pool, w, x_is_right)?;
            let far = self.child(pool, w, !x_is_right)?;
            if self.color(pool, near)? == BLACK && self.color(pool, far)? == BLACK {
                self.set_color(pool, w, RED)?;
                x = Some(p);
                xp = self.parent(pool, p)?;
            } else {
                if self.color(pool, far)? == BLACK {
                    self.set_color(pool, near.expect("red"), BLACK)?;
                    self.set_color(pool, w, RED)?;
                    self.rotate(pool, w, x_is_right)?;
                    w = self.child(pool, p, !x_is_right)?.ok_or(Error::Corrupt("rbtree: missing sibling"))?;
                }
                let pc = self.color(pool, Some(p))?;
                self.set_color(pool, w, pc)?;
                self.set_color(pool, p, BLACK)?;
                if let Some(f) = self.child(pool, w, !x_is_right)? {
                    self.set_color(pool, f, BLACK)?;
                }
                self.rotate(pool, p, !x_is_right)?;
                x = self.top(pool)?;
                xp = None;
            }
        }
        if let Some(x) = x {
            if self.color(pool, Some(x))? != BLACK {
                self.set_color(pool, x, BLACK)?;
            }
        }
        Ok(())
    }

    fn in_order(&self, pool: &mut Pool, limit: u64) -> Result<Vec<ObjectId>> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        let mut cur = self.top(pool)?;
        loop {
            while let Some(x) = cur {
                stack.push(x);
                if stack.len() as u64 > limit + 1 {
                    return Err(Error::Corrupt("rbtree: cycle"));
                }
                cur = self.child(pool, x, false)?;
            }
            let Some(x) = stack.pop() else { break };
            out.push(x);
            if out.len() as u64 > limit {
                return Err(Error::Corrupt("rbtree: more nodes than the count"));
            }
            cur = self.child(pool, x, true)?;
        }
        Ok(out)
    }

    /// Black height of the subtree at `n`, checking every property below.
    fn check(&self, pool: &mut Pool, n: Node, parent: Node, lo: Option<u64>, hi: Option<u64>) -> Result<u32> {
        let Some(x) = n else { return Ok(1) };
        if self.parent(pool, x)? != parent {
            return Err(Error::Corrupt("rbtree: bad parent link"));
        }
        let k = self.m.entries.base_key(pool, x.into())?;
        if lo.is_some_and(|l| k <= l) || hi.is_some_and(|h| k >= h) {
            return Err(Error::Corrupt("rbtree: order violated"));
        }
        let c = self.color(pool, n)?;
        if c != RED && c != BLACK {
            return Err(Error::Corrupt("rbtree: bad color"));
        }
        let l = self.child(pool, x, false)?;
        let r = self.child(pool, x, true)?;
        if c == RED && (self.color(pool, l)? == RED || self.color(pool, r)? == RED) {
            return Err(Error::Corrupt("rbtree: red node with red child"));
        }
        let bl = self.check(pool, l, n, lo, Some(k))?;
        let br = self.check(pool, r, n, Some(k), hi)?;
        if bl != br {
            return Err(Error::Corrupt("rbtree: unequal black heights"));
        }
        Ok(bl + u32::from(c == BLACK))
    }
}

impl Kernel for Rbtree {
    fn root_size(_e: &Entries) -> u64 {
        ROOT_PREFIX + 16
    }

    fn init(_pool: &mut Pool, _m: &Map) -> Result<()> {
        Ok(())
    }

    fn insert(pool: &mut Pool, m: &Map, key: u64, value: u64) -> Result<bool> {
        let t = Tree { m, o: Off::of(&m.entries) };
        let mut parent = None;
        let mut right = false;
        let mut cur = t.top(pool)?;
        while let Some(x) = cur {
            let k = t.key(pool, x)?;
            if k == key {
                return Ok(false);
            }
            parent = Some(x);
            right = key > k;
            cur = t.child(pool, x, right)?;
        }
        let e = &m.entries;
        let z = pool.tx_alloc(m.kind.node_size(e.format))?;
        e.write_new(pool, z.into(), key, ObjectId::inline_value(value), true)?;
        let mut tail = [0u8; 20];
        tail[..4].copy_from_slice(&RED.to_le_bytes());
        if let Some(p) = parent {
            tail[4..20].copy_from_slice(&p.to_bytes());
        }
        pool.write_bytes(z, t.o.color, &tail)?;
        match parent {
            None => t.set_top(pool, Some(z))?,
            Some(p) => t.set_child(pool, p, right, Some(z))?,
        }
        t.insert_fixup(pool, z)?;
        m.bump_count(pool, true)?;
        Ok(true)
    }

    fn remove(pool: &mut Pool, m: &Map, key: u64) -> Result<bool> {
        let t = Tree { m, o: Off::of(&m.entries) };
        let Some(z) = t.find(pool, key)? else { return Ok(false) };
        t.delete(pool, z)?;
        m.entries.drop_entry(pool, z.into())?;
        pool.tx_free(z)?;
        m.bump_count(pool, false)?;
        Ok(true)
    }

    fn lookup(pool: &mut Pool, m: &Map, key: u64) -> Result<Option<Place>> {
        let t = Tree { m, o: Off::of(&m.entries) };
        Ok(t.find(pool, key)?.map(Place::from))
    }

    fn entries(pool: &mut Pool, m: &Map) -> Result<Vec<Place>> {
        Ok(Self::nodes(pool, m)?.into_iter().map(Place::from).collect())
    }

    fn validate(pool: &mut Pool, m: &Map) -> Result<u64> {
        let t = Tree { m, o: Off::of(&m.entries) };
        let top = t.top(pool)?;
        if t.color(pool, top)? != BLACK {
            return Err(Error::Corrupt("rbtree: red root"));
        }
        let n = Self::nodes(pool, m)?.len() as u64;
        t.check(pool, top, None, None, None)?;
        Ok(n)
    }

    fn nodes(pool: &mut Pool, m: &Map) -> Result<Vec<ObjectId>> {
        let t = Tree { m, o: Off::of(&m.entries) };
        let limit = m.len(pool)?;
        t.in_order(pool, limit)
    }

    fn convert_node(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let (fo, to_off) = (Off::of(from), Off::of(to));
        let mut out = convert_entry(bytes, from, to, remap)?;
        out.resize(to.size() as usize + 52, 0);
        out[to_off.color as usize..to_off.color as usize + 4]
            .copy_from_slice(&bytes[fo.color as usize..fo.color as usize + 4]);
        for (a, b) in [(fo.parent, to_off.parent), (fo.left, to_off.left), (fo.right, to_off.right)] {
            put_oid(&mut out, b, remap.get(oid_at(bytes, a))?);
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
