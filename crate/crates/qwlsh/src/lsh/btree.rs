//! Paged B+-tree over `(f64 key, u64 id)` entries.
//!
//! One tree per projection stores every point's projected value. The tree
//! is bulk-loaded bottom-up once at build time and never mutated, so
//! nodes are written packed and the file layout is purely sequential:
//!
//! * page 0 — tree header (root page, leaf-chain ends, counts).
//! * pages 1..=L — the leaves in key order, linked both ways.
//! * remaining pages — internal levels, root last.
//!
//! Every node occupies exactly [`NODE_SIZE`] bytes. Leaf entries are
//! sorted by `(key, id)`; internal entries hold the minimum key of each
//! child subtree. Readers work directly on page byte slices through
//! [`LeafView`]/[`InternalView`], so query-time node access goes through
//! the buffer cache without any deserialization step.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::storage::{BufferCache, FileId, PageId};

/// Size of every tree page in bytes.
pub const NODE_SIZE: usize = 4096;
/// Sentinel for "no such page" in leaf-chain links.
pub const NO_PAGE: u32 = u32::MAX;

const LEAF_HEADER: usize = 12; // type u16, count u16, prev u32, next u32
const LEAF_ENTRY: usize = 16; // key f64, id u64
/// Entries per leaf node: 255.
pub const LEAF_CAP: usize = (NODE_SIZE - LEAF_HEADER) / LEAF_ENTRY;

const INTERNAL_HEADER: usize = 4; // type u16, count u16
const INTERNAL_ENTRY: usize = 12; // key f64, child u32
/// Entries per internal node: 341.
pub const INTERNAL_CAP: usize = (NODE_SIZE - INTERNAL_HEADER) / INTERNAL_ENTRY;

const NODE_LEAF: u16 = 1;
const NODE_INTERNAL: u16 = 2;

// Full nodes must fit their page.
const _: () = assert!(LEAF_HEADER + LEAF_CAP * LEAF_ENTRY <= NODE_SIZE);
const _: () = assert!(INTERNAL_HEADER + INTERNAL_CAP * INTERNAL_ENTRY <= NODE_SIZE);

/// "QWT1" little-endian, stamped into the header page.
const TREE_MAGIC: u32 = 0x3154_5751;

/// Fields of the tree header page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeMeta {
    pub root: u32,
    pub first_leaf: u32,
    pub last_leaf: u32,
    pub leaf_count: u32,
    /// Levels including the leaf level; 1 means the root is a leaf.
    pub height: u32,
    pub entry_count: u64,
}

/// Sorts and writes `entries` as a complete tree file at `path`.
/// Entry order inside the tree is `(key, id)` ascending.
pub fn build_tree(path: &Path, mut entries: Vec<(f64, u64)>) -> Result<TreeMeta> {
    if entries.is_empty() {
        return Err(Error::invalid("cannot build a tree with no entries"));
    }
    entries.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let leaf_count = entries.len().div_ceil(LEAF_CAP);
    let mut pages: Vec<[u8; NODE_SIZE]> = Vec::with_capacity(1 + leaf_count * 2);
    pages.push([0u8; NODE_SIZE]); // header, patched below

    // Leaf level: pages 1..=leaf_count, chained both ways.
    let mut level: Vec<(f64, u32)> = Vec::with_capacity(leaf_count);
    for (i, chunk) in entries.chunks(LEAF_CAP).enumerate() {
        let page_no = (1 + i) as u32;
        let prev = if i == 0 { NO_PAGE } else { page_no - 1 };
        let next = if i + 1 == leaf_count {
            NO_PAGE
        } else {
            page_no + 1
        };
        let mut node = [0u8; NODE_SIZE];
        LittleEndian::write_u16(&mut node[0..2], NODE_LEAF);
        LittleEndian::write_u16(&mut node[2..4], chunk.len() as u16);
        LittleEndian::write_u32(&mut node[4..8], prev);
        LittleEndian::write_u32(&mut node[8..12], next);
        for (s, &(key, id)) in chunk.iter().enumerate() {
            let off = LEAF_HEADER + s * LEAF_ENTRY;
            LittleEndian::write_f64(&mut node[off..off + 8], key);
            LittleEndian::write_u64(&mut node[off + 8..off + 16], id);
        }
        pages.push(node);
        level.push((chunk[0].0, page_no));
    }

    // Internal levels bottom-up until one node remains.
    let mut height = 1u32;
    while level.len() > 1 {
        height += 1;
        let mut parents: Vec<(f64, u32)> = Vec::with_capacity(level.len().div_ceil(INTERNAL_CAP));
        for chunk in level.chunks(INTERNAL_CAP) {
            let page_no = pages.len() as u32;
            let mut node = [0u8; NODE_SIZE];
            LittleEndian::write_u16(&mut node[0..2], NODE_INTERNAL);
            LittleEndian::write_u16(&mut node[2..4], chunk.len() as u16);
            for (s, &(key, child)) in chunk.iter().enumerate() {
                let off = INTERNAL_HEADER + s * INTERNAL_ENTRY;
                LittleEndian::write_f64(&mut node[off..off + 8], key);
                LittleEndian::write_u32(&mut node[off + 8..off + 12], child);
            }
            pages.push(node);
            parents.push((chunk[0].0, page_no));
        }
        level = parents;
    }

    let meta = TreeMeta {
        root: level[0].1,
        first_leaf: 1,
        last_leaf: leaf_count as u32,
        leaf_count: leaf_count as u32,
        height,
        entry_count: entries.len() as u64,
    };
    write_meta(&mut pages[0], &meta);

    let mut f = File::create(path)?;
    for page in &pages {
        f.write_all(page)?;
    }
    f.sync_all()?;
    Ok(meta)
}

fn write_meta(page: &mut [u8], meta: &TreeMeta) {
    LittleEndian::write_u32(&mut page[0..4], TREE_MAGIC);
    LittleEndian::write_u32(&mut page[4..8], meta.root);
    LittleEndian::write_u32(&mut page[8..12], meta.first_leaf);
    LittleEndian::write_u32(&mut page[12..16], meta.last_leaf);
    LittleEndian::write_u32(&mut page[16..20], meta.leaf_count);
    LittleEndian::write_u32(&mut page[20..24], meta.height);
    LittleEndian::write_u64(&mut page[24..32], meta.entry_count);
}

/// Parses the header page bytes.
pub fn parse_meta(page: &[u8]) -> Result<TreeMeta> {
    if page.len() < 32 {
        return Err(Error::format("tree header page too short"));
    }
    if LittleEndian::read_u32(&page[0..4]) != TREE_MAGIC {
        return Err(Error::format("not a projection tree file (bad magic)"));
    }
    Ok(TreeMeta {
        root: LittleEndian::read_u32(&page[4..8]),
        first_leaf: LittleEndian::read_u32(&page[8..12]),
        last_leaf: LittleEndian::read_u32(&page[12..16]),
        leaf_count: LittleEndian::read_u32(&page[16..20]),
        height: LittleEndian::read_u32(&page[20..24]),
        entry_count: LittleEndian::read_u64(&page[24..32]),
    })
}

/// Reads the header page straight from the file, bypassing any cache.
/// Used once when an index is opened.
pub fn read_meta_direct(path: &Path) -> Result<TreeMeta> {
    let mut f = File::open(path)?;
    let mut page = [0u8; NODE_SIZE];
    f.read_exact(&mut page)?;
    parse_meta(&page)
}

/// Read-only accessor over a leaf node's bytes.
pub struct LeafView<'a> {
    data: &'a [u8],
}

impl<'a> LeafView<'a> {
    pub fn new(data: &'a [u8]) -> Result<LeafView<'a>> {
        if data.len() < NODE_SIZE || LittleEndian::read_u16(&data[0..2]) != NODE_LEAF {
            return Err(Error::format("page is not a leaf node"));
        }
        Ok(LeafView { data })
    }

    pub fn count(&self) -> usize {
        LittleEndian::read_u16(&self.data[2..4]) as usize
    }

    pub fn prev(&self) -> Option<u32> {
        let p = LittleEndian::read_u32(&self.data[4..8]);
        (p != NO_PAGE).then_some(p)
    }

    pub fn next(&self) -> Option<u32> {
        let n = LittleEndian::read_u32(&self.data[8..12]);
        (n != NO_PAGE).then_some(n)
    }

    pub fn key(&self, slot: usize) -> f64 {
        let off = LEAF_HEADER + slot * LEAF_ENTRY;
        LittleEndian::read_f64(&self.data[off..off + 8])
    }

    pub fn id(&self, slot: usize) -> u64 {
        let off = LEAF_HEADER + slot * LEAF_ENTRY;
        LittleEndian::read_u64(&self.data[off + 8..off + 16])
    }

    /// First slot whose key is not below `key`; `count()` if none.
    pub fn lower_bound(&self, key: f64) -> usize {
        let n = self.count();
        let mut lo = 0usize;
        let mut hi = n;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.key(mid) < key {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Read-only accessor over an internal node's bytes.
pub struct InternalView<'a> {
    data: &'a [u8],
}

impl<'a> InternalView<'a> {
    pub fn new(data: &'a [u8]) -> Result<InternalView<'a>> {
        if data.len() < NODE_SIZE || LittleEndian::read_u16(&data[0..2]) != NODE_INTERNAL {
            return Err(Error::format("page is not an internal node"));
        }
        Ok(InternalView { data })
    }

    pub fn count(&self) -> usize {
        LittleEndian::read_u16(&self.data[2..4]) as usize
    }

    pub fn key(&self, slot: usize) -> f64 {
        let off = INTERNAL_HEADER + slot * INTERNAL_ENTRY;
        LittleEndian::read_f64(&self.data[off..off + 8])
    }

    pub fn child(&self, slot: usize) -> u32 {
        let off = INTERNAL_HEADER + slot * INTERNAL_ENTRY;
        LittleEndian::read_u32(&self.data[off + 8..off + 12])
    }

    /// Child to follow when seeking `key`: the last child whose minimum
    /// key does not exceed it, or the first child if all minimums do.
    pub fn child_for(&self, key: f64) -> u32 {
        let n = self.count();
        let mut lo = 0usize;
        let mut hi = n;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.key(mid) <= key {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        self.child(lo.saturating_sub(1).min(n - 1))
    }
}

/// Walks from the root to the leaf that would contain `key`, reading the
/// internal pages through the cache. Returns the leaf's page number.
pub fn descend_to_leaf(
    cache: &mut BufferCache,
    file: FileId,
    meta: &TreeMeta,
    key: f64,
) -> Result<u32> {
    let mut page_no = meta.root;
    for _ in 1..meta.height {
        let page = cache.read_page(PageId { file, page_no })?;
        let node = InternalView::new(&page)?;
        page_no = node.child_for(key);
    }
    Ok(page_no)
}
