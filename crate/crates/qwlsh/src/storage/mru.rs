//! Single-partition page cache with most-recently-used eviction.
//!
//! Index scans during radius growth sweep outward from a fixed anchor, so
//! the page just touched is the one *least* likely to be needed again
//! before the untouched frontier pages are. Evicting the most recently
//! used resident page therefore keeps the older anchor-adjacent pages
//! resident, which is the opposite call an LRU would make.
//!
//! The structure is a doubly-linked recency list threaded through a slab,
//! plus a hash map from page id to slab slot, giving O(1) lookup, O(1)
//! recency promotion, and O(1) eviction.

use std::collections::HashMap;
use std::sync::Arc;

use super::PageId;

const NIL: usize = usize::MAX;

struct Node {
    pid: PageId,
    page: Arc<[u8]>,
    prev: usize,
    next: usize,
}

/// A bounded page store that evicts the most recently used page when full.
pub struct MruCache {
    capacity: usize,
    map: HashMap<PageId, usize>,
    nodes: Vec<Node>,
    free: Vec<usize>,
    /// Most recent end of the recency list.
    head: usize,
}

impl MruCache {
    /// Creates a cache holding at most `capacity` pages.
    ///
    /// # Panics
    /// Panics if `capacity` is zero; partition sizing upstream guarantees
    /// at least one page per partition.
    pub fn new(capacity: usize) -> MruCache {
        assert!(capacity > 0, "cache partition needs at least one page");
        MruCache {
            capacity,
            map: HashMap::with_capacity(capacity),
            nodes: Vec::with_capacity(capacity),
            free: Vec::new(),
            head: NIL,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, pid: &PageId) -> bool {
        self.map.contains_key(pid)
    }

    /// Looks up a page; a hit promotes it to most-recent and returns a
    /// shared handle to its bytes.
    pub fn get(&mut self, pid: &PageId) -> Option<Arc<[u8]>> {
        let &slot = self.map.get(pid)?;
        self.unlink(slot);
        self.push_front(slot);
        Some(Arc::clone(&self.nodes[slot].page))
    }

    /// Inserts a page that is not currently resident, evicting the most
    /// recently used page first if the cache is full. The new page becomes
    /// the most recent.
    ///
    /// # Panics
    /// Panics if `pid` is already resident; callers look up before
    /// inserting.
    pub fn insert(&mut self, pid: PageId, page: Arc<[u8]>) {
        assert!(
            !self.map.contains_key(&pid),
            "page inserted while already resident"
        );
        if self.map.len() == self.capacity {
            self.evict_most_recent();
        }
        let slot = match self.free.pop() {
            Some(s) => {
                self.nodes[s] = Node {
                    pid,
                    page,
                    prev: NIL,
                    next: NIL,
                };
                s
            }
            None => {
                self.nodes.push(Node {
                    pid,
                    page,
                    prev: NIL,
                    next: NIL,
                });
                self.nodes.len() - 1
            }
        };
        self.map.insert(pid, slot);
        self.push_front(slot);
    }

    /// Drops every resident page, keeping the capacity.
    pub fn clear(&mut self) {
        self.map.clear();
        self.nodes.clear();
        self.free.clear();
        self.head = NIL;
    }

    /// Resident page ids from most to least recent. Test and debugging
    /// aid; not used on the query path.
    pub fn resident_ids(&self) -> Vec<PageId> {
        let mut out = Vec::with_capacity(self.map.len());
        let mut cur = self.head;
        while cur != NIL {
            out.push(self.nodes[cur].pid);
            cur = self.nodes[cur].next;
        }
        out
    }

    fn evict_most_recent(&mut self) {
        debug_assert!(self.head != NIL);
        let slot = self.head;
        self.unlink(slot);
        let pid = self.nodes[slot].pid;
        self.map.remove(&pid);
        // Drop the page bytes now; the slot is recycled on the next insert.
        self.nodes[slot].page = Arc::from(Vec::new());
        self.free.push(slot);
    }

    fn unlink(&mut self, slot: usize) {
        let (prev, next) = (self.nodes[slot].prev, self.nodes[slot].next);
        if prev != NIL {
            self.nodes[prev].next = next;
        } else if self.head == slot {
            self.head = next;
        }
        if next != NIL {
            self.nodes[next].prev = prev;
        }
        self.nodes[slot].prev = NIL;
        self.nodes[slot].next = NIL;
    }

    fn push_front(&mut self, slot: usize) {
        self.nodes[slot].next = self.head;
        self.nodes[slot].prev = NIL;
        if self.head != NIL {
            self.nodes[self.head].prev = slot;
        }
        self.head = slot;
    }
}
