//! Partitioned buffer cache with exact I/O accounting.
//!
//! All disk pages read on the query path pass through a [`BufferCache`].
//! Its capacity is split into an index partition (projection-tree pages)
//! and a data partition (point records); the index partition can in turn
//! be divided evenly among the projection trees, giving three layouts:
//!
//! * [`Strategy::PerProjection`] — one sub-cache per projection tree plus
//!   one data partition, so no tree can flush another tree's pages.
//! * [`Strategy::SharedIndex`] — a single index partition shared by all
//!   trees, plus the data partition.
//! * [`Strategy::Unified`] — no split at all; index and data pages compete
//!   for the same frames.
//!
//! Every partition evicts its most-recently-used page (see [`mru`]), and
//! the cache counts bytes actually read from disk, classified by file
//! kind, so runs can be compared by exact I/O rather than wall time.

pub mod mru;

use std::collections::HashMap;
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use mru::MruCache;

/// Identifies one backing file of an index directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FileId {
    /// Projection tree `i`.
    Proj(u32),
    /// The packed point-record file.
    Data,
}

impl FileId {
    fn is_index(&self) -> bool {
        matches!(self, FileId::Proj(_))
    }
}

/// One fixed-size page of one backing file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageId {
    pub file: FileId,
    pub page_no: u32,
}

/// How cache capacity is split between index and data pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Index partition divided evenly among the projection trees.
    PerProjection,
    /// One shared index partition for all projection trees.
    SharedIndex,
    /// Single partition; index and data pages share all frames.
    Unified,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::PerProjection => write!(f, "1"),
            Strategy::SharedIndex => write!(f, "2"),
            Strategy::Unified => write!(f, "unified"),
        }
    }
}

/// Sizing and layout of a [`BufferCache`].
#[derive(Debug, Clone, Copy)]
pub struct CacheConfig {
    /// Total capacity in bytes.
    pub total_bytes: usize,
    /// Fraction of the page budget given to the index partition
    /// (ignored under [`Strategy::Unified`]).
    pub index_fraction: f64,
    pub strategy: Strategy,
    /// Page size in bytes.
    pub page_size: usize,
}

/// 16 MB: enough for a few thousand 4 KB pages.
pub const DEFAULT_CACHE_BYTES: usize = 16 * 1024 * 1024;
/// Page size matching the projection-tree node size.
pub const DEFAULT_PAGE_SIZE: usize = 4096;

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            total_bytes: DEFAULT_CACHE_BYTES,
            index_fraction: 0.5,
            strategy: Strategy::PerProjection,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

/// Bytes read from disk and cache hits, classified by file kind.
/// `*_io_bytes` grow only on cache misses; hits cost nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoCounters {
    pub index_io_bytes: u64,
    pub data_io_bytes: u64,
    pub index_hits: u64,
    pub data_hits: u64,
}

impl IoCounters {
    pub fn total_io_bytes(&self) -> u64 {
        self.index_io_bytes + self.data_io_bytes
    }

    /// Counter growth since an earlier snapshot.
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        IoCounters {
            index_io_bytes: self.index_io_bytes - earlier.index_io_bytes,
            data_io_bytes: self.data_io_bytes - earlier.data_io_bytes,
            index_hits: self.index_hits - earlier.index_hits,
            data_hits: self.data_hits - earlier.data_hits,
        }
    }
}

struct RegisteredFile {
    file: File,
    len: u64,
    pages: u32,
}

/// The partitioned page cache. Files are registered once (typically when
/// an index is opened); afterwards all reads go through [`Self::read_page`]
/// or [`Self::read_range`] and are counted.
pub struct BufferCache {
    cfg: CacheConfig,
    /// Number of projection trees the layout was sized for.
    m: usize,
    /// Partition layout depends on the strategy:
    /// `PerProjection` -> `[tree 0, .., tree m-1, data]`,
    /// `SharedIndex`   -> `[index, data]`,
    /// `Unified`       -> `[all]`.
    partitions: Vec<MruCache>,
    files: HashMap<FileId, RegisteredFile>,
    counters: IoCounters,
}

impl BufferCache {
    /// Lays out the partitions for a cache serving `m` projection trees.
    ///
    /// The page budget is `total_bytes / page_size` (rounded down). Under
    /// the split strategies the index partition receives
    /// `floor(budget * index_fraction)` pages, clamped so every partition
    /// keeps at least one page — which under `PerProjection` means at
    /// least `m` index pages, since each sub-cache needs its own. The
    /// index pages are then divided evenly among the `m` sub-caches with
    /// any remainder going one page each to the first sub-caches.
    pub fn configure(cfg: CacheConfig, m: usize) -> Result<BufferCache> {
        if cfg.page_size == 0 {
            return Err(Error::invalid("page_size must be positive"));
        }
        if m == 0 {
            return Err(Error::invalid("cache needs at least one projection tree"));
        }
        if !matches!(cfg.strategy, Strategy::Unified)
            && !(0.01..=0.99).contains(&cfg.index_fraction)
        {
            return Err(Error::invalid(format!(
                "index_fraction {} outside [0.01, 0.99]",
                cfg.index_fraction
            )));
        }
        let budget = cfg.total_bytes / cfg.page_size;
        let partitions = match cfg.strategy {
            Strategy::Unified => {
                if budget < 1 {
                    return Err(Error::invalid(format!(
                        "cache of {} bytes holds no {}-byte page",
                        cfg.total_bytes, cfg.page_size
                    )));
                }
                vec![MruCache::new(budget)]
            }
            Strategy::SharedIndex | Strategy::PerProjection => {
                if budget < 2 {
                    return Err(Error::invalid(format!(
                        "cache of {} bytes cannot hold one index and one data page",
                        cfg.total_bytes
                    )));
                }
                // The small epsilon keeps exact products like 10 * 0.3
                // from landing just below the integer they equal.
                let raw = (budget as f64 * cfg.index_fraction + 1e-9).floor() as usize;
                let mut ci = raw.clamp(1, budget - 1);
                match cfg.strategy {
                    Strategy::SharedIndex => {
                        let cd = budget - ci;
                        vec![MruCache::new(ci), MruCache::new(cd)]
                    }
                    Strategy::PerProjection => {
                        if budget < m + 1 {
                            return Err(Error::invalid(format!(
                                "cache of {budget} pages cannot give {m} projection \
                                 trees and the data partition a page each"
                            )));
                        }
                        // Tiny fractions still owe every sub-cache a page,
                        // mirroring the data partition's one-page minimum
                        // at the other extreme.
                        ci = ci.max(m);
                        let cd = budget - ci;
                        let base = ci / m;
                        let rem = ci % m;
                        let mut parts = Vec::with_capacity(m + 1);
                        for i in 0..m {
                            parts.push(MruCache::new(base + usize::from(i < rem)));
                        }
                        parts.push(MruCache::new(cd));
                        parts
                    }
                    Strategy::Unified => unreachable!(),
                }
            }
        };
        Ok(BufferCache {
            cfg,
            m,
            partitions,
            files: HashMap::new(),
            counters: IoCounters::default(),
        })
    }

    pub fn page_size(&self) -> usize {
        self.cfg.page_size
    }

    pub fn strategy(&self) -> Strategy {
        self.cfg.strategy
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    /// Number of projection trees the partition layout serves.
    pub fn tree_slots(&self) -> usize {
        self.m
    }

    /// Page capacities of the partitions, in layout order.
    pub fn partition_capacities(&self) -> Vec<usize> {
        self.partitions.iter().map(|p| p.capacity()).collect()
    }

    /// Opens `path` and makes its pages addressable as `id`.
    pub fn register_file(&mut self, id: FileId, path: &Path) -> Result<()> {
        if self.files.contains_key(&id) {
            return Err(Error::invalid(format!("file {id:?} already registered")));
        }
        // Reject ids the partition layout cannot route.
        self.partition_of(id)?;
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let pages = len.div_ceil(self.cfg.page_size as u64) as u32;
        self.files.insert(id, RegisteredFile { file, len, pages });
        Ok(())
    }

    /// Length in bytes of a registered file.
    pub fn file_len(&self, id: FileId) -> Option<u64> {
        self.files.get(&id).map(|f| f.len)
    }

    /// Number of pages of a registered file.
    pub fn file_pages(&self, id: FileId) -> Option<u32> {
        self.files.get(&id).map(|f| f.pages)
    }

    /// Reads one page, serving it from the cache when resident. A miss
    /// reads the page from disk, adds `page_size` to the matching I/O
    /// counter, and inserts the page into its partition (evicting the
    /// partition's most-recently-used page if full).
    pub fn read_page(&mut self, pid: PageId) -> Result<Arc<[u8]>> {
        let part = self.partition_of(pid.file)?;
        let (len, pages) = {
            let f = self
                .files
                .get(&pid.file)
                .ok_or_else(|| Error::invalid(format!("file {:?} not registered", pid.file)))?;
            (f.len, f.pages)
        };
        if pid.page_no >= pages {
            return Err(Error::invalid(format!(
                "page {} out of range for file {:?} with {} pages",
                pid.page_no, pid.file, pages
            )));
        }
        if let Some(bytes) = self.partitions[part].get(&pid) {
            if pid.file.is_index() {
                self.counters.index_hits += 1;
            } else {
                self.counters.data_hits += 1;
            }
            return Ok(bytes);
        }
        let ps = self.cfg.page_size;
        let offset = pid.page_no as u64 * ps as u64;
        let avail = (len - offset).min(ps as u64) as usize;
        let mut buf = vec![0u8; ps];
        let f = self.files.get(&pid.file).unwrap();
        f.file.read_exact_at(&mut buf[..avail], offset)?;
        let bytes: Arc<[u8]> = Arc::from(buf);
        if pid.file.is_index() {
            self.counters.index_io_bytes += ps as u64;
        } else {
            self.counters.data_io_bytes += ps as u64;
        }
        self.partitions[part].insert(pid, Arc::clone(&bytes));
        Ok(bytes)
    }

    /// Reads an arbitrary byte range by assembling it from cached pages.
    pub fn read_range(&mut self, file: FileId, offset: u64, len: usize) -> Result<Vec<u8>> {
        let flen = self
            .files
            .get(&file)
            .ok_or_else(|| Error::invalid(format!("file {file:?} not registered")))?
            .len;
        if offset + len as u64 > flen {
            return Err(Error::invalid(format!(
                "range {offset}+{len} past end of file {file:?} ({flen} bytes)"
            )));
        }
        if len == 0 {
            return Ok(Vec::new());
        }
        let ps = self.cfg.page_size as u64;
        let first = (offset / ps) as u32;
        let last = ((offset + len as u64 - 1) / ps) as u32;
        let mut out = Vec::with_capacity(len);
        for page_no in first..=last {
            let page = self.read_page(PageId { file, page_no })?;
            let page_start = page_no as u64 * ps;
            let s = offset.max(page_start) - page_start;
            let e = (offset + len as u64).min(page_start + ps) - page_start;
            out.extend_from_slice(&page[s as usize..e as usize]);
        }
        Ok(out)
    }

    /// Current counter values.
    pub fn io_report(&self) -> IoCounters {
        self.counters
    }

    /// Empties every partition and zeroes the counters, keeping the
    /// layout and file registrations. Used to start each measured run
    /// from a cold cache.
    pub fn reset(&mut self) {
        for p in &mut self.partitions {
            p.clear();
        }
        self.counters = IoCounters::default();
    }

    /// True if the page is resident right now (test and debugging aid).
    pub fn is_resident(&self, pid: &PageId) -> bool {
        self.partition_of(pid.file)
            .map(|part| self.partitions[part].contains(pid))
            .unwrap_or(false)
    }

    fn partition_of(&self, file: FileId) -> Result<usize> {
        match (self.cfg.strategy, file) {
            (Strategy::Unified, _) => Ok(0),
            (Strategy::SharedIndex, FileId::Proj(_)) => Ok(0),
            (Strategy::SharedIndex, FileId::Data) => Ok(1),
            (Strategy::PerProjection, FileId::Proj(i)) => {
                if (i as usize) < self.m {
                    Ok(i as usize)
                } else {
                    Err(Error::invalid(format!(
                        "projection {i} out of range for a cache laid out for {} trees",
                        self.m
                    )))
                }
            }
            (Strategy::PerProjection, FileId::Data) => Ok(self.m),
        }
    }
}
