//! Query execution: resumable tree scans, candidate verification, and
//! the top-level k-nearest-neighbor loop.
//!
//! A query anchors one scan per projection tree at its own projected
//! value and widens the scanned interval as the search radius `R` grows
//! `1, c, c^2, ...`. Each widening resumes from per-tree cursors — only
//! the newly uncovered frontier is read, never the middle again. A point
//! seen by enough trees (the collision threshold) is verified at once
//! against its exact record; the search stops when the round-end
//! condition — `k` verified points within distance `c * R` — holds, or
//! immediately once `k + slack` candidates have been verified.

use std::path::Path;
use std::time::Instant;

use crate::dataset::{neighbor_order, Neighbor, Point, QueryWorkload};
use crate::error::{Error, Result};
use crate::lsh::btree::{descend_to_leaf, LeafView};
use crate::lsh::{open_index, read_header, LshIndex, TreeHandle, MAX_K, MAX_RADIUS_ROUNDS};
use crate::storage::{BufferCache, CacheConfig, FileId, IoCounters, PageId};

/// Position of the next unvisited entry on the lower side of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeftPos {
    /// Exact slot within a leaf page.
    At(u32, u16),
    /// The last slot of this leaf page, whatever its count turns out to
    /// be. Lets a scan stop at a leaf boundary without reading the
    /// neighboring page early.
    LastOf(u32),
}

/// A bidirectional scan position in one projection tree.
///
/// The cursor remembers the frontier on both sides of the anchor; every
/// entry between the two frontiers has already been yielded exactly once.
/// Widening the interval and rescanning therefore never revisits entries
/// or re-reads interior pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanCursor {
    file: FileId,
    /// Next unvisited entry at or above the anchor; `None` once the scan
    /// has run off the high end of the tree.
    right: Option<(u32, u16)>,
    /// Next unvisited entry below the anchor; `None` off the low end.
    left: Option<LeftPos>,
}

/// Scans `[lo, hi]` in one tree, resuming from `cursor` if given.
///
/// On first call (no cursor) the scan seeks `lo`... strictly: it anchors
/// at the lowest entry with key >= `lo` and sweeps outward. On resumed
/// calls the interval must only ever widen; entries already yielded are
/// skipped by construction. Returns the point ids found (upper side in
/// ascending key order, then lower side in descending key order) and the
/// cursor to resume from.
pub fn range_scan(
    cache: &mut BufferCache,
    tree: &TreeHandle,
    lo: f64,
    hi: f64,
    cursor: Option<ScanCursor>,
) -> Result<(Vec<u64>, ScanCursor)> {
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(Error::invalid(format!("empty scan interval [{lo}, {hi}]")));
    }
    let mut cur = match cursor {
        Some(c) => {
            if c.file != tree.file {
                return Err(Error::invalid(format!(
                    "cursor belongs to {:?}, not {:?}",
                    c.file, tree.file
                )));
            }
            c
        }
        None => seek_anchor(cache, tree, lo)?,
    };
    let mut out = Vec::new();

    // Upper sweep: ascending keys until one exceeds `hi`.
    'upper: while let Some((page_no, slot)) = cur.right {
        let page = cache.read_page(PageId {
            file: tree.file,
            page_no,
        })?;
        let leaf = LeafView::new(&page)?;
        let mut s = slot as usize;
        while s < leaf.count() {
            if leaf.key(s) > hi {
                cur.right = Some((page_no, s as u16));
                break 'upper;
            }
            out.push(leaf.id(s));
            s += 1;
        }
        cur.right = leaf.next().map(|n| (n, 0));
    }

    // Lower sweep: descending keys until one drops below `lo`.
    'lower: while let Some(pos) = cur.left {
        let page_no = match pos {
            LeftPos::At(p, _) | LeftPos::LastOf(p) => p,
        };
        let page = cache.read_page(PageId {
            file: tree.file,
            page_no,
        })?;
        let leaf = LeafView::new(&page)?;
        let mut s = match pos {
            LeftPos::At(_, slot) => slot as i64,
            LeftPos::LastOf(_) => leaf.count() as i64 - 1,
        };
        while s >= 0 {
            if leaf.key(s as usize) < lo {
                cur.left = Some(LeftPos::At(page_no, s as u16));
                break 'lower;
            }
            out.push(leaf.id(s as usize));
            s -= 1;
        }
        cur.left = leaf.prev().map(LeftPos::LastOf);
    }

    Ok((out, cur))
}

/// Descends to the leaf holding the first key >= `lo` and builds the
/// initial two-sided frontier around it.
fn seek_anchor(cache: &mut BufferCache, tree: &TreeHandle, lo: f64) -> Result<ScanCursor> {
    let page_no = descend_to_leaf(cache, tree.file, &tree.meta, lo)?;
    let page = cache.read_page(PageId {
        file: tree.file,
        page_no,
    })?;
    let leaf = LeafView::new(&page)?;
    let slot = leaf.lower_bound(lo);
    let (right, left);
    if slot < leaf.count() {
        right = Some((page_no, slot as u16));
        left = if slot > 0 {
            Some(LeftPos::At(page_no, (slot - 1) as u16))
        } else {
            leaf.prev().map(LeftPos::LastOf)
        };
    } else {
        // Every key in this leaf is below `lo`; bulk-loaded leaves are
        // never empty, so the last slot exists.
        right = leaf.next().map(|n| (n, 0));
        left = Some(LeftPos::At(page_no, (leaf.count() - 1) as u16));
    }
    Ok(ScanCursor {
        file: tree.file,
        right,
        left,
    })
}

/// Fetches each candidate's record through the data partition and
/// computes its exact distance to `query`. Results are sorted by
/// `(distance, id)`.
pub fn verify_candidates(
    idx: &LshIndex,
    cache: &mut BufferCache,
    query: &[f64],
    ids: &[u64],
) -> Result<Vec<Neighbor>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        out.push(verify_one(idx, cache, query, id)?);
    }
    out.sort_by(neighbor_order);
    Ok(out)
}

fn verify_one(idx: &LshIndex, cache: &mut BufferCache, query: &[f64], id: u64) -> Result<Neighbor> {
    if id >= idx.header.n {
        return Err(Error::invalid(format!(
            "candidate id {id} out of range for {} records",
            idx.header.n
        )));
    }
    let bytes = cache.read_range(FileId::Data, idx.record_offset(id), idx.record_len())?;
    let mut acc = 0.0;
    for (chunk, &qv) in bytes.chunks_exact(8).zip(query) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        let diff = v - qv;
        acc += diff * diff;
    }
    Ok(Neighbor {
        id,
        dist: acc.sqrt(),
    })
}

/// Per-query measurements reported alongside the neighbors.
#[derive(Debug, Clone, Copy)]
pub struct QueryStats {
    /// How many candidates were verified against their exact records.
    pub candidates_verified: usize,
    /// Search radius when the query terminated.
    pub final_radius: f64,
    /// Number of radius rounds executed.
    pub rounds: u32,
    /// Cache counter growth attributable to this query.
    pub io: IoCounters,
}

/// Neighbors plus measurements for one query.
#[derive(Debug, Clone)]
pub struct QueryResult {
    /// At most `k` neighbors ordered by `(distance, id)`; fewer only if
    /// the dataset itself holds fewer than `k` points.
    pub neighbors: Vec<Neighbor>,
    pub stats: QueryStats,
}

/// Runs one c-approximate k-nearest-neighbor query.
///
/// Collision counts accumulate across rounds in one array per query;
/// a point crossing the collision threshold is verified immediately.
/// Termination: at the end of a round, `k` verified points within
/// `c * R`; at any moment, the `k + slack` verification budget; or the
/// radius cap, after which the highest-count points are verified and, if
/// still short, the lowest ids fill in — so the result always has
/// `min(k, n)` entries.
pub fn knn_query(
    idx: &LshIndex,
    cache: &mut BufferCache,
    query: &Point,
    k: usize,
) -> Result<QueryResult> {
    if k == 0 || k > MAX_K {
        return Err(Error::invalid(format!("k={k} out of range 1..={MAX_K}")));
    }
    if query.coords.len() != idx.d() {
        return Err(Error::invalid(format!(
            "query has {} coordinates, index is {}-dimensional",
            query.coords.len(),
            idx.d()
        )));
    }
    let io_before = cache.io_report();
    let params = idx.params;
    let m = params.num_projections;
    let n = idx.n();
    let k_eff = k.min(n);
    let budget = k + params.candidate_slack;

    let anchors: Vec<f64> = (0..m)
        .map(|i| idx.project(i, &query.coords))
        .collect::<Result<_>>()?;
    let mut cursors: Vec<Option<ScanCursor>> = vec![None; m];
    let mut counts = vec![0u32; n];
    let mut is_verified = vec![false; n];
    let mut verified: Vec<Neighbor> = Vec::new();

    let threshold = params.collision_threshold as u32;
    let mut radius = 1.0f64;
    let mut rounds = 0u32;
    let mut budget_hit = false;

    'search: loop {
        rounds += 1;
        for i in 0..m {
            let (lo, hi) = (anchors[i] - radius / 2.0, anchors[i] + radius / 2.0);
            let (ids, cur) = range_scan(cache, idx.tree(i), lo, hi, cursors[i].take())?;
            cursors[i] = Some(cur);
            for id in ids {
                let c = &mut counts[id as usize];
                *c += 1;
                if *c == threshold && !is_verified[id as usize] {
                    is_verified[id as usize] = true;
                    verified.push(verify_one(idx, cache, &query.coords, id)?);
                    if verified.len() >= budget {
                        budget_hit = true;
                        break 'search;
                    }
                }
            }
        }
        // Round-end check: enough verified points already within the
        // ball the current radius vouches for?
        let within = verified
            .iter()
            .filter(|nb| nb.dist <= params.c * radius)
            .count();
        if within >= k_eff {
            break;
        }
        if rounds >= MAX_RADIUS_ROUNDS {
            // Radius cap: spend the remaining budget on the points with
            // the most collisions, then pad by id if still short.
            let mut rest: Vec<(u32, u64)> = (0..n)
                .filter(|&id| !is_verified[id] && counts[id] > 0)
                .map(|id| (counts[id], id as u64))
                .collect();
            rest.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, id) in rest {
                if verified.len() >= budget {
                    break;
                }
                is_verified[id as usize] = true;
                verified.push(verify_one(idx, cache, &query.coords, id)?);
            }
            let mut id = 0usize;
            while verified.len() < k_eff && id < n {
                if !is_verified[id] {
                    is_verified[id] = true;
                    verified.push(verify_one(idx, cache, &query.coords, id as u64)?);
                }
                id += 1;
            }
            break;
        }
        radius *= params.c;
    }
    debug_assert!(verified.len() <= params.max_candidates || budget_hit);

    let candidates_verified = verified.len();
    verified.sort_by(neighbor_order);
    verified.truncate(k_eff);
    Ok(QueryResult {
        neighbors: verified,
        stats: QueryStats {
            candidates_verified,
            final_radius: radius,
            rounds,
            io: cache.io_report().since(&io_before),
        },
    })
}

/// Result of running a whole workload against one cache configuration.
#[derive(Debug, Clone)]
pub struct WorkloadRun {
    /// Cache counters accumulated over the workload (from a cold cache).
    pub io: IoCounters,
    /// Wall-clock time of the query loop, in milliseconds.
    pub wall_ms: f64,
    pub per_query: Vec<QueryStats>,
    pub n: usize,
    pub d: usize,
    pub num_projections: usize,
}

/// Opens the index at `dir` under `cfg`, resets the cache cold, and runs
/// every query of the workload in order, accumulating exact I/O counts.
/// This is the one measured execution path; training, sweeps, and
/// benchmark alternatives all call it.
pub fn execute_workload(dir: &Path, cfg: &CacheConfig, wl: &QueryWorkload) -> Result<WorkloadRun> {
    let header = read_header(dir)?;
    let mut cache = BufferCache::configure(*cfg, header.m as usize)?;
    let idx = open_index(dir, &mut cache)?;
    cache.reset();

    let mut per_query = Vec::with_capacity(wl.queries.len());
    let start = Instant::now();
    for q in &wl.queries {
        let r = knn_query(&idx, &mut cache, q, wl.k)?;
        per_query.push(r.stats);
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(WorkloadRun {
        io: cache.io_report(),
        wall_ms,
        per_query,
        n: idx.n(),
        d: idx.d(),
        num_projections: idx.num_projections(),
    })
}
