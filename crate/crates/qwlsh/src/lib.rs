//! External-memory engine for c-approximate k-nearest-neighbor search.
//!
//! Points are indexed under a family of random line projections, one paged
//! B+-tree per projection, and queried by collision counting with a
//! geometrically growing search radius. Every page the query path touches
//! flows through a partitioned buffer cache that splits its capacity
//! between index pages and data pages; the split can be picked per dataset
//! shape by an offline-trained cost model.
//!
//! Module map:
//!
//! * [`dataset`] — in-memory point sets, file loaders, query workloads, and
//!   the exact k-NN reference scan.
//! * [`storage`] — the partitioned MRU buffer cache and its I/O accounting.
//! * [`lsh`] — hash family, parameter derivation, and index build/open.
//! * [`query`] — range scans with resumable cursors, candidate
//!   verification, and the top-level k-NN search loop.
//! * [`costmodel`] — offline sweep training and cache-split lookup.
//! * [`bench`] — workload runners, alternative configurations, CSV output.

pub mod bench;
pub mod costmodel;
pub mod dataset;
pub mod error;
pub mod lsh;
pub mod query;
pub mod storage;

pub use error::{Error, Result};
