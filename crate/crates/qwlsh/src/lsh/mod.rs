//! Hash family, search parameters, and index build/open.
//!
//! Each of `m` hash functions projects a point onto a random line:
//! `h(v) = (a . v + b) / width` with `a` standard normal and `b` uniform
//! in `[0, width)`. Projected values are stored *unfloored* in one paged
//! B+-tree per function, so at query time the bucket of width `radius`
//! anchored at the query's own projection can be scanned directly —
//! growing the radius is a wider tree scan, not a rehash.
//!
//! Two points at distance `r` land within one width-`width` bucket with
//! probability [`collision_probability`]`(r, width)`; the near/far values
//! `p1 = P(1)` and `p2 = P(c)` drive how many functions are needed and how
//! many collisions mark a candidate (see [`derive_params`]).
//!
//! On disk an index directory holds:
//!
//! * `header` — magic `QWL1`, then `n`, `d`, `m` (little-endian `u64`),
//!   `c`, `width`, `delta` (`f64`), and the build `seed` (`u64`).
//! * `proj_<i>.tree` — one B+-tree per hash function mapping projected
//!   value to point id.
//! * `data.bin` — the `n` point records, each `d` little-endian `f64`s,
//!   packed in id order.

pub mod btree;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{Dataset, Point};
use crate::error::{Error, Result};
use crate::storage::{BufferCache, FileId, Strategy};
use btree::{TreeMeta, NODE_SIZE};

/// Default approximation ratio.
pub const DEFAULT_RATIO: f64 = 2.0;
/// Default projection bucket width.
pub const DEFAULT_WIDTH: f64 = 2.719;
/// Largest `k` a single query may ask for.
pub const MAX_K: usize = 100;
/// How many verified candidates beyond `k` a query may spend on false
/// positives before it must stop.
pub const CANDIDATE_SLACK: usize = 100;
/// The search radius grows geometrically by `c`; give up after this many
/// rounds and fall back to the highest-collision candidates.
pub const MAX_RADIUS_ROUNDS: u32 = 30;

/// Default failure probability `1/e`.
pub fn default_delta() -> f64 {
    (-1.0f64).exp()
}

/// Probability that two points at distance `r` fall into the same
/// width-`width` bucket under one random projection:
///
/// `P(r) = integral over 0..width of
///     (1/r) * (2/sqrt(2*pi)) * exp(-t^2 / (2 r^2)) * (1 - t/width) dt`
///
/// evaluated by adaptive Simpson quadrature to an absolute tolerance of
/// `1e-6`. Strictly decreasing in `r`.
pub fn collision_probability(r: f64, width: f64) -> Result<f64> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(r) || !positive(width) {
        return Err(Error::invalid(format!(
            "collision probability needs r > 0 and width > 0 (got r={r}, width={width})"
        )));
    }
    let norm = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
    let inv_2r2 = 1.0 / (2.0 * r * r);
    let f = |t: f64| (1.0 / r) * norm * (-t * t * inv_2r2).exp() * (1.0 - t / width);
    Ok(adaptive_simpson(&f, 0.0, width, 1e-6))
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` with absolute
/// tolerance `eps`: intervals are split until the two-panel estimate
/// agrees with the one-panel estimate to within `15 * eps`.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn panel(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = panel(f, a, fa, m, fm);
        let (right, rm, frm) = panel(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, eps / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, eps / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = panel(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, eps, 48)
}

/// Everything the query loop needs to know about the hash family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LshParams {
    /// Approximation ratio; answers may be up to `c` times farther than
    /// the true neighbors.
    pub c: f64,
    /// Projection bucket width.
    pub width: f64,
    /// Target failure probability of the collision-counting test.
    pub delta: f64,
    /// Collision probability of points at distance 1.
    pub p1: f64,
    /// Collision probability of points at distance `c`.
    pub p2: f64,
    /// Counting threshold as a fraction of `m`: midway between `p1` and
    /// `p2`.
    pub alpha: f64,
    /// Number of hash functions / projection trees.
    pub num_projections: usize,
    /// A point becomes a candidate once this many projections have seen
    /// it collide with the query.
    pub collision_threshold: usize,
    /// Verification budget beyond `k` (see [`CANDIDATE_SLACK`]).
    pub candidate_slack: usize,
    /// Hard cap on verified candidates per query: `MAX_K + slack`.
    pub max_candidates: usize,
}

impl LshParams {
    /// Derives the thresholds for a *given* number of projections. Used
    /// when reopening an index whose `m` is already fixed.
    pub fn with_projections(c: f64, width: f64, delta: f64, m: usize) -> Result<LshParams> {
        if c.is_nan() || c <= 1.0 {
            return Err(Error::invalid(format!("ratio c must exceed 1 (got {c})")));
        }
        if delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::invalid(format!(
                "failure probability must lie in (0, 1) (got {delta})"
            )));
        }
        if m == 0 {
            return Err(Error::invalid("need at least one projection"));
        }
        let p1 = collision_probability(1.0, width)?;
        let p2 = collision_probability(c, width)?;
        let alpha = 0.5 * (p1 + p2);
        let collision_threshold = (alpha * m as f64).ceil() as usize;
        Ok(LshParams {
            c,
            width,
            delta,
            p1,
            p2,
            alpha,
            num_projections: m,
            collision_threshold,
            candidate_slack: CANDIDATE_SLACK,
            max_candidates: MAX_K + CANDIDATE_SLACK,
        })
    }
}

/// Derives the full parameter set from the approximation ratio, bucket
/// width, and failure probability.
///
/// With threshold fraction `alpha` midway between `p1` and `p2`, a
/// Chernoff bound keeps both error directions below `delta` once
/// `m = ceil( ln(1/delta) / (2 (p1 - alpha)^2) )` projections vote.
pub fn derive_params(c: f64, width: f64, delta: f64) -> Result<LshParams> {
    // Validate via a throwaway call so the error cases match.
    let probe = LshParams::with_projections(c, width, delta, 1)?;
    let gap = probe.p1 - probe.alpha;
    let m = ((1.0 / delta).ln() / (2.0 * gap * gap)).ceil() as usize;
    LshParams::with_projections(c, width, delta, m.max(1))
}

/// One random-line hash function.
#[derive(Debug, Clone)]
pub struct HashFunction {
    /// Projection direction, one standard-normal coefficient per
    /// dimension.
    pub a: Vec<f64>,
    /// Offset, uniform in `[0, width)`.
    pub b: f64,
    /// Bucket width (the divisor).
    pub width: f64,
}

impl HashFunction {
    /// Projects a point: `(a . v + b) / width`. The value is *not*
    /// floored; trees store it as-is.
    pub fn project(&self, coords: &[f64]) -> Result<f64> {
        if coords.len() != self.a.len() {
            return Err(Error::invalid(format!(
                "point has {} coordinates, hash function expects {}",
                coords.len(),
                self.a.len()
            )));
        }
        let mut dot = 0.0;
        for (ai, vi) in self.a.iter().zip(coords) {
            dot += ai * vi;
        }
        Ok((dot + self.b) / self.width)
    }
}

/// Draws the `m` hash functions for a `d`-dimensional index. One seed
/// fully determines the family, so reopening an index reconstructs the
/// very same functions from the seed stored in its header.
pub fn sample_functions(seed: u64, m: usize, d: usize, width: f64) -> Vec<HashFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = Uniform::from(0.0..width);
    (0..m)
        .map(|_| {
            let a: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b = offset.sample(&mut rng);
            HashFunction { a, b, width }
        })
        .collect()
}

/// "QWL1"
const INDEX_MAGIC: [u8; 4] = *b"QWL1";

/// The fixed-size `header` file of an index directory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexHeader {
    pub n: u64,
    pub d: u64,
    pub m: u64,
    pub c: f64,
    pub width: f64,
    pub delta: f64,
    pub seed: u64,
}

/// Path of projection tree `i` inside an index directory.
pub fn proj_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("proj_{i}.tree"))
}

/// Path of the packed point-record file.
pub fn data_path(dir: &Path) -> PathBuf {
    dir.join("data.bin")
}

/// Path of the index header file.
pub fn header_path(dir: &Path) -> PathBuf {
    dir.join("header")
}

/// Writes the header file. Done last during a build, so a readable
/// header implies the rest of the directory is complete.
pub fn write_header(dir: &Path, h: &IndexHeader) -> Result<()> {
    let mut w = BufWriter::new(File::create(header_path(dir))?);
    w.write_all(&INDEX_MAGIC)?;
    w.write_u64::<LittleEndian>(h.n)?;
    w.write_u64::<LittleEndian>(h.d)?;
    w.write_u64::<LittleEndian>(h.m)?;
    w.write_f64::<LittleEndian>(h.c)?;
    w.write_f64::<LittleEndian>(h.width)?;
    w.write_f64::<LittleEndian>(h.delta)?;
    w.write_u64::<LittleEndian>(h.seed)?;
    w.flush()?;
    Ok(())
}

/// Reads and validates the header file of an index directory.
pub fn read_header(dir: &Path) -> Result<IndexHeader> {
    let mut r = File::open(header_path(dir))?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != INDEX_MAGIC {
        return Err(Error::format(format!(
            "not an index directory: bad header magic in {}",
            dir.display()
        )));
    }
    let h = IndexHeader {
        n: r.read_u64::<LittleEndian>()?,
        d: r.read_u64::<LittleEndian>()?,
        m: r.read_u64::<LittleEndian>()?,
        c: r.read_f64::<LittleEndian>()?,
        width: r.read_f64::<LittleEndian>()?,
        delta: r.read_f64::<LittleEndian>()?,
        seed: r.read_u64::<LittleEndian>()?,
    };
    if h.n == 0 || h.d == 0 || h.m == 0 {
        return Err(Error::format(format!(
            "index header declares an empty index: n={}, d={}, m={}",
            h.n, h.d, h.m
        )));
    }
    Ok(h)
}

/// One projection tree as seen by the query layer.
#[derive(Debug, Clone, Copy)]
pub struct TreeHandle {
    pub file: FileId,
    pub meta: TreeMeta,
}

/// An opened index: parameters, the reconstructed hash family, and the
/// tree metadata. Page access itself goes through the [`BufferCache`] the
/// index was opened against.
pub struct LshIndex {
    pub header: IndexHeader,
    pub params: LshParams,
    functions: Vec<HashFunction>,
    trees: Vec<TreeHandle>,
}

impl LshIndex {
    pub fn n(&self) -> usize {
        self.header.n as usize
    }

    pub fn d(&self) -> usize {
        self.header.d as usize
    }

    pub fn num_projections(&self) -> usize {
        self.functions.len()
    }

    pub fn tree(&self, i: usize) -> &TreeHandle {
        &self.trees[i]
    }

    /// Projection of `coords` under hash function `i`.
    pub fn project(&self, i: usize, coords: &[f64]) -> Result<f64> {
        self.functions[i].project(coords)
    }

    /// Byte offset of point `id`'s record inside `data.bin`.
    pub fn record_offset(&self, id: u64) -> u64 {
        id * self.header.d * 8
    }

    /// Byte length of one point record.
    pub fn record_len(&self) -> usize {
        self.header.d as usize * 8
    }
}

/// Builds a complete index directory for `ds`: one projection tree per
/// hash function, the packed record file, and the header (written last).
/// Rebuilding with the same dataset, parameters, and seed reproduces the
/// directory byte for byte.
pub fn build_index(ds: &Dataset, params: &LshParams, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = params.num_projections;
    let functions = sample_functions(seed, m, ds.d(), params.width);

    // One tree per function; independent, so build them in parallel.
    functions
        .par_iter()
        .enumerate()
        .try_for_each(|(i, h)| -> Result<()> {
            let mut entries = Vec::with_capacity(ds.n());
            for id in 0..ds.n() {
                entries.push((h.project(ds.coords_of(id))?, id as u64));
            }
            btree::build_tree(&proj_path(dir, i), entries)?;
            Ok(())
        })?;

    let mut w = BufWriter::new(File::create(data_path(dir))?);
    for id in 0..ds.n() {
        for &v in ds.coords_of(id) {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;

    write_header(
        dir,
        &IndexHeader {
            n: ds.n() as u64,
            d: ds.d() as u64,
            m: m as u64,
            c: params.c,
            width: params.width,
            delta: params.delta,
            seed,
        },
    )
}

/// Opens an index directory against a buffer cache: validates the
/// header, reconstructs the hash family from the stored seed, reads each
/// tree's metadata, and registers every file with the cache. All
/// subsequent page access is through the cache and is counted.
pub fn open_index(dir: &Path, cache: &mut BufferCache) -> Result<LshIndex> {
    let header = read_header(dir)?;
    let m = header.m as usize;
    if cache.page_size() != NODE_SIZE {
        return Err(Error::invalid(format!(
            "cache page size {} does not match the {NODE_SIZE}-byte tree nodes",
            cache.page_size()
        )));
    }
    if cache.strategy() == Strategy::PerProjection && cache.tree_slots() != m {
        return Err(Error::invalid(format!(
            "cache laid out for {} trees cannot serve an index with {m}",
            cache.tree_slots()
        )));
    }
    let params = LshParams::with_projections(header.c, header.width, header.delta, m)?;
    let functions = sample_functions(header.seed, m, header.d as usize, header.width);

    let mut trees = Vec::with_capacity(m);
    for i in 0..m {
        let path = proj_path(dir, i);
        let meta = btree::read_meta_direct(&path)?;
        if meta.entry_count != header.n {
            return Err(Error::format(format!(
                "tree {i} holds {} entries, header says {}",
                meta.entry_count, header.n
            )));
        }
        cache.register_file(FileId::Proj(i as u32), &path)?;
        trees.push(TreeHandle {
            file: FileId::Proj(i as u32),
            meta,
        });
    }
    let dpath = data_path(dir);
    cache.register_file(FileId::Data, &dpath)?;
    let expect = header.n * header.d * 8;
    let got = cache.file_len(FileId::Data).unwrap_or(0);
    if got != expect {
        return Err(Error::format(format!(
            "record file is {got} bytes, header implies {expect}"
        )));
    }
    Ok(LshIndex {
        header,
        params,
        functions,
        trees,
    })
}

/// Loads the full point set back out of an index directory (direct file
/// read, no cache involvement). Setup helper for workload generation.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let header = read_header(dir)?;
    let (n, d) = (header.n as usize, header.d as usize);
    let mut r = std::io::BufReader::new(File::open(data_path(dir))?);
    let mut coords = vec![0.0f64; n * d];
    r.read_f64_into::<LittleEndian>(&mut coords)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".to_string());
    Dataset::from_flat(name, n, d, coords)
}

/// Reads selected point records straight from an index directory
/// (uncached, uncounted). Setup helper for materializing query files.
pub fn read_points(dir: &Path, ids: &[u64]) -> Result<Vec<Point>> {
    use std::os::unix::fs::FileExt;
    let header = read_header(dir)?;
    let d = header.d as usize;
    let f = File::open(data_path(dir))?;
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= header.n {
            return Err(Error::invalid(format!(
                "point id {id} out of range for {} records",
                header.n
            )));
        }
        let mut buf = vec![0u8; d * 8];
        f.read_exact_at(&mut buf, id * d as u64 * 8)?;
        let coords: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Point { id, coords });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_clusters;
    use crate::storage::CacheConfig;

    /// Frozen oracle values computed two independent ways (closed-form
    /// expression and high-resolution fixed-step Simpson) outside this
    /// codebase.
    #[test]
    fn quadrature_matches_frozen_closed_form_values() {
        let cases = [
            (0.5, 2.719, 0.8532761030759541),
            (1.0, 2.719, 0.7072848854799296),
            (1.5, 2.719, 0.5750840070604628),
            (2.0, 2.719, 0.4720436027722992),
            (3.0, 2.719, 0.3387167390280619),
            (1.0, 4.0, 0.8005324324284999),
        ];
        for (r, w, expect) in cases {
            let got = collision_probability(r, w).unwrap();
            assert!(
                (got - expect).abs() < 1e-6,
                "P({r}, {w}) = {got}, expected {expect}"
            );
        }
    }

    #[test]
    fn collision_probability_is_strictly_decreasing_in_distance() {
        let mut prev = 1.0;
        for i in 1..=40 {
            let r = i as f64 * 0.25;
            let p = collision_probability(r, DEFAULT_WIDTH).unwrap();
            assert!(p < prev, "P({r}) = {p} did not decrease");
            assert!(p > 0.0 && p < 1.0);
            prev = p;
        }
    }

    #[test]
    fn collision_probability_rejects_degenerate_inputs() {
        assert!(collision_probability(0.0, 2.719).is_err());
        assert!(collision_probability(-1.0, 2.719).is_err());
        assert!(collision_probability(1.0, 0.0).is_err());
    }

    #[test]
    fn default_params_derive_the_expected_family_size() {
        let p = derive_params(DEFAULT_RATIO, DEFAULT_WIDTH, default_delta()).unwrap();
        assert!((p.p1 - 0.7072848854799296).abs() < 1e-6);
        assert!((p.p2 - 0.4720436027722992).abs() < 1e-6);
        assert!((p.alpha - 0.5896642441261144).abs() < 1e-6);
        assert_eq!(p.num_projections, 37);
        assert_eq!(p.collision_threshold, 22);
        assert_eq!(p.candidate_slack, 100);
        assert_eq!(p.max_candidates, 200);
    }

    #[test]
    fn params_validate_their_inputs() {
        assert!(derive_params(1.0, 2.719, 0.5).is_err());
        assert!(derive_params(2.0, 2.719, 0.0).is_err());
        assert!(derive_params(2.0, 2.719, 1.0).is_err());
        assert!(derive_params(2.0, 0.0, 0.5).is_err());
        assert!(LshParams::with_projections(2.0, 2.719, 0.5, 0).is_err());
    }

    #[test]
    fn threshold_tracks_explicit_projection_counts() {
        let p = LshParams::with_projections(2.0, 2.719, default_delta(), 10).unwrap();
        assert_eq!(p.num_projections, 10);
        // ceil(0.58966... * 10)
        assert_eq!(p.collision_threshold, 6);
    }

    #[test]
    fn sampled_functions_are_deterministic_and_in_range() {
        let a = sample_functions(42, 5, 8, DEFAULT_WIDTH);
        let b = sample_functions(42, 5, 8, DEFAULT_WIDTH);
        let c = sample_functions(43, 5, 8, DEFAULT_WIDTH);
        assert_eq!(a.len(), 5);
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.a, fb.a);
            assert_eq!(fa.b, fb.b);
        }
        assert!(a.iter().zip(&c).any(|(x, y)| x.a != y.a || x.b != y.b));
        for f in &a {
            assert_eq!(f.a.len(), 8);
            assert!(f.b >= 0.0 && f.b < DEFAULT_WIDTH);
        }
    }

    #[test]
    fn projection_is_affine_in_the_point() {
        let f = &sample_functions(7, 1, 3, DEFAULT_WIDTH)[0];
        let p = [1.0, 2.0, 3.0];
        let q = [0.0, 0.0, 0.0];
        let hp = f.project(&p).unwrap();
        let hq = f.project(&q).unwrap();
        let dot: f64 = f.a.iter().zip(&p).map(|(a, v)| a * v).sum();
        // The offset cancels in differences; only the scaled dot remains.
        assert!((hp - hq - dot / DEFAULT_WIDTH).abs() < 1e-12);
        assert!(f.project(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn header_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let h = IndexHeader {
            n: 1000,
            d: 50,
            m: 37,
            c: 2.0,
            width: 2.719,
            delta: default_delta(),
            seed: 99,
        };
        write_header(dir.path(), &h).unwrap();
        let back = read_header(dir.path()).unwrap();
        assert_eq!(h, back);
        // 4-byte magic + 7 little-endian 8-byte fields.
        assert_eq!(
            std::fs::metadata(header_path(dir.path())).unwrap().len(),
            60
        );
    }

    #[test]
    fn header_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(header_path(dir.path()), b"not an index header").unwrap();
        assert!(read_header(dir.path()).is_err());
    }

    #[test]
    fn build_writes_one_tree_per_function_plus_records() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_clusters("b", 1000, 50, 4, 1.0, 21).unwrap();
        let params = LshParams::with_projections(2.0, DEFAULT_WIDTH, default_delta(), 10).unwrap();
        build_index(&ds, &params, 5, dir.path()).unwrap();

        for i in 0..10 {
            let meta = btree::read_meta_direct(&proj_path(dir.path(), i)).unwrap();
            assert_eq!(meta.entry_count, 1000, "tree {i}");
        }
        assert!(!proj_path(dir.path(), 10).exists());
        assert_eq!(
            std::fs::metadata(data_path(dir.path())).unwrap().len(),
            1000 * 50 * 8
        );
        let h = read_header(dir.path()).unwrap();
        assert_eq!((h.n, h.d, h.m), (1000, 50, 10));
    }

    #[test]
    fn rebuild_with_same_seed_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ds = synthetic_clusters("det", 500, 12, 3, 1.0, 8).unwrap();
        let params = LshParams::with_projections(2.0, DEFAULT_WIDTH, default_delta(), 6).unwrap();
        build_index(&ds, &params, 77, dir_a.path()).unwrap();
        build_index(&ds, &params, 77, dir_b.path()).unwrap();
        for name in ["header", "data.bin", "proj_0.tree", "proj_5.tree"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical builds");
        }
    }

    #[test]
    fn open_reconstructs_functions_and_registers_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_clusters("o", 300, 10, 3, 1.0, 13).unwrap();
        let params = LshParams::with_projections(2.0, DEFAULT_WIDTH, default_delta(), 4).unwrap();
        build_index(&ds, &params, 3, dir.path()).unwrap();

        let mut cache = BufferCache::configure(
            CacheConfig {
                total_bytes: 64 * 4096,
                ..CacheConfig::default()
            },
            4,
        )
        .unwrap();
        let idx = open_index(dir.path(), &mut cache).unwrap();
        assert_eq!(idx.n(), 300);
        assert_eq!(idx.d(), 10);
        assert_eq!(idx.num_projections(), 4);
        assert_eq!(idx.params.collision_threshold, 3); // ceil(0.5897 * 4)

        // The reconstructed functions match a fresh sample from the seed.
        let expect = sample_functions(3, 4, 10, DEFAULT_WIDTH);
        for (i, h) in expect.iter().enumerate() {
            let p = ds.coords_of(7);
            assert_eq!(idx.project(i, p).unwrap(), h.project(p).unwrap(), "function {i}");
        }
        // Registration succeeded: data file is addressable.
        assert_eq!(cache.file_len(FileId::Data), Some(300 * 10 * 8));
    }

    #[test]
    fn open_rejects_mismatched_cache_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_clusters("mm", 100, 6, 2, 1.0, 1).unwrap();
        let params = LshParams::with_projections(2.0, DEFAULT_WIDTH, default_delta(), 4).unwrap();
        build_index(&ds, &params, 1, dir.path()).unwrap();

        // Wrong page size.
        let mut cache = BufferCache::configure(
            CacheConfig {
                total_bytes: 64 * 2048,
                page_size: 2048,
                ..CacheConfig::default()
            },
            4,
        )
        .unwrap();
        assert!(open_index(dir.path(), &mut cache).is_err());

        // Wrong tree count under the per-projection layout.
        let mut cache = BufferCache::configure(
            CacheConfig {
                total_bytes: 64 * 4096,
                ..CacheConfig::default()
            },
            5,
        )
        .unwrap();
        assert!(open_index(dir.path(), &mut cache).is_err());
    }

    #[test]
    fn dataset_round_trips_through_the_record_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_clusters("rt", 120, 9, 2, 1.0, 31).unwrap();
        let params = LshParams::with_projections(2.0, DEFAULT_WIDTH, default_delta(), 3).unwrap();
        build_index(&ds, &params, 2, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.n(), 120);
        assert_eq!(back.d(), 9);
        for i in 0..120 {
            assert_eq!(back.coords_of(i), ds.coords_of(i));
        }
        let pts = read_points(dir.path(), &[5, 119, 0]).unwrap();
        assert_eq!(pts[0].coords, ds.coords_of(5));
        assert_eq!(pts[1].coords, ds.coords_of(119));
        assert_eq!(pts[2].coords, ds.coords_of(0));
        assert!(read_points(dir.path(), &[120]).is_err());
    }
}
