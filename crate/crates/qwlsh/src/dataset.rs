//! In-memory point sets, file loaders, query workloads, and the exact
//! k-nearest-neighbor reference scan.
//!
//! A [`Dataset`] stores `n` points of fixed dimensionality `d` as one flat
//! `Vec<f64>` in row-major order; point ids are the row positions
//! `0..n`. Two input formats are supported: the binary `fvecs` layout
//! (little-endian `u32` dimension prefix followed by that many `f32`
//! values, repeated per record) and plain comma-separated decimal text
//! with an optional header line.

use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One point: its dataset id and its coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub id: u64,
    pub coords: Vec<f64>,
}

/// A fixed-dimensionality point set held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    n: usize,
    d: usize,
    coords: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from a flat row-major coordinate buffer.
    pub fn from_flat(name: impl Into<String>, n: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "dataset must be non-empty: n={n}, d={d}"
            )));
        }
        if coords.len() != n * d {
            return Err(Error::invalid(format!(
                "coordinate buffer holds {} values, expected {}",
                coords.len(),
                n * d
            )));
        }
        Ok(Dataset {
            name: name.into(),
            n,
            d,
            coords,
        })
    }

    /// Builds a dataset from per-point rows, all of which must share one
    /// dimensionality.
    pub fn from_rows(name: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset must contain at least one point"));
        }
        let d = rows[0].len();
        let mut coords = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::format(format!(
                    "inconsistent dimension at record {i}: got {}, expected {d}",
                    row.len()
                )));
            }
            coords.extend_from_slice(row);
        }
        Dataset::from_flat(name, rows.len(), d, coords)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Coordinates of point `id` as a slice into the flat buffer.
    pub fn coords_of(&self, id: usize) -> &[f64] {
        &self.coords[id * self.d..(id + 1) * self.d]
    }

    /// Copies point `id` out as an owned [`Point`].
    pub fn point(&self, id: usize) -> Point {
        Point {
            id: id as u64,
            coords: self.coords_of(id).to_vec(),
        }
    }

    /// Returns a copy keeping only the first `d_new` coordinates of every
    /// point. Used to cut very wide datasets down to a workable width.
    pub fn truncate_dims(&self, d_new: usize) -> Result<Dataset> {
        if d_new == 0 || d_new > self.d {
            return Err(Error::invalid(format!(
                "cannot truncate {}-dimensional data to d={d_new}",
                self.d
            )));
        }
        let mut coords = Vec::with_capacity(self.n * d_new);
        for i in 0..self.n {
            coords.extend_from_slice(&self.coords_of(i)[..d_new]);
        }
        Dataset::from_flat(format!("{}_d{}", self.name, d_new), self.n, d_new, coords)
    }

    /// Returns a copy keeping the first `n_new` points and the first
    /// `d_new` coordinates of each. Used to slice one base dataset into a
    /// lattice of training cells.
    pub fn prefix_cell(&self, n_new: usize, d_new: usize) -> Result<Dataset> {
        if n_new == 0 || n_new > self.n {
            return Err(Error::invalid(format!(
                "cannot take {n_new}-point prefix of {} points",
                self.n
            )));
        }
        if d_new == 0 || d_new > self.d {
            return Err(Error::invalid(format!(
                "cannot take {d_new}-coordinate prefix of {} dimensions",
                self.d
            )));
        }
        let mut coords = Vec::with_capacity(n_new * d_new);
        for i in 0..n_new {
            coords.extend_from_slice(&self.coords_of(i)[..d_new]);
        }
        Dataset::from_flat(
            format!("{}_{}x{}", self.name, n_new, d_new),
            n_new,
            d_new,
            coords,
        )
    }

    /// Loads a binary `fvecs` file: each record is a little-endian `u32`
    /// dimension followed by that many little-endian `f32` values. All
    /// records must agree on the dimension.
    pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path)?);
        let mut coords: Vec<f64> = Vec::new();
        let mut d: Option<usize> = None;
        let mut record = 0usize;
        loop {
            let rec_d = match reader.read_u32::<LittleEndian>() {
                Ok(v) => v as usize,
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            match d {
                None => {
                    if rec_d == 0 {
                        return Err(Error::format(format!(
                            "record {record} declares zero dimension"
                        )));
                    }
                    d = Some(rec_d);
                }
                Some(expect) if rec_d != expect => {
                    return Err(Error::format(format!(
                        "inconsistent dimension at record {record}: got {rec_d}, expected {expect}"
                    )));
                }
                Some(_) => {}
            }
            for _ in 0..rec_d {
                coords.push(reader.read_f32::<LittleEndian>()? as f64);
            }
            record += 1;
        }
        let d = d.ok_or_else(|| Error::format("empty fvecs file"))?;
        let name = file_stem(path);
        Dataset::from_flat(name, record, d, coords)
    }

    /// Loads comma-separated decimal text, one point per line. When
    /// `has_header` is set the first line is skipped. Every row must have
    /// the same number of fields.
    pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut d: Option<usize> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 && has_header {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for field in line.split(',') {
                let field = field.trim();
                let value: f64 = field.parse().map_err(|_| {
                    Error::format(format!(
                        "unparsable value {field:?} at line {}",
                        lineno + 1
                    ))
                })?;
                row.push(value);
            }
            if let Some(expect) = d {
                if row.len() != expect {
                    return Err(Error::format(format!(
                        "ragged row at line {}: got {} fields, expected {expect}",
                        lineno + 1,
                        row.len()
                    )));
                }
            } else {
                d = Some(row.len());
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::format("csv file contains no data rows"));
        }
        let name = file_stem(path);
        Dataset::from_rows(name, rows)
    }

    /// Writes the dataset in `fvecs` layout (coordinates narrowed to
    /// `f32`, as the format requires).
    pub fn write_fvecs(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..self.n {
            w.write_u32::<LittleEndian>(self.d as u32)?;
            for &v in self.coords_of(i) {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the dataset as comma-separated decimal text.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..self.n {
            let row: Vec<String> = self.coords_of(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Euclidean distance between two equal-length coordinate slices.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = x - y;
        acc += diff * diff;
    }
    acc.sqrt()
}

/// One answer in a k-NN result list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub dist: f64,
}

/// Orders neighbors by distance, breaking ties by ascending id.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id))
}

#[derive(PartialEq)]
struct HeapEntry(Neighbor);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        neighbor_order(&self.0, &other.0)
    }
}

/// Exact k-nearest neighbors of `query` by a full linear scan. This is the
/// reference answer used to measure result quality; ties in distance are
/// broken by ascending id.
pub fn brute_force_knn(ds: &Dataset, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    if query.len() != ds.d() {
        return Err(Error::invalid(format!(
            "query has {} coordinates, dataset is {}-dimensional",
            query.len(),
            ds.d()
        )));
    }
    if k == 0 || k > ds.n() {
        return Err(Error::invalid(format!(
            "k={k} out of range 1..={}",
            ds.n()
        )));
    }
    // Max-heap of the k best seen so far; the root is the current worst.
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
    for id in 0..ds.n() {
        let nb = Neighbor {
            id: id as u64,
            dist: euclidean(ds.coords_of(id), query),
        };
        if heap.len() < k {
            heap.push(HeapEntry(nb));
        } else if neighbor_order(&nb, &heap.peek().unwrap().0) == std::cmp::Ordering::Less {
            heap.pop();
            heap.push(HeapEntry(nb));
        }
    }
    let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
    out.sort_by(neighbor_order);
    Ok(out)
}

/// A batch of queries to run against one dataset, all at the same `k`.
#[derive(Debug, Clone)]
pub struct QueryWorkload {
    pub queries: Vec<Point>,
    pub k: usize,
}

impl QueryWorkload {
    /// Materializes a workload from a list of dataset point ids.
    pub fn from_ids(ds: &Dataset, ids: &[u64], k: usize) -> Result<QueryWorkload> {
        let mut queries = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= ds.n() {
                return Err(Error::invalid(format!(
                    "query id {id} out of range for {} points",
                    ds.n()
                )));
            }
            queries.push(ds.point(id as usize));
        }
        if queries.is_empty() {
            return Err(Error::invalid("workload must contain at least one query"));
        }
        Ok(QueryWorkload { queries, k })
    }

    /// Saves the workload as its point ids, one per line.
    pub fn save_ids(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for q in &self.queries {
            writeln!(w, "{}", q.id)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a point-id file written by [`QueryWorkload::save_ids`].
    pub fn load_ids(path: impl AsRef<Path>) -> Result<Vec<u64>> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut ids = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let id: u64 = trimmed.parse().map_err(|_| {
                Error::format(format!(
                    "unparsable point id {trimmed:?} at line {}",
                    lineno + 1
                ))
            })?;
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(Error::format("workload file contains no point ids"));
        }
        Ok(ids)
    }
}

/// Number of sampled points used to estimate local density.
const DENSITY_SAMPLE: usize = 1000;
/// Neighbor rank that defines the density score of a sampled point.
const DENSITY_RANK: usize = 10;

/// Draws `q_count` queries from the densest region of the dataset.
///
/// A uniform sample of up to [`DENSITY_SAMPLE`] points (without
/// replacement) is scored by the distance to each point's
/// [`DENSITY_RANK`]-th nearest neighbor within the sample — smaller means
/// denser surroundings. Queries are then drawn uniformly, with
/// replacement, from the lowest-scoring quartile of the sample, so a
/// workload concentrates where the data does. Fully deterministic for a
/// given `(dataset, q_count, k, seed)`.
pub fn generate_workload(ds: &Dataset, q_count: usize, k: usize, seed: u64) -> Result<QueryWorkload> {
    if q_count == 0 {
        return Err(Error::invalid("q_count must be at least 1"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_size = DENSITY_SAMPLE.min(ds.n());
    let sample: Vec<usize> = rand::seq::index::sample(&mut rng, ds.n(), sample_size).into_vec();

    // Pairwise distances within the sample.
    let s = sample.len();
    let k_density = DENSITY_RANK.min(s.saturating_sub(1));
    let mut scores = vec![0.0f64; s];
    if k_density > 0 {
        let mut dmat = vec![0.0f64; s * s];
        for i in 0..s {
            for j in (i + 1)..s {
                let dist = euclidean(ds.coords_of(sample[i]), ds.coords_of(sample[j]));
                dmat[i * s + j] = dist;
                dmat[j * s + i] = dist;
            }
        }
        let mut row = vec![0.0f64; s - 1];
        for i in 0..s {
            let mut w = 0;
            for j in 0..s {
                if j != i {
                    row[w] = dmat[i * s + j];
                    w += 1;
                }
            }
            let (_, kth, _) = row.select_nth_unstable_by(k_density - 1, f64::total_cmp);
            scores[i] = *kth;
        }
    }

    // Lowest-scoring quartile, ties broken by dataset id.
    let mut ranked: Vec<usize> = (0..s).collect();
    ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(sample[a].cmp(&sample[b])));
    let quartile = ranked.len().div_ceil(4).max(1);
    let pool: Vec<usize> = ranked[..quartile].iter().map(|&i| sample[i]).collect();

    let pick = Uniform::from(0..pool.len());
    let queries: Vec<Point> = (0..q_count)
        .map(|_| ds.point(pool[pick.sample(&mut rng)]))
        .collect();
    Ok(QueryWorkload { queries, k })
}

/// Generates a synthetic dataset as a mixture of Gaussian clusters:
/// `n_clusters` centers drawn from `N(0, 10^2 I)`, points drawn around a
/// uniformly chosen center with per-coordinate standard deviation
/// `spread`. Deterministic for a given seed.
pub fn synthetic_clusters(
    name: impl Into<String>,
    n: usize,
    d: usize,
    n_clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 || n_clusters == 0 {
        return Err(Error::invalid(format!(
            "synthetic dataset needs n, d, n_clusters >= 1 (got {n}, {d}, {n_clusters})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![0.0f64; n_clusters * d];
    for v in centers.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = 10.0 * g;
    }
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = rng.gen_range(0..n_clusters);
        let center = &centers[c * d..(c + 1) * d];
        for &cv in center {
            let g: f64 = StandardNormal.sample(&mut rng);
            coords.push(cv + spread * g);
        }
    }
    Dataset::from_flat(name, n, d, coords)
}
