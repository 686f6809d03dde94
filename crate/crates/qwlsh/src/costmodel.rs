//! Offline-trained mapping from dataset shape to the best cache split.
//!
//! Index traffic grows with cardinality while data traffic grows with
//! dimensionality, so the index fraction that minimizes a workload's
//! total I/O depends on the dataset's `(n, d)`. The trainer measures that
//! optimum directly: for each cell of an `(n, d)` lattice it builds an
//! index over a prefix slice of a base dataset, generates a dense-region
//! workload, replays it cold once per fraction in the 11-setting sweep,
//! and records the argmin. At query time [`CostModel::lookup_fraction`]
//! interpolates the trained grid bilinearly on log-scaled axes and rounds
//! to the nearest sweep setting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{generate_workload, Dataset};
use crate::error::{Error, Result};
use crate::lsh::{build_index, default_delta, derive_params, DEFAULT_RATIO, DEFAULT_WIDTH};
use crate::query::execute_workload;
use crate::storage::{CacheConfig, IoCounters, Strategy, DEFAULT_CACHE_BYTES, DEFAULT_PAGE_SIZE};

/// The 11 index-cache fractions every sweep tries.
pub const SWEEP_FRACTIONS: [f64; 11] = [
    0.01, 0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.99,
];

/// Rounds an interpolated fraction to the nearest sweep setting. Exact
/// midpoints (up to float noise) round to the larger setting.
pub fn round_to_sweep_setting(f: f64) -> f64 {
    let mut best = SWEEP_FRACTIONS[0];
    let mut best_dist = (f - best).abs();
    for &s in &SWEEP_FRACTIONS[1..] {
        let dist = (f - s).abs();
        // Settings ascend, so on a tie the later (larger) one wins.
        if dist <= best_dist + 1e-12 {
            best = s;
            best_dist = best_dist.min(dist);
        }
    }
    best
}

/// Rounds a fraction down to the largest sweep setting not exceeding it
/// (values below the smallest setting clamp up to it). A hair of float
/// tolerance keeps exact settings fixed points.
pub fn floor_to_sweep_setting(f: f64) -> f64 {
    let mut best = SWEEP_FRACTIONS[0];
    for &s in &SWEEP_FRACTIONS[1..] {
        if s <= f + 1e-9 {
            best = s;
        }
    }
    best
}

/// One trained lattice cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelEntry {
    pub cardinality: usize,
    pub dimensionality: usize,
    /// The sweep setting that minimized total I/O for this cell.
    pub best_fraction: f64,
    /// Total I/O (bytes) the workload cost at that fraction.
    pub total_io_at_best: u64,
}

/// The trained grid plus the conditions it was trained under.
#[derive(Debug, Clone)]
pub struct CostModel {
    cards: Vec<usize>,
    dims: Vec<usize>,
    /// Row-major over `cards x dims`.
    entries: Vec<ModelEntry>,
    pub cache_bytes: u64,
    pub q_count: usize,
    /// Least-squares slope of mean index I/O against cardinality.
    pub alpha_card: f64,
    /// Least-squares slope of mean data I/O against dimensionality.
    pub alpha_dim: f64,
}

impl CostModel {
    /// Assembles a model from its parts, validating the lattice shape.
    pub fn from_parts(
        cards: Vec<usize>,
        dims: Vec<usize>,
        entries: Vec<ModelEntry>,
        cache_bytes: u64,
        q_count: usize,
        alpha_card: f64,
        alpha_dim: f64,
    ) -> Result<CostModel> {
        validate_axis("cardinality", &cards)?;
        validate_axis("dimensionality", &dims)?;
        if entries.len() != cards.len() * dims.len() {
            return Err(Error::invalid(format!(
                "{} entries do not fill a {}x{} lattice",
                entries.len(),
                cards.len(),
                dims.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            let (ci, dj) = (i / dims.len(), i % dims.len());
            if e.cardinality != cards[ci] || e.dimensionality != dims[dj] {
                return Err(Error::invalid(format!(
                    "entry {i} is ({}, {}), lattice expects ({}, {})",
                    e.cardinality, e.dimensionality, cards[ci], dims[dj]
                )));
            }
            if !SWEEP_FRACTIONS
                .iter()
                .any(|&s| (s - e.best_fraction).abs() < 1e-9)
            {
                return Err(Error::invalid(format!(
                    "fraction {} is not a sweep setting",
                    e.best_fraction
                )));
            }
        }
        Ok(CostModel {
            cards,
            dims,
            entries,
            cache_bytes,
            q_count,
            alpha_card,
            alpha_dim,
        })
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    /// The trained cell for an exact lattice point, if there is one.
    pub fn entry(&self, card: usize, dim: usize) -> Option<&ModelEntry> {
        let ci = self.cards.iter().position(|&c| c == card)?;
        let dj = self.dims.iter().position(|&d| d == dim)?;
        Some(&self.entries[ci * self.dims.len() + dj])
    }

    /// Bilinear interpolation of `best_fraction` over the lattice with
    /// both axes log-scaled, clamped to the lattice bounds. Continuous in
    /// `(n, d)` and exact on lattice points.
    pub fn interpolated_fraction(&self, n: usize, d: usize) -> f64 {
        let (i0, i1, tn) = bracket(&self.cards, (n.max(1) as f64).log2());
        let (j0, j1, td) = bracket(&self.dims, (d.max(1) as f64).log2());
        let at = |i: usize, j: usize| self.entries[i * self.dims.len() + j].best_fraction;
        let lo = at(i0, j0) * (1.0 - td) + at(i0, j1) * td;
        let hi = at(i1, j0) * (1.0 - td) + at(i1, j1) * td;
        lo * (1.0 - tn) + hi * tn
    }

    /// The fraction to configure for a dataset shape: interpolated, then
    /// rounded to the nearest sweep setting (midpoints round up).
    pub fn lookup_fraction(&self, n: usize, d: usize) -> f64 {
        round_to_sweep_setting(self.interpolated_fraction(n, d))
    }

    /// The sweep setting to configure for a dataset shape when the run's
    /// cache differs from the training cache.
    ///
    /// What the grid learned is how many *bytes* of index cache the
    /// workload profits from — the stored fraction is just that figure
    /// divided by the training cache, so the same fraction starves the
    /// index in a smaller cache and overfeeds it in a larger one. This
    /// converts the grid value back to bytes, caps it at
    /// `index_residency_bytes` (more index cache than keeps every tree
    /// resident is pure waste), and re-expresses it against
    /// `cache_bytes`. A grid value at the 0.99 ceiling is censored — it
    /// says the training cache was too small for the index side, not how
    /// much the workload wanted — so the residency figure stands in for
    /// the unknown demand. The result is clamped to the configurable
    /// range and quantized to a sweep setting (a degenerate `cache_bytes`
    /// of zero therefore yields the top setting rather than a panic).
    ///
    /// Quantization is asymmetric. At or above the training cache the
    /// nearest setting wins, which keeps the trained argmin a fixed point
    /// at the training size. Below it, the demand claims a larger share
    /// of a scarcer cache than training ever observed, and rounding the
    /// index side up there takes pages from the data partition at its
    /// steepest — so the byte figure rounds down, extending the
    /// trainer's own prefer-the-data-side tie-break to quantization.
    pub fn fraction_for_cache(
        &self,
        n: usize,
        d: usize,
        cache_bytes: u64,
        index_residency_bytes: u64,
    ) -> f64 {
        let grid = self.lookup_fraction(n, d);
        let residency = index_residency_bytes as f64;
        let ceilinged = (grid - SWEEP_FRACTIONS[SWEEP_FRACTIONS.len() - 1]).abs() < 1e-9;
        let demand_bytes = if ceilinged {
            residency
        } else {
            (grid * self.cache_bytes as f64).min(residency)
        };
        let value = (demand_bytes / cache_bytes as f64).clamp(0.01, 0.99);
        if cache_bytes < self.cache_bytes {
            floor_to_sweep_setting(value)
        } else {
            round_to_sweep_setting(value)
        }
    }

    /// Writes the model as line-oriented text: a header naming the
    /// training conditions, then one `card dim best_fraction total_io
    /// alpha_card alpha_dim` line per cell (the alphas are global and
    /// repeated on every line for simplicity).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "qwlsh-model v1 cache={} q={}", self.cache_bytes, self.q_count)?;
        for e in &self.entries {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                e.cardinality,
                e.dimensionality,
                e.best_fraction,
                e.total_io_at_best,
                self.alpha_card,
                self.alpha_dim
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`CostModel::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<CostModel> {
        let mut lines = BufReader::new(File::open(path.as_ref())?).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty model file"))??;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 4 || tokens[0] != "qwlsh-model" {
            return Err(Error::format(format!("unrecognized model header {header:?}")));
        }
        if tokens[1] != "v1" {
            return Err(Error::format(format!(
                "unsupported model version {:?}",
                tokens[1]
            )));
        }
        let cache_bytes: u64 = tokens[2]
            .strip_prefix("cache=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(format!("bad cache field {:?}", tokens[2])))?;
        let q_count: usize = tokens[3]
            .strip_prefix("q=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(format!("bad query-count field {:?}", tokens[3])))?;

        let mut raw: Vec<(ModelEntry, f64, f64)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::format(format!(
                    "model line {} has {} fields, expected 6",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_err =
                |what: &str| Error::format(format!("bad {what} on model line {}", lineno + 2));
            raw.push((
                ModelEntry {
                    cardinality: fields[0].parse().map_err(|_| parse_err("cardinality"))?,
                    dimensionality: fields[1]
                        .parse()
                        .map_err(|_| parse_err("dimensionality"))?,
                    best_fraction: fields[2].parse().map_err(|_| parse_err("fraction"))?,
                    total_io_at_best: fields[3].parse().map_err(|_| parse_err("total io"))?,
                },
                fields[4].parse().map_err(|_| parse_err("alpha_card"))?,
                fields[5].parse().map_err(|_| parse_err("alpha_dim"))?,
            ));
        }
        if raw.is_empty() {
            return Err(Error::format("model file has no entries"));
        }
        let (alpha_card, alpha_dim) = (raw[0].1, raw[0].2);
        let mut cards: Vec<usize> = raw.iter().map(|(e, ..)| e.cardinality).collect();
        cards.sort_unstable();
        cards.dedup();
        let mut dims: Vec<usize> = raw.iter().map(|(e, ..)| e.dimensionality).collect();
        dims.sort_unstable();
        dims.dedup();
        // Re-order into row-major lattice order, demanding completeness.
        let mut grid: Vec<Option<ModelEntry>> = vec![None; cards.len() * dims.len()];
        for (e, ..) in raw {
            let ci = cards.iter().position(|&c| c == e.cardinality).unwrap();
            let dj = dims.iter().position(|&d| d == e.dimensionality).unwrap();
            let slot = &mut grid[ci * dims.len() + dj];
            if slot.is_some() {
                return Err(Error::format(format!(
                    "duplicate model entry for ({}, {})",
                    e.cardinality, e.dimensionality
                )));
            }
            *slot = Some(e);
        }
        let entries: Vec<ModelEntry> = grid
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::format("model lattice has holes"))?;
        CostModel::from_parts(cards, dims, entries, cache_bytes, q_count, alpha_card, alpha_dim)
    }
}

fn validate_axis(what: &str, axis: &[usize]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::invalid(format!("{what} axis is empty")));
    }
    if axis[0] == 0 {
        return Err(Error::invalid(format!("{what} axis starts at zero")));
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "{what} axis must be strictly increasing"
        )));
    }
    Ok(())
}

/// Bracketing cell of `value` (log2 units) on a log2-scaled axis, with
/// the interpolation weight toward the upper edge. Clamps outside the
/// axis range.
fn bracket(axis: &[usize], value: f64) -> (usize, usize, f64) {
    let logs: Vec<f64> = axis.iter().map(|&v| (v as f64).log2()).collect();
    if value <= logs[0] || logs.len() == 1 {
        return (0, 0, 0.0);
    }
    let last = logs.len() - 1;
    if value >= logs[last] {
        return (last, last, 0.0);
    }
    let mut i = 0;
    while logs[i + 1] < value {
        i += 1;
    }
    (i, i + 1, (value - logs[i]) / (logs[i + 1] - logs[i]))
}

/// Training conditions.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub cache_bytes: usize,
    pub q_count: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            cache_bytes: DEFAULT_CACHE_BYTES,
            q_count: 250,
            k: 50,
            seed: 1,
        }
    }
}

/// Full sweep record of one lattice cell, kept for inspection.
#[derive(Debug, Clone)]
pub struct CellSweep {
    pub cardinality: usize,
    pub dimensionality: usize,
    /// `(fraction, counters)` for each sweep setting, in sweep order.
    pub rows: Vec<(f64, IoCounters)>,
}

/// A trained model together with the raw sweep measurements behind it.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: CostModel,
    pub sweeps: Vec<CellSweep>,
}

/// Trains a model over the `cards x dims` lattice carved out of `base`
/// by prefix slicing.
///
/// Per cell: build an index over the slice, generate a dense-region
/// workload, replay it from a cold cache once per sweep fraction
/// (independent caches, so the fractions run in parallel), and keep the
/// fraction with the least total I/O — ties go to the smaller fraction.
/// Scratch indexes live in a temporary directory and are removed as soon
/// as their cell is measured. Deterministic for fixed inputs and seed.
pub fn train(
    base: &Dataset,
    cards: &[usize],
    dims: &[usize],
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    validate_axis("cardinality", cards)?;
    validate_axis("dimensionality", dims)?;
    if *cards.last().unwrap() > base.n() {
        return Err(Error::invalid(format!(
            "largest training cardinality {} exceeds the base dataset's {} points",
            cards.last().unwrap(),
            base.n()
        )));
    }
    if *dims.last().unwrap() > base.d() {
        return Err(Error::invalid(format!(
            "largest training dimensionality {} exceeds the base dataset's {}",
            dims.last().unwrap(),
            base.d()
        )));
    }
    let params = derive_params(DEFAULT_RATIO, DEFAULT_WIDTH, default_delta())?;
    let scratch = tempfile::tempdir()?;

    let mut entries = Vec::with_capacity(cards.len() * dims.len());
    let mut sweeps = Vec::with_capacity(entries.capacity());
    let mut best_counters = Vec::with_capacity(entries.capacity());
    for &card in cards {
        for &dim in dims {
            let cell = base.prefix_cell(card, dim)?;
            let dir = scratch.path().join(format!("cell_{card}x{dim}"));
            build_index(&cell, &params, mix_seed(opts.seed, card as u64, dim as u64), &dir)?;
            let wl = generate_workload(
                &cell,
                opts.q_count,
                opts.k,
                mix_seed(opts.seed.wrapping_add(1), card as u64, dim as u64),
            )?;
            drop(cell);

            let rows: Vec<(f64, IoCounters)> = SWEEP_FRACTIONS
                .par_iter()
                .map(|&fraction| {
                    let cfg = CacheConfig {
                        total_bytes: opts.cache_bytes,
                        index_fraction: fraction,
                        strategy: Strategy::PerProjection,
                        page_size: DEFAULT_PAGE_SIZE,
                    };
                    execute_workload(&dir, &cfg, &wl).map(|run| (fraction, run.io))
                })
                .collect::<Result<Vec<_>>>()?;
            std::fs::remove_dir_all(&dir)?;

            let mut best = &rows[0];
            for row in &rows[1..] {
                // Strict comparison keeps the first (smallest) fraction
                // on ties.
                if row.1.total_io_bytes() < best.1.total_io_bytes() {
                    best = row;
                }
            }
            entries.push(ModelEntry {
                cardinality: card,
                dimensionality: dim,
                best_fraction: best.0,
                total_io_at_best: best.1.total_io_bytes(),
            });
            best_counters.push(best.1);
            sweeps.push(CellSweep {
                cardinality: card,
                dimensionality: dim,
                rows,
            });
        }
    }

    // Diagnostic slopes over the lattice marginals at the chosen
    // fractions: index traffic against cardinality, data traffic against
    // dimensionality.
    let card_marginal: Vec<f64> = (0..cards.len())
        .map(|ci| {
            (0..dims.len())
                .map(|dj| best_counters[ci * dims.len() + dj].index_io_bytes as f64)
                .sum::<f64>()
                / dims.len() as f64
        })
        .collect();
    let dim_marginal: Vec<f64> = (0..dims.len())
        .map(|dj| {
            (0..cards.len())
                .map(|ci| best_counters[ci * dims.len() + dj].data_io_bytes as f64)
                .sum::<f64>()
                / cards.len() as f64
        })
        .collect();
    let alpha_card = least_squares_slope(
        &cards.iter().map(|&c| c as f64).collect::<Vec<_>>(),
        &card_marginal,
    );
    let alpha_dim = least_squares_slope(
        &dims.iter().map(|&d| d as f64).collect::<Vec<_>>(),
        &dim_marginal,
    );

    let model = CostModel::from_parts(
        cards.to_vec(),
        dims.to_vec(),
        entries,
        opts.cache_bytes as u64,
        opts.q_count,
        alpha_card,
        alpha_dim,
    )?;
    Ok(TrainOutput { model, sweeps })
}

/// Slope of the least-squares line through `(xs, ys)`; zero for fewer
/// than two points or a degenerate x spread.
fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

/// splitmix64-style mixing of a seed with two lattice coordinates, so
/// every cell builds and draws queries from its own stream.
fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
