//! Command-line driver: generate datasets, build indexes, train the
//! cache-split model, and run the benchmark experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use qwlsh::bench::{
    compare_alternatives, run_alternative, sweep_report, write_csv, Alternative, CompareOptions,
    WorkloadReport,
};
use qwlsh::costmodel::{train, CostModel, TrainOptions};
use qwlsh::dataset::{generate_workload, synthetic_clusters, Dataset, QueryWorkload};
use qwlsh::lsh::{
    build_index, default_delta, derive_params, load_dataset, read_header, DEFAULT_RATIO,
    DEFAULT_WIDTH,
};
use qwlsh::storage::Strategy;

#[derive(Parser)]
#[command(
    name = "qwlsh",
    version,
    about = "External-memory LSH search with a workload-aware partitioned page cache"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Fvecs,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a clustered synthetic dataset (Gaussian mixture).
    GenData {
        /// Output file path; its extension does not matter, --format does.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Number of Gaussian clusters.
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        /// Per-coordinate standard deviation within a cluster.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Fvecs)]
        format: Format,
    },
    /// Build an index directory over a dataset file.
    Build {
        /// Dataset file to index.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Fvecs)]
        format: Format,
        /// Index directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Approximation ratio (> 1).
        #[arg(long, default_value_t = DEFAULT_RATIO)]
        c: f64,
        /// Hash bucket width.
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: f64,
        /// Failure probability bound; defaults to 1/e.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Index only the first DIMS coordinates of every point.
        #[arg(long)]
        truncate_dims: Option<usize>,
    },
    /// Train the cache-split cost model over an (n, d) lattice carved
    /// from a base dataset.
    Train {
        /// Base dataset; every lattice cell is a prefix slice of it.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Fvecs)]
        format: Format,
        /// Comma-separated cardinality axis, ascending (e.g. 10000,30000,90000).
        #[arg(long, value_delimiter = ',', required = true)]
        cards: Vec<usize>,
        /// Comma-separated dimensionality axis, ascending (e.g. 64,256,1024).
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        /// Cache size in MiB used for every training run.
        #[arg(long, default_value_t = 16.0)]
        cache: f64,
        /// Queries per training workload.
        #[arg(long, default_value_t = 250)]
        queries: usize,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write every training sweep row to this CSV.
        #[arg(long)]
        sweep_log: Option<PathBuf>,
    },
    /// Run a workload against an index under one or all alternatives.
    Run {
        /// Index directory.
        #[arg(long)]
        index: PathBuf,
        /// Trained model file (required for --alt qwlsh or all).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Cache size in MiB.
        #[arg(long, default_value_t = 16.0)]
        cache_mb: f64,
        /// File of query point ids, one per line.
        #[arg(long, conflicts_with = "gen_queries")]
        queries_file: Option<PathBuf>,
        /// Generate N dense-region queries instead.
        #[arg(long)]
        gen_queries: Option<usize>,
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// naive | ci | cd | cicd | opt | qwlsh | all
        #[arg(long, default_value = "all")]
        alt: String,
        /// Partitioning strategy: 1 = per-projection sub-caches, 2 = one
        /// shared index partition.
        #[arg(long, default_value_t = 1)]
        strategy: u8,
        /// Number of cold repeats per alternative.
        #[arg(long, default_value_t = 1)]
        repeat: u32,
        /// Seed for --gen-queries.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the index-cache fraction over all 11 settings and report
    /// per-fraction I/O.
    Sweep {
        /// Index directory.
        #[arg(long)]
        index: PathBuf,
        /// Cache size in MiB.
        #[arg(long, default_value_t = 16.0)]
        cache_mb: f64,
        /// File of query point ids, one per line.
        #[arg(long, conflicts_with = "queries")]
        queries_file: Option<PathBuf>,
        /// Generate this many dense-region queries instead.
        #[arg(long, default_value_t = 250)]
        queries: usize,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData {
            out,
            n,
            d,
            clusters,
            spread,
            seed,
            format,
        } => {
            let name = stem(&out);
            let ds = synthetic_clusters(name, n, d, clusters, spread, seed)?;
            write_dataset(&ds, &out, format)?;
            println!("wrote {} points x {} dims to {}", ds.n(), ds.d(), out.display());
        }
        Cmd::Build {
            data,
            format,
            out,
            c,
            width,
            delta,
            seed,
            truncate_dims,
        } => {
            let mut ds = read_dataset(&data, format)?;
            if let Some(d_new) = truncate_dims {
                ds = ds.truncate_dims(d_new)?;
            }
            let params = derive_params(c, width, delta.unwrap_or_else(default_delta))?;
            build_index(&ds, &params, seed, &out)?;
            println!(
                "indexed {} points x {} dims with {} projections at {}",
                ds.n(),
                ds.d(),
                params.num_projections,
                out.display()
            );
        }
        Cmd::Train {
            data,
            format,
            cards,
            dims,
            cache,
            queries,
            k,
            seed,
            out,
            sweep_log,
        } => {
            let base = read_dataset(&data, format)?;
            let opts = TrainOptions {
                cache_bytes: mib_to_bytes(cache)?,
                q_count: queries,
                k,
                seed,
            };
            let trained = train(&base, &cards, &dims, &opts)?;
            trained.model.save(&out)?;
            if let Some(log_path) = sweep_log {
                let rows = training_sweep_rows(&trained, &base, opts.cache_bytes, queries, k);
                write_csv(&log_path, &rows)?;
            }
            println!(
                "trained {}x{} lattice -> {}",
                cards.len(),
                dims.len(),
                out.display()
            );
            for e in trained.model.entries() {
                println!(
                    "  n={} d={} best_fraction={} total_io={}",
                    e.cardinality, e.dimensionality, e.best_fraction, e.total_io_at_best
                );
            }
        }
        Cmd::Run {
            index,
            model,
            cache_mb,
            queries_file,
            gen_queries,
            k,
            alt,
            strategy,
            repeat,
            seed,
            out,
        } => {
            let dataset = stem(&index);
            let wl = make_workload(&index, queries_file.as_deref(), gen_queries, k, seed)?;
            let model = model
                .map(|p| CostModel::load(&p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let mut opts = CompareOptions {
                cache_bytes: mib_to_bytes(cache_mb)?,
                strategy: parse_strategy(strategy)?,
                ..CompareOptions::default()
            };
            if repeat == 0 {
                bail!("--repeat must be at least 1");
            }

            let mut reports = Vec::new();
            for rep in 0..repeat {
                opts.repeat = rep;
                if alt == "all" {
                    let model = model
                        .as_ref()
                        .context("--alt all needs --model for the qwlsh alternative")?;
                    reports.extend(compare_alternatives(&index, &dataset, &wl, model, &opts)?);
                } else {
                    let alt: Alternative = alt.parse()?;
                    reports.extend(run_alternative(
                        &index,
                        &dataset,
                        &wl,
                        alt,
                        model.as_ref(),
                        &opts,
                    )?);
                }
            }
            write_csv(&out, &reports)?;
            println!("wrote {} rows to {}", reports.len(), out.display());
            for r in reports.iter().filter(|r| r.alt != "opt-sweep") {
                println!(
                    "  {}: index_io={} data_io={} total_io={} wall_ms={:.1} (repeat {})",
                    r.alt, r.index_io, r.data_io, r.total_io, r.wall_ms, r.repeat
                );
            }
        }
        Cmd::Sweep {
            index,
            cache_mb,
            queries_file,
            queries,
            k,
            seed,
            out,
        } => {
            let dataset = stem(&index);
            let wl = make_workload(&index, queries_file.as_deref(), Some(queries), k, seed)?;
            let rows = sweep_report(&index, &dataset, &wl, mib_to_bytes(cache_mb)?)?;
            write_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            for r in &rows {
                println!(
                    "  fraction={}: index_io={} data_io={} total_io={}",
                    r.fraction, r.index_io, r.data_io, r.total_io
                );
            }
        }
    }
    Ok(())
}

/// File stem used as a dataset label in reports and generated data.
fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn mib_to_bytes(mib: f64) -> Result<usize> {
    if !mib.is_finite() || mib <= 0.0 {
        bail!("cache size must be a positive number of MiB, got {mib}");
    }
    Ok((mib * 1024.0 * 1024.0) as usize)
}

fn parse_strategy(flag: u8) -> Result<Strategy> {
    match flag {
        1 => Ok(Strategy::PerProjection),
        2 => Ok(Strategy::SharedIndex),
        other => bail!("--strategy must be 1 or 2, got {other}"),
    }
}

fn read_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let ds = match format {
        Format::Fvecs => Dataset::load_fvecs(path),
        Format::Csv => Dataset::load_csv(path, false),
    }
    .with_context(|| format!("loading {}", path.display()))?;
    Ok(ds)
}

fn write_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Fvecs => ds.write_fvecs(path),
        Format::Csv => ds.write_csv(path),
    }
    .with_context(|| format!("writing {}", path.display()))
}

/// Materializes the query workload for `run`/`sweep`: either the ids in
/// `queries_file`, or `gen_queries` dense-region draws — both resolved
/// against the indexed points themselves.
fn make_workload(
    index: &Path,
    queries_file: Option<&Path>,
    gen_queries: Option<usize>,
    k: usize,
    seed: u64,
) -> Result<QueryWorkload> {
    // Verify the directory really is an index before the heavier load.
    read_header(index).with_context(|| format!("opening index {}", index.display()))?;
    let ds = load_dataset(index)?;
    let wl = match (queries_file, gen_queries) {
        (Some(path), _) => {
            let ids = QueryWorkload::load_ids(path)
                .with_context(|| format!("loading {}", path.display()))?;
            QueryWorkload::from_ids(&ds, &ids, k)?
        }
        (None, Some(count)) => generate_workload(&ds, count, k, seed)?,
        (None, None) => bail!("pass --queries-file or --gen-queries"),
    };
    Ok(wl)
}

/// Flattens a training output into CSV rows, one per (cell, fraction).
fn training_sweep_rows(
    trained: &qwlsh::costmodel::TrainOutput,
    base: &Dataset,
    cache_bytes: usize,
    q_count: usize,
    k: usize,
) -> Vec<WorkloadReport> {
    let mut rows = Vec::new();
    for sweep in &trained.sweeps {
        for (fraction, io) in &sweep.rows {
            rows.push(WorkloadReport {
                alt: "train-sweep".to_string(),
                dataset: base.name().to_string(),
                n: sweep.cardinality,
                d: sweep.dimensionality,
                cache_bytes,
                fraction: *fraction,
                strategy: Strategy::PerProjection,
                q_count,
                k,
                index_io: io.index_io_bytes,
                data_io: io.data_io_bytes,
                total_io: io.total_io_bytes(),
                wall_ms: 0.0,
                repeat: 0,
            });
        }
    }
    rows
}
