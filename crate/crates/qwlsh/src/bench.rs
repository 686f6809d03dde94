//! Benchmark orchestration: run a workload under the six cache-allocation
//! alternatives and report exact I/O as CSV rows.
//!
//! The alternatives differ only in how the cache budget is split:
//!
//! * `naive` — one unified cache, no partitioning.
//! * `ci` — nearly everything (99%) to the index partition.
//! * `cd` — nearly everything (99%) to the data partition.
//! * `cicd` — an even 50/50 split.
//! * `opt` — try all 11 sweep settings, report the best (an oracle that
//!   costs 11 full runs).
//! * `qwlsh` — one run at the fraction the trained cost model picks for
//!   the dataset's shape.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::costmodel::{CostModel, SWEEP_FRACTIONS};
use crate::dataset::QueryWorkload;
use crate::error::{Error, Result};
use crate::lsh::{proj_path, read_header};
use crate::query::execute_workload;
use crate::storage::{CacheConfig, Strategy, DEFAULT_CACHE_BYTES, DEFAULT_PAGE_SIZE};

/// A cache-allocation policy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    Naive,
    Ci,
    Cd,
    CiCd,
    Opt,
    QwLsh,
}

impl Alternative {
    /// Every alternative, in reporting order.
    pub const ALL: [Alternative; 6] = [
        Alternative::Naive,
        Alternative::Ci,
        Alternative::Cd,
        Alternative::CiCd,
        Alternative::Opt,
        Alternative::QwLsh,
    ];

    /// The tag used in CSV rows and on the command line.
    pub fn tag(&self) -> &'static str {
        match self {
            Alternative::Naive => "naive",
            Alternative::Ci => "ci",
            Alternative::Cd => "cd",
            Alternative::CiCd => "cicd",
            Alternative::Opt => "opt",
            Alternative::QwLsh => "qwlsh",
        }
    }

    /// The fixed index fraction this alternative runs at, if it has one.
    /// `Naive` (unified), `Opt` (sweeps), and `QwLsh` (model-driven) do
    /// not.
    pub fn fixed_fraction(&self) -> Option<f64> {
        match self {
            Alternative::Ci => Some(0.99),
            Alternative::Cd => Some(0.01),
            Alternative::CiCd => Some(0.50),
            _ => None,
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Alternative> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Alternative::Naive),
            "ci" => Ok(Alternative::Ci),
            "cd" => Ok(Alternative::Cd),
            "cicd" => Ok(Alternative::CiCd),
            "opt" => Ok(Alternative::Opt),
            "qwlsh" => Ok(Alternative::QwLsh),
            other => Err(Error::invalid(format!(
                "unknown alternative {other:?}; expected naive, ci, cd, cicd, opt, or qwlsh"
            ))),
        }
    }
}

/// One measured workload execution, ready to serialize as a CSV row.
#[derive(Debug, Clone)]
pub struct WorkloadReport {
    /// Alternative tag, `"opt-sweep"` for Opt's logged sub-runs, or
    /// `"sweep"` for [`sweep_report`] rows.
    pub alt: String,
    pub dataset: String,
    pub n: usize,
    pub d: usize,
    pub cache_bytes: usize,
    /// Index-partition fraction the run was configured with; `0` for
    /// unified-cache runs, where no split exists.
    pub fraction: f64,
    pub strategy: Strategy,
    pub q_count: usize,
    pub k: usize,
    pub index_io: u64,
    pub data_io: u64,
    pub total_io: u64,
    pub wall_ms: f64,
    /// Repeat number when a workload is re-run for timing noise.
    pub repeat: u32,
}

/// Fixed CSV column set; [`WorkloadReport::csv_row`] emits fields in
/// exactly this order.
pub const CSV_HEADER: &str =
    "alt,dataset,n,d,cache_bytes,fraction,strategy,q_count,k,index_io,data_io,total_io,wall_ms,repeat";

impl WorkloadReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{}",
            self.alt,
            self.dataset,
            self.n,
            self.d,
            self.cache_bytes,
            self.fraction,
            self.strategy,
            self.q_count,
            self.k,
            self.index_io,
            self.data_io,
            self.total_io,
            self.wall_ms,
            self.repeat
        )
    }
}

/// Writes reports as a CSV file with the documented header.
pub fn write_csv(path: impl AsRef<Path>, reports: &[WorkloadReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Executes `wl` against the index at `dir` from a cold cache under
/// `cfg` and labels the measurement.
pub fn run_workload(
    dir: &Path,
    cfg: &CacheConfig,
    wl: &QueryWorkload,
    tag: &str,
    dataset: &str,
    repeat: u32,
) -> Result<WorkloadReport> {
    let run = execute_workload(dir, cfg, wl)?;
    let fraction = match cfg.strategy {
        Strategy::Unified => 0.0,
        _ => cfg.index_fraction,
    };
    Ok(WorkloadReport {
        alt: tag.to_string(),
        dataset: dataset.to_string(),
        n: run.n,
        d: run.d,
        cache_bytes: cfg.total_bytes,
        fraction,
        strategy: cfg.strategy,
        q_count: wl.queries.len(),
        k: wl.k,
        index_io: run.io.index_io_bytes,
        data_io: run.io.data_io_bytes,
        total_io: run.io.total_io_bytes(),
        wall_ms: run.wall_ms,
        repeat,
    })
}

/// Knobs shared by a round of comparison runs.
#[derive(Debug, Clone, Copy)]
pub struct CompareOptions {
    pub cache_bytes: usize,
    /// Partitioning strategy for the split alternatives; `Naive` always
    /// runs unified regardless.
    pub strategy: Strategy,
    pub page_size: usize,
    /// Repeat label stamped on every report of this round.
    pub repeat: u32,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            cache_bytes: DEFAULT_CACHE_BYTES,
            strategy: Strategy::PerProjection,
            page_size: DEFAULT_PAGE_SIZE,
            repeat: 0,
        }
    }
}

/// Runs the workload under one alternative, from a cold cache.
///
/// Most alternatives yield one report. `Opt` yields 12: its 11 sub-runs
/// tagged `"opt-sweep"` in sweep order, then the minimum-total-I/O one
/// re-tagged `"opt"` (ties to the smaller fraction). Only `QwLsh` needs
/// the model.
pub fn run_alternative(
    dir: &Path,
    dataset: &str,
    wl: &QueryWorkload,
    alt: Alternative,
    model: Option<&CostModel>,
    opts: &CompareOptions,
) -> Result<Vec<WorkloadReport>> {
    let cfg_at = |fraction: f64, strategy: Strategy| CacheConfig {
        total_bytes: opts.cache_bytes,
        index_fraction: fraction,
        strategy,
        page_size: opts.page_size,
    };

    let mut reports = Vec::new();
    match alt {
        Alternative::Naive => {
            let cfg = cfg_at(0.5, Strategy::Unified);
            reports.push(run_workload(dir, &cfg, wl, alt.tag(), dataset, opts.repeat)?);
        }
        Alternative::Ci | Alternative::Cd | Alternative::CiCd => {
            let cfg = cfg_at(alt.fixed_fraction().unwrap(), opts.strategy);
            reports.push(run_workload(dir, &cfg, wl, alt.tag(), dataset, opts.repeat)?);
        }
        Alternative::Opt => {
            let mut best: Option<WorkloadReport> = None;
            for &fraction in &SWEEP_FRACTIONS {
                let cfg = cfg_at(fraction, opts.strategy);
                let rep = run_workload(dir, &cfg, wl, "opt-sweep", dataset, opts.repeat)?;
                // Strictly-less keeps the earlier (smaller) fraction on
                // ties.
                if best.as_ref().is_none_or(|b| rep.total_io < b.total_io) {
                    best = Some(rep.clone());
                }
                reports.push(rep);
            }
            let mut winner = best.expect("sweep settings are never empty");
            winner.alt = alt.tag().to_string();
            reports.push(winner);
        }
        Alternative::QwLsh => {
            let model = model.ok_or_else(|| {
                Error::invalid("the qwlsh alternative needs a trained cost model")
            })?;
            let header = read_header(dir)?;
            let residency = index_residency_bytes(dir, header.m as usize, opts.page_size)?;
            let fraction = model.fraction_for_cache(
                header.n as usize,
                header.d as usize,
                opts.cache_bytes as u64,
                residency,
            );
            let cfg = cfg_at(fraction, opts.strategy);
            reports.push(run_workload(dir, &cfg, wl, alt.tag(), dataset, opts.repeat)?);
        }
    }
    Ok(reports)
}

/// Bytes of index cache that keep every projection tree fully resident:
/// the trees' on-disk footprint plus one page per projection to absorb
/// the rounding losses of splitting the partition `m` ways.
fn index_residency_bytes(dir: &Path, m: usize, page_size: usize) -> Result<u64> {
    let mut total = 0u64;
    for i in 0..m {
        total += std::fs::metadata(proj_path(dir, i))?.len();
    }
    Ok(total + (m * page_size) as u64)
}

/// Runs the workload once per alternative, sequentially, each from its
/// own cold cache. See [`run_alternative`] for the row layout.
pub fn compare_alternatives(
    dir: &Path,
    dataset: &str,
    wl: &QueryWorkload,
    model: &CostModel,
    opts: &CompareOptions,
) -> Result<Vec<WorkloadReport>> {
    let mut reports = Vec::new();
    for alt in Alternative::ALL {
        reports.extend(run_alternative(dir, dataset, wl, alt, Some(model), opts)?);
    }
    Ok(reports)
}

/// Runs the workload cold once per sweep fraction under the
/// per-projection strategy and returns the 11 rows in sweep order,
/// tagged `"sweep"`. This is the index-fraction sensitivity experiment.
pub fn sweep_report(
    dir: &Path,
    dataset: &str,
    wl: &QueryWorkload,
    cache_bytes: usize,
) -> Result<Vec<WorkloadReport>> {
    SWEEP_FRACTIONS
        .iter()
        .map(|&fraction| {
            let cfg = CacheConfig {
                total_bytes: cache_bytes,
                index_fraction: fraction,
                strategy: Strategy::PerProjection,
                page_size: DEFAULT_PAGE_SIZE,
            };
            run_workload(dir, &cfg, wl, "sweep", dataset, 0)
        })
        .collect()
}
