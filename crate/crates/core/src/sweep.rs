//! Repeated runs over a range of scales, CSV output and regression summaries.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::cg::SolverSettings;
use crate::corrector::{make_classical_plan, run_classical};
use crate::env::{check_xi, derive_seed, unit_xi, ConductanceLaw, Environment};
use crate::error::{Error, Result};
use crate::hier::{make_plan, run_hier};
use crate::parabolic::{make_parabolic_plan, run_parabolic};
use crate::report::{EstimateReport, Method};
use crate::stats::{fit_slope, rms_error, SlopeFit};
use crate::walk::{run_mc, WalkConfig};

/// Frozen column order of the per-run CSV.
pub const CSV_HEADER: [&str; 9] = [
    "method",
    "d",
    "n",
    "seed",
    "estimate",
    "sigma2_stat",
    "abs_error",
    "work_units",
    "wall_seconds",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub dim: usize,
    pub law: ConductanceLaw,
    pub xi: Vec<f64>,
    pub seed: u64,
    pub reps: usize,
    /// `n` for hier and classical, `L` for parabolic, the horizon `t` for mc.
    pub sizes: Vec<usize>,
    pub eps: f64,
    pub half_factor: bool,
    pub paths: u64,
    pub reuse_path: bool,
    pub solver: SolverSettings,
    pub truth: Option<f64>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn new(method: Method, dim: usize, law: ConductanceLaw) -> Self {
        RunConfig {
            method,
            dim,
            law,
            xi: unit_xi(dim),
            seed: 1,
            reps: 1,
            sizes: vec![match method {
                Method::Mc => 100,
                _ => 6,
            }],
            eps: 0.0,
            half_factor: true,
            paths: 10_000,
            reuse_path: true,
            solver: SolverSettings::default(),
            truth: None,
            workers: None,
        }
    }

    /// The reference value for `abs_error`: an explicit truth, else a known one.
    pub fn ground_truth(&self) -> Option<f64> {
        self.truth.or_else(|| {
            let norm2: f64 = self.xi.iter().map(|x| x * x).sum();
            self.law.known_ahom(self.dim).map(|a| a * norm2)
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_xi(&self.xi, self.dim)?;
        if self.reps == 0 {
            return Err(Error::param("reps must be at least 1"));
        }
        if self.sizes.is_empty() {
            return Err(Error::param("no sizes to run"));
        }
        if self.workers == Some(0) {
            return Err(Error::param("workers must be at least 1"));
        }
        for &size in &self.sizes {
            match self.method {
                Method::Hier => {
                    make_plan(self.dim, size, self.eps)?;
                }
                Method::Classical => {
                    make_classical_plan(self.dim, size)?;
                }
                Method::Parabolic => {
                    make_parabolic_plan(self.dim, size, self.half_factor)?;
                }
                Method::Mc => {
                    let mut w = WalkConfig::new(self.paths, size as f64, 0);
                    w.reuse_path = self.reuse_path;
                    w.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Seed of repetition `rep` at scale `size`.
    pub fn run_seed(&self, size: usize, rep: usize) -> u64 {
        derive_seed(derive_seed(self.seed, size as u64), rep as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub estimate: f64,
    pub sigma2_stat: f64,
    pub abs_error: Option<f64>,
    pub work_units: u64,
    pub wall_seconds: f64,
}

/// One estimate at one scale.
pub fn run_one(cfg: &RunConfig, size: usize, seed: u64) -> Result<EstimateReport> {
    match cfg.method {
        Method::Hier => {
            let env = Environment::new(cfg.law, cfg.dim, seed)?;
            let plan = make_plan(cfg.dim, size, cfg.eps)?;
            Ok(EstimateReport::from_hier(
                &run_hier(&env, &cfg.xi, &plan, &cfg.solver)?,
                cfg.dim,
            ))
        }
        Method::Classical => {
            let plan = make_classical_plan(cfg.dim, size)?;
            Ok(run_classical(&cfg.law, seed, &cfg.xi, &plan, &cfg.solver)?.to_estimate(cfg.dim))
        }
        Method::Parabolic => {
            let env = Environment::new(cfg.law, cfg.dim, seed)?;
            let plan = make_parabolic_plan(cfg.dim, size, cfg.half_factor)?;
            Ok(run_parabolic(&env, &cfg.xi, &plan)?.to_estimate(cfg.dim))
        }
        Method::Mc => {
            let mut w = WalkConfig::new(cfg.paths, size as f64, seed);
            w.reuse_path = cfg.reuse_path;
            Ok(run_mc(&cfg.law, cfg.dim, &cfg.xi, &w)?.to_estimate())
        }
    }
}

/// All `(size, rep)` runs, sorted by `(n, seed)`.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let truth = cfg.ground_truth();
    let jobs: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&s| (0..cfg.reps).map(move |r| (s, cfg.run_seed(s, r))))
        .collect();
    let work = || {
        jobs.par_iter()
            .map(|&(size, seed)| {
                let start = Instant::now();
                let report = run_one(cfg, size, seed).map_err(|e| Error::Run {
                    context: format!("{} n={size} seed={seed}", cfg.method),
                    source: Box::new(e),
                })?;
                Ok(SweepRow {
                    method: cfg.method,
                    d: cfg.dim,
                    n: size,
                    seed,
                    estimate: report.a_hat,
                    sigma2_stat: report.sigma2_stat,
                    abs_error: truth.map(|t| (report.a_hat - t).abs()),
                    work_units: report.work_units,
                    wall_seconds: start.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let mut rows = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Resource(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    rows.sort_by_key(|r| (r.n, r.seed));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub reps: usize,
    pub mean_estimate: f64,
    pub rms_error: Option<f64>,
    pub mean_work_units: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub sizes: Vec<SizeSummary>,
    /// `log2 rms_error` against the scale axis.
    pub error_fit: Option<SlopeFit>,
    /// `log2 work_units` against the scale axis.
    pub work_fit: Option<SlopeFit>,
}

/// The regression axis: `n` or `L` directly, `log2 t` for walks.
pub fn scale_axis(method: Method, size: usize) -> f64 {
    match method {
        Method::Mc => (size as f64).log2(),
        _ => size as f64,
    }
}

pub fn summarize(method: Method, rows: &[SweepRow], truth: Option<f64>) -> Summary {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.dedup();
    let per: Vec<SizeSummary> = sizes
        .iter()
        .map(|&n| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n).collect();
            let est: Vec<f64> = group.iter().map(|r| r.estimate).collect();
            SizeSummary {
                n,
                reps: group.len(),
                mean_estimate: est.iter().sum::<f64>() / est.len() as f64,
                rms_error: truth.map(|t| rms_error(&est, t)),
                mean_work_units: group.iter().map(|r| r.work_units as f64).sum::<f64>()
                    / group.len() as f64,
            }
        })
        .collect();
    let xs: Vec<f64> = per.iter().map(|s| scale_axis(method, s.n)).collect();
    let error_fit = per
        .iter()
        .map(|s| s.rms_error.filter(|e| *e > 0.0).map(f64::log2))
        .collect::<Option<Vec<f64>>>()
        .and_then(|ys| fit_slope(&xs, &ys).ok());
    let work: Vec<f64> = per.iter().map(|s| s.mean_work_units.log2()).collect();
    let work_fit = fit_slope(&xs, &work).ok();
    Summary {
        sizes: per,
        error_fit,
        work_fit,
    }
}

pub fn write_rows<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRecord {
    quantity: &'static str,
    n: Option<usize>,
    value: f64,
    ci95: Option<f64>,
}

pub fn write_summary<W: std::io::Write>(out: W, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in &summary.sizes {
        let mut rec = |quantity, value| {
            w.serialize(SummaryRecord {
                quantity,
                n: Some(s.n),
                value,
                ci95: None,
            })
        };
        rec("reps", s.reps as f64)?;
        rec("mean_estimate", s.mean_estimate)?;
        if let Some(e) = s.rms_error {
            rec("rms_error", e)?;
            rec("log2_rms_error", e.log2())?;
        }
        rec("mean_work_units", s.mean_work_units)?;
        rec("log2_work_units", s.mean_work_units.log2())?;
    }
    let fits = [
        ("error_slope", "error_intercept", &summary.error_fit),
        ("work_slope", "work_intercept", &summary.work_fit),
    ];
    for (slope, intercept, fit) in fits {
        if let Some(f) = fit {
            w.serialize(SummaryRecord {
                quantity: slope,
                n: None,
                value: f.slope,
                ci95: Some(f.ci95),
            })?;
            w.serialize(SummaryRecord {
                quantity: intercept,
                n: None,
                value: f.intercept,
                ci95: Some(f.intercept_ci95),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `runs.csv` -> `runs.summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = match out.extension() {
        Some(e) if e == "csv" => out.with_extension(""),
        _ => out.to_path_buf(),
    };
    let mut s = stem.into_os_string();
    s.push(".summary.csv");
    PathBuf::from(s)
}

/// Runs the sweep and writes both files.
pub fn sweep_to_files(cfg: &RunConfig, out: &Path) -> Result<(Vec<SweepRow>, Summary)> {
    let rows = run_sweep(cfg)?;
    let summary = summarize(cfg.method, &rows, cfg.ground_truth());
    write_rows(std::fs::File::create(out)?, &rows)?;
    write_summary(std::fs::File::create(summary_path(out))?, &summary)?;
    Ok((rows, summary))
}
