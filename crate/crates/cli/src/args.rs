use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use homog_core::chain::ScheduleKind;
use homog_core::{ConductanceLaw, Error, Method, Result, RunConfig, SolverSettings};

#[derive(Parser, Debug)]
#[command(
    name = "homog",
    version,
    about = "Estimate homogenized coefficients of random conductance models"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Hierarchical multiscale estimator.
    Hier(RunArgs),
    /// Massive correctors on independent boxes.
    Classical(RunArgs),
    /// Parabolic (discrete heat flow) estimator.
    Parabolic(RunArgs),
    /// Random walk Monte Carlo with extrapolation.
    Mc(RunArgs),
    /// Exact identity checks on random finite Markov chains.
    ChainVerify(ChainArgs),
    /// Any estimator over a range of scales; pick it with --method.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Hier,
    Classical,
    Parabolic,
    Mc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Hier => Method::Hier,
            MethodArg::Classical => Method::Classical,
            MethodArg::Parabolic => Method::Parabolic,
            MethodArg::Mc => Method::Mc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Geometric,
    Both,
}

impl ScheduleArg {
    pub fn kinds(self) -> Vec<ScheduleKind> {
        match self {
            ScheduleArg::Constant => vec![ScheduleKind::Constant],
            ScheduleArg::Geometric => vec![ScheduleKind::Geometric],
            ScheduleArg::Both => vec![ScheduleKind::Constant, ScheduleKind::Geometric],
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value = "bernoulli:1,9")]
    pub law: ConductanceLaw,
    /// Comma-separated unit vector; defaults to the first coordinate vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, action = ArgAction::Set)]
    pub xi: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// CSV destination; a `.summary.csv` file is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Reference value for the abs_error column.
    #[arg(long)]
    pub truth: Option<f64>,
    /// Single scale (hier, classical).
    #[arg(long, conflicts_with = "n_range")]
    pub n: Option<usize>,
    /// Inclusive scale range `A:B` (hier, classical).
    #[arg(long, value_parser = parse_range)]
    pub n_range: Option<(usize, usize)>,
    /// Exponent of the mesoscopic box growth (hier).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Number of dyadic time blocks (parabolic).
    #[arg(long = "L", conflicts_with = "l_range")]
    pub l: Option<usize>,
    /// Inclusive range `A:B` of L (parabolic).
    #[arg(long = "L-range", value_parser = parse_range)]
    pub l_range: Option<(usize, usize)>,
    /// Apply the factor 1/2 in front of the time sum (parabolic).
    #[arg(long)]
    pub half_factor: Option<Switch>,
    /// Number of walk paths (mc).
    #[arg(long = "N")]
    pub paths: Option<u64>,
    /// Time horizons, comma-separated (mc).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub t: Option<Vec<f64>>,
    /// Read the displacement at t and 2t from one path (mc).
    #[arg(long)]
    pub reuse_path: Option<Switch>,
    /// Relative residual tolerance of the linear solver.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Iteration cap of the linear solver.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub method: MethodArg,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ChainArgs {
    #[arg(long, default_value = "both")]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("empty range {a}:{b}"));
    }
    Ok((a, b))
}

fn not_for(flag: &str, method: Method) -> Error {
    Error::param(format!("--{flag} does not apply to {method}"))
}

impl RunArgs {
    /// Builds a validated run configuration for `method`.
    pub fn to_config(&self, method: Method) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(method, self.d, self.law);
        if self.d == 0 {
            return Err(Error::param("--d must be at least 1"));
        }
        let uses_n = matches!(method, Method::Hier | Method::Classical);
        let checks = [
            ("n", self.n.is_some() || self.n_range.is_some(), uses_n),
            ("eps", self.eps.is_some(), method == Method::Hier),
            (
                "L",
                self.l.is_some() || self.l_range.is_some(),
                method == Method::Parabolic,
            ),
            (
                "half-factor",
                self.half_factor.is_some(),
                method == Method::Parabolic,
            ),
            ("N", self.paths.is_some(), method == Method::Mc),
            ("t", self.t.is_some(), method == Method::Mc),
            (
                "reuse-path",
                self.reuse_path.is_some(),
                method == Method::Mc,
            ),
        ];
        for (flag, given, applies) in checks {
            if given && !applies {
                return Err(not_for(flag, method));
            }
        }
        cfg.xi = match &self.xi {
            Some(xi) => xi.clone(),
            None => homog_core::env::unit_xi(self.d),
        };
        cfg.seed = self.seed;
        cfg.reps = self.reps;
        cfg.truth = self.truth;
        cfg.workers = self.workers;
        cfg.eps = self.eps.unwrap_or(0.0);
        cfg.half_factor = self.half_factor.is_none_or(bool::from);
        cfg.reuse_path = self.reuse_path.is_none_or(bool::from);
        if let Some(p) = self.paths {
            cfg.paths = p;
        }
        cfg.solver = SolverSettings {
            rel_tol: self.rel_tol.unwrap_or(cfg.solver.rel_tol),
            max_iters: self.max_iters.or(cfg.solver.max_iters),
        };
        if !(cfg.solver.rel_tol > 0.0 && cfg.solver.rel_tol < 1.0) {
            return Err(Error::param("--rel-tol must lie in (0, 1)"));
        }
        let range = |single: Option<usize>, range: Option<(usize, usize)>, default: usize| match (
            single, range,
        ) {
            (Some(n), _) => vec![n],
            (None, Some((a, b))) => (a..=b).collect(),
            (None, None) => vec![default],
        };
        cfg.sizes = match method {
            Method::Hier => range(self.n, self.n_range, 6),
            Method::Classical => range(self.n, self.n_range, 5),
            Method::Parabolic => range(self.l, self.l_range, 6),
            Method::Mc => match &self.t {
                Some(ts) => ts
                    .iter()
                    .map(|&t| {
                        if t.fract() != 0.0 || t < 1.0 {
                            Err(Error::param(format!(
                                "--t expects whole positive times, got {t}"
                            )))
                        } else {
                            Ok(t as usize)
                        }
                    })
                    .collect::<Result<_>>()?,
                None => vec![100],
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splices `--config FILE` entries in right after the subcommand so that
/// flags given on the command line take precedence.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let p = it
                .next()
                .ok_or_else(|| Error::param("--config needs a file path"))?;
            path = Some(PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::param(format!("cannot read config {}: {e}", path.display())))?;
    let injected = config_args(&text)?;
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .ok_or_else(|| Error::param("--config needs a subcommand"))?;
    rest.splice(at..at, injected);
    Ok(rest)
}

/// `key = value` lines, `#` comments, blank lines ignored.
pub fn config_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::param(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim().trim_start_matches("--");
        if k.is_empty() {
            return Err(Error::param(format!("config line {}: empty key", i + 1)));
        }
        out.push(format!("--{k}").into());
        out.push(v.trim().into());
    }
    Ok(out)
}
