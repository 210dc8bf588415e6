//! Variable-speed random walks among random conductances and the naive and
//! extrapolated variance estimators built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{check_xi, derive_seed, ConductanceLaw, Environment};
use crate::error::{Error, Result};
use crate::report::{EstimateReport, Method};
use crate::stats::Moments;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WalkConfig {
    /// Number of trajectories `N`.
    pub paths: u64,
    /// Horizon `t`.
    pub t: f64,
    /// Read both horizons of the extrapolated estimator from the same paths.
    pub reuse_path: bool,
    pub seed_base: u64,
}

impl WalkConfig {
    pub fn new(paths: u64, t: f64, seed_base: u64) -> Self {
        WalkConfig {
            paths,
            t,
            reuse_path: true,
            seed_base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::param("need at least one trajectory"));
        }
        if !(self.t >= 2.0 && self.t.is_finite()) {
            return Err(Error::param(format!(
                "horizon must be at least 2, got {}",
                self.t
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WalkSample {
    pub displacement_t: f64,
    pub displacement_2t: f64,
    pub jumps: u64,
}

/// Functional values recorded along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct PathValues {
    pub values: Vec<f64>,
    pub jumps: u64,
}

/// Runs the walk from the origin and records `xi . X` at each of the
/// nondecreasing `times`.
pub fn simulate_path(
    env: &Environment,
    xi: &[f64],
    times: &[f64],
    rng: &mut impl Rng,
) -> PathValues {
    let dim = env.dim;
    let mut x = vec![0i64; dim];
    let mut rates = vec![0.0; 2 * dim];
    let mut clock = 0.0;
    let mut jumps = 0;
    let mut pos = 0.0;
    let mut values = Vec::with_capacity(times.len());
    let mut next = 0;
    let horizon = times.last().copied().unwrap_or(0.0);
    while next < times.len() {
        let mut pi = 0.0;
        for axis in 0..dim {
            rates[2 * axis] = env.edge(&x, axis);
            x[axis] -= 1;
            rates[2 * axis + 1] = env.edge(&x, axis);
            x[axis] += 1;
            pi += rates[2 * axis] + rates[2 * axis + 1];
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / pi;
        clock += wait;
        while next < times.len() && times[next] < clock {
            values.push(pos);
            next += 1;
        }
        if clock >= horizon {
            values.resize(times.len(), pos);
            break;
        }
        let mut u = rng.random::<f64>() * pi;
        let mut choice = rates.len() - 1;
        for (k, r) in rates.iter().enumerate() {
            if u < *r {
                choice = k;
                break;
            }
            u -= r;
        }
        let axis = choice / 2;
        let step = if choice.is_multiple_of(2) { 1 } else { -1 };
        x[axis] += step;
        pos += xi[axis] * step as f64;
        jumps += 1;
    }
    PathValues { values, jumps }
}

/// One path with `xi . X` read at `horizon` and `2 horizon`.
pub fn simulate_vsrw(env: &Environment, xi: &[f64], horizon: f64, seed: u64) -> WalkSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if horizon <= 0.0 {
        return WalkSample {
            displacement_t: 0.0,
            displacement_2t: 0.0,
            jumps: 0,
        };
    }
    let p = simulate_path(env, xi, &[horizon, 2.0 * horizon], &mut rng);
    WalkSample {
        displacement_t: p.values[0],
        displacement_2t: p.values[1],
        jumps: p.jumps,
    }
}

/// Source of independent additive-functional trajectories, indexed so that
/// any scheduling gives the same values.
pub trait PathSampler: Sync {
    fn sample(&self, index: u64, times: &[f64]) -> Result<PathValues>;
}

/// `xi . X_t` for the walk in a fresh environment per trajectory.
#[derive(Clone, Debug)]
pub struct DisplacementSampler {
    pub law: ConductanceLaw,
    pub dim: usize,
    pub xi: Vec<f64>,
    pub seed_base: u64,
}

impl DisplacementSampler {
    pub fn new(law: ConductanceLaw, dim: usize, xi: Vec<f64>, seed_base: u64) -> Result<Self> {
        check_xi(&xi, dim)?;
        Ok(DisplacementSampler {
            law,
            dim,
            xi,
            seed_base,
        })
    }
}

impl PathSampler for DisplacementSampler {
    fn sample(&self, index: u64, times: &[f64]) -> Result<PathValues> {
        let env = Environment::new(self.law, self.dim, derive_seed(self.seed_base, 2 * index))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed_base, 2 * index + 1));
        Ok(simulate_path(&env, &self.xi, times, &mut rng))
    }
}

/// A variance estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub sigma2: f64,
    pub std_error: f64,
    pub jumps: u64,
}

impl McEstimate {
    /// `sigma2 / 2`, the estimate of `xi . ahom xi`.
    pub fn a_hat(&self) -> f64 {
        self.sigma2 / 2.0
    }
}

/// Trajectories `range` sampled at `times`, in index order.
pub fn sample_paths(
    sampler: &impl PathSampler,
    range: std::ops::Range<u64>,
    times: &[f64],
) -> Result<Vec<PathValues>> {
    range
        .into_par_iter()
        .map(|i| sampler.sample(i, times))
        .collect()
}

fn estimate(per_path: &[f64], jumps: u64) -> McEstimate {
    let m = Moments::of(per_path);
    McEstimate {
        sigma2: m.mean,
        std_error: m.std_error(),
        jumps,
    }
}

/// `(1/N) sum_i F_i(t)^2 / t`.
pub fn naive_estimator(cfg: &WalkConfig, sampler: &impl PathSampler) -> Result<McEstimate> {
    cfg.validate()?;
    let paths = sample_paths(sampler, 0..cfg.paths, &[cfg.t])?;
    let z: Vec<f64> = paths.iter().map(|p| p.values[0].powi(2) / cfg.t).collect();
    Ok(estimate(&z, paths.iter().map(|p| p.jumps).sum()))
}

/// `2 naive(2t) - naive(t)`.
pub fn extrapolated_estimator(cfg: &WalkConfig, sampler: &impl PathSampler) -> Result<McEstimate> {
    cfg.validate()?;
    let t = cfg.t;
    if cfg.reuse_path {
        let paths = sample_paths(sampler, 0..cfg.paths, &[t, 2.0 * t])?;
        Ok(extrapolate_reused(&paths, 0, 1, t))
    } else {
        let short = sample_paths(sampler, 0..cfg.paths, &[t])?;
        let long = sample_paths(sampler, cfg.paths..2 * cfg.paths, &[2.0 * t])?;
        let a = estimate(
            &short
                .iter()
                .map(|p| p.values[0].powi(2) / t)
                .collect::<Vec<_>>(),
            short.iter().map(|p| p.jumps).sum(),
        );
        let b = estimate(
            &long
                .iter()
                .map(|p| p.values[0].powi(2) / (2.0 * t))
                .collect::<Vec<_>>(),
            long.iter().map(|p| p.jumps).sum(),
        );
        Ok(McEstimate {
            sigma2: 2.0 * b.sigma2 - a.sigma2,
            std_error: (4.0 * b.std_error.powi(2) + a.std_error.powi(2)).sqrt(),
            jumps: a.jumps + b.jumps,
        })
    }
}

/// Naive estimate from checkpoint `k` of each path recorded at time `t`.
pub fn naive_from(paths: &[PathValues], k: usize, t: f64) -> McEstimate {
    let z: Vec<f64> = paths.iter().map(|p| p.values[k].powi(2) / t).collect();
    estimate(&z, paths.iter().map(|p| p.jumps).sum())
}

/// Extrapolated estimate from checkpoints `k` (time `t`) and `k2` (time `2t`)
/// of the same paths; the standard error accounts for their correlation.
pub fn extrapolate_reused(paths: &[PathValues], k: usize, k2: usize, t: f64) -> McEstimate {
    let z: Vec<f64> = paths
        .iter()
        .map(|p| 2.0 * p.values[k2].powi(2) / (2.0 * t) - p.values[k].powi(2) / t)
        .collect();
    estimate(&z, paths.iter().map(|p| p.jumps).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McReport {
    pub extrapolated: McEstimate,
    pub naive: McEstimate,
    pub t: f64,
    pub seed: u64,
    pub dim: usize,
}

impl McReport {
    pub fn to_estimate(&self) -> EstimateReport {
        EstimateReport {
            method: Method::Mc,
            dim: self.dim,
            size: self.t.round() as usize,
            seed: self.seed,
            a_hat: self.extrapolated.a_hat(),
            sigma2_stat: self.extrapolated.sigma2,
            work_units: self.extrapolated.jumps,
        }
    }
}

/// Both estimators from one batch of reused paths.
pub fn run_mc(law: &ConductanceLaw, dim: usize, xi: &[f64], cfg: &WalkConfig) -> Result<McReport> {
    cfg.validate()?;
    let sampler = DisplacementSampler::new(*law, dim, xi.to_vec(), cfg.seed_base)?;
    let (extrapolated, naive) = if cfg.reuse_path {
        let paths = sample_paths(&sampler, 0..cfg.paths, &[cfg.t, 2.0 * cfg.t])?;
        (
            extrapolate_reused(&paths, 0, 1, cfg.t),
            naive_from(&paths, 0, cfg.t),
        )
    } else {
        (
            extrapolated_estimator(cfg, &sampler)?,
            naive_estimator(cfg, &sampler)?,
        )
    };
    Ok(McReport {
        extrapolated,
        naive,
        t: cfg.t,
        seed: cfg.seed_base,
        dim,
    })
}
