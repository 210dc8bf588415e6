//! The hierarchical resolvent cascade.
//!
//! Starting from `v_{-1} = div(a xi)`, each level solves
//! `(2^-k + L) v_k = 2^-k v_{k-1}` and contributes
//! `2^k * avg_{B_{r_k}} (v_{k-1} v_k + v_k^2)` to `sigma2_hat`.

use serde::Serialize;

use crate::cg::{cg_solve, SolverSettings, WorkCounter};
use crate::env::{check_xi, mean_axia, ConductanceLaw, Environment};
use crate::error::{Error, Result};
use crate::lattice::{box_average, div_a_xi, materialize, BoxSpec, GridFn, LocalField};
use crate::sum::pairwise_sum;

/// Boundary layer for a solve with mass `mu`:
/// `5 (1 v mu^-1/2) (1 v log2(mu^-1/2))`.
pub fn boundary_layer(mu: f64) -> f64 {
    let s = mu.powf(-0.5);
    5.0 * s.max(1.0) * s.log2().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelPlan {
    pub k: usize,
    pub mu: f64,
    pub avg_radius: f64,
    /// Radius on which `v_k` must be trusted.
    pub accuracy_radius: usize,
    pub layer: f64,
    pub solve_radius: usize,
}

/// How accuracy radii are chosen across levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Nesting {
    /// Each level is trusted on its own averaging box only:
    /// `q_k = ceil(r_k)`.
    #[default]
    PerLevel,
    /// Each level is trusted on the whole solve box of the next one:
    /// `q_k = max(ceil(r_k), q_{k+1} + layer_{k+1})`.
    Nested,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierPlan {
    pub dim: usize,
    pub n: usize,
    pub eps: f64,
    pub nesting: Nesting,
    pub levels: Vec<LevelPlan>,
}

pub fn max_eps(dim: usize) -> f64 {
    (dim as f64 - 1.0) / (2.0 * dim as f64)
}

fn check_eps(dim: usize, eps: f64) -> Result<()> {
    if dim < 2 {
        return Err(Error::param(format!(
            "the hierarchical method needs d >= 2, got {dim}"
        )));
    }
    if !(0.0..max_eps(dim)).contains(&eps) {
        return Err(Error::param(format!(
            "eps = {eps} outside [0, {}) for d = {dim}",
            max_eps(dim)
        )));
    }
    Ok(())
}

pub fn make_plan(dim: usize, n: usize, eps: f64) -> Result<HierPlan> {
    make_plan_with(dim, n, eps, Nesting::default())
}

pub fn make_plan_with(dim: usize, n: usize, eps: f64, nesting: Nesting) -> Result<HierPlan> {
    check_eps(dim, eps)?;
    let radii = (0..=n)
        .map(|k| 2f64.powf(n as f64 - (0.5 - eps) * k as f64))
        .collect();
    HierPlan::from_radii(dim, eps, radii, nesting)
}

impl HierPlan {
    /// Plan with explicit averaging radii, one per level `k = 0..radii.len()`.
    /// Masses, layers and nested solve boxes follow the usual rules.
    pub fn from_radii(dim: usize, eps: f64, radii: Vec<f64>, nesting: Nesting) -> Result<HierPlan> {
        check_eps(dim, eps)?;
        if radii.is_empty() {
            return Err(Error::param("a plan needs at least one level"));
        }
        if let Some(r) = radii.iter().find(|r| !(**r >= 1.0 && r.is_finite())) {
            return Err(Error::param(format!("averaging radius {r} below 1")));
        }
        let n = radii.len() - 1;
        let mut levels: Vec<LevelPlan> = radii
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let mu = 2f64.powi(-(k as i32));
                LevelPlan {
                    k,
                    mu,
                    avg_radius: r,
                    accuracy_radius: 0,
                    layer: boundary_layer(mu),
                    solve_radius: 0,
                }
            })
            .collect();
        let mut next: Option<(usize, f64)> = None;
        for level in levels.iter_mut().rev() {
            let own = level.avg_radius.ceil() as usize;
            level.accuracy_radius = match (nesting, next) {
                (Nesting::Nested, Some((q, layer))) => own.max(q + layer.ceil() as usize),
                _ => own,
            };
            level.solve_radius = level.accuracy_radius + level.layer.ceil() as usize;
            next = Some((level.accuracy_radius, level.layer));
        }
        Ok(HierPlan {
            dim,
            n,
            eps,
            nesting,
            levels,
        })
    }

    /// Levels `0..=m` of this plan with their radii unchanged.
    pub fn prefix(&self, m: usize) -> Result<HierPlan> {
        if m > self.n {
            return Err(Error::param(format!("prefix {m} beyond n = {}", self.n)));
        }
        Ok(HierPlan {
            dim: self.dim,
            n: m,
            eps: self.eps,
            nesting: self.nesting,
            levels: self.levels[..=m].to_vec(),
        })
    }

    /// Radius of the field needed by the whole cascade.
    pub fn field_radius(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.solve_radius)
            .max()
            .unwrap_or(0)
    }
}

/// Everything the cascade exposes about one finished level.
pub struct LevelView<'a> {
    pub plan: &'a LevelPlan,
    pub v_prev: &'a GridFn,
    pub v: &'a GridFn,
    pub term: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutput {
    pub terms: Vec<f64>,
    pub iterations: Vec<usize>,
}

/// Runs the cascade on a materialized field, calling `observe` after each level.
pub fn run_cascade(
    field: &LocalField,
    xi: &[f64],
    plan: &HierPlan,
    solver: &SolverSettings,
    work: &mut WorkCounter,
    mut observe: impl FnMut(&LevelView),
) -> Result<CascadeOutput> {
    check_xi(xi, plan.dim)?;
    let top = BoxSpec::new(plan.dim, plan.levels[0].solve_radius);
    let mut v_prev = div_a_xi(field, xi, top)?;
    work.add(top.volume() as u64);
    let mut terms = Vec::with_capacity(plan.levels.len());
    let mut iterations = Vec::with_capacity(plan.levels.len());
    for level in &plan.levels {
        let rhs = v_prev.resized(level.solve_radius).scaled(level.mu);
        let out =
            cg_solve(field, &solver.at(level.mu), &rhs, work).map_err(|e| e.at_level(level.k))?;
        let v = out.solution;
        let sum = GridFn {
            bx: v.bx,
            values: v_prev
                .resized(level.solve_radius)
                .values
                .iter()
                .zip(&v.values)
                .map(|(a, b)| a + b)
                .collect(),
        };
        let term = box_average(&sum, &v, None, level.avg_radius)? / level.mu;
        observe(&LevelView {
            plan: level,
            v_prev: &v_prev,
            v: &v,
            term,
            iterations: out.iterations,
        });
        terms.push(term);
        iterations.push(out.iterations);
        v_prev = v;
    }
    Ok(CascadeOutput { terms, iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierReport {
    pub sigma2_hat: f64,
    pub mean_axia: f64,
    pub a_hat: f64,
    pub terms: Vec<f64>,
    pub iterations: Vec<usize>,
    pub work_units: u64,
    pub seed: u64,
    pub n: usize,
    pub eps: f64,
    pub law: String,
}

impl HierReport {
    /// Per-level contributions; they sum to `sigma2_hat`.
    pub fn partial_terms(&self) -> &[f64] {
        &self.terms
    }

    /// Running sums of the level contributions.
    pub fn cumulative(&self) -> Vec<f64> {
        self.terms
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect()
    }
}

pub fn hier_partial_terms(report: &HierReport) -> Vec<f64> {
    report.terms.clone()
}

/// Fresh samples used for `E[xi.a xi]` when the law's mean is not known
/// exactly: enough for a standard error of `2^{-d n / 2}`.
pub fn axia_budget(law: &ConductanceLaw, dim: usize, n: usize) -> u64 {
    let b = 2f64.powi((dim * n) as i32) * law.variance();
    b.ceil().clamp(1.0, 1e15) as u64
}

pub fn run_hier(
    env: &Environment,
    xi: &[f64],
    plan: &HierPlan,
    solver: &SolverSettings,
) -> Result<HierReport> {
    if env.dim != plan.dim {
        return Err(Error::param(format!(
            "plan for d = {} used with a d = {} environment",
            plan.dim, env.dim
        )));
    }
    check_xi(xi, plan.dim)?;
    let field = materialize(env, BoxSpec::new(plan.dim, plan.field_radius()))?;
    let mut work = WorkCounter::default();
    let out = run_cascade(&field, xi, plan, solver, &mut work, |_| {})?;
    drop(field);
    let sigma2_hat = pairwise_sum(&out.terms);
    let mean = mean_axia(env, xi, axia_budget(&env.law, plan.dim, plan.n))?;
    Ok(HierReport {
        sigma2_hat,
        mean_axia: mean,
        a_hat: mean - sigma2_hat,
        terms: out.terms,
        iterations: out.iterations,
        work_units: work.units,
        seed: env.seed,
        n: plan.n,
        eps: plan.eps,
        law: env.law.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::unit_xi;
    use crate::stats::Moments;

    fn two_point_env(seed: u64) -> Environment {
        Environment::new(ConductanceLaw::two_point(1.0, 9.0, 0.5).unwrap(), 2, seed).unwrap()
    }

    #[test]
    fn plan_radii_and_layers() {
        let plan = make_plan(2, 4, 0.0).unwrap();
        let r: Vec<f64> = plan.levels.iter().map(|l| l.avg_radius).collect();
        let expected = [16.0, 11.3137, 8.0, 5.6569, 4.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(plan.levels[0].layer, 5.0);
        assert_eq!(plan.levels[4].layer, 40.0);
        assert_eq!(plan.levels[4].accuracy_radius, 4);
        assert_eq!(plan.levels[4].solve_radius, 44);
        for l in &plan.levels {
            assert_eq!(l.accuracy_radius, l.avg_radius.ceil() as usize);
            assert_eq!(l.solve_radius, l.accuracy_radius + l.layer.ceil() as usize);
        }
        assert_eq!(plan.field_radius(), 44);
    }

    #[test]
    fn nested_plan_trusts_next_solve_box() {
        let plan = make_plan_with(2, 4, 0.0, Nesting::Nested).unwrap();
        assert_eq!(plan.levels[4].solve_radius, 44);
        assert_eq!(plan.levels[3].accuracy_radius, 44);
        for w in plan.levels.windows(2) {
            assert!(w[0].accuracy_radius >= w[1].solve_radius);
            assert!(w[0].accuracy_radius >= w[0].avg_radius.ceil() as usize);
        }
        assert_eq!(plan.field_radius(), plan.levels[0].solve_radius);
    }

    #[test]
    fn layer_formula() {
        assert_eq!(boundary_layer(1.0), 5.0);
        assert_eq!(boundary_layer(0.5), 5.0 * 2f64.sqrt());
        assert_eq!(boundary_layer(1.0 / 16.0), 40.0);
        assert!((boundary_layer(1.0 / 64.0) - 120.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_eps_and_dimension() {
        assert!(make_plan(2, 4, 0.25).is_err());
        assert!(make_plan(2, 4, 0.3).is_err());
        assert!(make_plan(2, 4, -0.1).is_err());
        assert!(make_plan(1, 4, 0.0).is_err());
        assert!(make_plan(3, 4, 0.3).is_ok());
        let plan = make_plan(2, 3, 0.2).unwrap();
        assert!((plan.levels[3].avg_radius - 2f64.powf(3.0 - 0.9)).abs() < 1e-12);
    }

    #[test]
    fn constant_law_is_exact() {
        let env = Environment::new(ConductanceLaw::constant(4.0).unwrap(), 2, 5).unwrap();
        let plan = make_plan(2, 4, 0.0).unwrap();
        let report = run_hier(&env, &unit_xi(2), &plan, &SolverSettings::default()).unwrap();
        assert_eq!(report.sigma2_hat, 0.0);
        assert_eq!(report.a_hat, 4.0);
        assert!(report.terms.iter().all(|t| *t == 0.0));
        assert!(report.iterations.iter().all(|i| *i == 0));
    }

    #[test]
    fn report_is_consistent() {
        let plan = make_plan(2, 4, 0.0).unwrap();
        let report = run_hier(
            &two_point_env(3),
            &unit_xi(2),
            &plan,
            &SolverSettings::default(),
        )
        .unwrap();
        assert_eq!(report.a_hat, report.mean_axia - report.sigma2_hat);
        assert_eq!(report.mean_axia, 5.0);
        assert_eq!(
            pairwise_sum(&hier_partial_terms(&report)),
            report.sigma2_hat
        );
        assert_eq!(
            *report.cumulative().last().unwrap(),
            report.terms.iter().sum::<f64>()
        );
        assert!(report.work_units > 0);
        assert!(
            (1.0..3.5).contains(&report.sigma2_hat),
            "{}",
            report.sigma2_hat
        );
    }

    #[test]
    fn extending_the_cascade_reuses_levels() {
        let env = two_point_env(17);
        let settings = SolverSettings::default();
        for nesting in [Nesting::PerLevel, Nesting::Nested] {
            let full = make_plan_with(2, 4, 0.0, nesting).unwrap();
            let short = full.prefix(3).unwrap();
            let a = run_hier(&env, &unit_xi(2), &short, &settings).unwrap();
            let b = run_hier(&env, &unit_xi(2), &full, &settings).unwrap();
            assert_eq!(a.terms[..], b.terms[..4]);
        }
    }

    #[test]
    fn layouts_agree_far_below_statistical_error() {
        let env = two_point_env(23);
        let settings = SolverSettings::default();
        let a = run_hier(&env, &unit_xi(2), &make_plan(2, 5, 0.0).unwrap(), &settings).unwrap();
        let nested = make_plan_with(2, 5, 0.0, Nesting::Nested).unwrap();
        let b = run_hier(&env, &unit_xi(2), &nested, &settings).unwrap();
        assert!((a.a_hat - b.a_hat).abs() < 0.1 * 2.0 * 2f64.powi(-5));
    }

    #[test]
    fn deterministic() {
        let plan = make_plan(2, 3, 0.0).unwrap();
        let env = two_point_env(8);
        let settings = SolverSettings::default();
        let a = run_hier(&env, &unit_xi(2), &plan, &settings).unwrap();
        let b = run_hier(&env, &unit_xi(2), &plan, &settings).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonconvergence_names_the_level() {
        let plan = make_plan(2, 3, 0.0).unwrap();
        let settings = SolverSettings {
            rel_tol: 1e-10,
            max_iters: Some(2),
        };
        let err = run_hier(&two_point_env(1), &unit_xi(2), &plan, &settings).unwrap_err();
        assert!(err.is_non_convergence());
        assert!(matches!(err, Error::Level { level: 0, .. }));
    }

    #[test]
    fn level_terms_nonnegative_in_mean() {
        let plan = make_plan(2, 3, 0.0).unwrap();
        let settings = SolverSettings::default();
        let runs: Vec<HierReport> = (0..100)
            .map(|s| run_hier(&two_point_env(1000 + s), &unit_xi(2), &plan, &settings).unwrap())
            .collect();
        for k in 0..=3 {
            let m = Moments::of(&runs.iter().map(|r| r.terms[k]).collect::<Vec<_>>());
            assert!(m.mean >= -3.0 * m.std_error(), "level {k}: {m:?}");
        }
    }

    #[test]
    fn terms_decay_with_level() {
        let plan = make_plan(2, 6, 0.0).unwrap();
        let settings = SolverSettings::default();
        let mut mean_abs = vec![0.0; 7];
        for s in 0..8 {
            let r = run_hier(&two_point_env(50 + s), &unit_xi(2), &plan, &settings).unwrap();
            for (m, t) in mean_abs.iter_mut().zip(&r.terms) {
                *m += t.abs() / 8.0;
            }
        }
        // Level 0 carries the local variance and sits far above the trend.
        let xs: Vec<f64> = (1..7).map(f64::from).collect();
        let ys: Vec<f64> = mean_abs[1..].iter().map(|m| m.log2()).collect();
        let fit = crate::stats::fit_slope(&xs, &ys).unwrap();
        assert!(
            (-2.2..=-0.8).contains(&fit.slope),
            "slope {} from {mean_abs:?}",
            fit.slope
        );
    }
}
