//! The classical estimator: massive approximate correctors on independent
//! boxes, energy averaged in the centre.

use rayon::prelude::*;
use serde::Serialize;

use crate::cg::{cg_solve, SolverSettings, WorkCounter};
use crate::env::{check_xi, ConductanceLaw, Environment};
use crate::error::{Error, Result};
use crate::hier::boundary_layer;
use crate::lattice::{div_a_xi, materialize, row_starts, BoxSpec, GridFn, LocalField};
use crate::report::{EstimateReport, Method};
use crate::sum::pairwise_sum;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalPlan {
    pub dim: usize,
    pub n: usize,
    /// Independent boxes, `2^n`.
    pub samples: u64,
    /// Side length `2^{n/d}` of the averaging box.
    pub side: f64,
    /// `side^-2`, which is `2^-n` in two dimensions.
    pub mu: f64,
    pub avg_radius: usize,
    pub layer: f64,
    pub solve_radius: usize,
}

pub fn make_classical_plan(dim: usize, n: usize) -> Result<ClassicalPlan> {
    if dim == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    if n > 40 {
        return Err(Error::param(format!("n = {n} is out of range")));
    }
    let side = 2f64.powf(n as f64 / dim as f64);
    let mu = side.powi(-2);
    let avg_radius = (side / 2.0).floor() as usize;
    let layer = boundary_layer(mu);
    Ok(ClassicalPlan {
        dim,
        n,
        samples: 1 << n,
        side,
        mu,
        avg_radius,
        layer,
        solve_radius: avg_radius + layer.ceil() as usize,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalReport {
    pub sigma2_tilde: f64,
    pub energies: Vec<f64>,
    pub work_units: u64,
    pub seed: u64,
    pub n: usize,
}

impl ClassicalReport {
    pub fn to_estimate(&self, dim: usize) -> EstimateReport {
        EstimateReport {
            method: Method::Classical,
            dim,
            size: self.n,
            seed: self.seed,
            a_hat: self.sigma2_tilde,
            sigma2_stat: self.sigma2_tilde,
            work_units: self.work_units,
        }
    }
}

/// `|B_r|^-1 sum_{x in B_r} sum_i a_i(x) (xi_i + phi(x + e_i) - phi(x))^2`.
pub fn energy_average(field: &LocalField, phi: &GridFn, xi: &[f64], r: usize) -> Result<f64> {
    let dim = phi.bx.dim;
    if r >= phi.bx.radius || r >= field.bx.radius {
        return Err(Error::param(format!(
            "energy over radius {r} needs the corrector on a strictly larger box"
        )));
    }
    let len = 2 * r + 1;
    let rows = row_starts(dim, phi.bx.radius, r);
    let field_rows = row_starts(dim, field.bx.radius + 1, r);
    let mut buf = vec![0.0; len];
    let mut row_sums = Vec::with_capacity(rows.len());
    for (&s, &fs) in rows.iter().zip(&field_rows) {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (axis, &x) in xi.iter().enumerate().take(dim) {
            let stride = phi.bx.stride(axis);
            let a = &field.axis_values(axis)[fs..fs + len];
            let here = &phi.values[s..s + len];
            let there = &phi.values[s + stride..s + stride + len];
            for (((o, a), p), q) in buf.iter_mut().zip(a).zip(here).zip(there) {
                let g = x + q - p;
                *o += a * g * g;
            }
        }
        row_sums.push(pairwise_sum(&buf));
    }
    Ok(pairwise_sum(&row_sums) / BoxSpec::new(dim, r).volume() as f64)
}

/// Solves `(mu + L) phi = div(a xi)` on `B_solve` and returns the central energy.
pub fn sample_energy(
    field: &LocalField,
    xi: &[f64],
    mu: f64,
    solve_radius: usize,
    avg_radius: usize,
    solver: &SolverSettings,
    work: &mut WorkCounter,
) -> Result<f64> {
    let bx = BoxSpec::new(field.bx.dim, solve_radius);
    let rhs = div_a_xi(field, xi, bx)?;
    work.add(bx.volume() as u64);
    let phi = cg_solve(field, &solver.at(mu), &rhs, work)?.solution;
    energy_average(field, &phi, xi, avg_radius)
}

/// Seed of sample `i` for base seed `seed_base`.
pub fn sample_seed(seed_base: u64, i: u64) -> u64 {
    seed_base ^ i
}

pub fn run_classical(
    law: &ConductanceLaw,
    seed_base: u64,
    xi: &[f64],
    plan: &ClassicalPlan,
    solver: &SolverSettings,
) -> Result<ClassicalReport> {
    check_xi(xi, plan.dim)?;
    let results: Vec<Result<(f64, u64)>> = (0..plan.samples)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<(f64, u64)> {
                let env = Environment::new(*law, plan.dim, sample_seed(seed_base, i))?;
                let field = materialize(&env, BoxSpec::new(plan.dim, plan.solve_radius))?;
                let mut work = WorkCounter::default();
                let e = sample_energy(
                    &field,
                    xi,
                    plan.mu,
                    plan.solve_radius,
                    plan.avg_radius,
                    solver,
                    &mut work,
                )?;
                Ok((e, work.units))
            };
            run().map_err(|e| e.at_sample(i))
        })
        .collect();
    let mut energies = Vec::with_capacity(results.len());
    let mut work_units = 0;
    for r in results {
        let (e, w) = r?;
        energies.push(e);
        work_units += w;
    }
    Ok(ClassicalReport {
        sigma2_tilde: pairwise_sum(&energies) / energies.len() as f64,
        energies,
        work_units,
        seed: seed_base,
        n: plan.n,
    })
}
