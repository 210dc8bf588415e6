//! The solve-free estimator: explicit lazy-walk iteration started from
//! `w_0 = div(a xi) / pi`, with dyadic blocks of steps averaged over
//! shrinking boxes.

use serde::Serialize;

use crate::cg::WorkCounter;
use crate::env::{check_xi, mean_axia, Environment};
use crate::error::{Error, Result};
use crate::hier::axia_budget;
use crate::lattice::{
    div_a_xi, materialize, pi_grid, row_starts, BoxSpec, GridFn, StencilOperator,
};
use crate::report::{EstimateReport, Method};
use crate::sum::{pairwise_sum, LANES};
use crate::torus::{green_quadratic, parabolic_partial_sums, TorusField};

/// Steps `first..=last` are averaged over `B_{avg_radius}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Block {
    pub l: usize,
    pub first: usize,
    pub last: usize,
    pub avg_radius: f64,
}

/// Where the iteration is carried out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Domain {
    /// `w_j` lives on the smallest box still needed by a later block, grown
    /// by a diffusive margin `min(m, ceil(5 sqrt(m)))` for the `m` steps
    /// left before that block ends.
    #[default]
    Shrinking,
    /// One box of radius `r(L, 0) + 5 ceil(L/2) 2^{L/2}` for every step.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParabolicPlan {
    pub dim: usize,
    pub levels: usize,
    pub half_factor: bool,
    pub domain: Domain,
    pub blocks: Vec<Block>,
    /// `radii[j]` is the radius on which `w_j` is computed, `j = 0..=2^L - 1`.
    pub radii: Vec<usize>,
}

/// `r(L, l) = 2^{L - l/2}`.
pub fn block_radius(levels: usize, l: usize) -> f64 {
    2f64.powf(levels as f64 - l as f64 / 2.0)
}

fn diffusive_margin(m: usize) -> usize {
    m.min((5.0 * (m as f64).sqrt()).ceil() as usize)
}

pub fn make_parabolic_plan(dim: usize, levels: usize, half_factor: bool) -> Result<ParabolicPlan> {
    make_parabolic_plan_with(dim, levels, half_factor, Domain::default())
}

pub fn make_parabolic_plan_with(
    dim: usize,
    levels: usize,
    half_factor: bool,
    domain: Domain,
) -> Result<ParabolicPlan> {
    if dim == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    if !(1..=24).contains(&levels) {
        return Err(Error::param(format!("L must lie in 1..=24, got {levels}")));
    }
    let blocks: Vec<Block> = (0..levels)
        .map(|l| Block {
            l,
            first: (1 << l) - 1,
            last: (1 << (l + 1)) - 2,
            avg_radius: block_radius(levels, l),
        })
        .collect();
    let steps = (1usize << levels) - 1;
    let radii = match domain {
        Domain::Fixed => {
            let pad = 5.0 * levels.div_ceil(2) as f64 * 2f64.powf(levels as f64 / 2.0);
            vec![(block_radius(levels, 0) + pad).ceil() as usize; steps + 1]
        }
        Domain::Shrinking => (0..=steps)
            .map(|j| {
                blocks
                    .iter()
                    .filter(|b| b.last + 1 >= j)
                    .map(|b| b.avg_radius.floor() as usize + diffusive_margin(b.last + 1 - j))
                    .max()
                    .unwrap_or(0)
            })
            .collect(),
    };
    Ok(ParabolicPlan {
        dim,
        levels,
        half_factor,
        domain,
        blocks,
        radii,
    })
}

impl ParabolicPlan {
    /// Number of explicit steps, `2^L - 1`.
    pub fn steps(&self) -> usize {
        self.radii.len() - 1
    }

    pub fn factor(&self) -> f64 {
        if self.half_factor {
            0.5
        } else {
            1.0
        }
    }

    pub fn field_radius(&self) -> usize {
        self.radii.iter().copied().max().unwrap_or(0)
    }

    fn block_of(&self, step: usize) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| (b.first..=b.last).contains(&step))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParabolicReport {
    pub d_l: f64,
    pub mean_axia: f64,
    pub a_hat: f64,
    /// Contribution of each block to `d_l`, factor included.
    pub block_terms: Vec<f64>,
    pub work_units: u64,
    pub seed: u64,
    pub levels: usize,
}

impl ParabolicReport {
    pub fn to_estimate(&self, dim: usize) -> EstimateReport {
        EstimateReport {
            method: Method::Parabolic,
            dim,
            size: self.levels,
            seed: self.seed,
            a_hat: self.a_hat,
            sigma2_stat: self.d_l,
            work_units: self.work_units,
        }
    }
}

/// Zeroes the part of `B_outer` outside `B_inner`, in storage padded to `padded`.
fn zero_shell(buf: &mut [f64], dim: usize, padded: usize, outer: usize, inner: usize) {
    if outer <= inner {
        return;
    }
    let side = 2 * padded + 1;
    let len = 2 * outer + 1;
    let (lo, hi) = (outer - inner, outer + inner);
    let mut coords = vec![0usize; dim.saturating_sub(1)];
    for start in row_starts(dim, padded, outer) {
        let row = &mut buf[start..start + len];
        let inside = coords.iter().all(|&c| (lo..=hi).contains(&c));
        if inside {
            row[..lo].fill(0.0);
            row[hi + 1..].fill(0.0);
        } else {
            row.fill(0.0);
        }
        for c in coords.iter_mut().rev() {
            *c += 1;
            if *c < len {
                break;
            }
            *c = 0;
        }
    }
    debug_assert!(side >= len);
}

/// `sum pi w (w + w')` over one row, with lane accumulators.
fn row_energy(pi: &[f64], w: &[f64], next: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = pi.len() / LANES * LANES;
    for c in (0..chunks).step_by(LANES) {
        for (j, a) in acc.iter_mut().enumerate() {
            let i = c + j;
            *a += pi[i] * w[i] * (w[i] + next[i]);
        }
    }
    for i in chunks..pi.len() {
        acc[i - chunks] += pi[i] * w[i] * (w[i] + next[i]);
    }
    crate::sum::fold_lanes(&acc)
}

pub fn run_parabolic(
    env: &Environment,
    xi: &[f64],
    plan: &ParabolicPlan,
) -> Result<ParabolicReport> {
    if env.dim != plan.dim {
        return Err(Error::param(format!(
            "plan for d = {} used with a d = {} environment",
            plan.dim, env.dim
        )));
    }
    check_xi(xi, plan.dim)?;
    let dim = plan.dim;
    let top = plan.field_radius();
    let bx = BoxSpec::new(dim, top);
    let field = materialize(env, bx)?;
    let op = StencilOperator::new(&field, top, 0.0)?;
    let pi = pi_grid(&field, bx)?;
    let f = div_a_xi(&field, xi, bx)?;
    drop(field);
    let w0 = GridFn {
        bx,
        values: f
            .values
            .iter()
            .zip(&pi.values)
            .map(|(f, p)| f / p)
            .collect(),
    };
    let mut work = WorkCounter::default();
    work.add(bx.volume() as u64);
    let pi = op.pad(&pi);
    let half_inv: Vec<f64> = pi
        .iter()
        .map(|&p| if p > 0.0 { 0.5 / p } else { 0.0 })
        .collect();
    let mut cur = op.pad(&w0);
    drop(w0);
    let mut next = vec![0.0; cur.len()];
    let mut stale = 0usize;
    let mut block_sums: Vec<Vec<f64>> = vec![Vec::new(); plan.blocks.len()];
    for j in 0..plan.steps() {
        let target = plan.radii[j + 1];
        op.for_each_laplacian_row(&cur, target, |start, lw| {
            let n = &mut next[start..start + lw.len()];
            let c = &cur[start..start + lw.len()];
            let h = &half_inv[start..start + lw.len()];
            for i in 0..lw.len() {
                n[i] = c[i] - lw[i] * h[i];
            }
        });
        zero_shell(&mut next, dim, top + 1, stale, target);
        work.add(BoxSpec::new(dim, target).volume() as u64);
        if let Some(block) = plan.block_of(j) {
            let r = block.avg_radius.floor() as usize;
            let len = 2 * r + 1;
            let rows: Vec<f64> = row_starts(dim, top + 1, r)
                .into_iter()
                .map(|s| row_energy(&pi[s..s + len], &cur[s..s + len], &next[s..s + len]))
                .collect();
            block_sums[block.l].push(pairwise_sum(&rows) / BoxSpec::new(dim, r).volume() as f64);
        }
        stale = plan.radii[j];
        std::mem::swap(&mut cur, &mut next);
    }
    let block_terms: Vec<f64> = block_sums
        .iter()
        .map(|s| plan.factor() * pairwise_sum(s))
        .collect();
    let d_l = pairwise_sum(&block_terms);
    let mean = mean_axia(env, xi, axia_budget(&env.law, dim, plan.levels))?;
    Ok(ParabolicReport {
        d_l,
        mean_axia: mean,
        a_hat: mean - d_l,
        block_terms,
        work_units: work.units,
        seed: env.seed,
        levels: plan.levels,
    })
}

/// `|S_K - <g, L_1^-1 g>_pi|` on a periodic field, with the half factor.
pub fn spectral_identity_check(torus: &TorusField, xi: &[f64], steps: usize) -> Result<f64> {
    let exact = green_quadratic(torus, &torus.div_a_xi(xi)?);
    let sums = parabolic_partial_sums(torus, xi, steps, 0.5)?;
    Ok((sums[steps] - exact).abs())
}
