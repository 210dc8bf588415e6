//! Unpreconditioned conjugate gradient for `(mu + L) u = b` on a box with a
//! zero exterior.

use crate::error::{Error, Result};
use crate::lattice::{GridFn, LocalField, StencilOperator};

/// Tally of stencil applications times box volume.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct WorkCounter {
    pub units: u64,
}

impl WorkCounter {
    pub fn add(&mut self, units: u64) {
        self.units += units;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveParams {
    pub mu: f64,
    pub rel_tol: f64,
    /// `None` derives a cap from the condition number, see `iteration_cap`.
    pub max_iters: Option<usize>,
}

pub const DEFAULT_REL_TOL: f64 = 1e-10;

impl SolveParams {
    pub fn new(mu: f64) -> Self {
        SolveParams {
            mu,
            rel_tol: DEFAULT_REL_TOL,
            max_iters: None,
        }
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = Some(max_iters);
        self
    }

    /// Explicit cap, or else `sqrt(kappa) ln(2 sqrt(kappa) / rel_tol) + 1000`,
    /// the textbook residual bound for conjugate gradient plus slack.
    pub fn iteration_cap(&self, kappa: f64) -> usize {
        self.max_iters.unwrap_or_else(|| {
            let s = kappa.max(1.0).sqrt();
            (s * (2.0 * s / self.rel_tol).ln()).ceil() as usize + 1000
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param(format!(
                "mass must be positive, got {}",
                self.mu
            )));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::param(format!(
                "relative tolerance must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_iters == Some(0) {
            return Err(Error::param("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Tolerance and iteration cap shared by every level of a multi-mass run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub rel_tol: f64,
    pub max_iters: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rel_tol: DEFAULT_REL_TOL,
            max_iters: None,
        }
    }
}

impl SolverSettings {
    pub fn at(&self, mu: f64) -> SolveParams {
        SolveParams {
            mu,
            rel_tol: self.rel_tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: GridFn,
    pub iterations: usize,
    /// `||(mu + L) u - b|| / ||b||`, recomputed from scratch at exit.
    pub relative_residual: f64,
}

/// Solves `(mu + L) u = b` on `b`'s box starting from zero.
pub fn cg_solve(
    field: &LocalField,
    params: &SolveParams,
    b: &GridFn,
    work: &mut WorkCounter,
) -> Result<CgOutcome> {
    cg_solve_from(field, params, b, None, work, |_, _| {})
}

/// Full-control variant: optional initial guess and a per-iteration observer
/// receiving the iteration count and the current padded iterate.
pub fn cg_solve_from(
    field: &LocalField,
    params: &SolveParams,
    b: &GridFn,
    initial: Option<&GridFn>,
    work: &mut WorkCounter,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<CgOutcome> {
    params.validate()?;
    let op = StencilOperator::new(field, b.bx.radius, params.mu)?;
    let volume = op.volume() as u64;
    let n = op.padded_len();

    let rhs = op.pad(b);
    let b_norm = op.dot(&rhs, &rhs).sqrt();
    if b_norm == 0.0 {
        work.add(volume);
        return Ok(CgOutcome {
            solution: GridFn::zeros(b.bx),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let tol = params.rel_tol * b_norm;
    let cap = params.iteration_cap(op.condition_bound());

    let mut x = match initial {
        Some(g) => op.pad(&g.resized(b.bx.radius)),
        None => vec![0.0; n],
    };
    let mut scratch = vec![0.0; n];
    let mut r = rhs.clone();
    if initial.is_some() {
        op.apply(&x, &mut scratch);
        r.iter_mut().zip(&scratch).for_each(|(r, a)| *r -= a);
    }
    let mut p = vec![0.0; n];
    let mut beta = 0.0;
    let mut rr = op.dot(&r, &r);
    let mut iterations = 0usize;
    observe(0, &x);

    loop {
        while rr.sqrt() > tol {
            if iterations >= cap {
                work.add((iterations as u64 + 1) * volume);
                return Err(Error::NonConvergence {
                    iterations,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let pap = op.cg_direction_sweep(&r, &mut p, beta);
            let alpha = rr / pap;
            let rr_next = op.cg_update_sweep(&mut x, &mut r, &p, alpha);
            beta = rr_next / rr;
            rr = rr_next;
            iterations += 1;
            observe(iterations, &x);
        }
        // The recursive residual can drift from the true one; verify and
        // restart from the current iterate if needed.
        op.apply(&x, &mut scratch);
        r.iter_mut()
            .zip(&rhs)
            .zip(&scratch)
            .for_each(|((r, b), a)| *r = b - a);
        rr = op.dot(&r, &r);
        if rr.sqrt() <= tol {
            break;
        }
        beta = 0.0;
    }

    work.add((iterations as u64 + 1) * volume);
    Ok(CgOutcome {
        solution: op.unpad(&x),
        iterations,
        relative_residual: rr.sqrt() / b_norm,
    })
}
