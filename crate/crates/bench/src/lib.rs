//! Fixtures shared by the criterion benchmarks.

use homog_core::lattice::{div_a_xi, materialize};
use homog_core::{BoxSpec, ConductanceLaw, Environment, GridFn, LocalField, Result};

/// The two-point law `{1, 9}` with equal weights.
pub fn two_point() -> ConductanceLaw {
    ConductanceLaw::two_point(1.0, 9.0, 0.5).expect("valid law")
}

pub fn environment(dim: usize, seed: u64) -> Environment {
    Environment::new(two_point(), dim, seed).expect("valid environment")
}

/// A materialized field on `B_radius` together with `div(a e_1)` on it.
pub fn corrector_problem(dim: usize, radius: usize, seed: u64) -> Result<(LocalField, GridFn)> {
    let bx = BoxSpec::new(dim, radius);
    let field = materialize(&environment(dim, seed), bx)?;
    let mut xi = vec![0.0; dim];
    xi[0] = 1.0;
    let rhs = div_a_xi(&field, &xi, bx)?;
    Ok((field, rhs))
}
