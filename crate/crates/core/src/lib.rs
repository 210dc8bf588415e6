//! Estimators for the homogenized coefficient of random conductance models.

pub mod cg;
pub mod chain;
pub mod corrector;
pub mod env;
pub mod error;
pub mod hier;
pub mod lattice;
pub mod parabolic;
pub mod report;
pub mod stats;
pub mod stencil;
pub mod sum;
pub mod sweep;
pub mod torus;
pub mod walk;

pub use cg::{cg_solve, CgOutcome, SolveParams, SolverSettings, WorkCounter};
pub use env::{ConductanceLaw, EdgeId, Environment, LawKind};
pub use error::{Error, Result};
pub use hier::{make_plan, run_hier, HierPlan, HierReport};
pub use lattice::{BoxSpec, GridFn, LocalField};
pub use report::{EstimateReport, Method};
pub use stats::{fit_slope, SlopeFit};
pub use sweep::{run_sweep, RunConfig, SweepRow};
