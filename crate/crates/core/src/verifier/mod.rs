//! Ground truth for the certificates: the BKW solution, a small homogeneous
//! solver, and the domination check.

pub mod bkw;
pub mod domination;
pub mod solver;

pub use bkw::{bkw_bounds, bkw_evaluate, BkwState};
pub use domination::{check_domination, DominationReport, Evaluable, VelocityGrid};
pub use solver::{solve_homogeneous, Solution, SolverConfig};
