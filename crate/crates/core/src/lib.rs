//! Controlled G-expectation problems in one space dimension: a lattice
//! (discrete dynamic programming) solver, a monotone finite-difference solver
//! for the associated HJB equation, and reference tools for checking them.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the precision for typical use.

pub mod analysis;
pub mod error;
pub mod expr;
pub mod field;
pub mod gexp;
pub mod hjb;
pub mod lattice;
pub mod probe;
pub mod problem;
pub mod scalar;
pub mod tree;

pub use error::{Error, Result};
pub use expr::{CoefficientExpr, EvalError, ParseError};
pub use field::{Grid1D, Provenance, ValueField};
pub use gexp::{GammaSet, Matrix, SymMatrix};
pub use hjb::{cfl_max_dt, f_term, hamiltonian, hjb_residual, solve_hjb, HamiltonianInputs, SchemeParams};
pub use lattice::{dpp_residual, one_step_gexp, semigroup_apply, solve_dpp, ControlPolicy, LatticeOptions};
pub use probe::{continuity_in_t_probe, lipschitz_probe};
pub use problem::{catalog, catalog_entry, ControlProblem, OracleTag, ProblemCatalogEntry, ProblemSpec};
pub use tree::{brute_force_value, solve_dpp_tree};
pub use scalar::Scalar;

pub type Problem = ControlProblem<f64>;
pub type Field = ValueField<f64>;
pub type Gamma = GammaSet<f64>;
pub type Grid = Grid1D<f64>;

pub type Problem32 = ControlProblem<f32>;
pub type Field32 = ValueField<f32>;
pub type Gamma32 = GammaSet<f32>;
pub type Grid32 = Grid1D<f32>;
