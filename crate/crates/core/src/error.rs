use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: uncertainty set has d = {expected}, argument has d = {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid uncertainty set: {0}")]
    InvalidGamma(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("coefficient `{slot}` failed to evaluate: {source}")]
    Eval {
        slot: &'static str,
        #[source]
        source: EvalError,
    },

    #[error("coefficient `{slot}` produced a non-finite value at t = {t}, x = {x}")]
    NonFiniteCoefficient { slot: &'static str, t: f64, x: f64 },

    #[error("Lipschitz probe failed for `{slot}`: estimated constant {constant} exceeds ceiling {ceiling}")]
    LipschitzProbe {
        slot: &'static str,
        constant: f64,
        ceiling: f64,
    },

    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("lattice stability bound violated: delta * (Lip_y f + sigma_hi^2 Lip_y g) = {value} > 0.5")]
    LatticeUnstable { value: f64 },

    #[error("growth ceiling exceeded at row {k}, node {i}: |V| = {value}")]
    GrowthCeiling { k: usize, i: usize, value: f64 },

    #[error("non-finite value at row {k}, node {i}")]
    NonFinite { k: usize, i: usize },

    #[error("time step {dt} exceeds the monotonicity bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("CFL denominator vanishes; the explicit scheme cannot be used for this problem")]
    DegenerateCfl,

    #[error("tree depth {depth} with {branching} branches per node is too large to enumerate")]
    DepthTooLarge { depth: usize, branching: usize },

    #[error("row {row} out of range (field has {rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("volatility level {0} lies outside the uncertainty set")]
    VolatilityOutsideGamma(f64),
}
