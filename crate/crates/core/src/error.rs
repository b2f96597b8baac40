//! Crate-wide error type. Variants are grouped by the stage that raises them;
//! the CLI maps them onto exit codes (config = 2, numeric = 3, infeasible = 4).

use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by construction, geometry, filtering, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    // --- construction ---
    /// aᵀAᵏB vanished for every k < n: no input channel reaches the row.
    #[error("safety row {index}: a'A^k B = 0 for all k < {n}; no relative degree")]
    NoRelativeDegree { index: usize, n: usize },
    /// A safety normal was (numerically) zero.
    #[error("safety row {index}: zero normal vector")]
    ZeroNormal { index: usize },
    /// Gain count must equal the relative degree of its row.
    #[error("safety row {index}: {given} gains supplied but relative degree is {expected}")]
    GainLengthMismatch {
        index: usize,
        given: usize,
        expected: usize,
    },
    /// Non-positive gain, mismatched dimensions, or other invalid construction input.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Operands disagree on dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // --- geometry ---
    /// A stacked constraint row has ℓ = 0 where a direction is required.
    #[error("constraint row {index} has zero input direction")]
    ZeroRow { index: usize },
    /// The input set itself admits no point.
    #[error("input set is empty")]
    EmptyInputSet,
    /// Claimed expansion vⱼ = Σᵢ ηⱼᵢ vᵢ does not hold to tolerance.
    #[error("dependent direction {index}: expansion residual {residual:.3e} exceeds tolerance")]
    DependencyMismatch { index: usize, residual: f64 },
    /// Elimination produced more intermediate halfspaces than the cap allows.
    #[error("variable elimination exceeded {cap} intermediate halfspaces")]
    CombinatorialBlowup { cap: usize },
    /// LP/QP iteration limit hit without convergence.
    #[error("{solver} iteration cap {cap} reached")]
    IterationCap { solver: &'static str, cap: usize },

    // --- filters ---
    /// saturate() was handed lower > upper.
    #[error("inverted interval: lower {lower:.6e} > upper {upper:.6e}")]
    InvertedInterval { lower: f64, upper: f64 },
    /// A saturation filter was asked to act where its interval is inverted.
    #[error("saturation interval inverted at the queried state: lower {lower:.6e} > upper {upper:.6e}")]
    InfeasibleState { lower: f64, upper: f64 },
    /// S·G⁻¹·Sᵀ deviates from identity beyond tolerance.
    #[error("S G^-1 S' deviates from identity by {deviation:.3e}")]
    GMismatch { deviation: f64 },
    /// Matrix expected to have full row rank does not.
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    /// Matrix expected symmetric positive definite is not.
    #[error("matrix not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    /// QP/LP constraint system admits no point.
    #[error("constraint system infeasible")]
    Infeasible,
    /// Explicit filter requested but the constraint geometry is not structured
    /// (single parallel family, or independent families with compatible bounds).
    #[error("explicit filter unavailable: {0}")]
    ExplicitUnavailable(String),

    // --- simulation ---
    /// Integration produced NaN/Inf.
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    /// Trajectory left the feasible domain; carries the Farkas certificate if
    /// one was recovered.
    #[error("constraints infeasible at t = {t}")]
    InfeasibleAtState {
        t: f64,
        x: DVector<f64>,
        certificate: Option<DVector<f64>>,
    },
    /// Rejection sampling failed to find enough states in the target set.
    #[error("sampling exhausted after {attempts} attempts ({found}/{requested} accepted)")]
    SamplingExhausted {
        attempts: usize,
        found: usize,
        requested: usize,
    },
}
