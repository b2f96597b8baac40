//! Stacked high-order control barrier constraints for LTI systems.
//!
//! Given ẋ = Ax + Bu and affine safety functions hᵢ(x) = aᵢᵀx − bᵢ, this crate
//! builds the induced input constraints ℓᵢᵀu ≥ βᵢ(x) (one row per safety
//! function, stacked as Mu ≤ d(x)), characterizes where the stacked system is
//! feasible for a given input set, synthesizes explicit saturation filters for
//! structured constraint geometries, and validates them against a dense QP
//! solver along simulated trajectories.
//!
//! Modules:
//! - [`hocbf`]: barrier-row construction (relative degrees, gain polynomials,
//!   ψ-chains, stacking).
//! - [`geometry`]: parallel families, support intervals, feasibility tests and
//!   domains, block decomposition, input-variable elimination, and the dense
//!   LP solver backing them.
//! - [`filters`]: scalar/blockwise saturation filters, QP-weight construction,
//!   and the active-set QP fallback.
//! - [`sim`]: scenario simulation (RK4, zero-order hold), set rasterization,
//!   and rejection sampling of initial states.

pub mod error;
pub mod filters;
pub mod geometry;
pub mod hocbf;
pub mod sim;

pub use error::Error;

/// Shared numerical tolerances. Kept in one place so tests and callers can
/// reference the exact thresholds the library decides with.
pub mod tol {
    /// Relative tolerance for rank decisions, relative-degree detection, and
    /// parallel-direction matching.
    pub const RELATIVE: f64 = 1e-9;
    /// Absolute tolerance for LP feasibility/optimality decisions.
    pub const LP: f64 = 1e-9;
    /// Membership tolerance for halfspace/witness residuals.
    pub const MEMBERSHIP: f64 = 1e-8;
    /// Maximum ‖S·G⁻¹·Sᵀ − I‖∞ accepted by the blockwise filter.
    pub const G_IDENTITY: f64 = 1e-10;
    /// KKT residual bound certified by the QP solver.
    pub const KKT: f64 = 1e-8;
}
