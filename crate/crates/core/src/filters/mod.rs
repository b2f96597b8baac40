//! Safety filters: minimally invasive corrections of a nominal input.
//!
//! For a single parallel family the exact filter is scalar saturation of vᵀu
//! along the weighted direction G⁻¹v. For several families with independent
//! directions stacked into S, componentwise saturation of ε = Su is exact
//! whenever S·G⁻¹·Sᵀ = I; `construct_g` builds a weight matrix with that
//! property for any full-row-rank S. Geometries without such structure fall
//! back to the active-set QP in [`qp`].

pub mod qp;

pub use qp::{solve_qp, KktResiduals, QpProblem, QpSolution};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::geometry::PwaBound;
use crate::{tol, Error};

/// Clamp `s` into [lower, upper]. ±∞ bounds mean one-sided or no clamping.
pub fn saturate(s: f64, lower: f64, upper: f64) -> Result<f64, Error> {
    if lower > upper {
        return Err(Error::InvertedInterval { lower, upper });
    }
    Ok(s.max(lower).min(upper))
}

fn cholesky_of(g: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>, Error> {
    let sym_dev = (g - g.transpose()).norm();
    if sym_dev > tol::RELATIVE * (1.0 + g.norm()) {
        return Err(Error::NotPositiveDefinite(format!(
            "asymmetry {sym_dev:.3e}"
        )));
    }
    Cholesky::new(g.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))
}

/// Exact filter for one parallel family over 𝒰 = ℝᵐ (or, for m = 1, a box
/// folded into the bounds): clamp ε = vᵀu into [lower(x), upper(x)] and
/// correct along G⁻¹v, which leaves u untouched when already admissible.
pub fn parallel_filter(
    x: &DVector<f64>,
    u_nom: &DVector<f64>,
    v: &DVector<f64>,
    g: &DMatrix<f64>,
    lower: &PwaBound,
    upper: &PwaBound,
) -> Result<DVector<f64>, Error> {
    let lo = lower.value(x);
    let hi = upper.value(x);
    if lo > hi {
        return Err(Error::InfeasibleState {
            lower: lo,
            upper: hi,
        });
    }
    let eps_nom = v.dot(u_nom);
    let eps_star = saturate(eps_nom, lo, hi)?;
    if eps_star == eps_nom {
        return Ok(u_nom.clone());
    }
    let chol = cholesky_of(g)?;
    let ginv_v = chol.solve(v);
    let denom = v.dot(&ginv_v);
    if denom <= 0.0 {
        return Err(Error::NotPositiveDefinite(
            "v'G^-1 v must be positive".into(),
        ));
    }
    Ok(u_nom + ginv_v * ((eps_star - eps_nom) / denom))
}

/// ‖S·G⁻¹·Sᵀ − I‖∞ (max absolute entry deviation).
pub fn g_identity_deviation(s: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64, Error> {
    let chol = cholesky_of(g)?;
    let prod = s * chol.solve(&s.transpose());
    let mut dev: f64 = 0.0;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((prod[(i, j)] - target).abs());
        }
    }
    Ok(dev)
}

/// Exact blockwise filter: componentwise saturation of ε = Su into the given
/// interval bounds, corrected through G⁻¹Sᵀ. Requires S·G⁻¹·Sᵀ = I so that the
/// quadratic objective separates across the block coordinates.
pub fn block_filter(
    x: &DVector<f64>,
    u_nom: &DVector<f64>,
    s: &DMatrix<f64>,
    g: &DMatrix<f64>,
    lower: &[PwaBound],
    upper: &[PwaBound],
) -> Result<DVector<f64>, Error> {
    let iota = s.nrows();
    if lower.len() != iota || upper.len() != iota {
        return Err(Error::DimensionMismatch(format!(
            "{} bound pairs supplied for {} block coordinates",
            lower.len().min(upper.len()),
            iota
        )));
    }
    let dev = g_identity_deviation(s, g)?;
    if dev > tol::G_IDENTITY {
        return Err(Error::GMismatch { deviation: dev });
    }
    let eps_nom = s * u_nom;
    let mut delta = DVector::zeros(iota);
    let mut changed = false;
    for k in 0..iota {
        let lo = lower[k].value(x);
        let hi = upper[k].value(x);
        if lo > hi {
            return Err(Error::InfeasibleState {
                lower: lo,
                upper: hi,
            });
        }
        let star = saturate(eps_nom[k], lo, hi)?;
        delta[k] = star - eps_nom[k];
        changed |= delta[k] != 0.0;
    }
    if !changed {
        return Ok(u_nom.clone());
    }
    let chol = cholesky_of(g)?;
    Ok(u_nom + chol.solve(&(s.transpose() * delta)))
}

/// Weight matrix making the block filter exact for the given full-row-rank S:
/// square S gives G = SᵀS; wide S gives
/// G⁻¹ = Sᵀ(SSᵀ)⁻²S + τ·(I − Sᵀ(SSᵀ)⁻¹S), i.e. exact inverse scaling on the
/// row space of S and uniform weight τ on its complement.
pub fn construct_g(s: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>, Error> {
    let (iota, m) = (s.nrows(), s.ncols());
    if iota == 0 || iota > m {
        return Err(Error::RankDeficient(format!(
            "S must have 1..=m rows, got {iota}x{m}"
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Invalid("tau must be positive and finite".into()));
    }
    let sv = s.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 || sv.iter().any(|&v| v <= tol::RELATIVE * smax) {
        return Err(Error::RankDeficient(
            "S does not have full row rank".into(),
        ));
    }
    if iota == m {
        return Ok(s.transpose() * s);
    }
    let sst = s * s.transpose();
    let sst_chol = Cholesky::new(sst.clone())
        .ok_or_else(|| Error::RankDeficient("SS' not positive definite".into()))?;
    let sst_inv = sst_chol.inverse();
    let sst_inv2 = &sst_inv * &sst_inv;
    let proj = s.transpose() * &sst_inv * s;
    let ginv = s.transpose() * sst_inv2 * s + (DMatrix::identity(m, m) - proj) * tau;
    let ginv_chol = Cholesky::new(ginv)
        .ok_or_else(|| Error::NotPositiveDefinite("constructed G^-1 not SPD".into()))?;
    Ok(ginv_chol.inverse())
}
