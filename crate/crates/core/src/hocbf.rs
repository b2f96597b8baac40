//! Barrier-row construction for LTI systems with affine safety functions.
//!
//! For ẋ = Ax + Bu and h(x) = aᵀx − b with relative degree r, chaining the
//! first-order conditions ψ_{k+1} = ψ̇_k + α_{k+1}ψ_k collapses into a single
//! input constraint
//!
//!   ℓᵀu ≥ −β(x),   ℓᵀ = aᵀA^{r−1}B,   β(x) = aᵀφ(A)x − φ(0)b,
//!
//! where φ(s) = ∏ⱼ(s + αⱼ). Rows stack into Mu ≤ d(x) with row i of M equal
//! to −ℓᵢᵀ and dᵢ(x) = βᵢ(x).

use nalgebra::{DMatrix, DVector};

use crate::{tol, Error};

/// ẋ = Ax + Bu with A ∈ ℝⁿˣⁿ, B ∈ ℝⁿˣᵐ.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, Error> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::Invalid("B must have at least one column".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("system matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Drift + input: f(x, u) = Ax + Bu.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Affine safety function h(x) = aᵀx − b, kept nonnegative, with one positive
/// gain per derivative order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSafety {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub gains: Vec<f64>,
}

impl AffineSafety {
    pub fn new(normal: DVector<f64>, offset: f64, gains: Vec<f64>) -> Result<Self, Error> {
        if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::Invalid("safety row must be finite".into()));
        }
        if gains.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::Invalid("gains must be positive and finite".into()));
        }
        Ok(Self {
            normal,
            offset,
            gains,
        })
    }

    /// h(x) = aᵀx − b.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

/// cᵀx + c₀.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn new(linear: DVector<f64>, constant: f64) -> Self {
        Self { linear, constant }
    }

    /// A form with zero linear part: x ↦ c.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self {
            linear: DVector::zeros(dim),
            constant: c,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.linear.dot(x) + self.constant
    }

    /// Scale both parts by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            linear: &self.linear * s,
            constant: self.constant * s,
        }
    }
}

/// One stacked constraint row ℓᵀu ≥ −β(x), tagged with the safety function it
/// came from and its relative degree.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierRow {
    pub source: usize,
    pub rel_degree: usize,
    pub ell: DVector<f64>,
    pub beta: AffineForm,
}

/// ψ_{k} levels of one safety row: ψ₀ = h, ψ_{k+1} = ψ̇_k + α_{k+1}ψ_k along
/// the drift (levels 0..r−1). The induced invariant set keeps every level ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiChain {
    pub source: usize,
    pub levels: Vec<AffineForm>,
}

impl PsiChain {
    /// Evaluate every level at x.
    pub fn eval(&self, x: &DVector<f64>) -> Vec<f64> {
        self.levels.iter().map(|f| f.eval(x)).collect()
    }

    /// True if every level is ≥ −tol at x.
    pub fn contains(&self, x: &DVector<f64>, tolerance: f64) -> bool {
        self.levels.iter().all(|f| f.eval(x) >= -tolerance)
    }
}

/// Smallest r ≥ 1 with aᵀAᵏB = 0 for k < r−1 and aᵀA^{r−1}B ≠ 0, or
/// `NoRelativeDegree` if no power up to n−1 reaches the input.
pub fn relative_degree(sys: &LtiSystem, normal: &DVector<f64>, index: usize) -> Result<usize, Error> {
    if normal.len() != sys.n() {
        return Err(Error::DimensionMismatch(format!(
            "normal has length {} but n = {}",
            normal.len(),
            sys.n()
        )));
    }
    let a_norm = sys.a.norm();
    let b_norm = sys.b.norm();
    if normal.norm() <= tol::RELATIVE * (1.0 + a_norm + b_norm) {
        return Err(Error::ZeroNormal { index });
    }
    // Row vector aᵀAᵏ maintained as a column (Aᵀ applied each step). Powers
    // beyond n−1 are linear combinations of lower ones, so the search stops at n.
    let mut v = normal.clone();
    let mut scale = normal.norm() * b_norm;
    for k in 0..sys.n() {
        let w = sys.b.transpose() * &v;
        if w.norm() > tol::RELATIVE * (1.0 + scale) {
            return Ok(k + 1);
        }
        v = sys.a.transpose() * &v;
        scale *= a_norm.max(1.0);
    }
    Err(Error::NoRelativeDegree {
        index,
        n: sys.n(),
    })
}

/// Build the stacked row for one safety function: relative degree, input
/// direction ℓ, and the affine offset β.
pub fn build_barrier_row(
    sys: &LtiSystem,
    safety: &AffineSafety,
    index: usize,
) -> Result<BarrierRow, Error> {
    let r = relative_degree(sys, &safety.normal, index)?;
    if safety.gains.len() != r {
        return Err(Error::GainLengthMismatch {
            index,
            given: safety.gains.len(),
            expected: r,
        });
    }
    // ℓᵀ = aᵀA^{r−1}B.
    let mut v = safety.normal.clone();
    for _ in 0..r - 1 {
        v = sys.a.transpose() * &v;
    }
    let ell = sys.b.transpose() * &v;
    // β(x) = aᵀ∏ⱼ(A + αⱼI)x − (∏ⱼαⱼ)b, accumulated one factor at a time.
    let mut w = safety.normal.clone();
    let mut phi0 = 1.0;
    for &alpha in &safety.gains {
        w = sys.a.transpose() * &w + alpha * &w;
        phi0 *= alpha;
    }
    Ok(BarrierRow {
        source: index,
        rel_degree: r,
        ell,
        beta: AffineForm::new(w, -phi0 * safety.offset),
    })
}

/// ψ-chain of one safety function along the drift ẋ = Ax:
/// ψ₀ = h, ψ_{k+1} = ψ̇_k + α_{k+1}ψ_k for k < r−1.
pub fn psi_chain(sys: &LtiSystem, safety: &AffineSafety, index: usize) -> Result<PsiChain, Error> {
    let r = relative_degree(sys, &safety.normal, index)?;
    if safety.gains.len() != r {
        return Err(Error::GainLengthMismatch {
            index,
            given: safety.gains.len(),
            expected: r,
        });
    }
    let mut levels = Vec::with_capacity(r);
    levels.push(AffineForm::new(safety.normal.clone(), -safety.offset));
    for k in 0..r - 1 {
        let prev: &AffineForm = &levels[k];
        let alpha = safety.gains[k];
        let linear = sys.a.transpose() * &prev.linear + alpha * &prev.linear;
        let constant = alpha * prev.constant;
        levels.push(AffineForm::new(linear, constant));
    }
    Ok(PsiChain {
        source: index,
        levels,
    })
}

/// Stacked input-constraint system Mu ≤ d(x).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub rows: Vec<BarrierRow>,
}

impl StackedSystem {
    /// Number of rows p.
    pub fn p(&self) -> usize {
        self.rows.len()
    }

    /// Input dimension m.
    pub fn m(&self) -> usize {
        self.rows[0].ell.len()
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.rows[0].beta.linear.len()
    }

    /// M ∈ ℝᵖˣᵐ with row i equal to −ℓᵢᵀ.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        let m = self.m();
        DMatrix::from_fn(p, m, |i, j| -self.rows[i].ell[j])
    }

    /// d(x) with dᵢ(x) = βᵢ(x).
    pub fn rhs_at(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.rows.iter().map(|r| r.beta.eval(x)))
    }
}

/// Stack rows, checking they share one input dimension and one state dimension.
pub fn stack(rows: Vec<BarrierRow>) -> Result<StackedSystem, Error> {
    if rows.is_empty() {
        return Err(Error::Invalid("cannot stack zero rows".into()));
    }
    let m = rows[0].ell.len();
    let n = rows[0].beta.linear.len();
    for (i, row) in rows.iter().enumerate() {
        if row.ell.len() != m || row.beta.linear.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has (m, n) = ({}, {}) but row 0 has ({m}, {n})",
                row.ell.len(),
                row.beta.linear.len()
            )));
        }
    }
    Ok(StackedSystem { rows })
}

/// Build the full stacked system from a list of safety functions.
pub fn build_stacked(sys: &LtiSystem, safeties: &[AffineSafety]) -> Result<StackedSystem, Error> {
    let rows = safeties
        .iter()
        .enumerate()
        .map(|(i, s)| build_barrier_row(sys, s, i))
        .collect::<Result<Vec<_>, _>>()?;
    stack(rows)
}
