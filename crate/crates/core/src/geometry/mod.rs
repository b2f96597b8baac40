//! Feasibility geometry of stacked input constraints Mu ≤ d(x).
//!
//! Rows whose input directions are parallel collapse into interval bounds on
//! one scalar vᵀu; the pointwise feasibility question then reduces to interval
//! intersection (optionally against the support interval of the input set).
//! Non-parallel geometries are decided by a phase-one LP whose failure dual is
//! a separating certificate λ ≥ 0 with λᵀ[M;Q] = 0 and λᵀ[d(x);b] < 0.
//! State-space feasibility domains come out as halfspace intersections, either
//! directly from the interval conditions or by eliminating the input variables
//! from the joint (x, u) system.

pub mod fm;
pub mod lp;

use nalgebra::{DMatrix, DVector};

use crate::hocbf::{AffineForm, StackedSystem};
use crate::{tol, Error};

pub use fm::project_feasible_set;
pub use lp::{LpSolution, LpStatus};

/// Closed halfspace normal·x ≤ offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed residual normal·x − offset (≤ 0 inside).
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

/// Admissible input set 𝒰.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSet {
    /// ℝᵐ.
    All { dim: usize },
    /// Componentwise lo ≤ u ≤ hi; entries may be ±∞.
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// General polyhedron Qu ≤ b, validated nonempty at construction.
    Polyhedron { rows: Vec<Halfspace> },
}

impl InputSet {
    pub fn all(dim: usize) -> Self {
        InputSet::All { dim }
    }

    pub fn box_bounds(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, Error> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch(
                "box bounds must have equal length".into(),
            ));
        }
        for k in 0..lo.len() {
            if lo[k].is_nan() || hi[k].is_nan() || lo[k] == f64::INFINITY || hi[k] == f64::NEG_INFINITY
            {
                return Err(Error::Invalid(format!("box bound {k} is not a valid range")));
            }
            if lo[k] > hi[k] {
                return Err(Error::EmptyInputSet);
            }
        }
        Ok(InputSet::Box { lo, hi })
    }

    pub fn polyhedron(rows: Vec<Halfspace>, dim: usize) -> Result<Self, Error> {
        if rows.iter().any(|r| r.normal.len() != dim) {
            return Err(Error::DimensionMismatch(
                "polyhedron rows must match the input dimension".into(),
            ));
        }
        let probe = lp::solve(&DVector::zeros(dim), &rows)?;
        if probe.status == LpStatus::Infeasible {
            return Err(Error::EmptyInputSet);
        }
        Ok(InputSet::Polyhedron { rows })
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSet::All { dim } => *dim,
            InputSet::Box { lo, .. } => lo.len(),
            InputSet::Polyhedron { rows } => rows.first().map_or(0, |r| r.normal.len()),
        }
    }

    /// Finite halfspace description (empty for ℝᵐ; infinite box bounds are skipped).
    pub fn to_halfspaces(&self) -> Vec<Halfspace> {
        match self {
            InputSet::All { .. } => Vec::new(),
            InputSet::Box { lo, hi } => {
                let m = lo.len();
                let mut rows = Vec::new();
                for k in 0..m {
                    if hi[k].is_finite() {
                        let mut n = DVector::zeros(m);
                        n[k] = 1.0;
                        rows.push(Halfspace::new(n, hi[k]));
                    }
                    if lo[k].is_finite() {
                        let mut n = DVector::zeros(m);
                        n[k] = -1.0;
                        rows.push(Halfspace::new(n, -lo[k]));
                    }
                }
                rows
            }
            InputSet::Polyhedron { rows } => rows.clone(),
        }
    }

    pub fn contains(&self, u: &DVector<f64>, tolerance: f64) -> bool {
        match self {
            InputSet::All { .. } => true,
            InputSet::Box { lo, hi } => (0..lo.len())
                .all(|k| u[k] >= lo[k] - tolerance && u[k] <= hi[k] + tolerance),
            InputSet::Polyhedron { rows } => rows.iter().all(|r| r.eval(u) <= tolerance),
        }
    }
}

/// Rows of the stacked system whose input directions are scalar multiples of
/// one unit direction v (canonical sign: first nonzero entry positive).
/// Member i contributes cᵢ·vᵀu ≥ −βᵢ(x), i.e. a one-sided bound νᵢ = −βᵢ/cᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelFamily {
    pub direction: DVector<f64>,
    pub members: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub nu: Vec<AffineForm>,
}

/// Piecewise-affine bound: max (lower bounds) or min (upper bounds) of affine
/// pieces. Empty piece lists evaluate to −∞ (max) or +∞ (min).
#[derive(Debug, Clone, PartialEq)]
pub struct PwaBound {
    pub pieces: Vec<AffineForm>,
    pub kind: BoundKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Max,
    Min,
}

impl PwaBound {
    pub fn lower(pieces: Vec<AffineForm>) -> Self {
        Self {
            pieces,
            kind: BoundKind::Max,
        }
    }

    pub fn upper(pieces: Vec<AffineForm>) -> Self {
        Self {
            pieces,
            kind: BoundKind::Min,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let vals = self.pieces.iter().map(|p| p.eval(x));
        match self.kind {
            BoundKind::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            BoundKind::Min => vals.fold(f64::INFINITY, f64::min),
        }
    }
}

/// Group stacked rows into parallel families, ordered by first member.
/// Fails with `ZeroRow` if some row has no input direction.
pub fn detect_parallel_families(stacked: &StackedSystem) -> Result<Vec<ParallelFamily>, Error> {
    let scale = stacked
        .rows
        .iter()
        .fold(0.0_f64, |m, r| m.max(r.ell.norm()));
    let mut families: Vec<ParallelFamily> = Vec::new();
    for (i, row) in stacked.rows.iter().enumerate() {
        let norm = row.ell.norm();
        if norm <= tol::RELATIVE * (1.0 + scale) {
            return Err(Error::ZeroRow { index: i });
        }
        let mut matched = false;
        for fam in families.iter_mut() {
            let c = fam.direction.dot(&row.ell);
            let resid = (&row.ell - &fam.direction * c).norm();
            if resid <= tol::RELATIVE * norm {
                fam.members.push(i);
                fam.coefficients.push(c);
                fam.nu.push(row.beta.scaled(-1.0 / c));
                matched = true;
                break;
            }
        }
        if !matched {
            let mut v = &row.ell / norm;
            // Canonical sign: first entry clearly nonzero must be positive.
            let lead = v.iter().find(|e| e.abs() > tol::RELATIVE);
            if matches!(lead, Some(e) if *e < 0.0) {
                v = -v;
            }
            let c = v.dot(&row.ell);
            families.push(ParallelFamily {
                direction: v,
                members: vec![i],
                coefficients: vec![c],
                nu: vec![row.beta.scaled(-1.0 / c)],
            });
        }
    }
    Ok(families)
}

/// Collapse a family into its scalar interval bounds on vᵀu:
/// lower s̲(x) = max over members with cᵢ > 0, upper s̄(x) = min over cᵢ < 0.
pub fn merge_parallel(family: &ParallelFamily) -> (PwaBound, PwaBound) {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (k, &c) in family.coefficients.iter().enumerate() {
        if c > 0.0 {
            lower.push(family.nu[k].clone());
        } else {
            upper.push(family.nu[k].clone());
        }
    }
    (PwaBound::lower(lower), PwaBound::upper(upper))
}

/// Range of vᵀu over the input set: [inf, sup], with ±∞ where unbounded.
pub fn support_interval(v: &DVector<f64>, set: &InputSet) -> Result<(f64, f64), Error> {
    if v.len() != set.dim() {
        return Err(Error::DimensionMismatch(
            "direction length must match input dimension".into(),
        ));
    }
    match set {
        InputSet::All { .. } => {
            if v.norm() == 0.0 {
                Ok((0.0, 0.0))
            } else {
                Ok((f64::NEG_INFINITY, f64::INFINITY))
            }
        }
        InputSet::Box { lo, hi } => {
            let mut smin = 0.0;
            let mut smax = 0.0;
            for k in 0..v.len() {
                if v[k] > 0.0 {
                    smin += v[k] * lo[k];
                    smax += v[k] * hi[k];
                } else if v[k] < 0.0 {
                    smin += v[k] * hi[k];
                    smax += v[k] * lo[k];
                }
            }
            Ok((smin, smax))
        }
        InputSet::Polyhedron { rows } => {
            let min_sol = lp::solve(v, rows)?;
            let smin = match min_sol.status {
                LpStatus::Optimal => min_sol.value,
                LpStatus::Unbounded => f64::NEG_INFINITY,
                LpStatus::Infeasible => return Err(Error::EmptyInputSet),
            };
            let neg = -v;
            let max_sol = lp::solve(&neg, rows)?;
            let smax = match max_sol.status {
                LpStatus::Optimal => -max_sol.value,
                LpStatus::Unbounded => f64::INFINITY,
                LpStatus::Infeasible => return Err(Error::EmptyInputSet),
            };
            Ok((smin, smax))
        }
    }
}

/// Verdict of a pointwise feasibility query. Exactly one of `witness`
/// (a u satisfying every constraint) and `certificate` (λ ≥ 0 over the
/// stacked rows followed by the input-set rows, with λᵀ[M;Q] = 0 and
/// λᵀ[d(x);b] < 0) is present.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub witness: Option<DVector<f64>>,
    pub certificate: Option<DVector<f64>>,
}

/// Is {u ∈ 𝒰 : Mu ≤ d(x)} nonempty? Single-family geometries over ℝᵐ or a box
/// are decided by interval intersection; everything else goes through the LP.
pub fn feasible_at(
    stacked: &StackedSystem,
    set: &InputSet,
    x: &DVector<f64>,
) -> Result<FeasibilityReport, Error> {
    check_dims(stacked, set, x)?;
    let families = detect_parallel_families(stacked)?;
    if families.len() == 1 && !matches!(set, InputSet::Polyhedron { .. }) {
        let fam = &families[0];
        let (lower, upper) = merge_parallel(fam);
        let (smin, smax) = support_interval(&fam.direction, set)?;
        let lo = lower.value(x).max(smin);
        let hi = upper.value(x).min(smax);
        if lo <= hi {
            let target = lo.max(0.0_f64.min(hi));
            let u = match set {
                InputSet::All { dim } => {
                    let scale = target / fam.direction.norm_squared();
                    DVector::from_fn(*dim, |k, _| fam.direction[k] * scale)
                }
                InputSet::Box { lo: blo, hi: bhi } => {
                    match box_point_with_level(&fam.direction, blo, bhi, target) {
                        Some(u) => u,
                        None => return feasible_at_via_lp(stacked, set, x),
                    }
                }
                InputSet::Polyhedron { .. } => unreachable!(),
            };
            return Ok(FeasibilityReport {
                feasible: true,
                witness: Some(u),
                certificate: None,
            });
        }
        // Infeasible: let the LP produce the separating certificate so that the
        // report is identical to the general path's.
        return feasible_at_via_lp(stacked, set, x);
    }
    feasible_at_via_lp(stacked, set, x)
}

/// General pointwise feasibility through the phase-one LP, regardless of any
/// parallel structure.
pub fn feasible_at_via_lp(
    stacked: &StackedSystem,
    set: &InputSet,
    x: &DVector<f64>,
) -> Result<FeasibilityReport, Error> {
    check_dims(stacked, set, x)?;
    let m = stacked.m();
    let mut rows = Vec::with_capacity(stacked.p());
    for row in &stacked.rows {
        rows.push(Halfspace::new(-&row.ell, row.beta.eval(x)));
    }
    rows.extend(set.to_halfspaces());
    let sol = lp::solve(&DVector::zeros(m), &rows)?;
    match sol.status {
        LpStatus::Optimal => Ok(FeasibilityReport {
            feasible: true,
            witness: sol.point,
            certificate: None,
        }),
        LpStatus::Infeasible => Ok(FeasibilityReport {
            feasible: false,
            witness: None,
            certificate: sol.dual,
        }),
        LpStatus::Unbounded => Err(Error::Invalid(
            "zero-objective feasibility LP reported unbounded".into(),
        )),
    }
}

fn check_dims(stacked: &StackedSystem, set: &InputSet, x: &DVector<f64>) -> Result<(), Error> {
    if set.dim() != stacked.m() {
        return Err(Error::DimensionMismatch(format!(
            "input set dimension {} does not match m = {}",
            set.dim(),
            stacked.m()
        )));
    }
    if x.len() != stacked.n() {
        return Err(Error::DimensionMismatch(format!(
            "state length {} does not match n = {}",
            x.len(),
            stacked.n()
        )));
    }
    Ok(())
}

/// Pick u in the box with vᵀu exactly `target`, assuming target lies in the
/// box's support interval of v. Coordinates are fixed left to right, keeping
/// the remaining suffix able to cover what is left.
fn box_point_with_level(
    v: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    target: f64,
) -> Option<DVector<f64>> {
    let m = v.len();
    let (mut zmin, mut zmax) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        if v[k] > 0.0 {
            zmin[k] = v[k] * lo[k];
            zmax[k] = v[k] * hi[k];
        } else if v[k] < 0.0 {
            zmin[k] = v[k] * hi[k];
            zmax[k] = v[k] * lo[k];
        }
    }
    // Suffix achievable ranges over coordinates k+1..m.
    let mut suf_min = vec![0.0; m + 1];
    let mut suf_max = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suf_min[k] = suf_min[k + 1] + zmin[k];
        suf_max[k] = suf_max[k + 1] + zmax[k];
    }
    let mut u = DVector::zeros(m);
    let mut rem = target;
    for k in 0..m {
        let from_rem_lo = if suf_max[k + 1] == f64::INFINITY {
            f64::NEG_INFINITY
        } else {
            rem - suf_max[k + 1]
        };
        let from_rem_hi = if suf_min[k + 1] == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            rem - suf_min[k + 1]
        };
        let z_lo = zmin[k].max(from_rem_lo);
        let z_hi = zmax[k].min(from_rem_hi);
        if z_lo > z_hi + 1e-9 * (1.0 + rem.abs()) {
            return None;
        }
        let z = z_lo.max(0.0_f64.min(z_hi));
        if v[k] != 0.0 {
            u[k] = z / v[k];
            // Clamp into the box against rounding.
            u[k] = u[k].max(lo[k]).min(hi[k]);
            rem -= v[k] * u[k];
        } else {
            u[k] = 0.0_f64.max(lo[k]).min(hi[k]);
        }
    }
    Some(u)
}

/// Intersection of normalized halfspaces; `contains` uses an absolute
/// tolerance against the unit-normal residuals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polytope {
    pub halfspaces: Vec<Halfspace>,
}

impl Polytope {
    /// Normalize rows to unit normals. Zero-normal rows are dropped if trivial
    /// (0 ≤ offset with offset ≥ 0) or kept as an explicit "empty" marker
    /// 0·x ≤ −1 otherwise.
    pub fn from_rows(rows: Vec<Halfspace>) -> Self {
        let mut halfspaces = Vec::with_capacity(rows.len());
        for r in rows {
            let norm = r.normal.norm();
            if norm <= 1e-12 {
                if r.offset < 0.0 {
                    let dim = r.normal.len();
                    halfspaces.push(Halfspace::new(DVector::zeros(dim), -1.0));
                }
                continue;
            }
            halfspaces.push(Halfspace::new(&r.normal / norm, r.offset / norm));
        }
        Self { halfspaces }
    }

    pub fn contains(&self, x: &DVector<f64>, tolerance: f64) -> bool {
        self.halfspaces.iter().all(|h| h.eval(x) <= tolerance)
    }

    /// Smallest signed slack over the rows (negative inside, positive outside).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Halfspace description of the states where a single parallel family is
/// feasible for the given input set: every lower piece below every upper piece,
/// and (for bounded sets) every lower piece ≤ sup vᵀu, inf vᵀu ≤ every upper
/// piece.
pub fn feasibility_domain_parallel(
    family: &ParallelFamily,
    set: &InputSet,
) -> Result<Polytope, Error> {
    let (lower, upper) = merge_parallel(family);
    let (smin, smax) = support_interval(&family.direction, set)?;
    let mut rows = Vec::new();
    for li in &lower.pieces {
        for uj in &upper.pieces {
            rows.push(Halfspace::new(
                &li.linear - &uj.linear,
                uj.constant - li.constant,
            ));
        }
    }
    if smax.is_finite() {
        for li in &lower.pieces {
            rows.push(Halfspace::new(li.linear.clone(), smax - li.constant));
        }
    }
    if smin.is_finite() {
        for uj in &upper.pieces {
            rows.push(Halfspace::new(-&uj.linear, uj.constant - smin));
        }
    }
    Ok(Polytope::from_rows(rows))
}

/// One block of a partition, with the structure detected for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: Vec<usize>,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// All rows share one input direction.
    ParallelFamily,
    /// Rows are linearly independent (always feasible over ℝᵐ).
    IndependentRows,
    /// No structure claimed.
    General,
}

/// Partition of the stacked rows into blocks whose row spaces are mutually
/// independent; over 𝒰 = ℝᵐ, feasibility then splits into a conjunction of
/// per-block tests.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub blocks: Vec<Block>,
}

fn rank_of(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol::RELATIVE * smax).count()
}

fn rows_matrix(stacked: &StackedSystem, rows: &[usize]) -> DMatrix<f64> {
    let m = stacked.m();
    DMatrix::from_fn(rows.len(), m, |i, j| stacked.rows[rows[i]].ell[j])
}

/// Group rows into parallel families and promote the families to blocks when
/// their directions are linearly independent; otherwise everything lands in a
/// single unstructured block.
pub fn detect_blocks(stacked: &StackedSystem) -> Result<BlockPartition, Error> {
    let families = detect_parallel_families(stacked)?;
    let m = stacked.m();
    let dirs = DMatrix::from_fn(families.len(), m, |i, j| families[i].direction[j]);
    if rank_of(&dirs) == families.len() {
        let blocks = families
            .into_iter()
            .map(|f| Block {
                rows: f.members,
                kind: BlockKind::ParallelFamily,
            })
            .collect();
        Ok(BlockPartition { blocks })
    } else {
        Ok(BlockPartition {
            blocks: vec![Block {
                rows: (0..stacked.p()).collect(),
                kind: BlockKind::General,
            }],
        })
    }
}

impl BlockPartition {
    /// Validate a user-supplied partition: groups must partition the row set
    /// and their row spaces must be mutually independent (stacked rank equals
    /// the sum of per-block ranks). Each block is tagged with the strongest
    /// structure it exhibits.
    pub fn from_groups(stacked: &StackedSystem, groups: &[Vec<usize>]) -> Result<Self, Error> {
        let p = stacked.p();
        let mut seen = vec![false; p];
        for g in groups {
            for &i in g {
                if i >= p {
                    return Err(Error::Invalid(format!("block row index {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::Invalid(format!("row {i} appears in two blocks")));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Invalid("blocks must cover every row".into()));
        }
        let total = rank_of(&rows_matrix(stacked, &(0..p).collect::<Vec<_>>()));
        let mut per_block = 0;
        let mut blocks = Vec::with_capacity(groups.len());
        for g in groups {
            let mat = rows_matrix(stacked, g);
            let r = rank_of(&mat);
            per_block += r;
            let kind = if r == g.len() {
                BlockKind::IndependentRows
            } else if r == 1 {
                BlockKind::ParallelFamily
            } else {
                BlockKind::General
            };
            blocks.push(Block {
                rows: g.clone(),
                kind,
            });
        }
        if per_block != total {
            return Err(Error::Invalid(format!(
                "block row spaces are not mutually independent (rank {total} < sum {per_block})"
            )));
        }
        Ok(Self { blocks })
    }
}

/// True if the selected rows have linearly independent input directions, in
/// which case the subsystem is feasible at every state when 𝒰 = ℝᵐ.
pub fn independent_always_feasible(stacked: &StackedSystem, rows: &[usize]) -> Result<bool, Error> {
    for &i in rows {
        if i >= stacked.p() {
            return Err(Error::Invalid(format!("row index {i} out of range")));
        }
    }
    Ok(rank_of(&rows_matrix(stacked, rows)) == rows.len())
}

/// Least-squares expansion of `target` in the given basis directions, with a
/// residual check: fails with `DependencyMismatch` when target is not in their
/// span to tolerance.
pub fn expansion_coefficients(
    basis: &[DVector<f64>],
    target: &DVector<f64>,
    index: usize,
) -> Result<DVector<f64>, Error> {
    let m = target.len();
    if basis.is_empty() || basis.iter().any(|b| b.len() != m) {
        return Err(Error::DimensionMismatch(
            "basis directions must match the target length".into(),
        ));
    }
    let mat = DMatrix::from_fn(m, basis.len(), |i, j| basis[j][i]);
    let svd = mat.clone().svd(true, true);
    let eta = svd
        .solve(target, tol::RELATIVE)
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let residual = (&mat * &eta - target).norm();
    if residual > tol::RELATIVE * (1.0 + target.norm()) {
        return Err(Error::DependencyMismatch { index, residual });
    }
    Ok(eta)
}

/// Sufficient feasibility test for dependent directions: with vⱼ = Σᵢ ηⱼᵢvᵢ
/// and vᵢᵀu confined to [s̲ᵢ, s̄ᵢ], the reachable range of vⱼᵀu is the
/// sign-selected sum of the interval ends; certification requires it to sit
/// inside [s̲ⱼ, s̄ⱼ] for every dependent j. Returns false (not certified) when
/// any interval is empty or some containment fails — feasibility may still
/// hold and must then be decided by the joint LP.
pub fn dependent_certificate(
    independent_bounds: &[(f64, f64)],
    eta: &DMatrix<f64>,
    dependent_bounds: &[(f64, f64)],
) -> Result<bool, Error> {
    if eta.nrows() != dependent_bounds.len() || eta.ncols() != independent_bounds.len() {
        return Err(Error::DimensionMismatch(format!(
            "eta is {}x{} but there are {} dependent and {} independent intervals",
            eta.nrows(),
            eta.ncols(),
            dependent_bounds.len(),
            independent_bounds.len()
        )));
    }
    if independent_bounds.iter().any(|&(lo, hi)| lo > hi)
        || dependent_bounds.iter().any(|&(lo, hi)| lo > hi)
    {
        return Ok(false);
    }
    for (j, &(lo_j, hi_j)) in dependent_bounds.iter().enumerate() {
        let mut reach_lo = 0.0;
        let mut reach_hi = 0.0;
        for (i, &(lo_i, hi_i)) in independent_bounds.iter().enumerate() {
            let e = eta[(j, i)];
            if e > 0.0 {
                reach_lo += e * lo_i;
                reach_hi += e * hi_i;
            } else if e < 0.0 {
                reach_lo += e * hi_i;
                reach_hi += e * lo_i;
            }
        }
        if !(lo_j <= reach_lo && reach_hi <= hi_j) {
            return Ok(false);
        }
    }
    Ok(true)
}
