//! Closed-loop simulation of plant + nominal controller + safety filter.
//!
//! A [`Scenario`] bundles an LTI plant, safety functions, an input set, a
//! nominal controller, and a filter policy. Building it stacks the constraint
//! rows, derives the ψ-chains, and synthesizes the strongest applicable filter
//! law: scalar saturation for one parallel family, componentwise block
//! saturation for independent families (with axis-aligned tightening when the
//! input set is a box), or the active-set QP otherwise. Exogenous
//! piecewise-constant command channels (ẋ = Ax + Bu + E·w(t)) are lifted into
//! constant states so every downstream computation — rows, chains, feasibility
//! — sees the commanded dynamics exactly.
//!
//! Integration is classical RK4 with zero-order hold on the input; runs abort
//! with a Farkas certificate if the state leaves the feasibility domain.

pub mod raster;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::filters::{block_filter, g_identity_deviation, parallel_filter};
use crate::filters::{construct_g, solve_qp, QpProblem};
use crate::geometry::{
    detect_parallel_families, feasible_at_via_lp, merge_parallel, support_interval, Halfspace,
    InputSet, PwaBound,
};
use crate::hocbf::{
    build_stacked, psi_chain, AffineForm, AffineSafety, LtiSystem, PsiChain, StackedSystem,
};
use crate::{tol, Error};

/// Nominal (unfiltered) control law.
#[derive(Debug, Clone, PartialEq)]
pub enum NominalController {
    /// u_d(x) = −K(x − x_ref).
    AffineFeedback {
        k: DMatrix<f64>,
        x_ref: DVector<f64>,
    },
    /// Waypoint PD law u_d(x, t) = K_P(p_d(t) − p) − K_D·ṗ, where p and ṗ are
    /// read from the listed state indices and p_d(t) is piecewise constant
    /// (the waypoint with the largest activation time ≤ t).
    WaypointPd {
        k_p: DMatrix<f64>,
        k_d: DMatrix<f64>,
        /// (activation time, target position); times strictly increasing.
        waypoints: Vec<(f64, DVector<f64>)>,
        position: Vec<usize>,
        velocity: Vec<usize>,
    },
}

impl NominalController {
    fn validate(&self, n: usize, m: usize) -> Result<(), Error> {
        match self {
            NominalController::AffineFeedback { k, x_ref } => {
                if k.nrows() != m || k.ncols() != n || x_ref.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "feedback gain is {}x{} with reference length {}, need {m}x{n} and {n}",
                        k.nrows(),
                        k.ncols(),
                        x_ref.len()
                    )));
                }
                if k.iter().chain(x_ref.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("controller data must be finite".into()));
                }
            }
            NominalController::WaypointPd {
                k_p,
                k_d,
                waypoints,
                position,
                velocity,
            } => {
                if k_p.nrows() != m || k_p.ncols() != m || k_d.nrows() != m || k_d.ncols() != m {
                    return Err(Error::DimensionMismatch(format!(
                        "PD gains must be {m}x{m}"
                    )));
                }
                if position.len() != m || velocity.len() != m {
                    return Err(Error::DimensionMismatch(format!(
                        "position/velocity index maps must each select {m} states"
                    )));
                }
                if position.iter().chain(velocity.iter()).any(|&i| i >= n) {
                    return Err(Error::Invalid("state index map out of range".into()));
                }
                if waypoints.is_empty() {
                    return Err(Error::Invalid("at least one waypoint required".into()));
                }
                for w in waypoints.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Invalid(
                            "waypoint times must be strictly increasing".into(),
                        ));
                    }
                }
                for (t, p) in waypoints {
                    if !t.is_finite() || p.len() != m || p.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Invalid("waypoints must be finite with length m".into()));
                    }
                }
                if k_p.iter().chain(k_d.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("controller data must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Evaluate the nominal input at time t and (physical) state x.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match self {
            NominalController::AffineFeedback { k, x_ref } => -(k * (x - x_ref)),
            NominalController::WaypointPd {
                k_p,
                k_d,
                waypoints,
                position,
                velocity,
            } => {
                let target = waypoints
                    .iter()
                    .rev()
                    .find(|(tw, _)| *tw <= t)
                    .map(|(_, p)| p)
                    .unwrap_or(&waypoints[0].1);
                let p = DVector::from_iterator(position.len(), position.iter().map(|&i| x[i]));
                let v = DVector::from_iterator(velocity.len(), velocity.iter().map(|&i| x[i]));
                k_p * (target - p) - k_d * v
            }
        }
    }
}

/// Piecewise-constant exogenous forcing ẋ = Ax + Bu + E·w(t). The signal
/// value at t is the entry with the largest switch time ≤ t (zero before the
/// first switch). Switches take effect at the enclosing simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousInput {
    /// E: n×q channel matrix.
    pub channel: DMatrix<f64>,
    /// (switch time, value) pairs with strictly increasing times.
    pub schedule: Vec<(f64, DVector<f64>)>,
}

impl ExogenousInput {
    /// Signal width q.
    pub fn q(&self) -> usize {
        self.channel.ncols()
    }

    fn validate(&self, n: usize) -> Result<(), Error> {
        if self.channel.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "exogenous channel has {} rows but n = {n}",
                self.channel.nrows()
            )));
        }
        if self.channel.ncols() == 0 {
            return Err(Error::Invalid("exogenous channel must have a column".into()));
        }
        if self.channel.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("exogenous channel must be finite".into()));
        }
        for w in self.schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Invalid(
                    "exogenous switch times must be strictly increasing".into(),
                ));
            }
        }
        for (t, v) in &self.schedule {
            if !t.is_finite() || v.len() != self.q() || v.iter().any(|e| !e.is_finite()) {
                return Err(Error::Invalid("exogenous schedule entries must be finite".into()));
            }
        }
        Ok(())
    }

    /// w(t): the last scheduled value at or before t, zero before the first.
    pub fn signal_at(&self, t: f64) -> DVector<f64> {
        self.schedule
            .iter()
            .rev()
            .find(|(tw, _)| *tw <= t)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| DVector::zeros(self.q()))
    }
}

/// Which filter to synthesize when the scenario is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterPolicy {
    /// Strongest applicable explicit law, QP otherwise.
    Auto,
    /// Always the QP, even when an explicit law exists.
    ForceQp,
    /// Explicit law or an error explaining why none applies.
    ForceExplicit,
}

/// Synthesized safety filter.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterLaw {
    /// Scalar saturation of vᵀu corrected along G⁻¹v (one parallel family;
    /// box bounds folded into the interval when m = 1).
    ParallelSaturation {
        v: DVector<f64>,
        g: DMatrix<f64>,
        lower: PwaBound,
        upper: PwaBound,
    },
    /// Componentwise saturation of ε = Su corrected through G⁻¹Sᵀ
    /// (independent families; S·G⁻¹·Sᵀ = I).
    BlockSaturation {
        s: DMatrix<f64>,
        g: DMatrix<f64>,
        lower: Vec<PwaBound>,
        upper: Vec<PwaBound>,
    },
    /// Active-set QP over the stacked rows plus the input-set rows.
    QpFallback {
        g: DMatrix<f64>,
        input_rows: Vec<Halfspace>,
    },
}

impl FilterLaw {
    /// The weight matrix the law minimizes against.
    pub fn weight(&self) -> &DMatrix<f64> {
        match self {
            FilterLaw::ParallelSaturation { g, .. } => g,
            FilterLaw::BlockSaturation { g, .. } => g,
            FilterLaw::QpFallback { g, .. } => g,
        }
    }

    pub fn is_explicit(&self) -> bool {
        !matches!(self, FilterLaw::QpFallback { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterLaw::ParallelSaturation { .. } => "parallel-saturation",
            FilterLaw::BlockSaturation { .. } => "block-saturation",
            FilterLaw::QpFallback { .. } => "qp",
        }
    }

    /// Apply the law at state x to the nominal input. `warm` seeds the QP
    /// active-set search (ignored by the explicit laws).
    pub fn apply(
        &self,
        stacked: &StackedSystem,
        x: &DVector<f64>,
        u_nom: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>, Error> {
        match self {
            FilterLaw::ParallelSaturation { v, g, lower, upper } => {
                parallel_filter(x, u_nom, v, g, lower, upper)
            }
            FilterLaw::BlockSaturation { s, g, lower, upper } => {
                block_filter(x, u_nom, s, g, lower, upper)
            }
            FilterLaw::QpFallback { g, input_rows } => {
                let rows = stacked_rows_at(stacked, x, input_rows);
                let problem = QpProblem::new(g.clone(), u_nom.clone(), rows)?;
                solve_qp(&problem, warm).map(|sol| sol.u)
            }
        }
    }
}

/// Stacked rows −ℓᵢᵀu ≤ βᵢ(x) followed by the input-set rows.
fn stacked_rows_at(
    stacked: &StackedSystem,
    x: &DVector<f64>,
    input_rows: &[Halfspace],
) -> Vec<Halfspace> {
    let mut rows = Vec::with_capacity(stacked.p() + input_rows.len());
    for row in &stacked.rows {
        rows.push(Halfspace::new(-&row.ell, row.beta.eval(x)));
    }
    rows.extend(input_rows.iter().cloned());
    rows
}

fn validate_weight(g: &DMatrix<f64>, m: usize) -> Result<(), Error> {
    if g.nrows() != m || g.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix is {}x{} but m = {m}",
            g.nrows(),
            g.ncols()
        )));
    }
    if (g - g.transpose()).norm() > tol::RELATIVE * (1.0 + g.norm()) {
        return Err(Error::NotPositiveDefinite("weight is not symmetric".into()));
    }
    Cholesky::new(g.clone())
        .map(|_| ())
        .ok_or_else(|| Error::NotPositiveDefinite("weight has a nonpositive eigenvalue".into()))
}

/// The coordinate axis a canonical unit direction lies on, if any.
fn axis_of(v: &DVector<f64>) -> Option<usize> {
    let mut axis = None;
    for (j, &e) in v.iter().enumerate() {
        if e.abs() > tol::RELATIVE {
            if axis.is_some() {
                return None;
            }
            axis = Some(j);
        }
    }
    axis
}

/// Synthesize the filter law for the stacked system over the input set.
///
/// Explicit structure is used when it reproduces the QP exactly:
/// - 𝒰 = ℝᵐ, one parallel family → scalar saturation (any SPD weight);
/// - 𝒰 = ℝᵐ, several families with independent directions → block saturation,
///   with G constructed from the direction matrix when not supplied;
/// - box 𝒰, m = 1 → scalar saturation onto the box-tightened interval;
/// - box 𝒰, every family axis-aligned, diagonal G, unconstrained leftover
///   axes → block saturation onto tightened per-axis intervals.
///
/// Anything else is served by the QP (`Auto`) or rejected (`ForceExplicit`).
pub fn synthesize_filter(
    stacked: &StackedSystem,
    set: &InputSet,
    weight: Option<&DMatrix<f64>>,
    tau: f64,
    policy: FilterPolicy,
) -> Result<FilterLaw, Error> {
    let m = stacked.m();
    if let Some(g) = weight {
        validate_weight(g, m)?;
    }
    let qp_fallback = |weight: Option<&DMatrix<f64>>| FilterLaw::QpFallback {
        g: weight.cloned().unwrap_or_else(|| DMatrix::identity(m, m)),
        input_rows: set.to_halfspaces(),
    };
    if policy == FilterPolicy::ForceQp {
        return Ok(qp_fallback(weight));
    }
    match try_explicit(stacked, set, weight, tau) {
        Ok(law) => Ok(law),
        Err(e) if policy == FilterPolicy::ForceExplicit => Err(e),
        Err(_) => Ok(qp_fallback(weight)),
    }
}

fn try_explicit(
    stacked: &StackedSystem,
    set: &InputSet,
    weight: Option<&DMatrix<f64>>,
    tau: f64,
) -> Result<FilterLaw, Error> {
    let m = stacked.m();
    let families = detect_parallel_families(stacked)?;
    match set {
        InputSet::All { .. } => {
            if families.len() == 1 {
                let (lower, upper) = merge_parallel(&families[0]);
                return Ok(FilterLaw::ParallelSaturation {
                    v: families[0].direction.clone(),
                    g: weight.cloned().unwrap_or_else(|| DMatrix::identity(m, m)),
                    lower,
                    upper,
                });
            }
            let iota = families.len();
            let dirs = DMatrix::from_fn(iota, m, |i, j| families[i].direction[j]);
            let sv = dirs.clone().svd(false, false).singular_values;
            if iota > m || sv.min() <= tol::RELATIVE * sv.max() {
                return Err(Error::ExplicitUnavailable(
                    "family directions are linearly dependent".into(),
                ));
            }
            let g = match weight {
                Some(g) => {
                    let dev = g_identity_deviation(&dirs, g)?;
                    if dev > tol::G_IDENTITY {
                        return Err(Error::GMismatch { deviation: dev });
                    }
                    g.clone()
                }
                None => construct_g(&dirs, tau)?,
            };
            let (lower, upper): (Vec<_>, Vec<_>) =
                families.iter().map(merge_parallel).unzip();
            Ok(FilterLaw::BlockSaturation {
                s: dirs,
                g,
                lower,
                upper,
            })
        }
        InputSet::Box { lo, hi } => {
            if m == 1 {
                // Scalar input: exactly one family; the box is an interval on
                // the same scalar and folds into the saturation bounds.
                let fam = &families[0];
                let (mut lower, mut upper) = merge_parallel(fam);
                let (smin, smax) = support_interval(&fam.direction, set)?;
                let n = stacked.n();
                if smin.is_finite() {
                    lower.pieces.push(AffineForm::constant(n, smin));
                }
                if smax.is_finite() {
                    upper.pieces.push(AffineForm::constant(n, smax));
                }
                return Ok(FilterLaw::ParallelSaturation {
                    v: fam.direction.clone(),
                    g: weight.cloned().unwrap_or_else(|| DMatrix::identity(1, 1)),
                    lower,
                    upper,
                });
            }
            let g = weight.cloned().unwrap_or_else(|| DMatrix::identity(m, m));
            for i in 0..m {
                for j in 0..m {
                    if i != j && g[(i, j)] != 0.0 {
                        return Err(Error::ExplicitUnavailable(
                            "box-tightened saturation needs a diagonal weight".into(),
                        ));
                    }
                }
            }
            // Every family must act along its own coordinate axis, and axes
            // without a family must be unconstrained (else the QP would clamp
            // them while saturation would not).
            let mut covered = vec![false; m];
            let mut axes = Vec::with_capacity(families.len());
            for fam in &families {
                let k = axis_of(&fam.direction).ok_or_else(|| {
                    Error::ExplicitUnavailable(
                        "box bounds require axis-aligned constraint directions".into(),
                    )
                })?;
                covered[k] = true;
                axes.push(k);
            }
            for k in 0..m {
                if !covered[k] && (lo[k].is_finite() || hi[k].is_finite()) {
                    return Err(Error::ExplicitUnavailable(format!(
                        "input coordinate {k} is box-bounded but appears in no constraint row"
                    )));
                }
            }
            let iota = families.len();
            let n = stacked.n();
            let mut s = DMatrix::zeros(iota, m);
            let mut lower = Vec::with_capacity(iota);
            let mut upper = Vec::with_capacity(iota);
            for (j, fam) in families.iter().enumerate() {
                let k = axes[j];
                let scale = g[(k, k)].sqrt();
                s[(j, k)] = scale;
                // ε_j = √g_kk·u_k, so pieces and box ends scale accordingly.
                let (lo_b, hi_b) = merge_parallel(fam);
                let mut lo_pieces: Vec<AffineForm> =
                    lo_b.pieces.iter().map(|p| p.scaled(scale)).collect();
                let mut hi_pieces: Vec<AffineForm> =
                    hi_b.pieces.iter().map(|p| p.scaled(scale)).collect();
                if lo[k].is_finite() {
                    lo_pieces.push(AffineForm::constant(n, scale * lo[k]));
                }
                if hi[k].is_finite() {
                    hi_pieces.push(AffineForm::constant(n, scale * hi[k]));
                }
                lower.push(PwaBound::lower(lo_pieces));
                upper.push(PwaBound::upper(hi_pieces));
            }
            Ok(FilterLaw::BlockSaturation { s, g, lower, upper })
        }
        InputSet::Polyhedron { .. } => Err(Error::ExplicitUnavailable(
            "general polyhedral input sets are served by the QP".into(),
        )),
    }
}

/// Scenario inputs as supplied by a caller (CLI or test); `build` resolves
/// them into a ready-to-simulate [`Scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioDef {
    pub system: LtiSystem,
    pub safeties: Vec<AffineSafety>,
    pub input_set: InputSet,
    pub controller: NominalController,
    pub policy: FilterPolicy,
    /// QP / saturation weight G; identity (or constructed, for block laws)
    /// when absent.
    pub weight: Option<DMatrix<f64>>,
    /// Complement weight for constructed G.
    pub tau: f64,
    pub x0: DVector<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub exogenous: Option<ExogenousInput>,
    /// Skip the x0 ∈ 𝒮 check (runs may then abort as infeasible).
    pub allow_unsafe_start: bool,
    /// Per-physical-coordinate box for initial-condition sampling.
    pub sample_window: Option<Vec<(f64, f64)>>,
}

impl ScenarioDef {
    pub fn build(self) -> Result<Scenario, Error> {
        let n_phys = self.system.n();
        let m = self.system.m();
        self.controller.validate(n_phys, m)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Invalid("dt must be positive and finite".into()));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::Invalid("horizon must be nonnegative and finite".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Invalid("tau must be positive and finite".into()));
        }
        if self.x0.len() != n_phys || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "x0 must be a finite length-{n_phys} state"
            )));
        }
        if self.input_set.dim() != m {
            return Err(Error::DimensionMismatch(format!(
                "input set dimension {} does not match m = {m}",
                self.input_set.dim()
            )));
        }
        if let Some(w) = &self.sample_window {
            if w.len() != n_phys || w.iter().any(|&(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
                return Err(Error::Invalid(
                    "sample window must give one finite ordered interval per state".into(),
                ));
            }
        }
        // Lift an exogenous channel into constant states so rows, chains, and
        // feasibility all see ẋ = Ax + Bu + Ew exactly (ẇ = 0 within a step).
        let (system, safeties, x0) = match &self.exogenous {
            None => (self.system.clone(), self.safeties.clone(), self.x0.clone()),
            Some(exo) => {
                exo.validate(n_phys)?;
                let q = exo.q();
                let mut a = DMatrix::zeros(n_phys + q, n_phys + q);
                a.view_mut((0, 0), (n_phys, n_phys)).copy_from(&self.system.a);
                a.view_mut((0, n_phys), (n_phys, q)).copy_from(&exo.channel);
                let mut b = DMatrix::zeros(n_phys + q, m);
                b.view_mut((0, 0), (n_phys, m)).copy_from(&self.system.b);
                let lifted = LtiSystem::new(a, b)?;
                let safeties = self
                    .safeties
                    .iter()
                    .map(|s| {
                        let mut normal = DVector::zeros(n_phys + q);
                        normal.rows_mut(0, n_phys).copy_from(&s.normal);
                        AffineSafety::new(normal, s.offset, s.gains.clone())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let mut x0 = DVector::zeros(n_phys + q);
                x0.rows_mut(0, n_phys).copy_from(&self.x0);
                x0.rows_mut(n_phys, q).copy_from(&exo.signal_at(0.0));
                (lifted, safeties, x0)
            }
        };
        let stacked = build_stacked(&system, &safeties)?;
        let chains = safeties
            .iter()
            .enumerate()
            .map(|(i, s)| psi_chain(&system, s, i))
            .collect::<Result<Vec<_>, _>>()?;
        let filter = synthesize_filter(
            &stacked,
            &self.input_set,
            self.weight.as_ref(),
            self.tau,
            self.policy,
        )?;
        if !self.allow_unsafe_start {
            for chain in &chains {
                if !chain.contains(&x0, tol::MEMBERSHIP) {
                    return Err(Error::Invalid(format!(
                        "x0 is outside the invariant set: ψ-chain of safety {} is negative \
                         (set allow_unsafe_start to override)",
                        chain.source
                    )));
                }
            }
        }
        Ok(Scenario {
            system,
            safeties,
            stacked,
            chains,
            input_set: self.input_set,
            controller: self.controller,
            filter,
            x0,
            dt: self.dt,
            horizon: self.horizon,
            exogenous: self.exogenous,
            n_physical: n_phys,
            sample_window: self.sample_window,
        })
    }
}

/// A resolved, ready-to-simulate closed-loop setup. When an exogenous channel
/// is present, `system`, `safeties`, `stacked`, `chains`, and `x0` live in the
/// lifted state [x; w]; the first `n_physical` coordinates are the plant state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: LtiSystem,
    pub safeties: Vec<AffineSafety>,
    pub stacked: StackedSystem,
    pub chains: Vec<PsiChain>,
    pub input_set: InputSet,
    pub controller: NominalController,
    pub filter: FilterLaw,
    pub x0: DVector<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub exogenous: Option<ExogenousInput>,
    pub n_physical: usize,
    pub sample_window: Option<Vec<(f64, f64)>>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn m(&self) -> usize {
        self.system.m()
    }

    /// Number of RK4 steps covering the horizon (log has steps + 1 samples).
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// h_i(x) for every safety function.
    pub fn h_at(&self, x: &DVector<f64>) -> Vec<f64> {
        self.safeties.iter().map(|s| s.eval(x)).collect()
    }

    /// Flattened ψ-level values in `psi_labels` order.
    pub fn psi_at(&self, x: &DVector<f64>) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.eval(x)).collect()
    }

    /// (safety index, level index) for each entry of `psi_at`.
    pub fn psi_labels(&self) -> Vec<(usize, usize)> {
        self.chains
            .iter()
            .flat_map(|c| (0..c.levels.len()).map(move |k| (c.source, k)))
            .collect()
    }

    /// x ∈ 𝒮: every ψ-level of every chain ≥ −tolerance.
    pub fn in_safe_set(&self, x: &DVector<f64>, tolerance: f64) -> bool {
        self.chains.iter().all(|c| c.contains(x, tolerance))
    }

    /// Lift a physical state into the scenario's working state (appends the
    /// exogenous signal value at t = 0 when a channel is present).
    pub fn lift_state(&self, x_phys: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if x_phys.len() != self.n_physical {
            return Err(Error::DimensionMismatch(format!(
                "state length {} does not match the physical dimension {}",
                x_phys.len(),
                self.n_physical
            )));
        }
        match &self.exogenous {
            None => Ok(x_phys.clone()),
            Some(exo) => {
                let mut x = DVector::zeros(self.n());
                x.rows_mut(0, self.n_physical).copy_from(x_phys);
                x.rows_mut(self.n_physical, exo.q())
                    .copy_from(&exo.signal_at(0.0));
                Ok(x)
            }
        }
    }

    /// Draw `count` initial (physical) states uniformly from the sample
    /// window, rejecting any outside 𝒮. Requires `sample_window`.
    pub fn sample_initial_states(
        &self,
        count: usize,
        seed: u64,
    ) -> Result<Vec<DVector<f64>>, Error> {
        let window = self.sample_window.as_ref().ok_or_else(|| {
            Error::Invalid("scenario has no sampling window".into())
        })?;
        let extended: Vec<(f64, f64)> = if let Some(exo) = &self.exogenous {
            let w0 = exo.signal_at(0.0);
            window
                .iter()
                .cloned()
                .chain(w0.iter().map(|&v| (v, v)))
                .collect()
        } else {
            window.clone()
        };
        let lifted = raster::sample_in_s(&self.chains, &extended, count, seed, 10_000 * count)?;
        Ok(lifted
            .into_iter()
            .map(|x| x.rows(0, self.n_physical).into_owned())
            .collect())
    }
}

/// Per-run options for [`simulate`].
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Also solve the QP at every step and log ‖u − u_QP‖∞.
    pub compare_qp: bool,
    /// Replace the scenario's initial (physical) state. No 𝒮-membership check
    /// is applied to overrides; infeasible starts abort with a certificate.
    pub x0: Option<DVector<f64>>,
}

/// Time-indexed record of one closed-loop run. All vectors have steps + 1
/// aligned entries; states are in the scenario's (possibly lifted) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub nominal: Vec<DVector<f64>>,
    pub filtered: Vec<DVector<f64>>,
    /// h_i(x(t)) per step, one entry per safety function.
    pub h: Vec<Vec<f64>>,
    /// ψ-level values per step, in `Scenario::psi_labels` order.
    pub psi: Vec<Vec<f64>>,
    pub feasible: Vec<bool>,
    /// ‖u − u_QP‖∞ per step when compare mode is on.
    pub qp_deviation: Option<Vec<f64>>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Smallest h value over all steps and safety functions.
    pub fn min_h(&self) -> f64 {
        self.h
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Smallest ψ-level value over all steps and chains.
    pub fn min_psi(&self) -> f64 {
        self.psi
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_qp_deviation(&self) -> Option<f64> {
        self.qp_deviation
            .as_ref()
            .map(|d| d.iter().fold(0.0_f64, |m, &v| m.max(v)))
    }
}

/// One classical RK4 step of ẋ = f(x, u) under zero-order hold on u. `t` is
/// the step's start time, used only for error reporting.
pub fn rk4_step<F>(f: F, x: &DVector<f64>, u: &DVector<f64>, dt: f64, t: f64) -> Result<DVector<f64>, Error>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(x, u);
    let k2 = f(&(x + &k1 * (dt / 2.0)), u);
    let k3 = f(&(x + &k2 * (dt / 2.0)), u);
    let k4 = f(&(x + &k3 * dt), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: t + dt });
    }
    Ok(next)
}

/// Run the scenario: at each step evaluate the nominal controller, apply the
/// filter (warm-starting the QP from the previous input), optionally solve
/// the QP oracle for comparison, and RK4-advance with zero-order hold.
/// Aborts with [`Error::InfeasibleAtState`] — carrying a Farkas certificate —
/// if the constraints become infeasible, and with [`Error::NonFiniteState`]
/// if integration diverges.
pub fn simulate(sc: &Scenario, opts: &SimOptions) -> Result<TrajectoryLog, Error> {
    let steps = sc.steps();
    let mut x = match &opts.x0 {
        Some(x0) => sc.lift_state(x0)?,
        None => sc.x0.clone(),
    };
    let input_rows = sc.input_set.to_halfspaces();
    let mut log = TrajectoryLog {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        nominal: Vec::with_capacity(steps + 1),
        filtered: Vec::with_capacity(steps + 1),
        h: Vec::with_capacity(steps + 1),
        psi: Vec::with_capacity(steps + 1),
        feasible: Vec::with_capacity(steps + 1),
        qp_deviation: opts.compare_qp.then(|| Vec::with_capacity(steps + 1)),
    };
    let mut warm: Option<DVector<f64>> = None;
    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        if let Some(exo) = &sc.exogenous {
            x.rows_mut(sc.n_physical, exo.q()).copy_from(&exo.signal_at(t));
        }
        let x_phys = x.rows(0, sc.n_physical).into_owned();
        let u_nom = sc.controller.eval(t, &x_phys);
        if u_nom.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "nominal input is not finite at t = {t}"
            )));
        }
        let u = match sc.filter.apply(&sc.stacked, &x, &u_nom, warm.as_ref()) {
            Ok(u) => u,
            Err(Error::InfeasibleState { .. }) | Err(Error::Infeasible) => {
                let report = feasible_at_via_lp(&sc.stacked, &sc.input_set, &x)?;
                return Err(Error::InfeasibleAtState {
                    t,
                    x: x.clone(),
                    certificate: report.certificate,
                });
            }
            Err(e) => return Err(e),
        };
        if let Some(dev) = log.qp_deviation.as_mut() {
            let rows = stacked_rows_at(&sc.stacked, &x, &input_rows);
            let problem = QpProblem::new(sc.filter.weight().clone(), u_nom.clone(), rows)?;
            let oracle = match solve_qp(&problem, warm.as_ref()) {
                Ok(sol) => sol.u,
                Err(Error::Infeasible) => {
                    let report = feasible_at_via_lp(&sc.stacked, &sc.input_set, &x)?;
                    return Err(Error::InfeasibleAtState {
                        t,
                        x: x.clone(),
                        certificate: report.certificate,
                    });
                }
                Err(e) => return Err(e),
            };
            dev.push((&u - oracle).amax());
        }
        log.times.push(t);
        log.states.push(x.clone());
        log.nominal.push(u_nom);
        log.filtered.push(u.clone());
        log.h.push(sc.h_at(&x));
        log.psi.push(sc.psi_at(&x));
        log.feasible.push(true);
        if k < steps {
            x = rk4_step(|x, u| sc.system.dynamics(x, u), &x, &u, sc.dt, t)?;
            warm = Some(u);
        }
    }
    Ok(log)
}

/// The planar double-integrator interval bounds, written out per axis.
///
/// For state (x₁..x_d positions, x_{d+1}..x_{2d} velocities) with position
/// bounds enforced through second-order chains (gains α₁, α₂) and velocity
/// bounds through first-order chains (gain γ):
///
///   s̲ᵢ(x) = max{ −aᵢ·vᵢ − bᵢ(pᵢ − p_min), −γᵢ(vᵢ − v_min) },
///   s̄ᵢ(x) = min{ −aᵢ·vᵢ + bᵢ(p_max − pᵢ),  γᵢ(v_max − vᵢ) },
///
/// with aᵢ = α₁+α₂ and bᵢ = α₁α₂. With `input_bounds`, each interval is
/// tightened by the box: s̲ᵢ ∨ uᵢ^min, s̄ᵢ ∧ uᵢ^max.
pub fn build_planar_bounds(
    alphas: &[(f64, f64)],
    gammas: &[f64],
    pos_limits: &[(f64, f64)],
    vel_limits: &[(f64, f64)],
    input_bounds: Option<&[(f64, f64)]>,
) -> Result<Vec<(PwaBound, PwaBound)>, Error> {
    let d = alphas.len();
    if gammas.len() != d || pos_limits.len() != d || vel_limits.len() != d {
        return Err(Error::DimensionMismatch(
            "per-axis parameter lists must have equal length".into(),
        ));
    }
    if let Some(ib) = input_bounds {
        if ib.len() != d {
            return Err(Error::DimensionMismatch(
                "input bounds must give one interval per axis".into(),
            ));
        }
    }
    let n = 2 * d;
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let (a1, a2) = alphas[i];
        let g = gammas[i];
        if !(a1 > 0.0 && a2 > 0.0 && g > 0.0) {
            return Err(Error::Invalid("gains must be positive".into()));
        }
        let (p_min, p_max) = pos_limits[i];
        let (v_min, v_max) = vel_limits[i];
        if !(p_min < p_max && v_min < v_max) {
            return Err(Error::Invalid("limits must be ordered".into()));
        }
        let (a, b) = (a1 + a2, a1 * a2);
        let pos = i;
        let vel = d + i;
        let mut lin = DVector::zeros(n);
        lin[pos] = -b;
        lin[vel] = -a;
        let pos_lower = AffineForm::new(lin.clone(), b * p_min);
        let pos_upper = AffineForm::new(lin, b * p_max);
        let mut lin = DVector::zeros(n);
        lin[vel] = -g;
        let vel_lower = AffineForm::new(lin.clone(), g * v_min);
        let vel_upper = AffineForm::new(lin, g * v_max);
        let mut lo_pieces = vec![pos_lower, vel_lower];
        let mut hi_pieces = vec![pos_upper, vel_upper];
        if let Some(ib) = input_bounds {
            lo_pieces.push(AffineForm::constant(n, ib[i].0));
            hi_pieces.push(AffineForm::constant(n, ib[i].1));
        }
        out.push((PwaBound::lower(lo_pieces), PwaBound::upper(hi_pieces)));
    }
    Ok(out)
}

/// Augment a plant with output integrators: state [e_yI; x_p] with
///
///   d/dt [e_yI; x_p] = [0 C_p; 0 A_p][e_yI; x_p] + [D_p; B_p]u + [−I; 0](y_cmd − v),
///
/// where e_yI integrates the regulated-output tracking error. Returns the
/// augmented system and the exogenous channel matrix [−I; 0] for the combined
/// signal y_cmd − v.
pub fn augment_with_integrator(
    a_p: &DMatrix<f64>,
    b_p: &DMatrix<f64>,
    c_p: &DMatrix<f64>,
    d_p: &DMatrix<f64>,
) -> Result<(LtiSystem, DMatrix<f64>), Error> {
    let n_p = a_p.nrows();
    let m = b_p.ncols();
    let q = c_p.nrows();
    if a_p.ncols() != n_p || b_p.nrows() != n_p {
        return Err(Error::DimensionMismatch("A_p must be square and match B_p rows".into()));
    }
    if c_p.ncols() != n_p || d_p.nrows() != q || d_p.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "C_p must be q x {n_p} and D_p q x {m} with matching q"
        )));
    }
    let n = q + n_p;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, q), (q, n_p)).copy_from(c_p);
    a.view_mut((q, q), (n_p, n_p)).copy_from(a_p);
    let mut b = DMatrix::zeros(n, m);
    b.view_mut((0, 0), (q, m)).copy_from(d_p);
    b.view_mut((q, 0), (n_p, m)).copy_from(b_p);
    let mut channel = DMatrix::zeros(n, q);
    for k in 0..q {
        channel[(k, k)] = -1.0;
    }
    Ok((LtiSystem::new(a, b)?, channel))
}
