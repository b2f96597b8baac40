//! Primal active-set solver for the safety-filter QP
//!
//!   min ½(u − u_nom)ᵀG(u − u_nom)   s.t.   aᵢᵀu ≤ bᵢ,
//!
//! with G symmetric positive definite. A feasible start comes from the
//! nominal input, a caller-supplied warm start, or a phase-one LP. Each
//! equality-constrained subproblem is solved through the factored G
//! (λ_W from A_W G⁻¹A_Wᵀ λ = A_W u_nom − b_W), constraints enter through a
//! ratio test and leave at the most negative multiplier. Returned solutions
//! carry the full multiplier vector and certified KKT residuals.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::geometry::{lp, Halfspace, LpStatus};
use crate::{tol, Error};

/// Problem data. Construction validates that G is symmetric positive definite
/// and the rows share the input dimension.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub g: DMatrix<f64>,
    pub u_nom: DVector<f64>,
    pub rows: Vec<Halfspace>,
}

impl QpProblem {
    pub fn new(g: DMatrix<f64>, u_nom: DVector<f64>, rows: Vec<Halfspace>) -> Result<Self, Error> {
        let m = u_nom.len();
        if g.nrows() != m || g.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "G is {}x{} but the input has length {m}",
                g.nrows(),
                g.ncols()
            )));
        }
        if (&g - g.transpose()).norm() > tol::RELATIVE * (1.0 + g.norm()) {
            return Err(Error::NotPositiveDefinite("G is not symmetric".into()));
        }
        if Cholesky::new(g.clone()).is_none() {
            return Err(Error::NotPositiveDefinite(
                "G has a nonpositive eigenvalue".into(),
            ));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.normal.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "QP row {i} has {} coefficients, expected {m}",
                    r.normal.len()
                )));
            }
        }
        Ok(Self { g, u_nom, rows })
    }

    /// ½(u − u_nom)ᵀG(u − u_nom).
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let d = u - &self.u_nom;
        0.5 * (&self.g * &d).dot(&d)
    }
}

/// Certified optimality residuals (all absolute).
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// ‖G(u − u_nom) + Aᵀλ‖∞.
    pub stationarity: f64,
    /// max(aᵢᵀu − bᵢ, 0).
    pub primal: f64,
    /// max(−λᵢ, 0).
    pub dual: f64,
    /// max |λᵢ(aᵢᵀu − bᵢ)|.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// One multiplier per constraint row (zero off the active set).
    pub lambda: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

const STEP_TOL: f64 = 1e-12;
const DUAL_TOL: f64 = 1e-10;

/// Solve the QP, optionally warm-starting from a previous solution.
pub fn solve_qp(problem: &QpProblem, warm: Option<&DVector<f64>>) -> Result<QpSolution, Error> {
    let m = problem.u_nom.len();
    let rows = &problem.rows;
    let chol = Cholesky::new(problem.g.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("G has a nonpositive eigenvalue".into()))?;

    let feas_tol = tol::LP * (1.0 + rows.iter().fold(0.0_f64, |s, r| s.max(r.offset.abs())));
    let is_feasible =
        |u: &DVector<f64>| rows.iter().all(|r| r.eval(u) <= feas_tol);

    let mut u = if let Some(w) = warm.filter(|w| w.len() == m && is_feasible(w)) {
        w.clone()
    } else if is_feasible(&problem.u_nom) {
        problem.u_nom.clone()
    } else {
        let probe = lp::solve(&DVector::zeros(m), rows)?;
        match probe.status {
            LpStatus::Optimal => probe.point.unwrap(),
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => unreachable!("zero-objective LP cannot be unbounded"),
        }
    };

    let mut working: Vec<usize> = Vec::new();
    let cap = 100 + 20 * (rows.len() + 1);
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > cap {
            return Err(Error::IterationCap { solver: "qp", cap });
        }
        // Equality-constrained subproblem on the working set.
        let (u_eq, lam_w) = if working.is_empty() {
            (problem.u_nom.clone(), DVector::zeros(0))
        } else {
            let aw = DMatrix::from_fn(working.len(), m, |i, j| rows[working[i]].normal[j]);
            let bw = DVector::from_iterator(
                working.len(),
                working.iter().map(|&i| rows[i].offset),
            );
            let ginv_awt = chol.solve(&aw.transpose());
            let k = &aw * &ginv_awt;
            let rhs = &aw * &problem.u_nom - bw;
            let lam = solve_sym(&k, &rhs)?;
            let u_eq = &problem.u_nom - &ginv_awt * &lam;
            (u_eq, lam)
        };

        let d = &u_eq - &u;
        if d.norm() <= STEP_TOL * (1.0 + u_eq.norm()) {
            // At the subproblem optimum: optimal iff every multiplier ≥ 0.
            let (worst, worst_val) = lam_w
                .iter()
                .enumerate()
                .fold((usize::MAX, 0.0_f64), |acc, (k, &l)| {
                    if l < acc.1 { (k, l) } else { acc }
                });
            if worst == usize::MAX || worst_val >= -DUAL_TOL {
                return finish(problem, u, &working, &lam_w, iterations);
            }
            working.remove(worst);
            continue;
        }
        // Ratio test toward u_eq over rows outside the working set.
        let mut alpha = 1.0_f64;
        let mut blocker = None;
        for (i, r) in rows.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let ad = r.normal.dot(&d);
            if ad > 1e-12 {
                let ratio = ((r.offset - r.normal.dot(&u)) / ad).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocker = Some(i);
                }
            }
        }
        u += &d * alpha;
        if let Some(i) = blocker {
            working.push(i);
            working.sort_unstable();
        }
    }
}

/// Solve the (symmetric positive semidefinite) working-set system robustly.
fn solve_sym(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, Error> {
    if let Some(ch) = Cholesky::new(k.clone()) {
        return Ok(ch.solve(rhs));
    }
    // Degenerate working set: fall back to a pseudo-inverse solve.
    let svd = k.clone().svd(true, true);
    svd.solve(rhs, tol::RELATIVE)
        .map_err(|e| Error::Invalid(e.to_string()))
}

fn finish(
    problem: &QpProblem,
    u: DVector<f64>,
    working: &[usize],
    lam_w: &DVector<f64>,
    iterations: usize,
) -> Result<QpSolution, Error> {
    let mut lambda = DVector::zeros(problem.rows.len());
    for (k, &i) in working.iter().enumerate() {
        lambda[i] = lam_w[k].max(0.0);
    }
    let mut grad = &problem.g * (&u - &problem.u_nom);
    for (i, r) in problem.rows.iter().enumerate() {
        if lambda[i] != 0.0 {
            grad += &r.normal * lambda[i];
        }
    }
    let mut primal = 0.0_f64;
    let mut compl = 0.0_f64;
    for (i, r) in problem.rows.iter().enumerate() {
        let resid = r.eval(&u);
        primal = primal.max(resid);
        compl = compl.max((lambda[i] * resid).abs());
    }
    let residuals = KktResiduals {
        stationarity: grad.amax(),
        primal: primal.max(0.0),
        dual: 0.0, // multipliers are clipped nonnegative above
        complementarity: compl,
    };
    if residuals.max() > tol::KKT {
        return Err(Error::Invalid(format!(
            "QP finished with KKT residual {:.3e} above tolerance",
            residuals.max()
        )));
    }
    Ok(QpSolution {
        u,
        lambda,
        active: working.to_vec(),
        iterations,
        residuals,
    })
}

/// Convenience wrapper used by simulation: G is factored once per scenario.
#[derive(Debug, Clone)]
pub struct QpFilter {
    pub g: DMatrix<f64>,
    /// State-independent rows from the input set (appended after the stacked rows).
    pub input_rows: Vec<Halfspace>,
}

impl QpFilter {
    /// Assemble the full row set at state x: stacked rows −ℓᵢᵀu ≤ βᵢ(x), then
    /// the input-set rows.
    pub fn rows_at(
        &self,
        stacked: &crate::hocbf::StackedSystem,
        x: &DVector<f64>,
    ) -> Vec<Halfspace> {
        let mut rows = Vec::with_capacity(stacked.p() + self.input_rows.len());
        for row in &stacked.rows {
            rows.push(Halfspace::new(-&row.ell, row.beta.eval(x)));
        }
        rows.extend(self.input_rows.iter().cloned());
        rows
    }
}
