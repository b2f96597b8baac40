//! Dense two-phase simplex for min cᵀx subject to halfspace rows Ax ≤ b,
//! with free (sign-unrestricted) variables.
//!
//! Variables are split x = x⁺ − x⁻, rows get slacks, and rows with negative
//! right-hand side get phase-one artificials. Bland's rule is used for both
//! entering and leaving choices, so the iteration cannot cycle. On top of the
//! optimal point the solver reports row duals; when the system is infeasible
//! the phase-one duals yield a separating vector y ≥ 0 with Aᵀy = 0 and
//! bᵀy < 0, which callers surface as an infeasibility certificate.

use nalgebra::DVector;

use super::Halfspace;
use crate::{tol, Error};

/// Outcome class of an LP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of `solve`. `value` is +∞ for infeasible and −∞ for unbounded
/// problems. For optimal problems `dual` holds y ≥ 0 with Aᵀy = −c and
/// bᵀy = −value; for infeasible problems it holds the separating certificate.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Option<DVector<f64>>,
    pub value: f64,
    pub dual: Option<DVector<f64>>,
}

const PIVOT_TOL: f64 = 1e-10;
const MAX_ITER_FACTOR: usize = 64;

struct Tableau {
    /// Row-major; each row has `ncols` entries, right-hand side last.
    rows: Vec<Vec<f64>>,
    /// Reduced-cost row, same width; last entry is −(current objective).
    obj: Vec<f64>,
    basis: Vec<usize>,
    nvar: usize,
    nslack: usize,
    nart: usize,
}

impl Tableau {
    fn ncols(&self) -> usize {
        2 * self.nvar + self.nslack + self.nart + 1
    }

    fn rhs_col(&self) -> usize {
        self.ncols() - 1
    }

    fn pivot(&mut self, prow: usize, pcol: usize) {
        let piv = self.rows[prow][pcol];
        let inv = 1.0 / piv;
        for v in self.rows[prow].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[prow].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == prow {
                continue;
            }
            let f = row[pcol];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * p;
                }
                row[pcol] = 0.0;
            }
        }
        let f = self.obj[pcol];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(pivot_row.iter()) {
                *v -= f * p;
            }
            self.obj[pcol] = 0.0;
        }
        self.basis[prow] = pcol;
    }

    /// One simplex phase under Bland's rule. `allow` filters entering columns.
    /// Returns Ok(true) on optimal, Ok(false) on unbounded.
    fn run(&mut self, rc_tol: f64, allow: impl Fn(usize) -> bool) -> Result<bool, Error> {
        let ncols = self.ncols();
        let rhs = self.rhs_col();
        let cap = MAX_ITER_FACTOR * (self.rows.len() + ncols) + 256;
        for _ in 0..cap {
            // Entering: smallest column index with negative reduced cost.
            let mut entering = None;
            for j in 0..ncols - 1 {
                if allow(j) && self.obj[j] < -rc_tol {
                    entering = Some(j);
                    break;
                }
            }
            let Some(pcol) = entering else {
                return Ok(true);
            };
            // Leaving: minimum ratio, ties broken by smallest basic index.
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][pcol];
                if a > PIVOT_TOL {
                    let ratio = self.rows[i][rhs] / a;
                    let better = match best {
                        None => true,
                        Some((bi, br)) => {
                            ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            let Some((prow, _)) = best else {
                return Ok(false);
            };
            self.pivot(prow, pcol);
        }
        Err(Error::IterationCap {
            solver: "lp",
            cap,
        })
    }
}

/// Minimize cᵀx subject to `rows` (each `normal·x ≤ offset`), x free.
pub fn solve(c: &DVector<f64>, rows: &[Halfspace]) -> Result<LpSolution, Error> {
    let nvar = c.len();
    for (i, r) in rows.iter().enumerate() {
        if r.normal.len() != nvar {
            return Err(Error::DimensionMismatch(format!(
                "LP row {i} has {} coefficients but there are {nvar} variables",
                r.normal.len()
            )));
        }
        if !r.offset.is_finite() || r.normal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("LP row {i} must be finite")));
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("LP objective must be finite".into()));
    }

    // Trivial case: no variables. Rows read 0 ≤ offset.
    if nvar == 0 {
        let feasible = rows.iter().all(|r| r.offset >= -tol::LP);
        return Ok(if feasible {
            LpSolution {
                status: LpStatus::Optimal,
                point: Some(DVector::zeros(0)),
                value: 0.0,
                dual: Some(DVector::zeros(rows.len())),
            }
        } else {
            // Certificate: unit weight on the most violated row.
            let worst = (0..rows.len())
                .min_by(|&i, &j| rows[i].offset.total_cmp(&rows[j].offset))
                .unwrap();
            let mut y = DVector::zeros(rows.len());
            y[worst] = 1.0;
            LpSolution {
                status: LpStatus::Infeasible,
                point: None,
                value: f64::INFINITY,
                dual: Some(y),
            }
        });
    }

    let nrows = rows.len();
    // Row signs: rows with negative rhs are negated so all rhs ≥ 0.
    let sigma: Vec<f64> = rows
        .iter()
        .map(|r| if r.offset >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let art_rows: Vec<usize> = (0..nrows).filter(|&i| sigma[i] < 0.0).collect();
    let nart = art_rows.len();
    let ncols = 2 * nvar + nrows + nart + 1;

    let mut tab = Tableau {
        rows: Vec::with_capacity(nrows),
        obj: vec![0.0; ncols],
        basis: vec![0; nrows],
        nvar,
        nslack: nrows,
        nart,
    };
    let mut art_of_row = vec![usize::MAX; nrows];
    for (a_idx, &i) in art_rows.iter().enumerate() {
        art_of_row[i] = 2 * nvar + nrows + a_idx;
    }
    for i in 0..nrows {
        let mut row = vec![0.0; ncols];
        for j in 0..nvar {
            let v = sigma[i] * rows[i].normal[j];
            row[j] = v;
            row[nvar + j] = -v;
        }
        row[2 * nvar + i] = sigma[i];
        row[ncols - 1] = sigma[i] * rows[i].offset;
        if sigma[i] < 0.0 {
            row[art_of_row[i]] = 1.0;
            tab.basis[i] = art_of_row[i];
        } else {
            tab.basis[i] = 2 * nvar + i;
        }
        tab.rows.push(row);
    }

    let scale_b = rows.iter().fold(1.0_f64, |m, r| m.max(r.offset.abs()));
    let art_lo = 2 * nvar + nrows;

    // Phase one: minimize the artificial sum (reduced costs priced out against
    // the artificial basis).
    if nart > 0 {
        for j in 0..ncols {
            let mut s = 0.0;
            for &i in &art_rows {
                s += tab.rows[i][j];
            }
            tab.obj[j] = -s;
        }
        for a in 0..nart {
            tab.obj[art_lo + a] += 1.0;
        }
        if !tab.run(tol::LP, |_| true)? {
            // Phase one is bounded below by zero; unbounded cannot happen.
            return Err(Error::Invalid("phase-one LP reported unbounded".into()));
        }
        let infeasibility = -tab.obj[ncols - 1];
        if infeasibility > tol::LP * (1.0 + scale_b) {
            // Farkas certificate from the phase-one duals.
            let mut y = DVector::zeros(nrows);
            for i in 0..nrows {
                let id_col = if sigma[i] < 0.0 { art_of_row[i] } else { 2 * nvar + i };
                let c_init = if sigma[i] < 0.0 { 1.0 } else { 0.0 };
                let y_eq = c_init - tab.obj[id_col];
                y[i] = (-sigma[i] * y_eq).max(0.0);
            }
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                point: None,
                value: f64::INFINITY,
                dual: Some(y),
            });
        }
        // Drive leftover artificials out of the basis (degenerate pivots).
        for i in 0..nrows {
            if tab.basis[i] >= art_lo {
                let mut done = false;
                for j in 0..art_lo {
                    if tab.rows[i][j].abs() > PIVOT_TOL {
                        tab.pivot(i, j);
                        done = true;
                        break;
                    }
                }
                if !done {
                    // Redundant row: clear sub-tolerance noise so it can never
                    // be selected by a ratio test.
                    for j in 0..art_lo {
                        tab.rows[i][j] = 0.0;
                    }
                    let rhs = ncols - 1;
                    tab.rows[i][rhs] = 0.0;
                }
            }
        }
    }

    // Phase two with the real objective; artificial columns stay blocked.
    let cost = |j: usize| -> f64 {
        if j < nvar {
            c[j]
        } else if j < 2 * nvar {
            -c[j - nvar]
        } else {
            0.0
        }
    };
    for j in 0..ncols {
        tab.obj[j] = if j < ncols - 1 { cost(j) } else { 0.0 };
    }
    for i in 0..nrows {
        let cb = cost(tab.basis[i]);
        if cb != 0.0 {
            for j in 0..ncols {
                tab.obj[j] -= cb * tab.rows[i][j];
            }
        }
    }
    let rc_tol = tol::LP * (1.0 + c.norm());
    let optimal = tab.run(rc_tol, |j| j < art_lo)?;
    if !optimal {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            point: None,
            value: f64::NEG_INFINITY,
            dual: None,
        });
    }

    // Recover x = x⁺ − x⁻.
    let rhs = ncols - 1;
    let mut x = DVector::zeros(nvar);
    for i in 0..nrows {
        let b = tab.basis[i];
        if b < nvar {
            x[b] += tab.rows[i][rhs];
        } else if b < 2 * nvar {
            x[b - nvar] -= tab.rows[i][rhs];
        }
    }
    let value = c.dot(&x);

    // Row duals, mapped back through the row signs.
    let mut y = DVector::zeros(nrows);
    for i in 0..nrows {
        let id_col = if sigma[i] < 0.0 { art_of_row[i] } else { 2 * nvar + i };
        let y_eq = -tab.obj[id_col];
        y[i] = (-sigma[i] * y_eq).max(0.0);
    }

    // Certified optimality: primal residuals and duality gap must be tiny.
    let feas_tol = tol::MEMBERSHIP * (1.0 + scale_b);
    for (i, r) in rows.iter().enumerate() {
        let resid = r.normal.dot(&x) - r.offset;
        if resid > feas_tol {
            return Err(Error::Invalid(format!(
                "LP solution violates row {i} by {resid:.3e}"
            )));
        }
        let _ = i;
    }
    let dual_value = -rows
        .iter()
        .zip(y.iter())
        .map(|(r, yi)| r.offset * yi)
        .sum::<f64>();
    let gap = (value - dual_value).abs();
    if gap > tol::MEMBERSHIP * (1.0 + value.abs() + scale_b) {
        return Err(Error::Invalid(format!(
            "LP duality gap {gap:.3e} exceeds tolerance"
        )));
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        point: Some(x),
        value,
        dual: Some(y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hs(coefs: &[f64], offset: f64) -> Halfspace {
        Halfspace::new(DVector::from_row_slice(coefs), offset)
    }

    #[test]
    fn scalar_interval_minimum() {
        // min u subject to −1 ≤ u ≤ 1.
        let sol = solve(
            &DVector::from_vec(vec![1.0]),
            &[hs(&[1.0], 1.0), hs(&[-1.0], 1.0)],
        )
        .unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.value, -1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.point.unwrap()[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn reports_unbounded_direction() {
        let sol = solve(&DVector::from_vec(vec![1.0]), &[hs(&[1.0], 1.0)]).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
        assert_eq!(sol.value, f64::NEG_INFINITY);
    }

    #[test]
    fn infeasible_interval_yields_separating_certificate() {
        // u ≤ −1 and u ≥ 2 cannot hold together.
        let rows = [hs(&[1.0], -1.0), hs(&[-1.0], -2.0)];
        let sol = solve(&DVector::zeros(1), &rows).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        let y = sol.dual.unwrap();
        assert!(y.iter().all(|&v| v >= 0.0));
        let combo = y[0] * 1.0 + -y[1];
        let rhs = -y[0] + y[1] * (-2.0);
        assert!(combo.abs() <= 1e-9, "certificate must cancel the row normals");
        assert!(rhs < -1e-9, "certificate must witness a negative offset sum");
    }

    #[test]
    fn two_dimensional_vertex_solution() {
        // min −x − 2y over the box/triangle x+y ≤ 2, 0 ≤ x ≤ 1.5, 0 ≤ y ≤ 1.5.
        let rows = [
            hs(&[1.0, 1.0], 2.0),
            hs(&[1.0, 0.0], 1.5),
            hs(&[0.0, 1.0], 1.5),
            hs(&[-1.0, 0.0], 0.0),
            hs(&[0.0, -1.0], 0.0),
        ];
        let sol = solve(&DVector::from_vec(vec![-1.0, -2.0]), &rows).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.value, -3.5, epsilon = 1e-10);
        let p = sol.point.unwrap();
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(p[1], 1.5, epsilon = 1e-10);
    }

    #[test]
    fn heavily_degenerate_cone_terminates() {
        // Four redundant rows active at the optimum (0,0); Bland's rule must
        // still terminate at value 0.
        let rows = [
            hs(&[1.0, 1.0], 0.0),
            hs(&[2.0, 2.0], 0.0),
            hs(&[1.0, -1.0], 0.0),
            hs(&[-1.0, 1.0], 0.0),
            hs(&[1.0, 0.0], 5.0),
        ];
        let sol = solve(&DVector::from_vec(vec![-1.0, -1.0]), &rows).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.value.abs() <= 1e-9);
    }

    #[test]
    fn random_problems_satisfy_certified_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut optimal_seen = 0;
        for _ in 0..200 {
            let k = rng.gen_range(1..=4);
            let r = rng.gen_range(1..=8);
            let interior = DVector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0));
            let mut rows = Vec::with_capacity(r);
            for _ in 0..r {
                let normal = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
                if normal.norm() < 1e-3 {
                    continue;
                }
                let slack: f64 = rng.gen_range(0.0..2.0);
                let offset = normal.dot(&interior) + slack;
                rows.push(Halfspace::new(normal, offset));
            }
            let c = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
            let sol = solve(&c, &rows).unwrap();
            match sol.status {
                LpStatus::Optimal => {
                    optimal_seen += 1;
                    let x = sol.point.unwrap();
                    let y = sol.dual.unwrap();
                    // Primal feasibility.
                    for row in &rows {
                        assert!(row.normal.dot(&x) - row.offset <= 1e-8);
                    }
                    // Dual feasibility: Aᵀy = −c, y ≥ 0.
                    let mut aty = DVector::zeros(k);
                    for (row, &yi) in rows.iter().zip(y.iter()) {
                        assert!(yi >= 0.0);
                        aty += &row.normal * yi;
                    }
                    assert!((aty + &c).norm() <= 1e-8 * (1.0 + c.norm()));
                    // Strong duality.
                    let dual_val: f64 =
                        -rows.iter().zip(y.iter()).map(|(r, yi)| r.offset * yi).sum::<f64>();
                    assert!((sol.value - dual_val).abs() <= 1e-8 * (1.0 + sol.value.abs()));
                    // Complementary slackness.
                    for (row, &yi) in rows.iter().zip(y.iter()) {
                        let slack = row.offset - row.normal.dot(&x);
                        assert!(yi * slack <= 1e-7 * (1.0 + slack.abs()));
                    }
                }
                LpStatus::Unbounded => {}
                LpStatus::Infeasible => panic!("constructed problems are feasible"),
            }
        }
        assert!(optimal_seen >= 50, "expected a healthy share of bounded LPs");
    }

    #[test]
    fn random_infeasible_systems_produce_valid_certificates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let k = rng.gen_range(1..=4);
            let r = rng.gen_range(1..=6);
            let anchor = DVector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0));
            let mut rows: Vec<Halfspace> = (0..r)
                .map(|_| {
                    let normal = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0) + 0.01);
                    let offset = normal.dot(&anchor) + rng.gen_range(0.0..1.0);
                    Halfspace::new(normal, offset)
                })
                .collect();
            // Force a contradiction: a·x ≥ a·anchor + 1 against a·x ≤ a·anchor.
            let a = DVector::from_fn(k, |_, _| rng.gen_range(0.2..1.0));
            rows.push(Halfspace::new(a.clone(), a.dot(&anchor)));
            rows.push(Halfspace::new(-a.clone(), -a.dot(&anchor) - 1.0));
            let sol = solve(&DVector::zeros(k), &rows).unwrap();
            assert_eq!(sol.status, LpStatus::Infeasible);
            let y = sol.dual.unwrap();
            let mut aty = DVector::zeros(k);
            let mut bty = 0.0;
            let mut scale: f64 = 0.0;
            for (row, &yi) in rows.iter().zip(y.iter()) {
                assert!(yi >= 0.0);
                aty += &row.normal * yi;
                bty += row.offset * yi;
                scale = scale.max(yi);
            }
            assert!(scale > 0.0);
            assert!(aty.norm() <= 1e-8 * (1.0 + scale));
            assert!(bty < -1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn empty_constraint_list_is_unbounded_unless_zero_objective() {
        let sol = solve(&DVector::from_vec(vec![1.0, -1.0]), &[]).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
        let sol = solve(&DVector::zeros(2), &[]).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.value, 0.0);
    }
}
