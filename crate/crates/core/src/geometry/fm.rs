//! Exact elimination of the input variables from the joint system
//! {(x, u) : Mu ≤ Dx + d₀, u ∈ 𝒰}, yielding a halfspace description of the
//! states where some admissible input exists.
//!
//! One input coordinate is eliminated per step by combining each positive-
//! coefficient row with each negative-coefficient row; after every step
//! duplicate rows are merged and rows implied by the others are removed with
//! one LP per row. The intermediate row count is capped to fail fast on
//! combinatorial blowup.

use nalgebra::DVector;

use super::{lp, Halfspace, InputSet, LpStatus, Polytope};
use crate::hocbf::StackedSystem;
use crate::{tol, Error};

/// Hard cap on intermediate rows during elimination.
pub const ROW_CAP: usize = 20_000;

/// Project {x : ∃u ∈ 𝒰, Mu ≤ d(x)} to a halfspace description over x.
pub fn project_feasible_set(stacked: &StackedSystem, set: &InputSet) -> Result<Polytope, Error> {
    let n = stacked.n();
    let m = stacked.m();
    if set.dim() != m {
        return Err(Error::DimensionMismatch(format!(
            "input set dimension {} does not match m = {}",
            set.dim(),
            m
        )));
    }
    // Joint rows over (x, u): −βᵢ.linearᵀx − ℓᵢᵀu ≤ βᵢ.constant, then 𝒰 rows.
    let mut rows: Vec<Halfspace> = Vec::new();
    for row in &stacked.rows {
        let mut normal = DVector::zeros(n + m);
        for j in 0..n {
            normal[j] = -row.beta.linear[j];
        }
        for j in 0..m {
            normal[n + j] = -row.ell[j];
        }
        rows.push(Halfspace::new(normal, row.beta.constant));
    }
    for hs in set.to_halfspaces() {
        let mut normal = DVector::zeros(n + m);
        for j in 0..m {
            normal[n + j] = hs.normal[j];
        }
        rows.push(Halfspace::new(normal, hs.offset));
    }

    let mut remaining: Vec<usize> = (n..n + m).collect();
    while !remaining.is_empty() {
        // Eliminate the coordinate with the smallest positive×negative product.
        let (pick, _) = remaining
            .iter()
            .enumerate()
            .map(|(slot, &coord)| {
                let pos = rows.iter().filter(|r| r.normal[coord] > COEF_TOL).count();
                let neg = rows.iter().filter(|r| r.normal[coord] < -COEF_TOL).count();
                (slot, pos * neg + pos + neg)
            })
            .min_by_key(|&(_, cost)| cost)
            .unwrap();
        let coord = remaining.remove(pick);
        rows = eliminate_coordinate(rows, coord)?;
        rows = dedupe(rows);
        rows = prune_redundant(rows)?;
        if rows.len() > ROW_CAP {
            return Err(Error::CombinatorialBlowup { cap: ROW_CAP });
        }
    }

    // Drop the (now zero) input coordinates and restate over x alone.
    let projected: Vec<Halfspace> = rows
        .into_iter()
        .map(|r| {
            let normal = DVector::from_fn(n, |j, _| r.normal[j]);
            Halfspace::new(normal, r.offset)
        })
        .collect();
    Ok(Polytope::from_rows(dedupe(projected)))
}

const COEF_TOL: f64 = 1e-11;

fn eliminate_coordinate(rows: Vec<Halfspace>, coord: usize) -> Result<Vec<Halfspace>, Error> {
    let mut zero = Vec::new();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in rows {
        let c = r.normal[coord];
        if c > COEF_TOL {
            pos.push(r);
        } else if c < -COEF_TOL {
            neg.push(r);
        } else {
            zero.push(r);
        }
    }
    if zero.len() + pos.len() * neg.len() > ROW_CAP {
        return Err(Error::CombinatorialBlowup { cap: ROW_CAP });
    }
    let mut out = zero;
    for p in &pos {
        let pc = p.normal[coord];
        for q in &neg {
            let qc = -q.normal[coord];
            // (p / pc) + (q / qc) cancels the coordinate exactly.
            let mut normal = &p.normal / pc + &q.normal / qc;
            normal[coord] = 0.0;
            let offset = p.offset / pc + q.offset / qc;
            out.push(Halfspace::new(normal, offset));
        }
    }
    Ok(out)
}

/// Normalize rows and merge parallel duplicates, keeping the tightest offset.
/// Degenerate rows (zero normal) are dropped when trivially true and collapsed
/// to a single infeasibility marker when contradictory.
fn dedupe(rows: Vec<Halfspace>) -> Vec<Halfspace> {
    let mut out: Vec<Halfspace> = Vec::with_capacity(rows.len());
    let mut contradiction = false;
    let dim = rows.first().map_or(0, |r| r.normal.len());
    for r in rows {
        let norm = r.normal.norm();
        if norm <= 1e-12 {
            if r.offset < -tol::LP {
                contradiction = true;
            }
            continue;
        }
        let unit = &r.normal / norm;
        let offset = r.offset / norm;
        let mut merged = false;
        for o in out.iter_mut() {
            if (&o.normal - &unit).norm() <= 1e-10 {
                o.offset = o.offset.min(offset);
                merged = true;
                break;
            }
        }
        if !merged {
            out.push(Halfspace::new(unit, offset));
        }
    }
    if contradiction {
        out.push(Halfspace::new(DVector::zeros(dim), -1.0));
    }
    out
}

/// Remove rows implied by the rest: row i is redundant iff maximizing its
/// left-hand side subject to the other rows stays ≤ offset (within tolerance).
fn prune_redundant(mut rows: Vec<Halfspace>) -> Result<Vec<Halfspace>, Error> {
    if rows.len() <= 1 {
        return Ok(rows);
    }
    let mut i = 0;
    while i < rows.len() && rows.len() > 1 {
        if rows[i].normal.norm() <= 1e-12 {
            // Infeasibility marker: everything else is moot.
            let marker = rows.swap_remove(i);
            return Ok(vec![marker]);
        }
        let others: Vec<Halfspace> = rows
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, r)| r.clone())
            .collect();
        let objective = -&rows[i].normal;
        let sol = lp::solve(&objective, &others)?;
        let redundant = match sol.status {
            LpStatus::Optimal => -sol.value <= rows[i].offset + tol::LP,
            LpStatus::Unbounded => false,
            // Remaining system already empty: this row adds nothing.
            LpStatus::Infeasible => true,
        };
        if redundant {
            rows.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(rows)
}
