//! Planar rasterization of state-space sets and safe-set rejection sampling.
//!
//! `rasterize_set` evaluates a membership predicate over a uniform grid on a
//! two-coordinate slice of the state space, producing a row-major boolean
//! grid. With the `parallel` feature (on by default) rows are evaluated with
//! rayon; `rasterize_set_serial` is the single-threaded path, and both produce
//! identical grids. `sample_in_s` draws states uniformly in a box and rejects
//! those outside the ψ-chain invariant set, with a deterministic seeded RNG.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::hocbf::PsiChain;
use crate::Error;

/// Two-coordinate view of an n-dimensional state space: the grid varies the
/// `axes` coordinates; every other coordinate is pinned to `fixed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    /// Full state dimension.
    pub dim: usize,
    /// (horizontal, vertical) state coordinates spanned by the grid.
    pub axes: (usize, usize),
    /// Values for the remaining coordinates (entries at `axes` are ignored).
    pub fixed: DVector<f64>,
}

impl Slice {
    /// The identity slice for a two-dimensional state space.
    pub fn planar() -> Self {
        Slice {
            dim: 2,
            axes: (0, 1),
            fixed: DVector::zeros(2),
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let (ax, ay) = self.axes;
        if ax >= self.dim || ay >= self.dim || ax == ay {
            return Err(Error::Invalid(format!(
                "slice axes ({ax}, {ay}) must be distinct and below dim {}",
                self.dim
            )));
        }
        if self.fixed.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "slice fixes {} coordinates but dim = {}",
                self.fixed.len(),
                self.dim
            )));
        }
        if self.fixed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("slice coordinates must be finite".into()));
        }
        Ok(())
    }
}

/// Row-major boolean raster: `cells[iy * xs.len() + ix]` is the predicate
/// value at `(xs[ix], ys[iy])`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub cells: Vec<bool>,
}

impl RasterGrid {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn at(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.xs.len() + ix]
    }

    /// Fraction of cells inside the set.
    pub fn fill_ratio(&self) -> f64 {
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len() as f64
    }
}

fn grid_axes(
    window: ((f64, f64), (f64, f64)),
    resolution: (usize, usize),
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let ((x0, x1), (y0, y1)) = window;
    for v in [x0, x1, y0, y1] {
        if !v.is_finite() {
            return Err(Error::Invalid("raster window must be finite".into()));
        }
    }
    if !(x0 < x1 && y0 < y1) {
        return Err(Error::Invalid("raster window must have positive extent".into()));
    }
    let (nx, ny) = resolution;
    if nx < 2 || ny < 2 {
        return Err(Error::Invalid("raster resolution must be at least 2 per axis".into()));
    }
    let xs = (0..nx)
        .map(|i| x0 + (x1 - x0) * i as f64 / (nx - 1) as f64)
        .collect();
    let ys = (0..ny)
        .map(|i| y0 + (y1 - y0) * i as f64 / (ny - 1) as f64)
        .collect();
    Ok((xs, ys))
}

fn raster_row<F>(predicate: &F, xs: &[f64], y: f64, slice: &Slice) -> Vec<bool>
where
    F: Fn(&DVector<f64>) -> bool,
{
    let mut point = slice.fixed.clone();
    point[slice.axes.1] = y;
    xs.iter()
        .map(|&x| {
            point[slice.axes.0] = x;
            predicate(&point)
        })
        .collect()
}

/// Rasterize the predicate over the window, one row per vertical grid value.
/// Uses rayon when the `parallel` feature is enabled; the output is identical
/// to [`rasterize_set_serial`] either way.
pub fn rasterize_set<F>(
    predicate: F,
    window: ((f64, f64), (f64, f64)),
    resolution: (usize, usize),
    slice: &Slice,
) -> Result<RasterGrid, Error>
where
    F: Fn(&DVector<f64>) -> bool + Sync,
{
    slice.validate()?;
    let (xs, ys) = grid_axes(window, resolution)?;
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<bool>> = ys
        .par_iter()
        .map(|&y| raster_row(&predicate, &xs, y, slice))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<bool>> = ys
        .iter()
        .map(|&y| raster_row(&predicate, &xs, y, slice))
        .collect();
    Ok(RasterGrid {
        cells: rows.concat(),
        xs,
        ys,
    })
}

/// Single-threaded rasterization (the benchmark baseline).
pub fn rasterize_set_serial<F>(
    predicate: F,
    window: ((f64, f64), (f64, f64)),
    resolution: (usize, usize),
    slice: &Slice,
) -> Result<RasterGrid, Error>
where
    F: Fn(&DVector<f64>) -> bool,
{
    slice.validate()?;
    let (xs, ys) = grid_axes(window, resolution)?;
    let rows: Vec<Vec<bool>> = ys
        .iter()
        .map(|&y| raster_row(&predicate, &xs, y, slice))
        .collect();
    Ok(RasterGrid {
        cells: rows.concat(),
        xs,
        ys,
    })
}

/// Draw `count` states uniformly from the per-coordinate box `window`,
/// keeping those with every ψ-level of every chain nonnegative. Degenerate
/// intervals (lo = hi) pin a coordinate. Fails with
/// [`Error::SamplingExhausted`] once `attempt_cap` draws have been spent.
pub fn sample_in_s(
    chains: &[PsiChain],
    window: &[(f64, f64)],
    count: usize,
    seed: u64,
    attempt_cap: usize,
) -> Result<Vec<DVector<f64>>, Error> {
    let n = window.len();
    for &(lo, hi) in window {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Invalid(
                "sampling window must consist of finite ordered intervals".into(),
            ));
        }
    }
    for chain in chains {
        for level in &chain.levels {
            if level.linear.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "ψ-chain of safety {} lives in dimension {}, window has {n}",
                    chain.source,
                    level.linear.len()
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        if attempts >= attempt_cap {
            return Err(Error::SamplingExhausted {
                attempts,
                found: out.len(),
                requested: count,
            });
        }
        attempts += 1;
        let x = DVector::from_fn(n, |i, _| {
            let (lo, hi) = window[i];
            lo + rng.gen::<f64>() * (hi - lo)
        });
        if chains.iter().all(|c| c.contains(&x, 0.0)) {
            out.push(x);
        }
    }
    Ok(out)
}
