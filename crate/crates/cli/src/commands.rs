//! The three subcommands: structural analysis, closed-loop simulation, and
//! set rasterization.

use crate::output::{fmt_f, render_csv, InfeasibleRecord, OutDir};
use crate::schema::{RasterConfig, ResolvedScenario, ScenarioFile};
use lticbf::geometry::{
    detect_blocks, detect_parallel_families, dependent_certificate, expansion_coefficients,
    feasible_at, feasible_at_via_lp, independent_always_feasible, merge_parallel,
    project_feasible_set, support_interval, BlockKind, InputSet, ParallelFamily,
};
use lticbf::hocbf::AffineForm;
use lticbf::sim::raster::{rasterize_set, RasterGrid, Slice};
use lticbf::sim::{simulate, Scenario, SimOptions};
use lticbf::{tol, Error};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::path::Path;

/// Command failure carrying the process exit code.
///
/// Codes: 2 = configuration (bad file or scenario that cannot be built,
/// nothing written), 3 = runtime failure while producing outputs,
/// 4 = trajectory reached a state where the filter constraints are
/// infeasible (manifest records the state and certificate).
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

impl CmdError {
    pub fn config(message: impl Into<String>) -> Self {
        CmdError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CmdError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::runtime(format!("i/o error: {e}"))
    }
}

fn build_scenario(resolved: ResolvedScenario) -> Result<(Scenario, Option<RasterConfig>), CmdError> {
    let raster = resolved.raster.clone();
    let scenario = resolved
        .def
        .build()
        .map_err(|e| CmdError::config(format!("cannot build scenario: {e}")))?;
    Ok((scenario, raster))
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RowReport {
    source: usize,
    rel_degree: usize,
    ell: Vec<f64>,
    beta_linear: Vec<f64>,
    beta_constant: f64,
}

#[derive(Serialize)]
struct FamilyReport {
    direction: Vec<f64>,
    members: Vec<usize>,
    coefficients: Vec<f64>,
    /// True when every member bounds the family level from the same side,
    /// so the family interval can never invert.
    one_sided: bool,
}

#[derive(Serialize)]
struct BlockReport {
    rows: Vec<usize>,
    kind: String,
}

#[derive(Serialize)]
struct CertificateSummary {
    /// Direction labels forming the independent basis.
    basis: Vec<String>,
    /// Labels of directions expanded over the basis.
    dependent: Vec<String>,
    /// Expansion coefficients, one row per dependent direction.
    eta: Vec<Vec<f64>>,
    states_checked: usize,
    /// States where the interval certificate proves feasibility.
    certified: usize,
    /// States the joint linear program reports feasible.
    lp_feasible: usize,
    /// Certified states the LP contradicts (soundness violations; must be 0).
    certified_but_lp_infeasible: usize,
}

#[derive(Serialize)]
struct AnalyzeReport {
    state_dim: usize,
    input_dim: usize,
    row_count: usize,
    filter_law: String,
    stacked_rows: Vec<RowReport>,
    families: Vec<FamilyReport>,
    blocks: Vec<BlockReport>,
    family_directions_independent: bool,
    /// One representative row per family; independence of these rows makes
    /// the whole stack feasible everywhere over unconstrained inputs.
    representative_rows: Vec<usize>,
    representative_rows_always_feasible: bool,
    unbounded_domain_rows: usize,
    input_limited_domain_rows: usize,
    eliminated_domain_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificates: Option<CertificateSummary>,
}

/// One direction whose achievable level vᵀu is constrained, either by a
/// constraint family, by an input-box axis, or both when they coincide.
struct CertItem {
    label: String,
    direction: DVector<f64>,
    family: Option<usize>,
    box_interval: Option<(f64, f64)>,
}

impl CertItem {
    fn interval_at(&self, families: &[(PwaBound2, PwaBound2)], x: &DVector<f64>) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if let Some(f) = self.family {
            let (l, u) = &families[f];
            lo = lo.max(l.value(x));
            hi = hi.min(u.value(x));
        }
        if let Some((blo, bhi)) = self.box_interval {
            lo = lo.max(blo);
            hi = hi.min(bhi);
        }
        (lo, hi)
    }
}

type PwaBound2 = lticbf::geometry::PwaBound;

fn family_csv_rows(
    families: &[ParallelFamily],
    n: usize,
    set: Option<&InputSet>,
) -> Result<(Vec<String>, Vec<Vec<String>>), Error> {
    let mut header = vec![
        "family".to_string(),
        "lower_member".to_string(),
        "upper_member".to_string(),
        "kind".to_string(),
    ];
    header.extend((0..n).map(|k| format!("n{k}")));
    header.push("offset".to_string());

    let mut rows = Vec::new();
    let mut push = |family: usize, lo_m: i64, up_m: i64, kind: &str, normal: &DVector<f64>, off: f64| {
        let mut row = vec![
            family.to_string(),
            lo_m.to_string(),
            up_m.to_string(),
            kind.to_string(),
        ];
        row.extend(normal.iter().map(|&v| fmt_f(v)));
        row.push(fmt_f(off));
        rows.push(row);
    };

    for (fi, fam) in families.iter().enumerate() {
        let lower: Vec<(usize, &AffineForm)> = fam
            .members
            .iter()
            .zip(&fam.coefficients)
            .zip(&fam.nu)
            .filter(|((_, &c), _)| c > 0.0)
            .map(|((&mem, _), nu)| (mem, nu))
            .collect();
        let upper: Vec<(usize, &AffineForm)> = fam
            .members
            .iter()
            .zip(&fam.coefficients)
            .zip(&fam.nu)
            .filter(|((_, &c), _)| c < 0.0)
            .map(|((&mem, _), nu)| (mem, nu))
            .collect();

        // Pair rows: every lower level must stay below every upper level.
        for &(mi, nu_i) in &lower {
            for &(mj, nu_j) in &upper {
                let normal = &nu_i.linear - &nu_j.linear;
                let off = nu_j.constant - nu_i.constant;
                push(fi, mi as i64, mj as i64, "pair", &normal, off);
            }
        }

        // Cap rows against the input set's support along the direction.
        if let Some(set) = set {
            let (smin, smax) = support_interval(&fam.direction, set)?;
            if smax.is_finite() {
                for &(mi, nu_i) in &lower {
                    push(fi, mi as i64, -1, "upper_cap", &nu_i.linear, smax - nu_i.constant);
                }
            }
            if smin.is_finite() {
                for &(mj, nu_j) in &upper {
                    push(fi, -1, mj as i64, "lower_cap", &(-&nu_j.linear), nu_j.constant - smin);
                }
            }
        }
    }
    Ok((header, rows))
}

pub fn cmd_analyze(
    scenario_path: &Path,
    file: &ScenarioFile,
    resolved: ResolvedScenario,
    out: &Path,
    seed: u64,
) -> Result<(), CmdError> {
    let (sc, _) = build_scenario(resolved)?;
    let mut dir = OutDir::create(out)?;

    let run = || -> Result<(AnalyzeReport, Vec<(String, String)>), Error> {
        let n = sc.n();
        let families = detect_parallel_families(&sc.stacked)?;
        let partition = detect_blocks(&sc.stacked)?;

        let stacked_rows = sc
            .stacked
            .rows
            .iter()
            .map(|r| RowReport {
                source: r.source,
                rel_degree: r.rel_degree,
                ell: r.ell.iter().copied().collect(),
                beta_linear: r.beta.linear.iter().copied().collect(),
                beta_constant: r.beta.constant,
            })
            .collect();

        let family_reports = families
            .iter()
            .map(|f| FamilyReport {
                direction: f.direction.iter().copied().collect(),
                members: f.members.clone(),
                coefficients: f.coefficients.clone(),
                one_sided: f.coefficients.iter().all(|&c| c > 0.0)
                    || f.coefficients.iter().all(|&c| c < 0.0),
            })
            .collect();

        let blocks = partition
            .blocks
            .iter()
            .map(|b| BlockReport {
                rows: b.rows.clone(),
                kind: match b.kind {
                    BlockKind::ParallelFamily => "parallel-family",
                    BlockKind::IndependentRows => "independent-rows",
                    BlockKind::General => "general",
                }
                .to_string(),
            })
            .collect();

        let representative_rows: Vec<usize> = families.iter().map(|f| f.members[0]).collect();
        let representative_rows_always_feasible =
            independent_always_feasible(&sc.stacked, &representative_rows)?;
        let family_directions_independent = representative_rows_always_feasible;

        // Feasibility-domain halfspace lists: pair rows only for the
        // unconstrained-input domain, pair + cap rows once input limits
        // enter, and the exact input-variable elimination.
        let (xu_header, xu_rows) = family_csv_rows(&families, n, None)?;
        let (xb_header, xb_rows) = family_csv_rows(&families, n, Some(&sc.input_set))?;
        let fm = project_feasible_set(&sc.stacked, &sc.input_set)?;
        let mut fm_header: Vec<String> = (0..n).map(|k| format!("n{k}")).collect();
        fm_header.push("offset".to_string());
        let fm_rows: Vec<Vec<String>> = fm
            .halfspaces
            .iter()
            .map(|h| {
                let mut row: Vec<String> = h.normal.iter().map(|&v| fmt_f(v)).collect();
                row.push(fmt_f(h.offset));
                row
            })
            .collect();

        let certificates = certificate_summary(&sc, &families, seed)?;

        let report = AnalyzeReport {
            state_dim: n,
            input_dim: sc.m(),
            row_count: sc.stacked.p(),
            filter_law: sc.filter.name().to_string(),
            stacked_rows,
            families: family_reports,
            blocks,
            family_directions_independent,
            representative_rows,
            representative_rows_always_feasible,
            unbounded_domain_rows: xu_rows.len(),
            input_limited_domain_rows: xb_rows.len(),
            eliminated_domain_rows: fm_rows.len(),
            certificates,
        };

        let csvs = vec![
            ("xu.csv".to_string(), render_csv(&xu_header, &xu_rows)),
            ("xb.csv".to_string(), render_csv(&xb_header, &xb_rows)),
            ("xfeas_fm.csv".to_string(), render_csv(&fm_header, &fm_rows)),
        ];
        Ok((report, csvs))
    };

    let (report, csvs) = run().map_err(|e| CmdError::runtime(e.to_string()))?;
    for (name, contents) in &csvs {
        dir.write(name, contents)?;
    }
    dir.write(
        "report.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    dir.finish(
        "analyze",
        scenario_path,
        file,
        seed,
        sc.filter.name(),
        None,
        None,
    )?;
    Ok(())
}

/// Runs the interval certificate against the joint LP on sampled safe states.
///
/// Directions of interest are the family directions plus, for box inputs,
/// the coordinate axes; a coinciding family/axis pair is merged into one
/// item whose interval is the intersection. A greedy pass picks a maximal
/// independent basis; the rest are expanded over it and checked with the
/// sign-selected reachability test.
fn certificate_summary(
    sc: &Scenario,
    families: &[ParallelFamily],
    seed: u64,
) -> Result<Option<CertificateSummary>, Error> {
    let m = sc.m();

    let mut items: Vec<CertItem> = families
        .iter()
        .enumerate()
        .map(|(i, f)| CertItem {
            label: format!("family{i}"),
            direction: f.direction.clone(),
            family: Some(i),
            box_interval: None,
        })
        .collect();

    if let InputSet::Box { lo, hi } = &sc.input_set {
        for k in 0..m {
            let axis = DVector::from_fn(m, |r, _| if r == k { 1.0 } else { 0.0 });
            // Canonical family directions have a positive leading entry, so a
            // coinciding axis matches with the same sign.
            if let Some(item) = items
                .iter_mut()
                .find(|it| (&it.direction - &axis).amax() <= tol::RELATIVE)
            {
                item.label = format!("{}+axis{k}", item.label);
                item.box_interval = Some((lo[k], hi[k]));
            } else {
                items.push(CertItem {
                    label: format!("axis{k}"),
                    direction: axis,
                    family: None,
                    box_interval: Some((lo[k], hi[k])),
                });
            }
        }
    }

    // Greedy maximal independent basis over the item directions.
    let mut basis: Vec<usize> = Vec::new();
    let mut dependent: Vec<usize> = Vec::new();
    for idx in 0..items.len() {
        if basis.is_empty() {
            basis.push(idx);
            continue;
        }
        let dirs: Vec<DVector<f64>> = basis.iter().map(|&i| items[i].direction.clone()).collect();
        match expansion_coefficients(&dirs, &items[idx].direction, idx) {
            Ok(_) => dependent.push(idx),
            Err(Error::DependencyMismatch { .. }) => basis.push(idx),
            Err(e) => return Err(e),
        }
    }
    if dependent.is_empty() {
        return Ok(None);
    }

    let basis_dirs: Vec<DVector<f64>> = basis.iter().map(|&i| items[i].direction.clone()).collect();
    let mut eta = DMatrix::zeros(dependent.len(), basis.len());
    for (j, &idx) in dependent.iter().enumerate() {
        let coeffs = expansion_coefficients(&basis_dirs, &items[idx].direction, idx)?;
        eta.row_mut(j).copy_from(&coeffs.transpose());
    }

    let merged: Vec<(PwaBound2, PwaBound2)> = families.iter().map(merge_parallel).collect();

    // Basis intervals describe where the input will be chosen, so they may
    // soundly be narrowed by the input set's support along each direction;
    // dependent intervals are requirements and must stay untouched.
    let basis_support: Vec<(f64, f64)> = basis
        .iter()
        .map(|&i| support_interval(&items[i].direction, &sc.input_set))
        .collect::<Result<_, _>>()?;

    // Sample safe states when a window is configured; otherwise check the
    // scenario's own initial state.
    let states: Vec<DVector<f64>> = if sc.sample_window.is_some() {
        sc.sample_initial_states(200, seed)?
            .iter()
            .map(|xp| sc.lift_state(xp))
            .collect::<Result<_, _>>()?
    } else {
        vec![sc.x0.clone()]
    };

    let mut certified = 0usize;
    let mut lp_feasible = 0usize;
    let mut unsound = 0usize;
    for x in &states {
        let basis_iv: Vec<(f64, f64)> = basis
            .iter()
            .zip(&basis_support)
            .map(|(&i, &(slo, shi))| {
                let (lo, hi) = items[i].interval_at(&merged, x);
                (lo.max(slo), hi.min(shi))
            })
            .collect();
        let dep_iv: Vec<(f64, f64)> = dependent
            .iter()
            .map(|&i| items[i].interval_at(&merged, x))
            .collect();
        let cert = dependent_certificate(&basis_iv, &eta, &dep_iv)?;
        let lp = feasible_at_via_lp(&sc.stacked, &sc.input_set, x)?.feasible;
        if cert {
            certified += 1;
            if !lp {
                unsound += 1;
            }
        }
        if lp {
            lp_feasible += 1;
        }
    }

    Ok(Some(CertificateSummary {
        basis: basis.iter().map(|&i| items[i].label.clone()).collect(),
        dependent: dependent.iter().map(|&i| items[i].label.clone()).collect(),
        eta: (0..eta.nrows())
            .map(|j| eta.row(j).iter().copied().collect())
            .collect(),
        states_checked: states.len(),
        certified,
        lp_feasible,
        certified_but_lp_infeasible: unsound,
    }))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(
    scenario_path: &Path,
    file: &ScenarioFile,
    resolved: ResolvedScenario,
    out: &Path,
    seed: u64,
    compare_qp: bool,
    x0_override: Option<Vec<f64>>,
) -> Result<(), CmdError> {
    let (sc, _) = build_scenario(resolved)?;
    let mut dir = OutDir::create(out)?;

    let opts = SimOptions {
        compare_qp,
        x0: x0_override.map(|v| DVector::from_column_slice(&v)),
    };

    let log = match simulate(&sc, &opts) {
        Ok(log) => log,
        Err(Error::InfeasibleAtState { t, x, certificate }) => {
            let record = InfeasibleRecord {
                t,
                x: x.iter().copied().collect(),
                certificate: certificate.map(|c| c.iter().copied().collect()),
            };
            dir.finish(
                "simulate",
                scenario_path,
                file,
                seed,
                sc.filter.name(),
                None,
                Some(record),
            )?;
            return Err(CmdError {
                code: 4,
                message: format!(
                    "filter constraints infeasible at t = {t}; state and certificate recorded in manifest.json"
                ),
            });
        }
        Err(e) => return Err(CmdError::runtime(e.to_string())),
    };

    let np = sc.n_physical;
    let q = sc.n() - np;
    let m = sc.m();
    let n_h = sc.safeties.len();
    let psi_labels = sc.psi_labels();

    let mut header = vec!["t".to_string()];
    header.extend((0..np).map(|k| format!("x{k}")));
    header.extend((0..q).map(|k| format!("w{k}")));
    header.extend((0..m).map(|k| format!("ud{k}")));
    header.extend((0..m).map(|k| format!("u{k}")));
    header.extend((0..n_h).map(|k| format!("h{k}")));
    header.extend(psi_labels.iter().map(|(s, l)| format!("psi{s}_{l}")));
    header.push("feasible".to_string());

    let mut rows = Vec::with_capacity(log.len());
    for k in 0..log.len() {
        let mut row = vec![fmt_f(log.times[k])];
        row.extend(log.states[k].iter().map(|&v| fmt_f(v)));
        row.extend(log.nominal[k].iter().map(|&v| fmt_f(v)));
        row.extend(log.filtered[k].iter().map(|&v| fmt_f(v)));
        row.extend(log.h[k].iter().map(|&v| fmt_f(v)));
        row.extend(log.psi[k].iter().map(|&v| fmt_f(v)));
        row.push(if log.feasible[k] { "1" } else { "0" }.to_string());
        rows.push(row);
    }
    dir.write("trajectory.csv", &render_csv(&header, &rows))?;

    let max_dev = log.max_qp_deviation();
    if let Some(devs) = &log.qp_deviation {
        let header = vec!["t".to_string(), "qp_gap".to_string()];
        let rows: Vec<Vec<String>> = log
            .times
            .iter()
            .zip(devs)
            .map(|(&t, &d)| vec![fmt_f(t), fmt_f(d)])
            .collect();
        dir.write("deviation.csv", &render_csv(&header, &rows))?;
    }

    dir.finish(
        "simulate",
        scenario_path,
        file,
        seed,
        sc.filter.name(),
        max_dev,
        None,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// raster
// ---------------------------------------------------------------------------

pub struct RasterOverrides {
    pub window: Option<(f64, f64, f64, f64)>,
    pub res: Option<usize>,
    /// Pinned physical coordinates; the remaining two become the axes.
    pub slice: Option<Vec<(usize, f64)>>,
}

fn grid_csv(grid: &RasterGrid) -> String {
    let mut header = vec!["y".to_string()];
    header.extend(grid.xs.iter().map(|&x| fmt_f(x)));
    let mut rows = Vec::with_capacity(grid.ny());
    for iy in 0..grid.ny() {
        let mut row = vec![fmt_f(grid.ys[iy])];
        row.extend((0..grid.nx()).map(|ix| if grid.at(ix, iy) { "1" } else { "0" }.to_string()));
        rows.push(row);
    }
    render_csv(&header, &rows)
}

pub fn cmd_raster(
    scenario_path: &Path,
    file: &ScenarioFile,
    mut resolved: ResolvedScenario,
    out: &Path,
    seed: u64,
    overrides: &RasterOverrides,
) -> Result<(), CmdError> {
    // Rasters are state-space maps; the scenario's own initial state is
    // irrelevant, so never reject it here.
    resolved.def.allow_unsafe_start = true;
    let np = resolved.def.system.n();
    let (sc, raster_default) = build_scenario(resolved)?;

    // Assemble the slice: command-line overrides beat the scenario defaults.
    let (window, res, axes, fixed_phys) = {
        let base = raster_default;
        let window = match overrides.window {
            Some((a, b, c, d)) => ((a, b), (c, d)),
            None => base
                .as_ref()
                .map(|r| r.window)
                .ok_or_else(|| CmdError::config("no raster window: give --window or a [raster] section"))?,
        };
        let res = overrides
            .res
            .or(base.as_ref().map(|r| r.res.0))
            .unwrap_or(200);
        let (axes, fixed) = match &overrides.slice {
            Some(pins) => {
                let mut fixed = DVector::zeros(np);
                let mut pinned = vec![false; np];
                for &(k, v) in pins {
                    if k >= np {
                        return Err(CmdError::config(format!(
                            "--slice coordinate {k} out of range (state dimension {np})"
                        )));
                    }
                    if pinned[k] {
                        return Err(CmdError::config(format!("--slice pins coordinate {k} twice")));
                    }
                    pinned[k] = true;
                    fixed[k] = v;
                }
                let free: Vec<usize> = (0..np).filter(|&k| !pinned[k]).collect();
                if free.len() != 2 {
                    return Err(CmdError::config(format!(
                        "--slice must leave exactly two coordinates free, got {}",
                        free.len()
                    )));
                }
                ((free[0], free[1]), fixed)
            }
            None => match &base {
                Some(r) => (r.axes, r.fixed.clone()),
                None => {
                    if np < 2 {
                        return Err(CmdError::config("raster needs at least two state coordinates"));
                    }
                    ((0, 1), DVector::zeros(np))
                }
            },
        };
        (window, (res, res), axes, fixed)
    };

    // Lift the slice when an exogenous channel adds signal states: those
    // coordinates are pinned at the schedule's initial value.
    let mut fixed = DVector::zeros(sc.n());
    fixed.rows_mut(0, np).copy_from(&fixed_phys);
    if let Some(exo) = &sc.exogenous {
        fixed
            .rows_mut(np, exo.q())
            .copy_from(&exo.signal_at(0.0));
    }
    let slice = Slice {
        dim: sc.n(),
        axes,
        fixed,
    };

    let mut dir = OutDir::create(out)?;
    let run = || -> Result<Vec<(String, String)>, Error> {
        let unconstrained = InputSet::all(sc.m());
        let grids: Vec<(&str, RasterGrid)> = vec![
            (
                "raster_c.csv",
                rasterize_set(
                    |x| sc.h_at(x).iter().all(|&h| h >= 0.0),
                    window,
                    res,
                    &slice,
                )?,
            ),
            (
                "raster_s.csv",
                rasterize_set(|x| sc.in_safe_set(x, 0.0), window, res, &slice)?,
            ),
            (
                "raster_xu.csv",
                rasterize_set(
                    |x| {
                        feasible_at(&sc.stacked, &unconstrained, x)
                            .map(|r| r.feasible)
                            .unwrap_or(false)
                    },
                    window,
                    res,
                    &slice,
                )?,
            ),
            (
                "raster_xb.csv",
                rasterize_set(
                    |x| {
                        feasible_at(&sc.stacked, &sc.input_set, x)
                            .map(|r| r.feasible)
                            .unwrap_or(false)
                    },
                    window,
                    res,
                    &slice,
                )?,
            ),
        ];
        Ok(grids
            .into_iter()
            .map(|(name, g)| (name.to_string(), grid_csv(&g)))
            .collect())
    };

    let files = run().map_err(|e| CmdError::runtime(e.to_string()))?;
    for (name, contents) in &files {
        dir.write(name, contents)?;
    }
    dir.finish(
        "raster",
        scenario_path,
        file,
        seed,
        sc.filter.name(),
        None,
        None,
    )?;
    Ok(())
}
