//! Acceptance gate: every check below exercises one headline guarantee of
//! the toolchain end to end and prints a single PASS/FAIL line (run with
//! `cargo test --test acceptance -- --nocapture` to see them all).

use lticbf::filters::{construct_g, g_identity_deviation, solve_qp, QpProblem};
use lticbf::geometry::{
    dependent_certificate, detect_parallel_families, expansion_coefficients, feasible_at_via_lp,
    merge_parallel, project_feasible_set, support_interval, Halfspace, InputSet,
};
use lticbf::hocbf::{build_stacked, stack, AffineForm, AffineSafety, BarrierRow, LtiSystem};
use lticbf::sim::{simulate, SimOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn scenario_path(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(file)
}

const SCENARIOS: [&str; 3] = [
    "double_integrator.toml",
    "planar_quadrotor.toml",
    "aircraft_lateral.toml",
];

/// The double-integrator benchmark: five constraints with known row data.
fn benchmark() -> (LtiSystem, Vec<AffineSafety>) {
    let sys = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap();
    let safeties = vec![
        AffineSafety::new(DVector::from_vec(vec![1.0, 1.0]), -1.0, vec![1.0]).unwrap(),
        AffineSafety::new(DVector::from_vec(vec![1.0, 0.0]), -1.0, vec![1.0, 2.0]).unwrap(),
        AffineSafety::new(DVector::from_vec(vec![0.0, -2.0]), -5.0, vec![1.0]).unwrap(),
        AffineSafety::new(DVector::from_vec(vec![1.0, -3.0]), -6.0, vec![1.0]).unwrap(),
        AffineSafety::new(DVector::from_vec(vec![-2.0, 0.0]), -5.0, vec![1.0, 2.0]).unwrap(),
    ];
    (sys, safeties)
}

#[test]
fn barrier_rows_reproduce_the_benchmark_coefficients() {
    let start = Instant::now();
    let (sys, safeties) = benchmark();
    let stacked = build_stacked(&sys, &safeties).unwrap();

    let expected_ell = [1.0, 1.0, -2.0, -3.0, -2.0];
    let expected_beta: [([f64; 2], f64); 5] = [
        ([1.0, 2.0], 1.0),
        ([2.0, 3.0], 2.0),
        ([0.0, -2.0], 5.0),
        ([1.0, -2.0], 6.0),
        ([-4.0, -6.0], 10.0),
    ];
    let mut max_err = 0.0_f64;
    for (i, row) in stacked.rows.iter().enumerate() {
        max_err = max_err.max((row.ell[0] - expected_ell[i]).abs());
        let (lin, c) = expected_beta[i];
        max_err = max_err.max((row.beta.linear[0] - lin[0]).abs());
        max_err = max_err.max((row.beta.linear[1] - lin[1]).abs());
        max_err = max_err.max((row.beta.constant - c).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "benchmark-row-reconstruction",
        max_err <= 1e-12 && elapsed < 1.0,
        &format!("max coefficient error {max_err:.3e} (tol 1e-12), {elapsed:.3}s (limit 1s)"),
    );
}

#[test]
fn explicit_and_qp_filters_agree_along_bundled_scenarios() {
    let exe = env!("CARGO_BIN_EXE_lticbf");
    let tmp = tempfile::tempdir().unwrap();
    let mut detail = String::new();
    let mut pass = true;
    for name in SCENARIOS {
        let out = tmp.path().join(name.replace(".toml", ""));
        let start = Instant::now();
        let status = std::process::Command::new(exe)
            .args([
                "simulate",
                scenario_path(name).to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--compare-qp",
            ])
            .status()
            .unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert!(status.success(), "{name}: simulate failed");
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        let dev = manifest["max_qp_deviation"].as_f64().unwrap();
        let law = manifest["filter_law"].as_str().unwrap().to_string();
        pass &= dev <= 1e-8 && elapsed < 30.0;
        detail.push_str(&format!("{name} [{law}] dev {dev:.2e} in {elapsed:.1}s; "));
    }
    verdict(
        "filter-vs-qp-agreement",
        pass,
        &format!("{detail}(tol 1e-8, limit 30s each)"),
    );
}

#[test]
fn sampled_safe_starts_remain_safe_for_the_full_horizon() {
    let mut detail = String::new();
    let mut pass = true;
    for (si, name) in SCENARIOS.iter().enumerate() {
        let file = lticbf_cli::schema::load(&scenario_path(name)).unwrap();
        let sc = file.resolve().unwrap().def.build().unwrap();
        let starts = sc.sample_initial_states(20, 1000 + si as u64).unwrap();
        let mut worst = f64::INFINITY;
        for x0 in &starts {
            let opts = SimOptions {
                compare_qp: false,
                x0: Some(x0.clone()),
            };
            let log = simulate(&sc, &opts).unwrap();
            worst = worst.min(log.min_h());
        }
        pass &= worst >= -1e-6;
        detail.push_str(&format!("{name} min h {worst:.3e} over 20 starts; "));
    }
    verdict(
        "sampled-start-invariance",
        pass,
        &format!("{detail}(floor -1e-6)"),
    );
}

#[test]
fn feasibility_domain_tests_agree_on_a_dense_grid() {
    let (sys, safeties) = benchmark();
    let stacked = build_stacked(&sys, &safeties).unwrap();
    let input = InputSet::box_bounds(
        DVector::from_vec(vec![-2.0]),
        DVector::from_vec(vec![2.0]),
    )
    .unwrap();
    let families = detect_parallel_families(&stacked).unwrap();
    assert_eq!(families.len(), 1);
    let (lower, upper) = merge_parallel(&families[0]);
    let (smin, smax) = support_interval(&families[0].direction, &input).unwrap();
    let eliminated = project_feasible_set(&stacked, &input).unwrap();

    let res = 200;
    let mut cells = 0usize;
    let mut disagreements = 0usize;
    let mut borderline = true;
    for iy in 0..res {
        for ix in 0..res {
            let x = DVector::from_vec(vec![
                -4.0 + 8.0 * ix as f64 / (res - 1) as f64,
                -4.0 + 8.0 * iy as f64 / (res - 1) as f64,
            ]);
            let lo = lower.value(&x).max(smin);
            let hi = upper.value(&x).min(smax);
            let by_interval = lo <= hi;
            let by_lp = feasible_at_via_lp(&stacked, &input, &x).unwrap().feasible;
            let by_elimination = eliminated.contains(&x, 1e-8);
            cells += 1;
            if !(by_interval == by_lp && by_lp == by_elimination) {
                disagreements += 1;
                borderline &= (hi - lo).abs() <= 1e-6;
            }
        }
    }
    let agreement = 1.0 - disagreements as f64 / cells as f64;
    verdict(
        "feasibility-domain-equivalence",
        agreement >= 0.999 && borderline,
        &format!(
            "{disagreements}/{cells} disagreements (agreement {:.5}, floor 0.999), all within 1e-6 interval slack: {borderline}",
            agreement
        ),
    );
}

#[test]
fn box_support_closed_form_matches_the_lp() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_err = 0.0_f64;
    for _ in 0..300 {
        let m = rng.gen_range(1..=6);
        let v = loop {
            let v = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            if v.norm() > 1e-3 {
                break v;
            }
        };
        let lo = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..0.0));
        let hi = DVector::from_fn(m, |k, _| lo[k] + rng.gen_range(0.01..4.0));
        let boxed = InputSet::box_bounds(lo.clone(), hi.clone()).unwrap();
        let (a, b) = support_interval(&v, &boxed).unwrap();
        // Independent reference: the same box posed as a generic halfspace
        // list routes through the LP-based support path.
        let poly = InputSet::polyhedron(boxed.to_halfspaces(), m).unwrap();
        let (a_lp, b_lp) = support_interval(&v, &poly).unwrap();
        max_err = max_err.max((a - a_lp).abs()).max((b - b_lp).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "box-support-closed-form",
        max_err <= 1e-9 && elapsed < 5.0,
        &format!("max end deviation {max_err:.3e} over 300 cases (tol 1e-9), {elapsed:.2}s (limit 5s)"),
    );
}

/// Random orthonormal directions via QR of a random square matrix.
fn random_orthonormal(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<DVector<f64>> {
    loop {
        let mat = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let q = mat.qr().q();
        if q.ncols() >= k {
            let cols: Vec<DVector<f64>> = (0..k).map(|j| q.column(j).into_owned()).collect();
            if cols.iter().all(|c| c.norm() > 0.9) {
                return cols;
            }
        }
    }
}

#[test]
fn blockwise_feasibility_equals_joint_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 3;
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for _ in 0..100 {
        let m = rng.gen_range(2..=6);
        let k = rng.gen_range(1..=m);
        let dirs = random_orthonormal(&mut rng, m, k);
        // Each block: one to three rows along its own direction.
        let mut blocks: Vec<Vec<BarrierRow>> = Vec::new();
        let mut source = 0;
        for dir in &dirs {
            let rows = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let c = loop {
                        let c: f64 = rng.gen_range(-2.0..2.0);
                        if c.abs() > 0.1 {
                            break c;
                        }
                    };
                    let row = BarrierRow {
                        source,
                        rel_degree: 1,
                        ell: dir * c,
                        beta: AffineForm::new(
                            DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
                            rng.gen_range(-1.0..1.0),
                        ),
                    };
                    source += 1;
                    row
                })
                .collect();
            blocks.push(rows);
        }
        let joint = stack(blocks.iter().flatten().cloned().collect()).unwrap();
        let per_block: Vec<_> = blocks
            .iter()
            .map(|rows| stack(rows.clone()).unwrap())
            .collect();
        let unconstrained = InputSet::all(m);
        for _ in 0..50 {
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let full = feasible_at_via_lp(&joint, &unconstrained, &x)
                .unwrap()
                .feasible;
            let conjunction = per_block.iter().all(|b| {
                feasible_at_via_lp(b, &unconstrained, &x).unwrap().feasible
            });
            checks += 1;
            if full != conjunction {
                mismatches += 1;
            }
        }
    }
    verdict(
        "block-decomposition",
        mismatches == 0,
        &format!("{mismatches} mismatches over {checks} (100 systems x 50 states)"),
    );
}

#[test]
fn certified_dependent_directions_are_lp_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut certified = 0usize;
    let mut unsound = 0usize;
    for inst in 0..500 {
        let m = rng.gen_range(2..=5);
        let k = rng.gen_range(1..m);
        let n_dep = rng.gen_range(1..=2);
        let basis = random_orthonormal(&mut rng, m, k);

        let basis_iv: Vec<(f64, f64)> = (0..k)
            .map(|_| {
                let lo = rng.gen_range(-2.0..0.0);
                (lo, lo + rng.gen_range(0.1..2.0))
            })
            .collect();

        // Dependent directions are explicit combinations of the basis, and
        // their intervals contain the sign-selected reach with slack, so
        // the certificate must fire.
        let mut dep_dirs = Vec::new();
        let mut dep_iv = Vec::new();
        for _ in 0..n_dep {
            let coeffs: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut dir = DVector::zeros(m);
            for (c, b) in coeffs.iter().zip(&basis) {
                dir += b * *c;
            }
            let (mut reach_lo, mut reach_hi) = (0.0, 0.0);
            for (c, &(lo, hi)) in coeffs.iter().zip(&basis_iv) {
                if *c > 0.0 {
                    reach_lo += c * lo;
                    reach_hi += c * hi;
                } else {
                    reach_lo += c * hi;
                    reach_hi += c * lo;
                }
            }
            dep_iv.push((
                reach_lo - rng.gen_range(0.0..1.0),
                reach_hi + rng.gen_range(0.0..1.0),
            ));
            dep_dirs.push(dir);
        }

        // Recover the expansion through the library rather than trusting the
        // construction.
        let mut eta = DMatrix::zeros(n_dep, k);
        for (j, dir) in dep_dirs.iter().enumerate() {
            let coeffs = expansion_coefficients(&basis, dir, j).unwrap();
            eta.row_mut(j).copy_from(&coeffs.transpose());
        }
        let cert = dependent_certificate(&basis_iv, &eta, &dep_iv).unwrap();
        assert!(cert, "instance {inst} was constructed to certify");
        certified += 1;

        // Joint LP over all interval constraints: lo ≤ dᵀu ≤ hi becomes the
        // row pair dᵀu ≥ lo and (−d)ᵀu ≥ −hi.
        let mut rows = Vec::new();
        let mut push_pair = |dir: &DVector<f64>, lo: f64, hi: f64, source: &mut usize| {
            rows.push(BarrierRow {
                source: *source,
                rel_degree: 1,
                ell: dir.clone(),
                beta: AffineForm::constant(1, -lo),
            });
            *source += 1;
            rows.push(BarrierRow {
                source: *source,
                rel_degree: 1,
                ell: -dir,
                beta: AffineForm::constant(1, hi),
            });
            *source += 1;
        };
        let mut source = 0;
        for (dir, &(lo, hi)) in basis.iter().zip(&basis_iv) {
            push_pair(dir, lo, hi, &mut source);
        }
        for (dir, &(lo, hi)) in dep_dirs.iter().zip(&dep_iv) {
            push_pair(dir, lo, hi, &mut source);
        }
        let stacked = stack(rows).unwrap();
        let feasible = feasible_at_via_lp(&stacked, &InputSet::all(m), &DVector::zeros(1))
            .unwrap()
            .feasible;
        if !feasible {
            unsound += 1;
        }
    }
    verdict(
        "certificate-soundness",
        certified == 500 && unsound == 0,
        &format!("{certified} certified instances, {unsound} unsound (joint LP disagreements)"),
    );
}

#[test]
fn constructed_weights_invert_exactly_on_the_row_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut max_dev = 0.0_f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..200 {
        let m = rng.gen_range(1..=6);
        let p = rng.gen_range(1..=m);
        let s = loop {
            let s = DMatrix::from_fn(p, m, |_, _| rng.gen_range(-2.0..2.0));
            let smallest = s.clone().svd(false, false).singular_values.min();
            if smallest > 1e-2 {
                break s;
            }
        };
        for tau in [0.1, 1.0, 10.0] {
            let g = construct_g(&s, tau).unwrap();
            max_dev = max_dev.max(g_identity_deviation(&s, &g).unwrap());
            let eigs = g.clone().symmetric_eigen().eigenvalues;
            min_eig = min_eig.min(eigs.min());
        }
    }
    verdict(
        "weight-construction-identity",
        max_dev <= 1e-10 && min_eig > 0.0,
        &format!(
            "max ‖SG⁻¹Sᵀ−I‖∞ {max_dev:.3e} (tol 1e-10), min eigenvalue {min_eig:.3e} over 200x3 cases"
        ),
    );
}

/// High-accuracy reference for the filter QP: accelerated projected gradient
/// on the nonnegative dual, then an exact equality solve on the detected
/// active set (verified feasible before use).
fn reference_objective(problem: &QpProblem) -> f64 {
    let m = problem.u_nom.len();
    let p = problem.rows.len();
    let g_inv = problem
        .g
        .clone()
        .cholesky()
        .expect("weight is SPD")
        .inverse();
    let a = DMatrix::from_fn(p, m, |i, j| problem.rows[i].normal[j]);
    let b = DVector::from_fn(p, |i, _| problem.rows[i].offset);
    let h = &a * &g_inv * a.transpose();
    let c = &a * &problem.u_nom - &b;

    // Lipschitz constant of the dual gradient via the Frobenius norm.
    let l = h.norm().max(1e-12);
    let mut lambda = DVector::zeros(p);
    let mut y = lambda.clone();
    let mut t = 1.0_f64;
    for _ in 0..30_000 {
        let grad = &h * &y - &c;
        let mut next = &y - &(grad / l);
        next.iter_mut().for_each(|v| *v = v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lambda) * ((t - 1.0) / t_next);
        lambda = next;
        t = t_next;
    }
    let u_pg = &problem.u_nom - &g_inv * a.transpose() * &lambda;

    // Polish: equality-solve on the active set the dual iterate identified.
    let active: Vec<usize> = (0..p)
        .filter(|&i| lambda[i] > 1e-7 || problem.rows[i].eval(&u_pg) > -1e-9)
        .collect();
    if !active.is_empty() && active.len() <= m {
        let aa = DMatrix::from_fn(active.len(), m, |i, j| problem.rows[active[i]].normal[j]);
        let bb = DVector::from_fn(active.len(), |i, _| problem.rows[active[i]].offset);
        // KKT system: u = u_nom − G⁻¹Aᵀμ with A u = b ⇒ (A G⁻¹ Aᵀ) μ = A u_nom − b.
        let k = &aa * &g_inv * aa.transpose();
        if let Some(mu) = k.lu().solve(&(&aa * &problem.u_nom - &bb)) {
            if mu.iter().all(|&v| v >= -1e-9) {
                let u = &problem.u_nom - &g_inv * aa.transpose() * &mu;
                if problem.rows.iter().all(|r| r.eval(&u) <= 1e-9) {
                    return problem.objective(&u);
                }
            }
        }
    }
    problem.objective(&u_pg)
}

#[test]
fn qp_solutions_satisfy_kkt_and_match_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut max_kkt = 0.0_f64;
    let mut max_gap = 0.0_f64;
    for _ in 0..500 {
        let m = rng.gen_range(1..=6);
        let mat = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let g = &mat * mat.transpose() + DMatrix::identity(m, m) * 0.1;
        let u_nom = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
        // Feasible by construction: every row passes through a point u0 with
        // nonnegative slack.
        let u0 = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let p = rng.gen_range(1..=12);
        let rows: Vec<Halfspace> = (0..p)
            .map(|_| {
                let normal = loop {
                    let v = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
                    if v.norm() > 1e-3 {
                        break v;
                    }
                };
                let offset = normal.dot(&u0) + rng.gen_range(0.0..2.0);
                Halfspace::new(normal, offset)
            })
            .collect();
        let problem = QpProblem::new(g, u_nom, rows).unwrap();
        let sol = solve_qp(&problem, None).unwrap();
        max_kkt = max_kkt
            .max(sol.residuals.stationarity)
            .max(sol.residuals.primal)
            .max(sol.residuals.dual)
            .max(sol.residuals.complementarity);
        let reference = reference_objective(&problem);
        max_gap = max_gap.max((problem.objective(&sol.u) - reference).abs());
    }
    verdict(
        "qp-kkt-and-reference",
        max_kkt <= 1e-8 && max_gap <= 1e-7,
        &format!(
            "max KKT residual {max_kkt:.3e} (tol 1e-8), max objective gap vs projected gradient {max_gap:.3e} (tol 1e-7) over 500 problems"
        ),
    );
}
