//! Subcommand implementations. Exit codes: 0 ok, 1 usage/config, 2
//! not-converged, 3 falsified; command functions return the code and leave
//! process exit to main.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mahjb::grid::{build_grid, Grid};
use mahjb::hamiltonian::{
    directional_value, directional_value_scan, hamiltonian_exact_2d, hamiltonian_oracle,
    weight_table, SymMatrix, SymMatrix2,
};
use mahjb::scheme::{BcSpec, GridFunction};
use mahjb::solver::{howard_solve, SolveReport};
use mahjb::viscosity::{
    check_subsolution, check_supersolution, comparison_witness, Certificate, CandidateFunction,
    ComparisonWitness, Semantics,
};

use crate::config::{
    compile_expression, CandidateKind, RoleKind, RunConfig, SemanticsKind, SplitKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_FALSIFIED: i32 = 3;

fn build_run_grid(cfg: &RunConfig, h: f64) -> Result<Arc<Grid>> {
    let domain = cfg.domain.build()?;
    let grid = build_grid(domain, h, cfg.grid.split.into())
        .map_err(|e| anyhow::anyhow!("grid construction failed: {e}"))?;
    Ok(Arc::new(grid))
}

fn boundary_spec(cfg: &RunConfig) -> Result<BcSpec> {
    let g = compile_expression(&cfg.boundary.g)?;
    Ok(BcSpec::dirichlet(move |x, y| g(x, y)))
}

fn write_file(out_dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let path = out_dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn solution_csv(u: &GridFunction) -> String {
    let mut out = String::from("x1,x2,u\n");
    for node in u.grid.node_indices() {
        let (x, y) = u.grid.coords(node);
        writeln!(out, "{x},{y},{}", u.values[node]).unwrap();
    }
    out
}

fn print_report(report: &SolveReport) {
    println!(
        "dof {}  iterations {}  final residual {:.3e}  wall time {:.3} s  converged {}",
        report.dof_count,
        report.iterations,
        report.final_residual,
        report.wall_time_s,
        report.converged
    );
}

pub fn run_solve(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let grid = build_run_grid(cfg, cfg.grid.h)?;
    let bc = boundary_spec(cfg)?;
    let source = cfg.source.build(&grid)?;
    let (u, report) = howard_solve(
        grid,
        &bc,
        &source,
        &cfg.solver.stencil(),
        cfg.solver.options(),
    )
    .map_err(|e| anyhow::anyhow!("solve failed: {e}"))?;
    print_report(&report);
    println!("solution min {:.6}", u.min());
    write_file(out_dir, "solution.csv", &solution_csv(&u))?;
    write_file(out_dir, "report.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Nodes on the first diagonal x1 = x2 with x1 >= 0, ordered by arc length
/// from the corner (0, 0).
fn diagonal_nodes(grid: &Grid) -> Result<Vec<(f64, usize)>> {
    let mut nodes: Vec<(f64, usize)> = grid
        .node_indices()
        .filter_map(|idx| {
            let (x, y) = grid.coords(idx);
            ((x - y).abs() < 1e-9 && x > -1e-12).then(|| (std::f64::consts::SQRT_2 * x, idx))
        })
        .collect();
    nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if nodes.len() < 2 || nodes[0].0.abs() > 1e-12 {
        bail!("DiagonalMisaligned: the diagonal x1 = x2 does not hit grid nodes from (0, 0)");
    }
    Ok(nodes)
}

pub fn run_cross_section(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let bc = boundary_spec(cfg)?;
    let mut code = EXIT_OK;
    for (mesh, &h) in cfg.grid.levels().iter().enumerate() {
        let grid = build_run_grid(cfg, h)?;
        let source = cfg.source.build(&grid)?;
        let (u, report) = howard_solve(
            grid.clone(),
            &bc,
            &source,
            &cfg.solver.stencil(),
            cfg.solver.options(),
        )
        .map_err(|e| anyhow::anyhow!("solve failed at h = {h}: {e}"))?;
        if !report.converged {
            code = EXIT_NOT_CONVERGED;
        }
        let mut csv = String::from("s,u\n");
        for (s, idx) in diagonal_nodes(&grid)? {
            writeln!(csv, "{s},{}", u.values[idx]).unwrap();
        }
        println!("mesh {}: h = {h}, {} degrees of freedom", mesh + 1, report.dof_count);
        write_file(out_dir, &format!("cross_section_mesh{}.csv", mesh + 1), &csv)?;
    }
    Ok(code)
}

fn describe(cert: &Certificate) -> String {
    match cert.kind {
        mahjb::viscosity::CertificateKind::Pass => {
            format!("PASS ({} samples)", cert.samples_checked)
        }
        mahjb::viscosity::CertificateKind::NoViolationFound => {
            format!("NO-VIOLATION-FOUND ({} samples)", cert.samples_checked)
        }
        mahjb::viscosity::CertificateKind::Falsified => {
            let w = cert.witness.as_ref().unwrap();
            format!(
                "FALSIFIED at ({}, {}): {} (p = ({}, {}), M = [{}, {}; {}, {}], residual {:.3e})",
                w.x.0, w.x.1, w.reason, w.p.0, w.p.1, w.m.0, w.m.1, w.m.1, w.m.2, w.residual
            )
        }
    }
}

#[derive(serde::Serialize)]
struct VerifyReport {
    candidate: CandidateKind,
    semantics: SemanticsKind,
    c: f64,
    subsolution: Option<Certificate>,
    supersolution: Option<Certificate>,
    comparison: Option<ComparisonWitness>,
}

pub fn run_verify(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    if cfg.verify.semantics == SemanticsKind::BsMixed
        && cfg.grid.split != SplitKind::LeftRightDirichlet
    {
        bail!("semantics bs-mixed requires grid.split = \"left-right-dirichlet\"");
    }
    let grid = build_run_grid(cfg, cfg.grid.h)?;
    let source = cfg.source.build(&grid)?;
    let spec = cfg.sample_spec.build();
    let sem: Semantics = cfg.verify.semantics.into();
    let candidate = cfg.verify.candidate()?;

    let sub = matches!(cfg.verify.role, RoleKind::Sub | RoleKind::Both)
        .then(|| check_subsolution(&candidate, sem, &grid, &source, &spec));
    let sup = matches!(cfg.verify.role, RoleKind::Super | RoleKind::Both)
        .then(|| check_supersolution(&candidate, sem, &grid, &source, &spec));
    if let Some(cert) = &sub {
        println!("subsolution:   {}", describe(cert));
    }
    if let Some(cert) = &sup {
        println!("supersolution: {}", describe(cert));
    }
    let falsified =
        sub.as_ref().is_some_and(|c| c.is_falsified()) || sup.as_ref().is_some_and(|c| c.is_falsified());

    // For the built-in families, report where u = 0 exceeds the candidate's
    // lower envelope; with valid certificates on both sides this is exactly
    // a comparison-principle violation.
    let mut comparison = None;
    if !falsified
        && matches!(
            cfg.verify.candidate,
            CandidateKind::PropOneFamily | CandidateKind::PropTwoFamily
        )
    {
        if let Some(super_cert) = &sup {
            let zero = CandidateFunction::Zero;
            let zero_cert = check_subsolution(&zero, sem, &grid, &source, &spec);
            if !zero_cert.is_falsified() {
                match comparison_witness(&zero, &zero_cert, &candidate, super_cert, &grid)? {
                    Some(w) => {
                        println!(
                            "comparison witness: zero subsolution exceeds the candidate by {} at ({}, {})",
                            w.gap, w.x.0, w.x.1
                        );
                        comparison = Some(w);
                    }
                    None => println!("comparison witness: none (zero stays below the candidate)"),
                }
            }
        }
    }

    let report = VerifyReport {
        candidate: cfg.verify.candidate,
        semantics: cfg.verify.semantics,
        c: cfg.verify.c,
        subsolution: sub,
        supersolution: sup,
        comparison,
    };
    write_file(out_dir, "certificates.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(if falsified { EXIT_FALSIFIED } else { EXIT_OK })
}

pub fn run_convergence(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    if cfg.convergence.exact.is_empty() {
        bail!("convergence.exact (exact solution expression) is required");
    }
    let exact = compile_expression(&cfg.convergence.exact)?;
    let bc = {
        let g = exact.clone();
        BcSpec::dirichlet(move |x, y| g(x, y))
    };
    let mut csv = String::from("level,h,dof,sup_error,ratio\n");
    let mut prev: Option<f64> = None;
    let mut code = EXIT_OK;
    for (level, &h) in cfg.grid.levels().iter().enumerate() {
        let grid = build_run_grid(cfg, h)?;
        let source = cfg.source.build(&grid)?;
        let (u, report) = howard_solve(
            grid.clone(),
            &bc,
            &source,
            &cfg.solver.stencil(),
            cfg.solver.options(),
        )
        .map_err(|e| anyhow::anyhow!("solve failed at h = {h}: {e}"))?;
        if !report.converged {
            code = EXIT_NOT_CONVERGED;
        }
        let err = grid
            .node_indices()
            .map(|idx| {
                let (x, y) = grid.coords(idx);
                (u.values[idx] - exact(x, y)).abs()
            })
            .fold(0.0f64, f64::max);
        let ratio = prev.map(|p| p / err.max(f64::MIN_POSITIVE));
        match ratio {
            Some(r) => {
                println!("level {level}: h = {h}, dof {}, sup error {err:.3e}, ratio {r:.2}", report.dof_count);
                writeln!(csv, "{level},{h},{},{err},{r}", report.dof_count).unwrap();
            }
            None => {
                println!("level {level}: h = {h}, dof {}, sup error {err:.3e}", report.dof_count);
                writeln!(csv, "{level},{h},{},{err},", report.dof_count).unwrap();
            }
        }
        prev = Some(err);
    }
    write_file(out_dir, "convergence.csv", &csv)?;
    Ok(code)
}

/// Randomized self-check sweeps of the Hamiltonian closed forms against
/// their brute-force references.
pub fn run_hamiltonian_check(cfg: &RunConfig) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let matrices: Vec<(SymMatrix2, f64)> = (0..1000)
        .map(|_| {
            let a = SymMatrix2::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            (a, rng.gen_range(0.0..4.0))
        })
        .collect();
    let gaps = matrices
        .par_iter()
        .map(|&(a, f)| {
            let exact = hamiltonian_exact_2d(a, f).unwrap();
            let m = SymMatrix::from(a);
            let gap = |res| exact - hamiltonian_oracle(&m, f, res).unwrap();
            let (g128, g256, g512) = (gap(128), gap(256), gap(512));
            if g512 < -1e-12 || g512 > 5e-3 || g256 > g128 + 1e-15 || g512 > g256 + 1e-15 {
                Err(anyhow::anyhow!(
                    "oracle disagreement for A = [{}, {}; {}, {}], f = {f}: gaps {g128:.3e} {g256:.3e} {g512:.3e}",
                    a.a11, a.a12, a.a12, a.a22
                ))
            } else {
                Ok(g512)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    println!(
        "sweep 1: 1000 Hamiltonians vs oracle OK (max gap at resolution 512: {:.3e})",
        gaps.iter().fold(0.0f64, |m, &g| m.max(g))
    );

    // f is bounded away from 0: as f -> 0 the maximizer collapses into the
    // first weight cell, where the sqrt cusp makes the scan itself
    // under-resolved beyond the comparison tolerance.
    let triples: Vec<(f64, f64, f64)> = (0..10_000)
        .map(|_| {
            (
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.1..4.0),
            )
        })
        .collect();
    let weights = weight_table(1_000_000);
    let worst = triples
        .par_iter()
        .map(|&(a1, a2, f)| {
            let (value, _) = directional_value(a1, a2, f);
            let scanned = directional_value_scan(a1, a2, f, &weights);
            let dev = (value - scanned).abs();
            if dev > 1e-6 {
                Err(anyhow::anyhow!(
                    "directional value mismatch for ({a1}, {a2}, {f}): closed form {value}, scan {scanned}"
                ))
            } else {
                Ok(dev)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    println!(
        "sweep 2: 10000 directional values vs scan OK (max deviation: {:.3e})",
        worst.iter().fold(0.0f64, |m, &d| m.max(d))
    );
    Ok(EXIT_OK)
}
