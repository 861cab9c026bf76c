//! Howard policy iteration: pointwise policy improvement alternating with
//! direct sparse solves of the frozen-policy linear system.

use std::sync::Arc;
use std::time::Instant;

use faer::prelude::*;
use faer::sparse::SparseColMat;
use thiserror::Error;

use crate::grid::Grid;
use crate::scheme::{
    assemble_linear_system, best_control, residual, BcSpec, GridFunction, Policy, PolicyEntry,
    SchemeError, SourceField, Stencil,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("frozen-policy system is singular")]
    SingularSystem,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Outcome of a Howard solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub wall_time_s: f64,
    pub dof_count: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iters: 200 }
    }
}

/// Pointwise argmax of the discrete Bellman sup at every interior node.
pub fn policy_improve(
    u: &GridFunction,
    source: &SourceField,
    stencil: &Stencil,
) -> Result<Policy, SolverError> {
    let grid = &u.grid;
    let mut entries = vec![None; grid.node_count()];
    for node in grid.node_indices() {
        if grid.class(node) == crate::grid::NodeClass::Interior {
            let (_, entry) = best_control(u, node, source, stencil)?;
            entries[node] = Some(entry);
        }
    }
    Ok(Policy { entries })
}

fn solve_linear(
    policy: &Policy,
    grid: &Grid,
    bc: &BcSpec,
    source: &SourceField,
    stencil: &Stencil,
) -> Result<Vec<f64>, SolverError> {
    let (triplets, rhs) = assemble_linear_system(policy, grid, bc, source, stencil)?;
    let n = grid.node_count();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|_| SolverError::SingularSystem)?;
    // The sparse factorization panics (rather than erroring) on numerically
    // singular input, which a degenerate bang-bang policy can produce when
    // the discrete problem is incompatible with the boundary conditions.
    let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| mat.sp_lu()))
        .map_err(|_| SolverError::SingularSystem)?
        .map_err(|_| SolverError::SingularSystem)?;
    let b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}

/// Howard iteration to a sup-norm residual tolerance. The initial iterate
/// solves the frozen system with the axis pair and weight one half.
pub fn howard_solve(
    grid: Arc<Grid>,
    bc: &BcSpec,
    source: &SourceField,
    stencil: &Stencil,
    options: SolverOptions,
) -> Result<(GridFunction, SolveReport), SolverError> {
    assert!(options.tol > 0.0);
    assert!(grid.interior_count() >= 1, "grid must have at least one interior node");
    let start = Instant::now();
    let n = grid.node_count();

    // Initial policy: axis pair, b = 1/2, with admissible reaches.
    let mut entries = vec![None; n];
    for node in grid.node_indices() {
        if grid.class(node) == crate::grid::NodeClass::Interior {
            let k1 = grid.symmetric_reach(node, stencil.pairs[0].0, stencil.k_max);
            let k2 = grid.symmetric_reach(node, stencil.pairs[0].1, stencil.k_max);
            entries[node] = Some(PolicyEntry { pair: 0, b: 0.5, k1, k2 });
        }
    }
    let policy = Policy { entries };
    let mut u = GridFunction::new(grid.clone(), solve_linear(&policy, &grid, bc, source, stencil)?);

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 1;
    loop {
        let res = residual(&u, bc, source, stencil)?;
        let sup = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        history.push(sup);
        if sup <= options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iters {
            break;
        }
        let policy = policy_improve(&u, source, stencil)?;
        u = GridFunction::new(grid.clone(), solve_linear(&policy, &grid, bc, source, stencil)?);
        iterations += 1;
    }

    let report = SolveReport {
        iterations,
        final_residual: *history.last().unwrap(),
        residual_history: history,
        wall_time_s: start.elapsed().as_secs_f64(),
        dof_count: n,
        converged,
    };
    Ok((u, report))
}
