//! Discrete operator assembly: wide-stencil Bellman maximization at
//! interior nodes, boundary-condition rows at the rest.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{direction_pairs, Grid, NodeClass, StencilDirection};
use crate::hamiltonian::{directional_value, Normalization};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("insufficient reach for step count {k} along {dir:?} at node {node}")]
    InsufficientReach { node: usize, dir: (i64, i64), k: u32 },
    #[error("no admissible direction pair at node {0}")]
    NoAdmissibleDirection(usize),
    #[error("source term must be nonnegative, got {value} at node {node}")]
    NegativeSource { node: usize, value: f64 },
}

/// Real values on the nodes of a grid.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.node_count());
        GridFunction { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.node_count();
        GridFunction::new(grid, vec![value; n])
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid
            .node_indices()
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .collect();
        GridFunction::new(grid, values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }
}

/// Boundary data per boundary class. Neumann faces always carry the
/// homogeneous normal-derivative condition; corners inherit the Dirichlet
/// datum.
pub struct BcSpec {
    pub dirichlet: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// Pinned data on slab truncation faces.
    pub artificial: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl BcSpec {
    pub fn homogeneous() -> Self {
        BcSpec { dirichlet: Box::new(|_, _| 0.0), artificial: Box::new(|_, _| 0.0) }
    }

    pub fn dirichlet(g: impl Fn(f64, f64) -> f64 + Send + Sync + Clone + 'static) -> Self {
        BcSpec { dirichlet: Box::new(g.clone()), artificial: Box::new(g) }
    }

    pub fn datum(&self, grid: &Grid, idx: usize) -> Option<f64> {
        let (x, y) = grid.coords(idx);
        match grid.class(idx) {
            NodeClass::DirichletBoundary | NodeClass::Corner => Some((self.dirichlet)(x, y)),
            NodeClass::ArtificialBoundary => Some((self.artificial)(x, y)),
            _ => None,
        }
    }
}

/// Nonnegative source sampled at grid nodes.
pub struct SourceField {
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

impl SourceField {
    pub fn new(
        grid: &Grid,
        f: impl Fn(f64, f64) -> f64,
        normalization: Normalization,
    ) -> Result<Self, SchemeError> {
        let mut values = Vec::with_capacity(grid.node_count());
        for i in grid.node_indices() {
            let (x, y) = grid.coords(i);
            let v = f(x, y);
            if v < 0.0 {
                return Err(SchemeError::NegativeSource { node: i, value: v });
            }
            values.push(v);
        }
        Ok(SourceField { values, normalization })
    }

    pub fn constant(grid: &Grid, value: f64) -> Result<Self, SchemeError> {
        SourceField::new(grid, |_, _| value, Normalization::Hjb)
    }

    /// Source value entering the Hamiltonian, normalization applied.
    pub fn effective(&self, idx: usize) -> f64 {
        self.normalization.effective_source(self.values[idx])
    }
}

/// Stencil configuration: direction-set width and reach cap.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub pairs: Vec<(StencilDirection, StencilDirection)>,
    pub k_max: u32,
}

impl Stencil {
    pub fn new(width: i64, k_max: u32) -> Self {
        assert!(k_max >= 1);
        Stencil { pairs: direction_pairs(width), k_max }
    }
}

impl Default for Stencil {
    fn default() -> Self {
        Stencil::new(3, 2)
    }
}

/// Per-interior-node discrete control realizing the Bellman max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEntry {
    pub pair: usize,
    pub b: f64,
    pub k1: u32,
    pub k2: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub entries: Vec<Option<PolicyEntry>>,
}

/// Centered second difference (u(x + d y) - 2 u(x) + u(x - d y)) / d^2
/// with d = k * h * |offset|.
pub fn second_difference(
    u: &GridFunction,
    node: usize,
    dir: StencilDirection,
    k: u32,
) -> Result<f64, SchemeError> {
    let grid = &u.grid;
    let (i, j) = grid.lattice(node);
    let (p, q) = dir.offset;
    let m = k as i64;
    let fwd = grid.node_at(i + m * p, j + m * q);
    let bwd = grid.node_at(i - m * p, j - m * q);
    match (fwd, bwd) {
        (Some(f), Some(b)) => {
            let delta = k as f64 * grid.h * dir.len();
            Ok((u.values[f] - 2.0 * u.values[node] + u.values[b]) / (delta * delta))
        }
        _ => Err(SchemeError::InsufficientReach { node, dir: dir.offset, k }),
    }
}

/// Bellman maximization at an interior node: best (pair, weight) over the
/// admissible stencil pairs, each direction using its largest symmetric
/// reach capped at k_max. Ties resolve to the lowest pair index (the
/// closed-form weight is unique per pair).
pub fn best_control(
    u: &GridFunction,
    node: usize,
    source: &SourceField,
    stencil: &Stencil,
) -> Result<(f64, PolicyEntry), SchemeError> {
    let grid = &u.grid;
    let f = source.effective(node);
    let mut best: Option<(f64, PolicyEntry)> = None;
    for (pair_idx, &(d1, d2)) in stencil.pairs.iter().enumerate() {
        let k1 = grid.symmetric_reach(node, d1, stencil.k_max);
        let k2 = grid.symmetric_reach(node, d2, stencil.k_max);
        if k1 == 0 || k2 == 0 {
            continue;
        }
        let a1 = second_difference(u, node, d1, k1)?;
        let a2 = second_difference(u, node, d2, k2)?;
        let (value, b) = directional_value(a1, a2, f);
        if best.as_ref().map_or(true, |(bv, _)| value > *bv) {
            best = Some((value, PolicyEntry { pair: pair_idx, b, k1, k2 }));
        }
    }
    best.ok_or(SchemeError::NoAdmissibleDirection(node))
}

/// Residual of the full discrete operator at one node.
pub fn residual_at(
    u: &GridFunction,
    node: usize,
    bc: &BcSpec,
    source: &SourceField,
    stencil: &Stencil,
) -> Result<f64, SchemeError> {
    let grid = &u.grid;
    match grid.class(node) {
        NodeClass::Interior => best_control(u, node, source, stencil).map(|(v, _)| v),
        NodeClass::NeumannBoundary => {
            let n = grid.neumann_normal(node).expect("neumann node has a normal");
            let (i, j) = grid.lattice(node);
            let inner = grid
                .node_at(i - n.0 as i64, j - n.1 as i64)
                .expect("interior neighbor along -normal");
            Ok((u.values[node] - u.values[inner]) / grid.h)
        }
        _ => {
            let g = bc.datum(grid, node).expect("boundary datum");
            Ok(u.values[node] - g)
        }
    }
}

/// Residual at every node.
pub fn residual(
    u: &GridFunction,
    bc: &BcSpec,
    source: &SourceField,
    stencil: &Stencil,
) -> Result<Vec<f64>, SchemeError> {
    u.grid.node_indices().map(|i| residual_at(u, i, bc, source, stencil)).collect()
}

/// Linear system of the frozen-policy (Howard) step, as triplets plus the
/// right-hand side. Interior rows are nonnegatively weighted graph
/// Laplacian rows; boundary rows are identity (or one-sided Neumann) rows.
pub fn assemble_linear_system(
    policy: &Policy,
    grid: &Grid,
    bc: &BcSpec,
    source: &SourceField,
    stencil: &Stencil,
) -> Result<(Vec<(usize, usize, f64)>, Vec<f64>), SchemeError> {
    let n = grid.node_count();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * n);
    let mut rhs = vec![0.0; n];
    for node in grid.node_indices() {
        match grid.class(node) {
            NodeClass::Interior => {
                let entry = policy.entries[node].ok_or(SchemeError::NoAdmissibleDirection(node))?;
                let (d1, d2) = stencil.pairs[entry.pair];
                let (i, j) = grid.lattice(node);
                let mut diag = 0.0;
                for (dir, k, w) in [(d1, entry.k1, entry.b), (d2, entry.k2, 1.0 - entry.b)] {
                    if w == 0.0 {
                        continue;
                    }
                    let delta = k as f64 * grid.h * dir.len();
                    let coeff = w / (delta * delta);
                    let m = k as i64;
                    let (p, q) = dir.offset;
                    for (sp, sq) in [(p, q), (-p, -q)] {
                        let nb = grid.node_at(i + m * sp, j + m * sq).ok_or(
                            SchemeError::InsufficientReach { node, dir: dir.offset, k },
                        )?;
                        triplets.push((node, nb, -coeff));
                        diag += coeff;
                    }
                }
                triplets.push((node, node, diag));
                rhs[node] = -source.effective(node) * (entry.b * (1.0 - entry.b)).sqrt();
            }
            NodeClass::NeumannBoundary => {
                let nrm = grid.neumann_normal(node).expect("neumann normal");
                let (i, j) = grid.lattice(node);
                let inner = grid
                    .node_at(i - nrm.0 as i64, j - nrm.1 as i64)
                    .expect("interior neighbor along -normal");
                triplets.push((node, node, 1.0 / grid.h));
                triplets.push((node, inner, -1.0 / grid.h));
                rhs[node] = 0.0;
            }
            _ => {
                triplets.push((node, node, 1.0));
                rhs[node] = bc.datum(grid, node).expect("boundary datum");
            }
        }
    }
    Ok((triplets, rhs))
}
