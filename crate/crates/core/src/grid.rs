//! Computational domains as unions of axis-aligned rectangles, uniform
//! lattices over them, node classification and wide-stencil reach queries.
//!
//! Node identity is integer lattice indexing throughout; membership and
//! classification never compare floating-point coordinates.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("spacing {h} does not tile rectangle bound {bound}")]
    NonDivisibleSpacing { h: f64, bound: f64 },
    #[error("domain discretization is not connected")]
    DisconnectedDomain,
    #[error("mixed boundary split requires a single-rectangle domain")]
    InvalidSplit,
    #[error("rectangle has non-positive area: {0:?}")]
    EmptyRectangle(Rect),
}

/// Closed axis-aligned rectangle in domain length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        Rect { xmin, xmax, ymin, ymax }
    }
}

/// Union of axis-aligned rectangles.
#[derive(Debug, Clone)]
pub struct Domain {
    pub name: String,
    pub rectangles: Vec<Rect>,
    /// Slab truncation of a half-space: the x1 = 0 face is the true
    /// boundary, the other three faces are artificial.
    pub slab: bool,
}

impl Domain {
    pub fn unit_square() -> Self {
        Domain {
            name: "unit-square".into(),
            rectangles: vec![Rect::new(0.0, 1.0, 0.0, 1.0)],
            slab: false,
        }
    }

    /// Truncation of the half-space {x1 > 0} to (0, length) x (0, 1).
    pub fn slab(length: f64) -> Self {
        Domain {
            name: "slab".into(),
            rectangles: vec![Rect::new(0.0, length, 0.0, 1.0)],
            slab: true,
        }
    }

    /// L-shaped domain [(0,1) x (-1,1)] u [(-1,1) x (0,1)] with the
    /// re-entrant corner at the origin.
    pub fn l_shape() -> Self {
        Domain {
            name: "l-shape".into(),
            rectangles: vec![Rect::new(0.0, 1.0, -1.0, 1.0), Rect::new(-1.0, 1.0, 0.0, 1.0)],
            slab: false,
        }
    }

    pub fn from_rectangles(name: impl Into<String>, rectangles: Vec<Rect>) -> Self {
        Domain { name: name.into(), rectangles, slab: false }
    }
}

/// Per-node boundary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    DirichletBoundary,
    NeumannBoundary,
    /// Boundary point in neither the open Dirichlet nor the open Neumann
    /// face when a mixed split is active.
    Corner,
    /// Truncation faces of a slab domain; they carry pinned data in solver
    /// runs and are excluded from viscosity certificates.
    ArtificialBoundary,
}

/// Mixed Dirichlet-Neumann boundary split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcSplit {
    /// Every boundary node is Dirichlet (corners included).
    #[default]
    None,
    /// Left and right open faces Dirichlet, top and bottom open faces
    /// Neumann, the four corners classified separately.
    LeftRightDirichlet,
}

/// Primitive lattice offset together with its 90-degree rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StencilDirection {
    pub offset: (i64, i64),
}

impl StencilDirection {
    pub fn new(p: i64, q: i64) -> Self {
        debug_assert!(gcd(p.abs(), q.abs()) == 1);
        StencilDirection { offset: (p, q) }
    }

    pub fn orthogonal(self) -> StencilDirection {
        let (p, q) = self.offset;
        StencilDirection { offset: (-q, p) }
    }

    pub fn negated(self) -> StencilDirection {
        let (p, q) = self.offset;
        StencilDirection { offset: (-p, -q) }
    }

    /// Euclidean length of the offset vector.
    pub fn len(self) -> f64 {
        let (p, q) = self.offset;
        ((p * p + q * q) as f64).sqrt()
    }

    /// Unit vector along the offset.
    pub fn unit(self) -> (f64, f64) {
        let l = self.len();
        (self.offset.0 as f64 / l, self.offset.1 as f64 / l)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// All direction pairs (theta, theta_perp) with primitive offsets of
/// max-norm at most `width`, one representative per orbit under negation
/// and 90-degree rotation. The axis pair comes first; the order is
/// deterministic (ascending squared length, then lexicographic).
pub fn direction_pairs(width: i64) -> Vec<(StencilDirection, StencilDirection)> {
    assert!(width >= 1);
    let mut reps = Vec::new();
    for p in 1..=width {
        for q in 0..=width {
            if gcd(p, q) == 1 {
                reps.push((p, q));
            }
        }
    }
    reps.sort_by_key(|&(p, q)| (p * p + q * q, p, q));
    reps.iter()
        .map(|&(p, q)| {
            let d = StencilDirection::new(p, q);
            (d, d.orthogonal())
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct IRect {
    ix0: i64,
    ix1: i64,
    iy0: i64,
    iy1: i64,
}

/// Uniform lattice over a domain with per-node classification.
#[derive(Debug)]
pub struct Grid {
    pub domain: Domain,
    pub h: f64,
    origin: (f64, f64),
    irects: Vec<IRect>,
    nodes: Vec<(i64, i64)>,
    index: HashMap<(i64, i64), usize>,
    class: Vec<NodeClass>,
    split: BcSplit,
}

/// Snaps `x` to the integer lattice of spacing `h`, or reports failure.
fn to_lattice(x: f64, h: f64) -> Result<i64, GridError> {
    let r = x / h;
    let i = r.round();
    if (r - i).abs() > 1e-9 * (1.0 + r.abs()) {
        return Err(GridError::NonDivisibleSpacing { h, bound: x });
    }
    Ok(i as i64)
}

pub fn build_grid(domain: Domain, h: f64, split: BcSplit) -> Result<Grid, GridError> {
    assert!(h > 0.0);
    for r in &domain.rectangles {
        if !(r.xmax > r.xmin && r.ymax > r.ymin) {
            return Err(GridError::EmptyRectangle(*r));
        }
    }
    if split == BcSplit::LeftRightDirichlet && domain.rectangles.len() != 1 {
        return Err(GridError::InvalidSplit);
    }

    let ox = domain.rectangles.iter().map(|r| r.xmin).fold(f64::INFINITY, f64::min);
    let oy = domain.rectangles.iter().map(|r| r.ymin).fold(f64::INFINITY, f64::min);

    let mut irects = Vec::with_capacity(domain.rectangles.len());
    for r in &domain.rectangles {
        irects.push(IRect {
            ix0: to_lattice(r.xmin - ox, h)?,
            ix1: to_lattice(r.xmax - ox, h)?,
            iy0: to_lattice(r.ymin - oy, h)?,
            iy1: to_lattice(r.ymax - oy, h)?,
        });
    }

    let in_closed = |i: i64, j: i64| {
        irects.iter().any(|r| i >= r.ix0 && i <= r.ix1 && j >= r.iy0 && j <= r.iy1)
    };
    // Cell [i, i+1] x [j, j+1] in lattice units.
    let cell_in = |i: i64, j: i64| {
        irects.iter().any(|r| i >= r.ix0 && i + 1 <= r.ix1 && j >= r.iy0 && j + 1 <= r.iy1)
    };
    let interior = |i: i64, j: i64| {
        cell_in(i - 1, j - 1) && cell_in(i, j - 1) && cell_in(i - 1, j) && cell_in(i, j)
    };

    let ix_max = irects.iter().map(|r| r.ix1).max().unwrap();
    let iy_max = irects.iter().map(|r| r.iy1).max().unwrap();

    let mut nodes = Vec::new();
    let mut index = HashMap::new();
    for j in 0..=iy_max {
        for i in 0..=ix_max {
            if in_closed(i, j) {
                index.insert((i, j), nodes.len());
                nodes.push((i, j));
            }
        }
    }

    // Connectivity of the union, checked by flood fill over lattice nodes.
    if !nodes.is_empty() {
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            let (i, j) = nodes[k];
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if let Some(&m) = index.get(&(i + di, j + dj)) {
                    if !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(GridError::DisconnectedDomain);
        }
    }

    let single = irects[0];
    let class = nodes
        .iter()
        .map(|&(i, j)| {
            if interior(i, j) {
                return NodeClass::Interior;
            }
            if domain.slab {
                // True boundary is the open x1 = 0 face; the three
                // truncation faces (and their endpoints) are artificial.
                if i == single.ix0 && j > single.iy0 && j < single.iy1 {
                    NodeClass::DirichletBoundary
                } else {
                    NodeClass::ArtificialBoundary
                }
            } else if split == BcSplit::LeftRightDirichlet {
                let on_x = i == single.ix0 || i == single.ix1;
                let on_y = j == single.iy0 || j == single.iy1;
                match (on_x, on_y) {
                    (true, true) => NodeClass::Corner,
                    (true, false) => NodeClass::DirichletBoundary,
                    (false, true) => NodeClass::NeumannBoundary,
                    (false, false) => unreachable!(),
                }
            } else {
                NodeClass::DirichletBoundary
            }
        })
        .collect();

    Ok(Grid { domain, h, origin: (ox, oy), irects, nodes, index, class, split })
}

impl Grid {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn split(&self) -> BcSplit {
        self.split
    }

    /// Physical coordinates of node `idx`.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.nodes[idx];
        (self.origin.0 + i as f64 * self.h, self.origin.1 + j as f64 * self.h)
    }

    pub fn lattice(&self, idx: usize) -> (i64, i64) {
        self.nodes[idx]
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }

    pub fn node_at(&self, i: i64, j: i64) -> Option<usize> {
        self.index.get(&(i, j)).copied()
    }

    /// Node index nearest to physical coordinates (snapping to lattice).
    pub fn node_near(&self, x: f64, y: f64) -> Option<usize> {
        let i = ((x - self.origin.0) / self.h).round() as i64;
        let j = ((y - self.origin.1) / self.h).round() as i64;
        self.node_at(i, j)
    }

    pub fn in_closed(&self, i: i64, j: i64) -> bool {
        self.irects.iter().any(|r| i >= r.ix0 && i <= r.ix1 && j >= r.iy0 && j <= r.iy1)
    }

    pub fn interior_count(&self) -> usize {
        self.class.iter().filter(|&&c| c == NodeClass::Interior).count()
    }

    /// Outward unit normal of the Neumann face containing a Neumann or
    /// corner node of a mixed-split grid.
    pub fn neumann_normal(&self, idx: usize) -> Option<(f64, f64)> {
        let (_, j) = self.nodes[idx];
        let r = self.irects[0];
        match self.class[idx] {
            NodeClass::NeumannBoundary | NodeClass::Corner => {
                if j == r.iy0 {
                    Some((0.0, -1.0))
                } else if j == r.iy1 {
                    Some((0.0, 1.0))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Largest step counts m <= k_max such that node +/- m * h * offset
    /// stays in the closed domain; 0 if the first step already exits.
    pub fn neighbors(&self, idx: usize, dir: StencilDirection, k_max: u32) -> (u32, u32) {
        let (i, j) = self.nodes[idx];
        let (p, q) = dir.offset;
        let reach = |sp: i64, sq: i64| {
            let mut k = 0;
            while k < k_max {
                let m = (k + 1) as i64;
                if !self.in_closed(i + m * sp, j + m * sq) {
                    break;
                }
                k += 1;
            }
            k
        };
        (reach(p, q), reach(-p, -q))
    }

    /// Symmetric reach min(k+, k-) along `dir`, capped at `k_max`.
    pub fn symmetric_reach(&self, idx: usize, dir: StencilDirection, k_max: u32) -> u32 {
        let (kp, km) = self.neighbors(idx, dir, k_max);
        kp.min(km)
    }

    pub fn node_indices(&self) -> impl Iterator<Item = usize> {
        0..self.nodes.len()
    }
}
