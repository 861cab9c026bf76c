//! Machine checks of viscosity sub/supersolution properties for candidate
//! functions under several boundary-condition semantics: semi-continuous
//! envelopes, sampled test-quadratic falsification, exact implication
//! certificates for the boundary-perturbation families, and
//! comparison-principle witnesses.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{Grid, NodeClass};
use crate::hamiltonian::{hamiltonian_exact_2d, SymMatrix2};
use crate::scheme::{GridFunction, SourceField};

#[derive(Debug, Error)]
pub enum ViscosityError {
    #[error("comparison witness requires non-falsified certificates for both candidates")]
    MissingCertificates,
    #[error("refinement levels are not nested grids: {0}")]
    NonNestedGrids(String),
    #[error("certificate requires a slab grid")]
    NotSlabGrid,
}

/// Candidate functions given by closed-form piecewise definitions over the
/// node classification, sampled on a grid on demand.
#[derive(Clone)]
pub enum CandidateFunction {
    /// u = 0 everywhere.
    Zero,
    /// 0 on the interior (and truncation faces), -c on the true boundary.
    /// With c > 0 this is the discontinuous solution family of the
    /// Dirichlet counterexample; c < 0 gives the positive boundary
    /// perturbation that fails the subsolution property.
    BoundaryPerturbation { c: f64 },
    /// 0 on the interior and the open Neumann faces, -c on the closed
    /// Dirichlet part (corners included); the mixed-condition family.
    MixedPerturbation { c: f64 },
    /// Arbitrary continuous expression; envelopes fall back to the
    /// sampling itself.
    Expression { name: String, f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> },
}

impl std::fmt::Debug for CandidateFunction {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CandidateFunction::Zero => write!(fm, "Zero"),
            CandidateFunction::BoundaryPerturbation { c } => {
                write!(fm, "BoundaryPerturbation(c={c})")
            }
            CandidateFunction::MixedPerturbation { c } => write!(fm, "MixedPerturbation(c={c})"),
            CandidateFunction::Expression { name, .. } => write!(fm, "Expression({name})"),
        }
    }
}

impl CandidateFunction {
    pub fn value_at(&self, grid: &Grid, idx: usize) -> f64 {
        match self {
            CandidateFunction::Zero => 0.0,
            CandidateFunction::BoundaryPerturbation { c } => match grid.class(idx) {
                NodeClass::DirichletBoundary | NodeClass::NeumannBoundary | NodeClass::Corner => {
                    -c
                }
                _ => 0.0,
            },
            CandidateFunction::MixedPerturbation { c } => match grid.class(idx) {
                NodeClass::DirichletBoundary | NodeClass::Corner => -c,
                _ => 0.0,
            },
            CandidateFunction::Expression { f, .. } => {
                let (x, y) = grid.coords(idx);
                f(x, y)
            }
        }
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> GridFunction {
        let values = grid.node_indices().map(|i| self.value_at(grid, i)).collect();
        GridFunction::new(grid.clone(), values)
    }

    /// Upper and lower semi-continuous envelopes evaluated at the nodes,
    /// computed from the closed-form region structure: at a boundary node
    /// the interior limit value competes with the node's own value. For
    /// expression candidates the sampling itself is returned with
    /// `exact = false` (a single grid cannot resolve limsup).
    pub fn envelopes(&self, grid: &Arc<Grid>) -> Envelopes {
        let v = self.sample(grid);
        match self {
            CandidateFunction::Zero => {
                Envelopes { upper: v.clone(), lower: v, exact: true }
            }
            CandidateFunction::Expression { .. } => {
                Envelopes { upper: v.clone(), lower: v, exact: false }
            }
            CandidateFunction::BoundaryPerturbation { .. }
            | CandidateFunction::MixedPerturbation { .. } => {
                // Piecewise value is 0 on a dense-in-closure region and
                // jumps only on (part of) the boundary.
                let mut upper = v.clone();
                let mut lower = v.clone();
                for i in grid.node_indices() {
                    upper.values[i] = upper.values[i].max(0.0);
                    lower.values[i] = lower.values[i].min(0.0);
                }
                Envelopes { upper, lower, exact: true }
            }
        }
    }
}

#[derive(Clone)]
pub struct Envelopes {
    pub upper: GridFunction,
    pub lower: GridFunction,
    /// False when the envelope is just the sampling (no closed form).
    pub exact: bool,
}

/// Boundary-condition semantics under which a candidate is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    /// Generalized Dirichlet condition: boundary points satisfy either the
    /// datum or the PDE, through the min/max envelope operators.
    BsDirichlet,
    /// Same envelope operators, but sub/supersolutions must themselves be
    /// semi-continuous.
    UgSemiContinuous,
    /// Pointwise boundary condition; the PDE is tested in the interior
    /// only.
    Classical,
    /// Generalized mixed Dirichlet-Neumann condition on a split grid.
    BsMixed,
}

/// Quadratic test function phi(x) = p . (x - x0) + (x - x0)^T M (x - x0) / 2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TestQuadratic {
    pub x0: (f64, f64),
    pub p: (f64, f64),
    #[serde(serialize_with = "serialize_sym")]
    pub m: SymMatrix2,
}

fn serialize_sym<S: serde::Serializer>(m: &SymMatrix2, s: S) -> Result<S::Ok, S::Error> {
    (m.a11, m.a12, m.a22).serialize(s)
}

impl TestQuadratic {
    pub fn eval_delta(&self, dx: f64, dy: f64) -> f64 {
        self.p.0 * dx + self.p.1 * dy + 0.5 * self.m.quad_form((dx, dy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TouchSense {
    /// phi touches the envelope from below: env - phi has a local minimum.
    FromBelow,
    /// phi touches from above: env - phi has a local maximum.
    FromAbove,
}

/// Sampling ranges for gradients, Hessians and the touching test.
#[derive(Debug, Clone, Copy)]
pub struct SampleSpec {
    pub p_max: f64,
    pub p_step: f64,
    pub mu_max: f64,
    pub mu_step: f64,
    pub angles: usize,
    /// Touching neighborhood radius in lattice steps.
    pub r_check: i64,
    pub tau_touch: f64,
    pub tau_residual: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            p_max: 4.0,
            p_step: 0.5,
            mu_max: 8.0,
            mu_step: 1.0,
            angles: 8,
            r_check: 5,
            tau_touch: 1e-12,
            tau_residual: 1e-10,
        }
    }
}

impl SampleSpec {
    fn lattice(&self, max: f64, step: f64) -> Vec<f64> {
        let n = (max / step).round() as i64;
        (-n..=n).map(|k| k as f64 * step).collect()
    }

    pub fn gradients(&self) -> Vec<(f64, f64)> {
        let axis = self.lattice(self.p_max, self.p_step);
        let mut out = Vec::with_capacity(axis.len() * axis.len());
        for &px in &axis {
            for &py in &axis {
                out.push((px, py));
            }
        }
        out
    }

    pub fn hessians(&self) -> Vec<SymMatrix2> {
        let axis = self.lattice(self.mu_max, self.mu_step);
        let mut out = Vec::with_capacity(self.angles * axis.len() * axis.len());
        for k in 0..self.angles {
            let angle = k as f64 * std::f64::consts::PI / self.angles as f64;
            for &mu1 in &axis {
                for &mu2 in &axis {
                    out.push(SymMatrix2::from_spectral(mu1, mu2, angle));
                }
            }
        }
        out
    }
}

/// Outcome taxonomy: `Pass` is reserved for exact implication
/// certificates; sampling-based checks can only report
/// `NoViolationFound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertificateKind {
    Pass,
    Falsified,
    NoViolationFound,
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub x: (f64, f64),
    pub p: (f64, f64),
    pub m: (f64, f64, f64),
    pub residual: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub witness: Option<Witness>,
    pub samples_checked: u64,
}

impl Certificate {
    fn falsified(witness: Witness, samples_checked: u64) -> Self {
        Certificate { kind: CertificateKind::Falsified, witness: Some(witness), samples_checked }
    }

    pub fn is_falsified(&self) -> bool {
        self.kind == CertificateKind::Falsified
    }
}

/// Neighborhood of a node: member index and physical offset from the base
/// node.
fn neighborhood(grid: &Grid, x0: usize, r_check: i64) -> Vec<(usize, f64, f64)> {
    let (i0, j0) = grid.lattice(x0);
    let mut out = Vec::new();
    for dj in -r_check..=r_check {
        for di in -r_check..=r_check {
            if let Some(idx) = grid.node_at(i0 + di, j0 + dj) {
                out.push((idx, di as f64 * grid.h, dj as f64 * grid.h));
            }
        }
    }
    out
}

/// Direct node-wise touching test: no derivative estimation of the
/// envelope is involved.
pub fn touches(
    env: &GridFunction,
    x0: usize,
    sense: TouchSense,
    q: &TestQuadratic,
    spec: &SampleSpec,
) -> bool {
    let grid = &env.grid;
    let base = env.values[x0];
    for (idx, dx, dy) in neighborhood(grid, x0, spec.r_check) {
        let d = env.values[idx] - base - q.eval_delta(dx, dy);
        match sense {
            TouchSense::FromBelow => {
                if d < -spec.tau_touch {
                    return false;
                }
            }
            TouchSense::FromAbove => {
                if d > spec.tau_touch {
                    return false;
                }
            }
        }
    }
    true
}

/// Enumerates the sampled (p, M) lattice and keeps the quadratics touching
/// the envelope at `x0` in the given sense.
pub fn touching_quadratics(
    env: &GridFunction,
    x0: usize,
    sense: TouchSense,
    spec: &SampleSpec,
) -> Vec<TestQuadratic> {
    let coords = env.grid.coords(x0);
    let mut out = Vec::new();
    for m in spec.hessians() {
        for p in spec.gradients() {
            let q = TestQuadratic { x0: coords, p, m };
            if touches(env, x0, sense, &q, spec) {
                out.push(q);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Sub,
    Super,
}

/// The boundary operator entering the envelope of the full operator at a
/// boundary node, by semantics and class. `None` means the PDE alone is
/// tested there.
fn boundary_operator(
    sem: Semantics,
    grid: &Grid,
    node: usize,
    role: Role,
    p: (f64, f64),
    w: f64,
) -> Option<f64> {
    let class = grid.class(node);
    match sem {
        Semantics::BsDirichlet | Semantics::UgSemiContinuous => match class {
            NodeClass::Interior => None,
            _ => Some(w),
        },
        Semantics::Classical => None,
        Semantics::BsMixed => match class {
            NodeClass::Interior => None,
            NodeClass::DirichletBoundary => Some(w),
            NodeClass::NeumannBoundary => {
                let n = grid.neumann_normal(node).expect("neumann normal");
                Some(p.0 * n.0 + p.1 * n.1)
            }
            NodeClass::Corner => {
                let n = grid.neumann_normal(node).expect("corner normal");
                let pn = p.0 * n.0 + p.1 * n.1;
                Some(match role {
                    Role::Sub => w.min(pn),
                    Role::Super => w.max(pn),
                })
            }
            NodeClass::ArtificialBoundary => None,
        },
    }
}

fn check_role(
    v: &CandidateFunction,
    sem: Semantics,
    grid: &Arc<Grid>,
    source: &SourceField,
    spec: &SampleSpec,
    role: Role,
) -> Certificate {
    if sem == Semantics::BsMixed {
        assert!(
            grid.split() == crate::grid::BcSplit::LeftRightDirichlet,
            "mixed semantics requires a mixed-split grid"
        );
    }
    let envs = v.envelopes(grid);
    let env = match role {
        Role::Sub => &envs.upper,
        Role::Super => &envs.lower,
    };
    let sense = match role {
        Role::Sub => TouchSense::FromAbove,
        Role::Super => TouchSense::FromBelow,
    };
    let sample = v.sample(grid);
    let mut checked: u64 = 0;

    // Semi-continuity pre-test: the candidate itself must be USC (sub) or
    // LSC (super), i.e. agree with the corresponding envelope.
    if sem == Semantics::UgSemiContinuous {
        for node in grid.node_indices() {
            let gap = sample.values[node] - env.values[node];
            if gap.abs() > spec.tau_touch {
                return Certificate::falsified(
                    Witness {
                        x: grid.coords(node),
                        p: (0.0, 0.0),
                        m: (0.0, 0.0, 0.0),
                        residual: gap,
                        reason: match role {
                            Role::Sub => "candidate is not upper semi-continuous".into(),
                            Role::Super => "candidate is not lower semi-continuous".into(),
                        },
                    },
                    checked,
                );
            }
        }
    }

    // Classical semantics: pointwise boundary data test (homogeneous
    // datum), PDE tested at interior nodes only.
    if sem == Semantics::Classical {
        for node in grid.node_indices() {
            match grid.class(node) {
                NodeClass::Interior | NodeClass::ArtificialBoundary => {}
                _ => {
                    let gap = sample.values[node];
                    let violates = match role {
                        Role::Sub => gap > spec.tau_residual,
                        Role::Super => gap < -spec.tau_residual,
                    };
                    if violates {
                        return Certificate::falsified(
                            Witness {
                                x: grid.coords(node),
                                p: (0.0, 0.0),
                                m: (0.0, 0.0, 0.0),
                                residual: gap,
                                reason: "boundary datum violated pointwise".into(),
                            },
                            checked,
                        );
                    }
                }
            }
        }
    }

    let gradients = spec.gradients();
    let hessians = spec.hessians();

    for node in grid.node_indices() {
        let class = grid.class(node);
        if class == NodeClass::ArtificialBoundary {
            continue;
        }
        if sem == Semantics::Classical && class != NodeClass::Interior {
            continue;
        }
        let w = env.values[node];
        let f = source.effective(node);
        let hood = neighborhood(grid, node, spec.r_check);
        // A neighborhood reaching the artificial truncation misrepresents
        // the unbounded continuum (the candidate's true values continue past
        // the cut); testing there produces spurious one-sided witnesses.
        if hood.iter().any(|&(idx, _, _)| grid.class(idx) == NodeClass::ArtificialBoundary) {
            continue;
        }
        let base = env.values[node];
        let coords = grid.coords(node);
        // Nearby members for a cheap pre-filter of the gradient loop.
        let near: Vec<usize> = hood
            .iter()
            .enumerate()
            .filter(|(_, &(_, dx, dy))| {
                (dx.abs() <= grid.h + 1e-15) && (dy.abs() <= grid.h + 1e-15)
            })
            .map(|(k, _)| k)
            .collect();

        for m in &hessians {
            let h_val = hamiltonian_exact_2d(*m, f).expect("nonnegative source");
            // Can this Hessian produce a violation at all?
            let pde_violation = match role {
                Role::Sub => h_val > spec.tau_residual,
                Role::Super => h_val < -spec.tau_residual,
            };
            if !pde_violation {
                checked += gradients.len() as u64;
                continue;
            }
            // Gradient-independent part of the boundary operator.
            if class != NodeClass::Interior {
                let b0 = boundary_operator(sem, grid, node, role, (0.0, 0.0), w);
                let gradient_free = !matches!(
                    class,
                    NodeClass::NeumannBoundary | NodeClass::Corner
                ) || sem != Semantics::BsMixed;
                if gradient_free {
                    if let Some(b) = b0 {
                        let ok = match role {
                            Role::Sub => h_val.min(b) > spec.tau_residual,
                            Role::Super => h_val.max(b) < -spec.tau_residual,
                        };
                        if !ok {
                            checked += gradients.len() as u64;
                            continue;
                        }
                    }
                }
            }
            // Quadratic-form offsets, gradient left out.
            let cvals: Vec<f64> = hood
                .iter()
                .map(|&(idx, dx, dy)| env.values[idx] - base - 0.5 * m.quad_form((dx, dy)))
                .collect();
            for &p in &gradients {
                checked += 1;
                // Full-operator violation including the gradient.
                let residual_value = if class == NodeClass::Interior {
                    h_val
                } else {
                    match boundary_operator(sem, grid, node, role, p, w) {
                        None => h_val,
                        Some(b) => match role {
                            Role::Sub => h_val.min(b),
                            Role::Super => h_val.max(b),
                        },
                    }
                };
                let violates = match role {
                    Role::Sub => residual_value > spec.tau_residual,
                    Role::Super => residual_value < -spec.tau_residual,
                };
                if !violates {
                    continue;
                }
                // Touching test: cheap pre-filter on the nearest members,
                // then the full neighborhood.
                let fits = |k: usize| {
                    let (_, dx, dy) = hood[k];
                    let d = cvals[k] - (p.0 * dx + p.1 * dy);
                    match sense {
                        TouchSense::FromBelow => d >= -spec.tau_touch,
                        TouchSense::FromAbove => d <= spec.tau_touch,
                    }
                };
                if !near.iter().all(|&k| fits(k)) {
                    continue;
                }
                if (0..hood.len()).all(fits) {
                    return Certificate::falsified(
                        Witness {
                            x: coords,
                            p,
                            m: (m.a11, m.a12, m.a22),
                            residual: residual_value,
                            reason: match role {
                                Role::Sub => "subsolution inequality violated".into(),
                                Role::Super => "supersolution inequality violated".into(),
                            },
                        },
                        checked,
                    );
                }
            }
        }
    }

    Certificate { kind: CertificateKind::NoViolationFound, witness: None, samples_checked: checked }
}

/// Tests the subsolution property of `v` under the given semantics by
/// sampled falsification against the upper envelope.
pub fn check_subsolution(
    v: &CandidateFunction,
    sem: Semantics,
    grid: &Arc<Grid>,
    source: &SourceField,
    spec: &SampleSpec,
) -> Certificate {
    check_role(v, sem, grid, source, spec, Role::Sub)
}

/// Mirror image of `check_subsolution`: lower envelope, touching from
/// below, falsified when the upper-envelope operator drops below zero.
pub fn check_supersolution(
    v: &CandidateFunction,
    sem: Semantics,
    grid: &Arc<Grid>,
    source: &SourceField,
    spec: &SampleSpec,
) -> Certificate {
    check_role(v, sem, grid, source, spec, Role::Super)
}

/// Exact implication certificate behind the supersolution property of the
/// boundary-perturbation family on the half-space: any Hessian whose
/// tangential curvature along the boundary is nonpositive satisfies
/// H(M) >= -M22 >= 0. Sampled over random Hessians; the inequality chain
/// itself is closed-form, which is what makes this PASS-grade.
pub fn certificate_prop1(grid: &Grid, c: f64, samples: u64, seed: u64) -> Result<Certificate, ViscosityError> {
    if !grid.domain.slab {
        return Err(ViscosityError::NotSlabGrid);
    }
    assert!(c > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let m = SymMatrix2::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..=0.0),
        );
        let h = hamiltonian_exact_2d(m, 0.0).unwrap();
        if !(h >= -m.a22 - 1e-12 && -m.a22 >= 0.0) {
            return Ok(Certificate::falsified(
                Witness {
                    x: (0.0, 0.0),
                    p: (0.0, 0.0),
                    m: (m.a11, m.a12, m.a22),
                    residual: h + m.a22,
                    reason: "tangential rank-one bound violated".into(),
                },
                samples,
            ));
        }
    }
    Ok(Certificate { kind: CertificateKind::Pass, witness: None, samples_checked: samples })
}

/// Exact implication certificates behind the mixed-condition family:
/// the tangential bound at Dirichlet face nodes, the corner gradient
/// inequality max(p . n, -c) >= 0 whenever p . n >= 0, and consistency of
/// the one-sided normal difference for quadratics touching the lower
/// envelope at a corner.
pub fn certificate_prop2(
    grid: &Arc<Grid>,
    c: f64,
    spec: &SampleSpec,
    samples: u64,
    seed: u64,
) -> Result<Certificate, ViscosityError> {
    assert!(c > 0.0);
    assert!(
        grid.split() == crate::grid::BcSplit::LeftRightDirichlet,
        "mixed certificate requires a mixed-split grid"
    );
    let mut checked = 0u64;

    // (i) Tangential certificate at Dirichlet face nodes: vertical tangent.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let m = SymMatrix2::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..=0.0),
        );
        checked += 1;
        let h = hamiltonian_exact_2d(m, 0.0).unwrap();
        if h < -1e-12 {
            return Ok(Certificate::falsified(
                Witness {
                    x: (0.0, 0.0),
                    p: (0.0, 0.0),
                    m: (m.a11, m.a12, m.a22),
                    residual: h,
                    reason: "tangential certificate failed at a Dirichlet node".into(),
                },
                checked,
            ));
        }
    }

    // (ii) Corner gradient sweep.
    let corners: Vec<usize> =
        grid.node_indices().filter(|&i| grid.class(i) == NodeClass::Corner).collect();
    for &corner in &corners {
        let n = grid.neumann_normal(corner).expect("corner normal");
        for p in spec.gradients() {
            let pn = p.0 * n.0 + p.1 * n.1;
            if pn >= 0.0 {
                checked += 1;
                if pn.max(-c) < 0.0 {
                    return Ok(Certificate::falsified(
                        Witness {
                            x: grid.coords(corner),
                            p,
                            m: (0.0, 0.0, 0.0),
                            residual: pn.max(-c),
                            reason: "corner boundary operator negative".into(),
                        },
                        checked,
                    ));
                }
            }
        }
    }

    // (iii) One-sided normal difference for touching quadratics at the
    // corners of the lower envelope.
    let family = CandidateFunction::MixedPerturbation { c };
    let envs = family.envelopes(grid);
    for &corner in &corners {
        let n = grid.neumann_normal(corner).expect("corner normal");
        for q in touching_quadratics(&envs.lower, corner, TouchSense::FromBelow, spec) {
            for k in 1..=spec.r_check {
                let eps = k as f64 * grid.h;
                let diff = -q.eval_delta(-eps * n.0, -eps * n.1);
                checked += 1;
                if diff / eps < -spec.tau_residual {
                    return Ok(Certificate::falsified(
                        Witness {
                            x: grid.coords(corner),
                            p: q.p,
                            m: (q.m.a11, q.m.a12, q.m.a22),
                            residual: diff / eps,
                            reason: "one-sided normal difference negative".into(),
                        },
                        checked,
                    ));
                }
            }
        }
    }

    Ok(Certificate { kind: CertificateKind::Pass, witness: None, samples_checked: checked })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonWitness {
    pub x: (f64, f64),
    pub gap: f64,
}

/// Largest violation of `sub <= super` between a certified subsolution and
/// the lower envelope of a certified supersolution; `None` when the
/// subsolution lies below everywhere.
pub fn comparison_witness(
    sub: &CandidateFunction,
    sub_cert: &Certificate,
    supersol: &CandidateFunction,
    super_cert: &Certificate,
    grid: &Arc<Grid>,
) -> Result<Option<ComparisonWitness>, ViscosityError> {
    if sub_cert.is_falsified() || super_cert.is_falsified() {
        return Err(ViscosityError::MissingCertificates);
    }
    let sub_sample = sub.sample(grid);
    let super_lower = supersol.envelopes(grid).lower;
    let mut best: Option<(usize, f64)> = None;
    for node in grid.node_indices() {
        if grid.class(node) == NodeClass::ArtificialBoundary {
            continue;
        }
        let gap = sub_sample.values[node] - super_lower.values[node];
        if best.map_or(true, |(_, g)| gap > g) {
            best = Some((node, gap));
        }
    }
    Ok(best.filter(|&(_, gap)| gap > 0.0).map(|(node, gap)| ComparisonWitness {
        x: grid.coords(node),
        gap,
    }))
}

/// Pointwise liminf of a refinement family: at each finest-grid node, the
/// minimum over levels of the level's values within distance 2 h_level.
pub fn liminf_envelope_across_levels(
    levels: &[GridFunction],
) -> Result<GridFunction, ViscosityError> {
    if levels.len() < 2 {
        return Err(ViscosityError::NonNestedGrids("need at least two levels".into()));
    }
    let finest = levels
        .iter()
        .min_by(|a, b| a.grid.h.partial_cmp(&b.grid.h).unwrap())
        .unwrap();
    let hf = finest.grid.h;
    for lv in levels {
        let ratio = lv.grid.h / hf;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(ViscosityError::NonNestedGrids(format!(
                "spacing {} is not an integer multiple of {}",
                lv.grid.h, hf
            )));
        }
        if lv.grid.domain.name != finest.grid.domain.name {
            return Err(ViscosityError::NonNestedGrids("domains differ".into()));
        }
    }

    let mut values = vec![f64::INFINITY; finest.grid.node_count()];
    for lv in levels {
        let m = (lv.grid.h / hf).round() as i64;
        let radius = 2.0 * lv.grid.h + 1e-12;
        for node in finest.grid.node_indices() {
            let (i, j) = finest.grid.lattice(node);
            // Level-lattice window covering the ball of radius 2 h_level.
            let a0 = (i - 2 * m).div_euclid(m);
            let a1 = (i + 2 * m).div_euclid(m) + 1;
            let b0 = (j - 2 * m).div_euclid(m);
            let b1 = (j + 2 * m).div_euclid(m) + 1;
            for b in b0..=b1 {
                for a in a0..=a1 {
                    if let Some(idx) = lv.grid.node_at(a, b) {
                        let dx = (a * m - i) as f64 * hf;
                        let dy = (b * m - j) as f64 * hf;
                        if (dx * dx + dy * dy).sqrt() <= radius {
                            values[node] = values[node].min(lv.values[idx]);
                        }
                    }
                }
            }
        }
    }
    Ok(GridFunction::new(finest.grid.clone(), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, BcSplit, Domain};
    use crate::hamiltonian::Normalization;

    fn slab_grid(h: f64) -> Arc<Grid> {
        Arc::new(build_grid(Domain::slab(1.0), h, BcSplit::None).unwrap())
    }

    fn mixed_grid(h: f64) -> Arc<Grid> {
        Arc::new(build_grid(Domain::unit_square(), h, BcSplit::LeftRightDirichlet).unwrap())
    }

    fn zero_source(grid: &Grid) -> SourceField {
        SourceField::new(grid, |_, _| 0.0, Normalization::Hjb).unwrap()
    }

    #[test]
    fn envelopes_of_boundary_perturbation() {
        let grid = slab_grid(0.125);
        let v = CandidateFunction::BoundaryPerturbation { c: 1.0 };
        let envs = v.envelopes(&grid);
        assert!(envs.exact);
        let sample = v.sample(&grid);
        for i in grid.node_indices() {
            assert_eq!(envs.upper.values[i], 0.0);
            assert_eq!(envs.lower.values[i], sample.values[i]);
            assert!(envs.lower.values[i] <= sample.values[i]);
            assert!(sample.values[i] <= envs.upper.values[i]);
        }
        let face = grid.node_near(0.0, 0.5).unwrap();
        assert_eq!(envs.lower.values[face], -1.0);
    }

    #[test]
    fn envelopes_of_zero_and_mixed_family() {
        let grid = mixed_grid(0.25);
        let z = CandidateFunction::Zero.envelopes(&grid);
        assert!(z.upper.values.iter().all(|&v| v == 0.0));
        assert!(z.lower.values.iter().all(|&v| v == 0.0));

        let v = CandidateFunction::MixedPerturbation { c: 2.0 };
        let envs = v.envelopes(&grid);
        for i in grid.node_indices() {
            assert_eq!(envs.upper.values[i], 0.0);
            match grid.class(i) {
                NodeClass::DirichletBoundary | NodeClass::Corner => {
                    assert_eq!(envs.lower.values[i], -2.0)
                }
                _ => assert_eq!(envs.lower.values[i], 0.0),
            }
        }
    }

    #[test]
    fn touching_examples_for_zero() {
        let grid = slab_grid(0.0625);
        let env = CandidateFunction::Zero.envelopes(&grid).upper;
        let x0 = grid.node_near(0.5, 0.5).unwrap();
        let spec = SampleSpec::default();
        let concave = TestQuadratic {
            x0: grid.coords(x0),
            p: (0.0, 0.0),
            m: SymMatrix2::diag(-1.0, -1.0),
        };
        assert!(touches(&env, x0, TouchSense::FromBelow, &concave, &spec));
        let convex = TestQuadratic {
            x0: grid.coords(x0),
            p: (0.0, 0.0),
            m: SymMatrix2::identity(),
        };
        assert!(!touches(&env, x0, TouchSense::FromBelow, &convex, &spec));
    }

    #[test]
    fn touching_lower_envelope_on_the_true_face() {
        let grid = slab_grid(0.0625);
        let env = CandidateFunction::BoundaryPerturbation { c: 1.0 }.envelopes(&grid).lower;
        let x0 = grid.node_near(0.0, 0.5).unwrap();
        assert_eq!(grid.class(x0), NodeClass::DirichletBoundary);
        let spec = SampleSpec::default();
        let q = TestQuadratic { x0: grid.coords(x0), p: (1.0, 0.0), m: SymMatrix2::zero() };
        assert!(touches(&env, x0, TouchSense::FromBelow, &q, &spec));
        let found = touching_quadratics(&env, x0, TouchSense::FromBelow, &spec);
        assert!(found
            .iter()
            .any(|t| t.p == (1.0, 0.0) && t.m.a11 == 0.0 && t.m.a22 == 0.0 && t.m.a12 == 0.0));
    }

    #[test]
    fn zero_is_solution_under_bs_dirichlet() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let sub =
            check_subsolution(&CandidateFunction::Zero, Semantics::BsDirichlet, &grid, &f, &spec);
        let sup =
            check_supersolution(&CandidateFunction::Zero, Semantics::BsDirichlet, &grid, &f, &spec);
        assert_eq!(sub.kind, CertificateKind::NoViolationFound);
        assert_eq!(sup.kind, CertificateKind::NoViolationFound);
    }

    #[test]
    fn perturbation_family_is_solution_under_bs_dirichlet() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let v = CandidateFunction::BoundaryPerturbation { c: 1.0 };
        let sub = check_subsolution(&v, Semantics::BsDirichlet, &grid, &f, &spec);
        let sup = check_supersolution(&v, Semantics::BsDirichlet, &grid, &f, &spec);
        assert_eq!(sub.kind, CertificateKind::NoViolationFound);
        assert_eq!(sup.kind, CertificateKind::NoViolationFound);
    }

    #[test]
    fn semicontinuity_pretest_falsifies_under_ug() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let v = CandidateFunction::BoundaryPerturbation { c: 1.0 };
        let sub = check_subsolution(&v, Semantics::UgSemiContinuous, &grid, &f, &spec);
        assert!(sub.is_falsified());
        let w = sub.witness.unwrap();
        assert_eq!(w.x.0, 0.0);
        assert!(w.reason.contains("semi-continuous"));
        // The supersolution argument carries over unchanged.
        let sup = check_supersolution(&v, Semantics::UgSemiContinuous, &grid, &f, &spec);
        assert_eq!(sup.kind, CertificateKind::NoViolationFound);
    }

    #[test]
    fn positive_perturbation_fails_subsolution_property() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let v = CandidateFunction::BoundaryPerturbation { c: -1.0 };
        let sub = check_subsolution(&v, Semantics::BsDirichlet, &grid, &f, &spec);
        assert!(sub.is_falsified());
        let w = sub.witness.clone().unwrap();
        assert_eq!(w.x.0, 0.0, "witness should sit on the true boundary face");
        assert!(w.residual > spec.tau_residual);

        // Independent re-check of the witness from scratch.
        let envs = v.envelopes(&grid);
        let node = grid.node_near(w.x.0, w.x.1).unwrap();
        let q = TestQuadratic {
            x0: w.x,
            p: w.p,
            m: SymMatrix2::new(w.m.0, w.m.1, w.m.2),
        };
        assert!(touches(&envs.upper, node, TouchSense::FromAbove, &q, &spec));
        let h = hamiltonian_exact_2d(q.m, 0.0).unwrap();
        assert!(h.min(envs.upper.values[node]) > spec.tau_residual);
    }

    #[test]
    fn classical_checker_reports_boundary_mismatch() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let v = CandidateFunction::BoundaryPerturbation { c: 1.0 };
        let sup = check_supersolution(&v, Semantics::Classical, &grid, &f, &spec);
        assert!(sup.is_falsified());
        assert!(sup.witness.unwrap().reason.contains("boundary datum"));
        // u = 0 passes classically.
        let z = check_supersolution(&CandidateFunction::Zero, Semantics::Classical, &grid, &f, &spec);
        assert_eq!(z.kind, CertificateKind::NoViolationFound);
    }

    #[test]
    fn mixed_family_is_solution_under_bs_mixed() {
        let grid = mixed_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let v = CandidateFunction::MixedPerturbation { c: 1.0 };
        let sub = check_subsolution(&v, Semantics::BsMixed, &grid, &f, &spec);
        let sup = check_supersolution(&v, Semantics::BsMixed, &grid, &f, &spec);
        assert_eq!(sub.kind, CertificateKind::NoViolationFound);
        assert_eq!(sup.kind, CertificateKind::NoViolationFound);
    }

    #[test]
    fn prop1_certificate_passes_for_arbitrary_scale() {
        let grid = slab_grid(0.0625);
        for c in [1e-3, 1.0, 1e3] {
            let cert = certificate_prop1(&grid, c, 10_000, 42).unwrap();
            assert_eq!(cert.kind, CertificateKind::Pass);
        }
        let square = Arc::new(build_grid(Domain::unit_square(), 0.5, BcSplit::None).unwrap());
        assert!(matches!(
            certificate_prop1(&square, 1.0, 10, 0),
            Err(ViscosityError::NotSlabGrid)
        ));
    }

    #[test]
    fn prop1_tangential_examples() {
        let m = SymMatrix2::diag(5.0, -1.0);
        let h = hamiltonian_exact_2d(m, 0.0).unwrap();
        assert!(h >= 1.0 && 1.0 >= 0.0);
        assert_eq!(hamiltonian_exact_2d(SymMatrix2::zero(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn prop2_certificate_passes() {
        let grid = mixed_grid(0.0625);
        let spec = SampleSpec::default();
        for c in [1e-3, 1.0, 1e3] {
            let cert = certificate_prop2(&grid, c, &spec, 10_000, 7).unwrap();
            assert_eq!(cert.kind, CertificateKind::Pass, "c = {c}");
        }
    }

    #[test]
    fn prop2_corner_examples() {
        // p . n >= 0 makes the corner operator nonnegative regardless of c.
        let n = (0.0, -1.0);
        let p = (3.0, -2.0);
        let pn: f64 = p.0 * n.0 + p.1 * n.1;
        assert!(pn == 2.0 && pn.max(-1.0) >= 0.0);
        let p0: f64 = 0.0;
        assert!(p0.max(-1.0) >= 0.0);
    }

    #[test]
    fn comparison_witness_reports_gap() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let zero = CandidateFunction::Zero;
        let vc = CandidateFunction::BoundaryPerturbation { c: 1.0 };
        let sub_cert = check_subsolution(&zero, Semantics::BsDirichlet, &grid, &f, &spec);
        let super_cert = check_supersolution(&vc, Semantics::BsDirichlet, &grid, &f, &spec);
        let w = comparison_witness(&zero, &sub_cert, &vc, &super_cert, &grid).unwrap().unwrap();
        assert_eq!(w.gap, 1.0);
        assert_eq!(w.x.0, 0.0);

        let none = comparison_witness(&zero, &sub_cert, &zero, &super_cert, &grid).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn comparison_witness_mixed_family() {
        let grid = mixed_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let zero = CandidateFunction::Zero;
        let vc = CandidateFunction::MixedPerturbation { c: 0.5 };
        let sub_cert = check_subsolution(&zero, Semantics::BsMixed, &grid, &f, &spec);
        let super_cert = check_supersolution(&vc, Semantics::BsMixed, &grid, &f, &spec);
        let w = comparison_witness(&zero, &sub_cert, &vc, &super_cert, &grid).unwrap().unwrap();
        assert_eq!(w.gap, 0.5);
        let node = grid.node_near(w.x.0, w.x.1).unwrap();
        assert!(matches!(
            grid.class(node),
            NodeClass::DirichletBoundary | NodeClass::Corner
        ));
    }

    #[test]
    fn comparison_requires_certificates() {
        let grid = slab_grid(0.0625);
        let f = zero_source(&grid);
        let spec = SampleSpec::default();
        let zero = CandidateFunction::Zero;
        let bad = CandidateFunction::BoundaryPerturbation { c: -1.0 };
        let ok_cert = check_subsolution(&zero, Semantics::BsDirichlet, &grid, &f, &spec);
        let bad_cert = check_subsolution(&bad, Semantics::BsDirichlet, &grid, &f, &spec);
        assert!(matches!(
            comparison_witness(&zero, &ok_cert, &bad, &bad_cert, &grid),
            Err(ViscosityError::MissingCertificates)
        ));
    }

    #[test]
    fn liminf_envelope_examples() {
        let g1 = Arc::new(build_grid(Domain::unit_square(), 0.25, BcSplit::None).unwrap());
        let g2 = Arc::new(build_grid(Domain::unit_square(), 0.125, BcSplit::None).unwrap());
        let zero = liminf_envelope_across_levels(&[
            GridFunction::constant(g1.clone(), 0.0),
            GridFunction::constant(g2.clone(), 0.0),
        ])
        .unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));

        // Per-level constants -h: the minimum over levels is the coarsest.
        let env = liminf_envelope_across_levels(&[
            GridFunction::constant(g1.clone(), -0.25),
            GridFunction::constant(g2.clone(), -0.125),
        ])
        .unwrap();
        assert!(env.values.iter().all(|&v| v == -0.25));

        let g3 = Arc::new(build_grid(Domain::unit_square(), 0.1, BcSplit::None).unwrap());
        assert!(matches!(
            liminf_envelope_across_levels(&[
                GridFunction::constant(g3, 0.0),
                GridFunction::constant(g2.clone(), 0.0),
            ]),
            Err(ViscosityError::NonNestedGrids(_))
        ));
        assert!(liminf_envelope_across_levels(&[GridFunction::constant(g1, 0.0)]).is_err());
    }
}
