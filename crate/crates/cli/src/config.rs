//! Run configuration: TOML with a strict schema (unknown keys rejected) and
//! documented defaults. The effective config round-trips through
//! `--print-config`.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mahjb::grid::{BcSplit, Domain, Rect};
use mahjb::hamiltonian::Normalization;
use mahjb::scheme::SourceField;
use mahjb::viscosity::{CandidateFunction, SampleSpec, Semantics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub source: SourceConfig,
    pub boundary: BoundaryConfig,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
    pub sample_spec: SampleSpecConfig,
    pub convergence: ConvergenceConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    UnitSquare,
    #[default]
    LShape,
    Slab,
    Rectangles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub kind: DomainKind,
    /// Slab extent along x1 (slab only).
    pub length: f64,
    /// Axis-aligned rectangles [xmin, xmax, ymin, ymax] (rectangles only).
    pub rectangles: Vec<[f64; 4]>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { kind: DomainKind::LShape, length: 1.0, rectangles: Vec::new() }
    }
}

impl DomainConfig {
    pub fn build(&self) -> Result<Domain> {
        Ok(match self.kind {
            DomainKind::UnitSquare => Domain::unit_square(),
            DomainKind::LShape => Domain::l_shape(),
            DomainKind::Slab => Domain::slab(self.length),
            DomainKind::Rectangles => {
                if self.rectangles.is_empty() {
                    bail!("domain.rectangles must be non-empty for kind = \"rectangles\"");
                }
                Domain::from_rectangles(
                    "rectangles",
                    self.rectangles
                        .iter()
                        .map(|r| Rect::new(r[0], r[1], r[2], r[3]))
                        .collect(),
                )
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    #[default]
    None,
    LeftRightDirichlet,
}

impl From<SplitKind> for BcSplit {
    fn from(s: SplitKind) -> BcSplit {
        match s {
            SplitKind::None => BcSplit::None,
            SplitKind::LeftRightDirichlet => BcSplit::LeftRightDirichlet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Spacing for single-grid commands.
    pub h: f64,
    /// Spacings for multi-level commands (cross-section, convergence);
    /// falls back to [h] when empty.
    pub levels: Vec<f64>,
    pub split: SplitKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { h: 0.0625, levels: Vec::new(), split: SplitKind::None }
    }
}

impl GridConfig {
    pub fn levels(&self) -> Vec<f64> {
        if self.levels.is_empty() {
            vec![self.h]
        } else {
            self.levels.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    #[default]
    Hjb,
    MongeAmpere,
}

impl From<NormalizationKind> for Normalization {
    fn from(n: NormalizationKind) -> Normalization {
        match n {
            NormalizationKind::Hjb => Normalization::Hjb,
            NormalizationKind::MongeAmpere => Normalization::MongeAmpere,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Constant source value; ignored when `expression` is set.
    pub constant: f64,
    /// Expression in x1, x2 (overrides `constant` when non-empty).
    pub expression: String,
    pub normalization: NormalizationKind,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            constant: 1.0,
            expression: String::new(),
            normalization: NormalizationKind::Hjb,
        }
    }
}

impl SourceConfig {
    pub fn build(&self, grid: &mahjb::grid::Grid) -> Result<SourceField> {
        let norm = self.normalization.into();
        let field = if self.expression.is_empty() {
            let v = self.constant;
            SourceField::new(grid, move |_, _| v, norm)
        } else {
            let f = compile_expression(&self.expression)?;
            SourceField::new(grid, |x, y| f(x, y), norm)
        };
        field.map_err(|e| anyhow::anyhow!("invalid source: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    /// Dirichlet datum expression in x1, x2.
    pub g: String,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { g: "0".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Stencil direction width (max-norm bound on primitive offsets).
    pub width: i64,
    /// Reach cap in lattice steps per direction.
    pub k_max: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-8, max_iters: 200, width: 3, k_max: 2 }
    }
}

impl SolverConfig {
    pub fn options(&self) -> mahjb::solver::SolverOptions {
        mahjb::solver::SolverOptions { tol: self.tol, max_iters: self.max_iters }
    }

    pub fn stencil(&self) -> mahjb::scheme::Stencil {
        mahjb::scheme::Stencil::new(self.width, self.k_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateKind {
    Zero,
    #[default]
    PropOneFamily,
    PropTwoFamily,
    Expression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticsKind {
    #[default]
    BsDirichlet,
    UgSemiContinuous,
    Classical,
    BsMixed,
}

impl From<SemanticsKind> for Semantics {
    fn from(s: SemanticsKind) -> Semantics {
        match s {
            SemanticsKind::BsDirichlet => Semantics::BsDirichlet,
            SemanticsKind::UgSemiContinuous => Semantics::UgSemiContinuous,
            SemanticsKind::Classical => Semantics::Classical,
            SemanticsKind::BsMixed => Semantics::BsMixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RoleKind {
    Sub,
    Super,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub candidate: CandidateKind,
    /// Perturbation size for the built-in families.
    pub c: f64,
    /// Candidate expression in x1, x2 (candidate = "expression" only).
    pub expression: String,
    pub semantics: SemanticsKind,
    pub role: RoleKind,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            candidate: CandidateKind::PropOneFamily,
            c: 1.0,
            expression: String::new(),
            semantics: SemanticsKind::BsDirichlet,
            role: RoleKind::Both,
        }
    }
}

impl VerifyConfig {
    pub fn candidate(&self) -> Result<CandidateFunction> {
        Ok(match self.candidate {
            CandidateKind::Zero => CandidateFunction::Zero,
            CandidateKind::PropOneFamily => CandidateFunction::BoundaryPerturbation { c: self.c },
            CandidateKind::PropTwoFamily => CandidateFunction::MixedPerturbation { c: self.c },
            CandidateKind::Expression => {
                if self.expression.is_empty() {
                    bail!("verify.expression required for candidate = \"expression\"");
                }
                let f = compile_expression(&self.expression)?;
                CandidateFunction::Expression { name: self.expression.clone(), f: Arc::new(f) }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpecConfig {
    pub p_max: f64,
    pub p_step: f64,
    pub mu_max: f64,
    pub mu_step: f64,
    pub angles: usize,
    pub r_check: i64,
    pub tau_touch: f64,
    pub tau_residual: f64,
}

impl Default for SampleSpecConfig {
    fn default() -> Self {
        let s = SampleSpec::default();
        SampleSpecConfig {
            p_max: s.p_max,
            p_step: s.p_step,
            mu_max: s.mu_max,
            mu_step: s.mu_step,
            angles: s.angles,
            r_check: s.r_check,
            tau_touch: s.tau_touch,
            tau_residual: s.tau_residual,
        }
    }
}

impl SampleSpecConfig {
    pub fn build(&self) -> SampleSpec {
        SampleSpec {
            p_max: self.p_max,
            p_step: self.p_step,
            mu_max: self.mu_max,
            mu_step: self.mu_step,
            angles: self.angles,
            r_check: self.r_check,
            tau_touch: self.tau_touch,
            tau_residual: self.tau_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    /// Exact solution expression in x1, x2 (required by `convergence`).
    pub exact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

/// Compiles an expression over the variables x1, x2.
pub fn compile_expression(text: &str) -> Result<impl Fn(f64, f64) -> f64 + Send + Sync + Clone> {
    let expr: meval::Expr =
        text.parse().with_context(|| format!("invalid expression {text:?}"))?;
    // Early validation; the bound form itself is not Send, so evaluation
    // below re-binds through a per-call context instead.
    let _ = expr
        .clone()
        .bind2("x1", "x2")
        .with_context(|| format!("expression {text:?} must use x1, x2"))?;
    Ok(move |x: f64, y: f64| {
        let mut ctx = meval::Context::new();
        ctx.var("x1", x).var("x2", y);
        expr.eval_with_context(&ctx).unwrap_or(f64::NAN)
    })
}
