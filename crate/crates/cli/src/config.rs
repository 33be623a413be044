//! JSON experiment configuration: one experiment per file, unknown fields
//! rejected so typos in scientific parameters fail loudly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use wflow_core::nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wflow_core::functionals::{InteractionKernel, KernelShape};
use wflow_core::{BregmanPotential, Preconditioner};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Directory receiving `trace*.csv`, final-state files and
    /// `summary.json`; created if missing.
    pub output_dir: PathBuf,
    pub experiment: ExperimentSpec,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("at `{}`: {}", e.path(), e.inner()))
            .with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        match &self.experiment {
            ExperimentSpec::Ring(s) => s.common.validate(),
            ExperimentSpec::Ellipsoid(s) => s.common.validate(),
            ExperimentSpec::GaussianFlow(s) => s.validate(),
            ExperimentSpec::Simplex(s) => s.validate(),
            ExperimentSpec::Align(s) => s.validate(),
            ExperimentSpec::Custom(s) => s.validate(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    /// Quartic-well interaction energy with a quartic interaction mirror
    /// map: particles settle on a ring.
    Ring(RingSpec),
    /// Anisotropic quartic-well with the matching anisotropic mirror:
    /// particles settle on an ellipsoid.
    Ellipsoid(EllipsoidSpec),
    /// Closed-form Gaussian flows toward an ill-conditioned target,
    /// compared across schemes.
    GaussianFlow(GaussianFlowSpec),
    /// Mirror descent on the open simplex toward a Dirichlet-like target.
    Simplex(SimplexSpec),
    /// Preconditioned gradient descent aligning a source cloud to a target
    /// cloud under a distributional objective.
    Align(AlignSpec),
    /// Fully explicit objective / method / initialization.
    Custom(CustomSpec),
}

fn default_particles() -> usize {
    100
}
fn default_ring_tau() -> f64 {
    0.1
}
fn default_ring_iterations() -> usize {
    120
}
fn default_init_std() -> f64 {
    0.25
}
fn default_sigma_diag() -> Vec<f64> {
    vec![100.0, 0.1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionCommon {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_ring_tau")]
    pub tau: f64,
    #[serde(default = "default_ring_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub rel_tol: f64,
    /// Standard deviation of the isotropic Gaussian initialization.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl Default for InteractionCommon {
    fn default() -> Self {
        Self {
            particles: default_particles(),
            tau: default_ring_tau(),
            iterations: default_ring_iterations(),
            rel_tol: 0.0,
            init_std: default_init_std(),
        }
    }
}

impl InteractionCommon {
    fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.iterations == 0 || self.tau <= 0.0 || self.init_std <= 0.0 {
            bail!("interaction experiments need particles >= 1, iterations >= 1, tau > 0, init_std > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    #[serde(flatten, default)]
    pub common: InteractionCommon,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidSpec {
    #[serde(flatten, default)]
    pub common: InteractionCommon,
    /// Diagonal of the conditioning matrix `Sigma`; the kernels use the
    /// metric `Sigma^{-1}`.
    #[serde(default = "default_sigma_diag")]
    pub sigma_diag: Vec<f64>,
}

impl Default for EllipsoidSpec {
    fn default() -> Self {
        Self {
            common: InteractionCommon::default(),
            sigma_diag: default_sigma_diag(),
        }
    }
}

fn default_gf_dimension() -> usize {
    10
}
fn default_gf_tau() -> f64 {
    0.01
}
fn default_gf_iterations() -> usize {
    1500
}
fn default_gf_eig_range() -> [f64; 2] {
    [1.0, 100.0]
}
fn default_gf_schemes() -> Vec<GaussianSchemeTag> {
    vec![
        GaussianSchemeTag::Nem,
        GaussianSchemeTag::Fb,
        GaussianSchemeTag::Pfb,
    ]
}
fn default_kl_threshold() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianSchemeTag {
    Nem,
    Heat,
    Fb,
    Pfb,
    Klm,
}

impl GaussianSchemeTag {
    pub fn to_core(self) -> wflow_core::GaussianScheme {
        match self {
            Self::Nem => wflow_core::GaussianScheme::Nem,
            Self::Heat => wflow_core::GaussianScheme::Heat,
            Self::Fb => wflow_core::GaussianScheme::Fb,
            Self::Pfb => wflow_core::GaussianScheme::Pfb,
            Self::Klm => wflow_core::GaussianScheme::Klm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Nem => "nem",
            Self::Heat => "heat",
            Self::Fb => "fb",
            Self::Pfb => "pfb",
            Self::Klm => "klm",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianFlowSpec {
    #[serde(default = "default_gf_dimension")]
    pub dimension: usize,
    #[serde(default = "default_gf_tau")]
    pub tau: f64,
    #[serde(default = "default_gf_iterations")]
    pub iterations: usize,
    /// Target eigenvalues are log-spaced over this range and conjugated by
    /// a seeded random orthogonal matrix.
    #[serde(default = "default_gf_eig_range")]
    pub eigenvalue_range: [f64; 2],
    #[serde(default = "default_gf_schemes")]
    pub schemes: Vec<GaussianSchemeTag>,
    /// KL level whose first-passage iteration is reported per scheme.
    #[serde(default = "default_kl_threshold")]
    pub kl_threshold: f64,
}

impl Default for GaussianFlowSpec {
    fn default() -> Self {
        Self {
            dimension: default_gf_dimension(),
            tau: default_gf_tau(),
            iterations: default_gf_iterations(),
            eigenvalue_range: default_gf_eig_range(),
            schemes: default_gf_schemes(),
            kl_threshold: default_kl_threshold(),
        }
    }
}

impl GaussianFlowSpec {
    fn validate(&self) -> Result<()> {
        if self.dimension == 0 || self.iterations == 0 || self.tau <= 0.0 {
            bail!("gaussian-flow needs dimension >= 1, iterations >= 1, tau > 0");
        }
        let [lo, hi] = self.eigenvalue_range;
        if !(lo > 0.0 && hi >= lo) {
            bail!("eigenvalue range must satisfy 0 < lo <= hi");
        }
        if self.schemes.is_empty() {
            bail!("need at least one scheme");
        }
        Ok(())
    }
}

fn default_simplex_tau() -> f64 {
    0.002
}
fn default_simplex_iterations() -> usize {
    500
}
fn default_concentration() -> Vec<f64> {
    vec![6.0, 6.0, 6.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexSpec {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_simplex_tau")]
    pub tau: f64,
    #[serde(default = "default_simplex_iterations")]
    pub iterations: usize,
    /// `d + 1` Dirichlet concentration parameters (simplex coordinates plus
    /// slack).
    #[serde(default = "default_concentration")]
    pub concentration: Vec<f64>,
    /// Kernel bandwidth of the entropy score; Silverman's rule when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl Default for SimplexSpec {
    fn default() -> Self {
        Self {
            particles: default_particles(),
            tau: default_simplex_tau(),
            iterations: default_simplex_iterations(),
            concentration: default_concentration(),
            bandwidth: None,
        }
    }
}

impl SimplexSpec {
    fn validate(&self) -> Result<()> {
        if self.particles < 2 || self.iterations == 0 || self.tau <= 0.0 {
            bail!("simplex needs particles >= 2, iterations >= 1, tau > 0");
        }
        if self.concentration.len() < 2 || self.concentration.iter().any(|&a| a <= 0.0) {
            bail!("concentration needs d + 1 >= 2 positive entries");
        }
        Ok(())
    }
}

fn default_align_particles() -> usize {
    512
}
fn default_projections() -> usize {
    1024
}
fn default_align_tau() -> f64 {
    1.0
}
fn default_align_rel_tol() -> f64 {
    1e-3
}
fn default_align_max_iter() -> usize {
    10_000
}
fn default_align_objective() -> AlignObjective {
    AlignObjective::Sw
}
fn default_align_preconditioner() -> PreconditionerSpec {
    PreconditionerSpec::Polynomial { a: 1.5 }
}
fn default_sinkhorn_max_iter() -> usize {
    10_000
}
fn default_sinkhorn_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignObjective {
    Sw,
    Sinkhorn,
    SlicedEd,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignSpec {
    /// Source point-cloud CSV. Defaults to `particles` samples of
    /// `N(0, I_2)`.
    #[serde(default)]
    pub source: Option<PathBuf>,
    /// Target point-cloud CSV. Defaults to `particles` samples of
    /// `N(0, diag(100, 0.1))`.
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[serde(default = "default_align_particles")]
    pub particles: usize,
    #[serde(default = "default_align_objective")]
    pub objective: AlignObjective,
    #[serde(default = "default_projections")]
    pub projections: usize,
    /// Entropic regularization; `0.1 * tr(cov(target))` when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_sinkhorn_max_iter")]
    pub sinkhorn_max_iter: usize,
    #[serde(default = "default_sinkhorn_tol")]
    pub sinkhorn_tol: f64,
    #[serde(default = "default_align_preconditioner")]
    pub preconditioner: PreconditionerSpec,
    #[serde(default = "default_align_tau")]
    pub tau: f64,
    #[serde(default = "default_align_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_align_max_iter")]
    pub max_iter: usize,
}

impl Default for AlignSpec {
    fn default() -> Self {
        Self {
            source: None,
            target: None,
            particles: default_align_particles(),
            objective: default_align_objective(),
            projections: default_projections(),
            epsilon: None,
            sinkhorn_max_iter: default_sinkhorn_max_iter(),
            sinkhorn_tol: default_sinkhorn_tol(),
            preconditioner: default_align_preconditioner(),
            tau: default_align_tau(),
            rel_tol: default_align_rel_tol(),
            max_iter: default_align_max_iter(),
        }
    }
}

impl AlignSpec {
    fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.max_iter == 0 || self.tau <= 0.0 || self.rel_tol < 0.0 {
            bail!("align needs particles >= 1, max_iter >= 1, tau > 0, rel_tol >= 0");
        }
        if self.projections == 0 {
            bail!("align needs projections >= 1");
        }
        for p in [&self.source, &self.target].into_iter().flatten() {
            if !p.exists() {
                bail!("referenced point cloud {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub objective: ObjectiveSpec,
    pub method: MethodSpec,
    pub init: InitSpec,
    pub tau: f64,
    pub iterations: usize,
    #[serde(default)]
    pub rel_tol: f64,
    #[serde(default)]
    pub descent_check: bool,
}

impl CustomSpec {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.tau <= 0.0 || self.rel_tol < 0.0 {
            bail!("custom needs iterations >= 1, tau > 0, rel_tol >= 0");
        }
        if let ObjectiveSpec::Sw { target, .. }
        | ObjectiveSpec::Sinkhorn { target, .. }
        | ObjectiveSpec::SlicedEd { target, .. } = &self.objective
        {
            if !target.exists() {
                bail!("referenced target cloud {} does not exist", target.display());
            }
        }
        if let InitSpec::Csv { path } = &self.init {
            if !path.exists() {
                bail!("referenced init cloud {} does not exist", path.display());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        precision: Vec<Vec<f64>>,
        #[serde(default)]
        shift: Option<Vec<f64>>,
    },
    Interaction {
        kernel: KernelSpec,
    },
    Sw {
        target: PathBuf,
        #[serde(default = "default_projections")]
        projections: usize,
    },
    Sinkhorn {
        target: PathBuf,
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default = "default_sinkhorn_max_iter")]
        max_iter: usize,
        #[serde(default = "default_sinkhorn_tol")]
        tol: f64,
    },
    SlicedEd {
        target: PathBuf,
        #[serde(default = "default_projections")]
        projections: usize,
    },
    SimplexKl {
        concentration: Vec<f64>,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelShapeTag,
    /// SPD metric replacing `||z||^2` by `z^T A z`; identity when absent.
    #[serde(default)]
    pub metric: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShapeTag {
    K2,
    K4,
    QuarticWell,
}

impl KernelSpec {
    pub fn to_core(&self) -> Result<InteractionKernel> {
        let shape = match self.shape {
            KernelShapeTag::K2 => KernelShape::Quadratic,
            KernelShapeTag::K4 => KernelShape::Quartic,
            KernelShapeTag::QuarticWell => KernelShape::QuarticWell,
        };
        match &self.metric {
            None => Ok(match shape {
                KernelShape::Quadratic => InteractionKernel::quadratic(),
                KernelShape::Quartic => InteractionKernel::quartic(),
                KernelShape::QuarticWell => InteractionKernel::quartic_well(),
            }),
            Some(rows) => {
                let metric = parse_matrix(rows)?;
                Ok(InteractionKernel::with_metric(shape, metric)?)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    Md {
        potential: PotentialSpec,
        #[serde(default)]
        newton: Option<NewtonSpec>,
    },
    Pgd {
        preconditioner: PreconditionerSpec,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Quadratic { precision: Vec<Vec<f64>> },
    SimplexEntropy,
    Interaction { kernel: KernelSpec },
}

impl PotentialSpec {
    pub fn to_core(&self) -> Result<BregmanPotential> {
        Ok(match self {
            Self::Quadratic { precision } => {
                BregmanPotential::quadratic(parse_matrix(precision)?)?
            }
            Self::SimplexEntropy => BregmanPotential::simplex_entropy(),
            Self::Interaction { kernel } => BregmanPotential::interaction(kernel.to_core()?),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSpec {
    #[serde(default = "default_newton_damping")]
    pub damping: f64,
    #[serde(default = "default_newton_tol")]
    pub tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_newton_ridge")]
    pub ridge: f64,
}

fn default_newton_damping() -> f64 {
    1.0
}
fn default_newton_tol() -> f64 {
    1e-9
}
fn default_newton_max_iter() -> usize {
    50
}
fn default_newton_ridge() -> f64 {
    1e-8
}

impl NewtonSpec {
    pub fn to_core(&self) -> wflow_core::NewtonConfig {
        wflow_core::NewtonConfig {
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
            ridge: self.ridge,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PreconditionerSpec {
    Identity,
    Polynomial { a: f64 },
    MatrixQuadratic { lambda: Vec<Vec<f64>> },
    Covariance,
}

impl PreconditionerSpec {
    pub fn to_core(&self) -> Result<Preconditioner> {
        Ok(match self {
            Self::Identity => Preconditioner::Identity,
            Self::Polynomial { a } => Preconditioner::polynomial(*a)?,
            Self::MatrixQuadratic { lambda } => {
                Preconditioner::matrix_quadratic(parse_matrix(lambda)?)?
            }
            Self::Covariance => Preconditioner::Covariance,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    Gaussian {
        n: usize,
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Csv {
        path: PathBuf,
    },
    SimplexUniform {
        n: usize,
        d: usize,
    },
}

pub fn parse_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        bail!("empty matrix");
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        bail!("matrix rows must be non-empty and of equal length");
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn parse_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
