//! Experiment drivers: build states and objectives from a config, run the
//! scheme, and write trace CSVs, final states, and a JSON summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use wflow_core::diagnostics::{entropy_kl_estimate, ReferenceDensity};
use wflow_core::functionals::{
    sample_simplex_uniform, Functional, InteractionEnergy, InteractionKernel, KernelShape,
    QuadraticPotential, SimplexKl, SinkhornDivergence, SlicedEnergyDistance, SlicedWasserstein,
};
use wflow_core::linalg::random_orthogonal;
use wflow_core::measures::{
    read_cloud_csv_path, sample_gaussian, write_cloud_csv_path, GaussianState, ParticleCloud,
    RngSeed,
};
use wflow_core::nalgebra::{DMatrix, DVector};
use wflow_core::rng::derive_seed;
use wflow_core::schemes::{run, Method, SchemeConfig, Termination, Trace, TraceRecord};
use wflow_core::{bures, BregmanPotential, GaussianFlowConfig};

use crate::config::{
    parse_matrix, parse_vector, AlignObjective, AlignSpec, CustomSpec, EllipsoidSpec,
    ExperimentConfig, ExperimentSpec, GaussianFlowSpec, InitSpec, InteractionCommon, MethodSpec,
    ObjectiveSpec, RingSpec, SimplexSpec,
};

/// Summary written as `summary.json`; identical configs and seeds produce
/// byte-identical summaries except for the wall-time field.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub final_objective: f64,
    pub iterations: usize,
    pub termination: String,
    pub descent_violations: usize,
    pub mc_noise_increases: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_simplex_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_flow: Option<Vec<SchemeSummary>>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub final_kl: f64,
    /// First iteration with KL at or below the configured threshold, if
    /// reached.
    pub iterations_to_threshold: Option<usize>,
    pub kl_monotone: bool,
    /// Steps failing the relative-smoothness diagnostic (monitored only).
    pub smoothness_flags: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

fn termination_name(t: &Termination) -> String {
    match t {
        Termination::Tolerance => "tolerance".to_string(),
        Termination::MaxIter => "max_iter".to_string(),
        Termination::NewtonFailure { detail } => format!("newton_failure: {detail}"),
    }
}

/// Run the experiment described by the config and report whether the scheme
/// completed (tolerance or max-iter); step failures yield `Ok(false)` after
/// writing all outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<bool> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| {
        format!("cannot create output directory {}", cfg.output_dir.display())
    })?;
    match &cfg.experiment {
        ExperimentSpec::Ring(spec) => run_ring(cfg, spec),
        ExperimentSpec::Ellipsoid(spec) => run_ellipsoid(cfg, spec),
        ExperimentSpec::GaussianFlow(spec) => run_gaussian_flow(cfg, spec),
        ExperimentSpec::Simplex(spec) => run_simplex(cfg, spec),
        ExperimentSpec::Align(spec) => run_align(cfg, spec),
        ExperimentSpec::Custom(spec) => run_custom(cfg, spec),
    }
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary)?;
    std::fs::write(&path, json + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn finish_particle_run(
    cfg: &ExperimentConfig,
    name: &str,
    cloud: &ParticleCloud,
    trace: &Trace,
    start: Instant,
    radial_spread: Option<f64>,
    min_simplex_margin: Option<f64>,
) -> Result<bool> {
    trace
        .write_csv_path(cfg.output_dir.join("trace.csv"))
        .context("writing trace.csv")?;
    write_cloud_csv_path(cloud, cfg.output_dir.join("final.csv")).context("writing final.csv")?;
    let ok = !matches!(trace.termination, Termination::NewtonFailure { .. });
    let summary = Summary {
        experiment: name.to_string(),
        seed: cfg.seed,
        final_objective: trace.records.last().map(|r| r.objective).unwrap_or(f64::NAN),
        iterations: trace.iterations(),
        termination: termination_name(&trace.termination),
        descent_violations: trace.descent_violations.len(),
        mc_noise_increases: trace.mc_noise_increases.len(),
        radial_spread,
        min_simplex_margin,
        gaussian_flow: None,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    write_summary(&cfg.output_dir, &summary)?;
    Ok(ok)
}

fn isotropic_init(seed: u64, n: usize, d: usize, std: f64) -> Result<ParticleCloud> {
    let state = GaussianState::new(
        DVector::zeros(d),
        DMatrix::identity(d, d) * std * std,
    )?;
    Ok(sample_gaussian(RngSeed(seed), n, &state)?)
}

/// Spread of the particle radii around their median, after centering; small
/// values mean the cloud sits on a thin ring (or ellipsoid in the given
/// metric).
fn radial_spread(cloud: &ParticleCloud, metric: Option<&DMatrix<f64>>) -> f64 {
    let centered = cloud.centered();
    let mut radii: Vec<f64> = (0..centered.len())
        .map(|i| {
            let x = centered.particle(i);
            match metric {
                Some(a) => (a * &x).dot(&x).sqrt(),
                None => x.norm(),
            }
        })
        .collect();
    radii.sort_by(f64::total_cmp);
    let median = radii[radii.len() / 2];
    radii
        .iter()
        .map(|r| (r - median).abs())
        .fold(0.0, f64::max)
        * 2.0
}

fn run_interaction(
    cfg: &ExperimentConfig,
    name: &str,
    common: &InteractionCommon,
    objective_kernel: InteractionKernel,
    mirror_kernel: InteractionKernel,
    metric: Option<DMatrix<f64>>,
) -> Result<bool> {
    let start = Instant::now();
    let init = isotropic_init(cfg.seed, common.particles, 2, common.init_std)?;
    let mut objective = InteractionEnergy::new(objective_kernel);
    let method = Method::md(BregmanPotential::interaction(mirror_kernel));
    let scheme_cfg = SchemeConfig::new(common.tau, common.iterations)
        .with_rel_tol(common.rel_tol)
        .with_seed(cfg.seed)
        .with_descent_check(true);
    let (cloud, trace) = run(&init, &mut objective, &method, &scheme_cfg)?;
    let spread = radial_spread(&cloud, metric.as_ref());
    finish_particle_run(cfg, name, &cloud, &trace, start, Some(spread), None)
}

fn run_ring(cfg: &ExperimentConfig, spec: &RingSpec) -> Result<bool> {
    run_interaction(
        cfg,
        "ring",
        &spec.common,
        InteractionKernel::quartic_well(),
        InteractionKernel::quartic(),
        None,
    )
}

fn run_ellipsoid(cfg: &ExperimentConfig, spec: &EllipsoidSpec) -> Result<bool> {
    if spec.sigma_diag.len() != 2 || spec.sigma_diag.iter().any(|&v| v <= 0.0) {
        bail!("ellipsoid sigma_diag needs two positive entries");
    }
    let metric = DMatrix::from_diagonal(&DVector::from_vec(
        spec.sigma_diag.iter().map(|v| 1.0 / v).collect(),
    ));
    run_interaction(
        cfg,
        "ellipsoid",
        &spec.common,
        InteractionKernel::with_metric(KernelShape::QuarticWell, metric.clone())?,
        InteractionKernel::with_metric(KernelShape::Quartic, metric.clone())?,
        Some(metric),
    )
}

#[derive(Serialize)]
struct GaussianFinalState {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn run_gaussian_flow(cfg: &ExperimentConfig, spec: &GaussianFlowSpec) -> Result<bool> {
    let start = Instant::now();
    let d = spec.dimension;
    let [lo, hi] = spec.eigenvalue_range;
    let eigs = DVector::from_fn(d, |i, _| {
        if d == 1 {
            lo
        } else {
            (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (d - 1) as f64).exp()
        }
    });
    let u = random_orthogonal(derive_seed(cfg.seed, 0xb0), d);
    let rotated = {
        let m = &u * DMatrix::from_diagonal(&eigs) * u.transpose();
        wflow_core::linalg::symmetrize(&m)
    };
    let diag_target = GaussianState::new(DVector::zeros(d), DMatrix::from_diagonal(&eigs))?;
    let rotated_target = GaussianState::new(DVector::zeros(d), rotated)?;

    let mut scheme_summaries = Vec::new();
    let mut all_ok = true;
    let mut last_final_kl = f64::NAN;
    for tag in &spec.schemes {
        let scheme = tag.to_core();
        // NEM handles arbitrary covariances, so it gets the rotated target;
        // the eigenbasis schemes run on the diagonal representative (the KL
        // trace is invariant under the joint rotation).
        let target = match scheme {
            wflow_core::GaussianScheme::Nem => rotated_target.clone(),
            _ => diag_target.clone(),
        };
        let flow = GaussianFlowConfig::new(target.clone(), scheme, spec.tau);
        let mut state = GaussianState::standard(d);
        let mut kl = bures::kl_gaussian(&state, &target)?;
        let mut records = vec![TraceRecord {
            iter: 0,
            objective: kl,
            grad_magnitude: 0.0,
            step_div: 0.0,
            ms: 0.0,
        }];
        let mut to_threshold = if kl <= spec.kl_threshold { Some(0) } else { None };
        let mut monotone = true;
        let mut smoothness_flags = 0usize;
        let mut failure = None;
        for k in 1..=spec.iterations {
            let tick = Instant::now();
            let next = match bures::flow_step(&state, &flow) {
                Ok(next) => next,
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            };
            if !bures::relative_smoothness_ok(next.cov(), state.cov(), target.cov(), spec.tau)? {
                smoothness_flags += 1;
            }
            let next_kl = bures::kl_gaussian(&next, &target)?;
            if kl > 1e-12 && next_kl >= kl {
                monotone = false;
            }
            if to_threshold.is_none() && next_kl <= spec.kl_threshold {
                to_threshold = Some(k);
            }
            records.push(TraceRecord {
                iter: k,
                objective: next_kl,
                grad_magnitude: 0.0,
                step_div: 0.0,
                ms: tick.elapsed().as_secs_f64() * 1e3,
            });
            state = next;
            kl = next_kl;
        }
        let trace = Trace {
            records,
            termination: match &failure {
                None => Termination::MaxIter,
                Some(detail) => Termination::NewtonFailure {
                    detail: detail.clone(),
                },
            },
            descent_violations: Vec::new(),
            mc_noise_increases: Vec::new(),
        };
        trace
            .write_csv_path(cfg.output_dir.join(format!("trace_{}.csv", tag.name())))
            .context("writing scheme trace")?;
        let final_state = GaussianFinalState {
            mean: state.mean().iter().copied().collect(),
            cov: (0..d)
                .map(|i| (0..d).map(|j| state.cov()[(i, j)]).collect())
                .collect(),
        };
        std::fs::write(
            cfg.output_dir.join(format!("final_{}.json", tag.name())),
            serde_json::to_string_pretty(&final_state)? + "\n",
        )?;
        all_ok &= failure.is_none();
        last_final_kl = kl;
        scheme_summaries.push(SchemeSummary {
            scheme: tag.name().to_string(),
            final_kl: kl,
            iterations_to_threshold: to_threshold,
            kl_monotone: monotone,
            smoothness_flags,
            failure,
        });
    }

    let summary = Summary {
        experiment: "gaussian-flow".to_string(),
        seed: cfg.seed,
        final_objective: last_final_kl,
        iterations: spec.iterations,
        termination: if all_ok {
            "max_iter".to_string()
        } else {
            "newton_failure: see gaussian_flow entries".to_string()
        },
        descent_violations: 0,
        mc_noise_increases: 0,
        radial_spread: None,
        min_simplex_margin: None,
        gaussian_flow: Some(scheme_summaries),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    write_summary(&cfg.output_dir, &summary)?;
    Ok(all_ok)
}

fn run_simplex(cfg: &ExperimentConfig, spec: &SimplexSpec) -> Result<bool> {
    let start = Instant::now();
    let d = spec.concentration.len() - 1;
    let init = sample_simplex_uniform(cfg.seed, spec.particles, d);
    let mut objective = SimplexKl::new(spec.concentration.clone())?;
    if let Some(h) = spec.bandwidth {
        objective = objective.with_bandwidth(h)?;
    }
    let method = Method::md(BregmanPotential::simplex_entropy());
    let scheme_cfg = SchemeConfig::new(spec.tau, spec.iterations).with_seed(cfg.seed);
    let (cloud, trace) = run(&init, &mut objective, &method, &scheme_cfg)?;
    // Feasibility margin of the final cloud: smallest coordinate or slack.
    let mut margin = f64::INFINITY;
    for i in 0..cloud.len() {
        let x = cloud.particle(i);
        margin = margin.min(x.min()).min(1.0 - x.sum());
    }
    // Cross-check the traced KL estimate once through the diagnostics path.
    let _ = entropy_kl_estimate(
        &cloud,
        &ReferenceDensity::Dirichlet {
            concentration: spec.concentration.clone(),
        },
    )?;
    finish_particle_run(cfg, "simplex", &cloud, &trace, start, None, Some(margin))
}

fn load_or_sample(
    path: &Option<PathBuf>,
    fallback: impl FnOnce() -> Result<ParticleCloud>,
) -> Result<ParticleCloud> {
    match path {
        Some(p) => Ok(read_cloud_csv_path(p)?),
        None => fallback(),
    }
}

fn run_align(cfg: &ExperimentConfig, spec: &AlignSpec) -> Result<bool> {
    let start = Instant::now();
    let source = load_or_sample(&spec.source, || {
        Ok(sample_gaussian(
            RngSeed(derive_seed(cfg.seed, 0xa0)),
            spec.particles,
            &GaussianState::standard(2),
        )?)
    })?;
    let target = load_or_sample(&spec.target, || {
        let state = GaussianState::new(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 0.1])),
        )?;
        Ok(sample_gaussian(
            RngSeed(derive_seed(cfg.seed, 0xa1)),
            spec.particles,
            &state,
        )?)
    })?;

    let mut objective: Box<dyn Functional> = match spec.objective {
        AlignObjective::Sw => Box::new(SlicedWasserstein::new(
            target,
            spec.projections,
            derive_seed(cfg.seed, 0xa2),
        )?),
        AlignObjective::SlicedEd => Box::new(SlicedEnergyDistance::new(
            target,
            spec.projections,
            derive_seed(cfg.seed, 0xa2),
        )?),
        AlignObjective::Sinkhorn => {
            let eps = spec
                .epsilon
                .unwrap_or_else(|| SinkhornDivergence::trace_heuristic_eps(&target));
            Box::new(
                SinkhornDivergence::new(target, eps, spec.sinkhorn_max_iter, spec.sinkhorn_tol)?
                    .with_warm_start(true),
            )
        }
    };
    let method = Method::pgd(spec.preconditioner.to_core()?);
    let scheme_cfg = SchemeConfig::new(spec.tau, spec.max_iter)
        .with_rel_tol(spec.rel_tol)
        .with_seed(cfg.seed);
    let (cloud, trace) = run(&source, objective.as_mut(), &method, &scheme_cfg)?;
    finish_particle_run(cfg, "align", &cloud, &trace, start, None, None)
}

fn run_custom(cfg: &ExperimentConfig, spec: &CustomSpec) -> Result<bool> {
    let start = Instant::now();
    let init = match &spec.init {
        InitSpec::Gaussian { n, mean, cov } => {
            let state = GaussianState::new(parse_vector(mean), parse_matrix(cov)?)?;
            sample_gaussian(RngSeed(cfg.seed), *n, &state)?
        }
        InitSpec::Csv { path } => read_cloud_csv_path(path)?,
        InitSpec::SimplexUniform { n, d } => sample_simplex_uniform(cfg.seed, *n, *d),
    };

    let mut objective: Box<dyn Functional> = match &spec.objective {
        ObjectiveSpec::Quadratic { precision, shift } => {
            let p = parse_matrix(precision)?;
            match shift {
                Some(m) => Box::new(QuadraticPotential::new(p, parse_vector(m))?),
                None => Box::new(QuadraticPotential::centered(p)?),
            }
        }
        ObjectiveSpec::Interaction { kernel } => {
            Box::new(InteractionEnergy::new(kernel.to_core()?))
        }
        ObjectiveSpec::Sw {
            target,
            projections,
        } => Box::new(SlicedWasserstein::new(
            read_cloud_csv_path(target)?,
            *projections,
            derive_seed(cfg.seed, 0xa2),
        )?),
        ObjectiveSpec::Sinkhorn {
            target,
            epsilon,
            max_iter,
            tol,
        } => {
            let target = read_cloud_csv_path(target)?;
            let eps = epsilon.unwrap_or_else(|| SinkhornDivergence::trace_heuristic_eps(&target));
            Box::new(SinkhornDivergence::new(target, eps, *max_iter, *tol)?.with_warm_start(true))
        }
        ObjectiveSpec::SlicedEd {
            target,
            projections,
        } => Box::new(SlicedEnergyDistance::new(
            read_cloud_csv_path(target)?,
            *projections,
            derive_seed(cfg.seed, 0xa2),
        )?),
        ObjectiveSpec::SimplexKl {
            concentration,
            bandwidth,
        } => {
            let mut f = SimplexKl::new(concentration.clone())?;
            if let Some(h) = bandwidth {
                f = f.with_bandwidth(*h)?;
            }
            Box::new(f)
        }
    };

    let method = match &spec.method {
        MethodSpec::Md { potential, newton } => {
            let p = potential.to_core()?;
            match newton {
                Some(n) => Method::md_with_newton(p, n.to_core()),
                None => Method::md(p),
            }
        }
        MethodSpec::Pgd { preconditioner } => Method::pgd(preconditioner.to_core()?),
    };
    let scheme_cfg = SchemeConfig::new(spec.tau, spec.iterations)
        .with_rel_tol(spec.rel_tol)
        .with_seed(cfg.seed)
        .with_descent_check(spec.descent_check);
    let (cloud, trace) = run(&init, objective.as_mut(), &method, &scheme_cfg)?;
    finish_particle_run(cfg, "custom", &cloud, &trace, start, None, None)
}
