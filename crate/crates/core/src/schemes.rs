//! Particle-level iteration schemes and the run loop with stopping,
//! tracing, and descent checks.
//!
//! One step moves every particle through a transport map built from the
//! objective's Wasserstein gradient `g` at the current cloud:
//!
//! - mirror descent: `x <- grad V*(grad V(x) - tau g(x))` for potentials
//!   with an explicit conjugate; interaction potentials invert the mirror
//!   map with a damped Newton solve instead;
//! - preconditioned gradient descent: `x <- x - tau grad h*(g(x))`.
//!
//! [`run`] iterates a step until the relative objective change drops below
//! `rel_tol` or `max_iter` is reached, recording one [`TraceRecord`] per
//! iterate. Monte-Carlo objectives redraw their projections each iteration
//! from a stream derived from `(seed, iteration)`, so entire runs are pure
//! functions of their inputs.

use std::io::{BufRead, BufReader, Write};
use std::time::Instant;

use thiserror::Error;

use crate::bregman::{newton_implicit_step, BregmanError, BregmanPotential, NewtonConfig};
use crate::functionals::{Functional, FunctionalError};
use crate::measures::{MeasureError, ParticleCloud, VelocityField};
use crate::preconditioners::{Preconditioner, PreconditionerError};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid scheme config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Bregman(#[from] BregmanError),
    #[error(transparent)]
    Preconditioner(#[from] PreconditionerError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("trace csv line {line}: {reason}")]
    TraceCsv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Step size, stopping rule and seeding for [`run`].
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub tau: f64,
    pub max_iter: usize,
    /// Stop once `|F_k - F_{k-1}| / |F_{k-1}| <= rel_tol`.
    pub rel_tol: f64,
    /// Root seed of the per-iteration Monte-Carlo streams.
    pub seed: u64,
    /// Flag iterations whose objective increases by more than 1e-9
    /// relative.
    pub descent_check: bool,
}

impl SchemeConfig {
    pub fn new(tau: f64, max_iter: usize) -> Self {
        Self {
            tau,
            max_iter,
            rel_tol: 0.0,
            seed: 0,
            descent_check: false,
        }
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_descent_check(mut self, on: bool) -> Self {
        self.descent_check = on;
        self
    }

    fn validate(&self) -> Result<(), SchemeError> {
        if !(self.tau > 0.0) {
            return Err(SchemeError::BadConfig(format!(
                "step size must be positive (got {})",
                self.tau
            )));
        }
        if self.max_iter == 0 {
            return Err(SchemeError::BadConfig("max_iter must be >= 1".to_string()));
        }
        if self.rel_tol < 0.0 {
            return Err(SchemeError::BadConfig(format!(
                "relative tolerance must be >= 0 (got {})",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

/// Which transport map the scheme builds from the gradient.
#[derive(Debug, Clone)]
pub enum Method {
    MirrorDescent {
        potential: BregmanPotential,
        newton: NewtonConfig,
    },
    Preconditioned { preconditioner: Preconditioner },
}

impl Method {
    pub fn md(potential: BregmanPotential) -> Self {
        Self::MirrorDescent {
            potential,
            newton: NewtonConfig::default(),
        }
    }

    pub fn md_with_newton(potential: BregmanPotential, newton: NewtonConfig) -> Self {
        Self::MirrorDescent { potential, newton }
    }

    pub fn pgd(preconditioner: Preconditioner) -> Self {
        Self::Preconditioned { preconditioner }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Relative objective change fell below `rel_tol`.
    Tolerance,
    /// Iteration budget exhausted.
    MaxIter,
    /// A step failed (Newton divergence, solver non-convergence, domain
    /// violation); the trace ends at the last valid iterate.
    NewtonFailure { detail: String },
}

/// One row per iterate: objective, gradient magnitude in the method's dual
/// geometry, Bregman divergence of the step that produced the iterate, and
/// wall-clock milliseconds spent on the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_magnitude: f64,
    pub step_div: f64,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    /// Iterations whose objective increase exceeded the descent threshold
    /// and could not be attributed to Monte-Carlo noise.
    pub descent_violations: Vec<usize>,
    /// Iterations whose objective increase stayed within 3x the estimated
    /// Monte-Carlo standard error.
    pub mc_noise_increases: Vec<usize>,
}

impl Trace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Number of steps taken (records minus the initial state).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// CSV with header `iter,objective,grad_magnitude,step_div,ms`, floats
    /// at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SchemeError> {
        writeln!(w, "iter,objective,grad_magnitude,step_div,ms")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.iter, r.objective, r.grad_magnitude, r.step_div, r.ms
            )?;
        }
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<std::path::Path>>(&self, path: P) -> Result<(), SchemeError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read back the records of a trace CSV (termination and flags are not
    /// part of the serialized format).
    pub fn read_csv_records<R: std::io::Read>(r: R) -> Result<Vec<TraceRecord>, SchemeError> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(SchemeError::TraceCsv {
                    line: 0,
                    reason: "empty file".to_string(),
                })
            }
        };
        if header.trim() != "iter,objective,grad_magnitude,step_div,ms" {
            return Err(SchemeError::TraceCsv {
                line: 1,
                reason: format!("unexpected header {header:?}"),
            });
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(SchemeError::TraceCsv {
                    line: idx + 1,
                    reason: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, SchemeError> {
                s.trim().parse().map_err(|e| SchemeError::TraceCsv {
                    line: idx + 1,
                    reason: format!("bad {what} {s:?}: {e}"),
                })
            };
            records.push(TraceRecord {
                iter: fields[0].trim().parse().map_err(|e| SchemeError::TraceCsv {
                    line: idx + 1,
                    reason: format!("bad iter {:?}: {e}", fields[0]),
                })?,
                objective: parse(fields[1], "objective")?,
                grad_magnitude: parse(fields[2], "grad_magnitude")?,
                step_div: parse(fields[3], "step_div")?,
                ms: parse(fields[4], "ms")?,
            });
        }
        if records.is_empty() {
            return Err(SchemeError::TraceCsv {
                line: 1,
                reason: "no records".to_string(),
            });
        }
        Ok(records)
    }
}

fn axpy_field(a: f64, x: &VelocityField, y: &VelocityField) -> VelocityField {
    VelocityField::new(y.values() + x.values() * a)
}

/// Mirror-descent transport applied to a precomputed gradient.
fn md_apply(
    cloud: &ParticleCloud,
    grad: &VelocityField,
    potential: &BregmanPotential,
    newton: &NewtonConfig,
    tau: f64,
) -> Result<ParticleCloud, SchemeError> {
    if tau == 0.0 {
        return Ok(cloud.clone());
    }
    let forward = potential.forward(cloud)?;
    let dual = axpy_field(-tau, grad, &forward);
    if potential.explicit_inverse() {
        let mapped = potential.inverse_pointwise(&dual)?;
        Ok(cloud.pushforward(&mapped)?)
    } else {
        let kernel = match potential {
            BregmanPotential::Interaction(kernel) => kernel,
            _ => unreachable!("only interaction potentials are implicit"),
        };
        // Interaction mirror maps are translation invariant, so the update
        // only determines the centered positions: project the dual target
        // onto mean-free fields and return the centered representative.
        let mut rhs = dual;
        let mean = rhs.values().row_sum() / cloud.len() as f64;
        for mut row in rhs.values_mut().row_iter_mut() {
            row -= &mean;
        }
        let outcome = newton_implicit_step(kernel, cloud, &rhs, newton)?;
        Ok(outcome.cloud.centered())
    }
}

/// Preconditioned transport applied to a precomputed gradient.
fn pgd_apply(
    cloud: &ParticleCloud,
    grad: &VelocityField,
    preconditioner: &Preconditioner,
    tau: f64,
) -> Result<ParticleCloud, SchemeError> {
    if tau == 0.0 {
        return Ok(cloud.clone());
    }
    let direction = preconditioner.apply(cloud, grad)?;
    let mapped = axpy_field(-tau, &direction, &VelocityField::identity_on(cloud));
    Ok(cloud.pushforward(&mapped)?)
}

/// One mirror-descent step `x <- grad V*(grad V(x) - tau g(x))`; interaction
/// potentials go through the implicit Newton solve of
/// [`newton_implicit_step`] and return the centered representative.
pub fn md_step(
    cloud: &ParticleCloud,
    f: &dyn Functional,
    potential: &BregmanPotential,
    newton: &NewtonConfig,
    tau: f64,
) -> Result<ParticleCloud, SchemeError> {
    let grad = f.wgrad(cloud)?;
    md_apply(cloud, &grad, potential, newton, tau)
}

/// One preconditioned gradient step `x <- x - tau grad h*(g(x))`.
pub fn pgd_step(
    cloud: &ParticleCloud,
    f: &dyn Functional,
    preconditioner: &Preconditioner,
    tau: f64,
) -> Result<ParticleCloud, SchemeError> {
    let grad = f.wgrad(cloud)?;
    pgd_apply(cloud, &grad, preconditioner, tau)
}

/// Gradient magnitude reported in the trace: the preconditioner's dual
/// magnitude for pgd, the plain `L^2` magnitude for mirror descent.
fn trace_magnitude(
    method: &Method,
    cloud: &ParticleCloud,
    grad: &VelocityField,
) -> Result<f64, SchemeError> {
    match method {
        Method::Preconditioned { preconditioner } => {
            Ok(preconditioner.magnitude(cloud, grad)?)
        }
        Method::MirrorDescent { .. } => Ok(Preconditioner::Identity.magnitude(cloud, grad)?),
    }
}

/// Bregman divergence of the step that produced `next` from `cloud`:
/// `d_phi(Id, T)` for mirror descent, the quadratic divergence
/// `(1/(2n)) sum ||x' - x||^2` for pgd.
fn step_divergence(
    method: &Method,
    cloud: &ParticleCloud,
    next: &ParticleCloud,
) -> Result<f64, SchemeError> {
    let id = VelocityField::identity_on(cloud);
    let step = VelocityField::new(next.positions().clone());
    match method {
        Method::MirrorDescent { potential, .. } => {
            Ok(potential.divergence(cloud, &id, &step)?)
        }
        Method::Preconditioned { .. } => {
            let diff = VelocityField::new(step.values() - id.values());
            Ok(0.5 * diff.l2_inner(&diff))
        }
    }
}

/// Iterate the scheme from `init` until the relative objective change falls
/// below `cfg.rel_tol` or `cfg.max_iter` steps were taken.
///
/// Monte-Carlo objectives redraw their projections every iteration, so the
/// stopping comparison `|F(mu_k) - F(mu_{k-1})| / |F(mu_{k-1})|` evaluates
/// both iterates under the current iteration's frozen draw: the criterion
/// then measures actual movement of the iterates rather than draw-to-draw
/// noise, and the whole run is a pure function of `(inputs, cfg.seed)`.
///
/// Step failures are not returned as errors: the trace ends at the last
/// valid iterate with the failure recorded in its termination reason.
pub fn run(
    init: &ParticleCloud,
    f: &mut dyn Functional,
    method: &Method,
    cfg: &SchemeConfig,
) -> Result<(ParticleCloud, Trace), SchemeError> {
    cfg.validate()?;
    let mut cloud = init.clone();
    let mut records = Vec::with_capacity(cfg.max_iter + 1);
    let mut descent_violations = Vec::new();
    let mut mc_noise_increases = Vec::new();

    let start = Instant::now();
    f.set_stream(derive_seed(cfg.seed, 0));
    let evaluated = f.evaluate(&cloud)?;
    let (mut value, mut grad, mut se) = (evaluated.value, evaluated.grad, evaluated.mc_se);
    records.push(TraceRecord {
        iter: 0,
        objective: value,
        grad_magnitude: trace_magnitude(method, &cloud, &grad)?,
        step_div: 0.0,
        ms: start.elapsed().as_secs_f64() * 1e3,
    });

    let mut termination = Termination::MaxIter;
    for k in 1..=cfg.max_iter {
        let tick = Instant::now();
        let stepped = match method {
            Method::MirrorDescent { potential, newton } => {
                md_apply(&cloud, &grad, potential, newton, cfg.tau)
            }
            Method::Preconditioned { preconditioner } => {
                pgd_apply(&cloud, &grad, preconditioner, cfg.tau)
            }
        };
        let next = match stepped {
            Ok(next) => next,
            Err(err) => {
                termination = Termination::NewtonFailure {
                    detail: err.to_string(),
                };
                break;
            }
        };
        let step_div = step_divergence(method, &cloud, &next)?;

        f.set_stream(derive_seed(cfg.seed, k as u64));
        let evaluated = f.evaluate(&next).and_then(|out| {
            // Stochastic objectives: re-measure the previous iterate under
            // the current draw so the stopping comparison is draw-matched.
            let stop_base = if f.is_stochastic() {
                f.value(&cloud)?
            } else {
                value
            };
            Ok((out, stop_base))
        });
        let (out, stop_base) = match evaluated {
            Ok(pair) => pair,
            Err(err) => {
                termination = Termination::NewtonFailure {
                    detail: err.to_string(),
                };
                break;
            }
        };
        let (next_value, next_grad, next_se) = (out.value, out.grad, out.mc_se);

        records.push(TraceRecord {
            iter: k,
            objective: next_value,
            grad_magnitude: trace_magnitude(method, &next, &next_grad)?,
            step_div,
            ms: tick.elapsed().as_secs_f64() * 1e3,
        });

        if cfg.descent_check {
            let increase = next_value - value;
            if increase > 1e-9 * value.abs().max(f64::MIN_POSITIVE) {
                let tolerated = match next_se.or(se) {
                    Some(s) => increase.abs() < 3.0 * s,
                    None => false,
                };
                if tolerated {
                    mc_noise_increases.push(k);
                } else {
                    descent_violations.push(k);
                }
            }
        }

        let denom = stop_base.abs();
        let rel = if denom > 0.0 {
            (next_value - stop_base).abs() / denom
        } else if next_value == stop_base {
            0.0
        } else {
            f64::INFINITY
        };
        cloud = next;
        value = next_value;
        se = next_se;
        grad = next_grad;
        if rel <= cfg.rel_tol {
            termination = Termination::Tolerance;
            break;
        }
    }

    Ok((
        cloud,
        Trace {
            records,
            termination,
            descent_violations,
            mc_noise_increases,
        },
    ))
}
