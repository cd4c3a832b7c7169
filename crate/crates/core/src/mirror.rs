//! Mirror descent on grid densities in the Fisher–Rao geometry.
//!
//! Each outer iteration computes, for every input `μ_i`, the Kantorovich
//! potential from the current iterate `ρ^k` to `μ_i` on the grid, normalized
//! so its minimum is zero, and takes the multiplicative step
//!
//! ```text
//! log ρ^{k+1} = log ρ^k − η_k Σ_i w_i φ_{ρ^k → μ_i},  then renormalize.
//! ```
//!
//! Point clouds go through the semi-discrete solver and the grid c-transform
//! of its atom potentials. Histograms (and grid densities, reduced to their
//! cell masses) go through exact discrete OT between the iterate's cells and
//! the histogram's cells; the potential on the iterate side is the update
//! direction. Gaussian inputs are sampled to point clouds.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::discrete::{solve_discrete_with, DiscreteOtOptions};
use crate::error::{Error, Result};
use crate::gaussian::bures_wasserstein_distance;
use crate::measures::{
    check_input_weights, DiscreteMeasure, GaussianMeasure, GridDensity, GridHistogram, InputMeasure, MeasureKind,
    RegularGrid,
};
use crate::rng::substream;
use crate::semidiscrete::{solve_semidiscrete_lenient, PotentialVector, SolverOptions};

/// Tolerances of the per-iteration invariant checks.
pub const NORMALIZATION_TOL: f64 = 1e-10;
pub const BOUND_SLACK: f64 = 1e-7;
pub const POTENTIAL_FLOOR: f64 = -1e-9;

/// Histogram cells lighter than this are dropped from the target side.
const HISTOGRAM_MIN_WEIGHT: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `η_k = c / √T`.
    ConstantOverSqrtT,
    /// `η_k = c / √(k + 1)`.
    InverseSqrtK,
    /// `η_k = c · (k + 1)^{−α}`.
    Power,
}

/// Step sizes `η_0, …, η_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub c: f64,
    pub alpha: f64,
    /// `T`; the outer loop runs `k = 0, …, T`.
    pub iterations: usize,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, c: f64, alpha: f64, iterations: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidMeasure(format!("step scale must be positive, got {c}")));
        }
        if kind == ScheduleKind::Power && !alpha.is_finite() {
            return Err(Error::InvalidMeasure(format!("invalid exponent {alpha}")));
        }
        Ok(Self {
            kind,
            c,
            alpha,
            iterations,
        })
    }

    pub fn eta(&self, k: usize) -> f64 {
        match self.kind {
            ScheduleKind::ConstantOverSqrtT => self.c / (self.iterations.max(1) as f64).sqrt(),
            ScheduleKind::InverseSqrtK => self.c / ((k + 1) as f64).sqrt(),
            ScheduleKind::Power => self.c * ((k + 1) as f64).powf(-self.alpha),
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub eta: f64,
    /// `E(λ^k) = Σ w_i W₂²(μ_i, λ^k)/2` as estimated by the subsolvers.
    pub objective: f64,
    /// `KL(ρ^k ‖ ρ^{k+1})` under grid quadrature.
    pub kl_step: f64,
    /// Largest value of the averaged normalized potential.
    pub max_potential: f64,
    pub min_potential: f64,
    /// `|Δ Σ ρ^k − 1|`.
    pub normalization_error: f64,
    /// Semi-discrete gradient norm or discrete duality gap, per input.
    pub inner_residuals: Vec<f64>,
    pub wall_ms: f64,
}

/// Per-iteration records plus the domain radius used for the bound checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub radius: f64,
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    /// Descriptions of every invariant violation in the trace.
    pub fn violations(&self) -> Vec<String> {
        self.rows
            .iter()
            .flat_map(|row| row_violations(row, self.radius))
            .collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    /// `min_{k ≤ t} E(λ^k)`.
    pub fn running_min(&self, t: usize) -> f64 {
        self.rows
            .iter()
            .take(t + 1)
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min)
    }
}

fn row_violations(row: &TraceRow, radius: f64) -> Vec<String> {
    let r2 = radius * radius;
    let mut out = Vec::new();
    if row.normalization_error > NORMALIZATION_TOL {
        out.push(format!("k={}: normalization error {:e}", row.k, row.normalization_error));
    }
    let kl_bound = 2.0 * row.eta * row.eta * r2 * r2 + BOUND_SLACK;
    if row.kl_step > kl_bound {
        out.push(format!("k={}: KL step {:e} exceeds {:e}", row.k, row.kl_step, kl_bound));
    }
    if row.max_potential > 2.0 * r2 + BOUND_SLACK {
        out.push(format!("k={}: potential {:e} exceeds 2R² = {:e}", row.k, row.max_potential, 2.0 * r2));
    }
    if row.min_potential < POTENTIAL_FLOOR {
        out.push(format!("k={}: potential minimum {:e} below zero", row.k, row.min_potential));
    }
    out
}

/// Receives trace rows as they are produced.
pub trait TraceSink {
    fn record(&mut self, row: &TraceRow);
}

impl<F: FnMut(&TraceRow)> TraceSink for F {
    fn record(&mut self, row: &TraceRow) {
        self(row)
    }
}

pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _row: &TraceRow) {}
}

/// How Gaussian inputs enter [`objective_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianObjective {
    /// Sampled atoms through the semi-discrete solver.
    #[default]
    Sampled,
    /// Closed-form Bures cost against the moment-matched Gaussian of `ρ`.
    MomentMatchedBures,
}

#[derive(Debug, Clone)]
pub struct FrbaryOptions {
    pub inner: SolverOptions,
    /// Atoms drawn per Gaussian input.
    pub gaussian_samples: usize,
    pub seed: u64,
    /// Abort on invariant violations instead of logging them.
    pub strict: bool,
    /// Keep the density of the best iterate.
    pub store_best: bool,
    pub gaussian_objective: GaussianObjective,
}

impl Default for FrbaryOptions {
    fn default() -> Self {
        Self {
            inner: SolverOptions::default(),
            gaussian_samples: 2000,
            seed: 0,
            strict: false,
            store_best: false,
            gaussian_objective: GaussianObjective::Sampled,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    /// Final iterate `ρ^{T+1}`.
    pub density: GridDensity,
    pub trace: RunTrace,
    pub best_k: usize,
    pub best_objective: f64,
    /// `ρ^{best_k}` when requested.
    pub best_density: Option<GridDensity>,
}

/// `Σ w_i φ_i` pointwise.
pub fn averaged_potential(potentials: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let first = potentials
        .first()
        .ok_or_else(|| Error::InvalidMeasure("no potentials".into()))?;
    if potentials.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: potentials.len(),
            found: weights.len(),
        });
    }
    if potentials.iter().any(|p| p.len() != first.len()) {
        return Err(Error::GridMismatch);
    }
    let mut out = vec![0.0; first.len()];
    for (p, &w) in potentials.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// `log ρ⁺ = log ρ − η φ̄`, renormalized; also returns `KL(ρ ‖ ρ⁺)`.
pub fn mirror_step(rho: &GridDensity, phi_bar: &[f64], eta: f64) -> Result<(GridDensity, f64)> {
    if phi_bar.len() != rho.grid().len() {
        return Err(Error::GridMismatch);
    }
    let next: Vec<f64> = rho
        .log_values()
        .iter()
        .zip(phi_bar)
        .map(|(l, p)| l - eta * p)
        .collect();
    let next = GridDensity::from_log_values(rho.grid().clone(), next)?;
    let delta = rho.grid().cell_volume();
    let kl = rho
        .log_values()
        .iter()
        .zip(next.log_values())
        .map(|(a, b)| delta * a.exp() * (a - b))
        .sum::<f64>();
    Ok((next, kl))
}

/// An input converted to what the subsolvers consume.
#[derive(Debug, Clone)]
enum Prepared {
    Points {
        atoms: DiscreteMeasure,
        warm: Option<PotentialVector>,
        step: Option<f64>,
    },
    Cells {
        target: DiscreteMeasure,
    },
    /// Only used by the closed-form objective.
    Gaussian(GaussianMeasure),
}

/// Draws `n` samples of `g` restricted to the grid's box (rejection).
pub fn sample_gaussian_in_box(g: &GaussianMeasure, grid: &RegularGrid, n: usize, seed: u64, stream: u64) -> Result<DiscreteMeasure> {
    let d = g.dim();
    let chol = nalgebra::Cholesky::new(g.cov().matrix().clone())
        .ok_or_else(|| Error::NotSpd("covariance has no Cholesky factor".into()))?;
    let l = chol.l();
    let mut rng = substream(seed, stream);
    let mut points = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut accepted = 0;
    let mut tries = 0usize;
    while accepted < n {
        tries += 1;
        if tries > 1000 * n + 10_000 {
            return Err(Error::InvalidMeasure("Gaussian has negligible mass inside the domain".into()));
        }
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for a in 0..d {
            x[a] = g.mean()[a] + (0..=a).map(|b| l[(a, b)] * z[b]).sum::<f64>();
        }
        if grid.domain().contains(&x) {
            points.extend_from_slice(&x);
            accepted += 1;
        }
    }
    DiscreteMeasure::uniform(d, points)
}

/// Cell masses of a piecewise-constant density `f` sampled at the centers of
/// `grid`, as a histogram on that grid.
fn resample(grid: &RegularGrid, f: impl Fn(&[f64]) -> f64) -> Result<GridHistogram> {
    let d = grid.dim();
    let weights = grid.nodes().chunks_exact(d).map(f).collect();
    GridHistogram::from_unnormalized(grid.clone(), weights)
}

fn prepare(inputs: &[InputMeasure], grid: &RegularGrid, opts: &FrbaryOptions, keep_gaussians: bool) -> Result<Vec<Prepared>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            if input.measure.dim() != grid.dim() {
                return Err(Error::DimensionMismatch {
                    expected: grid.dim(),
                    found: input.measure.dim(),
                });
            }
            Ok(match &input.measure {
                MeasureKind::Discrete(m) => {
                    m.check_inside(grid.domain())?;
                    Prepared::Points {
                        atoms: m.clone(),
                        warm: None,
                        step: None,
                    }
                }
                MeasureKind::Histogram(h) => {
                    let hist = if h.grid() == grid {
                        h.clone()
                    } else {
                        let vol = h.grid().cell_volume();
                        resample(grid, |y| h.grid().cell_of(y).map_or(0.0, |j| h.weights()[j] / vol))?
                    };
                    Prepared::Cells {
                        target: hist.to_discrete(HISTOGRAM_MIN_WEIGHT)?,
                    }
                }
                MeasureKind::Density(g) => {
                    let hist = if g.grid() == grid {
                        g.to_histogram()
                    } else {
                        resample(grid, |y| g.density_at(y))?
                    };
                    Prepared::Cells {
                        target: hist.to_discrete(HISTOGRAM_MIN_WEIGHT)?,
                    }
                }
                MeasureKind::Gaussian(g) if keep_gaussians => Prepared::Gaussian(g.clone()),
                MeasureKind::Gaussian(g) => Prepared::Points {
                    atoms: sample_gaussian_in_box(g, grid, opts.gaussian_samples, opts.seed, i as u64)?,
                    warm: None,
                    step: None,
                },
            })
        })
        .collect()
}

/// Grid potential (minimum zero), transport estimate `W₂²/2`, and residual.
struct InputPotential {
    values: Vec<f64>,
    half_cost: f64,
    residual: f64,
}

fn input_potential(prepared: &mut Prepared, rho: &GridDensity, inner: &SolverOptions) -> Result<InputPotential> {
    match prepared {
        Prepared::Points { atoms, warm, step } => {
            let mut opts = inner.clone();
            if opts.initial_step.is_none() {
                opts.initial_step = *step;
            }
            let sol = solve_semidiscrete_lenient(atoms, rho, &opts, warm.as_ref())?;
            *step = Some(sol.step);
            *warm = Some(sol.phi.clone());
            Ok(InputPotential {
                values: sol.c_transform.values,
                half_cost: sol.dual_value,
                residual: sol.grad_norm,
            })
        }
        Prepared::Cells { target } => {
            let source = rho.to_discrete();
            let opts = DiscreteOtOptions {
                min_weight: 0.0,
                ..Default::default()
            };
            let sol = solve_discrete_with(&source, target, &opts)?;
            if sol.source.len() != rho.grid().len() {
                return Err(Error::GridMismatch);
            }
            let residual = sol.duality_gap();
            Ok(InputPotential {
                half_cost: sol.plan.cost,
                values: sol.duals.phi,
                residual,
            })
        }
        Prepared::Gaussian(g) => {
            let (mean, cov) = rho.moments();
            let cov = crate::gaussian::SpdMatrix::new(cov)?;
            let surrogate = GaussianMeasure::new(mean, cov)?;
            let bw = bures_wasserstein_distance(&surrogate, g)?;
            Ok(InputPotential {
                values: vec![0.0; rho.grid().len()],
                half_cost: 0.5 * bw * bw,
                residual: 0.0,
            })
        }
    }
}

fn all_potentials(prepared: &mut [Prepared], rho: &GridDensity, inner: &SolverOptions, iteration: usize) -> Result<Vec<InputPotential>> {
    prepared
        .par_iter_mut()
        .enumerate()
        .map(|(input, p)| {
            input_potential(p, rho, inner).map_err(|e| Error::Subsolver {
                input,
                iteration,
                source: Box::new(e),
            })
        })
        .collect()
}

/// `E(ρ) = Σ w_i W₂²(μ_i, ρ)/2` from cold-started subsolves.
pub fn objective_estimate(rho: &GridDensity, inputs: &[InputMeasure], opts: &FrbaryOptions) -> Result<f64> {
    check_input_weights(inputs)?;
    let keep = opts.gaussian_objective == GaussianObjective::MomentMatchedBures;
    let mut prepared = prepare(inputs, rho.grid(), opts, keep)?;
    let pots = all_potentials(&mut prepared, rho, &opts.inner, 0)?;
    Ok(pots
        .iter()
        .zip(inputs)
        .map(|(p, input)| input.weight * p.half_cost)
        .sum())
}

/// Runs `k = 0, …, T` mirror steps from `initial`, streaming one trace row
/// per iteration to `sink`.
pub fn run_frbary(
    inputs: &[InputMeasure],
    initial: GridDensity,
    schedule: &Schedule,
    opts: &FrbaryOptions,
    sink: &mut dyn TraceSink,
) -> Result<BarycenterResult> {
    check_input_weights(inputs)?;
    let grid = initial.grid().clone();
    let weights: Vec<f64> = inputs.iter().map(|m| m.weight).collect();
    let mut prepared = prepare(inputs, &grid, opts, false)?;
    let radius = grid.domain().radius();
    let mut trace = RunTrace {
        radius,
        rows: Vec::with_capacity(schedule.iterations + 1),
    };
    let mut rho = initial;
    let mut best: Option<(usize, f64, Option<GridDensity>)> = None;

    for k in 0..=schedule.iterations {
        let started = Instant::now();
        let eta = schedule.eta(k);
        let pots = all_potentials(&mut prepared, &rho, &opts.inner, k)?;
        let objective: f64 = pots.iter().zip(&weights).map(|(p, w)| w * p.half_cost).sum();
        let slices: Vec<&[f64]> = pots.iter().map(|p| p.values.as_slice()).collect();
        let phi_bar = averaged_potential(&slices, &weights)?;
        let (min_potential, max_potential) = phi_bar
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let normalization_error = rho.normalization_error();

        let (next, kl_step) = mirror_step(&rho, &phi_bar, eta).map_err(|e| match e {
            Error::NonFiniteLogDensity { .. } => Error::NonFiniteUpdate { iteration: k },
            other => other,
        })?;

        let row = TraceRow {
            k,
            eta,
            objective,
            kl_step,
            max_potential,
            min_potential,
            normalization_error,
            inner_residuals: pots.iter().map(|p| p.residual).collect(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        for what in row_violations(&row, radius) {
            if opts.strict {
                return Err(Error::InvariantViolation { iteration: k, what });
            }
            log::warn!("{what}");
        }
        sink.record(&row);

        if best.as_ref().is_none_or(|(_, b, _)| objective < *b) {
            best = Some((k, objective, opts.store_best.then(|| rho.clone())));
        }
        let initial_objective = trace.rows.first().map_or(objective, |r| r.objective);
        trace.rows.push(row);
        if initial_objective > 0.0 && objective - initial_objective > 10.0 * initial_objective {
            return Err(Error::Diverged {
                iteration: k,
                value: objective,
                initial: initial_objective,
            });
        }
        rho = next;
    }

    let (best_k, best_objective, best_density) = best.expect("at least one iteration");
    Ok(BarycenterResult {
        density: rho,
        trace,
        best_k,
        best_objective,
        best_density,
    })
}
