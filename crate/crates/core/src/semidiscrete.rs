//! Semi-discrete optimal transport between a discrete measure
//! `μ̂ = Σ u_i δ_{x_i}` and a grid density `ν`.
//!
//! The dual objective is
//!
//! ```text
//! I(φ) = Σ_i u_i φ_i + Σ_j Δ ρ_j φᶜ(y_j),   φᶜ(y) = min_i ‖y − x_i‖²/2 − φ_i
//! ```
//!
//! with the integral replaced by midpoint quadrature over the cell centers
//! `y_j`. Each node is assigned to its Laguerre cell (ties go to the lowest
//! atom index), and `∂I/∂φ_i = u_i − ν(L_i(φ))` is exact for the quadrature
//! objective away from ties. The maximizer is found by gradient ascent with a
//! halving line search.


use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{transport_map_matrix, SpdMatrix};
use crate::measures::{DiscreteMeasure, GridDensity, RegularGrid};
use crate::power::{grid_c_transform, shifted_cost, slope_order};

/// One potential per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialVector(pub Vec<f64>);

impl PotentialVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v + c).collect())
    }
}

/// `φᶜ` at every grid node together with the attaining atom.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPotential {
    pub values: Vec<f64>,
    pub assignment: Vec<usize>,
}

impl GridPotential {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Stop once `max_i |u_i − ν(L_i)|` falls to this value.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Line search gives up below this step.
    pub min_step: f64,
    /// Heavy-ball coefficient; zero disables momentum.
    pub momentum: f64,
    /// First trial multiplier of the scaled gradient; 1 when `None`.
    pub initial_step: Option<f64>,
    pub scaling: StepScaling,
    pub cold_start: ColdStart,
}

/// Starting potentials when no warm start is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColdStart {
    Zero,
    /// Potentials of the affine map between the moment-matched Gaussians of
    /// the grid density and the atoms; a translation when either covariance
    /// is degenerate.
    #[default]
    Moments,
}

/// Per-atom scale applied to the gradient before the line search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScaling {
    /// One scale for all atoms, `1/(2d ρ_max h^{d−2})` with `h` the mean
    /// atom spacing at the peak density.
    Uniform,
    /// `1/(2d ρ̄_i h_i^{d−2})` from the current cell of each atom: `ρ̄_i` its
    /// mean density and `h_i = (u_i/ρ̄_i)^{1/d}`. This is the inverse of the
    /// mass sensitivity of a roughly isotropic cell.
    #[default]
    LocalDensity,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-6,
            max_iters: 500,
            min_step: 1e-12,
            momentum: 0.0,
            initial_step: None,
            scaling: StepScaling::default(),
            cold_start: ColdStart::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemiDiscreteSolution {
    /// Atom potentials, shifted so that `min_j φᶜ(y_j) = 0`.
    pub phi: PotentialVector,
    pub c_transform: GridPotential,
    /// `I(φ)`, the estimate of `W₂²(μ̂, ν)/2`.
    pub dual_value: f64,
    pub cell_masses: Vec<f64>,
    /// Accepted ascent steps.
    pub iterations: usize,
    pub grad_norm: f64,
    /// Last accepted (or tried) step length, reusable as a warm start.
    pub step: f64,
}

fn check_compatible(atoms: &DiscreteMeasure, grid: &RegularGrid) -> Result<()> {
    if atoms.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: atoms.dim(),
        });
    }
    Ok(())
}

/// Reference `O(mM)` sweep.
pub fn c_transform_brute(phi: &PotentialVector, atoms: &DiscreteMeasure, grid: &RegularGrid) -> Result<GridPotential> {
    check_compatible(atoms, grid)?;
    if phi.len() != atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: atoms.len(),
            found: phi.len(),
        });
    }
    let d = grid.dim();
    let nodes = grid.nodes();
    let mut values = Vec::with_capacity(grid.len());
    let mut assignment = Vec::with_capacity(grid.len());
    for y in nodes.chunks_exact(d) {
        let mut best = (f64::INFINITY, 0);
        for i in 0..atoms.len() {
            let v = shifted_cost(y, atoms.point(i), phi.0[i]);
            if v < best.0 {
                best = (v, i);
            }
        }
        values.push(best.0);
        assignment.push(best.1);
    }
    Ok(GridPotential { values, assignment })
}

/// `φᶜ(y_j) = min_i ‖y_j − x_i‖²/2 − φ_i` at every cell center, ties broken
/// by the lowest atom index.
pub fn c_transform(phi: &PotentialVector, atoms: &DiscreteMeasure, grid: &RegularGrid) -> Result<GridPotential> {
    check_compatible(atoms, grid)?;
    if phi.len() != atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: atoms.len(),
            found: phi.len(),
        });
    }
    let order = slope_order(grid.dim(), atoms.points());
    Ok(c_transform_sorted(&phi.0, atoms, grid, &order))
}

fn c_transform_sorted(phi: &[f64], atoms: &DiscreteMeasure, grid: &RegularGrid, order: &[usize]) -> GridPotential {
    let (values, assignment) = grid_c_transform(grid, atoms.points(), phi, order);
    GridPotential { values, assignment }
}

/// `ν(L_i)` for every atom, summed over nodes in grid order.
pub fn laguerre_masses(ct: &GridPotential, nu: &GridDensity, m: usize) -> Result<Vec<f64>> {
    if ct.values.len() != nu.grid().len() {
        return Err(Error::GridMismatch);
    }
    Ok(accumulate_masses(&ct.assignment, &nu.cell_masses(), m))
}

fn accumulate_masses(assignment: &[usize], node_masses: &[f64], m: usize) -> Vec<f64> {
    let mut masses = vec![0.0; m];
    for (&i, &p) in assignment.iter().zip(node_masses) {
        masses[i] += p;
    }
    masses
}

fn quadrature(values: &[f64], node_masses: &[f64]) -> f64 {
    values.iter().zip(node_masses).map(|(v, p)| v * p).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `I(φ) = Σ u_i φ_i + Σ_j Δ ρ_j φᶜ(y_j)`.
pub fn dual_objective(phi: &PotentialVector, mu_hat: &DiscreteMeasure, nu: &GridDensity) -> Result<f64> {
    let ct = c_transform(phi, mu_hat, nu.grid())?;
    Ok(dot(mu_hat.weights(), &phi.0) + quadrature(&ct.values, &nu.cell_masses()))
}

struct Evaluation {
    ct: GridPotential,
    masses: Vec<f64>,
    counts: Vec<usize>,
    value: f64,
    grad: Vec<f64>,
    grad_norm: f64,
}

struct Problem<'a> {
    atoms: &'a DiscreteMeasure,
    grid: &'a RegularGrid,
    order: Vec<usize>,
    node_masses: Vec<f64>,
}

impl Problem<'_> {
    fn evaluate(&self, phi: &[f64]) -> Evaluation {
        let ct = c_transform_sorted(phi, self.atoms, self.grid, &self.order);
        let masses = accumulate_masses(&ct.assignment, &self.node_masses, self.atoms.len());
        let mut counts = vec![0; self.atoms.len()];
        for &i in &ct.assignment {
            counts[i] += 1;
        }
        let value = dot(self.atoms.weights(), phi) + quadrature(&ct.values, &self.node_masses);
        let grad: Vec<f64> = self.atoms.weights().iter().zip(&masses).map(|(u, m)| u - m).collect();
        let grad_norm = grad.iter().fold(0.0f64, |s, g| s.max(g.abs()));
        Evaluation {
            ct,
            masses,
            counts,
            value,
            grad,
            grad_norm,
        }
    }
}

/// Maximizes the quadrature dual `I` by gradient ascent.
///
/// Duplicate atoms are merged for the solve and share one potential in the
/// result; their Laguerre mass is split in proportion to their weights. The
/// returned potentials are shifted so that the grid minimum of `φᶜ` is zero.
pub fn solve_semidiscrete(
    mu_hat: &DiscreteMeasure,
    nu: &GridDensity,
    opts: &SolverOptions,
    warm_start: Option<&PotentialVector>,
) -> Result<SemiDiscreteSolution> {
    let grid = nu.grid();
    check_compatible(mu_hat, grid)?;
    mu_hat.check_inside(grid.domain())?;
    if let Some(w) = warm_start {
        if w.len() != mu_hat.len() {
            return Err(Error::DimensionMismatch {
                expected: mu_hat.len(),
                found: w.len(),
            });
        }
    }
    let (merged, map) = mu_hat.merge_duplicates();
    let m = merged.len();
    let cold = match opts.cold_start {
        ColdStart::Moments => moment_potentials(&merged, nu),
        ColdStart::Zero => vec![0.0; m],
    };
    let warm = warm_start.map(|w| {
        let mut phi = vec![0.0; m];
        let mut seen = vec![false; m];
        for (i, &k) in map.iter().enumerate() {
            if !seen[k] {
                phi[k] = w.0[i];
                seen[k] = true;
            }
        }
        phi
    });

    let problem = Problem {
        atoms: &merged,
        grid,
        order: slope_order(grid.dim(), merged.points()),
        node_masses: nu.cell_masses(),
    };
    let d = grid.dim() as f64;
    let cell_volume = grid.cell_volume();
    let rho_max = nu.log_values().iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
    let scale_for = |rho: f64, u: f64| {
        let h = (u / rho).powf(1.0 / d);
        1.0 / (2.0 * d * rho * h.powf(d - 2.0))
    };
    // mass-weighted mean density, used for cells that hold no node
    let rho_typical = problem.node_masses.iter().map(|p| p * p).sum::<f64>() / cell_volume;
    let scales = |eval: &Evaluation| -> Vec<f64> {
        match opts.scaling {
            StepScaling::Uniform => {
                let s = scale_for(rho_max, 1.0 / m as f64);
                vec![s; m]
            }
            StepScaling::LocalDensity => (0..m)
                .map(|i| {
                    let rho = if eval.counts[i] > 0 {
                        eval.masses[i] / (eval.counts[i] as f64 * cell_volume)
                    } else {
                        rho_typical
                    };
                    let u = merged.weights()[i].max(f64::MIN_POSITIVE);
                    scale_for(rho.max(1e-3 * rho_max), u)
                })
                .collect(),
        }
    };
    let mut step = opts.initial_step.unwrap_or(1.0);

    // a warm start only helps while the density moves slowly, so keep
    // whichever start has the larger dual value
    let (mut phi, mut current) = {
        let cold_eval = problem.evaluate(&cold);
        match warm {
            Some(w) => {
                let warm_eval = problem.evaluate(&w);
                if warm_eval.value >= cold_eval.value {
                    (w, warm_eval)
                } else {
                    (cold, cold_eval)
                }
            }
            None => (cold, cold_eval),
        }
    };
    let mut previous = phi.clone();
    let mut iterations = 0;
    let mut stalled = false;
    while current.grad_norm > opts.tol_grad && iterations < opts.max_iters {
        let direction: Vec<f64> = scales(&current).iter().zip(&current.grad).map(|(p, g)| p * g).collect();
        let slope = dot(&direction, &current.grad);
        let mut use_momentum = opts.momentum > 0.0 && iterations > 0;
        loop {
            let trial: Vec<f64> = (0..m)
                .map(|i| {
                    let mut v = phi[i] + step * direction[i];
                    if use_momentum {
                        v += opts.momentum * (phi[i] - previous[i]);
                    }
                    v
                })
                .collect();
            let eval = problem.evaluate(&trial);
            if eval.value >= current.value + 1e-4 * step * slope {
                previous = std::mem::replace(&mut phi, trial);
                current = eval;
                iterations += 1;
                step *= 2.0;
                break;
            }
            if use_momentum {
                use_momentum = false;
                continue;
            }
            step *= 0.5;
            if step < opts.min_step {
                stalled = true;
                break;
            }
        }
        if stalled {
            break;
        }
    }

    let solution = finish(&merged, mu_hat, &map, phi, current, iterations, step);
    if stalled {
        return Err(Error::NoProgress {
            min_step: opts.min_step,
            grad_norm: solution.grad_norm,
            solution: Box::new(solution),
        });
    }
    Ok(solution)
}

fn atom_moments(atoms: &DiscreteMeasure) -> (Vec<f64>, DMatrix<f64>) {
    let d = atoms.dim();
    let mut mean = vec![0.0; d];
    for (i, &w) in atoms.weights().iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(atoms.point(i)) {
            *m += w * x;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (i, &w) in atoms.weights().iter().enumerate() {
        let x = atoms.point(i);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    (mean, cov)
}

/// `φ_i = ‖x_i‖²/2 − ⟨x_i, m_ν⟩ − (x_i − m_μ)ᵀ A⁻¹ (x_i − m_μ)/2` where
/// `y ↦ m_μ + A (y − m_ν)` is the optimal map between the two moment-matched
/// Gaussians.
fn moment_potentials(atoms: &DiscreteMeasure, nu: &GridDensity) -> Vec<f64> {
    let (m_nu, cov_nu) = nu.moments();
    let (m_mu, cov_mu) = atom_moments(atoms);
    let translation = || {
        (0..atoms.len())
            .map(|i| atoms.point(i).iter().zip(&m_mu).zip(&m_nu).map(|((x, a), b)| x * (a - b)).sum())
            .collect()
    };
    let inverse_map = (|| {
        let s_nu = SpdMatrix::new(cov_nu).ok()?;
        let s_mu = SpdMatrix::new(cov_mu).ok()?;
        let eig_ratio = s_mu.min_eigenvalue() / s_mu.matrix().trace();
        if eig_ratio < 1e-6 {
            return None;
        }
        transport_map_matrix(&s_nu, &s_mu).ok()?.inverse().into()
    })();
    let Some(a_inv) = inverse_map else {
        return translation();
    };
    let a_inv = a_inv.into_matrix();
    (0..atoms.len())
        .map(|i| {
            let x = atoms.point(i);
            let z = DVector::from_iterator(x.len(), x.iter().zip(&m_mu).map(|(a, b)| a - b));
            let quad = z.dot(&(&a_inv * &z));
            0.5 * x.iter().map(|v| v * v).sum::<f64>() - x.iter().zip(&m_nu).map(|(a, b)| a * b).sum::<f64>() - 0.5 * quad
        })
        .collect()
}

fn finish(
    merged: &DiscreteMeasure,
    original: &DiscreteMeasure,
    map: &[usize],
    mut phi: Vec<f64>,
    mut eval: Evaluation,
    iterations: usize,
    step: f64,
) -> SemiDiscreteSolution {
    // φ ← φ + c lowers φᶜ by c; choose c so the grid minimum is zero
    let shift = eval.ct.min();
    phi.iter_mut().for_each(|v| *v += shift);
    eval.ct.values.iter_mut().for_each(|v| *v -= shift);

    let mut expanded_phi = vec![0.0; original.len()];
    let mut expanded_masses = vec![0.0; original.len()];
    let mut first = vec![usize::MAX; merged.len()];
    for (i, &k) in map.iter().enumerate() {
        expanded_phi[i] = phi[k];
        let share = if merged.weights()[k] > 0.0 {
            original.weights()[i] / merged.weights()[k]
        } else {
            0.0
        };
        expanded_masses[i] = eval.masses[k] * share;
        if first[k] == usize::MAX {
            first[k] = i;
        }
    }
    let assignment = eval.ct.assignment.iter().map(|&k| first[k]).collect();
    SemiDiscreteSolution {
        phi: PotentialVector(expanded_phi),
        c_transform: GridPotential {
            values: eval.ct.values,
            assignment,
        },
        dual_value: eval.value,
        cell_masses: expanded_masses,
        iterations,
        grad_norm: eval.grad_norm,
        step,
    }
}

/// `W₂²(μ̂, ν) ≈ 2 I(φ*)`.
pub fn transport_cost_estimate(sol: &SemiDiscreteSolution) -> f64 {
    2.0 * sol.dual_value
}

/// Solution of a run that may have stalled in the line search: the attached
/// best iterate is returned in that case.
pub fn solve_semidiscrete_lenient(
    mu_hat: &DiscreteMeasure,
    nu: &GridDensity,
    opts: &SolverOptions,
    warm_start: Option<&PotentialVector>,
) -> Result<SemiDiscreteSolution> {
    match solve_semidiscrete(mu_hat, nu, opts, warm_start) {
        Err(Error::NoProgress { solution, .. }) => Ok(*solution),
        other => other,
    }
}
