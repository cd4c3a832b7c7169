//! Domains, grids and the measure types shared by every solver.
//!
//! Grid densities live in log-space and are kept normalized so that
//! `Δ · Σ exp(log ρ_j) = 1`, where `Δ` is the cell volume. Grid nodes are
//! cell centers, so every node is strictly inside the box.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::SpdMatrix;

/// Axis-aligned box `Ω = [lo_1, hi_1] × … × [lo_d, hi_d]` with `d ∈ {2, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidDomain(format!(
                "{} lower bounds but {} upper bounds",
                lo.len(),
                hi.len()
            )));
        }
        if !(2..=3).contains(&lo.len()) {
            return Err(Error::InvalidDomain(format!(
                "dimension {} not supported (2 or 3)",
                lo.len()
            )));
        }
        for (a, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidDomain(format!("axis {a}: need lo < hi, got [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    /// Bounding box of `points` (flat, `dim` per row) grown by `margin` times
    /// the extent on each side. Degenerate axes get a half-width of 0.5 before
    /// the margin is applied.
    pub fn bounding(points: &[f64], dim: usize, margin: f64) -> Result<Self> {
        if points.is_empty() || dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidDomain("no points to bound".into()));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points.chunks_exact(dim) {
            for a in 0..dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..dim {
            if hi[a] - lo[a] <= 1e-12 * (1.0 + lo[a].abs()) {
                lo[a] -= 0.5;
                hi[a] += 0.5;
            }
            let pad = margin * (hi[a] - lo[a]);
            lo[a] -= pad;
            hi[a] += pad;
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// `R = sup_{x ∈ Ω} ‖x‖`, attained at a corner.
    pub fn radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Smallest distance from `x` to the boundary (negative outside).
    pub fn interior_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Exact maximum norm over the corners of the box.
pub fn domain_radius(domain: &BoxDomain) -> f64 {
    domain.radius()
}

/// Regular grid of cells over a [`BoxDomain`], indexed row-major (last axis
/// fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct RegularGrid {
    domain: BoxDomain,
    shape: Vec<usize>,
    widths: Vec<f64>,
}

impl RegularGrid {
    pub fn new(domain: BoxDomain, shape: Vec<usize>) -> Result<Self> {
        if shape.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                found: shape.len(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::EmptyGrid);
        }
        let widths = (0..domain.dim())
            .map(|a| (domain.hi[a] - domain.lo[a]) / shape[a] as f64)
            .collect();
        Ok(Self {
            domain,
            shape,
            widths,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Total node count `M`.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `Δ`.
    pub fn cell_volume(&self) -> f64 {
        self.widths.iter().product()
    }

    pub fn multi_index(&self, mut j: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = j % self.shape[a];
            j /= self.shape[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Center of cell `j`, written into `out`.
    pub fn node_into(&self, j: usize, out: &mut [f64]) {
        let idx = self.multi_index(j);
        for a in 0..self.dim() {
            out[a] = self.domain.lo[a] + (idx[a] as f64 + 0.5) * self.widths[a];
        }
    }

    pub fn node(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_into(j, &mut out);
        out
    }

    /// All cell centers, flat `M × d`.
    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (j, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.node_into(j, chunk);
        }
        out
    }

    /// Cell containing `x`; points on the far boundary belong to the last cell.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut idx = vec![0; self.dim()];
        for a in 0..self.dim() {
            let t = ((x[a] - self.domain.lo[a]) / self.widths[a]).floor();
            idx[a] = (t.max(0.0) as usize).min(self.shape[a] - 1);
        }
        Some(self.flat_index(&idx))
    }

    /// Lower corner of cell `j`.
    pub fn cell_lo(&self, j: usize) -> Vec<f64> {
        let idx = self.multi_index(j);
        (0..self.dim())
            .map(|a| self.domain.lo[a] + idx[a] as f64 * self.widths[a])
            .collect()
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidMeasure(format!("non-finite {what} at index {i}"))),
        None => Ok(()),
    }
}

/// Weighted atoms `Σ u_j δ_{x_j}` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Weights must be nonnegative and sum to one within `1e-12`.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::validate_shape(dim, &points, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn from_unnormalized(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::validate_shape(dim, &points, &weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let m = points.len().checked_div(dim).unwrap_or(0);
        Self::from_unnormalized(dim, points, vec![1.0; m])
    }

    fn validate_shape(dim: usize, points: &[f64], weights: &[f64]) -> Result<()> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not match {} atoms in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        check_finite(points, "coordinate")?;
        check_finite(weights, "weight")?;
        if let Some(i) = weights.iter().position(|&w| w < 0.0) {
            return Err(Error::InvalidMeasure(format!("negative weight at atom {i}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat `m × d` coordinates.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn check_inside(&self, domain: &BoxDomain) -> Result<()> {
        if domain.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                found: self.dim,
            });
        }
        for i in 0..self.len() {
            if !domain.contains(self.point(i)) {
                return Err(Error::InvalidMeasure(format!("atom {i} lies outside the domain")));
            }
        }
        Ok(())
    }

    /// Merges atoms with identical coordinates, summing their weights. Returns
    /// the merged measure and, for every original atom, its merged index.
    /// Merged atoms keep the order of their first occurrence.
    pub fn merge_duplicates(&self) -> (DiscreteMeasure, Vec<usize>) {
        let d = self.dim;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (self.point(a), self.point(b));
            pa.iter()
                .zip(pb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        // representative = first occurrence (smallest original index) in each run
        let mut rep = vec![0usize; self.len()];
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && self.point(order[end]) == self.point(order[start]) {
                end += 1;
            }
            for &i in &order[start..end] {
                rep[i] = order[start];
            }
            start = end;
        }
        let mut merged_index = vec![usize::MAX; self.len()];
        let mut points = Vec::with_capacity(self.points.len());
        let mut weights = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            if rep[i] == i {
                merged_index[i] = weights.len();
                points.extend_from_slice(self.point(i));
                weights.push(0.0);
            }
        }
        for i in 0..self.len() {
            let k = merged_index[rep[i]];
            merged_index[i] = k;
            weights[k] += self.weights[i];
        }
        let merged = DiscreteMeasure {
            dim: d,
            points,
            weights,
        };
        (merged, merged_index)
    }

    pub fn translated(&self, t: &[f64]) -> DiscreteMeasure {
        let mut points = self.points.clone();
        for p in points.chunks_exact_mut(self.dim) {
            for (x, s) in p.iter_mut().zip(t) {
                *x += s;
            }
        }
        DiscreteMeasure {
            dim: self.dim,
            points,
            weights: self.weights.clone(),
        }
    }
}

/// Probability weights on the cells of a [`RegularGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridHistogram {
    grid: RegularGrid,
    weights: Vec<f64>,
}

impl GridHistogram {
    pub fn new(grid: RegularGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: weights.len(),
            });
        }
        check_finite(&weights, "histogram weight")?;
        if let Some(i) = weights.iter().position(|&w| w < 0.0) {
            return Err(Error::InvalidMeasure(format!("negative histogram weight at cell {i}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("histogram sums to {total}, expected 1")));
        }
        Ok(Self { grid, weights })
    }

    pub fn from_unnormalized(grid: RegularGrid, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        Self::new(grid, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cell centers carrying the histogram weights; cells below `min_weight`
    /// are dropped and the rest renormalized.
    pub fn to_discrete(&self, min_weight: f64) -> Result<DiscreteMeasure> {
        let d = self.grid.dim();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut node = vec![0.0; d];
        for (j, &w) in self.weights.iter().enumerate() {
            if w >= min_weight && w > 0.0 {
                self.grid.node_into(j, &mut node);
                points.extend_from_slice(&node);
                weights.push(w);
            }
        }
        DiscreteMeasure::from_unnormalized(d, points, weights)
    }
}

/// In-place `v ← v − lsp(v, Δ)`. Returns the subtracted shift.
pub fn normalize_log_values(values: &mut [f64], cell_volume: f64) -> Result<f64> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogDensity { index });
    }
    let shift = lsp(values, cell_volume)?;
    for v in values.iter_mut() {
        *v -= shift;
    }
    Ok(shift)
}

/// `log Σ_i Δ·exp(v_i)`, computed with a max shift.
pub fn lsp(v: &[f64], cell_volume: f64) -> Result<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln() + cell_volume.ln())
}

/// Strictly positive density on a grid, stored as normalized log-values at
/// the cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: RegularGrid,
    log_values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `log_values` so the density integrates to one.
    pub fn from_log_values(grid: RegularGrid, mut log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: log_values.len(),
            });
        }
        normalize_log_values(&mut log_values, grid.cell_volume())?;
        Ok(Self { grid, log_values })
    }

    /// Like [`from_log_values`](Self::from_log_values), but values already
    /// normalized to within rounding are kept verbatim, so stored densities
    /// read back bit for bit.
    pub fn from_stored_log_values(grid: RegularGrid, log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: log_values.len(),
            });
        }
        if let Some(index) = log_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogDensity { index });
        }
        if lsp(&log_values, grid.cell_volume())?.abs() <= 1e-13 {
            return Ok(Self { grid, log_values });
        }
        Self::from_log_values(grid, log_values)
    }

    pub fn uniform(grid: RegularGrid) -> Self {
        let value = -grid.domain().volume().ln();
        let log_values = vec![value; grid.len()];
        // midpoint cells tile the box exactly, so this is already normalized
        let mut density = Self { grid, log_values };
        let delta = density.grid.cell_volume();
        normalize_log_values(&mut density.log_values, delta).expect("finite uniform density");
        density
    }

    /// Density with `log ρ(y) = f(y) + const` at the cell centers.
    pub fn from_log_fn(grid: RegularGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.dim();
        let nodes = grid.nodes();
        let values = nodes.chunks_exact(d).map(f).collect();
        Self::from_log_values(grid, values)
    }

    /// Normalized density whose cell masses are the given histogram weights.
    /// Every weight must be positive.
    pub fn from_histogram(hist: &GridHistogram) -> Result<Self> {
        let values = hist.weights().iter().map(|w| w.ln()).collect();
        Self::from_log_values(hist.grid().clone(), values)
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn into_log_values(self) -> Vec<f64> {
        self.log_values
    }

    /// `Δ·ρ_j` for every cell.
    pub fn cell_masses(&self) -> Vec<f64> {
        let delta = self.grid.cell_volume();
        self.log_values.iter().map(|v| delta * v.exp()).collect()
    }

    /// `|Δ·Σ ρ_j − 1|`.
    pub fn normalization_error(&self) -> f64 {
        (self.cell_masses().iter().sum::<f64>() - 1.0).abs()
    }

    pub fn to_histogram(&self) -> GridHistogram {
        let masses = self.cell_masses();
        let total: f64 = masses.iter().sum();
        GridHistogram {
            grid: self.grid.clone(),
            weights: masses.into_iter().map(|m| m / total).collect(),
        }
    }

    /// Cell centers weighted by cell masses (all cells kept).
    pub fn to_discrete(&self) -> DiscreteMeasure {
        let masses = self.cell_masses();
        DiscreteMeasure::from_unnormalized(self.grid.dim(), self.grid.nodes(), masses)
            .expect("normalized density has positive mass")
    }

    /// Mean and covariance under grid quadrature.
    pub fn moments(&self) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.grid.dim();
        let masses = self.cell_masses();
        let total: f64 = masses.iter().sum();
        let mut mean = vec![0.0; d];
        let mut node = vec![0.0; d];
        for (j, &m) in masses.iter().enumerate() {
            self.grid.node_into(j, &mut node);
            for a in 0..d {
                mean[a] += m * node[a];
            }
        }
        mean.iter_mut().for_each(|x| *x /= total);
        let mut cov = DMatrix::zeros(d, d);
        for (j, &m) in masses.iter().enumerate() {
            self.grid.node_into(j, &mut node);
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += m * (node[a] - mean[a]) * (node[b] - mean[b]);
                }
            }
        }
        (mean, cov / total)
    }

    /// Piecewise-constant density value at `x`, zero outside the domain.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        self.grid
            .cell_of(x)
            .map_or(0.0, |j| self.log_values[j].exp())
    }
}

/// Convenience wrapper matching the log-space update path: normalize raw
/// log-values on `grid`.
pub fn normalize_log_density(grid: &RegularGrid, log_values: Vec<f64>) -> Result<GridDensity> {
    GridDensity::from_log_values(grid.clone(), log_values)
}

/// Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    cov: SpdMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        check_finite(&mean, "mean")?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// Log-density up to the normalizing constant.
    pub fn unnormalized_log_pdf(&self, x: &[f64]) -> f64 {
        let prec = self.cov.inverse();
        let d = self.dim();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += (x[a] - self.mean[a]) * prec.matrix()[(a, b)] * (x[b] - self.mean[b]);
            }
        }
        -0.5 * q
    }

    /// Density on `grid` proportional to this Gaussian (truncated to the box).
    pub fn discretize(&self, grid: &RegularGrid) -> Result<GridDensity> {
        if grid.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                found: self.dim(),
            });
        }
        let prec = self.cov.inverse().into_matrix();
        let mean = self.mean.clone();
        GridDensity::from_log_fn(grid.clone(), move |x| {
            let diff = nalgebra::DVector::from_iterator(x.len(), x.iter().zip(&mean).map(|(a, b)| a - b));
            -0.5 * diff.dot(&(&prec * &diff))
        })
    }
}

/// The payload of one barycenter input.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    Discrete(DiscreteMeasure),
    Histogram(GridHistogram),
    Density(GridDensity),
    Gaussian(GaussianMeasure),
}

impl MeasureKind {
    pub fn dim(&self) -> usize {
        match self {
            MeasureKind::Discrete(m) => m.dim(),
            MeasureKind::Histogram(h) => h.grid().dim(),
            MeasureKind::Density(g) => g.grid().dim(),
            MeasureKind::Gaussian(g) => g.dim(),
        }
    }
}

/// One input `μ_i` with barycentric weight `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMeasure {
    pub measure: MeasureKind,
    pub weight: f64,
}

impl InputMeasure {
    pub fn new(measure: MeasureKind, weight: f64) -> Self {
        Self { measure, weight }
    }
}

/// Checks `w_i ≥ 0` and `|Σ w_i − 1| ≤ 1e-12`.
pub fn check_input_weights(inputs: &[InputMeasure]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidMeasure("no inputs".into()));
    }
    if let Some(i) = inputs.iter().position(|m| !(m.weight >= 0.0) || !m.weight.is_finite()) {
        return Err(Error::InvalidMeasure(format!("input {i} has invalid weight")));
    }
    let total: f64 = inputs.iter().map(|m| m.weight).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidMeasure(format!("input weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Rescales the input weights to sum to one. Returns `true` if they changed.
pub fn normalize_input_weights(inputs: &mut [InputMeasure]) -> Result<bool> {
    let total: f64 = inputs.iter().map(|m| m.weight).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    if (total - 1.0).abs() <= 1e-12 {
        return Ok(false);
    }
    for m in inputs.iter_mut() {
        m.weight /= total;
    }
    Ok(true)
}
