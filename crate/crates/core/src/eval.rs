//! Sampling from grid densities and sample-based evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{GaussianMeasure, GridDensity};
use crate::rng::substream;

/// `N` points in `d` dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    points: Vec<f64>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(dim: usize, points: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not split into points of dimension {dim}",
                points.len()
            )));
        }
        Ok(Self { dim, points, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn translated(&self, t: &[f64]) -> Self {
        let points = self
            .points
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(t).map(|(a, b)| a + b))
            .collect();
        Self { points, ..self.clone() }
    }
}

/// Exact draws from the piecewise-constant density: a cell by mass, then a
/// uniform point inside it.
pub fn rejection_sample(rho: &GridDensity, n: usize, seed: u64) -> SampleSet {
    let grid = rho.grid();
    let d = grid.dim();
    let mut cdf = rho.cell_masses();
    let mut acc = 0.0;
    for c in cdf.iter_mut() {
        acc += *c;
        *c = acc;
    }
    let widths = grid.widths().to_vec();
    let mut rng = substream(seed, 0);
    let mut points = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let j = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let lo = grid.cell_lo(j);
        for a in 0..d {
            let t: f64 = rng.random();
            points.push((lo[a] + t * widths[a]).min(grid.domain().hi()[a]));
        }
    }
    SampleSet {
        dim: d,
        points,
        seed,
    }
}

/// Per-cell counts of `samples` on `rho`'s grid and the Pearson statistic
/// against the cell masses. Cells of zero mass are skipped.
pub fn chi_square_occupancy(rho: &GridDensity, samples: &SampleSet) -> (Vec<usize>, f64) {
    let grid = rho.grid();
    let mut counts = vec![0usize; grid.len()];
    for p in samples.points.chunks_exact(samples.dim) {
        if let Some(j) = grid.cell_of(p) {
            counts[j] += 1;
        }
    }
    let n = samples.len() as f64;
    let stat = counts
        .iter()
        .zip(rho.cell_masses())
        .filter(|(_, p)| *p > 0.0)
        .map(|(&c, p)| {
            let e = n * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    (counts, stat)
}

/// Sample mean and unbiased covariance.
pub fn empirical_moments(s: &SampleSet) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = s.len();
    if n < 2 {
        return Err(Error::InvalidMeasure("need at least two samples".into()));
    }
    let d = s.dim;
    // shifted by the first sample so identical points give exactly zero
    let origin = s.point(0);
    let mut shifted_mean = vec![0.0; d];
    for p in s.points.chunks_exact(d) {
        for a in 0..d {
            shifted_mean[a] += p[a] - origin[a];
        }
    }
    shifted_mean.iter_mut().for_each(|m| *m /= n as f64);
    let mean: Vec<f64> = shifted_mean.iter().zip(origin).map(|(m, o)| m + o).collect();
    let mut cov = DMatrix::zeros(d, d);
    for p in s.points.chunks_exact(d) {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (p[a] - origin[a] - shifted_mean[a]) * (p[b] - origin[b] - shifted_mean[b]);
            }
        }
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// i.i.d. draws from `g` on all of ℝ^d.
pub fn sample_gaussian(g: &GaussianMeasure, n: usize, seed: u64) -> Result<SampleSet> {
    let d = g.dim();
    let l = nalgebra::Cholesky::new(g.cov().matrix().clone())
        .ok_or_else(|| Error::NotSpd("covariance has no Cholesky factor".into()))?
        .l();
    let mut rng = substream(seed, 0);
    let mut points = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let x = &l * z;
        points.extend(x.iter().zip(g.mean()).map(|(a, b)| a + b));
    }
    SampleSet::new(d, points, seed)
}

/// `n_proj` directions uniform on the sphere, one substream each.
pub fn random_directions(dim: usize, n_proj: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n_proj)
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect()
}

fn sorted_projection(s: &SampleSet, theta: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = s
        .points
        .chunks_exact(s.dim)
        .map(|x| x.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// 1D `W₂` between sorted samples with uniform weights. Equal counts pair
/// order statistics; otherwise the quantile functions are integrated exactly.
fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        return (s / a.len() as f64).sqrt();
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut t = 0.0;
    let mut s = 0.0;
    while i < a.len() && j < b.len() {
        let next = ((i + 1) as f64 / na).min((j + 1) as f64 / nb);
        s += (next - t) * (a[i] - b[j]).powi(2);
        t = next;
        if (i + 1) as f64 / na <= next {
            i += 1;
        }
        if (j + 1) as f64 / nb <= next {
            j += 1;
        }
    }
    s.sqrt()
}

/// Sliced `W₂` averaged over the given unit directions.
pub fn sliced_wasserstein_with(a: &SampleSet, b: &SampleSet, directions: &[Vec<f64>]) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    if a.is_empty() || b.is_empty() || directions.is_empty() {
        return Err(Error::InvalidMeasure("empty sample set or no projections".into()));
    }
    let per: Vec<f64> = directions
        .par_iter()
        .map(|theta| w2_sorted(&sorted_projection(a, theta), &sorted_projection(b, theta)))
        .collect();
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub fn sliced_wasserstein(a: &SampleSet, b: &SampleSet, n_proj: usize, seed: u64) -> Result<f64> {
    sliced_wasserstein_with(a, b, &random_directions(a.dim, n_proj, seed))
}

/// Mean error `‖m̂ − m‖₂` and covariance error `‖Ĉ − C‖_F` of `n` samples
/// from `rho` against `truth`.
pub fn grid_w2_to_gaussian_truth(rho: &GridDensity, truth: &GaussianMeasure, n: usize, seed: u64) -> Result<(f64, f64)> {
    let s = rejection_sample(rho, n, seed);
    moment_errors(&s, truth)
}

pub fn moment_errors(s: &SampleSet, truth: &GaussianMeasure) -> Result<(f64, f64)> {
    let (mean, cov) = empirical_moments(s)?;
    let mean_err = mean
        .iter()
        .zip(truth.mean())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let cov_err = (cov - truth.cov().matrix()).norm();
    Ok((mean_err, cov_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::SpdMatrix;
    use crate::measures::{BoxDomain, RegularGrid};
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn unit_grid(n: usize) -> RegularGrid {
        RegularGrid::new(BoxDomain::unit(2).unwrap(), vec![n, n]).unwrap()
    }

    #[test]
    fn uniform_occupancy_passes_chi_square() {
        let rho = GridDensity::uniform(unit_grid(4));
        let s = rejection_sample(&rho, 100_000, 11);
        let (_, stat) = chi_square_occupancy(&rho, &s);
        let q = ChiSquared::new(15.0).unwrap().inverse_cdf(0.99);
        assert!(stat < q, "{stat} vs {q}");
        assert!(s.points().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn nonuniform_occupancy_passes_chi_square() {
        let rho = GridDensity::from_log_fn(unit_grid(6), |y| 3.0 * y[0] - 2.0 * y[1] * y[1]).unwrap();
        let s = rejection_sample(&rho, 100_000, 5);
        let (_, stat) = chi_square_occupancy(&rho, &s);
        assert!(stat < ChiSquared::new(35.0).unwrap().inverse_cdf(0.99));
    }

    #[test]
    fn concentrated_density_stays_in_its_cell() {
        let g = unit_grid(4);
        let mut logs = vec![-40.0; 16];
        logs[6] = 0.0;
        let rho = GridDensity::from_log_values(g.clone(), logs).unwrap();
        let s = rejection_sample(&rho, 1000, 1);
        assert!(s.points().chunks_exact(2).all(|p| g.cell_of(p) == Some(6)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let rho = GridDensity::from_log_fn(unit_grid(8), |y| y[0]).unwrap();
        assert_eq!(rejection_sample(&rho, 500, 9), rejection_sample(&rho, 500, 9));
        assert_ne!(rejection_sample(&rho, 500, 9), rejection_sample(&rho, 500, 10));
    }

    #[test]
    fn moment_examples() {
        let same = SampleSet::new(2, vec![0.3, 0.1, 0.3, 0.1, 0.3, 0.1], 0).unwrap();
        let (_, cov) = empirical_moments(&same).unwrap();
        assert_eq!(cov.norm(), 0.0);
        let two = SampleSet::new(2, vec![0.0, 0.0, 2.0, 0.0], 0).unwrap();
        let (m, cov) = empirical_moments(&two).unwrap();
        assert_eq!(m, vec![1.0, 0.0]);
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn gaussian_sample_moments_within_clt_bands() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let g = GaussianMeasure::new(vec![1.0, -2.0], SpdMatrix::new(cov.clone()).unwrap()).unwrap();
        let n = 100_000;
        let s = sample_gaussian(&g, n, 4).unwrap();
        let (m, c) = empirical_moments(&s).unwrap();
        let se = 3.0 / (n as f64).sqrt();
        assert!((m[0] - 1.0).abs() < se * 1.0);
        assert!((m[1] + 2.0).abs() < se * 0.5f64.sqrt());
        // var of a sample covariance entry is (σ_aa σ_bb + σ_ab²)/n
        for a in 0..2 {
            for b in 0..2 {
                let sd = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / n as f64).sqrt();
                assert!((c[(a, b)] - cov[(a, b)]).abs() < 3.0 * sd);
            }
        }
    }

    #[test]
    fn grid_sample_moments_match_quadrature() {
        let rho = GridDensity::from_log_fn(unit_grid(16), |y| -4.0 * (y[0] - 0.4).powi(2) - 2.0 * (y[1] - 0.6).powi(2)).unwrap();
        let (qm, qc) = rho.moments();
        let n = 100_000;
        let (m, c) = empirical_moments(&rejection_sample(&rho, n, 2)).unwrap();
        // jitter adds h²/12 per axis to the midpoint-quadrature variance
        let h = 1.0 / 16.0;
        for a in 0..2 {
            let sd = qc[(a, a)].sqrt() / (n as f64).sqrt();
            assert!((m[a] - qm[a]).abs() < 3.0 * sd);
            let want = qc[(a, a)] + h * h / 12.0;
            assert!((c[(a, a)] - want).abs() < 3.0 * want * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn truth_built_density_has_small_errors() {
        let g = RegularGrid::new(BoxDomain::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap(), vec![100, 100]).unwrap();
        let truth = GaussianMeasure::new(vec![0.5, -0.25], SpdMatrix::diagonal(&[1.0, 0.6]).unwrap()).unwrap();
        let rho = truth.discretize(&g).unwrap();
        let (me, ce) = grid_w2_to_gaussian_truth(&rho, &truth, 100_000, 3).unwrap();
        assert!(me < 0.02, "{me}");
        assert!(ce < 0.05, "{ce}");
    }

    #[test]
    fn moment_errors_translation_invariant() {
        let truth = GaussianMeasure::new(vec![0.0, 0.0], SpdMatrix::identity(2)).unwrap();
        let s = sample_gaussian(&truth, 2000, 1).unwrap();
        let t = [3.0, -1.0];
        let moved = GaussianMeasure::new(t.to_vec(), SpdMatrix::identity(2)).unwrap();
        let (a, b) = moment_errors(&s, &truth).unwrap();
        let (c, d) = moment_errors(&s.translated(&t), &moved).unwrap();
        assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
    }

    #[test]
    fn swd_examples() {
        let a = SampleSet::new(2, vec![0.0; 20], 0).unwrap();
        let b = SampleSet::new(2, [1.0, 0.0].repeat(10), 0).unwrap();
        assert_eq!(sliced_wasserstein_with(&a, &b, &[vec![1.0, 0.0]]).unwrap(), 1.0);
        let s = sample_gaussian(&GaussianMeasure::new(vec![0.0, 0.0], SpdMatrix::identity(2)).unwrap(), 300, 8).unwrap();
        assert_eq!(sliced_wasserstein(&s, &s, 50, 1).unwrap(), 0.0);
        // E|θ₁| for θ uniform on the circle is 2/π
        let v = sliced_wasserstein(&a, &b, 20_000, 3).unwrap();
        assert!((v - 2.0 / std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn unequal_counts_use_quantiles() {
        let a = SampleSet::new(1, vec![0.0, 1.0], 0).unwrap();
        let b = SampleSet::new(1, vec![0.0, 0.0, 1.0, 1.0], 0).unwrap();
        assert_eq!(sliced_wasserstein_with(&a, &b, &[vec![1.0]]).unwrap(), 0.0);
        let c = SampleSet::new(1, vec![0.0, 0.0, 0.0], 0).unwrap();
        let d = SampleSet::new(1, vec![1.0, 1.0], 0).unwrap();
        assert!((sliced_wasserstein_with(&c, &d, &[vec![1.0]]).unwrap() - 1.0).abs() < 1e-15);
    }

    fn cloud(seed: u64, n: usize) -> SampleSet {
        let g = GaussianMeasure::new(vec![seed as f64 * 0.1, 0.0], SpdMatrix::identity(2)).unwrap();
        sample_gaussian(&g, n, seed).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn swd_is_a_pseudometric(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000, seed in 0u64..100) {
            let (a, b, c) = (cloud(s1, 64), cloud(s2, 64), cloud(s3, 64));
            let dirs = random_directions(2, 1, seed);
            let ab = sliced_wasserstein_with(&a, &b, &dirs).unwrap();
            let ba = sliced_wasserstein_with(&b, &a, &dirs).unwrap();
            let bc = sliced_wasserstein_with(&b, &c, &dirs).unwrap();
            let ac = sliced_wasserstein_with(&a, &c, &dirs).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12);
            // the triangle inequality holds per direction
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
