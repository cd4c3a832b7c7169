//! Closed-form mirror descent for Gaussian inputs and Bures–Wasserstein
//! utilities.
//!
//! For a zero-mean iterate `N(0, S_k)` the Kantorovich potential towards
//! `N(0, Σ_i)` is `½ xᵀ(I − A_{i,k})x` with
//!
//! ```text
//! A_{i,k} = S_k^{-1/2} (S_k^{1/2} Σ_i S_k^{1/2})^{1/2} S_k^{-1/2}
//! ```
//!
//! and the KL-proximal step becomes an additive update of the precision:
//!
//! ```text
//! S_{k+1}^{-1} = S_k^{-1} + η_k (I − Σ_i w_i A_{i,k})
//! ```
//!
//! Means never enter the covariance iteration; the barycenter mean is the
//! weighted average of the input means.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measures::GaussianMeasure;
use crate::mirror::Schedule;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_FLOOR: f64 = 1e-12;

/// Symmetric positive-definite matrix, checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::NotSpd(format!("{}x{} is not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        let scale = 1.0 + m.amax();
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSpd(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let m = symmetrize(m);
        let (eig, _) = symmetric_eigen(&m);
        let min = eig.min();
        if !(min > EIGEN_FLOOR) {
            return Err(Error::NotSpd(format!("smallest eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigen(&self.0).0.min()
    }

    /// `f(A) = V f(Λ) Vᵀ`, symmetrized.
    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let (eig, vecs) = symmetric_eigen(&self.0);
        let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(eig[j]));
        symmetrize(scaled * vecs.transpose())
    }

    pub fn sqrt(&self) -> SpdMatrix {
        SpdMatrix(self.spectral_map(f64::sqrt))
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        SpdMatrix(self.spectral_map(|l| 1.0 / l.sqrt()))
    }

    pub fn inverse(&self) -> SpdMatrix {
        SpdMatrix(self.spectral_map(|l| 1.0 / l))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let total = a.norm_squared();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= 1e-32 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

pub fn spd_sqrt(a: &SpdMatrix) -> SpdMatrix {
    a.sqrt()
}

fn check_same_dim(a: &SpdMatrix, b: &SpdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Linear optimal transport map from `N(0, S)` to `N(0, Σ)`:
/// `S^{-1/2}(S^{1/2} Σ S^{1/2})^{1/2} S^{-1/2}`.
pub fn transport_map_matrix(s: &SpdMatrix, sigma: &SpdMatrix) -> Result<SpdMatrix> {
    check_same_dim(s, sigma)?;
    let root = s.sqrt();
    let inv_root = s.inv_sqrt();
    let inner = SpdMatrix::new(symmetrize(root.matrix() * sigma.matrix() * root.matrix()))?;
    let middle = inner.sqrt();
    SpdMatrix::new(symmetrize(
        inv_root.matrix() * middle.matrix() * inv_root.matrix(),
    ))
}

/// One explicit step on the precision matrix. Fails with
/// [`Error::StepTooLarge`] when the new precision is not safely positive.
pub fn gaussian_mirror_step(
    s: &SpdMatrix,
    sigmas: &[SpdMatrix],
    weights: &[f64],
    eta: f64,
) -> Result<SpdMatrix> {
    if sigmas.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: sigmas.len(),
            found: weights.len(),
        });
    }
    let d = s.dim();
    let mut avg = DMatrix::zeros(d, d);
    for (sigma, &w) in sigmas.iter().zip(weights) {
        avg += transport_map_matrix(s, sigma)?.into_matrix() * w;
    }
    let precision = symmetrize(s.inverse().into_matrix() + (DMatrix::identity(d, d) - avg) * eta);
    let min_eig = symmetric_eigen(&precision).0.min();
    if !(min_eig > EIGEN_FLOOR) {
        return Err(Error::StepTooLarge { min_eig });
    }
    Ok(SpdMatrix(precision).inverse())
}

/// `tr(Σ₁ + Σ₂ − 2(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`, clamped at zero.
/// `tr((T − I) S₁ (T − I))` with `T` the map pushing `N(0, S₁)` to
/// `N(0, S₂)`; unlike the trace formula it does not cancel near zero.
pub fn bures_squared(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64> {
    let t = transport_map_matrix(s1, s2)?;
    let diff = t.matrix() - DMatrix::identity(s1.dim(), s1.dim());
    Ok((&diff * s1.matrix() * &diff).trace().max(0.0))
}

pub fn bures_wasserstein_distance(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    let mean_sq: f64 = g1.mean().iter().zip(g2.mean()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((mean_sq + bures_squared(g1.cov(), g2.cov())?).sqrt())
}

/// `Σ w_i m_i`.
pub fn gaussian_barycenter_mean(means: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let d = means.first().map_or(0, |m| m.len());
    let mut out = vec![0.0; d];
    for (m, &w) in means.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(m.iter()) {
            *o += w * x;
        }
    }
    out
}

/// Residual `‖S − Σ w_i (S^{1/2} Σ_i S^{1/2})^{1/2}‖_F` of the barycenter
/// fixed-point equation.
pub fn barycenter_residual(s: &SpdMatrix, sigmas: &[SpdMatrix], weights: &[f64]) -> Result<f64> {
    let root = s.sqrt();
    let mut sum = DMatrix::zeros(s.dim(), s.dim());
    for (sigma, &w) in sigmas.iter().zip(weights) {
        check_same_dim(s, sigma)?;
        let inner = SpdMatrix::new(symmetrize(root.matrix() * sigma.matrix() * root.matrix()))?;
        sum += inner.sqrt().into_matrix() * w;
    }
    Ok((s.matrix() - sum).norm())
}

/// Barycenter covariance by the fixed-point iteration
/// `S ← S^{-1/2} (Σ w_i (S^{1/2} Σ_i S^{1/2})^{1/2})² S^{-1/2}`,
/// stopped once successive iterates differ by at most `tol` in Frobenius norm.
pub fn gaussian_barycenter_ground_truth(
    sigmas: &[SpdMatrix],
    weights: &[f64],
    tol: f64,
) -> Result<SpdMatrix> {
    const MAX_ITERS: usize = 10_000;
    let first = sigmas
        .first()
        .ok_or_else(|| Error::InvalidMeasure("no covariances".into()))?;
    let d = first.dim();
    let mut avg = DMatrix::zeros(d, d);
    for (sigma, &w) in sigmas.iter().zip(weights) {
        check_same_dim(first, sigma)?;
        avg += sigma.matrix() * w;
    }
    let mut s = SpdMatrix::new(symmetrize(avg))?;
    let mut delta = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let root = s.sqrt();
        let inv_root = s.inv_sqrt();
        let mut sum = DMatrix::zeros(d, d);
        for (sigma, &w) in sigmas.iter().zip(weights) {
            let inner = SpdMatrix::new(symmetrize(root.matrix() * sigma.matrix() * root.matrix()))?;
            sum += inner.sqrt().into_matrix() * w;
        }
        let next = SpdMatrix::new(symmetrize(
            inv_root.matrix() * &sum * &sum * inv_root.matrix(),
        ))?;
        delta = (next.matrix() - s.matrix()).norm();
        s = next;
        if delta <= tol {
            return Ok(s);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERS,
        residual: delta,
    })
}

/// Starting covariance for [`run_gaussian_frbary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianInit {
    #[default]
    Identity,
    /// `Σ w_i Σ_i`.
    ArithmeticMean,
}

#[derive(Debug, Clone)]
pub struct GaussianRun {
    pub covariance: SpdMatrix,
    /// Covariance Bures distance to the ground truth for `S_0, …, S_T`.
    pub bw_trace: Vec<f64>,
    /// Step actually taken at each iteration (after halving).
    pub etas: Vec<f64>,
    pub truth: SpdMatrix,
}

/// Runs `T = schedule.iterations` precision-matrix mirror steps, recording
/// the Bures–Wasserstein distance to the fixed-point ground truth.
pub fn run_gaussian_frbary(
    sigmas: &[SpdMatrix],
    weights: &[f64],
    schedule: &Schedule,
    init: GaussianInit,
) -> Result<GaussianRun> {
    let first = sigmas
        .first()
        .ok_or_else(|| Error::InvalidMeasure("no covariances".into()))?;
    let d = first.dim();
    let truth = gaussian_barycenter_ground_truth(sigmas, weights, 1e-13)?;
    let mut s = match init {
        GaussianInit::Identity => SpdMatrix::identity(d),
        GaussianInit::ArithmeticMean => {
            let mut avg = DMatrix::zeros(d, d);
            for (sigma, &w) in sigmas.iter().zip(weights) {
                avg += sigma.matrix() * w;
            }
            SpdMatrix::new(symmetrize(avg))?
        }
    };
    let mut bw_trace = vec![bures_squared(&s, &truth)?.sqrt()];
    let mut etas = Vec::with_capacity(schedule.iterations);
    for k in 0..schedule.iterations {
        let mut eta = schedule.eta(k);
        let mut halvings = 0;
        let next = loop {
            match gaussian_mirror_step(&s, sigmas, weights, eta) {
                Ok(next) => break next,
                Err(Error::StepTooLarge { min_eig }) if halvings < 60 => {
                    log::info!("iteration {k}: precision eigenvalue {min_eig:e}, halving step {eta}");
                    eta *= 0.5;
                    halvings += 1;
                }
                Err(e) => return Err(e),
            }
        };
        s = next;
        etas.push(eta);
        bw_trace.push(bures_squared(&s, &truth)?.sqrt());
    }
    Ok(GaussianRun {
        covariance: s,
        bw_trace,
        etas,
        truth,
    })
}

/// Random SPD matrix `Q diag(λ) Qᵀ` with eigenvalues drawn uniformly from
/// `[lo, hi]` and `Q` a Haar-random rotation.
pub fn random_spd(d: usize, lo: f64, hi: f64, rng: &mut impl rand::Rng) -> SpdMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    let eig = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    SpdMatrix::new(symmetrize(m)).expect("eigenvalues bounded away from zero")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::ScheduleKind;
    use crate::rng::substream;

    fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm()
    }

    #[test]
    fn sqrt_examples() {
        let id = SpdMatrix::identity(3);
        assert!(frob(spd_sqrt(&id).matrix(), id.matrix()) < 1e-15);
        let d = SpdMatrix::diagonal(&[4.0, 9.0]).unwrap();
        let r = spd_sqrt(&d);
        assert!(frob(r.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))) < 1e-14);
        let mut rng = substream(1, 0);
        for d in [2, 5, 12] {
            let a = random_spd(d, 0.1, 10.0, &mut rng);
            let b = spd_sqrt(&a);
            let res = frob(&(b.matrix() * b.matrix()), a.matrix());
            assert!(res <= 1e-10 * (1.0 + a.matrix().norm()), "residual {res}");
        }
    }

    #[test]
    fn rejects_non_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSpd(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSpd(_))));
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = substream(2, 0);
        let a = random_spd(7, 0.5, 3.0, &mut rng);
        let (eig, v) = symmetric_eigen(a.matrix());
        let rebuilt = &v * DMatrix::from_diagonal(&eig) * v.transpose();
        assert!(frob(&rebuilt, a.matrix()) < 1e-12);
        assert!(frob(&(v.transpose() * &v), &DMatrix::identity(7, 7)) < 1e-12);
        assert!(eig.iter().all(|&l| (0.5 - 1e-12..=3.0 + 1e-12).contains(&l)));
    }

    #[test]
    fn transport_map_examples() {
        let s = SpdMatrix::diagonal(&[1.0, 4.0]).unwrap();
        let sigma = SpdMatrix::diagonal(&[4.0, 1.0]).unwrap();
        let a = transport_map_matrix(&s, &sigma).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        assert!(frob(a.matrix(), &want) < 1e-14);

        let a = transport_map_matrix(&s, &s).unwrap();
        assert!(frob(a.matrix(), &DMatrix::identity(2, 2)) < 1e-13);

        let mut rng = substream(3, 0);
        let sigma = random_spd(4, 0.5, 3.0, &mut rng);
        let a = transport_map_matrix(&SpdMatrix::identity(4), &sigma).unwrap();
        assert!(frob(a.matrix(), sigma.sqrt().matrix()) < 1e-12);
    }

    #[test]
    fn transport_map_conjugacy() {
        let mut rng = substream(4, 0);
        for _ in 0..10 {
            let s = random_spd(5, 0.2, 4.0, &mut rng);
            let sigma = random_spd(5, 0.2, 4.0, &mut rng);
            let a = transport_map_matrix(&s, &sigma).unwrap();
            let asa = a.matrix() * s.matrix() * a.matrix();
            assert!(frob(&asa, sigma.matrix()) <= 1e-8 * sigma.matrix().norm());
            assert!(a.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn mirror_step_examples() {
        let one = SpdMatrix::diagonal(&[1.0]).unwrap();
        let four = SpdMatrix::diagonal(&[4.0]).unwrap();
        let next = gaussian_mirror_step(&one, std::slice::from_ref(&four), &[1.0], 0.1).unwrap();
        assert!((next.matrix()[(0, 0)] - 1.0 / 0.9).abs() < 1e-14);

        let s = SpdMatrix::diagonal(&[2.0, 3.0]).unwrap();
        let same = gaussian_mirror_step(&s, &[s.clone(), s.clone()], &[0.5, 0.5], 0.7).unwrap();
        assert!(frob(same.matrix(), s.matrix()) < 1e-12);
        let unchanged = gaussian_mirror_step(&s, &[four_2d()], &[1.0], 0.0).unwrap();
        assert!(frob(unchanged.matrix(), s.matrix()) < 1e-13);

        // S=1, Σ=4, η=1: precision 1 + (1 - 2) = 0
        assert!(matches!(
            gaussian_mirror_step(&one, &[four], &[1.0], 1.0),
            Err(Error::StepTooLarge { .. })
        ));
    }

    fn four_2d() -> SpdMatrix {
        SpdMatrix::diagonal(&[4.0, 4.0]).unwrap()
    }

    #[test]
    fn bures_examples() {
        let g = |m: Vec<f64>, c: &[f64]| GaussianMeasure::new(m, SpdMatrix::diagonal(c).unwrap()).unwrap();
        let a = g(vec![0.0, 1.0], &[1.0, 2.0]);
        assert!(bures_wasserstein_distance(&a, &a).unwrap() < 1e-12);
        let b = g(vec![3.0, 5.0], &[1.0, 2.0]);
        assert!((bures_wasserstein_distance(&a, &b).unwrap() - 5.0).abs() < 1e-9);
        // d = 1 is not a valid domain dimension but the metric is dimension-free
        let s1 = SpdMatrix::diagonal(&[1.0]).unwrap();
        let s4 = SpdMatrix::diagonal(&[4.0]).unwrap();
        assert!((bures_squared(&s1, &s4).unwrap().sqrt() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ground_truth_examples() {
        let s = SpdMatrix::diagonal(&[2.0, 0.5]).unwrap();
        let t = gaussian_barycenter_ground_truth(&[s.clone(), s.clone()], &[0.3, 0.7], 1e-12).unwrap();
        assert!(frob(t.matrix(), s.matrix()) < 1e-12);

        let a = SpdMatrix::diagonal(&[1.0, 9.0]).unwrap();
        let b = SpdMatrix::diagonal(&[4.0, 1.0]).unwrap();
        let w = [0.25, 0.75];
        let t = gaussian_barycenter_ground_truth(&[a, b], &w, 1e-13).unwrap();
        let want0 = (0.25 * 1.0 + 0.75 * 2.0f64).powi(2);
        let want1 = (0.25 * 3.0 + 0.75 * 1.0f64).powi(2);
        assert!((t.matrix()[(0, 0)] - want0).abs() < 1e-11);
        assert!((t.matrix()[(1, 1)] - want1).abs() < 1e-11);

        let mut rng = substream(5, 0);
        let sig = vec![random_spd(2, 0.5, 3.0, &mut rng), random_spd(2, 0.5, 3.0, &mut rng)];
        let t = gaussian_barycenter_ground_truth(&sig, &[0.5, 0.5], 1e-12).unwrap();
        assert!(barycenter_residual(&t, &sig, &[0.5, 0.5]).unwrap() <= 1e-10);
    }

    #[test]
    fn ground_truth_is_mirror_fixed_point() {
        let mut rng = substream(6, 0);
        let sig: Vec<_> = (0..4).map(|_| random_spd(3, 0.5, 3.0, &mut rng)).collect();
        let w = [0.1, 0.2, 0.3, 0.4];
        let t = gaussian_barycenter_ground_truth(&sig, &w, 1e-14).unwrap();
        let next = gaussian_mirror_step(&t, &sig, &w, 0.5).unwrap();
        assert!(frob(next.matrix(), t.matrix()) < 1e-8);
    }

    #[test]
    fn identical_inputs_converge_immediately_from_their_mean() {
        let s = SpdMatrix::diagonal(&[2.0, 0.7, 1.3]).unwrap();
        let schedule = Schedule::new(ScheduleKind::ConstantOverSqrtT, 1.0, 0.0, 10).unwrap();
        let run = run_gaussian_frbary(&[s.clone(), s.clone()], &[0.5, 0.5], &schedule, GaussianInit::ArithmeticMean).unwrap();
        assert!(run.bw_trace.iter().all(|&b| b < 1e-7));
    }

    #[test]
    fn step_halving_recovers() {
        let big = SpdMatrix::diagonal(&[9.0, 9.0]).unwrap();
        let schedule = Schedule::new(ScheduleKind::Power, 5.0, 0.0, 3).unwrap();
        let run = run_gaussian_frbary(&[big], &[1.0], &schedule, GaussianInit::Identity).unwrap();
        assert!(run.etas[0] < 5.0);
        assert!(run.covariance.min_eigenvalue() > 0.0);
    }

    #[test]
    fn converges_with_burn_in_monotone_tail() {
        let mut rng = substream(7, 0);
        let sig: Vec<_> = (0..10).map(|_| random_spd(5, 0.5, 3.0, &mut rng)).collect();
        let w = vec![0.1; 10];
        let schedule = Schedule::new(ScheduleKind::Power, 0.5, 0.0, 500).unwrap();
        let run = run_gaussian_frbary(&sig, &w, &schedule, GaussianInit::Identity).unwrap();
        assert!(*run.bw_trace.last().unwrap() <= 1e-6);
        let tail = &run.bw_trace[20..];
        for pair in tail.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{pair:?}");
        }
    }
}
