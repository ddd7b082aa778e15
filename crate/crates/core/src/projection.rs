//! Euclidean projections onto the admissible price set.
//!
//! With the grid cost `ρ(p) = (‖p‖² + λ·pᵀDᵀDp)^{1/2} = ‖p‖_K`, the set of
//! admissible prices is the dual-norm ball `{z : zᵀK⁻¹z ≤ 1}` with
//! `K = I + λDᵀD`, `D` the circular first-difference operator. The ℓ1-ball
//! projection covers the `ρ = ‖·‖∞` case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{symmetric_eigen, Cholesky, SymMatrix};
use crate::scalar::{dot, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("no bisection bracket found after {0} doublings")]
    NoBracket(usize),
    #[error("metric matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("vector has length {got}, metric dimension is {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("negative variation weight {0}")]
    NegativeLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct MetricSpec {
    dim: usize,
    lambda: f64,
}

/// `K = I + λDᵀD` together with its Cholesky factor and eigen-decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MetricSpec", into = "MetricSpec")]
pub struct SmoothnessMetric<T: Real> {
    dim: usize,
    lambda: T,
    k: SymMatrix<T>,
    chol: Cholesky<T>,
    eigvals: Vec<T>,
    eigvecs: Vec<T>,
}

impl<T: Real> PartialEq for SmoothnessMetric<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.lambda == other.lambda
    }
}

impl<T: Real> TryFrom<MetricSpec> for SmoothnessMetric<T> {
    type Error = ProjectionError;
    fn try_from(s: MetricSpec) -> Result<Self, Self::Error> {
        Self::new(s.dim, T::lit(s.lambda))
    }
}

impl<T: Real> From<SmoothnessMetric<T>> for MetricSpec {
    fn from(m: SmoothnessMetric<T>) -> Self {
        MetricSpec { dim: m.dim, lambda: m.lambda.as_f64() }
    }
}

/// Circular first-difference operator as a dense row-major `d × d` matrix:
/// row `j < d-1` is `e_{j+1} - e_j`, the last row is `e_0 - e_{d-1}`.
pub fn circular_difference<T: Real>(d: usize) -> Vec<T> {
    let mut m = vec![T::zero(); d * d];
    for j in 0..d {
        let next = (j + 1) % d;
        m[j * d + next] += T::one();
        m[j * d + j] -= T::one();
    }
    m
}

impl<T: Real> SmoothnessMetric<T> {
    pub fn new(dim: usize, lambda: T) -> Result<Self, ProjectionError> {
        if lambda < T::zero() {
            return Err(ProjectionError::NegativeLambda(lambda.as_f64()));
        }
        let d = circular_difference::<T>(dim);
        let mut k = SymMatrix::identity(dim);
        for i in 0..dim {
            for j in 0..dim {
                let dtd: T = (0..dim).map(|r| d[r * dim + i] * d[r * dim + j]).sum();
                k.data[i * dim + j] += lambda * dtd;
            }
        }
        let chol = Cholesky::factor(&k).ok_or(ProjectionError::NotPositiveDefinite)?;
        let (eigvals, eigvecs) = symmetric_eigen(&k);
        if eigvals.iter().any(|&v| !(v > T::zero())) {
            return Err(ProjectionError::NotPositiveDefinite);
        }
        Ok(Self { dim, lambda, k, chol, eigvals, eigvecs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn matrix(&self) -> &SymMatrix<T> {
        &self.k
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigvals
    }

    pub fn apply_k_inv(&self, z: &[T]) -> Vec<T> {
        self.chol.solve(z)
    }

    /// `zᵀK⁻¹z`; the price set is where this is at most one.
    pub fn dual_norm_sq(&self, z: &[T]) -> T {
        dot(z, &self.apply_k_inv(z))
    }

    fn check_dim(&self, z: &[T]) -> Result<(), ProjectionError> {
        if z.len() != self.dim {
            return Err(ProjectionError::Dimension { got: z.len(), expected: self.dim });
        }
        Ok(())
    }
}

/// Projection onto `{x : ‖x‖₁ ≤ radius}` by sorting magnitudes and
/// soft-thresholding at the water level.
pub fn project_l1_ball<T: Real>(z: &[T], radius: T) -> Vec<T> {
    let l1: T = z.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return z.to_vec();
    }
    let mut u: Vec<T> = z.iter().map(|v| v.abs()).collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - radius) / T::from_usize_lossy(j + 1);
        if uj - t > T::zero() {
            theta = t;
        } else {
            break;
        }
    }
    z.iter().map(|&v| v.signum() * (v.abs() - theta).max(T::zero())).collect()
}

const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 200;

/// Projection onto `{x : xᵀK⁻¹x ≤ 1}`.
///
/// Outside the set the minimizer is `(I + μK⁻¹)⁻¹z` for the unique `μ > 0`
/// putting it on the boundary. In the eigenbasis of `K` the boundary
/// residual `Σ kᵢẑᵢ²/(kᵢ+μ)² - 1` is monotone in `μ`, so `μ` is bracketed
/// by doubling and then bisected.
pub fn project_ellipsoid<T: Real>(z: &[T], metric: &SmoothnessMetric<T>) -> Result<Vec<T>, ProjectionError> {
    metric.check_dim(z)?;
    if metric.dual_norm_sq(z) <= T::one() {
        return Ok(z.to_vec());
    }
    let n = metric.dim;
    let v = &metric.eigvecs;
    let zh: Vec<T> = (0..n).map(|k| (0..n).map(|i| v[i * n + k] * z[i]).sum()).collect();
    let f = |mu: T| -> T {
        metric
            .eigvals
            .iter()
            .zip(&zh)
            .map(|(&k, &c)| {
                let r = k + mu;
                k * c * c / (r * r)
            })
            .sum()
    };
    let mut lo = T::zero();
    let mut hi = T::one();
    let mut doublings = 0;
    while f(hi) > T::one() {
        lo = hi;
        hi = hi + hi;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(ProjectionError::NoBracket(MAX_DOUBLINGS));
        }
    }
    let tol = T::lit(1e-12);
    for _ in 0..MAX_BISECTIONS {
        let mid = lo + (hi - lo) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm > T::one() {
            lo = mid;
        } else {
            hi = mid;
            if T::one() - fm <= tol {
                break;
            }
        }
    }
    let mu = hi;
    let xh: Vec<T> = metric.eigvals.iter().zip(&zh).map(|(&k, &c)| k / (k + mu) * c).collect();
    Ok((0..n).map(|i| (0..n).map(|k| v[i * n + k] * xh[k]).sum()).collect())
}

/// Column-wise ellipsoid projection of a cluster bank; every convex
/// combination of the projected columns is then admissible.
pub fn project_cluster_bank<T: Real>(
    bank: &[Vec<T>],
    metric: &SmoothnessMetric<T>,
) -> Result<Vec<Vec<T>>, ProjectionError> {
    bank.iter().map(|col| project_ellipsoid(col, metric)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_identity_metric() {
        let m = SmoothnessMetric::<f64>::new(5, 0.0).unwrap();
        assert_eq!(m.matrix(), &SymMatrix::identity(5));
    }

    #[test]
    fn metric_spd_and_symmetric() {
        let m = SmoothnessMetric::<f64>::new(24, 9.0).unwrap();
        assert!(m.matrix().max_asymmetry() <= 1e-12);
        let min = m.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= 1.0 - 1e-9);
    }

    #[test]
    fn wrap_term_present() {
        let d = circular_difference::<f64>(3);
        let p = [1.0, 2.0, 4.0];
        let dp: Vec<f64> = (0..3).map(|r| (0..3).map(|c| d[r * 3 + c] * p[c]).sum()).collect();
        let q: f64 = dp.iter().map(|v| v * v).sum();
        // (2-1)² + (4-2)² + (1-4)² = 14
        assert_eq!(q, 14.0);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(project_l1_ball(&[0.2, -0.1], 1.0), vec![0.2, -0.1]);
        assert_eq!(project_l1_ball(&[3.0, 0.0], 1.0), vec![1.0, 0.0]);
        assert_eq!(project_l1_ball(&[1.0, 1.0], 1.0), vec![0.5, 0.5]);
    }

    #[test]
    fn ellipsoid_interior_is_identity() {
        let m = SmoothnessMetric::<f64>::new(4, 1.0).unwrap();
        let z = vec![0.1, -0.2, 0.05, 0.3];
        assert_eq!(project_ellipsoid(&z, &m).unwrap(), z);
    }

    #[test]
    fn ellipsoid_euclidean_case() {
        let m = SmoothnessMetric::<f64>::new(3, 0.0).unwrap();
        let z = vec![2.0, 0.0, 0.0];
        let x = project_ellipsoid(&z, &m).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && x[1].abs() < 1e-12);
        let z = vec![1.2, -1.6, 0.0];
        let x = project_ellipsoid(&z, &m).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-10 && (x[1] + 0.8).abs() < 1e-10);
    }

    #[test]
    fn ellipsoid_stationarity_d3() {
        let m = SmoothnessMetric::<f64>::new(3, 1.0).unwrap();
        let z = vec![2.0, 0.0, 0.0];
        let x = project_ellipsoid(&z, &m).unwrap();
        assert!((m.dual_norm_sq(&x) - 1.0).abs() <= 1e-8);
        // x - z = -μ K⁻¹x for some μ > 0.
        let kx = m.apply_k_inv(&x);
        let diff: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
        let mu = -dot(&diff, &kx) / dot(&kx, &kx);
        assert!(mu > 0.0);
        for (d, k) in diff.iter().zip(&kx) {
            assert!((d + mu * k).abs() < 1e-9);
        }
    }

    #[test]
    fn bank_projection_columnwise() {
        let m = SmoothnessMetric::<f64>::new(4, 2.0).unwrap();
        let col = vec![3.0, -1.0, 0.5, 2.0];
        let one = project_cluster_bank(&[col.clone()], &m).unwrap();
        assert_eq!(one[0], project_ellipsoid(&col, &m).unwrap());
        let inside = vec![vec![0.1, 0.0, 0.0, 0.1], vec![0.0; 4]];
        assert_eq!(project_cluster_bank(&inside, &m).unwrap(), inside);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let m = SmoothnessMetric::<f64>::new(4, 2.0).unwrap();
        assert!(matches!(project_ellipsoid(&[1.0; 3], &m), Err(ProjectionError::Dimension { .. })));
    }

    #[test]
    fn metric_serde_roundtrip() {
        let m = SmoothnessMetric::<f64>::new(6, 9.0).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: SmoothnessMetric<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back.matrix(), m.matrix());
    }
}
