//! Bank of `k` price columns mixed by classifier weights.

use serde::{Deserialize, Serialize};

use super::{PriceSignal, PricingError, Stepped};
use crate::projection::{project_ellipsoid, SmoothnessMetric};
use crate::scalar::{norm2, Real};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBank<T: Real> {
    /// `kappa[j]` is the price column of cluster `j`.
    pub kappa: Vec<Vec<T>>,
    pub metric: SmoothnessMetric<T>,
}

impl<T: Real> ClusterBank<T> {
    /// All columns at the origin.
    pub fn zeros(k: usize, metric: SmoothnessMetric<T>) -> Self {
        Self { kappa: vec![vec![T::zero(); metric.dim()]; k], metric }
    }

    pub fn k(&self) -> usize {
        self.kappa.len()
    }

    pub fn horizon(&self) -> usize {
        self.metric.dim()
    }

    /// Every column satisfies `κ_jᵀK⁻¹κ_j ≤ 1 + 1e-6`.
    pub fn is_feasible(&self) -> bool {
        self.kappa.iter().all(|c| self.metric.dual_norm_sq(c) <= T::one() + T::lit(1e-6))
    }
}

fn check_simplex<T: Real>(weights: &[T], k: usize) -> Result<(), PricingError> {
    if weights.len() != k {
        return Err(PricingError::Dimension(format!("{} weights for {k} clusters", weights.len())));
    }
    let tol = T::lit(SIMPLEX_TOL);
    if let Some(j) = weights.iter().position(|&w| !(w >= -tol)) {
        return Err(PricingError::OffSimplex(format!("weight {j} is negative")));
    }
    let s: T = weights.iter().copied().sum();
    if !((s - T::one()).abs() <= tol) {
        return Err(PricingError::OffSimplex(format!("weights sum to {s}")));
    }
    Ok(())
}

/// `α = Σ_j w_j κ_j`.
pub fn cluster_price<T: Real>(bank: &ClusterBank<T>, weights: &[T], day_index: i64) -> Result<PriceSignal<T>, PricingError> {
    check_simplex(weights, bank.k())?;
    let mut values = vec![T::zero(); bank.horizon()];
    for (col, &w) in bank.kappa.iter().zip(weights) {
        for (v, &c) in values.iter_mut().zip(col) {
            *v += w * c;
        }
    }
    Ok(PriceSignal { values, day_index })
}

/// Each column moves by `(η/‖g‖)·w_j·g` and is projected back.
pub fn cluster_update<T: Real>(
    bank: &ClusterBank<T>,
    weights: &[T],
    mean_demand: &[T],
    eta_base: T,
) -> Result<Stepped<ClusterBank<T>>, PricingError> {
    check_simplex(weights, bank.k())?;
    if mean_demand.len() != bank.horizon() {
        return Err(PricingError::Dimension(format!(
            "demand has {} slots, bank has {}",
            mean_demand.len(),
            bank.horizon()
        )));
    }
    let norm = norm2(mean_demand);
    if !(norm > T::zero()) {
        return Ok(Stepped { value: bank.clone(), zero_gradient: true });
    }
    let mut out = bank.clone();
    for (col, &w) in out.kappa.iter_mut().zip(weights) {
        if w == T::zero() {
            continue;
        }
        let c = eta_base / norm * w;
        let moved: Vec<T> = col.iter().zip(mean_demand).map(|(&a, &g)| a + c * g).collect();
        *col = project_ellipsoid(&moved, &bank.metric)?;
    }
    Ok(Stepped { value: out, zero_gradient: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::feedback_update;

    fn metric() -> SmoothnessMetric<f64> {
        SmoothnessMetric::new(6, 9.0).unwrap()
    }

    #[test]
    fn unit_weights_pick_columns() {
        let mut bank = ClusterBank::zeros(3, metric());
        bank.kappa[1] = vec![0.1, 0.2, 0.1, 0.0, -0.1, 0.05];
        let a = cluster_price(&bank, &[0.0, 1.0, 0.0], 4).unwrap();
        assert_eq!(a.values, bank.kappa[1]);
        assert!(cluster_price(&bank, &[0.5, 0.6, 0.0], 4).is_err());
        assert!(cluster_price(&bank, &[1.2, -0.2, 0.0], 4).is_err());
    }

    #[test]
    fn identical_columns_any_weights() {
        let col = vec![0.05, 0.1, 0.0, 0.02, 0.01, 0.0];
        let bank = ClusterBank { kappa: vec![col.clone(), col.clone()], metric: metric() };
        let a = cluster_price(&bank, &[0.3, 0.7], 0).unwrap();
        for (x, y) in a.values.iter().zip(&col) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_update_moves_one_column() {
        let bank = ClusterBank::zeros(3, metric());
        let g = vec![1.0, 2.0, 3.0, 2.0, 1.0, 1.0];
        let out = cluster_update(&bank, &[1.0, 0.0, 0.0], &g, 0.1).unwrap().value;
        assert!(out.kappa[0].iter().any(|&v| v != 0.0));
        assert_eq!(out.kappa[1], bank.kappa[1]);
        assert_eq!(out.kappa[2], bank.kappa[2]);
    }

    #[test]
    fn single_cluster_matches_feedback_bitwise() {
        let m = metric();
        let mut bank = ClusterBank::zeros(1, m.clone());
        let mut alpha = PriceSignal::zeros(6, 0);
        for day in 0..30 {
            let g: Vec<f64> = (0..6).map(|t| 1.0 + ((day * 7 + t) as f64 * 0.37).sin().abs()).collect();
            let a2 = cluster_price(&bank, &[1.0], day).unwrap();
            assert_eq!(a2.values, alpha.values);
            alpha = feedback_update(&alpha, &g, 0.1, &m).unwrap().value;
            bank = cluster_update(&bank, &[1.0], &g, 0.1).unwrap().value;
        }
    }

    #[test]
    fn updates_keep_columns_feasible() {
        let mut bank = ClusterBank::zeros(4, metric());
        for day in 0..50 {
            let w = [0.1, 0.2, 0.3, 0.4];
            let g: Vec<f64> = (0..6).map(|t| 1.0 + ((day + t) as f64).cos()).collect();
            bank = cluster_update(&bank, &w, &g, 0.3).unwrap().value;
            assert!(bank.is_feasible());
        }
    }
}
