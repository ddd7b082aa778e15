//! Utility-side price learning.
//!
//! The context-agnostic learner keeps one price vector and moves it along
//! the normalized mean demand, projecting back onto the admissible set.
//! The clustered learner keeps `k` such vectors, mixes them with the
//! weights of a soft-clustering classifier fed by the day's weather
//! forecast, and gives each column its share of the step.

pub mod checkpoint;
pub mod classifier;
pub mod cluster;
pub mod tou;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::{project_ellipsoid, ProjectionError, SmoothnessMetric};
use crate::scalar::{norm2, Real};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use classifier::{
    classifier_forward, offline_loss, offline_loss_and_grad, offline_train, ClassifierParams, Gradient, LossBreakdown,
    Normalization, Sample, TrainedClassifier,
};
pub use cluster::{cluster_price, cluster_update, ClusterBank};
pub use tou::{tou_signal, TouPeriod, TouSchedule};

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("weights are not on the probability simplex: {0}")]
    OffSimplex(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("offline training diverged at epoch {epoch} (loss {loss:e})")]
    Divergence { epoch: usize, loss: f64, trace: Vec<f64> },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A price vector broadcast for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal<T = f64> {
    pub values: Vec<T>,
    pub day_index: i64,
}

impl<T: Real> PriceSignal<T> {
    pub fn zeros(h: usize, day_index: i64) -> Self {
        Self { values: vec![T::zero(); h], day_index }
    }

    /// `αᵀK⁻¹α ≤ 1 + 1e-6`.
    pub fn is_admissible(&self, metric: &SmoothnessMetric<T>) -> bool {
        metric.dual_norm_sq(&self.values) <= T::one() + T::lit(1e-6)
    }
}

/// Result of a learner step; `zero_gradient` flags the degenerate case in
/// which the state is returned unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepped<X> {
    pub value: X,
    pub zero_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub k: usize,
    pub hidden: usize,
    pub d_in: usize,
    pub lambda_l2: f64,
    pub lambda_variation: f64,
    pub lambda_entropy: f64,
    pub lambda_contrast: f64,
    pub gamma_offline: f64,
    pub eta_base: f64,
    pub offline_epochs: usize,
    /// Half-width of the uniform initialization of network weights.
    pub init_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 6,
            hidden: 60,
            d_in: 48,
            lambda_l2: 0.1,
            lambda_variation: 0.9,
            lambda_entropy: -0.4,
            lambda_contrast: 0.5,
            gamma_offline: 0.001,
            eta_base: 0.1,
            offline_epochs: 2000,
            init_scale: 0.05,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), PricingError> {
        let bad = |field, reason: &str| Err(PricingError::Config { field, reason: reason.into() });
        if self.k == 0 {
            return bad("pricing.k", "must be at least 1");
        }
        if self.hidden == 0 {
            return bad("pricing.hidden", "must be at least 1");
        }
        if self.d_in == 0 || self.d_in % 2 != 0 {
            return bad("pricing.d_in", "must be a positive even number (temperature + irradiance)");
        }
        if !(self.eta_base > 0.0) {
            return bad("pricing.eta_base", "must be positive");
        }
        if !(self.lambda_l2 > 0.0) {
            return bad("pricing.lambda_l2", "must be positive");
        }
        if !(self.lambda_variation >= 0.0) {
            return bad("pricing.lambda_variation", "must be non-negative");
        }
        if !(self.gamma_offline > 0.0) {
            return bad("pricing.gamma_offline", "must be positive");
        }
        Ok(())
    }

    /// Variation weight of the price metric once the grid cost
    /// `λ_l2‖p‖² + λ_var‖Dp‖²` is normalized by `λ_l2`.
    pub fn metric_lambda(&self) -> f64 {
        self.lambda_variation / self.lambda_l2
    }
}

/// `α' = Π_A(α + (η/‖g‖)·g)`.
pub fn feedback_update<T: Real>(
    alpha: &PriceSignal<T>,
    mean_demand: &[T],
    eta_base: T,
    metric: &SmoothnessMetric<T>,
) -> Result<Stepped<PriceSignal<T>>, PricingError> {
    if mean_demand.len() != alpha.values.len() {
        return Err(PricingError::Dimension(format!(
            "demand has {} slots, price has {}",
            mean_demand.len(),
            alpha.values.len()
        )));
    }
    let norm = norm2(mean_demand);
    if !(norm > T::zero()) {
        return Ok(Stepped { value: alpha.clone(), zero_gradient: true });
    }
    let c = eta_base / norm;
    let moved: Vec<T> = alpha.values.iter().zip(mean_demand).map(|(&a, &g)| a + c * g).collect();
    let values = project_ellipsoid(&moved, metric)?;
    Ok(Stepped { value: PriceSignal { values, day_index: alpha.day_index + 1 }, zero_gradient: false })
}
