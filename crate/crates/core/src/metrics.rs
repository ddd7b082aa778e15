//! Demand-profile evaluation metrics and the utility's grid cost.

use serde::{Deserialize, Serialize};

use crate::scalar::{vmax, Real};

/// `Σ_{t<T-1} (d[t+1] - d[t])²`, no wrap-around term.
pub fn quadratic_variation<T: Real>(d: &[T]) -> T {
    d.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum()
}

/// `ε·QV(d) + (1-ε)·‖d‖²`.
pub fn grid_cost<T: Real>(d: &[T], epsilon: T) -> T {
    let sq: T = d.iter().map(|&x| x * x).sum();
    epsilon * quadratic_variation(d) + (T::one() - epsilon) * sq
}

/// Daily peak reduction against the baseline, in percent. Negative when
/// the peak got worse.
pub fn pds_percent<T: Real>(d: &[T], d0: &[T]) -> T {
    let m0 = vmax(d0);
    (m0 - vmax(d)) / m0 * T::lit(100.0)
}

/// Reduction of the single highest peak over a window of days.
pub fn mps_percent<T: Real>(days: &[Vec<T>], days0: &[Vec<T>]) -> T {
    let month = |xs: &[Vec<T>]| xs.iter().map(|d| vmax(d)).fold(T::neg_infinity(), T::max);
    let m0 = month(days0);
    (m0 - month(days)) / m0 * T::lit(100.0)
}

/// Summed daily peak reductions over summed baseline peaks.
pub fn amps_percent<T: Real>(days: &[Vec<T>], days0: &[Vec<T>]) -> T {
    let mut shaved = T::zero();
    let mut base = T::zero();
    for (d, d0) in days.iter().zip(days0) {
        let p0 = vmax(d0);
        shaved += p0 - vmax(d);
        base += p0;
    }
    shaved / base * T::lit(100.0)
}

/// Largest absolute slot-to-slot change.
pub fn max_hourly_variation<T: Real>(d: &[T]) -> T {
    d.windows(2).map(|w| (w[1] - w[0]).abs()).fold(T::zero(), T::max)
}

pub fn load_factor<T: Real>(d: &[T]) -> T {
    let total: T = d.iter().copied().sum();
    total / (vmax(d) * T::from_usize_lossy(d.len()))
}

pub fn energy_reduction_pct<T: Real>(d: &[T], d0: &[T]) -> T {
    let e: T = d.iter().copied().sum();
    let e0: T = d0.iter().copied().sum();
    (e0 - e) / e0 * T::lit(100.0)
}

/// Relative reduction of the summed daily `Δmax` over a window.
pub fn variation_reduction_pct<T: Real>(days: &[Vec<T>], days0: &[Vec<T>]) -> T {
    let s: T = days.iter().map(|d| max_hourly_variation(d)).sum();
    let s0: T = days0.iter().map(|d| max_hourly_variation(d)).sum();
    (s0 - s) / s0 * T::lit(100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyMetrics {
    pub pds_pct: f64,
    pub delta_max_kw: f64,
    pub load_factor: f64,
    pub energy_kwh: f64,
    pub qv: f64,
    pub grid_cost: f64,
    pub peak_kw: f64,
    pub energy_reduction_pct: f64,
}

impl DailyMetrics {
    pub fn compute(d: &[f64], d0: &[f64], slot_hours: f64, epsilon: f64) -> Self {
        Self {
            pds_pct: pds_percent(d, d0),
            delta_max_kw: max_hourly_variation(d),
            load_factor: load_factor(d),
            energy_kwh: d.iter().sum::<f64>() * slot_hours,
            qv: quadratic_variation(d),
            grid_cost: grid_cost(d, epsilon),
            peak_kw: vmax(d),
            energy_reduction_pct: energy_reduction_pct(d, d0),
        }
    }
}

/// Window-level aggregates reported in summary rows and sweep tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub days: usize,
    pub mean_pds_pct: f64,
    pub positive_pds_fraction: f64,
    pub mps_pct: f64,
    pub amps_pct: f64,
    pub variation_reduction_pct: f64,
    pub energy_reduction_pct: f64,
    pub mean_load_factor: f64,
    pub mean_load_factor_baseline: f64,
    pub mean_peak_kw: f64,
    pub mean_peak_kw_baseline: f64,
}

impl WindowSummary {
    pub fn compute(days: &[Vec<f64>], days0: &[Vec<f64>]) -> Self {
        let n = days.len().min(days0.len());
        let (days, days0) = (&days[..n], &days0[..n]);
        let nf = n as f64;
        let pds: Vec<f64> = days.iter().zip(days0).map(|(d, d0)| pds_percent(d, d0)).collect();
        let e: f64 = days.iter().flatten().sum();
        let e0: f64 = days0.iter().flatten().sum();
        Self {
            days: n,
            mean_pds_pct: pds.iter().sum::<f64>() / nf,
            positive_pds_fraction: pds.iter().filter(|&&p| p > 0.0).count() as f64 / nf,
            mps_pct: mps_percent(days, days0),
            amps_pct: amps_percent(days, days0),
            variation_reduction_pct: variation_reduction_pct(days, days0),
            energy_reduction_pct: (e0 - e) / e0 * 100.0,
            mean_load_factor: days.iter().map(|d| load_factor(d)).sum::<f64>() / nf,
            mean_load_factor_baseline: days0.iter().map(|d| load_factor(d)).sum::<f64>() / nf,
            mean_peak_kw: days.iter().map(|d| vmax(d)).sum::<f64>() / nf,
            mean_peak_kw_baseline: days0.iter().map(|d| vmax(d)).sum::<f64>() / nf,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qv_examples() {
        assert_eq!(quadratic_variation(&[3.0; 5]), 0.0);
        assert_eq!(quadratic_variation(&[0.0, 1.0, 0.0]), 2.0);
    }

    #[test]
    fn grid_cost_examples() {
        assert_eq!(grid_cost(&[1.0, 2.0], 0.0), 5.0);
        assert_eq!(grid_cost(&[2.0, 2.0], 1.0), 0.0);
        assert!((grid_cost::<f64>(&[1.0, 2.0], 0.9) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn pds_examples() {
        let d0: Vec<f64> = vec![1000.0, 1340.0, 900.0];
        assert_eq!(pds_percent(&d0, &d0), 0.0);
        let d = vec![800.0, 900.0, 850.0];
        assert!((pds_percent(&d, &d0) - 32.835_820_9).abs() < 0.01);
        let up: Vec<f64> = d0.iter().map(|x| x * 1.1).collect();
        assert!((pds_percent(&up, &d0) + 10.0).abs() < 1e-9);
    }

    #[test]
    fn monthly_examples() {
        let d0 = vec![vec![10.0, 20.0]];
        let d = vec![vec![12.0, 15.0]];
        assert_eq!(mps_percent(&d, &d0), pds_percent(&d[0], &d0[0]));
        assert_eq!(amps_percent(&d, &d0), pds_percent(&d[0], &d0[0]));
        assert_eq!(mps_percent(&d0, &d0), 0.0);
        // +10 % and -10 % on equal baselines cancel.
        let base: Vec<Vec<f64>> = vec![vec![10.0], vec![10.0]];
        let eval = vec![vec![9.0], vec![11.0]];
        assert!(amps_percent(&eval, &base).abs() < 1e-12);
    }

    #[test]
    fn variation_and_load_factor() {
        assert_eq!(max_hourly_variation(&[5.0, 7.0, 4.0]), 3.0);
        assert_eq!(max_hourly_variation(&[4.0, 7.0, 5.0]), 3.0);
        assert_eq!(load_factor(&[2.0; 6]), 1.0);
        assert_eq!(load_factor(&[2.0, 0.0, 0.0, 0.0]), 0.25);
    }

    #[test]
    fn energy_examples() {
        let d0 = vec![1.0, 2.0, 3.0];
        assert_eq!(energy_reduction_pct(&[3.0, 1.0, 2.0], &d0), 0.0);
        let d: Vec<f64> = d0.iter().map(|x| x * 0.958).collect();
        assert!((energy_reduction_pct(&d, &d0) - 4.2).abs() < 1e-9);
    }
}
