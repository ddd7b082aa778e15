//! Static time-of-use tariff.

use serde::{Deserialize, Serialize};

use super::{PriceSignal, PricingError};
use crate::scenario::TimeGrid;

/// Rate applying on `[start_hour, end_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TouPeriod {
    pub start_hour: f64,
    pub end_hour: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TouSchedule {
    pub periods: Vec<TouPeriod>,
}

impl Default for TouSchedule {
    /// Summer residential shape: on-peak 15-19 h, mid-peak 13-15 h,
    /// off-peak otherwise.
    fn default() -> Self {
        let p = |start_hour, end_hour, rate| TouPeriod { start_hour, end_hour, rate };
        Self { periods: vec![p(0.0, 13.0, 0.0), p(13.0, 15.0, 0.15), p(15.0, 19.0, 0.3), p(19.0, 24.0, 0.0)] }
    }
}

impl TouSchedule {
    pub fn flat(rate: f64) -> Self {
        Self { periods: vec![TouPeriod { start_hour: 0.0, end_hour: 24.0, rate }] }
    }

    /// Periods must tile `[0, 24)` without gaps or overlaps.
    pub fn validate(&self) -> Result<(), PricingError> {
        let bad = |reason: String| Err(PricingError::Config { field: "tou.periods", reason });
        let mut ps = self.periods.clone();
        ps.sort_by(|a, b| a.start_hour.total_cmp(&b.start_hour));
        let mut cursor = 0.0;
        for p in &ps {
            if !(p.end_hour > p.start_hour) || !p.rate.is_finite() {
                return bad(format!("period [{}, {}) is empty or has a non-finite rate", p.start_hour, p.end_hour));
            }
            if p.start_hour < cursor {
                return bad(format!("period starting at {} overlaps the previous one", p.start_hour));
            }
            if p.start_hour > cursor {
                return bad(format!("hours [{cursor}, {}) are not covered", p.start_hour));
            }
            cursor = p.end_hour;
        }
        if ps.is_empty() || (cursor - 24.0).abs() > 1e-9 {
            return bad(format!("periods end at {cursor}, expected 24"));
        }
        Ok(())
    }

    pub fn rate_at(&self, hour: f64) -> f64 {
        self.periods
            .iter()
            .find(|p| p.start_hour <= hour && hour < p.end_hour)
            .map_or(0.0, |p| p.rate)
    }

    /// First hour of the day at which the rate drops back to its minimum
    /// after the most expensive period.
    pub fn off_peak_start(&self) -> Option<f64> {
        let on = self.periods.iter().max_by(|a, b| a.rate.total_cmp(&b.rate))?;
        Some(on.end_hour % 24.0)
    }
}

/// Piecewise-constant price repeated identically every day; each slot takes
/// the rate in force at its start.
pub fn tou_signal(schedule: &TouSchedule, grid: &TimeGrid, day_index: i64) -> Result<PriceSignal, PricingError> {
    schedule.validate()?;
    let values = (0..grid.horizon_slots)
        .map(|s| schedule.rate_at((s % grid.slots_per_day) as f64 * grid.slot_duration_hours))
        .collect();
    Ok(PriceSignal { values, day_index })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_schedule_is_constant() {
        let a = tou_signal(&TouSchedule::flat(0.2), &TimeGrid::default(), 0).unwrap();
        assert!(a.values.iter().all(|&v| v == 0.2));
    }

    #[test]
    fn default_has_three_tiers_and_fixed_boundaries() {
        let g = TimeGrid::default();
        let a = tou_signal(&TouSchedule::default(), &g, 0).unwrap();
        let mut distinct = a.values.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 3);
        let changes: Vec<usize> = (1..24).filter(|&t| a.values[t] != a.values[t - 1]).collect();
        assert_eq!(changes, vec![13, 15, 19]);
        assert_eq!(tou_signal(&TouSchedule::default(), &g, 40).unwrap().values, a.values);
    }

    #[test]
    fn overlap_and_gap_rejected() {
        let mut s = TouSchedule::default();
        s.periods[1].start_hour = 12.0;
        assert!(s.validate().is_err());
        let mut s = TouSchedule::default();
        s.periods[1].start_hour = 14.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn two_day_horizon_repeats() {
        let g = TimeGrid { horizon_slots: 48, ..TimeGrid::default() };
        let a = tou_signal(&TouSchedule::default(), &g, 0).unwrap();
        assert_eq!(a.values[..24], a.values[24..]);
        assert_eq!(TouSchedule::default().off_peak_start(), Some(19.0));
    }
}
