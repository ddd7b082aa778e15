//! Closed-loop demand-flexibility simulator.
//!
//! Households schedule HVAC, flexible loads, batteries and rooftop PV by
//! solving small convex programs against a broadcast price; a utility-side
//! learner updates that price daily from the realized substation demand.
//!
//! Numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the simulation uses.

pub mod commands;
pub mod config;
pub mod devices;
pub mod hems;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pricing;
pub mod projection;
pub mod qp;
pub mod scalar;
pub mod scenario;
pub mod simulation;

pub use scalar::Real;

pub type HvacSpecF64 = devices::HvacSpec<f64>;
pub type FlexLoadSpecF64 = devices::FlexLoadSpec<f64>;
pub type BatterySpecF64 = devices::BatterySpec<f64>;
pub type PvSpecF64 = devices::PvSpec<f64>;
pub type DeviceSpecF64 = devices::DeviceSpec<f64>;
pub type DevicePlanF64 = devices::DevicePlan<f64>;
pub type HouseholdPlanF64 = hems::HouseholdPlan<f64>;
pub type SmoothnessMetricF64 = projection::SmoothnessMetric<f64>;
