//! Physical models, preference costs and feasible sets of the four
//! controllable device classes: HVAC, flexible load, battery and rooftop PV.
//!
//! Power is signed: consumption positive, generation negative. Every
//! horizon-indexed vector has one entry per slot; state trajectories
//! (indoor temperature, state of charge) hold the value at the *end* of
//! each slot, so entry `j` depends on the power of slots `0..=j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Absolute tolerance used for power, temperature and SOC bounds, and the
/// relative tolerance for the flexible-load energy equality.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("{device}: invalid `{field}`: {reason}")]
    InvalidParameter {
        device: &'static str,
        field: &'static str,
        reason: String,
    },
    #[error("{device}: `{field}` has length {got}, expected {expected}")]
    LengthMismatch {
        device: &'static str,
        field: &'static str,
        got: usize,
        expected: usize,
    },
}

fn invalid(device: &'static str, field: &'static str, reason: impl Into<String>) -> DeviceError {
    DeviceError::InvalidParameter { device, field, reason: reason.into() }
}

fn check_len<T>(device: &'static str, field: &'static str, v: &[T], h: usize) -> Result<(), DeviceError> {
    if v.len() != h {
        return Err(DeviceError::LengthMismatch { device, field, got: v.len(), expected: h });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HvacMode {
    #[default]
    Cooling,
    Heating,
}

impl HvacMode {
    pub fn sign<T: Real>(self) -> T {
        match self {
            HvacMode::Cooling => -T::one(),
            HvacMode::Heating => T::one(),
        }
    }
}

/// HVAC unit with first-order room dynamics.
///
/// `power_gain` (°F per kW-slot) scales only the power term of the room
/// dynamics; `1.0` gives the textbook form where `zeta2` multiplies the
/// outdoor temperature and the power alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacSpec<T> {
    pub p_max: Vec<T>,
    pub t_prefer: Vec<T>,
    pub t_lower: Vec<T>,
    pub t_upper: Vec<T>,
    pub zeta1: T,
    pub zeta2: T,
    pub power_gain: T,
    pub gamma: T,
    pub mode: HvacMode,
}

impl<T: Real> HvacSpec<T> {
    /// Rating 3 kW, preference 75 °F inside [72, 78] °F, ζ1 = 0.9, ζ2 = 1.0.
    pub fn with_defaults(horizon: usize, gamma: T) -> Self {
        Self {
            p_max: vec![T::lit(3.0); horizon],
            t_prefer: vec![T::lit(75.0); horizon],
            t_lower: vec![T::lit(72.0); horizon],
            t_upper: vec![T::lit(78.0); horizon],
            zeta1: T::lit(0.9),
            zeta2: T::one(),
            power_gain: T::one(),
            gamma,
            mode: HvacMode::Cooling,
        }
    }

    pub fn horizon(&self) -> usize {
        self.p_max.len()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        const D: &str = "hvac";
        let h = self.horizon();
        check_len(D, "t_prefer", &self.t_prefer, h)?;
        check_len(D, "t_lower", &self.t_lower, h)?;
        check_len(D, "t_upper", &self.t_upper, h)?;
        for t in 0..h {
            if !(self.t_lower[t] <= self.t_prefer[t] && self.t_prefer[t] <= self.t_upper[t]) {
                return Err(invalid(D, "t_prefer", format!("slot {t}: band order violated")));
            }
            if !(self.p_max[t] >= T::zero()) {
                return Err(invalid(D, "p_max", format!("slot {t}: negative rating")));
            }
        }
        if !(self.zeta1 > T::zero() && self.zeta1 <= T::one()) {
            return Err(invalid(D, "zeta1", "must lie in (0, 1]"));
        }
        if !(self.zeta2 > T::zero()) {
            return Err(invalid(D, "zeta2", "must be positive"));
        }
        if !(self.power_gain > T::zero()) {
            return Err(invalid(D, "power_gain", "must be positive"));
        }
        if !(self.gamma >= T::zero()) {
            return Err(invalid(D, "gamma", "must be non-negative"));
        }
        Ok(())
    }

    /// Response of indoor temperature to one kW applied `lag` slots earlier,
    /// without the mode sign: `(1-ζ1)^lag · ζ2 · power_gain`.
    pub fn response_kernel(&self) -> Vec<T> {
        let decay = T::one() - self.zeta1;
        let mut c = Vec::with_capacity(self.horizon());
        let mut f = self.zeta2 * self.power_gain;
        for _ in 0..self.horizon() {
            c.push(f);
            f *= decay;
        }
        c
    }

    /// Comfort band actually enforced. The reference run applies only the
    /// power needed to stay on the comfortable side of the far bound
    /// (upper when cooling, lower when heating), saturating at `p_max`.
    /// Wherever that run leaves `[t_lower, t_upper]` the band is widened to
    /// include it plus a small margin, so the reference power is always
    /// strictly feasible in the widened slots.
    pub fn comfort_envelope(&self, t0: &[T]) -> (Vec<T>, Vec<T>) {
        let decay = T::one() - self.zeta1;
        let gain = self.zeta2 * self.power_gain;
        // Keeps the widened set with a nonempty interior.
        let margin = T::lit(ENVELOPE_MARGIN_F);
        let mut acc = T::zero();
        let mut lo = Vec::with_capacity(t0.len());
        let mut hi = Vec::with_capacity(t0.len());
        for (t, &base) in t0.iter().enumerate() {
            let carried = decay * acc;
            let gap = match self.mode {
                HvacMode::Cooling => base - carried - self.t_upper[t],
                HvacMode::Heating => self.t_lower[t] - base - carried,
            };
            let p = if gain > T::zero() { (gap / gain).max(T::zero()).min(self.p_max[t]) } else { T::zero() };
            acc = carried + gain * p;
            let temp = match self.mode {
                HvacMode::Cooling => base - acc,
                HvacMode::Heating => base + acc,
            };
            lo.push(self.t_lower[t].min(temp - margin));
            hi.push(self.t_upper[t].max(temp + margin));
        }
        (lo, hi)
    }
}

/// Slack added beyond the reference run when the comfort band is widened (°F).
pub const ENVELOPE_MARGIN_F: f64 = 0.5;

/// Shiftable load with a fixed daily energy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexLoadSpec<T> {
    pub p_prefer: Vec<T>,
    pub p_lower: Vec<T>,
    pub p_upper: Vec<T>,
    pub total_energy: T,
    pub gamma: T,
}

impl<T: Real> FlexLoadSpec<T> {
    /// Builds bounds as `p_prefer · (1 ± band)` with a tighter band on the
    /// `peak_slots`, and sets the energy budget from the preference.
    pub fn from_profile(
        p_prefer: Vec<T>,
        band: T,
        peak_band: T,
        peak_slots: &[usize],
        gamma: T,
        slot_hours: T,
    ) -> Self {
        let mut p_lower = Vec::with_capacity(p_prefer.len());
        let mut p_upper = Vec::with_capacity(p_prefer.len());
        for (t, &p) in p_prefer.iter().enumerate() {
            let b = if peak_slots.contains(&t) { peak_band } else { band };
            p_lower.push(p * (T::one() - b));
            p_upper.push(p * (T::one() + b));
        }
        let total_energy = p_prefer.iter().copied().sum::<T>() * slot_hours;
        Self { p_prefer, p_lower, p_upper, total_energy, gamma }
    }

    pub fn horizon(&self) -> usize {
        self.p_prefer.len()
    }

    pub fn validate(&self, slot_hours: T) -> Result<(), DeviceError> {
        const D: &str = "flexible_load";
        let h = self.horizon();
        check_len(D, "p_lower", &self.p_lower, h)?;
        check_len(D, "p_upper", &self.p_upper, h)?;
        for t in 0..h {
            if !(self.p_lower[t] >= T::zero()) {
                return Err(invalid(D, "p_lower", format!("slot {t}: negative")));
            }
            if !(self.p_lower[t] <= self.p_prefer[t] && self.p_prefer[t] <= self.p_upper[t]) {
                return Err(invalid(D, "p_prefer", format!("slot {t}: outside bounds")));
            }
        }
        let e: T = self.p_prefer.iter().copied().sum::<T>() * slot_hours;
        let tol = T::lit(FEASIBILITY_TOL) * self.total_energy.abs().max(T::one());
        if (e - self.total_energy).abs() > tol {
            return Err(invalid(D, "total_energy", "does not match the preferred profile"));
        }
        if !(self.gamma >= T::zero()) {
            return Err(invalid(D, "gamma", "must be non-negative"));
        }
        Ok(())
    }
}

/// Stationary battery with unit round-trip efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec<T> {
    pub p_charge_max: T,
    /// Magnitude of the discharge limit; the power bound is `-p_discharge_max`.
    pub p_discharge_max: T,
    pub capacity_kwh: T,
    pub soc_init: T,
    pub soc_prefer: Vec<T>,
    pub soc_lower: T,
    pub soc_upper: T,
    pub gamma: T,
}

impl<T: Real> BatterySpec<T> {
    /// 5 kW both ways, 4 hours of storage, preference 50 % inside [20 %, 80 %].
    pub fn with_defaults(horizon: usize, gamma: T) -> Self {
        Self {
            p_charge_max: T::lit(5.0),
            p_discharge_max: T::lit(5.0),
            capacity_kwh: T::lit(20.0),
            soc_init: T::lit(0.5),
            soc_prefer: vec![T::lit(0.5); horizon],
            soc_lower: T::lit(0.2),
            soc_upper: T::lit(0.8),
            gamma,
        }
    }

    pub fn horizon(&self) -> usize {
        self.soc_prefer.len()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        const D: &str = "battery";
        if !(self.capacity_kwh > T::zero()) {
            return Err(invalid(D, "capacity_kwh", "must be positive"));
        }
        if !(self.p_charge_max >= T::zero()) {
            return Err(invalid(D, "p_charge_max", "must be non-negative"));
        }
        if !(self.p_discharge_max >= T::zero()) {
            return Err(invalid(D, "p_discharge_max", "must be non-negative"));
        }
        if !(self.soc_lower <= self.soc_init && self.soc_init <= self.soc_upper) {
            return Err(invalid(D, "soc_init", "outside the SOC band"));
        }
        for (t, &s) in self.soc_prefer.iter().enumerate() {
            if !(self.soc_lower <= s && s <= self.soc_upper) {
                return Err(invalid(D, "soc_prefer", format!("slot {t}: outside the SOC band")));
            }
        }
        if !(self.gamma >= T::zero()) {
            return Err(invalid(D, "gamma", "must be non-negative"));
        }
        Ok(())
    }

    /// SOC gained per kW held for one slot.
    pub fn soc_per_kw(&self, slot_hours: T) -> T {
        slot_hours / self.capacity_kwh
    }
}

/// Rooftop PV inverter; output may be curtailed down to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvSpec<T> {
    pub panel_rating_kw: T,
    /// Irradiance at which the panel reaches its rating (W/m²).
    pub irradiance_ref: T,
    pub gamma: T,
}

impl<T: Real> PvSpec<T> {
    pub fn with_defaults(gamma: T) -> Self {
        Self { panel_rating_kw: T::lit(5.0), irradiance_ref: T::lit(1000.0), gamma }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.panel_rating_kw >= T::zero()) {
            return Err(invalid("pv", "panel_rating_kw", "must be non-negative"));
        }
        if !(self.irradiance_ref > T::zero()) {
            return Err(invalid("pv", "irradiance_ref", "must be positive"));
        }
        if !(self.gamma >= T::zero()) {
            return Err(invalid("pv", "gamma", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Hvac,
    FlexLoad,
    Battery,
    Pv,
}

impl DeviceKind {
    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Hvac => "hvac",
            DeviceKind::FlexLoad => "flexible_load",
            DeviceKind::Battery => "battery",
            DeviceKind::Pv => "pv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceSpec<T> {
    Hvac(HvacSpec<T>),
    FlexLoad(FlexLoadSpec<T>),
    Battery(BatterySpec<T>),
    Pv(PvSpec<T>),
}

impl<T: Real> DeviceSpec<T> {
    pub fn kind(&self) -> DeviceKind {
        match self {
            DeviceSpec::Hvac(_) => DeviceKind::Hvac,
            DeviceSpec::FlexLoad(_) => DeviceKind::FlexLoad,
            DeviceSpec::Battery(_) => DeviceKind::Battery,
            DeviceSpec::Pv(_) => DeviceKind::Pv,
        }
    }

    pub fn gamma(&self) -> T {
        match self {
            DeviceSpec::Hvac(s) => s.gamma,
            DeviceSpec::FlexLoad(s) => s.gamma,
            DeviceSpec::Battery(s) => s.gamma,
            DeviceSpec::Pv(s) => s.gamma,
        }
    }

    pub fn validate(&self, slot_hours: T) -> Result<(), DeviceError> {
        match self {
            DeviceSpec::Hvac(s) => s.validate(),
            DeviceSpec::FlexLoad(s) => s.validate(slot_hours),
            DeviceSpec::Battery(s) => s.validate(),
            DeviceSpec::Pv(s) => s.validate(),
        }
    }
}

/// Exogenous inputs a device needs to evaluate a plan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceEnv<T> {
    pub slot_hours: T,
    /// Natural (HVAC-off) indoor temperature per slot.
    pub t0: Vec<T>,
    /// PV generation bound per slot (non-positive).
    pub pv_available: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePlan<T> {
    pub power_kw: Vec<T>,
    /// Indoor temperature (HVAC), state of charge (battery), empty otherwise.
    pub aux_trajectory: Vec<T>,
    pub cost: T,
}

impl<T: Real> DevicePlan<T> {
    pub fn evaluate(spec: &DeviceSpec<T>, power_kw: Vec<T>, env: &DeviceEnv<T>) -> Self {
        let aux_trajectory = match spec {
            DeviceSpec::Hvac(s) => hvac_indoor_temperature(s, &env.t0, &power_kw),
            DeviceSpec::Battery(s) => soc_trajectory(s, &power_kw, env.slot_hours),
            _ => Vec::new(),
        };
        let cost = device_cost(spec, &power_kw, env);
        Self { power_kw, aux_trajectory, cost }
    }
}

/// Indoor temperature with the HVAC off:
/// `T0[m] = (1-ζ1)^m·T_in0 + Σ_{τ<m} (1-ζ1)^{m-1-τ}·ζ2·T_out[τ]`, m = 1..H.
pub fn hvac_natural_temperature<T: Real>(spec: &HvacSpec<T>, t_in_0: T, t_out: &[T]) -> Vec<T> {
    let decay = T::one() - spec.zeta1;
    let mut prev = t_in_0;
    t_out
        .iter()
        .map(|&to| {
            prev = decay * prev + spec.zeta2 * to;
            prev
        })
        .collect()
}

/// `T_in[m] = T0[m] + sign·Σ_{τ<m} (1-ζ1)^{m-1-τ}·ζ2·gain·p[τ]`.
pub fn hvac_indoor_temperature<T: Real>(spec: &HvacSpec<T>, t0: &[T], power: &[T]) -> Vec<T> {
    let decay = T::one() - spec.zeta1;
    let scale = spec.mode.sign::<T>() * spec.zeta2 * spec.power_gain;
    let mut acc = T::zero();
    t0.iter()
        .zip(power)
        .map(|(&base, &p)| {
            acc = decay * acc + scale * p;
            base + acc
        })
        .collect()
}

/// `SOC[m] = soc_init + Σ_{τ<m} p[τ]·Δ / capacity`, m = 1..H.
pub fn soc_trajectory<T: Real>(spec: &BatterySpec<T>, power: &[T], slot_hours: T) -> Vec<T> {
    let k = spec.soc_per_kw(slot_hours);
    let mut acc = T::zero();
    power
        .iter()
        .map(|&p| {
            acc += p;
            spec.soc_init + acc * k
        })
        .collect()
}

/// Maximum generation per slot as a non-positive bound, linear in
/// irradiance and saturating at the reference irradiance.
pub fn pv_availability<T: Real>(spec: &PvSpec<T>, irradiance: &[T]) -> Vec<T> {
    irradiance
        .iter()
        .map(|&i| {
            let frac = (i.max(T::zero()) / spec.irradiance_ref).min(T::one());
            -(spec.panel_rating_kw * frac)
        })
        .collect()
}

fn sq_dev<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Preference cost `γ·‖deviation‖²` of a power profile.
pub fn device_cost<T: Real>(spec: &DeviceSpec<T>, power: &[T], env: &DeviceEnv<T>) -> T {
    match spec {
        DeviceSpec::Hvac(s) => {
            let t_in = hvac_indoor_temperature(s, &env.t0, power);
            s.gamma * sq_dev(&t_in, &s.t_prefer)
        }
        DeviceSpec::FlexLoad(s) => s.gamma * sq_dev(power, &s.p_prefer),
        DeviceSpec::Battery(s) => {
            let soc = soc_trajectory(s, power, env.slot_hours);
            s.gamma * sq_dev(&soc, &s.soc_prefer)
        }
        DeviceSpec::Pv(s) => s.gamma * sq_dev(power, &env.pv_available),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    PowerBelowMin,
    PowerAboveMax,
    TemperatureBelowBand,
    TemperatureAboveBand,
    SocBelowBand,
    SocAboveBand,
    EnergyMismatch,
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation<T> {
    pub kind: ViolationKind,
    pub slot: Option<usize>,
    pub magnitude: T,
}

struct Collector<T> {
    tol: T,
    out: Vec<Violation<T>>,
}

impl<T: Real> Collector<T> {
    fn lower(&mut self, kind: ViolationKind, slot: usize, value: T, bound: T) {
        if bound - value > self.tol {
            self.out.push(Violation { kind, slot: Some(slot), magnitude: bound - value });
        }
    }
    fn upper(&mut self, kind: ViolationKind, slot: usize, value: T, bound: T) {
        if value - bound > self.tol {
            self.out.push(Violation { kind, slot: Some(slot), magnitude: value - bound });
        }
    }
}

/// Lists every hard-constraint violation of `power` larger than `tol`
/// (relative for the energy equality, absolute elsewhere).
pub fn check_feasible<T: Real>(
    spec: &DeviceSpec<T>,
    power: &[T],
    env: &DeviceEnv<T>,
    tol: T,
) -> Vec<Violation<T>> {
    use ViolationKind::*;
    let mut c = Collector { tol, out: Vec::new() };
    let expected = match spec {
        DeviceSpec::Hvac(s) => s.horizon(),
        DeviceSpec::FlexLoad(s) => s.horizon(),
        DeviceSpec::Battery(s) => s.horizon(),
        DeviceSpec::Pv(_) => env.pv_available.len(),
    };
    if power.len() != expected {
        c.out.push(Violation {
            kind: LengthMismatch,
            slot: None,
            magnitude: T::from_usize_lossy(power.len().abs_diff(expected)),
        });
        return c.out;
    }
    match spec {
        DeviceSpec::Hvac(s) => {
            let t_in = hvac_indoor_temperature(s, &env.t0, power);
            let (lo, hi) = s.comfort_envelope(&env.t0);
            for t in 0..power.len() {
                c.lower(PowerBelowMin, t, power[t], T::zero());
                c.upper(PowerAboveMax, t, power[t], s.p_max[t]);
                c.lower(TemperatureBelowBand, t, t_in[t], lo[t]);
                c.upper(TemperatureAboveBand, t, t_in[t], hi[t]);
            }
        }
        DeviceSpec::FlexLoad(s) => {
            for t in 0..power.len() {
                c.lower(PowerBelowMin, t, power[t], s.p_lower[t]);
                c.upper(PowerAboveMax, t, power[t], s.p_upper[t]);
            }
            let e = power.iter().copied().sum::<T>() * env.slot_hours;
            let rel = (e - s.total_energy).abs() / s.total_energy.abs().max(T::min_positive_value());
            if rel > tol {
                c.out.push(Violation { kind: EnergyMismatch, slot: None, magnitude: rel });
            }
        }
        DeviceSpec::Battery(s) => {
            let soc = soc_trajectory(s, power, env.slot_hours);
            for t in 0..power.len() {
                c.lower(PowerBelowMin, t, power[t], -s.p_discharge_max);
                c.upper(PowerAboveMax, t, power[t], s.p_charge_max);
                c.lower(SocBelowBand, t, soc[t], s.soc_lower);
                c.upper(SocAboveBand, t, soc[t], s.soc_upper);
            }
        }
        DeviceSpec::Pv(_) => {
            for t in 0..power.len() {
                c.lower(PowerBelowMin, t, power[t], env.pv_available[t]);
                c.upper(PowerAboveMax, t, power[t], T::zero());
            }
        }
    }
    c.out
}
