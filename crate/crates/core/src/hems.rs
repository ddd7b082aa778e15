//! Household energy management: builds each household's convex scheduling
//! problem and solves it.
//!
//! Participants minimize `γ_scale·Σ_d C_d(p_d) + αᵀp`, non-participants only
//! the preference costs, over the intersection of the device feasible sets
//! and (optionally) the no-sell constraint `Σ_d p_d ≥ 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{
    check_feasible, hvac_natural_temperature, pv_availability, DeviceEnv, DeviceKind, DevicePlan,
    DeviceSpec, FEASIBILITY_TOL,
};
use crate::qp::{self, Binding, QpOptions, QpProblem, QpStatus, RangeRow, SparseRow};
use crate::scalar::Real;
use crate::scenario::Household;

/// Weight of the proximal tie-breaking term toward each device's
/// preference point.
pub const PROX_WEIGHT: f64 = 1e-9;

/// Weather and carried-over state seen by one household for one planning
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherContext<T> {
    pub slot_hours: T,
    pub t_out: Vec<T>,
    pub irradiance: Vec<T>,
    /// Indoor temperature at the start of the horizon.
    pub t_in_0: T,
    /// Battery state of charge at the start of the horizon; falls back to
    /// the battery's configured initial value.
    pub soc_init: Option<T>,
}

/// Which device classes see the price term and which are pinned to their
/// preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceControl {
    pub hvac_responsive: bool,
    pub flex_responsive: bool,
    pub battery_responsive: bool,
    pub pv_responsive: bool,
    pub freeze_flex: bool,
    pub freeze_battery: bool,
}

impl Default for DeviceControl {
    fn default() -> Self {
        Self {
            hvac_responsive: true,
            flex_responsive: true,
            battery_responsive: true,
            pv_responsive: true,
            freeze_flex: false,
            freeze_battery: false,
        }
    }
}

impl DeviceControl {
    pub fn hvac_only() -> Self {
        Self { flex_responsive: false, battery_responsive: false, pv_responsive: false, ..Self::default() }
    }

    fn responsive(&self, kind: DeviceKind) -> bool {
        match kind {
            DeviceKind::Hvac => self.hvac_responsive,
            DeviceKind::FlexLoad => self.flex_responsive,
            DeviceKind::Battery => self.battery_responsive,
            DeviceKind::Pv => self.pv_responsive,
        }
    }

    fn frozen(&self, kind: DeviceKind) -> bool {
        match kind {
            DeviceKind::FlexLoad => self.freeze_flex,
            DeviceKind::Battery => self.freeze_battery,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HouseholdProblem<'a, T> {
    pub household: &'a Household<T>,
    /// Present exactly for participating households.
    pub prices: Option<&'a [T]>,
    pub weather: WeatherContext<T>,
    pub no_sell: bool,
    pub gamma_scale: T,
    pub control: DeviceControl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T> {
    pub max_iter: usize,
    pub tol: T,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self { max_iter: 5000, tol: T::lit(1e-6) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdPlan<T> {
    pub device_plans: Vec<(DeviceKind, DevicePlan<T>)>,
    pub net_power_kw: Vec<T>,
    pub objective_value: T,
    pub kkt_residual: T,
    pub iterations: usize,
}

impl<T: Real> HouseholdPlan<T> {
    pub fn device(&self, kind: DeviceKind) -> Option<&DevicePlan<T>> {
        self.device_plans.iter().find(|(k, _)| *k == kind).map(|(_, p)| p)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HemsError<T> {
    #[error("household {household}: invalid problem: {reason}")]
    InvalidProblem { household: usize, reason: String },
    #[error("household {household}: infeasible; binding constraints: {}", binding.join(", "))]
    Infeasible { household: usize, binding: Vec<String> },
    #[error("household {household}: no convergence, KKT residual {residual:e}")]
    NotConverged { household: usize, residual: T, best: Box<HouseholdPlan<T>> },
}

impl<T> HemsError<T> {
    pub fn household(&self) -> usize {
        match self {
            HemsError::InvalidProblem { household, .. }
            | HemsError::Infeasible { household, .. }
            | HemsError::NotConverged { household, .. } => *household,
        }
    }
}

/// Per-device quantities needed to build and evaluate the problem.
struct Prepared<T> {
    spec: DeviceSpec<T>,
    env: DeviceEnv<T>,
    /// Column offset, `None` when the device is pinned.
    offset: Option<usize>,
    pinned: Vec<T>,
}

#[derive(Clone, Copy)]
enum RowDesc {
    Temperature(usize, usize),
    Soc(usize, usize),
    Energy(usize),
    NoSell(usize),
}

fn describe_row(kinds: &[DeviceKind], d: RowDesc, upper: bool) -> String {
    let side = if upper { "upper" } else { "lower" };
    match d {
        RowDesc::Temperature(dev, t) => format!("{} temperature {side} band at slot {t}", kinds[dev].name()),
        RowDesc::Soc(dev, t) => format!("{} SOC {side} band at slot {t}", kinds[dev].name()),
        RowDesc::Energy(dev) => format!("{} energy equality", kinds[dev].name()),
        RowDesc::NoSell(t) => format!("household no-sell at slot {t}"),
    }
}

fn prepare<T: Real>(problem: &HouseholdProblem<'_, T>) -> Result<Vec<Prepared<T>>, HemsError<T>> {
    let hh = problem.household;
    let w = &problem.weather;
    let bad = |reason: String| HemsError::InvalidProblem { household: hh.id, reason };
    if problem.prices.is_some() != hh.participating {
        return Err(bad("prices must be present exactly for participating households".into()));
    }
    if !(problem.gamma_scale > T::zero()) {
        return Err(bad("gamma_scale must be positive".into()));
    }
    let h = w.t_out.len();
    if w.irradiance.len() != h {
        return Err(bad("weather vectors differ in length".into()));
    }
    if let Some(a) = problem.prices {
        if a.len() != h {
            return Err(bad(format!("price vector has length {}, horizon is {h}", a.len())));
        }
    }
    let mut out = Vec::with_capacity(hh.devices.len());
    let mut offset = 0;
    for spec in &hh.devices {
        let mut spec = spec.clone();
        if let (DeviceSpec::Battery(b), Some(soc)) = (&mut spec, w.soc_init) {
            b.soc_init = soc;
        }
        spec.validate(w.slot_hours).map_err(|e| bad(e.to_string()))?;
        let mut env = DeviceEnv { slot_hours: w.slot_hours, t0: Vec::new(), pv_available: Vec::new() };
        match &spec {
            DeviceSpec::Hvac(s) => {
                if s.horizon() != h {
                    return Err(bad("hvac horizon differs from weather".into()));
                }
                env.t0 = hvac_natural_temperature(s, w.t_in_0, &w.t_out);
            }
            DeviceSpec::Pv(s) => env.pv_available = pv_availability(s, &w.irradiance),
            DeviceSpec::FlexLoad(s) if s.horizon() != h => return Err(bad("flexible load horizon differs from weather".into())),
            DeviceSpec::Battery(s) if s.horizon() != h => return Err(bad("battery horizon differs from weather".into())),
            _ => {}
        }
        let kind = spec.kind();
        let (off, pinned) = if problem.control.frozen(kind) {
            let pinned = match &spec {
                DeviceSpec::FlexLoad(s) => s.p_prefer.clone(),
                _ => vec![T::zero(); h],
            };
            (None, pinned)
        } else {
            let o = offset;
            offset += h;
            (Some(o), Vec::new())
        };
        out.push(Prepared { spec, env, offset: off, pinned });
    }
    Ok(out)
}

fn add_block<T: Real>(qp: &mut QpProblem<T>, off: usize, h: usize, f: impl Fn(usize, usize) -> T) {
    let n = qp.n();
    for i in 0..h {
        for j in 0..h {
            qp.p.data[(off + i) * n + off + j] += f(i, j);
        }
    }
}

fn build_qp<T: Real>(
    problem: &HouseholdProblem<'_, T>,
    prep: &[Prepared<T>],
    h: usize,
) -> (QpProblem<T>, Vec<RowDesc>, Vec<(usize, usize)>) {
    let n: usize = prep.iter().filter(|p| p.offset.is_some()).count() * h;
    let mut qp = QpProblem::new(n);
    let mut rows_desc = Vec::new();
    let mut var_desc = vec![(0usize, 0usize); n];
    let two = T::lit(2.0);
    let prox = T::lit(PROX_WEIGHT);
    let gs = problem.gamma_scale;
    let dt = problem.weather.slot_hours;
    let mut push_row = |qp: &mut QpProblem<T>, row: SparseRow<T>, lower: T, upper: T, d: RowDesc| {
        let tag = rows_desc.len() as u32;
        rows_desc.push(d);
        qp.rows.push(RangeRow { row, lower, upper, tag });
    };

    for (di, p) in prep.iter().enumerate() {
        let Some(off) = p.offset else { continue };
        for t in 0..h {
            var_desc[off + t] = (di, t);
        }
        let mut center = vec![T::zero(); h];
        match &p.spec {
            DeviceSpec::Hvac(s) => {
                let k = s.response_kernel();
                let g = s.gamma * gs;
                let sign = s.mode.sign::<T>();
                // Lᵀ L with L[m][τ] = k[m-τ].
                add_block(&mut qp, off, h, |i, j| {
                    let start = i.max(j);
                    two * g * (start..h).map(|m| k[m - i] * k[m - j]).sum::<T>()
                });
                for tau in 0..h {
                    let lin: T = (tau..h).map(|m| k[m - tau] * (p.env.t0[m] - s.t_prefer[m])).sum();
                    qp.q[off + tau] += two * g * sign * lin;
                    qp.lb[off + tau] = T::zero();
                    qp.ub[off + tau] = s.p_max[tau];
                }
                let (lo, hi) = s.comfort_envelope(&p.env.t0);
                for m in 0..h {
                    let mut row = SparseRow::new();
                    for tau in 0..=m {
                        row.push(off + tau, k[m - tau]);
                    }
                    // T_in = t0 + sign·(Lp)
                    let (a, b) = if sign < T::zero() {
                        (p.env.t0[m] - hi[m], p.env.t0[m] - lo[m])
                    } else {
                        (lo[m] - p.env.t0[m], hi[m] - p.env.t0[m])
                    };
                    push_row(&mut qp, row, a, b, RowDesc::Temperature(di, m));
                }
            }
            DeviceSpec::FlexLoad(s) => {
                let g = s.gamma * gs;
                let mut row = SparseRow::new();
                for t in 0..h {
                    qp.p.data[(off + t) * n + off + t] += two * g;
                    qp.q[off + t] -= two * g * s.p_prefer[t];
                    qp.lb[off + t] = s.p_lower[t];
                    qp.ub[off + t] = s.p_upper[t];
                    row.push(off + t, dt);
                }
                center.copy_from_slice(&s.p_prefer);
                push_row(&mut qp, row, s.total_energy, s.total_energy, RowDesc::Energy(di));
            }
            DeviceSpec::Battery(s) => {
                let g = s.gamma * gs;
                let kap = s.soc_per_kw(dt);
                // SOC = soc0 + κ·U p, U lower-triangular ones.
                add_block(&mut qp, off, h, |i, j| two * g * kap * kap * T::from_usize_lossy(h - i.max(j)));
                for tau in 0..h {
                    let lin: T = (tau..h).map(|m| s.soc_init - s.soc_prefer[m]).sum();
                    qp.q[off + tau] += two * g * kap * lin;
                    qp.lb[off + tau] = -s.p_discharge_max;
                    qp.ub[off + tau] = s.p_charge_max;
                }
                for m in 0..h {
                    let mut row = SparseRow::new();
                    for tau in 0..=m {
                        row.push(off + tau, T::one());
                    }
                    let lo = (s.soc_lower - s.soc_init) / kap;
                    let hi = (s.soc_upper - s.soc_init) / kap;
                    push_row(&mut qp, row, lo, hi, RowDesc::Soc(di, m));
                }
            }
            DeviceSpec::Pv(s) => {
                let g = s.gamma * gs;
                for t in 0..h {
                    let avail = p.env.pv_available[t];
                    qp.p.data[(off + t) * n + off + t] += two * g;
                    qp.q[off + t] -= two * g * avail;
                    qp.lb[off + t] = avail;
                    qp.ub[off + t] = T::zero();
                }
                center.copy_from_slice(&p.env.pv_available);
            }
        }
        for t in 0..h {
            qp.p.data[(off + t) * n + off + t] += two * prox;
            qp.q[off + t] -= two * prox * center[t];
        }
        if let Some(alpha) = problem.prices {
            if problem.control.responsive(p.spec.kind()) {
                for t in 0..h {
                    qp.q[off + t] += alpha[t];
                }
            }
        }
    }
    if problem.no_sell {
        for t in 0..h {
            let mut row = SparseRow::new();
            let mut pinned = T::zero();
            for p in prep {
                match p.offset {
                    Some(off) => row.push(off + t, T::one()),
                    None => pinned += p.pinned[t],
                }
            }
            push_row(&mut qp, row, -pinned, T::infinity(), RowDesc::NoSell(t));
        }
    }
    (qp, rows_desc, var_desc)
}

fn assemble<T: Real>(
    problem: &HouseholdProblem<'_, T>,
    prep: &[Prepared<T>],
    x: &[T],
    h: usize,
    kkt: T,
    iterations: usize,
) -> HouseholdPlan<T> {
    let mut device_plans = Vec::with_capacity(prep.len());
    let mut net = vec![T::zero(); h];
    let mut objective = T::zero();
    for p in prep {
        let power = match p.offset {
            Some(off) => x[off..off + h].to_vec(),
            None => p.pinned.clone(),
        };
        for t in 0..h {
            net[t] += power[t];
        }
        let plan = DevicePlan::evaluate(&p.spec, power, &p.env);
        objective += problem.gamma_scale * plan.cost;
        if let Some(alpha) = problem.prices {
            if problem.control.responsive(p.spec.kind()) {
                objective += plan.power_kw.iter().zip(alpha).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        device_plans.push((p.spec.kind(), plan));
    }
    HouseholdPlan { device_plans, net_power_kw: net, objective_value: objective, kkt_residual: kkt, iterations }
}

/// Solves one household-horizon problem.
pub fn solve_household<T: Real>(
    problem: &HouseholdProblem<'_, T>,
    opts: &SolveOptions<T>,
) -> Result<HouseholdPlan<T>, HemsError<T>> {
    let id = problem.household.id;
    let prep = prepare(problem)?;
    let h = problem.weather.t_out.len();
    let (mut qp_prob, rows_desc, var_desc) = build_qp(problem, &prep, h);
    // Residuals are judged on an objective normalized to unit magnitude, so
    // the tolerance does not depend on the elasticity scale.
    let scale = qp_prob.p.data.iter().chain(&qp_prob.q).fold(T::one(), |m, v| m.max(v.abs()));
    if scale > T::one() {
        qp_prob.p.data.iter_mut().chain(qp_prob.q.iter_mut()).for_each(|v| *v /= scale);
    }
    let sol = qp::solve(&qp_prob, &QpOptions { max_iter: opts.max_iter, tol: opts.tol });
    let kinds: Vec<DeviceKind> = prep.iter().map(|p| p.spec.kind()).collect();
    match sol.status {
        QpStatus::Infeasible { binding } => {
            let binding = binding
                .into_iter()
                .map(|b| match b {
                    Binding::LowerBound(i) | Binding::UpperBound(i) => {
                        let (d, t) = var_desc[i];
                        let side = if matches!(b, Binding::LowerBound(_)) { "lower" } else { "upper" };
                        format!("{} power {side} bound at slot {t}", kinds[d].name())
                    }
                    Binding::RowLower(tag) => describe_row(&kinds, rows_desc[tag as usize], false),
                    Binding::RowUpper(tag) => describe_row(&kinds, rows_desc[tag as usize], true),
                    Binding::Equality(tag) => describe_row(&kinds, rows_desc[tag as usize], true),
                })
                .collect();
            Err(HemsError::Infeasible { household: id, binding })
        }
        QpStatus::MaxIterations => {
            let best = assemble(problem, &prep, &sol.x, h, sol.kkt_residual, sol.iterations);
            Err(HemsError::NotConverged { household: id, residual: sol.kkt_residual, best: Box::new(best) })
        }
        QpStatus::Solved => {
            let plan = assemble(problem, &prep, &sol.x, h, sol.kkt_residual, sol.iterations);
            let tol = T::lit(FEASIBILITY_TOL);
            let feasible = prep.iter().zip(&plan.device_plans).all(|(p, (_, dp))| {
                check_feasible(&p.spec, &dp.power_kw, &p.env, tol).is_empty()
            });
            let no_sell_ok = !problem.no_sell || plan.net_power_kw.iter().all(|&v| v >= -tol);
            if feasible && no_sell_ok && sol.kkt_residual <= opts.tol {
                Ok(plan)
            } else {
                let residual = sol.kkt_residual;
                Err(HemsError::NotConverged { household: id, residual, best: Box::new(plan) })
            }
        }
    }
}

/// Solves a batch, order-preserving. Households are independent, so the
/// parallel result equals the sequential one bit for bit.
pub fn solve_population<T: Real>(
    problems: &[HouseholdProblem<'_, T>],
    opts: &SolveOptions<T>,
) -> Vec<Result<HouseholdPlan<T>, HemsError<T>>> {
    problems.par_iter().map(|p| solve_household(p, opts)).collect()
}

/// Sequential reference path for [`solve_population`].
pub fn solve_population_sequential<T: Real>(
    problems: &[HouseholdProblem<'_, T>],
    opts: &SolveOptions<T>,
) -> Vec<Result<HouseholdPlan<T>, HemsError<T>>> {
    problems.iter().map(|p| solve_household(p, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{BatterySpec, FlexLoadSpec, HvacSpec, PvSpec};

    fn house(devices: Vec<DeviceSpec<f64>>, participating: bool) -> Household<f64> {
        Household { id: 0, devices, participating, node_label: String::new() }
    }

    fn weather(h: usize) -> WeatherContext<f64> {
        WeatherContext {
            slot_hours: 1.0,
            t_out: (0..h).map(|t| 78.0 + 10.0 * ((t as f64 - 9.0) / 24.0 * 6.283).cos()).collect(),
            irradiance: (0..h).map(|t| if (6..20).contains(&t) { 800.0 } else { 0.0 }).collect(),
            t_in_0: 75.0,
            soc_init: None,
        }
    }

    fn problem<'a>(hh: &'a Household<f64>, prices: Option<&'a [f64]>, h: usize) -> HouseholdProblem<'a, f64> {
        HouseholdProblem {
            household: hh,
            prices,
            weather: weather(h),
            no_sell: true,
            gamma_scale: 1.0,
            control: DeviceControl::default(),
        }
    }

    #[test]
    fn flex_interior_returns_preference() {
        let pref = vec![1.0, 2.0, 1.5, 0.5];
        let flex = FlexLoadSpec::from_profile(pref.clone(), 0.2, 0.1, &[], 1.0, 1.0);
        let hh = house(vec![DeviceSpec::FlexLoad(flex)], false);
        let plan = solve_household(&problem(&hh, None, 4), &SolveOptions::default()).unwrap();
        for (a, b) in plan.net_power_kw.iter().zip(&pref) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(plan.objective_value < 1e-10);
    }

    #[test]
    fn pv_only_with_no_sell_is_curtailed() {
        let hh = house(vec![DeviceSpec::Pv(PvSpec::with_defaults(1.0))], true);
        let alpha = vec![0.1; 24];
        let plan = solve_household(&problem(&hh, Some(&alpha), 24), &SolveOptions::default()).unwrap();
        assert!(plan.net_power_kw.iter().all(|p| p.abs() < 1e-6));
    }

    #[test]
    fn battery_at_preference_idles() {
        let hh = house(vec![DeviceSpec::Battery(BatterySpec::with_defaults(24, 1.0))], false);
        let plan = solve_household(&problem(&hh, None, 24), &SolveOptions::default()).unwrap();
        assert!(plan.net_power_kw.iter().all(|p| p.abs() < 1e-6), "{:?} {}", plan.net_power_kw, plan.kkt_residual);
    }

    #[test]
    fn prices_require_participation() {
        let hh = house(vec![DeviceSpec::Pv(PvSpec::with_defaults(1.0))], false);
        let alpha = vec![0.1; 24];
        let err = solve_household(&problem(&hh, Some(&alpha), 24), &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, HemsError::InvalidProblem { .. }));
    }

    #[test]
    fn infeasible_energy_names_constraint() {
        let flex = FlexLoadSpec::from_profile(vec![1.0; 4], 0.1, 0.1, &[], 1.0, 1.0);
        let hh = house(vec![DeviceSpec::FlexLoad(flex)], false);
        let p = problem(&hh, None, 4);
        let mut prep = prepare(&p).unwrap();
        // Bounds allow at most 4.4 kWh.
        if let DeviceSpec::FlexLoad(f) = &mut prep[0].spec {
            f.total_energy = 5.0;
        }
        let (qp_prob, rows, _) = build_qp(&p, &prep, 4);
        let sol = qp::solve(&qp_prob, &QpOptions::default());
        let QpStatus::Infeasible { binding } = sol.status else { panic!("expected infeasible, got {:?}", sol.status) };
        let named: Vec<String> = binding
            .iter()
            .filter_map(|b| match b {
                Binding::Equality(t) => Some(describe_row(&[DeviceKind::FlexLoad], rows[*t as usize], true)),
                _ => None,
            })
            .collect();
        assert!(named.iter().any(|s| s.contains("energy")), "{binding:?}");
    }

    #[test]
    fn full_household_solves_quickly() {
        let h = 24;
        let hv = HvacSpec { power_gain: 10.0, ..HvacSpec::with_defaults(h, 0.02) };
        let prof: Vec<f64> = (0..h).map(|t| 0.6 + 0.4 * ((t as f64) / 4.0).sin().abs()).collect();
        let flex = FlexLoadSpec::from_profile(prof, 0.2, 0.1, &[17, 18, 19, 20], 0.5, 1.0);
        let hh = house(
            vec![
                DeviceSpec::Hvac(hv),
                DeviceSpec::FlexLoad(flex),
                DeviceSpec::Battery(BatterySpec::with_defaults(h, 2.0)),
                DeviceSpec::Pv(PvSpec::with_defaults(0.5)),
            ],
            true,
        );
        let alpha: Vec<f64> = (0..h).map(|t| 0.1 * ((t as f64 - 16.0) / 24.0 * 6.283).cos()).collect();
        let p = problem(&hh, Some(&alpha), h);
        let start = std::time::Instant::now();
        let plan = solve_household(&p, &SolveOptions::default()).unwrap();
        let elapsed = start.elapsed();
        assert!(plan.kkt_residual <= 1e-6);
        assert!(plan.net_power_kw.iter().all(|&v| v >= -1e-6));
        eprintln!("solve took {elapsed:?} in {} iterations", plan.iterations);
    }
}
