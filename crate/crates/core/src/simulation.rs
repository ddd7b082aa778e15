//! Daily closed loop: broadcast prices, let every household plan against
//! the forecast, execute the plans under realized weather, feed the
//! realized aggregate back to the learner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{hvac_indoor_temperature, hvac_natural_temperature, pv_availability, soc_trajectory, DeviceKind, DeviceSpec};
use crate::hems::{solve_population, DeviceControl, HemsError, HouseholdPlan, HouseholdProblem, SolveOptions, WeatherContext};
use crate::pricing::{
    classifier_forward, cluster_price, cluster_update, feedback_update, tou_signal, ClassifierParams, ClusterBank,
    Hyperparams, PriceSignal, PricingError, TouSchedule,
};
use crate::projection::{ProjectionError, SmoothnessMetric};
use crate::scalar::norm2;
use crate::scenario::{Household, TimeGrid, WeatherDay};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeVariant {
    Benchmark,
    Tou,
    DynamicContextAgnostic,
    DynamicClustered,
    TwoWay,
    DirectControl,
}

impl ModeVariant {
    pub const ALL: [ModeVariant; 6] = [
        ModeVariant::Benchmark,
        ModeVariant::Tou,
        ModeVariant::DynamicContextAgnostic,
        ModeVariant::DynamicClustered,
        ModeVariant::TwoWay,
        ModeVariant::DirectControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModeVariant::Benchmark => "benchmark",
            ModeVariant::Tou => "tou",
            ModeVariant::DynamicContextAgnostic => "dynamic_context_agnostic",
            ModeVariant::DynamicClustered => "dynamic_clustered",
            ModeVariant::TwoWay => "two_way",
            ModeVariant::DirectControl => "direct_control",
        }
    }
}

impl std::str::FromStr for ModeVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModeVariant::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegotiationOptions {
    pub max_rounds: usize,
    /// Relative price-change tolerance.
    pub tol: f64,
}

impl Default for NegotiationOptions {
    fn default() -> Self {
        Self { max_rounds: 100, tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationMode {
    pub variant: ModeVariant,
    pub tou: Option<TouSchedule>,
    pub negotiation: Option<NegotiationOptions>,
    pub direct_gamma_scale: Option<f64>,
}

impl SimulationMode {
    pub fn simple(variant: ModeVariant) -> Self {
        let mut m = Self { variant, tou: None, negotiation: None, direct_gamma_scale: None };
        match variant {
            ModeVariant::Tou => m.tou = Some(TouSchedule::default()),
            ModeVariant::TwoWay => m.negotiation = Some(NegotiationOptions::default()),
            ModeVariant::DirectControl => {
                m.negotiation = Some(NegotiationOptions::default());
                m.direct_gamma_scale = Some(1e-6);
            }
            _ => {}
        }
        m
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let v = self.variant;
        let needs_tou = v == ModeVariant::Tou;
        let needs_neg = matches!(v, ModeVariant::TwoWay | ModeVariant::DirectControl);
        let needs_gamma = v == ModeVariant::DirectControl;
        let bad = |what: &str| Err(SimulationError::Config(format!("mode {}: {what}", v.name())));
        if self.tou.is_some() != needs_tou {
            return bad("a TOU schedule is required for, and only for, the tou mode");
        }
        if self.negotiation.is_some() != needs_neg {
            return bad("negotiation options are required for, and only for, two_way and direct_control");
        }
        if self.direct_gamma_scale.is_some() != needs_gamma {
            return bad("direct_gamma_scale is required for, and only for, direct_control");
        }
        if let Some(t) = &self.tou {
            t.validate()?;
        }
        if let Some(g) = self.direct_gamma_scale {
            if !(g > 0.0) {
                return bad("direct_gamma_scale must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("day {day}: {source}")]
    Household { day: i64, source: HemsError<f64> },
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Forecast error model: additive Gaussian temperature noise and
/// multiplicative Gaussian irradiance noise, seeded per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastNoise {
    pub temp_sd_f: f64,
    pub irradiance_rel_sd: f64,
    pub seed: u64,
}

impl Default for ForecastNoise {
    fn default() -> Self {
        Self { temp_sd_f: 0.5, irradiance_rel_sd: 0.02, seed: 11 }
    }
}

impl ForecastNoise {
    pub fn forecast(&self, day: &WeatherDay) -> WeatherDay {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(day.date_index as u64);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let temperature_f = day.temperature_f.iter().map(|&t| t + self.temp_sd_f * unit.sample(&mut rng)).collect();
        let irradiance_w_m2 = day
            .irradiance_w_m2
            .iter()
            .map(|&g| (g * (1.0 + self.irradiance_rel_sd * unit.sample(&mut rng))).max(0.0))
            .collect();
        WeatherDay { date_index: day.date_index, temperature_f, irradiance_w_m2, is_forecast: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub grid: TimeGrid,
    pub no_sell: bool,
    /// Elasticity scale applied to participating households.
    pub gamma_scale: f64,
    /// Device responsiveness and freezing, applied to participants.
    pub control: DeviceControl,
    pub forecast: ForecastNoise,
    pub hyper: Hyperparams,
    pub solve_max_iter: usize,
    pub solve_tol: f64,
    pub initial_indoor_temp_f: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            grid: TimeGrid::default(),
            no_sell: true,
            gamma_scale: 1.0,
            control: DeviceControl::default(),
            forecast: ForecastNoise::default(),
            hyper: Hyperparams::default(),
            solve_max_iter: 5000,
            solve_tol: 1e-6,
            initial_indoor_temp_f: 75.0,
        }
    }
}

impl SimSettings {
    pub fn metric(&self) -> Result<SmoothnessMetric<f64>, ProjectionError> {
        SmoothnessMetric::new(self.grid.horizon_slots, self.hyper.metric_lambda())
    }

    fn solve_options(&self) -> SolveOptions<f64> {
        SolveOptions { max_iter: self.solve_max_iter, tol: self.solve_tol }
    }
}

/// State carried from one day to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdState {
    pub t_in: f64,
    pub soc: Option<f64>,
}

pub fn initial_states(pop: &[Household], settings: &SimSettings) -> Vec<HouseholdState> {
    pop.iter()
        .map(|h| HouseholdState {
            t_in: settings.initial_indoor_temp_f,
            soc: h.devices.iter().find_map(|d| match d {
                DeviceSpec::Battery(b) => Some(b.soc_init),
                _ => None,
            }),
        })
        .collect()
}

/// Weather seen by the planner (forecast over the whole horizon) and by the
/// executor (realized, first day only).
#[derive(Debug, Clone, PartialEq)]
pub struct DayInputs {
    pub date_index: i64,
    pub forecast_t_out: Vec<f64>,
    pub forecast_irradiance: Vec<f64>,
    pub realized: WeatherDay,
}

impl DayInputs {
    /// Inputs for day `d` of `weather`; a multi-day horizon looks ahead and
    /// repeats the last available day past the end of the series.
    pub fn for_day(weather: &[WeatherDay], d: usize, grid: &TimeGrid, noise: &ForecastNoise) -> Self {
        let mut t_out = Vec::with_capacity(grid.horizon_slots);
        let mut irr = Vec::with_capacity(grid.horizon_slots);
        for ahead in 0..grid.horizon_days() {
            let src = &weather[(d + ahead).min(weather.len() - 1)];
            let f = noise.forecast(src);
            t_out.extend_from_slice(&f.temperature_f);
            irr.extend_from_slice(&f.irradiance_w_m2);
        }
        Self { date_index: weather[d].date_index, forecast_t_out: t_out, forecast_irradiance: irr, realized: weather[d].clone() }
    }

    /// Forecast of the first day, as fed to the classifier.
    pub fn first_day_forecast(&self, slots: usize) -> (Vec<f64>, Vec<f64>) {
        (self.forecast_t_out[..slots].to_vec(), self.forecast_irradiance[..slots].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    /// Realized substation demand over the first day.
    pub aggregate_kw: Vec<f64>,
    /// Planned demand over the whole horizon.
    pub planned_aggregate_kw: Vec<f64>,
    pub plans: Vec<HouseholdPlan<f64>>,
    pub next_states: Vec<HouseholdState>,
    /// Realized energy per device class (hvac, flexible load, battery, pv).
    pub device_energy_kwh: [f64; 4],
    pub max_kkt_residual: f64,
    pub solver_iterations: usize,
}

fn problems<'a>(
    pop: &'a [Household],
    idx: &[usize],
    prices: Option<&'a [f64]>,
    inputs: &DayInputs,
    states: &[HouseholdState],
    settings: &SimSettings,
    participant_gamma: f64,
) -> Vec<HouseholdProblem<'a, f64>> {
    idx.iter()
        .map(|&i| {
            let hh = &pop[i];
            let participating = hh.participating;
            HouseholdProblem {
                household: hh,
                prices: if participating { prices } else { None },
                weather: WeatherContext {
                    slot_hours: settings.grid.slot_duration_hours,
                    t_out: inputs.forecast_t_out.clone(),
                    irradiance: inputs.forecast_irradiance.clone(),
                    t_in_0: states[i].t_in,
                    soc_init: states[i].soc,
                },
                no_sell: settings.no_sell,
                gamma_scale: if participating { participant_gamma } else { 1.0 },
                control: if participating { settings.control } else { DeviceControl::default() },
            }
        })
        .collect()
}

fn solve_subset(
    pop: &[Household],
    idx: &[usize],
    prices: Option<&[f64]>,
    inputs: &DayInputs,
    states: &[HouseholdState],
    settings: &SimSettings,
    participant_gamma: f64,
) -> Result<Vec<HouseholdPlan<f64>>, SimulationError> {
    let probs = problems(pop, idx, prices, inputs, states, settings, participant_gamma);
    solve_population(&probs, &settings.solve_options())
        .into_iter()
        .map(|r| r.map_err(|source| SimulationError::Household { day: inputs.date_index, source }))
        .collect()
}

fn planned_sum(plans: &[&HouseholdPlan<f64>], h: usize) -> Vec<f64> {
    let mut agg = vec![0.0; h];
    for p in plans {
        for (a, v) in agg.iter_mut().zip(&p.net_power_kw) {
            *a += v;
        }
    }
    agg
}

/// Executes the first day of each plan under realized weather. PV output
/// is clipped to the realized availability; indoor temperature and SOC are
/// rolled forward for the next day.
fn execute(
    pop: &[Household],
    plans: &[HouseholdPlan<f64>],
    inputs: &DayInputs,
    states: &[HouseholdState],
    settings: &SimSettings,
) -> (Vec<f64>, Vec<HouseholdState>, [f64; 4]) {
    let t = settings.grid.slots_per_day;
    let dt = settings.grid.slot_duration_hours;
    let mut agg = vec![0.0; t];
    let mut energy = [0.0; 4];
    let mut next = Vec::with_capacity(pop.len());
    for ((hh, plan), st) in pop.iter().zip(plans).zip(states) {
        let mut state = *st;
        for (spec, (_, dp)) in hh.devices.iter().zip(&plan.device_plans) {
            let p = &dp.power_kw[..t];
            match spec {
                DeviceSpec::Pv(s) => {
                    let avail = pv_availability(s, &inputs.realized.irradiance_w_m2);
                    for s in 0..t {
                        let v = p[s].max(avail[s]);
                        agg[s] += v;
                        energy[3] += v * dt;
                    }
                    continue;
                }
                DeviceSpec::Hvac(s) => {
                    let t0 = hvac_natural_temperature(s, st.t_in, &inputs.realized.temperature_f);
                    state.t_in = *hvac_indoor_temperature(s, &t0, p).last().unwrap_or(&st.t_in);
                }
                DeviceSpec::Battery(b) => {
                    let mut b = b.clone();
                    b.soc_init = st.soc.unwrap_or(b.soc_init);
                    let soc = soc_trajectory(&b, p, dt);
                    // Rounding must not push the carried state outside the band.
                    state.soc = soc.last().map(|&v| v.clamp(b.soc_lower, b.soc_upper));
                }
                DeviceSpec::FlexLoad(_) => {}
            }
            let slot = spec.kind() as usize;
            for s in 0..t {
                agg[s] += p[s];
                energy[slot] += p[s] * dt;
            }
        }
        next.push(state);
    }
    (agg, next, energy)
}

fn finish_day(
    pop: &[Household],
    plans: Vec<HouseholdPlan<f64>>,
    inputs: &DayInputs,
    states: &[HouseholdState],
    settings: &SimSettings,
) -> DayResult {
    let refs: Vec<&HouseholdPlan<f64>> = plans.iter().collect();
    let planned_aggregate_kw = planned_sum(&refs, settings.grid.horizon_slots);
    let (aggregate_kw, next_states, device_energy_kwh) = execute(pop, &plans, inputs, states, settings);
    let max_kkt_residual = plans.iter().map(|p| p.kkt_residual).fold(0.0, f64::max);
    let solver_iterations = plans.iter().map(|p| p.iterations).sum();
    DayResult { aggregate_kw, planned_aggregate_kw, plans, next_states, device_energy_kwh, max_kkt_residual, solver_iterations }
}

/// Solves every household for one day and executes the plans.
pub fn run_day(
    pop: &[Household],
    prices: Option<&PriceSignal>,
    inputs: &DayInputs,
    states: &[HouseholdState],
    settings: &SimSettings,
) -> Result<DayResult, SimulationError> {
    let idx: Vec<usize> = (0..pop.len()).collect();
    let alpha = prices.map(|p| p.values.as_slice());
    let plans = solve_subset(pop, &idx, alpha, inputs, states, settings, settings.gamma_scale)?;
    Ok(finish_day(pop, plans, inputs, states, settings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationReport {
    pub rounds: usize,
    pub converged: bool,
    /// `‖α_{r+1} - α_r‖ / ‖α_r‖` at the last round.
    pub final_rel_change: f64,
}

/// Outcome of a same-day negotiation: the agreed signal and the plans made
/// against it.
pub struct Negotiated {
    pub alpha: PriceSignal,
    pub plans: Vec<HouseholdPlan<f64>>,
    pub report: NegotiationReport,
}

/// Iterates the feedback update against anticipated (planned) demand until
/// the relative price change drops below `tol`. The step is halved each
/// time two consecutive steps point in opposite directions.
#[allow(clippy::too_many_arguments)]
pub fn two_way_negotiate(
    pop: &[Household],
    inputs: &DayInputs,
    states: &[HouseholdState],
    start: &PriceSignal,
    metric: &SmoothnessMetric<f64>,
    settings: &SimSettings,
    participant_gamma: f64,
    opts: &NegotiationOptions,
) -> Result<Negotiated, SimulationError> {
    let h = settings.grid.horizon_slots;
    let n = pop.len().max(1) as f64;
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..pop.len()).partition(|&i| pop[i].participating);
    let fixed = solve_subset(pop, &outside, None, inputs, states, settings, participant_gamma)?;
    let fixed_refs: Vec<&HouseholdPlan<f64>> = fixed.iter().collect();
    let fixed_sum = planned_sum(&fixed_refs, h);

    let mut alpha = start.clone();
    let mut eta = settings.hyper.eta_base;
    let mut prev_step: Option<Vec<f64>> = None;
    let mut rounds = 0;
    let mut rel;
    let mut converged = false;
    let mut active;
    loop {
        active = solve_subset(pop, &inside, Some(&alpha.values), inputs, states, settings, participant_gamma)?;
        rounds += 1;
        let act_refs: Vec<&HouseholdPlan<f64>> = active.iter().collect();
        let mut g = planned_sum(&act_refs, h);
        for (a, b) in g.iter_mut().zip(&fixed_sum) {
            *a = (*a + b) / n;
        }
        let next = feedback_update(&alpha, &g, eta, metric)?.value;
        let step: Vec<f64> = next.values.iter().zip(&alpha.values).map(|(a, b)| a - b).collect();
        let base = norm2(&alpha.values);
        rel = if base > 0.0 { norm2(&step) / base } else { f64::INFINITY };
        if rel <= opts.tol {
            converged = true;
            break;
        }
        if rounds >= opts.max_rounds {
            break;
        }
        if let Some(ps) = &prev_step {
            if ps.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                eta *= 0.5;
            }
        }
        prev_step = Some(step);
        alpha = PriceSignal { values: next.values, day_index: alpha.day_index };
    }
    let mut plans: Vec<Option<HouseholdPlan<f64>>> = vec![None; pop.len()];
    for (i, p) in outside.into_iter().zip(fixed) {
        plans[i] = Some(p);
    }
    for (i, p) in inside.into_iter().zip(active) {
        plans[i] = Some(p);
    }
    let plans = plans.into_iter().map(|p| p.expect("every household planned")).collect();
    Ok(Negotiated { alpha, plans, report: NegotiationReport { rounds, converged, final_rel_change: rel } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date_index: i64,
    pub prices: Option<Vec<f64>>,
    pub aggregate_demand_kw: Vec<f64>,
    pub planned_aggregate_kw: Vec<f64>,
    /// `‖α_t - α_{t-1}‖ / ‖α_{t-1}‖`; absent when undefined.
    pub price_rel_change: Option<f64>,
    pub cluster_weights: Option<Vec<f64>>,
    pub negotiation: Option<NegotiationReport>,
    pub zero_gradient: bool,
    /// Realized energy per device class (hvac, flexible load, battery, pv).
    pub device_energy_kwh: [f64; 4],
    pub max_kkt_residual: f64,
    pub solver_iterations: usize,
    /// Learner state after the day's update (price columns).
    pub learner_snapshot: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub config_fingerprint: String,
    pub mode: ModeVariant,
    pub n_households: usize,
    pub n_participating: usize,
    pub days: Vec<DayRecord>,
}

impl SimulationTrace {
    pub fn aggregates(&self) -> Vec<Vec<f64>> {
        self.days.iter().map(|d| d.aggregate_demand_kw.clone()).collect()
    }
}

#[derive(Debug)]
pub struct RunFailure {
    pub partial: SimulationTrace,
    pub error: SimulationError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed days)", self.error, self.partial.days.len())
    }
}

impl std::error::Error for RunFailure {}

enum Learner {
    None,
    Static(TouSchedule),
    Feedback(PriceSignal),
    Clustered { bank: ClusterBank<f64>, classifier: ClassifierParams<f64> },
}

/// Everything a run needs besides the weather.
pub struct RunInputs<'a> {
    pub households: &'a [Household],
    pub settings: &'a SimSettings,
    pub classifier: Option<&'a ClassifierParams<f64>>,
    pub config_fingerprint: String,
}

/// Runs the daily loop over `weather`. Dynamic modes set day `t`'s price
/// from the realized demand of days before `t` only.
pub fn run_horizon(inputs: &RunInputs<'_>, mode: &SimulationMode, weather: &[WeatherDay]) -> Result<SimulationTrace, RunFailure> {
    let benchmark_pop: Vec<Household>;
    let pop: &[Household] = if mode.variant == ModeVariant::Benchmark {
        benchmark_pop = inputs.households.iter().cloned().map(|mut h| {
            h.participating = false;
            h
        }).collect();
        &benchmark_pop
    } else {
        inputs.households
    };
    let mut trace = SimulationTrace {
        config_fingerprint: inputs.config_fingerprint.clone(),
        mode: mode.variant,
        n_households: pop.len(),
        n_participating: pop.iter().filter(|h| h.participating).count(),
        days: Vec::with_capacity(weather.len()),
    };
    match run_loop(pop, inputs, mode, weather, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(RunFailure { partial: trace, error }),
    }
}

fn run_loop(
    pop: &[Household],
    inputs: &RunInputs<'_>,
    mode: &SimulationMode,
    weather: &[WeatherDay],
    trace: &mut SimulationTrace,
) -> Result<(), SimulationError> {
    let settings = inputs.settings;
    mode.validate()?;
    settings.grid.validate().map_err(|e| SimulationError::Config(e.to_string()))?;
    settings.hyper.validate()?;
    for w in weather {
        w.validate(&settings.grid).map_err(|e| SimulationError::Config(e.to_string()))?;
    }
    for pair in weather.windows(2) {
        if pair[1].date_index != pair[0].date_index + 1 {
            return Err(SimulationError::Config(format!("weather days not consecutive at day {}", pair[1].date_index)));
        }
    }
    let grid = settings.grid;
    let h = grid.horizon_slots;
    let t = grid.slots_per_day;
    let metric = settings.metric()?;
    let eta = settings.hyper.eta_base;
    let n = pop.len().max(1) as f64;
    let participant_gamma = match mode.variant {
        ModeVariant::DirectControl => settings.gamma_scale * mode.direct_gamma_scale.unwrap_or(1e-6),
        _ => settings.gamma_scale,
    };
    let mut learner = match mode.variant {
        ModeVariant::Benchmark => Learner::None,
        ModeVariant::Tou => Learner::Static(mode.tou.clone().unwrap_or_default()),
        ModeVariant::DynamicContextAgnostic | ModeVariant::TwoWay | ModeVariant::DirectControl => {
            Learner::Feedback(PriceSignal::zeros(h, weather.first().map_or(0, |w| w.date_index)))
        }
        ModeVariant::DynamicClustered => {
            let classifier = inputs
                .classifier
                .ok_or_else(|| SimulationError::Config("dynamic_clustered needs a trained classifier".into()))?
                .clone();
            classifier.validate()?;
            if classifier.slots() != t {
                return Err(SimulationError::Config("classifier context length differs from slots_per_day".into()));
            }
            Learner::Clustered { bank: ClusterBank::zeros(classifier.k, metric.clone()), classifier }
        }
    };
    let mut states = initial_states(pop, settings);
    let mut prev_alpha: Option<Vec<f64>> = None;

    for d in 0..weather.len() {
        let day_in = DayInputs::for_day(weather, d, &grid, &settings.forecast);
        let date = day_in.date_index;
        let mut record = DayRecord {
            date_index: date,
            prices: None,
            aggregate_demand_kw: Vec::new(),
            planned_aggregate_kw: Vec::new(),
            price_rel_change: None,
            cluster_weights: None,
            negotiation: None,
            zero_gradient: false,
            device_energy_kwh: [0.0; 4],
            max_kkt_residual: 0.0,
            solver_iterations: 0,
            learner_snapshot: None,
        };
        let result = match &mut learner {
            Learner::None => run_day(pop, None, &day_in, &states, settings)?,
            Learner::Static(schedule) => {
                let alpha = tou_signal(schedule, &grid, date)?;
                record.prices = Some(alpha.values.clone());
                run_day(pop, Some(&alpha), &day_in, &states, settings)?
            }
            Learner::Feedback(alpha) => {
                alpha.day_index = date;
                if let Some(neg) = &mode.negotiation {
                    let out = two_way_negotiate(pop, &day_in, &states, alpha, &metric, settings, participant_gamma, neg)?;
                    *alpha = out.alpha;
                    record.prices = Some(alpha.values.clone());
                    record.negotiation = Some(out.report);
                    record.learner_snapshot = Some(vec![alpha.values.clone()]);
                    finish_day(pop, out.plans, &day_in, &states, settings)
                } else {
                    record.prices = Some(alpha.values.clone());
                    let res = run_day(pop, Some(alpha), &day_in, &states, settings)?;
                    let g = gradient(&res.aggregate_kw, n, h, t);
                    let stepped = feedback_update(alpha, &g, eta, &metric)?;
                    record.zero_gradient = stepped.zero_gradient;
                    *alpha = stepped.value;
                    record.learner_snapshot = Some(vec![alpha.values.clone()]);
                    res
                }
            }
            Learner::Clustered { bank, classifier } => {
                let (temps, solar) = day_in.first_day_forecast(t);
                let x = classifier.normalization.sample(&temps, &solar).x;
                let psi = classifier_forward(classifier, &x);
                let alpha = cluster_price(bank, &psi, date)?;
                record.prices = Some(alpha.values.clone());
                let res = run_day(pop, Some(&alpha), &day_in, &states, settings)?;
                let g = gradient(&res.aggregate_kw, n, h, t);
                let stepped = cluster_update(bank, &psi, &g, eta)?;
                record.zero_gradient = stepped.zero_gradient;
                *bank = stepped.value;
                record.learner_snapshot = Some(bank.kappa.clone());
                record.cluster_weights = Some(psi);
                res
            }
        };
        if let Some(a) = &record.prices {
            if let Some(p) = &prev_alpha {
                let base = norm2(p);
                if base > 0.0 {
                    let diff: Vec<f64> = a.iter().zip(p).map(|(x, y)| x - y).collect();
                    record.price_rel_change = Some(norm2(&diff) / base);
                }
            }
            prev_alpha = Some(a.clone());
        }
        record.aggregate_demand_kw = result.aggregate_kw;
        record.planned_aggregate_kw = result.planned_aggregate_kw;
        record.max_kkt_residual = result.max_kkt_residual;
        record.device_energy_kwh = result.device_energy_kwh;
        record.solver_iterations = result.solver_iterations;
        states = result.next_states;
        trace.days.push(record);
    }
    Ok(())
}

/// Mean realized demand per household, tiled over a multi-day horizon.
fn gradient(aggregate: &[f64], n: f64, h: usize, t: usize) -> Vec<f64> {
    (0..h).map(|s| aggregate[s % t] / n).collect()
}

/// Planned indoor temperatures of every household's HVAC.
pub fn planned_temperatures(plans: &[HouseholdPlan<f64>]) -> Vec<Vec<f64>> {
    plans
        .iter()
        .filter_map(|p| p.device(DeviceKind::Hvac).map(|d| d.aux_trajectory.clone()))
        .collect()
}
