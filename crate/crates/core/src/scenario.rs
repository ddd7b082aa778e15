//! Experiment universe: time grid, weather series, household population
//! synthesis and participation partitioning.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{
    BatterySpec, DeviceError, DeviceKind, DeviceSpec, FlexLoadSpec, HvacMode, HvacSpec, PvSpec,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("day {day}: expected {expected} hourly rows, found {found}")]
    IncompleteDay { day: i64, found: usize, expected: usize },
    #[error("day {day}: {reason}")]
    Validation { day: i64, reason: String },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Config { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGrid {
    pub slots_per_day: usize,
    pub slot_duration_hours: f64,
    pub horizon_slots: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { slots_per_day: 24, slot_duration_hours: 1.0, horizon_slots: 24 }
    }
}

impl TimeGrid {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.slots_per_day == 0 {
            return Err(config_err("grid.slots_per_day", "must be positive"));
        }
        if (self.slots_per_day as f64 * self.slot_duration_hours - 24.0).abs() > 1e-9 {
            return Err(config_err("grid.slot_duration_hours", "slots_per_day × slot_duration_hours must equal 24"));
        }
        if self.horizon_slots == 0 || self.horizon_slots % self.slots_per_day != 0 {
            return Err(config_err("grid.horizon_slots", "must be a positive multiple of slots_per_day"));
        }
        Ok(())
    }

    pub fn horizon_days(&self) -> usize {
        self.horizon_slots / self.slots_per_day
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    pub date_index: i64,
    pub temperature_f: Vec<f64>,
    pub irradiance_w_m2: Vec<f64>,
    pub is_forecast: bool,
}

impl WeatherDay {
    pub fn validate(&self, grid: &TimeGrid) -> Result<(), ScenarioError> {
        let bad = |reason: String| ScenarioError::Validation { day: self.date_index, reason };
        if self.temperature_f.len() != grid.slots_per_day || self.irradiance_w_m2.len() != grid.slots_per_day {
            return Err(bad(format!("vectors must have {} entries", grid.slots_per_day)));
        }
        if let Some(h) = self.irradiance_w_m2.iter().position(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(bad(format!("negative or non-finite irradiance at hour {h}")));
        }
        if let Some(h) = self.temperature_f.iter().position(|t| !t.is_finite()) {
            return Err(bad(format!("non-finite temperature at hour {h}")));
        }
        Ok(())
    }
}

/// Average device parameters around which households are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceAverages {
    pub hvac_p_max_kw: f64,
    pub t_prefer_f: f64,
    pub t_lower_f: f64,
    pub t_upper_f: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub hvac_power_gain: f64,
    pub hvac_gamma: f64,
    /// Preferred flexible-load profile for one day (kW per slot).
    pub flex_profile_kw: Vec<f64>,
    pub flex_band: f64,
    pub flex_peak_band: f64,
    /// Slots of the day that get the tighter band.
    pub flex_peak_slots: Vec<usize>,
    pub flex_gamma: f64,
    pub battery_power_kw: f64,
    pub battery_hours: f64,
    pub soc_init: f64,
    pub soc_prefer: f64,
    pub soc_lower: f64,
    pub soc_upper: f64,
    pub battery_gamma: f64,
    pub pv_rating_kw: f64,
    pub pv_irradiance_ref: f64,
    pub pv_gamma: f64,
}

/// Synthetic residential shape with morning and evening peaks (kW).
pub const DEFAULT_FLEX_PROFILE: [f64; 24] = [
    0.45, 0.40, 0.38, 0.37, 0.38, 0.45, 0.70, 0.95, 0.90, 0.75, 0.65, 0.62, //
    0.62, 0.60, 0.62, 0.70, 0.90, 1.20, 1.45, 1.55, 1.45, 1.20, 0.85, 0.60,
];

impl Default for DeviceAverages {
    fn default() -> Self {
        Self {
            hvac_p_max_kw: 3.0,
            t_prefer_f: 75.0,
            t_lower_f: 72.0,
            t_upper_f: 78.0,
            zeta1: 0.9,
            zeta2: 1.0,
            hvac_power_gain: 10.0,
            hvac_gamma: 0.02,
            flex_profile_kw: DEFAULT_FLEX_PROFILE.to_vec(),
            flex_band: 0.2,
            flex_peak_band: 0.1,
            flex_peak_slots: vec![17, 18, 19, 20],
            flex_gamma: 0.5,
            battery_power_kw: 5.0,
            battery_hours: 4.0,
            soc_init: 0.5,
            soc_prefer: 0.5,
            soc_lower: 0.2,
            soc_upper: 0.8,
            battery_gamma: 2.0,
            pv_rating_kw: 5.0,
            pv_irradiance_ref: 1000.0,
            pv_gamma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationParams {
    pub n_households: usize,
    pub pv_battery_penetration: f64,
    pub jitter_fraction: f64,
    pub device_averages: DeviceAverages,
    pub seed: u64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self {
            n_households: 50,
            pv_battery_penetration: 0.2,
            jitter_fraction: 0.15,
            device_averages: DeviceAverages::default(),
            seed: 1,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_households == 0 {
            return Err(config_err("population.n_households", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pv_battery_penetration) {
            return Err(config_err("population.pv_battery_penetration", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(config_err("population.jitter_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household<T = f64> {
    pub id: usize,
    pub devices: Vec<DeviceSpec<T>>,
    pub participating: bool,
    pub node_label: String,
}

impl<T> Household<T> {
    pub fn has(&self, kind: DeviceKind) -> bool
    where
        T: crate::scalar::Real,
    {
        self.devices.iter().any(|d| d.kind() == kind)
    }
}

/// `round(rate × n)` with halves rounded up.
pub fn round_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) + 0.5).floor() as usize
}

/// Draws the population. Temperature and SOC bands and ζ1 are bounded or
/// ordered quantities and stay at their averages; every other numeric
/// parameter is drawn uniformly within ±jitter of its average.
pub fn generate_population(params: &PopulationParams, grid: &TimeGrid) -> Result<Vec<Household>, ScenarioError> {
    params.validate()?;
    grid.validate()?;
    let avg = &params.device_averages;
    if avg.flex_profile_kw.len() != grid.slots_per_day {
        return Err(config_err("population.device_averages.flex_profile_kw", "length must equal slots_per_day"));
    }
    let n = params.n_households;
    let h = grid.horizon_slots;
    let dt = grid.slot_duration_hours;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_der = round_count(params.pv_battery_penetration, n);
    let mut has_der = vec![false; n];
    for i in sample(&mut rng, n, n_der) {
        has_der[i] = true;
    }
    let j = params.jitter_fraction;
    let mut draw = |v: f64| if j == 0.0 { v } else { v * rng.gen_range((1.0 - j)..=(1.0 + j)) };

    let mut out = Vec::with_capacity(n);
    for (id, &der) in has_der.iter().enumerate() {
        let mut hvac = HvacSpec::<f64>::with_defaults(h, 0.0);
        hvac.p_max = vec![draw(avg.hvac_p_max_kw); h];
        hvac.t_prefer = vec![avg.t_prefer_f; h];
        hvac.t_lower = vec![avg.t_lower_f; h];
        hvac.t_upper = vec![avg.t_upper_f; h];
        hvac.zeta1 = avg.zeta1;
        hvac.zeta2 = draw(avg.zeta2);
        hvac.power_gain = draw(avg.hvac_power_gain);
        hvac.gamma = draw(avg.hvac_gamma);
        hvac.mode = HvacMode::Cooling;

        let day_profile: Vec<f64> = avg.flex_profile_kw.iter().map(|&p| draw(p)).collect();
        let profile: Vec<f64> = (0..h).map(|t| day_profile[t % grid.slots_per_day]).collect();
        let peak: Vec<usize> = (0..h).filter(|t| avg.flex_peak_slots.contains(&(t % grid.slots_per_day))).collect();
        let flex = FlexLoadSpec::from_profile(profile, avg.flex_band, avg.flex_peak_band, &peak, draw(avg.flex_gamma), dt);

        let mut devices = vec![DeviceSpec::Hvac(hvac), DeviceSpec::FlexLoad(flex)];
        if der {
            let rating = draw(avg.battery_power_kw);
            let battery = BatterySpec {
                p_charge_max: rating,
                p_discharge_max: rating,
                capacity_kwh: rating * avg.battery_hours,
                soc_init: avg.soc_init,
                soc_prefer: vec![avg.soc_prefer; h],
                soc_lower: avg.soc_lower,
                soc_upper: avg.soc_upper,
                gamma: draw(avg.battery_gamma),
            };
            let pv = PvSpec {
                panel_rating_kw: draw(avg.pv_rating_kw),
                irradiance_ref: avg.pv_irradiance_ref,
                gamma: draw(avg.pv_gamma),
            };
            devices.push(DeviceSpec::Battery(battery));
            devices.push(DeviceSpec::Pv(pv));
        }
        for d in &devices {
            d.validate(dt)?;
        }
        out.push(Household { id, devices, participating: false, node_label: format!("node-{id:05}") });
    }
    Ok(out)
}

/// Flags exactly `round(rate × n)` households, chosen uniformly without
/// replacement.
pub fn assign_participation(mut pop: Vec<Household>, rate: f64, seed: u64) -> Result<Vec<Household>, ScenarioError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(config_err("participation_rate", "must lie in [0, 1]"));
    }
    let n = pop.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for h in &mut pop {
        h.participating = false;
    }
    for i in sample(&mut rng, n, round_count(rate, n)) {
        pop[i].participating = true;
    }
    Ok(pop)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Denver,
    LosAngeles,
    Phoenix,
}

impl std::str::FromStr for Archetype {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "denver" => Ok(Archetype::Denver),
            "los_angeles" => Ok(Archetype::LosAngeles),
            "phoenix" => Ok(Archetype::Phoenix),
            other => Err(config_err("weather.archetype", format!("unknown archetype `{other}`"))),
        }
    }
}

impl Archetype {
    pub fn name(self) -> &'static str {
        match self {
            Archetype::Denver => "denver",
            Archetype::LosAngeles => "los_angeles",
            Archetype::Phoenix => "phoenix",
        }
    }

    /// Climate constants; every field can be overridden from config.
    pub fn climate(self) -> Climate {
        let base = Climate::default();
        match self {
            Archetype::Denver => base,
            Archetype::LosAngeles => Climate {
                annual_mean_f: 64.0,
                seasonal_amplitude_f: 7.0,
                diurnal_amplitude_f: 8.0,
                day_anomaly_sd_f: 2.0,
                peak_ghi_wm2: 950.0,
                max_cloudiness: 0.3,
                ..base
            },
            Archetype::Phoenix => Climate {
                annual_mean_f: 75.0,
                seasonal_amplitude_f: 19.0,
                diurnal_amplitude_f: 13.0,
                day_anomaly_sd_f: 2.5,
                peak_ghi_wm2: 1050.0,
                max_cloudiness: 0.2,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Climate {
    pub annual_mean_f: f64,
    pub seasonal_amplitude_f: f64,
    /// Day of year with the seasonal maximum.
    pub warmest_day_of_year: f64,
    pub diurnal_amplitude_f: f64,
    pub warmest_hour: f64,
    pub day_anomaly_sd_f: f64,
    pub day_anomaly_persistence: f64,
    pub hourly_noise_sd_f: f64,
    pub peak_ghi_wm2: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    pub max_cloudiness: f64,
    /// Day of year of the first synthesized day.
    pub start_day_of_year: f64,
}

impl Default for Climate {
    fn default() -> Self {
        Self {
            annual_mean_f: 51.0,
            seasonal_amplitude_f: 22.0,
            warmest_day_of_year: 200.0,
            diurnal_amplitude_f: 14.0,
            warmest_hour: 15.0,
            day_anomaly_sd_f: 3.0,
            day_anomaly_persistence: 0.7,
            hourly_noise_sd_f: 0.8,
            peak_ghi_wm2: 1000.0,
            sunrise_hour: 5.5,
            sunset_hour: 20.5,
            max_cloudiness: 0.4,
            start_day_of_year: 152.0,
        }
    }
}

/// Fraction of peak irradiance at the middle of the slot starting at `hour`.
fn daylight_weight(c: &Climate, hour: f64) -> f64 {
    let span = c.sunset_hour - c.sunrise_hour;
    let x = (hour - c.sunrise_hour) / span;
    if (0.0..=1.0).contains(&x) {
        (PI * x).sin().max(0.0)
    } else {
        0.0
    }
}

/// Seasonal and diurnal sinusoids plus AR(1) day anomalies and hourly noise.
pub fn synthesize_weather(climate: &Climate, n_days: usize, seed: u64, grid: &TimeGrid) -> Result<Vec<WeatherDay>, ScenarioError> {
    grid.validate()?;
    if n_days == 0 {
        return Err(config_err("weather.days", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut anomaly = 0.0;
    let rho = climate.day_anomaly_persistence;
    let mut out = Vec::with_capacity(n_days);
    for day in 0..n_days {
        let doy = climate.start_day_of_year + day as f64;
        let seasonal = climate.annual_mean_f
            + climate.seasonal_amplitude_f * (2.0 * PI * (doy - climate.warmest_day_of_year) / 365.0).cos();
        anomaly = rho * anomaly + (1.0 - rho * rho).sqrt() * climate.day_anomaly_sd_f * unit.sample(&mut rng);
        let clear = 1.0 - climate.max_cloudiness * rng.gen::<f64>();
        let mut temperature_f = Vec::with_capacity(grid.slots_per_day);
        let mut irradiance_w_m2 = Vec::with_capacity(grid.slots_per_day);
        for s in 0..grid.slots_per_day {
            let hour = s as f64 * grid.slot_duration_hours;
            let mid = hour + 0.5 * grid.slot_duration_hours;
            let diurnal = climate.diurnal_amplitude_f * (2.0 * PI * (hour - climate.warmest_hour) / 24.0).cos();
            temperature_f.push(seasonal + anomaly + diurnal + climate.hourly_noise_sd_f * unit.sample(&mut rng));
            irradiance_w_m2.push(climate.peak_ghi_wm2 * clear * daylight_weight(climate, mid));
        }
        out.push(WeatherDay { date_index: day as i64, temperature_f, irradiance_w_m2, is_forecast: false });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct WeatherRow {
    day: i64,
    hour: usize,
    temp_f: f64,
    ghi_wm2: f64,
}

/// Reads `day,hour,temp_f,ghi_wm2` rows; `hour` is the slot index within
/// the day. Every day must carry all slots exactly once.
pub fn load_weather_csv(path: &Path, grid: &TimeGrid) -> Result<Vec<WeatherDay>, ScenarioError> {
    grid.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["day", "hour", "temp_f", "ghi_wm2"] {
        return Err(ScenarioError::Parse { line: 1, reason: "header must be `day,hour,temp_f,ghi_wm2`".into() });
    }
    let t = grid.slots_per_day;
    let mut days: BTreeMap<i64, Vec<Option<(f64, f64)>>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: WeatherRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| ScenarioError::Parse { line, reason: e.to_string() })?;
        if row.hour >= t {
            return Err(ScenarioError::Parse { line, reason: format!("hour {} outside 0..{t}", row.hour) });
        }
        let slots = days.entry(row.day).or_insert_with(|| vec![None; t]);
        if slots[row.hour].replace((row.temp_f, row.ghi_wm2)).is_some() {
            return Err(ScenarioError::Parse { line, reason: format!("duplicate row for day {} hour {}", row.day, row.hour) });
        }
    }
    let mut out = Vec::with_capacity(days.len());
    for (day, slots) in days {
        let found = slots.iter().filter(|s| s.is_some()).count();
        if found != t {
            return Err(ScenarioError::IncompleteDay { day, found, expected: t });
        }
        let (temperature_f, irradiance_w_m2) = slots.into_iter().map(|s| s.unwrap()).unzip();
        let w = WeatherDay { date_index: day, temperature_f, irradiance_w_m2, is_forecast: false };
        w.validate(grid)?;
        out.push(w);
    }
    Ok(out)
}

pub fn write_weather_csv(path: &Path, days: &[WeatherDay]) -> Result<(), ScenarioError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for d in days {
        for (hour, (&temp_f, &ghi_wm2)) in d.temperature_f.iter().zip(&d.irradiance_w_m2).enumerate() {
            w.serialize(WeatherRow { day: d.date_index, hour, temp_f, ghi_wm2 })?;
        }
    }
    w.flush()?;
    Ok(())
}
