//! Scenario configuration: a TOML document with every knob of a run.
//! Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hems::DeviceControl;
use crate::pricing::Hyperparams;
use crate::scenario::{Archetype, Climate, DeviceAverages, PopulationParams, TimeGrid};
use crate::simulation::{ForecastNoise, ModeVariant, SimSettings, SimulationMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSection {
    pub n_households: usize,
    pub pv_battery_penetration: f64,
    pub jitter_fraction: f64,
    pub device_averages: DeviceAverages,
}

impl Default for PopulationSection {
    fn default() -> Self {
        let p = PopulationParams::default();
        Self {
            n_households: p.n_households,
            pv_battery_penetration: p.pv_battery_penetration,
            jitter_fraction: p.jitter_fraction,
            device_averages: p.device_averages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeatherSource {
    /// Synthetic series: `burn_in_days + days` simulated days and a separate
    /// history of `history_days` (same climate, its own seed) for training.
    Synthetic {
        archetype: Archetype,
        days: usize,
        #[serde(default)]
        burn_in_days: usize,
        #[serde(default = "default_history_days")]
        history_days: usize,
        /// Replaces the archetype's constants when present.
        #[serde(default)]
        climate: Option<Climate>,
    },
    /// Weather CSV files. The first `burn_in_days` days of `path` are
    /// simulated but left out of the evaluation window.
    Csv {
        path: PathBuf,
        #[serde(default)]
        burn_in_days: usize,
        #[serde(default)]
        history_path: Option<PathBuf>,
    },
}

fn default_history_days() -> usize {
    122
}

impl Default for WeatherSource {
    fn default() -> Self {
        WeatherSource::Synthetic {
            archetype: Archetype::Phoenix,
            days: 92,
            burn_in_days: 14,
            history_days: default_history_days(),
            climate: None,
        }
    }
}

impl WeatherSource {
    pub fn burn_in_days(&self) -> usize {
        match self {
            WeatherSource::Synthetic { burn_in_days, .. } | WeatherSource::Csv { burn_in_days, .. } => *burn_in_days,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub temp_sd_f: f64,
    pub irradiance_rel_sd: f64,
}

impl Default for ForecastSection {
    fn default() -> Self {
        let f = ForecastNoise::default();
        Self { temp_sd_f: f.temp_sd_f, irradiance_rel_sd: f.irradiance_rel_sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub no_sell: bool,
    /// Elasticity scale applied to participants.
    pub gamma_scale: f64,
    pub control: DeviceControl,
    pub forecast: ForecastSection,
    pub solve_tol: f64,
    pub solve_max_iter: usize,
    pub initial_indoor_temp_f: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimSettings::default();
        Self {
            no_sell: s.no_sell,
            gamma_scale: s.gamma_scale,
            control: s.control,
            forecast: ForecastSection::default(),
            solve_tol: s.solve_tol,
            solve_max_iter: s.solve_max_iter,
            initial_indoor_temp_f: s.initial_indoor_temp_f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub population: u64,
    pub participation: u64,
    pub weather: u64,
    pub history: u64,
    pub learner: u64,
    pub forecast: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { population: 1, participation: 7, weather: 3, history: 99, learner: 5, forecast: 11 }
    }
}

impl Seeds {
    pub const NAMES: [&'static str; 6] = ["population", "participation", "weather", "history", "learner", "forecast"];

    pub fn set(&mut self, name: &str, value: u64) -> Result<(), ConfigError> {
        let slot = match name {
            "population" => &mut self.population,
            "participation" => &mut self.participation,
            "weather" => &mut self.weather,
            "history" => &mut self.history,
            "learner" => &mut self.learner,
            "forecast" => &mut self.forecast,
            _ => return Err(invalid("seeds", format!("unknown seed `{name}`; expected one of {}", Seeds::NAMES.join(", ")))),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Participation,
    ElasticityScale,
    Penetration,
    Archetype,
    ScaleFactor,
    HvacOnly,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Participation,
        SweepAxis::ElasticityScale,
        SweepAxis::Penetration,
        SweepAxis::Archetype,
        SweepAxis::ScaleFactor,
        SweepAxis::HvacOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Participation => "participation",
            SweepAxis::ElasticityScale => "elasticity_scale",
            SweepAxis::Penetration => "penetration",
            SweepAxis::Archetype => "archetype",
            SweepAxis::ScaleFactor => "scale_factor",
            SweepAxis::HvacOnly => "hvac_only",
        }
    }

    /// Axis points used when the config gives none.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Participation => vec![1.0 / 3.0, 2.0 / 3.0, 1.0],
            SweepAxis::ElasticityScale => vec![1e4, 1e2, 1.0, 1e-2, 1e-4],
            SweepAxis::Penetration => vec![0.2, 0.6],
            SweepAxis::Archetype => vec![0.0, 1.0, 2.0],
            SweepAxis::ScaleFactor => vec![1.0, 10.0],
            SweepAxis::HvacOnly => vec![0.0, 1.0],
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown sweep axis `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    /// Axis points. Archetypes are indexed 0 denver, 1 los_angeles,
    /// 2 phoenix; hvac_only uses 0/1.
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub participation_rate: f64,
    /// Weight of the quadratic-variation term in the grid cost.
    pub objective_epsilon: f64,
    pub output_dir: Option<PathBuf>,
    /// Trained classifier to use; trained in-process when absent.
    pub checkpoint: Option<PathBuf>,
    pub grid: TimeGrid,
    pub population: PopulationSection,
    pub weather: WeatherSource,
    pub mode: SimulationMode,
    pub pricing: Hyperparams,
    pub simulation: SimulationSection,
    pub seeds: Seeds,
    pub sweep: SweepSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            participation_rate: 2.0 / 3.0,
            objective_epsilon: 0.9,
            output_dir: None,
            checkpoint: None,
            grid: TimeGrid::default(),
            population: PopulationSection::default(),
            weather: WeatherSource::default(),
            mode: SimulationMode::simple(ModeVariant::DynamicClustered),
            pricing: Hyperparams::default(),
            simulation: SimulationSection::default(),
            seeds: Seeds::default(),
            sweep: SweepSection::default(),
        }
    }
}

pub fn archetype_from_index(v: f64) -> Option<Archetype> {
    match v {
        x if x == 0.0 => Some(Archetype::Denver),
        x if x == 1.0 => Some(Archetype::LosAngeles),
        x if x == 2.0 => Some(Archetype::Phoenix),
        _ => None,
    }
}

impl ScenarioConfig {
    /// Parses and validates; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.output_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.checkpoint.as_mut() {
            fix(p);
        }
        if let WeatherSource::Csv { path, history_path, .. } = &mut self.weather {
            fix(path);
            if let Some(h) = history_path.as_mut() {
                fix(h);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.participation_rate) {
            return Err(invalid("participation_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.objective_epsilon) {
            return Err(invalid("objective_epsilon", "must lie in [0, 1]"));
        }
        self.grid.validate().map_err(|e| invalid("grid", e.to_string()))?;
        self.population_params().validate().map_err(|e| invalid("population", e.to_string()))?;
        if self.population.device_averages.flex_profile_kw.len() != self.grid.slots_per_day {
            return Err(invalid("population.device_averages.flex_profile_kw", "length must equal grid.slots_per_day"));
        }
        self.mode.validate().map_err(|e| invalid("mode", e.to_string()))?;
        self.pricing.validate().map_err(|e| invalid("pricing", e.to_string()))?;
        if self.pricing.d_in != 2 * self.grid.slots_per_day {
            return Err(invalid("pricing.d_in", "must equal 2 × grid.slots_per_day (temperature and irradiance)"));
        }
        let s = &self.simulation;
        if !(s.gamma_scale > 0.0 && s.gamma_scale.is_finite()) {
            return Err(invalid("simulation.gamma_scale", "must be positive and finite"));
        }
        if !(s.solve_tol > 0.0) || s.solve_max_iter == 0 {
            return Err(invalid("simulation", "solve_tol and solve_max_iter must be positive"));
        }
        if !(s.forecast.temp_sd_f >= 0.0 && s.forecast.irradiance_rel_sd >= 0.0) {
            return Err(invalid("simulation.forecast", "noise scales must be nonnegative"));
        }
        match &self.weather {
            WeatherSource::Synthetic { days, history_days, .. } => {
                if *days == 0 {
                    return Err(invalid("weather.days", "must be at least 1"));
                }
                if *history_days < self.pricing.k {
                    return Err(invalid("weather.history_days", "must be at least pricing.k"));
                }
            }
            WeatherSource::Csv { .. } => {}
        }
        if let Some(values) = &self.sweep.values {
            if values.is_empty() {
                return Err(invalid("sweep.values", "must not be empty"));
            }
            if self.sweep.axis == Some(SweepAxis::Archetype) && values.iter().any(|&v| archetype_from_index(v).is_none()) {
                return Err(invalid("sweep.values", "archetype indices are 0, 1 or 2"));
            }
        }
        Ok(())
    }

    pub fn apply_seed_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| invalid("--seed-override", format!("expected name=int, got `{spec}`")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| invalid("--seed-override", format!("`{value}` is not a nonnegative integer")))?;
        self.seeds.set(name.trim(), value)
    }

    /// Switches the mode variant, keeping the configured schedule or
    /// negotiation options when they apply to the new variant.
    pub fn set_mode(&mut self, variant: ModeVariant) {
        let mut m = SimulationMode::simple(variant);
        if m.tou.is_some() && self.mode.tou.is_some() {
            m.tou = self.mode.tou.clone();
        }
        if m.negotiation.is_some() && self.mode.negotiation.is_some() {
            m.negotiation = self.mode.negotiation;
        }
        if m.direct_gamma_scale.is_some() && self.mode.direct_gamma_scale.is_some() {
            m.direct_gamma_scale = self.mode.direct_gamma_scale;
        }
        self.mode = m;
    }

    pub fn population_params(&self) -> PopulationParams {
        PopulationParams {
            n_households: self.population.n_households,
            pv_battery_penetration: self.population.pv_battery_penetration,
            jitter_fraction: self.population.jitter_fraction,
            device_averages: self.population.device_averages.clone(),
            seed: self.seeds.population,
        }
    }

    pub fn sim_settings(&self) -> SimSettings {
        let s = &self.simulation;
        SimSettings {
            grid: self.grid,
            no_sell: s.no_sell,
            gamma_scale: s.gamma_scale,
            control: s.control,
            forecast: ForecastNoise {
                temp_sd_f: s.forecast.temp_sd_f,
                irradiance_rel_sd: s.forecast.irradiance_rel_sd,
                seed: self.seeds.forecast,
            },
            hyper: self.pricing.clone(),
            solve_max_iter: s.solve_max_iter,
            solve_tol: s.solve_tol,
            initial_indoor_temp_f: s.initial_indoor_temp_f,
        }
    }

    /// SHA-256 over the canonical JSON form, output directory excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ScenarioConfig::from_toml_str("", Path::new(".")).unwrap();
        assert_eq!(c, ScenarioConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        for doc in ["bogus = 1", "[grid]\nslots = 3", "[population.device_averages]\nhvac_power = 2", "[weather]\nsource = \"synthetic\"\narchetype = \"phoenix\"\ndays = 3\nrain = 1"] {
            let err = ScenarioConfig::from_toml_str(doc, Path::new(".")).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{doc}: {err}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ScenarioConfig::default();
        c.weather = WeatherSource::Csv { path: "/tmp/w.csv".into(), burn_in_days: 3, history_path: None };
        c.set_mode(ModeVariant::Tou);
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string(), Path::new("/")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn seed_override_changes_fingerprint() {
        let mut c = ScenarioConfig::default();
        let f0 = c.fingerprint();
        c.apply_seed_override("learner=42").unwrap();
        assert_eq!(c.seeds.learner, 42);
        assert_ne!(c.fingerprint(), f0);
        assert!(c.apply_seed_override("nope=1").is_err());
        assert!(c.apply_seed_override("weather=-3").is_err());
        assert!(c.apply_seed_override("weather").is_err());
    }

    #[test]
    fn output_dir_does_not_enter_fingerprint() {
        let mut c = ScenarioConfig::default();
        let f0 = c.fingerprint();
        c.output_dir = Some("/elsewhere".into());
        assert_eq!(c.fingerprint(), f0);
    }

    #[test]
    fn mode_sections_must_match_variant() {
        let doc = "[mode]\nvariant = \"tou\"";
        assert!(ScenarioConfig::from_toml_str(doc, Path::new(".")).is_err());
        let doc = "[mode]\nvariant = \"benchmark\"";
        assert!(ScenarioConfig::from_toml_str(doc, Path::new(".")).is_ok());
    }
}
