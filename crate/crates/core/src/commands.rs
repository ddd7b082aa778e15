//! The five subcommands as library functions. The CLI binary only parses
//! arguments and maps [`CommandError`] to exit codes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{archetype_from_index, ConfigError, ScenarioConfig, SweepAxis, WeatherSource};
use crate::devices::DeviceKind;
use crate::hems::DeviceControl;
use crate::io::{
    self, metrics_rows, IoError, MetricsRow, RunManifest, BENCHMARK_TRACE_FILE, FORMAT_VERSION, MANIFEST_FILE,
    METRICS_FILE, TRACE_FILE, WINDOW_EVALUATION,
};
use crate::metrics::WindowSummary;
use crate::pricing::{offline_train, Checkpoint, ClassifierParams, ClusterBank, PricingError, CHECKPOINT_VERSION};
use crate::scenario::{
    assign_participation, generate_population, load_weather_csv, round_count, synthesize_weather, write_weather_csv,
    Household, ScenarioError, WeatherDay,
};
use crate::simulation::{run_horizon, ModeVariant, RunInputs, SimulationError, SimulationMode, SimulationTrace};

/// Largest tolerated difference between emitted and recomputed metrics.
pub const VERIFY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Runtime(_) => 3,
            CommandError::Verification(_) => 4,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e.to_string())
    }
}

impl From<ScenarioError> for CommandError {
    fn from(e: ScenarioError) -> Self {
        CommandError::Config(e.to_string())
    }
}

impl From<IoError> for CommandError {
    fn from(e: IoError) -> Self {
        CommandError::Runtime(e.to_string())
    }
}

impl From<PricingError> for CommandError {
    fn from(e: PricingError) -> Self {
        match e {
            PricingError::Config { .. } | PricingError::Checkpoint(_) | PricingError::Dimension(_) => {
                CommandError::Config(e.to_string())
            }
            _ => CommandError::Runtime(e.to_string()),
        }
    }
}

impl From<SimulationError> for CommandError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Config(_) => CommandError::Config(e.to_string()),
            _ => CommandError::Runtime(e.to_string()),
        }
    }
}

pub type CmdResult<T> = Result<T, CommandError>;

/// Population with participation flags drawn from the configured seeds.
pub fn build_population(cfg: &ScenarioConfig) -> CmdResult<Vec<Household>> {
    let pop = generate_population(&cfg.population_params(), &cfg.grid)?;
    Ok(assign_participation(pop, cfg.participation_rate, cfg.seeds.participation)?)
}

/// Simulated days, burn-in included.
pub fn simulation_weather(cfg: &ScenarioConfig) -> CmdResult<Vec<WeatherDay>> {
    let days = match &cfg.weather {
        WeatherSource::Synthetic { archetype, days, burn_in_days, climate, .. } => {
            let climate = climate.unwrap_or_else(|| archetype.climate());
            synthesize_weather(&climate, burn_in_days + days, cfg.seeds.weather, &cfg.grid)?
        }
        WeatherSource::Csv { path, .. } => load_weather_csv(path, &cfg.grid)?,
    };
    if cfg.weather.burn_in_days() >= days.len() {
        return Err(CommandError::Config("weather.burn_in_days leaves no evaluation days".into()));
    }
    Ok(days)
}

/// History used to fit the context classifier.
pub fn history_weather(cfg: &ScenarioConfig) -> CmdResult<Vec<WeatherDay>> {
    match &cfg.weather {
        WeatherSource::Synthetic { archetype, history_days, climate, .. } => {
            let climate = climate.unwrap_or_else(|| archetype.climate());
            Ok(synthesize_weather(&climate, *history_days, cfg.seeds.history, &cfg.grid)?)
        }
        WeatherSource::Csv { history_path: Some(p), .. } => Ok(load_weather_csv(p, &cfg.grid)?),
        WeatherSource::Csv { history_path: None, .. } => {
            Err(CommandError::Config("weather.history_path is required to train from CSV weather".into()))
        }
    }
}

fn train_checkpoint(cfg: &ScenarioConfig) -> CmdResult<Checkpoint> {
    let history = history_weather(cfg)?;
    let trained = offline_train(&history, &cfg.pricing, cfg.seeds.learner)?;
    let metric = cfg.sim_settings().metric().map_err(|e| CommandError::Config(e.to_string()))?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        hyper: cfg.pricing.clone(),
        bank: ClusterBank::zeros(trained.params.k, metric),
        classifier: trained.params,
        loss_trace: trained.loss_trace,
        config_fingerprint: cfg.fingerprint(),
    })
}

/// Classifier for the clustered mode: the configured checkpoint when given,
/// otherwise trained in-process from the history.
pub fn obtain_classifier(cfg: &ScenarioConfig) -> CmdResult<Option<ClassifierParams<f64>>> {
    if cfg.mode.variant != ModeVariant::DynamicClustered {
        return Ok(None);
    }
    let params = match &cfg.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.classifier.k != cfg.pricing.k || ck.classifier.slots() != cfg.grid.slots_per_day {
                return Err(CommandError::Config(format!(
                    "checkpoint {} does not match pricing.k or grid.slots_per_day",
                    path.display()
                )));
            }
            ck.classifier
        }
        None => train_checkpoint(cfg)?.classifier,
    };
    Ok(Some(params))
}

fn out_dir(cfg: &ScenarioConfig, out: Option<&Path>) -> CmdResult<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CommandError::Config("no output directory: pass --out or set output_dir".into()))?;
    io::ensure_dir(&dir)?;
    Ok(dir)
}

fn manifest(cfg: &ScenarioConfig, command: &str, pop: &[Household], days: usize, files: Vec<String>) -> RunManifest {
    let burn = cfg.weather.burn_in_days().min(days);
    RunManifest {
        format_version: FORMAT_VERSION,
        command: command.into(),
        config_fingerprint: cfg.fingerprint(),
        seeds: cfg.seeds,
        mode: cfg.mode.variant,
        n_households: pop.len(),
        n_participating: pop.iter().filter(|h| h.participating).count(),
        burn_in_days: burn,
        evaluation_days: days - burn,
        files,
        summary: None,
        config: cfg.clone(),
    }
}

fn rel_names(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.to_string_lossy().replace('\\', "/")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationManifest {
    pub config_fingerprint: String,
    pub n_households: usize,
    pub n_pv_battery: usize,
    pub n_participating: usize,
    pub households: Vec<Household>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub dir: PathBuf,
    pub n_households: usize,
    pub n_pv_battery: usize,
    pub n_participating: usize,
    pub days: usize,
}

pub fn cmd_generate(cfg: &ScenarioConfig, out: Option<&Path>) -> CmdResult<GenerateReport> {
    let dir = out_dir(cfg, out)?;
    let pop = build_population(cfg)?;
    let weather = simulation_weather(cfg)?;
    let fp = cfg.fingerprint();
    let n_pv_battery = pop.iter().filter(|h| h.has(DeviceKind::Battery)).count();
    let n_participating = pop.iter().filter(|h| h.participating).count();
    let mut files = vec![PathBuf::from("population.json"), PathBuf::from("weather.csv")];
    io::write_json(
        &dir.join("population.json"),
        &PopulationManifest {
            config_fingerprint: fp,
            n_households: pop.len(),
            n_pv_battery,
            n_participating,
            households: pop.clone(),
        },
    )?;
    write_weather_csv(&dir.join("weather.csv"), &weather)?;
    if matches!(cfg.weather, WeatherSource::Synthetic { .. }) {
        write_weather_csv(&dir.join("history_weather.csv"), &history_weather(cfg)?)?;
        files.push(PathBuf::from("history_weather.csv"));
    }
    io::write_json(&dir.join(MANIFEST_FILE), &manifest(cfg, "generate", &pop, weather.len(), rel_names(&files)))?;
    Ok(GenerateReport { dir, n_households: pop.len(), n_pv_battery, n_participating, days: weather.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub config_fingerprint: String,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn cmd_train(cfg: &ScenarioConfig, out: Option<&Path>) -> CmdResult<TrainReport> {
    let dir = out_dir(cfg, out)?;
    let ck = train_checkpoint(cfg)?;
    let path = dir.join("checkpoint.json");
    ck.save(&path)?;
    let fp = cfg.fingerprint();
    let losses: Vec<LossPoint> = ck
        .loss_trace
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossPoint { config_fingerprint: fp.clone(), epoch, loss })
        .collect();
    io::write_csv(&dir.join("loss_trace.csv"), &losses)?;
    let files = rel_names(&[PathBuf::from("checkpoint.json"), PathBuf::from("loss_trace.csv")]);
    let mut m = manifest(cfg, "train", &[], 0, files);
    m.n_households = cfg.population.n_households;
    io::write_json(&dir.join(MANIFEST_FILE), &m)?;
    Ok(TrainReport {
        checkpoint: path,
        initial_loss: ck.loss_trace.first().copied().unwrap_or(f64::NAN),
        final_loss: ck.loss_trace.last().copied().unwrap_or(f64::NAN),
    })
}

/// A configured run next to its benchmark.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub benchmark: SimulationTrace,
    pub run: SimulationTrace,
    pub burn_in: usize,
    pub summary: WindowSummary,
}

impl ScenarioRun {
    pub fn evaluation(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let a = self.run.aggregates();
        let b = self.benchmark.aggregates();
        (a[self.burn_in..].to_vec(), b[self.burn_in..].to_vec())
    }
}

/// Failure of a run, with whatever days completed before it.
#[derive(Debug)]
pub struct RunError {
    pub error: CommandError,
    pub partial: Option<SimulationTrace>,
}

impl From<CommandError> for RunError {
    fn from(error: CommandError) -> Self {
        RunError { error, partial: None }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, RunError> {
    let pop = build_population(cfg)?;
    let weather = simulation_weather(cfg)?;
    let classifier = obtain_classifier(cfg)?;
    let settings = cfg.sim_settings();
    let inputs = RunInputs {
        households: &pop,
        settings: &settings,
        classifier: classifier.as_ref(),
        config_fingerprint: cfg.fingerprint(),
    };
    let go = |mode: &SimulationMode| {
        run_horizon(&inputs, mode, &weather)
            .map_err(|f| RunError { error: CommandError::from(f.error), partial: Some(f.partial) })
    };
    let benchmark = go(&SimulationMode::simple(ModeVariant::Benchmark))?;
    let run = if cfg.mode.variant == ModeVariant::Benchmark { benchmark.clone() } else { go(&cfg.mode)? };
    let burn_in = cfg.weather.burn_in_days();
    let (a, b) = (run.aggregates(), benchmark.aggregates());
    let summary = WindowSummary::compute(&a[burn_in..], &b[burn_in..]);
    Ok(ScenarioRun { benchmark, run, burn_in, summary })
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub dir: PathBuf,
    pub summary: WindowSummary,
    pub files: Vec<String>,
}

pub fn cmd_simulate(cfg: &ScenarioConfig, out: Option<&Path>) -> CmdResult<SimulateReport> {
    let dir = out_dir(cfg, out)?;
    let result = match run_scenario(cfg) {
        Ok(r) => r,
        Err(RunError { error, partial }) => {
            if let Some(p) = partial {
                io::write_trace(&dir.join("trace.partial.jsonl"), &p)?;
            }
            return Err(error);
        }
    };
    let fp = cfg.fingerprint();
    io::write_trace(&dir.join(TRACE_FILE), &result.run)?;
    io::write_trace(&dir.join(BENCHMARK_TRACE_FILE), &result.benchmark)?;
    let rows = metrics_rows(
        &fp,
        &result.run.days,
        &result.benchmark.days,
        result.burn_in,
        cfg.grid.slot_duration_hours,
        cfg.objective_epsilon,
    );
    io::write_csv(&dir.join(METRICS_FILE), &rows)?;
    let mut files = vec![PathBuf::from(TRACE_FILE), PathBuf::from(BENCHMARK_TRACE_FILE), PathBuf::from(METRICS_FILE)];
    files.extend(io::write_plot_data(&dir, &fp, &result.run.days, &result.benchmark.days, result.burn_in)?);
    let files = rel_names(&files);
    let pop_len = result.run.n_households;
    let mut m = manifest(cfg, "simulate", &[], result.run.days.len(), files.clone());
    m.n_households = pop_len;
    m.n_participating = result.run.n_participating;
    m.summary = Some(result.summary);
    io::write_json(&dir.join(MANIFEST_FILE), &m)?;
    Ok(SimulateReport { dir, summary: result.summary, files })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub config_fingerprint: String,
    pub mode: ModeVariant,
    pub n_households: usize,
    pub n_participating: usize,
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

/// Config for one sweep point and its label.
pub fn sweep_point(base: &ScenarioConfig, axis: SweepAxis, value: f64) -> CmdResult<(ScenarioConfig, String)> {
    let mut cfg = base.clone();
    let label = match axis {
        SweepAxis::Participation => {
            cfg.participation_rate = value;
            format!("{value}")
        }
        SweepAxis::ElasticityScale => {
            cfg.simulation.gamma_scale = value;
            format!("{value:e}")
        }
        SweepAxis::Penetration => {
            cfg.population.pv_battery_penetration = value;
            format!("{value}")
        }
        SweepAxis::Archetype => {
            let a = archetype_from_index(value)
                .ok_or_else(|| CommandError::Config(format!("archetype index {value} is not 0, 1 or 2")))?;
            match &mut cfg.weather {
                WeatherSource::Synthetic { archetype, climate, .. } => {
                    *archetype = a;
                    *climate = None;
                }
                WeatherSource::Csv { .. } => {
                    return Err(CommandError::Config("the archetype axis needs synthetic weather".into()));
                }
            }
            a.name().to_string()
        }
        SweepAxis::ScaleFactor => {
            cfg.population.n_households = round_count(value, base.population.n_households).max(1);
            format!("{value}")
        }
        SweepAxis::HvacOnly => {
            let on = value != 0.0;
            cfg.simulation.control = if on { DeviceControl::hvac_only() } else { DeviceControl::default() };
            format!("{on}")
        }
    };
    cfg.validate()?;
    Ok((cfg, label))
}

pub fn sweep_values(cfg: &ScenarioConfig, axis: SweepAxis) -> Vec<f64> {
    match (&cfg.sweep.values, cfg.sweep.axis) {
        (Some(v), Some(a)) if a == axis => v.clone(),
        _ => axis.default_values(),
    }
}

pub fn cmd_sweep(cfg: &ScenarioConfig, axis: Option<SweepAxis>, out: Option<&Path>) -> CmdResult<Vec<SweepRow>> {
    let axis = axis
        .or(cfg.sweep.axis)
        .ok_or_else(|| CommandError::Config("no sweep axis: pass --axis or set sweep.axis".into()))?;
    let dir = out_dir(cfg, out)?;
    let mut rows = Vec::new();
    for value in sweep_values(cfg, axis) {
        let (point, label) = sweep_point(cfg, axis, value)?;
        let r = run_scenario(&point).map_err(|e| e.error)?;
        let s = r.summary;
        rows.push(SweepRow {
            axis: axis.name().into(),
            value: label,
            config_fingerprint: point.fingerprint(),
            mode: point.mode.variant,
            n_households: r.run.n_households,
            n_participating: r.run.n_participating,
            mean_pds_pct: s.mean_pds_pct,
            positive_pds_fraction: s.positive_pds_fraction,
            mps_pct: s.mps_pct,
            amps_pct: s.amps_pct,
            variation_reduction_pct: s.variation_reduction_pct,
            energy_reduction_pct: s.energy_reduction_pct,
            mean_load_factor: s.mean_load_factor,
            mean_load_factor_baseline: s.mean_load_factor_baseline,
            mean_peak_kw: s.mean_peak_kw,
            mean_peak_kw_baseline: s.mean_peak_kw_baseline,
        });
    }
    let name = format!("sweep_{}.csv", axis.name());
    io::write_csv(&dir.join(&name), &rows)?;
    let pop = build_population(cfg)?;
    let mut m = manifest(cfg, "sweep", &pop, 0, vec![name]);
    m.evaluation_days = 0;
    io::write_json(&dir.join(MANIFEST_FILE), &m)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub values_checked: usize,
    pub max_discrepancy: f64,
}

/// Recomputes every emitted metric of a `simulate` output directory from
/// the raw traces and compares.
/// A run file that exists but no longer parses counts as a mismatch.
fn emitted_err(e: IoError) -> CommandError {
    match e {
        IoError::Format { .. } => CommandError::Verification(e.to_string()),
        IoError::File { .. } => CommandError::Runtime(e.to_string()),
    }
}

pub fn cmd_verify(dir: &Path) -> CmdResult<VerifyReport> {
    let m: RunManifest = io::read_json(&dir.join(MANIFEST_FILE)).map_err(emitted_err)?;
    if m.command != "simulate" {
        return Err(CommandError::Config(format!("{} is a `{}` output, not `simulate`", dir.display(), m.command)));
    }
    let fp = m.config_fingerprint.clone();
    let mut problems = Vec::new();
    if m.config.fingerprint() != fp {
        problems.push("manifest config does not hash to its fingerprint".to_string());
    }
    let run = io::read_trace(&dir.join(TRACE_FILE)).map_err(emitted_err)?;
    let bench = io::read_trace(&dir.join(BENCHMARK_TRACE_FILE)).map_err(emitted_err)?;
    for (name, lines) in [(TRACE_FILE, &run), (BENCHMARK_TRACE_FILE, &bench)] {
        if let Some(l) = lines.iter().find(|l| l.config_fingerprint != fp) {
            problems.push(format!("{name}: day {} carries fingerprint {}", l.day.date_index, l.config_fingerprint));
        }
    }
    let run: Vec<_> = run.into_iter().map(|l| l.day).collect();
    let bench: Vec<_> = bench.into_iter().map(|l| l.day).collect();
    if run.len() != bench.len() {
        problems.push(format!("trace has {} days, benchmark {}", run.len(), bench.len()));
    }

    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut compare = |what: String, got: Option<f64>, want: Option<f64>, problems: &mut Vec<String>| {
        checked += 1;
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                let d = if g == w { 0.0 } else { (g - w).abs() };
                if d.is_nan() || d > VERIFY_TOL {
                    problems.push(format!("{what}: emitted {g}, recomputed {w}"));
                }
                if !d.is_nan() {
                    worst = worst.max(d);
                }
            }
            _ => problems.push(format!("{what}: presence differs")),
        }
    };

    let expected = metrics_rows(&fp, &run, &bench, m.burn_in_days, m.config.grid.slot_duration_hours, m.config.objective_epsilon);
    let emitted: Vec<MetricsRow> = io::read_csv(&dir.join(METRICS_FILE)).map_err(emitted_err)?;
    if emitted.len() != expected.len() {
        problems.push(format!("{METRICS_FILE}: {} rows, expected {}", emitted.len(), expected.len()));
    }
    for (i, (e, x)) in emitted.iter().zip(&expected).enumerate() {
        if e.config_fingerprint != fp || e.row != x.row || e.window != x.window || e.date_index != x.date_index {
            problems.push(format!("{METRICS_FILE} row {}: key columns differ", i + 1));
            continue;
        }
        for ((name, g), (_, w)) in e.numeric().into_iter().zip(x.numeric()) {
            compare(format!("{METRICS_FILE} row {} {name}", i + 1), g, w, &mut problems);
        }
    }
    if let Some(ms) = &m.summary {
        match expected.iter().find(|r| r.row == "summary" && r.window == WINDOW_EVALUATION) {
            Some(x) => {
                for ((name, g), (_, w)) in MetricsRow::summary(&fp, WINDOW_EVALUATION, ms).numeric().into_iter().zip(x.numeric()) {
                    compare(format!("{MANIFEST_FILE} summary {name}"), g, w, &mut problems);
                }
            }
            None => problems.push("no evaluation window to check the manifest summary against".into()),
        }
    }
    for d in &run {
        if let Some(prices) = &d.prices {
            let path = dir.join("plots").join("prices").join(format!("day_{:04}.csv", d.date_index));
            let pts: Vec<io::PricePoint> = io::read_csv(&path).map_err(emitted_err)?;
            if pts.len() != prices.len() || pts.iter().any(|p| p.config_fingerprint != fp) {
                problems.push(format!("{}: length or fingerprint differs", path.display()));
            }
            for (p, &want) in pts.iter().zip(prices) {
                compare(format!("{} slot {}", path.display(), p.slot), Some(p.price), Some(want), &mut problems);
            }
        }
    }
    if problems.is_empty() {
        Ok(VerifyReport { values_checked: checked, max_discrepancy: worst })
    } else {
        let n = problems.len();
        problems.truncate(10);
        Err(CommandError::Verification(format!("{n} mismatches (max discrepancy {worst:e}): {}", problems.join("; "))))
    }
}
