//! On-disk formats of a run directory: JSONL traces, the run manifest,
//! metrics and plot-data CSVs. Every file carries the config fingerprint.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ScenarioConfig, Seeds};
use crate::metrics::{DailyMetrics, WindowSummary};
use crate::simulation::{DayRecord, ModeVariant, SimulationTrace};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const BENCHMARK_TRACE_FILE: &str = "benchmark_trace.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: malformed: {reason}")]
    Format { path: String, reason: String },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl ToString) -> IoError {
    IoError::Format { path: path.display().to_string(), reason: reason.to_string() }
}

pub fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| file_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let f = File::create(path).map_err(|e| file_err(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| format_err(path, e))?;
        w.write_all(b"\n").map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let f = File::open(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| format_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| format_err(path, e))).collect()
}

/// One trace line: a day record tagged with its run and the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub config_fingerprint: String,
    pub run: ModeVariant,
    #[serde(flatten)]
    pub day: DayRecord,
}

pub fn write_trace(path: &Path, trace: &SimulationTrace) -> Result<(), IoError> {
    let lines: Vec<TraceLine> = trace
        .days
        .iter()
        .map(|d| TraceLine { config_fingerprint: trace.config_fingerprint.clone(), run: trace.mode, day: d.clone() })
        .collect();
    write_jsonl(path, &lines)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>, IoError> {
    read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub config_fingerprint: String,
    pub seeds: Seeds,
    pub mode: ModeVariant,
    pub n_households: usize,
    pub n_participating: usize,
    pub burn_in_days: usize,
    pub evaluation_days: usize,
    pub files: Vec<String>,
    pub summary: Option<WindowSummary>,
    pub config: ScenarioConfig,
}

/// Metrics table row. Day rows fill the per-day columns, summary rows the
/// window columns; the rest stay empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_fingerprint: String,
    pub row: String,
    pub window: String,
    pub date_index: Option<i64>,
    pub pds_pct: Option<f64>,
    pub delta_max_kw: Option<f64>,
    pub load_factor: Option<f64>,
    pub energy_kwh: Option<f64>,
    pub qv: Option<f64>,
    pub grid_cost: Option<f64>,
    pub peak_kw: Option<f64>,
    pub energy_reduction_pct: Option<f64>,
    pub baseline_peak_kw: Option<f64>,
    pub baseline_delta_max_kw: Option<f64>,
    pub baseline_load_factor: Option<f64>,
    pub baseline_grid_cost: Option<f64>,
    pub days: Option<usize>,
    pub mean_pds_pct: Option<f64>,
    pub positive_pds_fraction: Option<f64>,
    pub mps_pct: Option<f64>,
    pub amps_pct: Option<f64>,
    pub variation_reduction_pct: Option<f64>,
    pub window_energy_reduction_pct: Option<f64>,
    pub mean_load_factor: Option<f64>,
    pub mean_load_factor_baseline: Option<f64>,
    pub mean_peak_kw: Option<f64>,
    pub mean_peak_kw_baseline: Option<f64>,
}

pub const WINDOW_BURN_IN: &str = "burn_in";
pub const WINDOW_EVALUATION: &str = "evaluation";

impl MetricsRow {
    pub fn day(fp: &str, window: &str, date_index: i64, m: &DailyMetrics, base: &DailyMetrics) -> Self {
        Self {
            config_fingerprint: fp.to_string(),
            row: "day".into(),
            window: window.into(),
            date_index: Some(date_index),
            pds_pct: Some(m.pds_pct),
            delta_max_kw: Some(m.delta_max_kw),
            load_factor: Some(m.load_factor),
            energy_kwh: Some(m.energy_kwh),
            qv: Some(m.qv),
            grid_cost: Some(m.grid_cost),
            peak_kw: Some(m.peak_kw),
            energy_reduction_pct: Some(m.energy_reduction_pct),
            baseline_peak_kw: Some(base.peak_kw),
            baseline_delta_max_kw: Some(base.delta_max_kw),
            baseline_load_factor: Some(base.load_factor),
            baseline_grid_cost: Some(base.grid_cost),
            ..Self::default()
        }
    }

    pub fn summary(fp: &str, window: &str, s: &WindowSummary) -> Self {
        Self {
            config_fingerprint: fp.to_string(),
            row: "summary".into(),
            window: window.into(),
            days: Some(s.days),
            mean_pds_pct: Some(s.mean_pds_pct),
            positive_pds_fraction: Some(s.positive_pds_fraction),
            mps_pct: Some(s.mps_pct),
            amps_pct: Some(s.amps_pct),
            variation_reduction_pct: Some(s.variation_reduction_pct),
            window_energy_reduction_pct: Some(s.energy_reduction_pct),
            mean_load_factor: Some(s.mean_load_factor),
            mean_load_factor_baseline: Some(s.mean_load_factor_baseline),
            mean_peak_kw: Some(s.mean_peak_kw),
            mean_peak_kw_baseline: Some(s.mean_peak_kw_baseline),
            ..Self::default()
        }
    }

    /// Numeric columns by name, for field-by-field comparison.
    pub fn numeric(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("pds_pct", self.pds_pct),
            ("delta_max_kw", self.delta_max_kw),
            ("load_factor", self.load_factor),
            ("energy_kwh", self.energy_kwh),
            ("qv", self.qv),
            ("grid_cost", self.grid_cost),
            ("peak_kw", self.peak_kw),
            ("energy_reduction_pct", self.energy_reduction_pct),
            ("baseline_peak_kw", self.baseline_peak_kw),
            ("baseline_delta_max_kw", self.baseline_delta_max_kw),
            ("baseline_load_factor", self.baseline_load_factor),
            ("baseline_grid_cost", self.baseline_grid_cost),
            ("days", self.days.map(|d| d as f64)),
            ("mean_pds_pct", self.mean_pds_pct),
            ("positive_pds_fraction", self.positive_pds_fraction),
            ("mps_pct", self.mps_pct),
            ("amps_pct", self.amps_pct),
            ("variation_reduction_pct", self.variation_reduction_pct),
            ("window_energy_reduction_pct", self.window_energy_reduction_pct),
            ("mean_load_factor", self.mean_load_factor),
            ("mean_load_factor_baseline", self.mean_load_factor_baseline),
            ("mean_peak_kw", self.mean_peak_kw),
            ("mean_peak_kw_baseline", self.mean_peak_kw_baseline),
        ]
    }
}

/// Day and summary rows for a run against its benchmark.
pub fn metrics_rows(
    fp: &str,
    run: &[DayRecord],
    benchmark: &[DayRecord],
    burn_in: usize,
    slot_hours: f64,
    epsilon: f64,
) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    let n = run.len().min(benchmark.len());
    let burn_in = burn_in.min(n);
    for (i, (d, b)) in run.iter().zip(benchmark).take(n).enumerate() {
        let window = if i < burn_in { WINDOW_BURN_IN } else { WINDOW_EVALUATION };
        let m = DailyMetrics::compute(&d.aggregate_demand_kw, &b.aggregate_demand_kw, slot_hours, epsilon);
        let mb = DailyMetrics::compute(&b.aggregate_demand_kw, &b.aggregate_demand_kw, slot_hours, epsilon);
        rows.push(MetricsRow::day(fp, window, d.date_index, &m, &mb));
    }
    let agg = |xs: &[DayRecord]| xs.iter().map(|d| d.aggregate_demand_kw.clone()).collect::<Vec<_>>();
    for (name, range) in [(WINDOW_BURN_IN, 0..burn_in), (WINDOW_EVALUATION, burn_in..n)] {
        if range.is_empty() {
            continue;
        }
        let s = WindowSummary::compute(&agg(&run[range.clone()]), &agg(&benchmark[range]));
        rows.push(MetricsRow::summary(fp, name, &s));
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPoint {
    pub config_fingerprint: String,
    pub date_index: i64,
    pub slot: usize,
    pub benchmark_kw: f64,
    pub run_kw: f64,
    pub planned_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub config_fingerprint: String,
    pub date_index: i64,
    pub slot: usize,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeriesPoint {
    pub config_fingerprint: String,
    pub date_index: i64,
    pub window: String,
    pub peak_kw: f64,
    pub baseline_peak_kw: f64,
    pub pds_pct: f64,
    pub load_factor: f64,
    pub baseline_load_factor: f64,
    pub price_rel_change: Option<f64>,
    pub hvac_kwh: f64,
    pub flexible_load_kwh: f64,
    pub battery_kwh: f64,
    pub pv_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterWeightPoint {
    pub config_fingerprint: String,
    pub date_index: i64,
    pub cluster: usize,
    pub weight: f64,
}

/// Writes plot-data CSVs under `dir`, returning the paths relative to it.
pub fn write_plot_data(
    dir: &Path,
    fp: &str,
    run: &[DayRecord],
    benchmark: &[DayRecord],
    burn_in: usize,
) -> Result<Vec<PathBuf>, IoError> {
    let mut files = Vec::new();
    let mut series = Vec::new();
    let mut weights = Vec::new();
    for (i, (d, b)) in run.iter().zip(benchmark).enumerate() {
        let name = format!("day_{:04}.csv", d.date_index);
        let demand: Vec<DemandPoint> = (0..d.aggregate_demand_kw.len())
            .map(|s| DemandPoint {
                config_fingerprint: fp.to_string(),
                date_index: d.date_index,
                slot: s,
                benchmark_kw: b.aggregate_demand_kw[s],
                run_kw: d.aggregate_demand_kw[s],
                planned_kw: d.planned_aggregate_kw[s],
            })
            .collect();
        let rel = PathBuf::from("plots").join("demand").join(&name);
        write_csv(&dir.join(&rel), &demand)?;
        files.push(rel);
        if let Some(prices) = &d.prices {
            let pts: Vec<PricePoint> = prices
                .iter()
                .enumerate()
                .map(|(slot, &price)| PricePoint { config_fingerprint: fp.to_string(), date_index: d.date_index, slot, price })
                .collect();
            let rel = PathBuf::from("plots").join("prices").join(&name);
            write_csv(&dir.join(&rel), &pts)?;
            files.push(rel);
        }
        if let Some(w) = &d.cluster_weights {
            weights.extend(w.iter().enumerate().map(|(cluster, &weight)| ClusterWeightPoint {
                config_fingerprint: fp.to_string(),
                date_index: d.date_index,
                cluster,
                weight,
            }));
        }
        let m = DailyMetrics::compute(&d.aggregate_demand_kw, &b.aggregate_demand_kw, 1.0, 0.0);
        let mb = DailyMetrics::compute(&b.aggregate_demand_kw, &b.aggregate_demand_kw, 1.0, 0.0);
        let e = d.device_energy_kwh;
        series.push(DailySeriesPoint {
            config_fingerprint: fp.to_string(),
            date_index: d.date_index,
            window: if i < burn_in { WINDOW_BURN_IN } else { WINDOW_EVALUATION }.into(),
            peak_kw: m.peak_kw,
            baseline_peak_kw: mb.peak_kw,
            pds_pct: m.pds_pct,
            load_factor: m.load_factor,
            baseline_load_factor: mb.load_factor,
            price_rel_change: d.price_rel_change,
            hvac_kwh: e[0],
            flexible_load_kwh: e[1],
            battery_kwh: e[2],
            pv_kwh: e[3],
        });
    }
    let rel = PathBuf::from("plots").join("daily_series.csv");
    write_csv(&dir.join(&rel), &series)?;
    files.push(rel);
    if !weights.is_empty() {
        let rel = PathBuf::from("plots").join("cluster_weights.csv");
        write_csv(&dir.join(&rel), &weights)?;
        files.push(rel);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(day: i64, scale: f64) -> DayRecord {
        DayRecord {
            date_index: day,
            prices: Some(vec![0.1, -0.2, 0.3]),
            aggregate_demand_kw: vec![1.0 * scale, 2.5 * scale, 0.1 + scale],
            planned_aggregate_kw: vec![1.0, 2.0, 3.0],
            price_rel_change: None,
            cluster_weights: Some(vec![0.25, 0.75]),
            negotiation: None,
            zero_gradient: false,
            device_energy_kwh: [1.0, 2.0, 0.0, -0.5],
            max_kkt_residual: 1e-9,
            solver_iterations: 12,
            learner_snapshot: None,
        }
    }

    #[test]
    fn trace_lines_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let trace = SimulationTrace {
            config_fingerprint: "abc".into(),
            mode: ModeVariant::DynamicClustered,
            n_households: 2,
            n_participating: 1,
            days: vec![record(0, 1.0 / 3.0), record(1, std::f64::consts::PI)],
        };
        let p = dir.path().join("t.jsonl");
        write_trace(&p, &trace).unwrap();
        let back = read_trace(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].day, trace.days[1]);
        let first = std::fs::read_to_string(&p).unwrap();
        assert!(first.starts_with("{\"config_fingerprint\":\"abc\",\"run\":\"dynamic_clustered\",\"date_index\":0,"));
    }

    #[test]
    fn metrics_csv_round_trips_and_has_summary() {
        let dir = tempfile::tempdir().unwrap();
        let run: Vec<DayRecord> = (0..4).map(|d| record(d, 0.9)).collect();
        let base: Vec<DayRecord> = (0..4).map(|d| record(d, 1.0)).collect();
        let rows = metrics_rows("fp", &run, &base, 1, 1.0, 0.9);
        assert_eq!(rows.iter().filter(|r| r.row == "summary").count(), 2);
        let p = dir.path().join("m.csv");
        write_csv(&p, &rows).unwrap();
        let back: Vec<MetricsRow> = read_csv(&p).unwrap();
        assert_eq!(back, rows);
    }
}
