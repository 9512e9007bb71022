//! CSV and JSON artifacts of simulations, runs and sweeps.
//!
//! Column layouts are documented in `docs/csv_schema.md`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::EnsembleSummary;
use crate::ensemble::EnsembleSnapshot;
use crate::experiment::{aggregate, AggregateRow, Dataset, RepeatResult, RunConfig, TruthSource, VariantOutcome, PER_RUN_METRICS, PER_TIME_METRICS};
use crate::observation::{Datum, ObservationRecord};
use crate::smc::MutationReport;
use crate::tempering::TemperStage;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Serializes `rows` as CSV into any writer.
pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows` to `path`, creating parent directories.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(file_err(parent))?;
    }
    let file = File::create(path).map_err(file_err(path))?;
    write_rows(BufWriter::new(file), rows).map_err(csv_err(path))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(file_err(parent))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(file_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One observed scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub n: usize,
    pub time: f64,
    /// `front` or `pressure`.
    pub component: String,
    /// Zero-based sensor index; empty for the front.
    pub sensor: Option<usize>,
    /// Sensor position; empty for the front.
    pub position: Option<f64>,
    pub value: f64,
    pub variance: f64,
}

pub fn record_rows(records: &[ObservationRecord], sensors: &[f64]) -> Vec<RecordRow> {
    let mut rows = Vec::new();
    for r in records {
        if let Some(d) = r.front {
            rows.push(RecordRow {
                n: r.index,
                time: r.time,
                component: "front".into(),
                sensor: None,
                position: None,
                value: d.value,
                variance: d.variance,
            });
        }
        for (m, d) in r.pressure.iter().flatten().enumerate() {
            rows.push(RecordRow {
                n: r.index,
                time: r.time,
                component: "pressure".into(),
                sensor: Some(m),
                position: sensors.get(m).copied(),
                value: d.value,
                variance: d.variance,
            });
        }
    }
    rows
}

/// Observation records and the sensor positions they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFile {
    pub records: Vec<ObservationRecord>,
    pub sensors: Vec<f64>,
}

pub fn read_records(path: &Path) -> Result<ObservationFile, IoError> {
    let rows: Vec<RecordRow> = read_csv(path)?;
    let mut by_time: BTreeMap<usize, ObservationRecord> = BTreeMap::new();
    let mut sensors: BTreeMap<usize, f64> = BTreeMap::new();
    for row in rows {
        let record = by_time.entry(row.n).or_insert_with(|| ObservationRecord {
            index: row.n,
            time: row.time,
            front: None,
            pressure: None,
        });
        if record.time != row.time {
            return Err(malformed(path, format!("time index {} has two times", row.n)));
        }
        let datum = Datum {
            value: row.value,
            variance: row.variance,
        };
        match (row.component.as_str(), row.sensor, row.position) {
            ("front", None, _) => record.front = Some(datum),
            ("pressure", Some(m), Some(x)) => {
                let pressure = record.pressure.get_or_insert_with(Vec::new);
                if pressure.len() != m {
                    return Err(malformed(path, format!("time index {}: sensor {m} out of order", row.n)));
                }
                pressure.push(datum);
                if *sensors.entry(m).or_insert(x) != x {
                    return Err(malformed(path, format!("sensor {m} has two positions")));
                }
            }
            (c, _, _) => return Err(malformed(path, format!("bad component row `{c}` at time index {}", row.n))),
        }
    }
    let records: Vec<ObservationRecord> = by_time.into_values().collect();
    if records.iter().enumerate().any(|(i, r)| r.index != i + 1) {
        return Err(malformed(path, "time indices must run 1, 2, ... without gaps"));
    }
    let sensors: Vec<f64> = sensors.into_values().collect();
    if records
        .iter()
        .any(|r| r.pressure.as_ref().is_some_and(|p| p.len() != sensors.len()))
    {
        return Err(malformed(path, "every time must report every sensor"));
    }
    Ok(ObservationFile { records, sensors })
}

/// One cell of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    /// `data` or `inversion`; may be omitted in input files.
    pub grid: Option<String>,
    pub cell: usize,
    pub x: f64,
    pub value: f64,
}

fn field_rows(name: &str, field: &crate::forward::LogPermField) -> Vec<FieldRow> {
    let grid = field.grid();
    field
        .values()
        .iter()
        .enumerate()
        .map(|(s, &value)| FieldRow {
            grid: Some(name.into()),
            cell: s,
            x: grid.center(s),
            value,
        })
        .collect()
}

/// Values of the rows tagged `grid` (or untagged), in cell order.
pub fn read_field(path: &Path, grid: &str) -> Result<Vec<f64>, IoError> {
    let mut rows: Vec<FieldRow> = read_csv(path)?;
    rows.retain(|r| r.grid.as_deref().is_none_or(|g| g == grid));
    rows.sort_by_key(|r| r.cell);
    if rows.iter().enumerate().any(|(i, r)| r.cell != i) {
        return Err(malformed(path, format!("cells of grid `{grid}` must be 0, 1, ... without gaps")));
    }
    Ok(rows.into_iter().map(|r| r.value).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub n: usize,
    pub time: f64,
    pub front: f64,
}

pub const RECORDS_FILE: &str = "records.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const FRONTS_FILE: &str = "fronts.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const MUTATIONS_FILE: &str = "mutations.csv";
pub const SUMMARIES_FILE: &str = "summaries.csv";
pub const ENSEMBLE_FILE: &str = "ensemble.csv";
pub const COST_FILE: &str = "cost.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURES_FILE: &str = "failures.csv";

/// Writes the records, truth and true fronts of `data`; returns the file names.
pub fn write_dataset(dir: &Path, config: &RunConfig, data: &Dataset) -> Result<Vec<String>, IoError> {
    let sensors = config.measurement.active_sensors();
    write_csv(&dir.join(RECORDS_FILE), &record_rows(&data.records, sensors))?;
    let mut truth = field_rows("data", &data.truth_fine);
    truth.extend(field_rows("inversion", &data.truth));
    write_csv(&dir.join(TRUTH_FILE), &truth)?;
    let fronts: Vec<FrontRow> = data
        .records
        .iter()
        .zip(&data.fronts)
        .map(|(r, &front)| FrontRow {
            n: r.index,
            time: r.time,
            front,
        })
        .collect();
    write_csv(&dir.join(FRONTS_FILE), &fronts)?;
    Ok([RECORDS_FILE, TRUTH_FILE, FRONTS_FILE].map(String::from).to_vec())
}

/// Loads a dataset written by [`write_dataset`], checking it against `config`.
pub fn read_dataset(dir: &Path, config: &RunConfig, source: TruthSource) -> Result<Dataset, IoError> {
    let bad = |m: String| malformed(dir, m);
    let obs = read_records(&dir.join(RECORDS_FILE))?;
    if obs.sensors != config.measurement.active_sensors() {
        return Err(bad(format!(
            "recorded sensors {:?} differ from the configured {:?}",
            obs.sensors,
            config.measurement.active_sensors()
        )));
    }
    let times: Vec<f64> = obs.records.iter().map(|r| r.time).collect();
    if times != config.measurement.times {
        return Err(bad(format!("recorded times {times:?} differ from the configured ones")));
    }
    let field = |name: &str, grid: Result<crate::forward::Grid1D, crate::experiment::ExperimentError>| {
        let grid = grid.map_err(|e| bad(e.to_string()))?;
        let values = read_field(&dir.join(TRUTH_FILE), name)?;
        crate::forward::LogPermField::new(grid, values).map_err(|e| bad(format!("{name} truth: {e}")))
    };
    let truth_fine = field("data", config.data_grid())?;
    let truth = field("inversion", config.inversion_grid())?;
    let fronts: Vec<FrontRow> = read_csv(&dir.join(FRONTS_FILE))?;
    if fronts.len() != obs.records.len() {
        return Err(bad("fronts and records cover different times".into()));
    }
    Ok(Dataset {
        source,
        truth_fine,
        truth,
        records: obs.records,
        fronts: fronts.into_iter().map(|f| f.front).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub repeat: usize,
    pub n: usize,
    pub r: usize,
    pub phi: f64,
    pub increment: f64,
    pub alpha: f64,
    pub ess: f64,
    pub capped: bool,
    pub nonmonotone: bool,
}

impl TraceRow {
    fn new(repeat: usize, s: &TemperStage) -> Self {
        Self {
            repeat,
            n: s.n,
            r: s.r,
            phi: s.phi,
            increment: s.increment,
            alpha: s.alpha,
            ess: s.ess,
            capped: s.capped,
            nonmonotone: s.nonmonotone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRow {
    pub repeat: usize,
    pub n: usize,
    pub r: usize,
    pub phi: f64,
    pub beta: f64,
    pub final_beta: f64,
    pub acceptance: f64,
    pub failures: u64,
    pub movement_min: f64,
    pub movement_mean: f64,
    pub movement_max: f64,
    pub skipped_modes: usize,
}

impl MutationRow {
    fn new(repeat: usize, m: &MutationReport) -> Self {
        Self {
            repeat,
            n: m.n,
            r: m.r,
            phi: m.phi,
            beta: m.beta,
            final_beta: m.final_beta,
            acceptance: m.acceptance,
            failures: m.failures,
            movement_min: m.movement.min,
            movement_mean: m.movement.mean,
            movement_max: m.movement.max,
            skipped_modes: m.movement.skipped,
        }
    }
}

/// One pointwise statistic of one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub repeat: usize,
    pub n: usize,
    pub cell: usize,
    pub x: f64,
    /// `mean`, `variance` or `p<level>`.
    pub statistic: String,
    pub value: f64,
}

fn percentile_name(level: f64) -> String {
    format!("p{level}")
}

pub fn summary_rows(repeat: usize, summaries: &[EnsembleSummary], centers: &[f64]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (n, s) in summaries.iter().enumerate() {
        let mut push = |statistic: String, values: &[f64]| {
            for (cell, (&value, &x)) in values.iter().zip(centers).enumerate() {
                rows.push(SummaryRow {
                    repeat,
                    n,
                    cell,
                    x,
                    statistic: statistic.clone(),
                    value,
                });
            }
        };
        push("mean".into(), &s.mean);
        push("variance".into(), &s.variance);
        for (level, values) in s.levels.iter().zip(&s.percentiles) {
            push(percentile_name(*level), values);
        }
    }
    rows
}

/// Summaries of one repeat, indexed by `n` (the prior is `n = 0`).
pub fn read_summaries(path: &Path, repeat: usize) -> Result<Vec<EnsembleSummary>, IoError> {
    let rows: Vec<SummaryRow> = read_csv(path)?;
    let mut by_n: BTreeMap<usize, BTreeMap<String, Vec<(usize, f64)>>> = BTreeMap::new();
    for r in rows.into_iter().filter(|r| r.repeat == repeat) {
        by_n.entry(r.n).or_default().entry(r.statistic).or_default().push((r.cell, r.value));
    }
    if by_n.is_empty() {
        return Err(malformed(path, format!("no summaries for repeat {repeat}")));
    }
    let mut out = Vec::new();
    for (i, (n, mut stats)) in by_n.into_iter().enumerate() {
        if n != i {
            return Err(malformed(path, format!("summary for n = {i} is missing")));
        }
        let mut take = |name: &str| -> Result<Vec<f64>, IoError> {
            let mut v = stats
                .remove(name)
                .ok_or_else(|| malformed(path, format!("n = {n}: no `{name}` rows")))?;
            v.sort_by_key(|c| c.0);
            if v.iter().enumerate().any(|(i, c)| c.0 != i) {
                return Err(malformed(path, format!("n = {n}: `{name}` cells have gaps")));
            }
            Ok(v.into_iter().map(|c| c.1).collect())
        };
        let mean = take("mean")?;
        let variance = take("variance")?;
        let levels = crate::diagnostics::PERCENTILE_LEVELS.to_vec();
        let percentiles = levels
            .iter()
            .map(|&l| take(&percentile_name(l)))
            .collect::<Result<_, _>>()?;
        out.push(EnsembleSummary {
            mean,
            variance,
            levels,
            percentiles,
        });
    }
    Ok(out)
}

/// Particles as rows: `particle, weight, u0, u1, ...`.
pub fn write_ensemble(path: &Path, snapshot: &EnsembleSnapshot) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let cells = snapshot.fields.first().map_or(0, Vec::len);
    let mut header = vec!["particle".to_string(), "weight".to_string()];
    header.extend((0..cells).map(|s| format!("u{s}")));
    w.write_record(&header).map_err(csv_err(path))?;
    let equal = 1.0 / snapshot.len().max(1) as f64;
    for (j, field) in snapshot.fields.iter().enumerate() {
        let weight = snapshot.weights.as_ref().map_or(equal, |w| w[j]);
        let mut record = vec![j.to_string(), weight.to_string()];
        record.extend(field.iter().map(f64::to_string));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Cost counters of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatCost {
    pub repeat: usize,
    pub seed: u64,
    pub stages_per_time: Vec<usize>,
    pub forward_evaluations: Vec<u64>,
    /// Forward solves in units of a solve up to the last observation time.
    pub cost: f64,
    pub fallbacks: u64,
}

impl RepeatCost {
    pub fn new(result: &RepeatResult) -> Self {
        Self {
            repeat: result.repeat,
            seed: result.seed,
            stages_per_time: result.metrics.iter().map(|m| m.stages).collect(),
            forward_evaluations: result.forward_evaluations.clone(),
            cost: result.cost,
            fallbacks: result.fallbacks,
        }
    }
}

/// Everything needed to reproduce a run and find its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch; the only field that varies between identical runs.
    pub created: u64,
    pub config: RunConfig,
    pub truth: TruthSource,
    pub data_dir: Option<PathBuf>,
    pub costs: Vec<RepeatCost>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, truth: TruthSource) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config: config.clone(),
            truth,
            data_dir: None,
            costs: Vec::new(),
            files: Vec::new(),
        }
    }
}

/// Writes metrics, traces, mutation reports, summaries, the final ensemble of
/// the first repeat and the cost counters; returns the file names.
pub fn write_run(dir: &Path, results: &[RepeatResult], centers: &[f64]) -> Result<Vec<String>, IoError> {
    let metrics: Vec<_> = results.iter().flat_map(|r| r.metrics.iter().cloned()).collect();
    write_csv(&dir.join(METRICS_FILE), &metrics)?;
    let trace: Vec<TraceRow> = results
        .iter()
        .flat_map(|r| {
            r.trace.stages().iter().map(|s| TraceRow::new(r.repeat, s))
        })
        .collect();
    write_csv(&dir.join(TRACE_FILE), &trace)?;
    let mutations: Vec<MutationRow> = results
        .iter()
        .flat_map(|r| r.mutations.iter().map(|m| MutationRow::new(r.repeat, m)))
        .collect();
    write_csv(&dir.join(MUTATIONS_FILE), &mutations)?;
    let summaries: Vec<SummaryRow> = results
        .iter()
        .flat_map(|r| summary_rows(r.repeat, &r.summaries, centers))
        .collect();
    write_csv(&dir.join(SUMMARIES_FILE), &summaries)?;
    let mut files = vec![METRICS_FILE, TRACE_FILE, MUTATIONS_FILE, SUMMARIES_FILE];
    if let Some(first) = results.first() {
        write_ensemble(&dir.join(ENSEMBLE_FILE), &first.final_ensemble)?;
        files.push(ENSEMBLE_FILE);
    }
    let costs: Vec<RepeatCost> = results.iter().map(RepeatCost::new).collect();
    write_json(&dir.join(COST_FILE), &costs)?;
    files.push(COST_FILE);
    Ok(files.into_iter().map(String::from).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub variant: String,
    pub repeat: usize,
    pub error: String,
}

/// File name of the aggregated table for `metric`.
pub fn sweep_file(metric: &str) -> String {
    format!("sweep_{metric}.csv")
}

/// Writes one aggregated CSV per metric plus the failure list; returns the file names.
pub fn write_sweep(dir: &Path, outcomes: &[VariantOutcome]) -> Result<Vec<String>, IoError> {
    let mut files = Vec::new();
    for metric in PER_TIME_METRICS.iter().chain(&PER_RUN_METRICS) {
        let rows: Vec<AggregateRow> = aggregate(outcomes, metric);
        let name = sweep_file(metric);
        write_csv(&dir.join(&name), &rows)?;
        files.push(name);
    }
    let failures: Vec<FailureRow> = outcomes
        .iter()
        .flat_map(|o| {
            o.repeats.iter().enumerate().filter_map(|(k, r)| {
                r.as_ref().err().map(|e| FailureRow {
                    variant: o.label.clone(),
                    repeat: k,
                    error: e.clone(),
                })
            })
        })
        .collect();
    write_csv(&dir.join(FAILURES_FILE), &failures)?;
    files.push(FAILURES_FILE.into());
    for o in outcomes {
        let results: Vec<RepeatResult> = o.succeeded().cloned().collect();
        let metrics: Vec<_> = results.iter().flat_map(|r| r.metrics.iter().cloned()).collect();
        let name = format!("{}/{METRICS_FILE}", o.label);
        write_csv(&dir.join(&name), &metrics)?;
        files.push(name);
    }
    Ok(files)
}
