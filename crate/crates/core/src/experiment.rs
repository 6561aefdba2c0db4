//! Experiment pipelines shared by the command-line tool and the tests:
//! data loading, streaming estimation, metric curves, file emission and the
//! timing benchmark.
//!
//! Every run directory holds a `config.toml` record with the run's resolved
//! seeds; feeding that record back through [`run_all`] reproduces the run's
//! numeric files byte for byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{min_over_repeats, time_stream, GrowingDictionary};
use crate::config::{ExperimentConfig, MetricsConfig};
use crate::error::{Error, Result};
use crate::estimator::{Checkpoint, FeatureBuilder, OnlineEstimator, RfEstimator};
use crate::io;
use crate::metrics::{extract_pseudo_adjacency, moving_average, pmd_pfa, DetectionCurves, DetectionRun, PseudoAdjacency};
use crate::rff::{FeatureMaps, GaussianKernel};
use crate::scalar::Scalar;
use crate::series::TimeSeries;
use crate::synth::{generate, TopologyTrack};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATA_FILE: &str = "data.csv";
pub const TOPOLOGY_FILE: &str = "topology.jsonl";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const PMD_FILE: &str = "pmd.csv";
pub const PFA_FILE: &str = "pfa.csv";
pub const MSE_FILE: &str = "mse.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_REFERENCE_FILE: &str = "bench_reference.csv";

/// Samples of one run and, for generated data, the ground truth.
#[derive(Debug, Clone)]
pub struct RunData<F> {
    pub series: TimeSeries<F>,
    pub truth: Option<TopologyTrack<F>>,
}

/// Generates or reads the data of a single-run record.
pub fn load_data<F: Scalar>(record: &ExperimentConfig) -> Result<RunData<F>> {
    match (&record.generator, &record.data_csv) {
        (Some(g), _) => {
            let d = generate::<F>(g)?;
            Ok(RunData { series: d.series, truth: Some(d.truth) })
        }
        (None, Some(path)) => Ok(RunData { series: io::read_series(path)?, truth: None }),
        (None, None) => Err(Error::Config("no data source".into())),
    }
}

/// The series as the estimator sees it (standardized if requested).
pub fn estimation_input<F: Scalar>(record: &ExperimentConfig, series: &TimeSeries<F>) -> Result<TimeSeries<F>> {
    if series.nodes() != record.estimator.nodes {
        return Err(Error::DimensionMismatch { expected: record.estimator.nodes, found: series.nodes() });
    }
    if series.len() <= record.estimator.order {
        return Err(Error::WarmupIncomplete { needed: record.estimator.order + 1, have: series.len() });
    }
    Ok(if record.estimate.standardize { series.standardized() } else { series.clone() })
}

/// Pseudo-adjacency snapshots and one-step predictions of a streaming pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationTrace<F> {
    pub adjacency: Vec<PseudoAdjacency<F>>,
    /// Time index of every prediction row.
    pub prediction_t: Vec<usize>,
    /// Predictions of `y[t]` made before the update with `y[t]`.
    pub predictions: Vec<Vec<F>>,
}

/// Feeds `series` from the estimator's current position to the end. The
/// pseudo-adjacency is recorded after each update at `t % emit_every == 0`.
pub fn stream<F: Scalar, B: FeatureBuilder<F>>(
    est: &mut OnlineEstimator<F, B>,
    series: &TimeSeries<F>,
    emit_every: usize,
) -> Result<EstimationTrace<F>> {
    if emit_every == 0 {
        return Err(Error::invalid("emit_every must be at least 1"));
    }
    let start = est.samples_seen();
    if start > series.len() {
        return Err(Error::Data(format!("estimator has seen {start} samples but the series has {}", series.len())));
    }
    let mut trace = EstimationTrace { adjacency: Vec::new(), prediction_t: Vec::new(), predictions: Vec::new() };
    for t in start..series.len() {
        if let Some(out) = est.feed(series.sample(t))? {
            trace.prediction_t.push(out.t);
            trace.predictions.push(out.predictions);
            if out.t % emit_every == 0 {
                trace.adjacency.push(extract_pseudo_adjacency(est.state(), out.t));
            }
        }
    }
    Ok(trace)
}

/// Everything one run produces in memory.
#[derive(Debug, Clone)]
pub struct RunResult<F: Scalar> {
    pub record: ExperimentConfig,
    /// The series the estimator consumed.
    pub input: TimeSeries<F>,
    pub truth: Option<TopologyTrack<F>>,
    pub trace: EstimationTrace<F>,
    pub checkpoint: Checkpoint<F, FeatureMaps<F>>,
}

/// Runs the estimator over a single-run record.
pub fn simulate<F: Scalar>(record: &ExperimentConfig) -> Result<RunResult<F>> {
    let data = load_data::<F>(record)?;
    let input = estimation_input(record, &data.series)?;
    let mut est = RfEstimator::<F>::from_config(&record.estimator)?;
    let trace = stream(&mut est, &input, record.estimate.emit_every)?;
    Ok(RunResult { record: record.clone(), input, truth: data.truth, trace, checkpoint: est.checkpoint() })
}

/// All runs of `cfg`, in parallel, ordered by run index.
pub fn simulate_all<F: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<RunResult<F>>> {
    (0..cfg.runs).into_par_iter().map(|k| simulate(&cfg.resolve_run(k)?)).collect()
}

/// Observed samples aligned with the prediction rows of `trace`.
fn observed_at<F: Scalar>(input: &TimeSeries<F>, trace: &EstimationTrace<F>) -> Vec<Vec<F>> {
    trace.prediction_t.iter().map(|&t| input.sample(t).to_vec()).collect()
}

/// Node-averaged squared prediction error per prediction row.
fn squared_errors<F: Scalar>(observed: &[Vec<F>], predicted: &[Vec<F>]) -> Vec<F> {
    observed
        .iter()
        .zip(predicted)
        .map(|(y, yh)| {
            let n = F::of(y.len() as f64);
            y.iter().zip(yh).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>() / n
        })
        .collect()
}

/// Metric curves of one run or an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    /// Present when ground truth is known.
    pub detection: Option<DetectionCurves>,
    pub mse_t: Vec<usize>,
    /// Node-averaged MSE; a trailing moving average for one run, the ensemble
    /// mean for several.
    pub mse: Vec<f64>,
    pub mse_mode: MseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseMode {
    MovingAverage { window: usize },
    EnsembleMean { runs: usize },
}

/// Inputs to the metric computation of one run, as read from memory or disk.
#[derive(Debug, Clone)]
pub struct MetricInput<F> {
    pub adjacency: Vec<PseudoAdjacency<F>>,
    pub truth: Option<TopologyTrack<F>>,
    pub prediction_t: Vec<usize>,
    pub observed: Vec<Vec<F>>,
    pub predicted: Vec<Vec<F>>,
}

impl<F: Scalar> From<&RunResult<F>> for MetricInput<F> {
    fn from(r: &RunResult<F>) -> Self {
        Self {
            adjacency: r.trace.adjacency.clone(),
            truth: r.truth.clone(),
            prediction_t: r.trace.prediction_t.clone(),
            observed: observed_at(&r.input, &r.trace),
            predicted: r.trace.predictions.clone(),
        }
    }
}

fn detection_run<F: Scalar>(input: &MetricInput<F>, truth: &TopologyTrack<F>, normalize: bool) -> DetectionRun<F> {
    let estimates = input
        .adjacency
        .iter()
        .map(|a| if normalize { a.normalize_or_zero() } else { a.clone() })
        .collect();
    let truth = input.adjacency.iter().map(|a| truth.at(a.t).active().to_vec()).collect();
    DetectionRun { estimates, truth }
}

/// Computes P_MD / P_FA (when every run has ground truth) and the MSE curve.
/// A single run gets the moving-average MSE, several runs the ensemble mean.
pub fn metric_curves<F: Scalar>(runs: &[MetricInput<F>], cfg: &MetricsConfig) -> Result<MetricCurves> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs to evaluate"))?;
    for r in runs {
        if r.prediction_t != first.prediction_t {
            return Err(Error::Data("runs have different prediction time axes".into()));
        }
        if r.observed.len() != r.predicted.len() || r.observed.len() != r.prediction_t.len() {
            return Err(Error::DimensionMismatch { expected: r.prediction_t.len(), found: r.predicted.len() });
        }
    }
    let detection = if runs.iter().all(|r| r.truth.is_some()) {
        let det: Vec<DetectionRun<F>> = runs
            .iter()
            .map(|r| detection_run(r, r.truth.as_ref().expect("checked above"), cfg.normalize))
            .collect();
        Some(pmd_pfa(&det, &cfg.detection())?)
    } else {
        None
    };
    let per_run: Vec<Vec<F>> = runs.iter().map(|r| squared_errors(&r.observed, &r.predicted)).collect();
    let (mse, mse_mode) = if runs.len() == 1 {
        (moving_average(&per_run[0], cfg.mse_window)?, MseMode::MovingAverage { window: cfg.mse_window })
    } else {
        let k = F::of(runs.len() as f64);
        let mean = (0..first.prediction_t.len()).map(|i| per_run.iter().map(|e| e[i]).sum::<F>() / k).collect();
        (mean, MseMode::EnsembleMean { runs: runs.len() })
    };
    Ok(MetricCurves {
        detection,
        mse_t: first.prediction_t.clone(),
        mse: mse.iter().map(|v| v.as_f64()).collect(),
        mse_mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: usize,
    pub generator: Option<u64>,
    pub rff: u64,
}

fn seeds_of(record: &ExperimentConfig, run: usize) -> RunSeeds {
    RunSeeds { run, generator: record.generator.as_ref().map(|g| g.seed), rff: record.estimator.rff_seed }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Scalar summary of the metric curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mse_mode: MseMode,
    pub final_mse: Option<f64>,
    pub mean_pmd: Option<f64>,
    pub mean_pfa: Option<f64>,
    pub final_pmd: Option<f64>,
    pub final_pfa: Option<f64>,
}

impl From<&MetricCurves> for MetricSummary {
    fn from(c: &MetricCurves) -> Self {
        let d = c.detection.as_ref();
        Self {
            mse_mode: c.mse_mode,
            final_mse: c.mse.last().copied(),
            mean_pmd: d.and_then(|d| mean_defined(&d.miss)),
            mean_pfa: d.and_then(|d| mean_defined(&d.false_alarm)),
            final_pmd: d.and_then(|d| d.miss.last().copied().flatten()),
            final_pfa: d.and_then(|d| d.false_alarm.last().copied().flatten()),
        }
    }
}

/// The JSON report: configuration echo, seeds and metric summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub seeds: Vec<RunSeeds>,
    pub summary: MetricSummary,
}

/// Writes `t,value` curves and the report into `dir`.
pub fn write_metrics(dir: &Path, curves: &MetricCurves, report: &Report) -> Result<()> {
    match &curves.detection {
        Some(d) => {
            io::write_curve(&dir.join(PMD_FILE), &d.t, &d.miss)?;
            io::write_curve(&dir.join(PFA_FILE), &d.t, &d.false_alarm)?;
        }
        None => {
            remove_stale(&dir.join(PMD_FILE))?;
            remove_stale(&dir.join(PFA_FILE))?;
        }
    }
    let mse: Vec<Option<f64>> = curves.mse.iter().map(|&v| Some(v)).collect();
    io::write_curve(&dir.join(MSE_FILE), &curves.mse_t, &mse)?;
    io::write_json(&dir.join(REPORT_FILE), report)
}

fn remove_stale(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_record(dir: &Path, record: &ExperimentConfig) -> Result<()> {
    io::write_text(&dir.join(CONFIG_FILE), &record.to_toml()?)
}

/// Writes `data.csv`, `topology.jsonl` and the run record for every run.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if cfg.generator.is_none() {
        return Err(Error::Config("generate needs a [generator] section".into()));
    }
    (0..cfg.runs)
        .into_par_iter()
        .map(|k| {
            let record = cfg.resolve_run(k)?;
            let data = load_data::<f64>(&record)?;
            let dir = cfg.run_dir(k);
            io::write_series(&dir.join(DATA_FILE), &data.series)?;
            if let Some(truth) = &data.truth {
                io::write_topology(&dir.join(TOPOLOGY_FILE), truth)?;
            }
            write_record(&dir, &record)?;
            Ok(dir)
        })
        .collect()
}

/// Estimation outputs of one run: adjacency, predictions, checkpoint, record.
fn write_estimation(dir: &Path, record: &ExperimentConfig, trace: &EstimationTrace<f64>, ckpt: &Checkpoint<f64, FeatureMaps<f64>>) -> Result<()> {
    let e = &record.estimator;
    io::write_adjacency(&dir.join(ADJACENCY_FILE), e.nodes, e.order, &trace.adjacency)?;
    let rows = trace.prediction_t.iter().copied().zip(trace.predictions.iter().map(Vec::as_slice));
    io::write_node_rows(&dir.join(PREDICTIONS_FILE), e.nodes, rows)?;
    io::write_json(&dir.join(CHECKPOINT_FILE), ckpt)?;
    write_record(dir, record)
}

/// Runs the estimator on every run and writes its outputs. With `data`, the
/// samples come from that CSV instead of the configured source.
pub fn cmd_estimate(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    if let Some(path) = data {
        cfg.generator = None;
        cfg.data_csv = Some(path.to_path_buf());
    }
    // Fail on shape problems before any file is written.
    let records: Vec<ExperimentConfig> = (0..cfg.runs).map(|k| cfg.resolve_run(k)).collect::<Result<_>>()?;
    if let Some(path) = &cfg.data_csv {
        let s = io::read_series::<f64>(path)?;
        estimation_input(&records[0], &s)?;
    }
    records
        .par_iter()
        .enumerate()
        .map(|(k, record)| {
            let run = simulate::<f64>(record)?;
            let dir = cfg.run_dir(k);
            match &run.truth {
                Some(truth) => io::write_topology(&dir.join(TOPOLOGY_FILE), truth)?,
                // Without ground truth a leftover file would be scored as truth.
                None => remove_stale(&dir.join(TOPOLOGY_FILE))?,
            }
            write_estimation(&dir, record, &run.trace, &run.checkpoint)?;
            Ok(dir)
        })
        .collect()
}

/// Continues a run from a checkpoint over the remaining samples of its data;
/// outputs cover only the continuation.
pub fn cmd_resume(record: &ExperimentConfig, checkpoint: &Path, out_dir: &Path) -> Result<()> {
    let ckpt: Checkpoint<f64, FeatureMaps<f64>> = io::read_json(checkpoint)?;
    if ckpt.config != record.estimator {
        return Err(Error::Config("checkpoint was produced with a different estimator configuration".into()));
    }
    let data = load_data::<f64>(record)?;
    let input = estimation_input(record, &data.series)?;
    let mut est = RfEstimator::<f64>::resume(ckpt)?;
    let trace = stream(&mut est, &input, record.estimate.emit_every)?;
    write_estimation(out_dir, record, &trace, &est.checkpoint())
}

/// Reads a run directory written by [`cmd_estimate`].
pub fn read_run(cfg: &ExperimentConfig, k: usize) -> Result<(ExperimentConfig, MetricInput<f64>)> {
    let dir = cfg.run_dir(k);
    let record = cfg.resolve_run(k)?;
    let e = &record.estimator;
    let adjacency = io::read_adjacency(&dir.join(ADJACENCY_FILE), e.nodes, e.order)?;
    let (prediction_t, predicted) = io::read_node_rows::<f64>(&dir.join(PREDICTIONS_FILE))?;
    let topo = dir.join(TOPOLOGY_FILE);
    let truth = if topo.is_file() { Some(io::read_topology(&topo)?) } else { None };
    let data = load_data::<f64>(&record)?;
    let input = estimation_input(&record, &data.series)?;
    if let Some(&t) = prediction_t.iter().find(|&&t| t >= input.len()) {
        return Err(Error::Data(format!("prediction at t={t} lies beyond the data ({} samples)", input.len())));
    }
    let observed = prediction_t.iter().map(|&t| input.sample(t).to_vec()).collect();
    Ok((record, MetricInput { adjacency, truth, prediction_t, observed, predicted }))
}

/// Per-run metric files plus, for several runs, ensemble files at the root.
pub fn cmd_metrics(cfg: &ExperimentConfig) -> Result<MetricSummary> {
    let runs: Vec<(ExperimentConfig, MetricInput<f64>)> =
        (0..cfg.runs).into_par_iter().map(|k| read_run(cfg, k)).collect::<Result<_>>()?;
    for (k, (record, input)) in runs.iter().enumerate() {
        let curves = metric_curves(std::slice::from_ref(input), &cfg.metrics)?;
        let report = Report { config: record.clone(), seeds: vec![seeds_of(record, k)], summary: (&curves).into() };
        write_metrics(&cfg.run_dir(k), &curves, &report)?;
    }
    let inputs: Vec<MetricInput<f64>> = runs.iter().map(|(_, i)| i.clone()).collect();
    let curves = metric_curves(&inputs, &cfg.metrics)?;
    let summary = MetricSummary::from(&curves);
    let seeds = runs.iter().enumerate().map(|(k, (r, _))| seeds_of(r, k)).collect();
    write_metrics(&cfg.output_dir, &curves, &Report { config: cfg.clone(), seeds, summary: summary.clone() })?;
    Ok(summary)
}

/// Generate (when configured), estimate and evaluate.
pub fn run_all(cfg: &ExperimentConfig) -> Result<MetricSummary> {
    if cfg.generator.is_some() {
        cmd_generate(cfg)?;
    }
    cmd_estimate(cfg, None)?;
    cmd_metrics(cfg)
}

/// Per-iteration wall-clock seconds of the estimator over the first `steps`
/// samples of run 0, as the per-step minimum over `bench.repeats` passes.
/// With `reference`, times the growing-dictionary estimator instead.
pub fn bench_timings(cfg: &ExperimentConfig, steps: usize, reference: bool) -> Result<Vec<(usize, f64)>> {
    let mut record = cfg.resolve_run(0)?;
    if let Some(g) = record.generator.as_mut() {
        g.length = steps;
        g.validate()?;
    }
    let data = load_data::<f64>(&record)?;
    if data.series.len() < steps {
        return Err(Error::Data(format!("bench needs {steps} samples, data has {}", data.series.len())));
    }
    let series = TimeSeries::from_rows(data.series.nodes(), data.series.rows().take(steps))?;
    let input = estimation_input(&record, &series)?;
    let e = &record.estimator;
    let passes = (0..cfg.bench.repeats)
        .map(|_| {
            if reference {
                let kernel = GaussianKernel::new(e.kernel_variance)?;
                let mut g = GrowingDictionary::new(e.nodes, e.order, kernel, cfg.bench.reference_step)?;
                time_stream(&input, |s| g.feed(s).map(|p| p.is_some()))
            } else {
                let mut est = RfEstimator::<f64>::from_config(e)?;
                time_stream(&input, |s| est.feed(s).map(|o| o.is_some()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    min_over_repeats(&passes)
}

/// Writes `bench.csv` (or `bench_reference.csv`) into the output directory.
pub fn cmd_bench(cfg: &ExperimentConfig, steps: Option<usize>, reference: bool) -> Result<PathBuf> {
    let steps = steps
        .or(cfg.bench.steps)
        .or(cfg.generator.as_ref().map(|g| g.length))
        .ok_or_else(|| Error::Config("bench needs a step count (--steps or bench.steps)".into()))?;
    if steps <= cfg.estimator.order {
        return Err(Error::Config(format!("bench needs more than {} steps to finish warm-up", cfg.estimator.order)));
    }
    let timings = bench_timings(cfg, steps, reference)?;
    let path = cfg.output_dir.join(if reference { BENCH_REFERENCE_FILE } else { BENCH_FILE });
    let t: Vec<usize> = timings.iter().map(|&(t, _)| t).collect();
    let s: Vec<Option<f64>> = timings.iter().map(|&(_, s)| Some(s)).collect();
    io::write_curve(&path, &t, &s)?;
    Ok(path)
}
