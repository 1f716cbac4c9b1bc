//! Experiment orchestration: noise sweeps, evaluation matrices, cross-trace
//! evaluation, training runs and curve export.
//!
//! Every experiment samples `sample_count` windows of `sample_length` jobs
//! with seeds `base_seed + i`, so each cell is reproducible from its spec.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::agent::ppo::{ppo_train, EpochRecord};
use crate::agent::{load_model, save_model, ModelError, TrainConfig, TrainError};
use crate::backfill::{ActionMode, BackfillStrategy, EasyBackfill, NoBackfill};
use crate::policy::PolicyKind;
use crate::sim::{run_schedule, RuntimeEstimator, ScheduleResult, SimError};
use crate::workload::{
    read_swf_file, sample_sequence, Trace, WorkloadError, EXPERIMENT_PREFIX_JOBS,
};
use crate::AgentParams;

pub const DEFAULT_SAMPLE_LENGTH: usize = 1024;
pub const DEFAULT_SAMPLE_COUNT: usize = 10;
pub const DEFAULT_NOISE_LEVELS: [f64; 6] = [0.0, 0.05, 0.10, 0.20, 0.40, 1.0];

/// Per-epoch log written inside a training run directory.
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const MODEL_FILE: &str = "model.bin";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("column {column}: {source}")]
    Model {
        column: String,
        #[source]
        source: ModelError,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path}: {msg}")]
    Record { path: String, msg: String },
}

impl HarnessError {
    /// Short machine-readable kind, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Workload(_) => "workload",
            HarnessError::Sim(_) => "simulation",
            HarnessError::Train(_) => "training",
            HarnessError::Model { .. } => "model",
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Record { .. } => "record",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Sampling protocol shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub length: usize,
    pub count: usize,
    pub base_seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            length: DEFAULT_SAMPLE_LENGTH,
            count: DEFAULT_SAMPLE_COUNT,
            base_seed: 0,
        }
    }
}

impl Sampling {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn windows(&self, trace: &Trace) -> Result<Vec<(u64, Trace)>, HarnessError> {
        if self.count == 0 {
            return Err(HarnessError::Config("sample count must be positive".into()));
        }
        self.seeds()
            .into_iter()
            .map(|seed| Ok((seed, sample_sequence(trace, self.length, seed)?)))
            .collect()
    }
}

/// A named trace loaded from disk (first 10K jobs by default).
#[derive(Debug, Clone)]
pub struct NamedTrace {
    pub name: String,
    pub trace: Trace,
}

pub fn trace_name(path: &Path) -> String {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    file.trim_end_matches(".gz")
        .trim_end_matches(".swf")
        .to_string()
}

pub fn load_trace(
    path: &Path,
    first_jobs: Option<usize>,
    cluster_size: Option<u32>,
) -> Result<NamedTrace, HarnessError> {
    let trace =
        read_swf_file(path, cluster_size)?.truncated(first_jobs.unwrap_or(EXPERIMENT_PREFIX_JOBS));
    Ok(NamedTrace {
        name: trace_name(path),
        trace,
    })
}

/// Loaded models keyed by path, so a model is read once per experiment.
#[derive(Default)]
pub struct ModelStore {
    models: HashMap<PathBuf, AgentParams>,
}

impl ModelStore {
    pub fn get(&mut self, path: &Path, column: &str) -> Result<&AgentParams, HarnessError> {
        if !self.models.contains_key(path) {
            let params = load_model(path).map_err(|source| HarnessError::Model {
                column: column.to_string(),
                source,
            })?;
            self.models.insert(path.to_path_buf(), params);
        }
        Ok(&self.models[path])
    }

    pub fn insert(&mut self, path: PathBuf, params: AgentParams) {
        self.models.insert(path, params);
    }
}

/// Label used for a strategy in table headers. Model paths shrink to their stem.
pub fn strategy_label(strategy: &BackfillStrategy) -> String {
    match strategy {
        BackfillStrategy::Learned(path) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let parent = path
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned());
            match (stem.as_str(), parent) {
                ("model", Some(dir)) => format!("rl:{dir}"),
                _ => format!("rl:{stem}"),
            }
        }
        other => other.to_string(),
    }
}

/// Runs one strategy on one job sequence. Learned strategies act greedily.
pub fn simulate(
    trace: &Trace,
    policy: PolicyKind,
    strategy: &BackfillStrategy,
    models: &mut ModelStore,
) -> Result<ScheduleResult, HarnessError> {
    let result = match strategy {
        BackfillStrategy::None => run_schedule(
            trace,
            policy,
            &mut NoBackfill,
            RuntimeEstimator::RequestTime,
        )?,
        BackfillStrategy::Easy(est) => {
            run_schedule(trace, policy, &mut EasyBackfill::default(), *est)?
        }
        BackfillStrategy::Learned(path) => {
            let column = format!("{policy}+{}", strategy_label(strategy));
            let params = models.get(path, &column)?;
            let mut agent = crate::LearnedBackfill::new(params, ActionMode::Greedy, 0);
            run_schedule(trace, policy, &mut agent, strategy.estimator())?
        }
    };
    Ok(result)
}

/// Per-sample bsld values of one (trace, policy, strategy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub seeds: Vec<u64>,
    pub samples: Vec<f64>,
}

impl Cell {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

fn run_cell(
    windows: &[(u64, Trace)],
    policy: PolicyKind,
    strategy: &BackfillStrategy,
    models: &mut ModelStore,
) -> Result<Cell, HarnessError> {
    let mut cell = Cell {
        seeds: Vec::with_capacity(windows.len()),
        samples: Vec::with_capacity(windows.len()),
    };
    for (seed, window) in windows {
        cell.seeds.push(*seed);
        cell.samples
            .push(simulate(window, policy, strategy, models)?.avg_bsld);
    }
    Ok(cell)
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation keeps CSVs bit-reproducible
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub policy: PolicyKind,
    pub noise: f64,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub rows: Vec<NoiseRow>,
    /// EASY with request times per policy, when the trace has them.
    pub request_time: BTreeMap<String, Cell>,
}

impl NoiseSweep {
    pub fn cell(&self, policy: PolicyKind, noise: f64) -> Option<&Cell> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.noise == noise)
            .map(|r| &r.cell)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,noise,mean_bsld,easy_req_bsld\n");
        for row in &self.rows {
            let req = self
                .request_time
                .get(row.policy.name())
                .map(|c| fmt_f64(c.mean()))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.policy,
                fmt_f64(row.noise),
                fmt_f64(row.cell.mean()),
                req
            );
        }
        out
    }
}

/// EASY with actual runtimes inflated by each noise level, per policy.
pub fn run_noise_sweep(
    trace: &Trace,
    policies: &[PolicyKind],
    noise_levels: &[f64],
    sampling: &Sampling,
) -> Result<NoiseSweep, HarnessError> {
    if let Some(bad) = noise_levels.iter().find(|n| !(**n >= 0.0 && n.is_finite())) {
        return Err(HarnessError::Config(format!(
            "noise level {bad} must be a non-negative number"
        )));
    }
    let windows = sampling.windows(trace)?;
    let mut models = ModelStore::default();
    let mut rows = Vec::new();
    let mut request_time = BTreeMap::new();
    for &policy in policies {
        for &noise in noise_levels {
            let strategy = BackfillStrategy::Easy(RuntimeEstimator::NoisyActual(noise));
            rows.push(NoiseRow {
                policy,
                noise,
                cell: run_cell(&windows, policy, &strategy, &mut models)?,
            });
        }
        if trace.has_request_time {
            let strategy = BackfillStrategy::Easy(RuntimeEstimator::RequestTime);
            request_time.insert(
                policy.name().to_string(),
                run_cell(&windows, policy, &strategy, &mut models)?,
            );
        }
    }
    Ok(NoiseSweep { rows, request_time })
}

/// What to evaluate: every trace against every policy+strategy column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub traces: Vec<PathBuf>,
    pub policies: Vec<PolicyKind>,
    #[serde(with = "strategy_strings")]
    pub strategies: Vec<BackfillStrategy>,
    pub sampling: Sampling,
    pub first_jobs: usize,
    pub output_dir: Option<PathBuf>,
}

mod strategy_strings {
    use super::BackfillStrategy;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[BackfillStrategy], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BackfillStrategy>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Cells keyed by (trace, column).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub traces: Vec<String>,
    pub columns: Vec<String>,
    pub cells: BTreeMap<(String, String), Cell>,
}

impl EvalMatrix {
    pub fn get(&self, trace: &str, column: &str) -> Option<&Cell> {
        self.cells.get(&(trace.to_string(), column.to_string()))
    }

    /// Rows are traces, columns are policy+strategy, values are means.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("trace");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for t in &self.traces {
            out.push_str(t);
            for c in &self.columns {
                out.push(',');
                if let Some(cell) = self.get(t, c) {
                    out.push_str(&fmt_f64(cell.mean()));
                }
            }
            out.push('\n');
        }
        out
    }

    /// One line per (trace, column, sample).
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("trace,column,sample,seed,bsld\n");
        for ((t, c), cell) in &self.cells {
            for (i, (seed, v)) in cell.seeds.iter().zip(&cell.samples).enumerate() {
                let _ = writeln!(out, "{t},{c},{i},{seed},{}", fmt_f64(*v));
            }
        }
        out
    }
}

pub fn column_name(policy: PolicyKind, strategy: &BackfillStrategy) -> String {
    format!("{policy}+{}", strategy_label(strategy))
}

/// Evaluates every (trace, policy, strategy) combination on the same windows.
pub fn evaluate_traces(
    traces: &[NamedTrace],
    policies: &[PolicyKind],
    strategies: &[BackfillStrategy],
    sampling: &Sampling,
    models: &mut ModelStore,
) -> Result<EvalMatrix, HarnessError> {
    let mut matrix = EvalMatrix::default();
    for &p in policies {
        for s in strategies {
            matrix.columns.push(column_name(p, s));
        }
    }
    // fail before any simulation if a model is missing
    for &p in policies {
        for s in strategies {
            if let BackfillStrategy::Learned(path) = s {
                models.get(path, &column_name(p, s))?;
            }
        }
    }
    for nt in traces {
        matrix.traces.push(nt.name.clone());
        let windows = sampling.windows(&nt.trace)?;
        for &p in policies {
            for s in strategies {
                let cell = run_cell(&windows, p, s, models)?;
                matrix
                    .cells
                    .insert((nt.name.clone(), column_name(p, s)), cell);
            }
        }
    }
    Ok(matrix)
}

pub fn evaluate_matrix(spec: &ExperimentSpec) -> Result<EvalMatrix, HarnessError> {
    let traces = spec
        .traces
        .iter()
        .map(|p| load_trace(p, Some(spec.first_jobs), None))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_traces(
        &traces,
        &spec.policies,
        &spec.strategies,
        &spec.sampling,
        &mut ModelStore::default(),
    )
}

/// Models trained on some traces, each evaluated on every trace under every
/// policy, next to EASY with request times and with actual runtimes.
pub fn cross_evaluate(
    models: &[(String, PathBuf)],
    traces: &[NamedTrace],
    policies: &[PolicyKind],
    sampling: &Sampling,
) -> Result<CrossMatrix, HarnessError> {
    let mut store = ModelStore::default();
    let mut strategies = vec![
        BackfillStrategy::Easy(RuntimeEstimator::RequestTime),
        BackfillStrategy::Easy(RuntimeEstimator::ActualRuntime),
    ];
    let mut labels = vec!["EASY".to_string(), "EASY-AR".to_string()];
    for (name, path) in models {
        strategies.push(BackfillStrategy::Learned(path.clone()));
        labels.push(format!("RL-{name}"));
    }
    let matrix = evaluate_traces(traces, policies, &strategies, sampling, &mut store)?;
    let mut cells = BTreeMap::new();
    for &p in policies {
        for nt in traces {
            for (s, label) in strategies.iter().zip(&labels) {
                let cell = matrix
                    .get(&nt.name, &column_name(p, s))
                    .expect("every combination was evaluated")
                    .clone();
                cells.insert((p.name().to_string(), nt.name.clone(), label.clone()), cell);
            }
        }
    }
    Ok(CrossMatrix {
        policies: policies.to_vec(),
        traces: traces.iter().map(|t| t.name.clone()).collect(),
        columns: labels,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub policies: Vec<PolicyKind>,
    pub traces: Vec<String>,
    pub columns: Vec<String>,
    /// Keyed by (policy, trace, column).
    pub cells: BTreeMap<(String, String, String), Cell>,
}

impl CrossMatrix {
    pub fn get(&self, policy: PolicyKind, trace: &str, column: &str) -> Option<&Cell> {
        self.cells.get(&(
            policy.name().to_string(),
            trace.to_string(),
            column.to_string(),
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,trace");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for p in &self.policies {
            for t in &self.traces {
                let _ = write!(out, "{p},{t}");
                for c in &self.columns {
                    out.push(',');
                    if let Some(cell) = self.get(*p, t, c) {
                        out.push_str(&fmt_f64(cell.mean()));
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Trains on `trace`, appending one JSON line per epoch to `dir/epochs.jsonl`
/// and writing the final model to `dir/model.bin`.
pub fn train_to_dir(
    trace: &Trace,
    policy: PolicyKind,
    config: &TrainConfig,
    dir: &Path,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(AgentParams, Vec<EpochRecord>), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log_path = dir.join(EPOCH_LOG);
    let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let config_text = toml::to_string(config).map_err(|e| HarnessError::Config(e.to_string()))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, config_text).map_err(io_err(&config_path))?;

    let mut write_err = None;
    let outcome = ppo_train::<f64>(trace, policy, config, |record, _| {
        let line = serde_json::to_string(record).expect("epoch records serialize");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
        progress(record);
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path)(e));
    }
    let model_path = dir.join(MODEL_FILE);
    save_model(&outcome.params, &model_path).map_err(|source| HarnessError::Model {
        column: model_path.display().to_string(),
        source,
    })?;
    Ok((outcome.params, outcome.curve))
}

/// Reads `epochs.jsonl` from a run directory.
pub fn read_epoch_log(run_dir: &Path) -> Result<Vec<EpochRecord>, HarnessError> {
    let path = run_dir.join(EPOCH_LOG);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| HarnessError::Record {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Plot-ready `epoch,mean_reward,mean_bsld` CSV from a training run.
pub fn export_training_curve(run_dir: &Path) -> Result<String, HarnessError> {
    let records = read_epoch_log(run_dir)?;
    let mut out = String::from("epoch,mean_reward,mean_bsld\n");
    let mut last = None;
    for r in &records {
        if last.is_some_and(|e| r.epoch <= e) {
            return Err(HarnessError::Record {
                path: run_dir.join(EPOCH_LOG).display().to_string(),
                msg: format!("epoch {} out of order", r.epoch),
            });
        }
        last = Some(r.epoch);
        let _ = writeln!(
            out,
            "{},{},{}",
            r.epoch,
            fmt_f64(r.mean_reward),
            fmt_f64(r.mean_bsld)
        );
    }
    Ok(out)
}

/// First epoch whose reward reaches `fraction` of the way from the first
/// epoch's reward to the final one.
pub fn epochs_to_fraction_of_final(curve: &[EpochRecord], fraction: f64) -> Option<usize> {
    let first = curve.first()?.mean_reward;
    let last = curve.last()?.mean_reward;
    let target = first + fraction * (last - first);
    curve
        .iter()
        .find(|r| {
            if last >= first {
                r.mean_reward >= target
            } else {
                r.mean_reward <= target
            }
        })
        .map(|r| r.epoch)
}

/// Git blob hash (`sha1("blob <len>\0" + content)`) of a file.
pub fn content_hash(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `manifest.json` describing an experiment and its inputs.
pub fn write_manifest(
    dir: &Path,
    spec: serde_json::Value,
    inputs: &[PathBuf],
) -> Result<(), HarnessError> {
    let mut hashes = serde_json::Map::new();
    for p in inputs {
        hashes.insert(
            p.display().to_string(),
            serde_json::Value::String(content_hash(p)?),
        );
    }
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "spec": spec,
        "inputs": hashes,
    });
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate_synthetic, SyntheticSpec};

    fn small_trace() -> Trace {
        generate_synthetic(&SyntheticSpec::lublin_like_2(400), 3).unwrap()
    }

    fn sampling() -> Sampling {
        Sampling {
            length: 128,
            count: 3,
            base_seed: 10,
        }
    }

    #[test]
    fn noise_sweep_shape_and_identity() {
        let trace = small_trace();
        let sweep =
            run_noise_sweep(&trace, &PolicyKind::ALL, &DEFAULT_NOISE_LEVELS, &sampling()).unwrap();
        assert_eq!(sweep.rows.len(), 4 * 6);
        assert!(sweep
            .rows
            .iter()
            .all(|r| r.cell.samples.iter().all(|&b| b >= 1.0)));
        // synthetic traces carry no request time column
        assert!(sweep.request_time.is_empty());
        let windows = sampling().windows(&trace).unwrap();
        let ar = run_cell(
            &windows,
            PolicyKind::Fcfs,
            &BackfillStrategy::Easy(RuntimeEstimator::ActualRuntime),
            &mut ModelStore::default(),
        )
        .unwrap();
        assert_eq!(sweep.cell(PolicyKind::Fcfs, 0.0).unwrap(), &ar);
        assert!(run_noise_sweep(&trace, &[PolicyKind::Fcfs], &[-0.1], &sampling()).is_err());
        assert_eq!(sweep.to_csv().lines().count(), 25);
    }

    #[test]
    fn missing_model_names_column() {
        let traces = vec![NamedTrace {
            name: "t".into(),
            trace: small_trace(),
        }];
        let strategies = vec![BackfillStrategy::Learned(PathBuf::from(
            "/nonexistent/agent.bin",
        ))];
        let err = evaluate_traces(
            &traces,
            &[PolicyKind::Sjf],
            &strategies,
            &sampling(),
            &mut ModelStore::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("sjf+rl:agent"), "{err}");
    }

    #[test]
    fn matrix_means_match_samples() {
        let traces = vec![NamedTrace {
            name: "syn".into(),
            trace: small_trace(),
        }];
        let strategies = vec![
            BackfillStrategy::None,
            BackfillStrategy::Easy(RuntimeEstimator::RequestTime),
        ];
        let m = evaluate_traces(
            &traces,
            &[PolicyKind::Fcfs],
            &strategies,
            &sampling(),
            &mut ModelStore::default(),
        )
        .unwrap();
        let samples = m.samples_csv();
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for line in samples.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let e = sums.entry(f[1].to_string()).or_default();
            e.0 += f[4].parse::<f64>().unwrap();
            e.1 += 1;
        }
        for (col, (sum, n)) in sums {
            assert_eq!(sum / n as f64, m.get("syn", &col).unwrap().mean());
        }
        assert_eq!(
            m.summary_csv().lines().next().unwrap(),
            "trace,fcfs+none,fcfs+easy:req"
        );
    }

    #[test]
    fn curve_export_requires_run_dir() {
        assert!(export_training_curve(Path::new("/nonexistent/run")).is_err());
    }

    #[test]
    fn fraction_of_final() {
        let rec = |epoch, r| EpochRecord {
            epoch,
            mean_reward: r,
            mean_bsld: 0.0,
            mean_baseline_bsld: 0.0,
            violations: 0,
            steps: 0,
            update: Default::default(),
        };
        let curve = vec![rec(0, -1.0), rec(1, 0.0), rec(2, 0.8), rec(3, 1.0)];
        assert_eq!(epochs_to_fraction_of_final(&curve, 0.9), Some(2));
    }

    #[test]
    fn labels() {
        assert_eq!(
            strategy_label(&BackfillStrategy::Learned("runs/hpc2n/model.bin".into())),
            "rl:hpc2n"
        );
        assert_eq!(
            strategy_label(&BackfillStrategy::Learned("x/sdsc.bin".into())),
            "rl:sdsc"
        );
        assert_eq!(
            trace_name(Path::new("/d/SDSC-SP2-1998-4.2-cln.swf.gz")),
            "SDSC-SP2-1998-4.2-cln"
        );
    }
}
