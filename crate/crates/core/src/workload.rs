//! Job traces: SWF parsing, trace statistics, window sampling and a simple
//! synthetic generator.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of leading jobs taken from each trace for experiments.
pub const EXPERIMENT_PREFIX_JOBS: usize = 10_000;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace contains no usable jobs")]
    EmptyTrace,
    #[error("requested {requested} jobs but the trace only has {available}")]
    WindowTooLong { requested: usize, available: usize },
    #[error("invalid synthetic parameter: {0}")]
    InvalidParameter(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One batch job.
///
/// Times are whole seconds. `requested_time` is the user estimate and always
/// bounds `actual_runtime` from above (longer jobs are clamped on ingest, the
/// same way a scheduler kills jobs that outlive their request).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: usize,
    pub submit_time: i64,
    pub requested_nodes: u32,
    pub requested_time: i64,
    pub actual_runtime: i64,
    pub start_time: Option<i64>,
}

impl Job {
    pub fn new(
        id: usize,
        submit_time: i64,
        requested_nodes: u32,
        requested_time: i64,
        actual_runtime: i64,
    ) -> Self {
        let requested_time = requested_time.max(1);
        Job {
            id,
            submit_time,
            requested_nodes: requested_nodes.max(1),
            requested_time,
            actual_runtime: actual_runtime.clamp(0, requested_time),
            start_time: None,
        }
    }

    /// Wait time once the job has started.
    pub fn wait_time(&self) -> Option<i64> {
        self.start_time.map(|s| s - self.submit_time)
    }

    /// Time the job has spent in the queue as of `clock`.
    pub fn waited_until(&self, clock: i64) -> i64 {
        (clock - self.submit_time).max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub jobs: Vec<Job>,
    pub cluster_size: u32,
    /// False for synthetic traces that only carry actual runtimes.
    pub has_request_time: bool,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Keeps only the first `n` jobs.
    pub fn truncated(mut self, n: usize) -> Self {
        self.jobs.truncate(n);
        self
    }

    pub fn stats(&self) -> TraceStats {
        TraceStats::of(self)
    }

    /// Serializes the trace as SWF text. Only the fields the parser reads are
    /// populated; the rest are written as -1.
    pub fn to_swf(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "; Version: 2.2");
        let _ = writeln!(out, "; MaxNodes: {}", self.cluster_size);
        let _ = writeln!(out, "; MaxProcs: {}", self.cluster_size);
        if !self.has_request_time {
            let _ = writeln!(
                out,
                "; Note: synthetic trace, requested time equals actual runtime"
            );
        }
        for job in &self.jobs {
            let _ = writeln!(
                out,
                "{} {} -1 {} {} -1 -1 {} {} -1 1 -1 -1 -1 -1 -1 -1 -1",
                job.id + 1,
                job.submit_time,
                job.actual_runtime,
                job.requested_nodes,
                job.requested_nodes,
                job.requested_time,
            );
        }
        out
    }
}

/// Aggregate characteristics of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub size: u32,
    /// Mean inter-arrival time in seconds.
    pub i_t: f64,
    pub r_t_mean: f64,
    pub n_t_mean: f64,
    pub job_count: usize,
}

impl TraceStats {
    pub fn of(trace: &Trace) -> Self {
        let jobs = &trace.jobs;
        let n = jobs.len();
        let mean = |sum: f64| if n == 0 { 0.0 } else { sum / n as f64 };
        let i_t = if n < 2 {
            0.0
        } else {
            let span = jobs[n - 1].submit_time - jobs[0].submit_time;
            span as f64 / (n - 1) as f64
        };
        TraceStats {
            size: trace.cluster_size,
            i_t,
            r_t_mean: mean(jobs.iter().map(|j| j.requested_time as f64).sum()),
            n_t_mean: mean(jobs.iter().map(|j| j.requested_nodes as f64).sum()),
            job_count: n,
        }
    }
}

fn parse_field(tok: &str, line: usize, name: &str) -> Result<f64, WorkloadError> {
    let v: f64 = tok.parse().map_err(|_| WorkloadError::Parse {
        line,
        msg: format!("malformed {name} field {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(WorkloadError::Parse {
            line,
            msg: format!("non-finite {name} field {tok:?}"),
        });
    }
    Ok(v)
}

fn header_max_procs(comment: &str) -> Option<u32> {
    let body = comment.trim_start_matches(';').trim();
    let (key, value) = body.split_once(':')?;
    if key.trim().eq_ignore_ascii_case("MaxProcs") {
        value.trim().parse::<u32>().ok().filter(|&v| v > 0)
    } else {
        None
    }
}

/// Parses SWF text into a trace sorted by submit time.
///
/// Jobs with unknown runtime or node count are dropped; a missing request time
/// falls back to the actual runtime. The cluster size comes from the `MaxProcs`
/// header, then `cluster_size_override`, then the largest observed job. Jobs
/// that do not fit the cluster are dropped.
pub fn parse_swf(text: &str, cluster_size_override: Option<u32>) -> Result<Trace, WorkloadError> {
    let mut header_size = None;
    let mut raw = Vec::new();
    let mut saw_request_time = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with(';') {
            if let Some(size) = header_max_procs(trimmed) {
                header_size = Some(size);
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 9 {
            return Err(WorkloadError::Parse {
                line: line_no,
                msg: format!("expected at least 9 fields, found {}", fields.len()),
            });
        }
        let submit = parse_field(fields[1], line_no, "submit time")?;
        let run = parse_field(fields[3], line_no, "run time")?;
        let alloc = parse_field(fields[4], line_no, "allocated processors")?;
        let req_procs = parse_field(fields[7], line_no, "requested processors")?;
        let req_time = parse_field(fields[8], line_no, "requested time")?;
        parse_field(fields[0], line_no, "job id")?;

        let nodes = if req_procs > 0.0 { req_procs } else { alloc };
        if run <= 0.0 || nodes <= 0.0 || submit < 0.0 {
            continue;
        }
        let run = run.round() as i64;
        if run <= 0 {
            continue;
        }
        let requested = if req_time > 0.0 {
            saw_request_time = true;
            (req_time.round() as i64).max(1)
        } else {
            run
        };
        raw.push((submit.round() as i64, nodes.round() as u32, requested, run));
    }

    let cluster_size = header_size
        .or(cluster_size_override)
        .or_else(|| raw.iter().map(|r| r.1).max())
        .unwrap_or(0);
    raw.retain(|r| r.1 <= cluster_size);
    if raw.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    // stable: equal submit times keep file order
    raw.sort_by_key(|r| r.0);
    let jobs = raw
        .into_iter()
        .enumerate()
        .map(|(id, (s, n, r, a))| Job::new(id, s, n, r, a))
        .collect();
    Ok(Trace {
        jobs,
        cluster_size,
        has_request_time: saw_request_time,
    })
}

/// Reads an SWF file, transparently decompressing `.gz` files.
pub fn read_swf_file(
    path: &Path,
    cluster_size_override: Option<u32>,
) -> Result<Trace, WorkloadError> {
    let io_err = |source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = fs::read(path).map_err(io_err)?;
    let text = if path.extension().is_some_and(|e| e == "gz") {
        let mut s = String::new();
        flate2::read::GzDecoder::new(&bytes[..])
            .read_to_string(&mut s)
            .map_err(io_err)?;
        s
    } else {
        String::from_utf8_lossy(&bytes).into_owned()
    };
    parse_swf(&text, cluster_size_override)
}

/// Picks a contiguous window of `length` jobs at a seeded uniform offset and
/// shifts submit times so the window starts at zero. Job ids are preserved.
pub fn sample_sequence(trace: &Trace, length: usize, seed: u64) -> Result<Trace, WorkloadError> {
    let available = trace.jobs.len();
    if length > available || length == 0 {
        return Err(WorkloadError::WindowTooLong {
            requested: length,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..=available - length);
    Ok(window_at(trace, start, length))
}

/// The window `[start, start + length)` with submit times rebased to zero.
pub fn window_at(trace: &Trace, start: usize, length: usize) -> Trace {
    let slice = &trace.jobs[start..start + length];
    let origin = slice[0].submit_time;
    let jobs = slice
        .iter()
        .map(|j| Job {
            submit_time: j.submit_time - origin,
            start_time: None,
            ..j.clone()
        })
        .collect();
    Trace {
        jobs,
        cluster_size: trace.cluster_size,
        has_request_time: trace.has_request_time,
    }
}

/// Parameters of the synthetic workload generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub job_count: usize,
    pub cluster_size: u32,
    pub mean_interarrival: f64,
    /// Mean of ln(runtime seconds).
    pub runtime_log_mean: f64,
    pub runtime_log_sigma: f64,
    /// Node counts are 2^k with k uniform in `0..=max_node_power`.
    pub max_node_power: u32,
}

impl SyntheticSpec {
    /// Aggregates roughly matching the first synthetic trace of the evaluation
    /// (256 nodes, 771 s inter-arrival, ~4.9k s mean runtime).
    pub fn lublin_like_1(job_count: usize) -> Self {
        SyntheticSpec {
            job_count,
            cluster_size: 256,
            mean_interarrival: 771.0,
            runtime_log_mean: 4862f64.ln() - 0.5 * 1.5 * 1.5,
            runtime_log_sigma: 1.5,
            max_node_power: 7,
        }
    }

    /// Denser arrivals with shorter jobs (460 s inter-arrival, ~1.7k s runtime).
    pub fn lublin_like_2(job_count: usize) -> Self {
        SyntheticSpec {
            job_count,
            cluster_size: 256,
            mean_interarrival: 460.0,
            runtime_log_mean: 1695f64.ln() - 0.5 * 1.5 * 1.5,
            runtime_log_sigma: 1.5,
            max_node_power: 8,
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        if self.job_count == 0 {
            return Err(WorkloadError::EmptyTrace);
        }
        let checks = [
            (self.cluster_size > 0, "cluster_size"),
            (
                self.mean_interarrival > 0.0 && self.mean_interarrival.is_finite(),
                "mean_interarrival",
            ),
            (self.runtime_log_mean.is_finite(), "runtime_log_mean"),
            (
                self.runtime_log_sigma > 0.0 && self.runtime_log_sigma.is_finite(),
                "runtime_log_sigma",
            ),
            (self.max_node_power < 31, "max_node_power"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(WorkloadError::InvalidParameter((*name).to_string())),
            None => Ok(()),
        }
    }
}

/// Poisson arrivals, lognormal runtimes, power-of-two node counts.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Trace, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(1.0 / spec.mean_interarrival)
        .map_err(|e| WorkloadError::InvalidParameter(e.to_string()))?;
    let runtimes = LogNormal::new(spec.runtime_log_mean, spec.runtime_log_sigma)
        .map_err(|e| WorkloadError::InvalidParameter(e.to_string()))?;
    let mut clock = 0.0f64;
    let mut jobs = Vec::with_capacity(spec.job_count);
    for id in 0..spec.job_count {
        if id > 0 {
            clock += gaps.sample(&mut rng);
        }
        let run = (runtimes.sample(&mut rng).round() as i64).max(1);
        let k = rng.gen_range(0..=spec.max_node_power);
        let nodes = (1u32 << k).min(spec.cluster_size);
        jobs.push(Job::new(id, clock.floor() as i64, nodes, run, run));
    }
    Ok(Trace {
        jobs,
        cluster_size: spec.cluster_size,
        has_request_time: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
; Version: 2.2
; MaxProcs: 128
1 0 -1 3600 4 -1 -1 8 7200 -1 1 1 1 1 1 -1 -1 -1
2 30 -1 -1 4 -1 -1 8 7200 -1 1 1 1 1 1 -1 -1 -1
3 10 -1 100 2 -1 -1 -1 -1 -1 1 1 1 1 1 -1 -1 -1
4 50 -1 900 -1 -1 -1 -1 600 -1 1 1 1 1 1 -1 -1 -1
5 60 -1 900 3 -1 -1 4 600 -1 1 1 1 1 1 -1 -1 -1
";

    #[test]
    fn parses_field_mapping() {
        let t = parse_swf(SAMPLE, None).unwrap();
        assert_eq!(t.cluster_size, 128);
        assert!(t.has_request_time);
        let first = &t.jobs[0];
        assert_eq!(
            (
                first.submit_time,
                first.actual_runtime,
                first.requested_nodes,
                first.requested_time
            ),
            (0, 3600, 8, 7200)
        );
        // unknown runtime (job 2) and unknown node count (job 4) are dropped
        assert_eq!(t.len(), 3);
        // missing request time falls back to runtime, allocated procs stand in
        assert_eq!(
            (t.jobs[1].requested_nodes, t.jobs[1].requested_time),
            (2, 100)
        );
        // runtime above the request is clamped
        assert_eq!(t.jobs[2].actual_runtime, 600);
        assert_eq!(
            t.jobs.iter().map(|j| j.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn cluster_size_fallbacks() {
        let body = "1 0 -1 10 4 -1 -1 6 20 -1 -1 -1 -1 -1 -1 -1 -1 -1\n";
        assert_eq!(parse_swf(body, Some(64)).unwrap().cluster_size, 64);
        assert_eq!(parse_swf(body, None).unwrap().cluster_size, 6);
        let with_header = format!("; MaxProcs: 32\n{body}");
        assert_eq!(parse_swf(&with_header, Some(64)).unwrap().cluster_size, 32);
    }

    #[test]
    fn malformed_field_reports_line() {
        let body = "; c\n1 0 -1 10 4 -1 -1 6 20\n2 x -1 10 4 -1 -1 6 20\n";
        match parse_swf(body, None) {
            Err(WorkloadError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(matches!(
            parse_swf("; only comments\n", None),
            Err(WorkloadError::EmptyTrace)
        ));
        let none_usable = "1 0 -1 -1 4 -1 -1 6 20\n";
        assert!(matches!(
            parse_swf(none_usable, None),
            Err(WorkloadError::EmptyTrace)
        ));
    }

    #[test]
    fn interarrival_mean() {
        let body = "1 0 -1 10 1 -1 -1 1 10\n2 1055 -1 10 1 -1 -1 1 10\n3 2110 -1 10 1 -1 -1 1 10\n";
        let stats = parse_swf(body, None).unwrap().stats();
        assert_eq!(stats.i_t, 1055.0);
    }

    #[test]
    fn full_window_rebases_times() {
        let t = parse_swf(SAMPLE, None).unwrap();
        let shifted = parse_swf(&SAMPLE.replace("\n1 0 ", "\n1 5 "), None).unwrap();
        let w = sample_sequence(&shifted, shifted.len(), 99).unwrap();
        assert_eq!(w.jobs[0].submit_time, 0);
        assert_eq!(w.jobs.len(), t.jobs.len());
        assert!(sample_sequence(&t, t.len() + 1, 0).is_err());
    }

    #[test]
    fn synthetic_validation() {
        let mut spec = SyntheticSpec::lublin_like_1(0);
        assert!(matches!(
            generate_synthetic(&spec, 1),
            Err(WorkloadError::EmptyTrace)
        ));
        spec.job_count = 256;
        let t = generate_synthetic(&spec, 1).unwrap();
        assert!(t
            .jobs
            .windows(2)
            .all(|w| w[0].submit_time <= w[1].submit_time));
        assert!(!t.has_request_time);
        assert!(t.jobs.iter().all(|j| j.requested_time == j.actual_runtime));
        spec.mean_interarrival = -1.0;
        assert!(matches!(
            generate_synthetic(&spec, 1),
            Err(WorkloadError::InvalidParameter(_))
        ));
    }
}
