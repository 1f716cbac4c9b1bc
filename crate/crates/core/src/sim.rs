//! Discrete-event simulation of a homogeneous cluster.
//!
//! Scheduling is attempted at submission and completion events. True runtimes
//! drive completions; runtime estimates only drive decisions (reservations and
//! backfilling).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backfill::{BackfillContext, Backfiller, Candidate};
use crate::policy::{PolicyError, PolicyKind};
use crate::workload::{Job, Trace};

/// Interactive threshold for bounded slowdown, in seconds.
pub const BSLD_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("job {job} requests {nodes} nodes but the cluster has {total}")]
    RejectedJob { job: usize, nodes: u32, total: u32 },
    #[error("cannot reserve {nodes} nodes on a {total}-node cluster")]
    ImpossibleReservation { nodes: u32, total: u32 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("backfiller picked candidate {0} which does not fit")]
    InvalidBackfill(usize),
    #[error("invalid estimator {0:?}")]
    BadEstimator(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// max((wait + run) / max(run, threshold), 1).
pub fn bounded_slowdown<T: Float>(wait: T, run: T, threshold: T) -> T {
    ((wait + run) / run.max(threshold)).max(T::one())
}

/// How the scheduler estimates runtimes when making decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RuntimeEstimator {
    RequestTime,
    ActualRuntime,
    /// Actual runtime inflated by a non-negative fraction.
    NoisyActual(f64),
}

impl RuntimeEstimator {
    pub fn noisy(fraction: f64) -> Result<Self, SimError> {
        if fraction >= 0.0 && fraction.is_finite() {
            Ok(RuntimeEstimator::NoisyActual(fraction))
        } else {
            Err(SimError::BadEstimator(format!("noise {fraction}")))
        }
    }

    /// Estimated runtime in seconds, never below one.
    pub fn estimate(&self, job: &Job) -> i64 {
        self.estimate_of(job.requested_time, job.actual_runtime)
    }

    fn estimate_of(&self, requested: i64, actual: i64) -> i64 {
        let e = match *self {
            RuntimeEstimator::RequestTime => requested,
            RuntimeEstimator::ActualRuntime => actual,
            RuntimeEstimator::NoisyActual(f) => (actual as f64 * (1.0 + f)).round() as i64,
        };
        e.max(1)
    }
}

impl fmt::Display for RuntimeEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuntimeEstimator::RequestTime => f.write_str("req"),
            RuntimeEstimator::ActualRuntime => f.write_str("ar"),
            RuntimeEstimator::NoisyActual(x) => write!(f, "noisy:{}", x * 100.0),
        }
    }
}

impl FromStr for RuntimeEstimator {
    type Err = SimError;

    /// `req`, `ar` or `noisy:<percent>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "req" => Ok(RuntimeEstimator::RequestTime),
            "ar" => Ok(RuntimeEstimator::ActualRuntime),
            _ => {
                let pct = s
                    .strip_prefix("noisy:")
                    .and_then(|p| p.trim_end_matches('%').parse::<f64>().ok())
                    .ok_or_else(|| SimError::BadEstimator(s.to_string()))?;
                RuntimeEstimator::noisy(pct / 100.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningJob {
    pub id: usize,
    pub nodes: u32,
    pub start: i64,
    pub requested_time: i64,
    pub actual_runtime: i64,
}

impl RunningJob {
    pub fn true_end(&self) -> i64 {
        self.start + self.actual_runtime
    }

    pub fn estimated_end(&self, estimator: &RuntimeEstimator) -> i64 {
        self.start + estimator.estimate_of(self.requested_time, self.actual_runtime)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub total_nodes: u32,
    pub free_nodes: u32,
    pub running: Vec<RunningJob>,
    pub clock: i64,
}

/// Reservation for the relative job: when it can start and how many nodes
/// remain spare at that moment after it is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub time: i64,
    pub extra_nodes: u32,
}

impl ClusterState {
    pub fn new(total_nodes: u32) -> Self {
        ClusterState {
            total_nodes,
            free_nodes: total_nodes,
            running: Vec::new(),
            clock: 0,
        }
    }

    pub fn used_nodes(&self) -> u32 {
        self.running.iter().map(|r| r.nodes).sum()
    }

    pub fn start(&mut self, job: &Job) {
        debug_assert!(job.requested_nodes <= self.free_nodes);
        self.free_nodes -= job.requested_nodes;
        self.running.push(RunningJob {
            id: job.id,
            nodes: job.requested_nodes,
            start: self.clock,
            requested_time: job.requested_time,
            actual_runtime: job.actual_runtime,
        });
    }

    fn finish(&mut self, id: usize) {
        if let Some(pos) = self.running.iter().position(|r| r.id == id) {
            let done = self.running.swap_remove(pos);
            self.free_nodes += done.nodes;
        }
    }

    /// Earliest time at which `nodes` nodes are free, releasing running jobs
    /// in estimated-end order (ties by job id), plus the spare nodes left then.
    pub fn reservation(
        &self,
        nodes: u32,
        estimator: &RuntimeEstimator,
    ) -> Result<Reservation, SimError> {
        if nodes > self.total_nodes {
            return Err(SimError::ImpossibleReservation {
                nodes,
                total: self.total_nodes,
            });
        }
        let mut ends: Vec<(i64, usize, u32)> = self
            .running
            .iter()
            .map(|r| (r.estimated_end(estimator).max(self.clock), r.id, r.nodes))
            .collect();
        ends.sort_unstable();
        let mut available = self.free_nodes;
        let mut i = 0;
        // jobs already past their estimated end count as released now
        while i < ends.len() && ends[i].0 == self.clock {
            available += ends[i].2;
            i += 1;
        }
        if available >= nodes {
            return Ok(Reservation {
                time: self.clock,
                extra_nodes: available - nodes,
            });
        }
        while i < ends.len() {
            let t = ends[i].0;
            // everything released at the same instant counts toward the spare pool
            while i < ends.len() && ends[i].0 == t {
                available += ends[i].2;
                i += 1;
            }
            if available >= nodes {
                return Ok(Reservation {
                    time: t,
                    extra_nodes: available - nodes,
                });
            }
        }
        // node accounting is broken if the whole cluster cannot host the job
        Err(SimError::ImpossibleReservation {
            nodes,
            total: self.total_nodes,
        })
    }
}

/// Reservation time for `rjob` under `estimator`.
pub fn reservation_time(
    state: &ClusterState,
    rjob: &Job,
    estimator: &RuntimeEstimator,
) -> Result<i64, SimError> {
    state
        .reservation(rjob.requested_nodes, estimator)
        .map(|r| r.time)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: usize,
    pub submit: i64,
    pub start: i64,
    pub wait: i64,
    pub run: i64,
    pub bsld: f64,
}

/// One blocked-head event: the relative job, its reservation and what was backfilled.
#[derive(Debug, Clone, PartialEq)]
pub struct BackfillEvent {
    pub clock: i64,
    pub rjob: usize,
    pub reservation: i64,
    pub started: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleResult {
    /// Per-job records in trace order.
    pub records: Vec<JobRecord>,
    pub avg_bsld: f64,
    pub avg_wait: f64,
    pub makespan: i64,
    pub backfill_events: Vec<BackfillEvent>,
}

impl ScheduleResult {
    pub fn backfilled_jobs(&self) -> usize {
        self.backfill_events.iter().map(|e| e.started.len()).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "jobs": self.records.len(),
            "avg_bsld": self.avg_bsld,
            "avg_wait": self.avg_wait,
            "makespan": self.makespan,
            "backfilled": self.backfilled_jobs(),
        })
    }
}

/// Schedules `trace` with `policy` ordering the queue and `backfiller`
/// handling blocked heads. `estimator` drives reservations.
pub fn run_schedule<B: Backfiller + ?Sized>(
    trace: &Trace,
    policy: PolicyKind,
    backfiller: &mut B,
    estimator: RuntimeEstimator,
) -> Result<ScheduleResult, SimError> {
    if trace.jobs.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let total = trace.cluster_size;
    if let Some(j) = trace.jobs.iter().find(|j| j.requested_nodes > total) {
        return Err(SimError::RejectedJob {
            job: j.id,
            nodes: j.requested_nodes,
            total,
        });
    }
    let mut jobs: Vec<Job> = trace.jobs.clone();
    // positions double as ids inside the simulation; restored on output
    let original_ids: Vec<usize> = jobs.iter().map(|j| j.id).collect();
    for (pos, j) in jobs.iter_mut().enumerate() {
        j.id = pos;
        j.start_time = None;
    }

    let mut state = ClusterState::new(total);
    state.clock = jobs[0].submit_time;
    let mut completions: BinaryHeap<Reverse<(i64, usize)>> = BinaryHeap::new();
    let mut queue: Vec<usize> = Vec::new();
    let mut next_submit = 0;
    let mut events = Vec::new();

    loop {
        let next_arrival = jobs.get(next_submit).map(|j| j.submit_time);
        let next_done = completions.peek().map(|Reverse((t, _))| *t);
        let now = match (next_arrival, next_done) {
            (None, None) => break,
            (Some(a), None) => a,
            (None, Some(d)) => d,
            (Some(a), Some(d)) => a.min(d),
        };
        debug_assert!(now >= state.clock);
        state.clock = now;
        while let Some(&Reverse((t, id))) = completions.peek() {
            if t != now {
                break;
            }
            completions.pop();
            state.finish(id);
        }
        while next_submit < jobs.len() && jobs[next_submit].submit_time == now {
            queue.push(next_submit);
            next_submit += 1;
        }

        schedule_pass(
            &mut jobs,
            &mut queue,
            &mut state,
            &mut completions,
            policy,
            backfiller,
            &estimator,
            &mut events,
        )?;
    }

    let threshold = BSLD_THRESHOLD;
    let mut records = Vec::with_capacity(jobs.len());
    let mut makespan = 0;
    for (pos, j) in jobs.iter().enumerate() {
        let start = j
            .start_time
            .expect("every job starts once the event queue drains");
        let wait = start - j.submit_time;
        makespan = makespan.max(start + j.actual_runtime);
        records.push(JobRecord {
            id: original_ids[pos],
            submit: j.submit_time,
            start,
            wait,
            run: j.actual_runtime,
            bsld: bounded_slowdown(wait as f64, j.actual_runtime as f64, threshold),
        });
    }
    for e in &mut events {
        e.rjob = original_ids[e.rjob];
        for s in &mut e.started {
            *s = original_ids[*s];
        }
    }
    let n = records.len() as f64;
    Ok(ScheduleResult {
        avg_bsld: records.iter().map(|r| r.bsld).sum::<f64>() / n,
        avg_wait: records.iter().map(|r| r.wait as f64).sum::<f64>() / n,
        records,
        makespan,
        backfill_events: events,
    })
}

#[allow(clippy::too_many_arguments)]
fn schedule_pass<B: Backfiller + ?Sized>(
    jobs: &mut [Job],
    queue: &mut Vec<usize>,
    state: &mut ClusterState,
    completions: &mut BinaryHeap<Reverse<(i64, usize)>>,
    policy: PolicyKind,
    backfiller: &mut B,
    estimator: &RuntimeEstimator,
    events: &mut Vec<BackfillEvent>,
) -> Result<(), SimError> {
    if queue.is_empty() {
        return Ok(());
    }
    policy.sort_indices(queue, jobs, state.clock)?;

    let mut started_head = 0;
    while started_head < queue.len()
        && jobs[queue[started_head]].requested_nodes <= state.free_nodes
    {
        let idx = queue[started_head];
        start_job(jobs, idx, state, completions);
        started_head += 1;
    }
    queue.drain(..started_head);
    if queue.is_empty() {
        return Ok(());
    }

    let rjob_idx = queue[0];
    let rjob = &jobs[rjob_idx];
    let planned = state.reservation(rjob.requested_nodes, estimator)?;
    let mut event = BackfillEvent {
        clock: state.clock,
        rjob: rjob_idx,
        reservation: planned.time,
        started: Vec::new(),
    };
    if queue.len() > 1 && state.free_nodes > 0 {
        let truth = state.reservation(rjob.requested_nodes, &RuntimeEstimator::ActualRuntime)?;
        let candidates: Vec<Candidate<'_>> = queue[1..]
            .iter()
            .map(|&i| Candidate {
                job: &jobs[i],
                estimate: estimator.estimate(&jobs[i]),
            })
            .collect();
        let ctx = BackfillContext {
            clock: state.clock,
            rjob,
            reservation: planned.time,
            extra_nodes: planned.extra_nodes,
            free_nodes: state.free_nodes,
            total_nodes: state.total_nodes,
            true_reservation: truth.time,
            true_extra_nodes: truth.extra_nodes,
            candidates,
        };
        let picks = backfiller.select(&ctx)?;
        let picked_idx: Vec<usize> = picks.iter().map(|&p| queue[1 + p]).collect();
        for &idx in &picked_idx {
            if jobs[idx].requested_nodes > state.free_nodes || idx == rjob_idx {
                return Err(SimError::InvalidBackfill(jobs[idx].id));
            }
            start_job(jobs, idx, state, completions);
            event.started.push(idx);
        }
        if !picked_idx.is_empty() {
            queue.retain(|i| !picked_idx.contains(i));
        }
    }
    events.push(event);
    Ok(())
}

fn start_job(
    jobs: &mut [Job],
    idx: usize,
    state: &mut ClusterState,
    completions: &mut BinaryHeap<Reverse<(i64, usize)>>,
) {
    let job = &mut jobs[idx];
    job.start_time = Some(state.clock);
    state.start(job);
    completions.push(Reverse((state.clock + job.actual_runtime, idx)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backfill::{EasyBackfill, NoBackfill};

    fn trace(jobs: Vec<Job>, size: u32) -> Trace {
        Trace {
            jobs,
            cluster_size: size,
            has_request_time: true,
        }
    }

    fn running(id: usize, nodes: u32, end: i64) -> RunningJob {
        RunningJob {
            id,
            nodes,
            start: 0,
            requested_time: end,
            actual_runtime: end,
        }
    }

    #[test]
    fn bsld_examples() {
        assert_eq!(bounded_slowdown(0.0, 100.0, 10.0), 1.0);
        assert_eq!(bounded_slowdown(90.0, 10.0, 10.0), 10.0);
        assert_eq!(bounded_slowdown(5.0, 1.0, 10.0), 1.0);
        assert_eq!(bounded_slowdown(5.0f32, 1.0, 10.0), 1.0);
    }

    #[test]
    fn single_job_empty_cluster() {
        let t = trace(vec![Job::new(0, 7, 4, 100, 100)], 4);
        let r = run_schedule(
            &t,
            PolicyKind::Fcfs,
            &mut NoBackfill,
            RuntimeEstimator::RequestTime,
        )
        .unwrap();
        assert_eq!((r.records[0].start, r.records[0].wait), (7, 0));
        assert_eq!(r.avg_bsld, 1.0);
    }

    #[test]
    fn two_jobs_serialize() {
        let t = trace(
            vec![Job::new(0, 0, 4, 100, 100), Job::new(1, 0, 4, 50, 50)],
            4,
        );
        let r = run_schedule(
            &t,
            PolicyKind::Fcfs,
            &mut NoBackfill,
            RuntimeEstimator::RequestTime,
        )
        .unwrap();
        assert_eq!((r.records[1].start, r.records[1].wait), (100, 100));
    }

    #[test]
    fn oversize_job_rejected() {
        let t = trace(vec![Job::new(0, 0, 8, 100, 100)], 4);
        let err = run_schedule(
            &t,
            PolicyKind::Fcfs,
            &mut NoBackfill,
            RuntimeEstimator::RequestTime,
        );
        assert!(matches!(err, Err(SimError::RejectedJob { .. })));
    }

    #[test]
    fn reservation_examples() {
        let mut s = ClusterState::new(4);
        s.free_nodes = 0;
        s.running.push(running(0, 4, 100));
        let rjob = Job::new(9, 0, 4, 10, 10);
        assert_eq!(
            reservation_time(&s, &rjob, &RuntimeEstimator::RequestTime).unwrap(),
            100
        );

        let mut s = ClusterState::new(6);
        s.free_nodes = 2;
        s.running.push(running(0, 1, 50));
        s.running.push(running(1, 3, 80));
        let rjob = Job::new(9, 0, 5, 10, 10);
        let r = s.reservation(5, &RuntimeEstimator::RequestTime).unwrap();
        assert_eq!(
            r,
            Reservation {
                time: 80,
                extra_nodes: 1
            }
        );
        assert_eq!(
            reservation_time(&s, &rjob, &RuntimeEstimator::ActualRuntime).unwrap(),
            80
        );

        let big = Job::new(9, 0, 7, 10, 10);
        assert!(matches!(
            reservation_time(&s, &big, &RuntimeEstimator::RequestTime),
            Err(SimError::ImpossibleReservation { .. })
        ));
    }

    #[test]
    fn estimator_parsing() {
        assert_eq!(
            "req".parse::<RuntimeEstimator>().unwrap(),
            RuntimeEstimator::RequestTime
        );
        assert_eq!(
            "noisy:20".parse::<RuntimeEstimator>().unwrap(),
            RuntimeEstimator::NoisyActual(0.2)
        );
        assert!("noisy:-5".parse::<RuntimeEstimator>().is_err());
        let j = Job::new(0, 0, 1, 1000, 100);
        assert_eq!(RuntimeEstimator::NoisyActual(0.0).estimate(&j), 100);
        assert_eq!(RuntimeEstimator::NoisyActual(0.4).estimate(&j), 140);
    }

    #[test]
    fn easy_backfills_short_job_into_hole() {
        // J0 holds 3 of 4 nodes until 100; J1 needs all 4; J2 fits the spare node and ends by 100
        let t = trace(
            vec![
                Job::new(0, 0, 3, 100, 100),
                Job::new(1, 1, 4, 100, 100),
                Job::new(2, 2, 1, 50, 50),
                Job::new(3, 3, 1, 500, 500),
            ],
            4,
        );
        let r = run_schedule(
            &t,
            PolicyKind::Fcfs,
            &mut EasyBackfill::default(),
            RuntimeEstimator::RequestTime,
        )
        .unwrap();
        assert_eq!(r.records[2].start, 2);
        assert_eq!(r.records[1].start, 100);
        // J3 would push J1 past its reservation
        assert!(r.records[3].start >= 100);
        let plain = run_schedule(
            &t,
            PolicyKind::Fcfs,
            &mut NoBackfill,
            RuntimeEstimator::RequestTime,
        )
        .unwrap();
        assert!(r.avg_bsld <= plain.avg_bsld);
    }
}
