//! Backfilling strategies, invoked when the highest-priority waiting job (the
//! relative job, "rjob") cannot start.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::net::{policy_forward, value_forward, AgentParams};
use crate::agent::obs::{build_observation, NodeOutlook, Observation, Slot};
use crate::policy::PolicyKind;
use crate::scalar::Scalar;
use crate::sim::{RuntimeEstimator, SimError};
use crate::workload::Job;

/// A waiting job other than the rjob, with its runtime estimate.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub job: &'a Job,
    pub estimate: i64,
}

/// Everything a strategy sees at a backfilling opportunity.
#[derive(Debug, Clone)]
pub struct BackfillContext<'a> {
    pub clock: i64,
    pub rjob: &'a Job,
    /// Reservation of the rjob under the scheduler's estimator.
    pub reservation: i64,
    /// Nodes still spare at `reservation` once the rjob is placed.
    pub extra_nodes: u32,
    pub free_nodes: u32,
    pub total_nodes: u32,
    /// Reservation and spare nodes under true runtimes. Only used to detect
    /// rjob-delaying choices when scoring a learned strategy.
    pub true_reservation: i64,
    pub true_extra_nodes: u32,
    /// Waiting jobs except the rjob, in base-policy order.
    pub candidates: Vec<Candidate<'a>>,
}

pub trait Backfiller {
    /// Returns positions in `ctx.candidates` to start now, in start order.
    fn select(&mut self, ctx: &BackfillContext<'_>) -> Result<Vec<usize>, SimError>;
}

impl<B: Backfiller + ?Sized> Backfiller for &mut B {
    fn select(&mut self, ctx: &BackfillContext<'_>) -> Result<Vec<usize>, SimError> {
        (**self).select(ctx)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoBackfill;

impl Backfiller for NoBackfill {
    fn select(&mut self, _ctx: &BackfillContext<'_>) -> Result<Vec<usize>, SimError> {
        Ok(Vec::new())
    }
}

/// Single-reservation EASY backfilling.
///
/// Candidates are scanned in base-policy order unless `order` overrides it.
/// A candidate starts when it fits the free nodes and either finishes (by
/// estimate) before the reservation or only uses extra nodes.
#[derive(Debug, Clone, Copy, Default)]
pub struct EasyBackfill {
    pub order: Option<PolicyKind>,
}

impl EasyBackfill {
    pub fn ordered_by(policy: PolicyKind) -> Self {
        EasyBackfill {
            order: Some(policy),
        }
    }
}

/// The EASY scan over a context; positions into `ctx.candidates`.
pub fn easy_backfill(ctx: &BackfillContext<'_>, order: Option<PolicyKind>) -> Vec<usize> {
    let mut scan: Vec<usize> = (0..ctx.candidates.len()).collect();
    if let Some(policy) = order {
        scan.sort_by(|&a, &b| {
            policy.compare(ctx.candidates[a].job, ctx.candidates[b].job, ctx.clock)
        });
    }
    let mut free = ctx.free_nodes;
    let mut extra = ctx.extra_nodes;
    let mut started = Vec::new();
    for pos in scan {
        if free == 0 {
            break;
        }
        let c = &ctx.candidates[pos];
        let nodes = c.job.requested_nodes;
        if nodes > free {
            continue;
        }
        if ctx.clock + c.estimate <= ctx.reservation {
            free -= nodes;
            started.push(pos);
        } else if nodes <= extra {
            free -= nodes;
            extra -= nodes;
            started.push(pos);
        }
    }
    started
}

impl Backfiller for EasyBackfill {
    fn select(&mut self, ctx: &BackfillContext<'_>) -> Result<Vec<usize>, SimError> {
        Ok(easy_backfill(ctx, self.order))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy distribution (training).
    Sample,
    /// Take the most probable action (evaluation).
    Greedy,
}

/// One agent decision.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub obs: Observation<T>,
    pub action: usize,
    pub log_prob: T,
    pub value: T,
    /// The pick made here delays the rjob under true runtimes.
    pub violation: bool,
}

/// Backfilling delegated to the policy network.
///
/// At each opportunity the agent repeatedly picks a fitting candidate or the
/// stop action. Picks that would delay the rjob under true runtimes are
/// allowed but counted in `violations`.
pub struct LearnedBackfill<'a, T: Scalar> {
    params: &'a AgentParams<T>,
    mode: ActionMode,
    rng: ChaCha8Rng,
    record: bool,
    pub steps: Vec<Step<T>>,
    pub violations: usize,
}

impl<'a, T: Scalar> LearnedBackfill<'a, T> {
    pub fn new(params: &'a AgentParams<T>, mode: ActionMode, seed: u64) -> Self {
        LearnedBackfill {
            params,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: false,
            steps: Vec::new(),
            violations: 0,
        }
    }

    /// Keep (observation, action, log-prob, value) for every decision.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    fn choose(&mut self, probs: &[T], mask: &[bool]) -> usize {
        match self.mode {
            ActionMode::Greedy => {
                let mut best = probs.len() - 1;
                for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
                    if m && p > probs[best] {
                        best = i;
                    }
                }
                best
            }
            ActionMode::Sample => {
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                let mut last = probs.len() - 1;
                for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
                    if !m || p <= T::zero() {
                        continue;
                    }
                    last = i;
                    acc += p.as_f64();
                    if u < acc {
                        return i;
                    }
                }
                last
            }
        }
    }
}

impl<T: Scalar> Backfiller for LearnedBackfill<'_, T> {
    fn select(&mut self, ctx: &BackfillContext<'_>) -> Result<Vec<usize>, SimError> {
        let mut picked: Vec<usize> = Vec::new();
        if ctx.candidates.is_empty() {
            return Ok(picked);
        }
        let max_rows = self.params.shape.max_obsv_size;
        let mut remaining: Vec<usize> = (0..ctx.candidates.len()).collect();
        let mut outlook = NodeOutlook {
            clock: ctx.clock,
            free_nodes: ctx.free_nodes,
            total_nodes: ctx.total_nodes,
            reservation: ctx.reservation,
            extra_nodes: ctx.extra_nodes,
        };
        let mut true_extra = ctx.true_extra_nodes;
        for _ in 0..max_rows {
            let view: Vec<Candidate<'_>> = remaining.iter().map(|&i| ctx.candidates[i]).collect();
            let (obs, slots) = build_observation::<T>(ctx.rjob, &view, &outlook, max_rows);
            if !obs.has_selectable_job() {
                break;
            }
            let probs = policy_forward(self.params, &obs);
            let action = self.choose(&probs, &obs.mask);
            if self.record {
                let value = value_forward(self.params, &obs);
                self.steps.push(Step {
                    log_prob: probs[action].ln(),
                    value,
                    action,
                    obs,
                    violation: false,
                });
            }
            if action == max_rows {
                break;
            }
            let local = match slots.get(action) {
                Some(Slot::Candidate(c)) => *c,
                _ => unreachable!("masked slot {action} selected"),
            };
            let pos = remaining.remove(local);
            let Candidate { job, estimate } = ctx.candidates[pos];
            debug_assert!(job.requested_nodes <= outlook.free_nodes);
            outlook.free_nodes -= job.requested_nodes;
            if ctx.clock + estimate > ctx.reservation {
                outlook.extra_nodes = outlook.extra_nodes.saturating_sub(job.requested_nodes);
            }
            if ctx.clock + job.actual_runtime > ctx.true_reservation {
                if job.requested_nodes <= true_extra {
                    true_extra -= job.requested_nodes;
                } else {
                    self.violations += 1;
                    if let Some(step) = self.steps.last_mut().filter(|_| self.record) {
                        step.violation = true;
                    }
                }
            }
            picked.push(pos);
            if outlook.free_nodes == 0 {
                break;
            }
        }
        Ok(picked)
    }
}

/// Backfilling strategy as named on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum BackfillStrategy {
    None,
    Easy(RuntimeEstimator),
    Learned(PathBuf),
}

impl BackfillStrategy {
    /// Estimator used for reservations. Learned backfilling only knows what
    /// users requested.
    pub fn estimator(&self) -> RuntimeEstimator {
        match self {
            BackfillStrategy::Easy(e) => *e,
            _ => RuntimeEstimator::RequestTime,
        }
    }
}

impl fmt::Display for BackfillStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackfillStrategy::None => f.write_str("none"),
            BackfillStrategy::Easy(e) => write!(f, "easy:{e}"),
            BackfillStrategy::Learned(p) => write!(f, "rl:{}", p.display()),
        }
    }
}

impl FromStr for BackfillStrategy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "none" {
            Ok(BackfillStrategy::None)
        } else if let Some(est) = s.strip_prefix("easy:") {
            Ok(BackfillStrategy::Easy(est.parse()?))
        } else if s == "easy" {
            Ok(BackfillStrategy::Easy(RuntimeEstimator::RequestTime))
        } else if let Some(path) = s.strip_prefix("rl:").filter(|p| !p.is_empty()) {
            Ok(BackfillStrategy::Learned(PathBuf::from(path)))
        } else {
            Err(SimError::BadEstimator(format!(
                "unknown backfill strategy {s:?}"
            )))
        }
    }
}
