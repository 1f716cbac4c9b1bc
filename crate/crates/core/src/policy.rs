//! Base scheduling policies. A lower score means the job is scheduled earlier.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::Job;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy {0:?} (expected fcfs, sjf, wfp3 or f1)")]
    Unknown(String),
    #[error("policy {policy} produced a non-finite score for job {job}")]
    NonFinite { policy: PolicyKind, job: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Fcfs,
    Sjf,
    Wfp3,
    F1,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Fcfs,
        PolicyKind::Sjf,
        PolicyKind::Wfp3,
        PolicyKind::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::Sjf => "sjf",
            PolicyKind::Wfp3 => "wfp3",
            PolicyKind::F1 => "f1",
        }
    }

    /// Raw formula value, which may be non-finite for out-of-domain input.
    pub fn raw_score(self, job: &Job, clock: i64) -> f64 {
        let r = job.requested_time.max(1) as f64;
        let n = job.requested_nodes as f64;
        match self {
            PolicyKind::Fcfs => job.submit_time as f64,
            PolicyKind::Sjf => r,
            PolicyKind::Wfp3 => {
                let w = job.waited_until(clock) as f64;
                -(w / r).powi(3) * n
            }
            // log10(0) is undefined; the first job of a rebased window submits at 0
            PolicyKind::F1 => r.log10() * n + 870.0 * (job.submit_time.max(1) as f64).log10(),
        }
    }

    pub fn score(self, job: &Job, clock: i64) -> Result<f64, PolicyError> {
        let s = self.raw_score(job, clock);
        if s.is_finite() {
            Ok(s)
        } else {
            Err(PolicyError::NonFinite {
                policy: self,
                job: job.id,
            })
        }
    }

    /// Total order: score, then submit time, then job id.
    pub fn compare(self, a: &Job, b: &Job, clock: i64) -> Ordering {
        self.raw_score(a, clock)
            .total_cmp(&self.raw_score(b, clock))
            .then(a.submit_time.cmp(&b.submit_time))
            .then(a.id.cmp(&b.id))
    }

    /// Sorts job indices (into `jobs`) by priority at `clock`.
    pub fn sort_indices(
        self,
        indices: &mut [usize],
        jobs: &[Job],
        clock: i64,
    ) -> Result<(), PolicyError> {
        let mut keyed = Vec::with_capacity(indices.len());
        for &i in indices.iter() {
            let job = &jobs[i];
            keyed.push((self.score(job, clock)?, job.submit_time, job.id, i));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (slot, k) in indices.iter_mut().zip(keyed) {
            *slot = k.3;
        }
        Ok(())
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fcfs" => Ok(PolicyKind::Fcfs),
            "sjf" => Ok(PolicyKind::Sjf),
            "wfp3" => Ok(PolicyKind::Wfp3),
            "f1" => Ok(PolicyKind::F1),
            _ => Err(PolicyError::Unknown(s.to_string())),
        }
    }
}
