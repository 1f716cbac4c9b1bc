//! Observation encoding for the backfilling agent.
//!
//! Each queued job becomes one feature row; the cluster's free-node fraction
//! is repeated in every row so the per-row kernel can see it.

use crate::backfill::Candidate;
use crate::scalar::Scalar;
use crate::workload::Job;

/// Default number of queued jobs the agent observes.
pub const MAX_OBSV_SIZE: usize = 128;

/// Feature columns per job row.
pub const JOB_FEATURES: usize = 6;

/// Wait time normalizer, in seconds.
const WAIT_SCALE: f64 = 3600.0;
/// log10 of the longest runtime we expect (~11 days).
const LOG_RUNTIME_SCALE: f64 = 6.0;

pub mod column {
    pub const WAIT: usize = 0;
    pub const REQUESTED_TIME: usize = 1;
    pub const NODES: usize = 2;
    pub const ADMISSIBLE: usize = 3;
    pub const AVAILABILITY: usize = 4;
    pub const RJOB: usize = 5;
}

/// Fixed-size observation. Only the first `used` rows are stored; rows past
/// that are implicit zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub max_rows: usize,
    pub used: usize,
    pub rows: Vec<T>,
    /// `max_rows + 1` entries; the last one is the stop action.
    pub mask: Vec<bool>,
}

impl<T: Scalar> Observation<T> {
    pub fn stop_action(&self) -> usize {
        self.max_rows
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * JOB_FEATURES..(i + 1) * JOB_FEATURES]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.rows[i * JOB_FEATURES..(i + 1) * JOB_FEATURES]
    }

    /// Full `max_rows * JOB_FEATURES` row-major matrix including padding.
    pub fn dense(&self) -> Vec<T> {
        let mut out = self.rows.clone();
        out.resize(self.max_rows * JOB_FEATURES, T::zero());
        out
    }

    pub fn has_selectable_job(&self) -> bool {
        self.mask[..self.max_rows].iter().any(|&m| m)
    }

    pub fn swap_rows(&mut self, i: usize, j: usize) {
        for c in 0..JOB_FEATURES {
            self.rows.swap(i * JOB_FEATURES + c, j * JOB_FEATURES + c);
        }
        self.mask.swap(i, j);
    }
}

/// What each observation slot refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Rjob,
    /// Index into the caller's candidate list.
    Candidate(usize),
}

/// Cluster situation at a backfilling decision, under the scheduler's estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeOutlook {
    pub clock: i64,
    pub free_nodes: u32,
    pub total_nodes: u32,
    /// Reservation of the rjob.
    pub reservation: i64,
    /// Nodes still spare at the reservation once the rjob is placed.
    pub extra_nodes: u32,
}

impl NodeOutlook {
    /// Whether starting `c` now keeps the rjob's reservation by estimate.
    pub fn admits(&self, c: &Candidate<'_>) -> bool {
        let n = c.job.requested_nodes;
        n <= self.free_nodes
            && (self.clock + c.estimate <= self.reservation || n <= self.extra_nodes)
    }
}

/// Encodes the rjob plus the given candidates. The queue is ordered by submit
/// time (then id) and cut to the first `max_rows` jobs.
///
/// Padding, the rjob and candidates that need more than the free nodes are
/// masked off. The stop action is always selectable.
pub fn build_observation<T: Scalar>(
    rjob: &Job,
    candidates: &[Candidate<'_>],
    outlook: &NodeOutlook,
    max_rows: usize,
) -> (Observation<T>, Vec<Slot>) {
    let NodeOutlook {
        clock,
        free_nodes,
        total_nodes,
        ..
    } = *outlook;
    let mut queue: Vec<(&Job, Slot)> = Vec::with_capacity(candidates.len() + 1);
    queue.push((rjob, Slot::Rjob));
    queue.extend(
        candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.job, Slot::Candidate(i))),
    );
    queue.sort_by_key(|(j, _)| (j.submit_time, j.id));
    queue.truncate(max_rows);

    let availability = free_nodes as f64 / total_nodes.max(1) as f64;
    let mut rows = Vec::with_capacity(queue.len() * JOB_FEATURES);
    let mut mask = vec![false; max_rows + 1];
    let mut slots = Vec::with_capacity(queue.len());
    for (i, (job, slot)) in queue.iter().enumerate() {
        let fits = job.requested_nodes <= free_nodes;
        let is_rjob = *slot == Slot::Rjob;
        let wait = (job.waited_until(clock) as f64 / WAIT_SCALE).min(1.0);
        let req = (job.requested_time.max(1) as f64).log10() / LOG_RUNTIME_SCALE;
        let nodes = job.requested_nodes as f64 / total_nodes.max(1) as f64;
        let admissible = match slot {
            Slot::Candidate(c) => outlook.admits(&candidates[*c]),
            Slot::Rjob => false,
        };
        rows.extend(
            [
                wait,
                req,
                nodes,
                if admissible { 1.0 } else { 0.0 },
                availability,
                if is_rjob { 1.0 } else { 0.0 },
            ]
            .map(T::of),
        );
        mask[i] = fits && !is_rjob;
        slots.push(*slot);
    }
    mask[max_rows] = true;
    (
        Observation {
            max_rows,
            used: queue.len(),
            rows,
            mask,
        },
        slots,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outlook(clock: i64, free: u32, total: u32) -> NodeOutlook {
        NodeOutlook {
            clock,
            free_nodes: free,
            total_nodes: total,
            reservation: clock + 150,
            extra_nodes: 1,
        }
    }

    fn cands<'a>(jobs: &[&'a Job]) -> Vec<Candidate<'a>> {
        jobs.iter()
            .map(|j| Candidate {
                job: j,
                estimate: j.requested_time,
            })
            .collect()
    }

    #[test]
    fn rjob_only_leaves_stop() {
        let rjob = Job::new(0, 0, 8, 100, 100);
        let (obs, slots) = build_observation::<f64>(&rjob, &[], &outlook(10, 2, 8), MAX_OBSV_SIZE);
        assert_eq!(obs.used, 1);
        assert!(!obs.has_selectable_job());
        assert!(obs.mask[MAX_OBSV_SIZE]);
        assert_eq!(slots, vec![Slot::Rjob]);
        assert_eq!(obs.dense().len(), MAX_OBSV_SIZE * JOB_FEATURES);
    }

    #[test]
    fn keeps_earliest_submitted() {
        let rjob = Job::new(0, 0, 8, 100, 100);
        // candidates handed over in reverse submit order
        let jobs: Vec<Job> = (1..200)
            .rev()
            .map(|i| Job::new(i, i as i64 * 10, 1, 100, 100))
            .collect();
        let refs: Vec<&Job> = jobs.iter().collect();
        let c = cands(&refs);
        let (obs, slots) = build_observation::<f64>(&rjob, &c, &outlook(5000, 4, 8), MAX_OBSV_SIZE);
        assert_eq!(obs.used, MAX_OBSV_SIZE);
        let kept: Vec<usize> = slots
            .iter()
            .filter_map(|s| match s {
                Slot::Candidate(c) => Some(refs[*c].id),
                Slot::Rjob => None,
            })
            .collect();
        assert_eq!(kept, (1..MAX_OBSV_SIZE).collect::<Vec<_>>());
    }

    #[test]
    fn availability_column_and_mask() {
        let rjob = Job::new(0, 0, 8, 100, 100);
        let small = Job::new(1, 1, 2, 100, 100);
        let large = Job::new(2, 2, 4, 100, 100);
        let c = cands(&[&small, &large]);
        let (obs, _) = build_observation::<f64>(&rjob, &c, &outlook(10, 2, 8), 4);
        for i in 0..obs.used {
            assert_eq!(obs.row(i)[column::AVAILABILITY], 0.25);
        }
        assert_eq!(obs.mask, vec![false, true, false, false, true]);
        assert_eq!(obs.row(0)[column::RJOB], 1.0);
        assert_eq!(obs.row(2)[column::ADMISSIBLE], 0.0);
    }

    #[test]
    fn admissible_column_follows_reservation() {
        let rjob = Job::new(0, 0, 8, 100, 100);
        // ends before the reservation
        let short = Job::new(1, 1, 3, 100, 100);
        // too long, but fits in the one extra node
        let narrow = Job::new(2, 2, 1, 900, 900);
        // too long and too wide for the extra nodes
        let wide = Job::new(3, 3, 2, 900, 900);
        let c = cands(&[&short, &narrow, &wide]);
        let (obs, _) = build_observation::<f64>(&rjob, &c, &outlook(10, 4, 8), 8);
        let col: Vec<f64> = (0..obs.used)
            .map(|i| obs.row(i)[column::ADMISSIBLE])
            .collect();
        assert_eq!(col, vec![0.0, 1.0, 1.0, 0.0]);
        // all three fit the free nodes, so all stay selectable
        assert_eq!(&obs.mask[..4], &[false, true, true, true]);
    }
}
