//! PPO-clip training of the backfilling agent.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::Adam;
use super::net::{masked_softmax, AgentParams, AgentShape, BatchCache};
use super::obs::{Observation, JOB_FEATURES};
use crate::backfill::{ActionMode, EasyBackfill, LearnedBackfill, Step};
use crate::policy::PolicyKind;
use crate::scalar::Scalar;
use crate::sim::{run_schedule, RuntimeEstimator, SimError};
use crate::workload::{window_at, Trace};

/// Reward added per rjob-delaying backfill decision.
pub const VIOLATION_PENALTY: f64 = -5.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("baseline bounded slowdown must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("trace has {available} jobs, fewer than the {needed} needed per trajectory")]
    TraceTooShort { needed: usize, available: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}; check the learning rate and input normalization")]
    NonFinite { what: &'static str, epoch: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub trajectories_per_epoch: usize,
    pub jobs_per_trajectory: usize,
    pub update_iterations: usize,
    pub learning_rate: f64,
    pub clip_ratio: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub policy_hidden: usize,
    pub value_hidden: usize,
    pub max_obsv_size: usize,
    pub violation_penalty: f64,
    /// Stop the policy iterations of an epoch early once the approximate KL
    /// divergence from the rollout policy exceeds 1.5x this value.
    pub target_kl: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            trajectories_per_epoch: 100,
            jobs_per_trajectory: 256,
            update_iterations: 80,
            learning_rate: 1e-3,
            clip_ratio: 0.2,
            discount: 1.0,
            gae_lambda: 0.97,
            policy_hidden: 32,
            value_hidden: 64,
            max_obsv_size: super::obs::MAX_OBSV_SIZE,
            violation_penalty: VIOLATION_PENALTY,
            target_kl: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self) -> AgentShape {
        AgentShape {
            max_obsv_size: self.max_obsv_size,
            features: JOB_FEATURES,
            policy_hidden: self.policy_hidden,
            value_hidden: self.value_hidden,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive_counts = [
            ("epochs", self.epochs),
            ("trajectories_per_epoch", self.trajectories_per_epoch),
            ("jobs_per_trajectory", self.jobs_per_trajectory),
            ("update_iterations", self.update_iterations),
            ("policy_hidden", self.policy_hidden),
            ("value_hidden", self.value_hidden),
            ("max_obsv_size", self.max_obsv_size),
        ];
        if let Some((name, _)) = positive_counts.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        let positive_reals = [
            ("learning_rate", self.learning_rate),
            ("clip_ratio", self.clip_ratio),
            ("discount", self.discount),
            ("gae_lambda", self.gae_lambda),
        ];
        if let Some((name, _)) = positive_reals
            .iter()
            .find(|(_, v)| !(*v > 0.0 && v.is_finite()))
        {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if self.discount > 1.0 || self.gae_lambda > 1.0 {
            return Err(TrainError::Config(
                "discount and gae_lambda must be <= 1".into(),
            ));
        }
        if !self.violation_penalty.is_finite() {
            return Err(TrainError::Config(
                "violation_penalty must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Relative bsld improvement over the baseline plus the violation penalty.
pub fn episode_reward(
    achieved: f64,
    baseline: f64,
    violations: usize,
    penalty: f64,
) -> Result<f64, TrainError> {
    if !(baseline > 0.0) {
        return Err(TrainError::NonPositiveBaseline(baseline));
    }
    Ok((baseline - achieved) / baseline + violations as f64 * penalty)
}

/// Baseline bsld: FCFS ordering with SJF-ordered EASY backfilling on request times.
pub fn baseline_bsld(sequence: &Trace) -> Result<f64, SimError> {
    let mut easy = EasyBackfill::ordered_by(PolicyKind::Sjf);
    Ok(run_schedule(
        sequence,
        PolicyKind::Fcfs,
        &mut easy,
        RuntimeEstimator::RequestTime,
    )?
    .avg_bsld)
}

/// One scheduled job sequence and its episode reward.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
    pub reward: T,
    pub penalty: T,
}

impl<T: Scalar> Trajectory<T> {
    /// Per-step rewards summing to `reward`: each violating step carries the
    /// penalty, the last step carries the rest.
    pub fn rewards(&self) -> Vec<T> {
        let mut r: Vec<T> = self
            .steps
            .iter()
            .map(|s| if s.violation { self.penalty } else { T::zero() })
            .collect();
        let charged = r.iter().fold(T::zero(), |a, &b| a + b);
        if let Some(last) = r.last_mut() {
            *last = *last + self.reward - charged;
        }
        r
    }
}

/// Generalized advantage estimates and discounted returns for one trajectory.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], discount: T, lambda: T) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut ret = vec![T::zero(); n];
    let mut running_adv = T::zero();
    let mut running_ret = T::zero();
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { T::zero() };
        let delta = rewards[t] + discount * next_value - values[t];
        running_adv = delta + discount * lambda * running_adv;
        running_ret = rewards[t] + discount * running_ret;
        adv[t] = running_adv;
        ret[t] = running_ret;
    }
    (adv, ret)
}

/// A single training example for the update phase.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub obs: Observation<T>,
    pub action: usize,
    pub log_prob_old: T,
    pub advantage: T,
    pub ret: T,
}

/// Clipped surrogate loss (negated, averaged) and its gradient with respect
/// to the policy parameters. Also returns the approximate KL divergence.
pub fn surrogate_loss_grad<T: Scalar>(
    params: &AgentParams<T>,
    batch: &[Sample<T>],
    clip: T,
) -> (T, Vec<T>, T) {
    let mut grad = vec![T::zero(); params.policy.len()];
    if batch.is_empty() {
        return (T::zero(), grad, T::zero());
    }
    let layout = AgentParams::<T>::kernel_layout(&params.shape);
    // every selectable row of every sample shares the kernel, so run them as one batch
    let mut rows: Vec<&[T]> = Vec::new();
    let mut owner: Vec<(usize, usize)> = Vec::new();
    for (b, s) in batch.iter().enumerate() {
        assert_eq!(
            s.obs.max_rows, params.shape.max_obsv_size,
            "observation size does not match the network"
        );
        for i in 0..s.obs.used {
            if s.obs.mask[i] {
                rows.push(s.obs.row(i));
                owner.push((b, i));
            }
        }
    }
    let mut cache = BatchCache::default();
    let scores = layout.forward_batch(&params.policy, &rows, &mut cache);
    let stop_score = params.stop_score();
    let n = T::of(batch.len() as f64);
    let (lo, hi) = (T::one() - clip, T::one() + clip);
    let mut loss = T::zero();
    let mut kl = T::zero();
    let mut douts = vec![T::zero(); rows.len()];
    let mut stop_grad = T::zero();
    let mut r = 0;
    for (b, s) in batch.iter().enumerate() {
        let first = r;
        while r < owner.len() && owner[r].0 == b {
            r += 1;
        }
        let mut logits = vec![T::neg_infinity(); s.obs.max_rows + 1];
        for k in first..r {
            logits[owner[k].1] = scores[k];
        }
        logits[s.obs.max_rows] = stop_score;
        let probs = masked_softmax(&logits, &s.obs.mask);
        let logp = probs[s.action].ln();
        let ratio = (logp - s.log_prob_old).exp();
        let a = s.advantage;
        let unclipped = ratio * a;
        let clipped = ratio.max(lo).min(hi) * a;
        loss = loss - unclipped.min(clipped) / n;
        kl = kl + (s.log_prob_old - logp) / n;
        // outside the clip band the min picks the constant branch
        let active = !((a > T::zero() && ratio > hi) || (a < T::zero() && ratio < lo));
        if active && a != T::zero() {
            let upstream = -(ratio * a) / n;
            for k in first..r {
                let i = owner[k].1;
                let indicator = if i == s.action { T::one() } else { T::zero() };
                douts[k] = upstream * (indicator - probs[i]);
            }
            let stop = s.obs.max_rows;
            let indicator = if s.action == stop {
                T::one()
            } else {
                T::zero()
            };
            stop_grad = stop_grad + upstream * (indicator - probs[stop]);
        }
    }
    layout.backward_batch(&params.policy, &rows, &cache, &douts, &mut grad);
    let last = grad.len() - 1;
    grad[last] = grad[last] + stop_grad;
    (loss, grad, kl)
}

/// Mean squared value error and its gradient.
pub fn value_loss_grad<T: Scalar>(params: &AgentParams<T>, batch: &[Sample<T>]) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); params.value.len()];
    if batch.is_empty() {
        return (T::zero(), grad);
    }
    let layout = AgentParams::<T>::value_layout(&params.shape);
    let xs: Vec<&[T]> = batch.iter().map(|s| s.obs.rows.as_slice()).collect();
    let mut cache = BatchCache::default();
    let values = layout.forward_batch(&params.value, &xs, &mut cache);
    let n = T::of(batch.len() as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut douts = Vec::with_capacity(batch.len());
    for (s, &v) in batch.iter().zip(&values) {
        let err = v - s.ret;
        loss = loss + err * err / n;
        douts.push(two * err / n);
    }
    layout.backward_batch(&params.value, &xs, &cache, &douts, &mut grad);
    (loss, grad)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub policy_iterations: usize,
}

/// Optimizer state that persists across epochs.
pub struct PpoOptimizers<T> {
    pub policy: Adam<T>,
    pub value: Adam<T>,
}

impl<T: Scalar> PpoOptimizers<T> {
    pub fn new(params: &AgentParams<T>, learning_rate: f64) -> Self {
        PpoOptimizers {
            policy: Adam::new(params.policy.len(), learning_rate),
            value: Adam::new(params.value.len(), learning_rate),
        }
    }
}

/// Runs the policy and value iterations of one epoch on `batch`.
pub fn ppo_update<T: Scalar>(
    params: &mut AgentParams<T>,
    opt: &mut PpoOptimizers<T>,
    batch: &[Sample<T>],
    config: &TrainConfig,
    epoch: usize,
) -> Result<UpdateStats, TrainError> {
    let mut stats = UpdateStats::default();
    if batch.is_empty() {
        return Ok(stats);
    }
    let clip = T::of(config.clip_ratio);
    for it in 0..config.update_iterations {
        let (loss, grad, kl) = surrogate_loss_grad(params, batch, clip);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite {
                what: "policy loss",
                epoch,
            });
        }
        if it == 0 {
            stats.policy_loss = loss.as_f64();
        }
        stats.approx_kl = kl.as_f64();
        if let Some(target) = config.target_kl {
            if kl.as_f64() > 1.5 * target {
                break;
            }
        }
        opt.policy.step(&mut params.policy, &grad);
        stats.policy_iterations = it + 1;
    }
    for it in 0..config.update_iterations {
        let (loss, grad) = value_loss_grad(params, batch);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite {
                what: "value loss",
                epoch,
            });
        }
        if it == 0 {
            stats.value_loss = loss.as_f64();
        }
        opt.value.step(&mut params.value, &grad);
    }
    if !params.is_finite() {
        return Err(TrainError::NonFinite {
            what: "parameters",
            epoch,
        });
    }
    Ok(stats)
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_bsld: f64,
    pub mean_baseline_bsld: f64,
    pub violations: usize,
    pub steps: usize,
    #[serde(flatten)]
    pub update: UpdateStats,
}

pub struct TrainOutcome<T> {
    pub params: AgentParams<T>,
    pub curve: Vec<EpochRecord>,
}

/// Collects one trajectory on `sequence` with the current parameters.
pub fn rollout<T: Scalar>(
    params: &AgentParams<T>,
    sequence: &Trace,
    base_policy: PolicyKind,
    baseline: f64,
    penalty: f64,
    seed: u64,
) -> Result<(Trajectory<T>, f64, usize), TrainError> {
    let mut agent = LearnedBackfill::new(params, ActionMode::Sample, seed).recording();
    let result = run_schedule(
        sequence,
        base_policy,
        &mut agent,
        RuntimeEstimator::RequestTime,
    )?;
    let reward = episode_reward(result.avg_bsld, baseline, agent.violations, penalty)?;
    Ok((
        Trajectory {
            steps: agent.steps,
            reward: T::of(reward),
            penalty: T::of(penalty),
        },
        result.avg_bsld,
        agent.violations,
    ))
}

/// Trains an agent on windows sampled from `trace`. `on_epoch` is called
/// after every epoch with its summary.
pub fn ppo_train<T: Scalar>(
    trace: &Trace,
    base_policy: PolicyKind,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &AgentParams<T>),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let len = config.jobs_per_trajectory;
    if trace.len() < len {
        return Err(TrainError::TraceTooShort {
            needed: len,
            available: trace.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = AgentParams::<T>::init(config.shape(), &mut rng);
    let mut opt = PpoOptimizers::new(&params, config.learning_rate);
    let mut baselines: HashMap<usize, f64> = HashMap::new();
    let mut curve = Vec::with_capacity(config.epochs);
    let (discount, lambda) = (T::of(config.discount), T::of(config.gae_lambda));

    for epoch in 0..config.epochs {
        let mut batch: Vec<Sample<T>> = Vec::new();
        let (mut reward_sum, mut bsld_sum, mut base_sum, mut violations) = (0.0, 0.0, 0.0, 0);
        let mut trajectories = Vec::with_capacity(config.trajectories_per_epoch);
        for _ in 0..config.trajectories_per_epoch {
            let start = rng.gen_range(0..=trace.len() - len);
            let episode_seed: u64 = rng.gen();
            let sequence = window_at(trace, start, len);
            let baseline = match baselines.get(&start) {
                Some(&b) => b,
                None => {
                    let b = baseline_bsld(&sequence)?;
                    baselines.insert(start, b);
                    b
                }
            };
            let (traj, bsld, v) = rollout(
                &params,
                &sequence,
                base_policy,
                baseline,
                config.violation_penalty,
                episode_seed,
            )?;
            reward_sum += traj.reward.as_f64();
            bsld_sum += bsld;
            base_sum += baseline;
            violations += v;
            trajectories.push(traj);
        }
        for traj in trajectories {
            let rewards = traj.rewards();
            let values: Vec<T> = traj.steps.iter().map(|s| s.value).collect();
            let (adv, ret) = gae(&rewards, &values, discount, lambda);
            for ((step, a), r) in traj.steps.into_iter().zip(adv).zip(ret) {
                batch.push(Sample {
                    obs: step.obs,
                    action: step.action,
                    log_prob_old: step.log_prob,
                    advantage: a,
                    ret: r,
                });
            }
        }
        normalize_advantages(&mut batch);
        let steps = batch.len();
        let update = ppo_update(&mut params, &mut opt, &batch, config, epoch)?;
        let n = config.trajectories_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            mean_reward: reward_sum / n,
            mean_bsld: bsld_sum / n,
            mean_baseline_bsld: base_sum / n,
            violations,
            steps,
            update,
        };
        on_epoch(&record, &params);
        curve.push(record);
    }
    Ok(TrainOutcome { params, curve })
}

fn normalize_advantages<T: Scalar>(batch: &mut [Sample<T>]) {
    if batch.is_empty() {
        return;
    }
    let n = T::of(batch.len() as f64);
    let mean = batch.iter().fold(T::zero(), |a, s| a + s.advantage) / n;
    let var = batch.iter().fold(T::zero(), |a, s| {
        let d = s.advantage - mean;
        a + d * d
    }) / n;
    let std = var.sqrt() + T::of(1e-8);
    for s in batch {
        s.advantage = (s.advantage - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::net::policy_forward;
    use crate::agent::obs::{build_observation, NodeOutlook};
    use crate::backfill::Candidate;
    use crate::workload::Job;

    #[test]
    fn reward_examples() {
        assert_eq!(
            episode_reward(50.0, 50.0, 0, VIOLATION_PENALTY).unwrap(),
            0.0
        );
        assert!((episode_reward(80.0, 100.0, 0, VIOLATION_PENALTY).unwrap() - 0.2).abs() < 1e-15);
        assert!((episode_reward(80.0, 100.0, 1, VIOLATION_PENALTY).unwrap() + 4.8).abs() < 1e-15);
        assert!(episode_reward(80.0, 0.0, 0, VIOLATION_PENALTY).is_err());
    }

    #[test]
    fn gae_terminal_reward() {
        // lambda = 1, discount = 1: advantage = R - V(s_t)
        let (adv, ret) = gae(&[0.0, 0.0, 2.0], &[0.5, 1.0, 1.5], 1.0, 1.0);
        assert_eq!(ret, vec![2.0, 2.0, 2.0]);
        assert_eq!(adv, vec![1.5, 1.0, 0.5]);
        // lambda = 0: one-step TD errors
        let (adv, _) = gae(&[0.0, 0.0, 2.0], &[0.5, 1.0, 1.5], 1.0, 0.0);
        assert_eq!(adv, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn trajectory_rewards_sparse() {
        let traj: Trajectory<f64> = Trajectory {
            steps: Vec::new(),
            reward: 3.0,
            penalty: -5.0,
        };
        assert!(traj.rewards().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = toml::from_str("epochs = 3\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(
            (
                parsed.epochs,
                parsed.learning_rate,
                parsed.update_iterations
            ),
            (3, 0.01, 80)
        );
        assert!(toml::from_str::<TrainConfig>("nonsense = 1\n").is_err());
    }

    #[test]
    fn violation_penalty_lands_on_its_step() {
        let params = AgentParams::init(
            AgentShape {
                max_obsv_size: 4,
                features: JOB_FEATURES,
                policy_hidden: 3,
                value_hidden: 3,
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let obs = tiny_batch(&params).remove(0).obs;
        let steps = [false, true, false, true, false]
            .map(|violation| Step {
                obs: obs.clone(),
                action: 1,
                log_prob: 0.0,
                value: 0.0,
                violation,
            })
            .to_vec();
        // bsld improvement 0.25, two violations
        let traj = Trajectory {
            steps,
            reward: 0.25 - 10.0,
            penalty: -5.0,
        };
        assert_eq!(traj.rewards(), vec![0.0, -5.0, 0.0, -5.0, 0.25]);
    }

    fn tiny_batch(params: &AgentParams<f64>) -> Vec<Sample<f64>> {
        let rjob = Job::new(0, 0, 7, 1000, 900);
        let mut batch = Vec::new();
        for k in 0..6 {
            let a = Job::new(1, 10, 1 + k % 3, 300 + 100 * k as i64, 200);
            let b = Job::new(2, 20, 1, 5000, 10);
            let cands = [&a, &b].map(|j| Candidate {
                job: j,
                estimate: j.requested_time,
            });
            let outlook = NodeOutlook {
                clock: 400 + 50 * k as i64,
                free_nodes: 4,
                total_nodes: 8,
                reservation: 1000,
                extra_nodes: 0,
            };
            let (obs, _) = build_observation(&rjob, &cands, &outlook, params.shape.max_obsv_size);
            let probs = policy_forward(params, &obs);
            let action = k as usize % 2 + 1;
            batch.push(Sample {
                log_prob_old: probs[action].ln(),
                obs,
                action,
                advantage: 0.0,
                ret: 0.3 * k as f64 - 0.5,
            });
        }
        batch
    }

    fn small_params() -> AgentParams<f64> {
        let shape = AgentShape {
            max_obsv_size: 8,
            features: JOB_FEATURES,
            policy_hidden: 6,
            value_hidden: 8,
        };
        AgentParams::init(shape, &mut ChaCha8Rng::seed_from_u64(11))
    }

    #[test]
    fn surrogate_zero_gradient_at_old_policy_zero_advantage() {
        let params = small_params();
        let batch = tiny_batch(&params);
        let (loss, grad, kl) = surrogate_loss_grad(&params, &batch, 0.2);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn value_loss_decreases_on_fixed_batch() {
        let mut params = small_params();
        let batch = tiny_batch(&params);
        let config = TrainConfig::default();
        let mut opt = PpoOptimizers::new(&params, config.learning_rate);
        let (first, _) = value_loss_grad(&params, &batch);
        let stats = ppo_update(&mut params, &mut opt, &batch, &config, 0).unwrap();
        let (last, _) = value_loss_grad(&params, &batch);
        assert_eq!(stats.value_loss, first);
        assert!(last < first, "value loss {first} -> {last}");
    }
}
