//! Kernel policy network and value network with hand-written backprop.
//!
//! Both networks are three dense layers with tanh hidden activations and a
//! scalar output. The policy network is applied row by row with shared
//! weights; its outputs plus a learned stop score are softmaxed over the
//! unmasked slots. The value network sees the flattened observation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::obs::{Observation, JOB_FEATURES, MAX_OBSV_SIZE};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentShape {
    pub max_obsv_size: usize,
    pub features: usize,
    pub policy_hidden: usize,
    pub value_hidden: usize,
}

impl Default for AgentShape {
    fn default() -> Self {
        AgentShape {
            max_obsv_size: MAX_OBSV_SIZE,
            features: JOB_FEATURES,
            policy_hidden: 32,
            value_hidden: 64,
        }
    }
}

/// Parameter layout of a 3-layer MLP `input -> hidden -> hidden -> 1`,
/// stored flat as `W1 b1 W2 b2 w3 b3` with row-major weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpLayout {
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    h1: Vec<T>,
    h2: Vec<T>,
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..n {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

impl MlpLayout {
    pub fn len(&self) -> usize {
        let (i, h) = (self.input, self.hidden);
        h * i + h + h * h + h + h + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> [usize; 6] {
        let (i, h) = (self.input, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        [w1, b1, w2, b2, w3, b3]
    }

    /// PyTorch-style uniform init in ±1/sqrt(fan_in).
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, out_scale: f64) -> Vec<T> {
        let (i, h) = (self.input, self.hidden);
        let mut p = Vec::with_capacity(self.len());
        let mut fill = |count: usize, fan_in: usize, scale: f64, p: &mut Vec<T>| {
            let bound = scale / (fan_in as f64).sqrt();
            for _ in 0..count {
                p.push(T::of(rng.gen_range(-bound..=bound)));
            }
        };
        fill(h * i + h, i, 1.0, &mut p);
        fill(h * h + h, h, 1.0, &mut p);
        fill(h + 1, h, out_scale, &mut p);
        p
    }

    /// Forward pass. `x` may be a prefix of the input; the remainder is zero.
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], cache: &mut MlpCache<T>) -> T {
        let h = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        debug_assert!(x.len() <= self.input);
        cache.h1.clear();
        cache.h2.clear();
        for j in 0..h {
            let row = &p[w1 + j * self.input..w1 + j * self.input + x.len()];
            cache.h1.push((p[b1 + j] + dot(row, x)).tanh());
        }
        for j in 0..h {
            let row = &p[w2 + j * h..w2 + (j + 1) * h];
            cache.h2.push((p[b2 + j] + dot(row, &cache.h1)).tanh());
        }
        p[b3] + dot(&p[w3..w3 + h], &cache.h2)
    }

    /// Accumulates `dout * d(out)/d(params)` into `grad` using the cache left
    /// by the matching `forward` call.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        x: &[T],
        cache: &MlpCache<T>,
        dout: T,
        grad: &mut [T],
    ) {
        let h = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        grad[b3] = grad[b3] + dout;
        axpy(dout, &cache.h2, &mut grad[w3..w3 + h]);
        let mut g1 = vec![T::zero(); h];
        for j in 0..h {
            let a = cache.h2[j];
            let d2 = dout * p[w3 + j] * (T::one() - a * a);
            if d2 == T::zero() {
                continue;
            }
            grad[b2 + j] = grad[b2 + j] + d2;
            axpy(d2, &cache.h1, &mut grad[w2 + j * h..w2 + (j + 1) * h]);
            axpy(d2, &p[w2 + j * h..w2 + (j + 1) * h], &mut g1);
        }
        for k in 0..h {
            let a = cache.h1[k];
            let d1 = g1[k] * (T::one() - a * a);
            if d1 == T::zero() {
                continue;
            }
            grad[b1 + k] = grad[b1 + k] + d1;
            let start = w1 + k * self.input;
            axpy(d1, x, &mut grad[start..start + x.len()]);
        }
    }
}

const LANES: usize = 4;

/// Hidden activations for a batch, sample-major (`n * hidden`).
#[derive(Debug, Clone, Default)]
pub struct BatchCache<T> {
    h1: Vec<T>,
    h2: Vec<T>,
}

/// `out[s * h + j] = tanh(bias[j] + w[j, ..len] . x_s)` for four samples
/// stored lane-interleaved in `xb` (`xb[k * LANES + s]`).
fn affine_tanh_block<T: Scalar>(
    w: &[T],
    stride: usize,
    bias: &[T],
    xb: &[T],
    len: usize,
    h: usize,
    out: &mut [T],
) {
    for j in 0..h {
        let row = &w[j * stride..j * stride + len];
        let mut acc = [[T::zero(); LANES]; 4];
        let chunks = len / 4;
        for c in 0..chunks {
            for u in 0..4 {
                let k = c * 4 + u;
                let wk = row[k];
                let xk = &xb[k * LANES..k * LANES + LANES];
                for s in 0..LANES {
                    acc[u][s] = acc[u][s] + wk * xk[s];
                }
            }
        }
        for k in chunks * 4..len {
            let wk = row[k];
            for s in 0..LANES {
                acc[0][s] = acc[0][s] + wk * xb[k * LANES + s];
            }
        }
        for s in 0..LANES {
            let z = (acc[0][s] + acc[1][s]) + (acc[2][s] + acc[3][s]);
            out[s * h + j] = (bias[j] + z).tanh();
        }
    }
}

fn interleave<T: Scalar>(xs: &[&[T]], len: usize, xb: &mut Vec<T>) {
    xb.clear();
    xb.resize(len * LANES, T::zero());
    for (s, x) in xs.iter().enumerate() {
        for (k, &v) in x.iter().enumerate() {
            xb[k * LANES + s] = v;
        }
    }
}

/// `grad_w[j, ..len] += sum_s d[s * h + j] * x_s` and `grad_b[j] += sum_s d[s * h + j]`.
fn accumulate_weight_grad<T: Scalar>(
    grad: &mut [T],
    w_off: usize,
    stride: usize,
    b_off: usize,
    d: &[T],
    xs: &[&[T]],
    h: usize,
) {
    for j in 0..h {
        let ds: [T; LANES] = std::array::from_fn(|s| {
            if s < xs.len() {
                d[s * h + j]
            } else {
                T::zero()
            }
        });
        if ds.iter().all(|&v| v == T::zero()) {
            continue;
        }
        grad[b_off + j] = grad[b_off + j] + ds.iter().fold(T::zero(), |a, &b| a + b);
        let g = &mut grad[w_off + j * stride..w_off + (j + 1) * stride];
        if xs.len() == LANES && xs.iter().all(|x| x.len() == xs[0].len()) {
            let len = xs[0].len();
            let (x0, x1, x2, x3) = (&xs[0][..len], &xs[1][..len], &xs[2][..len], &xs[3][..len]);
            for (k, gk) in g[..len].iter_mut().enumerate() {
                *gk = *gk + ((ds[0] * x0[k] + ds[1] * x1[k]) + (ds[2] * x2[k] + ds[3] * x3[k]));
            }
            continue;
        }
        for (s, x) in xs.iter().enumerate() {
            if ds[s] != T::zero() {
                axpy(ds[s], x, &mut g[..x.len()]);
            }
        }
    }
}

impl MlpLayout {
    /// Forward pass over many inputs (each may be a prefix of the input).
    /// Agrees with [`MlpLayout::forward`] up to summation order.
    pub fn forward_batch<T: Scalar>(
        &self,
        p: &[T],
        xs: &[&[T]],
        cache: &mut BatchCache<T>,
    ) -> Vec<T> {
        let h = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let n = xs.len();
        cache.h1.clear();
        cache.h1.resize(n * h, T::zero());
        cache.h2.clear();
        cache.h2.resize(n * h, T::zero());
        let mut out = Vec::with_capacity(n);
        let mut xb = Vec::new();
        let mut blk1 = vec![T::zero(); LANES * h];
        let mut blk2 = vec![T::zero(); LANES * h];
        for (b, chunk) in xs.chunks(LANES).enumerate() {
            let len = chunk.iter().map(|x| x.len()).max().unwrap_or(0);
            debug_assert!(len <= self.input);
            interleave(chunk, len, &mut xb);
            affine_tanh_block(&p[w1..b1], self.input, &p[b1..w2], &xb, len, h, &mut blk1);
            let h1s: Vec<&[T]> = (0..LANES).map(|s| &blk1[s * h..(s + 1) * h]).collect();
            interleave(&h1s, h, &mut xb);
            affine_tanh_block(&p[w2..b2], h, &p[b2..w3], &xb, h, h, &mut blk2);
            for s in 0..chunk.len() {
                let i = b * LANES + s;
                cache.h1[i * h..(i + 1) * h].copy_from_slice(&blk1[s * h..(s + 1) * h]);
                let a2 = &blk2[s * h..(s + 1) * h];
                cache.h2[i * h..(i + 1) * h].copy_from_slice(a2);
                out.push(p[b3] + dot(&p[w3..w3 + h], a2));
            }
        }
        out
    }

    /// Accumulates `sum_i douts[i] * d(out_i)/d(params)` into `grad`.
    pub fn backward_batch<T: Scalar>(
        &self,
        p: &[T],
        xs: &[&[T]],
        cache: &BatchCache<T>,
        douts: &[T],
        grad: &mut [T],
    ) {
        let h = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let mut d2 = vec![T::zero(); LANES * h];
        let mut d1 = vec![T::zero(); LANES * h];
        let mut padded = Vec::new();
        for (b, chunk) in xs.chunks(LANES).enumerate() {
            let base = b * LANES;
            let lanes = chunk.len();
            if douts[base..base + lanes].iter().all(|&d| d == T::zero()) {
                continue;
            }
            d1.iter_mut().for_each(|v| *v = T::zero());
            d2.iter_mut().for_each(|v| *v = T::zero());
            for s in 0..lanes {
                let i = base + s;
                let dout = douts[i];
                let a2 = &cache.h2[i * h..(i + 1) * h];
                grad[b3] = grad[b3] + dout;
                axpy(dout, a2, &mut grad[w3..w3 + h]);
                for j in 0..h {
                    d2[s * h + j] = dout * p[w3 + j] * (T::one() - a2[j] * a2[j]);
                }
                // back through W2 into the first hidden layer
                let g1 = &mut d1[s * h..(s + 1) * h];
                for j in 0..h {
                    let dj = d2[s * h + j];
                    if dj != T::zero() {
                        axpy(dj, &p[w2 + j * h..w2 + (j + 1) * h], g1);
                    }
                }
                let a1 = &cache.h1[i * h..(i + 1) * h];
                for k in 0..h {
                    g1[k] = g1[k] * (T::one() - a1[k] * a1[k]);
                }
            }
            let h1s: Vec<&[T]> = (0..lanes)
                .map(|s| &cache.h1[(base + s) * h..(base + s + 1) * h])
                .collect();
            accumulate_weight_grad(grad, w2, h, b2, &d2, &h1s, h);
            let len = chunk.iter().map(|x| x.len()).max().unwrap_or(0);
            padded.clear();
            padded.resize(LANES * len, T::zero());
            for (s, x) in chunk.iter().enumerate() {
                padded[s * len..s * len + x.len()].copy_from_slice(x);
            }
            let xs: Vec<&[T]> = if len == 0 {
                chunk.to_vec()
            } else {
                padded.chunks(len).collect()
            };
            accumulate_weight_grad(grad, w1, self.input, b1, &d1, &xs, h);
        }
    }
}

/// Weights of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams<T> {
    pub shape: AgentShape,
    /// Kernel MLP followed by the stop-action score.
    pub policy: Vec<T>,
    pub value: Vec<T>,
}

impl<T: Scalar> AgentParams<T> {
    pub fn kernel_layout(shape: &AgentShape) -> MlpLayout {
        MlpLayout {
            input: shape.features,
            hidden: shape.policy_hidden,
        }
    }

    pub fn value_layout(shape: &AgentShape) -> MlpLayout {
        MlpLayout {
            input: shape.features * shape.max_obsv_size,
            hidden: shape.value_hidden,
        }
    }

    pub fn policy_len(shape: &AgentShape) -> usize {
        Self::kernel_layout(shape).len() + 1
    }

    pub fn value_len(shape: &AgentShape) -> usize {
        Self::value_layout(shape).len()
    }

    pub fn zeros(shape: AgentShape) -> Self {
        AgentParams {
            shape,
            policy: vec![T::zero(); Self::policy_len(&shape)],
            value: vec![T::zero(); Self::value_len(&shape)],
        }
    }

    pub fn init<R: Rng + ?Sized>(shape: AgentShape, rng: &mut R) -> Self {
        let mut policy = Self::kernel_layout(&shape).init(rng, 0.1);
        policy.push(T::zero());
        let value = Self::value_layout(&shape).init(rng, 1.0);
        AgentParams {
            shape,
            policy,
            value,
        }
    }

    pub fn stop_score(&self) -> T {
        *self
            .policy
            .last()
            .expect("policy vector carries the stop score")
    }

    pub fn is_finite(&self) -> bool {
        self.policy.iter().chain(&self.value).all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> AgentParams<f64> {
        AgentParams {
            shape: self.shape,
            policy: self.policy.iter().map(|v| v.as_f64()).collect(),
            value: self.value.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

fn check_shape<T: Scalar>(params: &AgentParams<T>, obs: &Observation<T>) {
    assert_eq!(
        obs.max_rows, params.shape.max_obsv_size,
        "observation size does not match the network"
    );
}

/// Masked logits: kernel score per selectable row, stop score last, -inf elsewhere.
pub fn policy_logits<T: Scalar>(params: &AgentParams<T>, obs: &Observation<T>) -> Vec<T> {
    check_shape(params, obs);
    let layout = AgentParams::<T>::kernel_layout(&params.shape);
    let mut cache = MlpCache::default();
    let mut logits = vec![T::neg_infinity(); obs.max_rows + 1];
    for i in 0..obs.used {
        if obs.mask[i] {
            logits[i] = layout.forward(&params.policy, obs.row(i), &mut cache);
        }
    }
    logits[obs.max_rows] = params.stop_score();
    logits
}

/// Softmax over unmasked entries; masked entries are exactly zero.
pub fn masked_softmax<T: Scalar>(logits: &[T], mask: &[bool]) -> Vec<T> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(T::neg_infinity(), T::max);
    let mut probs: Vec<T> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { T::zero() })
        .collect();
    // summed in sorted order so that permuting slots permutes the output exactly
    let mut terms: Vec<T> = probs.iter().copied().filter(|&p| p > T::zero()).collect();
    terms.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
    let sum = terms.iter().fold(T::zero(), |a, &b| a + b);
    for p in &mut probs {
        *p = *p / sum;
    }
    probs
}

/// Action distribution over `max_obsv_size + 1` slots.
pub fn policy_forward<T: Scalar>(params: &AgentParams<T>, obs: &Observation<T>) -> Vec<T> {
    masked_softmax(&policy_logits(params, obs), &obs.mask)
}

/// Forward pass of the policy kept around for backpropagation.
pub struct PolicyEval<T> {
    caches: Vec<(usize, MlpCache<T>)>,
    pub probs: Vec<T>,
}

impl<T: Scalar> PolicyEval<T> {
    pub fn new(params: &AgentParams<T>, obs: &Observation<T>) -> Self {
        check_shape(params, obs);
        let layout = AgentParams::<T>::kernel_layout(&params.shape);
        let mut caches = Vec::new();
        let mut logits = vec![T::neg_infinity(); obs.max_rows + 1];
        for i in 0..obs.used {
            if obs.mask[i] {
                let mut cache = MlpCache::default();
                logits[i] = layout.forward(&params.policy, obs.row(i), &mut cache);
                caches.push((i, cache));
            }
        }
        logits[obs.max_rows] = params.stop_score();
        PolicyEval {
            caches,
            probs: masked_softmax(&logits, &obs.mask),
        }
    }

    pub fn log_prob(&self, action: usize) -> T {
        self.probs[action].ln()
    }

    /// Accumulates `upstream * d(log p(action))/d(policy params)` into `grad`.
    pub fn backward(
        &self,
        params: &AgentParams<T>,
        obs: &Observation<T>,
        action: usize,
        upstream: T,
        grad: &mut [T],
    ) {
        let layout = AgentParams::<T>::kernel_layout(&params.shape);
        for (i, cache) in &self.caches {
            let indicator = if *i == action { T::one() } else { T::zero() };
            let g = upstream * (indicator - self.probs[*i]);
            layout.backward(&params.policy, obs.row(*i), cache, g, grad);
        }
        let stop = obs.max_rows;
        let indicator = if action == stop { T::one() } else { T::zero() };
        let last = grad.len() - 1;
        grad[last] = grad[last] + upstream * (indicator - self.probs[stop]);
    }
}

/// Log-probability of `action`; accumulates `upstream * d(logp)/d(policy params)`
/// into `grad` (same layout as `params.policy`).
pub fn policy_log_prob_grad<T: Scalar>(
    params: &AgentParams<T>,
    obs: &Observation<T>,
    action: usize,
    upstream: T,
    grad: &mut [T],
) -> T {
    let eval = PolicyEval::new(params, obs);
    eval.backward(params, obs, action, upstream, grad);
    eval.log_prob(action)
}

pub fn value_forward<T: Scalar>(params: &AgentParams<T>, obs: &Observation<T>) -> T {
    check_shape(params, obs);
    let layout = AgentParams::<T>::value_layout(&params.shape);
    layout.forward(&params.value, &obs.rows, &mut MlpCache::default())
}

/// Value estimate; accumulates `upstream * d(value)/d(value params)` into `grad`.
pub fn value_grad<T: Scalar>(
    params: &AgentParams<T>,
    obs: &Observation<T>,
    upstream: T,
    grad: &mut [T],
) -> T {
    check_shape(params, obs);
    let layout = AgentParams::<T>::value_layout(&params.shape);
    let mut cache = MlpCache::default();
    let v = layout.forward(&params.value, &obs.rows, &mut cache);
    layout.backward(&params.value, &obs.rows, &cache, upstream, grad);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::obs::{build_observation, NodeOutlook};
    use crate::backfill::Candidate;
    use crate::workload::Job;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_shape() -> AgentShape {
        AgentShape {
            max_obsv_size: 6,
            features: JOB_FEATURES,
            policy_hidden: 5,
            value_hidden: 4,
        }
    }

    fn outlook(free: u32) -> NodeOutlook {
        NodeOutlook {
            clock: 400,
            free_nodes: free,
            total_nodes: 8,
            reservation: 700,
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

    fn sample_obs() -> Observation<f64> {
        let rjob = Job::new(0, 0, 6, 1000, 900);
        let a = Job::new(1, 10, 2, 300, 200);
        let b = Job::new(2, 20, 1, 5000, 10);
        let c = Job::new(3, 30, 5, 50, 50);
        build_observation(&rjob, &cands(&[&a, &b, &c]), &outlook(3), 6).0
    }

    #[test]
    fn zero_params_give_zero_value() {
        let p = AgentParams::<f64>::zeros(small_shape());
        assert_eq!(value_forward(&p, &sample_obs()), 0.0);
    }

    #[test]
    fn masked_slots_get_zero_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AgentParams::<f64>::init(small_shape(), &mut rng);
        let obs = sample_obs();
        let probs = policy_forward(&p, &obs);
        for (pr, &m) in probs.iter().zip(&obs.mask) {
            if !m {
                assert_eq!(*pr, 0.0);
            }
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn only_stop_is_degenerate() {
        let p = AgentParams::<f64>::init(small_shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let rjob = Job::new(0, 0, 6, 1000, 900);
        let (obs, _) = build_observation::<f64>(&rjob, &[], &outlook(3), 6);
        let probs = policy_forward(&p, &obs);
        assert_eq!(probs[6], 1.0);
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn works_in_single_precision() {
        let p = AgentParams::<f32>::init(small_shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let rjob = Job::new(0, 0, 6, 1000, 900);
        let a = Job::new(1, 10, 2, 300, 200);
        let (obs, _) = build_observation::<f32>(&rjob, &cands(&[&a]), &outlook(3), 6);
        let probs = policy_forward(&p, &obs);
        assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(value_forward(&p, &obs).is_finite());
    }

    #[test]
    fn batch_path_agrees_with_single_samples() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layout = MlpLayout {
            input: 13,
            hidden: 7,
        };
        let p: Vec<f64> = layout.init(&mut rng, 1.0);
        // uneven prefix lengths, including empty, across more than one block
        let xs: Vec<Vec<f64>> = [13, 4, 0, 9, 13, 1, 7]
            .iter()
            .map(|&n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let douts: Vec<f64> = (0..xs.len()).map(|i| 0.3 * i as f64 - 0.8).collect();

        let mut cache = BatchCache::default();
        let out = layout.forward_batch(&p, &refs, &mut cache);
        let mut grad = vec![0.0; p.len()];
        layout.backward_batch(&p, &refs, &cache, &douts, &mut grad);

        let mut want = vec![0.0; p.len()];
        for (i, x) in refs.iter().enumerate() {
            let mut c = MlpCache::default();
            let v = layout.forward(&p, x, &mut c);
            assert!((v - out[i]).abs() < 1e-12);
            layout.backward(&p, x, &c, douts[i], &mut want);
        }
        for (g, w) in grad.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}
