//! Cloud-side downlink control and gateway load balancing: an actor-critic
//! over pending downlink control messages, with per-gateway virtual
//! overload queues whose drift keeps long-term assigned airtime within the
//! per-slot capacity. The queue bonus enters the actor update as an extra
//! non-differentiated weight, so with empty queues the update reduces to
//! the plain policy-gradient step.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{masked_softmax, Gradients, Mlp, LOG_EPS};

// ============================================================================
// Overload queues
// ============================================================================

/// Per-gateway virtual backlog of unfinished downlink airtime (seconds)
/// against a per-slot service capacity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverloadQueue {
    pub backlog_s: Vec<f64>,
    /// Airtime the downlink channel can serve per slot, seconds.
    pub capacity_s: f64,
}

/// Per-slot bookkeeping emitted by [`OverloadQueue::advance_slot`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SlotStats {
    /// 0.5 * sum of squared backlogs after the update.
    pub lyapunov: f64,
    /// Change of the Lyapunov value across the update.
    pub drift: f64,
}

impl OverloadQueue {
    pub fn new(gateways: usize, capacity_s: f64) -> Self {
        assert!(capacity_s > 0.0);
        Self { backlog_s: vec![0.0; gateways], capacity_s }
    }

    pub fn lyapunov_value(&self) -> f64 {
        0.5 * self.backlog_s.iter().map(|o| o * o).sum::<f64>()
    }

    /// Close slot `t`: fold the realized per-gateway loads into the
    /// backlogs as `O <- max(O + L - capacity, 0)`.
    pub fn advance_slot(&mut self, loads_s: &[f64]) -> SlotStats {
        assert_eq!(loads_s.len(), self.backlog_s.len());
        assert!(loads_s.iter().all(|&l| l >= 0.0));
        let before = self.lyapunov_value();
        for (o, &l) in self.backlog_s.iter_mut().zip(loads_s) {
            *o = (*o + l - self.capacity_s).max(0.0);
        }
        let after = self.lyapunov_value();
        SlotStats { lyapunov: after, drift: after - before }
    }

    pub fn max_backlog(&self) -> f64 {
        self.backlog_s.iter().copied().fold(0.0, f64::max)
    }
}

/// Constraint bonus of a proposed per-gateway slot assignment:
/// `sum_g O_g * (capacity - L_g)`. Positive when the assignment leaves
/// slack on backlogged gateways.
pub fn lyapunov_bonus(queue: &OverloadQueue, proposed_loads_s: &[f64]) -> f64 {
    assert_eq!(proposed_loads_s.len(), queue.backlog_s.len());
    queue
        .backlog_s
        .iter()
        .zip(proposed_loads_s)
        .map(|(o, l)| o * (queue.capacity_s - l))
        .sum()
}

// ============================================================================
// Replay buffer
// ============================================================================

/// One dispatch decision: the state observed for a pending downlink, the
/// gateway chosen (or `mask.len() - 1` for "do not send"), the message
/// airtime, the reward, and the state observed at the next decision.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    /// Selectable actions at decision time: candidate gateways plus the
    /// always-allowed "do not send" slot.
    pub mask: Vec<bool>,
    pub toa_s: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity ring buffer with seeded uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    buf: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { buf: Vec::with_capacity(capacity.min(4096)), capacity, write: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn sample<'a>(&'a self, batch: usize, rng: &mut ChaCha12Rng) -> Vec<&'a Transition> {
        (0..batch).map(|_| &self.buf[rng.gen_range(0..self.buf.len())]).collect()
    }
}

// ============================================================================
// Global PDR tracker
// ============================================================================

/// Smoothed per-combo global delivery-rate model plus the running global
/// cumulative PDR. Stands in for the counterfactual evaluator: the value
/// of switching a node from one combo to another is read off as the
/// difference of the combos' smoothed success rates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalPdrTracker {
    smoothing: f64,
    combo_rate: Vec<Option<f64>>,
    generated: u64,
    delivered: u64,
}

impl GlobalPdrTracker {
    pub fn new(combos: usize, smoothing: f64) -> Self {
        assert!((0.0..1.0).contains(&smoothing));
        Self { smoothing, combo_rate: vec![None; combos], generated: 0, delivered: 0 }
    }

    pub fn record_outcome(&mut self, combo: usize, delivered: bool) {
        let x = if delivered { 1.0 } else { 0.0 };
        self.generated += 1;
        if delivered {
            self.delivered += 1;
        }
        let slot = &mut self.combo_rate[combo];
        *slot = Some(match *slot {
            None => x,
            Some(prev) => self.smoothing * prev + (1.0 - self.smoothing) * x,
        });
    }

    pub fn combo_rate(&self, combo: usize) -> Option<f64> {
        self.combo_rate[combo]
    }

    pub fn global_pdr(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.delivered as f64 / self.generated as f64
        }
    }

    /// Expected global-PDR change of moving a node from `current` to
    /// `proposed`; zero whenever either side has no data yet.
    pub fn estimate_delta_h(&self, current: usize, proposed: usize) -> f64 {
        match (self.combo_rate(proposed), self.combo_rate(current)) {
            (Some(p), Some(c)) => p - c,
            _ => 0.0,
        }
    }
}

// ============================================================================
// Reward
// ============================================================================

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RewardParams {
    /// Sign applied to the chosen gateway's queue-length term. The
    /// additive form rewards loaded gateways; the default -1 penalizes
    /// them, matching the load-balancing intent. Both behaviors stay
    /// selectable.
    pub load_sign: f64,
    /// Clamp on the PDR-change argument before tan(), kept inside its
    /// domain.
    pub delta_h_clamp: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { load_sign: -1.0, delta_h_clamp: 1.5 }
    }
}

/// Dispatch reward: `tan(delta_h) + load_sign * queue_len` when a gateway
/// sends, exactly zero for "do not send".
pub fn reward(
    action: usize,
    gateway_count: usize,
    delta_h: f64,
    queue_len: f64,
    params: &RewardParams,
) -> f64 {
    if action >= gateway_count {
        return 0.0;
    }
    let clamped = delta_h.clamp(-params.delta_h_clamp, params.delta_h_clamp);
    clamped.tan() + params.load_sign * queue_len
}

/// The state/action/reward triple produced for one pending downlink.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DownlinkDecision {
    pub state: Vec<f64>,
    /// Gateway index, or the gateway count for "do not send".
    pub action: usize,
    pub reward: f64,
}

// ============================================================================
// Critic
// ============================================================================

/// Bootstrapped targets `r + gamma * max_q Q(s', q)`, computed before the
/// step and held fixed while the squared error is descended.
pub fn critic_targets(critic: &Mlp, batch: &[&Transition], gamma: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&gamma));
    batch
        .iter()
        .map(|t| {
            let q_next = critic.forward(&t.next_state);
            let max_q = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * max_q
        })
        .collect()
}

/// Mean squared TD error of the batch against fixed targets, without
/// stepping.
pub fn critic_loss(critic: &Mlp, batch: &[&Transition], targets: &[f64]) -> f64 {
    batch
        .iter()
        .zip(targets)
        .map(|(t, &y)| {
            let q = critic.forward(&t.state)[t.action];
            (y - q) * (y - q)
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// One descent step on the mean squared TD error. Returns the pre-step
/// loss; a non-finite loss or gradient aborts the step.
pub fn critic_update(
    critic: &mut Mlp,
    batch: &[&Transition],
    targets: &[f64],
    lr: f64,
    grad_clip: f64,
) -> f64 {
    assert!(!batch.is_empty());
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let cache = critic.forward_cached(&t.state);
        let q = cache.output()[t.action];
        loss += (y - q) * (y - q) / n;
        let mut dout = vec![0.0; critic.output_dim()];
        dout[t.action] = 2.0 * (q - y) / n;
        grads.add_assign(&critic.backward(&cache, &dout));
    }
    if !loss.is_finite() || !grads.is_finite() {
        return loss;
    }
    critic.apply_step(&grads, lr, Some(grad_clip), -1.0);
    loss
}

// ============================================================================
// Actor
// ============================================================================

/// One weighted policy-gradient sample: the weight is `Q(s, a)` plus the
/// queue bonus of the load vector this action proposes, both treated as
/// constants by the update.
#[derive(Clone, Debug)]
pub struct ActorSample {
    pub state: Vec<f64>,
    pub action: usize,
    pub mask: Vec<bool>,
    pub weight: f64,
}

/// Masked policy distribution over gateways plus "do not send".
pub fn policy_probs(actor: &Mlp, state: &[f64], mask: &[bool]) -> Vec<f64> {
    masked_softmax(&actor.forward(state), mask)
}

/// Draw an action index from a distribution (inverse CDF).
pub fn sample_action(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let draw: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// The ascent objective: mean over the batch of `weight * log pi(a|s)`.
pub fn actor_objective(actor: &Mlp, samples: &[ActorSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let probs = policy_probs(actor, &s.state, &s.mask);
            s.weight * probs[s.action].max(LOG_EPS).ln()
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// One ascent step on the weighted log-likelihood objective. Returns the
/// pre-step objective; a non-finite objective or gradient aborts.
pub fn actor_update(actor: &mut Mlp, samples: &[ActorSample], lr: f64, grad_clip: f64) -> f64 {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let mut grads = Gradients::zeros_like(actor);
    let mut objective = 0.0;
    for s in samples {
        assert!(s.mask[s.action], "taken action must be selectable");
        let cache = actor.forward_cached(&s.state);
        let probs = masked_softmax(cache.output(), &s.mask);
        objective += s.weight * probs[s.action].max(LOG_EPS).ln() / n;
        // d(log pi_a)/d logit_j = delta_aj - pi_j on selectable entries,
        // zero on masked ones; ascent accumulates weight * that / n.
        let dout: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                if !s.mask[j] {
                    0.0
                } else {
                    let delta = if j == s.action { 1.0 } else { 0.0 };
                    s.weight * (delta - pj) / n
                }
            })
            .collect();
        grads.add_assign(&actor.backward(&cache, &dout));
    }
    if !objective.is_finite() || !grads.is_finite() {
        return objective;
    }
    actor.apply_step(&grads, lr, Some(grad_clip), 1.0);
    objective
}

/// Per-sample actor weight under the constrained objective: the critic
/// value of the taken action plus the queue bonus of the single-message
/// load vector that action implies. With all backlogs zero the bonus
/// vanishes and the weight reduces to the plain critic value.
pub fn constrained_weight(critic: &Mlp, queue: &OverloadQueue, transition: &Transition) -> f64 {
    let q = critic.forward(&transition.state)[transition.action];
    let gateways = queue.backlog_s.len();
    let mut loads = vec![0.0; gateways];
    if transition.action < gateways {
        loads[transition.action] = transition.toa_s;
    }
    q + lyapunov_bonus(queue, &loads)
}
