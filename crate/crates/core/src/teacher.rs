//! Cloud-side teacher policy over node parameter combos.
//!
//! This is a pluggable stand-in for an externally trained scheduler: an
//! actor-critic pair on the shared MLP substrate, trained online from the
//! fleet-wide stream of (node features, combo, delivery outcome) samples
//! the network server observes. It produces the control proposals carried
//! by downlinks and the logits the distillation module ships to students.
//! Swap in a different policy by replacing this type behind the same
//! interface.

use rand_chacha::ChaCha12Rng;

use crate::nn::{Activation, Gradients, Mlp};

/// One observed outcome: features the node was in, the TX combo it used,
/// and whether the uplink was delivered.
#[derive(Clone, Debug)]
pub struct TeacherSample {
    pub features: Vec<f64>,
    pub combo: usize,
    pub delivered: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct TeacherParams {
    pub learning_rate: f64,
    pub grad_clip: f64,
}

impl Default for TeacherParams {
    fn default() -> Self {
        Self { learning_rate: 0.01, grad_clip: 5.0 }
    }
}

/// Actor-critic teacher: `policy` maps node features to one logit per TX
/// combo, `value` predicts the delivery probability of the node's current
/// behavior and serves as the policy-gradient baseline.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub policy: Mlp,
    pub value: Mlp,
    pub params: TeacherParams,
    pub train_steps: u64,
}

impl Teacher {
    pub fn new(
        feature_dim: usize,
        combos: usize,
        hidden: &[usize],
        params: TeacherParams,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut policy_sizes = vec![feature_dim];
        policy_sizes.extend_from_slice(hidden);
        policy_sizes.push(combos);
        let mut value_sizes = vec![feature_dim];
        value_sizes.extend_from_slice(hidden);
        value_sizes.push(1);
        Self {
            policy: Mlp::new(&policy_sizes, Activation::Tanh, rng),
            value: Mlp::new(&value_sizes, Activation::Tanh, rng),
            params,
            train_steps: 0,
        }
    }

    /// Raw policy logits for a node state; these are what distillation
    /// sends down to the node's student.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.policy.forward(features)
    }

    /// Greedy combo proposal restricted to link-feasible combos.
    pub fn propose(&self, features: &[f64], feasible: &[bool]) -> usize {
        let logits = self.logits(features);
        let mut best: Option<(f64, usize)> = None;
        for (i, (&l, &ok)) in logits.iter().zip(feasible).enumerate() {
            if ok && best.map_or(true, |(b, _)| l > b) {
                best = Some((l, i));
            }
        }
        match best {
            Some((_, i)) => i,
            // Nothing feasible: fall back to the unrestricted argmax.
            None => {
                logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            }
        }
    }

    /// One training pass over a batch of outcomes: the value head descends
    /// its squared error against the 0/1 outcome, the policy ascends the
    /// advantage-weighted log-likelihood of the combos that were in force.
    pub fn train(&mut self, batch: &[TeacherSample]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let mut value_grads = Gradients::zeros_like(&self.value);
        let mut policy_grads = Gradients::zeros_like(&self.policy);
        for s in batch {
            let outcome = if s.delivered { 1.0 } else { 0.0 };
            let vcache = self.value.forward_cached(&s.features);
            let v = vcache.output()[0];
            value_grads.add_assign(&self.value.backward(&vcache, &[2.0 * (v - outcome) / n]));

            let advantage = outcome - v;
            let pcache = self.policy.forward_cached(&s.features);
            let probs = crate::nn::softmax(pcache.output());
            let dout: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let delta = if j == s.combo { 1.0 } else { 0.0 };
                    advantage * (delta - pj) / n
                })
                .collect();
            policy_grads.add_assign(&self.policy.backward(&pcache, &dout));
        }
        if value_grads.is_finite() {
            self.value.apply_step(&value_grads, self.params.learning_rate, Some(self.params.grad_clip), -1.0);
        }
        if policy_grads.is_finite() {
            self.policy.apply_step(&policy_grads, self.params.learning_rate, Some(self.params.grad_clip), 1.0);
        }
        self.train_steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn propose_respects_feasibility_mask() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let teacher = Teacher::new(3, 6, &[8], TeacherParams::default(), &mut rng);
        let features = vec![0.1, -0.2, 0.5];
        let mut feasible = vec![false; 6];
        feasible[4] = true;
        assert_eq!(teacher.propose(&features, &feasible), 4);
        // All infeasible: still returns a valid combo.
        let none = vec![false; 6];
        let combo = teacher.propose(&features, &none);
        assert!(combo < 6);
    }

    #[test]
    fn training_shifts_policy_toward_successful_combos() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut teacher = Teacher::new(
            2,
            4,
            &[16],
            TeacherParams { learning_rate: 0.05, grad_clip: 5.0 },
            &mut rng,
        );
        // Feature [1,0]: combo 1 always delivers, others never.
        // Feature [0,1]: combo 3 always delivers.
        let batches: Vec<Vec<TeacherSample>> = (0..400)
            .map(|_| {
                (0..8)
                    .map(|_| {
                        let left = rng.gen_bool(0.5);
                        let features = if left { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
                        let combo = rng.gen_range(0..4);
                        let delivered = (left && combo == 1) || (!left && combo == 3);
                        TeacherSample { features, combo, delivered }
                    })
                    .collect()
            })
            .collect();
        for b in &batches {
            teacher.train(b);
        }
        let all = vec![true; 4];
        assert_eq!(teacher.propose(&[1.0, 0.0], &all), 1);
        assert_eq!(teacher.propose(&[0.0, 1.0], &all), 3);
        assert!(teacher.train_steps == 400);
    }
}
