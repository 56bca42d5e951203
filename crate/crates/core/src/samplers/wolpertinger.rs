//! Slave 2: primal-dual actor-critic over a large discrete action space.
//! A deterministic actor maps the arm-selection-count state to a proto-action;
//! a count-based optimism bonus, top-K binarization, and random component
//! switches produce candidates; the critic ranks them. A dual variable traded
//! off against the constraint threshold shapes the replay feedback, and the
//! actor-critic trains from the clustered/extreme prioritized replay.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Activation, Gradients, Mlp};
use crate::samplers::replay::{ReplayBuffer, ReplayEntry, SampledBatch};
use crate::types::{binarize_top_k, ActionVector};

#[derive(Debug, Clone)]
pub struct WolpertingerConfig {
    pub l: usize,
    pub k: usize,
    /// Optimism coefficient on the recommendation-count bonus.
    pub kappa: f64,
    /// Random two-component switches per proposal.
    pub n_swaps: usize,
    /// Constraint threshold the dual ascends against.
    pub alpha_c: f64,
    pub lr_dual: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub tau_soft: f64,
    pub hidden: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub epoch_len: usize,
    pub cluster_count: usize,
}

impl Default for WolpertingerConfig {
    fn default() -> Self {
        Self {
            l: 0,
            k: 0,
            kappa: 0.1,
            n_swaps: 10,
            alpha_c: 0.02,
            lr_dual: 0.01,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            tau_soft: 0.01,
            hidden: 64,
            replay_capacity: 10_000,
            batch_size: 32,
            epoch_len: 20,
            cluster_count: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WolpertingerSampler {
    cfg: WolpertingerConfig,
    actor: Mlp,
    critic: Mlp,
    actor_target: Mlp,
    critic_target: Mlp,
    lambda2: f64,
    /// Per-arm appearance counts in this sampler's own emitted elites,
    /// the source of the state vector.
    own_elite_counts: Vec<f64>,
    /// Per-arm counts of master-recommended actions, feeding the bonus.
    recommended_counts: Vec<f64>,
    state: Vec<f64>,
    replay: ReplayBuffer,
    /// Violation rates observed since the last dual step.
    pending_violations: Vec<f64>,
    rng: ChaCha8Rng,
}

impl WolpertingerSampler {
    pub fn new(cfg: WolpertingerConfig, mut rng: ChaCha8Rng) -> Self {
        let l = cfg.l;
        let actor = Mlp::new(
            &[l, cfg.hidden, cfg.hidden, l],
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        );
        let critic = Mlp::new(
            &[2 * l, cfg.hidden, cfg.hidden, 1],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let replay = ReplayBuffer::new(cfg.replay_capacity);
        Self {
            actor,
            critic,
            actor_target,
            critic_target,
            lambda2: 0.0,
            own_elite_counts: vec![0.0; l],
            recommended_counts: vec![0.0; l],
            state: vec![1.0 / l as f64; l],
            replay,
            pending_violations: Vec::new(),
            rng,
            cfg,
        }
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn actor_output(&self) -> Vec<f64> {
        self.actor.forward(&self.state)
    }

    fn critic_value(&self, state: &[f64], action_bits: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(2 * self.cfg.l);
        input.extend_from_slice(state);
        input.extend_from_slice(action_bits);
        self.critic.forward(&input)[0]
    }

    /// Proto-action, bonus, binarize, random switches, critic ranking.
    /// Returns up to `n_candidates` actions, critic-best first.
    pub fn propose(&mut self, t: usize, n_candidates: usize) -> Result<Vec<ActionVector>> {
        if n_candidates == 0 {
            return Ok(Vec::new());
        }
        let proto = self.actor.forward(&self.state);
        let log_t = (t.max(2) as f64).ln();
        let boosted: Vec<f64> = proto
            .iter()
            .enumerate()
            .map(|(i, &p)| p + self.cfg.kappa * (log_t / (1.0 + self.recommended_counts[i])).sqrt())
            .collect();
        let base = binarize_top_k(&boosted, self.cfg.k)?;
        let mut candidates = vec![base.clone()];
        let mut current = base;
        for _ in 0..self.cfg.n_swaps {
            let selected = current.selected();
            let unselected: Vec<usize> =
                (0..self.cfg.l).filter(|&i| !current.get(i)).collect();
            if unselected.is_empty() {
                break;
            }
            let drop = selected[self.rng.random_range(0..selected.len())];
            let add = unselected[self.rng.random_range(0..unselected.len())];
            let mut bits = current.bits().to_vec();
            bits[drop] = false;
            bits[add] = true;
            current = ActionVector::new(bits, self.cfg.k)?;
            candidates.push(current.clone());
        }
        // Critic ranking, ties by insertion order.
        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, a)| (self.critic_value(&self.state, &a.to_reals()), i))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let out: Vec<ActionVector> = scored
            .into_iter()
            .take(n_candidates)
            .map(|(_, i)| candidates[i].clone())
            .collect();
        for a in &out {
            for idx in a.selected() {
                self.own_elite_counts[idx] += 1.0;
            }
        }
        Ok(out)
    }

    /// Insert an experienced transition; the composite feedback is whatever
    /// the caller's feedback channel produced minus this sampler's own dual
    /// times the violation rate.
    pub fn record_experience(&mut self, action: &ActionVector, raw_feedback: f64, violation: f64) {
        let composite = raw_feedback - self.lambda2 * violation;
        self.pending_violations.push(violation);
        self.replay.push(ReplayEntry {
            state: self.state.clone(),
            action: action.clone(),
            composite,
            violation,
            next_state: self.state.clone(),
        });
    }

    /// The master recommended this action; bump the bonus counts.
    pub fn observe_recommendation(&mut self, action: &ActionVector) {
        for idx in action.selected() {
            self.recommended_counts[idx] += 1.0;
        }
    }

    /// Recompute the state vector at epoch boundaries from own-elite counts.
    pub fn maybe_roll_epoch(&mut self, t: usize) {
        if t % self.cfg.epoch_len != 0 {
            return;
        }
        let total: f64 = self.own_elite_counts.iter().sum();
        if total <= 0.0 {
            self.state = vec![1.0 / self.cfg.l as f64; self.cfg.l];
        } else {
            self.state = self.own_elite_counts.iter().map(|c| c / total).collect();
        }
    }

    /// Projected dual ascent on the constraint residual.
    pub fn rcpo_dual_step(&mut self, observed_c_mean: f64) {
        self.lambda2 = (self.lambda2 + self.cfg.lr_dual * (observed_c_mean - self.cfg.alpha_c)).max(0.0);
    }

    /// Dual step from the violations accumulated since the last call.
    pub fn dual_step_from_pending(&mut self) {
        if self.pending_violations.is_empty() {
            return;
        }
        let mean = self.pending_violations.iter().sum::<f64>() / self.pending_violations.len() as f64;
        self.pending_violations.clear();
        self.rcpo_dual_step(mean);
    }

    pub fn recluster(&mut self) {
        self.replay.recluster(self.cfg.cluster_count, 10, &mut self.rng);
    }

    pub fn sample_batch(&mut self, batch_size: usize) -> SampledBatch {
        self.replay.sample_batch(batch_size, &mut self.rng)
    }

    /// One critic regression step toward the stored composite feedback and one
    /// actor ascent step through the critic, then soft target updates.
    pub fn train_step(&mut self, batch: &[ReplayEntry]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        // Critic step.
        let mut critic_grads = Gradients::zeros_like(&self.critic);
        for e in batch {
            let mut input = Vec::with_capacity(2 * self.cfg.l);
            input.extend_from_slice(&e.state);
            input.extend_from_slice(&e.action.to_reals());
            let trace = self.critic.forward_trace(&input);
            let pred = trace.output()[0];
            let dloss = 2.0 * (pred - e.composite) / n;
            let (grads, _) = self.critic.backward(&trace, &[dloss]);
            critic_grads.add(&grads);
        }
        self.critic.apply_gradients(&critic_grads, self.cfg.lr_critic);

        // Actor step: ascend d critic / d action through the proto-action.
        if self.cfg.lr_actor > 0.0 {
            let mut actor_grads = Gradients::zeros_like(&self.actor);
            for e in batch {
                let actor_trace = self.actor.forward_trace(&e.state);
                let proto = actor_trace.output().to_vec();
                let mut input = Vec::with_capacity(2 * self.cfg.l);
                input.extend_from_slice(&e.state);
                input.extend_from_slice(&proto);
                let critic_trace = self.critic.forward_trace(&input);
                let (_, dinput) = self.critic.backward(&critic_trace, &[1.0]);
                // Gradient w.r.t. the action half of the critic input; negate
                // for ascent.
                let dproto: Vec<f64> = dinput[self.cfg.l..].iter().map(|g| -g / n).collect();
                let (grads, _) = self.actor.backward(&actor_trace, &dproto);
                actor_grads.add(&grads);
            }
            self.actor.apply_gradients(&actor_grads, self.cfg.lr_actor);
        }

        self.actor_target.soft_update_from(&self.actor, self.cfg.tau_soft);
        self.critic_target.soft_update_from(&self.critic, self.cfg.tau_soft);
    }

    /// Full periodic update: dual step, recluster, then gradient steps on
    /// sampled batches.
    pub fn train(&mut self, steps: usize) {
        if self.replay.is_empty() {
            return;
        }
        self.dual_step_from_pending();
        self.recluster();
        for _ in 0..steps {
            let batch = self.sample_batch(self.cfg.batch_size);
            self.train_step(&batch.entries);
        }
    }

    pub fn actor_target_params(&self) -> Vec<f64> {
        self.actor_target.flat_params()
    }

    pub fn actor_params(&self) -> Vec<f64> {
        self.actor.flat_params()
    }

    /// Demonstration path: descend the cross-entropy between the actor's
    /// real-valued output and the target action.
    pub fn demonstration_step(&mut self, target: &ActionVector, lr: f64) {
        let trace = self.actor.forward_trace(&self.state);
        let (_, grad) = crate::nn::bce_loss_grad(trace.output(), target.bits());
        let (grads, _) = self.actor.backward(&trace, &grad);
        self.actor.apply_gradients(&grads, lr);
    }

    pub fn critic_estimate(&self, action: &ActionVector) -> f64 {
        self.critic_value(&self.state, &action.to_reals())
    }
}
