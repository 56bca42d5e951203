//! Slave 4: improved cross-entropy evolutionary sampler. A Bernoulli
//! parameter vector over arms is resampled into exact-K actions through
//! gumbel top-K over the odds, refreshed from elite fractions at epoch
//! boundaries (half the elite slots fed by the cross-sampler global buffer,
//! the historical archive mixed in, and a decay factor smoothing the move),
//! and corrected inside epochs by proximal ratio ascent.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gumbel::{choose_orderings, gumbel_top_k_draw, unordered_logprob_grad, unordered_prob};
use crate::types::ActionVector;

/// Which probability enters the proximal ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CemProbMode {
    /// Factorized Bernoulli component probabilities.
    Factorized,
    /// The estimated unordered top-K sampling probability.
    TopK,
}

#[derive(Debug, Clone)]
pub struct CemConfig {
    pub l: usize,
    pub k: usize,
    /// Samples per epoch (N).
    pub epoch_len: usize,
    /// Samples per proximal interval (n).
    pub interval_len: usize,
    /// Elite fraction.
    pub rho: f64,
    /// Decay mixing old parameters into the elite mean.
    pub beta_mix: f64,
    pub beta_kl: f64,
    /// Parameter clip width.
    pub eps_mu: f64,
    pub archive_size: usize,
    pub ascent_steps: usize,
    pub ascent_lr: f64,
    pub prob_mode: CemProbMode,
    pub m_perms: usize,
}

impl CemConfig {
    pub fn for_dims(l: usize, k: usize, rho: f64) -> Self {
        Self {
            l,
            k,
            epoch_len: 50,
            interval_len: 10,
            rho,
            beta_mix: 0.3,
            beta_kl: 0.1,
            eps_mu: 0.01,
            archive_size: 20,
            ascent_steps: 5,
            ascent_lr: 0.05,
            prob_mode: CemProbMode::Factorized,
            m_perms: 10,
        }
    }
}

/// `P(A_i | u_i)` under the factorized Bernoulli model.
pub fn bernoulli_prob(selected: bool, u: f64) -> f64 {
    if selected {
        u
    } else {
        1.0 - u
    }
}

/// `KL(Bern(p) || Bern(q))`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn odds(mu: &[f64]) -> Vec<f64> {
    mu.iter().map(|&m| m / (1.0 - m)).collect()
}

#[derive(Debug, Clone)]
pub struct CemSampler {
    pub cfg: CemConfig,
    mu: Vec<f64>,
    rng: ChaCha8Rng,
    epoch_samples: Vec<(ActionVector, f64)>,
    interval_samples: Vec<(ActionVector, f64)>,
    archive: Vec<(ActionVector, f64)>,
    u_old: Vec<f64>,
    u_new: Vec<f64>,
}

impl CemSampler {
    pub fn new(cfg: CemConfig, rng: ChaCha8Rng) -> Self {
        let init = (cfg.k as f64 / cfg.l as f64).clamp(cfg.eps_mu, 1.0 - cfg.eps_mu);
        let mu = vec![init; cfg.l];
        Self {
            u_old: mu.clone(),
            u_new: mu.clone(),
            mu,
            rng,
            epoch_samples: Vec::new(),
            interval_samples: Vec::new(),
            archive: Vec::new(),
            cfg,
        }
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn set_mu(&mut self, mu: Vec<f64>) {
        assert_eq!(mu.len(), self.cfg.l);
        self.mu = mu;
        self.clip_mu();
    }

    pub fn archive(&self) -> &[(ActionVector, f64)] {
        &self.archive
    }

    fn clip_mu(&mut self) {
        let eps = self.cfg.eps_mu;
        for m in self.mu.iter_mut() {
            *m = m.clamp(eps, 1.0 - eps);
        }
    }

    /// Exactly-K action via gumbel top-K over the Bernoulli odds.
    pub fn cem_sample(&mut self) -> Result<ActionVector> {
        let weights = odds(&self.mu);
        let (subset, _) = gumbel_top_k_draw(&weights, self.cfg.k, &mut self.rng)?;
        ActionVector::from_indices(&subset, self.cfg.l)
    }

    /// Record a scored sample; interval and epoch updates fire on their
    /// sample-count boundaries. `global_elites` is the cross-sampler shared
    /// elite snapshot available at this moment.
    pub fn push_scored(
        &mut self,
        action: ActionVector,
        score: f64,
        global_elites: &[(ActionVector, f64)],
    ) {
        self.epoch_samples.push((action.clone(), score));
        self.interval_samples.push((action, score));
        if self.interval_samples.len() >= self.cfg.interval_len {
            let samples = std::mem::take(&mut self.interval_samples);
            let (actions, scores): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
            self.ppo_interval_update(&actions, &scores);
        }
        if self.epoch_samples.len() >= self.cfg.epoch_len {
            let samples = std::mem::take(&mut self.epoch_samples);
            self.epoch_update(&samples, global_elites);
            self.interval_samples.clear();
        }
    }

    /// Elite-fraction refresh of the parameter vector.
    pub fn epoch_update(
        &mut self,
        scored_samples: &[(ActionVector, f64)],
        global_elites: &[(ActionVector, f64)],
    ) {
        if scored_samples.is_empty() {
            return;
        }
        let elite_total = ((self.cfg.rho * scored_samples.len() as f64).ceil() as usize).max(1);
        // Half the slots from the shared buffer, the rest from this epoch.
        let global_count = (elite_total / 2).min(global_elites.len());
        let own_count = elite_total - global_count;
        let mut own: Vec<&(ActionVector, f64)> = scored_samples.iter().collect();
        own.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let mut elites: Vec<&ActionVector> = own.iter().take(own_count).map(|s| &s.0).collect();
        elites.extend(global_elites.iter().take(global_count).map(|s| &s.0));
        // Historical archive mixed in.
        elites.extend(self.archive.iter().map(|s| &s.0));

        let mut mean = vec![0.0; self.cfg.l];
        for a in &elites {
            for idx in a.selected() {
                mean[idx] += 1.0;
            }
        }
        let denom = elites.len() as f64;
        for v in mean.iter_mut() {
            *v /= denom;
        }
        let beta = self.cfg.beta_mix;
        for (m, new) in self.mu.iter_mut().zip(&mean) {
            *m = beta * *m + (1.0 - beta) * new;
        }
        self.clip_mu();

        // Archive keeps the best-scored distinct actions seen so far.
        for (a, s) in own.iter().take(own_count) {
            match self.archive.iter_mut().find(|(b, _)| b == a) {
                Some(slot) => slot.1 = slot.1.max(*s),
                None => self.archive.push((a.clone(), *s)),
            }
        }
        self.archive
            .sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        self.archive.truncate(self.cfg.archive_size);
    }

    /// The proximal objective
    /// `J = (1/n) sum_t sum_i ratio_{t,i} (score_t - b) - beta_KL * sum_i KL_i`
    /// evaluated at `u_new` against `u_old`, in factorized mode.
    pub fn proximal_objective(
        &self,
        actions: &[ActionVector],
        scores: &[f64],
        u_old: &[f64],
        u_new: &[f64],
        baseline: f64,
    ) -> f64 {
        let n = actions.len() as f64;
        let mut j = 0.0;
        for (a, s) in actions.iter().zip(scores) {
            let adv = s - baseline;
            for i in 0..self.cfg.l {
                let ratio = bernoulli_prob(a.get(i), u_new[i]) / bernoulli_prob(a.get(i), u_old[i]);
                j += ratio * adv / n;
            }
        }
        for i in 0..self.cfg.l {
            j -= self.cfg.beta_kl * bernoulli_kl(u_old[i], u_new[i]);
        }
        j
    }

    /// Analytic gradient of the proximal objective with respect to `u_new`.
    pub fn proximal_gradient(
        &self,
        actions: &[ActionVector],
        scores: &[f64],
        u_old: &[f64],
        u_new: &[f64],
        baseline: f64,
    ) -> Vec<f64> {
        let n = actions.len() as f64;
        let mut grad = vec![0.0; self.cfg.l];
        for (a, s) in actions.iter().zip(scores) {
            let adv = s - baseline;
            for i in 0..self.cfg.l {
                let sign = if a.get(i) { 1.0 } else { -1.0 };
                grad[i] += sign * adv / (bernoulli_prob(a.get(i), u_old[i]) * n);
            }
        }
        for i in 0..self.cfg.l {
            let p = u_old[i];
            let q = u_new[i];
            grad[i] -= self.cfg.beta_kl * (-p / q + (1.0 - p) / (1.0 - q));
        }
        grad
    }

    /// Several ascent steps on the proximal objective; the sampling vector
    /// moves to the clipped result.
    pub fn ppo_interval_update(&mut self, actions: &[ActionVector], scores: &[f64]) {
        if actions.is_empty() {
            return;
        }
        let baseline: f64 = scores.iter().sum::<f64>() / scores.len() as f64;
        let u_old = self.mu.clone();
        let mut u_new = u_old.clone();
        let eps = self.cfg.eps_mu;
        match self.cfg.prob_mode {
            CemProbMode::Factorized => {
                for _ in 0..self.cfg.ascent_steps {
                    let grad = self.proximal_gradient(actions, scores, &u_old, &u_new, baseline);
                    for (u, g) in u_new.iter_mut().zip(&grad) {
                        *u = (*u + self.cfg.ascent_lr * g).clamp(eps, 1.0 - eps);
                    }
                }
            }
            CemProbMode::TopK => {
                // Joint-probability ratio with frozen orderings per sample.
                let frozen: Vec<_> = actions
                    .iter()
                    .map(|a| choose_orderings(&a.selected(), self.cfg.m_perms, &mut self.rng))
                    .collect();
                let old_probs: Vec<f64> = actions
                    .iter()
                    .zip(&frozen)
                    .map(|(_, fr)| unordered_prob(&odds(&u_old), fr))
                    .collect();
                let n = actions.len() as f64;
                for _ in 0..self.cfg.ascent_steps {
                    let w_new = odds(&u_new);
                    let mut grad = vec![0.0; self.cfg.l];
                    for ((fr, s), old_p) in frozen.iter().zip(scores).zip(&old_probs) {
                        let adv = s - baseline;
                        let p_new = unordered_prob(&w_new, fr);
                        let dlog = unordered_logprob_grad(&w_new, fr);
                        for i in 0..self.cfg.l {
                            let dw_du = 1.0 / ((1.0 - u_new[i]) * (1.0 - u_new[i]));
                            grad[i] += adv * (p_new / old_p) * dlog[i] * dw_du / n;
                        }
                    }
                    for i in 0..self.cfg.l {
                        let p = u_old[i];
                        let q = u_new[i];
                        grad[i] -= self.cfg.beta_kl * (-p / q + (1.0 - p) / (1.0 - q));
                    }
                    for (u, g) in u_new.iter_mut().zip(&grad) {
                        *u = (*u + self.cfg.ascent_lr * g).clamp(eps, 1.0 - eps);
                    }
                }
            }
        }
        self.u_old = u_old;
        self.u_new = u_new.clone();
        self.mu = u_new;
    }

    pub fn interval_params(&self) -> (&[f64], &[f64]) {
        (&self.u_old, &self.u_new)
    }

    /// Demonstration path: treat the parameters as logits and descend the
    /// cross-entropy toward the target action.
    pub fn demonstration_step(&mut self, target: &ActionVector, lr: f64) {
        let l = self.cfg.l as f64;
        let eps = self.cfg.eps_mu;
        for i in 0..self.cfg.l {
            let logit = (self.mu[i] / (1.0 - self.mu[i])).ln();
            let t = if target.get(i) { 1.0 } else { 0.0 };
            let updated = logit - lr * (self.mu[i] - t) / l;
            self.mu[i] = (1.0 / (1.0 + (-updated).exp())).clamp(eps, 1.0 - eps);
        }
    }
}
