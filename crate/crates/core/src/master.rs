//! The master model: estimates feedback with the optimistic network, assigns
//! per-sampler elite quotas from softmaxed score histories, collects and
//! scores the round's elite pool, plays the best sample, feeds the reward
//! back into the estimator, and drives slave training and co-training on the
//! update period.

use rand_chacha::ChaCha8Rng;

use crate::cotraining::{DemonstrationStore, SharedBuffers, StuckMonitor};
use crate::error::{Error, Result};
use crate::neuralucb::{UcbOptions, UcbState, UcbVariant};
use crate::samplers::cem::{CemConfig, CemSampler};
use crate::samplers::g2anet::{G2anetConfig, G2anetSampler};
use crate::samplers::population::{RandomSampler, TlboSampler};
use crate::samplers::solver::{
    beta_perturb, extract_first_order, extract_second_order, solve_ip, IpObjective, SolveMode,
    ValueOracle,
};
use crate::samplers::wolpertinger::{WolpertingerConfig, WolpertingerSampler};
use crate::seeding::{stream_rng, Stream};
use crate::types::{
    composite_score, violation_rate, ActionVector, ConstraintSet, EliteSample, FeatureMatrix,
    Hyperparameters, SamplerId,
};

/// A bandit environment the master can play against.
pub trait Environment {
    fn l(&self) -> usize;
    /// Aggregated feedback for the played action at round `t` (1-based).
    fn feedback(&mut self, t: usize, action: &ActionVector) -> Result<f64>;
}

/// One elite with its composite evaluation.
#[derive(Debug, Clone)]
pub struct ScoredElite {
    pub elite: EliteSample,
    pub score: f64,
}

/// What one round produced.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub t: usize,
    pub action: ActionVector,
    pub reward: f64,
    pub violation: f64,
    pub sampler: SamplerId,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct MasterConfig {
    pub hyper: Hyperparameters,
    pub ucb: UcbOptions,
    pub enabled: Vec<SamplerId>,
    /// Per-sampler participation period in rounds; 1 means every round.
    pub participation: [usize; 6],
    /// Demonstration-learning iterations per trigger.
    pub n_demo: usize,
    pub demo_lr: f64,
    /// Gradient batches per actor-critic update.
    pub wolp_train_steps: usize,
    /// Decay of the per-sampler surrogate-score running mean.
    pub score_decay: f64,
}

impl MasterConfig {
    pub fn new(hyper: Hyperparameters) -> Self {
        Self {
            hyper,
            ucb: UcbOptions::default(),
            enabled: SamplerId::ALL.to_vec(),
            participation: [1; 6],
            n_demo: 20,
            demo_lr: 0.05,
            wolp_train_steps: 5,
            score_decay: 0.99,
        }
    }
}

/// Softmax shares with largest-remainder rounding to integer quotas summing
/// to `n_es`. Samplers without history receive the mean of the known scores.
pub fn assign_quotas(scores: &[Option<f64>], n_es: usize) -> Vec<usize> {
    let n = scores.len();
    if n == 0 {
        return Vec::new();
    }
    let known: Vec<f64> = scores.iter().filter_map(|s| *s).collect();
    let fill = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    let vals: Vec<f64> = scores.iter().map(|s| s.unwrap_or(fill)).collect();
    let peak = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    let shares: Vec<f64> = exps.iter().map(|e| e / total * n_es as f64).collect();
    let mut quotas: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut remainders: Vec<(f64, usize)> = shares
        .iter()
        .enumerate()
        .map(|(i, s)| (s - s.floor(), i))
        .collect();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(n_es - assigned) {
        quotas[i] += 1;
    }
    quotas
}

struct MeanOracle<'a> {
    ucb: &'a UcbState,
}

impl ValueOracle for MeanOracle<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        self.ucb.params().value_unchecked(x).unwrap_or(0.0)
    }
}

pub struct Master {
    cfg: MasterConfig,
    constraints: ConstraintSet,
    ucb: UcbState,
    round: usize,
    solver_rng: ChaCha8Rng,
    wolp: Option<WolpertingerSampler>,
    g2anet: Option<G2anetSampler>,
    cem: Option<CemSampler>,
    random: RandomSampler,
    tlbo: Option<TlboSampler>,
    shared: SharedBuffers,
    demo: DemonstrationStore,
    monitors: [StuckMonitor; 3], // wolpertinger, g2anet, cem
    score_hist: [Option<f64>; 6],
    records: Vec<RoundRecord>,
}

impl Master {
    /// Build the master and its enabled slaves. `features` drives both the
    /// constraint set (already built by the caller) and the attention
    /// sampler's node features; pass None for context-free runs.
    pub fn new(
        cfg: MasterConfig,
        constraints: ConstraintSet,
        features: Option<&FeatureMatrix>,
        seed: u64,
        replicate: u64,
    ) -> Result<Self> {
        cfg.hyper.validate()?;
        let l = cfg.hyper.l;
        let k = cfg.hyper.k;
        let mut master_rng = stream_rng(seed, replicate, Stream::Master);
        let ucb = UcbState::new(l, cfg.ucb.clone(), &mut master_rng)?;
        let enabled = |id: SamplerId| cfg.enabled.contains(&id);
        if !enabled(SamplerId::Random) {
            return Err(Error::Config(
                "the random sampler must stay enabled; it covers exploration and quota deficits"
                    .into(),
            ));
        }
        let wolp = enabled(SamplerId::Wolpertinger).then(|| {
            let wcfg = WolpertingerConfig {
                l,
                k,
                epoch_len: cfg.hyper.length_epoch,
                cluster_count: cfg.hyper.cluster_count,
                ..WolpertingerConfig::default()
            };
            WolpertingerSampler::new(wcfg, stream_rng(seed, replicate, Stream::Wolpertinger))
        });
        let g2anet = enabled(SamplerId::G2anet).then(|| {
            let (feat, d) = match features {
                Some(f) => (f.rows().to_vec(), f.dim()),
                None => (G2anetSampler::identity_features(l), l),
            };
            let gcfg = G2anetConfig::for_dims(l, k, d);
            G2anetSampler::new(gcfg, feat, stream_rng(seed, replicate, Stream::G2anet))
        });
        let cem = enabled(SamplerId::Cem).then(|| {
            let ccfg = CemConfig::for_dims(l, k, cfg.hyper.rho);
            CemSampler::new(ccfg, stream_rng(seed, replicate, Stream::Cem))
        });
        let random = RandomSampler::new(l, k, stream_rng(seed, replicate, Stream::Random));
        let tlbo = enabled(SamplerId::Tlbo)
            .then(|| TlboSampler::new(stream_rng(seed, replicate, Stream::Tlbo)));
        let shared = SharedBuffers::new(cfg.hyper.length_epoch);
        let demo = DemonstrationStore::new(cfg.hyper.l2_window);
        let stuck_window = 3 * cfg.hyper.f_in;
        Ok(Self {
            constraints,
            ucb,
            round: 0,
            solver_rng: stream_rng(seed, replicate, Stream::Solver),
            wolp,
            g2anet,
            cem,
            random,
            tlbo,
            shared,
            demo,
            monitors: [
                StuckMonitor::new(stuck_window),
                StuckMonitor::new(stuck_window),
                StuckMonitor::new(stuck_window),
            ],
            score_hist: [None; 6],
            records: Vec::new(),
            cfg,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn ucb(&self) -> &UcbState {
        &self.ucb
    }

    /// Rounds reserved for pure random exploration.
    pub fn exploration_horizon(&self) -> usize {
        2 * self.cfg.hyper.l
    }

    /// The optimistic estimate the slaves train against.
    pub fn surrogate(&self, action: &ActionVector) -> Result<f64> {
        Ok(self.ucb.ucb(&action.normalized())?.2)
    }

    fn score_action(&self, action: &ActionVector) -> Result<(f64, f64, f64)> {
        let u = self.surrogate(action)?;
        let c = violation_rate(action, &self.constraints);
        Ok((u, c, composite_score(u, c, self.cfg.hyper.lambda)))
    }

    fn scored(&self, sampler: SamplerId, action: ActionVector) -> Result<ScoredElite> {
        let (u, c, score) = self.score_action(&action)?;
        Ok(ScoredElite {
            elite: EliteSample {
                action,
                sampler_id: sampler,
                surrogate_score: u,
                violation_rate: c,
            },
            score,
        })
    }

    /// Argmax by composite score, lowest pool index on ties.
    pub fn select_best(pool: &[ScoredElite]) -> Result<usize> {
        if pool.is_empty() {
            return Err(Error::Internal("elite pool is empty".into()));
        }
        let mut best = 0;
        for i in 1..pool.len() {
            if pool[i].score > pool[best].score {
                best = i;
            }
        }
        Ok(best)
    }

    /// Current per-sampler quota assignment.
    pub fn quotas(&self) -> Vec<(SamplerId, usize)> {
        let scores: Vec<Option<f64>> = SamplerId::ALL
            .iter()
            .map(|id| {
                if self.cfg.enabled.contains(id) {
                    self.score_hist[id.index()]
                } else {
                    None
                }
            })
            .collect();
        // Disabled samplers are excluded from the softmax entirely.
        let enabled: Vec<SamplerId> = SamplerId::ALL
            .iter()
            .copied()
            .filter(|id| self.cfg.enabled.contains(id))
            .collect();
        let enabled_scores: Vec<Option<f64>> = enabled
            .iter()
            .map(|id| scores[id.index()])
            .collect();
        let quotas = assign_quotas(&enabled_scores, self.cfg.hyper.n_es);
        enabled.into_iter().zip(quotas).collect()
    }

    fn participates(&self, id: SamplerId, t: usize) -> bool {
        let period = self.cfg.participation[id.index()].max(1);
        let start = self.exploration_horizon() + 1;
        t >= start && (t - start) % period == 0
    }

    fn solver_proposals(&mut self, quota: usize) -> Vec<ActionVector> {
        if quota == 0 {
            return Vec::new();
        }
        let l = self.cfg.hyper.l;
        let k = self.cfg.hyper.k;
        let oracle = MeanOracle { ucb: &self.ucb };
        let lin = extract_first_order(&oracle, l);
        let mut out = Vec::with_capacity(quota);
        let lin_sol = solve_ip(
            IpObjective::Linear(&lin),
            &self.constraints,
            k,
            SolveMode::Auto,
            &mut self.solver_rng,
        );
        if let Ok(sol) = &lin_sol {
            out.push(sol.action.clone());
        }
        if quota >= 2 {
            let quad = extract_second_order(&oracle, &lin);
            if let Ok(sol) = solve_ip(
                IpObjective::Quadratic(&quad),
                &self.constraints,
                k,
                SolveMode::Auto,
                &mut self.solver_rng,
            ) {
                out.push(sol.action.clone());
            }
        }
        // Remaining quota: beta perturbations split across the solver elites.
        let seeds: Vec<ActionVector> = out.clone();
        if !seeds.is_empty() {
            let mut idx = 0;
            while out.len() < quota {
                let seed_action = &seeds[idx % seeds.len()];
                if let Ok(mut perturbed) =
                    beta_perturb(seed_action, self.cfg.hyper.epsilon0, 1, &mut self.solver_rng)
                {
                    out.append(&mut perturbed);
                }
                idx += 1;
            }
        }
        out
    }

    fn update_score_hist(&mut self, pool: &[ScoredElite]) {
        for entry in pool {
            let slot = &mut self.score_hist[entry.elite.sampler_id.index()];
            let u = entry.elite.surrogate_score;
            *slot = Some(match *slot {
                None => u,
                Some(prev) => self.cfg.score_decay * prev + (1.0 - self.cfg.score_decay) * u,
            });
        }
    }

    /// Run one full round against the environment.
    pub fn run_round(&mut self, env: &mut dyn Environment) -> Result<RoundRecord> {
        let t = self.round + 1;
        let n_es = self.cfg.hyper.n_es;
        let exploring = t <= self.exploration_horizon();
        let mut pool: Vec<ScoredElite> = Vec::with_capacity(n_es + 2);

        if exploring {
            for action in self.random.propose(n_es)? {
                pool.push(self.scored(SamplerId::Random, action)?);
            }
        } else {
            let quotas = self.quotas();
            let quota_of = |id: SamplerId| {
                quotas
                    .iter()
                    .find(|(q, _)| *q == id)
                    .map(|(_, n)| *n)
                    .unwrap_or(0)
            };
            // Fixed proposal order keeps runs reproducible.
            if self.participates(SamplerId::Solver, t) && self.cfg.enabled.contains(&SamplerId::Solver)
            {
                for action in self.solver_proposals(quota_of(SamplerId::Solver)) {
                    pool.push(self.scored(SamplerId::Solver, action)?);
                }
            }
            if self.participates(SamplerId::Wolpertinger, t) {
                if let Some(wolp) = self.wolp.as_mut() {
                    let actions = wolp.propose(t, quota_of(SamplerId::Wolpertinger))?;
                    for action in actions {
                        let entry = self.scored(SamplerId::Wolpertinger, action)?;
                        // Slaves train on the surrogate, not on spent rounds.
                        self.wolp.as_mut().unwrap().record_experience(
                            &entry.elite.action,
                            entry.elite.surrogate_score,
                            entry.elite.violation_rate,
                        );
                        pool.push(entry);
                    }
                }
            }
            if self.participates(SamplerId::G2anet, t) {
                if let Some(g2) = self.g2anet.as_mut() {
                    let quota = quota_of(SamplerId::G2anet);
                    let mut actions = Vec::with_capacity(quota);
                    for _ in 0..quota {
                        actions.push(g2.propose()?);
                    }
                    for action in actions {
                        let entry = self.scored(SamplerId::G2anet, action)?;
                        self.g2anet.as_mut().unwrap().attach_feedback(
                            &entry.elite.action,
                            entry.score,
                        );
                        pool.push(entry);
                    }
                }
            }
            if self.participates(SamplerId::Cem, t) {
                if let Some(cem) = self.cem.as_mut() {
                    let quota = quota_of(SamplerId::Cem);
                    let mut actions = Vec::with_capacity(quota);
                    for _ in 0..quota {
                        actions.push(cem.cem_sample()?);
                    }
                    let global = self.shared.elite_snapshot();
                    for action in actions {
                        let entry = self.scored(SamplerId::Cem, action)?;
                        self.cem.as_mut().unwrap().push_scored(
                            entry.elite.action.clone(),
                            entry.score,
                            &global,
                        );
                        pool.push(entry);
                    }
                }
            }
            {
                let quota = quota_of(SamplerId::Random);
                let actions = self.random.propose(quota)?;
                for action in actions {
                    pool.push(self.scored(SamplerId::Random, action)?);
                }
            }
            // The teacher-student sampler perturbs the already-scored pool.
            if self.participates(SamplerId::Tlbo, t) && !pool.is_empty() {
                if let Some(tlbo) = self.tlbo.as_mut() {
                    let scored_pool: Vec<(ActionVector, f64)> = pool
                        .iter()
                        .map(|e| (e.elite.action.clone(), e.score))
                        .collect();
                    let actions = tlbo.produce(&scored_pool, quota_of(SamplerId::Tlbo))?;
                    for action in actions {
                        pool.push(self.scored(SamplerId::Tlbo, action)?);
                    }
                }
            }
            // Quota deficits fall to the random sampler: the pool must never
            // run empty.
            while pool.len() < n_es {
                let action = self.random.uniform()?;
                pool.push(self.scored(SamplerId::Random, action)?);
            }
        }

        let best_idx = Self::select_best(&pool)?;
        let chosen = pool[best_idx].clone();
        let reward = env.feedback(t, &chosen.elite.action)?;

        // Estimator update: exactly one per round.
        let x = chosen.elite.action.normalized();
        match self.cfg.ucb.variant {
            UcbVariant::Stationary => self.ucb.update(&x, reward)?,
            UcbVariant::Discounted { .. } => self.ucb.discounted_update(&x, reward)?,
        }

        // Shared buffers and co-training bookkeeping.
        for entry in &pool {
            self.shared
                .push_elite(&entry.elite.action, entry.elite.surrogate_score);
        }
        self.shared.push_recommended(&chosen.elite.action, reward);
        self.demo
            .push(t, pool[best_idx].elite.action.clone(), pool[best_idx].score);
        self.update_score_hist(&pool);
        // The stored best was re-scored this round when the random sampler
        // resubmitted it; refresh before comparing against the round's best.
        if let Some((stored, _)) = self.random.best.best().cloned() {
            if let Some(entry) = pool.iter().find(|e| e.elite.action == stored) {
                self.random.best.refresh_score(entry.score);
            } else if let Ok((_, _, score)) = self.score_action(&stored) {
                self.random.best.refresh_score(score);
            }
        }
        self.random
            .best
            .insert(&pool[best_idx].elite.action, pool[best_idx].score);
        if let Some(wolp) = self.wolp.as_mut() {
            wolp.observe_recommendation(&chosen.elite.action);
            if !exploring {
                wolp.record_experience(&chosen.elite.action, reward, chosen.elite.violation_rate);
                wolp.maybe_roll_epoch(t);
            }
        }

        if !exploring {
            for (mi, id) in [SamplerId::Wolpertinger, SamplerId::G2anet, SamplerId::Cem]
                .iter()
                .enumerate()
            {
                let best_u = pool
                    .iter()
                    .filter(|e| e.elite.sampler_id == *id)
                    .map(|e| e.elite.surrogate_score)
                    .fold(f64::NEG_INFINITY, f64::max);
                if best_u.is_finite() {
                    self.monitors[mi].observe(best_u);
                }
            }
            let past_exploration = t - self.exploration_horizon();
            if past_exploration % self.cfg.hyper.f_in == 0 {
                self.train_slaves();
            }
        }

        let record = RoundRecord {
            t,
            action: chosen.elite.action.clone(),
            reward,
            violation: chosen.elite.violation_rate,
            sampler: chosen.elite.sampler_id,
            score: chosen.score,
        };
        self.records.push(record.clone());
        self.round = t;
        Ok(record)
    }

    fn train_slaves(&mut self) {
        if let Some(wolp) = self.wolp.as_mut() {
            wolp.train(self.cfg.wolp_train_steps);
            if crate::cotraining::trigger_and_apply(
                wolp,
                &mut self.monitors[0],
                &self.demo,
                self.cfg.n_demo,
                self.cfg.demo_lr,
            ) {
                // Demonstration replaced this update's training signal.
            }
        }
        if let Some(g2) = self.g2anet.as_mut() {
            g2.reinforce_update();
            crate::cotraining::trigger_and_apply(
                g2,
                &mut self.monitors[1],
                &self.demo,
                self.cfg.n_demo,
                self.cfg.demo_lr,
            );
        }
        if let Some(cem) = self.cem.as_mut() {
            crate::cotraining::trigger_and_apply(
                cem,
                &mut self.monitors[2],
                &self.demo,
                self.cfg.n_demo,
                self.cfg.demo_lr,
            );
        }
    }
}

impl crate::cotraining::Demonstrable for WolpertingerSampler {
    fn real_output(&self) -> Vec<f64> {
        self.actor_output()
    }

    fn demonstration_step(&mut self, target: &ActionVector, lr: f64) {
        WolpertingerSampler::demonstration_step(self, target, lr);
    }
}

impl crate::cotraining::Demonstrable for G2anetSampler {
    fn real_output(&self) -> Vec<f64> {
        self.current_output()
    }

    fn demonstration_step(&mut self, target: &ActionVector, lr: f64) {
        let _ = G2anetSampler::demonstration_step(self, target, lr);
    }
}

impl crate::cotraining::Demonstrable for CemSampler {
    fn real_output(&self) -> Vec<f64> {
        self.mu().to_vec()
    }

    fn demonstration_step(&mut self, target: &ActionVector, lr: f64) {
        CemSampler::demonstration_step(self, target, lr);
    }
}
