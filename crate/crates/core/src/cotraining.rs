//! Policy co-training: the global-best demonstration store, the
//! cross-entropy demonstration loss applied to stuck samplers, and the two
//! buffers shared across slaves (historical elites, recently recommended
//! actions).

use std::collections::VecDeque;

use crate::nn::bce_loss_grad;
use crate::types::ActionVector;

/// Mean binary cross-entropy between a sampler's real-valued output and a
/// demonstration action; the output is clipped into the open unit interval.
pub fn demonstration_loss(rv: &[f64], a_star: &ActionVector) -> f64 {
    bce_loss_grad(rv, a_star.bits()).0
}

/// Best composite-scored elite over a trailing window of rounds.
#[derive(Debug, Clone)]
pub struct DemonstrationStore {
    window: VecDeque<(usize, ActionVector, f64)>,
    l2: usize,
}

impl DemonstrationStore {
    pub fn new(l2: usize) -> Self {
        Self {
            window: VecDeque::new(),
            l2: l2.max(1),
        }
    }

    /// Record the round's best elite and drop entries older than the window.
    pub fn push(&mut self, round: usize, action: ActionVector, score: f64) {
        self.window.push_back((round, action, score));
        let cutoff = round.saturating_sub(self.l2 - 1);
        while let Some((r, _, _)) = self.window.front() {
            if *r < cutoff {
                self.window.pop_front();
            } else {
                break;
            }
        }
    }

    /// The demonstration target: highest score in the window, earliest round
    /// on ties.
    pub fn best(&self) -> Option<(&ActionVector, f64)> {
        self.window
            .iter()
            .max_by(|a, b| {
                a.2.partial_cmp(&b.2)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            })
            .map(|(_, a, s)| (a, *s))
    }

    /// Rounds elapsed since the current best entered the store.
    pub fn staleness(&self, current_round: usize) -> usize {
        self.window
            .iter()
            .max_by(|a, b| {
                a.2.partial_cmp(&b.2)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            })
            .map(|(r, _, _)| current_round.saturating_sub(*r))
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

/// The two cross-sampler buffers.
#[derive(Debug, Clone)]
pub struct SharedBuffers {
    elite: Vec<(ActionVector, f64)>,
    recommended: VecDeque<(ActionVector, f64)>,
    capacity: usize,
}

impl SharedBuffers {
    pub fn new(capacity: usize) -> Self {
        Self {
            elite: Vec::new(),
            recommended: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    /// Keep the top-by-score distinct elites, bounded by the capacity.
    pub fn push_elite(&mut self, action: &ActionVector, score: f64) {
        match self.elite.iter_mut().find(|(a, _)| a == action) {
            Some(slot) => slot.1 = slot.1.max(score),
            None => self.elite.push((action.clone(), score)),
        }
        self.elite
            .sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        self.elite.truncate(self.capacity);
    }

    /// FIFO of the actions actually recommended, with their feedback.
    pub fn push_recommended(&mut self, action: &ActionVector, feedback: f64) {
        if self.recommended.len() == self.capacity {
            self.recommended.pop_front();
        }
        self.recommended.push_back((action.clone(), feedback));
    }

    pub fn elite_snapshot(&self) -> Vec<(ActionVector, f64)> {
        self.elite.clone()
    }

    pub fn recommended_snapshot(&self) -> Vec<(ActionVector, f64)> {
        self.recommended.iter().cloned().collect()
    }

    pub fn elite_len(&self) -> usize {
        self.elite.len()
    }

    pub fn recommended_len(&self) -> usize {
        self.recommended.len()
    }
}

/// Flags a sampler as stuck when its best submitted surrogate score has not
/// improved for a full window of rounds.
#[derive(Debug, Clone)]
pub struct StuckMonitor {
    best: f64,
    rounds_since_improvement: usize,
    window: usize,
}

impl StuckMonitor {
    pub fn new(window: usize) -> Self {
        Self {
            best: f64::NEG_INFINITY,
            rounds_since_improvement: 0,
            window: window.max(1),
        }
    }

    pub fn observe(&mut self, round_best_score: f64) {
        if round_best_score > self.best {
            self.best = round_best_score;
            self.rounds_since_improvement = 0;
        } else {
            self.rounds_since_improvement += 1;
        }
    }

    pub fn is_stuck(&self) -> bool {
        self.rounds_since_improvement >= self.window
    }

    pub fn reset(&mut self) {
        self.rounds_since_improvement = 0;
    }
}

/// A sampler with a trainable real-valued output head that can absorb a
/// demonstration.
pub trait Demonstrable {
    fn real_output(&self) -> Vec<f64>;
    fn demonstration_step(&mut self, target: &ActionVector, lr: f64);
}

/// Run the demonstration phase if the sampler is stuck and a target exists.
/// Returns whether steps were applied.
pub fn trigger_and_apply(
    sampler: &mut dyn Demonstrable,
    monitor: &mut StuckMonitor,
    store: &DemonstrationStore,
    n_d: usize,
    lr: f64,
) -> bool {
    if !monitor.is_stuck() {
        return false;
    }
    let Some((a_star, _)) = store.best() else {
        return false;
    };
    let target = a_star.clone();
    for _ in 0..n_d {
        sampler.demonstration_step(&target, lr);
    }
    monitor.reset();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::seeding::derived_rng;
    use crate::types::binarize_top_k;

    fn act(indices: &[usize], l: usize) -> ActionVector {
        ActionVector::from_indices(indices, l).unwrap()
    }

    #[test]
    fn loss_on_uniform_half_is_ln2() {
        let a = act(&[0, 2], 4);
        let loss = demonstration_loss(&[0.5; 4], &a);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_on_exact_match_is_tiny() {
        let a = act(&[1], 3);
        let rv = vec![0.0, 1.0, 0.0];
        let loss = demonstration_loss(&rv, &a);
        assert!(loss < 2e-6, "loss {loss}");
    }

    #[test]
    fn loss_direct_arithmetic() {
        let a = act(&[0], 2);
        let loss = demonstration_loss(&[0.9, 0.2], &a);
        let expect = (-(0.9f64.ln()) - (0.8f64.ln())) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.1643).abs() < 1e-4);
    }

    #[test]
    fn store_tracks_window_maximum() {
        let mut store = DemonstrationStore::new(3);
        store.push(1, act(&[0], 3), 0.5);
        store.push(2, act(&[1], 3), 0.9);
        store.push(3, act(&[2], 3), 0.2);
        assert_eq!(store.best().unwrap().1, 0.9);
        // The window of 3 keeps rounds 3..=5 after round 5 is pushed.
        store.push(4, act(&[0], 3), 0.1);
        store.push(5, act(&[1], 3), 0.3);
        assert_eq!(store.best().unwrap().1, 0.3);
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn store_staleness_counts_rounds() {
        let mut store = DemonstrationStore::new(10);
        store.push(1, act(&[0], 2), 1.0);
        store.push(2, act(&[1], 2), 0.5);
        assert_eq!(store.staleness(4), 3);
    }

    #[test]
    fn recommended_buffer_is_fifo_bounded() {
        let mut buf = SharedBuffers::new(3);
        for i in 0..4 {
            buf.push_recommended(&act(&[i], 5), i as f64);
        }
        let snap = buf.recommended_snapshot();
        assert_eq!(snap.len(), 3);
        assert_eq!(snap[0].1, 1.0); // the oldest push was evicted
    }

    #[test]
    fn elite_buffer_retains_maximum_under_any_order() {
        let mut buf = SharedBuffers::new(2);
        buf.push_elite(&act(&[0], 4), 0.3);
        buf.push_elite(&act(&[1], 4), 0.9);
        buf.push_elite(&act(&[2], 4), 0.1);
        buf.push_elite(&act(&[3], 4), 0.5);
        let snap = buf.elite_snapshot();
        assert_eq!(snap.len(), 2);
        assert_eq!(snap[0].1, 0.9);
        assert_eq!(snap[1].1, 0.5);
    }

    #[test]
    fn snapshot_is_immutable_copy() {
        let mut buf = SharedBuffers::new(4);
        buf.push_elite(&act(&[0], 4), 1.0);
        let snap = buf.elite_snapshot();
        buf.push_elite(&act(&[1], 4), 2.0);
        assert_eq!(snap.len(), 1);
        assert_eq!(snap[0].1, 1.0);
    }

    #[test]
    fn monitor_triggers_after_exact_window() {
        let mut m = StuckMonitor::new(3);
        m.observe(1.0);
        assert!(!m.is_stuck());
        m.observe(0.9);
        m.observe(0.9);
        assert!(!m.is_stuck());
        m.observe(1.0); // not an improvement over 1.0
        assert!(m.is_stuck());
    }

    #[test]
    fn improving_scores_never_trigger() {
        let mut m = StuckMonitor::new(2);
        for i in 0..10 {
            m.observe(i as f64);
            assert!(!m.is_stuck());
        }
    }

    /// Two-layer stub with a sigmoid head for the overfit-to-target check.
    struct StubSampler {
        net: Mlp,
        input: Vec<f64>,
    }

    impl Demonstrable for StubSampler {
        fn real_output(&self) -> Vec<f64> {
            self.net.forward(&self.input)
        }

        fn demonstration_step(&mut self, target: &ActionVector, lr: f64) {
            let trace = self.net.forward_trace(&self.input);
            let (_, grad) = bce_loss_grad(trace.output(), target.bits());
            let (grads, _) = self.net.backward(&trace, &grad);
            self.net.apply_gradients(&grads, lr);
        }
    }

    #[test]
    fn stub_overfits_to_demonstration_target() {
        let mut rng = derived_rng(10, 95);
        let mut stub = StubSampler {
            net: Mlp::new(&[4, 16, 10], Activation::Tanh, Activation::Sigmoid, &mut rng),
            input: vec![0.25; 4],
        };
        let mut store = DemonstrationStore::new(5);
        let target = act(&[1, 5, 8], 10);
        store.push(1, target.clone(), 2.0);
        let mut monitor = StuckMonitor::new(1);
        monitor.observe(0.1);
        monitor.observe(0.1); // stuck now
        let applied = trigger_and_apply(&mut stub, &mut monitor, &store, 200, 1.0);
        assert!(applied);
        let out = stub.real_output();
        assert_eq!(binarize_top_k(&out, 3).unwrap(), target);
        assert!(!monitor.is_stuck());
    }

    #[test]
    fn no_target_means_no_application() {
        let mut rng = derived_rng(11, 95);
        let mut stub = StubSampler {
            net: Mlp::new(&[2, 4, 3], Activation::Tanh, Activation::Sigmoid, &mut rng),
            input: vec![0.5; 2],
        };
        let store = DemonstrationStore::new(5);
        let mut monitor = StuckMonitor::new(1);
        monitor.observe(0.0);
        monitor.observe(0.0);
        assert!(monitor.is_stuck());
        assert!(!trigger_and_apply(&mut stub, &mut monitor, &store, 10, 0.1));
    }
}
