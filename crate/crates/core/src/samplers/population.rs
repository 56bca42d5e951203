//! Slaves 5 and 6: the uniform random sampler with best-in-history retention,
//! and the teacher-student perturbation sampler operating on the round's
//! pooled elites.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{binarize_top_k, ActionVector};

/// Uniform draw over all K-subsets by partial Fisher-Yates.
pub fn random_sample(l: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<ActionVector> {
    if k == 0 || k > l {
        return Err(Error::InvalidInput(format!("need 1 <= K <= L, got K={k}, L={l}")));
    }
    let mut indices: Vec<usize> = (0..l).collect();
    for i in 0..k {
        let j = rng.random_range(i..l);
        indices.swap(i, j);
    }
    ActionVector::from_indices(&indices[..k], l)
}

/// The best-scored sample ever recorded, with its score at insertion time.
#[derive(Debug, Clone, Default)]
pub struct BestInHistory {
    best: Option<(ActionVector, f64)>,
}

impl BestInHistory {
    pub fn insert(&mut self, action: &ActionVector, score: f64) {
        match &self.best {
            Some((_, s)) if *s >= score => {}
            _ => self.best = Some((action.clone(), score)),
        }
    }

    /// Surrogate scores drift across rounds, so the stored score must be
    /// refreshed to the current scale before comparing against a challenger.
    pub fn refresh_score(&mut self, current_score: f64) {
        if let Some((_, s)) = &mut self.best {
            *s = current_score;
        }
    }

    pub fn best(&self) -> Option<&(ActionVector, f64)> {
        self.best.as_ref()
    }
}

/// Slave 5: uniform exploration plus replay of the historically best sample,
/// re-scored by the caller against the current surrogate on submission.
#[derive(Debug, Clone)]
pub struct RandomSampler {
    l: usize,
    k: usize,
    rng: ChaCha8Rng,
    pub best: BestInHistory,
}

impl RandomSampler {
    pub fn new(l: usize, k: usize, rng: ChaCha8Rng) -> Self {
        Self {
            l,
            k,
            rng,
            best: BestInHistory::default(),
        }
    }

    /// The historical best first (when present), uniform draws for the rest.
    pub fn propose(&mut self, quota: usize) -> Result<Vec<ActionVector>> {
        let mut out = Vec::with_capacity(quota);
        if quota == 0 {
            return Ok(out);
        }
        if let Some((action, _)) = self.best.best() {
            out.push(action.clone());
        }
        while out.len() < quota {
            out.push(random_sample(self.l, self.k, &mut self.rng)?);
        }
        Ok(out)
    }

    pub fn uniform(&mut self) -> Result<ActionVector> {
        random_sample(self.l, self.k, &mut self.rng)
    }
}

/// One teacher pull: `B = A + rand * (T - A)`, rebinarized.
pub fn tlbo_teacher_step(
    student: &ActionVector,
    teacher: &ActionVector,
    rng: &mut ChaCha8Rng,
) -> Result<ActionVector> {
    let r: f64 = rng.random();
    let blended: Vec<f64> = student
        .to_reals()
        .iter()
        .zip(teacher.to_reals())
        .map(|(a, t)| a + r * (t - a))
        .collect();
    binarize_top_k(&blended, student.k())
}

/// One peer interaction: move toward the better of the two samples, away from
/// the worse.
pub fn tlbo_student_step(
    a: &ActionVector,
    b: &ActionVector,
    score_a: f64,
    score_b: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ActionVector> {
    let r: f64 = rng.random();
    let av = a.to_reals();
    let bv = b.to_reals();
    let blended: Vec<f64> = if score_a < score_b {
        av.iter().zip(&bv).map(|(x, y)| x + r * (y - x)).collect()
    } else {
        av.iter().zip(&bv).map(|(x, y)| x + r * (x - y)).collect()
    };
    binarize_top_k(&blended, a.k())
}

/// Slave 6: perturbs the round's pooled elites. Cannot run standalone; it has
/// no source of samples without the other slaves.
#[derive(Debug, Clone)]
pub struct TlboSampler {
    rng: ChaCha8Rng,
}

impl TlboSampler {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// `quota` new samples from the scored pool: teacher pulls for the first
    /// half (rounded up), peer interactions for the rest.
    pub fn produce(
        &mut self,
        scored_pool: &[(ActionVector, f64)],
        quota: usize,
    ) -> Result<Vec<ActionVector>> {
        if scored_pool.is_empty() {
            return Err(Error::Internal(
                "teacher-student sampler invoked with an empty pool".into(),
            ));
        }
        let teacher = scored_pool
            .iter()
            .enumerate()
            .max_by(|(ai, a), (bi, b)| {
                a.1.partial_cmp(&b.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(bi.cmp(ai))
            })
            .map(|(_, s)| s)
            .expect("pool nonempty");
        let teacher_steps = quota.div_ceil(2);
        let mut out = Vec::with_capacity(quota);
        for _ in 0..teacher_steps {
            let pick = &scored_pool[self.rng.random_range(0..scored_pool.len())];
            out.push(tlbo_teacher_step(&pick.0, &teacher.0, &mut self.rng)?);
        }
        while out.len() < quota {
            let a = &scored_pool[self.rng.random_range(0..scored_pool.len())];
            let b = &scored_pool[self.rng.random_range(0..scored_pool.len())];
            out.push(tlbo_student_step(&a.0, &b.0, a.1, b.1, &mut self.rng)?);
        }
        Ok(out)
    }
}
