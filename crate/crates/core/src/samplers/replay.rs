//! Prioritized experience replay with action clustering and
//! reward-constraint outlier hierarchies. Batches are drawn with replacement
//! from three tiers: a third allocated across k-means clusters of the stored
//! actions, a sixth from entries whose feedback or violation rate sits more
//! than two standard deviations from the buffer mean, and the remainder
//! uniformly.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::types::ActionVector;

#[derive(Debug, Clone)]
pub struct ReplayEntry {
    pub state: Vec<f64>,
    pub action: ActionVector,
    pub composite: f64,
    pub violation: f64,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub entries: Vec<ReplayEntry>,
    /// (clustered, extreme, uniform) counts actually drawn.
    pub tier_counts: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<ReplayEntry>,
    capacity: usize,
    clusters: Vec<Vec<usize>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity: capacity.max(1),
            clusters: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
            // Stored cluster indices are stale after eviction.
            self.clusters.clear();
        }
        self.entries.push_back(entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }

    /// K-means on the action bit vectors, Euclidean metric, fixed iteration
    /// budget, seeded centroid choice.
    pub fn recluster(&mut self, cluster_count: usize, iters: usize, rng: &mut ChaCha8Rng) {
        let n = self.entries.len();
        self.clusters.clear();
        if n == 0 {
            return;
        }
        let k = cluster_count.clamp(1, n);
        let points: Vec<Vec<f64>> = self.entries.iter().map(|e| e.action.to_reals()).collect();
        let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut used = vec![false; n];
        while centroids.len() < k {
            let idx = rng.random_range(0..n);
            if !used[idx] {
                used[idx] = true;
                centroids.push(points[idx].clone());
            }
        }
        let mut assignment = vec![0usize; n];
        for _ in 0..iters {
            for (pi, p) in points.iter().enumerate() {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (ci, c) in centroids.iter().enumerate() {
                    let d: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = ci;
                    }
                }
                assignment[pi] = best;
            }
            for (ci, c) in centroids.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == ci).collect();
                if members.is_empty() {
                    continue;
                }
                for slot in c.iter_mut() {
                    *slot = 0.0;
                }
                for &mi in &members {
                    for (slot, v) in c.iter_mut().zip(&points[mi]) {
                        *slot += v;
                    }
                }
                for slot in c.iter_mut() {
                    *slot /= members.len() as f64;
                }
            }
        }
        let mut clusters = vec![Vec::new(); k];
        for (pi, &ci) in assignment.iter().enumerate() {
            clusters[ci].push(pi);
        }
        clusters.retain(|c| !c.is_empty());
        self.clusters = clusters;
    }

    /// Indices of entries whose composite feedback or violation rate falls
    /// outside two standard deviations of the respective buffer mean.
    fn outlier_indices(&self) -> Vec<usize> {
        let n = self.entries.len();
        if n == 0 {
            return Vec::new();
        }
        let stats = |vals: &[f64]| -> (f64, f64) {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            (mean, var.sqrt())
        };
        let feedback: Vec<f64> = self.entries.iter().map(|e| e.composite).collect();
        let violation: Vec<f64> = self.entries.iter().map(|e| e.violation).collect();
        let (fm, fs) = stats(&feedback);
        let (vm, vs) = stats(&violation);
        (0..n)
            .filter(|&i| {
                (fs > 0.0 && (feedback[i] - fm).abs() > 2.0 * fs)
                    || (vs > 0.0 && (violation[i] - vm).abs() > 2.0 * vs)
            })
            .collect()
    }

    /// Draw `batch_size` entries with replacement: `batch/3` allocated across
    /// clusters proportionally to cluster size, `batch/6` from the outlier
    /// pool, remainder uniform. Tiers that cannot be served fall through to
    /// the uniform tier.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> SampledBatch {
        let n = self.entries.len();
        if n == 0 || batch_size == 0 {
            return SampledBatch {
                entries: Vec::new(),
                tier_counts: (0, 0, 0),
            };
        }
        let cluster_target = if self.clusters.is_empty() { 0 } else { batch_size / 3 };
        let outliers = self.outlier_indices();
        let extreme_target = if outliers.is_empty() { 0 } else { batch_size / 6 };
        let mut entries = Vec::with_capacity(batch_size);

        // Clustered tier: largest-remainder allocation over cluster sizes.
        let mut clustered_drawn = 0usize;
        if cluster_target > 0 {
            let total: usize = self.clusters.iter().map(|c| c.len()).sum();
            let mut counts: Vec<usize> = Vec::with_capacity(self.clusters.len());
            let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(self.clusters.len());
            let mut assigned = 0usize;
            for (ci, c) in self.clusters.iter().enumerate() {
                let share = cluster_target as f64 * c.len() as f64 / total as f64;
                let base = share.floor() as usize;
                counts.push(base);
                assigned += base;
                remainders.push((share - base as f64, ci));
            }
            remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, ci) in remainders.iter().take(cluster_target - assigned) {
                counts[ci] += 1;
            }
            for (ci, &count) in counts.iter().enumerate() {
                let members = &self.clusters[ci];
                for _ in 0..count {
                    let idx = members[rng.random_range(0..members.len())];
                    entries.push(self.entries[idx].clone());
                    clustered_drawn += 1;
                }
            }
        }

        let mut extreme_drawn = 0usize;
        for _ in 0..extreme_target {
            let idx = outliers[rng.random_range(0..outliers.len())];
            entries.push(self.entries[idx].clone());
            extreme_drawn += 1;
        }

        let uniform_target = batch_size - clustered_drawn - extreme_drawn;
        for _ in 0..uniform_target {
            let idx = rng.random_range(0..n);
            entries.push(self.entries[idx].clone());
        }

        SampledBatch {
            entries,
            tier_counts: (clustered_drawn, extreme_drawn, uniform_target),
        }
    }
}
