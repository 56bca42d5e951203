//! Gumbel top-K subset sampling over positive weights, with an unordered
//! sampling-probability estimator and its gradient.
//!
//! Drawing K items by perturbing log-weights with Gumbel noise and keeping the
//! top K is equivalent to successive sampling without replacement, so the
//! probability of drawing an ordered sequence (j_1, .., j_K) is
//! `prod_k w_{j_k} / (W - w_{j_1} - .. - w_{j_{k-1}})` with `W = sum w`.
//! The probability of the unordered subset is the sum of that expression over
//! all K! orderings; when K! is too large the sum is estimated from random
//! orderings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Standard Gumbel(0, 1) draw.
pub fn gumbel_noise(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    -(-u.ln()).ln()
}

/// Perturb log-weights and return the K top indices, best first, together
/// with the perturbed scores.
pub fn gumbel_top_k_draw(
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || k > weights.len() {
        return Err(Error::InvalidInput(format!(
            "gumbel draw: need 1 <= K <= L, got K={k}, L={}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w <= 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput(
            "gumbel draw: weights must be positive and finite".into(),
        ));
    }
    let perturbed: Vec<f64> = weights.iter().map(|w| w.ln() + gumbel_noise(rng)).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        perturbed[b]
            .partial_cmp(&perturbed[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok((order, perturbed))
}

/// Probability of drawing the exact ordered sequence `seq` without replacement.
pub fn ordered_draw_prob(weights: &[f64], seq: &[usize]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut remaining = total;
    let mut p = 1.0;
    for &j in seq {
        p *= weights[j] / remaining;
        remaining -= weights[j];
    }
    p
}

/// The orderings used by one probability estimate, kept so gradients can be
/// taken with the randomness frozen.
#[derive(Debug, Clone)]
pub struct FrozenOrderings {
    pub perms: Vec<Vec<usize>>,
    /// Scale applied to the mean of per-ordering probabilities so the result
    /// estimates the sum over all K! orderings.
    pub scale: f64,
}

fn factorial_f64(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Heap's algorithm, iterative, emitting every permutation of `items`.
fn all_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    let mut a = items.to_vec();
    let n = a.len();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Choose the orderings for an estimate with budget `m_perms`: exhaustive when
/// K! fits the budget, otherwise `m_perms` uniformly random orderings.
pub fn choose_orderings(subset: &[usize], m_perms: usize, rng: &mut ChaCha8Rng) -> FrozenOrderings {
    let k = subset.len();
    let kfact = factorial_f64(k);
    if kfact <= m_perms as f64 {
        FrozenOrderings {
            perms: all_permutations(subset),
            scale: 1.0,
        }
    } else {
        let mut perms = Vec::with_capacity(m_perms);
        for _ in 0..m_perms {
            let mut p = subset.to_vec();
            // Fisher-Yates.
            for i in (1..p.len()).rev() {
                let j = rng.random_range(0..=i);
                p.swap(i, j);
            }
            perms.push(p);
        }
        FrozenOrderings {
            perms,
            scale: kfact / m_perms as f64,
        }
    }
}

/// Unordered subset probability from frozen orderings.
pub fn unordered_prob(weights: &[f64], frozen: &FrozenOrderings) -> f64 {
    let sum: f64 = frozen
        .perms
        .iter()
        .map(|p| ordered_draw_prob(weights, p))
        .sum();
    frozen.scale * sum
}

/// Gradient of `ln(unordered_prob)` with respect to every weight, with the
/// orderings frozen.
pub fn unordered_logprob_grad(weights: &[f64], frozen: &FrozenOrderings) -> Vec<f64> {
    let l = weights.len();
    let total: f64 = weights.iter().sum();
    let mut numer = vec![0.0; l];
    let mut denom = 0.0;
    let mut in_prefix = vec![false; l];
    for perm in &frozen.perms {
        let p = ordered_draw_prob(weights, perm);
        denom += p;
        // d ln(P_perm) / d w_i = [i in subset]/w_i - sum_k (1 - [i before step k]) / rem_k
        in_prefix.iter_mut().for_each(|b| *b = false);
        let mut remaining = total;
        let mut rem_terms = Vec::with_capacity(perm.len());
        for &j in perm {
            rem_terms.push((remaining, in_prefix.clone()));
            in_prefix[j] = true;
            remaining -= weights[j];
        }
        for i in 0..l {
            let mut g = 0.0;
            if perm.contains(&i) {
                g += 1.0 / weights[i];
            }
            for (rem, prefix) in &rem_terms {
                if !prefix[i] {
                    g -= 1.0 / rem;
                }
            }
            numer[i] += p * g;
        }
    }
    numer.iter().map(|n| n / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derived_rng;
    use std::collections::HashMap;

    /// Exact subset probability by brute-force enumeration of ordered draws.
    fn brute_force_subset_prob(weights: &[f64], subset: &[usize]) -> f64 {
        all_permutations(subset)
            .iter()
            .map(|p| ordered_draw_prob(weights, p))
            .sum()
    }

    #[test]
    fn full_subset_has_probability_one() {
        let weights = vec![0.3, 0.9, 0.45];
        let subset = [0usize, 1, 2];
        let p = brute_force_subset_prob(&weights, &subset);
        assert!((p - 1.0).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn exhaustive_orderings_match_brute_force() {
        let mut rng = derived_rng(11, 5);
        let weights = vec![0.2, 0.5, 0.9, 0.15];
        let subset = [1usize, 3];
        let frozen = choose_orderings(&subset, 2, &mut rng);
        assert_eq!(frozen.perms.len(), 2);
        let est = unordered_prob(&weights, &frozen);
        let exact = brute_force_subset_prob(&weights, &subset);
        assert!((est - exact).abs() < 1e-15);
    }

    #[test]
    fn subset_probabilities_sum_to_one() {
        // All C(L, K) subsets of a 5-element weight vector, K = 2.
        let weights = vec![0.7, 0.1, 0.4, 0.9, 0.33];
        let mut total = 0.0;
        for i in 0..5 {
            for j in (i + 1)..5 {
                total += brute_force_subset_prob(&weights, &[i, j]);
            }
        }
        assert!((total - 1.0).abs() < 1e-12, "got {total}");
    }

    #[test]
    fn draw_frequencies_match_probabilities() {
        let mut rng = derived_rng(12, 6);
        let weights = vec![0.6, 0.2, 0.9, 0.35];
        let k = 2;
        let n = 200_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..n {
            let (mut draw, _) = gumbel_top_k_draw(&weights, k, &mut rng).unwrap();
            draw.sort_unstable();
            *counts.entry(draw).or_default() += 1;
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let expected = brute_force_subset_prob(&weights, &[i, j]);
                let observed = *counts.get(&vec![i, j]).unwrap_or(&0) as f64 / n as f64;
                let se = (expected * (1.0 - expected) / n as f64).sqrt();
                assert!(
                    (observed - expected).abs() < 5.0 * se + 1e-4,
                    "subset ({i},{j}): observed {observed}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn logprob_grad_matches_finite_differences() {
        let mut rng = derived_rng(13, 7);
        let weights = vec![0.25, 0.6, 0.1, 0.8, 0.4];
        let subset = [0usize, 3, 4];
        let frozen = choose_orderings(&subset, 4, &mut rng);
        let grad = unordered_logprob_grad(&weights, &frozen);
        let h = 1e-7;
        for i in 0..weights.len() {
            let mut wp = weights.clone();
            wp[i] += h;
            let fp = unordered_prob(&wp, &frozen).ln();
            wp[i] = weights[i] - h;
            let fm = unordered_prob(&wp, &frozen).ln();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1.0) < 1e-4,
                "weight {i}: fd={fd} analytic={}",
                grad[i]
            );
        }
    }

    #[test]
    fn sampled_orderings_scale_is_unbiased_shape() {
        let mut rng = derived_rng(14, 8);
        // K = 4 with budget 3 forces sampling: scale = 4!/3 = 8.
        let subset = [0usize, 1, 2, 3];
        let frozen = choose_orderings(&subset, 3, &mut rng);
        assert_eq!(frozen.perms.len(), 3);
        assert!((frozen.scale - 8.0).abs() < 1e-12);
    }
}
