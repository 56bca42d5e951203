//! Slave 3: relation-inference sampler. Arms are nodes of a fully connected
//! graph; a pairwise hard-attention gate (gumbel-softmax, straight-through)
//! prunes irrelevant edges, soft attention weighs the surviving ones, and a
//! per-arm head emits scores in (0, 1). Actions are drawn by gumbel top-K
//! sampling over the scores, and score-function gradients of the estimated
//! unordered sampling probability train the network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gumbel::{
    choose_orderings, gumbel_noise, gumbel_top_k_draw, unordered_logprob_grad, unordered_prob,
    FrozenOrderings,
};
use crate::types::ActionVector;

const SCORE_CLIP: f64 = 1e-4;

/// How pairwise hard gates are produced during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    /// Gumbel-softmax at the given temperature, straight-through in backward.
    Stochastic(f64),
    /// Noise-free argmax of the two gate logits.
    Deterministic,
    ForceOn,
    ForceOff,
}

#[derive(Debug, Clone)]
pub struct G2anetConfig {
    pub l: usize,
    pub k: usize,
    /// Node feature dimension; synthetic runs without context use one-hot
    /// identity features with d = L.
    pub d: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub scorer_hidden: usize,
    pub temperature: f64,
    pub temperature_anneal: f64,
    pub temperature_floor: f64,
    pub m_perms: usize,
    pub lr: f64,
}

impl G2anetConfig {
    pub fn for_dims(l: usize, k: usize, d: usize) -> Self {
        Self {
            l,
            k,
            d,
            embed_dim: 16,
            attention_dim: 8,
            scorer_hidden: 16,
            temperature: 1.0,
            temperature_anneal: 0.995,
            temperature_floor: 0.1,
            m_perms: factorial_capped(k, 10),
            lr: 1e-2,
        }
    }
}

fn factorial_capped(k: usize, cap: usize) -> usize {
    let mut f = 1usize;
    for i in 1..=k {
        f = f.saturating_mul(i);
        if f >= cap {
            return cap;
        }
    }
    f.min(cap)
}

/// All trainable matrices, stored flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    enc_w: Vec<f64>, // embed x d
    enc_b: Vec<f64>,
    sc1_w: Vec<f64>, // hidden x 2*embed
    sc1_b: Vec<f64>,
    sc2_w: Vec<f64>, // 2 x hidden
    sc2_b: Vec<f64>,
    wq: Vec<f64>, // att x embed
    wk: Vec<f64>, // att x embed
    head_w: Vec<f64>, // 2*embed
    head_b: f64,
}

impl AttentionParams {
    fn init(cfg: &G2anetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut mk = |rows: usize, cols: usize| -> Vec<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let e = cfg.embed_dim;
        let enc_w = mk(e, cfg.d);
        let sc1_w = mk(cfg.scorer_hidden, 2 * e);
        let sc2_w = mk(2, cfg.scorer_hidden);
        let wq = mk(cfg.attention_dim, e);
        let wk = mk(cfg.attention_dim, e);
        let head_w = mk(1, 2 * e);
        Self {
            enc_w,
            enc_b: vec![0.0; e],
            sc1_w,
            sc1_b: vec![0.0; cfg.scorer_hidden],
            sc2_w,
            sc2_b: vec![0.0; 2],
            wq,
            wk,
            head_w,
            head_b: 0.0,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.enc_w);
        v.extend_from_slice(&self.enc_b);
        v.extend_from_slice(&self.sc1_w);
        v.extend_from_slice(&self.sc1_b);
        v.extend_from_slice(&self.sc2_w);
        v.extend_from_slice(&self.sc2_b);
        v.extend_from_slice(&self.wq);
        v.extend_from_slice(&self.wk);
        v.extend_from_slice(&self.head_w);
        v.push(self.head_b);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for slot in self
            .enc_w
            .iter_mut()
            .chain(self.enc_b.iter_mut())
            .chain(self.sc1_w.iter_mut())
            .chain(self.sc1_b.iter_mut())
            .chain(self.sc2_w.iter_mut())
            .chain(self.sc2_b.iter_mut())
            .chain(self.wq.iter_mut())
            .chain(self.wk.iter_mut())
            .chain(self.head_w.iter_mut())
        {
            *slot = it.next().expect("flat vector too short");
        }
        self.head_b = it.next().expect("flat vector too short");
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    features: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>, // L x embed
    q: Vec<Vec<f64>>, // L x att
    k_: Vec<Vec<f64>>,
    /// Per ordered pair (i, j), i != j, flattened i*L + j: scorer hidden
    /// activations, soft gate value, effective gate value.
    pair_hidden: Vec<Vec<f64>>,
    soft_gate: Vec<f64>,
    gate: Vec<f64>,
    wsoft: Vec<f64>, // L x L normalized attention
    x: Vec<Vec<f64>>, // L x embed aggregated
    pub out: Vec<f64>,
}

/// One sampled action with the frozen randomness of its probability estimate.
#[derive(Debug, Clone)]
pub struct SubsetDraw {
    pub action: ActionVector,
    pub logprob: f64,
    pub perturbed: Vec<f64>,
    pub orderings: FrozenOrderings,
}

#[derive(Debug, Clone)]
pub struct G2anetSampler {
    pub cfg: G2anetConfig,
    params: AttentionParams,
    temperature: f64,
    rng: ChaCha8Rng,
    /// Node features; identity rows when the run has no item context.
    features: Vec<Vec<f64>>,
    /// Draws awaiting feedback for the next score-function update.
    pending: Vec<(ForwardRecord, SubsetDraw, Option<f64>)>,
}

impl G2anetSampler {
    pub fn new(cfg: G2anetConfig, features: Vec<Vec<f64>>, mut rng: ChaCha8Rng) -> Self {
        assert_eq!(features.len(), cfg.l, "feature rows must match arm count");
        let params = AttentionParams::init(&cfg, &mut rng);
        let temperature = cfg.temperature;
        Self {
            cfg,
            params,
            temperature,
            rng,
            features,
            pending: Vec::new(),
        }
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut AttentionParams {
        &mut self.params
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        i * self.cfg.l + j
    }

    /// Two-stage attention forward pass over the item features.
    pub fn forward_attention(
        &self,
        features: &[Vec<f64>],
        mode: GateMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardRecord> {
        let l = self.cfg.l;
        let e = self.cfg.embed_dim;
        let att = self.cfg.attention_dim;
        let sh = self.cfg.scorer_hidden;
        if features.len() != l || features.iter().any(|f| f.len() != self.cfg.d) {
            return Err(Error::InvalidInput(format!(
                "features must be {l} x {}",
                self.cfg.d
            )));
        }
        let p = &self.params;
        // Node embeddings.
        let mut h = vec![vec![0.0; e]; l];
        for (i, f) in features.iter().enumerate() {
            for r in 0..e {
                let mut z = p.enc_b[r];
                for c in 0..self.cfg.d {
                    z += p.enc_w[r * self.cfg.d + c] * f[c];
                }
                h[i][r] = z.tanh();
            }
        }
        // Query/key projections.
        let project = |w: &[f64], hi: &[f64]| -> Vec<f64> {
            (0..att)
                .map(|r| (0..e).map(|c| w[r * e + c] * hi[c]).sum())
                .collect()
        };
        let q: Vec<Vec<f64>> = h.iter().map(|hi| project(&p.wq, hi)).collect();
        let k_: Vec<Vec<f64>> = h.iter().map(|hi| project(&p.wk, hi)).collect();

        // Pairwise hard gates from the two-layer scorer on concatenated
        // embeddings.
        let mut pair_hidden = vec![Vec::new(); l * l];
        let mut soft_gate = vec![0.0; l * l];
        let mut gate = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..l {
                if i == j {
                    continue;
                }
                let mut hidden = vec![0.0; sh];
                for r in 0..sh {
                    let mut z = p.sc1_b[r];
                    for c in 0..e {
                        z += p.sc1_w[r * 2 * e + c] * h[i][c];
                        z += p.sc1_w[r * 2 * e + e + c] * h[j][c];
                    }
                    hidden[r] = z.tanh();
                }
                let mut logits = [p.sc2_b[0], p.sc2_b[1]];
                for c in 0..sh {
                    logits[0] += p.sc2_w[c] * hidden[c];
                    logits[1] += p.sc2_w[sh + c] * hidden[c];
                }
                let idx = self.pair_index(i, j);
                let (soft, hard) = match mode {
                    GateMode::Stochastic(temp) => {
                        let g0 = gumbel_noise(rng);
                        let g1 = gumbel_noise(rng);
                        let z0 = (logits[0] + g0) / temp;
                        let z1 = (logits[1] + g1) / temp;
                        let mx = z0.max(z1);
                        let e0 = (z0 - mx).exp();
                        let e1 = (z1 - mx).exp();
                        let soft = e1 / (e0 + e1);
                        (soft, if soft > 0.5 { 1.0 } else { 0.0 })
                    }
                    GateMode::Deterministic => {
                        let soft = 1.0 / (1.0 + (logits[0] - logits[1]).exp());
                        (soft, if soft > 0.5 { 1.0 } else { 0.0 })
                    }
                    GateMode::ForceOn => (1.0, 1.0),
                    GateMode::ForceOff => (0.0, 0.0),
                };
                pair_hidden[idx] = hidden;
                soft_gate[idx] = soft;
                gate[idx] = hard;
            }
        }

        // Soft attention over gated edges: zero-gated edges contribute the
        // uniform exp(0) weight.
        let mut wsoft = vec![0.0; l * l];
        let mut x = vec![vec![0.0; e]; l];
        for i in 0..l {
            let mut exps = Vec::with_capacity(l - 1);
            let mut denom = 0.0;
            for j in 0..l {
                if i == j {
                    continue;
                }
                let idx = self.pair_index(i, j);
                let score: f64 =
                    q[i].iter().zip(&k_[j]).map(|(a, b)| a * b).sum::<f64>() * gate[idx];
                let ev = score.exp();
                exps.push((j, ev));
                denom += ev;
            }
            for (j, ev) in exps {
                let w = ev / denom;
                wsoft[self.pair_index(i, j)] = w;
                for c in 0..e {
                    x[i][c] += w * h[j][c];
                }
            }
        }

        // Per-arm head on (own embedding, neighborhood aggregate).
        let mut out = vec![0.0; l];
        for i in 0..l {
            let mut z = p.head_b;
            for c in 0..e {
                z += p.head_w[c] * h[i][c];
                z += p.head_w[e + c] * x[i][c];
            }
            out[i] = 1.0 / (1.0 + (-z).exp());
        }
        Ok(ForwardRecord {
            features: features.to_vec(),
            h,
            q,
            k_,
            pair_hidden,
            soft_gate,
            gate,
            wsoft,
            x,
            out,
        })
    }

    /// Backpropagate `d loss / d out` to flat parameter gradients. When
    /// `straight_through` is set the hard gates pass gradients through their
    /// soft gumbel values; otherwise the gates are treated as constants
    /// (finite differences of the hard forward match this mode).
    pub fn backward(
        &self,
        rec: &ForwardRecord,
        dout: &[f64],
        straight_through: bool,
    ) -> AttentionParams {
        let l = self.cfg.l;
        let e = self.cfg.embed_dim;
        let att = self.cfg.attention_dim;
        let sh = self.cfg.scorer_hidden;
        let p = &self.params;
        let mut g = AttentionParams {
            enc_w: vec![0.0; p.enc_w.len()],
            enc_b: vec![0.0; p.enc_b.len()],
            sc1_w: vec![0.0; p.sc1_w.len()],
            sc1_b: vec![0.0; p.sc1_b.len()],
            sc2_w: vec![0.0; p.sc2_w.len()],
            sc2_b: vec![0.0; p.sc2_b.len()],
            wq: vec![0.0; p.wq.len()],
            wk: vec![0.0; p.wk.len()],
            head_w: vec![0.0; p.head_w.len()],
            head_b: 0.0,
        };
        let mut dh = vec![vec![0.0; e]; l];
        let mut dx = vec![vec![0.0; e]; l];
        // Head.
        for i in 0..l {
            let o = rec.out[i];
            let dz = dout[i] * o * (1.0 - o);
            g.head_b += dz;
            for c in 0..e {
                g.head_w[c] += dz * rec.h[i][c];
                g.head_w[e + c] += dz * rec.x[i][c];
                dh[i][c] += dz * p.head_w[c];
                dx[i][c] += dz * p.head_w[e + c];
            }
        }
        // Aggregation and soft attention.
        let mut dq = vec![vec![0.0; att]; l];
        let mut dk = vec![vec![0.0; att]; l];
        let mut dgate = vec![0.0; l * l];
        for i in 0..l {
            // dL/dW_s^(i,j) then softmax jacobian to scores.
            let mut dw = vec![0.0; l];
            for j in 0..l {
                if i == j {
                    continue;
                }
                let mut v = 0.0;
                for c in 0..e {
                    v += dx[i][c] * rec.h[j][c];
                }
                dw[j] = v;
                // x_i depends on h_j through the weight.
                let w = rec.wsoft[self.pair_index(i, j)];
                for c in 0..e {
                    dh[j][c] += w * dx[i][c];
                }
            }
            let mut weighted_sum = 0.0;
            for j in 0..l {
                if i != j {
                    weighted_sum += rec.wsoft[self.pair_index(i, j)] * dw[j];
                }
            }
            for j in 0..l {
                if i == j {
                    continue;
                }
                let idx = self.pair_index(i, j);
                let ds = rec.wsoft[idx] * (dw[j] - weighted_sum);
                // score = (q_i . k_j) * gate.
                let qk: f64 = rec.q[i].iter().zip(&rec.k_[j]).map(|(a, b)| a * b).sum();
                let gate = rec.gate[idx];
                for a in 0..att {
                    dq[i][a] += ds * gate * rec.k_[j][a];
                    dk[j][a] += ds * gate * rec.q[i][a];
                }
                dgate[idx] += ds * qk;
            }
        }
        // Projections.
        for i in 0..l {
            for a in 0..att {
                for c in 0..e {
                    g.wq[a * e + c] += dq[i][a] * rec.h[i][c];
                    g.wk[a * e + c] += dk[i][a] * rec.h[i][c];
                    dh[i][c] += dq[i][a] * p.wq[a * e + c];
                    dh[i][c] += dk[i][a] * p.wk[a * e + c];
                }
            }
        }
        // Hard gates, straight-through into the pair scorer.
        if straight_through {
            for i in 0..l {
                for j in 0..l {
                    if i == j {
                        continue;
                    }
                    let idx = self.pair_index(i, j);
                    let dg = dgate[idx];
                    if dg == 0.0 {
                        continue;
                    }
                    let soft = rec.soft_gate[idx];
                    let dsoft = soft * (1.0 - soft) / self.temperature;
                    // d soft / d logit1 = dsoft, d soft / d logit0 = -dsoft.
                    let dlogit1 = dg * dsoft;
                    let dlogit0 = -dg * dsoft;
                    let hidden = &rec.pair_hidden[idx];
                    let mut dhid = vec![0.0; sh];
                    for c in 0..sh {
                        g.sc2_w[c] += dlogit0 * hidden[c];
                        g.sc2_w[sh + c] += dlogit1 * hidden[c];
                        dhid[c] += dlogit0 * p.sc2_w[c] + dlogit1 * p.sc2_w[sh + c];
                    }
                    g.sc2_b[0] += dlogit0;
                    g.sc2_b[1] += dlogit1;
                    for c in 0..sh {
                        let dz = dhid[c] * (1.0 - hidden[c] * hidden[c]);
                        g.sc1_b[c] += dz;
                        for cc in 0..e {
                            g.sc1_w[c * 2 * e + cc] += dz * rec.h[i][cc];
                            g.sc1_w[c * 2 * e + e + cc] += dz * rec.h[j][cc];
                            dh[i][cc] += dz * p.sc1_w[c * 2 * e + cc];
                            dh[j][cc] += dz * p.sc1_w[c * 2 * e + e + cc];
                        }
                    }
                }
            }
        }
        // Encoder.
        for i in 0..l {
            for r in 0..e {
                let dz = dh[i][r] * (1.0 - rec.h[i][r] * rec.h[i][r]);
                g.enc_b[r] += dz;
                for c in 0..self.cfg.d {
                    g.enc_w[r * self.cfg.d + c] += dz * rec.features[i][c];
                }
            }
        }
        g
    }

    fn apply_ascent(&mut self, grads: &AttentionParams, lr: f64) {
        let flat_g = grads.flat();
        let mut flat_p = self.params.flat();
        for (pv, gv) in flat_p.iter_mut().zip(&flat_g) {
            *pv += lr * gv;
        }
        self.params.set_flat(&flat_p);
    }

    /// Draw an action by gumbel top-K over the head scores and estimate its
    /// unordered sampling probability.
    pub fn gumbel_topk_sample(
        &self,
        out: &[f64],
        k: usize,
        m_perms: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SubsetDraw> {
        if k > out.len() {
            return Err(Error::InvalidInput(format!(
                "K = {k} exceeds L = {}",
                out.len()
            )));
        }
        if m_perms == 0 {
            return Err(Error::InvalidInput("m_perms must be >= 1".into()));
        }
        let weights: Vec<f64> = out
            .iter()
            .map(|o| o.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP))
            .collect();
        let (subset, perturbed) = gumbel_top_k_draw(&weights, k, rng)?;
        let orderings = choose_orderings(&subset, m_perms, rng);
        let prob = unordered_prob(&weights, &orderings);
        let action = ActionVector::from_indices(&subset, out.len())?;
        Ok(SubsetDraw {
            action,
            logprob: prob.ln().min(0.0),
            perturbed,
            orderings,
        })
    }

    /// Gradient of a draw's log-probability with respect to the head scores,
    /// with the orderings frozen.
    pub fn logprob_grad_wrt_out(&self, out: &[f64], draw: &SubsetDraw) -> Vec<f64> {
        let weights: Vec<f64> = out
            .iter()
            .map(|o| o.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP))
            .collect();
        let mut grad = unordered_logprob_grad(&weights, &draw.orderings);
        // Through the clip: zero where the raw score was clamped.
        for (gv, &o) in grad.iter_mut().zip(out) {
            if o <= SCORE_CLIP || o >= 1.0 - SCORE_CLIP {
                *gv = 0.0;
            }
        }
        grad
    }

    /// Full parameter gradient of one draw's log-probability.
    pub fn logprob_param_grad(&self, rec: &ForwardRecord, draw: &SubsetDraw) -> Vec<f64> {
        let dout = self.logprob_grad_wrt_out(&rec.out, draw);
        self.backward(rec, &dout, true).flat()
    }

    /// Propose one elite: forward pass with stochastic gates, gumbel top-K
    /// draw, pending entry retained for the next update.
    pub fn propose(&mut self) -> Result<ActionVector> {
        let mut rng = self.rng.clone();
        let rec = self.forward_attention(
            &self.features.clone(),
            GateMode::Stochastic(self.temperature),
            &mut rng,
        )?;
        let draw = self.gumbel_topk_sample(&rec.out, self.cfg.k, self.cfg.m_perms, &mut rng)?;
        self.rng = rng;
        let action = draw.action.clone();
        self.pending.push((rec, draw, None));
        Ok(action)
    }

    /// Head scores for the current features with deterministic gates.
    pub fn current_output(&self) -> Vec<f64> {
        let mut rng = self.rng.clone();
        self.forward_attention(&self.features, GateMode::Deterministic, &mut rng)
            .map(|rec| rec.out)
            .unwrap_or_default()
    }

    /// Attach composite feedback to the pending draw of `action`.
    pub fn attach_feedback(&mut self, action: &ActionVector, feedback: f64) {
        for (_, draw, slot) in self.pending.iter_mut().rev() {
            if slot.is_none() && &draw.action == action {
                *slot = Some(feedback);
                return;
            }
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Score-function ascent on mean advantage-weighted log-probability over
    /// the pending draws, then temperature annealing.
    pub fn reinforce_update(&mut self) {
        let draws: Vec<(ForwardRecord, SubsetDraw, f64)> = self
            .pending
            .drain(..)
            .filter_map(|(rec, draw, fb)| fb.map(|f| (rec, draw, f)))
            .collect();
        if draws.is_empty() {
            return;
        }
        let baseline: f64 = draws.iter().map(|d| d.2).sum::<f64>() / draws.len() as f64;
        let mut total: Option<AttentionParams> = None;
        for (rec, draw, feedback) in &draws {
            let adv = feedback - baseline;
            if adv == 0.0 {
                continue;
            }
            let mut dout = self.logprob_grad_wrt_out(&rec.out, draw);
            for g in dout.iter_mut() {
                *g *= adv;
            }
            let grads = self.backward(rec, &dout, true);
            total = Some(match total {
                None => grads,
                Some(mut acc) => {
                    let mut flat = acc.flat();
                    for (a, b) in flat.iter_mut().zip(grads.flat()) {
                        *a += b;
                    }
                    acc.set_flat(&flat);
                    acc
                }
            });
        }
        if let Some(grads) = total {
            let lr = self.cfg.lr / draws.len() as f64;
            self.apply_ascent(&grads, lr);
        }
        self.temperature = (self.temperature * self.cfg.temperature_anneal).max(self.cfg.temperature_floor);
    }

    /// Demonstration path: descend cross-entropy between the head scores and
    /// the target action.
    pub fn demonstration_step(&mut self, target: &ActionVector, lr: f64) -> Result<()> {
        let mut rng = self.rng.clone();
        let rec = self.forward_attention(
            &self.features.clone(),
            GateMode::Stochastic(self.temperature),
            &mut rng,
        )?;
        self.rng = rng;
        let (_, grad) = crate::nn::bce_loss_grad(&rec.out, target.bits());
        let grads = self.backward(&rec, &grad, true);
        self.apply_ascent(&grads, -lr);
        Ok(())
    }

    /// One-hot identity features for context-free runs.
    pub fn identity_features(l: usize) -> Vec<Vec<f64>> {
        (0..l)
            .map(|i| {
                let mut row = vec![0.0; l];
                row[i] = 1.0;
                row
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derived_rng;

    fn sampler(l: usize, k: usize, d: usize, seed: u64) -> G2anetSampler {
        let cfg = G2anetConfig::for_dims(l, k, d);
        let features = if d == l {
            G2anetSampler::identity_features(l)
        } else {
            random_features(l, d, seed.wrapping_add(1000))
        };
        G2anetSampler::new(cfg, features, derived_rng(seed, 60))
    }

    fn random_features(l: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = derived_rng(seed, 61);
        (0..l)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn forced_off_gates_give_uniform_attention_and_mean_embedding() {
        let s = sampler(5, 2, 3, 1);
        let f = random_features(5, 3, 2);
        let mut rng = derived_rng(3, 62);
        let rec = s.forward_attention(&f, GateMode::ForceOff, &mut rng).unwrap();
        for i in 0..5 {
            let mut mean = vec![0.0; s.cfg.embed_dim];
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let w = rec.wsoft[i * 5 + j];
                assert!((w - 0.25).abs() < 1e-12, "weight {w}");
                for c in 0..s.cfg.embed_dim {
                    mean[c] += rec.h[j][c] / 4.0;
                }
            }
            for c in 0..s.cfg.embed_dim {
                assert!((rec.x[i][c] - mean[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_live_in_unit_interval() {
        let s = sampler(6, 2, 4, 4);
        let f = random_features(6, 4, 5);
        let mut rng = derived_rng(6, 63);
        let rec = s
            .forward_attention(&f, GateMode::Stochastic(1.0), &mut rng)
            .unwrap();
        assert_eq!(rec.out.len(), 6);
        assert!(rec.out.iter().all(|o| (0.0..=1.0).contains(o)));
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let l = 5;
        let s = sampler(l, 2, 3, 7);
        let f = random_features(l, 3, 8);
        let mut rng = derived_rng(9, 64);
        let rec = s.forward_attention(&f, GateMode::Deterministic, &mut rng).unwrap();
        // Reverse the items.
        let f_rev: Vec<Vec<f64>> = f.iter().rev().cloned().collect();
        let rec_rev = s
            .forward_attention(&f_rev, GateMode::Deterministic, &mut rng)
            .unwrap();
        for i in 0..l {
            assert!(
                (rec.out[i] - rec_rev.out[l - 1 - i]).abs() < 1e-12,
                "out[{i}] = {} vs reversed {}",
                rec.out[i],
                rec_rev.out[l - 1 - i]
            );
        }
    }

    #[test]
    fn full_subset_draw_has_probability_one() {
        let s = sampler(3, 3, 2, 10);
        let out = vec![0.3, 0.7, 0.5];
        let mut rng = derived_rng(11, 65);
        let draw = s.gumbel_topk_sample(&out, 3, 6, &mut rng).unwrap();
        assert_eq!(draw.action.selected(), vec![0, 1, 2]);
        assert!(draw.logprob.abs() < 1e-12, "logprob {}", draw.logprob);
    }

    #[test]
    fn rejects_k_above_l() {
        let s = sampler(3, 3, 2, 12);
        let mut rng = derived_rng(13, 66);
        assert!(s.gumbel_topk_sample(&[0.5, 0.5], 3, 2, &mut rng).is_err());
    }

    #[test]
    fn logprob_is_nonpositive_and_finite() {
        let s = sampler(6, 3, 2, 14);
        let out = vec![0.2, 0.8, 0.5, 0.6, 0.3, 0.9];
        let mut rng = derived_rng(15, 67);
        for _ in 0..50 {
            let draw = s.gumbel_topk_sample(&out, 3, 6, &mut rng).unwrap();
            assert!(draw.logprob <= 0.0);
            assert!(draw.logprob.is_finite());
        }
    }

    #[test]
    fn logprob_grad_wrt_out_matches_finite_differences() {
        let s = sampler(5, 2, 2, 16);
        let out = vec![0.25, 0.6, 0.45, 0.8, 0.35];
        let mut rng = derived_rng(17, 68);
        let draw = s.gumbel_topk_sample(&out, 2, 2, &mut rng).unwrap();
        let grad = s.logprob_grad_wrt_out(&out, &draw);
        let h = 1e-7;
        for i in 0..out.len() {
            let mut op = out.clone();
            op[i] += h;
            let wp: Vec<f64> = op.iter().map(|o| o.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)).collect();
            let fp = unordered_prob(&wp, &draw.orderings).ln();
            op[i] = out[i] - h;
            let wm: Vec<f64> = op.iter().map(|o| o.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)).collect();
            let fm = unordered_prob(&wm, &draw.orderings).ln();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1.0) < 1e-4,
                "component {i}: fd={fd} analytic={}",
                grad[i]
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences_with_frozen_gates() {
        // Gates treated as constants in both directions: FD of the hard
        // forward then agrees with the analytic non-straight-through pass.
        let l = 4;
        let mut s = sampler(l, 2, 3, 18);
        s.cfg.embed_dim = 4;
        s.cfg.attention_dim = 3;
        s.cfg.scorer_hidden = 4;
        let mut rng0 = derived_rng(19, 69);
        s.params = AttentionParams::init(&s.cfg, &mut rng0);
        let f = random_features(l, 3, 20);
        let mut rng = derived_rng(21, 70);
        let rec = s.forward_attention(&f, GateMode::ForceOn, &mut rng).unwrap();
        // Loss = sum of outputs.
        let dout = vec![1.0; l];
        let grads = s.backward(&rec, &dout, false).flat();
        let flat = s.params.flat();
        let h = 1e-6;
        // Skip the scorer blocks: with frozen gates they carry no gradient.
        let enc_len = s.params.enc_w.len() + s.params.enc_b.len();
        let scorer_len =
            s.params.sc1_w.len() + s.params.sc1_b.len() + s.params.sc2_w.len() + s.params.sc2_b.len();
        for idx in 0..flat.len() {
            if idx >= enc_len && idx < enc_len + scorer_len {
                assert_eq!(grads[idx], 0.0);
                continue;
            }
            let mut fp_params = flat.clone();
            fp_params[idx] += h;
            let mut sp = s.clone();
            sp.params.set_flat(&fp_params);
            let fp: f64 = sp
                .forward_attention(&f, GateMode::ForceOn, &mut rng.clone())
                .unwrap()
                .out
                .iter()
                .sum();
            fp_params[idx] = flat[idx] - h;
            sp.params.set_flat(&fp_params);
            let fm: f64 = sp
                .forward_attention(&f, GateMode::ForceOn, &mut rng.clone())
                .unwrap()
                .out
                .iter()
                .sum();
            let fd = (fp - fm) / (2.0 * h);
            let scale = fd.abs().max(grads[idx].abs()).max(1.0);
            assert!(
                (fd - grads[idx]).abs() / scale < 1e-4,
                "param {idx}: fd={fd} analytic={}",
                grads[idx]
            );
        }
    }

    #[test]
    fn single_draw_update_leaves_params_unchanged() {
        let mut s = sampler(5, 2, 5, 22);
        let a = s.propose().unwrap();
        s.attach_feedback(&a, 0.7);
        let before = s.params.flat();
        s.reinforce_update();
        assert_eq!(s.params.flat(), before);
    }

    #[test]
    fn equal_feedback_update_is_zero() {
        let mut s = sampler(5, 2, 5, 23);
        for _ in 0..4 {
            let a = s.propose().unwrap();
            s.attach_feedback(&a, 0.42);
        }
        let before = s.params.flat();
        s.reinforce_update();
        assert_eq!(s.params.flat(), before);
    }

    #[test]
    fn two_draw_update_matches_advantage_weighted_gradients() {
        let mut s = sampler(5, 2, 5, 24);
        let a1 = s.propose().unwrap();
        let a2 = s.propose().unwrap();
        // Per-draw parameter gradients with frozen randomness, taken before
        // the update mutates the parameters.
        let g1 = s.logprob_param_grad(&s.pending[0].0, &s.pending[0].1);
        let g2 = s.logprob_param_grad(&s.pending[1].0, &s.pending[1].1);
        let (f1, f2) = (1.0, 0.2);
        s.attach_feedback(&a1, f1);
        s.attach_feedback(&a2, f2);
        let before = s.params.flat();
        s.reinforce_update();
        let after = s.params.flat();
        let baseline = (f1 + f2) / 2.0;
        let lr = s.cfg.lr / 2.0;
        for i in 0..before.len() {
            let expect = before[i] + lr * ((f1 - baseline) * g1[i] + (f2 - baseline) * g2[i]);
            assert!(
                (after[i] - expect).abs() < 1e-9,
                "param {i}: got {}, want {expect}",
                after[i]
            );
        }
    }

    #[test]
    fn temperature_anneals_with_floor() {
        let mut s = sampler(4, 2, 4, 25);
        s.cfg.temperature_floor = 0.9;
        for _ in 0..40 {
            let a = s.propose().unwrap();
            s.attach_feedback(&a, 0.1);
            let b = s.propose().unwrap();
            s.attach_feedback(&b, 0.9);
            s.reinforce_update();
        }
        assert!((s.temperature() - 0.9).abs() < 1e-9);
    }
}
