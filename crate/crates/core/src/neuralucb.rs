//! Optimistic feedback estimator: a fully connected ReLU network with paired
//! block initialization, a design matrix accumulating scaled gradient outer
//! products, an exploration radius from the design-matrix log-determinant,
//! regularized refitting anchored at the initial weights, and a discounted
//! variant for drifting feedback.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, SquareMatrix};

/// ReLU network `out = sqrt(m) * w_out . relu(W_{D-1} relu( .. relu(W_1 x)))`
/// stored as one flat parameter vector.
///
/// Inputs are duplicated internally, `x -> [x; x] / sqrt(2)`, so the paired
/// block initialization makes the initial output identically zero: both
/// halves of the first layer see the same signal and the antisymmetric
/// output weights cancel. Without the duplication the untrained network is a
/// random function whose values poison optimistic estimates in unexplored
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    m: usize,
    depth: usize,
    input_dim: usize, // 2 * raw_dim after duplication
    raw_dim: usize,
    theta: Vec<f64>,
}

impl NetworkParams {
    /// Paired block initialization: every hidden matrix is block-diagonal with
    /// two identical halves drawn from N(0, 4/m); the output layer is
    /// `(w, -w)` with `w` drawn from N(0, 2/m).
    pub fn init(l: usize, m: usize, depth: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if m == 0 || m % 2 != 0 {
            return Err(Error::InvalidInput(format!("hidden width m must be even, got {m}")));
        }
        if depth < 2 {
            return Err(Error::InvalidInput(format!("depth must be >= 2, got {depth}")));
        }
        if l == 0 {
            return Err(Error::InvalidInput("input dimension must be >= 1".into()));
        }
        let input_dim = 2 * l;
        let p = m * input_dim + m * m * (depth - 2) + m;
        let mut params = Self {
            m,
            depth,
            input_dim,
            raw_dim: l,
            theta: vec![0.0; p],
        };
        let half = m / 2;
        let sd_hidden = (4.0 / m as f64).sqrt();
        let normal = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
            // Box-Muller; two uniforms per draw keeps the stream simple.
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random::<f64>();
            sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        // First layer: two (m/2) x l blocks on the diagonal, one per copy of
        // the duplicated input.
        {
            let in_half = l;
            let mut block = vec![0.0; half * in_half];
            for v in block.iter_mut() {
                *v = normal(rng, sd_hidden);
            }
            for bi in 0..half {
                for bj in 0..in_half {
                    let v = block[bi * in_half + bj];
                    let top = params.w1_index(bi, bj);
                    let bottom = params.w1_index(bi + half, bj + in_half);
                    params.theta[top] = v;
                    params.theta[bottom] = v;
                }
            }
        }
        // Interior layers: two (m/2) x (m/2) blocks on the diagonal.
        for layer in 0..depth - 2 {
            let mut block = vec![0.0; half * half];
            for v in block.iter_mut() {
                *v = normal(rng, sd_hidden);
            }
            for bi in 0..half {
                for bj in 0..half {
                    let v = block[bi * half + bj];
                    let top = params.hidden_index(layer, bi, bj);
                    let bottom = params.hidden_index(layer, bi + half, bj + half);
                    params.theta[top] = v;
                    params.theta[bottom] = v;
                }
            }
        }
        // Output layer: (w, -w).
        let sd_out = (2.0 / m as f64).sqrt();
        for i in 0..half {
            let v = normal(rng, sd_out);
            let top = params.out_index(i);
            let bottom = params.out_index(i + half);
            params.theta[top] = v;
            params.theta[bottom] = -v;
        }
        Ok(params)
    }

    fn w1_index(&self, row: usize, col: usize) -> usize {
        row * self.input_dim + col
    }

    fn hidden_index(&self, layer: usize, row: usize, col: usize) -> usize {
        self.m * self.input_dim + layer * self.m * self.m + row * self.m + col
    }

    fn out_index(&self, i: usize) -> usize {
        self.m * self.input_dim + (self.depth - 2) * self.m * self.m + i
    }

    /// Flattened parameter count.
    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn raw_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn w1(&self, row: usize, col: usize) -> f64 {
        self.theta[self.w1_index(row, col)]
    }

    pub fn w_out(&self, i: usize) -> f64 {
        self.theta[self.out_index(i)]
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} != {}",
                theta.len(),
                self.theta.len()
            )));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        // Duplicate and rescale so the 2-norm is preserved.
        let inv = 1.0 / std::f64::consts::SQRT_2;
        let mut v = Vec::with_capacity(self.input_dim);
        v.extend(x.iter().map(|a| a * inv));
        v.extend(x.iter().map(|a| a * inv));
        v
    }

    fn forward_padded(&self, x: &[f64], acts: Option<&mut Vec<Vec<f64>>>) -> f64 {
        let m = self.m;
        let mut keep = acts;
        let mut a = vec![0.0; m];
        for row in 0..m {
            let mut z = 0.0;
            for col in 0..self.input_dim {
                z += self.theta[self.w1_index(row, col)] * x[col];
            }
            a[row] = z.max(0.0);
        }
        if let Some(store) = keep.as_deref_mut() {
            store.push(a.clone());
        }
        for layer in 0..self.depth - 2 {
            let mut next = vec![0.0; m];
            for row in 0..m {
                let mut z = 0.0;
                for col in 0..m {
                    z += self.theta[self.hidden_index(layer, row, col)] * a[col];
                }
                next[row] = z.max(0.0);
            }
            a = next;
            if let Some(store) = keep.as_deref_mut() {
                store.push(a.clone());
            }
        }
        let mut out = 0.0;
        for i in 0..m {
            out += self.theta[self.out_index(i)] * a[i];
        }
        (m as f64).sqrt() * out
    }

    /// Network value without the normalization precondition; the structure
    /// extractors probe off-manifold points (basis vectors, the origin).
    pub fn value_unchecked(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.raw_dim {
            return Err(Error::InvalidInput(format!(
                "input length {} != {}",
                x.len(),
                self.raw_dim
            )));
        }
        Ok(self.forward_padded(&self.pad(x), None))
    }

    /// Network value; the input must have unit Euclidean norm.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_norm(x)?;
        self.value_unchecked(x)
    }

    fn check_norm(&self, x: &[f64]) -> Result<()> {
        let n = norm2(x);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "estimator input must be unit-norm, got |x| = {n}"
            )));
        }
        Ok(())
    }

    /// Exact gradient of the network value with respect to the flat
    /// parameters, by backpropagation.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_norm(x)?;
        Ok(self.gradient_unchecked(x))
    }

    pub fn gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let xp = self.pad(x);
        let m = self.m;
        let sqrt_m = (m as f64).sqrt();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.depth - 1);
        self.forward_padded(&xp, Some(&mut acts));
        let mut g = vec![0.0; self.p()];
        let last = &acts[self.depth - 2];
        for i in 0..m {
            g[self.out_index(i)] = sqrt_m * last[i];
        }
        // delta at the last hidden layer.
        let mut delta: Vec<f64> = (0..m)
            .map(|i| {
                if last[i] > 0.0 {
                    sqrt_m * self.theta[self.out_index(i)]
                } else {
                    0.0
                }
            })
            .collect();
        for layer in (0..self.depth - 2).rev() {
            let prev = &acts[layer];
            for row in 0..m {
                let d = delta[row];
                if d != 0.0 {
                    for col in 0..m {
                        g[self.hidden_index(layer, row, col)] = d * prev[col];
                    }
                }
            }
            let mut next_delta = vec![0.0; m];
            for col in 0..m {
                if prev[col] > 0.0 {
                    let mut s = 0.0;
                    for row in 0..m {
                        s += self.theta[self.hidden_index(layer, row, col)] * delta[row];
                    }
                    next_delta[col] = s;
                }
            }
            delta = next_delta;
        }
        for row in 0..m {
            let d = delta[row];
            if d != 0.0 {
                for col in 0..self.input_dim {
                    g[self.w1_index(row, col)] = d * xp[col];
                }
            }
        }
        g
    }

    /// Smallest pre-activation magnitude along the forward pass; gradient
    /// checks resample inputs when this is tiny (ReLU kink).
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        let xp = self.pad(x);
        let m = self.m;
        let mut min_abs = f64::INFINITY;
        let mut a = vec![0.0; m];
        for row in 0..m {
            let mut z = 0.0;
            for col in 0..self.input_dim {
                z += self.theta[self.w1_index(row, col)] * xp[col];
            }
            min_abs = min_abs.min(z.abs());
            a[row] = z.max(0.0);
        }
        for layer in 0..self.depth - 2 {
            let mut next = vec![0.0; m];
            for row in 0..m {
                let mut z = 0.0;
                for col in 0..m {
                    z += self.theta[self.hidden_index(layer, row, col)] * a[col];
                }
                min_abs = min_abs.min(z.abs());
                next[row] = z.max(0.0);
            }
            a = next;
        }
        min_abs
    }
}

/// Tunables for the estimator.
#[derive(Debug, Clone)]
pub struct UcbOptions {
    pub m: usize,
    pub depth: usize,
    /// Ridge coefficient; also the design-matrix prior scale.
    pub lambda1: f64,
    /// Gradient-descent step size for refits.
    pub eta: f64,
    /// Descent steps per refit.
    pub j_steps: usize,
    /// Exploration-radius multiplier.
    pub nu: f64,
    /// Confidence level inside the radius.
    pub delta: f64,
    /// Additive radius floor.
    pub gamma_floor: f64,
    /// Refit from the previous weights instead of the initial ones.
    pub warm_start: bool,
    /// Full inverse/log-det recompute period, bounding drift of the
    /// rank-1-maintained inverse.
    pub refresh_every: usize,
    pub variant: UcbVariant,
}

impl Default for UcbOptions {
    fn default() -> Self {
        Self {
            m: 32,
            depth: 2,
            lambda1: 1.0,
            eta: 1e-3,
            j_steps: 100,
            nu: 1.0,
            delta: 0.1,
            gamma_floor: 0.0,
            warm_start: false,
            refresh_every: 500,
            variant: UcbVariant::Stationary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UcbVariant {
    Stationary,
    /// Discounted design recursions for drifting feedback; the radius becomes
    /// the tunable `alpha_const`.
    Discounted { gamma_ns: f64, alpha_const: f64 },
}

/// Estimator state: network weights, their anchor, the design matrix and its
/// inverse, and the observation history.
#[derive(Debug, Clone)]
pub struct UcbState {
    params: NetworkParams,
    theta0: Vec<f64>,
    z: SquareMatrix,
    z_inv: SquareMatrix,
    z_tilde: Option<SquareMatrix>,
    log_det_z: f64,
    gamma_t: f64,
    opts: UcbOptions,
    history: Vec<(Vec<f64>, f64)>,
    updates: usize,
}

impl UcbState {
    pub fn new(l: usize, opts: UcbOptions, rng: &mut ChaCha8Rng) -> Result<Self> {
        if opts.lambda1 <= 0.0 {
            return Err(Error::InvalidInput("lambda1 must be > 0".into()));
        }
        if let UcbVariant::Discounted { gamma_ns, .. } = opts.variant {
            if !(gamma_ns > 0.0 && gamma_ns < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "gamma_ns must lie in (0, 1), got {gamma_ns}"
                )));
            }
        }
        let params = NetworkParams::init(l, opts.m, opts.depth, rng)?;
        let p = params.p();
        let z = SquareMatrix::identity_scaled(p, opts.lambda1);
        let z_inv = SquareMatrix::identity_scaled(p, 1.0 / opts.lambda1);
        let z_tilde = match opts.variant {
            UcbVariant::Stationary => None,
            UcbVariant::Discounted { .. } => Some(SquareMatrix::identity_scaled(p, opts.lambda1)),
        };
        let log_det_z = p as f64 * opts.lambda1.ln();
        let theta0 = params.flat().to_vec();
        let mut state = Self {
            params,
            theta0,
            z,
            z_inv,
            z_tilde,
            log_det_z,
            gamma_t: 0.0,
            opts,
            history: Vec::new(),
            updates: 0,
        };
        state.recompute_gamma();
        Ok(state)
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn options(&self) -> &UcbOptions {
        &self.opts
    }

    pub fn gamma_t(&self) -> f64 {
        self.gamma_t
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn z(&self) -> &SquareMatrix {
        &self.z
    }

    pub fn z_inv(&self) -> &SquareMatrix {
        &self.z_inv
    }

    fn recompute_gamma(&mut self) {
        match self.opts.variant {
            UcbVariant::Stationary => {
                let p = self.params.p() as f64;
                let gap = self.log_det_z - p * self.opts.lambda1.ln()
                    + 2.0 * (1.0 / self.opts.delta).ln();
                self.gamma_t = self.opts.nu * gap.max(0.0).sqrt() + self.opts.gamma_floor;
            }
            UcbVariant::Discounted { alpha_const, .. } => {
                self.gamma_t = alpha_const;
            }
        }
    }

    /// Optimistic estimate `(mean, var, U)` for a unit-norm input.
    pub fn ucb(&self, x: &[f64]) -> Result<(f64, f64, f64)> {
        let mean = self.params.value(x)?;
        let g = self.params.gradient_unchecked(x);
        let m = self.opts.m as f64;
        let var = match &self.z_tilde {
            None => {
                let zg = self.z_inv.mat_vec(&g);
                (dot(&g, &zg).max(0.0) / m).sqrt()
            }
            Some(zt) => {
                let u = self.z_inv.mat_vec(&g);
                let tu = zt.mat_vec(&u);
                (dot(&u, &tu).max(0.0) / m).sqrt()
            }
        };
        Ok((mean, var, mean + self.gamma_t * var))
    }

    /// Stationary round update: rank-1 design growth, refit, new radius.
    pub fn update(&mut self, x: &[f64], reward: f64) -> Result<()> {
        if matches!(self.opts.variant, UcbVariant::Discounted { .. }) {
            return Err(Error::Internal(
                "stationary update called on a discounted estimator".into(),
            ));
        }
        self.params.check_norm(x)?;
        let g = self.params.gradient_unchecked(x);
        let m = self.opts.m as f64;
        let quad = self.z_inv.sherman_morrison(1.0 / m, &g);
        self.z.add_rank1(1.0 / m, &g);
        self.log_det_z += (1.0 + quad / m).ln();
        self.updates += 1;
        if self.opts.refresh_every > 0 && self.updates % self.opts.refresh_every == 0 {
            self.z_inv = self.z.inverse_spd()?;
            self.log_det_z = self.z.log_det_spd()?;
        }
        self.history.push((x.to_vec(), reward));
        self.refit(None);
        self.recompute_gamma();
        Ok(())
    }

    /// Discounted round update: both design recursions move as
    /// `Z <- g*Z + G G^T/m + (1-g)*l1*I` (and `(1-g^2)` for the companion),
    /// and the refit weights decay geometrically away from the newest sample.
    pub fn discounted_update(&mut self, x: &[f64], reward: f64) -> Result<()> {
        let UcbVariant::Discounted { gamma_ns, .. } = self.opts.variant else {
            return Err(Error::Internal(
                "discounted update called on a stationary estimator".into(),
            ));
        };
        if !(gamma_ns > 0.0 && gamma_ns < 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma_ns must lie in (0, 1), got {gamma_ns}"
            )));
        }
        self.params.check_norm(x)?;
        let g = self.params.gradient_unchecked(x);
        let m = self.opts.m as f64;
        let l1 = self.opts.lambda1;
        self.z
            .scale_shift_rank1(gamma_ns, (1.0 - gamma_ns) * l1, 1.0 / m, &g);
        let zt = self.z_tilde.as_mut().expect("discounted state has z_tilde");
        zt.scale_shift_rank1(gamma_ns, (1.0 - gamma_ns * gamma_ns) * l1, 1.0 / m, &g);
        self.z_inv = self.z.inverse_spd()?;
        self.log_det_z = self.z.log_det_spd()?;
        self.updates += 1;
        self.history.push((x.to_vec(), reward));
        self.refit(Some(gamma_ns));
        self.recompute_gamma();
        Ok(())
    }

    /// J steps of full-batch gradient descent on the anchored ridge loss.
    /// With a discount the per-sample weights are `gamma^(t-i)`, i.e. the
    /// paper-form `gamma^-i` weights rescaled by `gamma^t` so they stay
    /// bounded; the rescale leaves the minimizer unchanged. The descent
    /// direction is normalized by the total sample weight (again minimizer-
    /// preserving) so a fixed step size stays stable as history grows.
    fn refit(&mut self, discount: Option<f64>) {
        if self.opts.j_steps == 0 || self.history.is_empty() {
            return;
        }
        let m = self.opts.m as f64;
        let l1 = self.opts.lambda1;
        let p = self.params.p();
        let t = self.history.len();
        let weights: Vec<f64> = match discount {
            None => vec![1.0; t],
            Some(gamma) => (1..=t).map(|i| gamma.powi((t - i) as i32)).collect(),
        };
        let inv_mass = 1.0 / weights.iter().sum::<f64>();
        let mut theta = if self.opts.warm_start {
            self.params.flat().to_vec()
        } else {
            self.theta0.clone()
        };
        let mut work = self.params.clone();
        let loss_at = |work: &mut NetworkParams, theta: &[f64]| -> f64 {
            work.set_flat(theta).expect("shape preserved");
            let mut data = 0.0;
            for (i, (x, r)) in self.history.iter().enumerate() {
                let resid = work.value_unchecked(x).expect("history inputs valid") - r;
                data += weights[i] * resid * resid;
            }
            let ridge: f64 = theta
                .iter()
                .zip(&self.theta0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            0.5 * inv_mass * (data + m * l1 * ridge)
        };
        let mut loss = loss_at(&mut work, &theta);
        // Gradients scale linearly with the width through the sqrt(m) output
        // factor; folding 1/m into the step keeps one step size usable
        // across widths. Backtracking halves the step while it overshoots.
        let base_step = self.opts.eta * inv_mass / m;
        let mut candidate = theta.clone();
        for _ in 0..self.opts.j_steps {
            work.set_flat(&theta).expect("shape preserved");
            let mut grad = vec![0.0; p];
            for (i, (x, r)) in self.history.iter().enumerate() {
                let pred = work.value_unchecked(x).expect("history inputs valid");
                let resid = weights[i] * (pred - r);
                if resid == 0.0 {
                    continue;
                }
                let gx = work.gradient_unchecked(x);
                for (gslot, gv) in grad.iter_mut().zip(&gx) {
                    *gslot += resid * gv;
                }
            }
            for j in 0..p {
                grad[j] += m * l1 * (theta[j] - self.theta0[j]);
            }
            let mut step = base_step;
            let mut accepted = false;
            for _ in 0..4 {
                for j in 0..p {
                    candidate[j] = theta[j] - step * grad[j];
                }
                let new_loss = loss_at(&mut work, &candidate);
                if new_loss.is_finite() && new_loss <= loss {
                    theta.copy_from_slice(&candidate);
                    loss = new_loss;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        self.params.set_flat(&theta).expect("shape preserved");
    }

    /// Worst-case deviation of `Z_inv * Z` from the identity.
    pub fn inverse_drift(&self) -> f64 {
        let prod = self.z_inv.mat_mul(&self.z);
        let n = prod.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod.get(i, j) - expect).abs());
            }
        }
        worst
    }

    /// Write a versioned flat-text checkpoint: dimensions, weights, anchor,
    /// design matrix, and history.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("topk-bandit-ucb v1\n");
        out.push_str(&format!(
            "dims {} {} {} {}\n",
            self.params.raw_dim, self.opts.m, self.opts.depth, self.updates
        ));
        let dump = |label: &str, vals: &[f64], out: &mut String| {
            out.push_str(label);
            for v in vals {
                out.push(' ');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        };
        dump("theta", self.params.flat(), &mut out);
        dump("theta0", &self.theta0, &mut out);
        let p = self.params.p();
        let mut zrow = Vec::with_capacity(p);
        for i in 0..p {
            zrow.clear();
            for j in 0..p {
                zrow.push(self.z.get(i, j));
            }
            dump("z", &zrow, &mut out);
        }
        for (x, r) in &self.history {
            let mut row = x.clone();
            row.push(*r);
            dump("obs", &row, &mut out);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Restore from `save`; the inverse and log-determinant are recomputed.
    pub fn load(path: &std::path::Path, opts: UcbOptions, rng: &mut ChaCha8Rng) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let pd = path.display().to_string();
        let mut next_line = |n: usize| -> Result<String> {
            lines
                .next()
                .transpose()
                .map_err(|e| Error::io(pd.clone(), e))?
                .ok_or_else(|| Error::Parse {
                    path: pd.clone(),
                    line: n,
                    msg: "unexpected end of checkpoint".into(),
                })
        };
        let header = next_line(1)?;
        if header.trim() != "topk-bandit-ucb v1" {
            return Err(Error::Parse {
                path: pd.clone(),
                line: 1,
                msg: format!("unknown checkpoint header `{header}`"),
            });
        }
        let dims_line = next_line(2)?;
        let dims: Vec<&str> = dims_line.split_whitespace().collect();
        if dims.len() != 5 || dims[0] != "dims" {
            return Err(Error::Parse {
                path: pd.clone(),
                line: 2,
                msg: "expected `dims l m depth updates`".into(),
            });
        }
        let parse_usize = |s: &str, line: usize| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                path: pd.clone(),
                line,
                msg: format!("bad integer `{s}`"),
            })
        };
        let l = parse_usize(dims[1], 2)?;
        let updates = parse_usize(dims[4], 2)?;
        let mut state = Self::new(l, opts, rng)?;
        if state.opts.m != parse_usize(dims[2], 2)? || state.opts.depth != parse_usize(dims[3], 2)? {
            return Err(Error::Config(
                "checkpoint dimensions do not match the configured estimator".into(),
            ));
        }
        let parse_floats = |line: &str, label: &str, n: usize| -> Result<Vec<f64>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(label) {
                return Err(Error::Parse {
                    path: pd.clone(),
                    line: n,
                    msg: format!("expected `{label}` record"),
                });
            }
            it.map(|s| {
                s.parse().map_err(|_| Error::Parse {
                    path: pd.clone(),
                    line: n,
                    msg: format!("bad float `{s}`"),
                })
            })
            .collect()
        };
        let mut n = 3;
        let theta = parse_floats(&next_line(n)?, "theta", n)?;
        n += 1;
        let theta0 = parse_floats(&next_line(n)?, "theta0", n)?;
        n += 1;
        state.params.set_flat(&theta)?;
        if theta0.len() != state.theta0.len() {
            return Err(Error::Parse {
                path: pd.clone(),
                line: n,
                msg: "anchor length mismatch".into(),
            });
        }
        state.theta0 = theta0;
        let p = state.params.p();
        for i in 0..p {
            let row = parse_floats(&next_line(n)?, "z", n)?;
            n += 1;
            if row.len() != p {
                return Err(Error::Parse {
                    path: pd.clone(),
                    line: n,
                    msg: "design-matrix row length mismatch".into(),
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                state.z.set(i, j, v);
            }
        }
        state.history.clear();
        for line in lines {
            let line = line.map_err(|e| Error::io(pd.clone(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut row = parse_floats(&line, "obs", n)?;
            n += 1;
            let r = row.pop().ok_or_else(|| Error::Parse {
                path: pd.clone(),
                line: n,
                msg: "empty observation".into(),
            })?;
            state.history.push((row, r));
        }
        state.updates = updates;
        state.z_inv = state.z.inverse_spd()?;
        state.log_det_z = state.z.log_det_spd()?;
        state.recompute_gamma();
        Ok(state)
    }
}
