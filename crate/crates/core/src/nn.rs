//! Minimal fully-connected networks with hand-written backpropagation.
//! Used by the actor-critic sampler and the demonstration-learning paths;
//! the feedback estimator has its own specialized network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    fn derive_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    w: Vec<f64>, // out x in, row-major
    b: Vec<f64>,
    n_in: usize,
    n_out: usize,
    act: Activation,
}

impl Layer {
    fn new(n_in: usize, n_out: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        // Uniform Glorot-style init.
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            w,
            b: vec![0.0; n_out],
            n_in,
            n_out,
            act,
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut z = self.b[o];
            for i in 0..self.n_in {
                z += row[i] * x[i];
            }
            out.push(self.act.apply(z));
        }
    }
}

/// Activations of every layer for one input, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has layers")
    }
}

/// Parameter gradients, same shape as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            dw: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.dw.iter_mut().flatten() {
            *g *= c;
        }
        for g in self.db.iter_mut().flatten() {
            *g *= c;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// A plain multi-layer perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// `dims` lists layer widths input-first; hidden layers use `hidden_act`,
    /// the final layer uses `out_act`.
    pub fn new(dims: &[usize], hidden_act: Activation, out_act: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { out_act } else { hidden_act };
            layers.push(Layer::new(dims[i], dims[i + 1], act, rng));
        }
        Self { layers }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward(&cur, &mut next);
            activations.push(next.clone());
            std::mem::swap(&mut cur, &mut next);
        }
        Trace {
            input: x.to_vec(),
            activations,
        }
    }

    /// Backpropagate `d loss / d output` through a recorded trace.
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace, dloss_dout: &[f64]) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let mut delta: Vec<f64> = dloss_dout.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.activations[li];
            // Through the activation.
            for (d, &av) in delta.iter_mut().zip(a.iter()) {
                *d *= layer.act.derive_from_output(av);
            }
            let prev: &[f64] = if li == 0 {
                &trace.input
            } else {
                &trace.activations[li - 1]
            };
            for o in 0..layer.n_out {
                let d = delta[o];
                grads.db[li][o] += d;
                let row = &mut grads.dw[li][o * layer.n_in..(o + 1) * layer.n_in];
                for i in 0..layer.n_in {
                    row[i] += d * prev[i];
                }
            }
            // Gradient w.r.t. the layer input.
            let mut prev_delta = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for i in 0..layer.n_in {
                    prev_delta[i] += d * row[i];
                }
            }
            delta = prev_delta;
        }
        (grads, delta)
    }

    /// One descent step: `theta <- theta - lr * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(grads.dw.iter().zip(&grads.db)) {
            for (w, g) in layer.w.iter_mut().zip(dw) {
                *w -= lr * g;
            }
            for (b, g) in layer.b.iter_mut().zip(db) {
                *b -= lr * g;
            }
        }
    }

    /// Polyak update toward `source`: `theta <- (1 - tau) * theta + tau * source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (a, b) in dst.w.iter_mut().zip(&src.w) {
                *a = (1.0 - tau) * *a + tau * *b;
            }
            for (a, b) in dst.b.iter_mut().zip(&src.b) {
                *a = (1.0 - tau) * *a + tau * *b;
            }
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for l in self.layers.iter_mut() {
            for w in l.w.iter_mut() {
                *w = *it.next().expect("flat params too short");
            }
            for b in l.b.iter_mut() {
                *b = *it.next().expect("flat params too short");
            }
        }
        assert!(it.next().is_none(), "flat params too long");
    }
}

/// Mean binary cross-entropy of a real vector against binary targets, with the
/// gradient w.r.t. the vector. Inputs are clipped to the open unit interval.
pub fn bce_loss_grad(rv: &[f64], target: &[bool]) -> (f64, Vec<f64>) {
    let n = rv.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; rv.len()];
    for (i, (&v, &t)) in rv.iter().zip(target).enumerate() {
        let p = v.clamp(1e-6, 1.0 - 1e-6);
        if t {
            loss -= p.ln();
            grad[i] = -1.0 / p / n;
        } else {
            loss -= (1.0 - p).ln();
            grad[i] = 1.0 / (1.0 - p) / n;
        }
    }
    (loss / n, grad)
}
