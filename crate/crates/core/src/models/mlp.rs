//! Minimal dense network machinery in f64: a one-hidden-layer perceptron
//! with ReLU, explicit backprop, SGD and adaptive-moment updates, and a
//! central-finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected `input -> hidden (ReLU) -> output (linear)` network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient with the same shape as [`Mlp`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Grads {
    pub fn zeros(m: &Mlp) -> Self {
        Grads {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.iter_mut() {
            *g *= s;
        }
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
    }
}

impl Mlp {
    /// Small uniform initialization, deterministic per seed.
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = (1.0 / input as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let mut draw = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-s..s)).collect()
        };
        Mlp {
            input,
            hidden,
            output,
            w1: draw(hidden * input, s1),
            b1: vec![0.0; hidden],
            w2: draw(output * hidden, s2),
            b2: vec![0.0; output],
        }
    }

    pub fn param_count(&self) -> usize {
        (self.input + 1) * self.hidden + (self.hidden + 1) * self.output
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Forward pass; returns (hidden activations, raw outputs).
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.input);
        let mut h = vec![0.0; self.hidden];
        for j in 0..self.hidden {
            let row = &self.w1[j * self.input..(j + 1) * self.input];
            let mut a = self.b1[j];
            for (w, xi) in row.iter().zip(x) {
                a += w * xi;
            }
            h[j] = a.max(0.0);
        }
        let mut y = vec![0.0; self.output];
        for o in 0..self.output {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            let mut a = self.b2[o];
            for (w, hj) in row.iter().zip(&h) {
                a += w * hj;
            }
            y[o] = a;
        }
        (h, y)
    }

    /// Accumulates gradients into `g` given dL/dy for one sample.
    pub fn backward(&self, x: &[f64], h: &[f64], dy: &[f64], g: &mut Grads) {
        let mut dh = vec![0.0; self.hidden];
        for o in 0..self.output {
            g.b2[o] += dy[o];
            let row = &mut g.w2[o * self.hidden..(o + 1) * self.hidden];
            let wrow = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            for j in 0..self.hidden {
                row[j] += dy[o] * h[j];
                dh[j] += dy[o] * wrow[j];
            }
        }
        for j in 0..self.hidden {
            if h[j] <= 0.0 {
                continue;
            }
            g.b1[j] += dh[j];
            let row = &mut g.w1[j * self.input..(j + 1) * self.input];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += dh[j] * xi;
            }
        }
    }

    /// Plain SGD step.
    pub fn sgd_step(&mut self, g: &Grads, lr: f64) {
        for (p, gr) in self.params_mut().zip(g.iter()) {
            *p -= lr * gr;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(y: &[f64]) -> Vec<f64> {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = y.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Adam-style adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, model: &mut Mlp, g: &Grads) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, gr)) in model.params_mut().zip(g.iter()).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gr;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gr * gr;
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Per-parameter-block comparison of analytic vs central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (block name, max relative error) for w1, b1, w2, b2.
    pub blocks: Vec<(String, f64)>,
    pub step: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.1).fold(0.0, f64::max)
    }
}

/// Checks `analytic` against central finite differences of `loss`.
///
/// Relative error uses `|a - b| / max(|a|, |b|, 1)` so near-zero gradients
/// compare absolutely.
pub fn grad_check(
    model: &Mlp,
    loss: impl Fn(&Mlp) -> f64,
    analytic: &Grads,
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut work = model.clone();
    let n = model.param_count();
    let mut fd = vec![0.0; n];
    for i in 0..n {
        let orig = *work.params().nth(i).unwrap();
        *work.params_mut().nth(i).unwrap() = orig + step;
        let up = loss(&work);
        *work.params_mut().nth(i).unwrap() = orig - step;
        let down = loss(&work);
        *work.params_mut().nth(i).unwrap() = orig;
        fd[i] = (up - down) / (2.0 * step);
    }
    let sizes = [
        ("w1", model.w1.len()),
        ("b1", model.b1.len()),
        ("w2", model.w2.len()),
        ("b2", model.b2.len()),
    ];
    let analytic_flat: Vec<f64> = analytic.iter().cloned().collect();
    let mut blocks = Vec::new();
    let mut off = 0;
    for (name, len) in sizes {
        let mut max_err: f64 = 0.0;
        for i in off..off + len {
            let (a, b) = (analytic_flat[i], fd[i]);
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            max_err = max_err.max(rel);
        }
        blocks.push((name.to_string(), max_err));
        off += len;
    }
    let pass = blocks.iter().all(|b| b.1 < tolerance);
    GradCheckReport {
        blocks,
        step,
        tolerance,
        pass,
    }
}

/// Guard used by the training loops.
pub fn check_finite(loss: f64, context: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite loss at {context}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let p = softmax(&y);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn forward_matches_hand_computed_toy() {
        // 2 inputs, 2 hidden, 1 output with fixed weights.
        let m = Mlp {
            input: 2,
            hidden: 2,
            output: 1,
            w1: vec![1.0, -1.0, 0.5, 0.5],
            b1: vec![0.0, -0.25],
            w2: vec![2.0, -3.0],
            b2: vec![0.1],
        };
        let (h, y) = m.forward(&[1.0, 0.5]);
        // h0 = relu(1 - 0.5) = 0.5; h1 = relu(0.5 + 0.25 - 0.25) = 0.5
        assert_eq!(h, vec![0.5, 0.5]);
        // y = 2*0.5 - 3*0.5 + 0.1 = -0.4
        assert!((y[0] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn param_count_formula() {
        let m = Mlp::init(81, 64, 20, 0);
        assert_eq!(m.param_count(), (81 + 1) * 64 + (64 + 1) * 20);
        assert_eq!(m.param_count(), m.params().count());
    }

    #[test]
    fn backward_matches_finite_differences_on_l2() {
        let m = Mlp::init(4, 6, 3, 7);
        let x = vec![0.3, -0.8, 1.2, 0.05];
        let target = [0.5, -1.0, 0.25];
        let loss = |mm: &Mlp| -> f64 {
            let (_, y) = mm.forward(&x);
            y.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * 0.5
        };
        let (h, y) = m.forward(&x);
        let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut g = Grads::zeros(&m);
        m.backward(&x, &h, &dy, &mut g);
        let report = grad_check(&m, loss, &g, 1e-5, 1e-4);
        assert!(report.pass, "blocks: {:?}", report.blocks);
    }

    #[test]
    fn adam_reduces_quadratic_loss() {
        let mut m = Mlp::init(3, 8, 2, 1);
        let mut adam = AdamState::new(m.param_count(), 0.05, 0.9, 0.999, 1e-8);
        let x = vec![1.0, -0.5, 0.25];
        let target = [0.7, -0.2];
        let loss_of = |mm: &Mlp| {
            let (_, y) = mm.forward(&x);
            y.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let before = loss_of(&m);
        for _ in 0..200 {
            let (h, y) = m.forward(&x);
            let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let mut g = Grads::zeros(&m);
            m.backward(&x, &h, &dy, &mut g);
            adam.step(&mut m, &g);
        }
        let after = loss_of(&m);
        assert!(after < before * 0.01, "{before} -> {after}");
    }
}
