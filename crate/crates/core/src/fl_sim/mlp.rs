//! One-hidden-layer perceptron over a flat parameter vector.
//!
//! Layout: `W1 (hidden x input)`, `b1`, `W2 (classes x hidden)`, `b2`, all row-major.

use rand::Rng;

use super::data::Dataset;
use crate::linalg::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Mlp {
    fn default() -> Self {
        Self { input: 784, hidden: 20, classes: 10 }
    }
}

/// Work buffers for one forward/backward pass.
#[derive(Debug, Clone)]
struct Scratch {
    h: Vec<f64>,
    p: Vec<f64>,
    dh: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Self {
        Self { input, hidden, classes }
    }

    /// `N_bar`
    pub fn num_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    /// Uniform fan-in scaled weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut w = vec![0.0; self.num_params()];
        let (b1, w2, b2) = self.offsets();
        let a1 = (6.0 / self.input as f64).sqrt();
        let a2 = (6.0 / self.hidden as f64).sqrt();
        w[..b1].iter_mut().for_each(|x| *x = rng.random_range(-a1..a1));
        w[w2..b2].iter_mut().for_each(|x| *x = rng.random_range(-a2..a2));
        w
    }

    fn scratch(&self) -> Scratch {
        Scratch { h: vec![0.0; self.hidden], p: vec![0.0; self.classes], dh: vec![0.0; self.hidden] }
    }

    fn forward_into(&self, w: &[f64], x: &[f64], s: &mut Scratch) {
        let (b1, w2, b2) = self.offsets();
        for j in 0..self.hidden {
            let z = dot(&w[j * self.input..(j + 1) * self.input], x) + w[b1 + j];
            s.h[j] = z.max(0.0);
        }
        for c in 0..self.classes {
            s.p[c] = dot(&w[w2 + c * self.hidden..w2 + (c + 1) * self.hidden], &s.h) + w[b2 + c];
        }
        let max = s.p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in s.p.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        s.p.iter_mut().for_each(|v| *v /= total);
    }

    /// Softmax output for one sample.
    pub fn forward(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let mut s = self.scratch();
        self.forward_into(w, x, &mut s);
        s.p
    }

    /// Mean cross-entropy over `indices` and its gradient (written to `grad`).
    pub fn loss_and_grad(&self, w: &[f64], data: &Dataset, indices: &[usize], grad: &mut [f64]) -> f64 {
        assert_eq!(grad.len(), self.num_params());
        grad.iter_mut().for_each(|g| *g = 0.0);
        if indices.is_empty() {
            return 0.0;
        }
        let (b1, w2, b2) = self.offsets();
        let scale = 1.0 / indices.len() as f64;
        let mut s = self.scratch();
        let mut loss = 0.0;
        for &i in indices {
            let x = data.sample(i);
            let y = data.label(i);
            self.forward_into(w, x, &mut s);
            loss -= s.p[y].max(1e-300).ln();
            // dL/dlogits = p - onehot
            s.p[y] -= 1.0;
            s.dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..self.classes {
                let d = s.p[c] * scale;
                grad[b2 + c] += d;
                let row = w2 + c * self.hidden;
                axpy(d, &s.h, &mut grad[row..row + self.hidden]);
                axpy(d, &w[row..row + self.hidden], &mut s.dh);
            }
            for j in 0..self.hidden {
                if s.h[j] <= 0.0 {
                    continue;
                }
                let d = s.dh[j];
                grad[b1 + j] += d;
                axpy(d, x, &mut grad[j * self.input..(j + 1) * self.input]);
            }
        }
        loss * scale
    }

    /// Mean cross-entropy and accuracy over `indices` (all samples when `None`).
    pub fn evaluate(&self, w: &[f64], data: &Dataset, indices: Option<&[usize]>) -> (f64, f64) {
        let mut s = self.scratch();
        let mut loss = 0.0;
        let mut correct = 0usize;
        let all: Vec<usize>;
        let idx = match indices {
            Some(i) => i,
            None => {
                all = (0..data.len()).collect();
                &all
            }
        };
        for &i in idx {
            self.forward_into(w, data.sample(i), &mut s);
            let y = data.label(i);
            loss -= s.p[y].max(1e-300).ln();
            let pred = (0..self.classes).fold(0, |b, c| if s.p[c] > s.p[b] { c } else { b });
            correct += usize::from(pred == y);
        }
        let n = idx.len().max(1) as f64;
        (loss / n, correct as f64 / n)
    }
}
