//! Flat-parameter classifiers with cross-entropy loss and hand-written gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::{FlError, Result};
use crate::scalar::Scalar;

pub const MLP_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Multinomial logistic regression.
    #[default]
    SoftmaxRegression,
    /// One tanh hidden layer of [`MLP_HIDDEN`] units.
    Mlp1,
}

/// Architecture plus input and output sizes. Parameters live in a flat vector:
/// softmax is `[W (classes × dim), b]`, the MLP is `[W1 (hidden × dim), b1, W2 (classes × hidden), b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Model {
    pub arch: Architecture,
    pub dim: usize,
    pub classes: usize,
}

/// Scratch space for one forward/backward pass.
struct Buffers<S> {
    hidden: Vec<S>,
    logits: Vec<S>,
    dhidden: Vec<S>,
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    y.iter_mut().zip(x).for_each(|(y, &x)| *y += alpha * x);
}

/// Turns logits into probabilities in place and returns `-log p[label]`.
fn softmax_xent<S: Scalar>(z: &mut [S], label: usize) -> S {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let shifted = z[label] - max;
    let mut sum = S::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    sum.ln() - shifted
}

impl Model {
    pub fn new(arch: Architecture, dim: usize, classes: usize) -> Self {
        Self { arch, dim, classes }
    }

    pub fn for_data<S: Scalar>(arch: Architecture, data: &Dataset<S>) -> Self {
        Self::new(arch, data.dim(), data.classes())
    }

    pub fn num_params(&self) -> usize {
        match self.arch {
            Architecture::SoftmaxRegression => self.classes * (self.dim + 1),
            Architecture::Mlp1 => MLP_HIDDEN * (self.dim + 1) + self.classes * (MLP_HIDDEN + 1),
        }
    }

    /// Zero weights for softmax; scaled Gaussian first layer and zero head for the MLP.
    pub fn init<S: Scalar>(&self, seed: u64) -> Vec<S> {
        let mut theta = vec![S::zero(); self.num_params()];
        if self.arch == Architecture::Mlp1 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / (self.dim as f64).sqrt();
            for w in &mut theta[..MLP_HIDDEN * self.dim] {
                *w = S::of(scale * rng.sample::<f64, _>(StandardNormal));
            }
        }
        theta
    }

    fn buffers<S: Scalar>(&self) -> Buffers<S> {
        Buffers {
            hidden: vec![S::zero(); MLP_HIDDEN],
            logits: vec![S::zero(); self.classes],
            dhidden: vec![S::zero(); MLP_HIDDEN],
        }
    }

    fn forward<S: Scalar>(&self, theta: &[S], x: &[S], buf: &mut Buffers<S>) {
        let (d, k) = (self.dim, self.classes);
        match self.arch {
            Architecture::SoftmaxRegression => {
                let (w, b) = theta.split_at(k * d);
                for j in 0..k {
                    buf.logits[j] = dot(&w[j * d..(j + 1) * d], x) + b[j];
                }
            }
            Architecture::Mlp1 => {
                let h = MLP_HIDDEN;
                let (w1, rest) = theta.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                for i in 0..h {
                    buf.hidden[i] = (dot(&w1[i * d..(i + 1) * d], x) + b1[i]).tanh();
                }
                for j in 0..k {
                    buf.logits[j] = dot(&w2[j * h..(j + 1) * h], &buf.hidden) + b2[j];
                }
            }
        }
    }

    /// Adds `scale * d loss / d theta` for one sample to `grad`, given probabilities in `buf.logits`.
    fn backward<S: Scalar>(&self, theta: &[S], x: &[S], label: usize, scale: S, buf: &mut Buffers<S>, grad: &mut [S]) {
        let (d, k) = (self.dim, self.classes);
        buf.logits[label] -= S::one();
        match self.arch {
            Architecture::SoftmaxRegression => {
                let (gw, gb) = grad.split_at_mut(k * d);
                for j in 0..k {
                    let dz = scale * buf.logits[j];
                    axpy(dz, x, &mut gw[j * d..(j + 1) * d]);
                    gb[j] += dz;
                }
            }
            Architecture::Mlp1 => {
                let h = MLP_HIDDEN;
                let w2 = &theta[h * d + h..h * d + h + k * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(k * h);
                buf.dhidden.iter_mut().for_each(|v| *v = S::zero());
                for j in 0..k {
                    let dz = scale * buf.logits[j];
                    axpy(dz, &buf.hidden, &mut gw2[j * h..(j + 1) * h]);
                    gb2[j] += dz;
                    axpy(dz, &w2[j * h..(j + 1) * h], &mut buf.dhidden);
                }
                for i in 0..h {
                    let da = buf.dhidden[i] * (S::one() - buf.hidden[i] * buf.hidden[i]);
                    axpy(da, x, &mut gw1[i * d..(i + 1) * d]);
                    gb1[i] += da;
                }
            }
        }
    }

    /// Mean cross-entropy over `indices`, writing its gradient into `grad`.
    pub fn loss_grad<S: Scalar>(&self, theta: &[S], data: &Dataset<S>, indices: &[usize], grad: &mut [S]) -> S {
        grad.iter_mut().for_each(|g| *g = S::zero());
        let mut buf = self.buffers();
        let scale = S::one() / S::of_usize(indices.len());
        let mut total = S::zero();
        for &i in indices {
            self.forward(theta, data.x(i), &mut buf);
            total += softmax_xent(&mut buf.logits, data.y(i));
            self.backward(theta, data.x(i), data.y(i), scale, &mut buf, grad);
        }
        total * scale
    }

    pub fn loss<S: Scalar>(&self, theta: &[S], data: &Dataset<S>, indices: &[usize]) -> S {
        let mut buf = self.buffers();
        let total: S = indices
            .iter()
            .map(|&i| {
                self.forward(theta, data.x(i), &mut buf);
                softmax_xent(&mut buf.logits, data.y(i))
            })
            .sum();
        total / S::of_usize(indices.len())
    }

    /// Accuracy (argmax, ties to the lowest class) and mean cross-entropy on `test`.
    pub fn evaluate<S: Scalar>(&self, theta: &[S], test: &Dataset<S>) -> Result<(S, S)> {
        if test.is_empty() {
            return Err(FlError::EmptyTestSet);
        }
        let mut buf = self.buffers();
        let mut correct = 0usize;
        let mut total = S::zero();
        for i in 0..test.len() {
            self.forward(theta, test.x(i), &mut buf);
            let mut best = 0;
            for j in 1..self.classes {
                if buf.logits[j] > buf.logits[best] {
                    best = j;
                }
            }
            correct += usize::from(best == test.y(i));
            total += softmax_xent(&mut buf.logits, test.y(i));
        }
        let n = S::of_usize(test.len());
        Ok((S::of_usize(correct) / n, total / n))
    }
}
