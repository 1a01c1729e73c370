//! Fully connected feed-forward network: rectifier hidden layers, softmax or
//! linear output, trained by mini-batch RMSProp.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::softmax::softmax_in_place;
use crate::domain::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.001,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Softmax,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
    pub output: OutputKind,
}

/// Training targets for a network; class labels are 0-based.
#[derive(Clone, Copy, Debug)]
pub enum MlpTargets<'a, T> {
    Classes(&'a [usize]),
    Values(&'a [T]),
}

impl<T: Scalar> MlpParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(inputs: usize, hidden: &[usize], outputs: usize, output: OutputKind, rng: &mut impl Rng) -> Self {
        let mut dims = vec![inputs];
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        let layers = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| T::lit(rng.random_range(-limit..=limit))).collect(),
                    bias: vec![T::zero(); w[1]],
                }
            })
            .collect();
        Self { layers, output }
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }

    /// Activations of every layer for the given rows; the last entry holds
    /// the network output (softmax probabilities or linear values).
    fn forward(&self, x: &Matrix<T>, rows: &[usize]) -> Vec<Vec<T>> {
        let b = rows.len();
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() + 1);
        let mut input = Vec::with_capacity(b * x.cols());
        for &r in rows {
            input.extend_from_slice(x.row(r));
        }
        acts.push(input);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = &acts[li];
            let mut out = vec![T::zero(); b * layer.outputs];
            for s in 0..b {
                let xin = &prev[s * layer.inputs..(s + 1) * layer.inputs];
                let o = &mut out[s * layer.outputs..(s + 1) * layer.outputs];
                for (j, oj) in o.iter_mut().enumerate() {
                    let w = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
                    *oj = w.iter().zip(xin).map(|(&a, &v)| a * v).sum::<T>() + layer.bias[j];
                }
                if li < last {
                    o.iter_mut().for_each(|v| *v = v.max(T::zero()));
                } else if self.output == OutputKind::Softmax {
                    softmax_in_place(o);
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Network outputs for all rows, `m x outputs`.
    pub fn outputs(&self, x: &Matrix<T>) -> Matrix<T> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut acts = self.forward(x, &rows);
        let out = acts.pop().expect("at least one layer");
        Matrix::new(x.rows(), self.num_outputs(), out).expect("shape")
    }

    /// Mean loss over `rows` (cross-entropy for softmax output, squared error
    /// for linear output) and its gradient in [`MlpParams::to_flat`] layout.
    pub fn loss_and_gradient(&self, x: &Matrix<T>, targets: MlpTargets<'_, T>, rows: &[usize]) -> (T, Vec<T>) {
        let b = rows.len();
        let bf = T::from_usize_lossy(b.max(1));
        let acts = self.forward(x, rows);
        let out = &acts[self.layers.len()];
        let k = self.num_outputs();
        let mut delta = vec![T::zero(); b * k];
        let mut loss = T::zero();
        let clamp = T::lit(crate::losses::LOG_CLAMP);
        match targets {
            MlpTargets::Classes(labels) => {
                for (s, &r) in rows.iter().enumerate() {
                    let p = &out[s * k..(s + 1) * k];
                    loss -= p[labels[r]].max(clamp).ln();
                    for j in 0..k {
                        let t = if j == labels[r] { T::one() } else { T::zero() };
                        delta[s * k + j] = (p[j] - t) / bf;
                    }
                }
            }
            MlpTargets::Values(values) => {
                let kf = T::from_usize_lossy(k);
                for (s, &r) in rows.iter().enumerate() {
                    for j in 0..k {
                        let e = out[s * k + j] - values[r];
                        loss += e * e / kf;
                        delta[s * k + j] = T::lit(2.0) * e / (bf * kf);
                    }
                }
            }
        }
        loss /= bf;

        let mut grads: Vec<(Vec<T>, Vec<T>)> = self
            .layers
            .iter()
            .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
            .collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let (gw, gb) = &mut grads[li];
            for s in 0..b {
                let d = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                let xin = &input[s * layer.inputs..(s + 1) * layer.inputs];
                for (j, &dj) in d.iter().enumerate() {
                    if dj == T::zero() {
                        continue;
                    }
                    gb[j] += dj;
                    let row = &mut gw[j * layer.inputs..(j + 1) * layer.inputs];
                    for (g, &v) in row.iter_mut().zip(xin) {
                        *g += dj * v;
                    }
                }
            }
            if li == 0 {
                break;
            }
            let mut prev_delta = vec![T::zero(); b * layer.inputs];
            for s in 0..b {
                let d = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                let pd = &mut prev_delta[s * layer.inputs..(s + 1) * layer.inputs];
                for (j, &dj) in d.iter().enumerate() {
                    if dj == T::zero() {
                        continue;
                    }
                    let w = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
                    for (p, &wv) in pd.iter_mut().zip(w) {
                        *p += dj * wv;
                    }
                }
                // rectifier derivative from the stored post-activation
                let a = &input[s * layer.inputs..(s + 1) * layer.inputs];
                for (p, &av) in pd.iter_mut().zip(a) {
                    if av <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
            delta = prev_delta;
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss, flat)
    }
}

pub(crate) struct MlpFit<T> {
    pub params: MlpParams<T>,
    /// RMSProp squared-gradient averages, flat in parameter order.
    pub cache: Vec<T>,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Parameters and optimizer state to continue training from.
pub(crate) struct MlpStart<'a, T> {
    pub params: &'a MlpParams<T>,
    pub cache: &'a [T],
}

pub(crate) fn fit_mlp<T: Scalar>(
    cfg: &MlpConfig,
    x: &Matrix<T>,
    targets: MlpTargets<'_, T>,
    outputs: usize,
    output: OutputKind,
    seed: u64,
    start: Option<MlpStart<'_, T>>,
) -> Result<MlpFit<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut params, mut cache) = match start {
        Some(s) => {
            let mut dims = vec![x.cols()];
            dims.extend_from_slice(&cfg.hidden);
            dims.push(outputs);
            let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            if s.params.num_params() != expected
                || s.params.layers.len() + 1 != dims.len()
                || s.params.output != output
                || s.cache.len() != expected
            {
                return crate::error::usage("warm start from a network of a different shape");
            }
            (s.params.clone(), s.cache.to_vec())
        }
        None => {
            let p = MlpParams::init(x.cols(), &cfg.hidden, outputs, output, &mut rng);
            let n = p.num_params();
            (p, vec![T::zero(); n])
        }
    };
    let lr = T::lit(cfg.learning_rate);
    let rho = T::lit(cfg.rho);
    let eps = T::lit(cfg.epsilon);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let batch = cfg.batch_size.max(1);
    let mut flat = params.to_flat();
    let mut epoch_loss = T::zero();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        epoch_loss = T::zero();
        for chunk in order.chunks(batch) {
            params.set_flat(&flat);
            let (loss, grad) = params.loss_and_gradient(x, targets, chunk);
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    message: format!("network loss became non-finite in epoch {epoch}"),
                    residual: loss.as_f64(),
                });
            }
            epoch_loss += loss * T::from_usize_lossy(chunk.len());
            for ((w, c), &g) in flat.iter_mut().zip(cache.iter_mut()).zip(&grad) {
                *c = rho * *c + (T::one() - rho) * g * g;
                *w -= lr * g / (c.sqrt() + eps);
            }
        }
        epoch_loss /= T::from_usize_lossy(x.rows().max(1));
    }
    params.set_flat(&flat);
    Ok(MlpFit {
        params,
        cache,
        final_loss: epoch_loss.as_f64(),
        epochs: cfg.epochs,
    })
}
