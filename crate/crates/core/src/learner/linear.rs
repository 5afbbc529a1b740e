use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::Classifier;

/// Optimizer settings for [`train_weighted`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    /// Mini-batch size; values `>= n` mean full-batch gradient descent.
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.1,
            l2: 5e-4,
            batch_size: 128,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Softmax regression `p(y|x) = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Row-major `k x d`.
    w: Vec<f64>,
    b: Vec<f64>,
    k: usize,
    d: usize,
    pub train_meta: Option<TrainMeta>,
}

#[derive(Serialize, Deserialize)]
struct ModelWire {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    k: usize,
    d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_meta: Option<TrainMeta>,
}

impl Serialize for LinearModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelWire {
            w: self.w.chunks(self.d.max(1)).map(<[f64]>::to_vec).collect(),
            b: self.b.clone(),
            k: self.k,
            d: self.d,
            train_meta: self.train_meta,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = ModelWire::deserialize(d)?;
        let flat: Vec<f64> = wire.w.iter().flatten().copied().collect();
        if wire.w.len() != wire.k || wire.w.iter().any(|row| row.len() != wire.d) {
            return Err(serde::de::Error::custom("W does not have shape k x d"));
        }
        let mut m = LinearModel::from_parts(flat, wire.b, wire.k, wire.d).map_err(serde::de::Error::custom)?;
        m.train_meta = wire.train_meta;
        Ok(m)
    }
}

impl LinearModel {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            w: vec![0.0; k * d],
            b: vec![0.0; k],
            k,
            d,
            train_meta: None,
        }
    }

    pub fn from_parts(w: Vec<f64>, b: Vec<f64>, k: usize, d: usize) -> Result<Self> {
        if w.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                got: w.len(),
            });
        }
        if b.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: b.len(),
            });
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            w,
            b,
            k,
            d,
            train_meta: None,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        let mut z = vec![0.0; self.k];
        self.logits_into(x, &mut z);
        Ok(z)
    }

    fn logits_into(&self, x: &[f64], z: &mut [f64]) {
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.w[c * self.d..(c + 1) * self.d];
            *zc = self.b[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn proba_into(&self, x: &[f64], p: &mut [f64]) {
        self.logits_into(x, p);
        softmax_in_place(p);
    }
}

impl Classifier for LinearModel {
    fn k(&self) -> usize {
        self.k
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

fn check_weights(data: &Dataset, weights: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if weights.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::NonFinite("example weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(total)
}

/// Accumulates `sum_i w_i * d CE_i / d(W, b)` over `indices` into the
/// gradient buffers and returns `sum_i w_i * CE_i`.
fn accumulate(
    model: &LinearModel,
    data: &Dataset,
    weights: &[f64],
    indices: &[usize],
    gw: &mut [f64],
    gb: &mut [f64],
) -> f64 {
    let (k, d) = (model.k, model.d);
    let mut p = vec![0.0; k];
    let mut loss = 0.0;
    for &i in indices {
        let wi = weights[i];
        if wi == 0.0 {
            continue;
        }
        let x = data.row(i);
        let y = data.label(i);
        model.proba_into(x, &mut p);
        loss -= wi * p[y].max(f64::MIN_POSITIVE).ln();
        p[y] -= 1.0;
        for c in 0..k {
            let g = wi * p[c];
            gb[c] += g;
            let row = &mut gw[c * d..(c + 1) * d];
            for (gj, xj) in row.iter_mut().zip(x) {
                *gj += g * xj;
            }
        }
    }
    loss
}

/// Full objective `sum_i w_i CE_i / sum_i w_i + (l2 / 2) ||W||^2` and its
/// gradient `(dW, db)`. The bias is not regularized.
pub fn loss_and_grad(
    model: &LinearModel,
    data: &Dataset,
    weights: &[f64],
    l2: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let total = check_weights(data, weights)?;
    if data.d() != model.d || data.k() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: data.d(),
        });
    }
    let mut gw = vec![0.0; model.k * model.d];
    let mut gb = vec![0.0; model.k];
    let all: Vec<usize> = (0..data.n()).collect();
    let loss = accumulate(model, data, weights, &all, &mut gw, &mut gb) / total;
    for (g, w) in gw.iter_mut().zip(&model.w) {
        *g = *g / total + l2 * w;
    }
    for g in gb.iter_mut() {
        *g /= total;
    }
    let reg = 0.5 * l2 * model.w.iter().map(|w| w * w).sum::<f64>();
    Ok((loss + reg, gw, gb))
}

/// Weighted softmax regression by mini-batch gradient descent with momentum,
/// starting from zero parameters.
///
/// Mini-batch gradients are normalized by `mean(w) * |batch|` so they are
/// unbiased for the full objective. In full-batch mode no randomness is used.
pub fn train_weighted(data: &Dataset, weights: &[f64], hyper: &TrainHyper, rng: &RngStream) -> Result<LinearModel> {
    let total = check_weights(data, weights)?;
    let n = data.n();
    let (k, d) = (data.k(), data.d());
    let mean_w = total / n as f64;
    let mut model = LinearModel::zeros(k, d);
    let mut vw = vec![0.0; k * d];
    let mut vb = vec![0.0; k];
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut order: Vec<usize> = (0..n).collect();
    let full_batch = hyper.batch_size == 0 || hyper.batch_size >= n;
    let batch = if full_batch { n } else { hyper.batch_size };
    let mut g = rng.rng();

    for _ in 0..hyper.epochs {
        if !full_batch {
            order.shuffle(&mut g);
        }
        for chunk in order.chunks(batch) {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
            accumulate(&model, data, weights, chunk, &mut gw, &mut gb);
            let norm = if full_batch { total } else { mean_w * chunk.len() as f64 };
            for ((v, gj), w) in vw.iter_mut().zip(&gw).zip(&model.w) {
                *v = hyper.momentum * *v + gj / norm + hyper.l2 * w;
            }
            for (v, gj) in vb.iter_mut().zip(&gb) {
                *v = hyper.momentum * *v + gj / norm;
            }
            for (w, v) in model.w.iter_mut().zip(&vw) {
                *w -= hyper.lr * v;
            }
            for (b, v) in model.b.iter_mut().zip(&vb) {
                *b -= hyper.lr * v;
            }
        }
    }
    if model.w.iter().chain(&model.b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training diverged"));
    }
    model.train_meta = Some(TrainMeta {
        epochs: hyper.epochs,
        lr: hyper.lr,
        seed: rng.seed,
    });
    Ok(model)
}
