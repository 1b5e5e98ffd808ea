use rand::Rng;
use rand_distr::StandardNormal;

use super::{LayerShape, ParamVector};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

pub(crate) const DEFAULT_BATCH: usize = 32;

/// Standard deviation of the blob centers around the origin.
const CENTER_SPREAD: f64 = 1.0;

/// Row-major example matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub inputs: Vec<f64>,
    /// Empty for unlabelled data.
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subset must contain at least one example"));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::new();
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("example index {i} out of range")));
            }
            inputs.extend_from_slice(self.row(i));
            if !self.labels.is_empty() {
                labels.push(self.labels[i]);
            }
        }
        Ok(Self {
            dim: self.dim,
            inputs,
            labels,
        })
    }
}

/// Softmax classifier over Gaussian blobs, either linear (`hidden = None`) or
/// with one tanh hidden layer.
#[derive(Debug, Clone)]
pub(crate) struct Classifier {
    pub n_classes: usize,
    pub hidden: Option<usize>,
    pub train: Dataset,
    pub validation: Dataset,
}

fn blobs(n: usize, centers: &[Vec<f64>], rng: &mut impl Rng) -> Dataset {
    let k = centers.len();
    let dim = centers[0].len();
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        for c in &centers[class] {
            inputs.push(c + rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(class);
    }
    Dataset {
        dim,
        inputs,
        labels,
    }
}

impl Classifier {
    pub fn new(
        n_samples: usize,
        dim: usize,
        hidden: Option<usize>,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if dim == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        if n_samples < 10 * n_classes {
            return Err(Error::invalid(format!(
                "need at least {} samples for {n_classes} classes, got {n_samples}",
                10 * n_classes
            )));
        }
        let mut rng = rng_from(derive_seed(&["blob-centers".into(), seed.into()]));
        let centers: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| {
                (0..dim)
                    .map(|_| CENTER_SPREAD * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut rng = rng_from(derive_seed(&["blob-train".into(), seed.into()]));
        let train = blobs(n_samples, &centers, &mut rng);
        let mut rng = rng_from(derive_seed(&["blob-validation".into(), seed.into()]));
        let validation = blobs((n_samples / 4).max(n_classes), &centers, &mut rng);
        Ok(Self {
            n_classes,
            hidden,
            train,
            validation,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let (d, k) = (self.dim(), self.n_classes);
        match self.hidden {
            None => vec![
                LayerShape::new("weights", &[d, k]),
                LayerShape::new("bias", &[k]),
            ],
            Some(h) => vec![
                LayerShape::new("hidden_weights", &[d, h]),
                LayerShape::new("hidden_bias", &[h]),
                LayerShape::new("output_weights", &[h, k]),
                LayerShape::new("output_bias", &[k]),
            ],
        }
    }

    /// Zero for the linear model; scaled Gaussian weights for the MLP so the
    /// hidden units are not all identical.
    pub fn initial_params(&self, seed: u64) -> ParamVector {
        let mut p = ParamVector::zeros(&self.layout());
        if let Some(h) = self.hidden {
            let mut rng = rng_from(derive_seed(&["mlp-init".into(), seed.into()]));
            let s1 = (1.0 / self.dim() as f64).sqrt();
            let s2 = (1.0 / h as f64).sqrt();
            for w in &mut p.layers[0] {
                *w = s1 * rng.sample::<f64, _>(StandardNormal);
            }
            for w in &mut p.layers[2] {
                *w = s2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    /// Writes the logits of example `x` into `logits` and, for the MLP, the
    /// hidden activations into `act`.
    fn forward(&self, theta: &ParamVector, x: &[f64], act: &mut [f64], logits: &mut [f64]) {
        let k = self.n_classes;
        match self.hidden {
            None => {
                let (w, b) = (&theta.layers[0], &theta.layers[1]);
                logits.copy_from_slice(b);
                for (j, xj) in x.iter().enumerate() {
                    let row = &w[j * k..(j + 1) * k];
                    for (z, wjk) in logits.iter_mut().zip(row) {
                        *z += xj * wjk;
                    }
                }
            }
            Some(h) => {
                let (w1, b1, w2, b2) = (
                    &theta.layers[0],
                    &theta.layers[1],
                    &theta.layers[2],
                    &theta.layers[3],
                );
                act.copy_from_slice(b1);
                for (j, xj) in x.iter().enumerate() {
                    let row = &w1[j * h..(j + 1) * h];
                    for (a, w) in act.iter_mut().zip(row) {
                        *a += xj * w;
                    }
                }
                for a in act.iter_mut() {
                    *a = a.tanh();
                }
                logits.copy_from_slice(b2);
                for (u, au) in act.iter().enumerate() {
                    let row = &w2[u * k..(u + 1) * k];
                    for (z, w) in logits.iter_mut().zip(row) {
                        *z += au * w;
                    }
                }
            }
        }
    }

    /// Mean softmax cross-entropy over `indices` of `data`, with the gradient
    /// when `want_grad` is set.
    pub fn loss_and_grad(
        &self,
        theta: &ParamVector,
        data: &Dataset,
        indices: &[usize],
        want_grad: bool,
    ) -> (f64, Option<ParamVector>) {
        let k = self.n_classes;
        let h = self.hidden.unwrap_or(0);
        let mut act = vec![0.0; h];
        let mut logits = vec![0.0; k];
        let mut dact = vec![0.0; h];
        let mut grad = want_grad.then(|| ParamVector::zeros(&self.layout()));
        let inv_n = 1.0 / indices.len() as f64;
        let mut loss = 0.0;

        for &i in indices {
            let x = data.row(i);
            let y = data.labels[i];
            self.forward(theta, x, &mut act, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let shifted_target = logits[y] - max;
            let mut sum = 0.0;
            for z in logits.iter_mut() {
                *z = (*z - max).exp();
                sum += *z;
            }
            loss += sum.ln() - shifted_target;
            let Some(g) = grad.as_mut() else { continue };
            for z in logits.iter_mut() {
                *z /= sum;
            }
            logits[y] -= 1.0;
            let dz = &logits;
            match self.hidden {
                None => {
                    for (j, xj) in x.iter().enumerate() {
                        let row = &mut g.layers[0][j * k..(j + 1) * k];
                        for (gw, d) in row.iter_mut().zip(dz) {
                            *gw += inv_n * xj * d;
                        }
                    }
                    for (gb, d) in g.layers[1].iter_mut().zip(dz) {
                        *gb += inv_n * d;
                    }
                }
                Some(_) => {
                    let w2 = &theta.layers[2];
                    for (u, au) in act.iter().enumerate() {
                        let row = &mut g.layers[2][u * k..(u + 1) * k];
                        let mut back = 0.0;
                        for ((gw, d), w) in row.iter_mut().zip(dz).zip(&w2[u * k..(u + 1) * k]) {
                            *gw += inv_n * au * d;
                            back += w * d;
                        }
                        dact[u] = back * (1.0 - au * au);
                    }
                    for (gb, d) in g.layers[3].iter_mut().zip(dz) {
                        *gb += inv_n * d;
                    }
                    for (j, xj) in x.iter().enumerate() {
                        let row = &mut g.layers[0][j * h..(j + 1) * h];
                        for (gw, d) in row.iter_mut().zip(&dact) {
                            *gw += inv_n * xj * d;
                        }
                    }
                    for (gb, d) in g.layers[1].iter_mut().zip(&dact) {
                        *gb += inv_n * d;
                    }
                }
            }
        }
        (loss * inv_n, grad)
    }

    /// Fraction of correctly classified examples. Ties in the argmax go to
    /// the lowest class index.
    pub fn accuracy(&self, theta: &ParamVector, data: &Dataset) -> f64 {
        let mut act = vec![0.0; self.hidden.unwrap_or(0)];
        let mut logits = vec![0.0; self.n_classes];
        let mut correct = 0usize;
        for i in 0..data.len() {
            self.forward(theta, data.row(i), &mut act, &mut logits);
            let mut best = 0;
            for c in 1..logits.len() {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            if best == data.labels[i] {
                correct += 1;
            }
        }
        correct as f64 / data.len() as f64
    }
}
