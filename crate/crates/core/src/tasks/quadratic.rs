use rand::Rng;
use rand_distr::StandardNormal;

use super::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

/// Number of noise-carrying training examples behind each quadratic task.
pub(crate) const TRAIN_EXAMPLES: usize = 64;

const LANDSCAPE_DIM: usize = 8;
const LANDSCAPE_CONDITION: f64 = 4.0;
const LANDSCAPE_FLOOR: f64 = 1.0;
const LANDSCAPE_NOISE: f64 = 0.05;
const LANDSCAPE_SPREAD: f64 = 2.0;

/// `½(θ−θ*)ᵀD(θ−θ*) + floor`, plus a per-batch linear noise term `ξ̄ᵀ(θ−θ*)`
/// on training batches.
#[derive(Debug, Clone)]
pub(crate) struct Quadratic {
    pub curvature: Vec<f64>,
    pub optimum: Vec<f64>,
    pub floor: f64,
    pub noise_scale: f64,
    /// Unit noise directions in `[-1, 1]^dim`, one row per training example.
    pub train: Dataset,
}

impl Quadratic {
    pub fn new(
        dim: usize,
        condition_number: f64,
        seed: u64,
        spread: f64,
        floor: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("quadratic dimension must be >= 1"));
        }
        if !condition_number.is_finite() || condition_number < 1.0 {
            return Err(Error::invalid(format!(
                "condition number must be finite and >= 1, got {condition_number}"
            )));
        }
        let curvature = (0..dim)
            .map(|i| {
                if dim == 1 {
                    1.0
                } else {
                    condition_number.powf(i as f64 / (dim - 1) as f64)
                }
            })
            .collect();
        let mut rng = rng_from(derive_seed(&["quadratic-optimum".into(), seed.into()]));
        let optimum = (0..dim)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut rng = rng_from(derive_seed(&["quadratic-noise".into(), seed.into()]));
        let inputs = (0..TRAIN_EXAMPLES * dim)
            .map(|_| 2.0 * rng.random::<f64>() - 1.0)
            .collect();
        Ok(Self {
            curvature,
            optimum,
            floor,
            noise_scale: 0.0,
            train: Dataset {
                dim,
                inputs,
                labels: Vec::new(),
            },
        })
    }

    pub fn landscape(seed: u64) -> Self {
        let mut q = Self::new(
            LANDSCAPE_DIM,
            LANDSCAPE_CONDITION,
            seed,
            LANDSCAPE_SPREAD,
            LANDSCAPE_FLOOR,
        )
        .expect("landscape constants are valid");
        q.noise_scale = LANDSCAPE_NOISE;
        q
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }

    pub fn validation_len(&self) -> usize {
        // The validation metric is the noise-free population objective.
        0
    }

    pub fn basin_center_lr(&self) -> f64 {
        let lo = self.curvature.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.curvature.iter().copied().fold(0.0, f64::max);
        2.0 / (lo + hi)
    }

    pub fn population_loss(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((x, s), d) in theta.iter().zip(&self.optimum).zip(&self.curvature) {
            let delta = x - s;
            acc += d * delta * delta;
        }
        0.5 * acc + self.floor
    }

    fn batch_noise(&self, batch: &Batch) -> Option<Vec<f64>> {
        if self.noise_scale == 0.0 {
            return None;
        }
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        for &i in &batch.indices {
            for (m, u) in mean.iter_mut().zip(self.train.row(i)) {
                *m += u;
            }
        }
        let scale = self.noise_scale / batch.len() as f64;
        for m in &mut mean {
            *m *= scale;
        }
        debug_assert_eq!(mean.len(), dim);
        Some(mean)
    }

    pub fn loss(&self, theta: &[f64], batch: &Batch) -> f64 {
        let mut loss = self.population_loss(theta);
        if let Some(noise) = self.batch_noise(batch) {
            for ((x, s), n) in theta.iter().zip(&self.optimum).zip(&noise) {
                loss += n * (x - s);
            }
        }
        loss
    }

    pub fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
        let loss = self.loss(theta, batch);
        let mut grad: Vec<f64> = theta
            .iter()
            .zip(&self.optimum)
            .zip(&self.curvature)
            .map(|((x, s), d)| d * (x - s))
            .collect();
        if let Some(noise) = self.batch_noise(batch) {
            for (g, n) in grad.iter_mut().zip(&noise) {
                *g += n;
            }
        }
        (loss, grad)
    }
}
