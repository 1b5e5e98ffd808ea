//! Deterministic desk-scale training problems.
//!
//! Every task exposes a minibatch loss with an exact hand-derived gradient and
//! a validation metric. Tasks are immutable once built; evaluation is a pure
//! function of `(task, θ, batch)`.

mod classifier;
mod params;
mod quadratic;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Diverged, Error, Result};
use crate::seed::{derive_seed, rng_from};

pub use classifier::Dataset;
pub(crate) use params::l2_norm;
pub use params::{relative_error, LayerShape, ParamVector};

use classifier::Classifier;
use quadratic::Quadratic;

/// Losses whose magnitude exceeds this value count as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    HigherBetter,
    LowerBetter,
}

impl MetricDirection {
    /// True when `a` is strictly better than `b`.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            MetricDirection::HigherBetter => a > b,
            MetricDirection::LowerBetter => a < b,
        }
    }

    pub fn best(self, a: f64, b: f64) -> f64 {
        if self.is_better(b, a) {
            b
        } else {
            a
        }
    }

    /// Maps a metric onto a loss where smaller is always better.
    pub fn to_loss(self, metric: f64) -> f64 {
        match self {
            MetricDirection::HigherBetter => -metric,
            MetricDirection::LowerBetter => metric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    Logreg,
    Mlp,
    Landscape,
}

impl TaskKind {
    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::Logreg | TaskKind::Mlp)
    }
}

/// A minibatch: indices into the task's training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Self {
        assert!(!indices.is_empty(), "batch must be nonempty");
        Self { indices }
    }

    /// Every training example, in storage order.
    pub fn full(n: usize) -> Self {
        Self::new((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Problem {
    Quadratic(Quadratic),
    Classifier(Classifier),
}

#[derive(Debug, Clone)]
pub struct TaskDef {
    name: String,
    kind: TaskKind,
    seed: u64,
    layout: Vec<LayerShape>,
    batch_size: usize,
    direction: MetricDirection,
    problem: Problem,
    init: ParamVector,
}

impl TaskDef {
    #[allow(clippy::too_many_arguments)]
    fn build(
        name: &str,
        kind: TaskKind,
        seed: u64,
        layout: Vec<LayerShape>,
        batch_size: usize,
        direction: MetricDirection,
        problem: Problem,
        init: ParamVector,
    ) -> Result<Self> {
        let task = Self {
            name: name.to_string(),
            kind,
            seed,
            layout,
            batch_size,
            direction,
            problem,
            init,
        };
        task.validate()?;
        Ok(task)
    }

    fn validate(&self) -> Result<()> {
        if self.layout.is_empty() {
            return Err(Error::invalid("parameter layout must be nonempty"));
        }
        if self.batch_size == 0 || self.batch_size > self.train_len() {
            return Err(Error::invalid(format!(
                "batch size {} must lie in 1..={}",
                self.batch_size,
                self.train_len()
            )));
        }
        if !self.init.matches(&self.layout) {
            return Err(Error::invalid("initial parameters do not match layout"));
        }
        Ok(())
    }

    /// Diagonal quadratic `½(θ−θ*)ᵀD(θ−θ*)` with `D` log-spaced over
    /// `[1, condition_number]` and `θ*` drawn from `seed`. Noise-free until
    /// [`TaskDef::with_gradient_noise`] is applied.
    pub fn quadratic(dim: usize, condition_number: f64, seed: u64) -> Result<Self> {
        let q = Quadratic::new(dim, condition_number, seed, 1.0, 0.0)?;
        let layout = vec![LayerShape::new("theta", &[dim])];
        let batch = quadratic::TRAIN_EXAMPLES / 8;
        Self::build(
            "quadratic",
            TaskKind::Quadratic,
            seed,
            layout.clone(),
            batch,
            MetricDirection::LowerBetter,
            Problem::Quadratic(q),
            ParamVector::zeros(&layout),
        )
    }

    /// Softmax regression on seeded Gaussian blobs; metric is validation accuracy.
    pub fn logreg(n_samples: usize, dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let c = Classifier::new(n_samples, dim, None, n_classes, seed)?;
        let layout = c.layout();
        let init = ParamVector::zeros(&layout);
        let batch = classifier::DEFAULT_BATCH.min(n_samples);
        Self::build(
            "logreg",
            TaskKind::Logreg,
            seed,
            layout,
            batch,
            MetricDirection::HigherBetter,
            Problem::Classifier(c),
            init,
        )
    }

    /// One-hidden-layer tanh network on seeded Gaussian blobs.
    pub fn mlp(
        n_samples: usize,
        dim: usize,
        hidden: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if hidden < 1 {
            return Err(Error::invalid("mlp hidden width must be at least 1"));
        }
        let c = Classifier::new(n_samples, dim, Some(hidden), n_classes, seed)?;
        let layout = c.layout();
        let init = c.initial_params(seed);
        let batch = classifier::DEFAULT_BATCH.min(n_samples);
        Self::build(
            "mlp",
            TaskKind::Mlp,
            seed,
            layout,
            batch,
            MetricDirection::HigherBetter,
            Problem::Classifier(c),
            init,
        )
    }

    /// Sharp-basin quadratic used to contrast random search with Hyperband.
    ///
    /// Plain gradient descent converges only for learning rates below
    /// `2/λ_max`; the validation metric has a known floor of 1.0.
    pub fn synthetic_landscape(seed: u64) -> Self {
        let q = Quadratic::landscape(seed);
        let dim = q.dim();
        let layout = vec![LayerShape::new("theta", &[dim])];
        Self::build(
            "landscape",
            TaskKind::Landscape,
            seed,
            layout.clone(),
            quadratic::TRAIN_EXAMPLES / 8,
            MetricDirection::LowerBetter,
            Problem::Quadratic(q),
            ParamVector::zeros(&layout),
        )
        .expect("landscape construction is infallible")
    }

    /// Adds bounded per-example gradient noise of the given magnitude
    /// (quadratic-family tasks only).
    pub fn with_gradient_noise(mut self, scale: f64) -> Result<Self> {
        match &mut self.problem {
            Problem::Quadratic(q) if scale.is_finite() && scale >= 0.0 => {
                q.noise_scale = scale;
                Ok(self)
            }
            Problem::Quadratic(_) => Err(Error::invalid("noise scale must be finite and >= 0")),
            Problem::Classifier(_) => Err(Error::invalid(
                "gradient noise applies to quadratic tasks only",
            )),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Result<Self> {
        self.batch_size = batch_size;
        self.validate()?;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same task restricted to a subset of its training examples, in the
    /// given order. The validation split is shared.
    pub fn with_train_subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        match &mut out.problem {
            Problem::Classifier(c) => c.train = c.train.subset(indices)?,
            Problem::Quadratic(q) => q.train = q.train.subset(indices)?,
        }
        out.batch_size = out.batch_size.min(out.train_len());
        out.validate()?;
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn direction(&self) -> MetricDirection {
        self.direction
    }

    pub fn train_len(&self) -> usize {
        match &self.problem {
            Problem::Quadratic(q) => q.train.len(),
            Problem::Classifier(c) => c.train.len(),
        }
    }

    pub fn validation_len(&self) -> usize {
        match &self.problem {
            Problem::Quadratic(q) => q.validation_len(),
            Problem::Classifier(c) => c.validation.len(),
        }
    }

    /// Training labels, for classification tasks.
    pub fn train_labels(&self) -> Option<&[usize]> {
        match &self.problem {
            Problem::Classifier(c) => Some(&c.train.labels),
            Problem::Quadratic(_) => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.problem {
            Problem::Classifier(c) => Some(c.n_classes),
            Problem::Quadratic(_) => None,
        }
    }

    /// Batches per epoch.
    pub fn epoch_length(&self) -> usize {
        self.train_len().div_ceil(self.batch_size)
    }

    /// Initial parameters shared by every trial on this task.
    pub fn initial_params(&self) -> ParamVector {
        self.init.clone()
    }

    /// Metric value assigned to a diverged trial.
    pub fn worst_metric(&self) -> f64 {
        match self.direction {
            MetricDirection::HigherBetter => 0.0,
            MetricDirection::LowerBetter => DIVERGENCE_THRESHOLD,
        }
    }

    /// Best achievable validation metric, where known in closed form.
    pub fn known_optimum(&self) -> Option<f64> {
        match &self.problem {
            Problem::Quadratic(q) => Some(q.floor),
            Problem::Classifier(_) => None,
        }
    }

    /// Minimizer of the population objective, for quadratic-family tasks.
    pub fn optimum_params(&self) -> Option<ParamVector> {
        match &self.problem {
            Problem::Quadratic(q) => Some(ParamVector::from_vec(q.optimum.clone())),
            Problem::Classifier(_) => None,
        }
    }

    /// Learning rate `2/(λ_min + λ_max)` that minimizes the worst-case
    /// contraction of plain gradient descent on quadratic-family tasks.
    pub fn basin_center_lr(&self) -> Option<f64> {
        match &self.problem {
            Problem::Quadratic(q) => Some(q.basin_center_lr()),
            Problem::Classifier(_) => None,
        }
    }

    /// Minibatches for one epoch. The order is a shuffle keyed by the task
    /// seed and the epoch index only, so a resumed trial sees exactly the
    /// batches an uninterrupted one would.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.train_len()).collect();
        let mut rng = rng_from(derive_seed(&[
            "minibatch-order".into(),
            self.seed.into(),
            epoch.into(),
        ]));
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .map(|c| Batch::new(c.to_vec()))
            .collect()
    }

    fn check_params(&self, theta: &ParamVector) -> Result<(), Diverged> {
        assert!(
            theta.matches(&self.layout),
            "parameter shapes do not match task `{}`",
            self.name
        );
        if theta.is_finite() {
            Ok(())
        } else {
            Err(Diverged)
        }
    }

    /// Minibatch loss. Non-finite parameters or a loss beyond
    /// [`DIVERGENCE_THRESHOLD`] yield [`Diverged`].
    pub fn eval_loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64, Diverged> {
        self.check_params(theta)?;
        let loss = match &self.problem {
            Problem::Quadratic(q) => q.loss(&theta.layers[0], batch),
            Problem::Classifier(c) => c.loss_and_grad(theta, &c.train, &batch.indices, false).0,
        };
        check_loss(loss)
    }

    /// Analytic minibatch gradient.
    pub fn eval_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<ParamVector, Diverged> {
        self.loss_and_grad_unchecked(theta, batch).map(|(_, g)| g)
    }

    /// Loss and gradient in one pass, with the divergence checks of
    /// [`TaskDef::eval_loss`].
    pub fn loss_and_grad(
        &self,
        theta: &ParamVector,
        batch: &Batch,
    ) -> Result<(f64, ParamVector), Diverged> {
        let (loss, grad) = self.loss_and_grad_unchecked(theta, batch)?;
        Ok((check_loss(loss)?, grad))
    }

    fn loss_and_grad_unchecked(
        &self,
        theta: &ParamVector,
        batch: &Batch,
    ) -> Result<(f64, ParamVector), Diverged> {
        self.check_params(theta)?;
        let (loss, grad) = match &self.problem {
            Problem::Quadratic(q) => {
                let (l, g) = q.loss_and_grad(&theta.layers[0], batch);
                (l, ParamVector::from_vec(g))
            }
            Problem::Classifier(c) => {
                let (l, g) = c.loss_and_grad(theta, &c.train, &batch.indices, true);
                (l, g.expect("gradient requested"))
            }
        };
        if grad.is_finite() {
            Ok((loss, grad))
        } else {
            Err(Diverged)
        }
    }

    /// Evaluation metric on a whole split: accuracy for classifiers, the
    /// objective for quadratic-family tasks.
    pub fn eval_metric(&self, theta: &ParamVector, split: Split) -> Result<f64, Diverged> {
        self.check_params(theta)?;
        let value = match &self.problem {
            Problem::Quadratic(q) => match split {
                Split::Validation => q.population_loss(&theta.layers[0]),
                Split::Train => q.loss(&theta.layers[0], &Batch::full(q.train.len())),
            },
            Problem::Classifier(c) => match split {
                Split::Train => c.accuracy(theta, &c.train),
                Split::Validation => c.accuracy(theta, &c.validation),
            },
        };
        if value.is_finite() && value.abs() <= DIVERGENCE_THRESHOLD {
            Ok(value)
        } else {
            Err(Diverged)
        }
    }
}

fn check_loss(loss: f64) -> Result<f64, Diverged> {
    if loss.is_finite() && loss.abs() <= DIVERGENCE_THRESHOLD {
        Ok(loss)
    } else {
        Err(Diverged)
    }
}

/// Central-difference gradient of the minibatch loss, one coordinate at a
/// time. Used as the oracle for the analytic gradients.
pub fn finite_diff_grad(
    task: &TaskDef,
    theta: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<ParamVector, Diverged> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = theta.clone();
    let mut out = ParamVector::zeros(task.layout());
    for i in 0..theta.num_params() {
        let x = theta.get_flat(i);
        probe.set_flat(i, x + h);
        let up = task.eval_loss(&probe, batch)?;
        probe.set_flat(i, x - h);
        let down = task.eval_loss(&probe, batch)?;
        probe.set_flat(i, x);
        out.set_flat(i, (up - down) / (2.0 * h));
    }
    Ok(out)
}
