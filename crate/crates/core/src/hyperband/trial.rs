use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{apply_step, OptState, OptimizerSpec};
use crate::tasks::{ParamVector, Split, TaskDef};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Stopped,
    Diverged,
    Completed,
}

/// Everything needed to continue a trial exactly where it stopped. Batch
/// order depends only on the task seed and epoch index, so no rng cursor is
/// stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub theta: ParamVector,
    pub state: OptState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub spec: OptimizerSpec,
    /// Seed of the rng that drew this configuration.
    pub draw_seed: u64,
    pub epochs_run: u64,
    /// Validation metric after each epoch.
    pub values: Vec<f64>,
    pub checkpoint: Option<Checkpoint>,
    pub status: TrialStatus,
    /// Epoch (1-based) in which the trial diverged.
    pub diverged_at: Option<u64>,
}

impl TrialRecord {
    pub fn new(index: usize, spec: OptimizerSpec, draw_seed: u64, task: &TaskDef) -> Self {
        let theta = task.initial_params();
        let state = OptState::new(spec.rule, &theta);
        Self {
            index,
            spec,
            draw_seed,
            epochs_run: 0,
            values: Vec::new(),
            checkpoint: Some(Checkpoint {
                version: CHECKPOINT_VERSION,
                theta,
                state,
            }),
            status: TrialStatus::Running,
            diverged_at: None,
        }
    }

    pub fn last_value(&self) -> Option<f64> {
        self.values.last().copied()
    }

    pub fn is_diverged(&self) -> bool {
        self.status == TrialStatus::Diverged
    }
}

/// Trains `trial` from its checkpoint through epoch `target_epochs`, recording
/// the validation metric after every epoch. The learning-rate schedule spans
/// `horizon_epochs · epoch_length` steps.
///
/// A diverged trial stays frozen at the task's worst metric: the remaining
/// epochs up to `target_epochs` are recorded with that value without further
/// computation.
pub fn run_trial_to(
    trial: &mut TrialRecord,
    task: &TaskDef,
    target_epochs: u64,
    horizon_epochs: u64,
) -> Result<()> {
    if target_epochs < trial.epochs_run {
        return Err(Error::invalid(format!(
            "target epoch {target_epochs} is behind trial progress {}",
            trial.epochs_run
        )));
    }
    if horizon_epochs < target_epochs {
        return Err(Error::invalid(
            "schedule horizon ends before the target epoch",
        ));
    }
    if target_epochs == trial.epochs_run {
        return Ok(());
    }
    if trial.is_diverged() {
        freeze(trial, task, target_epochs);
        return Ok(());
    }
    let Some(mut ckpt) = trial.checkpoint.take() else {
        return Err(Error::MissingCheckpoint(trial.index));
    };
    trial.status = TrialStatus::Running;
    let horizon = horizon_epochs * task.epoch_length() as u64;

    while trial.epochs_run < target_epochs {
        let epoch = trial.epochs_run + 1;
        match train_epoch(task, &trial.spec, &mut ckpt, epoch, horizon) {
            Ok(value) => {
                trial.values.push(value);
                trial.epochs_run = epoch;
            }
            Err(Error::Diverged(_)) => {
                trial.status = TrialStatus::Diverged;
                trial.diverged_at = Some(epoch);
                freeze(trial, task, target_epochs);
                return Ok(());
            }
            Err(e) => {
                trial.checkpoint = Some(ckpt);
                return Err(e);
            }
        }
    }
    trial.checkpoint = Some(ckpt);
    Ok(())
}

fn freeze(trial: &mut TrialRecord, task: &TaskDef, target_epochs: u64) {
    trial.checkpoint = None;
    let worst = task.worst_metric();
    while trial.epochs_run < target_epochs {
        trial.values.push(worst);
        trial.epochs_run += 1;
    }
}

fn train_epoch(
    task: &TaskDef,
    spec: &OptimizerSpec,
    ckpt: &mut Checkpoint,
    epoch: u64,
    horizon: u64,
) -> Result<f64> {
    for batch in task.epoch_batches(epoch) {
        let (_, grad) = task.loss_and_grad(&ckpt.theta, &batch)?;
        apply_step(spec, &mut ckpt.state, &mut ckpt.theta, &grad, horizon)?;
    }
    Ok(task.eval_metric(&ckpt.theta, Split::Validation)?)
}

/// Trains a fresh copy of `spec` for `epochs` epochs with the schedule
/// stretched over exactly that budget, returning the per-epoch metrics.
pub fn train_curve(task: &TaskDef, spec: &OptimizerSpec, epochs: u64) -> Result<TrialRecord> {
    let mut trial = TrialRecord::new(0, spec.clone(), 0, task);
    run_trial_to(&mut trial, task, epochs, epochs)?;
    if !trial.is_diverged() {
        trial.status = TrialStatus::Completed;
        trial.checkpoint = None;
    }
    Ok(trial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{HyperparamVector, Rule};

    fn logreg() -> TaskDef {
        TaskDef::logreg(200, 5, 3, 11).unwrap()
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let task = logreg();
        let spec = OptimizerSpec::new(
            Rule::Adam,
            HyperparamVector::defaults(Rule::Adam, 0.01).with_linear_decay(0.1),
        )
        .unwrap();
        let mut a = TrialRecord::new(0, spec.clone(), 0, &task);
        run_trial_to(&mut a, &task, 3, 9).unwrap();
        let json = a.checkpoint.as_ref().unwrap().to_json().unwrap();
        a.checkpoint = Some(Checkpoint::from_json(&json).unwrap());
        run_trial_to(&mut a, &task, 9, 9).unwrap();

        let mut b = TrialRecord::new(0, spec, 0, &task);
        run_trial_to(&mut b, &task, 9, 9).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn same_target_is_noop() {
        let task = logreg();
        let spec = OptimizerSpec::with_defaults(Rule::Sgdm, 0.1).unwrap();
        let mut t = TrialRecord::new(0, spec, 0, &task);
        run_trial_to(&mut t, &task, 2, 2).unwrap();
        let before = t.clone();
        run_trial_to(&mut t, &task, 2, 5).unwrap();
        assert_eq!(t, before);
        assert!(run_trial_to(&mut t, &task, 1, 5).is_err());
    }

    #[test]
    fn divergence_freezes_at_worst_metric() {
        let task = TaskDef::synthetic_landscape(3);
        let lr = 10.0 * task.basin_center_lr().unwrap();
        let spec = OptimizerSpec::with_defaults(Rule::Sgdm, lr).unwrap();
        let mut t = TrialRecord::new(0, spec, 0, &task);
        run_trial_to(&mut t, &task, 5, 5).unwrap();
        assert!(t.is_diverged());
        assert!(t.diverged_at.unwrap() <= 3);
        assert_eq!(t.values.len(), 5);
        assert_eq!(t.last_value(), Some(task.worst_metric()));
        assert!(t.checkpoint.is_none());
        run_trial_to(&mut t, &task, 7, 7).unwrap();
        assert_eq!(t.epochs_run, 7);
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let task = logreg();
        let spec = OptimizerSpec::with_defaults(Rule::Sgdm, 0.1).unwrap();
        let mut t = TrialRecord::new(4, spec, 0, &task);
        t.checkpoint = None;
        assert!(matches!(
            run_trial_to(&mut t, &task, 1, 1),
            Err(Error::MissingCheckpoint(4))
        ));
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let task = logreg();
        let spec = OptimizerSpec::with_defaults(Rule::Sgdm, 0.1).unwrap();
        let mut ckpt = TrialRecord::new(0, spec, 0, &task).checkpoint.unwrap();
        ckpt.version = 99;
        assert!(Checkpoint::from_json(&ckpt.to_json().unwrap()).is_err());
    }

    #[test]
    fn basin_center_reaches_optimum() {
        let task = TaskDef::synthetic_landscape(5);
        let spec =
            OptimizerSpec::with_defaults(Rule::Sgdm, task.basin_center_lr().unwrap()).unwrap();
        let curve = train_curve(&task, &spec, 27).unwrap();
        let best = curve.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best <= 1.05 * task.known_optimum().unwrap(), "best {best}");
    }
}
