//! Hyperband tuning with resumable successive halving.
//!
//! Promoted trials continue from their checkpoints, so one bracket charges
//! `Σ n_i (e_i − e_{i−1})` epochs where `e_i` is rung `i`'s whole-epoch
//! allocation. Every consumed epoch, including the frozen epochs of a
//! diverged trial, is streamed to the [`Recorder`] with its cumulative index.

mod plan;
mod trial;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{HyperparamVector, OptimizerSpec, Rule};
use crate::search::{DecayPolicy, SearchSpace, TuningMode};
use crate::seed::{derive_seed, rng_from};
use crate::tasks::{MetricDirection, TaskDef};

pub use plan::{pass_configs, pass_epochs, plan_brackets, s_max, BracketPlan, Rung};
pub use trial::{
    run_trial_to, train_curve, Checkpoint, TrialRecord, TrialStatus, CHECKPOINT_VERSION,
};

/// Events emitted in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialEvent {
    ConfigSampled {
        trial: usize,
        pass: usize,
        bracket: u32,
        draw_seed: u64,
        config: HyperparamVector,
    },
    EpochMetric {
        trial: usize,
        /// Epoch index within the trial, 1-based.
        epoch: u64,
        /// Epochs consumed by the whole run so far, including this one.
        cumulative_epoch: u64,
        value: f64,
        diverged: bool,
    },
    Divergence {
        trial: usize,
        epoch: u64,
    },
    RungPromotion {
        pass: usize,
        bracket: u32,
        rung: usize,
        promoted: Vec<usize>,
        epochs: u64,
    },
}

pub trait Recorder {
    fn record(&mut self, event: &TrialEvent) -> Result<()>;
}

impl Recorder for Vec<TrialEvent> {
    fn record(&mut self, event: &TrialEvent) -> Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

/// Discards every event.
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn record(&mut self, _: &TrialEvent) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&TrialEvent) -> Result<()>> Recorder for F {
    fn record(&mut self, event: &TrialEvent) -> Result<()> {
        self(event)
    }
}

/// Indices of the `k` smallest losses, best first. Ties go to the lower index;
/// NaN sorts last.
pub fn top_k(losses: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > losses.len() {
        return Err(Error::invalid(format!(
            "cannot keep {k} of {} trials",
            losses.len()
        )));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| {
            if losses[i].is_nan() {
                f64::INFINITY
            } else {
                losses[i]
            }
        };
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperbandParams {
    /// Maximum epochs per configuration, `R`.
    pub max_resource: u64,
    /// Reduction factor `η`.
    pub eta: u64,
    /// Total configuration budget `n_c`; complete passes repeat until at
    /// least this many configurations have been sampled.
    pub n_configs: usize,
}

impl HyperbandParams {
    pub fn validate(&self) -> Result<()> {
        plan_brackets(self.max_resource, self.eta)?;
        if self.n_configs == 0 {
            return Err(Error::invalid("n_configs must be >= 1"));
        }
        Ok(())
    }

    /// Configurations sampled by a single pass.
    pub fn one_pass(max_resource: u64, eta: u64) -> Result<Self> {
        let plan = plan_brackets(max_resource, eta)?;
        Ok(Self {
            max_resource,
            eta,
            n_configs: pass_configs(&plan),
        })
    }
}

/// The best single evaluation seen during tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub trial: usize,
    pub spec: OptimizerSpec,
    pub value: f64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub configs: usize,
    pub epochs: u64,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: BestConfig,
    pub trials: Vec<TrialRecord>,
    /// Epochs consumed in total.
    pub ledger: u64,
    pub passes: Vec<PassSummary>,
    /// Best-so-far trajectory indexed by cumulative epoch.
    pub trajectory: Vec<f64>,
}

/// A tuning problem: which rule to tune, on which task, from which space.
#[derive(Debug, Clone)]
pub struct Tuner<'a> {
    pub task: &'a TaskDef,
    pub rule: Rule,
    pub mode: TuningMode,
    pub decay: DecayPolicy,
    pub space: &'a SearchSpace,
    pub seed: u64,
    /// Train the trials of a rung on the rayon pool. Results and events are
    /// identical to sequential execution.
    pub parallel: bool,
}

impl<'a> Tuner<'a> {
    pub fn new(task: &'a TaskDef, rule: Rule, space: &'a SearchSpace, seed: u64) -> Self {
        Self {
            task,
            rule,
            mode: TuningMode::LrOnly,
            decay: DecayPolicy::Never,
            space,
            seed,
            parallel: false,
        }
    }

    pub fn mode(mut self, mode: TuningMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn decay(mut self, decay: DecayPolicy) -> Self {
        self.decay = decay;
        self
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    fn sample_trial(&self, index: usize) -> Result<TrialRecord> {
        let draw_seed = derive_seed(&["config".into(), self.seed.into(), (index as u64).into()]);
        let mut rng = rng_from(draw_seed);
        let hp = self
            .space
            .sample_config(self.mode, self.rule, self.decay, &mut rng);
        let spec = OptimizerSpec::new(self.rule, hp)?;
        Ok(TrialRecord::new(index, spec, draw_seed, self.task))
    }

    /// Runs complete Hyperband passes until at least `n_configs`
    /// configurations have been sampled.
    pub fn hyperband(
        &self,
        params: &HyperbandParams,
        recorder: &mut dyn Recorder,
    ) -> Result<TuneOutcome> {
        params.validate()?;
        self.space.validate()?;
        let plan = plan_brackets(params.max_resource, params.eta)?;
        let mut run = RunState::new(self.task.direction());
        let mut pass = 0;
        while run.trials.len() < params.n_configs {
            let configs_before = run.trials.len();
            let epochs_before = run.ledger;
            for bracket in &plan {
                self.run_bracket(pass, bracket, params.eta, &mut run, recorder)?;
            }
            run.passes.push(PassSummary {
                configs: run.trials.len() - configs_before,
                epochs: run.ledger - epochs_before,
            });
            pass += 1;
        }
        run.finish()
    }

    fn run_bracket(
        &self,
        pass: usize,
        bracket: &BracketPlan,
        eta: u64,
        run: &mut RunState,
        recorder: &mut dyn Recorder,
    ) -> Result<()> {
        let first = run.trials.len();
        for _ in 0..bracket.n {
            let trial = self.sample_trial(run.trials.len())?;
            recorder.record(&TrialEvent::ConfigSampled {
                trial: trial.index,
                pass,
                bracket: bracket.s,
                draw_seed: trial.draw_seed,
                config: trial.spec.hyperparams.clone(),
            })?;
            run.trials.push(trial);
        }
        let mut active: Vec<usize> = (first..run.trials.len()).collect();
        for (i, rung) in bracket.rungs.iter().enumerate() {
            debug_assert_eq!(active.len(), rung.n);
            self.advance(run, &active, rung.epochs, recorder)?;
            if i + 1 == bracket.rungs.len() {
                for &t in &active {
                    finish_trial(&mut run.trials[t], TrialStatus::Completed);
                }
                break;
            }
            let losses: Vec<f64> = active.iter().map(|&t| run.ranking_loss(t)).collect();
            let keep = top_k(&losses, rung.n / eta as usize)?;
            let mut promoted: Vec<usize> = keep.iter().map(|&k| active[k]).collect();
            promoted.sort_unstable();
            for &t in &active {
                if promoted.binary_search(&t).is_err() {
                    finish_trial(&mut run.trials[t], TrialStatus::Stopped);
                }
            }
            recorder.record(&TrialEvent::RungPromotion {
                pass,
                bracket: bracket.s,
                rung: i + 1,
                promoted: promoted.clone(),
                epochs: bracket.rungs[i + 1].epochs,
            })?;
            active = promoted;
        }
        Ok(())
    }

    /// Trains every trial in `active` to `target` epochs, then emits their
    /// epochs in trial order.
    fn advance(
        &self,
        run: &mut RunState,
        active: &[usize],
        target: u64,
        recorder: &mut dyn Recorder,
    ) -> Result<()> {
        let starts: Vec<u64> = active.iter().map(|&t| run.trials[t].epochs_run).collect();
        let mut batch: Vec<TrialRecord> = active
            .iter()
            .map(|&t| {
                let hole = placeholder(&run.trials[t]);
                std::mem::replace(&mut run.trials[t], hole)
            })
            .collect();
        let task = self.task;
        let results: Vec<Result<()>> = if self.parallel {
            batch
                .par_iter_mut()
                .map(|trial| run_trial_to(trial, task, target, target))
                .collect()
        } else {
            batch
                .iter_mut()
                .map(|trial| run_trial_to(trial, task, target, target))
                .collect()
        };
        for ((&t, trial), start) in active.iter().zip(batch).zip(starts) {
            run.trials[t] = trial;
            run.emit_epochs(t, start, recorder)?;
        }
        results.into_iter().collect()
    }

    /// Trains `n_configs` sampled configurations for `max_resource` epochs each.
    pub fn random_search(
        &self,
        n_configs: usize,
        max_resource: u64,
        recorder: &mut dyn Recorder,
    ) -> Result<TuneOutcome> {
        if n_configs == 0 || max_resource == 0 {
            return Err(Error::invalid(
                "random search needs n_configs, max_resource >= 1",
            ));
        }
        self.space.validate()?;
        let mut run = RunState::new(self.task.direction());
        for _ in 0..n_configs {
            let trial = self.sample_trial(run.trials.len())?;
            recorder.record(&TrialEvent::ConfigSampled {
                trial: trial.index,
                pass: 0,
                bracket: 0,
                draw_seed: trial.draw_seed,
                config: trial.spec.hyperparams.clone(),
            })?;
            run.trials.push(trial);
        }
        let all: Vec<usize> = (0..n_configs).collect();
        self.advance(&mut run, &all, max_resource, recorder)?;
        for trial in &mut run.trials {
            finish_trial(trial, TrialStatus::Completed);
        }
        run.passes.push(PassSummary {
            configs: n_configs,
            epochs: run.ledger,
        });
        run.finish()
    }
}

fn placeholder(trial: &TrialRecord) -> TrialRecord {
    TrialRecord {
        index: trial.index,
        spec: trial.spec.clone(),
        draw_seed: trial.draw_seed,
        epochs_run: 0,
        values: Vec::new(),
        checkpoint: None,
        status: trial.status,
        diverged_at: None,
    }
}

fn finish_trial(trial: &mut TrialRecord, status: TrialStatus) {
    if trial.is_diverged() {
        return;
    }
    trial.status = status;
    if status == TrialStatus::Completed {
        trial.checkpoint = None;
    }
}

struct RunState {
    direction: MetricDirection,
    trials: Vec<TrialRecord>,
    ledger: u64,
    passes: Vec<PassSummary>,
    trajectory: Vec<f64>,
    best: Option<(usize, f64, u64)>,
}

impl RunState {
    fn new(direction: MetricDirection) -> Self {
        Self {
            direction,
            trials: Vec::new(),
            ledger: 0,
            passes: Vec::new(),
            trajectory: Vec::new(),
            best: None,
        }
    }

    /// Loss used for promotion: the last validation value, with diverged
    /// trials ranked behind every finite competitor.
    fn ranking_loss(&self, t: usize) -> f64 {
        let trial = &self.trials[t];
        match trial.last_value() {
            Some(v) if !trial.is_diverged() => self.direction.to_loss(v),
            _ => f64::INFINITY,
        }
    }

    fn emit_epochs(&mut self, t: usize, start: u64, recorder: &mut dyn Recorder) -> Result<()> {
        let trial = &self.trials[t];
        for epoch in start + 1..=trial.epochs_run {
            let value = trial.values[(epoch - 1) as usize];
            let diverged = trial.diverged_at.is_some_and(|d| epoch >= d);
            self.ledger += 1;
            if trial.diverged_at == Some(epoch) {
                recorder.record(&TrialEvent::Divergence { trial: t, epoch })?;
            }
            recorder.record(&TrialEvent::EpochMetric {
                trial: t,
                epoch,
                cumulative_epoch: self.ledger,
                value,
                diverged,
            })?;
            let better = match self.best {
                None => true,
                Some((_, b, _)) => self.direction.is_better(value, b),
            };
            if better {
                self.best = Some((t, value, epoch));
            }
            let best = self.best.expect("set above").1;
            self.trajectory.push(best);
        }
        Ok(())
    }

    fn finish(self) -> Result<TuneOutcome> {
        let (trial, value, epoch) = self.best.ok_or(Error::EmptyTrajectory)?;
        Ok(TuneOutcome {
            best: BestConfig {
                trial,
                spec: self.trials[trial].spec.clone(),
                value,
                epoch,
            },
            trials: self.trials,
            ledger: self.ledger,
            passes: self.passes,
            trajectory: self.trajectory,
        })
    }
}

/// Hyperband with the default search space and a constant schedule.
#[allow(clippy::too_many_arguments)]
pub fn run_hyperband(
    task: &TaskDef,
    rule: Rule,
    mode: TuningMode,
    max_resource: u64,
    eta: u64,
    n_configs: usize,
    seed: u64,
    recorder: &mut dyn Recorder,
) -> Result<TuneOutcome> {
    let space = SearchSpace::default();
    Tuner::new(task, rule, &space, seed).mode(mode).hyperband(
        &HyperbandParams {
            max_resource,
            eta,
            n_configs,
        },
        recorder,
    )
}

#[cfg(test)]
mod tests;
