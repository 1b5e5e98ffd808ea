//! The end-to-end efficiency protocol and the data-addition protocol over an
//! optimizer × task grid with `M` repetitions.
//!
//! Cells are independent. When run in parallel they are still handed to the
//! caller in grid order (task, optimizer, repetition), so every output is
//! independent of completion order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperband::{train_curve, BestConfig, HyperbandParams, TrialEvent, Tuner};
use crate::metrics::{cpe, kendall_tau_b, mean_std, rank, Trajectory};
use crate::optimizers::Rule;
use crate::search::{DecayPolicy, SearchSpace, TuningMode};
use crate::seed::{derive_seed, rng_from};
use crate::tasks::{MetricDirection, TaskDef};

pub const DEFAULT_REPETITIONS: usize = 3;
pub const DEFAULT_DELTA: f64 = 0.3;

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// A task constructor as written in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        dim: usize,
        condition_number: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gradient_noise: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decay: Option<DecayPolicy>,
    },
    Logreg {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        n_samples: usize,
        dim: usize,
        n_classes: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decay: Option<DecayPolicy>,
    },
    Mlp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        n_samples: usize,
        dim: usize,
        hidden: usize,
        n_classes: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decay: Option<DecayPolicy>,
    },
    Landscape {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decay: Option<DecayPolicy>,
    },
}

impl TaskSpec {
    pub fn build(&self) -> Result<TaskDef> {
        let (task, name) = match self {
            TaskSpec::Quadratic {
                name,
                dim,
                condition_number,
                seed,
                gradient_noise,
                ..
            } => {
                let mut t = TaskDef::quadratic(*dim, *condition_number, *seed)?;
                if let Some(noise) = gradient_noise {
                    t = t.with_gradient_noise(*noise)?;
                }
                (t, name)
            }
            TaskSpec::Logreg {
                name,
                n_samples,
                dim,
                n_classes,
                seed,
                batch_size,
                ..
            } => {
                let mut t = TaskDef::logreg(*n_samples, *dim, *n_classes, *seed)?;
                if let Some(b) = batch_size {
                    t = t.with_batch_size(*b)?;
                }
                (t, name)
            }
            TaskSpec::Mlp {
                name,
                n_samples,
                dim,
                hidden,
                n_classes,
                seed,
                batch_size,
                ..
            } => {
                let mut t = TaskDef::mlp(*n_samples, *dim, *hidden, *n_classes, *seed)?;
                if let Some(b) = batch_size {
                    t = t.with_batch_size(*b)?;
                }
                (t, name)
            }
            TaskSpec::Landscape { name, seed, .. } => (TaskDef::synthetic_landscape(*seed), name),
        };
        Ok(match name {
            Some(n) => task.with_name(n.clone()),
            None => task,
        })
    }

    /// The task's decay policy: classification tasks tune `γ` in full mode
    /// unless overridden.
    pub fn decay(&self) -> DecayPolicy {
        let (explicit, classification) = match self {
            TaskSpec::Quadratic { decay, .. } | TaskSpec::Landscape { decay, .. } => (decay, false),
            TaskSpec::Logreg { decay, .. } | TaskSpec::Mlp { decay, .. } => (decay, true),
        };
        explicit.unwrap_or(if classification {
            DecayPolicy::FullMode
        } else {
            DecayPolicy::Never
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub optimizers: Vec<Rule>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub mode: TuningMode,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub hyperband: HyperbandParams,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub space: SearchSpace,
    /// Run cells and rung trials on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.optimizers.is_empty() {
            return Err(Error::invalid("at least one optimizer is required"));
        }
        if self.tasks.is_empty() {
            return Err(Error::invalid("at least one task is required"));
        }
        if self.repetitions < 1 {
            return Err(Error::invalid("repetitions must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        self.hyperband.validate()?;
        self.space.validate()?;
        let mut names = Vec::new();
        for spec in &self.tasks {
            let task = spec.build()?;
            if names.contains(&task.name().to_string()) {
                return Err(Error::invalid(format!(
                    "duplicate task name `{}`; set `name` to disambiguate",
                    task.name()
                )));
            }
            names.push(task.name().to_string());
        }
        Ok(())
    }

    pub fn build_tasks(&self) -> Result<Vec<(TaskDef, DecayPolicy)>> {
        self.tasks
            .iter()
            .map(|s| Ok((s.build()?, s.decay())))
            .collect()
    }
}

/// Seed of repetition `rep` for `optimizer`.
pub fn repetition_seed(master: u64, optimizer: Rule, rep: usize) -> u64 {
    derive_seed(&[master.into(), optimizer.name().into(), (rep as u64).into()])
}

/// Identity of one (task, optimizer, repetition) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellId {
    pub task: String,
    pub optimizer: Rule,
    pub repetition: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndOutcome {
    pub trajectory: Trajectory,
    pub cpe: f64,
    pub peak: f64,
    pub best: BestConfig,
    pub ledger: u64,
}

#[derive(Debug, Clone)]
pub struct EndToEndCell {
    pub id: CellId,
    pub direction: MetricDirection,
    /// Tuner events in execution order.
    pub events: Vec<TrialEvent>,
    /// `Err` carries the failure message of a crashed repetition.
    pub outcome: std::result::Result<EndToEndOutcome, String>,
}

/// Mean and sample standard deviation over the successful repetitions of
/// one (task, optimizer) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub task: String,
    pub optimizer: Rule,
    pub mode: TuningMode,
    pub repetitions: usize,
    pub failed: usize,
    pub mean_cpe: Option<f64>,
    pub std_cpe: Option<f64>,
    pub mean_peak: Option<f64>,
    pub std_peak: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EndToEndResult {
    pub cells: Vec<EndToEndCell>,
    pub summaries: Vec<CellSummary>,
}

struct Job<'a> {
    task: &'a TaskDef,
    decay: DecayPolicy,
    optimizer: Rule,
    repetition: usize,
}

fn grid<'a>(config: &ProtocolConfig, tasks: &'a [(TaskDef, DecayPolicy)]) -> Vec<Job<'a>> {
    let mut jobs = Vec::new();
    for (task, decay) in tasks {
        for &optimizer in &config.optimizers {
            for repetition in 0..config.repetitions {
                jobs.push(Job {
                    task,
                    decay: *decay,
                    optimizer,
                    repetition,
                });
            }
        }
    }
    jobs
}

/// Identities of every cell in grid order.
pub fn grid_ids(config: &ProtocolConfig) -> Result<Vec<CellId>> {
    let tasks = config.build_tasks()?;
    Ok(grid(config, &tasks)
        .iter()
        .map(|job| CellId {
            task: job.task.name().to_string(),
            optimizer: job.optimizer,
            repetition: job.repetition,
            seed: repetition_seed(config.master_seed, job.optimizer, job.repetition),
        })
        .collect())
}

/// Runs every cell in `jobs` after the already finished prefix `done`,
/// handing new results to `emit` in grid order. With `parallel` set, cells
/// are computed in chunks on the rayon pool.
fn run_cells<'a, T: Send>(
    jobs: &[Job<'a>],
    parallel: bool,
    done: Vec<T>,
    run: impl Fn(&Job<'a>) -> T + Sync,
    mut emit: impl FnMut(&T) -> Result<()>,
) -> Result<Vec<T>> {
    if done.len() > jobs.len() {
        return Err(Error::invalid("more finished cells than the grid holds"));
    }
    let jobs = &jobs[done.len()..];
    let mut out = done;
    out.reserve(jobs.len());
    if parallel {
        let width = rayon::current_num_threads().max(1);
        for chunk in jobs.chunks(width) {
            let done: Vec<T> = chunk.par_iter().map(&run).collect();
            for cell in done {
                emit(&cell)?;
                out.push(cell);
            }
        }
    } else {
        for job in jobs {
            let cell = run(job);
            emit(&cell)?;
            out.push(cell);
        }
    }
    Ok(out)
}

/// Full Hyperband search per cell, best-so-far trajectory over cumulative
/// epochs, then CPE and peak averaged over the repetitions. `emit` sees each
/// finished cell in grid order; an error from it aborts the run.
pub fn run_end_to_end(
    config: &ProtocolConfig,
    emit: impl FnMut(&EndToEndCell) -> Result<()>,
) -> Result<EndToEndResult> {
    run_end_to_end_from(config, Vec::new(), emit)
}

/// [`run_end_to_end`] continuing after the first `done.len()` cells of the
/// grid, which the caller recovered from an earlier interrupted run.
pub fn run_end_to_end_from(
    config: &ProtocolConfig,
    done: Vec<EndToEndCell>,
    emit: impl FnMut(&EndToEndCell) -> Result<()>,
) -> Result<EndToEndResult> {
    config.validate()?;
    let tasks = config.build_tasks()?;
    let jobs = grid(config, &tasks);
    let cells = run_cells(
        &jobs,
        config.parallel,
        done,
        |job| end_to_end_cell(config, job),
        emit,
    )?;
    let summaries = summarize_end_to_end(config.mode, &cells);
    Ok(EndToEndResult { cells, summaries })
}

fn end_to_end_cell(config: &ProtocolConfig, job: &Job<'_>) -> EndToEndCell {
    let seed = repetition_seed(config.master_seed, job.optimizer, job.repetition);
    let id = CellId {
        task: job.task.name().to_string(),
        optimizer: job.optimizer,
        repetition: job.repetition,
        seed,
    };
    let mut events = Vec::new();
    let outcome = Tuner::new(job.task, job.optimizer, &config.space, seed)
        .mode(config.mode)
        .decay(job.decay)
        .parallel(config.parallel)
        .hyperband(&config.hyperband, &mut events)
        .and_then(|out| {
            let trajectory = Trajectory {
                direction: job.task.direction(),
                values: out.trajectory,
            };
            Ok(EndToEndOutcome {
                cpe: trajectory.cpe()?,
                peak: trajectory.peak()?,
                trajectory,
                best: out.best,
                ledger: out.ledger,
            })
        })
        .map_err(|e| e.to_string());
    EndToEndCell {
        id,
        direction: job.task.direction(),
        events,
        outcome,
    }
}

/// CPEs, peaks, repetitions and failures of one (task, optimizer) pair.
type Group = (Vec<f64>, Vec<f64>, usize, usize);

/// Per-(task, optimizer) summaries in first-appearance order.
pub fn summarize_end_to_end(mode: TuningMode, cells: &[EndToEndCell]) -> Vec<CellSummary> {
    let mut order: Vec<(String, Rule)> = Vec::new();
    let mut groups: BTreeMap<(String, Rule), Group> = BTreeMap::new();
    for cell in cells {
        let key = (cell.id.task.clone(), cell.id.optimizer);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        let g = groups.entry(key).or_default();
        g.3 += 1;
        match &cell.outcome {
            Ok(o) => {
                g.0.push(o.cpe);
                g.1.push(o.peak);
            }
            Err(_) => g.2 += 1,
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (cpes, peaks, failed, reps) = &groups[&key];
            let c = mean_std(cpes).ok();
            let p = mean_std(peaks).ok();
            CellSummary {
                task: key.0,
                optimizer: key.1,
                mode,
                repetitions: *reps,
                failed: *failed,
                mean_cpe: c.map(|x| x.0),
                std_cpe: c.map(|x| x.1),
                mean_peak: p.map(|x| x.0),
                std_peak: p.map(|x| x.1),
            }
        })
        .collect()
}

/// Stratified subset with `round(δ·n_c)` examples of every class `c`, drawn by
/// a seeded shuffle within the class and returned in original order. The
/// validation split is shared with the full task.
pub fn split_dataset(task: &TaskDef, delta: f64) -> Result<(TaskDef, TaskDef)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    let (Some(labels), Some(k)) = (task.train_labels(), task.n_classes()) else {
        return Err(Error::invalid(format!(
            "task `{}` is not a classification task",
            task.name()
        )));
    };
    let mut chosen = Vec::new();
    for class in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let count = (delta * members.len() as f64).round() as usize;
        if count == 0 {
            return Err(Error::invalid(format!(
                "delta {delta} leaves class {class} of `{}` empty",
                task.name()
            )));
        }
        let mut rng = rng_from(derive_seed(&[
            "stratified-split".into(),
            task.seed().into(),
            (class as u64).into(),
        ]));
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..count]);
    }
    chosen.sort_unstable();
    let partial = task.with_train_subset(&chosen)?;
    Ok((partial, task.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditionOutcome {
    /// Best configuration found on the partial data.
    pub omega: BestConfig,
    /// Raw per-epoch validation metrics.
    pub partial_curve: Vec<f64>,
    pub full_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdditionCell {
    pub id: CellId,
    pub direction: MetricDirection,
    pub events: Vec<TrialEvent>,
    pub outcome: std::result::Result<AdditionOutcome, String>,
}

/// Curves averaged over successful repetitions and their CPEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditionSummary {
    pub task: String,
    pub optimizer: Rule,
    pub repetitions: usize,
    pub failed: usize,
    pub partial_curve: Vec<f64>,
    pub full_curve: Vec<f64>,
    pub partial_cpe: Option<f64>,
    pub full_cpe: Option<f64>,
    /// 1-based rank by partial-data CPE among this task's optimizers.
    pub partial_rank: Option<usize>,
    pub full_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingChange {
    pub task: String,
    pub before: Vec<Rule>,
    pub after: Vec<Rule>,
    /// Kendall's τ-b between partial and full CPEs; `None` when undefined.
    pub kendall_tau: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DataAdditionResult {
    pub cells: Vec<AdditionCell>,
    pub summaries: Vec<AdditionSummary>,
    pub rankings: Vec<RankingChange>,
}

/// Tunes every optimizer in full mode on the `δ` subset, then trains the
/// chosen configuration for `R` epochs on both the subset and the full
/// training set.
pub fn run_data_addition(
    config: &ProtocolConfig,
    emit: impl FnMut(&AdditionCell) -> Result<()>,
) -> Result<DataAdditionResult> {
    run_data_addition_from(config, Vec::new(), emit)
}

/// [`run_data_addition`] continuing after an already finished prefix.
pub fn run_data_addition_from(
    config: &ProtocolConfig,
    done: Vec<AdditionCell>,
    emit: impl FnMut(&AdditionCell) -> Result<()>,
) -> Result<DataAdditionResult> {
    config.validate()?;
    let tasks = config.build_tasks()?;
    let mut splits = Vec::new();
    for (task, decay) in &tasks {
        if !task.kind().is_classification() {
            return Err(Error::invalid(format!(
                "data addition needs classification tasks, `{}` is {:?}",
                task.name(),
                task.kind()
            )));
        }
        splits.push((split_dataset(task, config.delta)?, *decay));
    }
    let partials: Vec<(TaskDef, DecayPolicy)> =
        splits.iter().map(|((p, _), d)| (p.clone(), *d)).collect();
    let jobs = grid(config, &partials);
    let full_of = |name: &str| -> &TaskDef {
        &splits
            .iter()
            .find(|((p, _), _)| p.name() == name)
            .expect("partial task has a full counterpart")
            .0
             .1
    };
    let cells = run_cells(
        &jobs,
        config.parallel,
        done,
        |job| addition_cell(config, job, full_of(job.task.name())),
        emit,
    )?;
    let summaries = summarize_addition(&cells);
    let names: Vec<String> = tasks.iter().map(|(t, _)| t.name().to_string()).collect();
    let rankings = ranking_changes(&names, &summaries);
    Ok(DataAdditionResult {
        cells,
        summaries,
        rankings,
    })
}

fn addition_cell(config: &ProtocolConfig, job: &Job<'_>, full: &TaskDef) -> AdditionCell {
    let seed = repetition_seed(config.master_seed, job.optimizer, job.repetition);
    let id = CellId {
        task: job.task.name().to_string(),
        optimizer: job.optimizer,
        repetition: job.repetition,
        seed,
    };
    let mut events = Vec::new();
    let epochs = config.hyperband.max_resource;
    let outcome = Tuner::new(job.task, job.optimizer, &config.space, seed)
        .mode(TuningMode::Full)
        .decay(job.decay)
        .parallel(config.parallel)
        .hyperband(&config.hyperband, &mut events)
        .and_then(|out| {
            let partial = train_curve(job.task, &out.best.spec, epochs)?;
            let full_run = train_curve(full, &out.best.spec, epochs)?;
            Ok(AdditionOutcome {
                omega: out.best,
                partial_curve: partial.values,
                full_curve: full_run.values,
            })
        })
        .map_err(|e| e.to_string());
    AdditionCell {
        id,
        direction: job.task.direction(),
        events,
        outcome,
    }
}

fn mean_curve(curves: &[&Vec<f64>]) -> Vec<f64> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect()
}

/// Averages curves per (task, optimizer) and ranks optimizers by CPE.
pub fn summarize_addition(cells: &[AdditionCell]) -> Vec<AdditionSummary> {
    let mut order: Vec<(String, Rule)> = Vec::new();
    let mut groups: BTreeMap<(String, Rule), Vec<&AdditionCell>> = BTreeMap::new();
    let mut directions: BTreeMap<String, MetricDirection> = BTreeMap::new();
    for cell in cells {
        let key = (cell.id.task.clone(), cell.id.optimizer);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(cell);
        directions.insert(cell.id.task.clone(), cell.direction);
    }
    let mut summaries: Vec<AdditionSummary> = order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let ok: Vec<&AdditionOutcome> = group
                .iter()
                .filter_map(|c| c.outcome.as_ref().ok())
                .collect();
            let partial_curve =
                mean_curve(&ok.iter().map(|o| &o.partial_curve).collect::<Vec<_>>());
            let full_curve = mean_curve(&ok.iter().map(|o| &o.full_curve).collect::<Vec<_>>());
            AdditionSummary {
                task: key.0,
                optimizer: key.1,
                repetitions: group.len(),
                failed: group.len() - ok.len(),
                partial_cpe: cpe(&partial_curve).ok(),
                full_cpe: cpe(&full_curve).ok(),
                partial_curve,
                full_curve,
                partial_rank: None,
                full_rank: None,
            }
        })
        .collect();
    for (task, direction) in &directions {
        for full in [false, true] {
            let scores: BTreeMap<String, f64> = summaries
                .iter()
                .filter(|s| &s.task == task)
                .filter_map(|s| {
                    let v = if full { s.full_cpe } else { s.partial_cpe };
                    v.map(|v| (s.optimizer.name().to_string(), v))
                })
                .collect();
            let order = rank(&scores, *direction);
            for s in summaries.iter_mut().filter(|s| &s.task == task) {
                let pos = order
                    .iter()
                    .position(|n| n == s.optimizer.name())
                    .map(|p| p + 1);
                if full {
                    s.full_rank = pos;
                } else {
                    s.partial_rank = pos;
                }
            }
        }
    }
    summaries
}

/// Rankings before and after data addition for each task in `tasks`.
pub fn ranking_changes(tasks: &[String], summaries: &[AdditionSummary]) -> Vec<RankingChange> {
    tasks
        .iter()
        .map(|task| {
            let rows: Vec<&AdditionSummary> = summaries
                .iter()
                .filter(|s| &s.task == task && s.partial_cpe.is_some() && s.full_cpe.is_some())
                .collect();
            let by = |full: bool| {
                let mut r: Vec<&&AdditionSummary> = rows.iter().collect();
                r.sort_by_key(|s| if full { s.full_rank } else { s.partial_rank });
                r.iter().map(|s| s.optimizer).collect::<Vec<_>>()
            };
            let partial: Vec<f64> = rows.iter().map(|s| s.partial_cpe.unwrap()).collect();
            let full: Vec<f64> = rows.iter().map(|s| s.full_cpe.unwrap()).collect();
            RankingChange {
                task: task.clone(),
                before: by(false),
                after: by(true),
                kendall_tau: kendall_tau_b(&partial, &full).ok(),
            }
        })
        .collect()
}
