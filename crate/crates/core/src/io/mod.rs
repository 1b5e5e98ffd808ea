//! Run configs, the append-only results log, summary tables, and log replay.
//!
//! A run writes `results.jsonl` cell by cell in grid order and then derives
//! every table from the finished cells. `report` rebuilds the same cells from
//! the raw epoch records of the log and hands them to the same writers.

mod config;
mod log;
mod tables;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Trajectory, TrajectoryRecorder};
use crate::protocols::{
    grid_ids, ranking_changes, run_data_addition_from, run_end_to_end_from, summarize_addition,
    summarize_end_to_end, AdditionCell, AdditionOutcome, CellId, EndToEndCell, EndToEndOutcome,
    ProtocolConfig,
};
use crate::verify::{self, SuiteReport};

pub use config::{Protocol, RunConfigFile, FORMAT_VERSION, OUTPUT_DIR_ENV};
pub use log::{read_log, LogContents, LogRecord, ResultsLog, LOG_VERSION};
pub use tables::{
    addition_profile_table, end_to_end_profile_table, write_addition_tables, write_cpe_table,
    write_curves, write_peak_table, write_profile, write_trajectories,
};

pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    CpeTable,
    PeakTable,
    Profile,
    Curves,
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::invalid(format!("unknown report kind `{s}`")))
    }
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub protocol: Protocol,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub cells: usize,
    /// Cells whose repetition crashed, with the failure message.
    pub failed: Vec<(CellId, String)>,
    /// Cells recovered from an earlier interrupted log.
    pub resumed: usize,
    pub verify: Option<Vec<SuiteReport>>,
}

/// Runs the config's protocol and writes every artifact into `out_dir`.
/// With `resume`, finished cells of an interrupted `results.jsonl` in
/// `out_dir` are kept and only the remaining cells run.
pub fn run_bench(config: &RunConfigFile, out_dir: &Path, resume: bool) -> Result<BenchOutcome> {
    std::fs::create_dir_all(out_dir)?;
    if config.protocol == Protocol::Verify {
        let reports = verify::run_all();
        let path = out_dir.join("verify.json");
        let mut text = serde_json::to_string_pretty(&reports)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        return Ok(BenchOutcome {
            protocol: Protocol::Verify,
            output_dir: out_dir.to_path_buf(),
            files: vec![path],
            cells: 0,
            failed: Vec::new(),
            resumed: 0,
            verify: Some(reports),
        });
    }
    let protocol = config.protocol_config()?;
    let log_path = out_dir.join(RESULTS_FILE);
    let previous = if resume && log_path.exists() {
        let contents = read_log(&log_path)?;
        let replay = replay(&contents.records)?;
        if replay.config != *config {
            return Err(Error::Log(
                "existing results log was produced by a different config".into(),
            ));
        }
        Some(replay)
    } else {
        None
    };

    let mut log = ResultsLog::create(&log_path)?;
    log.append(&LogRecord::RunStarted {
        config: config.clone(),
    })?;
    let mut files = vec![log_path.clone()];
    let (cells, failed, resumed) = match config.protocol {
        Protocol::End2end => {
            let done = previous.map(|p| p.end_to_end).unwrap_or_default();
            let resumed = done.len();
            for cell in &done {
                emit_end_to_end(&mut log, cell)?;
            }
            log.flush()?;
            let result = run_end_to_end_from(&protocol, done, |cell| {
                emit_end_to_end(&mut log, cell)?;
                log.flush()
            });
            let result = finish_log(&mut log, result, |r| r.cells.len())?;
            files.extend(end_to_end_tables(out_dir, config.mode, &result.cells)?);
            let failed = failures(result.cells.iter().map(|c| (&c.id, &c.outcome)));
            (result.cells.len(), failed, resumed)
        }
        Protocol::DataAddition => {
            let done = previous.map(|p| p.addition).unwrap_or_default();
            let resumed = done.len();
            for cell in &done {
                emit_addition(&mut log, cell)?;
            }
            log.flush()?;
            let result = run_data_addition_from(&protocol, done, |cell| {
                emit_addition(&mut log, cell)?;
                log.flush()
            });
            let result = finish_log(&mut log, result, |r| r.cells.len())?;
            files.extend(addition_tables(out_dir, &result.cells)?);
            let failed = failures(result.cells.iter().map(|c| (&c.id, &c.outcome)));
            (result.cells.len(), failed, resumed)
        }
        Protocol::Verify => unreachable!("handled above"),
    };
    Ok(BenchOutcome {
        protocol: config.protocol,
        output_dir: out_dir.to_path_buf(),
        files,
        cells,
        failed,
        resumed,
        verify: None,
    })
}

fn failures<'a, T: 'a>(
    cells: impl Iterator<Item = (&'a CellId, &'a std::result::Result<T, String>)>,
) -> Vec<(CellId, String)> {
    cells
        .filter_map(|(id, o)| o.as_ref().err().map(|e| (id.clone(), e.clone())))
        .collect()
}

/// Appends the closing record: `run_complete` on success, a resumable
/// `run_aborted` otherwise.
fn finish_log<T>(
    log: &mut ResultsLog,
    result: Result<T>,
    cells: impl Fn(&T) -> usize,
) -> Result<T> {
    match result {
        Ok(r) => {
            log.append(&LogRecord::RunComplete { cells: cells(&r) })?;
            log.flush()?;
            Ok(r)
        }
        Err(e) => {
            // Best effort: the original error matters more than a failed
            // write of the abort marker.
            let _ = log.append(&LogRecord::RunAborted {
                resumable: true,
                reason: e.to_string(),
            });
            let _ = log.flush();
            Err(e)
        }
    }
}

fn emit_end_to_end(log: &mut ResultsLog, cell: &EndToEndCell) -> Result<()> {
    for event in &cell.events {
        log.append(&LogRecord::from_event(&cell.id, event))?;
    }
    let record = match &cell.outcome {
        Ok(o) => LogRecord::CellSummary {
            cell: cell.id.clone(),
            direction: cell.direction,
            error: None,
            cpe: Some(o.cpe),
            peak: Some(o.peak),
            ledger: Some(o.ledger),
            best: Some(o.best.clone()),
        },
        Err(e) => failed_summary(&cell.id, cell.direction, e),
    };
    log.append(&record)
}

fn emit_addition(log: &mut ResultsLog, cell: &AdditionCell) -> Result<()> {
    for event in &cell.events {
        log.append(&LogRecord::from_event(&cell.id, event))?;
    }
    let record = match &cell.outcome {
        Ok(o) => {
            log.append(&LogRecord::AdditionCurve {
                cell: cell.id.clone(),
                omega: o.omega.clone(),
                partial_curve: o.partial_curve.clone(),
                full_curve: o.full_curve.clone(),
            })?;
            LogRecord::CellSummary {
                cell: cell.id.clone(),
                direction: cell.direction,
                error: None,
                cpe: crate::metrics::cpe(&o.full_curve).ok(),
                peak: crate::metrics::peak(&o.full_curve).ok(),
                ledger: None,
                best: Some(o.omega.clone()),
            }
        }
        Err(e) => failed_summary(&cell.id, cell.direction, e),
    };
    log.append(&record)
}

fn failed_summary(id: &CellId, direction: crate::tasks::MetricDirection, e: &str) -> LogRecord {
    LogRecord::CellSummary {
        cell: id.clone(),
        direction,
        error: Some(e.to_string()),
        cpe: None,
        peak: None,
        ledger: None,
        best: None,
    }
}

fn end_to_end_tables(
    dir: &Path,
    mode: crate::search::TuningMode,
    cells: &[EndToEndCell],
) -> Result<Vec<PathBuf>> {
    let summaries = summarize_end_to_end(mode, cells);
    let mut files = vec![write_trajectories(dir, cells)?];
    files.extend(write_cpe_table(dir, &summaries)?);
    files.extend(write_peak_table(dir, &summaries)?);
    if let Some(table) = end_to_end_profile_table(cells, &summaries)? {
        files.extend(write_profile(dir, &table)?);
    }
    Ok(files)
}

fn addition_tables(dir: &Path, cells: &[AdditionCell]) -> Result<Vec<PathBuf>> {
    let summaries = summarize_addition(cells);
    let tasks = tables::task_order(cells.iter().map(|c| c.id.task.as_str()));
    let rankings = ranking_changes(&tasks, &summaries);
    let mut files = vec![write_curves(dir, cells)?];
    files.extend(write_addition_tables(dir, &summaries, &rankings)?);
    if let Some(table) = addition_profile_table(cells, &summaries)? {
        files.extend(write_profile(dir, &table)?);
    }
    Ok(files)
}

/// Cells recovered from a log, in grid order.
struct Replay {
    config: RunConfigFile,
    protocol: Option<ProtocolConfig>,
    end_to_end: Vec<EndToEndCell>,
    addition: Vec<AdditionCell>,
    complete: bool,
}

fn replay(records: &[LogRecord]) -> Result<Replay> {
    let Some(LogRecord::RunStarted { config }) = records.first() else {
        return Err(Error::Log(
            "log does not start with a run_started record".into(),
        ));
    };
    let protocol = match config.protocol {
        Protocol::Verify => None,
        _ => Some(config.protocol_config()?),
    };
    let mut out = Replay {
        config: config.clone(),
        protocol,
        end_to_end: Vec::new(),
        addition: Vec::new(),
        complete: false,
    };
    let mut pending: Vec<crate::hyperband::TrialEvent> = Vec::new();
    let mut curve: Option<AdditionOutcome> = None;
    let mut current: Option<CellId> = None;
    for record in &records[1..] {
        if let Some(cell) = record.cell() {
            if current.as_ref() != Some(cell) {
                current = Some(cell.clone());
                pending.clear();
                curve = None;
            }
        }
        match record {
            LogRecord::RunStarted { .. } => {
                return Err(Error::Log("second run_started record".into()))
            }
            LogRecord::AdditionCurve {
                omega,
                partial_curve,
                full_curve,
                ..
            } => {
                curve = Some(AdditionOutcome {
                    omega: omega.clone(),
                    partial_curve: partial_curve.clone(),
                    full_curve: full_curve.clone(),
                })
            }
            LogRecord::CellSummary {
                cell,
                direction,
                error,
                cpe,
                peak,
                ledger,
                best,
            } => {
                let events = std::mem::take(&mut pending);
                match config.protocol {
                    Protocol::End2end => {
                        let outcome = match error {
                            Some(e) => Err(e.clone()),
                            None => Ok(rebuild_end_to_end(
                                cell, *direction, &events, *cpe, *peak, *ledger, best,
                            )?),
                        };
                        out.end_to_end.push(EndToEndCell {
                            id: cell.clone(),
                            direction: *direction,
                            events,
                            outcome,
                        });
                    }
                    Protocol::DataAddition => {
                        let outcome = match error {
                            Some(e) => Err(e.clone()),
                            None => Ok(curve.take().ok_or_else(|| {
                                Error::Log(format!(
                                    "cell {} lacks its addition_curve",
                                    describe(cell)
                                ))
                            })?),
                        };
                        out.addition.push(AdditionCell {
                            id: cell.clone(),
                            direction: *direction,
                            events,
                            outcome,
                        });
                    }
                    Protocol::Verify => {}
                }
                current = None;
            }
            LogRecord::RunAborted { .. } => {}
            LogRecord::RunComplete { .. } => out.complete = true,
            other => {
                let (_, event) = other.to_event().expect("trial-level record");
                pending.push(event);
            }
        }
    }
    let expected = match &out.protocol {
        Some(p) => grid_ids(p)?,
        None => Vec::new(),
    };
    let got: Vec<&CellId> = out
        .end_to_end
        .iter()
        .map(|c| &c.id)
        .chain(out.addition.iter().map(|c| &c.id))
        .collect();
    if got.len() > expected.len() || got.iter().zip(&expected).any(|(a, b)| *a != b) {
        return Err(Error::Log(
            "cells in the log do not follow the config's grid".into(),
        ));
    }
    Ok(out)
}

fn describe(id: &CellId) -> String {
    format!("{}/{}/rep {}", id.task, id.optimizer, id.repetition)
}

fn rebuild_end_to_end(
    cell: &CellId,
    direction: crate::tasks::MetricDirection,
    events: &[crate::hyperband::TrialEvent],
    cpe: Option<f64>,
    peak: Option<f64>,
    ledger: Option<u64>,
    best: &Option<crate::hyperband::BestConfig>,
) -> Result<EndToEndOutcome> {
    let mut rec = TrajectoryRecorder::new(direction);
    for e in events {
        if let crate::hyperband::TrialEvent::EpochMetric {
            cumulative_epoch,
            value,
            ..
        } = e
        {
            rec.record(*cumulative_epoch, *value)?;
        }
    }
    let trajectory: Trajectory = rec.finish();
    let out = EndToEndOutcome {
        cpe: trajectory.cpe()?,
        peak: trajectory.peak()?,
        ledger: trajectory.len() as u64,
        trajectory,
        best: best
            .clone()
            .ok_or_else(|| Error::Log(format!("cell {} lacks its best config", describe(cell))))?,
    };
    let same = |a: Option<f64>, b: f64| a.map(f64::to_bits) == Some(b.to_bits());
    if !same(cpe, out.cpe) || !same(peak, out.peak) || ledger != Some(out.ledger) {
        return Err(Error::Log(format!(
            "cell {}: summary does not match its epoch records",
            describe(cell)
        )));
    }
    Ok(out)
}

/// Rebuilds the tables of kind `kind` from a results log into `out_dir`.
/// Fails, naming the missing records, when the log is truncated.
pub fn report(log_path: &Path, kind: ReportKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let contents = read_log(log_path)?;
    let replay = replay(&contents.records)?;
    let Some(protocol) = &replay.protocol else {
        return Err(Error::Log("verify runs have no tables to report".into()));
    };
    let expected = grid_ids(protocol)?;
    let got = replay.end_to_end.len() + replay.addition.len();
    let mut missing: Vec<String> = expected[got..]
        .iter()
        .map(|id| format!("cell_summary for {}", describe(id)))
        .collect();
    if !replay.complete {
        missing.push("run_complete".into());
    }
    if !missing.is_empty() {
        return Err(Error::Log(format!(
            "truncated results log{}; missing records: {}",
            if contents.torn {
                " (torn final line)"
            } else {
                ""
            },
            missing.join(", ")
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    match replay.config.protocol {
        Protocol::End2end => {
            let cells = &replay.end_to_end;
            let summaries = summarize_end_to_end(replay.config.mode, cells);
            match kind {
                ReportKind::CpeTable => write_cpe_table(out_dir, &summaries),
                ReportKind::PeakTable => write_peak_table(out_dir, &summaries),
                ReportKind::Curves => Ok(vec![write_trajectories(out_dir, cells)?]),
                ReportKind::Profile => match end_to_end_profile_table(cells, &summaries)? {
                    Some(table) => write_profile(out_dir, &table),
                    None => Err(profile_unavailable()),
                },
            }
        }
        Protocol::DataAddition => {
            let cells = &replay.addition;
            let summaries = summarize_addition(cells);
            let tasks = tables::task_order(cells.iter().map(|c| c.id.task.as_str()));
            let rankings = ranking_changes(&tasks, &summaries);
            match kind {
                ReportKind::CpeTable => write_addition_tables(out_dir, &summaries, &rankings),
                ReportKind::Curves => Ok(vec![write_curves(out_dir, cells)?]),
                ReportKind::Profile => match addition_profile_table(cells, &summaries)? {
                    Some(table) => write_profile(out_dir, &table),
                    None => Err(profile_unavailable()),
                },
                ReportKind::PeakTable => Err(Error::invalid(
                    "peak_table applies to end2end runs; use cpe_table or curves",
                )),
            }
        }
        Protocol::Verify => unreachable!("no protocol config for verify"),
    }
}

fn profile_unavailable() -> Error {
    Error::invalid("a profile needs at least two optimizers with results on every task")
}
