//! Summary tables. The online run and log replay both go through these
//! writers, so their files are byte-identical.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{default_tau_grid, perf_profile, perf_ratios, ProfileTable};
use crate::protocols::{AdditionCell, AdditionSummary, CellSummary, EndToEndCell, RankingChange};
use crate::tasks::MetricDirection;

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Log(format!("csv: {other:?}")),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `trajectory.csv`: best-so-far value per cumulative epoch of each cell.
pub fn write_trajectories(dir: &Path, cells: &[EndToEndCell]) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for cell in cells {
        let Ok(out) = &cell.outcome else { continue };
        for (i, v) in out.trajectory.values.iter().enumerate() {
            rows.push(vec![
                cell.id.task.clone(),
                cell.id.optimizer.to_string(),
                cell.id.repetition.to_string(),
                cell.id.seed.to_string(),
                (i + 1).to_string(),
                num(*v),
            ]);
        }
    }
    let path = dir.join("trajectory.csv");
    write_csv(
        &path,
        &[
            "task",
            "optimizer",
            "repetition",
            "seed",
            "cumulative_epoch",
            "best_so_far",
        ],
        &rows,
    )?;
    Ok(path)
}

/// `cpe_summary.csv` and `.json`.
pub fn write_cpe_table(dir: &Path, summaries: &[CellSummary]) -> Result<Vec<PathBuf>> {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.optimizer.to_string(),
                s.task.clone(),
                mode_name(s),
                opt(s.mean_cpe),
                opt(s.std_cpe),
                opt(s.mean_peak),
                opt(s.std_peak),
                s.repetitions.to_string(),
                s.failed.to_string(),
            ]
        })
        .collect();
    let csv = dir.join("cpe_summary.csv");
    write_csv(
        &csv,
        &[
            "optimizer",
            "task",
            "mode",
            "mean_cpe",
            "std_cpe",
            "mean_peak",
            "std_peak",
            "repetitions",
            "failed",
        ],
        &rows,
    )?;
    let json = dir.join("cpe_summary.json");
    write_json(&json, summaries)?;
    Ok(vec![csv, json])
}

/// `peak_table.csv` and `.json`.
pub fn write_peak_table(dir: &Path, summaries: &[CellSummary]) -> Result<Vec<PathBuf>> {
    #[derive(Serialize)]
    struct PeakRow<'a> {
        optimizer: String,
        task: &'a str,
        mode: String,
        mean_peak: Option<f64>,
        std_peak: Option<f64>,
    }
    let table: Vec<PeakRow> = summaries
        .iter()
        .map(|s| PeakRow {
            optimizer: s.optimizer.to_string(),
            task: &s.task,
            mode: mode_name(s),
            mean_peak: s.mean_peak,
            std_peak: s.std_peak,
        })
        .collect();
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            vec![
                r.optimizer.clone(),
                r.task.to_string(),
                r.mode.clone(),
                opt(r.mean_peak),
                opt(r.std_peak),
            ]
        })
        .collect();
    let csv = dir.join("peak_table.csv");
    write_csv(
        &csv,
        &["optimizer", "task", "mode", "mean_peak", "std_peak"],
        &rows,
    )?;
    let json = dir.join("peak_table.json");
    write_json(&json, &table)?;
    Ok(vec![csv, json])
}

fn mode_name(s: &CellSummary) -> String {
    serde_json::to_value(s.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Profile table over mean CPE, or `None` when some task has fewer than two
/// optimizers with a result.
pub fn end_to_end_profile_table(
    cells: &[EndToEndCell],
    summaries: &[CellSummary],
) -> Result<Option<ProfileTable>> {
    let mut table = ProfileTable::new();
    for s in summaries {
        let direction = direction_of(cells.iter().map(|c| (&c.id.task, c.direction)), &s.task);
        if let Some(v) = s.mean_cpe {
            table.insert(&s.task, direction, s.optimizer.name(), v)?;
        }
    }
    Ok(profile_ready(table))
}

/// Profile table over full-data CPE of the data-addition protocol.
pub fn addition_profile_table(
    cells: &[AdditionCell],
    summaries: &[AdditionSummary],
) -> Result<Option<ProfileTable>> {
    let mut table = ProfileTable::new();
    for s in summaries {
        let direction = direction_of(cells.iter().map(|c| (&c.id.task, c.direction)), &s.task);
        if let Some(v) = s.full_cpe {
            table.insert(&s.task, direction, s.optimizer.name(), v)?;
        }
    }
    Ok(profile_ready(table))
}

fn direction_of<'a>(
    mut cells: impl Iterator<Item = (&'a String, MetricDirection)>,
    task: &str,
) -> MetricDirection {
    cells
        .find(|(t, _)| t.as_str() == task)
        .map(|(_, d)| d)
        .unwrap_or(MetricDirection::HigherBetter)
}

fn profile_ready(table: ProfileTable) -> Option<ProfileTable> {
    let ok = !table.tasks.is_empty() && table.tasks.values().all(|t| t.scores.len() >= 2);
    ok.then_some(table)
}

/// `profile.csv` (long format: optimizer, tau, rho) and `.json`.
pub fn write_profile(dir: &Path, table: &ProfileTable) -> Result<Vec<PathBuf>> {
    #[derive(Serialize)]
    struct Profile {
        tau: Vec<f64>,
        rho: std::collections::BTreeMap<String, Vec<f64>>,
    }
    let taus = default_tau_grid();
    let rho = perf_profile(&perf_ratios(table)?, &taus)?;
    let mut rows = Vec::new();
    for (o, curve) in &rho {
        for (tau, r) in taus.iter().zip(curve) {
            rows.push(vec![o.clone(), num(*tau), num(*r)]);
        }
    }
    let csv = dir.join("profile.csv");
    write_csv(&csv, &["optimizer", "tau", "rho"], &rows)?;
    let json = dir.join("profile.json");
    write_json(&json, &Profile { tau: taus, rho })?;
    Ok(vec![csv, json])
}

/// `curves.csv`: raw per-epoch metrics of every data-addition cell.
pub fn write_curves(dir: &Path, cells: &[AdditionCell]) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for cell in cells {
        let Ok(out) = &cell.outcome else { continue };
        for (i, (p, f)) in out.partial_curve.iter().zip(&out.full_curve).enumerate() {
            rows.push(vec![
                cell.id.task.clone(),
                cell.id.optimizer.to_string(),
                cell.id.repetition.to_string(),
                cell.id.seed.to_string(),
                (i + 1).to_string(),
                num(*p),
                num(*f),
            ]);
        }
    }
    let path = dir.join("curves.csv");
    write_csv(
        &path,
        &[
            "task",
            "optimizer",
            "repetition",
            "seed",
            "epoch",
            "partial",
            "full",
        ],
        &rows,
    )?;
    Ok(path)
}

/// `addition_summary.csv`, `addition_rankings.csv` and
/// `addition_summary.json`.
pub fn write_addition_tables(
    dir: &Path,
    summaries: &[AdditionSummary],
    rankings: &[RankingChange],
) -> Result<Vec<PathBuf>> {
    let rank = |r: Option<usize>| r.map(|x| x.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.task.clone(),
                s.optimizer.to_string(),
                opt(s.partial_cpe),
                opt(s.full_cpe),
                rank(s.partial_rank),
                rank(s.full_rank),
                s.repetitions.to_string(),
                s.failed.to_string(),
            ]
        })
        .collect();
    let summary = dir.join("addition_summary.csv");
    write_csv(
        &summary,
        &[
            "task",
            "optimizer",
            "partial_cpe",
            "full_cpe",
            "partial_rank",
            "full_rank",
            "repetitions",
            "failed",
        ],
        &rows,
    )?;
    let join = |rules: &[crate::optimizers::Rule]| {
        rules.iter().map(|r| r.name()).collect::<Vec<_>>().join(">")
    };
    let rows: Vec<Vec<String>> = rankings
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                join(&r.before),
                join(&r.after),
                opt(r.kendall_tau),
            ]
        })
        .collect();
    let ranking = dir.join("addition_rankings.csv");
    write_csv(&ranking, &["task", "before", "after", "kendall_tau"], &rows)?;
    #[derive(Serialize)]
    struct Both<'a> {
        summaries: &'a [AdditionSummary],
        rankings: &'a [RankingChange],
    }
    let json = dir.join("addition_summary.json");
    write_json(
        &json,
        &Both {
            summaries,
            rankings,
        },
    )?;
    Ok(vec![summary, ranking, json])
}

/// Task names in first-appearance order.
pub fn task_order<'a>(tasks: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tasks
        .filter(|t| seen.insert(t.to_string()))
        .map(str::to_string)
        .collect()
}
