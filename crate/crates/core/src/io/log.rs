use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfigFile;
use crate::error::{Error, Result};
use crate::hyperband::{BestConfig, TrialEvent};
use crate::optimizers::HyperparamVector;
use crate::protocols::CellId;
use crate::tasks::MetricDirection;

pub const LOG_VERSION: u32 = 1;

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    RunStarted {
        config: RunConfigFile,
    },
    ConfigSampled {
        cell: CellId,
        trial: usize,
        pass: usize,
        bracket: u32,
        draw_seed: u64,
        config: HyperparamVector,
    },
    EpochMetric {
        cell: CellId,
        trial: usize,
        epoch: u64,
        cumulative_epoch: u64,
        value: f64,
        diverged: bool,
    },
    Divergence {
        cell: CellId,
        trial: usize,
        epoch: u64,
    },
    RungPromotion {
        cell: CellId,
        pass: usize,
        bracket: u32,
        rung: usize,
        promoted: Vec<usize>,
        epochs: u64,
    },
    AdditionCurve {
        cell: CellId,
        omega: BestConfig,
        partial_curve: Vec<f64>,
        full_curve: Vec<f64>,
    },
    CellSummary {
        cell: CellId,
        direction: MetricDirection,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cpe: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peak: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ledger: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        best: Option<BestConfig>,
    },
    RunAborted {
        resumable: bool,
        reason: String,
    },
    RunComplete {
        cells: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(flatten)]
    record: LogRecord,
}

impl LogRecord {
    pub fn from_event(cell: &CellId, event: &TrialEvent) -> Self {
        let cell = cell.clone();
        match event.clone() {
            TrialEvent::ConfigSampled {
                trial,
                pass,
                bracket,
                draw_seed,
                config,
            } => LogRecord::ConfigSampled {
                cell,
                trial,
                pass,
                bracket,
                draw_seed,
                config,
            },
            TrialEvent::EpochMetric {
                trial,
                epoch,
                cumulative_epoch,
                value,
                diverged,
            } => LogRecord::EpochMetric {
                cell,
                trial,
                epoch,
                cumulative_epoch,
                value,
                diverged,
            },
            TrialEvent::Divergence { trial, epoch } => LogRecord::Divergence { cell, trial, epoch },
            TrialEvent::RungPromotion {
                pass,
                bracket,
                rung,
                promoted,
                epochs,
            } => LogRecord::RungPromotion {
                cell,
                pass,
                bracket,
                rung,
                promoted,
                epochs,
            },
        }
    }

    /// The tuner event and its cell, for trial-level records.
    pub fn to_event(&self) -> Option<(&CellId, TrialEvent)> {
        Some(match self.clone() {
            LogRecord::ConfigSampled {
                trial,
                pass,
                bracket,
                draw_seed,
                config,
                ..
            } => (
                self.cell()?,
                TrialEvent::ConfigSampled {
                    trial,
                    pass,
                    bracket,
                    draw_seed,
                    config,
                },
            ),
            LogRecord::EpochMetric {
                trial,
                epoch,
                cumulative_epoch,
                value,
                diverged,
                ..
            } => (
                self.cell()?,
                TrialEvent::EpochMetric {
                    trial,
                    epoch,
                    cumulative_epoch,
                    value,
                    diverged,
                },
            ),
            LogRecord::Divergence { trial, epoch, .. } => {
                (self.cell()?, TrialEvent::Divergence { trial, epoch })
            }
            LogRecord::RungPromotion {
                pass,
                bracket,
                rung,
                promoted,
                epochs,
                ..
            } => (
                self.cell()?,
                TrialEvent::RungPromotion {
                    pass,
                    bracket,
                    rung,
                    promoted,
                    epochs,
                },
            ),
            _ => return None,
        })
    }

    pub fn cell(&self) -> Option<&CellId> {
        match self {
            LogRecord::ConfigSampled { cell, .. }
            | LogRecord::EpochMetric { cell, .. }
            | LogRecord::Divergence { cell, .. }
            | LogRecord::RungPromotion { cell, .. }
            | LogRecord::AdditionCurve { cell, .. }
            | LogRecord::CellSummary { cell, .. } => Some(cell),
            _ => None,
        }
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope {
            v: LOG_VERSION,
            record: self.clone(),
        })?)
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let env: Envelope =
            serde_json::from_str(line).map_err(|e| Error::Log(format!("malformed record: {e}")))?;
        if env.v != LOG_VERSION {
            return Err(Error::Log(format!("unsupported record version {}", env.v)));
        }
        Ok(env.record)
    }
}

/// Append-only writer; each record is one flushed line.
pub struct ResultsLog {
    out: BufWriter<File>,
}

impl ResultsLog {
    /// Creates or truncates the log at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn open_append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        let line = record.to_line()?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Records of a log file. A final line without its newline is a torn write
/// from an interrupted run and is dropped; `torn` reports whether that
/// happened.
pub struct LogContents {
    pub records: Vec<LogRecord>,
    pub torn: bool,
}

pub fn read_log(path: &Path) -> Result<LogContents> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut torn = false;
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            torn = true;
            break;
        }
        let text = line.trim_end();
        if text.is_empty() {
            continue;
        }
        let record =
            LogRecord::from_line(text).map_err(|e| Error::Log(format!("line {number}: {e}")))?;
        records.push(record);
    }
    Ok(LogContents { records, torn })
}
