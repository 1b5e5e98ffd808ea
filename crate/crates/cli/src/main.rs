use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use optbench::io::{self, Protocol, ReportKind, RunConfigFile, OUTPUT_DIR_ENV};
use optbench::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Tune and compare stochastic optimizers on seeded synthetic tasks.
#[derive(Parser)]
#[command(name = "optbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol described by a config file.
    Bench {
        config: PathBuf,
        /// Keep the finished cells of an interrupted run in the output
        /// directory and run only the rest.
        #[arg(long)]
        resume: bool,
    },
    /// Rebuild summary tables from a results log.
    Report {
        results: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Output directory; defaults to the directory of the log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient, bracket and update-rule self-checks.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Kind {
    CpeTable,
    PeakTable,
    Profile,
    Curves,
}

impl From<Kind> for ReportKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::CpeTable => ReportKind::CpeTable,
            Kind::PeakTable => ReportKind::PeakTable,
            Kind::Profile => ReportKind::Profile,
            Kind::Curves => ReportKind::Curves,
        }
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config { .. } | Error::UnknownRule(_)) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self { code, error }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Bench { config, resume } => bench(&config, resume),
        Command::Report { results, kind, out } => report(&results, kind.into(), out),
        Command::Verify => verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn bench(path: &Path, resume: bool) -> Result<(), Failure> {
    // Any problem reading the config is a usage error.
    let config = RunConfigFile::load(path).map_err(|e| Failure {
        code: EXIT_USAGE,
        error: anyhow::Error::new(e).context(format!("loading config {}", path.display())),
    })?;
    let out_dir = config.resolve_output_dir(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from));
    let start = Instant::now();
    let outcome = io::run_bench(&config, &out_dir, resume)
        .with_context(|| format!("running {}", path.display()))?;
    eprintln!("finished in {:.1} s", start.elapsed().as_secs_f64());
    if outcome.resumed > 0 {
        println!("resumed {} finished cells", outcome.resumed);
    }
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    if let Some(reports) = &outcome.verify {
        print_matrix(reports);
        if reports.iter().any(|r| !r.passed) {
            return Err(anyhow::anyhow!("verification failed").into());
        }
    }
    if !outcome.failed.is_empty() {
        for (id, msg) in &outcome.failed {
            eprintln!(
                "cell {}/{}/rep {} failed: {msg}",
                id.task, id.optimizer, id.repetition
            );
        }
        return Err(
            anyhow::anyhow!("{} of {} cells failed", outcome.failed.len(), outcome.cells).into(),
        );
    }
    if outcome.protocol != Protocol::Verify {
        println!(
            "{} cells complete in {}",
            outcome.cells,
            outcome.output_dir.display()
        );
    }
    Ok(())
}

fn report(results: &Path, kind: ReportKind, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = out.unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
    let files = io::report(results, kind, &out)
        .with_context(|| format!("reporting from {}", results.display()))?;
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn verify() -> Result<(), Failure> {
    let reports = optbench::verify::run_all();
    print_matrix(&reports);
    for r in &reports {
        for f in &r.failures {
            eprintln!("{}: {f}", r.name);
        }
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        let failed: Vec<_> = reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect();
        Err(Failure {
            code: EXIT_RUNTIME,
            error: anyhow::anyhow!("failing suites: {}", failed.join(", ")),
        })
    }
}

fn print_matrix(reports: &[optbench::verify::SuiteReport]) {
    println!("{:<12} {:>7} {:>9}  result", "suite", "checks", "failures");
    for r in reports {
        println!(
            "{:<12} {:>7} {:>9}  {}",
            r.name,
            r.checks,
            r.failures.len(),
            if r.passed { "pass" } else { "FAIL" }
        );
    }
}
