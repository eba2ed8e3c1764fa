//! Experiment runner behind the `adjoint-lab` binary.
//!
//! `run` resolves the configuration, runs the experiment and writes
//! `<out>/<experiment>.csv` and `<out>/<experiment>.json`. Nothing is written
//! unless the configuration is valid and the computation finished.

pub mod config;
pub mod experiments;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use config::{resolve, ConfigError, Experiment, Resolved, RunArgs, SEED_ENV};
pub use experiments::{Cell, Outcome, Table};

pub const EXIT_PASSED: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_INVALID: u8 = 2;

pub fn render_csv(table: &Table) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Paths of the two artifacts.
pub fn artifact_paths(cfg: &Resolved) -> (PathBuf, PathBuf) {
    let stem = cfg.experiment.as_str();
    (cfg.out.join(format!("{stem}.csv")), cfg.out.join(format!("{stem}.json")))
}

fn write_artifacts(cfg: &Resolved, outcome: &Outcome) -> io::Result<(PathBuf, PathBuf)> {
    let (csv_path, json_path) = artifact_paths(cfg);
    let csv = render_csv(&outcome.table).map_err(io::Error::other)?;
    let mut json = serde_json::to_string_pretty(&outcome.summary).map_err(io::Error::other)?;
    json.push('\n');
    fs::create_dir_all(&cfg.out)?;
    fs::write(&csv_path, csv)?;
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Runs one invocation and returns the process exit code.
pub fn execute(args: &RunArgs, env_seed: Option<&str>) -> u8 {
    let cfg = match resolve(args, env_seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let outcome = match experiments::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cfg.experiment);
            return EXIT_FAILED;
        }
    };
    match write_artifacts(&cfg, &outcome) {
        Ok((csv, json)) => {
            let verdict = if outcome.passed { "passed" } else { "FAILED" };
            println!("{}: {verdict} ({}, {})", cfg.experiment, display(&csv), display(&json));
        }
        Err(e) => {
            eprintln!("error: writing results to {}: {e}", display(&cfg.out));
            return EXIT_FAILED;
        }
    }
    if outcome.passed {
        EXIT_PASSED
    } else {
        EXIT_FAILED
    }
}
