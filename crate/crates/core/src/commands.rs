//! Subcommands behind the `fkdiff` binary. Each writes its report to the
//! given sink and returns whether it succeeded.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::harness::{run_experiment, MethodKind, RunMetrics};
use crate::par::ExecMode;
use crate::verify::{run_checks, tilted_gaussian_check, Level};
use crate::{Error, Result};

/// Files written by [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub diagnostics: Option<PathBuf>,
    pub metrics: RunMetrics,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
        )),
        _ => fs::create_dir(dir).map_err(|e| Error::io(dir, e)),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Per-category ensemble accuracy (%) for each method, plus the gain of each
/// method over `pure_diffusion` when that method was run.
pub fn accuracy_table(metrics: &RunMetrics) -> String {
    let categories: BTreeSet<&str> = metrics
        .summary
        .iter()
        .flat_map(|s| s.per_category.keys().map(String::as_str))
        .collect();
    let reference = metrics.summary_for(MethodKind::PureDiffusion);
    let mut out = format!("{:<16}", "method");
    for c in &categories {
        out.push_str(&format!("{c:>10}"));
    }
    out.push_str(&format!("{:>10}{:>12}\n", "average", "gain/pure"));
    for s in &metrics.summary {
        out.push_str(&format!("{:<16}", s.method.as_str()));
        for c in &categories {
            out.push_str(&format!("{:>10}", pct(s.per_category.get(*c).copied())));
        }
        let gain = match (s.avg_ensemble, reference.and_then(|r| r.avg_ensemble)) {
            (Some(a), Some(b)) => format!("{:+.2}", 100.0 * (a - b)),
            _ => "-".into(),
        };
        out.push_str(&format!("{:>10}{:>12}\n", pct(s.avg_ensemble), gain));
    }
    out.push_str(&format!(
        "no-adaptation classifier accuracy: {}%   (seed {}, config {})\n",
        pct(metrics.average_baseline()),
        metrics.seed,
        metrics.config_digest
    ));
    out
}

/// Runs the experiment and writes `metrics.csv`, `metrics.json` and, when
/// enabled, `diagnostics.csv` into the output directory.
pub fn cmd_run(config: &ExperimentConfig, exec: ExecMode, out: &mut dyn Write) -> Result<RunOutputs> {
    let experiment = config.build(exec)?;
    let metrics = run_experiment(&experiment)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let csv = dir.join("metrics.csv");
    let json = dir.join("metrics.json");
    write_file(&csv, &metrics.to_csv())?;
    let doc = serde_json::json!({
        "seed": metrics.seed,
        "config_digest": metrics.config_digest,
        "config": config.to_text(),
        "cells": metrics.cells,
        "summary": metrics.summary,
    });
    write_file(&json, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    let diagnostics = if config.diagnostics {
        let p = dir.join("diagnostics.csv");
        write_file(&p, &metrics.diagnostics_csv())?;
        Some(p)
    } else {
        None
    };
    write!(out, "{}", accuracy_table(&metrics)).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(RunOutputs {
        csv,
        json,
        diagnostics,
        metrics,
    })
}

/// Prints one line per check; `Ok(true)` iff every check passed.
pub fn cmd_verify(level: Level, out: &mut dyn Write) -> Result<bool> {
    let results = run_checks(level);
    let io = |e| Error::io(Path::new("<stdout>"), e);
    for r in &results {
        writeln!(
            out,
            "[{}] {:<40} {} ({:.2}s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
            r.seconds
        )
        .map_err(io)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} checks, {} failed", results.len(), failed).map_err(io)?;
    Ok(failed == 0)
}

/// Tilted-Gaussian comparison: steered draws vs rejection samples and the
/// closed form `N(lambda c, 1)`.
pub fn cmd_oracle(config: &ExperimentConfig, out: &mut dyn Write) -> Result<bool> {
    let slope = 0.5;
    let runs = 2000;
    let r = tilted_gaussian_check(64, runs, config.lambda, slope, config.seed)?;
    let ok = r.ks_closed_form < 0.05 && r.ks_rejection < 0.05;
    writeln!(
        out,
        "tilted target N({:.3}, 1), K = 64, {runs} runs\n  steered mean      {:.4}\n  KS vs closed form {:.4}\n  KS vs rejection   {:.4}\n{}",
        r.target_mean,
        r.steered_mean,
        r.ks_closed_form,
        r.ks_rejection,
        if ok { "PASS" } else { "FAIL" }
    )
    .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(ok)
}

pub fn cmd_show_config(config: &ExperimentConfig) -> String {
    config.to_text()
}
