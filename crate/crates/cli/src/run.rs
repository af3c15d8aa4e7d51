//! `simulate` and `compare`: paired ensembles fanned out over threads and
//! written as CSV plus an optional JSON-lines step log.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use speccascade_core::sim::{run_decode, summarize, EnsembleRow, EnsembleTable, RunOptions, SimResult, StepRecord};

use crate::config::ResolvedRun;
use crate::CliError;

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SEGMENTS_CSV: &str = "segments.csv";
pub const CONFIGS_CSV: &str = "configs.csv";
pub const COMPARE_CSV: &str = "compare.csv";
pub const STEP_LOG: &str = "steps.jsonl";

/// All sessions of a run, `results[i][j]` for scheduler `i` and seed `j`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub seeds: Vec<u64>,
    pub results: Vec<Vec<SimResult>>,
}

impl Ensemble {
    pub fn table(&self) -> EnsembleTable {
        EnsembleTable::from_results(self.seeds.clone(), &self.results)
    }

    fn scheduler_index(&self, name: &str) -> Option<usize> {
        self.results.iter().position(|r| r.first().is_some_and(|x| x.scheduler == name))
    }
}

/// Runs every (scheduler, seed) session in parallel; the merge order is
/// fixed, so results do not depend on the thread count.
pub fn run_sessions(run: &ResolvedRun) -> Result<Ensemble, CliError> {
    let options = RunOptions {
        log_steps: run.output.step_log,
        log_trees: false,
        log_estimates: run.output.log_estimates,
    };
    let jobs: Vec<(usize, u64)> =
        (0..run.schedulers.len()).flat_map(|i| run.seeds.iter().map(move |&s| (i, s))).collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(i, seed)| run_decode(&run.scenario, &run.schedulers[i], seed, options))
        .collect();
    let mut flat = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        flat.push(o?);
    }
    let per = run.seeds.len();
    let mut results = Vec::with_capacity(run.schedulers.len());
    let mut it = flat.into_iter();
    for _ in 0..run.schedulers.len() {
        results.push(it.by_ref().take(per).collect());
    }
    Ok(Ensemble { seeds: run.seeds.clone(), results })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

#[derive(Serialize)]
struct ResultRow<'a> {
    scheduler: &'a str,
    seed: u64,
    tokens_generated: usize,
    cost_units: f64,
    empirical_ewif: f64,
    cycles: u64,
    calibration_cycles: u64,
    draft_calls: u64,
}

#[derive(Serialize)]
struct SegmentRow<'a> {
    scheduler: &'a str,
    seed: u64,
    segment_start: usize,
    tokens: usize,
    cost_units: f64,
    ewif: f64,
}

#[derive(Serialize)]
struct ConfigRow<'a> {
    scheduler: &'a str,
    seed: u64,
    config: &'a str,
    selected: u64,
}

#[derive(Serialize)]
struct StepLine<'a> {
    scheduler: &'a str,
    seed: u64,
    #[serde(flatten)]
    step: &'a StepRecord,
}

/// Writes `results.csv`, `summary.csv`, `segments.csv`, `configs.csv` and,
/// when steps were logged, `steps.jsonl`. Returns the written paths.
pub fn write_simulation(ens: &Ensemble, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let all = || ens.results.iter().flatten();

    let mut w = csv::Writer::from_writer(create(dir, RESULTS_CSV)?);
    for r in all() {
        w.serialize(ResultRow {
            scheduler: &r.scheduler,
            seed: r.seed,
            tokens_generated: r.tokens_generated,
            cost_units: r.cost_units,
            empirical_ewif: r.empirical_ewif,
            cycles: r.cycles,
            calibration_cycles: r.calibration_cycles,
            draft_calls: r.draft_calls,
        })?;
    }
    w.flush()?;

    write_summary(&ens.table().rows, create(dir, SUMMARY_CSV)?)?;

    let mut w = csv::Writer::from_writer(create(dir, SEGMENTS_CSV)?);
    for r in all() {
        for s in &r.segments {
            w.serialize(SegmentRow {
                scheduler: &r.scheduler,
                seed: r.seed,
                segment_start: s.start,
                tokens: s.tokens,
                cost_units: s.cost_units,
                ewif: s.ewif(),
            })?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(dir, CONFIGS_CSV)?);
    for r in all() {
        for c in &r.config_counts {
            w.serialize(ConfigRow { scheduler: &r.scheduler, seed: r.seed, config: &c.config, selected: c.selected })?;
        }
    }
    w.flush()?;

    let mut paths: Vec<PathBuf> =
        [RESULTS_CSV, SUMMARY_CSV, SEGMENTS_CSV, CONFIGS_CSV].iter().map(|n| dir.join(n)).collect();
    if all().any(|r| !r.steps.is_empty()) {
        let mut w = create(dir, STEP_LOG)?;
        for r in all() {
            for step in &r.steps {
                let line = StepLine { scheduler: &r.scheduler, seed: r.seed, step };
                serde_json::to_writer(&mut w, &line).map_err(|e| CliError::Io(e.to_string()))?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        paths.push(dir.join(STEP_LOG));
    }
    Ok(paths)
}

pub fn write_summary<W: Write>(rows: &[EnsembleRow], w: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One scheduler relative to the baseline under paired seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub scheduler: String,
    pub mean_ewif: f64,
    /// Mean over seeds of `ewif / baseline ewif`.
    pub ratio: f64,
    pub ratio_sd: f64,
    pub ratio_ci_low: f64,
    pub ratio_ci_high: f64,
    /// Seeds where the scheduler beat the baseline.
    pub wins: usize,
    pub losses: usize,
}

pub fn compare(ens: &Ensemble, baseline: &str) -> Result<Vec<CompareRow>, CliError> {
    let b = ens
        .scheduler_index(baseline)
        .ok_or_else(|| CliError::usage(format!("baseline `{baseline}` is not in the scheduler list")))?;
    let base: Vec<f64> = ens.results[b].iter().map(|r| r.empirical_ewif).collect();
    Ok(ens
        .results
        .iter()
        .map(|runs| {
            let ewif: Vec<f64> = runs.iter().map(|r| r.empirical_ewif).collect();
            let ratios: Vec<f64> = ewif.iter().zip(&base).map(|(x, y)| x / y).collect();
            let name = runs.first().map_or("", |r| r.scheduler.as_str());
            let s = summarize(name, &ratios);
            CompareRow {
                scheduler: name.to_string(),
                mean_ewif: summarize(name, &ewif).mean,
                ratio: s.mean,
                ratio_sd: s.sd,
                ratio_ci_low: s.ci_low,
                ratio_ci_high: s.ci_high,
                wins: ewif.iter().zip(&base).filter(|(x, y)| x > y).count(),
                losses: ewif.iter().zip(&base).filter(|(x, y)| x < y).count(),
            }
        })
        .collect())
}

pub fn write_compare<W: Write>(rows: &[CompareRow], w: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_compare_file(rows: &[CompareRow], dir: &Path) -> Result<PathBuf, CliError> {
    write_compare(rows, create(dir, COMPARE_CSV)?)?;
    Ok(dir.join(COMPARE_CSV))
}

/// Plain-text table for the terminal.
pub fn render_summary(rows: &[EnsembleRow]) -> String {
    let width = rows.iter().map(|r| r.scheduler.len()).max().unwrap_or(9).max(9);
    let mut s = format!("{:<width$}  {:>5}  {:>9}  {:>8}\n", "scheduler", "runs", "ewif", "sd");
    for r in rows {
        s.push_str(&format!("{:<width$}  {:>5}  {:>9.5}  {:>8.5}\n", r.scheduler, r.runs, r.mean, r.sd));
    }
    s
}

pub fn render_compare(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.scheduler.len()).max().unwrap_or(9).max(9);
    let mut s = format!("{:<width$}  {:>9}  {:>8}  {:>5}  {:>6}\n", "scheduler", "ewif", "ratio", "wins", "losses");
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>9.5}  {:>8.5}  {:>5}  {:>6}\n",
            r.scheduler, r.mean_ewif, r.ratio, r.wins, r.losses
        ));
    }
    s
}
