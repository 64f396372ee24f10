//! Agent-scaling experiment: best speedup as a function of the number of
//! agents, averaged over repeats.

use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{execute, io_err, read, to_json, write_file, HarnessError, RunConfig};
use crate::cost::Evaluator;
use crate::exec::Exec;
use crate::ir::Design;
use crate::stage2::ExplorationRecord;

/// Repeat `r` runs with seed `cfg.seed + r · REPEAT_SEED_STRIDE`. Agent `i`
/// adds `i`, so agent seeds of different repeats never collide while fewer
/// than this many agents run.
pub const REPEAT_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub mean_speedup: f64,
    pub min_speedup: f64,
    pub max_speedup: f64,
    /// Final latency of each repeat, in repeat order.
    pub best_latencies: Vec<u64>,
    /// Change in mean speedup relative to the previous row, in percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_pct: Option<f64>,
}

/// All records of one N, taken from the first repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub n: usize,
    pub records: Vec<ExplorationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub design_name: String,
    pub baseline_latency: u64,
    pub repeats: usize,
    pub rows: Vec<ScalingRow>,
    pub series: Vec<Series>,
}

/// Runs the pipeline once per (N, repeat) with `cfg` otherwise unchanged.
/// Because agent `i` always uses seed `base + i`, the agent set at smaller N
/// is a prefix of the one at larger N within a repeat.
pub fn scaling_experiment(
    design: &Design,
    cfg: &RunConfig,
    evaluator: &dyn Evaluator,
    n_values: &[usize],
    repeats: usize,
    exec: Exec,
) -> Result<ScalingReport, HarnessError> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(HarnessError::Input(
            "n_values must be non-empty positive agent counts".into(),
        ));
    }
    if repeats == 0 {
        return Err(HarnessError::Input("repeats must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| (0..repeats).map(move |r| (n, r)))
        .collect();
    let runs = exec.map(&jobs, |&(n, r)| {
        let mut c = cfg.clone();
        c.agents_n = n;
        c.seed = cfg.seed.wrapping_add(r as u64 * REPEAT_SEED_STRIDE);
        execute(design, &c, evaluator, exec).map(|o| o.record)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let baseline_latency = runs[0].baseline_metrics.latency;

    let mut rows: Vec<ScalingRow> = Vec::new();
    let mut series = Vec::new();
    for (k, &n) in n_values.iter().enumerate() {
        let mine = &runs[k * repeats..(k + 1) * repeats];
        let speedups: Vec<f64> = mine.iter().map(|r| r.speedup()).collect();
        let mean = speedups.iter().sum::<f64>() / repeats as f64;
        let gain_pct = rows
            .last()
            .map(|prev| 100.0 * (mean - prev.mean_speedup) / prev.mean_speedup);
        rows.push(ScalingRow {
            n,
            mean_speedup: mean,
            min_speedup: speedups.iter().copied().fold(f64::INFINITY, f64::min),
            max_speedup: speedups.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            best_latencies: mine.iter().map(|r| r.final_record.latency).collect(),
            gain_pct,
        });
        series.push(Series {
            n,
            records: mine[0].records.clone(),
        });
    }
    Ok(ScalingReport {
        design_name: design.name.clone(),
        baseline_latency,
        repeats,
        rows,
        series,
    })
}

pub fn write_scaling(dir: &FsPath, report: &ScalingReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("scaling.json"), &to_json(report))
}

pub fn load_scaling(dir: &FsPath) -> Result<ScalingReport, HarnessError> {
    let path = dir.join("scaling.json");
    serde_json::from_str(&read(&path)?)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}
