//! End-to-end pipeline driver, run persistence, agent-scaling experiments
//! and reporting.

mod analysis;
mod report;
mod scaling;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    AdapterCommand, BuiltinEvaluator, CostParams, EvalError, Evaluator, ExternalEvaluator, Metrics,
};
use crate::exec::Exec;
use crate::ilp::{
    build_latency_model, solve_top_n, IlpError, IlpProblem, IlpSolution, LatencyModel,
};
use crate::ir::{extract_call_graph, load_design, Design, IrError};
use crate::stage1::{run_stage1, OptimizerPolicy, VariantSet};
use crate::stage2::{
    materialize, run_stage2, select_final, Context, ExplorationRecord, ExplorerConfig, PragmaPool,
    Stage2Error,
};
use crate::transforms::EquivalenceChecker;

pub use analysis::{
    pareto_front, pareto_oracle, pearson_correlation, points_from_records, ParetoPoint, StatsError,
};
pub use report::{emit_report, render_svg};
pub use scaling::{
    load_scaling, scaling_experiment, write_scaling, ScalingReport, ScalingRow, Series,
    REPEAT_SEED_STRIDE,
};

/// Where the evaluator comes from: the analytical model or a subprocess
/// adapter, written `builtin` or `cmd:<program> [args…]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvaluatorSpec {
    #[default]
    Builtin,
    Command(String),
}

impl TryFrom<String> for EvaluatorSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Self::parse(&s)
    }
}

impl From<EvaluatorSpec> for String {
    fn from(e: EvaluatorSpec) -> String {
        match e {
            EvaluatorSpec::Builtin => "builtin".to_string(),
            EvaluatorSpec::Command(c) => c,
        }
    }
}

impl EvaluatorSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "builtin" {
            Ok(EvaluatorSpec::Builtin)
        } else if s.starts_with("cmd:") && AdapterCommand::parse(s).is_some() {
            Ok(EvaluatorSpec::Command(s.to_string()))
        } else {
            Err(format!(
                "evaluator must be `builtin` or `cmd:<program> [args…]`, got `{s}`"
            ))
        }
    }
}

/// Prefix selecting a bundled fixture instead of a file in `design_path`.
pub const FIXTURE_PREFIX: &str = "fixture:";

/// Loads a design file, or a bundled fixture when the path is
/// `fixture:<name>`.
pub fn load_design_from(path: &FsPath) -> Result<Design, HarnessError> {
    let p = path.to_string_lossy();
    if let Some(name) = p.strip_prefix(FIXTURE_PREFIX) {
        let f = crate::fixtures::get(name)
            .ok_or_else(|| HarnessError::Input(format!("no fixture named `{name}`")))?;
        return Ok(f.design());
    }
    Ok(load_design(&read(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub design_path: PathBuf,
    pub area_budget: u64,
    pub agents_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub evaluator: EvaluatorSpec,
    #[serde(default)]
    pub optimizer_policy: OptimizerPolicy,
    #[serde(default)]
    pub explorer_config: ExplorerConfig,
    pub output_dir: PathBuf,
    /// Cost-model parameter file for the builtin evaluator; frozen defaults
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_params: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &FsPath) -> Result<Self, HarnessError> {
        let text = read(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(FsPath::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() && !p.to_string_lossy().starts_with(FIXTURE_PREFIX) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.design_path);
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.cost_params.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.agents_n == 0 {
            return Err(HarnessError::Input("agents_n must be at least 1".into()));
        }
        self.explorer_config
            .check()
            .map_err(|e| HarnessError::Input(e.to_string()))
    }

    pub fn load_design(&self) -> Result<Design, HarnessError> {
        load_design_from(&self.design_path)
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, HarnessError> {
        Ok(match &self.evaluator {
            EvaluatorSpec::Builtin => {
                let params = match &self.cost_params {
                    Some(p) => CostParams::from_json(&read(p)?)
                        .map_err(|e| HarnessError::Input(e.to_string()))?,
                    None => CostParams::default(),
                };
                Box::new(BuiltinEvaluator::new(params))
            }
            EvaluatorSpec::Command(c) => {
                let cmd = AdapterCommand::parse(c)
                    .ok_or_else(|| HarnessError::Input(format!("bad command `{c}`")))?;
                Box::new(ExternalEvaluator::new(cmd))
            }
        })
    }

    /// Explorer and optimizer settings with the run seed applied.
    fn seeded(&self) -> (OptimizerPolicy, ExplorerConfig) {
        let mut policy = self.optimizer_policy.clone();
        if let OptimizerPolicy::Builtin { seed } = &mut policy {
            *seed = self.seed;
        }
        let mut explorer = self.explorer_config.clone();
        explorer.seed = self.seed;
        (policy, explorer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub design_name: String,
    pub design_hash: String,
    pub evaluator: String,
    /// Metrics of the unmodified design; its latency is the speedup
    /// denominator.
    pub baseline_metrics: Metrics,
    /// Budget handed to the ILP: the run budget less the area that no
    /// variant choice can change.
    pub ilp_area_budget: u64,
    pub latency_model: LatencyModel,
    pub variant_sets: Vec<VariantSet>,
    pub ilp_solutions: Vec<IlpSolution>,
    /// Every agent's records, ordered by (agent, step).
    pub records: Vec<ExplorationRecord>,
    #[serde(rename = "final")]
    pub final_record: ExplorationRecord,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn speedup(&self) -> f64 {
        self.baseline_metrics.latency as f64 / self.final_record.latency.max(1) as f64
    }

    /// Serialized form with the wall time zeroed; identical for identical
    /// deterministic runs.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        serde_json::to_string_pretty(&r).expect("records serialize")
    }

    /// Recomputes the final selection from the stored records.
    pub fn reselect(&self) -> Result<&ExplorationRecord, Stage2Error> {
        select_final(&self.records, self.config.area_budget)
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Design(#[from] IrError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run directory {0} is locked by another pipeline")]
    Locked(PathBuf),
    #[error("infeasible: no design fits the area budget {budget}; the minimum achievable area is {min_area}")]
    Infeasible { budget: u64, min_area: u64 },
    #[error(transparent)]
    Adapter(#[from] EvalError),
    #[error(transparent)]
    Ilp(IlpError),
    #[error(transparent)]
    Stage2(Stage2Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl HarnessError {
    /// Process exit status for the command line: 2 infeasible, 3 input
    /// error, 4 adapter failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Infeasible { .. } | HarnessError::Stage2(Stage2Error::NoFeasible(_)) => 2,
            HarnessError::Adapter(EvalError::UnknownFunction(_)) => 3,
            HarnessError::Adapter(_) | HarnessError::Stage2(Stage2Error::Eval(_)) => 4,
            _ => 3,
        }
    }
}

impl From<Stage2Error> for HarnessError {
    fn from(e: Stage2Error) -> Self {
        match e {
            Stage2Error::Eval(e) => HarnessError::Adapter(e),
            e => HarnessError::Stage2(e),
        }
    }
}

fn io_err(path: &FsPath) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &FsPath) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &FsPath, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Everything a run produces besides the record itself.
pub struct RunOutput {
    pub record: RunRecord,
    pub final_design: Design,
}

/// Runs Stage 1, the ILP, Stage 2 and final selection on an in-memory
/// design. Nothing is written to disk.
pub fn execute(
    design: &Design,
    cfg: &RunConfig,
    evaluator: &dyn Evaluator,
    exec: Exec,
) -> Result<RunOutput, HarnessError> {
    cfg.check()?;
    let started = Instant::now();
    let (policy, explorer) = cfg.seeded();

    let baseline = evaluator.evaluate(design)?;
    let sets = run_stage1(design, &policy, evaluator, exec)?;
    let graph = extract_call_graph(design).map_err(|e| HarnessError::Input(e.to_string()))?;
    let model = build_latency_model(&graph, design).map_err(HarnessError::Ilp)?;

    // Area outside the chosen functions' subtrees (storage, partitions,
    // the top function's own logic) does not depend on the assignment.
    let v0_area: u64 = sets.iter().map(|s| s.baseline_metrics.area).sum();
    let fixed = baseline.area.saturating_sub(v0_area);
    let problem =
        IlpProblem::from_variant_sets(&sets, model.clone(), cfg.area_budget.saturating_sub(fixed));
    let min_area = fixed + problem.min_area();
    if cfg.area_budget < min_area {
        return Err(HarnessError::Infeasible {
            budget: cfg.area_budget,
            min_area,
        });
    }
    let solutions = match solve_top_n(&problem, cfg.agents_n) {
        Ok(s) if s.is_empty() => {
            return Err(HarnessError::Infeasible {
                budget: cfg.area_budget,
                min_area,
            })
        }
        Ok(s) => s,
        Err(IlpError::Infeasible { .. }) => {
            return Err(HarnessError::Infeasible {
                budget: cfg.area_budget,
                min_area,
            })
        }
        Err(e) => return Err(HarnessError::Ilp(e)),
    };
    info!(
        "{}: {} ILP solutions, best predicted latency {}",
        design.name,
        solutions.len(),
        solutions[0].predicted_latency
    );

    let checker = EquivalenceChecker::new(design);
    let pool = PragmaPool::from_variant_sets(&sets);
    let ctx = Context {
        checker: &checker,
        pool: &pool,
        evaluator,
        budget: cfg.area_budget,
    };
    let records: Vec<ExplorationRecord> =
        run_stage2(&ctx, &solutions, &sets, &explorer, cfg.agents_n, exec)?
            .into_iter()
            .flatten()
            .collect();
    let final_record = select_final(&records, cfg.area_budget)?.clone();
    let final_design = materialize(&checker, &final_record, &solutions, &sets)?;
    info!(
        "{}: final latency {} area {}",
        design.name, final_record.latency, final_record.area
    );

    let record = RunRecord {
        config: cfg.clone(),
        design_name: design.name.clone(),
        design_hash: design.content_hash(),
        evaluator: evaluator.describe(),
        baseline_metrics: baseline,
        ilp_area_budget: problem.area_budget,
        latency_model: model,
        variant_sets: sets,
        ilp_solutions: solutions,
        records,
        final_record,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        record,
        final_design,
    })
}

pub const LOCK_FILE: &str = ".forge.lock";

/// Exclusive ownership of a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &FsPath) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(HarnessError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(HarnessError::Io { path, source: e }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifacts serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes `run.json`, `final_design.json`, `ilp_solutions.json`,
/// `variants/<function>.json` and `stage2/agent_<i>.jsonl` under `dir`.
pub fn write_run(dir: &FsPath, out: &RunOutput) -> Result<(), HarnessError> {
    let r = &out.record;
    for sub in ["variants", "stage2"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    write_file(&dir.join("run.json"), &to_json(r))?;
    write_file(&dir.join("final_design.json"), &to_json(&out.final_design))?;
    write_file(&dir.join("ilp_solutions.json"), &to_json(&r.ilp_solutions))?;
    for s in &r.variant_sets {
        write_file(
            &dir.join("variants").join(format!("{}.json", s.function)),
            &to_json(s),
        )?;
    }
    for agent in 1..=r.config.agents_n {
        let path = dir.join("stage2").join(format!("agent_{agent}.jsonl"));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for rec in r.records.iter().filter(|x| x.agent_index == agent) {
            serde_json::to_writer(&mut w, rec).expect("records serialize");
            w.write_all(b"\n").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn load_run(dir: &FsPath) -> Result<RunRecord, HarnessError> {
    let path = dir.join("run.json");
    serde_json::from_str(&read(&path)?)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

/// Loads the design and evaluator from `cfg`, runs the pipeline and persists
/// every artifact under `cfg.output_dir`, which is locked for the duration.
pub fn run_pipeline(cfg: &RunConfig, exec: Exec) -> Result<RunRecord, HarnessError> {
    cfg.check()?;
    let design = cfg.load_design()?;
    let evaluator = cfg.build_evaluator()?;
    let _lock = RunLock::acquire(&cfg.output_dir)?;
    let out = execute(&design, cfg, evaluator.as_ref(), exec)?;
    write_run(&cfg.output_dir, &out)?;
    Ok(out.record)
}
