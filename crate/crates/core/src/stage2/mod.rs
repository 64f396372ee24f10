//! Whole-design refinement by N independent exploration agents, each seeded
//! with one ILP solution, and selection of the final design.

mod proposers;

use std::collections::BTreeSet;
use std::time::Duration;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use proposers::{propose, shared_arrays, PragmaPool};

use crate::agent::{AgentError, AgentSession};
use crate::cost::{AdapterCommand, EvalError, Evaluator, Metrics};
use crate::exec::Exec;
use crate::ilp::IlpSolution;
use crate::ir::Design;
use crate::stage1::VariantSet;
use crate::transforms::{apply_all, Equivalence, EquivalenceChecker, Transform, TransformError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    PragmaComposition,
    CodeRestructuring,
    MemoryOptimization,
    ComputeOptimization,
}

impl Path {
    pub const ALL: [Path; 4] = [
        Path::PragmaComposition,
        Path::CodeRestructuring,
        Path::MemoryOptimization,
        Path::ComputeOptimization,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeights {
    pub pragma_composition: f64,
    pub code_restructuring: f64,
    pub memory_optimization: f64,
    pub compute_optimization: f64,
}

impl Default for PathWeights {
    fn default() -> Self {
        PathWeights {
            pragma_composition: 1.0,
            code_restructuring: 1.0,
            memory_optimization: 1.0,
            compute_optimization: 1.0,
        }
    }
}

impl PathWeights {
    fn as_array(&self) -> [f64; 4] {
        [
            self.pragma_composition,
            self.code_restructuring,
            self.memory_optimization,
            self.compute_optimization,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptRule {
    StrictImprove,
    #[default]
    ParetoAdd,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplorerKind {
    #[default]
    Builtin,
    External {
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
}

fn default_steps() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    #[serde(flatten)]
    pub kind: ExplorerKind,
    /// Base seed; agent `i` uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub accept_rule: AcceptRule,
    #[serde(default)]
    pub path_weights: PathWeights,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            kind: ExplorerKind::Builtin,
            seed: 0,
            max_steps: default_steps(),
            accept_rule: AcceptRule::default(),
            path_weights: PathWeights::default(),
        }
    }
}

impl ExplorerConfig {
    pub fn check(&self) -> Result<(), Stage2Error> {
        let w = self.path_weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || !w.iter().any(|x| *x > 0.0) {
            return Err(Stage2Error::Config(
                "path weights must be non-negative with at least one positive".into(),
            ));
        }
        Ok(())
    }
}

/// One valid whole-design point found by an agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationRecord {
    pub design_ref: String,
    /// Transforms applied on top of the instantiated design, in order.
    pub transforms_applied: Vec<Transform>,
    pub latency: u64,
    pub area: u64,
    pub agent_index: usize,
    pub step: usize,
    /// Rank of the ILP solution the agent started from.
    pub seeded_from: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Path>,
}

impl ExplorationRecord {
    pub fn metrics(&self) -> Metrics {
        Metrics::new(self.latency, self.area)
    }

    fn dominates(&self, m: Metrics) -> bool {
        self.latency <= m.latency
            && self.area <= m.area
            && (self.latency < m.latency || self.area < m.area)
    }
}

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("solution chooses variant {index} of `{function}`, which did not survive Stage 1")]
    MissingVariant { function: String, index: usize },
    #[error("instantiation failed: {0}")]
    Transform(#[from] TransformError),
    #[error("instantiated design is not equivalent to the original: {0:?}")]
    NotEquivalent(crate::transforms::MismatchReport),
    #[error("no recorded design fits the area budget {0}")]
    NoFeasible(u64),
    #[error("no ILP solutions to explore")]
    NoSolutions,
    #[error("invalid explorer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Applies every chosen variant's transforms, in solution order.
pub fn instantiate(
    d: &Design,
    s: &IlpSolution,
    sets: &[VariantSet],
) -> Result<Design, Stage2Error> {
    let mut out = d.clone();
    for (function, &index) in &s.choice {
        let v = sets
            .iter()
            .find(|set| &set.function == function)
            .and_then(|set| set.get(index))
            .ok_or_else(|| Stage2Error::MissingVariant {
                function: function.clone(),
                index,
            })?;
        out = apply_all(&out, &v.transforms)?;
    }
    Ok(out)
}

/// Instantiates and confirms equivalence with the original design.
pub fn instantiate_checked(
    checker: &EquivalenceChecker,
    s: &IlpSolution,
    sets: &[VariantSet],
) -> Result<Design, Stage2Error> {
    let out = instantiate(checker.original(), s, sets)?;
    match checker.check(&out) {
        Equivalence::Correct => Ok(out),
        Equivalence::Failed(r) => Err(Stage2Error::NotEquivalent(r)),
    }
}

/// Everything an agent needs that is shared across agents.
pub struct Context<'a> {
    pub checker: &'a EquivalenceChecker,
    pub pool: &'a PragmaPool,
    pub evaluator: &'a dyn Evaluator,
    pub budget: u64,
}

#[derive(Debug, Deserialize)]
struct ExplorerReply {
    #[serde(default)]
    transforms: Option<Vec<Transform>>,
    #[serde(default)]
    done: bool,
}

enum Source {
    Builtin,
    External(AgentSession),
}

/// Runs one exploration agent from the instantiated design `start`.
pub fn targeted_refinement(
    ctx: &Context<'_>,
    start: &Design,
    s: &IlpSolution,
    cfg: &ExplorerConfig,
    agent_index: usize,
) -> Result<Vec<ExplorationRecord>, Stage2Error> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(agent_index as u64));
    let weights = WeightedIndex::new(cfg.path_weights.as_array())
        .map_err(|e| Stage2Error::Config(e.to_string()))?;

    let base = ctx.evaluator.evaluate(start)?;
    if base.area > ctx.budget {
        warn!(
            "agent {agent_index}: instantiated design area {} exceeds budget {}",
            base.area, ctx.budget
        );
    }
    // The starting point is always kept so that the result is never worse
    // than the seed solution.
    let mut records = vec![ExplorationRecord {
        design_ref: start.content_hash(),
        transforms_applied: Vec::new(),
        latency: base.latency,
        area: base.area,
        agent_index,
        step: 0,
        seeded_from: s.rank,
        path: None,
    }];
    let mut seen: BTreeSet<String> = BTreeSet::from([records[0].design_ref.clone()]);
    let mut current = start.clone();
    let mut current_ts: Vec<Transform> = Vec::new();
    let mut best_latency = base.latency;

    let mut source = match &cfg.kind {
        ExplorerKind::Builtin => Source::Builtin,
        ExplorerKind::External {
            command,
            timeout_secs,
        } => {
            let timeout =
                timeout_secs.map_or_else(crate::cost::external_timeout, Duration::from_secs);
            let spawned = AdapterCommand::parse(command)
                .ok_or_else(|| AgentError::Protocol("empty agent command".into()))
                .and_then(|c| AgentSession::spawn(&c, timeout));
            match spawned {
                Ok(session) => Source::External(session),
                Err(e) => {
                    warn!("agent {agent_index}: explorer failed to start ({e}); using builtin proposers");
                    Source::Builtin
                }
            }
        }
    };

    for step in 1..=cfg.max_steps {
        let (path, batch) = match &mut source {
            Source::Builtin => {
                let path = Path::ALL[weights.sample(&mut rng)];
                (Some(path), propose(path, &current, ctx.pool, &mut rng))
            }
            Source::External(session) => {
                let msg = json!({
                    "design": current,
                    "metrics": ctx.evaluator.evaluate(&current)?,
                    "budget": ctx.budget,
                    "history": records,
                });
                match session.request(&msg).and_then(|v| {
                    serde_json::from_value::<ExplorerReply>(v)
                        .map_err(|e| AgentError::Protocol(e.to_string()))
                }) {
                    Ok(ExplorerReply { done: true, .. }) => break,
                    Ok(ExplorerReply {
                        transforms: Some(ts),
                        ..
                    }) => (None, Some(ts)),
                    Ok(_) => {
                        warn!("agent {agent_index}: reply has neither transforms nor done; using builtin proposers");
                        source = Source::Builtin;
                        continue;
                    }
                    Err(e) => {
                        warn!(
                            "agent {agent_index}: explorer failed ({e}); using builtin proposers"
                        );
                        source = Source::Builtin;
                        continue;
                    }
                }
            }
        };
        let Some(batch) = batch else { continue };
        let Ok(candidate) = apply_all(&current, &batch) else {
            continue;
        };
        let hash = candidate.content_hash();
        if !seen.insert(hash.clone()) {
            continue;
        }
        if !ctx.checker.check(&candidate).is_correct() {
            continue;
        }
        let m = ctx.evaluator.evaluate(&candidate)?;
        if m.area > ctx.budget {
            continue;
        }
        let mut ts = current_ts.clone();
        ts.extend(batch);
        let record = ExplorationRecord {
            design_ref: hash,
            transforms_applied: ts.clone(),
            latency: m.latency,
            area: m.area,
            agent_index,
            step,
            seeded_from: s.rank,
            path,
        };
        let advance = match cfg.accept_rule {
            AcceptRule::ParetoAdd => {
                let dominated = records.iter().any(|r| r.dominates(m));
                records.push(record);
                !dominated
            }
            AcceptRule::StrictImprove => {
                let better = m.latency < best_latency;
                if better {
                    records.push(record);
                }
                better
            }
        };
        best_latency = best_latency.min(m.latency);
        if advance {
            current = candidate;
            current_ts = ts;
        }
    }
    Ok(records)
}

/// Runs agents `1..=n`. Agent `i` starts from ILP solution
/// `((i − 1) mod |solutions|) + 1`. Records come back ordered by
/// (agent, step).
pub fn run_stage2(
    ctx: &Context<'_>,
    solutions: &[IlpSolution],
    sets: &[VariantSet],
    cfg: &ExplorerConfig,
    n: usize,
    exec: Exec,
) -> Result<Vec<Vec<ExplorationRecord>>, Stage2Error> {
    if solutions.is_empty() {
        return Err(Stage2Error::NoSolutions);
    }
    let agents: Vec<usize> = (1..=n).collect();
    let runs = exec.map(&agents, |&i| {
        let s = &solutions[(i - 1) % solutions.len()];
        let start = instantiate_checked(ctx.checker, s, sets)?;
        targeted_refinement(ctx, &start, s, cfg, i)
    });
    runs.into_iter().collect()
}

/// Lowest latency within budget; ties go to smaller area, then lower agent
/// index, then earlier step.
pub fn select_final(
    records: &[ExplorationRecord],
    budget: u64,
) -> Result<&ExplorationRecord, Stage2Error> {
    records
        .iter()
        .filter(|r| r.area <= budget)
        .min_by_key(|r| (r.latency, r.area, r.agent_index, r.step))
        .ok_or(Stage2Error::NoFeasible(budget))
}

/// Rebuilds the design a record refers to.
pub fn materialize(
    checker: &EquivalenceChecker,
    record: &ExplorationRecord,
    solutions: &[IlpSolution],
    sets: &[VariantSet],
) -> Result<Design, Stage2Error> {
    let s = solutions
        .iter()
        .find(|s| s.rank == record.seeded_from)
        .ok_or(Stage2Error::NoSolutions)?;
    let start = instantiate(checker.original(), s, sets)?;
    Ok(apply_all(&start, &record.transforms_applied)?)
}
