//! Per-function variant generation, correctness filtering and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{AgentError, AgentSession};
use crate::cost::{AdapterCommand, EvalError, Evaluator, Metrics};
use crate::exec::Exec;
use crate::ir::{walk_stmts, Design, Function, Loop, Partition, Stmt};
use crate::transforms::{
    apply_all, EquivalenceChecker, LoopPragma, PragmaConfig, Transform, Variant, VariantStatus,
};

/// Upper bound on variants per function, baseline included.
pub const MAX_VARIANTS: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerPolicy {
    Builtin {
        #[serde(default)]
        seed: u64,
    },
    External {
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
}

impl Default for OptimizerPolicy {
    fn default() -> Self {
        OptimizerPolicy::Builtin { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSet {
    pub function: String,
    /// Surviving variants, ascending by index; index 0 is always first.
    pub variants: Vec<Variant>,
    pub baseline_metrics: Metrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Rejection>,
}

impl VariantSet {
    pub fn get(&self, index: usize) -> Option<&Variant> {
        self.variants.iter().find(|v| v.index == index)
    }

    pub fn metrics(&self, index: usize) -> Option<Metrics> {
        self.get(index).and_then(|v| v.metrics)
    }
}

/// Functions whose variants the ILP selects among: the direct callees of the
/// top function in first-call order, or the top function itself when it
/// makes no calls.
pub fn ilp_functions(d: &Design) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in d.top_function().calls() {
        if !out.contains(&c.callee) {
            out.push(c.callee.clone());
        }
    }
    if out.is_empty() {
        out.push(d.top.clone());
    }
    out
}

fn loops_by_depth(stmts: &[Stmt], depth: usize, out: &mut Vec<(usize, Loop)>) {
    for s in stmts {
        match s {
            Stmt::Loop(l) => {
                out.push((depth, l.clone()));
                loops_by_depth(&l.body, depth + 1, out);
            }
            Stmt::ParallelRegion(r) => {
                for b in &r.branches {
                    loops_by_depth(b, depth, out);
                }
            }
            _ => {}
        }
    }
}

fn is_innermost(l: &Loop) -> bool {
    let mut nested = false;
    walk_stmts(&l.body, &mut |s| nested |= matches!(s, Stmt::Loop(_)));
    !nested
}

fn pragma_variant(
    f: &Function,
    pick: impl Fn(usize, &Loop) -> Option<LoopPragma>,
) -> Vec<Transform> {
    let mut loops = Vec::new();
    loops_by_depth(&f.body, 0, &mut loops);
    let cfg = PragmaConfig {
        loops: loops
            .iter()
            .filter_map(|(depth, l)| pick(*depth, l).map(|p| (l.id.clone(), p)))
            .collect(),
        ..Default::default()
    };
    if cfg.is_empty() {
        Vec::new()
    } else {
        vec![Transform::ApplyPragmas {
            target_function: f.name.clone(),
            config: cfg,
        }]
    }
}

fn pipelined_with_unroll(f: &Function, unroll: impl Fn(&Loop) -> Option<u64>) -> Vec<Transform> {
    pragma_variant(f, |_, l| {
        let u = if is_innermost(l) { unroll(l) } else { None };
        Some(LoopPragma {
            pipeline: Some(1),
            unroll: u,
        })
    })
}

/// Array with the highest accesses-per-iteration to port ratio in `f`.
/// Ties go to the earliest declared name: parameters, then locals, then
/// globals.
pub fn most_contended_array(f: &Function, d: &Design) -> Option<String> {
    let mut accesses: BTreeMap<&str, u64> = BTreeMap::new();
    walk_stmts(&f.body, &mut |s| {
        if let Stmt::Access(a) = s {
            *accesses.entry(a.array.as_str()).or_default() += a.total();
        }
    });
    let bindings = crate::ir::ArrayBindings::new(d);
    let order = f
        .params
        .iter()
        .map(|p| p.name.clone())
        .chain(f.local_arrays.iter().map(|a| a.name.clone()))
        .chain(d.arrays.iter().map(|a| a.name.clone()));
    let mut best: Option<(String, u64, u64)> = None;
    for name in order {
        let Some(&acc) = accesses.get(name.as_str()) else {
            continue;
        };
        if acc == 0 {
            continue;
        }
        let ports = bindings
            .resolve_decl(d, &f.name, &name)
            .map_or(2, |a| u64::from(a.base_ports.max(1)));
        // acc/ports > best_acc/best_ports, compared without division.
        let better = best.as_ref().is_none_or(|(_, ba, bp)| {
            u128::from(acc) * u128::from(*bp) > u128::from(*ba) * u128::from(ports)
        });
        if better {
            best = Some((name, acc, ports));
        }
    }
    best.map(|(n, _, _)| n)
}

fn alternate_variant(f: &Function, d: &Design) -> Vec<Transform> {
    let mut ts = Vec::new();
    let mut cfg = PragmaConfig::default();
    if let Some(a) = most_contended_array(f, d) {
        cfg.arrays.insert(a, Some(Partition::complete()));
    }
    for c in f.calls() {
        cfg.calls.insert(c.id.clone(), true);
    }
    if !cfg.is_empty() {
        ts.push(Transform::ApplyPragmas {
            target_function: f.name.clone(),
            config: cfg,
        });
    }
    // Outermost reducible loops only; nested ones disappear with their parent.
    fn reducible(stmts: &[Stmt], fname: &str, out: &mut Vec<Transform>) {
        for s in stmts {
            match s {
                Stmt::Loop(l) if l.closed_form.is_some() => {
                    out.push(Transform::ClosedFormRewrite {
                        function: fname.to_string(),
                        loop_id: l.id.clone(),
                    })
                }
                Stmt::Loop(l) => reducible(&l.body, fname, out),
                Stmt::ParallelRegion(r) => r.branches.iter().for_each(|b| reducible(b, fname, out)),
                _ => {}
            }
        }
    }
    reducible(&f.body, &f.name, &mut ts);
    ts
}

/// The fixed seven-slot strategy. Slots that do not apply to `f` come back
/// with an empty transform list and collapse onto the baseline later.
pub fn builtin_variants(f: &Function, d: &Design) -> Vec<Variant> {
    let slots = [
        Vec::new(),
        pragma_variant(f, |depth, _| {
            (depth == 0).then_some(LoopPragma {
                pipeline: Some(4),
                unroll: None,
            })
        }),
        pragma_variant(f, |_, _| {
            Some(LoopPragma {
                pipeline: Some(1),
                unroll: None,
            })
        }),
        pragma_variant(f, |_, _| {
            Some(LoopPragma {
                pipeline: Some(2),
                unroll: None,
            })
        }),
        pipelined_with_unroll(f, |l| {
            if l.trip_count <= 4 {
                (l.trip_count > 1).then_some(l.trip_count)
            } else {
                (l.trip_count % 2 == 0).then_some(2)
            }
        }),
        pipelined_with_unroll(f, |l| (l.trip_count > 1).then_some(l.trip_count)),
        alternate_variant(f, d),
    ];
    slots
        .into_iter()
        .enumerate()
        .map(|(i, ts)| Variant::untested(&f.name, i, ts))
        .collect()
}

#[derive(Debug, Deserialize)]
struct Proposal {
    #[serde(default)]
    transforms: Vec<Transform>,
    #[serde(default)]
    done: bool,
}

fn external_variants(
    f: &Function,
    d: &Design,
    command: &str,
    timeout: Duration,
) -> Result<Vec<Variant>, AgentError> {
    let cmd = AdapterCommand::parse(command)
        .ok_or_else(|| AgentError::Protocol("empty agent command".into()))?;
    let mut session = AgentSession::spawn(&cmd, timeout)?;
    let mut out = vec![Variant::untested(&f.name, 0, Vec::new())];
    let mut history: Vec<Vec<Transform>> = Vec::new();
    while out.len() < MAX_VARIANTS {
        let msg = json!({ "function": f.name, "design": d, "metrics": null, "budget": null, "history": history });
        let reply = session.request(&msg)?;
        let p: Proposal =
            serde_json::from_value(reply).map_err(|e| AgentError::Protocol(e.to_string()))?;
        if p.done {
            break;
        }
        if p.transforms.is_empty() {
            return Err(AgentError::Protocol(
                "reply has neither transforms nor done".into(),
            ));
        }
        history.push(p.transforms.clone());
        out.push(Variant::untested(&f.name, out.len(), p.transforms));
    }
    Ok(out)
}

/// Candidate variants for `f` under `policy`. External failures fall back to
/// the builtin strategy.
pub fn generate_variants(f: &Function, d: &Design, policy: &OptimizerPolicy) -> Vec<Variant> {
    match policy {
        OptimizerPolicy::Builtin { .. } => builtin_variants(f, d),
        OptimizerPolicy::External {
            command,
            timeout_secs,
        } => {
            let timeout =
                timeout_secs.map_or_else(crate::cost::external_timeout, Duration::from_secs);
            match external_variants(f, d, command, timeout) {
                Ok(v) => v,
                Err(e) => {
                    warn!(
                        "optimizer agent for `{}` failed ({e}); using builtin variants",
                        f.name
                    );
                    builtin_variants(f, d)
                }
            }
        }
    }
}

/// Applies, checks and measures each candidate of `f` against `d` (other
/// functions at baseline). Duplicates by resulting design keep the lowest
/// index; candidates that fail to apply or fail equivalence are dropped.
pub fn search_and_evaluate(
    f: &str,
    d: &Design,
    policy: &OptimizerPolicy,
    evaluator: &dyn Evaluator,
    checker: &EquivalenceChecker,
) -> Result<VariantSet, EvalError> {
    let func = d
        .function(f)
        .ok_or_else(|| EvalError::UnknownFunction(f.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut variants = Vec::new();
    let mut rejected = Vec::new();
    for mut v in generate_variants(func, d, policy) {
        let candidate = match apply_all(d, &v.transforms) {
            Ok(c) => c,
            Err(e) => {
                rejected.push(Rejection {
                    index: v.index,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if !seen.insert(candidate.content_hash()) {
            continue;
        }
        if let crate::transforms::Equivalence::Failed(r) = checker.check(&candidate) {
            rejected.push(Rejection {
                index: v.index,
                reason: format!("not equivalent: {r:?}"),
            });
            continue;
        }
        v.metrics = Some(evaluator.evaluate_function(&candidate, f)?);
        v.status = VariantStatus::Correct;
        variants.push(v);
    }
    let baseline_metrics = variants
        .first()
        .filter(|v| v.index == 0)
        .and_then(|v| v.metrics)
        .expect("the unmodified baseline always applies and is equivalent");
    Ok(VariantSet {
        function: f.to_string(),
        variants,
        baseline_metrics,
        rejected,
    })
}

/// Runs the per-function search for every ILP function, concurrently when
/// `exec` allows. Output order follows [`ilp_functions`].
pub fn run_stage1(
    d: &Design,
    policy: &OptimizerPolicy,
    evaluator: &dyn Evaluator,
    exec: Exec,
) -> Result<Vec<VariantSet>, EvalError> {
    let checker = EquivalenceChecker::new(d);
    let functions = ilp_functions(d);
    exec.map(&functions, |f| {
        search_and_evaluate(f, d, policy, evaluator, &checker)
    })
    .into_iter()
    .collect()
}
