//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forge_core::cost::{estimate, BuiltinEvaluator, CostParams, Evaluator};
use forge_core::exec::Exec;
use forge_core::fixtures::{self, Fixture};
use forge_core::harness::{
    execute, pareto_front, pareto_oracle, pearson_correlation, run_pipeline, scaling_experiment,
    EvaluatorSpec, ParetoPoint, RunConfig, RunRecord,
};
use forge_core::ilp::{
    brute_force_oracle, build_latency_model, eval_model, solve_top_n, Choice, ChoiceSet,
    IlpProblem, LatencyModel, ModelNode,
};
use forge_core::ir::{
    extract_call_graph, AffineExpr, Compute, Effect, Index, OpClass, Place, ReduceOp, Stmt,
};
use forge_core::stage1::run_stage1;
use forge_core::stage2::{instantiate_checked, materialize, propose, Path, PragmaPool};
use forge_core::transforms::{apply_all, check_equivalence, EquivalenceChecker, Transform};

const ILP_INSTANCES: usize = 1000;
const ILP_TIME_LIMIT: Duration = Duration::from_secs(60);
const TABLE_BINDINGS: usize = 20;
const SCALING_GRID: [usize; 5] = [1, 2, 4, 8, 10];
const SCALING_REPEATS: usize = 3;
const SCALING_TIME_LIMIT: Duration = Duration::from_secs(300);
const FUZZ_TRIALS: usize = 100;
const PARETO_SETS: usize = 100;
const PARETO_MAX_POINTS: usize = 500;
const PEARSON_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn config(f: &Fixture, agents: usize, out: &std::path::Path) -> RunConfig {
    RunConfig {
        design_path: format!("fixture:{}", f.name).into(),
        area_budget: f.area_budget,
        agents_n: agents,
        seed: 0,
        evaluator: EvaluatorSpec::Builtin,
        optimizer_policy: Default::default(),
        explorer_config: Default::default(),
        output_dir: out.to_path_buf(),
        cost_params: None,
    }
}

fn run(f: &Fixture, agents: usize) -> RunRecord {
    execute(
        &f.design(),
        &config(f, agents, std::path::Path::new("unused")),
        &BuiltinEvaluator::default(),
        Exec::Parallel,
    )
    .unwrap_or_else(|e| panic!("{}: {e}", f.name))
    .record
}

fn random_model(rng: &mut ChaCha8Rng, names: &[String]) -> LatencyModel {
    fn node(rng: &mut ChaCha8Rng, names: &[String], depth: usize) -> ModelNode {
        if depth == 0 || rng.gen_bool(0.3) {
            return ModelNode::leaf(names.choose(rng).unwrap());
        }
        let kids = |rng: &mut ChaCha8Rng| {
            (0..rng.gen_range(1..=3))
                .map(|_| node(rng, names, depth - 1))
                .collect()
        };
        match rng.gen_range(0..4) {
            0 => ModelNode::Sum {
                children: kids(rng),
            },
            1 => ModelNode::Max {
                children: kids(rng),
            },
            2 => ModelNode::Scale {
                num: rng.gen_range(1..=4),
                den: rng.gen_range(1..=3),
                child: Box::new(node(rng, names, depth - 1)),
            },
            _ => ModelNode::loop_mul(rng.gen_range(1..=6), node(rng, names, depth - 1)),
        }
    }
    let mut root = node(rng, names, 3);
    let model = LatencyModel { root: root.clone() };
    let present: Vec<String> = model.leaves().into_iter().map(str::to_string).collect();
    let missing: Vec<ModelNode> = names
        .iter()
        .filter(|n| !present.contains(n))
        .map(|n| ModelNode::leaf(n))
        .collect();
    if !missing.is_empty() {
        let mut children = vec![root];
        children.extend(missing);
        root = if rng.gen_bool(0.5) {
            ModelNode::Sum { children }
        } else {
            ModelNode::Max { children }
        };
    }
    LatencyModel { root }
}

fn random_problem(rng: &mut ChaCha8Rng) -> (IlpProblem, usize) {
    let k = rng.gen_range(1..=5);
    let names: Vec<String> = (0..k).map(|i| format!("f{i}")).collect();
    let sets: Vec<ChoiceSet> = names
        .iter()
        .map(|n| ChoiceSet {
            function: n.clone(),
            choices: (0..rng.gen_range(1..=7))
                .map(|index| Choice {
                    index,
                    latency: rng.gen_range(1..=60),
                    area: rng.gen_range(1..=40),
                })
                .collect(),
        })
        .collect();
    let min: u64 = sets
        .iter()
        .map(|s| s.choices.iter().map(|c| c.area).min().unwrap())
        .sum();
    let max: u64 = sets
        .iter()
        .map(|s| s.choices.iter().map(|c| c.area).max().unwrap())
        .sum();
    // A few instances sit below the minimum to exercise infeasibility.
    let budget = rng.gen_range(min.saturating_sub(5)..=max);
    let model = random_model(rng, &names);
    (
        IlpProblem {
            variant_sets: sets,
            model,
            area_budget: budget,
        },
        rng.gen_range(1..=5),
    )
}

fn ilp_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11b);
    let started = Instant::now();
    let mut infeasible = 0;
    for i in 0..ILP_INSTANCES {
        let (p, n) = random_problem(&mut rng);
        let got = solve_top_n(&p, n);
        let want = brute_force_oracle(&p, n);
        if got != want {
            return Err(format!("instance {i}: solver {got:?} vs oracle {want:?}"));
        }
        if matches!(got, Ok(ref s) if s.is_empty()) || got.is_err() {
            infeasible += 1;
        }
    }
    let t = started.elapsed();
    if t > ILP_TIME_LIMIT {
        return Err(format!("took {t:?}"));
    }
    Ok(format!(
        "{ILP_INSTANCES} instances equal the oracle ({infeasible} infeasible) in {t:.2?}"
    ))
}

fn table_fidelity() -> Outcome {
    type Formula = fn(&BTreeMap<String, u64>) -> u64;
    let cases: [(&str, Formula); 4] = [
        ("syn5", |l| {
            5 * (l["F"] + l["O"]).max(2 * l["F"]).max(l["E"] + l["F"])
        }),
        ("syn6", |l| 5 * (l["F"].max(l["O"]) + 2 * l["E"])),
        ("nw", |l| l["FM"] + l["TB"] + l["RS"]),
        ("aes", |l| {
            11 * l["ARK"] + 10 * l["SB"] + 10 * l["SR"] + 9 * l["MC"] + l["KE"] + l["INIT"]
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ab1e);
    for (name, formula) in cases {
        let d = fixtures::get(name).unwrap().design();
        let g = extract_call_graph(&d).map_err(|e| e.to_string())?;
        let model = build_latency_model(&g, &d).map_err(|e| e.to_string())?;
        for _ in 0..TABLE_BINDINGS {
            let bind: BTreeMap<String, u64> = model
                .leaves()
                .into_iter()
                .map(|f| (f.to_string(), rng.gen_range(1..=10_000)))
                .collect();
            let got = eval_model(&model, &bind).map_err(|e| e.to_string())?;
            if got != formula(&bind) {
                return Err(format!(
                    "{name}: model gives {got}, formula {} for {bind:?}",
                    formula(&bind)
                ));
            }
        }
    }
    Ok(format!("4 structures x {TABLE_BINDINGS} bindings exact"))
}

fn scaling_monotonicity() -> Outcome {
    let started = Instant::now();
    let mut improved = Vec::new();
    let mut summary = Vec::new();
    for f in fixtures::ALL {
        let d = f.design();
        let cfg = config(&f, 1, std::path::Path::new("unused"));
        let rep = scaling_experiment(
            &d,
            &cfg,
            &BuiltinEvaluator::default(),
            &SCALING_GRID,
            SCALING_REPEATS,
            Exec::Parallel,
        )
        .map_err(|e| format!("{}: {e}", f.name))?;
        for r in 0..SCALING_REPEATS {
            let lat: Vec<u64> = rep.rows.iter().map(|row| row.best_latencies[r]).collect();
            if lat.windows(2).any(|w| w[1] > w[0]) {
                return Err(format!("{} repeat {r}: best latency by N {lat:?}", f.name));
            }
        }
        let (first, last) = (&rep.rows[0], rep.rows.last().unwrap());
        if last.mean_speedup > first.mean_speedup {
            improved.push(f.name);
        }
        summary.push(format!(
            "{} {:.2}x->{:.2}x",
            f.name, first.mean_speedup, last.mean_speedup
        ));
    }
    let t = started.elapsed();
    if t > SCALING_TIME_LIMIT {
        return Err(format!("took {t:?}"));
    }
    if improved.is_empty() {
        return Err(format!(
            "no fixture improves from N=1 to N=10: {}",
            summary.join(", ")
        ));
    }
    Ok(format!(
        "non-increasing on all fixtures; strict gain on {improved:?}; {}; {t:.2?}",
        summary.join(", ")
    ))
}

fn contention_regression() -> Outcome {
    let d = fixtures::get("nw").unwrap().design();
    let sets = run_stage1(
        &d,
        &Default::default(),
        &BuiltinEvaluator::default(),
        Exec::Sequential,
    )
    .map_err(|e| e.to_string())?;
    let fm = sets
        .iter()
        .find(|s| s.function == "FM")
        .ok_or("no FM variants")?;
    let (Some(pipe), Some(unrolled)) = (fm.metrics(2), fm.metrics(5)) else {
        return Err("FM lacks variant 2 or 5".into());
    };
    let full_unroll = fm.get(5).unwrap().transforms.iter().any(|t| match t {
        Transform::ApplyPragmas { config, .. } => {
            config.loops.values().any(|p| p.pipeline.is_some())
                && config.loops.values().any(|p| p.unroll.is_some())
        }
        _ => false,
    });
    if !full_unroll {
        return Err("FM variant 5 is not pipeline plus unroll".into());
    }
    if unrolled.latency <= pipe.latency {
        return Err(format!(
            "pipeline {} vs pipeline+unroll {}",
            pipe.latency, unrolled.latency
        ));
    }
    Ok(format!(
        "NW FM: pipeline {} cycles, pipeline+full unroll {} cycles",
        pipe.latency, unrolled.latency
    ))
}

/// Appends `array[k] += c` (c ≠ 0) to the top function, after all other
/// work, optionally on top of a random valid restructuring.
fn correctness_filtering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let mut caught = 0;
    for trial in 0..FUZZ_TRIALS {
        let f = fixtures::ALL.choose(&mut rng).unwrap();
        let original = f.design();
        let mut mutant = original.clone();
        if rng.gen_bool(0.5) {
            let path = *Path::ALL.choose(&mut rng).unwrap();
            if let Some(batch) = propose(path, &mutant, &PragmaPool::default(), &mut rng) {
                if let Ok(m) = apply_all(&mutant, &batch) {
                    mutant = m;
                }
            }
        }
        let arr = mutant.arrays.choose(&mut rng).unwrap().clone();
        let k = rng.gen_range(0..arr.length) as i64;
        let c = if rng.gen_bool(0.5) {
            rng.gen_range(1..1000)
        } else {
            -rng.gen_range(1..1000)
        };
        let top = mutant.top.clone();
        mutant
            .function_mut(&top)
            .unwrap()
            .body
            .push(Stmt::Compute(Compute {
                id: "__injected".into(),
                op_class: OpClass::Add,
                count: 1,
                effect: Some(Effect::Reduce {
                    target: Place::Element {
                        array: arr.name.clone(),
                        index: Index {
                            terms: vec![],
                            offset: k,
                        },
                    },
                    op: ReduceOp::Add,
                    value: AffineExpr {
                        terms: vec![],
                        constant: c,
                    },
                }),
            }));
        if check_equivalence(&original, &mutant).is_correct() {
            return Err(format!(
                "trial {trial}: {}[{k}] += {c} on {} accepted",
                arr.name, f.name
            ));
        }
        caught += 1;
    }

    let params = CostParams::default();
    let mut checked = 0;
    for f in fixtures::ALL {
        let r = run(&f, 4);
        let checker = EquivalenceChecker::new(&f.design());
        for rec in &r.records {
            let d = materialize(&checker, rec, &r.ilp_solutions, &r.variant_sets)
                .map_err(|e| e.to_string())?;
            if !checker.check(&d).is_correct() {
                return Err(format!(
                    "{}: record {}/{} not equivalent",
                    f.name, rec.agent_index, rec.step
                ));
            }
            if estimate(&d, &params) != rec.metrics() || rec.area > f.area_budget {
                return Err(format!(
                    "{}: record {}/{} metrics or budget mismatch",
                    f.name, rec.agent_index, rec.step
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{caught}/{FUZZ_TRIALS} injected mutations rejected; {checked} Stage-2 records valid and within budget"))
}

fn pareto_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a2e);
    for set in 0..PARETO_SETS {
        let n = rng.gen_range(1..=PARETO_MAX_POINTS);
        let pts: Vec<ParetoPoint> = (0..n)
            .map(|i| ParetoPoint {
                speedup: 1000.0 / rng.gen_range(1..=80) as f64,
                area: rng.gen_range(1..=120),
                provenance: format!("p{i}"),
            })
            .collect();
        let fast = pareto_front(&pts);
        let slow = pareto_oracle(&pts);
        if fast != slow {
            return Err(format!(
                "set {set} (n={n}): {} vs {} points",
                fast.len(),
                slow.len()
            ));
        }
        if pts.iter().any(|p| fast.iter().any(|q| p.dominates(q))) {
            return Err(format!("set {set}: a front point is dominated"));
        }
    }
    Ok(format!(
        "{PARETO_SETS} sets of up to {PARETO_MAX_POINTS} points equal the quadratic oracle"
    ))
}

fn global_beats_local() -> Outcome {
    let mut hits = Vec::new();
    for f in fixtures::ALL.iter().filter(|f| f.shared_array) {
        let r = run(f, 10);
        let checker = EquivalenceChecker::new(&f.design());
        let rank1 = instantiate_checked(&checker, &r.ilp_solutions[0], &r.variant_sets)
            .map_err(|e| e.to_string())?;
        let rank1_latency = BuiltinEvaluator::default()
            .evaluate(&rank1)
            .map_err(|e| e.to_string())?
            .latency;
        if r.final_record.seeded_from > 1 || r.final_record.latency < rank1_latency {
            hits.push(format!(
                "{} (final {} from rank {}, rank-1 design {})",
                f.name, r.final_record.latency, r.final_record.seeded_from, rank1_latency
            ));
        }
    }
    if hits.is_empty() {
        return Err("every final equals the rank-1 instantiation".into());
    }
    Ok(hits.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for f in fixtures::ALL {
        let cfg = config(&f, 4, dir.path());
        let snapshot = |exec| -> Result<(String, Vec<u8>), String> {
            let r = run_pipeline(&cfg, exec).map_err(|e| e.to_string())?;
            let agents =
                fs::read(dir.path().join("stage2/agent_3.jsonl")).map_err(|e| e.to_string())?;
            Ok((r.canonical_json(), agents))
        };
        let a = snapshot(Exec::Parallel)?;
        let b = snapshot(Exec::Parallel)?;
        let c = snapshot(Exec::Sequential)?;
        if a != b || a != c {
            return Err(format!("{}: runs differ", f.name));
        }
    }
    Ok("identical records for repeated, parallel and sequential runs on every fixture".into())
}

fn pearson() -> Outcome {
    let xs: Vec<f64> = (0..50)
        .map(|i| (i as f64 * 0.37).sin() * 10.0 + i as f64)
        .collect();
    let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    let down: Vec<f64> = xs.iter().map(|x| -x).collect();
    let r_up = pearson_correlation(&xs, &up).map_err(|e| e.to_string())?;
    let r_down = pearson_correlation(&xs, &down).map_err(|e| e.to_string())?;
    let r4 = pearson_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0])
        .map_err(|e| e.to_string())?;
    // Means 2.5 and 2.75; Sxy = 5.5, Sxx = 5, Syy = 8.75.
    let want4 = 5.5 / (5.0f64 * 8.75).sqrt();
    if (r_up - 1.0).abs() > PEARSON_TOL
        || (r_down + 1.0).abs() > PEARSON_TOL
        || (r4 - want4).abs() > PEARSON_TOL
    {
        return Err(format!(
            "r(2x+1)={r_up}, r(-x)={r_down}, r4={r4} want {want4}"
        ));
    }
    Ok(format!(
        "r(2x+1)={r_up}, r(-x)={r_down}, 4-point r={r4:.15}"
    ))
}

fn main() {
    // Accept and ignore libtest flags such as --nocapture.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [Criterion; 9] = [
        ("ilp-exactness", ilp_exactness),
        ("latency-model-fidelity", table_fidelity),
        ("agent-scaling-monotonicity", scaling_monotonicity),
        ("contention-regression", contention_regression),
        ("correctness-filtering", correctness_filtering),
        ("pareto-correctness", pareto_correctness),
        ("global-beats-local", global_beats_local),
        ("determinism", determinism),
        ("pearson-utility", pearson),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
