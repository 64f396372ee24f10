use std::collections::BTreeMap;

use forge_core::cost::{BuiltinEvaluator, Evaluator};
use forge_core::exec::Exec;
use forge_core::fixtures;
use forge_core::ilp::{build_latency_model, eval_model, solve_top_n, IlpProblem, ModelNode};
use forge_core::ir::extract_call_graph;
use forge_core::stage1::{ilp_functions, run_stage1, MAX_VARIANTS};
use forge_core::stage2::{instantiate_checked, run_stage2, Context, ExplorerConfig, PragmaPool};
use forge_core::transforms::EquivalenceChecker;

#[test]
fn nw_model_is_a_plain_sum() {
    let d = fixtures::get("nw").unwrap().design();
    let m = build_latency_model(&extract_call_graph(&d).unwrap(), &d).unwrap();
    let ModelNode::Sum { children } = &m.root else {
        panic!("{:?}", m.root)
    };
    assert_eq!(children, &["FM", "TB", "RS"].map(ModelNode::leaf));
}

#[test]
fn model_leaves_are_the_ilp_functions() {
    for f in fixtures::ALL {
        let d = f.design();
        let m = build_latency_model(&extract_call_graph(&d).unwrap(), &d).unwrap();
        let mut leaves: Vec<String> = m.leaves().into_iter().map(str::to_string).collect();
        let mut funcs = ilp_functions(&d);
        leaves.sort();
        funcs.sort();
        assert_eq!(leaves, funcs, "{}", f.name);
    }
}

#[test]
fn stage_one_feeds_the_solver_and_agents() {
    let f = fixtures::get("streamcluster").unwrap();
    let d = f.design();
    let ev = BuiltinEvaluator::default();
    let sets = run_stage1(&d, &Default::default(), &ev, Exec::Parallel).unwrap();
    assert_eq!(
        sets.iter().map(|s| s.function.clone()).collect::<Vec<_>>(),
        ilp_functions(&d)
    );
    for s in &sets {
        assert!(s.variants.len() <= MAX_VARIANTS);
        assert_eq!(s.variants[0].index, 0);
        assert_eq!(s.variants[0].metrics, Some(s.baseline_metrics));
    }

    let model = build_latency_model(&extract_call_graph(&d).unwrap(), &d).unwrap();
    let problem = IlpProblem::from_variant_sets(&sets, model.clone(), 800);
    let sols = solve_top_n(&problem, 5).unwrap();
    assert_eq!(sols.len(), 5);
    for (i, s) in sols.iter().enumerate() {
        assert_eq!(s.rank, i + 1);
        assert!(s.total_area <= 800);
        let lat: BTreeMap<String, u64> = s
            .choice
            .iter()
            .map(|(f, &i)| {
                (
                    f.clone(),
                    sets.iter()
                        .find(|x| &x.function == f)
                        .unwrap()
                        .metrics(i)
                        .unwrap()
                        .latency,
                )
            })
            .collect();
        assert_eq!(eval_model(&model, &lat).unwrap(), s.predicted_latency);
    }
    assert!(sols
        .windows(2)
        .all(|w| (w[0].predicted_latency, w[0].total_area)
            <= (w[1].predicted_latency, w[1].total_area)));

    let checker = EquivalenceChecker::new(&d);
    let pool = PragmaPool::from_variant_sets(&sets);
    let ctx = Context {
        checker: &checker,
        pool: &pool,
        evaluator: &ev,
        budget: f.area_budget,
    };
    let cfg = ExplorerConfig {
        max_steps: 6,
        ..Default::default()
    };
    let runs = run_stage2(&ctx, &sols, &sets, &cfg, 7, Exec::Parallel).unwrap();
    assert_eq!(runs.len(), 7);
    for (i, recs) in runs.iter().enumerate() {
        let start = instantiate_checked(&checker, &sols[i % sols.len()], &sets).unwrap();
        assert_eq!(recs[0].step, 0);
        assert_eq!(recs[0].seeded_from, i % sols.len() + 1);
        assert_eq!(recs[0].metrics(), ev.evaluate(&start).unwrap());
        assert!(recs.iter().all(|r| r.agent_index == i + 1 && r.step <= 6));
    }
}
