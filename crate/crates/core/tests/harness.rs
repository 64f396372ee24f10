use std::fs;
use std::path::Path;

use forge_core::cost::{estimate, BuiltinEvaluator, CostParams};
use forge_core::exec::Exec;
use forge_core::fixtures;
use forge_core::harness::{
    emit_report, execute, load_run, run_pipeline, scaling_experiment, write_run, write_scaling,
    EvaluatorSpec, HarnessError, RunConfig, RunLock,
};
use forge_core::ir::load_design;
use forge_core::transforms::check_equivalence;
use serde::{Deserialize, Serialize};

fn config(fixture: &str, agents: usize, out: &Path) -> RunConfig {
    RunConfig {
        design_path: format!("fixture:{fixture}").into(),
        area_budget: fixtures::get(fixture).unwrap().area_budget,
        agents_n: agents,
        seed: 7,
        evaluator: EvaluatorSpec::Builtin,
        optimizer_policy: Default::default(),
        explorer_config: Default::default(),
        output_dir: out.to_path_buf(),
        cost_params: None,
    }
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Golden {
    baseline_latency: u64,
    baseline_area: u64,
    final_latency: u64,
    final_area: u64,
    seeded_from: usize,
    records: usize,
}

#[test]
fn syn5_single_agent_run_persists_and_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("syn5", 1, dir.path());
    let r = run_pipeline(&cfg, Exec::Parallel).unwrap();
    assert!(r.final_record.latency <= r.baseline_metrics.latency);

    for f in [
        "run.json",
        "final_design.json",
        "ilp_solutions.json",
        "stage2/agent_1.jsonl",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for s in &r.variant_sets {
        assert!(dir
            .path()
            .join("variants")
            .join(format!("{}.json", s.function))
            .is_file());
    }
    assert!(!dir.path().join(forge_core::harness::LOCK_FILE).exists());

    // The stored final design is a real, equivalent design with the stored
    // metrics.
    let final_design =
        load_design(&fs::read_to_string(dir.path().join("final_design.json")).unwrap()).unwrap();
    let original = fixtures::get("syn5").unwrap().design();
    assert!(check_equivalence(&original, &final_design).is_correct());
    assert_eq!(
        estimate(&final_design, &CostParams::default()),
        r.final_record.metrics()
    );

    let loaded = load_run(dir.path()).unwrap();
    assert_eq!(loaded, r);
    assert_eq!(loaded.reselect().unwrap(), &r.final_record);

    let got = Golden {
        baseline_latency: r.baseline_metrics.latency,
        baseline_area: r.baseline_metrics.area,
        final_latency: r.final_record.latency,
        final_area: r.final_record.area,
        seeded_from: r.final_record.seeded_from,
        records: r.records.len(),
    };
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/syn5_n1.json");
    if std::env::var_os("FORGE_BLESS").is_some() {
        fs::write(
            &golden_path,
            serde_json::to_string_pretty(&got).unwrap() + "\n",
        )
        .unwrap();
    }
    let want: Golden = serde_json::from_str(&fs::read_to_string(golden_path).unwrap()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn more_agents_never_hurt_on_kmeans() {
    let d = fixtures::get("kmeans").unwrap().design();
    let ev = BuiltinEvaluator::default();
    let one = execute(
        &d,
        &config("kmeans", 1, Path::new("unused")),
        &ev,
        Exec::Parallel,
    )
    .unwrap();
    let four = execute(
        &d,
        &config("kmeans", 4, Path::new("unused")),
        &ev,
        Exec::Parallel,
    )
    .unwrap();
    assert!(four.record.final_record.latency <= one.record.final_record.latency);
}

#[test]
fn zero_budget_is_infeasible() {
    let d = fixtures::get("nw").unwrap().design();
    let mut cfg = config("nw", 1, Path::new("unused"));
    cfg.area_budget = 0;
    let e = execute(&d, &cfg, &BuiltinEvaluator::default(), Exec::Sequential)
        .err()
        .unwrap();
    assert!(
        matches!(e, HarnessError::Infeasible { budget: 0, min_area } if min_area > 0),
        "{e}"
    );
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn zero_agents_is_an_input_error() {
    let d = fixtures::get("nw").unwrap().design();
    let mut cfg = config("nw", 1, Path::new("unused"));
    cfg.agents_n = 0;
    let e = execute(&d, &cfg, &BuiltinEvaluator::default(), Exec::Sequential)
        .err()
        .unwrap();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _held = RunLock::acquire(dir.path()).unwrap();
    let e = run_pipeline(&config("syn6", 1, dir.path()), Exec::Sequential)
        .err()
        .unwrap();
    assert!(matches!(e, HarnessError::Locked(_)));
}

#[test]
fn config_paths_resolve_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"design_path":"designs/a.json","area_budget":10,"agents_n":2,"seed":1,
            "evaluator":"cmd:adapter --fast 'two words'","output_dir":"out"}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.design_path, dir.path().join("designs/a.json"));
    assert_eq!(cfg.output_dir, dir.path().join("out"));
    assert_eq!(
        cfg.evaluator,
        EvaluatorSpec::Command("cmd:adapter --fast 'two words'".into())
    );
    assert_eq!(cfg.explorer_config.max_steps, 25);

    fs::write(
        &path,
        r#"{"design_path":"fixture:nw","area_budget":10,"agents_n":1,"output_dir":"o"}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.design_path, Path::new("fixture:nw"));
    assert_eq!(cfg.evaluator, EvaluatorSpec::Builtin);

    fs::write(
        &path,
        r#"{"design_path":"x","area_budget":10,"agents_n":1,"output_dir":"o","evaluator":"magic"}"#,
    )
    .unwrap();
    assert_eq!(RunConfig::load(&path).err().unwrap().exit_code(), 3);
}

#[test]
fn report_for_single_record_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixtures::get("syn6").unwrap().design();
    let mut out = execute(
        &d,
        &config("syn6", 1, dir.path()),
        &BuiltinEvaluator::default(),
        Exec::Sequential,
    )
    .unwrap();
    out.record.records = vec![out.record.final_record.clone()];
    write_run(dir.path(), &out).unwrap();

    let files = emit_report(dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("speedup,area,provenance\n"));
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    emit_report(dir.path()).unwrap();
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, second);
    let table = fs::read_to_string(dir.path().join("speedup_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn report_rejects_missing_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&dir.path().join("nope")).is_err());
    assert!(emit_report(dir.path()).is_err());
}

#[test]
fn single_cell_scaling_table() {
    let d = fixtures::get("syn6").unwrap().design();
    let cfg = config("syn6", 1, Path::new("unused"));
    let ev = BuiltinEvaluator::default();
    let rep = scaling_experiment(&d, &cfg, &ev, &[1], 1, Exec::Sequential).unwrap();
    let run = execute(&d, &cfg, &ev, Exec::Sequential).unwrap().record;
    assert_eq!(rep.rows.len(), 1);
    assert_eq!(
        rep.rows[0].mean_speedup,
        run.baseline_metrics.latency as f64 / run.final_record.latency as f64
    );
    assert_eq!(rep.rows[0].gain_pct, None);
    assert!(scaling_experiment(&d, &cfg, &ev, &[], 1, Exec::Sequential).is_err());
}

#[test]
fn scaling_report_has_one_series_per_n() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixtures::get("streamcluster").unwrap().design();
    let cfg = config("streamcluster", 1, dir.path());
    let rep = scaling_experiment(
        &d,
        &cfg,
        &BuiltinEvaluator::default(),
        &[1, 2, 4],
        2,
        Exec::Parallel,
    )
    .unwrap();
    assert_eq!(rep.rows.iter().map(|r| r.n).collect::<Vec<_>>(), [1, 2, 4]);
    for w in rep.rows.windows(2) {
        assert!(w[1].mean_speedup >= w[0].mean_speedup);
        assert!(w[1].gain_pct.is_some());
    }
    write_scaling(dir.path(), &rep).unwrap();
    emit_report(dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
    let ns: std::collections::BTreeSet<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ns.into_iter().collect::<Vec<_>>(), ["1", "2", "4"]);
    let svg = fs::read_to_string(dir.path().join("pareto.svg")).unwrap();
    for n in ["N=1", "N=2", "N=4"] {
        assert!(svg.contains(n), "{n}");
    }
}
