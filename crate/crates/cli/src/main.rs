use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use forge_core::cost::{estimate, CostParams};
use forge_core::exec::Exec;
use forge_core::harness::{
    emit_report, load_design_from, run_pipeline, scaling_experiment, write_scaling, EvaluatorSpec,
    HarnessError, RunConfig,
};
use forge_core::ilp::build_latency_model;
use forge_core::ir::{extract_call_graph, load_design};
use forge_core::stage1::ilp_functions;

/// Two-stage design-space exploration for HLS-style kernels.
#[derive(Debug, Parser)]
#[command(name = "forge", version)]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the call graph, latency model and baseline metrics of a design.
    Analyze {
        /// Design file, or `fixture:<name>`.
        design: PathBuf,
        #[arg(long, default_value = "builtin", value_parser = EvaluatorSpec::parse)]
        evaluator: EvaluatorSpec,
    },
    /// Run the full pipeline and persist the run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the agent-scaling experiment and write its report.
    Scale {
        #[arg(long)]
        config: PathBuf,
        /// Agent counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,10")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write Pareto and speedup reports for a run or scaling directory.
    Report { run_dir: PathBuf },
    /// Evaluator adapter: read a design on stdin, print its builtin metrics.
    Estimate,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    /// `builtin` or `cmd:<program> [args…]`.
    #[arg(long, value_parser = EvaluatorSpec::parse)]
    evaluator: Option<EvaluatorSpec>,
    /// Output directory, overriding the config file's.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn apply(self, path: &Path) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::load(path)?;
        if let Some(n) = self.agents {
            cfg.agents_n = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.area_budget = b;
        }
        if let Some(e) = self.evaluator {
            cfg.evaluator = e;
        }
        if let Some(o) = self.output {
            cfg.output_dir = o;
        }
        Ok(cfg)
    }
}

fn print(v: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("values serialize")
    );
}

fn analyze(design: &Path, evaluator: EvaluatorSpec) -> Result<(), HarnessError> {
    let d = load_design_from(design)?;
    let cfg = RunConfig {
        design_path: design.to_path_buf(),
        area_budget: 1,
        agents_n: 1,
        seed: 0,
        evaluator,
        optimizer_policy: Default::default(),
        explorer_config: Default::default(),
        output_dir: PathBuf::new(),
        cost_params: None,
    };
    let ev = cfg.build_evaluator()?;
    let graph = extract_call_graph(&d).map_err(|e| HarnessError::Input(e.to_string()))?;
    let model = build_latency_model(&graph, &d).map_err(|e| HarnessError::Input(e.to_string()))?;
    let mut functions = serde_json::Map::new();
    for f in ilp_functions(&d) {
        functions.insert(
            f.clone(),
            serde_json::to_value(ev.evaluate_function(&d, &f)?).expect("metrics serialize"),
        );
    }
    print(&json!({
        "design": d.name,
        "call_graph": graph,
        "latency_model": model,
        "baseline_metrics": ev.evaluate(&d)?,
        "function_metrics": functions,
    }));
    Ok(())
}

fn estimate_stdin() -> Result<(), HarnessError> {
    let mut text = String::new();
    std::io::stdin()
        .read_to_string(&mut text)
        .map_err(|source| HarnessError::Io {
            path: PathBuf::from("<stdin>"),
            source,
        })?;
    let d = load_design(&text)?;
    println!(
        "{}",
        serde_json::to_string(&estimate(&d, &CostParams::default())).expect("metrics serialize")
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Analyze { design, evaluator } => analyze(&design, evaluator),
        Command::Run { config, overrides } => {
            let cfg = overrides.apply(&config)?;
            let r = run_pipeline(&cfg, exec)?;
            print(&json!({
                "output_dir": cfg.output_dir,
                "baseline": r.baseline_metrics,
                "final": r.final_record,
                "speedup": r.speedup(),
                "ilp_solutions": r.ilp_solutions.len(),
                "records": r.records.len(),
            }));
            Ok(())
        }
        Command::Scale {
            config,
            n,
            repeats,
            overrides,
        } => {
            let cfg = overrides.apply(&config)?;
            let design = cfg.load_design()?;
            let ev = cfg.build_evaluator()?;
            let rep = scaling_experiment(&design, &cfg, ev.as_ref(), &n, repeats, exec)?;
            write_scaling(&cfg.output_dir, &rep)?;
            emit_report(&cfg.output_dir)?;
            println!(
                "{:>4} {:>10} {:>10} {:>10} {:>8}",
                "N", "mean", "min", "max", "gain%"
            );
            for row in &rep.rows {
                let gain = row
                    .gain_pct
                    .map_or_else(|| "-".to_string(), |g| format!("{g:.1}"));
                println!(
                    "{:>4} {:>9.3}x {:>9.3}x {:>9.3}x {:>8}",
                    row.n, row.mean_speedup, row.min_speedup, row.max_speedup, gain
                );
            }
            Ok(())
        }
        Command::Report { run_dir } => {
            for p in emit_report(&run_dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Estimate => estimate_stdin(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
