//! Analytical latency/area estimator and the evaluator abstraction.
//!
//! Latency is in cycles, area in abstract area-units. The model:
//!
//! * a compute statement costs `op_latency × count` cycles and
//!   `op_area × count` area per replicated copy;
//! * an access statement costs `ceil(accesses × replication / ports)`;
//! * sequential statements add, parallel branches take the maximum;
//! * a call costs the callee's latency plus a fixed handshake
//!   (`call_overhead`), which inlining removes. Callee hardware is counted
//!   once per function regardless of the number of call sites;
//! * pipelined loops cost `depth + (ceil(T/U) − 1) × II_eff`, other loops
//!   `ceil(T/U) × depth`.

mod external;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    self, ArrayBindings, Call, Design, Function, Loop, OpClass, Param, PhysicalArray, Stmt,
};

pub use external::{
    parse_metrics_reply, timeout_from_env as external_timeout, AdapterCommand, ExternalEvaluator,
    Semaphore, DEFAULT_ADAPTER_CONCURRENCY, DEFAULT_ADAPTER_TIMEOUT, TIMEOUT_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Metrics {
    pub latency: u64,
    pub area: u64,
}

impl Metrics {
    pub fn new(latency: u64, area: u64) -> Self {
        Metrics { latency, area }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "latency {} cycles, area {}", self.latency, self.area)
    }
}

const DEFAULT_PARAMS: &str = include_str!("../../config/cost_params.v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    #[serde(default = "one_u32")]
    pub version: u32,
    pub op_latency: BTreeMap<OpClass, u64>,
    pub op_area: BTreeMap<OpClass, u64>,
    pub pipeline_reg_area_per_stage: u64,
    pub partition_area_per_way: u64,
    /// Additional port pairs gained per partition way beyond the first.
    pub port_multiplier_per_partition_way: u64,
    /// Handshake cycles of a non-inlined call.
    pub call_overhead: u64,
}

fn one_u32() -> u32 {
    1
}

impl Default for CostParams {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PARAMS).expect("bundled cost parameters parse")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid cost parameters: {0}")]
pub struct ParamsError(String);

impl CostParams {
    pub fn from_json(text: &str) -> Result<Self, ParamsError> {
        let p: CostParams = serde_json::from_str(text).map_err(|e| ParamsError(e.to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), ParamsError> {
        for op in OpClass::ALL {
            for (table, name) in [(&self.op_latency, "op_latency"), (&self.op_area, "op_area")] {
                match table.get(&op) {
                    Some(v) if *v > 0 => {}
                    _ => return Err(ParamsError(format!("{name} for {op:?} must be positive"))),
                }
            }
        }
        let scalars = [
            (
                "pipeline_reg_area_per_stage",
                self.pipeline_reg_area_per_stage,
            ),
            ("partition_area_per_way", self.partition_area_per_way),
            (
                "port_multiplier_per_partition_way",
                self.port_multiplier_per_partition_way,
            ),
        ];
        for (name, v) in scalars {
            if v == 0 {
                return Err(ParamsError(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn latency_of(&self, op: OpClass) -> u64 {
        self.op_latency.get(&op).copied().unwrap_or(1)
    }

    fn area_of(&self, op: OpClass) -> u64 {
        self.op_area.get(&op).copied().unwrap_or(1)
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

struct Estimator<'d> {
    d: &'d Design,
    p: &'d CostParams,
    bindings: ArrayBindings,
    latency_memo: RefCell<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Cost {
    latency: u64,
    area: u64,
}

impl<'d> Estimator<'d> {
    fn new(d: &'d Design, p: &'d CostParams) -> Self {
        Estimator {
            d,
            p,
            bindings: ArrayBindings::new(d),
            latency_memo: RefCell::new(BTreeMap::new()),
        }
    }

    /// Partition ways of `name` as seen from `f`: the larger of the function's
    /// own pragma and the array's design-wide partition.
    fn ways(&self, f: &Function, name: &str) -> u64 {
        let Some(decl) = self.bindings.resolve_decl(self.d, &f.name, name) else {
            return 1;
        };
        let global = decl.partition.map_or(1, |p| p.ways(decl.length));
        let local = f
            .array_partitions
            .get(name)
            .map_or(1, |p| p.ways(decl.length));
        global.max(local)
    }

    fn ports(&self, f: &Function, name: &str) -> u64 {
        let base = self
            .bindings
            .resolve_decl(self.d, &f.name, name)
            .map_or(2, |a| u64::from(a.base_ports.max(1)));
        let extra = self
            .p
            .port_multiplier_per_partition_way
            .saturating_mul(self.ways(f, name) - 1);
        base.saturating_mul(1 + extra)
    }

    fn physical(&self, f: &Function, name: &str) -> PhysicalArray {
        self.bindings
            .resolve(self.d, &f.name, name)
            .unwrap_or_else(|| PhysicalArray::Local {
                function: f.name.clone(),
                name: name.to_string(),
            })
    }

    /// Accesses per iteration grouped by physical array, looking through
    /// parallel branches and fully unrolled inner loops.
    fn accesses(
        &self,
        f: &Function,
        stmts: &[Stmt],
        mult: u64,
        out: &mut BTreeMap<PhysicalArray, (u64, u64)>,
    ) {
        for s in stmts {
            match s {
                Stmt::Access(a) if a.total() > 0 => {
                    let e = out
                        .entry(self.physical(f, &a.array))
                        .or_insert((0, self.ports(f, &a.array)));
                    e.0 = e.0.saturating_add(a.total().saturating_mul(mult));
                    e.1 = e.1.min(self.ports(f, &a.array));
                }
                Stmt::Loop(l) if l.fully_unrolled() => {
                    self.accesses(f, &l.body, mult.saturating_mul(l.trip_count), out)
                }
                Stmt::ParallelRegion(r) => {
                    for b in &r.branches {
                        self.accesses(f, b, mult, out);
                    }
                }
                _ => {}
            }
        }
    }

    /// Worst-case cycles per launch forced by port limits when `copies`
    /// iterations issue together.
    fn contention(&self, f: &Function, body: &[Stmt], copies: u64) -> u64 {
        let mut acc = BTreeMap::new();
        self.accesses(f, body, 1, &mut acc);
        acc.values()
            .map(|(n, ports)| ceil_div(n.saturating_mul(copies), *ports))
            .max()
            .unwrap_or(0)
    }

    /// Cycles during which a pipelined body occupies shared sequential
    /// hardware (inner rolled loops and calls); a new iteration cannot start
    /// sooner.
    fn sequential_floor(&self, f: &Function, body: &[Stmt], rep: u64) -> u64 {
        let mut floor = 0u64;
        for s in body {
            let c = match s {
                Stmt::Loop(l) if !l.fully_unrolled() => self.stmt(f, s, rep).latency,
                Stmt::Loop(l) => self.sequential_floor(f, &l.body, rep),
                Stmt::Call(_) => self.stmt(f, s, rep).latency,
                Stmt::ParallelRegion(r) => r
                    .branches
                    .iter()
                    .map(|b| self.sequential_floor(f, b, rep))
                    .max()
                    .unwrap_or(0),
                _ => 0,
            };
            floor = floor.saturating_add(c);
        }
        floor
    }

    fn effective_ii(&self, f: &Function, l: &Loop, rep: u64) -> u64 {
        let u = l.unroll_factor().min(l.trip_count);
        let requested = l.pipeline.unwrap_or(1).max(1);
        requested
            .max(l.carried_dep_latency)
            .max(self.contention(f, &l.body, u.saturating_mul(rep)))
            .max(self.sequential_floor(f, &l.body, rep))
    }

    fn block(&self, f: &Function, stmts: &[Stmt], rep: u64) -> Cost {
        stmts.iter().fold(Cost::default(), |acc, s| {
            let c = self.stmt(f, s, rep);
            Cost {
                latency: acc.latency.saturating_add(c.latency),
                area: acc.area.saturating_add(c.area),
            }
        })
    }

    fn stmt(&self, f: &Function, s: &Stmt, rep: u64) -> Cost {
        match s {
            Stmt::Compute(c) => Cost {
                latency: self.p.latency_of(c.op_class).saturating_mul(c.count),
                area: self
                    .p
                    .area_of(c.op_class)
                    .saturating_mul(c.count)
                    .saturating_mul(rep),
            },
            Stmt::Access(a) => Cost {
                latency: ceil_div(a.total().saturating_mul(rep), self.ports(f, &a.array)),
                area: 0,
            },
            Stmt::Call(c) => Cost {
                latency: self.call_latency(c),
                area: 0,
            },
            Stmt::ParallelRegion(r) => r.branches.iter().fold(Cost::default(), |acc, b| {
                let c = self.block(f, b, rep);
                Cost {
                    latency: acc.latency.max(c.latency),
                    area: acc.area.saturating_add(c.area),
                }
            }),
            Stmt::Loop(l) => self.loop_cost(f, l, rep),
        }
    }

    fn loop_cost(&self, f: &Function, l: &Loop, rep: u64) -> Cost {
        let u = l.unroll_factor().min(l.trip_count).max(1);
        let launches = ceil_div(l.trip_count, u);
        let dep = l.carried_dep_latency;
        if l.pipeline.is_some() {
            let body = self.block(f, &l.body, rep);
            let replicated = self.block(f, &l.body, rep.saturating_mul(u));
            let ii = self.effective_ii(f, l, rep);
            // Unrolled copies linked by a carried dependence issue one after
            // another, each waiting for the dependence or a free port.
            let chain = if dep > 0 && u > 1 {
                (u - 1).saturating_mul(dep.max(self.contention(f, &l.body, u.saturating_mul(rep))))
            } else {
                0
            };
            let depth = body.latency.saturating_add(chain);
            Cost {
                latency: depth.saturating_add((launches - 1).saturating_mul(ii)),
                area: replicated.area.saturating_add(
                    self.p
                        .pipeline_reg_area_per_stage
                        .saturating_mul(body.latency),
                ),
            }
        } else {
            let body = self.block(f, &l.body, rep.saturating_mul(u));
            let chain = if dep > 0 && u > 1 {
                (u - 1).saturating_mul(dep)
            } else {
                0
            };
            Cost {
                latency: launches.saturating_mul(body.latency.saturating_add(chain)),
                area: body.area,
            }
        }
    }

    fn call_latency(&self, c: &Call) -> u64 {
        let callee = self.function_latency(&c.callee);
        if c.inline {
            callee
        } else {
            callee.saturating_add(self.p.call_overhead)
        }
    }

    fn function_latency(&self, name: &str) -> u64 {
        if let Some(l) = self.latency_memo.borrow().get(name) {
            return *l;
        }
        let l = match self.d.function(name) {
            Some(f) => self.block(f, &f.body, 1).latency,
            None => 0,
        };
        self.latency_memo.borrow_mut().insert(name.to_string(), l);
        l
    }

    fn partition_area(&self, ways: u64) -> u64 {
        if ways > 1 {
            self.p.partition_area_per_way.saturating_mul(ways)
        } else {
            0
        }
    }

    fn function_area(&self, f: &Function) -> u64 {
        let mut area = self.block(f, &f.body, 1).area;
        for a in &f.local_arrays {
            area = area.saturating_add(a.storage_area);
        }
        for (name, p) in &f.array_partitions {
            if let Some(decl) = self.bindings.resolve_decl(self.d, &f.name, name) {
                area = area.saturating_add(self.partition_area(p.ways(decl.length)));
            }
        }
        area
    }

    fn design(&self) -> Metrics {
        let latency = self.function_latency(&self.d.top);
        let mut area = 0u64;
        for f in self.d.reachable_functions() {
            area = area.saturating_add(self.function_area(f));
        }
        for a in &self.d.arrays {
            area = area.saturating_add(a.storage_area);
            area = area
                .saturating_add(self.partition_area(a.partition.map_or(1, |p| p.ways(a.length))));
        }
        Metrics { latency, area }
    }
}

/// Estimates whole-design latency and area. `d` must be valid.
pub fn estimate(d: &Design, params: &CostParams) -> Metrics {
    Estimator::new(d, params).design()
}

/// Initiation interval a pipelined loop of `function` achieves under the
/// current pragmas. Loops without a pipeline pragma are treated as
/// requesting II = 1.
pub fn effective_ii(d: &Design, function: &str, l: &Loop, params: &CostParams) -> u64 {
    let e = Estimator::new(d, params);
    match d.function(function) {
        Some(f) => e.effective_ii(f, l, 1),
        None => l.pipeline.unwrap_or(1).max(l.carried_dep_latency).max(1),
    }
}

/// Latency of one function under the current design, including callees.
pub fn function_latency(d: &Design, function: &str, params: &CostParams) -> u64 {
    Estimator::new(d, params).function_latency(function)
}

pub const ISOLATION_TOP: &str = "__isolated_top";

/// Builds a design whose top invokes `function` once, the way the original
/// design's first call site does, with every array's storage zeroed so that
/// the metrics cover only `function` and its callees.
pub fn isolate(d: &Design, function: &str) -> Option<Design> {
    let target = d.function(function)?;
    let (params, locals, args) = match d.reachable_functions().iter().find_map(|f| {
        f.calls()
            .into_iter()
            .find(|c| c.callee == function)
            .map(|c| (*f, c.args.clone()))
    }) {
        Some((caller, args)) => (caller.params.clone(), caller.local_arrays.clone(), args),
        None => {
            let params: Vec<Param> = target.params.clone();
            let args = params.iter().map(|p| p.name.clone()).collect();
            (params, target.local_arrays.clone(), args)
        }
    };
    let mut out = d.clone();
    out.test_vectors.clear();
    for a in out.arrays.iter_mut() {
        a.storage_area = 0;
    }
    let wrapper = Function {
        name: ISOLATION_TOP.to_string(),
        params,
        body: vec![Stmt::Call(Call {
            id: "__isolated_call".to_string(),
            callee: function.to_string(),
            args,
            relation_tag: String::new(),
            inline: true,
        })],
        local_arrays: locals
            .into_iter()
            .map(|a| ir::ArrayDecl {
                storage_area: 0,
                partition: None,
                ..a
            })
            .collect(),
        array_partitions: BTreeMap::new(),
    };
    out.functions.insert(0, wrapper);
    out.top = ISOLATION_TOP.to_string();
    let keep: Vec<String> = out
        .reachable_functions()
        .iter()
        .map(|f| f.name.clone())
        .collect();
    out.functions.retain(|f| keep.contains(&f.name));
    Some(out)
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to start adapter `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("adapter exited with status {status}: {stderr}")]
    Exit { status: String, stderr: String },
    #[error("adapter timed out after {0} s")]
    Timeout(u64),
    #[error("malformed adapter reply: {0}")]
    Malformed(String),
    #[error("adapter i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
}

/// Source of (latency, area) measurements. Implementations must be safe to
/// call from many threads.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, d: &Design) -> Result<Metrics, EvalError>;

    /// Metrics of `function`'s subtree measured in isolation.
    fn evaluate_function(&self, d: &Design, function: &str) -> Result<Metrics, EvalError> {
        let iso =
            isolate(d, function).ok_or_else(|| EvalError::UnknownFunction(function.to_string()))?;
        self.evaluate(&iso)
    }

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Default)]
pub struct BuiltinEvaluator {
    pub params: CostParams,
}

impl BuiltinEvaluator {
    pub fn new(params: CostParams) -> Self {
        BuiltinEvaluator { params }
    }
}

impl Evaluator for BuiltinEvaluator {
    fn evaluate(&self, d: &Design) -> Result<Metrics, EvalError> {
        Ok(estimate(d, &self.params))
    }

    fn describe(&self) -> String {
        "builtin".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::load_design;

    fn single_loop(body: &str, trip: u64, pragmas: &str, arrays: &str) -> Design {
        load_design(&format!(
            r#"{{"name":"d","top":"m","arrays":[{arrays}],"functions":[{{"name":"m","body":[
              {{"kind":"loop","id":"l","trip_count":{trip}{pragmas},"body":[{body}]}}]}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn defaults_match_frozen_config() {
        let p = CostParams::default();
        assert_eq!(p.op_latency[&OpClass::Add], 1);
        assert_eq!(p.op_latency[&OpClass::Mul], 3);
        assert_eq!(p.op_latency[&OpClass::Div], 16);
        assert_eq!(p.op_area[&OpClass::Div], 200);
        assert_eq!(p.pipeline_reg_area_per_stage, 4);
        assert_eq!(p.partition_area_per_way, 8);
        p.check().unwrap();
    }

    #[test]
    fn single_add() {
        let d = load_design(
            r#"{"name":"d","top":"m","functions":[{"name":"m","body":[
            {"kind":"compute","id":"c","op_class":"add","count":1}]}]}"#,
        )
        .unwrap();
        assert_eq!(estimate(&d, &CostParams::default()), Metrics::new(1, 10));
    }

    #[test]
    fn pipelined_loop_formula() {
        let d = single_loop(
            r#"{"kind":"compute","id":"c","op_class":"mul","count":1}"#,
            10,
            r#","pipeline":1"#,
            "",
        );
        assert_eq!(estimate(&d, &CostParams::default()).latency, 3 + 9);
        let d = single_loop(
            r#"{"kind":"compute","id":"c","op_class":"mul","count":1}"#,
            10,
            "",
            "",
        );
        assert_eq!(estimate(&d, &CostParams::default()).latency, 30);
    }

    #[test]
    fn ii_examples() {
        let p = CostParams::default();
        let access = r#"{"kind":"access","id":"a","array":"x","reads_per_iter":1}"#;
        let arr = r#"{"name":"x","length":80}"#;
        let d = single_loop(access, 80, r#","pipeline":1"#, arr);
        assert_eq!(
            effective_ii(&d, "m", d.functions[0].find_loop("l").unwrap(), &p),
            1
        );
        let d = single_loop(access, 80, r#","pipeline":1,"carried_dep_latency":4"#, arr);
        assert_eq!(
            effective_ii(&d, "m", d.functions[0].find_loop("l").unwrap(), &p),
            4
        );
        let d = single_loop(access, 80, r#","pipeline":1,"unroll":8"#, arr);
        assert_eq!(
            effective_ii(&d, "m", d.functions[0].find_loop("l").unwrap(), &p),
            4
        );
    }

    #[test]
    fn full_unroll_against_two_ports() {
        let p = CostParams::default();
        let body = r#"{"kind":"compute","id":"c","op_class":"add","count":2},{"kind":"access","id":"a","array":"x","reads_per_iter":1}"#;
        let arr = r#"{"name":"x","length":10}"#;
        let piped = single_loop(body, 10, r#","pipeline":1"#, arr);
        let unrolled = single_loop(body, 10, r#","pipeline":1,"unroll":10"#, arr);
        let l = unrolled.functions[0].find_loop("l").unwrap();
        assert_eq!(effective_ii(&unrolled, "m", l, &p), 5);
        let (a, b) = (estimate(&piped, &p), estimate(&unrolled, &p));
        assert_eq!(b.latency, 3);
        assert_eq!(a.area, 20 + 4 * 3);
        assert_eq!(b.area, 10 * 20 + 4 * 3);
    }

    #[test]
    fn partitioning_lowers_ii_and_costs_area() {
        let p = CostParams::default();
        let access = r#"{"kind":"access","id":"a","array":"x","reads_per_iter":4}"#;
        let plain = single_loop(
            access,
            16,
            r#","pipeline":1"#,
            r#"{"name":"x","length":16}"#,
        );
        let split = single_loop(
            access,
            16,
            r#","pipeline":1"#,
            r#"{"name":"x","length":16,"partition":{"mode":"cyclic","factor":2}}"#,
        );
        let ii = |d: &Design| effective_ii(d, "m", d.functions[0].find_loop("l").unwrap(), &p);
        assert_eq!(ii(&plain), 2);
        assert_eq!(ii(&split), 1);
        assert!(estimate(&split, &p).area > estimate(&plain, &p).area);
    }

    #[test]
    fn carried_dependence_with_unroll_regresses() {
        let p = CostParams::default();
        let body = r#"{"kind":"compute","id":"c","op_class":"add","count":1},{"kind":"access","id":"a","array":"x","reads_per_iter":1,"writes_per_iter":1}"#;
        let arr = r#"{"name":"x","length":16}"#;
        let piped = estimate(
            &single_loop(body, 16, r#","pipeline":1,"carried_dep_latency":1"#, arr),
            &p,
        );
        let full = estimate(
            &single_loop(
                body,
                16,
                r#","pipeline":1,"unroll":16,"carried_dep_latency":1"#,
                arr,
            ),
            &p,
        );
        assert!(full.latency > piped.latency, "{full} vs {piped}");
    }

    #[test]
    fn isolation_drops_siblings_and_storage() {
        let d = load_design(
            r#"{"name":"d","top":"m","arrays":[{"name":"g","length":4,"storage_area":100}],"functions":[
            {"name":"m","body":[{"kind":"call","id":"k1","callee":"a","args":["g"]},{"kind":"call","id":"k2","callee":"b"}]},
            {"name":"a","params":[{"name":"x","kind":"array_ref"}],"body":[{"kind":"access","id":"r","array":"x","reads_per_iter":4}]},
            {"name":"b","body":[{"kind":"compute","id":"c","op_class":"div","count":1}]}]}"#,
        )
        .unwrap();
        let iso = isolate(&d, "a").unwrap();
        assert_eq!(iso.functions.len(), 2);
        ir::validate_design(&iso).unwrap();
        let ev = BuiltinEvaluator::default();
        assert_eq!(ev.evaluate_function(&d, "a").unwrap(), Metrics::new(2, 0));
        assert_eq!(
            ev.evaluate_function(&d, "b").unwrap(),
            Metrics::new(16, 200)
        );
        assert_eq!(ev.evaluate(&d).unwrap(), Metrics::new(2 + 1 + 16 + 1, 300));
    }
}
