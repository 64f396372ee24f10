//! Kernel intermediate representation.
//!
//! A [`Design`] is a set of functions over global arrays with a designated
//! top-level function. Statements carry two independent kinds of content:
//! cost annotations (trip counts, op counts, per-iteration array accesses,
//! pragmas) consumed by the cost model, and an optional executable
//! [`Effect`] consumed by the reference interpreter.
//!
//! The executable subset is deliberately small: affine assignments
//! (copies and affine updates) and reductions, with array indices affine
//! in the enclosing loop counters.

mod bindings;
mod callgraph;
mod interp;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bindings::{ArrayBindings, PhysicalArray};
pub use callgraph::{extract_call_graph, CallEdge, CallGraph, EdgeKind};
pub use interp::{interpret, InterpError, Outputs};
pub use validate::{IrError, ValidationError};

/// Schema version accepted by [`load_design`].
pub const IR_VERSION: u32 = 1;

fn default_ir_version() -> u32 {
    IR_VERSION
}

fn default_ports() -> u32 {
    2
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    #[serde(default = "default_ir_version")]
    pub ir_version: u32,
    pub name: String,
    pub top: String,
    #[serde(default)]
    pub arrays: Vec<ArrayDecl>,
    pub functions: Vec<Function>,
    #[serde(default)]
    pub test_vectors: Vec<TestVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    #[serde(default)]
    pub local_arrays: Vec<ArrayDecl>,
    /// Function-scoped ARRAY_PARTITION pragmas, keyed by the array name as
    /// seen inside this function (local, parameter or global).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub array_partitions: BTreeMap<String, Partition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Scalar,
    ArrayRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub length: u64,
    #[serde(default = "default_ports")]
    pub base_ports: u32,
    #[serde(default)]
    pub storage_area: u64,
    /// Design-wide partitioning of the physical array.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Cyclic,
    Block,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub mode: PartitionMode,
    #[serde(default = "one")]
    pub factor: u64,
}

fn one() -> u64 {
    1
}

impl Partition {
    pub fn complete() -> Self {
        Partition {
            mode: PartitionMode::Complete,
            factor: 1,
        }
    }

    pub fn cyclic(factor: u64) -> Self {
        Partition {
            mode: PartitionMode::Cyclic,
            factor,
        }
    }

    /// Number of independent banks this partition yields for an array of
    /// `length` elements.
    pub fn ways(&self, length: u64) -> u64 {
        match self.mode {
            PartitionMode::Complete => length.max(1),
            PartitionMode::Cyclic | PartitionMode::Block => self.factor.clamp(1, length.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Add,
    Mul,
    Div,
    Logic,
}

impl OpClass {
    pub const ALL: [OpClass; 4] = [OpClass::Add, OpClass::Mul, OpClass::Div, OpClass::Logic];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stmt {
    Loop(Loop),
    Compute(Compute),
    Access(Access),
    Call(Call),
    ParallelRegion(ParallelRegion),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Loop {
    pub id: String,
    pub trip_count: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub carried_dep_latency: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<ClosedForm>,
    /// PIPELINE pragma: requested initiation interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<u64>,
    /// UNROLL pragma: replication factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unroll: Option<u64>,
    pub body: Vec<Stmt>,
}

impl Loop {
    pub fn unroll_factor(&self) -> u64 {
        self.unroll.unwrap_or(1).max(1)
    }

    pub fn fully_unrolled(&self) -> bool {
        self.unroll_factor() >= self.trip_count
    }
}

/// Replacement statements for a reducible loop. The statements must be
/// loop-free; rewriting substitutes them for the whole loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compute {
    pub id: String,
    pub op_class: OpClass,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub id: String,
    pub array: String,
    #[serde(default)]
    pub reads_per_iter: u64,
    #[serde(default)]
    pub writes_per_iter: u64,
}

impl Access {
    pub fn total(&self) -> u64 {
        self.reads_per_iter + self.writes_per_iter
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    pub id: String,
    pub callee: String,
    /// Caller-scope names bound positionally to the callee's parameters.
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub relation_tag: String,
    /// INLINE pragma.
    #[serde(default, skip_serializing_if = "is_false")]
    pub inline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelRegion {
    pub id: String,
    pub branches: Vec<Vec<Stmt>>,
}

/// Executable content of a compute statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// `target = value`
    Assign { target: Place, value: AffineExpr },
    /// `target = target <op> value`
    Reduce {
        target: Place,
        op: ReduceOp,
        value: AffineExpr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceOp {
    Add,
    Mul,
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    Scalar(String),
    Element { array: String, index: Index },
}

/// `constant + Σ coeff · operand`
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AffineExpr {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub constant: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: i64,
    pub operand: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Scalar(String),
    Element {
        array: String,
        index: Index,
    },
    /// Current iteration number of the named enclosing loop.
    LoopIndex(String),
}

/// Array index affine in enclosing loop counters: `offset + Σ coeff · i_loop`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Index {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<IndexTerm>,
    #[serde(default)]
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexTerm {
    #[serde(rename = "loop")]
    pub loop_id: String,
    pub coeff: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(i64),
    Array(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVector {
    pub inputs: BTreeMap<String, Value>,
    #[serde(default)]
    pub expected_outputs: BTreeMap<String, Value>,
}

impl Stmt {
    pub fn id(&self) -> &str {
        match self {
            Stmt::Loop(l) => &l.id,
            Stmt::Compute(c) => &c.id,
            Stmt::Access(a) => &a.id,
            Stmt::Call(c) => &c.id,
            Stmt::ParallelRegion(p) => &p.id,
        }
    }
}

/// Pre-order walk over a statement list, descending into loop bodies and
/// parallel branches (not into closed forms).
pub fn walk_stmts<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        match s {
            Stmt::Loop(l) => walk_stmts(&l.body, f),
            Stmt::ParallelRegion(p) => {
                for b in &p.branches {
                    walk_stmts(b, f);
                }
            }
            _ => {}
        }
    }
}

/// Mutable pre-order walk, same traversal order as [`walk_stmts`].
pub fn walk_stmts_mut(stmts: &mut [Stmt], f: &mut dyn FnMut(&mut Stmt)) {
    for s in stmts.iter_mut() {
        f(s);
        match s {
            Stmt::Loop(l) => walk_stmts_mut(&mut l.body, f),
            Stmt::ParallelRegion(p) => {
                for b in p.branches.iter_mut() {
                    walk_stmts_mut(b, f);
                }
            }
            _ => {}
        }
    }
}

impl Function {
    pub fn loops(&self) -> Vec<&Loop> {
        let mut out = Vec::new();
        walk_stmts(&self.body, &mut |s| {
            if let Stmt::Loop(l) = s {
                out.push(l);
            }
        });
        out
    }

    pub fn calls(&self) -> Vec<&Call> {
        let mut out = Vec::new();
        walk_stmts(&self.body, &mut |s| {
            if let Stmt::Call(c) = s {
                out.push(c);
            }
        });
        out
    }

    pub fn find_loop(&self, id: &str) -> Option<&Loop> {
        self.loops().into_iter().find(|l| l.id == id)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn local_array(&self, name: &str) -> Option<&ArrayDecl> {
        self.local_arrays.iter().find(|a| a.name == name)
    }
}

impl Design {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn top_function(&self) -> &Function {
        self.function(&self.top)
            .expect("validated design has its top function")
    }

    /// Functions reachable from the top, in DFS pre-order starting at top.
    pub fn reachable_functions(&self) -> Vec<&Function> {
        let mut seen: Vec<&str> = Vec::new();
        let mut stack = vec![self.top.as_str()];
        let mut order = Vec::new();
        while let Some(name) = stack.pop() {
            if seen.contains(&name) {
                continue;
            }
            seen.push(name);
            let Some(f) = self.function(name) else {
                continue;
            };
            order.push(f);
            let callees: Vec<&str> = f.calls().iter().map(|c| c.callee.as_str()).collect();
            for c in callees.into_iter().rev() {
                if !seen.contains(&c) {
                    stack.push(c);
                }
            }
        }
        order
    }

    /// Canonical JSON encoding (field order fixed by the type definitions,
    /// maps ordered).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("design serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    /// SHA-256 of the canonical encoding, hex-encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Parses and validates a serialized design.
pub fn load_design(text: &str) -> Result<Design, IrError> {
    let design: Design = serde_json::from_str(text).map_err(|e| IrError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate::validate(&design)?;
    Ok(design)
}

pub use validate::validate as validate_design;

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "ir_version": 1, "name": "minimal", "top": "main",
        "functions": [{"name": "main", "body": [
            {"kind": "compute", "id": "c0", "op_class": "add", "count": 1}
        ]}]
    }"#;

    #[test]
    fn minimal_design_loads() {
        let d = load_design(MINIMAL).unwrap();
        assert_eq!(d.functions.len(), 1);
        assert_eq!(d.top, "main");
    }

    #[test]
    fn missing_callee_is_a_validation_error() {
        let text = r#"{"name": "bad", "top": "main", "functions": [{"name": "main", "body": [
            {"kind": "call", "id": "k0", "callee": "ghost"}]}]}"#;
        match load_design(text) {
            Err(IrError::Invalid(ValidationError::UnknownCallee { callee, .. })) => {
                assert_eq!(callee, "ghost")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_location() {
        let err = load_design("{\n  \"name\": 3,").unwrap_err();
        match err {
            IrError::Parse { line, .. } => assert!(line >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partition_ways() {
        assert_eq!(Partition::complete().ways(16), 16);
        assert_eq!(Partition::cyclic(4).ways(16), 4);
        assert_eq!(Partition::cyclic(64).ways(16), 16);
    }

    #[test]
    fn content_hash_is_stable() {
        let d = load_design(MINIMAL).unwrap();
        assert_eq!(d.content_hash(), d.clone().content_hash());
        assert_eq!(d.content_hash().len(), 64);
    }
}
