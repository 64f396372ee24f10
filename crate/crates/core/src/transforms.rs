//! Pragma application, code-level transformations and the test-vector
//! equivalence check.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::Metrics;
use crate::ir::{
    self, interpret, walk_stmts, walk_stmts_mut, AffineExpr, ArrayBindings, Design, Effect,
    Function, Index, InterpError, Operand, Outputs, Partition, PhysicalArray, Place, Stmt, Value,
};

/// Pragmas for one loop. Both fields replace the loop's current values;
/// `None` clears the pragma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoopPragma {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unroll: Option<u64>,
}

/// A block of directives for one function. Loops, arrays and calls not
/// listed keep their current annotations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PragmaConfig {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub loops: BTreeMap<String, LoopPragma>,
    /// `None` removes the function's partition pragma for that array.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub arrays: BTreeMap<String, Option<Partition>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub calls: BTreeMap<String, bool>,
}

impl PragmaConfig {
    pub fn is_empty(&self) -> bool {
        self.loops.is_empty() && self.arrays.is_empty() && self.calls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum Transform {
    ApplyPragmas {
        target_function: String,
        config: PragmaConfig,
    },
    LoopFuse {
        function: String,
        loop_a: String,
        loop_b: String,
    },
    LoopReorder {
        function: String,
        loop_outer: String,
        loop_inner: String,
    },
    InlineCall {
        function: String,
        call_id: String,
    },
    RepartitionArray {
        array: String,
        partition: Partition,
    },
    ClosedFormRewrite {
        function: String,
        loop_id: String,
    },
}

impl Transform {
    pub fn is_pragma_only(&self) -> bool {
        matches!(self, Transform::ApplyPragmas { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantStatus {
    Untested,
    Correct,
    Failed,
}

/// One optimisation configuration of a single function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub function: String,
    pub index: usize,
    pub transforms: Vec<Transform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    pub status: VariantStatus,
}

impl Variant {
    pub fn untested(function: &str, index: usize, transforms: Vec<Transform>) -> Self {
        Variant {
            function: function.to_string(),
            index,
            transforms,
            metrics: None,
            status: VariantStatus::Untested,
        }
    }

    pub fn is_pragma_only(&self) -> bool {
        self.transforms.iter().all(Transform::is_pragma_only)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{function}` has no loop `{id}`")]
    UnknownLoop { function: String, id: String },
    #[error("function `{function}` has no call `{id}`")]
    UnknownCall { function: String, id: String },
    #[error("unknown array `{0}`")]
    UnknownArray(String),
    #[error("cannot fuse `{a}` (trip {trip_a}) with `{b}` (trip {trip_b}): trip counts differ")]
    UnequalTrip {
        a: String,
        b: String,
        trip_a: u64,
        trip_b: u64,
    },
    #[error("loops `{a}` and `{b}` are not adjacent in the same block")]
    NotAdjacent { a: String, b: String },
    #[error("loops `{outer}`/`{inner}` are not a perfect nest free of carried dependences")]
    NotReorderable { outer: String, inner: String },
    #[error("loop `{0}` has no closed form")]
    NoClosedForm(String),
    #[error("inlining `{call}` would capture name `{name}`")]
    NameCapture { call: String, name: String },
    #[error("transform produced an invalid design: {0}")]
    Invalid(#[from] ir::ValidationError),
}

fn function_mut<'d>(d: &'d mut Design, name: &str) -> Result<&'d mut Function, TransformError> {
    d.function_mut(name)
        .ok_or_else(|| TransformError::UnknownFunction(name.to_string()))
}

/// Applies `t` to a copy of `d`. The input is never modified and the result
/// is re-validated.
pub fn apply(d: &Design, t: &Transform) -> Result<Design, TransformError> {
    let mut out = d.clone();
    match t {
        Transform::ApplyPragmas {
            target_function,
            config,
        } => apply_pragmas(&mut out, target_function, config)?,
        Transform::LoopFuse {
            function,
            loop_a,
            loop_b,
        } => loop_fuse(function_mut(&mut out, function)?, loop_a, loop_b)?,
        Transform::LoopReorder {
            function,
            loop_outer,
            loop_inner,
        } => loop_reorder(function_mut(&mut out, function)?, loop_outer, loop_inner)?,
        Transform::InlineCall { function, call_id } => inline_call(&mut out, function, call_id)?,
        Transform::RepartitionArray { array, partition } => {
            repartition(&mut out, array, *partition)?
        }
        Transform::ClosedFormRewrite { function, loop_id } => {
            closed_form(function_mut(&mut out, function)?, loop_id)?
        }
    }
    ir::validate_design(&out)?;
    Ok(out)
}

/// Applies a transform sequence left to right.
pub fn apply_all<'a>(
    d: &Design,
    ts: impl IntoIterator<Item = &'a Transform>,
) -> Result<Design, TransformError> {
    let mut cur = d.clone();
    for t in ts {
        cur = apply(&cur, t)?;
    }
    Ok(cur)
}

fn apply_pragmas(d: &mut Design, fname: &str, cfg: &PragmaConfig) -> Result<(), TransformError> {
    let f = function_mut(d, fname)?;
    for (id, p) in &cfg.loops {
        let mut found = false;
        walk_stmts_mut(&mut f.body, &mut |s| {
            if let Stmt::Loop(l) = s {
                if &l.id == id {
                    l.pipeline = p.pipeline;
                    l.unroll = p.unroll;
                    found = true;
                }
            }
        });
        if !found {
            return Err(TransformError::UnknownLoop {
                function: fname.to_string(),
                id: id.clone(),
            });
        }
    }
    for (id, inline) in &cfg.calls {
        let mut found = false;
        walk_stmts_mut(&mut f.body, &mut |s| {
            if let Stmt::Call(c) = s {
                if &c.id == id {
                    c.inline = *inline;
                    found = true;
                }
            }
        });
        if !found {
            return Err(TransformError::UnknownCall {
                function: fname.to_string(),
                id: id.clone(),
            });
        }
    }
    for (array, p) in &cfg.arrays {
        match p {
            Some(p) => {
                f.array_partitions.insert(array.clone(), *p);
            }
            None => {
                f.array_partitions.remove(array);
            }
        }
    }
    Ok(())
}

/// Finds the statement list that directly contains the statement `id`.
fn containing_block<'a>(stmts: &'a mut Vec<Stmt>, id: &str) -> Option<(&'a mut Vec<Stmt>, usize)> {
    if let Some(pos) = stmts.iter().position(|s| s.id() == id) {
        return Some((stmts, pos));
    }
    for s in stmts.iter_mut() {
        let found = match s {
            Stmt::Loop(l) => containing_block(&mut l.body, id),
            Stmt::ParallelRegion(p) => p.branches.iter_mut().find_map(|b| containing_block(b, id)),
            _ => None,
        };
        if found.is_some() {
            return found;
        }
    }
    None
}

fn rename_loop_refs(stmts: &mut [Stmt], from: &str, to: &str) {
    let fix_index = |idx: &mut Index| {
        for t in idx.terms.iter_mut() {
            if t.loop_id == from {
                t.loop_id = to.to_string();
            }
        }
    };
    walk_stmts_mut(stmts, &mut |s| {
        if let Stmt::Compute(c) = s {
            if let Some(e) = c.effect.as_mut() {
                let (target, value) = match e {
                    Effect::Assign { target, value } | Effect::Reduce { target, value, .. } => {
                        (target, value)
                    }
                };
                if let Place::Element { index, .. } = target {
                    fix_index(index);
                }
                for t in value.terms.iter_mut() {
                    match &mut t.operand {
                        Operand::Element { index, .. } => fix_index(index),
                        Operand::LoopIndex(l) if l == from => *l = to.to_string(),
                        _ => {}
                    }
                }
            }
        }
    });
}

fn loop_fuse(f: &mut Function, a: &str, b: &str) -> Result<(), TransformError> {
    let fname = f.name.clone();
    let unknown = |id: &str| TransformError::UnknownLoop {
        function: fname.clone(),
        id: id.to_string(),
    };
    let (block, pos) = containing_block(&mut f.body, a).ok_or_else(|| unknown(a))?;
    let Stmt::Loop(_) = &block[pos] else {
        return Err(unknown(a));
    };
    match block.get(pos + 1) {
        Some(Stmt::Loop(lb)) if lb.id == b => {}
        _ => {
            return Err(TransformError::NotAdjacent {
                a: a.to_string(),
                b: b.to_string(),
            })
        }
    }
    let Stmt::Loop(mut lb) = block.remove(pos + 1) else {
        unreachable!()
    };
    let Stmt::Loop(la) = &mut block[pos] else {
        unreachable!()
    };
    if la.trip_count != lb.trip_count {
        let err = TransformError::UnequalTrip {
            a: a.into(),
            b: b.into(),
            trip_a: la.trip_count,
            trip_b: lb.trip_count,
        };
        return Err(err);
    }
    rename_loop_refs(&mut lb.body, b, a);
    la.body.append(&mut lb.body);
    la.carried_dep_latency = la.carried_dep_latency.max(lb.carried_dep_latency);
    la.closed_form = None;
    Ok(())
}

fn loop_reorder(f: &mut Function, outer: &str, inner: &str) -> Result<(), TransformError> {
    let fname = f.name.clone();
    let (block, pos) =
        containing_block(&mut f.body, outer).ok_or_else(|| TransformError::UnknownLoop {
            function: fname.clone(),
            id: outer.to_string(),
        })?;
    let not = || TransformError::NotReorderable {
        outer: outer.to_string(),
        inner: inner.to_string(),
    };
    let Stmt::Loop(lo) = &mut block[pos] else {
        return Err(not());
    };
    let perfect = matches!(lo.body.as_slice(), [Stmt::Loop(li)] if li.id == inner);
    if !perfect || lo.carried_dep_latency != 0 {
        return Err(not());
    }
    let Some(Stmt::Loop(mut li)) = lo.body.pop() else {
        unreachable!()
    };
    if li.carried_dep_latency != 0 {
        lo.body.push(Stmt::Loop(li));
        return Err(not());
    }
    let mut new_inner = lo.clone();
    new_inner.body = std::mem::take(&mut li.body);
    new_inner.closed_form = None;
    li.closed_form = None;
    li.body = vec![Stmt::Loop(new_inner)];
    block[pos] = Stmt::Loop(li);
    Ok(())
}

fn closed_form(f: &mut Function, id: &str) -> Result<(), TransformError> {
    let fname = f.name.clone();
    let (block, pos) =
        containing_block(&mut f.body, id).ok_or_else(|| TransformError::UnknownLoop {
            function: fname.clone(),
            id: id.to_string(),
        })?;
    let Stmt::Loop(l) = &block[pos] else {
        return Err(TransformError::UnknownLoop {
            function: fname,
            id: id.to_string(),
        });
    };
    let cf = l
        .closed_form
        .clone()
        .ok_or_else(|| TransformError::NoClosedForm(id.to_string()))?;
    block.splice(pos..=pos, cf.body);
    Ok(())
}

fn repartition(d: &mut Design, array: &str, p: Partition) -> Result<(), TransformError> {
    ir::validate_design(d)?;
    let bindings = ArrayBindings::new(d);
    let target = PhysicalArray::Global(array.to_string());
    let decl = d
        .arrays
        .iter_mut()
        .find(|a| a.name == array)
        .ok_or_else(|| TransformError::UnknownArray(array.into()))?;
    decl.partition = Some(p);
    // The global partition becomes authoritative for every view of the array.
    let mut stale: Vec<(String, String)> = Vec::new();
    for f in &d.functions {
        for name in f.array_partitions.keys() {
            if bindings.resolve(d, &f.name, name).as_ref() == Some(&target) {
                stale.push((f.name.clone(), name.clone()));
            }
        }
    }
    for (f, name) in stale {
        if let Some(f) = d.function_mut(&f) {
            f.array_partitions.remove(&name);
        }
    }
    Ok(())
}

struct Renamer<'a> {
    prefix: String,
    names: BTreeMap<&'a str, String>,
}

impl Renamer<'_> {
    fn name(&self, n: &str) -> String {
        self.names.get(n).cloned().unwrap_or_else(|| n.to_string())
    }

    fn id(&self, id: &str) -> String {
        format!("{}{}", self.prefix, id)
    }

    fn index(&self, idx: &mut Index) {
        for t in idx.terms.iter_mut() {
            t.loop_id = self.id(&t.loop_id);
        }
    }

    fn expr(&self, e: &mut AffineExpr) {
        for t in e.terms.iter_mut() {
            match &mut t.operand {
                Operand::Scalar(s) => *s = self.name(s),
                Operand::Element { array, index } => {
                    *array = self.name(array);
                    self.index(index);
                }
                Operand::LoopIndex(l) => *l = self.id(l),
            }
        }
    }

    fn stmts(&self, stmts: &mut [Stmt]) {
        walk_stmts_mut(stmts, &mut |s| match s {
            Stmt::Loop(l) => {
                l.id = self.id(&l.id);
                if let Some(cf) = l.closed_form.as_mut() {
                    self.stmts(&mut cf.body);
                }
            }
            Stmt::Compute(c) => {
                c.id = self.id(&c.id);
                if let Some(e) = c.effect.as_mut() {
                    let (target, value) = match e {
                        Effect::Assign { target, value } | Effect::Reduce { target, value, .. } => {
                            (target, value)
                        }
                    };
                    match target {
                        Place::Scalar(s) => *s = self.name(s),
                        Place::Element { array, index } => {
                            *array = self.name(array);
                            self.index(index);
                        }
                    }
                    self.expr(value);
                }
            }
            Stmt::Access(a) => {
                a.id = self.id(&a.id);
                a.array = self.name(&a.array);
            }
            Stmt::Call(c) => {
                c.id = self.id(&c.id);
                for arg in c.args.iter_mut() {
                    *arg = self.name(arg);
                }
            }
            Stmt::ParallelRegion(p) => p.id = self.id(&p.id),
        });
    }
}

/// Names used as scalars inside `f` (parameters excluded).
fn scalar_names(f: &Function) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let visit = |stmts: &[Stmt], out: &mut BTreeSet<String>| {
        walk_stmts(stmts, &mut |s| match s {
            Stmt::Compute(c) => {
                if let Some(
                    Effect::Assign { target, value } | Effect::Reduce { target, value, .. },
                ) = &c.effect
                {
                    if let Place::Scalar(n) = target {
                        out.insert(n.clone());
                    }
                    for t in &value.terms {
                        if let Operand::Scalar(n) = &t.operand {
                            out.insert(n.clone());
                        }
                    }
                }
            }
            Stmt::Call(c) => out.extend(c.args.iter().cloned()),
            _ => {}
        });
    };
    visit(&f.body, &mut out);
    let closed: Vec<Vec<Stmt>> = f
        .loops()
        .iter()
        .filter_map(|l| l.closed_form.as_ref().map(|c| c.body.clone()))
        .collect();
    for b in &closed {
        visit(b, &mut out);
    }
    out.retain(|n| f.param(n).is_none() && f.local_array(n).is_none());
    out
}

fn inline_call(d: &mut Design, fname: &str, call_id: &str) -> Result<(), TransformError> {
    let caller = d
        .function(fname)
        .ok_or_else(|| TransformError::UnknownFunction(fname.to_string()))?;
    let call = caller
        .calls()
        .into_iter()
        .find(|c| c.id == call_id)
        .cloned()
        .ok_or_else(|| TransformError::UnknownCall {
            function: fname.to_string(),
            id: call_id.to_string(),
        })?;
    let callee = d
        .function(&call.callee)
        .ok_or_else(|| TransformError::UnknownFunction(call.callee.clone()))?
        .clone();

    let prefix = format!("{call_id}.");
    let mut names: BTreeMap<&str, String> = BTreeMap::new();
    for (p, arg) in callee.params.iter().zip(&call.args) {
        names.insert(&p.name, arg.clone());
    }
    for a in &callee.local_arrays {
        names.insert(&a.name, format!("{prefix}{}", a.name));
    }
    let scalars = scalar_names(&callee);
    for s in &scalars {
        // Arrays named by scalars are impossible in a validated design; what
        // remains are callee locals or globals.
        if d.global(s).is_none() {
            names.insert(s, format!("{prefix}{s}"));
        }
    }
    // Globals referenced by the callee must still resolve to the global
    // after being spliced into the caller.
    let mut referenced = BTreeSet::new();
    walk_stmts(&callee.body, &mut |s| match s {
        Stmt::Access(a) => {
            referenced.insert(a.array.clone());
        }
        Stmt::Compute(c) => {
            if let Some(Effect::Assign { target, value } | Effect::Reduce { target, value, .. }) =
                &c.effect
            {
                if let Place::Element { array, .. } = target {
                    referenced.insert(array.clone());
                }
                for t in &value.terms {
                    if let Operand::Element { array, .. } = &t.operand {
                        referenced.insert(array.clone());
                    }
                }
            }
        }
        _ => {}
    });
    for g in referenced
        .iter()
        .filter(|n| !names.contains_key(n.as_str()) && d.global(n).is_some())
    {
        if caller.param(g).is_some() || caller.local_array(g).is_some() {
            return Err(TransformError::NameCapture {
                call: call_id.to_string(),
                name: g.clone(),
            });
        }
    }

    let renamer = Renamer { prefix, names };
    let mut body = callee.body.clone();
    renamer.stmts(&mut body);
    let locals: Vec<_> = callee
        .local_arrays
        .iter()
        .map(|a| ir::ArrayDecl {
            name: renamer.name(&a.name),
            ..a.clone()
        })
        .collect();
    let partitions: Vec<(String, Partition)> = callee
        .array_partitions
        .iter()
        .map(|(n, p)| (renamer.name(n), *p))
        .collect();

    let f = function_mut(d, fname)?;
    let (block, pos) = containing_block(&mut f.body, call_id).expect("call located above");
    block.splice(pos..=pos, body);
    f.local_arrays.extend(locals);
    for (n, p) in partitions {
        f.array_partitions.entry(n).or_insert(p);
    }
    prune_unreachable(d);
    Ok(())
}

fn prune_unreachable(d: &mut Design) {
    let keep: BTreeSet<String> = d
        .reachable_functions()
        .iter()
        .map(|f| f.name.clone())
        .collect();
    d.functions.retain(|f| keep.contains(&f.name));
}

/// Outcome of comparing a candidate against the original design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Equivalence {
    Correct,
    Failed(MismatchReport),
}

impl Equivalence {
    pub fn is_correct(&self) -> bool {
        matches!(self, Equivalence::Correct)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub vector: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<usize>,
    pub reason: String,
}

/// Reference outputs of an original design, computed once and reused for
/// every candidate.
#[derive(Debug, Clone)]
pub struct EquivalenceChecker {
    original: Design,
    reference: Result<Vec<Outputs>, (usize, InterpError)>,
}

impl EquivalenceChecker {
    pub fn new(original: &Design) -> Self {
        let reference = original
            .test_vectors
            .iter()
            .enumerate()
            .map(|(i, tv)| interpret(original, tv).map_err(|e| (i, e)))
            .collect();
        EquivalenceChecker {
            original: original.clone(),
            reference,
        }
    }

    pub fn original(&self) -> &Design {
        &self.original
    }

    pub fn check(&self, candidate: &Design) -> Equivalence {
        let reference = match &self.reference {
            Ok(r) => r,
            Err((i, e)) => {
                return Equivalence::Failed(MismatchReport {
                    vector: *i,
                    output: None,
                    element: None,
                    reason: format!("original design fails: {e}"),
                })
            }
        };
        for (i, (tv, want)) in self.original.test_vectors.iter().zip(reference).enumerate() {
            let got = match interpret(candidate, tv) {
                Ok(g) => g,
                Err(e) => {
                    return Equivalence::Failed(MismatchReport {
                        vector: i,
                        output: None,
                        element: None,
                        reason: e.to_string(),
                    })
                }
            };
            for (name, w) in want {
                let fail = |element: Option<usize>, reason: String| {
                    Equivalence::Failed(MismatchReport {
                        vector: i,
                        output: Some(name.clone()),
                        element,
                        reason,
                    })
                };
                match (w, got.get(name)) {
                    (_, None) => return fail(None, "output missing from candidate".into()),
                    (Value::Scalar(a), Some(Value::Scalar(b))) if a != b => {
                        return fail(None, format!("expected {a}, got {b}"))
                    }
                    (Value::Array(a), Some(Value::Array(b))) => {
                        if a.len() != b.len() {
                            return fail(None, format!("length {} != {}", a.len(), b.len()));
                        }
                        if let Some(k) = a.iter().zip(b).position(|(x, y)| x != y) {
                            return fail(Some(k), format!("expected {}, got {}", a[k], b[k]));
                        }
                    }
                    (Value::Scalar(_), Some(Value::Scalar(_))) => {}
                    _ => return fail(None, "shape differs".into()),
                }
            }
        }
        Equivalence::Correct
    }
}

/// Compares `candidate` against `original` on the original's test vectors.
pub fn check_equivalence(original: &Design, candidate: &Design) -> Equivalence {
    EquivalenceChecker::new(original).check(candidate)
}
