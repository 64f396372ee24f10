use std::collections::BTreeSet;

use thiserror::Error;

use super::*;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid design: {0}")]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unsupported ir_version {0}")]
    Version(u32),
    #[error("top function `{0}` does not exist")]
    MissingTop(String),
    #[error("top function `{0}` may only take scalar parameters")]
    TopArrayParam(String),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("duplicate array `{name}` in {scope}")]
    DuplicateArray { scope: String, name: String },
    #[error("array `{0}` must have length >= 1 and base_ports >= 1")]
    BadArray(String),
    #[error("function `{function}`: duplicate statement id `{id}`")]
    DuplicateStmt { function: String, id: String },
    #[error("function `{function}`: call `{call}` targets unknown function `{callee}`")]
    UnknownCallee {
        function: String,
        call: String,
        callee: String,
    },
    #[error("function `{function}`: call `{call}` passes {given} arguments, `{callee}` takes {expected}")]
    Arity {
        function: String,
        call: String,
        callee: String,
        given: usize,
        expected: usize,
    },
    #[error(
        "function `{function}`: call `{call}` argument `{arg}` does not match the parameter kind"
    )]
    ArgKind {
        function: String,
        call: String,
        arg: String,
    },
    #[error("function `{function}`: unknown array `{array}`")]
    UnknownArray { function: String, array: String },
    #[error("function `{function}`: `{name}` names an array but is used as a scalar")]
    ArrayAsScalar { function: String, name: String },
    #[error("function `{function}`: index references `{loop_id}` which is not an enclosing loop")]
    UnknownLoopVar { function: String, loop_id: String },
    #[error("function `{function}`: loop `{id}` must have trip_count >= 1")]
    ZeroTrip { function: String, id: String },
    #[error("function `{function}`: compute `{id}` must have count >= 1")]
    ZeroCount { function: String, id: String },
    #[error("function `{function}`: parallel region `{id}` needs at least two branches")]
    TooFewBranches { function: String, id: String },
    #[error("function `{function}`: closed form of loop `{id}` must be loop- and call-free")]
    BadClosedForm { function: String, id: String },
    #[error("function `{function}`: loop `{id}` unroll factor {factor} does not divide trip count {trip}")]
    BadUnroll {
        function: String,
        id: String,
        factor: u64,
        trip: u64,
    },
    #[error("function `{function}`: loop `{id}` pipeline II must be >= 1")]
    BadPipeline { function: String, id: String },
    #[error("array `{array}`: partition factor must be >= 2 unless complete")]
    BadPartition { array: String },
    #[error("call graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("function `{0}` is not reachable from the top function")]
    Unreachable(String),
    #[error("test vector {index}: {message}")]
    TestVector { index: usize, message: String },
}

pub(crate) fn check_partition(array: &str, p: &Partition) -> Result<(), ValidationError> {
    if p.mode != PartitionMode::Complete && p.factor < 2 {
        return Err(ValidationError::BadPartition {
            array: array.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn check_unroll(function: &str, l: &Loop) -> Result<(), ValidationError> {
    if let Some(u) = l.unroll {
        if u == 0 || (u != l.trip_count && !l.trip_count.is_multiple_of(u)) || u > l.trip_count {
            return Err(ValidationError::BadUnroll {
                function: function.to_string(),
                id: l.id.clone(),
                factor: u,
                trip: l.trip_count,
            });
        }
    }
    if l.pipeline == Some(0) {
        return Err(ValidationError::BadPipeline {
            function: function.to_string(),
            id: l.id.clone(),
        });
    }
    Ok(())
}

fn check_decls<'a>(
    scope: &str,
    decls: impl Iterator<Item = &'a ArrayDecl>,
) -> Result<(), ValidationError> {
    let mut seen = BTreeSet::new();
    for a in decls {
        if !seen.insert(a.name.as_str()) {
            return Err(ValidationError::DuplicateArray {
                scope: scope.to_string(),
                name: a.name.clone(),
            });
        }
        if a.length == 0 || a.base_ports == 0 {
            return Err(ValidationError::BadArray(a.name.clone()));
        }
        if let Some(p) = &a.partition {
            check_partition(&a.name, p)?;
        }
    }
    Ok(())
}

struct Scope<'a> {
    design: &'a Design,
    f: &'a Function,
}

impl Scope<'_> {
    fn is_array(&self, name: &str) -> bool {
        self.f.local_array(name).is_some()
            || self
                .f
                .param(name)
                .is_some_and(|p| p.kind == ParamKind::ArrayRef)
            || (self.f.param(name).is_none() && self.design.global(name).is_some())
    }

    fn err_array(&self, array: &str) -> ValidationError {
        ValidationError::UnknownArray {
            function: self.f.name.clone(),
            array: array.to_string(),
        }
    }

    fn check_array(&self, array: &str) -> Result<(), ValidationError> {
        if self.is_array(array) {
            Ok(())
        } else {
            Err(self.err_array(array))
        }
    }

    fn check_scalar(&self, name: &str) -> Result<(), ValidationError> {
        if self.is_array(name) {
            return Err(ValidationError::ArrayAsScalar {
                function: self.f.name.clone(),
                name: name.to_string(),
            });
        }
        Ok(())
    }

    fn check_index(&self, idx: &Index, loops: &[&str]) -> Result<(), ValidationError> {
        for t in &idx.terms {
            self.check_loop_var(&t.loop_id, loops)?;
        }
        Ok(())
    }

    fn check_loop_var(&self, id: &str, loops: &[&str]) -> Result<(), ValidationError> {
        if loops.contains(&id) {
            Ok(())
        } else {
            Err(ValidationError::UnknownLoopVar {
                function: self.f.name.clone(),
                loop_id: id.to_string(),
            })
        }
    }

    fn check_place(&self, p: &Place, loops: &[&str]) -> Result<(), ValidationError> {
        match p {
            Place::Scalar(s) => self.check_scalar(s),
            Place::Element { array, index } => {
                self.check_array(array)?;
                self.check_index(index, loops)
            }
        }
    }

    fn check_expr(&self, e: &AffineExpr, loops: &[&str]) -> Result<(), ValidationError> {
        for t in &e.terms {
            match &t.operand {
                Operand::Scalar(s) => self.check_scalar(s)?,
                Operand::Element { array, index } => {
                    self.check_array(array)?;
                    self.check_index(index, loops)?;
                }
                Operand::LoopIndex(l) => self.check_loop_var(l, loops)?,
            }
        }
        Ok(())
    }

    fn check_block<'s>(
        &self,
        stmts: &'s [Stmt],
        loops: &mut Vec<&'s str>,
        ids: &mut BTreeSet<&'s str>,
    ) -> Result<(), ValidationError> {
        let fname = || self.f.name.clone();
        for s in stmts {
            if !ids.insert(s.id()) {
                return Err(ValidationError::DuplicateStmt {
                    function: fname(),
                    id: s.id().to_string(),
                });
            }
            match s {
                Stmt::Loop(l) => {
                    if l.trip_count == 0 {
                        return Err(ValidationError::ZeroTrip {
                            function: fname(),
                            id: l.id.clone(),
                        });
                    }
                    check_unroll(&self.f.name, l)?;
                    loops.push(&l.id);
                    self.check_block(&l.body, loops, ids)?;
                    loops.pop();
                    if let Some(cf) = &l.closed_form {
                        let mut bad = false;
                        walk_stmts(&cf.body, &mut |s| {
                            bad |= matches!(s, Stmt::Loop(_) | Stmt::Call(_))
                        });
                        if bad {
                            return Err(ValidationError::BadClosedForm {
                                function: fname(),
                                id: l.id.clone(),
                            });
                        }
                        self.check_block(&cf.body, loops, ids)?;
                    }
                }
                Stmt::Compute(c) => {
                    if c.count == 0 {
                        return Err(ValidationError::ZeroCount {
                            function: fname(),
                            id: c.id.clone(),
                        });
                    }
                    match &c.effect {
                        Some(Effect::Assign { target, value })
                        | Some(Effect::Reduce { target, value, .. }) => {
                            self.check_place(target, loops)?;
                            self.check_expr(value, loops)?;
                        }
                        None => {}
                    }
                }
                Stmt::Access(a) => self.check_array(&a.array)?,
                Stmt::Call(c) => {
                    let callee = self.design.function(&c.callee).ok_or_else(|| {
                        ValidationError::UnknownCallee {
                            function: fname(),
                            call: c.id.clone(),
                            callee: c.callee.clone(),
                        }
                    })?;
                    if callee.params.len() != c.args.len() {
                        return Err(ValidationError::Arity {
                            function: fname(),
                            call: c.id.clone(),
                            callee: c.callee.clone(),
                            given: c.args.len(),
                            expected: callee.params.len(),
                        });
                    }
                    for (arg, p) in c.args.iter().zip(&callee.params) {
                        let ok = match p.kind {
                            ParamKind::ArrayRef => self.is_array(arg),
                            ParamKind::Scalar => !self.is_array(arg),
                        };
                        if !ok {
                            return Err(ValidationError::ArgKind {
                                function: fname(),
                                call: c.id.clone(),
                                arg: arg.clone(),
                            });
                        }
                    }
                }
                Stmt::ParallelRegion(p) => {
                    if p.branches.len() < 2 {
                        return Err(ValidationError::TooFewBranches {
                            function: fname(),
                            id: p.id.clone(),
                        });
                    }
                    for b in &p.branches {
                        self.check_block(b, loops, ids)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_test_vectors(d: &Design) -> Result<(), ValidationError> {
    let top = d.top_function();
    let check_map = |index: usize, map: &BTreeMap<String, Value>, require_params: bool| {
        let err = |message: String| ValidationError::TestVector { index, message };
        if require_params {
            for p in &top.params {
                if !map.contains_key(&p.name) {
                    return Err(err(format!("missing input for parameter `{}`", p.name)));
                }
            }
        }
        for (k, v) in map {
            if top.param(k).is_some() {
                if !matches!(v, Value::Scalar(_)) {
                    return Err(err(format!("`{k}` must be a scalar")));
                }
            } else if let Some(a) = d.global(k) {
                match v {
                    Value::Array(xs) if xs.len() as u64 == a.length => {}
                    _ => {
                        return Err(err(format!(
                            "`{k}` must be an array of length {}",
                            a.length
                        )))
                    }
                }
            } else {
                return Err(err(format!(
                    "`{k}` is neither a top parameter nor a global array"
                )));
            }
        }
        Ok(())
    };
    for (i, tv) in d.test_vectors.iter().enumerate() {
        check_map(i, &tv.inputs, true)?;
        check_map(i, &tv.expected_outputs, false)?;
    }
    Ok(())
}

/// Checks every structural invariant of a design.
pub fn validate(d: &Design) -> Result<(), ValidationError> {
    if d.ir_version != IR_VERSION {
        return Err(ValidationError::Version(d.ir_version));
    }
    let mut names = BTreeSet::new();
    for f in &d.functions {
        if !names.insert(f.name.as_str()) {
            return Err(ValidationError::DuplicateFunction(f.name.clone()));
        }
    }
    let Some(top) = d.function(&d.top) else {
        return Err(ValidationError::MissingTop(d.top.clone()));
    };
    if top.params.iter().any(|p| p.kind == ParamKind::ArrayRef) {
        return Err(ValidationError::TopArrayParam(d.top.clone()));
    }
    check_decls("globals", d.arrays.iter())?;
    for f in &d.functions {
        check_decls(&f.name, f.local_arrays.iter())?;
        let scope = Scope { design: d, f };
        for (name, p) in &f.array_partitions {
            scope.check_array(name)?;
            check_partition(name, p)?;
        }
        scope.check_block(&f.body, &mut Vec::new(), &mut BTreeSet::new())?;
    }
    super::callgraph::extract_call_graph(d).map_err(|e| match e {
        super::callgraph::CallGraphError::Cycle(f) => ValidationError::Cycle(f),
        super::callgraph::CallGraphError::Unreachable(f) => ValidationError::Unreachable(f),
    })?;
    check_test_vectors(d)
}
