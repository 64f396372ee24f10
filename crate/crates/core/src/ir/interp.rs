//! Reference interpreter for the executable statement subset.
//!
//! Semantics:
//! - arithmetic is 64-bit two's complement with wrapping;
//! - scalars and arrays are passed by reference;
//! - a scalar is bound by its first assignment (or by a parameter), and
//!   reading or reducing an unbound scalar is an error;
//! - local arrays are zero-initialised on every invocation, global arrays
//!   from the test vector (zero when absent);
//! - parallel-region branches execute in declaration order;
//! - pragmas, access statements and effect-less computes have no semantic
//!   effect.

use std::collections::BTreeMap;

use thiserror::Error;

use super::*;

pub type Outputs = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error(
        "function `{function}`: index {index} out of bounds for array `{array}` of length {length}"
    )]
    OutOfBounds {
        function: String,
        array: String,
        index: i64,
        length: usize,
    },
    #[error("function `{function}`: unbound identifier `{name}`")]
    Unbound { function: String, name: String },
    #[error("test vector does not match the top function: {0}")]
    Shape(String),
}

struct Machine<'d> {
    design: &'d Design,
    arrays: Vec<Vec<i64>>,
    scalars: Vec<Option<i64>>,
}

#[derive(Default)]
struct Frame {
    arrays: BTreeMap<String, usize>,
    scalars: BTreeMap<String, usize>,
    loops: Vec<(String, i64)>,
}

impl Machine<'_> {
    fn unbound(f: &Function, name: &str) -> InterpError {
        InterpError::Unbound {
            function: f.name.clone(),
            name: name.to_string(),
        }
    }

    fn loop_var(&self, f: &Function, fr: &Frame, id: &str) -> Result<i64, InterpError> {
        fr.loops
            .iter()
            .rev()
            .find(|(l, _)| l == id)
            .map(|(_, v)| *v)
            .ok_or_else(|| Self::unbound(f, id))
    }

    fn element(
        &self,
        f: &Function,
        fr: &Frame,
        array: &str,
        index: &Index,
    ) -> Result<(usize, usize), InterpError> {
        let slot = *fr
            .arrays
            .get(array)
            .ok_or_else(|| Self::unbound(f, array))?;
        let mut i = index.offset;
        for t in &index.terms {
            i = i.wrapping_add(t.coeff.wrapping_mul(self.loop_var(f, fr, &t.loop_id)?));
        }
        let length = self.arrays[slot].len();
        if i < 0 || i as usize >= length {
            return Err(InterpError::OutOfBounds {
                function: f.name.clone(),
                array: array.to_string(),
                index: i,
                length,
            });
        }
        Ok((slot, i as usize))
    }

    fn eval(&self, f: &Function, fr: &Frame, e: &AffineExpr) -> Result<i64, InterpError> {
        let mut acc = e.constant;
        for t in &e.terms {
            let v = match &t.operand {
                Operand::Scalar(s) => {
                    let slot = fr.scalars.get(s).ok_or_else(|| Self::unbound(f, s))?;
                    self.scalars[*slot].ok_or_else(|| Self::unbound(f, s))?
                }
                Operand::Element { array, index } => {
                    let (slot, i) = self.element(f, fr, array, index)?;
                    self.arrays[slot][i]
                }
                Operand::LoopIndex(l) => self.loop_var(f, fr, l)?,
            };
            acc = acc.wrapping_add(t.coeff.wrapping_mul(v));
        }
        Ok(acc)
    }

    fn effect(&mut self, f: &Function, fr: &mut Frame, e: &Effect) -> Result<(), InterpError> {
        let (target, value, op) = match e {
            Effect::Assign { target, value } => (target, value, None),
            Effect::Reduce { target, value, op } => (target, value, Some(*op)),
        };
        let v = self.eval(f, fr, value)?;
        let combine = |old: i64| match op {
            None => v,
            Some(ReduceOp::Add) => old.wrapping_add(v),
            Some(ReduceOp::Mul) => old.wrapping_mul(v),
            Some(ReduceOp::Max) => old.max(v),
            Some(ReduceOp::Min) => old.min(v),
        };
        match target {
            Place::Scalar(s) => {
                let slot = match fr.scalars.get(s) {
                    Some(slot) => *slot,
                    None if op.is_none() => {
                        self.scalars.push(None);
                        let slot = self.scalars.len() - 1;
                        fr.scalars.insert(s.clone(), slot);
                        slot
                    }
                    None => return Err(Self::unbound(f, s)),
                };
                let new = match (self.scalars[slot], op) {
                    (_, None) => v,
                    (Some(old), Some(_)) => combine(old),
                    (None, Some(_)) => return Err(Self::unbound(f, s)),
                };
                self.scalars[slot] = Some(new);
            }
            Place::Element { array, index } => {
                let (slot, i) = self.element(f, fr, array, index)?;
                self.arrays[slot][i] = combine(self.arrays[slot][i]);
            }
        }
        Ok(())
    }

    fn block(&mut self, f: &Function, fr: &mut Frame, stmts: &[Stmt]) -> Result<(), InterpError> {
        for s in stmts {
            match s {
                Stmt::Loop(l) => {
                    for it in 0..l.trip_count {
                        fr.loops.push((l.id.clone(), it as i64));
                        let r = self.block(f, fr, &l.body);
                        fr.loops.pop();
                        r?;
                    }
                }
                Stmt::Compute(c) => {
                    if let Some(e) = &c.effect {
                        self.effect(f, fr, e)?;
                    }
                }
                Stmt::Access(_) => {}
                Stmt::Call(c) => self.call(f, fr, c)?,
                Stmt::ParallelRegion(p) => {
                    for b in &p.branches {
                        self.block(f, fr, b)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn call(&mut self, caller: &Function, fr: &mut Frame, c: &Call) -> Result<(), InterpError> {
        let callee = self
            .design
            .function(&c.callee)
            .ok_or_else(|| Self::unbound(caller, &c.callee))?;
        let mut inner = Frame::default();
        for (arg, p) in c.args.iter().zip(&callee.params) {
            match p.kind {
                ParamKind::ArrayRef => {
                    let slot = *fr
                        .arrays
                        .get(arg)
                        .ok_or_else(|| Self::unbound(caller, arg))?;
                    inner.arrays.insert(p.name.clone(), slot);
                }
                ParamKind::Scalar => {
                    let slot = match fr.scalars.get(arg) {
                        Some(s) => *s,
                        None => {
                            self.scalars.push(None);
                            let s = self.scalars.len() - 1;
                            fr.scalars.insert(arg.clone(), s);
                            s
                        }
                    };
                    inner.scalars.insert(p.name.clone(), slot);
                }
            }
        }
        self.enter(callee, inner)
    }

    fn enter(&mut self, f: &Function, mut fr: Frame) -> Result<(), InterpError> {
        for (i, g) in self.design.arrays.iter().enumerate() {
            if f.param(&g.name).is_none() {
                fr.arrays.entry(g.name.clone()).or_insert(i);
            }
        }
        for a in &f.local_arrays {
            self.arrays.push(vec![0; a.length as usize]);
            fr.arrays.insert(a.name.clone(), self.arrays.len() - 1);
        }
        self.block(f, &mut fr, &f.body)
    }
}

/// Runs the design's top function on one test vector and returns the final
/// values of all top-level scalar parameters and global arrays.
pub fn interpret(d: &Design, tv: &TestVector) -> Result<Outputs, InterpError> {
    let top = d
        .function(&d.top)
        .ok_or_else(|| InterpError::Shape(format!("missing top `{}`", d.top)))?;
    let mut m = Machine {
        design: d,
        arrays: Vec::new(),
        scalars: Vec::new(),
    };
    for g in &d.arrays {
        let init = match tv.inputs.get(&g.name) {
            Some(Value::Array(xs)) if xs.len() as u64 == g.length => xs.clone(),
            Some(_) => {
                return Err(InterpError::Shape(format!(
                    "input `{}` has the wrong shape",
                    g.name
                )))
            }
            None => vec![0; g.length as usize],
        };
        m.arrays.push(init);
    }
    let mut fr = Frame::default();
    for p in &top.params {
        match (p.kind, tv.inputs.get(&p.name)) {
            (ParamKind::Scalar, Some(Value::Scalar(v))) => {
                m.scalars.push(Some(*v));
                fr.scalars.insert(p.name.clone(), m.scalars.len() - 1);
            }
            _ => {
                return Err(InterpError::Shape(format!(
                    "parameter `{}` needs a scalar input",
                    p.name
                )))
            }
        }
    }
    m.enter(top, fr)?;

    let mut out = Outputs::new();
    for (i, g) in d.arrays.iter().enumerate() {
        out.insert(g.name.clone(), Value::Array(m.arrays[i].clone()));
    }
    for (i, p) in top.params.iter().enumerate() {
        out.insert(
            p.name.clone(),
            Value::Scalar(m.scalars[i].unwrap_or_default()),
        );
    }
    Ok(out)
}
