//! Canonical resolution of array names to physical arrays.
//!
//! A function's array parameter may be bound to different arrays at
//! different call sites; cost estimation and cross-function transforms use
//! the binding of the first call site reached in a depth-first walk from the
//! top function.

use std::collections::BTreeMap;

use super::{ArrayDecl, Design, ParamKind, Stmt};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhysicalArray {
    Global(String),
    Local { function: String, name: String },
}

#[derive(Debug, Clone, Default)]
pub struct ArrayBindings {
    params: BTreeMap<(String, String), PhysicalArray>,
}

impl ArrayBindings {
    pub fn new(d: &Design) -> Self {
        let mut b = ArrayBindings::default();
        let mut visited = Vec::new();
        b.visit(d, &d.top, &mut visited);
        b
    }

    fn visit(&mut self, d: &Design, fname: &str, visited: &mut Vec<String>) {
        if visited.iter().any(|v| v == fname) {
            return;
        }
        visited.push(fname.to_string());
        let Some(f) = d.function(fname) else { return };
        let mut calls = Vec::new();
        super::walk_stmts(&f.body, &mut |s| {
            if let Stmt::Call(c) = s {
                calls.push(c.clone());
            }
        });
        for c in &calls {
            let Some(callee) = d.function(&c.callee) else {
                continue;
            };
            for (arg, p) in c.args.iter().zip(&callee.params) {
                if p.kind != ParamKind::ArrayRef {
                    continue;
                }
                let key = (callee.name.clone(), p.name.clone());
                if self.params.contains_key(&key) {
                    continue;
                }
                if let Some(phys) = self.resolve(d, fname, arg) {
                    self.params.insert(key, phys);
                }
            }
        }
        for c in &calls {
            self.visit(d, &c.callee, visited);
        }
    }

    /// Resolves `name` as seen inside `function`.
    pub fn resolve(&self, d: &Design, function: &str, name: &str) -> Option<PhysicalArray> {
        let f = d.function(function)?;
        if f.local_array(name).is_some() {
            return Some(PhysicalArray::Local {
                function: function.to_string(),
                name: name.to_string(),
            });
        }
        if let Some(p) = f.param(name) {
            return match p.kind {
                ParamKind::ArrayRef => self
                    .params
                    .get(&(function.to_string(), name.to_string()))
                    .cloned(),
                ParamKind::Scalar => None,
            };
        }
        d.global(name)
            .map(|_| PhysicalArray::Global(name.to_string()))
    }

    pub fn decl<'d>(&self, d: &'d Design, phys: &PhysicalArray) -> Option<&'d ArrayDecl> {
        match phys {
            PhysicalArray::Global(n) => d.global(n),
            PhysicalArray::Local { function, name } => d.function(function)?.local_array(name),
        }
    }

    pub fn resolve_decl<'d>(
        &self,
        d: &'d Design,
        function: &str,
        name: &str,
    ) -> Option<&'d ArrayDecl> {
        self.resolve(d, function, name)
            .and_then(|p| self.decl(d, &p))
    }
}
