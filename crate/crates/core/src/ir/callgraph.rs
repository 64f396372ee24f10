//! Function call graph with per-call-site composition annotations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Design, Stmt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Sequential,
    Parallel,
}

/// One call site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
    pub call_id: String,
    pub kind: EdgeKind,
    /// Product of the trip counts of all loops enclosing the call site.
    pub loop_multiplier: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub relation_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub top: String,
    pub nodes: Vec<String>,
    pub edges: Vec<CallEdge>,
}

impl CallGraph {
    pub fn edges_from<'a>(&'a self, caller: &'a str) -> impl Iterator<Item = &'a CallEdge> + 'a {
        self.edges.iter().filter(move |e| e.caller == caller)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallGraphError {
    #[error("recursion through `{0}` is not supported")]
    Cycle(String),
    #[error("function `{0}` is unreachable from the top function")]
    Unreachable(String),
}

fn collect_edges(
    caller: &str,
    stmts: &[Stmt],
    multiplier: u64,
    parallel: bool,
    out: &mut Vec<CallEdge>,
) {
    for s in stmts {
        match s {
            Stmt::Call(c) => out.push(CallEdge {
                caller: caller.to_string(),
                callee: c.callee.clone(),
                call_id: c.id.clone(),
                kind: if parallel {
                    EdgeKind::Parallel
                } else {
                    EdgeKind::Sequential
                },
                loop_multiplier: multiplier,
                relation_tag: c.relation_tag.clone(),
            }),
            Stmt::Loop(l) => collect_edges(
                caller,
                &l.body,
                multiplier.saturating_mul(l.trip_count),
                parallel,
                out,
            ),
            Stmt::ParallelRegion(p) => {
                for b in &p.branches {
                    collect_edges(caller, b, multiplier, true, out);
                }
            }
            Stmt::Compute(_) | Stmt::Access(_) => {}
        }
    }
}

/// Extracts the call graph of a design. Edges appear in design order
/// (functions in declaration order, call sites in statement order).
pub fn extract_call_graph(d: &Design) -> Result<CallGraph, CallGraphError> {
    let mut edges = Vec::new();
    for f in &d.functions {
        collect_edges(&f.name, &f.body, 1, false, &mut edges);
    }

    // Iterative DFS with colours for cycle detection.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let index = |name: &str| d.functions.iter().position(|f| f.name == name);
    let mut marks = vec![Mark::White; d.functions.len()];
    if let Some(top) = index(&d.top) {
        let mut stack: Vec<(usize, usize)> = vec![(top, 0)];
        marks[top] = Mark::Grey;
        while let Some((node, next)) = stack.pop() {
            let name = &d.functions[node].name;
            let succ: Vec<usize> = edges
                .iter()
                .filter(|e| &e.caller == name)
                .filter_map(|e| index(&e.callee))
                .collect();
            if next < succ.len() {
                stack.push((node, next + 1));
                let s = succ[next];
                match marks[s] {
                    Mark::Grey => return Err(CallGraphError::Cycle(d.functions[s].name.clone())),
                    Mark::White => {
                        marks[s] = Mark::Grey;
                        stack.push((s, 0));
                    }
                    Mark::Black => {}
                }
            } else {
                marks[node] = Mark::Black;
            }
        }
    }
    if let Some(i) = marks.iter().position(|m| *m == Mark::White) {
        return Err(CallGraphError::Unreachable(d.functions[i].name.clone()));
    }
    Ok(CallGraph {
        top: d.top.clone(),
        nodes: d.functions.iter().map(|f| f.name.clone()).collect(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_function_has_no_edges() {
        let d: Design = serde_json::from_str(
            r#"{"name":"d","top":"m","functions":[{"name":"m","body":[
            {"kind":"compute","id":"c","op_class":"add","count":1}]}]}"#,
        )
        .unwrap();
        let g = extract_call_graph(&d).unwrap();
        assert_eq!(g.nodes, vec!["m"]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn unreachable_function_is_reported() {
        let d: Design = serde_json::from_str(
            r#"{"name":"d","top":"m","functions":[{"name":"m","body":[]},{"name":"orphan","body":[]}]}"#,
        )
        .unwrap();
        assert_eq!(
            extract_call_graph(&d),
            Err(CallGraphError::Unreachable("orphan".into()))
        );
    }

    #[test]
    fn multiplier_is_product_of_enclosing_trips() {
        let d: Design = serde_json::from_str(
            r#"{"name":"d","top":"m","functions":[
            {"name":"m","body":[{"kind":"loop","id":"i","trip_count":3,"body":[
                {"kind":"loop","id":"j","trip_count":4,"body":[{"kind":"call","id":"k","callee":"g"}]}]}]},
            {"name":"g","body":[]}]}"#,
        )
        .unwrap();
        let g = extract_call_graph(&d).unwrap();
        assert_eq!(g.edges[0].loop_multiplier, 12);
        assert_eq!(g.edges[0].kind, EdgeKind::Sequential);
    }
}
