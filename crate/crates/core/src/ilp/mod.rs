//! Latency composition model and exact top-N variant selection under an
//! area budget.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{CallGraph, Design, Stmt};
use crate::stage1::VariantSet;

/// Combinator tree over per-function latencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ModelNode {
    Leaf {
        function: String,
    },
    Sum {
        children: Vec<ModelNode>,
    },
    Max {
        children: Vec<ModelNode>,
    },
    /// Multiplies by the positive rational `num / den`.
    Scale {
        num: u64,
        den: u64,
        child: Box<ModelNode>,
    },
    LoopMul {
        count: u64,
        child: Box<ModelNode>,
    },
}

impl ModelNode {
    pub fn leaf(f: &str) -> Self {
        ModelNode::Leaf {
            function: f.to_string(),
        }
    }

    pub fn scale(k: u64, child: ModelNode) -> Self {
        ModelNode::Scale {
            num: k,
            den: 1,
            child: Box::new(child),
        }
    }

    pub fn loop_mul(count: u64, child: ModelNode) -> Self {
        ModelNode::LoopMul {
            count,
            child: Box::new(child),
        }
    }

    fn has_max(&self) -> bool {
        match self {
            ModelNode::Leaf { .. } => false,
            ModelNode::Max { .. } => true,
            ModelNode::Sum { children } => children.iter().any(ModelNode::has_max),
            ModelNode::Scale { child, .. } | ModelNode::LoopMul { child, .. } => child.has_max(),
        }
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ModelNode::Leaf { function } => {
                if !out.contains(&function.as_str()) {
                    out.push(function);
                }
            }
            ModelNode::Sum { children } | ModelNode::Max { children } => {
                children.iter().for_each(|c| c.leaves(out))
            }
            ModelNode::Scale { child, .. } | ModelNode::LoopMul { child, .. } => child.leaves(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub root: ModelNode,
}

impl LatencyModel {
    /// Distinct leaf functions in first-appearance order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.leaves(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IlpError {
    #[error("model leaf `{0}` has no latency binding")]
    UnboundLeaf(String),
    #[error("call graph and design disagree: {0}")]
    GraphMismatch(String),
    #[error("model has a zero constant")]
    ZeroConstant,
    #[error("problem has no functions")]
    Empty,
    #[error("function `{0}` has no variants")]
    NoVariants(String),
    #[error(
        "no assignment fits the area budget {budget}; the minimum achievable area is {min_area}"
    )]
    Infeasible { budget: u64, min_area: u64 },
    #[error("{0} combinations exceed the enumeration guard of {1}")]
    TooLarge(u128, u128),
}

type Q = Ratio<u128>;

/// Linear form: coefficient per function, first-appearance order.
fn linear(node: &ModelNode, k: Q, out: &mut Vec<(String, Q)>) {
    match node {
        ModelNode::Leaf { function } => match out.iter_mut().find(|(f, _)| f == function) {
            Some((_, c)) => *c += k,
            None => out.push((function.clone(), k)),
        },
        ModelNode::Sum { children } => children.iter().for_each(|c| linear(c, k, out)),
        ModelNode::Scale { num, den, child } => {
            linear(child, k * Q::new(u128::from(*num), u128::from(*den)), out)
        }
        ModelNode::LoopMul { count, child } => linear(child, k * Q::from(u128::from(*count)), out),
        ModelNode::Max { .. } => unreachable!("linear forms are Max-free"),
    }
}

fn sum_of(mut children: Vec<ModelNode>) -> Option<ModelNode> {
    match children.len() {
        0 => None,
        1 => children.pop(),
        _ => Some(ModelNode::Sum { children }),
    }
}

/// Canonical form: Max-free subtrees become a flat Sum of scaled leaves,
/// loop multipliers survive only above a Max.
fn normalize(node: ModelNode) -> ModelNode {
    if !node.has_max() {
        let mut terms = Vec::new();
        linear(&node, Q::from(1), &mut terms);
        let children = terms
            .into_iter()
            .map(|(f, c)| {
                let leaf = ModelNode::leaf(&f);
                if c == Q::from(1) {
                    leaf
                } else {
                    let (n, d) = (*c.numer(), *c.denom());
                    ModelNode::Scale {
                        num: u64::try_from(n).unwrap_or(u64::MAX),
                        den: u64::try_from(d).unwrap_or(u64::MAX),
                        child: Box::new(leaf),
                    }
                }
            })
            .collect();
        return sum_of(children).expect("models have at least one leaf");
    }
    match node {
        ModelNode::Sum { children } => {
            let mut flat = Vec::new();
            for c in children {
                match normalize(c) {
                    ModelNode::Sum { children } => flat.extend(children),
                    other => flat.push(other),
                }
            }
            // Adjacent Max-free parts are merged back into one linear block.
            let (lin, rest): (Vec<_>, Vec<_>) = flat.into_iter().partition(|c| !c.has_max());
            let mut children = rest;
            if let Some(l) = sum_of(lin) {
                let l = normalize(l);
                match l {
                    ModelNode::Sum { children: lc } => children.extend(lc),
                    other => children.push(other),
                }
            }
            sum_of(children).expect("non-empty")
        }
        ModelNode::Max { children } => ModelNode::Max {
            children: children.into_iter().map(normalize).collect(),
        },
        ModelNode::Scale { num, den, child } => ModelNode::Scale {
            num,
            den,
            child: Box::new(normalize(*child)),
        },
        ModelNode::LoopMul { count, child } => ModelNode::LoopMul {
            count,
            child: Box::new(normalize(*child)),
        },
        leaf @ ModelNode::Leaf { .. } => leaf,
    }
}

fn build_block(stmts: &[Stmt]) -> Option<ModelNode> {
    let children: Vec<ModelNode> = stmts.iter().filter_map(build_stmt).collect();
    sum_of(children)
}

fn build_stmt(s: &Stmt) -> Option<ModelNode> {
    match s {
        Stmt::Call(c) => Some(ModelNode::leaf(&c.callee)),
        Stmt::Loop(l) => build_block(&l.body).map(|b| ModelNode::loop_mul(l.trip_count, b)),
        Stmt::ParallelRegion(r) => {
            let branches: Vec<ModelNode> =
                r.branches.iter().filter_map(|b| build_block(b)).collect();
            match branches.len() {
                0 => None,
                1 => branches.into_iter().next(),
                _ => Some(ModelNode::Max { children: branches }),
            }
        }
        Stmt::Compute(_) | Stmt::Access(_) => None,
    }
}

/// Derives h(·) from the top function's call structure: sequential calls
/// add, parallel branches take the maximum, enclosing loops multiply. Work
/// outside calls is a constant offset and is not modelled. A top function
/// without calls is its own single leaf.
pub fn build_latency_model(g: &CallGraph, d: &Design) -> Result<LatencyModel, IlpError> {
    if g.top != d.top {
        return Err(IlpError::GraphMismatch(format!(
            "graph top `{}` vs design top `{}`",
            g.top, d.top
        )));
    }
    let top = d
        .function(&d.top)
        .ok_or_else(|| IlpError::GraphMismatch(format!("missing top `{}`", d.top)))?;
    let root = match build_block(&top.body) {
        Some(r) => normalize(r),
        None => ModelNode::leaf(&d.top),
    };
    let m = LatencyModel { root };
    let from_graph: BTreeSet<&str> = g.edges_from(&d.top).map(|e| e.callee.as_str()).collect();
    let from_model: BTreeSet<&str> = m.leaves().into_iter().collect();
    if !from_graph.is_empty() && from_graph != from_model {
        return Err(IlpError::GraphMismatch(format!(
            "callees {from_graph:?} vs model leaves {from_model:?}"
        )));
    }
    Ok(m)
}

/// Model with leaves resolved to positions in a problem's function list.
#[derive(Debug, Clone)]
enum Compiled {
    Leaf(usize),
    Sum(Vec<Compiled>),
    Max(Vec<Compiled>),
    Mul(Q, Box<Compiled>),
}

impl Compiled {
    fn new(node: &ModelNode, index: &dyn Fn(&str) -> Option<usize>) -> Result<Self, IlpError> {
        Ok(match node {
            ModelNode::Leaf { function } => Compiled::Leaf(
                index(function).ok_or_else(|| IlpError::UnboundLeaf(function.clone()))?,
            ),
            ModelNode::Sum { children } => Compiled::Sum(
                children
                    .iter()
                    .map(|c| Compiled::new(c, index))
                    .collect::<Result<_, _>>()?,
            ),
            ModelNode::Max { children } => Compiled::Max(
                children
                    .iter()
                    .map(|c| Compiled::new(c, index))
                    .collect::<Result<_, _>>()?,
            ),
            ModelNode::Scale { num, den, child } => {
                if *num == 0 || *den == 0 {
                    return Err(IlpError::ZeroConstant);
                }
                Compiled::Mul(
                    Q::new(u128::from(*num), u128::from(*den)),
                    Box::new(Compiled::new(child, index)?),
                )
            }
            ModelNode::LoopMul { count, child } => {
                if *count == 0 {
                    return Err(IlpError::ZeroConstant);
                }
                Compiled::Mul(
                    Q::from(u128::from(*count)),
                    Box::new(Compiled::new(child, index)?),
                )
            }
        })
    }

    fn eval(&self, lat: &[u64]) -> Q {
        match self {
            Compiled::Leaf(i) => Q::from(u128::from(lat[*i])),
            Compiled::Sum(cs) => cs.iter().fold(Q::from(0), |acc, c| acc + c.eval(lat)),
            Compiled::Max(cs) => cs
                .iter()
                .map(|c| c.eval(lat))
                .max()
                .unwrap_or_else(|| Q::from(0)),
            Compiled::Mul(k, c) => *k * c.eval(lat),
        }
    }
}

fn ceil_u64(q: Q) -> u64 {
    u64::try_from(q.ceil().to_integer()).unwrap_or(u64::MAX)
}

/// Evaluates the model exactly and rounds up to whole cycles.
pub fn eval_model(m: &LatencyModel, latencies: &BTreeMap<String, u64>) -> Result<u64, IlpError> {
    let names: Vec<&String> = latencies.keys().collect();
    let compiled = Compiled::new(&m.root, &|f| names.iter().position(|n| n.as_str() == f))?;
    let lat: Vec<u64> = latencies.values().copied().collect();
    Ok(ceil_u64(compiled.eval(&lat)))
}

/// One selectable implementation of a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub index: usize,
    pub latency: u64,
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub function: String,
    pub choices: Vec<Choice>,
}

impl From<&VariantSet> for ChoiceSet {
    fn from(s: &VariantSet) -> Self {
        ChoiceSet {
            function: s.function.clone(),
            choices: s
                .variants
                .iter()
                .filter_map(|v| {
                    v.metrics.map(|m| Choice {
                        index: v.index,
                        latency: m.latency,
                        area: m.area,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlpProblem {
    pub variant_sets: Vec<ChoiceSet>,
    pub model: LatencyModel,
    pub area_budget: u64,
}

impl IlpProblem {
    pub fn from_variant_sets(sets: &[VariantSet], model: LatencyModel, area_budget: u64) -> Self {
        IlpProblem {
            variant_sets: sets.iter().map(ChoiceSet::from).collect(),
            model,
            area_budget,
        }
    }

    /// Smallest total area any assignment can reach.
    pub fn min_area(&self) -> u64 {
        self.variant_sets
            .iter()
            .map(|s| s.choices.iter().map(|c| c.area).min().unwrap_or(0))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlpSolution {
    pub choice: BTreeMap<String, usize>,
    pub predicted_latency: u64,
    pub total_area: u64,
    pub rank: usize,
}

/// Ranking key: latency, then area, then the variant indices in problem
/// order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    latency: u64,
    area: u64,
    choice: Vec<usize>,
}

struct Prepared<'p> {
    p: &'p IlpProblem,
    model: Compiled,
    min_lat: Vec<u64>,
    min_area: Vec<u64>,
}

impl<'p> Prepared<'p> {
    fn new(p: &'p IlpProblem) -> Result<Self, IlpError> {
        if p.variant_sets.is_empty() {
            return Err(IlpError::Empty);
        }
        for s in &p.variant_sets {
            if s.choices.is_empty() {
                return Err(IlpError::NoVariants(s.function.clone()));
            }
        }
        let model = Compiled::new(&p.model.root, &|f| {
            p.variant_sets.iter().position(|s| s.function == f)
        })?;
        let min_lat = p
            .variant_sets
            .iter()
            .map(|s| s.choices.iter().map(|c| c.latency).min().unwrap_or(0))
            .collect();
        let min_area: Vec<u64> = p
            .variant_sets
            .iter()
            .map(|s| s.choices.iter().map(|c| c.area).min().unwrap_or(0))
            .collect();
        let total_min: u64 = min_area.iter().sum();
        if total_min > p.area_budget {
            return Err(IlpError::Infeasible {
                budget: p.area_budget,
                min_area: total_min,
            });
        }
        Ok(Prepared {
            p,
            model,
            min_lat,
            min_area,
        })
    }

    fn key(&self, picks: &[usize]) -> Key {
        let mut lat = Vec::with_capacity(picks.len());
        let mut area = 0u64;
        let mut choice = Vec::with_capacity(picks.len());
        for (s, &i) in self.p.variant_sets.iter().zip(picks) {
            let c = s.choices[i];
            lat.push(c.latency);
            area += c.area;
            choice.push(c.index);
        }
        Key {
            latency: ceil_u64(self.model.eval(&lat)),
            area,
            choice,
        }
    }

    fn solution(&self, k: &Key, rank: usize) -> IlpSolution {
        IlpSolution {
            choice: self
                .p
                .variant_sets
                .iter()
                .map(|s| s.function.clone())
                .zip(k.choice.iter().copied())
                .collect(),
            predicted_latency: k.latency,
            total_area: k.area,
            rank,
        }
    }
}

struct Search<'a, 'p> {
    prep: &'a Prepared<'p>,
    excluded: &'a BTreeSet<Vec<usize>>,
    best: Option<Key>,
    picks: Vec<usize>,
}

impl Search<'_, '_> {
    fn bound(&self, depth: usize) -> (u64, u64) {
        let mut lat = self.prep.min_lat.clone();
        let mut area = 0u64;
        for (k, &i) in self.picks[..depth].iter().enumerate() {
            let c = self.prep.p.variant_sets[k].choices[i];
            lat[k] = c.latency;
            area += c.area;
        }
        area += self.prep.min_area[depth..].iter().sum::<u64>();
        (ceil_u64(self.prep.model.eval(&lat)), area)
    }

    fn run(&mut self, depth: usize) {
        let (lb_lat, lb_area) = self.bound(depth);
        if lb_area > self.prep.p.area_budget {
            return;
        }
        if let Some(b) = &self.best {
            if (lb_lat, lb_area) > (b.latency, b.area) {
                return;
            }
        }
        let k = self.prep.p.variant_sets.len();
        if depth == k {
            let key = self.prep.key(&self.picks);
            if self.excluded.contains(&key.choice) {
                return;
            }
            if self
                .best
                .as_ref()
                .is_none_or(|b| key.cmp(b) == Ordering::Less)
            {
                self.best = Some(key);
            }
            return;
        }
        // Children in ascending variant index order, so the first key found
        // among exact ties is the lexicographically smallest.
        let mut order: Vec<usize> = (0..self.prep.p.variant_sets[depth].choices.len()).collect();
        order.sort_by_key(|&i| self.prep.p.variant_sets[depth].choices[i].index);
        for i in order {
            self.picks[depth] = i;
            self.run(depth + 1);
        }
    }
}

/// Exact top-`n` assignments by (latency, area, choice vector), found by
/// repeated branch and bound with no-good cuts on earlier solutions.
pub fn solve_top_n(p: &IlpProblem, n: usize) -> Result<Vec<IlpSolution>, IlpError> {
    let prep = Prepared::new(p)?;
    let mut excluded = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let mut s = Search {
            prep: &prep,
            excluded: &excluded,
            best: None,
            picks: vec![0; p.variant_sets.len()],
        };
        s.run(0);
        let Some(best) = s.best else { break };
        out.push(prep.solution(&best, out.len() + 1));
        excluded.insert(best.choice);
    }
    Ok(out)
}

pub const ORACLE_GUARD: u128 = 1_000_000;

/// Full enumeration with the same contract as [`solve_top_n`]. Refuses
/// problems with more than [`ORACLE_GUARD`] assignments.
pub fn brute_force_oracle(p: &IlpProblem, n: usize) -> Result<Vec<IlpSolution>, IlpError> {
    if p.variant_sets.is_empty() {
        return Err(IlpError::Empty);
    }
    let size: u128 = p
        .variant_sets
        .iter()
        .map(|s| s.choices.len() as u128)
        .product();
    if size > ORACLE_GUARD {
        return Err(IlpError::TooLarge(size, ORACLE_GUARD));
    }
    let prep = Prepared::new(p)?;
    let k = p.variant_sets.len();
    let mut picks = vec![0usize; k];
    let mut all = Vec::new();
    'outer: loop {
        let key = prep.key(&picks);
        if key.area <= p.area_budget {
            all.push(key);
        }
        for pos in (0..k).rev() {
            picks[pos] += 1;
            if picks[pos] < p.variant_sets[pos].choices.len() {
                continue 'outer;
            }
            picks[pos] = 0;
        }
        break;
    }
    all.sort();
    Ok(all
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, key)| prep.solution(key, i + 1))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(f: &str, opts: &[(u64, u64)]) -> ChoiceSet {
        ChoiceSet {
            function: f.into(),
            choices: opts
                .iter()
                .enumerate()
                .map(|(i, &(latency, area))| Choice {
                    index: i,
                    latency,
                    area,
                })
                .collect(),
        }
    }

    fn bind(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn single_leaf() {
        let m = LatencyModel {
            root: ModelNode::leaf("f"),
        };
        assert_eq!(eval_model(&m, &bind(&[("f", 7)])).unwrap(), 7);
        assert_eq!(
            eval_model(&m, &bind(&[("g", 7)])),
            Err(IlpError::UnboundLeaf("f".into()))
        );
    }

    #[test]
    fn one_function_two_variants() {
        let p = IlpProblem {
            variant_sets: vec![set("f", &[(10, 5), (4, 8)])],
            model: LatencyModel {
                root: ModelNode::leaf("f"),
            },
            area_budget: 8,
        };
        let s = solve_top_n(&p, 2).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(
            (s[0].choice["f"], s[0].predicted_latency, s[0].rank),
            (1, 4, 1)
        );
        assert_eq!(
            (s[1].choice["f"], s[1].predicted_latency, s[1].rank),
            (0, 10, 2)
        );
    }

    #[test]
    fn budget_excludes_fastest_pair() {
        let m = LatencyModel {
            root: ModelNode::Sum {
                children: vec![ModelNode::leaf("a"), ModelNode::leaf("b")],
            },
        };
        let p = IlpProblem {
            variant_sets: vec![set("a", &[(10, 1), (2, 6)]), set("b", &[(9, 1), (3, 5)])],
            model: m,
            area_budget: 7,
        };
        let s = solve_top_n(&p, 4).unwrap();
        assert_eq!(s, brute_force_oracle(&p, 4).unwrap());
        assert_eq!(
            s[0].choice,
            [("a".to_string(), 1), ("b".to_string(), 0)].into()
        );
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn infeasible_reports_minimum() {
        let p = IlpProblem {
            variant_sets: vec![set("a", &[(1, 5), (2, 3)])],
            model: LatencyModel {
                root: ModelNode::leaf("a"),
            },
            area_budget: 2,
        };
        assert_eq!(
            solve_top_n(&p, 1),
            Err(IlpError::Infeasible {
                budget: 2,
                min_area: 3
            })
        );
    }

    #[test]
    fn oracle_guards() {
        let empty = IlpProblem {
            variant_sets: vec![],
            model: LatencyModel {
                root: ModelNode::leaf("a"),
            },
            area_budget: 2,
        };
        assert_eq!(brute_force_oracle(&empty, 1), Err(IlpError::Empty));
        let wide: Vec<(u64, u64)> = (0..100).map(|i| (i, 1)).collect();
        let names = ["a", "b", "c", "d"];
        let big = IlpProblem {
            variant_sets: names.iter().map(|n| set(n, &wide)).collect(),
            model: LatencyModel {
                root: ModelNode::Sum {
                    children: names.iter().map(|n| ModelNode::leaf(n)).collect(),
                },
            },
            area_budget: 100,
        };
        assert!(matches!(
            brute_force_oracle(&big, 1),
            Err(IlpError::TooLarge(..))
        ));
    }

    #[test]
    fn scale_rounds_up() {
        let m = LatencyModel {
            root: ModelNode::Scale {
                num: 1,
                den: 2,
                child: Box::new(ModelNode::leaf("f")),
            },
        };
        assert_eq!(eval_model(&m, &bind(&[("f", 7)])).unwrap(), 4);
    }

    fn arb_model(k: usize) -> impl Strategy<Value = ModelNode> {
        let leaf = (0..k).prop_map(|i| ModelNode::leaf(&format!("f{i}")));
        leaf.prop_recursive(3, 16, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4)
                    .prop_map(|children| ModelNode::Sum { children }),
                prop::collection::vec(inner.clone(), 1..4)
                    .prop_map(|children| ModelNode::Max { children }),
                (1u64..5, 1u64..4, inner.clone()).prop_map(|(num, den, c)| ModelNode::Scale {
                    num,
                    den,
                    child: Box::new(c)
                }),
                (1u64..12, inner).prop_map(|(count, c)| ModelNode::loop_mul(count, c)),
            ]
        })
    }

    fn arb_problem() -> impl Strategy<Value = IlpProblem> {
        (1usize..=4).prop_flat_map(|k| {
            (
                prop::collection::vec(prop::collection::vec((0u64..40, 0u64..30), 1..=5), k),
                arb_model(k),
                0u64..100,
            )
                .prop_map(move |(sets, root, budget)| {
                    // Every function is a leaf, so sets cover exactly the leaves.
                    let mut children = vec![root];
                    children.extend((0..k).map(|i| ModelNode::leaf(&format!("f{i}"))));
                    IlpProblem {
                        variant_sets: sets
                            .iter()
                            .enumerate()
                            .map(|(i, s)| set(&format!("f{i}"), s))
                            .collect(),
                        model: LatencyModel {
                            root: ModelNode::Max { children },
                        },
                        area_budget: budget,
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn solver_matches_oracle(p in arb_problem(), n in 1usize..5) {
            prop_assert_eq!(solve_top_n(&p, n), brute_force_oracle(&p, n));
        }

        #[test]
        fn relaxing_budget_never_hurts(p in arb_problem(), extra in 0u64..50) {
            if let Ok(a) = solve_top_n(&p, 1) {
                let mut q = p.clone();
                q.area_budget += extra;
                let b = solve_top_n(&q, 1).unwrap();
                prop_assert!(b[0].predicted_latency <= a[0].predicted_latency);
            }
        }

        #[test]
        fn eval_is_monotone(root in arb_model(3), lat in prop::collection::vec(0u64..100, 3), bump in 0usize..3, by in 1u64..20) {
            let m = LatencyModel { root };
            let mut b: BTreeMap<String, u64> = (0..3).map(|i| (format!("f{i}"), lat[i])).collect();
            let before = eval_model(&m, &b).unwrap();
            *b.get_mut(&format!("f{bump}")).unwrap() += by;
            prop_assert!(eval_model(&m, &b).unwrap() >= before);
        }
    }
}
