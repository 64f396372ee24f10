//! Builtin proposal generators, one per optimisation path.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{
    walk_stmts, ArrayBindings, Design, Effect, Operand, Partition, PhysicalArray, Place, Stmt,
};
use crate::stage1::VariantSet;
use crate::transforms::{LoopPragma, PragmaConfig, Transform};

use super::Path;

/// Pragma blocks of every surviving pragma-only Stage-1 variant, per
/// function. The baseline contributes an empty block.
#[derive(Debug, Clone, Default)]
pub struct PragmaPool {
    blocks: BTreeMap<String, Vec<PragmaConfig>>,
}

impl PragmaPool {
    pub fn from_variant_sets(sets: &[VariantSet]) -> Self {
        let mut blocks = BTreeMap::new();
        for s in sets {
            let mut configs = Vec::new();
            for v in s.variants.iter().filter(|v| v.is_pragma_only()) {
                let mut merged = PragmaConfig::default();
                for t in &v.transforms {
                    if let Transform::ApplyPragmas {
                        target_function,
                        config,
                    } = t
                    {
                        if *target_function == s.function {
                            merged.loops.extend(config.loops.clone());
                            merged.arrays.extend(config.arrays.clone());
                            merged.calls.extend(config.calls.clone());
                        }
                    }
                }
                configs.push(merged);
            }
            blocks.insert(s.function.clone(), configs);
        }
        PragmaPool { blocks }
    }
}

fn pragma_composition(
    d: &Design,
    pool: &PragmaPool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Transform>> {
    let candidates: Vec<(&String, &Vec<PragmaConfig>)> = pool
        .blocks
        .iter()
        .filter(|(f, blocks)| blocks.len() > 1 && d.function(f).is_some())
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let take = rng.gen_range(1..=2.min(candidates.len()));
    let picked: Vec<_> = candidates.choose_multiple(rng, take).collect();
    let mut out = Vec::new();
    for (fname, blocks) in picked {
        let f = d.function(fname).expect("filtered above");
        let mut cfg = PragmaConfig::default();
        for l in f.loops() {
            let b = blocks.choose(rng).expect("non-empty");
            cfg.loops.insert(
                l.id.clone(),
                b.loops.get(&l.id).copied().unwrap_or(LoopPragma::default()),
            );
        }
        let arrays = &blocks.choose(rng).expect("non-empty").arrays;
        for name in f.array_partitions.keys() {
            cfg.arrays.insert(name.clone(), None);
        }
        cfg.arrays
            .extend(arrays.iter().map(|(k, v)| (k.clone(), *v)));
        let calls = &blocks.choose(rng).expect("non-empty").calls;
        for c in f.calls() {
            cfg.calls
                .insert(c.id.clone(), calls.get(&c.id).copied().unwrap_or(false));
        }
        out.push(Transform::ApplyPragmas {
            target_function: (*fname).clone(),
            config: cfg,
        });
    }
    Some(out)
}

fn restructuring_sites(d: &Design) -> Vec<Transform> {
    let mut sites = Vec::new();
    for f in d.reachable_functions() {
        let mut blocks: Vec<&[Stmt]> = vec![&f.body];
        walk_stmts(&f.body, &mut |s| match s {
            Stmt::Loop(l) => blocks.push(&l.body),
            Stmt::ParallelRegion(r) => blocks.extend(r.branches.iter().map(Vec::as_slice)),
            _ => {}
        });
        for b in blocks {
            for w in b.windows(2) {
                if let [Stmt::Loop(a), Stmt::Loop(c)] = w {
                    if a.trip_count == c.trip_count {
                        sites.push(Transform::LoopFuse {
                            function: f.name.clone(),
                            loop_a: a.id.clone(),
                            loop_b: c.id.clone(),
                        });
                    }
                }
            }
        }
        for l in f.loops() {
            if let [Stmt::Loop(inner)] = l.body.as_slice() {
                if l.carried_dep_latency == 0 && inner.carried_dep_latency == 0 {
                    sites.push(Transform::LoopReorder {
                        function: f.name.clone(),
                        loop_outer: l.id.clone(),
                        loop_inner: inner.id.clone(),
                    });
                }
            }
        }
        for c in f.calls() {
            sites.push(Transform::InlineCall {
                function: f.name.clone(),
                call_id: c.id.clone(),
            });
        }
    }
    sites
}

/// Global arrays touched by two or more functions; if none is shared, every
/// touched global.
pub fn shared_arrays(d: &Design) -> Vec<String> {
    let bindings = ArrayBindings::new(d);
    let mut users: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for f in d.reachable_functions() {
        let mut note = |name: &str| {
            if let Some(PhysicalArray::Global(g)) = bindings.resolve(d, &f.name, name) {
                users.entry(g).or_default().insert(f.name.clone());
            }
        };
        walk_stmts(&f.body, &mut |s| match s {
            Stmt::Access(a) if a.total() > 0 => note(&a.array),
            Stmt::Compute(c) => {
                if let Some(
                    Effect::Assign { target, value } | Effect::Reduce { target, value, .. },
                ) = &c.effect
                {
                    if let Place::Element { array, .. } = target {
                        note(array);
                    }
                    for t in &value.terms {
                        if let Operand::Element { array, .. } = &t.operand {
                            note(array);
                        }
                    }
                }
            }
            _ => {}
        });
    }
    let order: Vec<String> = d
        .arrays
        .iter()
        .map(|a| a.name.clone())
        .filter(|a| users.contains_key(a))
        .collect();
    let shared: Vec<String> = order
        .iter()
        .filter(|a| users[*a].len() >= 2)
        .cloned()
        .collect();
    if shared.is_empty() {
        order
    } else {
        shared
    }
}

fn memory(d: &Design, rng: &mut ChaCha8Rng) -> Option<Vec<Transform>> {
    let mut options = Vec::new();
    for name in shared_arrays(d) {
        let decl = d.global(&name).expect("shared arrays are globals");
        let current = decl.partition.map_or(1, |p| p.ways(decl.length));
        for p in [
            Partition::cyclic(2),
            Partition::cyclic(4),
            Partition::cyclic(8),
            Partition::complete(),
        ] {
            let fits = p.mode == crate::ir::PartitionMode::Complete || p.factor <= decl.length;
            if fits && p.ways(decl.length) > current {
                options.push(Transform::RepartitionArray {
                    array: name.clone(),
                    partition: p,
                });
            }
        }
    }
    options.choose(rng).cloned().map(|t| vec![t])
}

fn compute(d: &Design, rng: &mut ChaCha8Rng) -> Option<Vec<Transform>> {
    let mut sites = Vec::new();
    for f in d.reachable_functions() {
        for l in f.loops() {
            if l.closed_form.is_some() {
                sites.push(Transform::ClosedFormRewrite {
                    function: f.name.clone(),
                    loop_id: l.id.clone(),
                });
            }
        }
    }
    sites.choose(rng).cloned().map(|t| vec![t])
}

/// One transform batch along `path`, or `None` when the design offers no
/// eligible site.
pub fn propose(
    path: Path,
    d: &Design,
    pool: &PragmaPool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Transform>> {
    match path {
        Path::PragmaComposition => pragma_composition(d, pool, rng),
        Path::CodeRestructuring => restructuring_sites(d).choose(rng).cloned().map(|t| vec![t]),
        Path::MemoryOptimization => memory(d, rng),
        Path::ComputeOptimization => compute(d, rng),
    }
}
