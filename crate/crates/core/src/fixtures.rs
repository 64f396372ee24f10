//! Bundled synthetic designs mirroring the call structures of the evaluated
//! kernels. Each ships test vectors with frozen expected outputs and a
//! default area budget.

use crate::ir::{load_design, Design};

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub source: &'static str,
    pub area_budget: u64,
    /// Whether the design has a global array used by several functions.
    pub shared_array: bool,
}

impl Fixture {
    pub fn design(&self) -> Design {
        load_design(self.source).unwrap_or_else(|e| panic!("fixture {} is invalid: {e}", self.name))
    }
}

pub const ALL: [Fixture; 6] = [
    Fixture {
        name: "syn5",
        source: include_str!("../fixtures/syn5.json"),
        area_budget: 450,
        shared_array: true,
    },
    Fixture {
        name: "syn6",
        source: include_str!("../fixtures/syn6.json"),
        area_budget: 400,
        shared_array: true,
    },
    Fixture {
        name: "nw",
        source: include_str!("../fixtures/nw.json"),
        area_budget: 500,
        shared_array: true,
    },
    Fixture {
        name: "aes",
        source: include_str!("../fixtures/aes.json"),
        area_budget: 700,
        shared_array: true,
    },
    Fixture {
        name: "kmeans",
        source: include_str!("../fixtures/kmeans.json"),
        area_budget: 600,
        shared_array: true,
    },
    Fixture {
        name: "streamcluster",
        source: include_str!("../fixtures/streamcluster.json"),
        area_budget: 1100,
        shared_array: true,
    },
];

pub fn get(name: &str) -> Option<Fixture> {
    ALL.iter().copied().find(|f| f.name == name)
}
