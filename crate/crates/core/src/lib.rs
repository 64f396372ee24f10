//! Two-stage design-space exploration for HLS-style kernels.
//!
//! Stage 1 optimises each sub-function in isolation over a fixed variant
//! strategy, then an exact top-N solver picks globally promising variant
//! combinations under an area budget. Stage 2 runs one exploration agent per
//! ILP candidate, applying design-wide transformations, and the best valid
//! design across all agents is returned.
//!
//! Everything runs offline against the analytical [`cost`] model; external
//! evaluators and agents plug in through JSON subprocess protocols.

pub mod agent;
pub mod cost;
pub mod exec;
pub mod fixtures;
pub mod harness;
pub mod ilp;
pub mod ir;
pub mod stage1;
pub mod stage2;
pub mod transforms;
