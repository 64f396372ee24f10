//! Pareto fronts over (speedup, area) and the Pearson coefficient.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage2::ExplorationRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub speedup: f64,
    pub area: u64,
    pub provenance: String,
}

impl ParetoPoint {
    /// Higher speedup is better, lower area is better.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.speedup >= other.speedup
            && self.area <= other.area
            && (self.speedup > other.speedup || self.area < other.area)
    }

    fn same_objectives(&self, other: &ParetoPoint) -> bool {
        self.speedup == other.speedup && self.area == other.area
    }
}

/// Speedup of every record over `baseline_latency`. Zero latencies count as
/// one cycle so speedups stay finite.
pub fn points_from_records(
    records: &[ExplorationRecord],
    baseline_latency: u64,
) -> Vec<ParetoPoint> {
    records
        .iter()
        .map(|r| ParetoPoint {
            speedup: baseline_latency as f64 / r.latency.max(1) as f64,
            area: r.area,
            provenance: format!(
                "agent{}/step{}/rank{}",
                r.agent_index, r.step, r.seeded_from
            ),
        })
        .collect()
}

/// Non-dominated subset, ascending by area. Points with identical objectives
/// collapse to the first occurrence.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.area
            .cmp(&q.area)
            .then(q.speedup.partial_cmp(&p.speedup).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut front: Vec<ParetoPoint> = Vec::new();
    for i in order {
        let p = &points[i];
        // Area is non-decreasing along the sweep, so p survives exactly when
        // it beats the best speedup seen at strictly smaller-or-equal area.
        if front.last().is_none_or(|last| p.speedup > last.speedup) {
            front.push(p.clone());
        }
    }
    front
}

/// Quadratic dominance filter with the same contract as [`pareto_front`].
pub fn pareto_oracle(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut out: Vec<ParetoPoint> = Vec::new();
    for p in points {
        if points.iter().any(|q| q.dominates(p)) || out.iter().any(|q| q.same_objectives(p)) {
            continue;
        }
        out.push(p.clone());
    }
    out.sort_by_key(|p| p.area);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two points, got {0}")]
    TooFew(usize),
    #[error("correlation is undefined for a series with zero variance")]
    ZeroVariance,
    #[error("series contains a non-finite value")]
    NonFinite,
}

/// Pearson product-moment correlation coefficient.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFew(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
