//! Combining per-member perturbations into one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AdaptiveError;
use crate::tensor::Tensor;

/// Grid used by MVoteP to bucket continuous deltas.
pub const MVOTE_STEP: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    MaxP,
    AvgP,
    MVoteP,
    WSumP,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [Aggregation::MaxP, Aggregation::AvgP, Aggregation::MVoteP, Aggregation::WSumP];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::MaxP => "maxp",
            Aggregation::AvgP => "avgp",
            Aggregation::MVoteP => "mvotep",
            Aggregation::WSumP => "wsump",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown aggregation '{s}'"))
    }
}

/// `clamp(N − i, 0.8·N, N − 2)` for 1-based positions `i = 1..=N`, with the
/// upper bound applied last so it wins when the bounds cross.
pub fn wsump_positions(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (1..=n).map(|i| (nf - i as f64).max(0.8 * nf).min(nf - 2.0)).collect()
}

/// Softmax of [`wsump_positions`].
pub fn wsump_weights(n: usize) -> Vec<f64> {
    let pos = wsump_positions(n);
    let m = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = pos.iter().map(|p| (p - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Index of the 0.05-grid bucket nearest to `d`.
pub fn mvote_quantum(d: f32) -> i32 {
    (d / MVOTE_STEP).round() as i32
}

/// Merges `deltas`, listed in ranking order; `positions` holds each delta's
/// 1-based place in a ranking of length `ranking_len` (used by WSumP, whose
/// weights are renormalized over the positions present).
pub fn aggregate(
    deltas: &[Tensor],
    strategy: Aggregation,
    positions: &[usize],
    ranking_len: usize,
) -> Result<Tensor, AdaptiveError> {
    let first = deltas.first().ok_or(AdaptiveError::NothingToAggregate)?;
    for d in deltas {
        d.same_shape(first)?;
    }
    let n = first.len();
    let mut out = vec![0.0f32; n];
    match strategy {
        Aggregation::MaxP => {
            for (p, o) in out.iter_mut().enumerate() {
                let mut best = deltas[0].data()[p];
                for d in &deltas[1..] {
                    let v = d.data()[p];
                    if v.abs() > best.abs() {
                        best = v;
                    }
                }
                *o = best;
            }
        }
        Aggregation::AvgP => {
            let k = deltas.len() as f64;
            for (p, o) in out.iter_mut().enumerate() {
                *o = (deltas.iter().map(|d| f64::from(d.data()[p])).sum::<f64>() / k) as f32;
            }
        }
        Aggregation::MVoteP => {
            let mut qs = Vec::with_capacity(deltas.len());
            for (p, o) in out.iter_mut().enumerate() {
                qs.clear();
                qs.extend(deltas.iter().map(|d| mvote_quantum(d.data()[p])));
                qs.sort_unstable();
                let mut best = (0usize, 0i32);
                for run in qs.chunk_by(|a, b| a == b) {
                    let (count, q) = (run.len(), run[0]);
                    let better = count > best.0 || (count == best.0 && (q.abs(), q) < (best.1.abs(), best.1));
                    if better {
                        best = (count, q);
                    }
                }
                *o = best.1 as f32 * MVOTE_STEP;
            }
        }
        Aggregation::WSumP => {
            if positions.len() != deltas.len() || positions.iter().any(|&i| i == 0 || i > ranking_len) {
                return Err(AdaptiveError::RankingMismatch);
            }
            let full = wsump_weights(ranking_len);
            let w: Vec<f64> = positions.iter().map(|&i| full[i - 1]).collect();
            let total: f64 = w.iter().sum();
            for (p, o) in out.iter_mut().enumerate() {
                let s: f64 = deltas.iter().zip(&w).map(|(d, &wi)| wi * f64::from(d.data()[p])).sum();
                *o = (s / total) as f32;
            }
        }
    }
    Ok(Tensor::new(first.dims().to_vec(), out)?)
}
