//! Loss-landscape probes: straight-line interpolation between two
//! checkpoints and pairwise distances.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{l2_distance, Checkpoint};
use crate::error::{bail, Result};
use crate::fusion::{fuse, FusionWeights};
use crate::model::Mlp;
use crate::tasks::Example;

/// Successive losses may rise by at most this much and still count as
/// non-increasing.
pub const MONOTONE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub endpoints: (String, String),
}

/// Evaluates `(1 - alpha) a + alpha b` on `data` for `num_points` evenly
/// spaced alphas from 0 to 1.
///
/// Each point is the two-model fusion with weights `[1 - alpha, alpha]`, so
/// the endpoints are exactly `a` and `b` and the midpoint is exactly the
/// uniform fusion.
pub fn interpolate(
    a: &Checkpoint,
    b: &Checkpoint,
    data: &[Example],
    num_points: usize,
    endpoints: (String, String),
) -> Result<InterpolationCurve> {
    if num_points < 2 {
        bail!(Config, "an interpolation curve needs at least 2 points");
    }
    a.check_aligned(b)?;
    let last = (num_points - 1) as f64;
    let alphas: Vec<f64> = (0..num_points).map(|i| i as f64 / last).collect();
    let mut losses = Vec::with_capacity(num_points);
    let mut accuracies = Vec::with_capacity(num_points);
    for &alpha in &alphas {
        let point = fuse(
            &[a, b],
            &FusionWeights::Explicit(alloc::vec![1.0 - alpha, alpha]),
        )?;
        let model = Mlp::from_checkpoint(&point)?;
        losses.push(model.mean_loss(data)?);
        accuracies.push(model.accuracy(data)?);
    }
    Ok(InterpolationCurve {
        alphas,
        losses,
        accuracies,
        endpoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub monotone_decreasing: bool,
    /// Largest rise between consecutive points; 0 when there is none.
    pub max_bump: f64,
}

pub fn monotonicity_report(losses: &[f64]) -> MonotonicityReport {
    let max_bump = losses.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let monotone_decreasing = losses.windows(2).all(|w| w[1] <= w[0] + MONOTONE_TOLERANCE);
    MonotonicityReport {
        monotone_decreasing,
        max_bump,
    }
}

/// Symmetric matrix of pairwise Euclidean distances.
pub fn distance_matrix(models: &[&Checkpoint]) -> Result<Vec<Vec<f64>>> {
    let n = models.len();
    let mut out = alloc::vec![alloc::vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = l2_distance(models[i], models[j])?;
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}
