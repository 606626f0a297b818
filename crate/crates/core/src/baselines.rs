//! Point-to-point ICP.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};
use crate::matching::MatchSet;
use crate::registration::{
    weighted_procrustes, IcpTrace, RegistrationResult, Timings, WeightedPairs,
};
use crate::sampling::nearest_one;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the RMS cost drops by less than this between iterations.
    pub convergence_tol: f64,
    /// Pairs farther apart than this are dropped from the solve.
    pub max_correspondence_distance: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-6,
            max_correspondence_distance: None,
        }
    }
}

impl IcpConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence_tol must be positive"));
        }
        if let Some(d) = self.max_correspondence_distance {
            if !(d > 0.0) {
                return Err(Error::invalid(
                    "max_correspondence_distance must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// Nearest target point for every transformed source point, gated by
/// `max_distance`. Returns the pairs and the RMS over the kept pairs.
fn associate(
    source: &[Point],
    target: &[Point],
    t: &RigidTransform,
    max_distance: Option<f64>,
) -> Result<(WeightedPairs, f64)> {
    let nearest: Vec<(usize, f64)> = source
        .par_iter()
        .map(|x| nearest_one(target, &t.apply_point(x)))
        .collect();
    let gate = max_distance.map_or(f64::INFINITY, |d| d * d);
    let mut xs = Vec::with_capacity(source.len());
    let mut ys = Vec::with_capacity(source.len());
    let mut sum = 0.0;
    for (x, (j, d2)) in source.iter().zip(nearest) {
        if d2 <= gate {
            xs.push(*x);
            ys.push(target[j]);
            sum += d2;
        }
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPairs(xs.len()));
    }
    let rms = (sum / xs.len() as f64).sqrt();
    Ok((WeightedPairs::uniform(xs, ys)?, rms))
}

/// Alternates nearest-neighbor association and unit-weight Procrustes,
/// starting from the identity.
pub fn icp(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &IcpConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    for cloud in [source, target] {
        if cloud.len() < 3 {
            return Err(Error::TooFewPoints {
                requested: 3,
                available: cloud.len(),
            });
        }
    }
    let started = Instant::now();
    let (src, tgt) = (source.points(), target.points());

    let mut transform = RigidTransform::identity();
    let (mut pairs, mut cost) = associate(src, tgt, &transform, cfg.max_correspondence_distance)?;
    let mut costs = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        transform = weighted_procrustes(&pairs)?;
        iterations += 1;
        let (next_pairs, next_cost) =
            associate(src, tgt, &transform, cfg.max_correspondence_distance)?;
        costs.push(next_cost);
        let improvement = cost - next_cost;
        pairs = next_pairs;
        cost = next_cost;
        if improvement < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        coarse: transform,
        refined: None,
        matches: MatchSet::default(),
        residual: cost,
        pairs,
        refined_residual: None,
        low_confidence: false,
        icp: Some(IcpTrace {
            iterations,
            costs,
            converged,
        }),
        timings: Timings {
            coarse: started.elapsed(),
            refine: None,
        },
    })
}
