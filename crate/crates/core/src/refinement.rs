//! Target-guided denoising of matched source points.
//!
//! Each matched source point is replaced by a convex combination of its
//! spatial neighbors in the dense source cloud. Neighbor weights come from a
//! softmax over `-‖f_neighbor - f_target‖² / τ`, so neighbors whose features
//! resemble the matched target point pull hardest.

use nalgebra::{DMatrix, RowDVector, Vector3};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::geometry::{Point, PointCloud};
use crate::registration::{weighted_procrustes, RegistrationResult};
use crate::sampling::nearest_in;

/// Which frame the dense-cloud neighbor lookup runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborLookup {
    /// Query around the coarse-aligned matched point.
    #[default]
    AfterCoarse,
    /// Query in the raw source frame.
    BeforeCoarse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    /// Neighbors per matched point.
    pub p: usize,
    pub temperature: f64,
    pub lookup: NeighborLookup,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            p: 15,
            temperature: 0.1,
            lookup: NeighborLookup::AfterCoarse,
        }
    }
}

impl DenoiseConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("neighbor count must be at least 1"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("denoise temperature must be positive"));
        }
        Ok(())
    }
}

/// Neighbor positions, their features (one row each) and the feature of the
/// matched target point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodBundle {
    neighbors: Vec<Point>,
    features: DMatrix<f64>,
    target: RowDVector<f64>,
}

impl NeighborhoodBundle {
    pub fn new(
        neighbors: Vec<Point>,
        features: DMatrix<f64>,
        target: RowDVector<f64>,
    ) -> Result<Self> {
        if neighbors.is_empty() {
            return Err(Error::invalid("bundle needs at least one neighbor"));
        }
        if features.nrows() != neighbors.len() {
            return Err(Error::LengthMismatch {
                expected: neighbors.len(),
                found: features.nrows(),
            });
        }
        if features.ncols() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: features.ncols(),
                found: target.len(),
            });
        }
        Ok(Self {
            neighbors,
            features,
            target,
        })
    }

    pub fn neighbors(&self) -> &[Point] {
        &self.neighbors
    }

    /// `‖Q_j − f‖²` for every neighbor row `j`; the target feature is
    /// broadcast across all rows.
    pub fn feature_distances(&self) -> Vec<f64> {
        self.features
            .row_iter()
            .map(|row| (row - &self.target).norm_squared())
            .collect()
    }
}

/// Softmax weights `Θ` over the neighborhood.
pub fn denoise_weights(bundle: &NeighborhoodBundle, cfg: &DenoiseConfig) -> Vec<f64> {
    let scores: Vec<f64> = bundle
        .feature_distances()
        .into_iter()
        .map(|d| -d / cfg.temperature)
        .collect();
    softmax(&scores)
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `x* = Σ θⱼ x″ⱼ`.
pub fn target_guided_denoise(bundle: &NeighborhoodBundle, cfg: &DenoiseConfig) -> Point {
    let theta = denoise_weights(bundle, cfg);
    let sum = bundle
        .neighbors
        .iter()
        .zip(&theta)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p.coords * *w);
    Point::from(sum)
}

/// Denoises the matched source points of `coarse` against the dense source
/// cloud and re-solves the weighted Procrustes problem with the original
/// confidences.
///
/// `source_dense` and `source_dense_feats` are index-aligned and live in the
/// same frame as `coarse.pairs`; `target_sub_feats` is indexed by the target
/// side of `coarse.matches`.
pub fn refined_register(
    coarse: &RegistrationResult,
    source_dense: &PointCloud,
    source_dense_feats: &FeatureSet,
    target_sub_feats: &FeatureSet,
    cfg: &DenoiseConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if source_dense_feats.len() != source_dense.len() {
        return Err(Error::LengthMismatch {
            expected: source_dense.len(),
            found: source_dense_feats.len(),
        });
    }
    if cfg.p > source_dense.len() {
        return Err(Error::TooFewPoints {
            requested: cfg.p,
            available: source_dense.len(),
        });
    }
    if coarse.matches.len() != coarse.pairs.len() {
        return Err(Error::LengthMismatch {
            expected: coarse.pairs.len(),
            found: coarse.matches.len(),
        });
    }

    let lookup_cloud: Vec<Point> = match cfg.lookup {
        NeighborLookup::AfterCoarse => source_dense
            .points()
            .iter()
            .map(|p| coarse.coarse.apply_point(p))
            .collect(),
        NeighborLookup::BeforeCoarse => source_dense.points().to_vec(),
    };

    let mut denoised = Vec::with_capacity(coarse.pairs.len());
    for (m, x) in coarse.matches.pairs.iter().zip(coarse.pairs.source()) {
        let query = match cfg.lookup {
            NeighborLookup::AfterCoarse => coarse.coarse.apply_point(x),
            NeighborLookup::BeforeCoarse => *x,
        };
        let nn = nearest_in(&lookup_cloud, &query, cfg.p)?;
        if m.target >= target_sub_feats.len() {
            return Err(Error::IndexOutOfRange {
                index: m.target,
                len: target_sub_feats.len(),
            });
        }
        let bundle = NeighborhoodBundle::new(
            nn.iter().map(|&j| source_dense.points()[j]).collect(),
            source_dense_feats.matrix().select_rows(&nn),
            target_sub_feats.row(m.target),
        )?;
        denoised.push(target_guided_denoise(&bundle, cfg));
    }

    let refined_pairs = coarse.pairs.with_source(denoised)?;
    let refined = weighted_procrustes(&refined_pairs)?;
    Ok(RegistrationResult {
        refined: Some(refined),
        refined_residual: Some(refined_pairs.residual(&refined)),
        ..coarse.clone()
    })
}
