//! Closed-form weighted Procrustes and the coarse-to-fine pipeline.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{features_for_subset, interpolate_features, CloudRole, FeatureBackend};
use crate::geometry::{denormalize_transform, normalize_pair, Point, PointCloud, RigidTransform};
use crate::matching::{
    bilateral_consensus, similarity_matrix, softmax_pool_top_k, MatchSet, DEFAULT_TEMPERATURE,
};
use crate::refinement::{refined_register, DenoiseConfig};
use crate::sampling::{farthest_point_sampling, IndexSubset};

/// A cloud whose best consensus entry stays below this multiple of the
/// uniform level is flagged as low confidence.
pub const LOW_CONFIDENCE_FACTOR: f64 = 3.0;

/// Ratio between the smallest and largest principal variances below which a
/// point set counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-12;

/// Corresponding points with non-negative weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedPairs {
    source: Vec<Point>,
    target: Vec<Point>,
    weights: Vec<f64>,
}

impl WeightedPairs {
    pub fn new(source: Vec<Point>, target: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::LengthMismatch {
                expected: source.len(),
                found: target.len(),
            });
        }
        if weights.len() != source.len() {
            return Err(Error::LengthMismatch {
                expected: source.len(),
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!(
                "weight {w} is not a finite non-negative number"
            )));
        }
        if source.len() < 3 {
            return Err(Error::TooFewPairs(source.len()));
        }
        Ok(Self {
            source,
            target,
            weights,
        })
    }

    pub fn uniform(source: Vec<Point>, target: Vec<Point>) -> Result<Self> {
        let n = source.len();
        Self::new(source, target, vec![1.0; n])
    }

    pub fn source(&self) -> &[Point] {
        &self.source
    }

    pub fn target(&self) -> &[Point] {
        &self.target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn with_source(&self, source: Vec<Point>) -> Result<Self> {
        Self::new(source, self.target.clone(), self.weights.clone())
    }

    fn map(&self, fs: impl Fn(&Point) -> Point, ft: impl Fn(&Point) -> Point) -> Self {
        Self {
            source: self.source.iter().map(fs).collect(),
            target: self.target.iter().map(ft).collect(),
            weights: self.weights.clone(),
        }
    }

    /// `Σ wᵢ ‖R xᵢ + t − yᵢ‖²`.
    pub fn cost(&self, t: &RigidTransform) -> f64 {
        self.source
            .iter()
            .zip(&self.target)
            .zip(&self.weights)
            .map(|((x, y), w)| w * (t.apply_point(x) - y).norm_squared())
            .sum()
    }

    /// Weighted RMS of the pair residuals under `t`.
    pub fn residual(&self, t: &RigidTransform) -> f64 {
        let total: f64 = self.weights.iter().sum();
        if total > 0.0 {
            (self.cost(t) / total).sqrt()
        } else {
            0.0
        }
    }
}

fn weighted_centroid(points: &[Point], weights: &[f64], total: f64) -> Vector3<f64> {
    points
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p.coords * *w)
        / total
}

fn check_spread(
    points: &[Point],
    weights: &[f64],
    centroid: &Vector3<f64>,
    which: &'static str,
) -> Result<()> {
    let mut scatter = Matrix3::zeros();
    for (p, w) in points.iter().zip(weights) {
        let d = p.coords - centroid;
        scatter += d * d.transpose() * *w;
    }
    let mut eig: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= COLLINEAR_RATIO * eig[0] {
        return Err(Error::Degenerate(which));
    }
    Ok(())
}

/// Minimizes `Σ wᵢ ‖R xᵢ + t − yᵢ‖²` over proper rotations `R` and translations `t`.
///
/// Centres both sets on their weighted centroids, takes the SVD of the
/// weighted cross-covariance `H = U Σ Vᵀ` and returns `R = V diag(1, 1, d) Uᵀ`
/// with `d = sign(det(V Uᵀ))`, then `t = ȳ − R x̄`.
pub fn weighted_procrustes(pairs: &WeightedPairs) -> Result<RigidTransform> {
    let positive = pairs.weights.iter().filter(|w| **w > 0.0).count();
    let total: f64 = pairs.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    if positive < 3 {
        return Err(Error::TooFewPairs(positive));
    }
    let w: Vec<f64> = pairs.weights.iter().map(|w| w / total).collect();
    let cx = weighted_centroid(&pairs.source, &w, 1.0);
    let cy = weighted_centroid(&pairs.target, &w, 1.0);
    check_spread(&pairs.source, &w, &cx, "source")?;
    check_spread(&pairs.target, &w, &cy, "target")?;

    let mut h = Matrix3::zeros();
    for ((x, y), wi) in pairs.source.iter().zip(&pairs.target).zip(&w) {
        h += (x.coords - cx) * (y.coords - cy).transpose() * *wi;
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(Error::Degenerate("cross-covariance"))?;
    let v = svd
        .v_t
        .ok_or(Error::Degenerate("cross-covariance"))?
        .transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cy - rotation * cx;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Pipeline knobs; defaults follow the reference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Point counts of the sampling chain. The first entry is the input size
    /// the features are computed on; the last is the matched set.
    pub schedule: Vec<usize>,
    pub k: usize,
    /// Softmax temperature of the bilateral consensus.
    pub temperature: f64,
    pub fps_start: usize,
    /// `None` stops after the coarse solve.
    pub refine: Option<DenoiseConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schedule: vec![1024, 512, 256],
            k: 128,
            temperature: DEFAULT_TEMPERATURE,
            fps_start: 0,
            refine: Some(DenoiseConfig::default()),
        }
    }
}

impl PipelineConfig {
    pub fn matched_size(&self) -> usize {
        self.schedule.last().copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() || self.schedule.contains(&0) {
            return Err(Error::invalid("sampling schedule needs positive sizes"));
        }
        if self.k == 0 || self.k > self.matched_size() {
            return Err(Error::invalid(format!(
                "k = {} must lie in 1..={}",
                self.k,
                self.matched_size()
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if let Some(d) = &self.refine {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub coarse: Duration,
    pub refine: Option<Duration>,
}

/// Iteration record of an ICP run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcpTrace {
    pub iterations: usize,
    /// RMS nearest-neighbor distance before the first and after every iteration.
    pub costs: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub coarse: RigidTransform,
    pub refined: Option<RigidTransform>,
    /// Indices refer to the matched (last-stage) subsets.
    pub matches: MatchSet,
    /// Matched coordinates and confidences, in the frame of the transforms.
    pub pairs: WeightedPairs,
    /// Weighted RMS residual of the coarse transform over `pairs`.
    pub residual: f64,
    /// Weighted RMS residual of the refined transform over the denoised pairs.
    pub refined_residual: Option<f64>,
    pub low_confidence: bool,
    pub icp: Option<IcpTrace>,
    pub timings: Timings,
}

impl RegistrationResult {
    /// Refined transform when present, coarse otherwise.
    pub fn best(&self) -> &RigidTransform {
        self.refined.as_ref().unwrap_or(&self.coarse)
    }
}

/// Normalized inputs and sampled subsets of one registration problem.
struct Prepared {
    source_input: PointCloud,
    target_input: PointCloud,
    source_sub: IndexSubset,
    target_sub: IndexSubset,
}

fn sample_chain(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<(IndexSubset, IndexSubset)> {
    let input = farthest_point_sampling(cloud, cfg.schedule[0].min(cloud.len()), cfg.fps_start)?;
    let input_cloud = cloud.select(input.as_slice())?;
    // indices relative to the input subset
    let mut chain = IndexSubset::new((0..input.len()).collect(), input.len())?;
    for &size in &cfg.schedule[1..] {
        let level = input_cloud.select(chain.as_slice())?;
        let next = farthest_point_sampling(&level, size.min(level.len()), 0)?;
        chain = chain.compose(&next);
    }
    Ok((input, chain))
}

/// Coarse registration only; see [`register`] for the full pipeline.
pub fn coarse_register(
    source: &PointCloud,
    target: &PointCloud,
    backend: &FeatureBackend,
    cfg: &PipelineConfig,
) -> Result<RegistrationResult> {
    let cfg = PipelineConfig {
        refine: None,
        ..cfg.clone()
    };
    register(source, target, backend, &cfg)
}

/// Runs the whole pipeline: normalize, sample, describe, match, solve, and
/// (when configured) refine. Transforms map `source` onto `target` in the
/// original units.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    backend: &FeatureBackend,
    cfg: &PipelineConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let need = cfg.matched_size();
    for cloud in [source, target] {
        if cloud.len() < need {
            return Err(Error::TooFewPoints {
                requested: need,
                available: cloud.len(),
            });
        }
    }
    let started = Instant::now();
    let (ns, rec_s, nt, rec_t) = normalize_pair(source, target)?;

    let (src_input_idx, src_sub) = sample_chain(&ns, cfg)?;
    let (tgt_input_idx, tgt_sub) = sample_chain(&nt, cfg)?;
    let src_feats = features_for_subset(backend, &ns, &src_input_idx, CloudRole::Source)?;
    let tgt_feats = features_for_subset(backend, &nt, &tgt_input_idx, CloudRole::Target)?;
    let prep = Prepared {
        source_input: ns.select(src_input_idx.as_slice())?,
        target_input: nt.select(tgt_input_idx.as_slice())?,
        source_sub: src_sub,
        target_sub: tgt_sub,
    };
    let fx = src_feats.select(prep.source_sub.as_slice())?;
    let fy = tgt_feats.select(prep.target_sub.as_slice())?;

    let s = similarity_matrix(&fx, &fy)?;
    let c = bilateral_consensus(&s, cfg.temperature)?;
    let matches = softmax_pool_top_k(&c, cfg.k)?;

    let xs = prep.source_input.select(prep.source_sub.as_slice())?;
    let ys = prep.target_input.select(prep.target_sub.as_slice())?;
    let pairs = WeightedPairs::new(
        matches
            .pairs
            .iter()
            .map(|m| xs.points()[m.source])
            .collect(),
        matches
            .pairs
            .iter()
            .map(|m| ys.points()[m.target])
            .collect(),
        matches.confidences(),
    )?;
    let coarse = weighted_procrustes(&pairs)?;
    let low_confidence = matches.max_confidence() < LOW_CONFIDENCE_FACTOR * c.uniform_level();

    let mut result = RegistrationResult {
        residual: pairs.residual(&coarse),
        coarse,
        refined: None,
        matches,
        pairs,
        refined_residual: None,
        low_confidence,
        icp: None,
        timings: Timings {
            coarse: started.elapsed(),
            refine: None,
        },
    };

    if let Some(dcfg) = &cfg.refine {
        let refine_started = Instant::now();
        let dense_feats = interpolate_features(&xs, &fx, &prep.source_input)?;
        result = refined_register(&result, &prep.source_input, &dense_feats, &fy, dcfg)?;
        result.timings.refine = Some(refine_started.elapsed());
    }

    Ok(denormalize_result(result, &rec_s, &rec_t))
}

fn denormalize_result(
    r: RegistrationResult,
    src: &crate::geometry::NormalizationRecord,
    tgt: &crate::geometry::NormalizationRecord,
) -> RegistrationResult {
    let scale = src.scale;
    RegistrationResult {
        coarse: denormalize_transform(&r.coarse, src, tgt),
        refined: r.refined.map(|t| denormalize_transform(&t, src, tgt)),
        pairs: r
            .pairs
            .map(|p| src.denormalize_point(p), |p| tgt.denormalize_point(p)),
        residual: r.residual / scale,
        refined_residual: r.refined_residual.map(|v| v / scale),
        ..r
    }
}
