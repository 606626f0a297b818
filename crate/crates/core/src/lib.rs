//! Rigid point cloud registration from learned-style feature correspondences.
//!
//! The pipeline normalizes both clouds, downsamples them with farthest point
//! sampling, matches features through a bilateral softmax consensus, keeps
//! the top-K one-to-one pairs and solves a weighted Procrustes problem.
//! An optional refinement stage denoises the matched source points before
//! solving again.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod refinement;
pub mod registration;
pub mod sampling;
pub mod synthetic;

pub use baselines::{icp, IcpConfig};
pub use error::{Error, Result};
pub use evaluation::{run_benchmark, ExperimentConfig, Method, Report};
pub use features::{extract_features, CloudRole, FeatureBackend, FeatureSet, HandcraftedParams};
pub use geometry::{
    apply_transform, rotation_error, translation_error, Axis, NormalizationRecord, Point,
    PointCloud, RigidTransform,
};
pub use matching::{bilateral_consensus, softmax_pool_top_k, ConsensusMatrix, Match, MatchSet};
pub use refinement::DenoiseConfig;
pub use registration::{
    coarse_register, register, weighted_procrustes, PipelineConfig, RegistrationResult,
    WeightedPairs,
};
pub use sampling::{farthest_point_sampling, IndexSubset};
pub use synthetic::Shape;
