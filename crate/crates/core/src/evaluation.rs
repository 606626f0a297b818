//! Loss diagnostics, the large-rotation benchmark and its reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{icp, IcpConfig};
use crate::error::{Error, Result};
use crate::features::FeatureBackend;
use crate::geometry::{
    apply_transform, random_rigid_transform, rotation_error, translation_error, AngleMode, Axis,
    PointCloud, RigidTransform,
};
use crate::matching::SHARP_TEMPERATURE;
use crate::refinement::DenoiseConfig;
use crate::registration::{register, PipelineConfig};
use crate::sampling::{farthest_point_sampling, nearest_one, random_subset};
use crate::synthetic::{add_noise, generate, Shape};

/// Weight of the coarse term in [`combined_loss`].
pub const DEFAULT_LAMBDA: f64 = 0.6;

/// `‖R_gtᵀ R_pred − I‖_F`.
pub fn loss_rot(r_gt: &Matrix3<f64>, r_pred: &Matrix3<f64>) -> f64 {
    (r_gt.transpose() * r_pred - Matrix3::identity()).norm()
}

/// `‖t_gt − t_pred‖₂`.
pub fn loss_trans(t_gt: &Vector3<f64>, t_pred: &Vector3<f64>) -> f64 {
    (t_gt - t_pred).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TransformLoss {
    pub rot: f64,
    pub trans: f64,
}

impl TransformLoss {
    pub fn between(gt: &RigidTransform, pred: &RigidTransform) -> Self {
        Self {
            rot: loss_rot(gt.rotation(), pred.rotation()),
            trans: loss_trans(gt.translation(), pred.translation()),
        }
    }

    pub fn total(&self) -> f64 {
        self.rot + self.trans
    }
}

/// `λ·(L_rot + L_trans)_coarse + (1 − λ)·(L_rot + L_trans)_refined`.
pub fn combined_loss(coarse: TransformLoss, refined: TransformLoss, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(lambda * coarse.total() + (1.0 - lambda) * refined.total())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxesMode {
    /// Rotation about z only.
    ZOnly,
    /// The same angle about x, then y, then z.
    Xyz,
}

impl AxesMode {
    fn axes(self) -> &'static [Axis] {
        match self {
            AxesMode::ZOnly => &[Axis::Z],
            AxesMode::Xyz => &[Axis::X, Axis::Y, Axis::Z],
        }
    }
}

/// How source and target are cut from the base cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// Source is a (noisy, rotated) copy of the target subset, so exact
    /// correspondences exist.
    ExactCopy,
    /// Source and target are independent random subsets; correspondence ids
    /// pair every source point with its nearest target point.
    DisjointSubsets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Coarse,
    Refined,
    Icp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Coarse => "coarse",
            Method::Refined => "refined",
            Method::Icp => "icp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Method::Coarse),
            "refined" => Ok(Method::Refined),
            "icp" => Ok(Method::Icp),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Signed rotation levels in degrees.
    pub levels: Vec<f64>,
    pub axes: AxesMode,
    pub trials: usize,
    /// Gaussian noise on the source, in base-cloud units.
    pub noise_sigma: f64,
    pub shape: Shape,
    pub base_points: usize,
    pub initial_sample: usize,
    pub input_size: usize,
    pub pairing: PairingMode,
    pub k: usize,
    /// When non-empty, one report block per value replaces `k`.
    pub k_sweep: Vec<usize>,
    pub matched_size: usize,
    pub temperature: f64,
    pub denoise_p: usize,
    pub denoise_temperature: f64,
    pub icp_max_iterations: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let denoise = DenoiseConfig::default();
        Self {
            levels: vec![-180.0, -135.0, -90.0, -45.0, 45.0, 90.0, 135.0, 180.0],
            axes: AxesMode::ZOnly,
            trials: 5,
            noise_sigma: 0.01,
            shape: Shape::Ell,
            base_points: 8192,
            initial_sample: 7168,
            input_size: 1024,
            pairing: PairingMode::DisjointSubsets,
            k: 128,
            k_sweep: Vec::new(),
            matched_size: 256,
            temperature: SHARP_TEMPERATURE,
            denoise_p: denoise.p,
            denoise_temperature: denoise.temperature,
            icp_max_iterations: IcpConfig::default().max_iterations,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(-180.0..=180.0).contains(l)) {
            return Err(Error::invalid("rotation levels must lie in [-180, 180]"));
        }
        if self.initial_sample > self.base_points {
            return Err(Error::invalid("initial sample exceeds base cloud size"));
        }
        if self.input_size > self.initial_sample || self.matched_size > self.input_size {
            return Err(Error::invalid("sampling sizes must shrink monotonically"));
        }
        if self.ks().iter().any(|&k| k == 0 || k > self.matched_size) {
            return Err(Error::invalid("every k must lie in 1..=matched_size"));
        }
        Ok(())
    }

    pub fn ks(&self) -> Vec<usize> {
        if self.k_sweep.is_empty() {
            vec![self.k]
        } else {
            self.k_sweep.clone()
        }
    }

    pub fn pipeline(&self, k: usize, refine: bool) -> PipelineConfig {
        let mut schedule = vec![self.input_size];
        let mut size = self.input_size / 2;
        while size > self.matched_size {
            schedule.push(size);
            size /= 2;
        }
        if self.matched_size < self.input_size {
            schedule.push(self.matched_size);
        }
        PipelineConfig {
            schedule,
            k,
            temperature: self.temperature,
            fps_start: 0,
            refine: refine.then(|| DenoiseConfig {
                p: self.denoise_p,
                temperature: self.denoise_temperature,
                ..DenoiseConfig::default()
            }),
        }
    }
}

/// Source/target pair of one benchmark trial plus its ground truth.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps `source` onto `target`.
    pub ground_truth: RigidTransform,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Builds the data of one trial. `trial_seed` is the master seed xor the
/// global trial index.
pub fn make_trial(cfg: &ExperimentConfig, level: f64, trial_seed: u64) -> Result<TrialData> {
    let sub = |k: u64| splitmix64(trial_seed.wrapping_mul(4).wrapping_add(k));
    let base = generate(cfg.shape, cfg.base_points, sub(0))?;
    let target_idx = random_subset(&base, cfg.initial_sample, sub(1))?;
    let target_full = base
        .select(target_idx.as_slice())?
        .with_index_correspondence();
    let target = target_full.select(&farthest_point_sampling(&target_full, cfg.input_size, 0)?)?;
    let source = match cfg.pairing {
        PairingMode::ExactCopy => add_noise(&target, cfg.noise_sigma, sub(3))?,
        PairingMode::DisjointSubsets => {
            let idx = random_subset(&base, cfg.initial_sample, sub(2))?;
            let cloud = add_noise(&base.select(idx.as_slice())?, cfg.noise_sigma, sub(3))?;
            let cloud = cloud.select(&farthest_point_sampling(&cloud, cfg.input_size, 0)?)?;
            let ids = cloud
                .points()
                .iter()
                .map(|p| {
                    let (j, _) = nearest_one(target.points(), p);
                    target.correspondence().map_or(j, |ids| ids[j])
                })
                .collect();
            cloud.with_correspondence(ids)?
        }
    };

    let rotation = random_rigid_transform(level, cfg.axes.axes(), 0, AngleMode::Exact)?;
    Ok(TrialData {
        source: apply_transform(&rotation, &source),
        target,
        ground_truth: rotation.inverse(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodErrors {
    /// Degrees.
    pub re: f64,
    pub te: f64,
}

impl MethodErrors {
    pub fn between(gt: &RigidTransform, pred: &RigidTransform) -> Self {
        Self {
            re: rotation_error(gt.rotation(), pred.rotation()),
            te: translation_error(gt.translation(), pred.translation()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub level: f64,
    pub k: usize,
    /// `None` marks a failed run.
    pub errors: BTreeMap<Method, Option<MethodErrors>>,
    /// Coarse residual of the pipeline, when it ran.
    pub residual: Option<f64>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single value.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        };
        Some(Self {
            mean,
            std,
            median,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Aggregate over one (k, level, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub k: usize,
    pub level: f64,
    pub method: Method,
    pub re: Option<Summary>,
    pub te: Option<Summary>,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub methods: Vec<Method>,
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

/// Runs every (level, trial) for every k in the sweep.
///
/// Trials run in parallel; each derives its data from `seed ^ trial_index`,
/// so results do not depend on scheduling.
pub fn run_benchmark(
    cfg: &ExperimentConfig,
    backend: &FeatureBackend,
    methods: &[Method],
) -> Result<Report> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid("no methods selected"));
    }
    let mut methods = methods.to_vec();
    methods.dedup();
    let ks = cfg.ks();
    let wants_pipeline = methods
        .iter()
        .any(|m| matches!(m, Method::Coarse | Method::Refined));
    let refine = methods.contains(&Method::Refined);
    let icp_cfg = IcpConfig {
        max_iterations: cfg.icp_max_iterations,
        ..IcpConfig::default()
    };

    let jobs: Vec<(usize, f64)> = cfg
        .levels
        .iter()
        .flat_map(|&level| std::iter::repeat_n(level, cfg.trials))
        .enumerate()
        .collect();

    let per_trial: Vec<Vec<TrialResult>> = jobs
        .par_iter()
        .map(|&(index, level)| {
            let started = Instant::now();
            let data = make_trial(cfg, level, cfg.seed ^ index as u64);
            let icp_errors = match (&data, methods.contains(&Method::Icp)) {
                (Ok(d), true) => Some(
                    icp(&d.source, &d.target, &icp_cfg)
                        .ok()
                        .map(|r| MethodErrors::between(&d.ground_truth, &r.coarse)),
                ),
                (Err(_), true) => Some(None),
                _ => None,
            };
            let icp_time = started.elapsed();
            ks.iter()
                .map(|&k| {
                    let started = Instant::now();
                    let mut errors = BTreeMap::new();
                    let mut residual = None;
                    if wants_pipeline {
                        let outcome = data.as_ref().ok().and_then(|d| {
                            register(&d.source, &d.target, backend, &cfg.pipeline(k, refine))
                                .ok()
                                .map(|r| (d, r))
                        });
                        let (coarse, refined) = match &outcome {
                            Some((d, r)) => {
                                residual = Some(r.residual);
                                (
                                    Some(MethodErrors::between(&d.ground_truth, &r.coarse)),
                                    r.refined
                                        .as_ref()
                                        .map(|t| MethodErrors::between(&d.ground_truth, t)),
                                )
                            }
                            None => (None, None),
                        };
                        if methods.contains(&Method::Coarse) {
                            errors.insert(Method::Coarse, coarse);
                        }
                        if refine {
                            errors.insert(Method::Refined, refined);
                        }
                    }
                    if let Some(e) = icp_errors {
                        errors.insert(Method::Icp, e);
                    }
                    TrialResult {
                        level,
                        k,
                        errors,
                        residual,
                        wall_time: started.elapsed() + icp_time,
                    }
                })
                .collect()
        })
        .collect();

    let trials: Vec<TrialResult> = per_trial.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for &k in &ks {
        for &level in &cfg.levels {
            for &method in &methods {
                let cell: Vec<Option<MethodErrors>> = trials
                    .iter()
                    .filter(|t| t.k == k && t.level == level)
                    .map(|t| t.errors.get(&method).copied().flatten())
                    .collect();
                let ok: Vec<MethodErrors> = cell.iter().flatten().copied().collect();
                rows.push(ReportRow {
                    k,
                    level,
                    method,
                    re: Summary::of(&ok.iter().map(|e| e.re).collect::<Vec<_>>()),
                    te: Summary::of(&ok.iter().map(|e| e.te).collect::<Vec<_>>()),
                    n_fail: cell.len() - ok.len(),
                });
            }
        }
    }
    Ok(Report {
        config: cfg.clone(),
        methods,
        rows,
        trials,
    })
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:?}"),
        None => "nan".into(),
    }
}

impl Report {
    pub fn rows_for(&self, k: usize, method: Method) -> impl Iterator<Item = &ReportRow> {
        self.rows
            .iter()
            .filter(move |r| r.k == k && r.method == method)
    }

    /// Mean and sample std of the per-level mean RE.
    pub fn level_profile(&self, k: usize, method: Method) -> Option<Summary> {
        let means: Vec<f64> = self
            .rows_for(k, method)
            .filter_map(|r| r.re.as_ref().map(|s| s.mean))
            .collect();
        Summary::of(&means)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "level",
            "method",
            "mean_RE",
            "std_RE",
            "median_RE",
            "mean_TE",
            "std_TE",
            "median_TE",
            "n_fail",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                format!("{:?}", r.level),
                r.method.name().to_string(),
                num(r.re.as_ref().map(|s| s.mean)),
                num(r.re.as_ref().map(|s| s.std)),
                num(r.re.as_ref().map(|s| s.median)),
                num(r.te.as_ref().map(|s| s.mean)),
                num(r.te.as_ref().map(|s| s.std)),
                num(r.te.as_ref().map(|s| s.median)),
                r.n_fail.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One line per k: mean RE per level, then mean ± std across levels;
    /// the same for TE.
    pub fn k_sweep_table(&self, method: Method) -> String {
        let mut out = String::new();
        let ks = self.config.ks();
        for (metric, pick) in [("RE", 0), ("TE", 1)] {
            write!(out, "{metric:<8}").unwrap();
            for l in &self.config.levels {
                write!(out, "{:>11}", format!("{l}°")).unwrap();
            }
            writeln!(out, "{:>22}", "mean±std").unwrap();
            for &k in &ks {
                write!(out, "{:<8}", format!("K={k}")).unwrap();
                let mut means = Vec::new();
                for r in self.rows_for(k, method) {
                    let s = if pick == 0 { &r.re } else { &r.te };
                    match s {
                        Some(s) => {
                            means.push(s.mean);
                            write!(out, "{:>11.3e}", s.mean).unwrap();
                        }
                        None => write!(out, "{:>11}", "fail").unwrap(),
                    }
                }
                match Summary::of(&means) {
                    Some(s) => {
                        writeln!(out, "{:>22}", format!("{:.3e}±{:.3e}", s.mean, s.std)).unwrap()
                    }
                    None => writeln!(out).unwrap(),
                }
            }
        }
        out
    }
}
