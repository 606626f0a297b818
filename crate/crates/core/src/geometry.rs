//! Point clouds, rigid transforms, box normalization and the RE/TE metrics.
//!
//! Angles cross the public API in degrees; everything internal is radians.

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;

/// Tolerance for the orthonormality and determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Half-width of the box clouds are normalized into.
pub const BOX_HALF_EXTENT: f64 = 2.0;

/// An ordered set of 3D points.
///
/// `correspondence` optionally tags every point with a ground-truth
/// correspondence id. Only synthetic data carries it; the oracle feature
/// backend needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    pub label: Option<String>,
    correspondence: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            points,
            label: None,
            correspondence: None,
        })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            coords
                .iter()
                .map(|c| Point::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_correspondence(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                found: ids.len(),
            });
        }
        self.correspondence = Some(ids);
        Ok(self)
    }

    /// Tags point `i` with correspondence id `i`.
    pub fn with_index_correspondence(self) -> Self {
        let ids = (0..self.len()).collect();
        Self {
            correspondence: Some(ids),
            ..self
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn correspondence(&self) -> Option<&[usize]> {
        self.correspondence.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point::from(sum / self.points.len() as f64)
    }

    /// Returns the sub-cloud at `indices`, carrying labels and correspondence ids along.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&index) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        if indices.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            label: self.label.clone(),
            correspondence: self
                .correspondence
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect()),
        })
    }

    /// Applies `f` to every point, keeping order and metadata.
    pub fn map_points(&self, f: impl Fn(&Point) -> Point) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            label: self.label.clone(),
            correspondence: self.correspondence.clone(),
        }
    }
}

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRecord", into = "TransformRecord")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Serialized form: row-major rotation and a translation triple.
#[derive(Serialize, Deserialize)]
struct TransformRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<TransformRecord> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRecord) -> Result<Self> {
        RigidTransform::new(
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from_column_slice(&r.translation),
        )
    }
}

impl From<RigidTransform> for TransformRecord {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "not a proper rotation (|RᵀR - I| = {ortho:.3e}, det = {det:.12})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a matrix the caller guarantees is a rotation
    /// (e.g. the output of an SVD solve).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!((rotation.determinant() - 1.0).abs() < 1e-6);
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Result<Self> {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(self, translation: Vector3<f64>) -> Self {
        Self {
            translation,
            ..self
        }
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    cloud.map_points(|p| t.apply_point(p))
}

/// Rotation error in degrees, `arccos((tr(R_gtᵀ R_pred) - 1) / 2)`, in `[0, 180]`.
///
/// Evaluated as `atan2(sin, cos)` of the relative rotation angle: same value
/// as the arccos form, without its loss of precision near 0°.
pub fn rotation_error(r_gt: &Matrix3<f64>, r_pred: &Matrix3<f64>) -> f64 {
    let rel = r_gt.transpose() * r_pred;
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = (axis.norm() / 2.0).min(1.0);
    sin.atan2(cos).to_degrees()
}

pub fn translation_error(t_gt: &Vector3<f64>, t_pred: &Vector3<f64>) -> f64 {
    (t_pred - t_gt).norm()
}

/// Uniform scaling into `[-2, 2]³` around the centroid:
/// `normalized = (p - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub scale: f64,
    pub offset: Vector3<f64>,
}

impl NormalizationRecord {
    pub fn normalize_point(&self, p: &Point) -> Point {
        Point::from((p.coords - self.offset) * self.scale)
    }

    pub fn denormalize_point(&self, p: &Point) -> Point {
        Point::from(p.coords / self.scale + self.offset)
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.normalize_point(p))
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.denormalize_point(p))
    }
}

fn max_half_extent(cloud: &PointCloud, centroid: &Point) -> f64 {
    cloud
        .points()
        .iter()
        .flat_map(|p| (p - centroid).iter().map(|c| c.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

pub fn normalize_to_box(cloud: &PointCloud) -> Result<(PointCloud, NormalizationRecord)> {
    let centroid = cloud.centroid();
    let extent = max_half_extent(cloud, &centroid);
    if !(extent > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let record = NormalizationRecord {
        scale: BOX_HALF_EXTENT / extent,
        offset: centroid.coords,
    };
    Ok((record.apply(cloud), record))
}

/// Normalizes two clouds with a shared scale (each centred on its own
/// centroid), so a rigid motion between the normalized clouds is still rigid
/// between the originals.
pub fn normalize_pair(
    source: &PointCloud,
    target: &PointCloud,
) -> Result<(
    PointCloud,
    NormalizationRecord,
    PointCloud,
    NormalizationRecord,
)> {
    let cs = source.centroid();
    let ct = target.centroid();
    let extent = max_half_extent(source, &cs).max(max_half_extent(target, &ct));
    if !(extent > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let scale = BOX_HALF_EXTENT / extent;
    let rs = NormalizationRecord {
        scale,
        offset: cs.coords,
    };
    let rt = NormalizationRecord {
        scale,
        offset: ct.coords,
    };
    Ok((rs.apply(source), rs, rt.apply(target), rt))
}

/// Maps a transform estimated between normalized clouds back to the original
/// frames. Both records must share one scale.
pub fn denormalize_transform(
    t: &RigidTransform,
    source: &NormalizationRecord,
    target: &NormalizationRecord,
) -> RigidTransform {
    debug_assert!((source.scale - target.scale).abs() <= 1e-12 * source.scale);
    let r = t.rotation;
    RigidTransform {
        rotation: r,
        translation: target.offset - r * source.offset + t.translation / source.scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Unit<Vector3<f64>> {
        match self {
            Axis::X => Vector3::x_axis(),
            Axis::Y => Vector3::y_axis(),
            Axis::Z => Vector3::z_axis(),
        }
    }
}

pub fn axis_rotation(axis: Axis, angle_deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&axis.unit(), angle_deg.to_radians()).into_inner()
}

/// How the per-axis angle of [`random_rigid_transform`] is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleMode {
    /// Each axis angle drawn uniformly from `[-angle, angle]`.
    #[default]
    Uniform,
    /// Each axis rotated by exactly `angle` (signed).
    Exact,
}

/// Composes per-axis rotations, always in x → y → z order, with zero translation.
pub fn random_rigid_transform(
    angle_deg: f64,
    axes: &[Axis],
    seed: u64,
    mode: AngleMode,
) -> Result<RigidTransform> {
    if axes.is_empty() {
        return Err(Error::invalid("axis set is empty"));
    }
    let valid = match mode {
        AngleMode::Uniform => (0.0..=180.0).contains(&angle_deg),
        AngleMode::Exact => (-180.0..=180.0).contains(&angle_deg),
    };
    if !valid {
        return Err(Error::invalid(format!("angle {angle_deg} out of range")));
    }
    let mut ordered = axes.to_vec();
    ordered.sort();
    ordered.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = Matrix3::identity();
    for axis in ordered {
        let angle = match mode {
            AngleMode::Exact => angle_deg,
            AngleMode::Uniform if angle_deg == 0.0 => 0.0,
            AngleMode::Uniform => rng.random_range(-angle_deg..=angle_deg),
        };
        rotation = axis_rotation(axis, angle) * rotation;
    }
    Ok(RigidTransform {
        rotation,
        translation: Vector3::zeros(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-1.0..5.0),
                        rng.random_range(-2.0..0.5),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let r = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).into_inner();
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        RigidTransform::new(r, t).unwrap()
    }

    #[test]
    fn cloud_rejects_empty_and_non_finite() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyCloud)));
        assert!(matches!(
            PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0]]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn identity_transform_is_noop() {
        let c = random_cloud(20, 1);
        assert_eq!(apply_transform(&RigidTransform::identity(), &c), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_rotation(axis_rotation(Axis::Z, 90.0)).unwrap();
        let p = t.apply_point(&Point::new(1.0, 0.0, 0.0));
        assert!((p - Point::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..10 {
            let c = random_cloud(30, seed);
            let t1 = random_transform(&mut rng);
            let t2 = random_transform(&mut rng);
            let seq = apply_transform(&t2, &apply_transform(&t1, &c));
            let composed = apply_transform(&t2.compose(&t1), &c);
            // direct matrix algebra: R2 (R1 p + t1) + t2
            for ((a, b), p) in seq.points().iter().zip(composed.points()).zip(c.points()) {
                let direct = t2.rotation() * (t1.rotation() * p.coords + t1.translation())
                    + t2.translation();
                assert!((a.coords - direct).norm() < 1e-12);
                assert!((b.coords - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_undoes_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform(&mut rng);
        let c = random_cloud(10, 3);
        let back = apply_transform(&t.inverse(), &apply_transform(&t, &c));
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_rejects_reflections_and_shears() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::from_rotation(reflect).is_err());
        let mut shear = Matrix3::identity();
        shear[(0, 1)] = 1e-3;
        assert!(RigidTransform::from_rotation(shear).is_err());
    }

    #[test]
    fn rotation_error_examples() {
        let i = Matrix3::identity();
        assert_eq!(rotation_error(&i, &i), 0.0);
        let half = axis_rotation(Axis::Z, 180.0);
        assert!((rotation_error(&i, &half) - 180.0).abs() < 1e-12);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let r = axis_rotation(axis, 45.0);
            assert!((rotation_error(&i, &r) - 45.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_error_is_symmetric_and_recovers_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = *random_transform(&mut rng).rotation();
            let b = *random_transform(&mut rng).rotation();
            assert!((rotation_error(&a, &b) - rotation_error(&b, &a)).abs() < 1e-10);
            for theta in [1.0, 45.0, 90.0, 135.0, 180.0] {
                for axis in [Axis::X, Axis::Y, Axis::Z] {
                    let err = rotation_error(&a, &(a * axis_rotation(axis, theta)));
                    assert!((err - theta).abs() < 1e-9, "{theta} vs {err}");
                }
            }
        }
    }

    #[test]
    fn translation_error_examples() {
        let z = Vector3::zeros();
        assert_eq!(translation_error(&z, &z), 0.0);
        assert_eq!(translation_error(&z, &Vector3::new(1.0, 0.0, 0.0)), 1.0);
        assert_eq!(translation_error(&z, &Vector3::new(1.0, 2.0, 2.0)), 3.0);
    }

    #[test]
    fn rigid_motion_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(40, 5);
        let t = random_transform(&mut rng);
        let moved = apply_transform(&t, &c);
        for i in 0..c.len() {
            for j in (i + 1)..c.len() {
                let d0 = (c.points()[i] - c.points()[j]).norm();
                let d1 = (moved.points()[i] - moved.points()[j]).norm();
                assert!((d0 - d1).abs() <= 1e-9 * d0);
            }
        }
    }

    #[test]
    fn cube_corners_scale_by_two() {
        let mut corners = vec![];
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    corners.push([x, y, z]);
                }
            }
        }
        let c = PointCloud::from_xyz(&corners).unwrap();
        let (n, rec) = normalize_to_box(&c).unwrap();
        assert_eq!(rec.scale, 2.0);
        for (p, q) in n.points().iter().zip(c.points()) {
            assert_eq!(p.coords, q.coords * 2.0);
        }
    }

    #[test]
    fn normalized_cloud_has_unit_scale() {
        let c = random_cloud(100, 2);
        let (n, _) = normalize_to_box(&c).unwrap();
        let (m, rec) = normalize_to_box(&n).unwrap();
        assert!((rec.scale - 1.0).abs() < 1e-12);
        assert!(m
            .points()
            .iter()
            .all(|p| p.coords.iter().all(|v| v.abs() <= 2.0 + 1e-12)));
    }

    #[test]
    fn normalization_round_trip() {
        for seed in 0..10 {
            let c = random_cloud(200, seed);
            let (n, rec) = normalize_to_box(&c).unwrap();
            assert!(n
                .points()
                .iter()
                .all(|p| p.coords.iter().all(|v| v.abs() <= 2.0 + 1e-12)));
            let back = rec.invert(&n);
            for (a, b) in back.points().iter().zip(c.points()) {
                assert!((a - b).norm() <= 1e-12 * b.coords.norm().max(1.0));
            }
        }
    }

    #[test]
    fn degenerate_cloud_has_zero_extent() {
        let c = PointCloud::from_xyz(&[[1.0, 2.0, 3.0]; 4]).unwrap();
        assert!(matches!(normalize_to_box(&c), Err(Error::ZeroExtent)));
    }

    #[test]
    fn pair_normalization_keeps_rigid_motions_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = random_cloud(50, 9);
        let gt = random_transform(&mut rng);
        let tgt = apply_transform(&gt, &src);
        let (ns, rs, nt, rt) = normalize_pair(&src, &tgt).unwrap();
        // the normalized clouds differ by (R, t_n) with t_n = s (R c_s + t - c_t)
        let t_n = (gt.rotation() * rs.offset + gt.translation() - rt.offset) * rs.scale;
        let tn = RigidTransform::new(*gt.rotation(), t_n).unwrap();
        for (a, b) in ns.points().iter().zip(nt.points()) {
            assert!((tn.apply_point(a) - b).norm() < 1e-12);
        }
        let back = denormalize_transform(&tn, &rs, &rt);
        assert!((back.translation() - gt.translation()).norm() < 1e-12);
    }

    #[test]
    fn random_transform_contract() {
        let t = random_rigid_transform(0.0, &[Axis::X, Axis::Y], 4, AngleMode::Uniform).unwrap();
        assert_eq!(t, RigidTransform::identity());

        let t = random_rigid_transform(90.0, &[Axis::Z], 0, AngleMode::Exact).unwrap();
        assert!((rotation_error(&Matrix3::identity(), t.rotation()) - 90.0).abs() < 1e-12);

        let a = random_rigid_transform(60.0, &[Axis::Z, Axis::X], 42, AngleMode::Uniform).unwrap();
        let b = random_rigid_transform(60.0, &[Axis::X, Axis::Z], 42, AngleMode::Uniform).unwrap();
        assert_eq!(a, b);
        assert_eq!(*a.translation(), Vector3::zeros());

        assert!(random_rigid_transform(10.0, &[], 0, AngleMode::Uniform).is_err());
        assert!(random_rigid_transform(200.0, &[Axis::Z], 0, AngleMode::Uniform).is_err());
        assert!(random_rigid_transform(-90.0, &[Axis::Z], 0, AngleMode::Exact).is_ok());
    }

    #[test]
    fn exact_xyz_rotation_is_sequential() {
        let t = random_rigid_transform(45.0, &[Axis::X, Axis::Y, Axis::Z], 0, AngleMode::Exact)
            .unwrap();
        let expected = axis_rotation(Axis::Z, 45.0)
            * axis_rotation(Axis::Y, 45.0)
            * axis_rotation(Axis::X, 45.0);
        assert!((t.rotation() - expected).norm() < 1e-15);
    }

    #[test]
    fn transform_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = random_transform(&mut rng);
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert!((back.rotation() - t.rotation()).norm() <= 1e-12);
        assert!((back.translation() - t.translation()).norm() <= 1e-12);
    }
}
