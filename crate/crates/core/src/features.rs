//! Per-point descriptors and their interpolation onto denser point sets.
//!
//! Every backend produces unit-length vectors, so dot-product similarities
//! land in `[-1, 1]` regardless of where the features came from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::sampling::{nearest_in, IndexSubset};

/// Allowed deviation from unit length for a stored feature vector.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Distance offset in the inverse-distance interpolation weights.
pub const IDW_EPSILON: f64 = 1e-8;

/// Default radii of the handcrafted descriptor, in normalized units.
pub const DEFAULT_RADII: [f64; 3] = [0.1, 0.2, 0.4];

/// Unit-norm descriptors, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    vectors: DMatrix<f64>,
}

impl FeatureSet {
    /// Wraps `vectors` (one row per point), checking unit norms.
    pub fn new(vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.ncols() == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if vectors.nrows() == 0 {
            return Err(Error::EmptyCloud);
        }
        for (i, row) in vectors.row_iter().enumerate() {
            let n = row.norm();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::invalid(format!("feature {i} has norm {n}")));
            }
        }
        Ok(Self { vectors })
    }

    /// Normalizes every row to unit length. Zero rows are rejected.
    pub fn from_rows_normalized(mut vectors: DMatrix<f64>) -> Result<Self> {
        for (i, mut row) in vectors.row_iter_mut().enumerate() {
            let n = row.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::invalid(format!("feature {i} cannot be normalized")));
            }
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                row /= n;
            }
        }
        Self::new(vectors)
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.vectors.row(i).into_owned()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&index) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(Self {
            vectors: self.vectors.select_rows(indices),
        })
    }

    /// Writes the text format: a `D <dim> N <count>` header, then one
    /// whitespace-separated row per point.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("D {} N {}\n", self.dim(), self.len());
        for row in self.vectors.row_iter() {
            let mut first = true;
            for v in row.iter() {
                if !first {
                    out.push(' ');
                }
                first = false;
                // shortest round-trip representation
                write!(out, "{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let (dim, count) = match tokens.as_slice() {
            ["D", d, "N", n] => (
                d.parse::<usize>()
                    .map_err(|e| err(hline, format!("bad dimension: {e}")))?,
                n.parse::<usize>()
                    .map_err(|e| err(hline, format!("bad count: {e}")))?,
            ),
            _ => return Err(err(hline, "expected header `D <dim> N <count>`".into())),
        };
        let mut values = Vec::with_capacity(dim * count);
        let mut rows = 0;
        for (lineno, line) in lines {
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| err(lineno, format!("bad value `{tok}`: {e}")))?,
                );
            }
            if values.len() - before != dim {
                return Err(err(
                    lineno,
                    format!("expected {dim} values, found {}", values.len() - before),
                ));
            }
            rows += 1;
        }
        if rows != count {
            return Err(Error::LengthMismatch {
                expected: count,
                found: rows,
            });
        }
        Self::from_rows_normalized(DMatrix::from_row_slice(count, dim, &values))
    }
}

/// Parameters of the rotation-invariant handcrafted descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct HandcraftedParams {
    pub radii: Vec<f64>,
    /// Distance-histogram bins per radius.
    pub bins: usize,
}

impl Default for HandcraftedParams {
    fn default() -> Self {
        Self {
            radii: DEFAULT_RADII.to_vec(),
            bins: 8,
        }
    }
}

impl HandcraftedParams {
    /// Per radius: histogram bins, three eigenvalues, one count.
    pub fn dim(&self) -> usize {
        self.radii.len() * (self.bins + 4)
    }
}

/// Which side of a registration a cloud plays; selects the file of a
/// precomputed backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudRole {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureBackend {
    /// Seeded random unit vectors keyed by each point's correspondence id,
    /// so corresponding points get identical descriptors.
    Oracle {
        seed: u64,
        dim: usize,
    },
    Handcrafted(HandcraftedParams),
    /// Descriptors read from feature files, index-aligned with the clouds.
    Precomputed {
        source: PathBuf,
        target: PathBuf,
    },
}

impl FeatureBackend {
    pub const DEFAULT_ORACLE_DIM: usize = 128;

    pub fn oracle(seed: u64) -> Self {
        Self::Oracle {
            seed,
            dim: Self::DEFAULT_ORACLE_DIM,
        }
    }

    pub fn handcrafted() -> Self {
        Self::Handcrafted(HandcraftedParams::default())
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Oracle { dim, .. } if *dim == 0 => {
                Err(Error::invalid("oracle dimension must be at least 1"))
            }
            Self::Handcrafted(p) if p.radii.is_empty() || p.bins == 0 => {
                Err(Error::invalid("handcrafted backend needs radii and bins"))
            }
            Self::Handcrafted(p) if p.radii.iter().any(|r| !(*r > 0.0)) => {
                Err(Error::invalid("handcrafted radii must be positive"))
            }
            _ => Ok(()),
        }
    }
}

pub fn extract_features(
    backend: &FeatureBackend,
    cloud: &PointCloud,
    role: CloudRole,
) -> Result<FeatureSet> {
    backend.validate()?;
    match backend {
        FeatureBackend::Oracle { seed, dim } => {
            let ids = cloud.correspondence().ok_or(Error::MissingCorrespondence)?;
            oracle_features(ids, *seed, *dim)
        }
        FeatureBackend::Handcrafted(params) => Ok(handcrafted_features(cloud, params)),
        FeatureBackend::Precomputed { source, target } => {
            let path = match role {
                CloudRole::Source => source,
                CloudRole::Target => target,
            };
            let feats = FeatureSet::read(path)?;
            if feats.len() != cloud.len() {
                return Err(Error::LengthMismatch {
                    expected: cloud.len(),
                    found: feats.len(),
                });
            }
            Ok(feats)
        }
    }
}

/// Features for the points of `full` at `subset`.
///
/// Precomputed files are aligned with the full cloud, so they are loaded
/// whole and then indexed; the other backends only see the subset.
pub(crate) fn features_for_subset(
    backend: &FeatureBackend,
    full: &PointCloud,
    subset: &IndexSubset,
    role: CloudRole,
) -> Result<FeatureSet> {
    match backend {
        FeatureBackend::Precomputed { .. } => {
            extract_features(backend, full, role)?.select(subset.as_slice())
        }
        _ => extract_features(backend, &full.select(subset.as_slice())?, role),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Unit vector drawn from an isotropic Gaussian seeded by `(seed, id)`.
pub fn oracle_vector(id: usize, seed: u64, dim: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(id as u64)));
    loop {
        let v = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn oracle_features(ids: &[usize], seed: u64, dim: usize) -> Result<FeatureSet> {
    let mut m = DMatrix::zeros(ids.len(), dim);
    for (i, &id) in ids.iter().enumerate() {
        m.set_row(i, &oracle_vector(id, seed, dim).transpose());
    }
    FeatureSet::from_rows_normalized(m)
}

/// Neighbor-distance histogram, sorted covariance eigenvalues and neighbor
/// count for each radius, concatenated and unit-normalized.
///
/// Histograms are stored as fractions of the neighborhood, eigenvalues are
/// divided by `r²`, and the count enters as `ln(1+k) / ln(1+n)`. A radius
/// with no neighbors contributes zeros; a point with no neighbors at any
/// radius gets the constant vector.
pub fn handcrafted_features(cloud: &PointCloud, params: &HandcraftedParams) -> FeatureSet {
    let pts = cloud.points();
    let dim = params.dim();
    let r_max = params.radii.iter().cloned().fold(0.0, f64::max);
    let count_norm = (1.0 + pts.len() as f64).ln();

    let rows: Vec<Vec<f64>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let neighbors: Vec<(f64, &Point)> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| ((p - q).norm(), p))
                .filter(|(d, _)| *d <= r_max)
                .collect();
            let mut row = Vec::with_capacity(dim);
            for &r in &params.radii {
                row.extend(radius_block(q, &neighbors, r, params.bins, count_norm));
            }
            row
        })
        .collect();

    let mut m = DMatrix::zeros(pts.len(), dim);
    for (i, mut row) in rows.into_iter().enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        } else {
            row.fill(1.0 / (dim as f64).sqrt());
        }
        m.set_row(i, &RowDVector::from_vec(row));
    }
    FeatureSet { vectors: m }
}

fn radius_block(
    query: &Point,
    neighbors: &[(f64, &Point)],
    r: f64,
    bins: usize,
    count_norm: f64,
) -> Vec<f64> {
    let mut block = vec![0.0; bins + 4];
    let inside: Vec<(f64, &Point)> = neighbors.iter().copied().filter(|(d, _)| *d <= r).collect();
    if inside.is_empty() {
        return block;
    }
    let k = inside.len() as f64;
    for (d, _) in &inside {
        let b = ((d / r) * bins as f64).floor() as usize;
        block[b.min(bins - 1)] += 1.0 / k;
    }

    // covariance of the neighborhood including the query point
    let mean = inside
        .iter()
        .fold(query.coords, |acc, (_, p)| acc + p.coords)
        / (k + 1.0);
    let mut cov = (query.coords - mean) * (query.coords - mean).transpose();
    for (_, p) in &inside {
        let c = p.coords - mean;
        cov += c * c.transpose();
    }
    cov /= k + 1.0;
    let mut eig: Vec<f64> = Matrix3::from(cov)
        .symmetric_eigenvalues()
        .iter()
        .map(|e| e.max(0.0) / (r * r))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    block[bins..bins + 3].copy_from_slice(&eig);
    block[bins + 3] = (1.0 + k).ln() / count_norm;
    block
}

/// Inverse-distance weights `wᵢ ∝ 1/(dᵢ + ε)`, summing to one.
pub fn idw_weights(distances: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = distances.iter().map(|d| 1.0 / (d + IDW_EPSILON)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Interpolates `sub_feats` (defined on `sub_points`) onto `dense_points`
/// from the three nearest sub-sampled points, then renormalizes.
pub fn interpolate_features(
    sub_points: &PointCloud,
    sub_feats: &FeatureSet,
    dense_points: &PointCloud,
) -> Result<FeatureSet> {
    if sub_points.len() < 3 {
        return Err(Error::TooFewPoints {
            requested: 3,
            available: sub_points.len(),
        });
    }
    if sub_feats.len() != sub_points.len() {
        return Err(Error::LengthMismatch {
            expected: sub_points.len(),
            found: sub_feats.len(),
        });
    }
    let sub = sub_points.points();
    let mut m = DMatrix::zeros(dense_points.len(), sub_feats.dim());
    for (i, q) in dense_points.points().iter().enumerate() {
        let nn = nearest_in(sub, q, 3)?;
        let d: Vec<f64> = nn.iter().map(|&j| (sub[j] - q).norm()).collect();
        let w = idw_weights(&d);
        let mut v = RowDVector::zeros(sub_feats.dim());
        for (&j, wj) in nn.iter().zip(&w) {
            v += sub_feats.vectors.row(j) * *wj;
        }
        let n = v.norm();
        if n > 1e-12 {
            v /= n;
        } else {
            v = sub_feats.row(nn[0]);
        }
        m.set_row(i, &v);
    }
    FeatureSet::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, RigidTransform};
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::Rng;

    fn surface_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    let y: f64 = rng.random_range(-0.6..0.6);
                    Point::new(x, y, 0.3 * (2.0 * x).sin() * (3.0 * y).cos())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn oracle_features_follow_correspondence() {
        let c = surface_cloud(64, 1).with_index_correspondence();
        let rot = RigidTransform::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), 2.0).into_inner(),
            Vector3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let moved = apply_transform(&rot, &c);
        let b = FeatureBackend::oracle(3);
        let f0 = extract_features(&b, &c, CloudRole::Source).unwrap();
        let f1 = extract_features(&b, &moved, CloudRole::Target).unwrap();
        assert_eq!(f0, f1);
        assert_eq!(f0.dim(), FeatureBackend::DEFAULT_ORACLE_DIM);

        let shuffled = c.select(&[5, 3, 9]).unwrap();
        let fs = extract_features(&b, &shuffled, CloudRole::Target).unwrap();
        assert_eq!(fs.row(0), f0.row(5));
        assert_eq!(fs.row(2), f0.row(9));
    }

    #[test]
    fn oracle_requires_ids() {
        let c = surface_cloud(8, 1);
        assert!(matches!(
            extract_features(&FeatureBackend::oracle(0), &c, CloudRole::Source),
            Err(Error::MissingCorrespondence)
        ));
    }

    #[test]
    fn handcrafted_dimension_and_norm() {
        let c = surface_cloud(200, 2);
        let f = extract_features(&FeatureBackend::handcrafted(), &c, CloudRole::Source).unwrap();
        assert_eq!(f.dim(), 36);
        assert_eq!(f.len(), 200);
        for i in 0..f.len() {
            assert!((f.row(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn handcrafted_isolated_point_falls_back_to_constant() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]).unwrap();
        let f = handcrafted_features(&c, &HandcraftedParams::default());
        let expected = 1.0 / 36f64.sqrt();
        assert!(f.row(0).iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn handcrafted_is_rigid_invariant() {
        let c = surface_cloud(512, 3);
        let params = HandcraftedParams::default();
        let base = handcrafted_features(&c, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..3 {
            let axis = Unit::new_normalize(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let t = RigidTransform::new(
                Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1)).into_inner(),
                Vector3::new(3.0, -1.0, 0.5),
            )
            .unwrap();
            let moved = handcrafted_features(&apply_transform(&t, &c), &params);
            for i in 0..c.len() {
                assert!(base.row(i).dot(&moved.row(i)) >= 0.999);
            }
        }
    }

    #[test]
    fn precomputed_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.txt");
        let c = surface_cloud(50, 4);
        let f = handcrafted_features(&c, &HandcraftedParams::default());
        f.write(&path).unwrap();
        let b = FeatureBackend::Precomputed {
            source: path.clone(),
            target: path.clone(),
        };
        let back = extract_features(&b, &c, CloudRole::Source).unwrap();
        assert_eq!(back, f);

        let short = surface_cloud(49, 4);
        assert!(matches!(
            extract_features(&b, &short, CloudRole::Target),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn feature_file_rejects_bad_rows() {
        let p = Path::new("inline");
        assert!(FeatureSet::parse("D 2 N 1\n1 0 0\n", p).is_err());
        assert!(FeatureSet::parse("D 2 N 2\n1 0\n", p).is_err());
        assert!(FeatureSet::parse("2 1\n1 0\n", p).is_err());
        let f = FeatureSet::parse("D 2 N 1\n3 4\n", p).unwrap();
        assert!((f.row(0)[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn interpolation_collapses_onto_coincident_point() {
        let sub = surface_cloud(20, 5);
        let f = extract_features(
            &FeatureBackend::oracle(1),
            &sub.clone().with_index_correspondence(),
            CloudRole::Source,
        )
        .unwrap();
        let dense = sub.select(&[4, 11]).unwrap();
        let out = interpolate_features(&sub, &f, &dense).unwrap();
        assert!((out.row(0) - f.row(4)).norm() < 1e-6);
        assert!((out.row(1) - f.row(11)).norm() < 1e-6);
    }

    #[test]
    fn interpolation_weights_match_hand_computation() {
        // query at origin, two points at distance 1 and one at distance 3
        let sub =
            PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]).unwrap();
        let f = FeatureSet::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        let dense = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap();
        let out = interpolate_features(&sub, &f, &dense).unwrap();
        // raw weights 1, 1, 1/3 -> 3/7, 3/7, 1/7 (ε negligible)
        let expected = Vector3::new(3.0, 3.0, 1.0).normalize();
        for k in 0..3 {
            assert!((out.row(0)[k] - expected[k]).abs() < 1e-7);
        }
        let w = idw_weights(&[1.0, 1.0, 3.0]);
        assert!((w[0] - 3.0 / 7.0).abs() < 1e-8 && (w[2] - 1.0 / 7.0).abs() < 1e-8);
    }

    #[test]
    fn interpolation_of_constant_features_is_constant() {
        let sub = surface_cloud(30, 6);
        let v = Vector3::new(1.0, 2.0, 2.0).normalize();
        let f = FeatureSet::new(DMatrix::from_fn(30, 3, |_, j| v[j])).unwrap();
        let dense = surface_cloud(100, 7);
        let out = interpolate_features(&sub, &f, &dense).unwrap();
        for i in 0..100 {
            for k in 0..3 {
                assert!((out.row(i)[k] - v[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_needs_three_points() {
        let sub = surface_cloud(2, 8);
        let f = FeatureSet::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        assert!(interpolate_features(&sub, &f, &sub).is_err());
    }
}
