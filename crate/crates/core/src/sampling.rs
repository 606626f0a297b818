//! Subset selection and exact neighbor queries.
//!
//! Clouds in this crate stay in the low thousands of points, so every query
//! is an exact linear scan. Distance ties always resolve to the lowest index.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

/// Distinct indices into a parent cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSubset(Vec<usize>);

impl IndexSubset {
    /// Validates distinctness and bounds against a parent of `parent_len` points.
    pub fn new(indices: Vec<usize>, parent_len: usize) -> Result<Self> {
        let mut seen = vec![false; parent_len];
        for &i in &indices {
            if i >= parent_len {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: parent_len,
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("index {i} repeated in subset")));
            }
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Re-expresses indices of a subset of `self` as indices into `self`'s parent.
    pub fn compose(&self, inner: &IndexSubset) -> IndexSubset {
        IndexSubset(inner.0.iter().map(|&i| self.0[i]).collect())
    }
}

impl std::ops::Deref for IndexSubset {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

#[inline]
fn dist2(a: &Point, b: &Point) -> f64 {
    (a - b).norm_squared()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Greedy farthest point sampling starting from `start`.
pub fn farthest_point_sampling(cloud: &PointCloud, n: usize, start: usize) -> Result<IndexSubset> {
    let pts = cloud.points();
    if n > pts.len() {
        return Err(Error::TooFewPoints {
            requested: n,
            available: pts.len(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if start >= pts.len() {
        return Err(Error::IndexOutOfRange {
            index: start,
            len: pts.len(),
        });
    }

    let mut selected = Vec::with_capacity(n);
    let mut min_d2 = vec![f64::INFINITY; pts.len()];
    let mut current = start;
    loop {
        selected.push(current);
        if selected.len() == n {
            break;
        }
        min_d2[current] = f64::NEG_INFINITY;
        let anchor = pts[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, (p, d)) in pts.iter().zip(min_d2.iter_mut()).enumerate() {
            if *d == f64::NEG_INFINITY {
                continue;
            }
            *d = d.min(dist2(p, &anchor));
            // strict > keeps the lowest index on ties
            if *d > best.0 {
                best = (*d, i);
            }
        }
        current = best.1;
    }
    Ok(IndexSubset(selected))
}

/// The `p` nearest points to `query`, ascending by distance.
pub fn p_nearest_neighbors(cloud: &PointCloud, query: &Point, p: usize) -> Result<IndexSubset> {
    nearest_in(cloud.points(), query, p).map(IndexSubset)
}

pub(crate) fn nearest_in(points: &[Point], query: &Point, p: usize) -> Result<Vec<usize>> {
    if p > points.len() {
        return Err(Error::TooFewPoints {
            requested: p,
            available: points.len(),
        });
    }
    if p == 0 {
        return Err(Error::invalid("neighbor count must be at least 1"));
    }
    let mut scored: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, q)| (dist2(q, query), i))
        .collect();
    if p < scored.len() {
        scored.select_nth_unstable_by(p - 1, by_distance_then_index);
        scored.truncate(p);
    }
    scored.sort_unstable_by(by_distance_then_index);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Index and squared distance of the single nearest point.
pub(crate) fn nearest_one(points: &[Point], query: &Point) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, query);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// All points within distance `r` of `query` (inclusive), ascending by index.
pub fn radius_neighbors(cloud: &PointCloud, query: &Point, r: f64) -> Result<IndexSubset> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    let r2 = r * r;
    Ok(IndexSubset(
        cloud
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| dist2(p, query) <= r2)
            .map(|(i, _)| i)
            .collect(),
    ))
}

/// Uniform sample of `n` distinct indices without replacement.
pub fn random_subset(cloud: &PointCloud, n: usize, seed: u64) -> Result<IndexSubset> {
    if n > cloud.len() {
        return Err(Error::TooFewPoints {
            requested: n,
            available: cloud.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(IndexSubset(
        rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec(),
    ))
}
