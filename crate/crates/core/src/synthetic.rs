//! Seeded synthetic clouds for benchmarks and tests.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Uniform in `[-1, 1]³`.
    Box,
    /// Four anisotropic Gaussian blobs.
    Blobs,
    /// Three orthogonal bars of unequal length; no rotational symmetry.
    Ell,
    /// A bumpy height-field patch over an off-centre rectangle.
    Surface,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Box, Shape::Blobs, Shape::Ell, Shape::Surface];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Box => "box",
            Shape::Blobs => "blobs",
            Shape::Ell => "ell",
            Shape::Surface => "surface",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!("unknown shape `{s}` (box, blobs, ell, surface)"))
            })
    }
}

const BLOBS: [([f64; 3], [f64; 3]); 4] = [
    ([0.0, 0.0, 0.0], [0.30, 0.20, 0.15]),
    ([1.2, 0.3, -0.2], [0.15, 0.25, 0.10]),
    ([-0.5, 1.0, 0.4], [0.20, 0.10, 0.30]),
    ([0.4, -0.9, 0.8], [0.10, 0.30, 0.20]),
];

/// `(min corner, max corner)` of the bars making up the L shape.
const ELL_BARS: [([f64; 3], [f64; 3]); 3] = [
    ([0.0, 0.0, 0.0], [2.0, 0.3, 0.3]),
    ([0.0, 0.3, 0.0], [0.3, 1.2, 0.3]),
    ([0.0, 0.0, 0.3], [0.3, 0.3, 0.7]),
];
const ELL_SHIFT: [f64; 3] = [-0.6, -0.3, -0.15];

pub fn generate(shape: Shape, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("point count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = match shape {
        Shape::Box => (0..n)
            .map(|_| {
                Point::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                )
            })
            .collect(),
        Shape::Blobs => (0..n)
            .map(|i| {
                let (c, s) = BLOBS[i % BLOBS.len()];
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = Normal::new(c[k], s[k]).unwrap().sample(&mut rng);
                }
                Point::new(p[0], p[1], p[2])
            })
            .collect(),
        Shape::Ell => {
            let volumes: Vec<f64> = ELL_BARS
                .iter()
                .map(|(lo, hi)| (0..3).map(|k| hi[k] - lo[k]).product())
                .collect();
            let total: f64 = volumes.iter().sum();
            (0..n)
                .map(|_| {
                    let mut u = rng.random_range(0.0..total);
                    let mut bar = 0;
                    while u >= volumes[bar] && bar + 1 < volumes.len() {
                        u -= volumes[bar];
                        bar += 1;
                    }
                    let (lo, hi) = ELL_BARS[bar];
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = rng.random_range(lo[k]..hi[k]) + ELL_SHIFT[k];
                    }
                    Point::new(p[0], p[1], p[2])
                })
                .collect()
        }
        Shape::Surface => (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-1.2..1.0);
                let y: f64 = rng.random_range(-0.8..0.9);
                let z = 0.25 * (2.5 * x).sin() * (1.7 * y).cos() + 0.1 * x * x;
                Point::new(x, y, z)
            })
            .collect(),
    };
    Ok(PointCloud::new(points)?.with_label(shape.name()))
}

/// Adds isotropic Gaussian noise of standard deviation `sigma` to every point.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let noisy: Vec<Point> = cloud
        .points()
        .iter()
        .map(|p| {
            Point::new(
                p.x + normal.sample(&mut rng),
                p.y + normal.sample(&mut rng),
                p.z + normal.sample(&mut rng),
            )
        })
        .collect();
    let mut out = PointCloud::new(noisy)?;
    out.label = cloud.label.clone();
    match cloud.correspondence() {
        Some(ids) => out.with_correspondence(ids.to_vec()),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        for shape in Shape::ALL {
            let a = generate(shape, 200, 7).unwrap();
            assert_eq!(a, generate(shape, 200, 7).unwrap());
            assert_ne!(a, generate(shape, 200, 8).unwrap());
            assert_eq!(a.len(), 200);
        }
    }

    #[test]
    fn shape_names_round_trip() {
        for shape in Shape::ALL {
            assert_eq!(shape.name().parse::<Shape>().unwrap(), shape);
        }
        assert!("torus".parse::<Shape>().is_err());
    }

    #[test]
    fn noise_keeps_metadata() {
        let c = generate(Shape::Ell, 50, 1)
            .unwrap()
            .with_index_correspondence();
        let n = add_noise(&c, 0.01, 3).unwrap();
        assert_eq!(n.correspondence(), c.correspondence());
        let max = n
            .points()
            .iter()
            .zip(c.points())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max > 0.0 && max < 0.1);
        assert_eq!(add_noise(&c, 0.0, 3).unwrap(), c);
    }
}
