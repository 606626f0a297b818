//! Similarity, bilateral consensus and softmax-pooling pair selection.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Plain softmax over raw similarities.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Sharper preset for unit-norm features, whose similarities only span `[-1, 1]`.
pub const SHARP_TEMPERATURE: f64 = 0.05;

/// Dot products between source rows and target columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("similarity matrix has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Elementwise product of the row-wise and column-wise softmaxes of a
/// similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix(DMatrix<f64>);

impl ConsensusMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    /// Value every entry would take if both softmaxes were uniform.
    pub fn uniform_level(&self) -> f64 {
        1.0 / (self.0.nrows() * self.0.ncols()) as f64
    }

    /// Row-major CSV, six significant digits per entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.0.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.5e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub source: usize,
    pub target: usize,
    pub confidence: f64,
}

/// One-to-one correspondences, confidences non-increasing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.pairs.iter().map(|m| m.confidence).collect()
    }

    pub fn max_confidence(&self) -> f64 {
        self.pairs.first().map_or(0.0, |m| m.confidence)
    }
}

pub fn similarity_matrix(fx: &FeatureSet, fy: &FeatureSet) -> Result<SimilarityMatrix> {
    if fx.dim() != fy.dim() {
        return Err(Error::DimensionMismatch {
            expected: fx.dim(),
            found: fy.dim(),
        });
    }
    Ok(SimilarityMatrix(fx.matrix() * fy.matrix().transpose()))
}

fn row_softmax(scaled: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scaled.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// `C = softmax_rows(S/τ) ⊙ softmax_cols(S/τ)`.
pub fn bilateral_consensus(s: &SimilarityMatrix, temperature: f64) -> Result<ConsensusMatrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let scaled = &s.0 / temperature;
    let rows = row_softmax(&scaled);
    let cols = row_softmax(&scaled.transpose()).transpose();
    Ok(ConsensusMatrix(rows.component_mul(&cols)))
}

/// Greedy one-to-one selection of the `k` largest consensus entries: take the
/// largest remaining entry, then retire its row and column.
pub fn softmax_pool_top_k(c: &ConsensusMatrix, k: usize) -> Result<MatchSet> {
    let (rows, cols) = c.0.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 1..={}",
            rows.min(cols)
        )));
    }
    let mut order: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect();
    order.sort_unstable_by(|&(ai, aj), &(bi, bj)| {
        c.0[(bi, bj)]
            .total_cmp(&c.0[(ai, aj)])
            .then(ai.cmp(&bi))
            .then(aj.cmp(&bj))
    });

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::with_capacity(k);
    for (i, j) in order {
        if row_used[i] || col_used[j] {
            continue;
        }
        row_used[i] = true;
        col_used[j] = true;
        pairs.push(Match {
            source: i,
            target: j,
            confidence: c.0[(i, j)],
        });
        if pairs.len() == k {
            break;
        }
    }
    Ok(MatchSet { pairs })
}
