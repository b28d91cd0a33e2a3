//! Pairwise distance statistics over an embedding batch.
//!
//! A labelled batch of unit-norm embeddings is split into positive pairs
//! (same label) and negative pairs (different labels). Pair distances are
//! the negative cosine similarity, which for unit vectors lives in [-1, 1],
//! so both pair populations can be summarized as histograms over a fixed
//! support. Binning is soft: each distance spreads unit mass over the two
//! nearest bin nodes by linear interpolation (a triangular kernel), which
//! makes every bin value piecewise-linear, hence differentiable, in the
//! distance. The backward pass for that kernel lives here too.

use crate::error::{Error, PairSide, Result};
use crate::linalg::{dot, norm, Matrix};

/// Row norms must be within this of 1 to build an [`EmbeddingBatch`].
pub const BATCH_NORM_TOL: f64 = 1e-9;
/// Looser re-check applied by [`distance_matrix`].
pub const DISTANCE_NORM_TOL: f64 = 1e-6;

/// A batch of n unit-norm D-dimensional embeddings with integer labels.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
}

impl EmbeddingBatch {
    /// Validates n >= 2, matching label count, and unit row norms.
    pub fn new(embeddings: Matrix, labels: Vec<usize>) -> Result<Self> {
        if embeddings.rows() < 2 {
            return Err(Error::BatchTooSmall {
                need: 2,
                got: embeddings.rows(),
            });
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingBatch labels",
                expected: embeddings.rows(),
                got: labels.len(),
            });
        }
        for i in 0..embeddings.rows() {
            let n = norm(embeddings.row(i));
            if (n - 1.0).abs() > BATCH_NORM_TOL {
                return Err(Error::NotNormalized {
                    row: i,
                    norm: n,
                    tol: BATCH_NORM_TOL,
                });
            }
        }
        Ok(EmbeddingBatch { embeddings, labels })
    }

    /// Skips validation; for callers that construct rows already normalized.
    pub fn from_parts_unchecked(embeddings: Matrix, labels: Vec<usize>) -> Self {
        EmbeddingBatch { embeddings, labels }
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }
}

/// Index pairs (i, j), i < j, partitioned by label equality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSets {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairSets {
    pub fn total(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

/// Exhaustive partition of all unordered index pairs by label equality.
pub fn enumerate_pairs(labels: &[usize]) -> Result<PairSets> {
    if labels.len() < 2 {
        return Err(Error::BatchTooSmall {
            need: 2,
            got: labels.len(),
        });
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] == labels[j] {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    Ok(PairSets {
        positives,
        negatives,
    })
}

/// Symmetric matrix of pairwise negative-cosine distances, clamped to [-1, 1].
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    values: Matrix,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Builds directly from values; for tests that hand-craft distances.
    pub fn from_values_unchecked(values: Matrix) -> Self {
        DistanceMatrix { values }
    }
}

/// d(i, j) = -(x_i . x_j) for every pair of rows, clamped to [-1, 1].
pub fn distance_matrix(batch: &EmbeddingBatch) -> Result<DistanceMatrix> {
    let n = batch.len();
    for i in 0..n {
        let rn = norm(batch.row(i));
        if (rn - 1.0).abs() > DISTANCE_NORM_TOL {
            return Err(Error::NotNormalized {
                row: i,
                norm: rn,
                tol: DISTANCE_NORM_TOL,
            });
        }
    }
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d = (-dot(batch.row(i), batch.row(j))).clamp(-1.0, 1.0);
            values.set(i, j, d);
            values.set(j, i, d);
        }
    }
    Ok(DistanceMatrix { values })
}

/// Spacing between adjacent bin nodes for `bins` nodes spanning [-1, 1].
pub fn bin_width(bins: usize) -> f64 {
    2.0 / (bins as f64 - 1.0)
}

/// Position of node `r` (0-based): -1 + r * width.
pub fn bin_node(bins: usize, r: usize) -> f64 {
    -1.0 + r as f64 * bin_width(bins)
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    Ok(())
}

/// Index of the left node of the cell containing `d`, in [0, bins - 2].
fn cell_index(d: f64, bins: usize) -> usize {
    let width = bin_width(bins);
    let u = (d + 1.0) / width;
    (u.floor() as isize).clamp(0, bins as isize - 2) as usize
}

/// Triangular-kernel weight of node `r` at distance `d`.
fn kernel_weight(d: f64, bins: usize, r: usize) -> f64 {
    (1.0 - (d - bin_node(bins, r)).abs() / bin_width(bins)).max(0.0)
}

/// Soft histogram of `distances` over `bins` nodes spanning [-1, 1].
///
/// Each distance contributes max(0, 1 - |d - t_r| / width) to node r; at
/// most the two nodes adjacent to d are active. The result is divided by
/// the distance count, so it sums to 1.
pub fn soft_histogram(distances: &[f64], bins: usize) -> Result<Vec<f64>> {
    check_bins(bins)?;
    if distances.is_empty() {
        return Err(Error::EmptyInput("soft_histogram distances"));
    }
    let mut hist = vec![0.0; bins];
    let inv_count = 1.0 / distances.len() as f64;
    for &d in distances {
        let left = cell_index(d, bins);
        hist[left] += kernel_weight(d, bins, left) * inv_count;
        hist[left + 1] += kernel_weight(d, bins, left + 1) * inv_count;
    }
    Ok(hist)
}

/// Backward pass of [`soft_histogram`]: per-distance d(loss)/d(distance).
///
/// The kernel derivative is -sign(d - t_r) / width strictly inside a node's
/// support and 0 elsewhere; exactly on a node (a kink) the subgradient is 0.
pub fn soft_histogram_vjp(distances: &[f64], bins: usize, upstream: &[f64]) -> Result<Vec<f64>> {
    check_bins(bins)?;
    if distances.is_empty() {
        return Err(Error::EmptyInput("soft_histogram_vjp distances"));
    }
    if upstream.len() != bins {
        return Err(Error::DimensionMismatch {
            context: "soft_histogram_vjp upstream",
            expected: bins,
            got: upstream.len(),
        });
    }
    let width = bin_width(bins);
    let inv_count = 1.0 / distances.len() as f64;
    let grads = distances
        .iter()
        .map(|&d| {
            let left = cell_index(d, bins);
            // On a node, both kernels sit at a kink: subgradient 0.
            if d == bin_node(bins, left) || d == bin_node(bins, left + 1) {
                return 0.0;
            }
            // Inside the open cell the left weight falls and the right
            // weight rises at the same rate 1/width.
            (upstream[left + 1] - upstream[left]) / width * inv_count
        })
        .collect();
    Ok(grads)
}

/// Running cumulative sum.
pub fn cumulative(h: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len());
    let mut acc = 0.0;
    for &x in h {
        acc += x;
        out.push(acc);
    }
    out
}

/// Soft histograms of the positive and negative pair distances, plus the
/// cumulative sum of the negative one.
#[derive(Clone, Debug)]
pub struct PairHistograms {
    pub bins: usize,
    pub h_pos: Vec<f64>,
    pub h_neg: Vec<f64>,
    pub cum_neg: Vec<f64>,
}

impl PairHistograms {
    /// Assembles from two histograms of equal length, computing the cumulative.
    pub fn new(h_pos: Vec<f64>, h_neg: Vec<f64>) -> Result<Self> {
        check_bins(h_pos.len())?;
        if h_pos.len() != h_neg.len() {
            return Err(Error::DimensionMismatch {
                context: "PairHistograms",
                expected: h_pos.len(),
                got: h_neg.len(),
            });
        }
        let cum_neg = cumulative(&h_neg);
        Ok(PairHistograms {
            bins: h_pos.len(),
            h_pos,
            h_neg,
            cum_neg,
        })
    }
}

/// Collects the distances of `pairs` out of `dist`, one `Vec` per side.
pub fn pair_distances(dist: &DistanceMatrix, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs.iter().map(|&(i, j)| dist.get(i, j)).collect()
}

/// Builds both pair histograms for a batch. Errors if either side is empty.
pub fn build_histograms(
    dist: &DistanceMatrix,
    pairs: &PairSets,
    bins: usize,
) -> Result<PairHistograms> {
    if pairs.positives.is_empty() {
        return Err(Error::EmptyPairSet {
            side: PairSide::Positive,
        });
    }
    if pairs.negatives.is_empty() {
        return Err(Error::EmptyPairSet {
            side: PairSide::Negative,
        });
    }
    let h_pos = soft_histogram(&pair_distances(dist, &pairs.positives), bins)?;
    let h_neg = soft_histogram(&pair_distances(dist, &pairs.negatives), bins)?;
    PairHistograms::new(h_pos, h_neg)
}

/// Maps a gradient over pair distances back to a gradient over embeddings.
///
/// `dgrad` holds d(loss)/d(d_ij) in its upper triangle. Since
/// d_ij = -(x_i . x_j), each pair contributes -g * x_j to row i and
/// -g * x_i to row j. Distances sitting exactly on the clamp boundary
/// (|d| = 1) contribute nothing: the clamp is flat there.
pub fn embedding_grad_from_distance_grad(
    batch: &EmbeddingBatch,
    dist: &DistanceMatrix,
    dgrad: &Matrix,
) -> Matrix {
    let n = batch.len();
    let mut grad = Matrix::zeros(n, batch.dim());
    for i in 0..n {
        for j in (i + 1)..n {
            let g = dgrad.get(i, j);
            if g == 0.0 || dist.get(i, j).abs() == 1.0 {
                continue;
            }
            for c in 0..batch.dim() {
                let gi = grad.get(i, c) - g * batch.row(j)[c];
                grad.set(i, c, gi);
                let gj = grad.get(j, c) - g * batch.row(i)[c];
                grad.set(j, c, gj);
            }
        }
    }
    grad
}
