//! Reference metric-learning losses used for comparison runs: contrastive,
//! triplet with batch-hard negative mining, and lifted-structured.
//!
//! Each loss consumes a precomputed [`DistanceMatrix`] and returns its value
//! together with the gradient over pair distances, laid out as an n x n
//! matrix with entries in the upper triangle (i < j). Chaining into
//! embeddings is the caller's job via
//! [`crate::pairs::embedding_grad_from_distance_grad`].
//!
//! Conventions shared by all three losses: hinge boundaries use subgradient
//! 0, and argmin ties resolve to the lowest index, so results are
//! deterministic.

use crate::error::{Error, PairSide, Result};
use crate::linalg::Matrix;
use crate::pairs::{DistanceMatrix, PairSets};

/// Margins for the three comparison losses.
///
/// The contrastive margin applies on the rescaled distance (1 + d) / 2 in
/// [0, 1]; the other two apply on the raw distance in [-1, 1].
#[derive(Clone, Copy, Debug)]
pub struct MarginConfig {
    pub contrastive_margin: f64,
    pub triplet_margin: f64,
    pub lifted_margin: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            contrastive_margin: 0.5,
            triplet_margin: 0.2,
            lifted_margin: 1.0,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrastive_margin > 0.0 && self.contrastive_margin <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "contrastive margin must lie in (0, 1], got {}",
                self.contrastive_margin
            )));
        }
        if self.triplet_margin <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "triplet margin must be positive, got {}",
                self.triplet_margin
            )));
        }
        if self.lifted_margin <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lifted margin must be positive, got {}",
                self.lifted_margin
            )));
        }
        Ok(())
    }
}

fn upper(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Contrastive loss on the rescaled distance delta = (1 + d) / 2.
///
/// Positives contribute mean delta^2, negatives mean max(0, m_c - delta)^2.
/// Either pair set may be empty (its mean is dropped); only a batch with no
/// pairs at all is rejected.
pub fn contrastive_loss(
    dist: &DistanceMatrix,
    pairs: &PairSets,
    m_c: f64,
) -> Result<(f64, Matrix)> {
    if pairs.positives.is_empty() && pairs.negatives.is_empty() {
        return Err(Error::EmptyPairSet {
            side: PairSide::Both,
        });
    }
    let n = dist.n();
    let mut grad = Matrix::zeros(n, n);
    let mut loss = 0.0;

    if !pairs.positives.is_empty() {
        let count = pairs.positives.len() as f64;
        for &(i, j) in &pairs.positives {
            let delta = (1.0 + dist.get(i, j)) / 2.0;
            loss += delta * delta / count;
            // d(delta^2)/dd = 2 delta * 1/2 = delta
            grad.set(i, j, grad.get(i, j) + delta / count);
        }
    }
    if !pairs.negatives.is_empty() {
        let count = pairs.negatives.len() as f64;
        for &(i, j) in &pairs.negatives {
            let delta = (1.0 + dist.get(i, j)) / 2.0;
            let slack = m_c - delta;
            if slack > 0.0 {
                loss += slack * slack / count;
                // d(slack^2)/dd = 2 slack * (-1/2) = -slack
                grad.set(i, j, grad.get(i, j) - slack / count);
            }
        }
    }
    Ok((loss, grad))
}

/// Triplet loss with batch-hard negative mining.
///
/// For every ordered same-label pair (a, p) whose anchor has at least one
/// negative, the hardest negative n* = argmin over d(a, n); the loss is the
/// mean of max(0, d(a, p) - d(a, n*) + m_t). A batch where no anchor has
/// both a positive and a negative (a single-class batch) is rejected.
pub fn triplet_loss_hard(
    dist: &DistanceMatrix,
    labels: &[usize],
    m_t: f64,
) -> Result<(f64, Matrix)> {
    let n = labels.len();
    if dist.n() != n {
        return Err(Error::DimensionMismatch {
            context: "triplet_loss_hard labels",
            expected: dist.n(),
            got: n,
        });
    }

    // Hardest negative per anchor, ties to the lowest index.
    let mut hardest: Vec<Option<usize>> = vec![None; n];
    for a in 0..n {
        let mut best: Option<(f64, usize)> = None;
        for v in 0..n {
            if labels[v] == labels[a] {
                continue;
            }
            let d = dist.get(a, v);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, v));
            }
        }
        hardest[a] = best.map(|(_, v)| v);
    }

    let mut terms: Vec<(usize, usize, usize, f64)> = Vec::new();
    for a in 0..n {
        let Some(neg) = hardest[a] else { continue };
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let term = dist.get(a, p) - dist.get(a, neg) + m_t;
            terms.push((a, p, neg, term.max(0.0)));
        }
    }
    if terms.is_empty() {
        return Err(Error::NoValidTriplet);
    }

    let count = terms.len() as f64;
    let mut grad = Matrix::zeros(n, n);
    let mut loss = 0.0;
    for &(a, p, neg, term) in &terms {
        loss += term / count;
        if term > 0.0 {
            let (i, j) = upper(a, p);
            grad.set(i, j, grad.get(i, j) + 1.0 / count);
            let (i, j) = upper(a, neg);
            grad.set(i, j, grad.get(i, j) - 1.0 / count);
        }
    }
    Ok((loss, grad))
}

/// Lifted-structured loss.
///
/// For each positive pair (i, j), J_ij = log-sum-exp over m_l - d for every
/// negative pair incident to i or j, plus d_ij; the loss is
/// (1 / 2|S+|) sum of max(0, J_ij)^2. The log-sum-exp is max-shifted.
/// A positive pair with no incident negative at all is rejected.
pub fn lifted_loss(dist: &DistanceMatrix, pairs: &PairSets, m_l: f64) -> Result<(f64, Matrix)> {
    if pairs.positives.is_empty() {
        return Err(Error::EmptyPairSet {
            side: PairSide::Positive,
        });
    }
    let n = dist.n();

    // Negative pairs incident to each sample, in stored order.
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for &(u, v) in &pairs.negatives {
        incident[u].push((u, v));
        incident[v].push((u, v));
    }

    let p_count = pairs.positives.len() as f64;
    let mut grad = Matrix::zeros(n, n);
    let mut loss = 0.0;
    for &(i, j) in &pairs.positives {
        let neg_pairs: Vec<(usize, usize)> =
            incident[i].iter().chain(&incident[j]).copied().collect();
        if neg_pairs.is_empty() {
            return Err(Error::NoNegativePartner { i, j });
        }
        let exponents: Vec<f64> = neg_pairs
            .iter()
            .map(|&(u, v)| m_l - dist.get(u, v))
            .collect();
        let shift = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = exponents.iter().map(|&e| (e - shift).exp()).collect();
        let total: f64 = weights.iter().sum();
        let j_ij = shift + total.ln() + dist.get(i, j);
        if j_ij > 0.0 {
            loss += j_ij * j_ij / (2.0 * p_count);
            let upstream = j_ij / p_count;
            grad.set(i, j, grad.get(i, j) + upstream);
            for (&(u, v), &w) in neg_pairs.iter().zip(&weights) {
                grad.set(u, v, grad.get(u, v) - upstream * w / total);
            }
        }
    }
    Ok((loss, grad))
}
