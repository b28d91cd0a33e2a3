//! Bayesian-risk embedding loss.
//!
//! The risk of a batch is the probability that a randomly drawn negative
//! pair ends up at a distance less than or equal to a randomly drawn
//! positive pair, estimated from the two soft pair histograms:
//!
//! ```text
//! risk = sum_r h_pos[r] * cum_neg[r]
//! ```
//!
//! where `cum_neg` is the running cumulative sum of the negative histogram.
//! A perfectly separated batch scores 0, a fully collapsed one scores 1.
//! The backward pass is assembled by hand: the risk is linear in each
//! histogram, each histogram is piecewise-linear in the pair distances,
//! and each distance is bilinear in the two embeddings involved.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pairs::{
    build_histograms, distance_matrix, embedding_grad_from_distance_grad, pair_distances,
    soft_histogram_vjp, EmbeddingBatch, PairHistograms, PairSets,
};

/// Risk of a batch plus its gradient with respect to the embeddings.
///
/// The gradient treats embedding rows as free variables; the caller is
/// responsible for chaining through whatever produced them (for the
/// encoder, the L2-normalization backward pass).
#[derive(Clone, Debug)]
pub struct RiskValue {
    pub risk: f64,
    pub grad_embeddings: Matrix,
}

/// Risk from already-built pair histograms: sum of h_pos[r] * cum_neg[r].
pub fn brm_risk(h: &PairHistograms) -> f64 {
    h.h_pos.iter().zip(&h.cum_neg).map(|(p, c)| p * c).sum()
}

/// Reference double-sum form of the risk with inner limit j <= i.
///
/// O(R^2); kept as an independent cross-check of [`brm_risk`].
pub fn brm_risk_naive(h: &PairHistograms) -> f64 {
    let mut acc = 0.0;
    for i in 0..h.bins {
        for j in 0..=i {
            acc += h.h_pos[i] * h.h_neg[j];
        }
    }
    acc
}

/// Forward risk and analytic gradient over the embeddings of `batch`.
///
/// Sensitivities: d(risk)/d(h_pos[r]) = cum_neg[r], and
/// d(risk)/d(h_neg[q]) = sum of h_pos[r] for r >= q (the reverse
/// cumulative). Both flow to pair distances through the soft-histogram
/// backward pass and from there to the embeddings.
pub fn brm_backward(batch: &EmbeddingBatch, pairs: &PairSets, bins: usize) -> Result<RiskValue> {
    brm_backward_impl(batch, pairs, bins, false)
}

/// `flip_negative_upstream` negates the sensitivity through the negative
/// histogram. It exists so the gradient checker can prove it detects a
/// planted fault; every real caller passes `false`.
pub(crate) fn brm_backward_impl(
    batch: &EmbeddingBatch,
    pairs: &PairSets,
    bins: usize,
    flip_negative_upstream: bool,
) -> Result<RiskValue> {
    let dist = distance_matrix(batch)?;
    let hist = build_histograms(&dist, pairs, bins)?;
    let risk = brm_risk(&hist);

    let upstream_pos = hist.cum_neg.clone();
    let mut upstream_neg = reverse_cumulative(&hist.h_pos);
    if flip_negative_upstream {
        for u in &mut upstream_neg {
            *u = -*u;
        }
    }

    let pos_dists = pair_distances(&dist, &pairs.positives);
    let neg_dists = pair_distances(&dist, &pairs.negatives);
    let grad_pos = soft_histogram_vjp(&pos_dists, bins, &upstream_pos)?;
    let grad_neg = soft_histogram_vjp(&neg_dists, bins, &upstream_neg)?;

    let n = batch.len();
    let mut dgrad = Matrix::zeros(n, n);
    for (&(i, j), &g) in pairs.positives.iter().zip(&grad_pos) {
        dgrad.set(i, j, dgrad.get(i, j) + g);
    }
    for (&(i, j), &g) in pairs.negatives.iter().zip(&grad_neg) {
        dgrad.set(i, j, dgrad.get(i, j) + g);
    }

    let grad_embeddings = embedding_grad_from_distance_grad(batch, &dist, &dgrad);
    Ok(RiskValue {
        risk,
        grad_embeddings,
    })
}

/// out[q] = sum of h[r] for r >= q.
fn reverse_cumulative(h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h.len()];
    let mut acc = 0.0;
    for q in (0..h.len()).rev() {
        acc += h[q];
        out[q] = acc;
    }
    out
}

/// Configuration for the risk + cross-entropy combination.
#[derive(Clone, Copy, Debug)]
pub struct CombinedLossConfig {
    /// Weight of the cross-entropy term.
    pub ce_weight: f64,
    pub num_classes: usize,
}

impl CombinedLossConfig {
    pub fn new(num_classes: usize) -> Self {
        CombinedLossConfig {
            ce_weight: 1.0,
            num_classes,
        }
    }
}

/// Output of [`combined_loss`].
#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub total: f64,
    pub risk: f64,
    pub cross_entropy: f64,
    pub grad_embeddings: Matrix,
    /// Gradient of the weighted cross-entropy term over the logits.
    pub grad_logits: Matrix,
}

/// Mean softmax cross-entropy over rows of `logits` and its gradient.
///
/// Log-sum-exp is max-shifted. The gradient is (softmax - onehot) / n.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "softmax_cross_entropy labels",
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("softmax_cross_entropy logits"));
    }
    let mut grad = Matrix::zeros(n, c);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
            });
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - m).exp()).sum();
        let lse = m + sum_exp.ln();
        total += lse - row[y];
        for (j, &z) in row.iter().enumerate() {
            let softmax = (z - m).exp() / sum_exp;
            let indicator = if j == y { 1.0 } else { 0.0 };
            grad.set(i, j, (softmax - indicator) / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// Risk plus weighted cross-entropy: total = risk + ce_weight * mean CE.
///
/// Labels for the cross-entropy term come from the batch. Gradients are
/// returned separately for the embedding path (risk) and the classifier
/// head path (logits).
pub fn combined_loss(
    batch: &EmbeddingBatch,
    pairs: &PairSets,
    bins: usize,
    logits: &Matrix,
    cfg: &CombinedLossConfig,
) -> Result<CombinedLoss> {
    if cfg.ce_weight < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "ce_weight must be non-negative, got {}",
            cfg.ce_weight
        )));
    }
    if logits.rows() != batch.len() {
        return Err(Error::DimensionMismatch {
            context: "combined_loss logits rows",
            expected: batch.len(),
            got: logits.rows(),
        });
    }
    if logits.cols() != cfg.num_classes {
        return Err(Error::DimensionMismatch {
            context: "combined_loss logits cols",
            expected: cfg.num_classes,
            got: logits.cols(),
        });
    }
    let rv = brm_backward(batch, pairs, bins)?;
    let (ce, mut grad_logits) = softmax_cross_entropy(logits, batch.labels())?;
    for g in grad_logits.data_mut() {
        *g *= cfg.ce_weight;
    }
    Ok(CombinedLoss {
        total: rv.risk + cfg.ce_weight * ce,
        risk: rv.risk,
        cross_entropy: ce,
        grad_embeddings: rv.grad_embeddings,
        grad_logits,
    })
}
