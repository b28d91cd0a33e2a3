//! Embedding quality metrics: k-NN classification, top-k accuracy,
//! retrieval recall@K, and a linear one-vs-rest hinge classifier.
//!
//! Every tie is broken deterministically: equal distances resolve to the
//! lowest sample index, equal votes and equal scores to the smallest class
//! label. All distances are the negative cosine used everywhere else.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::pairs::EmbeddingBatch;

/// Aggregate classification/retrieval metrics for one evaluation run.
///
/// `confusion[t][p]` counts samples of true class t predicted as p; row
/// sums therefore equal per-class sample counts, and trace / total equals
/// top-1 accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Classifies each query row by majority vote among its k nearest
/// training rows (negative cosine distance). Queries are plain rows, not
/// a batch: a single query is fine.
pub fn knn_classify(train: &EmbeddingBatch, queries: &Matrix, k: usize) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidConfig(format!(
            "k must lie in 1..={}, got {k}",
            train.len()
        )));
    }
    if train.dim() != queries.cols() {
        return Err(Error::DimensionMismatch {
            context: "knn_classify embedding width",
            expected: train.dim(),
            got: queries.cols(),
        });
    }

    let max_label = train.labels().iter().copied().max().unwrap_or(0);
    let mut predictions = Vec::with_capacity(queries.rows());
    for qi in 0..queries.rows() {
        let mut order: Vec<(f64, usize)> = (0..train.len())
            .map(|ti| {
                let d = (-dot(queries.row(qi), train.row(ti))).clamp(-1.0, 1.0);
                (d, ti)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut votes = vec![0usize; max_label + 1];
        for &(_, ti) in order.iter().take(k) {
            votes[train.labels()[ti]] += 1;
        }
        let mut winner = 0;
        for (label, &count) in votes.iter().enumerate() {
            if count > votes[winner] {
                winner = label;
            }
        }
        predictions.push(winner);
    }
    Ok(predictions)
}

/// Fraction of rows whose true label ranks among the k highest scores.
///
/// A class ranks ahead of the true label if its score is strictly higher,
/// or equal with a smaller class index.
pub fn topk_accuracy(scores: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    let (n, c) = (scores.rows(), scores.cols());
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "topk_accuracy labels",
            expected: n,
            got: labels.len(),
        });
    }
    if k == 0 || k > c {
        return Err(Error::InvalidConfig(format!(
            "k must lie in 1..={c}, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("topk_accuracy scores"));
    }
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
            });
        }
        let row = scores.row(i);
        let ahead = (0..c)
            .filter(|&j| row[j] > row[y] || (row[j] == row[y] && j < y))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Fraction of samples with a same-class sample among their K nearest
/// neighbors, self excluded. K larger than n - 1 uses every other sample.
pub fn recall_at_k(batch: &EmbeddingBatch, k: usize) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: n });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("recall@K needs K >= 1".into()));
    }
    let k = k.min(n - 1);
    let mut hits = 0usize;
    for i in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = (-dot(batch.row(i), batch.row(j))).clamp(-1.0, 1.0);
                (d, j)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        if order
            .iter()
            .take(k)
            .any(|&(_, j)| batch.labels()[j] == batch.labels()[i])
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// A trained one-vs-rest linear classifier.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    /// C x D weight matrix, one row per class.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl LinearClassifier {
    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    /// Raw decision scores, one row per input sample.
    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        let mut s = features.matmul_transpose(&self.weights)?;
        for i in 0..s.rows() {
            for (v, b) in s.row_mut(i).iter_mut().zip(&self.biases) {
                *v += *b;
            }
        }
        Ok(s)
    }

    /// Argmax of the scores, ties to the smallest class index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let s = self.scores(features)?;
        Ok((0..s.rows())
            .map(|i| {
                let row = s.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

pub const CLASSIFIER_DEFAULT_EPOCHS: usize = 100;
pub const CLASSIFIER_DEFAULT_REG: f64 = 1e-4;

/// Trains a one-vs-rest linear classifier with full-batch subgradient
/// descent on the L2-regularized hinge loss.
///
/// Step schedule: eta_t = base / (1 + t / 50) with base = min(0.5, 0.5 /
/// lambda), which keeps the regularizer contraction (1 - 2 eta lambda)
/// stable for any lambda. Weights start at zero and no randomness is
/// involved, so results are fully deterministic. The bias is not
/// regularized.
pub fn linear_classifier_train(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    epochs: usize,
    reg: f64,
) -> Result<LinearClassifier> {
    let (n, d) = (features.rows(), features.cols());
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "linear_classifier_train labels",
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("linear_classifier_train features"));
    }
    if !features.is_finite() {
        return Err(Error::InvalidConfig(
            "classifier features contain non-finite values".into(),
        ));
    }
    if reg < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "regularization must be non-negative, got {reg}"
        )));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if classes < 2 || distinct.len() < 2 {
        return Err(Error::SingleClass);
    }
    for &label in labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }

    let base = if reg > 0.0 { (0.5 / reg).min(0.5) } else { 0.5 };
    let mut weights = Matrix::zeros(classes, d);
    let mut biases = vec![0.0; classes];
    for t in 0..epochs {
        let eta = base / (1.0 + t as f64 / 50.0);
        let scores = LinearClassifier {
            weights: weights.clone(),
            biases: biases.clone(),
        }
        .scores(features)?;
        for (c, bias) in biases.iter_mut().enumerate() {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let y = if label == c { 1.0 } else { -1.0 };
                if y * scores.get(i, c) < 1.0 {
                    for (g, &x) in gw.iter_mut().zip(features.row(i)) {
                        *g -= y * x / n as f64;
                    }
                    gb -= y / n as f64;
                }
            }
            for (w, g) in weights.row_mut(c).iter_mut().zip(&gw) {
                *w -= eta * (*g + 2.0 * reg * *w);
            }
            *bias -= eta * gb;
        }
    }
    Ok(LinearClassifier { weights, biases })
}

/// Mean hinge loss of a classifier over a labeled set (diagnostic only).
pub fn hinge_loss(clf: &LinearClassifier, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let scores = clf.scores(features)?;
    let n = features.rows();
    let mut total = 0.0;
    for c in 0..clf.num_classes() {
        for (i, &label) in labels.iter().enumerate() {
            let y = if label == c { 1.0 } else { -1.0 };
            total += (1.0 - y * scores.get(i, c)).max(0.0);
        }
    }
    Ok(total / (n * clf.num_classes()) as f64)
}

/// Builds an [`EvalReport`] from classifier scores and retrieval recalls.
///
/// Top-3/top-5 are computed with k capped at the class count so few-class
/// problems still produce a full report.
pub fn eval_report(
    scores: &Matrix,
    labels: &[usize],
    classes: usize,
    recall_at: BTreeMap<usize, f64>,
) -> Result<EvalReport> {
    if scores.cols() != classes {
        return Err(Error::DimensionMismatch {
            context: "eval_report score columns",
            expected: classes,
            got: scores.cols(),
        });
    }
    let top1 = topk_accuracy(scores, labels, 1)?;
    let top3 = topk_accuracy(scores, labels, 3.min(classes))?;
    let top5 = topk_accuracy(scores, labels, 5.min(classes))?;

    let mut confusion = vec![vec![0usize; classes]; classes];
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let mut pred = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[pred] {
                pred = j;
            }
        }
        confusion[labels[i]][pred] += 1;
    }
    let per_class_accuracy: Vec<f64> = (0..classes)
        .map(|c| {
            let total: usize = confusion[c].iter().sum();
            if total == 0 {
                0.0
            } else {
                confusion[c][c] as f64 / total as f64
            }
        })
        .collect();
    Ok(EvalReport {
        top1,
        top3,
        top5,
        recall_at,
        per_class_accuracy,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::l2_normalize;
    use crate::rng::Rng;

    fn batch(rows: &[Vec<f64>], labels: &[usize]) -> EmbeddingBatch {
        let normalized: Vec<Vec<f64>> = rows.iter().map(|r| l2_normalize(r).unwrap()).collect();
        EmbeddingBatch::new(Matrix::from_rows(&normalized).unwrap(), labels.to_vec()).unwrap()
    }

    fn queries(rows: &[Vec<f64>]) -> Matrix {
        let normalized: Vec<Vec<f64>> = rows.iter().map(|r| l2_normalize(r).unwrap()).collect();
        Matrix::from_rows(&normalized).unwrap()
    }

    fn random_batch(rng: &mut Rng, n: usize, dim: usize, classes: usize) -> EmbeddingBatch {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        batch(&rows, &labels)
    }

    #[test]
    fn knn_exact_match_wins_at_k1() {
        let train = batch(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            &[0, 1, 2],
        );
        let test = queries(&[vec![0.0, 1.0]]);
        assert_eq!(knn_classify(&train, &test, 1).unwrap(), vec![1]);
    }

    #[test]
    fn knn_full_k_is_global_majority() {
        let train = batch(
            &[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]],
            &[2, 2, 0],
        );
        let test = queries(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(knn_classify(&train, &test, 3).unwrap(), vec![2, 2]);
    }

    #[test]
    fn knn_vote_tie_prefers_smaller_label() {
        let train = batch(
            &[
                vec![1.0, 0.0],
                vec![1.0, 0.1],
                vec![0.0, 1.0],
                vec![0.1, 1.0],
            ],
            &[3, 3, 1, 1],
        );
        let test = queries(&[vec![1.0, 1.0]]);
        assert_eq!(knn_classify(&train, &test, 4).unwrap(), vec![1]);
    }

    #[test]
    fn knn_distance_tie_prefers_lower_index() {
        let train = batch(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[1, 0]);
        let test = queries(&[vec![1.0, 0.0]]);
        assert_eq!(knn_classify(&train, &test, 1).unwrap(), vec![1]);
    }

    /// Slow re-derivation: repeatedly extract the closest remaining
    /// neighbor, then count votes with an explicit scan.
    fn knn_oracle(train: &EmbeddingBatch, test: &Matrix, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for qi in 0..test.rows() {
            let mut remaining: Vec<usize> = (0..train.len()).collect();
            let mut picked = Vec::new();
            for _ in 0..k {
                let mut best_pos = 0;
                for pos in 1..remaining.len() {
                    let d_best = -dot(test.row(qi), train.row(remaining[best_pos]));
                    let d_cur = -dot(test.row(qi), train.row(remaining[pos]));
                    if d_cur < d_best || (d_cur == d_best && remaining[pos] < remaining[best_pos]) {
                        best_pos = pos;
                    }
                }
                picked.push(remaining.remove(best_pos));
            }
            let max_label = train.labels().iter().copied().max().unwrap();
            let mut best_label = 0;
            let mut best_count = 0;
            for label in 0..=max_label {
                let count = picked
                    .iter()
                    .filter(|&&ti| train.labels()[ti] == label)
                    .count();
                if count > best_count {
                    best_count = count;
                    best_label = label;
                }
            }
            out.push(best_label);
        }
        out
    }

    #[test]
    fn knn_matches_oracle_on_random_sets() {
        let mut rng = Rng::new(501);
        for _ in 0..10 {
            let train = random_batch(&mut rng, 20, 4, 4);
            let test = random_batch(&mut rng, 8, 4, 4);
            for k in [1, 3, 7, 20] {
                assert_eq!(
                    knn_classify(&train, test.embeddings(), k).unwrap(),
                    knn_oracle(&train, test.embeddings(), k)
                );
            }
        }
    }

    #[test]
    fn knn_predictions_survive_rotation() {
        // Householder reflection: orthogonal, preserves all dot products
        let mut rng = Rng::new(503);
        let dim = 5;
        let v = l2_normalize(&(0..dim).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap();
        let reflect = |row: &[f64]| -> Vec<f64> {
            let proj = 2.0 * dot(row, &v);
            row.iter().zip(&v).map(|(&x, &vi)| x - proj * vi).collect()
        };
        let train = random_batch(&mut rng, 15, dim, 3);
        let test = random_batch(&mut rng, 6, dim, 3);
        let rotate = |b: &EmbeddingBatch| {
            let rows: Vec<Vec<f64>> = (0..b.len()).map(|i| reflect(b.row(i))).collect();
            batch(&rows, b.labels())
        };
        let (rtrain, rtest) = (rotate(&train), rotate(&test));
        for k in [1, 3, 5] {
            assert_eq!(
                knn_classify(&train, test.embeddings(), k).unwrap(),
                knn_classify(&rtrain, rtest.embeddings(), k).unwrap()
            );
        }
    }

    #[test]
    fn topk_trivial_cases() {
        let mut rng = Rng::new(507);
        let scores = Matrix::from_vec(6, 4, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let labels = vec![0, 1, 2, 3, 0, 1];
        assert_eq!(topk_accuracy(&scores, &labels, 4).unwrap(), 1.0);

        let mut onehot = Matrix::zeros(3, 4);
        for (i, &y) in [1usize, 3, 0].iter().enumerate() {
            onehot.set(i, y, 1.0);
        }
        assert_eq!(topk_accuracy(&onehot, &[1, 3, 0], 1).unwrap(), 1.0);
    }

    #[test]
    fn topk_score_ties_prefer_lower_class() {
        let scores = Matrix::from_rows(&[vec![0.5, 0.9, 0.5]]).unwrap();
        // class 1 leads; the 0-vs-2 tie goes to class 0, so label 2 misses top-2
        assert_eq!(topk_accuracy(&scores, &[2], 2).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&scores, &[0], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&scores, &[2], 3).unwrap(), 1.0);
    }

    #[test]
    fn topk_matches_sort_oracle() {
        let mut rng = Rng::new(509);
        for _ in 0..20 {
            let (n, c) = (12, 5);
            let scores =
                Matrix::from_vec(n, c, (0..n * c).map(|_| rng.normal()).collect()).unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            for k in 1..=c {
                let mut hits = 0;
                for (i, label) in labels.iter().enumerate() {
                    let mut order: Vec<usize> = (0..c).collect();
                    order.sort_by(|&a, &b| {
                        scores
                            .get(i, b)
                            .partial_cmp(&scores.get(i, a))
                            .unwrap()
                            .then(a.cmp(&b))
                    });
                    if order[..k].contains(label) {
                        hits += 1;
                    }
                }
                let expect = hits as f64 / n as f64;
                assert_eq!(topk_accuracy(&scores, &labels, k).unwrap(), expect);
            }
        }
    }

    #[test]
    fn recall_trivial_cases() {
        let pair = batch(&[vec![1.0, 0.0], vec![0.9, 0.1]], &[4, 4]);
        assert_eq!(recall_at_k(&pair, 1).unwrap(), 1.0);

        let singletons = batch(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            &[0, 1, 2],
        );
        assert_eq!(recall_at_k(&singletons, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&singletons, 2).unwrap(), 0.0);
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let mut rng = Rng::new(511);
        for _ in 0..10 {
            let b = random_batch(&mut rng, 16, 4, 3);
            let mut last = 0.0;
            for k in 1..16 {
                let r = recall_at_k(&b, k).unwrap();
                assert!(r >= last, "recall fell from {last} to {r} at K={k}");
                last = r;
            }
        }
    }

    #[test]
    fn recall_matches_brute_force() {
        let mut rng = Rng::new(513);
        for _ in 0..10 {
            let b = random_batch(&mut rng, 12, 4, 3);
            for k in [1, 2, 4, 8] {
                let mut hits = 0;
                for i in 0..b.len() {
                    let mut others: Vec<usize> = (0..b.len()).filter(|&j| j != i).collect();
                    others.sort_by(|&x, &y| {
                        let dx = -dot(b.row(i), b.row(x));
                        let dy = -dot(b.row(i), b.row(y));
                        dx.partial_cmp(&dy).unwrap().then(x.cmp(&y))
                    });
                    if others[..k].iter().any(|&j| b.labels()[j] == b.labels()[i]) {
                        hits += 1;
                    }
                }
                let expect = hits as f64 / b.len() as f64;
                assert_eq!(recall_at_k(&b, k).unwrap(), expect);
            }
        }
    }

    #[test]
    fn classifier_fits_separable_line() {
        let features = Matrix::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]).unwrap();
        let labels = vec![0, 0, 1, 1];
        let clf = linear_classifier_train(&features, &labels, 2, 500, 1e-6).unwrap();
        assert_eq!(clf.predict(&features).unwrap(), labels);
        assert!(hinge_loss(&clf, &features, &labels).unwrap() < 1e-2);
    }

    #[test]
    fn classifier_heavy_regularization_collapses_to_majority() {
        let features = Matrix::from_rows(&[
            vec![-2.0],
            vec![-1.5],
            vec![-1.0],
            vec![1.0],
            vec![1.5],
            vec![2.0],
        ])
        .unwrap();
        let labels = vec![0, 0, 0, 0, 1, 1];
        let clf = linear_classifier_train(&features, &labels, 2, 200, 1e3).unwrap();
        let max_w = clf
            .weights
            .data()
            .iter()
            .fold(0.0f64, |acc, &w| acc.max(w.abs()));
        assert!(max_w < 1e-2, "weights did not shrink: {max_w}");
        let preds = clf.predict(&features).unwrap();
        assert!(
            preds.iter().all(|&p| p == 0),
            "expected majority class, got {preds:?}"
        );
    }

    #[test]
    fn classifier_separates_gaussian_blobs() {
        let mut rng = Rng::new(517);
        let ds = crate::data::gen_synthetic(&mut rng, 4, 50, 8, 0.02).unwrap();
        // deterministic 80/20 split: every 5th sample held out
        let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
        for i in 0..ds.len() {
            if i % 5 == 4 {
                test_idx.push(i);
            } else {
                train_idx.push(i);
            }
        }
        let (train_x, train_y) = ds.select(&train_idx);
        let (test_x, test_y) = ds.select(&test_idx);
        let clf = linear_classifier_train(&train_x, &train_y, 4, 100, 1e-4).unwrap();
        let preds = clf.predict(&test_x).unwrap();
        let correct = preds.iter().zip(&test_y).filter(|(p, y)| p == y).count();
        let accuracy = correct as f64 / test_y.len() as f64;
        assert!(accuracy >= 0.99, "held-out accuracy {accuracy}");
    }

    #[test]
    fn classifier_rejects_single_class() {
        let features = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            linear_classifier_train(&features, &[3, 3], 4, 10, 1e-4),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn report_confusion_is_consistent() {
        let mut rng = Rng::new(519);
        let (n, c) = (40, 5);
        let scores = Matrix::from_vec(n, c, (0..n * c).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let report = eval_report(&scores, &labels, c, BTreeMap::new()).unwrap();

        let trace: usize = (0..c).map(|i| report.confusion[i][i]).sum();
        let total: usize = report.confusion.iter().flatten().sum();
        assert_eq!(total, n);
        assert_eq!(trace as f64 / total as f64, report.top1);
        for (t, row) in report.confusion.iter().enumerate() {
            let expect = labels.iter().filter(|&&y| y == t).count();
            assert_eq!(row.iter().sum::<usize>(), expect);
        }
        assert!(report.top1 <= report.top3 && report.top3 <= report.top5);
    }

    #[test]
    fn report_serializes_round_trip() {
        let report = EvalReport {
            top1: 0.9,
            top3: 0.95,
            top5: 1.0,
            recall_at: [(1, 0.875), (2, 0.9375)].into_iter().collect(),
            per_class_accuracy: vec![1.0, 0.8],
            confusion: vec![vec![5, 0], vec![1, 4]],
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
