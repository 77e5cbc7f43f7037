//! Evaluation metrics: per-class accuracy, weighted average accuracy, query
//! accuracy gain, forgetting, uniform accuracy and noise-probe error.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::ModelParams;
use crate::scalar::Scalar;
use crate::transfer::TeacherProbe;

/// Per-class accuracy from predicted labels; classes without test samples
/// are absent from the map.
pub fn per_class_accuracy_of_labels(predicted: &[usize], test_y: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if test_y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if predicted.len() != test_y.len() {
        return Err(Error::shape("predictions", test_y.len(), predicted.len()));
    }
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &y) in predicted.iter().zip(test_y) {
        let e = totals.entry(y).or_insert((0, 0));
        e.0 += usize::from(p == y);
        e.1 += 1;
    }
    Ok(totals
        .into_iter()
        .map(|(class, (hit, total))| (class, hit as f64 / total as f64))
        .collect())
}

/// Overall accuracy of a model on a labeled set.
pub fn accuracy<S: Scalar>(model: &ModelParams<S>, x: &Matrix<S>, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let predicted = model.predict_labels(x)?;
    let hits = predicted.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Per-class accuracy of a model on a test set.
pub fn per_class_accuracy<S: Scalar>(
    model: &ModelParams<S>,
    test_x: &Matrix<S>,
    test_y: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if test_y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let predicted = model.predict_labels(test_x)?;
    per_class_accuracy_of_labels(&predicted, test_y)
}

/// Metric weights over the local and query classes: local classes weigh
/// their ratio in the local training data, query classes weigh 1 (query
/// membership wins when a class is both).
pub fn class_weights(local_train_counts: &BTreeMap<usize, usize>, query: &[usize]) -> BTreeMap<usize, f64> {
    let total: usize = local_train_counts.values().sum();
    let mut weights = BTreeMap::new();
    if total > 0 {
        for (&class, &count) in local_train_counts {
            if count > 0 {
                weights.insert(class, count as f64 / total as f64);
            }
        }
    }
    for &q in query {
        weights.insert(q, 1.0);
    }
    weights
}

/// Weighted average of per-class accuracy over the local and query classes,
/// normalized by the weight sum.
pub fn average_accuracy(
    per_class: &BTreeMap<usize, f64>,
    local_train_counts: &BTreeMap<usize, usize>,
    query: &[usize],
) -> Result<f64> {
    let weights = class_weights(local_train_counts, query);
    let mut num = 0.0;
    let mut den = 0.0;
    for (class, w) in &weights {
        if let Some(acc) = per_class.get(class) {
            num += w * acc;
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::Data("no local or query class has test samples".into()));
    }
    Ok(num / den)
}

/// Mean accuracy change on the query classes.
pub fn query_acc_gain(
    pre: &BTreeMap<usize, f64>,
    post: &BTreeMap<usize, f64>,
    query: &[usize],
) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for q in query {
        let a = pre.get(q).copied().unwrap_or(0.0);
        let b = post.get(q).copied().unwrap_or(0.0);
        total += b - a;
    }
    total / query.len() as f64
}

/// Mean negative-part accuracy change on the local classes (always <= 0;
/// improvements never offset drops).
pub fn forgetting(
    pre: &BTreeMap<usize, f64>,
    post: &BTreeMap<usize, f64>,
    local_classes: &BTreeSet<usize>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for class in local_classes {
        if let (Some(a), Some(b)) = (pre.get(class), post.get(class)) {
            total += (b - a).min(0.0);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Unweighted mean per-class accuracy over every class with test data.
pub fn uniform_accuracy(per_class: &BTreeMap<usize, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::Data("per-class accuracy map is empty".into()));
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Mean squared error between a teacher's noise probe and the normalized
/// class distribution of its training data, over all classes.
pub fn probe_mse<S: Scalar>(
    probe: &TeacherProbe<S>,
    actual_counts: &BTreeMap<usize, usize>,
    num_classes: usize,
) -> f64 {
    let total: usize = actual_counts.values().sum();
    let mut mse = 0.0;
    for class in 0..num_classes {
        let actual = if total == 0 {
            0.0
        } else {
            actual_counts.get(&class).copied().unwrap_or(0) as f64 / total as f64
        };
        let predicted = probe.avg_probs.get(class).map_or(0.0, |p| p.to_f64().unwrap());
        let diff = predicted - actual;
        mse += diff * diff;
    }
    mse / num_classes as f64
}

/// Full per-client evaluation record for one protocol run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub client_id: usize,
    pub protocol: String,
    pub query_classes: Vec<usize>,
    pub per_class_acc_pre: BTreeMap<usize, f64>,
    pub per_class_acc_post: BTreeMap<usize, f64>,
    /// Weights used by the average-accuracy metric.
    pub weights: BTreeMap<usize, f64>,
    pub avg_acc: f64,
    pub avg_acc_pre: f64,
    pub uniform_acc: f64,
    pub uniform_acc_pre: f64,
    pub query_acc_gain: f64,
    pub forgetting: f64,
    pub comm_rounds: u32,
}

impl MetricsReport {
    /// Assemble a report from pre/post per-class accuracy.
    pub fn compute(
        client_id: usize,
        protocol: impl Into<String>,
        query_classes: &[usize],
        pre: BTreeMap<usize, f64>,
        post: BTreeMap<usize, f64>,
        local_train_counts: &BTreeMap<usize, usize>,
        comm_rounds: u32,
    ) -> Result<Self> {
        let local_classes: BTreeSet<usize> = local_train_counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&c, _)| c)
            .collect();
        let avg_acc = average_accuracy(&post, local_train_counts, query_classes)?;
        let avg_acc_pre = average_accuracy(&pre, local_train_counts, query_classes)?;
        let uniform_acc = uniform_accuracy(&post)?;
        let uniform_acc_pre = uniform_accuracy(&pre)?;
        let gain = query_acc_gain(&pre, &post, query_classes);
        let forg = forgetting(&pre, &post, &local_classes);
        Ok(MetricsReport {
            client_id,
            protocol: protocol.into(),
            query_classes: query_classes.to_vec(),
            weights: class_weights(local_train_counts, query_classes),
            per_class_acc_pre: pre,
            per_class_acc_post: post,
            avg_acc,
            avg_acc_pre,
            uniform_acc,
            uniform_acc_pre,
            query_acc_gain: gain,
            forgetting: forg,
            comm_rounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(usize, f64)]) -> BTreeMap<usize, f64> {
        pairs.iter().copied().collect()
    }

    fn counts(pairs: &[(usize, usize)]) -> BTreeMap<usize, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn constant_predictor_per_class_accuracy() {
        let predicted = vec![0, 0, 0, 0];
        let test_y = vec![0, 0, 1, 1];
        let acc = per_class_accuracy_of_labels(&predicted, &test_y).unwrap();
        assert_eq!(acc[&0], 1.0);
        assert_eq!(acc[&1], 0.0);
    }

    #[test]
    fn perfect_predictor_is_all_ones() {
        let y = vec![0, 1, 2, 1];
        let acc = per_class_accuracy_of_labels(&y, &y).unwrap();
        assert!(acc.values().all(|&a| a == 1.0));
    }

    #[test]
    fn empty_test_set_is_an_error() {
        assert!(per_class_accuracy_of_labels(&[], &[]).is_err());
    }

    #[test]
    fn average_accuracy_matches_the_worked_example() {
        // local counts {0:75, 1:25}, query {2}, accs {0:0.8, 1:0.4, 2:0.6}
        // -> (0.75*0.8 + 0.25*0.4 + 1*0.6) / (0.75 + 0.25 + 1) = 0.65
        let acc = average_accuracy(
            &map(&[(0, 0.8), (1, 0.4), (2, 0.6)]),
            &counts(&[(0, 75), (1, 25)]),
            &[2],
        )
        .unwrap();
        assert!((acc - 0.65).abs() < 1e-12);
    }

    #[test]
    fn equal_accuracies_average_to_themselves() {
        let acc = average_accuracy(
            &map(&[(0, 0.7), (1, 0.7), (5, 0.7)]),
            &counts(&[(0, 10), (1, 30)]),
            &[5],
        )
        .unwrap();
        assert!((acc - 0.7).abs() < 1e-12);
    }

    #[test]
    fn query_class_that_is_also_local_weighs_one_and_counts_once() {
        // Class 1 is local (ratio 0.25) and queried: query weight wins.
        let w = class_weights(&counts(&[(0, 75), (1, 25)]), &[1]);
        assert_eq!(w[&0], 0.75);
        assert_eq!(w[&1], 1.0);
        let acc = average_accuracy(&map(&[(0, 1.0), (1, 0.0)]), &counts(&[(0, 75), (1, 25)]), &[1]).unwrap();
        assert!((acc - 0.75 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn average_accuracy_is_bounded_by_per_class_extremes() {
        let per_class = map(&[(0, 0.2), (1, 0.9), (2, 0.5)]);
        let acc = average_accuracy(&per_class, &counts(&[(0, 5), (1, 20)]), &[2]).unwrap();
        assert!(acc >= 0.2 && acc <= 0.9);
    }

    #[test]
    fn query_gain_hand_values() {
        assert!((query_acc_gain(&map(&[(3, 0.0)]), &map(&[(3, 0.78)]), &[3]) - 0.78).abs() < 1e-12);
        assert_eq!(query_acc_gain(&map(&[(3, 0.4)]), &map(&[(3, 0.4)]), &[3]), 0.0);
        let g = query_acc_gain(&map(&[(0, 0.1), (1, 0.2)]), &map(&[(0, 0.6), (1, 0.4)]), &[0, 1]);
        assert!((g - 0.35).abs() < 1e-12);
    }

    #[test]
    fn forgetting_hand_values() {
        let local: BTreeSet<usize> = [0, 1].into();
        let f = forgetting(&map(&[(0, 0.9), (1, 0.8)]), &map(&[(0, 0.7), (1, 0.85)]), &local);
        assert!((f - (-0.10)).abs() < 1e-12);
        // No regressions -> zero.
        let f = forgetting(&map(&[(0, 0.5), (1, 0.5)]), &map(&[(0, 0.6), (1, 0.5)]), &local);
        assert_eq!(f, 0.0);
        // Total collapse -> -1.
        let f = forgetting(&map(&[(0, 1.0), (1, 1.0)]), &map(&[(0, 0.0), (1, 0.0)]), &local);
        assert_eq!(f, -1.0);
        assert!(f <= 0.0);
    }

    #[test]
    fn uniform_accuracy_hand_values() {
        assert!((uniform_accuracy(&map(&[(0, 0.5), (1, 1.0)])).unwrap() - 0.75).abs() < 1e-12);
        // Reduces to average accuracy when every weight is 1: all classes
        // queried.
        let per_class = map(&[(0, 0.3), (1, 0.6), (2, 0.9)]);
        let avg = average_accuracy(&per_class, &counts(&[]), &[0, 1, 2]).unwrap();
        let uni = uniform_accuracy(&per_class).unwrap();
        assert!((avg - uni).abs() < 1e-12);
    }

    #[test]
    fn probe_mse_hand_values() {
        let probe = TeacherProbe {
            teacher_id: 0,
            avg_probs: vec![1.0, 0.0],
            noise_batch: 20,
        };
        // Probe equals actual -> 0.
        assert_eq!(probe_mse(&probe, &counts(&[(0, 10)]), 2), 0.0);
        // Probe [1,0] vs actual [0,1] -> (1 + 1) / 2 = 1.
        assert_eq!(probe_mse(&probe, &counts(&[(1, 10)]), 2), 1.0);
    }

    #[test]
    fn report_assembles_all_fields() {
        let pre = map(&[(0, 0.9), (1, 0.8), (2, 0.0)]);
        let post = map(&[(0, 0.85), (1, 0.8), (2, 0.7)]);
        let report = MetricsReport::compute(3, "qkt", &[2], pre, post, &counts(&[(0, 60), (1, 40)]), 1).unwrap();
        assert_eq!(report.client_id, 3);
        assert!((report.query_acc_gain - 0.7).abs() < 1e-12);
        assert!((report.forgetting - (-0.025)).abs() < 1e-12);
        assert!(report.forgetting <= 0.0);
        assert!(report.avg_acc <= 1.0 && report.avg_acc >= 0.0);
        assert_eq!(report.comm_rounds, 1);
    }
}
