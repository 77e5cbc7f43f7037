//! Query-class selection among a client's under-represented classes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::scalar::Scalar;

use super::partition::ClientDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Single,
    Multi,
}

/// A student's query: the classes it wants to learn or improve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySpec {
    pub student_id: usize,
    /// Query classes, sorted ascending.
    pub classes: Vec<usize>,
    pub sample_threshold: usize,
    pub mode: QueryMode,
}

/// Pick query classes uniformly among the classes with fewer than
/// `sample_threshold` samples in the client's data.
///
/// `single` picks one class; `multi` picks a uniform count in
/// `2..=min(4, eligible)` (degrading to one when only one class is
/// eligible), then samples without replacement.
pub fn select_query<S: Scalar>(
    client: &ClientDataset<S>,
    num_classes: usize,
    mode: QueryMode,
    sample_threshold: usize,
    seed: u64,
) -> Result<QuerySpec> {
    let eligible: Vec<usize> = (0..num_classes)
        .filter(|c| client.class_counts.get(c).copied().unwrap_or(0) < sample_threshold)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleClass {
            client_id: client.client_id,
            threshold: sample_threshold,
        });
    }
    let mut rng = stream(seed, Domain::Query, client.client_id as u64, 0);
    let mut classes = match mode {
        QueryMode::Single => vec![eligible[rng.random_range(0..eligible.len())]],
        QueryMode::Multi => {
            let max_count = eligible.len().min(4);
            let count = if eligible.len() < 2 {
                1
            } else {
                rng.random_range(2..=max_count)
            };
            let mut pool = eligible.clone();
            pool.shuffle(&mut rng);
            pool.truncate(count);
            pool
        }
    };
    classes.sort_unstable();
    Ok(QuerySpec {
        student_id: client.client_id,
        classes,
        sample_threshold,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use std::collections::BTreeMap;

    fn client_with_counts(counts: &[(usize, usize)]) -> ClientDataset<f64> {
        let mut class_counts = BTreeMap::new();
        let mut y = Vec::new();
        for &(class, n) in counts {
            class_counts.insert(class, n);
            y.extend(std::iter::repeat(class).take(n));
        }
        let n = y.len();
        ClientDataset {
            client_id: 0,
            x: Matrix::zeros(n, 1),
            y,
            source_indices: (0..n).collect(),
            class_counts,
            train_idx: (0..n).collect(),
            val_idx: Vec::new(),
            test_idx: Vec::new(),
        }
    }

    #[test]
    fn only_under_threshold_classes_are_eligible() {
        let client = client_with_counts(&[(0, 100), (1, 0), (2, 3)]);
        for seed in 0..20 {
            let q = select_query(&client, 3, QueryMode::Single, 50, seed).unwrap();
            assert_eq!(q.classes.len(), 1);
            assert!(q.classes[0] == 1 || q.classes[0] == 2);
        }
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let client = client_with_counts(&[(0, 100)]);
        let q = select_query(&client, 4, QueryMode::Single, 50, 1).unwrap();
        assert_ne!(q.classes[0], 0);
    }

    #[test]
    fn saturated_client_is_an_error() {
        let client = client_with_counts(&[(0, 60), (1, 70)]);
        let err = select_query(&client, 2, QueryMode::Single, 50, 0);
        assert!(matches!(err, Err(Error::NoEligibleClass { threshold: 50, .. })));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let client = client_with_counts(&[(0, 100), (1, 0), (2, 0), (3, 10), (4, 2)]);
        let a = select_query(&client, 5, QueryMode::Multi, 50, 7).unwrap();
        let b = select_query(&client, 5, QueryMode::Multi, 50, 7).unwrap();
        assert_eq!(a.classes, b.classes);
    }

    #[test]
    fn multi_mode_picks_two_to_four_distinct_classes() {
        let client = client_with_counts(&[(0, 100), (1, 0), (2, 0), (3, 10), (4, 2), (5, 1), (6, 0)]);
        for seed in 0..30 {
            let q = select_query(&client, 7, QueryMode::Multi, 50, seed).unwrap();
            assert!((2..=4).contains(&q.classes.len()), "got {:?}", q.classes);
            let unique: std::collections::BTreeSet<_> = q.classes.iter().collect();
            assert_eq!(unique.len(), q.classes.len());
            assert!(q.classes.windows(2).all(|w| w[0] < w[1]), "sorted");
        }
    }

    #[test]
    fn multi_mode_degrades_to_one_when_only_one_eligible() {
        let client = client_with_counts(&[(0, 100), (1, 100), (2, 3)]);
        let q = select_query(&client, 3, QueryMode::Multi, 50, 0).unwrap();
        assert_eq!(q.classes, vec![2]);
    }
}
