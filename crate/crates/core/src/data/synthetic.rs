//! Synthetic Gaussian-cluster datasets with a balanced held-out test set.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::rng::{stage, Domain};
use crate::scalar::{real, Scalar};

/// Parameters of the synthetic generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of samples around their class center.
    pub cluster_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            feature_dim: 16,
            train_per_class: 150,
            test_per_class: 40,
            cluster_spread: 0.8,
            seed: 0,
        }
    }
}

/// A labeled dataset with train samples and a per-class balanced test set.
#[derive(Debug, Clone)]
pub struct GlobalDataset<S> {
    pub train_x: Matrix<S>,
    pub train_y: Vec<usize>,
    pub test_x: Matrix<S>,
    pub test_y: Vec<usize>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

/// Draw `num_classes` Gaussian clusters with fixed random centers; train
/// samples are class-major, and a balanced test set is held out per class.
pub fn generate_synthetic<S: Scalar>(spec: &SyntheticSpec) -> GlobalDataset<S> {
    let mut rng = stage(spec.seed, Domain::Data);
    let d = spec.feature_dim;
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    fn draw<S: Scalar>(center: &[f64], spread: f64, rng: &mut impl Rng) -> Vec<S> {
        center
            .iter()
            .map(|c| {
                let noise: f64 = StandardNormal.sample(rng);
                real::<S>(c + spread * noise)
            })
            .collect()
    }

    let mut train_rows = Vec::with_capacity(spec.num_classes * spec.train_per_class);
    let mut train_y = Vec::with_capacity(train_rows.capacity());
    let mut test_rows = Vec::with_capacity(spec.num_classes * spec.test_per_class);
    let mut test_y = Vec::with_capacity(test_rows.capacity());
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.train_per_class {
            train_rows.push(draw::<S>(center, spec.cluster_spread, &mut rng));
            train_y.push(class);
        }
        for _ in 0..spec.test_per_class {
            test_rows.push(draw::<S>(center, spec.cluster_spread, &mut rng));
            test_y.push(class);
        }
    }
    GlobalDataset {
        train_x: Matrix::from_rows(&train_rows).unwrap(),
        train_y,
        test_x: Matrix::from_rows(&test_rows).unwrap(),
        test_y,
        num_classes: spec.num_classes,
        feature_dim: d,
    }
}

impl<S: Scalar> GlobalDataset<S> {
    /// Indices of train samples belonging to `class`, in dataset order.
    pub fn train_indices_of_class(&self, class: usize) -> Vec<usize> {
        self.train_y
            .iter()
            .enumerate()
            .filter(|(_, y)| **y == class)
            .map(|(i, _)| i)
            .collect()
    }
}
