//! Parameter-shaped gradient container.

use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::freeze::FreezeMask;
use super::model::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct GradLayer<S> {
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
}

/// Gradients with the same shape as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<S> {
    pub layers: Vec<GradLayer<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(model: &ModelParams<S>) -> Self {
        Grads {
            layers: model
                .layers()
                .iter()
                .map(|l| GradLayer {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![S::zero(); l.out_dim()],
                })
                .collect(),
        }
    }

    /// Add `other` scaled by `factor`.
    pub fn add_scaled(&mut self, other: &Grads<S>, factor: S) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += factor * *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += factor * *y;
            }
        }
    }

    /// Zero every entry whose freeze flag marks it frozen.
    pub fn apply_freeze(&mut self, freeze: &FreezeMask) {
        for (g, m) in self.layers.iter_mut().zip(&freeze.layers) {
            for (v, trainable) in g.weights.data_mut().iter_mut().zip(&m.weights) {
                if !trainable {
                    *v = S::zero();
                }
            }
            for (v, trainable) in g.bias.iter_mut().zip(&m.bias) {
                if !trainable {
                    *v = S::zero();
                }
            }
        }
    }

    /// Largest absolute difference against `other` (same shape assumed).
    pub fn max_abs_diff(&self, other: &Grads<S>) -> f64 {
        let mut max = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a
                .weights
                .data()
                .iter()
                .chain(a.bias.iter())
                .zip(b.weights.data().iter().chain(b.bias.iter()))
            {
                let d = (*x - *y).abs().to_f64().unwrap_or(f64::INFINITY);
                if d > max {
                    max = d;
                }
            }
        }
        max
    }

    /// Visit every gradient entry as `(layer, flat index, value)` in the same
    /// order as [`ModelParams::for_each_param`].
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, S)) {
        for (li, layer) in self.layers.iter().enumerate() {
            for (pi, v) in layer.weights.data().iter().chain(layer.bias.iter()).enumerate() {
                f(li, pi, *v);
            }
        }
    }
}
