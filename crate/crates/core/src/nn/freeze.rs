//! Per-parameter freeze flags (`true` = trainable, `false` = frozen).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskLayer {
    pub weights: Vec<bool>,
    pub bias: Vec<bool>,
}

/// Binary trainability flags, shape-matched to a model.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeMask {
    pub layers: Vec<MaskLayer>,
}

impl FreezeMask {
    fn filled<S: Scalar>(model: &ModelParams<S>, value: bool) -> Self {
        FreezeMask {
            layers: model
                .layers()
                .iter()
                .map(|l| MaskLayer {
                    weights: vec![value; l.weights.data().len()],
                    bias: vec![value; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn all_trainable<S: Scalar>(model: &ModelParams<S>) -> Self {
        Self::filled(model, true)
    }

    pub fn all_frozen<S: Scalar>(model: &ModelParams<S>) -> Self {
        Self::filled(model, false)
    }

    /// Freeze every feature-extractor parameter, leaving the head trainable.
    pub fn extractor_frozen<S: Scalar>(model: &ModelParams<S>) -> Self {
        let mut mask = Self::all_trainable(model);
        for layer in &mut mask.layers[..model.split_index()] {
            layer.weights.fill(false);
            layer.bias.fill(false);
        }
        mask
    }

    /// Entry is trainable only if trainable in both masks.
    pub fn intersect(&self, other: &FreezeMask) -> Result<FreezeMask> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("freeze mask layers", self.layers.len(), other.layers.len()));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| MaskLayer {
                weights: a.weights.iter().zip(&b.weights).map(|(x, y)| *x && *y).collect(),
                bias: a.bias.iter().zip(&b.bias).map(|(x, y)| *x && *y).collect(),
            })
            .collect();
        Ok(FreezeMask { layers })
    }

    /// Check the mask shape against a model.
    pub fn matches<S: Scalar>(&self, model: &ModelParams<S>) -> bool {
        self.layers.len() == model.layers().len()
            && self.layers.iter().zip(model.layers()).all(|(m, l)| {
                m.weights.len() == l.weights.data().len() && m.bias.len() == l.bias.len()
            })
    }

    /// Trainability of the parameter addressed by `(layer, flat index)`,
    /// weights first then bias.
    pub fn is_trainable(&self, layer: usize, flat: usize) -> bool {
        let l = &self.layers[layer];
        if flat < l.weights.len() {
            l.weights[flat]
        } else {
            l.bias[flat - l.weights.len()]
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).filter(|t| **t).count())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, ModelParams};
    use crate::rng;

    #[test]
    fn extractor_frozen_keeps_head_trainable() {
        let mut rng = rng::stage(0, rng::Domain::Init);
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![4],
            num_classes: 2,
            split_index: None,
        };
        let model = ModelParams::<f64>::init(&arch, &mut rng).unwrap();
        let mask = FreezeMask::extractor_frozen(&model);
        assert!(mask.layers[0].weights.iter().all(|t| !t));
        assert!(mask.layers[1].weights.iter().all(|t| *t));
        assert!(mask.matches(&model));
    }

    #[test]
    fn intersect_is_logical_and() {
        let mut rng = rng::stage(0, rng::Domain::Init);
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![],
            num_classes: 2,
            split_index: None,
        };
        let model = ModelParams::<f64>::init(&arch, &mut rng).unwrap();
        let a = FreezeMask::all_trainable(&model);
        let b = FreezeMask::all_frozen(&model);
        let c = a.intersect(&b).unwrap();
        assert_eq!(c, b);
    }
}
