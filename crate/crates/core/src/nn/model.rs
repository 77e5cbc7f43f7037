//! Layered dense network split into a feature extractor and a classification
//! head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{real, Scalar};

use super::loss::softmax_rows;

/// One dense layer; `weights` has shape `(out_dim, in_dim)` and the layer
/// computes `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// Network architecture: hidden ReLU layers followed by a final linear layer.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// Boundary between feature extractor and classification head.
    /// Defaults to the final layer (head = last linear layer).
    pub split_index: Option<usize>,
}

/// Parameters of a dense classifier, with the layer index `split_index`
/// marking where the feature extractor ends and the classification head
/// begins (the head contains at least the final layer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    layers: Vec<DenseLayer<S>>,
    split_index: usize,
    input_dim: usize,
    num_classes: usize,
}

/// Outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward<S> {
    /// Activations entering the classification head.
    pub features: Matrix<S>,
    /// Raw final-layer outputs (temperature-independent).
    pub logits: Matrix<S>,
    /// `softmax(logits / temperature)` rows.
    pub probs: Matrix<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Build a model from explicit layers, validating dimension composition.
    pub fn new(layers: Vec<DenseLayer<S>>, split_index: usize, num_classes: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::shape("adjacent layer dims", w[0].out_dim(), w[1].in_dim()));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape(format!("layer {i} bias"), l.out_dim(), l.bias.len()));
            }
        }
        let last = layers.last().unwrap();
        if last.out_dim() != num_classes {
            return Err(Error::shape("final layer out-dim", num_classes, last.out_dim()));
        }
        if split_index >= layers.len() {
            return Err(Error::Config(format!(
                "split_index {split_index} must be < layer count {}",
                layers.len()
            )));
        }
        let input_dim = layers[0].in_dim();
        Ok(ModelParams {
            layers,
            split_index,
            input_dim,
            num_classes,
        })
    }

    /// He-uniform initialization (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero bias) from the given RNG.
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes == 0 {
            return Err(Error::Config("input_dim and num_classes must be positive".into()));
        }
        let mut dims = vec![arch.input_dim];
        dims.extend_from_slice(&arch.hidden);
        dims.push(arch.num_classes);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let data: Vec<S> = (0..fan_in * fan_out)
                .map(|_| real::<S>(rng.random_range(-limit..limit)))
                .collect();
            layers.push(DenseLayer {
                weights: Matrix::from_vec(fan_out, fan_in, data)?,
                bias: vec![S::zero(); fan_out],
            });
        }
        let split = arch.split_index.unwrap_or(layers.len() - 1);
        ModelParams::new(layers, split, arch.num_classes)
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Feature-extractor layers (before `split_index`).
    pub fn extractor(&self) -> &[DenseLayer<S>] {
        &self.layers[..self.split_index]
    }

    /// Classification-head layers (at/after `split_index`).
    pub fn head(&self) -> &[DenseLayer<S>] {
        &self.layers[self.split_index..]
    }

    /// Owned copy of the classification head.
    pub fn clone_head(&self) -> Vec<DenseLayer<S>> {
        self.head().to_vec()
    }

    /// Replace the layers at/after `split_index` with `saved_head`, leaving
    /// the feature extractor untouched.
    pub fn replace_head(&mut self, saved_head: &[DenseLayer<S>]) -> Result<()> {
        let current = self.head();
        if saved_head.len() != current.len() {
            return Err(Error::shape("head layer count", current.len(), saved_head.len()));
        }
        for (i, (new, old)) in saved_head.iter().zip(current).enumerate() {
            if new.in_dim() != old.in_dim() || new.out_dim() != old.out_dim() {
                return Err(Error::shape(
                    format!("head layer {i} dims"),
                    format!("{}x{}", old.out_dim(), old.in_dim()),
                    format!("{}x{}", new.out_dim(), new.in_dim()),
                ));
            }
        }
        for (dst, src) in self.layers[self.split_index..].iter_mut().zip(saved_head) {
            *dst = src.clone();
        }
        Ok(())
    }

    /// Post-activation outputs of every layer for a batch (ReLU on all but
    /// the final layer, which stays linear).
    pub(crate) fn forward_trace(&self, x: &Matrix<S>) -> Result<Vec<Matrix<S>>> {
        if x.cols() != self.input_dim {
            return Err(Error::shape("forward input dim", self.input_dim, x.cols()));
        }
        let n = x.rows();
        let mut outputs: Vec<Matrix<S>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = if li == 0 { x } else { &outputs[li - 1] };
            let last = li + 1 == self.layers.len();
            let mut out = Matrix::zeros(n, layer.out_dim());
            for r in 0..n {
                let in_row = input.row(r);
                let out_row = out.row_mut(r);
                for (o, out_v) in out_row.iter_mut().enumerate() {
                    let w_row = layer.weights.row(o);
                    let mut acc = layer.bias[o];
                    for (wv, xv) in w_row.iter().zip(in_row) {
                        acc += *wv * *xv;
                    }
                    *out_v = if last || acc > S::zero() { acc } else { S::zero() };
                }
            }
            if !out.is_finite() {
                return Err(Error::NonFinite { layer: li });
            }
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Forward pass: features at the extractor/head boundary, raw logits and
    /// temperature-scaled softmax probabilities.
    pub fn forward(&self, x: &Matrix<S>, temperature: S) -> Result<Forward<S>> {
        let trace = self.forward_trace(x)?;
        let features = if self.split_index == 0 {
            x.clone()
        } else {
            trace[self.split_index - 1].clone()
        };
        let logits = trace.last().unwrap().clone();
        let probs = softmax_rows(&logits, temperature);
        Ok(Forward {
            features,
            logits,
            probs,
        })
    }

    /// Softmax probabilities only.
    pub fn predict_probs(&self, x: &Matrix<S>, temperature: S) -> Result<Matrix<S>> {
        Ok(self.forward(x, temperature)?.probs)
    }

    /// Arg-max class per row.
    pub fn predict_labels(&self, x: &Matrix<S>) -> Result<Vec<usize>> {
        let probs = self.predict_probs(x, S::one())?;
        Ok(argmax_rows(&probs))
    }

    /// Visit every parameter as `(layer, flat index within layer, value)`,
    /// weights first then bias, in deterministic order.
    pub fn for_each_param(&self, mut f: impl FnMut(usize, usize, S)) {
        for (li, layer) in self.layers.iter().enumerate() {
            for (pi, v) in layer.weights.data().iter().chain(layer.bias.iter()).enumerate() {
                f(li, pi, *v);
            }
        }
    }

    /// Mutate the parameter addressed by `(layer, flat index)`.
    pub(crate) fn param_mut(&mut self, layer: usize, flat: usize) -> &mut S {
        let l = &mut self.layers[layer];
        let nw = l.weights.data().len();
        if flat < nw {
            &mut l.weights.data_mut()[flat]
        } else {
            &mut l.bias[flat - nw]
        }
    }

    /// Bitwise equality of the feature-extractor parameters.
    pub fn extractor_bits_eq(&self, other: &Self) -> bool {
        if self.split_index != other.split_index {
            return false;
        }
        layers_bits_eq(self.extractor(), other.extractor())
    }
}

/// Bitwise (not tolerance-based) equality of two layer stacks.
pub fn layers_bits_eq<S: Scalar>(a: &[DenseLayer<S>], b: &[DenseLayer<S>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(la, lb)| {
            la.weights.rows() == lb.weights.rows()
                && la.weights.cols() == lb.weights.cols()
                && la.weights
                    .data()
                    .iter()
                    .zip(lb.weights.data())
                    .all(|(x, y)| bits_eq(*x, *y))
                && la.bias.len() == lb.bias.len()
                && la.bias.iter().zip(&lb.bias).all(|(x, y)| bits_eq(*x, *y))
        })
}

#[inline]
fn bits_eq<S: Scalar>(a: S, b: S) -> bool {
    // Scalar is f32/f64; compare via the f64 image which is exact for both.
    a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits)
}

/// Arg-max column per row (ties resolve to the lowest index).
pub fn argmax_rows<S: Scalar>(m: &Matrix<S>) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn identity_model() -> ModelParams<f64> {
        // Single 2x2 identity layer, zero bias, split 0 (head = whole model).
        let layer = DenseLayer {
            weights: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        ModelParams::new(vec![layer], 0, 2).unwrap()
    }

    #[test]
    fn symmetric_logits_give_uniform_probs() {
        let model = identity_model();
        let x = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let out = model.forward(&x, 1.0).unwrap();
        assert_eq!(out.probs.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn probs_rows_sum_to_one() {
        let mut rng = rng::stage(11, rng::Domain::Init);
        let arch = Architecture {
            input_dim: 5,
            hidden: vec![8, 6],
            num_classes: 4,
            split_index: None,
        };
        let model = ModelParams::<f64>::init(&arch, &mut rng).unwrap();
        let x = Matrix::from_vec(3, 5, (0..15).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap();
        let out = model.forward(&x, 1.0).unwrap();
        for row in out.probs.iter_rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let model = identity_model();
        let x = Matrix::from_vec(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(model.forward(&x, 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn replace_head_keeps_extractor_and_changes_probs() {
        let mut rng = rng::stage(3, rng::Domain::Init);
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![6],
            num_classes: 3,
            split_index: None,
        };
        let mut model = ModelParams::<f64>::init(&arch, &mut rng).unwrap();
        let x = Matrix::from_vec(2, 4, vec![0.3; 8]).unwrap();
        let before = model.forward(&x, 1.0).unwrap();

        // Replacing with the model's own head is a no-op.
        let own = model.clone_head();
        let snapshot = model.clone();
        model.replace_head(&own).unwrap();
        assert_eq!(model, snapshot);

        // A different head keeps the features but changes the probabilities.
        let mut other_rng = rng::stage(4, rng::Domain::Init);
        let other = ModelParams::<f64>::init(&arch, &mut other_rng).unwrap();
        model.replace_head(&other.clone_head()).unwrap();
        assert!(model.extractor_bits_eq(&snapshot));
        let after = model.forward(&x, 1.0).unwrap();
        assert_eq!(before.features, after.features);
        assert_ne!(before.probs, after.probs);
    }

    #[test]
    fn replace_head_rejects_mismatched_shape() {
        let mut model = identity_model();
        let bad = DenseLayer {
            weights: Matrix::from_vec(3, 2, vec![0.0; 6]).unwrap(),
            bias: vec![0.0; 3],
        };
        assert!(model.replace_head(&[bad]).is_err());
    }

    #[test]
    fn new_rejects_bad_split_and_dims() {
        let layer = DenseLayer {
            weights: Matrix::from_vec(2, 2, vec![0.0; 4]).unwrap(),
            bias: vec![0.0; 2],
        };
        assert!(ModelParams::new(vec![layer.clone()], 1, 2).is_err());
        assert!(ModelParams::new(vec![layer], 0, 3).is_err());
    }
}
