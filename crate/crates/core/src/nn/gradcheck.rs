//! Finite-difference gradient checking.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::scalar::{real, Scalar};

use super::freeze::FreezeMask;
use super::grads::Grads;
use super::loss::supervised_loss_and_grads;
use super::model::ModelParams;

/// Central-difference step. Intended for double-precision models.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error between `analytic` and central finite differences
/// of `loss_fn` over every parameter.
///
/// The denominator is floored at `1e-3`, so components that small are
/// effectively compared on an absolute scale.
pub fn max_grad_rel_error<S: Scalar>(
    model: &ModelParams<S>,
    analytic: &Grads<S>,
    mut loss_fn: impl FnMut(&ModelParams<S>) -> S,
    step: f64,
) -> f64 {
    let mut scratch = model.clone();
    let mut max_rel = 0.0f64;
    model.clone().for_each_param(|li, pi, v| {
        let h = real::<S>(step);
        *scratch.param_mut(li, pi) = v + h;
        let plus = loss_fn(&scratch).to_f64().unwrap();
        *scratch.param_mut(li, pi) = v - h;
        let minus = loss_fn(&scratch).to_f64().unwrap();
        *scratch.param_mut(li, pi) = v;

        let numeric = (plus - minus) / (2.0 * step);
        let a = {
            let gl = &analytic.layers[li];
            let nw = gl.weights.data().len();
            if pi < nw {
                gl.weights.data()[pi]
            } else {
                gl.bias[pi - nw]
            }
        }
        .to_f64()
        .unwrap();
        let denom = a.abs().max(numeric.abs()).max(1e-3);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    });
    max_rel
}

/// Gradient check of the supervised cross-entropy loss on a small model.
pub fn gradient_check<S: Scalar>(model: &ModelParams<S>, x: &Matrix<S>, labels: &[usize]) -> Result<f64> {
    let freeze = FreezeMask::all_trainable(model);
    let (_, grads) = supervised_loss_and_grads(model, x, labels, &freeze)?;
    Ok(max_grad_rel_error(
        model,
        &grads,
        |m| supervised_loss_and_grads(m, x, labels, &freeze).map(|(l, _)| l).unwrap(),
        FD_STEP,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::{Architecture, DenseLayer};
    use crate::rng::{stage, stream, Domain};
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = stream(seed, Domain::Data, 1, 0);
        let x = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect())
            .unwrap();
        let y = (0..rows).map(|_| rng.random_range(0..3)).collect();
        (x, y)
    }

    #[test]
    fn two_layer_model_matches_finite_differences() {
        for seed in 0..5u64 {
            let arch = Architecture {
                input_dim: 6,
                hidden: vec![10],
                num_classes: 3,
                split_index: None,
            };
            let model = ModelParams::<f64>::init(&arch, &mut stream(seed, Domain::Init, 0, 0)).unwrap();
            let (x, y) = random_batch(8, 6, seed);
            let err = gradient_check(&model, &x, &y).unwrap();
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn linear_model_matches_finite_differences() {
        let arch = Architecture {
            input_dim: 5,
            hidden: vec![],
            num_classes: 3,
            split_index: None,
        };
        let model = ModelParams::<f64>::init(&arch, &mut stage(42, Domain::Init)).unwrap();
        let (x, y) = random_batch(8, 5, 42);
        let err = gradient_check(&model, &x, &y).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn degenerate_zero_model_stays_finite() {
        let layer = DenseLayer {
            weights: Matrix::from_vec(2, 2, vec![0.0; 4]).unwrap(),
            bias: vec![0.0; 2],
        };
        let model = ModelParams::new(vec![layer], 0, 2).unwrap();
        let x = Matrix::from_vec(2, 2, vec![0.0; 4]).unwrap();
        let err = gradient_check(&model, &x, &[0, 1]).unwrap();
        assert!(err.is_finite());
    }
}
