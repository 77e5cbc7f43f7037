//! Adam optimizer with additive L2 weight decay and freeze support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

use super::freeze::FreezeMask;
use super::grads::Grads;
use super::model::ModelParams;

/// Adam hyperparameters. The L2 term is added to the gradient
/// (`g += weight_decay * w`) before the moment updates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 4e-4,
        }
    }
}

/// Optimizer state: step counter plus first/second moment estimates,
/// shape-matched to the model. Owned by exactly one trainer.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub step_count: u64,
    first_moment: Grads<S>,
    second_moment: Grads<S>,
    pub config: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(model: &ModelParams<S>, config: AdamConfig) -> Self {
        AdamState {
            step_count: 0,
            first_moment: Grads::zeros_like(model),
            second_moment: Grads::zeros_like(model),
            config,
        }
    }
}

/// One Adam update. Frozen parameters (and their moments) are untouched, so
/// they stay bit-identical across any number of steps.
pub fn adam_step<S: Scalar>(
    model: &mut ModelParams<S>,
    grads: &Grads<S>,
    state: &mut AdamState<S>,
    freeze: &FreezeMask,
) -> Result<()> {
    if grads.layers.len() != model.layers().len() || !freeze.matches(model) {
        return Err(Error::shape("adam step operands", model.layers().len(), grads.layers.len()));
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let cfg = state.config;
    let lr = real::<S>(cfg.learning_rate);
    let b1 = real::<S>(cfg.beta1);
    let b2 = real::<S>(cfg.beta2);
    let eps = real::<S>(cfg.epsilon);
    let wd = real::<S>(cfg.weight_decay);
    let bc1 = real::<S>(1.0 - cfg.beta1.powf(t));
    let bc2 = real::<S>(1.0 - cfg.beta2.powf(t));
    let one = S::one();

    for li in 0..model.layers().len() {
        let mask = &freeze.layers[li];
        let nw = mask.weights.len();
        for flat in 0..nw + mask.bias.len() {
            let trainable = if flat < nw {
                mask.weights[flat]
            } else {
                mask.bias[flat - nw]
            };
            if !trainable {
                continue;
            }
            let g_raw = {
                let gl = &grads.layers[li];
                if flat < nw {
                    gl.weights.data()[flat]
                } else {
                    gl.bias[flat - nw]
                }
            };
            let w = model.param_mut(li, flat);
            let g = g_raw + wd * *w;
            let m = if flat < nw {
                &mut state.first_moment.layers[li].weights.data_mut()[flat]
            } else {
                &mut state.first_moment.layers[li].bias[flat - nw]
            };
            *m = b1 * *m + (one - b1) * g;
            let m_hat = *m / bc1;
            let v = if flat < nw {
                &mut state.second_moment.layers[li].weights.data_mut()[flat]
            } else {
                &mut state.second_moment.layers[li].bias[flat - nw]
            };
            *v = b2 * *v + (one - b2) * g * g;
            let v_hat = *v / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::DenseLayer;

    fn scalar_model(w: f64) -> ModelParams<f64> {
        let layer = DenseLayer {
            weights: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        };
        ModelParams::new(vec![layer], 0, 1).unwrap()
    }

    fn scalar_grads(model: &ModelParams<f64>, g: f64) -> Grads<f64> {
        let mut grads = Grads::zeros_like(model);
        grads.layers[0].weights.data_mut()[0] = g;
        grads
    }

    #[test]
    fn zero_grads_zero_moments_leave_params_unchanged() {
        let mut model = scalar_model(1.0);
        let grads = Grads::zeros_like(&model);
        let mut state = AdamState::new(
            &model,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        let freeze = FreezeMask::all_trainable(&model);
        adam_step(&mut model, &grads, &mut state, &freeze).unwrap();
        assert_eq!(model.layers()[0].weights.data()[0], 1.0);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        let mut model = scalar_model(1.0);
        let grads = scalar_grads(&model, 1.0);
        let mut state = AdamState::new(
            &model,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        let freeze = FreezeMask::all_trainable(&model);
        adam_step(&mut model, &grads, &mut state, &freeze).unwrap();
        let w = model.layers()[0].weights.data()[0];
        // First bias-corrected step is lr * g / (|g| + eps) ~= lr.
        assert!((w - (1.0 - 1e-3)).abs() < 1e-8, "w = {w}");
    }

    #[test]
    fn frozen_scalar_ignores_large_gradients() {
        let mut model = scalar_model(2.5);
        let grads = scalar_grads(&model, 5.0);
        let mut state = AdamState::new(&model, AdamConfig::default());
        let freeze = FreezeMask::all_frozen(&model);
        for _ in 0..17 {
            adam_step(&mut model, &grads, &mut state, &freeze).unwrap();
        }
        assert_eq!(model.layers()[0].weights.data()[0].to_bits(), 2.5f64.to_bits());
        assert_eq!(state.step_count, 17);
    }

    #[test]
    fn weight_decay_pulls_weights_toward_zero() {
        let mut model = scalar_model(1.0);
        let grads = Grads::zeros_like(&model);
        let mut state = AdamState::new(
            &model,
            AdamConfig {
                weight_decay: 4e-4,
                ..AdamConfig::default()
            },
        );
        let freeze = FreezeMask::all_trainable(&model);
        adam_step(&mut model, &grads, &mut state, &freeze).unwrap();
        assert!(model.layers()[0].weights.data()[0] < 1.0);
    }
}
