//! Seeded mini-batch training loop shared by pretraining, distillation
//! phases and the federated baselines.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{adam_step, supervised_loss_and_grads, AdamState, FreezeMask, ModelParams};
use crate::scalar::Scalar;

use super::losses::{naive_kd_loss_and_grads_from_probs, qkd_loss_and_grads_from_probs};
use super::mask::TeacherMask;

/// Loss applied to each mini-batch. Teacher probability batches are
/// precomputed once per phase and row-aligned with the training set.
pub enum BatchLoss<'a, S> {
    Supervised,
    NaiveKd {
        teacher_probs: &'a [Matrix<S>],
        distill_weight: S,
        temperature: S,
    },
    MaskedKd {
        teacher_probs: &'a [Matrix<S>],
        masks: &'a [TeacherMask<S>],
        distill_weight: S,
        temperature: S,
    },
}

/// Train for `epochs` epochs of seeded-shuffle mini-batches, returning the
/// mean loss per epoch.
pub fn train_epochs<S: Scalar>(
    model: &mut ModelParams<S>,
    x: &Matrix<S>,
    y: &[usize],
    loss: &BatchLoss<'_, S>,
    state: &mut AdamState<S>,
    freeze: &FreezeMask,
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = y.len();
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut weighted_loss = 0.0f64;
        for chunk in order.chunks(batch_size) {
            let bx = x.gather_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss_value, grads) = match loss {
                BatchLoss::Supervised => supervised_loss_and_grads(model, &bx, &by, freeze)?,
                BatchLoss::NaiveKd {
                    teacher_probs,
                    distill_weight,
                    temperature,
                } => {
                    let batch_probs: Vec<Matrix<S>> =
                        teacher_probs.iter().map(|p| p.gather_rows(chunk)).collect();
                    naive_kd_loss_and_grads_from_probs(
                        model,
                        &batch_probs,
                        &bx,
                        &by,
                        *distill_weight,
                        *temperature,
                        freeze,
                    )?
                }
                BatchLoss::MaskedKd {
                    teacher_probs,
                    masks,
                    distill_weight,
                    temperature,
                } => {
                    let batch_probs: Vec<Matrix<S>> =
                        teacher_probs.iter().map(|p| p.gather_rows(chunk)).collect();
                    qkd_loss_and_grads_from_probs(
                        model,
                        &batch_probs,
                        masks,
                        &bx,
                        &by,
                        *distill_weight,
                        *temperature,
                        freeze,
                    )?
                }
            };
            adam_step(model, &grads, state, freeze)?;
            weighted_loss += loss_value.to_f64().unwrap() * chunk.len() as f64;
        }
        epoch_losses.push(weighted_loss / n as f64);
    }
    Ok(epoch_losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamConfig, Architecture};
    use crate::rng::{stream, Domain};
    use rand::Rng;

    #[test]
    fn supervised_training_reduces_loss_deterministically() {
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![8],
            num_classes: 3,
            split_index: None,
        };
        let mut data_rng = stream(0, Domain::Data, 0, 0);
        let x = Matrix::from_vec(
            30,
            4,
            (0..120).map(|_| data_rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();

        let run = || {
            let mut model =
                ModelParams::<f64>::init(&arch, &mut stream(5, Domain::Init, 0, 0)).unwrap();
            let mut state = AdamState::new(&model, AdamConfig::default());
            let freeze = FreezeMask::all_trainable(&model);
            let losses = train_epochs(
                &mut model,
                &x,
                &y,
                &BatchLoss::Supervised,
                &mut state,
                &freeze,
                8,
                8,
                &mut stream(5, Domain::Training, 0, 0),
            )
            .unwrap();
            (model, losses)
        };
        let (model_a, losses_a) = run();
        let (model_b, losses_b) = run();
        assert_eq!(losses_a, losses_b);
        assert_eq!(model_a, model_b);
        assert!(losses_a.last().unwrap() < losses_a.first().unwrap());
    }
}
