//! The two-phase transfer schedule.
//!
//! Phase 1 trains the whole student (feature extractor and head) against the
//! teachers. Phase 2 restores the pre-phase-1 classification head, freezes
//! the feature extractor and refines only the head with the masked loss, so
//! new knowledge lands without overwriting the local classification
//! patterns.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamState, DenseLayer, FreezeMask, ModelParams};
use crate::scalar::{real, Scalar};

use super::losses::teacher_prob_batches;
use super::mask::TeacherMask;
use super::protocol::TransferConfig;
use super::selective::selective_weight_mask;
use super::trainer::{train_epochs, BatchLoss};

/// Distillation loss used in phase 1.
pub enum Phase1Loss<'a, S> {
    /// Masked query-focused distillation over the selected teachers.
    Masked { masks: &'a [TeacherMask<S>] },
    /// Naive full-KL distillation over all provided teachers.
    Naive,
}

/// Audit record of one training phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: u8,
    pub loss_kind: String,
    pub teacher_ids: Vec<usize>,
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub head_replaced: bool,
    pub extractor_frozen: bool,
    pub selective_frozen_params: usize,
}

/// Phase 1: save the classification head, then train all parameters for
/// `epochs` epochs with the chosen distillation loss.
pub fn run_phase1<S: Scalar>(
    student: &mut ModelParams<S>,
    teachers: &[(usize, &ModelParams<S>)],
    loss: Phase1Loss<'_, S>,
    x: &Matrix<S>,
    y: &[usize],
    epochs: usize,
    cfg: &TransferConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DenseLayer<S>>, PhaseReport)> {
    let saved_head = student.clone_head();
    let teacher_ids: Vec<usize> = teachers.iter().map(|(id, _)| *id).collect();
    let models: Vec<&ModelParams<S>> = teachers.iter().map(|(_, m)| *m).collect();
    let temperature = real::<S>(cfg.temperature);
    let distill_weight = real::<S>(cfg.distill_weight);
    let teacher_probs = teacher_prob_batches(&models, x, temperature)?;

    let freeze = FreezeMask::all_trainable(student);
    let mut state = AdamState::new(student, cfg.adam);
    let (loss_kind, epoch_losses) = match loss {
        Phase1Loss::Masked { masks } => (
            "masked_kd",
            train_epochs(
                student,
                x,
                y,
                &BatchLoss::MaskedKd {
                    teacher_probs: &teacher_probs,
                    masks,
                    distill_weight,
                    temperature,
                },
                &mut state,
                &freeze,
                epochs,
                cfg.batch_size,
                rng,
            )?,
        ),
        Phase1Loss::Naive => (
            "naive_kd",
            train_epochs(
                student,
                x,
                y,
                &BatchLoss::NaiveKd {
                    teacher_probs: &teacher_probs,
                    distill_weight,
                    temperature,
                },
                &mut state,
                &freeze,
                epochs,
                cfg.batch_size,
                rng,
            )?,
        ),
    };
    Ok((
        saved_head,
        PhaseReport {
            phase: 1,
            loss_kind: loss_kind.into(),
            teacher_ids,
            epochs,
            epoch_losses,
            head_replaced: false,
            extractor_frozen: false,
            selective_frozen_params: 0,
        },
    ))
}

/// Phase 2: restore the saved head, freeze the feature extractor (plus any
/// selectively frozen head weights) and refine the head with the masked
/// loss. The extractor is verified bit-identical afterwards.
pub fn run_phase2<S: Scalar>(
    student: &mut ModelParams<S>,
    saved_head: &[DenseLayer<S>],
    teachers: &[(usize, &ModelParams<S>)],
    masks: &[TeacherMask<S>],
    x: &Matrix<S>,
    y: &[usize],
    epochs: usize,
    cfg: &TransferConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PhaseReport> {
    student.replace_head(saved_head)?;
    let extractor_snapshot = student.clone();

    let mut freeze = FreezeMask::extractor_frozen(student);
    let mut selective_frozen = 0usize;
    if let Some(percent) = cfg.selective_freeze_percent {
        let selective = selective_weight_mask(student, x, y, percent, cfg.batch_size)?;
        let head_params: usize = student.head().iter().map(DenseLayer::param_count).sum();
        selective_frozen = head_params
            - selective
                .layers[student.split_index()..]
                .iter()
                .map(|l| l.weights.iter().chain(l.bias.iter()).filter(|t| **t).count())
                .sum::<usize>();
        freeze = freeze.intersect(&selective)?;
    }

    let teacher_ids: Vec<usize> = teachers.iter().map(|(id, _)| *id).collect();
    let models: Vec<&ModelParams<S>> = teachers.iter().map(|(_, m)| *m).collect();
    let temperature = real::<S>(cfg.temperature);
    let teacher_probs = teacher_prob_batches(&models, x, temperature)?;

    let mut state = AdamState::new(student, cfg.adam);
    let epoch_losses = train_epochs(
        student,
        x,
        y,
        &BatchLoss::MaskedKd {
            teacher_probs: &teacher_probs,
            masks,
            distill_weight: real::<S>(cfg.distill_weight),
            temperature,
        },
        &mut state,
        &freeze,
        epochs,
        cfg.batch_size,
        rng,
    )?;

    if !student.extractor_bits_eq(&extractor_snapshot) {
        return Err(Error::Internal(
            "phase 2 modified frozen feature-extractor parameters".into(),
        ));
    }
    Ok(PhaseReport {
        phase: 2,
        loss_kind: "masked_kd".into(),
        teacher_ids,
        epochs,
        epoch_losses,
        head_replaced: true,
        extractor_frozen: true,
        selective_frozen_params: selective_frozen,
    })
}
