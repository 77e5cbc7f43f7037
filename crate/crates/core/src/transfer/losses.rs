//! Distillation losses with hand-derived gradients.
//!
//! The masked loss adds, per selected teacher, the inner product of the
//! teacher's class mask with the element-wise divergence vector
//! `d_j = p_t[j] (ln p_t[j] - ln p_s[j])`, on top of the supervised
//! cross-entropy term. Since `p_t ln p_t` is constant in the student
//! parameters, the element-wise cross-entropy form `-p_t[j] ln p_s[j]` has
//! identical gradients; `qkd_ce_form_loss_and_grads` keeps that route alive
//! as a cross-check.
//!
//! Student log-probabilities are clamped below at `ln(LOG_CLAMP)`; a clamped
//! component is locally constant, so its gradient contribution is dropped,
//! keeping the analytic gradients exact for the computed loss.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    backprop, cross_entropy_grads, softmax_rows, FreezeMask, Grads, ModelParams, LOG_CLAMP,
};
use crate::scalar::{real, Scalar};

use super::mask::TeacherMask;

/// `sum_j mask_j * p_t[j] * (ln p_t[j] - ln max(p_s[j], clamp))` for one
/// sample.
pub fn masked_divergence_row<S: Scalar>(teacher_probs: &[S], student_probs: &[S], mask: &[S]) -> S {
    let clamp = real::<S>(LOG_CLAMP);
    let mut total = S::zero();
    for ((&m, &pt), &ps) in mask.iter().zip(teacher_probs).zip(student_probs) {
        if m.is_zero() || pt <= S::zero() {
            continue;
        }
        total += m * pt * (pt.ln() - ps.max(clamp).ln());
    }
    total
}

fn check_kd_inputs<S: Scalar>(
    student: &ModelParams<S>,
    teacher_probs: &[Matrix<S>],
    x: &Matrix<S>,
    labels: &[usize],
) -> Result<()> {
    if x.rows() == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.rows() != labels.len() {
        return Err(Error::shape("batch labels", x.rows(), labels.len()));
    }
    for (t, probs) in teacher_probs.iter().enumerate() {
        if probs.rows() != x.rows() || probs.cols() != student.num_classes() {
            return Err(Error::shape(
                format!("teacher {t} probability batch"),
                format!("{}x{}", x.rows(), student.num_classes()),
                format!("{}x{}", probs.rows(), probs.cols()),
            ));
        }
    }
    Ok(())
}

/// Forward the teachers on `x` at the given softmax temperature.
pub(crate) fn teacher_prob_batches<S: Scalar>(
    teachers: &[&ModelParams<S>],
    x: &Matrix<S>,
    temperature: S,
) -> Result<Vec<Matrix<S>>> {
    teachers.iter().map(|t| t.predict_probs(x, temperature)).collect()
}

/// Shared kernel: mean CE plus `distill_weight` times the per-teacher masked
/// divergence, with exact gradients. `masks[i]` aligns with
/// `teacher_probs[i]`; pass all-ones masks for the naive loss.
fn kd_loss_and_grads_impl<S: Scalar>(
    student: &ModelParams<S>,
    teacher_probs: &[Matrix<S>],
    masks: Option<&[TeacherMask<S>]>,
    x: &Matrix<S>,
    labels: &[usize],
    distill_weight: S,
    temperature: S,
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    check_kd_inputs(student, teacher_probs, x, labels)?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= student.num_classes()) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} classes",
            student.num_classes()
        )));
    }
    let n = x.rows();
    let c = student.num_classes();
    let n_s = real::<S>(n as f64);
    let clamp = real::<S>(LOG_CLAMP);
    let one = S::one();

    let trace = student.forward_trace(x)?;
    let logits = trace.last().unwrap();
    // CE always runs at temperature 1; the distillation term softens both
    // sides by `temperature`.
    let probs_ce = softmax_rows(logits, one);
    let probs_kd = if temperature == one {
        probs_ce.clone()
    } else {
        softmax_rows(logits, temperature)
    };

    let mut loss = S::zero();
    for (row, &y) in probs_ce.iter_rows().zip(labels) {
        loss -= row[y].max(clamp).ln();
    }
    loss /= n_s;

    // d(loss)/d(logits): CE part first.
    let mut d_logits = cross_entropy_grads(&probs_ce, labels);

    let kd_scale = distill_weight / (n_s * temperature);
    let mut distill_total = S::zero();
    for (t_idx, t_probs) in teacher_probs.iter().enumerate() {
        let mask_weights = masks.map(|m| m[t_idx].class_weights.as_slice());
        for r in 0..n {
            let pt = t_probs.row(r);
            let ps = probs_kd.row(r);
            // Loss value.
            let mut row_div = S::zero();
            // Effective weights g_j = m_j p_t[j], zeroed where ln p_s clamps.
            let mut g_sum = S::zero();
            let mut g = vec![S::zero(); c];
            for j in 0..c {
                let m = mask_weights.map_or(one, |mw| mw[j]);
                if m.is_zero() || pt[j] <= S::zero() {
                    continue;
                }
                row_div += m * pt[j] * (pt[j].ln() - ps[j].max(clamp).ln());
                if ps[j] > clamp {
                    g[j] = m * pt[j];
                    g_sum += g[j];
                }
            }
            distill_total += row_div;
            let d_row = d_logits.row_mut(r);
            for k in 0..c {
                d_row[k] += kd_scale * (ps[k] * g_sum - g[k]);
            }
        }
    }
    loss += distill_weight * distill_total / n_s;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: student.layers().len() - 1,
        });
    }

    let mut grads = backprop(student, x, &trace, &d_logits);
    grads.apply_freeze(freeze);
    Ok((loss, grads))
}

/// Masked query-focused distillation loss over the selected teachers.
pub fn qkd_loss_and_grads_from_probs<S: Scalar>(
    student: &ModelParams<S>,
    teacher_probs: &[Matrix<S>],
    masks: &[TeacherMask<S>],
    x: &Matrix<S>,
    labels: &[usize],
    distill_weight: S,
    temperature: S,
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    if teacher_probs.is_empty() {
        return Err(Error::NoCompetentTeacher);
    }
    if teacher_probs.len() != masks.len() {
        return Err(Error::shape("teacher masks", teacher_probs.len(), masks.len()));
    }
    kd_loss_and_grads_impl(
        student,
        teacher_probs,
        Some(masks),
        x,
        labels,
        distill_weight,
        temperature,
        freeze,
    )
}

/// Masked distillation from teacher models (forwards the teachers itself).
pub fn qkd_loss_and_grads<S: Scalar>(
    student: &ModelParams<S>,
    teachers: &[&ModelParams<S>],
    masks: &[TeacherMask<S>],
    x: &Matrix<S>,
    labels: &[usize],
    distill_weight: S,
    temperature: S,
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    let probs = teacher_prob_batches(teachers, x, temperature)?;
    qkd_loss_and_grads_from_probs(student, &probs, masks, x, labels, distill_weight, temperature, freeze)
}

/// Naive distillation: full KL from every teacher, no masks. Zero teachers
/// degrade to the pure supervised loss.
pub fn naive_kd_loss_and_grads_from_probs<S: Scalar>(
    student: &ModelParams<S>,
    teacher_probs: &[Matrix<S>],
    x: &Matrix<S>,
    labels: &[usize],
    distill_weight: S,
    temperature: S,
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    kd_loss_and_grads_impl(
        student,
        teacher_probs,
        None,
        x,
        labels,
        distill_weight,
        temperature,
        freeze,
    )
}

/// Naive distillation from teacher models.
pub fn naive_kd_loss_and_grads<S: Scalar>(
    student: &ModelParams<S>,
    teachers: &[&ModelParams<S>],
    x: &Matrix<S>,
    labels: &[usize],
    distill_weight: S,
    temperature: S,
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    let probs = teacher_prob_batches(teachers, x, temperature)?;
    naive_kd_loss_and_grads_from_probs(student, &probs, x, labels, distill_weight, temperature, freeze)
}

/// Cross-entropy form of the masked loss (`-p_t[j] ln p_s[j]` entries), with
/// the distillation gradient routed explicitly through the softmax Jacobian.
///
/// The loss value differs from [`qkd_loss_and_grads`] by the
/// student-independent `p_t ln p_t` terms; the gradients must agree.
pub fn qkd_ce_form_loss_and_grads<S: Scalar>(
    student: &ModelParams<S>,
    teacher_probs: &[Matrix<S>],
    masks: &[TeacherMask<S>],
    x: &Matrix<S>,
    labels: &[usize],
    distill_weight: S,
    temperature: S,
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    if teacher_probs.is_empty() {
        return Err(Error::NoCompetentTeacher);
    }
    check_kd_inputs(student, teacher_probs, x, labels)?;
    let n = x.rows();
    let c = student.num_classes();
    let n_s = real::<S>(n as f64);
    let clamp = real::<S>(LOG_CLAMP);
    let one = S::one();

    let trace = student.forward_trace(x)?;
    let logits = trace.last().unwrap();
    let probs_ce = softmax_rows(logits, one);
    let probs_kd = if temperature == one {
        probs_ce.clone()
    } else {
        softmax_rows(logits, temperature)
    };

    let mut loss = S::zero();
    for (row, &y) in probs_ce.iter_rows().zip(labels) {
        loss -= row[y].max(clamp).ln();
    }
    loss /= n_s;

    let mut d_logits = cross_entropy_grads(&probs_ce, labels);
    let kd_scale = distill_weight / (n_s * temperature);
    let mut distill_total = S::zero();
    for (t_probs, mask) in teacher_probs.iter().zip(masks) {
        let mw = &mask.class_weights;
        for r in 0..n {
            let pt = t_probs.row(r);
            let ps = probs_kd.row(r);
            // dL/dp_s[j] of the cross-entropy form, zero where clamped.
            let mut d_p = vec![S::zero(); c];
            for j in 0..c {
                if mw[j].is_zero() || pt[j] <= S::zero() {
                    continue;
                }
                distill_total += -mw[j] * pt[j] * ps[j].max(clamp).ln();
                if ps[j] > clamp {
                    d_p[j] = -mw[j] * pt[j] / ps[j];
                }
            }
            // Chain through the softmax Jacobian: dp_j/dz_k = p_j (d_jk - p_k).
            let d_row = d_logits.row_mut(r);
            for k in 0..c {
                let mut acc = S::zero();
                for j in 0..c {
                    if d_p[j].is_zero() {
                        continue;
                    }
                    let jac = if j == k { ps[j] * (one - ps[k]) } else { -ps[j] * ps[k] };
                    acc += d_p[j] * jac;
                }
                d_row[k] += kd_scale * acc;
            }
        }
    }
    loss += distill_weight * distill_total / n_s;

    let mut grads = backprop(student, x, &trace, &d_logits);
    grads.apply_freeze(freeze);
    Ok((loss, grads))
}
