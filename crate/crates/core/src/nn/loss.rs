//! Numerically stable softmax, cross-entropy loss and the shared
//! backpropagation kernel.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{real, Scalar};

use super::freeze::FreezeMask;
use super::grads::Grads;
use super::model::ModelParams;

/// Probabilities are clamped to this floor before taking logs, so saturated
/// softmax outputs never produce infinite losses.
pub const LOG_CLAMP: f64 = 1e-12;

/// Row-wise `softmax(logits / temperature)` with max-subtraction.
pub fn softmax_rows<S: Scalar>(logits: &Matrix<S>, temperature: S) -> Matrix<S> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let out_row = out.row_mut(r);
        let mut max = S::neg_infinity();
        for v in row {
            let s = *v / temperature;
            if s > max {
                max = s;
            }
        }
        let mut sum = S::zero();
        for (o, v) in out_row.iter_mut().zip(row) {
            let e = (*v / temperature - max).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// `ln(max(p, LOG_CLAMP))`.
#[inline]
pub(crate) fn clamped_ln<S: Scalar>(p: S) -> S {
    p.max(real(LOG_CLAMP)).ln()
}

/// Mean cross-entropy `-ln p[y]` over the batch, on already-computed
/// probability rows.
pub(crate) fn mean_cross_entropy<S: Scalar>(probs: &Matrix<S>, labels: &[usize]) -> S {
    let n = real::<S>(labels.len() as f64);
    let mut total = S::zero();
    for (row, &y) in probs.iter_rows().zip(labels) {
        total -= clamped_ln(row[y]);
    }
    total / n
}

/// Gradient of mean cross-entropy with respect to the logits:
/// `(probs - onehot(labels)) / n`.
pub fn cross_entropy_grads<S: Scalar>(probs: &Matrix<S>, labels: &[usize]) -> Matrix<S> {
    let n = real::<S>(labels.len() as f64);
    let mut d = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = d.row_mut(r);
        row[y] -= S::one();
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    d
}

/// Backpropagate `d_logits` (gradient w.r.t. the final linear outputs)
/// through the network, given the forward activations from
/// `ModelParams::forward_trace`.
pub fn backprop<S: Scalar>(
    model: &ModelParams<S>,
    x: &Matrix<S>,
    trace: &[Matrix<S>],
    d_logits: &Matrix<S>,
) -> Grads<S> {
    let layers = model.layers();
    let n = x.rows();
    let mut grads = Grads::zeros_like(model);
    let mut delta = d_logits.clone();

    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let input = if li == 0 { x } else { &trace[li - 1] };

        {
            let g = &mut grads.layers[li];
            for r in 0..n {
                let d_row = delta.row(r);
                let in_row = input.row(r);
                for (o, dv) in d_row.iter().enumerate() {
                    if dv.is_zero() {
                        continue;
                    }
                    let w_grad = g.weights.row_mut(o);
                    for (wg, xv) in w_grad.iter_mut().zip(in_row) {
                        *wg += *dv * *xv;
                    }
                    g.bias[o] += *dv;
                }
            }
        }

        if li == 0 {
            break;
        }
        // d_input = W^T delta, gated by the ReLU of the previous layer.
        let mut d_input = Matrix::zeros(n, layer.in_dim());
        for r in 0..n {
            let d_row = delta.row(r);
            let prev = trace[li - 1].row(r);
            let d_in = d_input.row_mut(r);
            for (o, dv) in d_row.iter().enumerate() {
                if dv.is_zero() {
                    continue;
                }
                let w_row = layer.weights.row(o);
                for (di, wv) in d_in.iter_mut().zip(w_row) {
                    *di += *dv * *wv;
                }
            }
            for (di, pv) in d_in.iter_mut().zip(prev) {
                if *pv <= S::zero() {
                    *di = S::zero();
                }
            }
        }
        delta = d_input;
    }
    grads
}

/// Mean cross-entropy loss and its exact gradients, zeroed where `freeze`
/// marks parameters frozen.
pub fn supervised_loss_and_grads<S: Scalar>(
    model: &ModelParams<S>,
    x: &Matrix<S>,
    labels: &[usize],
    freeze: &FreezeMask,
) -> Result<(S, Grads<S>)> {
    if x.rows() == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.rows() != labels.len() {
        return Err(Error::shape("batch labels", x.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} classes",
            model.num_classes()
        )));
    }
    let trace = model.forward_trace(x)?;
    let probs = softmax_rows(trace.last().unwrap(), S::one());
    let loss = mean_cross_entropy(&probs, labels);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: model.layers().len() - 1,
        });
    }
    let d_logits = cross_entropy_grads(&probs, labels);
    let mut grads = backprop(model, x, &trace, &d_logits);
    grads.apply_freeze(freeze);
    Ok((loss, grads))
}
