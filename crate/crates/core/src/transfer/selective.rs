//! Selective head-weight freezing for forgetting control.
//!
//! Importance of each classification-head parameter is the RMS of its
//! supervised-loss gradient over the student's training batches; the top
//! `freeze_top_percent` percent are frozen during head refinement.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{supervised_loss_and_grads, FreezeMask, ModelParams};
use crate::scalar::Scalar;

/// Freeze mask whose extractor part is fully trainable and whose head has
/// the top `freeze_top_percent` percent most important parameters frozen
/// (weights and biases ranked together).
pub fn selective_weight_mask<S: Scalar>(
    model: &ModelParams<S>,
    x: &Matrix<S>,
    y: &[usize],
    freeze_top_percent: f64,
    batch_size: usize,
) -> Result<FreezeMask> {
    if !(0.0..=100.0).contains(&freeze_top_percent) {
        return Err(Error::Config(format!(
            "freeze_top_percent must be in [0, 100], got {freeze_top_percent}"
        )));
    }
    let split = model.split_index();
    let all = FreezeMask::all_trainable(model);
    if freeze_top_percent == 0.0 {
        return Ok(all);
    }

    // Accumulate squared gradients per head parameter over sequential
    // batches of the training set.
    let mut sq_sums: Vec<Vec<f64>> = model.layers()[split..]
        .iter()
        .map(|l| vec![0.0; l.param_count()])
        .collect();
    let batch_size = batch_size.max(1);
    let indices: Vec<usize> = (0..y.len()).collect();
    let mut num_batches = 0usize;
    for chunk in indices.chunks(batch_size) {
        let bx = x.gather_rows(chunk);
        let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
        let (_, grads) = supervised_loss_and_grads(model, &bx, &by, &all)?;
        for (li, acc) in sq_sums.iter_mut().enumerate() {
            let gl = &grads.layers[split + li];
            for (a, g) in acc
                .iter_mut()
                .zip(gl.weights.data().iter().chain(gl.bias.iter()))
            {
                let gf = g.to_f64().unwrap();
                *a += gf * gf;
            }
        }
        num_batches += 1;
    }
    if num_batches == 0 {
        return Err(Error::EmptyBatch);
    }

    // Rank head parameters by RMS gradient, ties broken by position.
    let mut scored: Vec<(f64, usize, usize)> = Vec::new();
    for (li, acc) in sq_sums.iter().enumerate() {
        for (pi, s) in acc.iter().enumerate() {
            scored.push(((s / num_batches as f64).sqrt(), li, pi));
        }
    }
    let total = scored.len();
    let k = ((freeze_top_percent / 100.0) * total as f64).round() as usize;
    let k = k.min(total);
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut mask = all;
    for &(_, li, pi) in scored.iter().take(k) {
        let layer = &mut mask.layers[split + li];
        let nw = layer.weights.len();
        if pi < nw {
            layer.weights[pi] = false;
        } else {
            layer.bias[pi - nw] = false;
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn setup() -> (ModelParams<f64>, Matrix<f64>, Vec<usize>) {
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![6],
            num_classes: 3,
            split_index: None,
        };
        let model = ModelParams::<f64>::init(&arch, &mut stream(2, Domain::Init, 0, 0)).unwrap();
        let mut rng = stream(2, Domain::Data, 0, 0);
        let x = Matrix::from_vec(20, 4, (0..80).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..20).map(|i| i % 3).collect();
        (model, x, y)
    }

    #[test]
    fn zero_percent_freezes_nothing() {
        let (model, x, y) = setup();
        let mask = selective_weight_mask(&model, &x, &y, 0.0, 8).unwrap();
        assert_eq!(mask, FreezeMask::all_trainable(&model));
    }

    #[test]
    fn hundred_percent_freezes_the_entire_head() {
        let (model, x, y) = setup();
        let mask = selective_weight_mask(&model, &x, &y, 100.0, 8).unwrap();
        let split = model.split_index();
        for layer in &mask.layers[split..] {
            assert!(layer.weights.iter().all(|t| !t));
            assert!(layer.bias.iter().all(|t| !t));
        }
        for layer in &mask.layers[..split] {
            assert!(layer.weights.iter().all(|t| *t));
        }
    }

    #[test]
    fn frozen_count_scales_with_percent() {
        let (model, x, y) = setup();
        let head_params: usize = model.head().iter().map(|l| l.param_count()).sum();
        let total: usize = model.param_count();
        for z in [10.0, 50.0] {
            let mask = selective_weight_mask(&model, &x, &y, z, 8).unwrap();
            let frozen = total - mask.num_trainable();
            let expected = ((z / 100.0) * head_params as f64).round() as usize;
            assert_eq!(frozen, expected, "z = {z}");
        }
    }

    #[test]
    fn out_of_range_percent_is_rejected() {
        let (model, x, y) = setup();
        assert!(selective_weight_mask(&model, &x, &y, 101.0, 8).is_err());
        assert!(selective_weight_mask(&model, &x, &y, -0.5, 8).is_err());
    }
}
