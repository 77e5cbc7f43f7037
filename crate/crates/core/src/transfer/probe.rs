//! Data-free teacher relevance probing.
//!
//! Teachers are overconfident on the classes they were trained on, so their
//! average softmax response to standard-normal noise concentrates on those
//! classes. Probing feeds a batch of noise through each teacher and averages
//! the outputs; a teacher is relevant to a query if some queried class gets
//! at least the relevance threshold.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::ModelParams;
use crate::scalar::{real, Scalar};

/// Average class probabilities of one teacher under noise input.
#[derive(Debug, Clone)]
pub struct TeacherProbe<S> {
    pub teacher_id: usize,
    /// Mean softmax output over the noise batch; a probability vector.
    pub avg_probs: Vec<S>,
    pub noise_batch: usize,
}

/// Feed `noise_batch` standard-normal inputs through the teacher and average
/// its softmax outputs (temperature 1).
pub fn probe_teacher<S: Scalar>(
    teacher_id: usize,
    teacher: &ModelParams<S>,
    noise_batch: usize,
    rng: &mut impl Rng,
) -> Result<TeacherProbe<S>> {
    if noise_batch == 0 {
        return Err(Error::Config("noise_batch must be >= 1".into()));
    }
    let d = teacher.input_dim();
    let mut noise = Matrix::zeros(noise_batch, d);
    for v in noise.data_mut() {
        let draw: f64 = StandardNormal.sample(rng);
        *v = real::<S>(draw);
    }
    let probs = teacher.predict_probs(&noise, S::one())?;
    let n = real::<S>(noise_batch as f64);
    let mut avg = vec![S::zero(); teacher.num_classes()];
    for row in probs.iter_rows() {
        for (a, p) in avg.iter_mut().zip(row) {
            *a += *p;
        }
    }
    for a in avg.iter_mut() {
        *a /= n;
    }
    Ok(TeacherProbe {
        teacher_id,
        avg_probs: avg,
        noise_batch,
    })
}

/// Teacher ids whose probe puts at least `relevance_threshold` average
/// probability on some queried class. Errors when no teacher qualifies.
pub fn select_teachers<S: Scalar>(
    probes: &[TeacherProbe<S>],
    query_classes: &[usize],
    relevance_threshold: f64,
) -> Result<Vec<usize>> {
    let tau = real::<S>(relevance_threshold);
    let mut selected: Vec<usize> = probes
        .iter()
        .filter(|p| query_classes.iter().any(|&q| p.avg_probs[q] >= tau))
        .map(|p| p.teacher_id)
        .collect();
    selected.sort_unstable();
    if selected.is_empty() {
        return Err(Error::NoCompetentTeacher);
    }
    Ok(selected)
}
