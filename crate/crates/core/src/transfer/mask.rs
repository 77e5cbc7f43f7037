//! Per-teacher class masks for query-focused distillation.

use std::collections::BTreeSet;

use crate::scalar::{real, Scalar};

/// Class weights applied to one teacher's distillation term: the query
/// emphasis on queried classes, 1 on the student's local classes, 0
/// elsewhere. Query membership wins when a class is both queried and local.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherMask<S> {
    pub teacher_id: usize,
    pub class_weights: Vec<S>,
    /// Membership in the selected teacher set.
    pub selected: bool,
}

/// Build the mask for one selected teacher.
pub fn build_mask<S: Scalar>(
    teacher_id: usize,
    query_classes: &[usize],
    student_local_classes: &BTreeSet<usize>,
    query_emphasis: f64,
    num_classes: usize,
) -> TeacherMask<S> {
    let mut weights = vec![S::zero(); num_classes];
    for &j in student_local_classes {
        if j < num_classes {
            weights[j] = S::one();
        }
    }
    for &q in query_classes {
        if q < num_classes {
            weights[q] = real::<S>(query_emphasis);
        }
    }
    TeacherMask {
        teacher_id,
        class_weights: weights,
        selected: true,
    }
}
