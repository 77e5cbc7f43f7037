//! Query-based transfer: noise probing of teacher relevance, per-teacher
//! class masks, masked distillation losses, the two-phase schedule with head
//! replacement, and selective head-weight freezing.

mod losses;
mod mask;
mod phases;
mod probe;
mod protocol;
mod selective;
mod trainer;

pub use losses::{
    masked_divergence_row, naive_kd_loss_and_grads, naive_kd_loss_and_grads_from_probs,
    qkd_ce_form_loss_and_grads, qkd_loss_and_grads, qkd_loss_and_grads_from_probs,
};
pub use mask::{build_mask, TeacherMask};
pub use phases::{run_phase1, run_phase2, Phase1Loss, PhaseReport};
pub use probe::{probe_teacher, select_teachers, TeacherProbe};
pub use protocol::{
    run_protocol, Instrumentation, LightDeployment, QueryJob, TransferConfig, TransferNetwork,
    TransferOutcome, TransferProtocol,
};
pub use selective::selective_weight_mask;
pub use trainer::{train_epochs, BatchLoss};
