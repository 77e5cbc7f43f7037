//! Protocol dispatch: naive distillation, teacher-filtered and masked
//! variants, and the full two-phase schedules.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamConfig, ModelParams};
use crate::rng::{stream, Domain};
use crate::scalar::Scalar;

use super::mask::{build_mask, TeacherMask};
use super::phases::{run_phase1, run_phase2, Phase1Loss, PhaseReport};
use super::probe::{probe_teacher, select_teachers, TeacherProbe};

/// Transfer protocol family. `KdSelected` and `KdSelectedMasked` are the
/// single-phase ablation variants between naive distillation and the full
/// two-phase schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferProtocol {
    NaiveKd,
    KdSelected,
    KdSelectedMasked,
    Qkt,
    QktLight,
}

impl TransferProtocol {
    pub fn label(&self) -> &'static str {
        match self {
            TransferProtocol::NaiveKd => "naive_kd",
            TransferProtocol::KdSelected => "kd_selected",
            TransferProtocol::KdSelectedMasked => "kd_selected_masked",
            TransferProtocol::Qkt => "qkt",
            TransferProtocol::QktLight => "qkt_light",
        }
    }
}

/// Where the light variant's phase 1 runs. Only the per-client deployment is
/// implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightDeployment {
    #[default]
    PerClient,
    CentralServer,
    VolunteerClient,
}

/// Transfer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Minimum average noise-probe probability for teacher selection.
    pub relevance_threshold: f64,
    /// Mask weight on queried classes.
    pub query_emphasis: f64,
    /// Weight of the distillation term relative to the supervised term.
    pub distill_weight: f64,
    pub temperature: f64,
    /// Epochs per phase.
    pub epochs: usize,
    /// Phase-2 epochs; defaults to `epochs` for the full schedule and 5 for
    /// the light variant.
    pub phase2_epochs: Option<usize>,
    /// Noise samples per teacher probe.
    pub noise_batch: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Optional percentage of head parameters frozen in phase 2.
    pub selective_freeze_percent: Option<f64>,
    pub light_deployment: LightDeployment,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            relevance_threshold: 0.01,
            query_emphasis: 1.5,
            distill_weight: 1.0,
            temperature: 1.0,
            epochs: 10,
            phase2_epochs: None,
            noise_batch: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            selective_freeze_percent: None,
            light_deployment: LightDeployment::PerClient,
        }
    }
}

impl TransferConfig {
    /// Structural validation applied on every protocol run. The harness
    /// config layer additionally enforces `relevance_threshold in (0, 1)`
    /// and `epochs >= 1`; programmatic callers may use the degenerate values
    /// (threshold 0, zero phase-2 epochs) that reduce one protocol to
    /// another.
    pub fn check_runnable(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.relevance_threshold) {
            return Err(Error::Config(format!(
                "relevance_threshold must be in [0, 1), got {}",
                self.relevance_threshold
            )));
        }
        if self.query_emphasis <= 0.0 {
            return Err(Error::Config(format!(
                "query_emphasis must be > 0, got {}",
                self.query_emphasis
            )));
        }
        if self.noise_batch == 0 {
            return Err(Error::Config("noise_batch must be >= 1".into()));
        }
        if let Some(z) = self.selective_freeze_percent {
            if !(0.0..=100.0).contains(&z) {
                return Err(Error::Config(format!(
                    "selective_freeze_percent must be in [0, 100], got {z}"
                )));
            }
        }
        match self.light_deployment {
            LightDeployment::PerClient => Ok(()),
            LightDeployment::CentralServer => Err(Error::Config(
                "light_deployment \"central_server\" is not implemented; only the \
                 \"per_client\" deployment (each client runs phase 1 locally) is supported"
                    .into(),
            )),
            LightDeployment::VolunteerClient => Err(Error::Config(
                "light_deployment \"volunteer_client\" is not implemented; only the \
                 \"per_client\" deployment (each client runs phase 1 locally) is supported"
                    .into(),
            )),
        }
    }
}

/// One transfer job: which student queries which classes under which
/// protocol and hyperparameters.
#[derive(Debug, Clone)]
pub struct QueryJob {
    pub student_id: usize,
    pub query_classes: Vec<usize>,
    pub protocol: TransferProtocol,
    pub config: TransferConfig,
}

/// Read-only view of the network a transfer runs against.
pub struct TransferNetwork<'a, S> {
    /// All clients' pretrained models, indexed by client id.
    pub models: &'a [ModelParams<S>],
    /// The student's transfer set (its own training split).
    pub train_x: &'a Matrix<S>,
    pub train_y: &'a [usize],
    /// Classes present in the student's training data.
    pub student_local_classes: BTreeSet<usize>,
    pub num_classes: usize,
}

/// Audit trail of one protocol run, serializable as structured text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instrumentation {
    pub protocol: String,
    pub student_id: usize,
    pub query_classes: Vec<usize>,
    /// Phase whose masks came from probing ("phase1" or "phase2").
    pub probe_stage: Option<String>,
    pub selected_teachers: Option<Vec<usize>>,
    /// `(teacher id, class weights)` per selected teacher.
    pub masks: Option<Vec<(usize, Vec<f64>)>>,
    pub phase1: Option<PhaseReport>,
    pub phase2: Option<PhaseReport>,
    pub comm_rounds: u32,
}

impl Instrumentation {
    /// Structured text: one `key=value` record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "protocol={} student={} query={:?} comm_rounds={}\n",
            self.protocol, self.student_id, self.query_classes, self.comm_rounds
        ));
        if let Some(stage) = &self.probe_stage {
            out.push_str(&format!("probe_stage={stage}\n"));
        }
        if let Some(sel) = &self.selected_teachers {
            out.push_str(&format!("teacher_set={sel:?}\n"));
        }
        if let Some(masks) = &self.masks {
            for (id, weights) in masks {
                out.push_str(&format!("mask teacher={id} weights={weights:?}\n"));
            }
        }
        for report in [&self.phase1, &self.phase2].into_iter().flatten() {
            out.push_str(&format!(
                "phase={} loss={} teachers={:?} epochs={} head_replaced={} extractor_frozen={} selective_frozen={}\n",
                report.phase,
                report.loss_kind,
                report.teacher_ids,
                report.epochs,
                report.head_replaced,
                report.extractor_frozen,
                report.selective_frozen_params
            ));
            for (e, l) in report.epoch_losses.iter().enumerate() {
                out.push_str(&format!("phase={} epoch={} loss={}\n", report.phase, e, l));
            }
        }
        out
    }
}

/// Result of one protocol run.
pub struct TransferOutcome<S> {
    pub model: ModelParams<S>,
    pub comm_rounds: u32,
    pub instrumentation: Instrumentation,
}

fn probe_all<'a, S: Scalar>(
    teachers: &[(usize, &'a ModelParams<S>)],
    cfg: &TransferConfig,
    seed: u64,
    student_id: usize,
) -> Result<Vec<TeacherProbe<S>>> {
    teachers
        .iter()
        .map(|(id, model)| {
            let mut rng = stream(seed, Domain::Probing, *id as u64, student_id as u64);
            probe_teacher(*id, model, cfg.noise_batch, &mut rng)
        })
        .collect()
}

/// Run one transfer protocol for a student against the network's pretrained
/// peers. All three protocol families receive every peer's weights exactly
/// once, so the communication count is 1.
pub fn run_protocol<S: Scalar>(
    job: &QueryJob,
    network: &TransferNetwork<'_, S>,
    seed: u64,
) -> Result<TransferOutcome<S>> {
    job.config.check_runnable()?;
    if job.student_id >= network.models.len() {
        return Err(Error::Config(format!(
            "student_id {} out of range for {} clients",
            job.student_id,
            network.models.len()
        )));
    }
    if job.query_classes.is_empty() {
        return Err(Error::Config("query class set is empty".into()));
    }
    if let Some(&bad) = job.query_classes.iter().find(|&&q| q >= network.num_classes) {
        return Err(Error::Config(format!(
            "query class {bad} out of range for {} classes",
            network.num_classes
        )));
    }

    let cfg = &job.config;
    let teachers: Vec<(usize, &ModelParams<S>)> = network
        .models
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != job.student_id)
        .collect();
    let mut student = network.models[job.student_id].clone();
    let mut rng_p1 = stream(seed, Domain::Training, job.student_id as u64, 1);
    let mut rng_p2 = stream(seed, Domain::Training, job.student_id as u64, 2);

    let mut inst = Instrumentation {
        protocol: job.protocol.label().into(),
        student_id: job.student_id,
        query_classes: job.query_classes.clone(),
        probe_stage: None,
        selected_teachers: None,
        masks: None,
        phase1: None,
        phase2: None,
        comm_rounds: 1,
    };

    let select_and_mask = |inst: &mut Instrumentation,
                           stage: &str|
     -> Result<(Vec<(usize, &ModelParams<S>)>, Vec<TeacherMask<S>>)> {
        let probes = probe_all(&teachers, cfg, seed, job.student_id)?;
        let selected_ids = select_teachers(&probes, &job.query_classes, cfg.relevance_threshold)?;
        let selected: Vec<(usize, &ModelParams<S>)> = teachers
            .iter()
            .filter(|(id, _)| selected_ids.contains(id))
            .copied()
            .collect();
        let masks: Vec<TeacherMask<S>> = selected_ids
            .iter()
            .map(|&id| {
                build_mask(
                    id,
                    &job.query_classes,
                    &network.student_local_classes,
                    cfg.query_emphasis,
                    network.num_classes,
                )
            })
            .collect();
        inst.probe_stage = Some(stage.into());
        inst.selected_teachers = Some(selected_ids);
        inst.masks = Some(
            masks
                .iter()
                .map(|m| {
                    (
                        m.teacher_id,
                        m.class_weights.iter().map(|w| w.to_f64().unwrap()).collect(),
                    )
                })
                .collect(),
        );
        Ok((selected, masks))
    };

    match job.protocol {
        TransferProtocol::NaiveKd => {
            let (_, report) = run_phase1(
                &mut student,
                &teachers,
                Phase1Loss::Naive,
                network.train_x,
                network.train_y,
                cfg.epochs,
                cfg,
                &mut rng_p1,
            )?;
            inst.phase1 = Some(report);
        }
        TransferProtocol::KdSelected => {
            let (selected, _) = select_and_mask(&mut inst, "phase1")?;
            inst.masks = None; // teacher filtering only, no class masks
            let (_, report) = run_phase1(
                &mut student,
                &selected,
                Phase1Loss::Naive,
                network.train_x,
                network.train_y,
                cfg.epochs,
                cfg,
                &mut rng_p1,
            )?;
            inst.phase1 = Some(report);
        }
        TransferProtocol::KdSelectedMasked => {
            let (selected, masks) = select_and_mask(&mut inst, "phase1")?;
            let (_, report) = run_phase1(
                &mut student,
                &selected,
                Phase1Loss::Masked { masks: &masks },
                network.train_x,
                network.train_y,
                cfg.epochs,
                cfg,
                &mut rng_p1,
            )?;
            inst.phase1 = Some(report);
        }
        TransferProtocol::Qkt => {
            let (selected, masks) = select_and_mask(&mut inst, "phase1")?;
            let (saved_head, report1) = run_phase1(
                &mut student,
                &selected,
                Phase1Loss::Masked { masks: &masks },
                network.train_x,
                network.train_y,
                cfg.epochs,
                cfg,
                &mut rng_p1,
            )?;
            inst.phase1 = Some(report1);
            let epochs2 = cfg.phase2_epochs.unwrap_or(cfg.epochs);
            let report2 = run_phase2(
                &mut student,
                &saved_head,
                &selected,
                &masks,
                network.train_x,
                network.train_y,
                epochs2,
                cfg,
                &mut rng_p2,
            )?;
            inst.phase2 = Some(report2);
        }
        TransferProtocol::QktLight => {
            let (saved_head, report1) = run_phase1(
                &mut student,
                &teachers,
                Phase1Loss::Naive,
                network.train_x,
                network.train_y,
                cfg.epochs,
                cfg,
                &mut rng_p1,
            )?;
            inst.phase1 = Some(report1);
            // Teacher filtering and masking happen only now, for phase 2.
            let (selected, masks) = select_and_mask(&mut inst, "phase2")?;
            let epochs2 = cfg.phase2_epochs.unwrap_or(5);
            let report2 = run_phase2(
                &mut student,
                &saved_head,
                &selected,
                &masks,
                network.train_x,
                network.train_y,
                epochs2,
                cfg,
                &mut rng_p2,
            )?;
            inst.phase2 = Some(report2);
        }
    }

    Ok(TransferOutcome {
        model: student,
        comm_rounds: 1,
        instrumentation: inst,
    })
}
