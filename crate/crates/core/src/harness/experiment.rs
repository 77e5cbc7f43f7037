//! Experiment execution: per seed, build the network, pretrain every
//! client, run each configured protocol for each querying client, evaluate
//! and persist.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{ensemble_probs, fedavg, ft_fedavg};
use crate::data::{
    generate_synthetic, partition, partition_manifest, read_dataset_csv, select_query, ClientDataset,
    GlobalDataset, PartitionScheme, PartitionSpec, QuerySpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, per_class_accuracy, per_class_accuracy_of_labels, MetricsReport};
use crate::nn::{argmax_rows, save_checkpoint, AdamState, Architecture, FreezeMask, ModelParams};
use crate::rng::{stream, Domain};
use crate::transfer::{train_epochs, BatchLoss, QueryJob, TransferNetwork};
use crate::{Mat, Model, Real};

use super::config::{
    DatasetKind, ExperimentConfig, PretrainSpec, ProtocolKind, ProtocolSpec, SweepLevel,
};

/// Early-stopping trace of one client's local pretraining.
#[derive(Debug, Clone)]
pub struct PretrainLog {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Everything derived from `(config, seed)` before any protocol runs.
pub struct SeedNetwork {
    pub seed: u64,
    pub global: GlobalDataset<Real>,
    pub clients: Vec<ClientDataset<Real>>,
    pub pretrained: Vec<Model>,
    pub pretrain_logs: Vec<PretrainLog>,
    /// Per-client per-class accuracy of the pretrained model on the global
    /// balanced test set.
    pub pre_acc: Vec<BTreeMap<usize, f64>>,
    /// Materialized training splits, indexed by client.
    pub train_sets: Vec<(Mat, Vec<usize>)>,
}

/// One record per `(sweep point, seed, protocol)`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub protocol: String,
    pub sweep_param: Option<String>,
    pub sweep_value: Option<f64>,
    pub reports: Vec<MetricsReport>,
    pub comm_rounds: u32,
    pub wall_clock_secs: f64,
    pub instrumentation_paths: Vec<PathBuf>,
}

/// Train one client on its local split with early stopping (patience epochs
/// without validation-accuracy improvement), returning the best-validation
/// checkpoint. Clients without a validation split fall back to training
/// accuracy as the stopping signal.
pub fn local_pretrain(
    client: &ClientDataset<Real>,
    arch: &Architecture,
    spec: &PretrainSpec,
    seed: u64,
) -> Result<(Model, PretrainLog)> {
    let (train_x, train_y) = client.train_data();
    if train_y.is_empty() {
        return Err(Error::Data(format!(
            "client {} has an empty training split",
            client.client_id
        )));
    }
    let (val_x, val_y) = client.val_data();
    let use_val = !val_y.is_empty();

    let mut init_rng = stream(seed, Domain::Init, client.client_id as u64, 0);
    let mut model = Model::init(arch, &mut init_rng)?;
    let mut train_rng = stream(seed, Domain::Training, client.client_id as u64, 0);
    let mut state = AdamState::new(&model, spec.adam());
    let freeze = FreezeMask::all_trainable(&model);

    let mut best_model = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stall = 0usize;
    let mut epochs_run = 0usize;
    for epoch in 0..spec.max_epochs {
        train_epochs(
            &mut model,
            &train_x,
            &train_y,
            &BatchLoss::Supervised,
            &mut state,
            &freeze,
            1,
            spec.batch_size,
            &mut train_rng,
        )?;
        epochs_run = epoch + 1;
        let acc = if use_val {
            accuracy(&model, &val_x, &val_y)?
        } else {
            accuracy(&model, &train_x, &train_y)?
        };
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_model = model.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= spec.patience {
                break;
            }
        }
    }
    Ok((
        best_model,
        PretrainLog {
            epochs_run,
            best_epoch,
            best_val_acc: best_acc,
        },
    ))
}

fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<GlobalDataset<Real>> {
    match cfg.dataset.kind {
        DatasetKind::Synthetic => Ok(generate_synthetic(&SyntheticSpec {
            num_classes: cfg.dataset.num_classes,
            feature_dim: cfg.dataset.feature_dim,
            train_per_class: cfg.dataset.train_per_class,
            test_per_class: cfg.dataset.test_per_class,
            cluster_spread: cfg.dataset.cluster_spread,
            seed,
        })),
        DatasetKind::Csv => {
            let train_path = cfg.dataset.train_path.as_ref().unwrap();
            let test_path = cfg.dataset.test_path.as_ref().unwrap();
            let (train_x, train_y) = read_dataset_csv::<Real>(train_path)?;
            let (test_x, test_y) = read_dataset_csv::<Real>(test_path)?;
            if test_x.cols() != train_x.cols() {
                return Err(Error::shape("csv feature dims", train_x.cols(), test_x.cols()));
            }
            let num_classes = train_y
                .iter()
                .chain(test_y.iter())
                .max()
                .map_or(0, |m| m + 1);
            if num_classes < 2 {
                return Err(Error::Data("csv dataset needs at least two classes".into()));
            }
            let feature_dim = train_x.cols();
            Ok(GlobalDataset {
                train_x,
                train_y,
                test_x,
                test_y,
                num_classes,
                feature_dim,
            })
        }
    }
}

fn partition_spec(cfg: &ExperimentConfig, seed: u64) -> PartitionSpec {
    let scheme = match cfg.partition.scheme.as_str() {
        "pathological" => PartitionScheme::Pathological {
            classes_per_client: cfg.partition.classes_per_client,
            min_fraction: cfg.partition.min_fraction,
            max_fraction: cfg.partition.max_fraction,
        },
        _ => PartitionScheme::Dirichlet {
            alpha: cfg.partition.alpha,
        },
    };
    PartitionSpec {
        scheme,
        num_clients: cfg.partition.num_clients,
        val_fraction: cfg.partition.val_fraction,
        seed,
    }
}

fn architecture(cfg: &ExperimentConfig, global: &GlobalDataset<Real>) -> Architecture {
    Architecture {
        input_dim: global.feature_dim,
        hidden: cfg.model.hidden.clone(),
        num_classes: global.num_classes,
        split_index: cfg.model.split_index,
    }
}

/// Generate/partition data and pretrain every client for one seed. Clients
/// pretrain in parallel; each draws from its own RNG streams so the result
/// is independent of scheduling.
pub fn build_seed_network(cfg: &ExperimentConfig, seed: u64) -> Result<SeedNetwork> {
    let global = build_dataset(cfg, seed)?;
    let clients = partition(&global, &partition_spec(cfg, seed))?;
    let arch = architecture(cfg, &global);

    let outcomes: Vec<(Model, PretrainLog)> = clients
        .par_iter()
        .map(|client| local_pretrain(client, &arch, &cfg.pretrain, seed))
        .collect::<Result<Vec<_>>>()?;
    let (pretrained, pretrain_logs): (Vec<Model>, Vec<PretrainLog>) = outcomes.into_iter().unzip();

    let pre_acc: Vec<BTreeMap<usize, f64>> = pretrained
        .par_iter()
        .map(|m| per_class_accuracy(m, &global.test_x, &global.test_y))
        .collect::<Result<Vec<_>>>()?;
    let train_sets: Vec<(Mat, Vec<usize>)> = clients.iter().map(ClientDataset::train_data).collect();

    Ok(SeedNetwork {
        seed,
        global,
        clients,
        pretrained,
        pretrain_logs,
        pre_acc,
        train_sets,
    })
}

fn select_queries(cfg: &ExperimentConfig, network: &SeedNetwork) -> Result<Vec<QuerySpec>> {
    network
        .clients
        .iter()
        .map(|client| {
            select_query(
                client,
                network.global.num_classes,
                cfg.query.mode,
                cfg.query.sample_threshold,
                network.seed,
            )
        })
        .collect()
}

/// Write `bytes` to `path`, or verify byte equality if it already exists
/// (pretrained checkpoints must be shared by every protocol of a seed).
fn persist_checkpoint(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        let old = std::fs::read(path)?;
        if old != bytes {
            return Err(Error::Internal(format!(
                "checkpoint {} differs from an earlier run of the same config; \
                 protocols within one seed must share pretrained checkpoints",
                path.display()
            )));
        }
        return Ok(());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn sweep_tag(point: Option<&(String, f64)>) -> String {
    match point {
        None => "base".to_string(),
        Some((param, value)) => format!("sweep_{param}_{value}"),
    }
}

/// Apply one sweep value to a copy of the config.
fn apply_sweep(cfg: &ExperimentConfig, param: &str, value: f64) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    let as_usize = |what: &str| -> Result<usize> {
        if value.fract() != 0.0 || value < 0.0 {
            return Err(Error::Config(format!(
                "sweep value {value} for {what} must be a non-negative integer"
            )));
        }
        Ok(value as usize)
    };
    match param {
        "classes_per_client" => out.partition.classes_per_client = as_usize(param)?,
        "dirichlet_alpha" => out.partition.alpha = value,
        "cluster_spread" => out.dataset.cluster_spread = value,
        "sample_threshold" => out.query.sample_threshold = as_usize(param)?,
        "rounds" => {
            for p in out.protocols.iter_mut() {
                if p.kind.is_federated() && p.kind != ProtocolKind::Fedavg1 {
                    p.rounds = Some(as_usize(param)?);
                }
            }
        }
        _ => {
            for p in out.protocols.iter_mut() {
                if !p.kind.is_transfer() {
                    continue;
                }
                match param {
                    "query_emphasis" => p.query_emphasis = Some(value),
                    "relevance_threshold" => p.relevance_threshold = Some(value),
                    "distill_weight" => p.distill_weight = Some(value),
                    "temperature" => p.temperature = Some(value),
                    "epochs" => p.epochs = Some(as_usize(param)?),
                    "phase2_epochs" => p.phase2_epochs = Some(as_usize(param)?),
                    "noise_batch" => p.noise_batch = Some(as_usize(param)?),
                    "selective_freeze_percent" => p.selective_freeze_percent = Some(value),
                    other => {
                        return Err(Error::Config(format!("sweep.parameter: unknown parameter {other:?}")))
                    }
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

struct ProtocolRun {
    reports: Vec<MetricsReport>,
    comm_rounds: u32,
    instrumentation: Vec<(usize, String)>,
    /// `(file stem, checkpoint bytes)` for post-transfer models.
    checkpoints: Vec<(String, Vec<u8>)>,
}

fn run_protocol_for_seed(
    cfg: &ExperimentConfig,
    spec: &ProtocolSpec,
    network: &SeedNetwork,
    queries: &[QuerySpec],
) -> Result<ProtocolRun> {
    let label = spec.kind.label();
    let test_x = &network.global.test_x;
    let test_y = &network.global.test_y;
    let num_clients = network.clients.len();

    let report_for = |client: usize, post: BTreeMap<usize, f64>, comm: u32| -> Result<MetricsReport> {
        MetricsReport::compute(
            client,
            label,
            &queries[client].classes,
            network.pre_acc[client].clone(),
            post,
            &network.clients[client].train_class_counts(),
            comm,
        )
    };

    match spec.kind {
        ProtocolKind::LocalOnly => {
            let reports = (0..num_clients)
                .map(|c| report_for(c, network.pre_acc[c].clone(), 0))
                .collect::<Result<Vec<_>>>()?;
            Ok(ProtocolRun {
                reports,
                comm_rounds: 0,
                instrumentation: Vec::new(),
                checkpoints: Vec::new(),
            })
        }
        ProtocolKind::Ensemble => {
            let models: Vec<&Model> = network.pretrained.iter().collect();
            let probs = ensemble_probs(&models, test_x)?;
            let labels = argmax_rows(&probs);
            let post = per_class_accuracy_of_labels(&labels, test_y)?;
            let reports = (0..num_clients)
                .map(|c| report_for(c, post.clone(), 1))
                .collect::<Result<Vec<_>>>()?;
            Ok(ProtocolRun {
                reports,
                comm_rounds: 1,
                instrumentation: Vec::new(),
                checkpoints: Vec::new(),
            })
        }
        ProtocolKind::Fedavg | ProtocolKind::Fedavg1 => {
            let fed = spec.fed_config();
            let outcome = fedavg(&network.pretrained, &network.train_sets, &fed, network.seed)?;
            let post = per_class_accuracy(&outcome.global, test_x, test_y)?;
            let reports = (0..num_clients)
                .map(|c| report_for(c, post.clone(), outcome.comm_rounds))
                .collect::<Result<Vec<_>>>()?;
            Ok(ProtocolRun {
                reports,
                comm_rounds: outcome.comm_rounds,
                instrumentation: Vec::new(),
                checkpoints: vec![(format!("{label}_global"), save_checkpoint(&outcome.global))],
            })
        }
        ProtocolKind::FtFedavg => {
            let fed = spec.fed_config();
            let (models, comm) = ft_fedavg(&network.pretrained, &network.train_sets, &fed, network.seed)?;
            let mut reports = Vec::with_capacity(num_clients);
            let mut checkpoints = Vec::with_capacity(num_clients);
            for (c, model) in models.iter().enumerate() {
                let post = per_class_accuracy(model, test_x, test_y)?;
                reports.push(report_for(c, post, comm)?);
                checkpoints.push((format!("{label}_client{c}"), save_checkpoint(model)));
            }
            Ok(ProtocolRun {
                reports,
                comm_rounds: comm,
                instrumentation: Vec::new(),
                checkpoints,
            })
        }
        _ => {
            let protocol = spec.kind.transfer_protocol().expect("transfer kind");
            let transfer_cfg = spec.transfer_config();
            let outcomes = (0..num_clients)
                .into_par_iter()
                .map(|student| {
                    let job = QueryJob {
                        student_id: student,
                        query_classes: queries[student].classes.clone(),
                        protocol,
                        config: transfer_cfg.clone(),
                    };
                    let net = TransferNetwork {
                        models: &network.pretrained,
                        train_x: &network.train_sets[student].0,
                        train_y: &network.train_sets[student].1,
                        student_local_classes: network.clients[student].local_classes(),
                        num_classes: network.global.num_classes,
                    };
                    crate::transfer::run_protocol(&job, &net, network.seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut reports = Vec::with_capacity(num_clients);
            let mut instrumentation = Vec::with_capacity(num_clients);
            let mut checkpoints = Vec::with_capacity(num_clients);
            let mut comm = 1;
            for (c, outcome) in outcomes.iter().enumerate() {
                let post = per_class_accuracy(&outcome.model, test_x, test_y)?;
                reports.push(report_for(c, post, outcome.comm_rounds)?);
                instrumentation.push((c, outcome.instrumentation.to_text()));
                checkpoints.push((format!("{label}_client{c}"), save_checkpoint(&outcome.model)));
                comm = outcome.comm_rounds;
            }
            Ok(ProtocolRun {
                reports,
                comm_rounds: comm,
                instrumentation,
                checkpoints,
            })
        }
    }
}

/// Execute the full experiment: every sweep point, every seed, every
/// protocol. A failed seed is logged and skipped; other seeds continue.
/// Artifacts land under `output_dir`: `results.csv`, per-run metrics JSON,
/// instrumentation logs, checkpoints and partition manifests.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;

    let sweep_points: Vec<Option<(String, f64)>> = match &cfg.sweep {
        None => vec![None],
        Some(s) => s.values.iter().map(|&v| Some((s.parameter.clone(), v))).collect(),
    };
    let sweep_level = cfg.sweep.as_ref().map(|s| s.level()).transpose()?;
    let cacheable = !matches!(sweep_level, Some(SweepLevel::Data));

    let mut records: Vec<RunRecord> = Vec::new();
    let mut runlog = String::new();
    runlog.push_str(&format!("config_hash={hash}\n"));
    let mut cache: HashMap<u64, Arc<SeedNetwork>> = HashMap::new();

    for point in &sweep_points {
        let effective = match point {
            None => cfg.clone(),
            Some((param, value)) => apply_sweep(cfg, param, *value)?,
        };
        let tag = sweep_tag(point.as_ref());
        let data_tag = if cacheable { "base".to_string() } else { tag.clone() };

        for &seed in &cfg.seeds {
            let started = Instant::now();
            let seed_result = (|| -> Result<Vec<RunRecord>> {
                let network: Arc<SeedNetwork> = if cacheable {
                    match cache.get(&seed) {
                        Some(n) => Arc::clone(n),
                        None => {
                            let built = Arc::new(build_seed_network(&effective, seed)?);
                            cache.insert(seed, Arc::clone(&built));
                            built
                        }
                    }
                } else {
                    Arc::new(build_seed_network(&effective, seed)?)
                };

                // Persist partition manifest and pretrained checkpoints.
                let ckpt_dir = out.join("checkpoints").join(&data_tag).join(format!("seed{seed}"));
                std::fs::create_dir_all(&ckpt_dir)?;
                let manifest = partition_manifest(&network.clients, &partition_spec(&effective, seed));
                std::fs::write(ckpt_dir.join("partition_manifest.txt"), manifest)?;
                for (c, model) in network.pretrained.iter().enumerate() {
                    persist_checkpoint(&ckpt_dir.join(format!("pretrained_client{c}.qktm")), &save_checkpoint(model))?;
                }

                let queries = select_queries(&effective, &network)?;
                let point_ckpt_dir = out.join("checkpoints").join(&tag).join(format!("seed{seed}"));
                let metrics_dir = out.join("metrics").join(&tag).join(format!("seed{seed}"));
                let inst_dir = out.join("instrumentation").join(&tag).join(format!("seed{seed}"));
                std::fs::create_dir_all(&point_ckpt_dir)?;
                std::fs::create_dir_all(&metrics_dir)?;
                std::fs::create_dir_all(&inst_dir)?;

                let mut seed_records = Vec::new();
                for spec in &effective.protocols {
                    let run_started = Instant::now();
                    let run = run_protocol_for_seed(&effective, spec, &network, &queries)?;
                    let mut inst_paths = Vec::new();
                    for (client, text) in &run.instrumentation {
                        let path = inst_dir.join(format!("{}_client{client}.log", spec.kind.label()));
                        std::fs::write(&path, text)?;
                        inst_paths.push(path);
                    }
                    for (stem, bytes) in &run.checkpoints {
                        std::fs::write(point_ckpt_dir.join(format!("{stem}.qktm")), bytes)?;
                    }
                    for report in &run.reports {
                        let path = metrics_dir.join(format!(
                            "{}_client{}.json",
                            spec.kind.label(),
                            report.client_id
                        ));
                        std::fs::write(&path, serde_json::to_string_pretty(report).unwrap())?;
                    }
                    seed_records.push(RunRecord {
                        config_hash: hash.clone(),
                        seed,
                        protocol: spec.kind.label().to_string(),
                        sweep_param: point.as_ref().map(|(p, _)| p.clone()),
                        sweep_value: point.as_ref().map(|(_, v)| *v),
                        reports: run.reports,
                        comm_rounds: run.comm_rounds,
                        wall_clock_secs: run_started.elapsed().as_secs_f64(),
                        instrumentation_paths: inst_paths,
                    });
                }
                Ok(seed_records)
            })();
            match seed_result {
                Ok(mut rs) => {
                    runlog.push_str(&format!(
                        "ok sweep={tag} seed={seed} wall_clock_secs={:.3}\n",
                        started.elapsed().as_secs_f64()
                    ));
                    records.append(&mut rs);
                }
                Err(e) => {
                    runlog.push_str(&format!("error sweep={tag} seed={seed}: {e}\n"));
                    eprintln!("seed {seed} (sweep {tag}) aborted: {e}");
                }
            }
        }
    }

    let rows = super::report::result_rows(&records);
    super::report::write_results_csv(&out.join("results.csv"), &rows)?;
    std::fs::write(out.join("runlog.txt"), runlog)?;
    Ok(records)
}
