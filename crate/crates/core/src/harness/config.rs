//! Experiment configuration: TOML schema, validation and hashing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::FedConfig;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::transfer::{LightDeployment, TransferConfig, TransferProtocol};

use crate::data::QueryMode;

/// Dataset source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

/// Dataset section. Synthetic fields apply to `kind = "synthetic"`, path
/// fields to `kind = "csv"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_cluster_spread")]
    pub cluster_spread: f64,
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
}

fn default_num_classes() -> usize {
    10
}
fn default_feature_dim() -> usize {
    16
}
fn default_train_per_class() -> usize {
    150
}
fn default_test_per_class() -> usize {
    40
}
fn default_cluster_spread() -> f64 {
    0.8
}

/// Partition section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpecToml {
    pub scheme: String,
    pub num_clients: usize,
    #[serde(default = "default_classes_per_client")]
    pub classes_per_client: usize,
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    #[serde(default = "default_max_fraction")]
    pub max_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_classes_per_client() -> usize {
    3
}
fn default_min_fraction() -> f64 {
    0.3
}
fn default_max_fraction() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.1
}
fn default_val_fraction() -> f64 {
    0.2
}

/// Network architecture section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub split_index: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: vec![64, 32],
            split_index: None,
        }
    }
}

/// Local pretraining section (early stopping on validation accuracy).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSpec {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        PretrainSpec {
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 4e-4,
        }
    }
}

impl PretrainSpec {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Query selection policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryPolicy {
    pub mode: QueryMode,
    pub sample_threshold: usize,
}

impl Default for QueryPolicy {
    fn default() -> Self {
        QueryPolicy {
            mode: QueryMode::Single,
            sample_threshold: 50,
        }
    }
}

/// Protocol families the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    LocalOnly,
    NaiveKd,
    KdSelected,
    KdSelectedMasked,
    Qkt,
    QktLight,
    Fedavg,
    Fedavg1,
    FtFedavg,
    Ensemble,
}

impl ProtocolKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolKind::LocalOnly => "local_only",
            ProtocolKind::NaiveKd => "naive_kd",
            ProtocolKind::KdSelected => "kd_selected",
            ProtocolKind::KdSelectedMasked => "kd_selected_masked",
            ProtocolKind::Qkt => "qkt",
            ProtocolKind::QktLight => "qkt_light",
            ProtocolKind::Fedavg => "fedavg",
            ProtocolKind::Fedavg1 => "fedavg1",
            ProtocolKind::FtFedavg => "ft_fedavg",
            ProtocolKind::Ensemble => "ensemble",
        }
    }

    pub fn is_transfer(&self) -> bool {
        matches!(
            self,
            ProtocolKind::NaiveKd
                | ProtocolKind::KdSelected
                | ProtocolKind::KdSelectedMasked
                | ProtocolKind::Qkt
                | ProtocolKind::QktLight
        )
    }

    pub fn is_federated(&self) -> bool {
        matches!(
            self,
            ProtocolKind::Fedavg | ProtocolKind::Fedavg1 | ProtocolKind::FtFedavg
        )
    }

    pub fn transfer_protocol(&self) -> Option<TransferProtocol> {
        match self {
            ProtocolKind::NaiveKd => Some(TransferProtocol::NaiveKd),
            ProtocolKind::KdSelected => Some(TransferProtocol::KdSelected),
            ProtocolKind::KdSelectedMasked => Some(TransferProtocol::KdSelectedMasked),
            ProtocolKind::Qkt => Some(TransferProtocol::Qkt),
            ProtocolKind::QktLight => Some(TransferProtocol::QktLight),
            _ => None,
        }
    }
}

/// One `[[protocols]]` entry: a kind plus optional knob overrides. Knobs
/// that do not apply to the kind are rejected during validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    #[serde(default)]
    pub relevance_threshold: Option<f64>,
    #[serde(default)]
    pub query_emphasis: Option<f64>,
    #[serde(default)]
    pub distill_weight: Option<f64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub phase2_epochs: Option<usize>,
    #[serde(default)]
    pub noise_batch: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub selective_freeze_percent: Option<f64>,
    #[serde(default)]
    pub light_deployment: Option<String>,
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default)]
    pub local_epochs: Option<usize>,
    #[serde(default)]
    pub participation_fraction: Option<f64>,
}

impl ProtocolSpec {
    pub fn of_kind(kind: ProtocolKind) -> Self {
        ProtocolSpec {
            kind,
            relevance_threshold: None,
            query_emphasis: None,
            distill_weight: None,
            temperature: None,
            epochs: None,
            phase2_epochs: None,
            noise_batch: None,
            batch_size: None,
            learning_rate: None,
            weight_decay: None,
            selective_freeze_percent: None,
            light_deployment: None,
            rounds: None,
            local_epochs: None,
            participation_fraction: None,
        }
    }

    fn light_deployment_enum(&self) -> Result<LightDeployment> {
        match self.light_deployment.as_deref() {
            None | Some("per_client") => Ok(LightDeployment::PerClient),
            Some("central_server") => Ok(LightDeployment::CentralServer),
            Some("volunteer_client") => Ok(LightDeployment::VolunteerClient),
            Some(other) => Err(Error::Config(format!(
                "protocols.light_deployment: unknown value {other:?} \
                 (expected per_client, central_server or volunteer_client)"
            ))),
        }
    }

    /// Effective transfer configuration with defaults filled in.
    pub fn transfer_config(&self) -> TransferConfig {
        let base = TransferConfig::default();
        TransferConfig {
            relevance_threshold: self.relevance_threshold.unwrap_or(base.relevance_threshold),
            query_emphasis: self.query_emphasis.unwrap_or(base.query_emphasis),
            distill_weight: self.distill_weight.unwrap_or(base.distill_weight),
            temperature: self.temperature.unwrap_or(base.temperature),
            epochs: self.epochs.unwrap_or(base.epochs),
            phase2_epochs: self.phase2_epochs,
            noise_batch: self.noise_batch.unwrap_or(base.noise_batch),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            adam: AdamConfig {
                learning_rate: self.learning_rate.unwrap_or(base.adam.learning_rate),
                weight_decay: self.weight_decay.unwrap_or(base.adam.weight_decay),
                ..base.adam
            },
            selective_freeze_percent: self.selective_freeze_percent,
            light_deployment: self.light_deployment_enum().unwrap_or(LightDeployment::PerClient),
        }
    }

    /// Effective federated configuration with defaults filled in.
    pub fn fed_config(&self) -> FedConfig {
        let base = FedConfig::default();
        let rounds = if self.kind == ProtocolKind::Fedavg1 {
            1
        } else {
            self.rounds.unwrap_or(base.rounds)
        };
        FedConfig {
            rounds,
            local_epochs: self.local_epochs.unwrap_or(base.local_epochs),
            participation_fraction: self
                .participation_fraction
                .unwrap_or(base.participation_fraction),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            adam: AdamConfig {
                learning_rate: self.learning_rate.unwrap_or(base.adam.learning_rate),
                weight_decay: self.weight_decay.unwrap_or(base.adam.weight_decay),
                ..base.adam
            },
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let at = |field: &str| format!("protocols[{index}] ({}): field `{field}`", self.kind.label());
        let transfer_fields: [(&str, bool); 9] = [
            ("relevance_threshold", self.relevance_threshold.is_some()),
            ("query_emphasis", self.query_emphasis.is_some()),
            ("distill_weight", self.distill_weight.is_some()),
            ("temperature", self.temperature.is_some()),
            ("epochs", self.epochs.is_some()),
            ("phase2_epochs", self.phase2_epochs.is_some()),
            ("noise_batch", self.noise_batch.is_some()),
            ("selective_freeze_percent", self.selective_freeze_percent.is_some()),
            ("light_deployment", self.light_deployment.is_some()),
        ];
        let fed_fields: [(&str, bool); 3] = [
            ("rounds", self.rounds.is_some()),
            ("local_epochs", self.local_epochs.is_some()),
            ("participation_fraction", self.participation_fraction.is_some()),
        ];
        if !self.kind.is_transfer() {
            for (name, set) in transfer_fields {
                if set {
                    return Err(Error::Config(format!(
                        "{}: only applies to distillation protocols",
                        at(name)
                    )));
                }
            }
        }
        if !self.kind.is_federated() {
            for (name, set) in fed_fields {
                if set {
                    return Err(Error::Config(format!(
                        "{}: only applies to federated protocols",
                        at(name)
                    )));
                }
            }
        }
        if self.kind == ProtocolKind::Fedavg1 {
            if let Some(r) = self.rounds {
                if r != 1 {
                    return Err(Error::Config(format!(
                        "{}: fedavg1 is the single-round variant; use kind = \"fedavg\" for {r} rounds",
                        at("rounds")
                    )));
                }
            }
        }
        if self.kind.is_transfer() {
            let cfg = self.transfer_config();
            if !(cfg.relevance_threshold > 0.0 && cfg.relevance_threshold < 1.0) {
                return Err(Error::Config(format!(
                    "{}: must be strictly inside (0, 1)",
                    at("relevance_threshold")
                )));
            }
            if cfg.query_emphasis <= 0.0 {
                return Err(Error::Config(format!("{}: must be > 0", at("query_emphasis"))));
            }
            if cfg.epochs == 0 {
                return Err(Error::Config(format!("{}: must be >= 1", at("epochs"))));
            }
            if cfg.noise_batch == 0 {
                return Err(Error::Config(format!("{}: must be >= 1", at("noise_batch"))));
            }
            if let Some(z) = cfg.selective_freeze_percent {
                if !(0.0..=100.0).contains(&z) {
                    return Err(Error::Config(format!("{}: must be in [0, 100]", at("selective_freeze_percent"))));
                }
            }
            // Reject the unimplemented light deployments early, with the
            // full message.
            self.light_deployment_enum()?;
            TransferConfig {
                light_deployment: self.light_deployment_enum()?,
                ..cfg
            }
            .check_runnable()?;
        }
        if self.kind.is_federated() {
            let cfg = self.fed_config();
            if cfg.rounds == 0 {
                return Err(Error::Config(format!("{}: must be >= 1", at("rounds"))));
            }
            if cfg.local_epochs == 0 {
                return Err(Error::Config(format!("{}: must be >= 1", at("local_epochs"))));
            }
            if !(0.0 < cfg.participation_fraction && cfg.participation_fraction <= 1.0) {
                return Err(Error::Config(format!("{}: must be in (0, 1]", at("participation_fraction"))));
            }
        }
        Ok(())
    }
}

/// What a sweep parameter invalidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepLevel {
    /// Dataset or partition change: everything is rebuilt per value.
    Data,
    /// Query-policy change: pretraining is reused, queries are reselected.
    Query,
    /// Protocol-knob change: pretraining and queries are reused.
    Transfer,
}

/// Optional sweep over one named parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn level(&self) -> Result<SweepLevel> {
        match self.parameter.as_str() {
            "classes_per_client" | "dirichlet_alpha" | "cluster_spread" => Ok(SweepLevel::Data),
            "sample_threshold" => Ok(SweepLevel::Query),
            "query_emphasis" | "relevance_threshold" | "distill_weight" | "temperature" | "epochs"
            | "phase2_epochs" | "noise_batch" | "selective_freeze_percent" | "rounds" => {
                Ok(SweepLevel::Transfer)
            }
            other => Err(Error::Config(format!(
                "sweep.parameter: unknown parameter {other:?}"
            ))),
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub partition: PartitionSpecToml,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub pretrain: PretrainSpec,
    #[serde(default)]
    pub query: QueryPolicy,
    pub protocols: Vec<ProtocolSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.protocols.is_empty() {
            return Err(Error::Config("protocols: need at least one protocol".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: need at least one seed".into()));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds: duplicate seed values".into()));
        }
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                if self.dataset.num_classes < 2 {
                    return Err(Error::Config("dataset.num_classes: must be >= 2".into()));
                }
                if self.dataset.feature_dim == 0
                    || self.dataset.train_per_class == 0
                    || self.dataset.test_per_class == 0
                {
                    return Err(Error::Config(
                        "dataset: feature_dim, train_per_class and test_per_class must be >= 1".into(),
                    ));
                }
                if self.dataset.cluster_spread < 0.0 {
                    return Err(Error::Config("dataset.cluster_spread: must be >= 0".into()));
                }
            }
            DatasetKind::Csv => {
                if self.dataset.train_path.is_none() || self.dataset.test_path.is_none() {
                    return Err(Error::Config(
                        "dataset: csv datasets need train_path and test_path".into(),
                    ));
                }
            }
        }
        match self.partition.scheme.as_str() {
            "pathological" => {
                if self.partition.classes_per_client == 0 {
                    return Err(Error::Config("partition.classes_per_client: must be >= 1".into()));
                }
                if !(0.0 < self.partition.min_fraction
                    && self.partition.min_fraction <= self.partition.max_fraction
                    && self.partition.max_fraction <= 1.0)
                {
                    return Err(Error::Config(
                        "partition: need 0 < min_fraction <= max_fraction <= 1".into(),
                    ));
                }
            }
            "dirichlet" => {
                if self.partition.alpha <= 0.0 {
                    return Err(Error::Config("partition.alpha: must be > 0".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "partition.scheme: unknown scheme {other:?} (expected pathological or dirichlet)"
                )));
            }
        }
        if self.partition.num_clients < 2 {
            return Err(Error::Config("partition.num_clients: must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.partition.val_fraction) {
            return Err(Error::Config("partition.val_fraction: must be in [0, 1)".into()));
        }
        if self.query.sample_threshold == 0 {
            return Err(Error::Config("query.sample_threshold: must be >= 1".into()));
        }
        if self.pretrain.max_epochs == 0 || self.pretrain.patience == 0 {
            return Err(Error::Config("pretrain: max_epochs and patience must be >= 1".into()));
        }
        for (i, p) in self.protocols.iter().enumerate() {
            p.validate(i)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep.values: must not be empty".into()));
            }
            sweep.level()?;
        }
        Ok(())
    }

    /// Hash of the semantic configuration (the output directory does not
    /// participate).
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = PathBuf::new();
        let json = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse and validate a TOML config file. Parse errors carry the line and
/// column reported by the TOML parser.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
            seeds = [0, 1]
            output_dir = "runs/test"

            [dataset]
            kind = "synthetic"
            num_classes = 6

            [partition]
            scheme = "pathological"
            num_clients = 4
            classes_per_client = 2

            [[protocols]]
            kind = "qkt"

            [[protocols]]
            kind = "fedavg"
            rounds = 5
        "#
        .to_string()
    }

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse(&minimal_toml()).unwrap();
        assert_eq!(cfg.model.hidden, vec![64, 32]);
        assert_eq!(cfg.pretrain.max_epochs, 100);
        assert_eq!(cfg.pretrain.patience, 10);
        assert_eq!(cfg.query.sample_threshold, 50);
        assert_eq!(cfg.protocols[0].transfer_config().query_emphasis, 1.5);
        assert_eq!(cfg.protocols[0].transfer_config().relevance_threshold, 0.01);
        assert_eq!(cfg.protocols[1].fed_config().rounds, 5);
        assert_eq!(cfg.protocols[1].fed_config().local_epochs, 2);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = minimal_toml().replace("rounds = 5", "rounds = 5\nbogus_key = 1");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn misplaced_protocol_fields_are_rejected() {
        let text = minimal_toml().replace("kind = \"qkt\"", "kind = \"qkt\"\nrounds = 3");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("rounds") && err.contains("federated"), "{err}");
    }

    #[test]
    fn threshold_outside_open_interval_is_rejected() {
        let text = minimal_toml().replace("kind = \"qkt\"", "kind = \"qkt\"\nrelevance_threshold = 0.0");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn light_deployment_variants_are_rejected_with_guidance() {
        let text = minimal_toml().replace(
            "kind = \"qkt\"",
            "kind = \"qkt_light\"\nlight_deployment = \"central_server\"",
        );
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("per_client"), "{err}");
    }

    #[test]
    fn fedavg1_rejects_multi_round_override() {
        let text = minimal_toml().replace("kind = \"fedavg\"\n            rounds = 5", "kind = \"fedavg1\"\n            rounds = 7");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("single-round"), "{err}");
    }

    #[test]
    fn hash_ignores_output_dir_but_tracks_semantics() {
        let a = parse(&minimal_toml()).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seeds = vec![0, 2];
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sweep_levels_classify_parameters() {
        let sweep = |p: &str| SweepSpec {
            parameter: p.into(),
            values: vec![1.0],
        };
        assert_eq!(sweep("query_emphasis").level().unwrap(), SweepLevel::Transfer);
        assert_eq!(sweep("dirichlet_alpha").level().unwrap(), SweepLevel::Data);
        assert_eq!(sweep("sample_threshold").level().unwrap(), SweepLevel::Query);
        assert!(sweep("nonsense").level().is_err());
    }
}
