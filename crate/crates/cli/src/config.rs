//! TOML experiment configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cpa_gnn::aggregators::AggregatorKind;
use cpa_gnn::graph::TaskKind;
use cpa_gnn::models::{Activation, ReadoutMode};
use cpa_gnn::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// On-disk experiment description. Unknown keys are rejected; optional
/// fields fall back to the task profile's defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_dir: PathBuf,
    pub dataset_name: String,
    pub output_dir: PathBuf,
    /// "node" or "graph".
    pub task: String,
    /// original | additive | scaled | f_additive | f_scaled.
    pub aggregator: String,
    /// Defaults profile for graph tasks: "bio" (sum readout, hidden 32,
    /// lr 0.01) or "social" (mean readout, hidden 64, lr 0.0025).
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub repeats: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub lr_drop_every: Option<usize>,
    #[serde(default)]
    pub lr_drop_factor: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub num_layers: Option<usize>,
    /// sum | mean (graph task only).
    #[serde(default)]
    pub readout: Option<String>,
    /// relu | leaky_relu.
    #[serde(default)]
    pub activation: Option<String>,
    /// Falls back to $CPA_GNN_SEED, then 0.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Also train the original aggregator on identical folds and report
    /// paired significance.
    #[serde(default)]
    pub compare_baseline: bool,
    /// Replace node features by node degrees before training.
    #[serde(default)]
    pub degree_relabel: bool,
}

fn default_profile() -> String {
    "bio".to_string()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Resolve into a full training configuration, collecting every
    /// offending key instead of stopping at the first.
    pub fn resolve(&self, env_seed: Option<u64>) -> Result<(TrainConfig, TaskKind), Vec<String>> {
        let mut errors = Vec::new();

        let task = match self.task.as_str() {
            "node" => Some(TaskKind::NodeLevel),
            "graph" => Some(TaskKind::GraphLevel),
            other => {
                errors.push(format!("task: unknown value '{other}' (expected node|graph)"));
                None
            }
        };
        let variant = match AggregatorKind::from_str(&self.aggregator) {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(format!("aggregator: {e}"));
                None
            }
        };
        if !matches!(self.profile.as_str(), "bio" | "social") {
            errors.push(format!(
                "profile: unknown value '{}' (expected bio|social)",
                self.profile
            ));
        }
        let readout = match &self.readout {
            None => None,
            Some(s) => match ReadoutMode::from_str(s) {
                Ok(r) => Some(r),
                Err(e) => {
                    errors.push(format!("readout: {e}"));
                    None
                }
            },
        };
        let activation = match &self.activation {
            None => None,
            Some(s) => match Activation::from_str(s) {
                Ok(a) => Some(a),
                Err(e) => {
                    errors.push(format!("activation: {e}"));
                    None
                }
            },
        };
        if !self.dataset_dir.is_dir() {
            errors.push(format!(
                "dataset_dir: {} is not a directory",
                self.dataset_dir.display()
            ));
        }
        if !errors.is_empty() {
            return Err(errors);
        }

        let (task, variant) = (task.expect("checked"), variant.expect("checked"));
        let mut cfg = match (task, self.profile.as_str()) {
            (TaskKind::NodeLevel, _) => TrainConfig::node_defaults(variant),
            (TaskKind::GraphLevel, "social") => TrainConfig::graph_social_defaults(variant),
            (TaskKind::GraphLevel, _) => TrainConfig::graph_bio_defaults(variant),
        };
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lr_drop_every {
            cfg.lr_drop_every = v;
        }
        if let Some(v) = self.lr_drop_factor {
            cfg.lr_drop_factor = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.num_layers {
            cfg.num_layers = v;
        }
        if let Some(r) = readout {
            cfg.readout = r;
        }
        if let Some(a) = activation {
            cfg.activation = a;
        }
        cfg.seed = self.seed.or(env_seed).unwrap_or(0);
        cfg.validate().map_err(|e| vec![e.to_string()])?;
        Ok((cfg, task))
    }
}
