//! Flat experiment configuration: defaults, then a JSON file, then flags.

use std::path::{Path, PathBuf};

use repbank::eval::{ProbeConfig, DEFAULT_PROBE_SWEEP};
use repbank::{Error, KnnConfig, Result, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Train decoders and the train bank, then infer test representations.
    TrainInfer,
    /// Reuse a decoder checkpoint and infer both splits.
    TransferInfer,
    /// Evaluate baselines only.
    BaselineOnly,
}

/// Every key of a config file. Names match the command-line flags with `_`
/// in place of `-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    pub checkpoint: Option<PathBuf>,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: Option<usize>,
    pub depth: usize,
    pub mlp_weight_decay: f64,
    pub nonneg: bool,
    pub seed: u64,
    pub infer_epochs: usize,
    pub infer_lr: Option<f64>,

    pub k: usize,
    pub probe: bool,
    pub probe_epochs: usize,
    pub probe_batch_size: usize,
    pub probe_lr: f64,
    pub probe_momentum: f64,
    pub probe_sweep: Vec<f64>,

    /// Reference batch size for linear lr scaling on the batch sweep axis.
    pub base_batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = ProbeConfig::default();
        Self {
            manifest: None,
            out: None,
            mode: Mode::TrainInfer,
            checkpoint: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_epochs: t.warmup_epochs,
            depth: t.depth,
            mlp_weight_decay: t.mlp_weight_decay,
            nonneg: t.nonneg,
            seed: t.seed,
            infer_epochs: t.infer_epochs,
            infer_lr: t.infer_lr,
            k: KnnConfig::default().k,
            probe: false,
            probe_epochs: p.epochs,
            probe_batch_size: p.batch_size,
            probe_lr: p.lr,
            probe_momentum: p.momentum,
            probe_sweep: DEFAULT_PROBE_SWEEP.to_vec(),
            base_batch: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup_epochs: self.warmup_epochs,
            depth: self.depth,
            mlp_weight_decay: self.mlp_weight_decay,
            nonneg: self.nonneg,
            seed: self.seed,
            infer_epochs: self.infer_epochs,
            infer_lr: self.infer_lr,
        }
    }

    pub fn knn(&self) -> KnnConfig {
        KnnConfig { k: self.k }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe_epochs,
            batch_size: self.probe_batch_size,
            lr: self.probe_lr,
            momentum: self.probe_momentum,
            sweep: self.probe_sweep.clone(),
            seed: self.seed,
        }
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no manifest given (--manifest or \"manifest\" key)".into()))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no output directory given (--out or \"out\" key)".into()))
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no decoder checkpoint given (--checkpoint or \"checkpoint\" key)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.base_batch == 0 {
            return Err(Error::InvalidConfig("base_batch must be at least 1".into()));
        }
        if self.mode == Mode::TransferInfer && self.checkpoint.is_none() {
            return Err(Error::InvalidConfig("transfer-infer mode requires a checkpoint".into()));
        }
        Ok(())
    }
}

/// Layers `defaults < base < file < flags` and checks for unknown keys.
///
/// `base` carries values inherited from an earlier run, such as the training
/// config stored next to a checkpoint.
pub fn resolve(base: Option<Map<String, Value>>, file: Option<&Path>, flags: Map<String, Value>) -> Result<ExperimentConfig> {
    let Value::Object(mut merged) = serde_json::to_value(ExperimentConfig::default()).expect("serializable") else {
        unreachable!("config serializes to an object")
    };
    let known: Vec<String> = merged.keys().cloned().collect();
    let mut layers = Vec::new();
    if let Some(b) = base {
        layers.push(("checkpoint sidecar".to_string(), b));
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => layers.push((path.display().to_string(), m)),
            Ok(_) => return Err(Error::InvalidConfig(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => return Err(Error::InvalidConfig(format!("{}: {e}", path.display()))),
        }
    }
    layers.push(("command line".to_string(), flags));
    for (source, layer) in layers {
        for (key, value) in layer {
            if !known.contains(&key) {
                return Err(Error::InvalidConfig(format!("{source}: unknown config key {key:?}")));
            }
            merged.insert(key, value);
        }
    }
    // Relative paths in a config file are taken as given (relative to the
    // working directory), like their flag counterparts.
    let cfg: ExperimentConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// The training keys of a stored `TrainConfig`, as a config layer.
pub fn train_layer(t: &TrainConfig) -> Map<String, Value> {
    match serde_json::to_value(t).expect("serializable") {
        Value::Object(m) => m,
        _ => unreachable!("train config serializes to an object"),
    }
}
