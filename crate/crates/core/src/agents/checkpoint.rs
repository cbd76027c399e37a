use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ActorPolicy, AgentError, EpisodeStat, Policy, QPolicy, ValueInputMode};
use crate::env::EnvConfig;
use crate::nn::{Activation, AdamState, Layer, Mlp, MlpSizes};
use crate::passes::Catalog;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    Dqn,
    A2c,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Ppo => "ppo",
            Algo::Dqn => "dqn",
            Algo::A2c => "a2c",
        })
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "dqn" => Ok(Algo::Dqn),
            "a2c" => Ok(Algo::A2c),
            other => Err(format!("unknown algorithm `{other}` (expected ppo, dqn or a2c)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint was trained against pass catalog {found}, current catalog is {expected}")]
    Catalog { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub sizes: MlpSizes,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl NetworkRecord {
    pub fn from_net(net: &Mlp) -> Self {
        Self {
            sizes: net.sizes.clone(),
            activation: net.activation,
            layers: net.layers.clone(),
        }
    }

    pub fn to_net(&self) -> Result<Mlp, CheckpointError> {
        let net = Mlp {
            sizes: self.sizes.clone(),
            activation: self.activation,
            layers: self.layers.clone(),
        };
        let template = Mlp::zeros(self.sizes.clone());
        let dims_ok = template.layers.len() == net.layers.len()
            && template
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(a, b)| a.w.len() == b.w.len() && a.b.len() == b.b.len());
        if !dims_ok {
            return Err(CheckpointError::Malformed("layer sizes do not chain".into()));
        }
        if !net.is_finite() {
            return Err(CheckpointError::Malformed("non-finite parameters".into()));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub policy: AdamState,
    pub value: Option<AdamState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub algo: Algo,
    pub seed: u64,
    pub steps: usize,
    pub updates: usize,
    pub shaping: bool,
    pub value_input_mode: Option<ValueInputMode>,
    pub policy_input_len: usize,
    pub value_input_len: Option<usize>,
    pub action_count: usize,
    pub catalog_fingerprint: String,
    pub env: EnvConfig,
}

/// Trained networks plus optimizer state. For DQN the top-level network is
/// the Q network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub sizes: MlpSizes,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    pub optimizer_state: OptimizerState,
    pub value_network: Option<NetworkRecord>,
    pub training_meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(
        policy: &Mlp,
        value: Option<&Mlp>,
        optimizer_state: OptimizerState,
        training_meta: TrainingMeta,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            sizes: policy.sizes.clone(),
            activation: policy.activation,
            layers: policy.layers.clone(),
            optimizer_state,
            value_network: value.map(NetworkRecord::from_net),
            training_meta,
        }
    }

    pub fn policy_net(&self) -> Result<Mlp, CheckpointError> {
        NetworkRecord {
            sizes: self.sizes.clone(),
            activation: self.activation,
            layers: self.layers.clone(),
        }
        .to_net()
    }

    pub fn value_net(&self) -> Result<Option<Mlp>, CheckpointError> {
        self.value_network.as_ref().map(NetworkRecord::to_net).transpose()
    }

    pub fn policy(&self) -> Result<Box<dyn Policy>, CheckpointError> {
        let net = self.policy_net()?;
        Ok(match self.training_meta.algo {
            Algo::Dqn => Box::new(QPolicy { net }),
            Algo::Ppo | Algo::A2c => Box::new(ActorPolicy { net }),
        })
    }

    pub fn check_catalog(&self, catalog: &Catalog) -> Result<(), CheckpointError> {
        let expected = catalog.fingerprint();
        if self.training_meta.catalog_fingerprint != expected {
            return Err(CheckpointError::Catalog {
                expected,
                found: self.training_meta.catalog_fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        let meta = &ckpt.training_meta;
        let policy = ckpt.policy_net()?;
        if policy.input_dim() != meta.policy_input_len || policy.output_dim() != meta.action_count {
            return Err(CheckpointError::Malformed(format!(
                "network is {}x{}, metadata says {}x{}",
                policy.input_dim(),
                policy.output_dim(),
                meta.policy_input_len,
                meta.action_count
            )));
        }
        if ckpt.value_net()?.map(|v| v.input_dim()) != meta.value_input_len {
            return Err(CheckpointError::Malformed(
                "value network input does not match metadata".into(),
            ));
        }
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file first so a crash never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub algo: Algo,
    pub seed: u64,
    pub total_steps: usize,
    pub shaping: bool,
    pub value_input_mode: Option<ValueInputMode>,
    pub policy_input_len: usize,
    pub value_input_len: Option<usize>,
    pub action_count: usize,
    pub catalog_fingerprint: String,
    pub train_graphs: usize,
    pub env: EnvConfig,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub steps: usize,
    pub mean_episode_return: Option<f64>,
    pub mean_final_opcount: Option<f64>,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub approx_kl: Option<f64>,
    pub episodes: usize,
    pub final_opcounts: Vec<u64>,
}

impl UpdateRecord {
    pub(crate) fn from_episodes(update: usize, steps: usize, stats: &[EpisodeStat]) -> Self {
        let n = stats.len();
        let mean = |f: &dyn Fn(&EpisodeStat) -> f64| (n > 0).then(|| stats.iter().map(f).sum::<f64>() / n as f64);
        Self {
            update,
            steps,
            mean_episode_return: mean(&|s| s.discounted_return),
            mean_final_opcount: mean(&|s| s.final_op_count as f64),
            policy_loss: None,
            value_loss: None,
            entropy: None,
            clip_fraction: None,
            approx_kl: None,
            episodes: n,
            final_opcounts: stats.iter().map(|s| s.final_op_count).collect(),
        }
    }
}

/// Line-delimited training log: one `{"meta": ...}` line, then one line per
/// update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub meta: LogMeta,
    pub records: Vec<UpdateRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({ "meta": self.meta })).expect("meta serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| CheckpointError::Malformed("empty training log".into()))?;
        #[derive(Deserialize)]
        struct Head {
            meta: LogMeta,
        }
        let head: Head = serde_json::from_str(first)?;
        let records = lines.map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Self {
            meta: head.meta,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Mean episode return of the latest update that finished an episode.
    pub fn final_mean_episode_return(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.mean_episode_return)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

/// Training error together with the state before the failing update.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct TrainFailure {
    #[source]
    pub error: AgentError,
    pub last_good: Option<Box<TrainOutcome>>,
}

impl From<AgentError> for TrainFailure {
    fn from(error: AgentError) -> Self {
        Self { error, last_good: None }
    }
}
