//! Run configuration: every hyperparameter of a training run, serializable to
//! TOML, with dotted-key overrides and a provenance hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apf::Eviction;
use crate::error::{CoreError, Result};

/// Which agent runs: the bare dueling DQN or a shaped variant with one of the
/// pluggable encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ddqn,
    ApfWnetDdqn,
    ApfUnetDdqn,
    ApfOracleDdqn,
}

impl Variant {
    pub fn uses_apf(self) -> bool {
        !matches!(self, Variant::Ddqn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ddqn => "ddqn",
            Variant::ApfWnetDdqn => "apf_wnet_ddqn",
            Variant::ApfUnetDdqn => "apf_unet_ddqn",
            Variant::ApfOracleDdqn => "apf_oracle_ddqn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddqn" => Ok(Variant::Ddqn),
            "apf_wnet_ddqn" => Ok(Variant::ApfWnetDdqn),
            "apf_unet_ddqn" => Ok(Variant::ApfUnetDdqn),
            "apf_oracle_ddqn" => Ok(Variant::ApfOracleDdqn),
            other => Err(CoreError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Frame preprocessing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreConfig {
    /// Side length of the square grayscale frame.
    pub side: usize,
    /// Repeat each chosen action this many frames (1 = no skip).
    pub frame_skip: usize,
    /// Clip environmental rewards to [-1, 1] before learning.
    pub reward_clip: bool,
}

impl Default for PreConfig {
    fn default() -> Self {
        Self {
            side: 48,
            frame_skip: 1,
            reward_clip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdqnSection {
    pub replay_capacity: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// One of `rmsprop`, `adam`, `sgd`.
    pub optimizer: String,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the frame budget over which epsilon anneals linearly.
    pub eps_fraction: f64,
    /// TD update every this many environment steps.
    pub td_every: u64,
    /// Transition count before updates begin.
    pub warmup: usize,
    /// Hard target sync every this many environment steps.
    pub target_sync: u64,
    pub conv_channels: [usize; 2],
    pub fc_features: usize,
}

impl Default for DdqnSection {
    fn default() -> Self {
        Self {
            replay_capacity: 10_000,
            batch: 32,
            learning_rate: 1e-4,
            optimizer: "rmsprop".into(),
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_fraction: 0.1,
            td_every: 4,
            warmup: 1000,
            target_sync: 1000,
            conv_channels: [8, 16],
            fc_features: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfSection {
    /// Trajectory buffer capacity.
    pub capacity: usize,
    /// Most-recent embeddings kept per trajectory.
    pub trajectory_cap: usize,
    /// Trajectories sampled per update.
    pub batch: usize,
    /// Decimal places kept when quantizing embeddings for counting.
    pub quant_decimals: u32,
    pub learning_rate: f64,
    /// Keys per regression minibatch.
    pub minibatch: usize,
    pub dropout: f64,
    /// `min_priority` or `fifo`.
    pub eviction: String,
    /// Skip updates while the bad set is empty instead of sampling good-only.
    pub skip_degenerate: bool,
    /// Verification mode: freeze the potential at zero output (no updates, no
    /// shaping term), which must reproduce the bare DDQN bit for bit.
    pub clamp_potential_zero: bool,
}

impl Default for ApfSection {
    fn default() -> Self {
        Self {
            capacity: 2000,
            trajectory_cap: 1000,
            batch: 64,
            quant_decimals: 3,
            learning_rate: 1e-4,
            minibatch: 256,
            dropout: 0.5,
            eviction: "min_priority".into(),
            skip_degenerate: false,
            clamp_potential_zero: false,
        }
    }
}

impl ApfSection {
    pub fn eviction_rule(&self) -> Result<Eviction> {
        match self.eviction.as_str() {
            "min_priority" => Ok(Eviction::MinPriority),
            "fifo" => Ok(Eviction::Fifo),
            other => Err(CoreError::Config(format!("unknown eviction rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// Encoder stage widths for the U-Nets.
    pub widths: [usize; 4],
    /// Random-policy frames collected when pretraining in-run.
    pub pretrain_frames: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    /// Load pretrained weights instead of pretraining inside `train`.
    pub weights_path: Option<String>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            widths: [8, 16, 16, 8],
            pretrain_frames: 5000,
            pretrain_epochs: 30,
            pretrain_batch: 64,
            pretrain_lr: 1e-3,
            weights_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    /// When set, `train` writes the log, config echo, and checkpoints here.
    pub out_dir: Option<String>,
    /// Checkpoint every N episodes (0 = final checkpoint only).
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub variant: Variant,
    pub seed: u64,
    pub total_frames: u64,
    pub pre: PreConfig,
    pub ddqn: DdqnSection,
    pub apf: ApfSection,
    pub encoder: EncoderSection,
    pub log: LogSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "pellet_pursuit".into(),
            variant: Variant::Ddqn,
            seed: 0,
            total_frames: 200_000,
            pre: PreConfig::default(),
            ddqn: DdqnSection::default(),
            apf: ApfSection::default(),
            encoder: EncoderSection::default(),
            log: LogSection::default(),
        }
    }
}

impl RunConfig {
    /// The full-size constants used by the original experiments: 50k replay,
    /// 1e-5 learning rate, 84x84 frames, 2000-trajectory buffer, 30000-frame
    /// pretraining corpus for 100 epochs at batch 64.
    pub fn paper_fidelity() -> Self {
        let mut cfg = Self::default();
        cfg.total_frames = 30_000_000;
        cfg.pre.side = 84;
        cfg.ddqn.replay_capacity = 50_000;
        cfg.ddqn.learning_rate = 1e-5;
        cfg.encoder.widths = [16, 32, 32, 16];
        cfg.encoder.pretrain_frames = 30_000;
        cfg.encoder.pretrain_epochs = 100;
        cfg.encoder.pretrain_batch = 64;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        crate::envs::make_env(&self.env)?;
        if self.pre.side == 0 || self.pre.side % 4 != 0 {
            return Err(CoreError::Config(format!(
                "pre.side {} must be a positive multiple of 4",
                self.pre.side
            )));
        }
        if self.pre.frame_skip == 0 {
            return Err(CoreError::Config("pre.frame_skip must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ddqn.gamma) {
            return Err(CoreError::Config("ddqn.gamma must lie in [0,1]".into()));
        }
        for (name, v) in [
            ("eps_start", self.ddqn.eps_start),
            ("eps_end", self.ddqn.eps_end),
            ("eps_fraction", self.ddqn.eps_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::Config(format!("ddqn.{name} must lie in [0,1]")));
            }
        }
        if self.ddqn.learning_rate <= 0.0 || self.apf.learning_rate <= 0.0 {
            return Err(CoreError::Config("learning rates must be positive".into()));
        }
        if self.ddqn.batch == 0 || self.ddqn.td_every == 0 || self.ddqn.target_sync == 0 {
            return Err(CoreError::Config("ddqn cadence fields must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.apf.dropout) {
            return Err(CoreError::Config("apf.dropout must lie in [0,1)".into()));
        }
        if self.apf.batch == 0 || self.apf.minibatch == 0 || self.apf.capacity == 0 {
            return Err(CoreError::Config("apf sizes must be positive".into()));
        }
        self.apf.eviction_rule()?;
        if self.encoder.widths.contains(&0) {
            return Err(CoreError::Config("encoder widths must be positive".into()));
        }
        if matches!(self.variant, Variant::ApfWnetDdqn | Variant::ApfUnetDdqn)
            && self.encoder.weights_path.is_none()
            && (self.encoder.pretrain_frames == 0 || self.encoder.pretrain_epochs == 0)
        {
            return Err(CoreError::Config(
                "encoder variants need pretraining settings or a weights path".into(),
            ));
        }
        optimizer_algorithm(&self.ddqn.optimizer)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Config(format!("serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(format!("parse config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Stable provenance hash of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Applies one `section.key=value` override onto the TOML representation.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| {
            CoreError::Config(format!("override `{assignment}` is not key=value"))
        })?;
        let mut doc: toml::Table = toml::from_str(&self.to_toml()?)
            .map_err(|e| CoreError::Config(format!("config reserialize: {e}")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut node = &mut doc;
        for k in &keys[..keys.len() - 1] {
            node = node
                .get_mut(*k)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| CoreError::Config(format!("unknown config section `{k}`")))?;
        }
        let leaf = keys.last().unwrap();
        let existing_is_float = matches!(node.get(*leaf), Some(toml::Value::Float(_)));
        // parse the right-hand side as a TOML scalar/array; bare words fall
        // back to strings, and integers coerce onto float-typed fields
        let mut parsed = match format!("v = {}", value.trim()).parse::<toml::Table>() {
            Ok(t) => t["v"].clone(),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        if existing_is_float {
            if let toml::Value::Integer(i) = parsed {
                parsed = toml::Value::Float(i as f64);
            }
        }
        node.insert(leaf.to_string(), parsed);
        *self = Self::from_toml(&toml::to_string(&doc).map_err(|e| {
            CoreError::Config(format!("config reserialize: {e}"))
        })?)?;
        Ok(())
    }
}

/// Maps the config's optimizer name to an algorithm.
pub fn optimizer_algorithm(name: &str) -> Result<apfrl_nn::Algorithm> {
    match name {
        "rmsprop" => Ok(apfrl_nn::Algorithm::rmsprop()),
        "adam" => Ok(apfrl_nn::Algorithm::adam()),
        "sgd" => Ok(apfrl_nn::Algorithm::sgd()),
        other => Err(CoreError::Config(format!("unknown optimizer `{other}`"))),
    }
}
