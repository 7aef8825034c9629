//! Training orchestration: encoder pretraining, episode rollout, trajectory
//! capture, per-episode potential updates, and shaped TD learning — with
//! pluggable encoders and agent variants.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use apfrl_nn::Optimizer32;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::apf::{
    apf_update, one_pass_steps, potential_table, shaping, ApfNetwork, Trajectory, TrajectoryBuffer,
};
use crate::config::{optimizer_algorithm, RunConfig, Variant};
use crate::ddqn::{sync_target, td_step, DuelingConfig, DuelingNet, ReplayBuffer, Transition};
use crate::envs::{make_env, preprocess, FrameStack, GameFrame, PixelEnv, PreFrame};
use crate::error::{CoreError, Result};
use crate::trainlog::{EpisodeRecord, TrainLog};
use crate::wnet::{
    pretrain, pretrain_optimizer, pretrain_single, SingleUNet, UNetConfig, WNet,
};

/// Derives an independent RNG stream from the master seed. Separate labels
/// keep optional machinery (encoder init, potential updates) from perturbing
/// the streams shared by every variant.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in master.to_le_bytes().into_iter().chain(label.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}

/// Pluggable state encoder: frozen during RL training, deterministic.
pub enum EncoderPlug {
    None,
    WNet(WNet),
    SingleUNet(SingleUNet),
    /// Ground-truth feature readout, normalized to `[0, 1]` per feature.
    Oracle { scales: Vec<f32> },
}

impl EncoderPlug {
    pub fn embedding_len(&self) -> Option<usize> {
        match self {
            EncoderPlug::None => None,
            EncoderPlug::WNet(w) => Some(w.embedding_len()),
            EncoderPlug::SingleUNet(u) => Some(u.embedding_len()),
            EncoderPlug::Oracle { scales } => Some(scales.len()),
        }
    }

    /// Embedding of one raw frame (the oracle consults env internals instead).
    pub fn encode(&self, frame: &GameFrame, env: &dyn PixelEnv) -> Result<Option<Vec<f32>>> {
        match self {
            EncoderPlug::None => Ok(None),
            EncoderPlug::WNet(w) => Ok(Some(w.encode(&frame.to_tensor())?.into_data())),
            EncoderPlug::SingleUNet(u) => Ok(Some(u.encode(&frame.to_tensor())?.into_data())),
            EncoderPlug::Oracle { scales } => Ok(Some(
                env.oracle_features()
                    .iter()
                    .zip(scales)
                    .map(|(&f, &s)| f / s)
                    .collect(),
            )),
        }
    }
}

/// Collects a random-policy frame corpus with one worker.
pub fn collect_corpus(env_name: &str, frames: usize, seed: u64) -> Result<(Vec<GameFrame>, Vec<Vec<f32>>)> {
    let mut env = make_env(env_name)?;
    let mut rng = stream(seed, "collect");
    let mut out = Vec::with_capacity(frames);
    let mut feats = Vec::with_capacity(frames);
    let mut reseed = stream(seed, "collect-env");
    out.push(env.reset(reseed.gen()));
    feats.push(env.oracle_features());
    while out.len() < frames {
        if env.is_terminal() {
            out.push(env.reset(reseed.gen()));
        } else {
            let a = rng.gen_range(0..env.num_actions());
            out.push(env.step(a)?.frame);
        }
        feats.push(env.oracle_features());
    }
    Ok((out, feats))
}

fn unet_config(cfg: &RunConfig, env: &dyn PixelEnv) -> UNetConfig {
    UNetConfig {
        in_channels: 3,
        height: env.frame_height(),
        width: env.frame_width(),
        enc_widths: cfg.encoder.widths,
    }
}

/// Builds (pretraining or loading) the encoder a variant needs. Pretraining
/// runs here when no weights path is configured, so a single `train` call
/// reproduces the whole pipeline.
pub fn build_encoder(cfg: &RunConfig, env: &dyn PixelEnv) -> Result<EncoderPlug> {
    match cfg.variant {
        Variant::Ddqn => Ok(EncoderPlug::None),
        Variant::ApfOracleDdqn => Ok(EncoderPlug::Oracle {
            scales: env.feature_scales(),
        }),
        Variant::ApfWnetDdqn => {
            let ucfg = unet_config(cfg, env);
            if let Some(path) = &cfg.encoder.weights_path {
                return Ok(EncoderPlug::WNet(WNet::load(ucfg, Path::new(path))?));
            }
            let (corpus, _) = collect_corpus(&cfg.env, cfg.encoder.pretrain_frames, cfg.seed)?;
            let mut rng = stream(cfg.seed, "encoder-init");
            let mut wnet = WNet::build(ucfg, &mut rng)?;
            let mut opt = pretrain_optimizer(cfg.encoder.pretrain_lr)?;
            let mut prng = stream(cfg.seed, "pretrain");
            let history = pretrain(
                &mut wnet,
                &corpus,
                cfg.encoder.pretrain_epochs,
                cfg.encoder.pretrain_batch,
                &mut opt,
                &mut prng,
            )?;
            log::info!(
                "pretrained W-Net ({} params) on {} frames: loss {:.5} -> {:.5}",
                wnet.param_count(),
                corpus.len(),
                history.first().copied().unwrap_or(f64::NAN),
                history.last().copied().unwrap_or(f64::NAN)
            );
            Ok(EncoderPlug::WNet(wnet))
        }
        Variant::ApfUnetDdqn => {
            let ucfg = unet_config(cfg, env);
            if let Some(path) = &cfg.encoder.weights_path {
                return Ok(EncoderPlug::SingleUNet(SingleUNet::load(ucfg, Path::new(path))?));
            }
            let (corpus, _) = collect_corpus(&cfg.env, cfg.encoder.pretrain_frames, cfg.seed)?;
            let mut rng = stream(cfg.seed, "encoder-init");
            let mut unet = SingleUNet::build(ucfg, &mut rng)?;
            let mut opt = pretrain_optimizer(cfg.encoder.pretrain_lr)?;
            let mut prng = stream(cfg.seed, "pretrain");
            pretrain_single(
                &mut unet,
                &corpus,
                cfg.encoder.pretrain_epochs,
                cfg.encoder.pretrain_batch,
                &mut opt,
                &mut prng,
            )?;
            Ok(EncoderPlug::SingleUNet(unet))
        }
    }
}

struct ApfState {
    net: ApfNetwork,
    optimizer: Optimizer32,
    buffer: TrajectoryBuffer,
}

/// One live training run. Owns every piece of mutable state; strictly
/// single-threaded and seed-deterministic.
pub struct TrainSession {
    cfg: RunConfig,
    config_hash: String,
    env: Box<dyn PixelEnv>,
    encoder: EncoderPlug,
    apf: Option<ApfState>,
    net: DuelingNet,
    target: DuelingNet,
    optimizer: Optimizer32,
    replay: ReplayBuffer,
    // independent RNG streams
    env_seeds: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    td_rng: ChaCha8Rng,
    traj_rng: ChaCha8Rng,
    apf_rng: ChaCha8Rng,
    frames_done: u64,
    global_step: u64,
    episodes: Vec<EpisodeRecord>,
}

impl TrainSession {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let config_hash = cfg.hash();
        let mut env = make_env(&cfg.env)?;
        // establish feature scales and dimensions before anything else
        env.reset(derive_seed(cfg.seed, "probe"));
        let encoder = build_encoder(&cfg, env.as_ref())?;

        let apf = match cfg.variant.uses_apf() {
            true => {
                let len = encoder
                    .embedding_len()
                    .ok_or_else(|| CoreError::Config("APF variant without an encoder".into()))?;
                let mut rng = stream(cfg.seed, "apf-init");
                Some(ApfState {
                    net: ApfNetwork::build(len, cfg.apf.dropout, &mut rng)?,
                    optimizer: Optimizer32::new(apfrl_nn::Algorithm::adam(), cfg.apf.learning_rate)?,
                    buffer: TrajectoryBuffer::new(cfg.apf.capacity, cfg.apf.eviction_rule()?),
                })
            }
            false => None,
        };

        let dueling_cfg = DuelingConfig {
            in_channels: 4,
            side: cfg.pre.side,
            num_actions: env.num_actions(),
            conv_channels: cfg.ddqn.conv_channels,
            fc_features: cfg.ddqn.fc_features,
        };
        let mut init_rng = stream(cfg.seed, "ddqn-init");
        let net = DuelingNet::build(dueling_cfg, &mut init_rng)?;
        let target = net.clone();
        let optimizer = Optimizer32::new(
            optimizer_algorithm(&cfg.ddqn.optimizer)?,
            cfg.ddqn.learning_rate,
        )?;
        let replay = ReplayBuffer::new(cfg.ddqn.replay_capacity);

        Ok(Self {
            env_seeds: stream(cfg.seed, "env-seeds"),
            action_rng: stream(cfg.seed, "action"),
            replay_rng: stream(cfg.seed, "replay"),
            td_rng: stream(cfg.seed, "td"),
            traj_rng: stream(cfg.seed, "traj-sample"),
            apf_rng: stream(cfg.seed, "apf-update"),
            cfg,
            config_hash,
            env,
            encoder,
            apf,
            net,
            target,
            optimizer,
            replay,
            frames_done: 0,
            global_step: 0,
            episodes: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn frames_done(&self) -> u64 {
        self.frames_done
    }

    pub fn net(&self) -> &DuelingNet {
        &self.net
    }

    pub fn encoder(&self) -> &EncoderPlug {
        &self.encoder
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    fn epsilon(&self) -> f64 {
        let d = &self.cfg.ddqn;
        let anneal = (self.cfg.total_frames as f64 * d.eps_fraction).max(1.0);
        let frac = (self.frames_done as f64 / anneal).min(1.0);
        d.eps_start + (d.eps_end - d.eps_start) * frac
    }

    fn shaping_enabled(&self) -> bool {
        self.apf.is_some() && !self.cfg.apf.clamp_potential_zero
    }

    fn encode_arc(&self, frame: &GameFrame) -> Result<Option<Arc<Vec<f32>>>> {
        Ok(self
            .encoder
            .encode(frame, self.env.as_ref())?
            .map(Arc::new))
    }

    /// Steps the environment `frame_skip` times with one action, aggregating
    /// the reward. Returns the last frame, summed (optionally clipped) reward,
    /// the done flag, and the number of frames consumed.
    fn skip_step(&mut self, action: usize) -> Result<(GameFrame, f32, bool, u64)> {
        let mut reward = 0.0f32;
        let mut consumed = 0u64;
        let mut frame;
        let mut done;
        loop {
            let out = self.env.step(action)?;
            reward += out.reward;
            consumed += 1;
            frame = out.frame;
            done = out.done;
            if done || consumed >= self.cfg.pre.frame_skip as u64 {
                break;
            }
        }
        if self.cfg.pre.reward_clip {
            reward = reward.clamp(-1.0, 1.0);
        }
        Ok((frame, reward, done, consumed))
    }

    /// Plays one episode end to end: encodes each raw frame, acts epsilon-
    /// greedily on the stacked state, stores transitions with their embedding
    /// pairs, and (for shaped variants) pushes the captured trajectory and
    /// runs the per-episode potential update. Returns the captured trajectory
    /// (when the variant uses one) and the episode's raw return.
    pub fn run_episode(&mut self) -> Result<(Option<Trajectory>, f32)> {
        let seed = self.env_seeds.gen();
        let frame = self.env.reset(seed);
        let mut history: Vec<Arc<PreFrame>> =
            vec![Arc::new(preprocess(&frame, self.cfg.pre.side))];
        let mut state = FrameStack::from_history(&history)?;
        let mut z_prev = self.encode_arc(&frame)?;
        let mut trajectory = self
            .apf
            .as_ref()
            .map(|_| Trajectory::new(self.cfg.apf.trajectory_cap));

        let mut raw_return = 0.0f32;
        let mut shaped_return = 0.0f64;
        let mut td_losses = 0.0f64;
        let mut td_count = 0u64;

        loop {
            let eps = self.epsilon();
            let action = self
                .net
                .select_action(&state.to_tensor(), eps, &mut self.action_rng)?;
            let (next_frame, reward, done, consumed) = self.skip_step(action)?;
            self.frames_done += consumed;
            self.global_step += 1;

            if history.len() == 4 {
                history.remove(0);
            }
            history.push(Arc::new(preprocess(&next_frame, self.cfg.pre.side)));
            let next_state = FrameStack::from_history(&history)?;
            let z_next = self.encode_arc(&next_frame)?;

            raw_return += reward;
            shaped_return += reward as f64;
            if self.shaping_enabled() {
                let apf = self.apf.as_ref().expect("shaping implies apf");
                let f = shaping(
                    &apf.net,
                    z_prev.as_deref().expect("encoder provides embeddings"),
                    z_next.as_deref().expect("encoder provides embeddings"),
                    self.cfg.ddqn.gamma as f32,
                    done,
                )?;
                shaped_return += f as f64;
            }
            if let (Some(traj), Some(z)) = (trajectory.as_mut(), z_next.as_ref()) {
                traj.push(z.as_ref().clone());
            }

            self.replay.push(Transition {
                state,
                action,
                reward,
                next_state: next_state.clone(),
                done,
                z: z_prev.clone(),
                z_next: z_next.clone(),
            });

            if self.replay.len() >= self.cfg.ddqn.warmup
                && self.global_step % self.cfg.ddqn.td_every == 0
            {
                let batch = self.replay.sample(self.cfg.ddqn.batch, &mut self.replay_rng)?;
                let shaper = if self.shaping_enabled() {
                    self.apf.as_ref().map(|a| &a.net)
                } else {
                    None
                };
                let loss = td_step(
                    &mut self.net,
                    &self.target,
                    &batch,
                    self.cfg.ddqn.gamma as f32,
                    shaper,
                    &mut self.optimizer,
                    &mut self.td_rng,
                )?;
                td_losses += loss;
                td_count += 1;
            }
            if self.global_step % self.cfg.ddqn.target_sync == 0 {
                sync_target(&self.net, &mut self.target)?;
            }

            state = next_state;
            z_prev = z_next;
            if done {
                break;
            }
        }

        // per-episode potential update
        let mut apf_loss = 0.0f64;
        if let (Some(apf), Some(traj)) = (self.apf.as_mut(), trajectory.as_mut()) {
            traj.episodic_reward = raw_return;
            apf.buffer.push_trajectory(traj.clone())?;
            if !self.cfg.apf.clamp_potential_zero {
                let batch = apf.buffer.sample_batch(self.cfg.apf.batch, &mut self.traj_rng)?;
                if !(batch.degenerate && self.cfg.apf.skip_degenerate) {
                    let table =
                        potential_table(&batch.good, &batch.bad, self.cfg.apf.quant_decimals)?;
                    let steps = one_pass_steps(table.len(), self.cfg.apf.minibatch);
                    apf_loss = apf_update(
                        &mut apf.net,
                        &table,
                        &mut apf.optimizer,
                        steps,
                        self.cfg.apf.minibatch,
                        &mut self.apf_rng,
                    )?;
                }
            }
        }

        let record = EpisodeRecord {
            episode: self.episodes.len() as u64,
            end_frame: self.frames_done,
            return_raw: raw_return,
            return_shaped: shaped_return as f32,
            epsilon: self.epsilon() as f32,
            apf_loss: apf_loss as f32,
            td_loss: if td_count > 0 {
                (td_losses / td_count as f64) as f32
            } else {
                0.0
            },
        };
        self.episodes.push(record);
        Ok((trajectory, raw_return))
    }

    pub fn log(&self) -> TrainLog {
        TrainLog {
            env: self.cfg.env.clone(),
            variant: self.cfg.variant.name().to_string(),
            seed: self.cfg.seed,
            total_frames: self.cfg.total_frames,
            config_hash: self.config_hash.clone(),
            episodes: self.episodes.clone(),
        }
    }
}

/// Result of a full training run.
pub struct TrainOutput {
    pub log: TrainLog,
    pub net: DuelingNet,
    pub encoder: EncoderPlug,
}

/// Runs a full training run: optional encoder pretraining, then episodes
/// until the frame budget is consumed (an episode in flight completes).
/// Deterministic for a given config and seed. When `log.out_dir` is set, the
/// log, a config echo, the encoder, and checkpoints are written there.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    let mut session = TrainSession::new(cfg.clone())?;
    let out_dir = cfg.log.out_dir.as_ref().map(PathBuf::from);
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    while session.frames_done() < cfg.total_frames {
        session.run_episode()?;
        if let Some(dir) = &out_dir {
            let n = session.episodes().len() as u64;
            if cfg.log.checkpoint_every > 0 && n % cfg.log.checkpoint_every == 0 {
                let meta = vec![("config".to_string(), session.config_hash().to_string())];
                session.net().save(&dir.join(format!("checkpoint_ep{n:06}.bin")), meta)?;
            }
        }
        if session.episodes().len() % 50 == 0 {
            log::debug!(
                "{}/{} frames, {} episodes",
                session.frames_done(),
                cfg.total_frames,
                session.episodes().len()
            );
        }
    }
    let log = session.log();
    if let Some(dir) = &out_dir {
        log.write(&dir.join("log.tsv"))?;
        let meta = vec![("config".to_string(), session.config_hash().to_string())];
        session.net().save(&dir.join("checkpoint_final.bin"), meta.clone())?;
        match session.encoder() {
            EncoderPlug::WNet(w) => w.save(&dir.join("encoder.bin"), meta)?,
            EncoderPlug::SingleUNet(u) => u.save(&dir.join("encoder.bin"), meta)?,
            _ => {}
        }
    }
    let TrainSession { net, encoder, .. } = session;
    Ok(TrainOutput { log, net, encoder })
}

/// Summary statistics of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f32>,
}

pub fn eval_stats(returns: Vec<f32>) -> EvalStats {
    let n = returns.len() as f64;
    let mean = returns.iter().map(|&r| r as f64).sum::<f64>() / n;
    let std = if returns.len() > 1 {
        (returns
            .iter()
            .map(|&r| (r as f64 - mean) * (r as f64 - mean))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    EvalStats {
        mean,
        std,
        returns,
    }
}

/// Greedy evaluation (epsilon = 0.05) of a policy network; returns raw
/// environmental returns only.
pub fn evaluate_net(
    net: &DuelingNet,
    env_name: &str,
    pre_side: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(CoreError::Usage("evaluation needs at least one episode".into()));
    }
    let mut env = make_env(env_name)?;
    let mut action_rng = stream(seed, "eval-action");
    let mut env_seeds = stream(seed, "eval-env");
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let frame = env.reset(env_seeds.gen());
        let mut history = vec![Arc::new(preprocess(&frame, pre_side))];
        let mut total = 0.0f32;
        loop {
            let state = FrameStack::from_history(&history)?;
            let action = net.select_action(&state.to_tensor(), 0.05, &mut action_rng)?;
            let out = env.step(action)?;
            total += out.reward;
            if history.len() == 4 {
                history.remove(0);
            }
            history.push(Arc::new(preprocess(&out.frame, pre_side)));
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(eval_stats(returns))
}

/// Loads a checkpoint per the config's architecture and evaluates it.
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(CoreError::Usage("evaluation needs at least one episode".into()));
    }
    let mut env = make_env(&cfg.env)?;
    env.reset(0);
    let dueling_cfg = DuelingConfig {
        in_channels: 4,
        side: cfg.pre.side,
        num_actions: env.num_actions(),
        conv_channels: cfg.ddqn.conv_channels,
        fc_features: cfg.ddqn.fc_features,
    };
    let net = DuelingNet::load(dueling_cfg, checkpoint)?;
    evaluate_net(&net, &cfg.env, cfg.pre.side, episodes, seed)
}

/// Uniform-random-policy baseline returns.
pub fn random_policy_returns(env_name: &str, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(CoreError::Usage("baseline needs at least one episode".into()));
    }
    let mut env = make_env(env_name)?;
    let mut rng = stream(seed, "random-policy");
    let mut env_seeds = stream(seed, "random-env");
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset(env_seeds.gen());
        let mut total = 0.0f32;
        loop {
            let out = env.step(rng.gen_range(0..env.num_actions()))?;
            total += out.reward;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(eval_stats(returns))
}
