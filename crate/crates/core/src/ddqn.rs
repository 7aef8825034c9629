//! Dueling deep Q-network: shared convolutional trunk, value and advantage
//! heads aggregated as `Q = V + (A - mean(A))`, transition replay, epsilon-
//! greedy action selection, and the TD update on optionally shaped rewards.

use std::path::Path;
use std::sync::Arc;

use apfrl_nn::{io, LayerSpec, Network32, Optimizer32, Tensor32};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::apf::{shaping_batch, ApfNetwork};
use crate::envs::FrameStack;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingConfig {
    /// Stacked input channels (4 preprocessed frames).
    pub in_channels: usize,
    /// Side length of the square preprocessed frame.
    pub side: usize,
    pub num_actions: usize,
    /// Output channels of the two stride-2 trunk convolutions.
    pub conv_channels: [usize; 2],
    /// Width of the shared fully connected feature layer.
    pub fc_features: usize,
}

impl DuelingConfig {
    pub fn desk(side: usize, num_actions: usize) -> Self {
        Self {
            in_channels: 4,
            side,
            num_actions,
            conv_channels: [8, 16],
            fc_features: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.side % 4 != 0 {
            return Err(CoreError::Config(format!(
                "preprocessed side {} must be a positive multiple of 4",
                self.side
            )));
        }
        if self.num_actions < 2 {
            return Err(CoreError::Config("need at least 2 actions".into()));
        }
        if self.conv_channels.contains(&0) || self.fc_features == 0 || self.in_channels == 0 {
            return Err(CoreError::Config("degenerate dueling trunk".into()));
        }
        Ok(())
    }

    fn conv_out(&self) -> usize {
        self.side / 4
    }

    fn trunk_specs(&self) -> Vec<LayerSpec> {
        let s = self.conv_out();
        vec![
            LayerSpec::Conv2d {
                in_channels: self.in_channels,
                out_channels: self.conv_channels[0],
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                in_channels: self.conv_channels[0],
                out_channels: self.conv_channels[1],
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_features: self.conv_channels[1] * s * s,
                out_features: self.fc_features,
            },
            LayerSpec::Relu,
        ]
    }
}

/// Value/advantage streams over a shared trunk.
#[derive(Debug, Clone)]
pub struct DuelingNet {
    pub cfg: DuelingConfig,
    trunk: Network32,
    value_head: Network32,
    adv_head: Network32,
}

impl DuelingNet {
    pub fn build(cfg: DuelingConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let trunk = Network32::build(&cfg.trunk_specs(), rng)?;
        let value_head = Network32::build(
            &[LayerSpec::Linear {
                in_features: cfg.fc_features,
                out_features: 1,
            }],
            rng,
        )?;
        let adv_head = Network32::build(
            &[LayerSpec::Linear {
                in_features: cfg.fc_features,
                out_features: cfg.num_actions,
            }],
            rng,
        )?;
        Ok(Self {
            cfg,
            trunk,
            value_head,
            adv_head,
        })
    }

    /// `Q(s,.) = V(s) + (A(s,.) - mean_a A(s,a))`.
    fn aggregate(v: &Tensor32, a: &Tensor32) -> Result<Tensor32> {
        let n = a.shape()[0];
        let actions = a.shape()[1];
        let mut q = vec![0.0f32; n * actions];
        for b in 0..n {
            let row = &a.data()[b * actions..(b + 1) * actions];
            let mean = row.iter().sum::<f32>() / actions as f32;
            let vb = v.data()[b];
            for (j, &adv) in row.iter().enumerate() {
                q[b * actions + j] = vb + (adv - mean);
            }
        }
        Ok(Tensor32::from_vec(&[n, actions], q)?)
    }

    /// Q values in inference mode; safe on a shared frozen network.
    pub fn q_values(&self, states: &Tensor32) -> Result<Tensor32> {
        let feat = self.trunk.forward(states)?;
        let v = self.value_head.forward(&feat)?;
        let a = self.adv_head.forward(&feat)?;
        Self::aggregate(&v, &a)
    }

    /// `(V, A, Q)` in inference mode, for diagnostics and identity checks.
    pub fn streams(&self, states: &Tensor32) -> Result<(Tensor32, Tensor32, Tensor32)> {
        let feat = self.trunk.forward(states)?;
        let v = self.value_head.forward(&feat)?;
        let a = self.adv_head.forward(&feat)?;
        let q = Self::aggregate(&v, &a)?;
        Ok((v, a, q))
    }

    /// Training-mode Q values; pair with [`Self::backward_q`].
    pub fn q_values_train(&mut self, states: &Tensor32, rng: &mut ChaCha8Rng) -> Result<Tensor32> {
        let feat = self.trunk.forward_train(states, rng)?;
        let v = self.value_head.forward_train(&feat, rng)?;
        let a = self.adv_head.forward_train(&feat, rng)?;
        Self::aggregate(&v, &a)
    }

    /// Backpropagates a gradient on Q through the aggregation:
    /// `dV = sum_a dQ`, `dA = dQ - mean_a dQ`.
    pub fn backward_q(&mut self, d_q: &Tensor32) -> Result<()> {
        let n = d_q.shape()[0];
        let actions = d_q.shape()[1];
        let mut d_v = vec![0.0f32; n];
        let mut d_a = vec![0.0f32; n * actions];
        for b in 0..n {
            let row = &d_q.data()[b * actions..(b + 1) * actions];
            let total: f32 = row.iter().sum();
            d_v[b] = total;
            for j in 0..actions {
                d_a[b * actions + j] = row[j] - total / actions as f32;
            }
        }
        let d_feat_v = self
            .value_head
            .backward(&Tensor32::from_vec(&[n, 1], d_v)?)?;
        let d_feat_a = self
            .adv_head
            .backward(&Tensor32::from_vec(&[n, actions], d_a)?)?;
        let d_feat = d_feat_v.add(&d_feat_a)?;
        // the gradient with respect to the input frames is never used
        self.trunk.backward_no_input_grad(&d_feat)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.trunk.zero_grad();
        self.value_head.zero_grad();
        self.adv_head.zero_grad();
    }

    pub fn param_grad_pairs(&mut self) -> Vec<(&mut Tensor32, &Tensor32)> {
        let mut pairs = self.trunk.param_grad_pairs();
        pairs.extend(self.value_head.param_grad_pairs());
        pairs.extend(self.adv_head.param_grad_pairs());
        pairs
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.value_head.param_count() + self.adv_head.param_count()
    }

    /// Adds a constant to every advantage-head output bias. A constant shift
    /// must not change any Q value — the identifiability probe of the
    /// mean-subtracted aggregation.
    pub fn shift_advantage_bias(&mut self, delta: f32) {
        for (name, t) in self.adv_head.param_entries_mut() {
            if name.ends_with("bias") {
                for v in t.data_mut() {
                    *v += delta;
                }
            }
        }
    }

    /// Hard copy of all weights from `src`.
    pub fn copy_from(&mut self, src: &DuelingNet) -> Result<()> {
        self.trunk.copy_weights_from(&src.trunk)?;
        self.value_head.copy_weights_from(&src.value_head)?;
        self.adv_head.copy_weights_from(&src.adv_head)?;
        Ok(())
    }

    /// Epsilon-greedy action for one stacked state: a uniform action with
    /// probability epsilon, else the greedy argmax (ties to the lowest index).
    /// The exploration coin is drawn first, so the Q forward pass is skipped
    /// on exploration steps.
    pub fn select_action(
        &self,
        state: &Tensor32,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(CoreError::Usage(format!("epsilon {epsilon} outside [0,1]")));
        }
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return Ok(rng.gen_range(0..self.cfg.num_actions));
        }
        let q = self.q_values(state)?;
        Ok(argmax(&q.data()[..self.cfg.num_actions]))
    }

    pub fn save(&self, path: &Path, mut meta: Vec<(String, String)>) -> Result<()> {
        meta.push(("arch".into(), "dueling".into()));
        meta.push(("side".into(), self.cfg.side.to_string()));
        meta.push(("actions".into(), self.cfg.num_actions.to_string()));
        let mut entries: Vec<(String, &Tensor32)> = Vec::new();
        for (name, t) in self.trunk.param_entries() {
            entries.push((format!("trunk.{name}"), t));
        }
        for (name, t) in self.value_head.param_entries() {
            entries.push((format!("value.{name}"), t));
        }
        for (name, t) in self.adv_head.param_entries() {
            entries.push((format!("advantage.{name}"), t));
        }
        Ok(io::save_entries(path, &entries, &meta)?)
    }

    pub fn load(cfg: DuelingConfig, path: &Path) -> Result<Self> {
        let loaded = io::load_entries(path)?;
        if loaded.meta.get("arch").map(String::as_str) != Some("dueling") {
            return Err(CoreError::Data("weight file is not a dueling checkpoint".into()));
        }
        let mut net = DuelingNet::build(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        io::load_into(&loaded, "trunk.", net.trunk.param_entries_mut())?;
        io::load_into(&loaded, "value.", net.value_head.param_entries_mut())?;
        io::load_into(&loaded, "advantage.", net.adv_head.param_entries_mut())?;
        Ok(net)
    }
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Hard target-network sync.
pub fn sync_target(net: &DuelingNet, target: &mut DuelingNet) -> Result<()> {
    target.copy_from(net)
}

/// One stored environment transition. Stacked states share their frames, so
/// the per-step memory cost is a single preprocessed frame plus embeddings.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: FrameStack,
    pub action: usize,
    pub reward: f32,
    pub next_state: FrameStack,
    pub done: bool,
    /// Embedding of the newest raw frame of `state` under the frozen encoder.
    pub z: Option<Arc<Vec<f32>>>,
    pub z_next: Option<Arc<Vec<f32>>>,
}

/// Ring buffer of transitions with uniform with-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            capacity: capacity.max(1),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(CoreError::Usage("cannot sample an empty replay buffer".into()));
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }
}

fn stack_states(batch: &[&Transition], next: bool) -> Tensor32 {
    let first = &batch[0].state;
    let (h, w) = (first.height(), first.width());
    let mut data = vec![0.0f32; batch.len() * 4 * h * w];
    for (i, t) in batch.iter().enumerate() {
        let stack = if next { &t.next_state } else { &t.state };
        stack.write_into(&mut data[i * 4 * h * w..(i + 1) * 4 * h * w]);
    }
    Tensor32::from_vec(&[batch.len(), 4, h, w], data).expect("batch dims")
}

fn huber_grad(e: f32) -> f32 {
    e.clamp(-1.0, 1.0)
}

fn huber_loss(e: f32) -> f32 {
    let a = e.abs();
    if a <= 1.0 {
        0.5 * e * e
    } else {
        a - 0.5
    }
}

/// One TD update on a transition minibatch.
///
/// Target per sample: `y = r' + (1-done)*gamma*max_a Q_target(s',a)` with
/// `r' = r + F(z,z')` when a shaper is supplied (evaluated with the current
/// potential network in inference mode), else `r' = r`. Huber loss on
/// `Q(s,a) - y`, one optimizer step. Returns the mean loss.
pub fn td_step(
    net: &mut DuelingNet,
    target: &DuelingNet,
    batch: &[&Transition],
    gamma: f32,
    shaper: Option<&ApfNetwork>,
    optimizer: &mut Optimizer32,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::Usage("td_step needs a nonempty batch".into()));
    }
    let actions = net.cfg.num_actions;
    let states = stack_states(batch, false);
    let next_states = stack_states(batch, true);

    let q_next = target.q_values(&next_states)?;
    let shaping = match shaper {
        Some(apf) => {
            let z: Vec<&[f32]> = batch
                .iter()
                .map(|t| {
                    t.z.as_deref().map(|v| v.as_slice()).ok_or_else(|| {
                        CoreError::Usage("shaped TD update on a transition without embeddings".into())
                    })
                })
                .collect::<Result<_>>()?;
            let z_next: Vec<&[f32]> = batch
                .iter()
                .map(|t| {
                    t.z_next.as_deref().map(|v| v.as_slice()).ok_or_else(|| {
                        CoreError::Usage("shaped TD update on a transition without embeddings".into())
                    })
                })
                .collect::<Result<_>>()?;
            let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
            Some(shaping_batch(apf, &z, &z_next, gamma, &dones)?)
        }
        None => None,
    };

    let mut targets = vec![0.0f32; batch.len()];
    for (i, t) in batch.iter().enumerate() {
        let row = &q_next.data()[i * actions..(i + 1) * actions];
        let max_next = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let r = match &shaping {
            Some(f) => t.reward + f[i],
            None => t.reward,
        };
        targets[i] = if t.done { r } else { r + gamma * max_next };
    }

    let q = net.q_values_train(&states, rng)?;
    let mut d_q = vec![0.0f32; batch.len() * actions];
    let mut loss = 0.0f64;
    for (i, t) in batch.iter().enumerate() {
        let e = q.data()[i * actions + t.action] - targets[i];
        loss += huber_loss(e) as f64;
        d_q[i * actions + t.action] = huber_grad(e) / batch.len() as f32;
    }
    net.zero_grad();
    net.backward_q(&Tensor32::from_vec(&[batch.len(), actions], d_q)?)?;
    optimizer.step(net.param_grad_pairs())?;
    Ok(loss / batch.len() as f64)
}
