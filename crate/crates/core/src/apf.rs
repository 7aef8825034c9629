//! Adaptive potential function: trajectory replay buffer, good/bad occurrence
//! counting, the potential-regression network, and the shaping term
//! `F(s,s') = gamma*phi(s') - phi(s)`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use apfrl_nn::{Algorithm, LayerSpec, Network32, Optimizer32, Tensor32};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Ordered embeddings visited in one episode plus its episodic reward
/// (undiscounted sum of environmental rewards). Holds at most `cap` of the
/// most recently visited embeddings.
#[derive(Debug, Clone)]
pub struct Trajectory {
    embeddings: Vec<Vec<f32>>,
    start: usize, // ring start once the cap is reached
    cap: usize,
    pub episodic_reward: f32,
    /// Insertion sequence number, assigned by the buffer.
    pub seq: u64,
}

impl Trajectory {
    pub fn new(cap: usize) -> Self {
        Self {
            embeddings: Vec::new(),
            start: 0,
            cap: cap.max(1),
            episodic_reward: 0.0,
            seq: 0,
        }
    }

    /// Appends one visited embedding, dropping the oldest beyond the cap.
    pub fn push(&mut self, z: Vec<f32>) {
        if self.embeddings.len() < self.cap {
            self.embeddings.push(z);
        } else {
            self.embeddings[self.start] = z;
            self.start = (self.start + 1) % self.cap;
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Embeddings in visit order (oldest retained first).
    pub fn embeddings(&self) -> impl Iterator<Item = &[f32]> {
        let (tail, head) = self.embeddings.split_at(self.start);
        head.iter().chain(tail.iter()).map(Vec::as_slice)
    }
}

/// Buffer eviction rule once capacity is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eviction {
    /// Drop the lowest-episodic-reward trajectory (ties: oldest).
    MinPriority,
    /// Drop the oldest trajectory regardless of reward.
    Fifo,
}

/// Priority buffer of trajectories keyed by episodic reward.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer {
    capacity: usize,
    eviction: Eviction,
    /// Ascending by `(episodic_reward, seq)`.
    items: Vec<Trajectory>,
    next_seq: u64,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize, eviction: Eviction) -> Self {
        Self {
            capacity: capacity.max(1),
            eviction,
            items: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push_trajectory(&mut self, mut traj: Trajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(CoreError::Usage("refusing to store an empty trajectory".into()));
        }
        traj.seq = self.next_seq;
        self.next_seq += 1;
        let at = self
            .items
            .partition_point(|t| order_key(t) < order_key(&traj));
        self.items.insert(at, traj);
        if self.items.len() > self.capacity {
            match self.eviction {
                Eviction::MinPriority => {
                    self.items.remove(0);
                }
                Eviction::Fifo => {
                    let oldest = self
                        .items
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, t)| t.seq)
                        .map(|(i, _)| i)
                        .expect("buffer is nonempty");
                    self.items.remove(oldest);
                }
            }
        }
        Ok(())
    }

    /// Splits into the good set (top `ceil(0.2*size)` by episodic reward,
    /// ties favoring more recent trajectories) and the bad set (the rest).
    pub fn split_good_bad(&self) -> Result<(Vec<&Trajectory>, Vec<&Trajectory>)> {
        if self.items.is_empty() {
            return Err(CoreError::Usage("cannot split an empty trajectory buffer".into()));
        }
        let k = self.items.len().div_ceil(5);
        let cut = self.items.len() - k;
        let good = self.items[cut..].iter().collect();
        let bad = self.items[..cut].iter().collect();
        Ok((good, bad))
    }

    /// Uniform draws with replacement: half from the good set, half from the
    /// bad set. While the bad set is still empty the whole batch comes from
    /// the good set and the batch is flagged degenerate.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<SampledBatch<'_>> {
        let (good, bad) = self.split_good_bad()?;
        fn pick<'a>(
            set: &[&'a Trajectory],
            n: usize,
            rng: &mut ChaCha8Rng,
        ) -> Vec<&'a Trajectory> {
            (0..n).map(|_| set[rng.gen_range(0..set.len())]).collect()
        }
        if bad.is_empty() {
            let g = pick(&good, batch_size, rng);
            return Ok(SampledBatch {
                good: g,
                bad: Vec::new(),
                degenerate: true,
            });
        }
        let half = batch_size / 2;
        Ok(SampledBatch {
            good: pick(&good, half, rng),
            bad: pick(&bad, batch_size - half, rng),
            degenerate: false,
        })
    }
}

fn order_key(t: &Trajectory) -> (f32, u64) {
    (t.episodic_reward, t.seq)
}

/// One sampled batch of trajectories.
pub struct SampledBatch<'a> {
    pub good: Vec<&'a Trajectory>,
    pub bad: Vec<&'a Trajectory>,
    /// True when the bad set was empty and the batch is good-only.
    pub degenerate: bool,
}

/// Occurrence counts and Eq-style potential per quantized embedding.
#[derive(Debug, Clone)]
pub struct TableEntry {
    pub key: u64,
    pub n_good: u32,
    pub n_bad: u32,
    /// Canonical (quantized) embedding used as the regression input.
    pub embedding: Vec<f32>,
}

impl TableEntry {
    /// `P = (N_g - N_b) / (N_g + N_b)`, in `[-1, 1]`.
    pub fn potential(&self) -> f32 {
        let g = self.n_good as f32;
        let b = self.n_bad as f32;
        (g - b) / (g + b)
    }
}

/// Map from quantized-embedding key to occurrence counts, in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct PotentialTable {
    index: HashMap<u64, usize>,
    entries: Vec<TableEntry>,
}

impl PotentialTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn get(&self, key: u64) -> Option<&TableEntry> {
        self.index.get(&key).map(|&i| &self.entries[i])
    }

    fn bump(&mut self, z: &[f32], decimals: u32, good: bool) {
        let (key, canonical) = quantize(z, decimals);
        let i = *self.index.entry(key).or_insert_with(|| {
            self.entries.push(TableEntry {
                key,
                n_good: 0,
                n_bad: 0,
                embedding: canonical,
            });
            self.entries.len() - 1
        });
        if good {
            self.entries[i].n_good += 1;
        } else {
            self.entries[i].n_bad += 1;
        }
    }
}

/// Quantizes an embedding to `decimals` decimal places; returns the
/// counting key (FNV-1a over the quantized coordinates) and the canonical
/// dequantized vector.
pub fn quantize(z: &[f32], decimals: u32) -> (u64, Vec<f32>) {
    let scale = 10f64.powi(decimals as i32);
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut canonical = Vec::with_capacity(z.len());
    for &v in z {
        let q = (v as f64 * scale).round() as i64;
        for byte in q.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        canonical.push((q as f64 / scale) as f32);
    }
    (hash, canonical)
}

/// Counts occurrences of each quantized embedding across the concatenated
/// sampled good and bad trajectories.
pub fn potential_table(
    good: &[&Trajectory],
    bad: &[&Trajectory],
    decimals: u32,
) -> Result<PotentialTable> {
    if good.is_empty() && bad.is_empty() {
        return Err(CoreError::Usage("potential table needs at least one trajectory".into()));
    }
    let mut table = PotentialTable::default();
    for traj in good {
        for z in traj.embeddings() {
            table.bump(z, decimals, true);
        }
    }
    for traj in bad {
        for z in traj.embeddings() {
            table.bump(z, decimals, false);
        }
    }
    Ok(table)
}

/// Writes the debugging dump: one line per entry (key, counts, potential).
pub fn write_table_dump(table: &PotentialTable, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "key\tn_good\tn_bad\tpotential")?;
    for e in table.entries() {
        writeln!(w, "{:016x}\t{}\t{}\t{}", e.key, e.n_good, e.n_bad, e.potential())?;
    }
    Ok(())
}

/// The potential network: MLP `d -> 128 -> 64 -> 1` with rectifier + dropout
/// after each hidden layer.
#[derive(Debug, Clone)]
pub struct ApfNetwork {
    net: Network32,
    pub input_len: usize,
}

impl ApfNetwork {
    pub fn build(input_len: usize, dropout_p: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_len == 0 {
            return Err(CoreError::Config("embedding length must be positive".into()));
        }
        let specs = vec![
            LayerSpec::Linear {
                in_features: input_len,
                out_features: 128,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: dropout_p },
            LayerSpec::Linear {
                in_features: 128,
                out_features: 64,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: dropout_p },
            LayerSpec::Linear {
                in_features: 64,
                out_features: 1,
            },
        ];
        Ok(Self {
            net: Network32::build(&specs, rng)?,
            input_len,
        })
    }

    fn batch_tensor(&self, zs: &[&[f32]]) -> Result<Tensor32> {
        let mut data = Vec::with_capacity(zs.len() * self.input_len);
        for z in zs {
            if z.len() != self.input_len {
                return Err(CoreError::Usage(format!(
                    "embedding length {} does not match network input {}",
                    z.len(),
                    self.input_len
                )));
            }
            data.extend_from_slice(z);
        }
        Ok(Tensor32::from_vec(&[zs.len(), self.input_len], data)?)
    }

    /// Potential of one embedding (dropout off).
    pub fn potential(&self, z: &[f32]) -> Result<f32> {
        Ok(self.potentials(&[z])?[0])
    }

    /// Potentials of a batch of embeddings (dropout off).
    pub fn potentials(&self, zs: &[&[f32]]) -> Result<Vec<f32>> {
        let x = self.batch_tensor(zs)?;
        let y = self.net.forward(&x)?;
        Ok(y.data().to_vec())
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn save(&self, path: &Path, meta: &[(String, String)]) -> Result<()> {
        Ok(self.net.save_weights(path, meta)?)
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        Ok(self.net.load_weights(path)?)
    }

    /// Default optimizer for the potential regression (Adam, 1e-4).
    pub fn default_optimizer() -> Result<Optimizer32> {
        Ok(Optimizer32::new(Algorithm::adam(), 1e-4)?)
    }
}

/// Runs `steps` minibatch regression steps of `(P(s) - phi(s))^2` on keys
/// sampled uniformly with replacement from the table. Returns the mean loss.
pub fn apf_update(
    net: &mut ApfNetwork,
    table: &PotentialTable,
    optimizer: &mut Optimizer32,
    steps: usize,
    minibatch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if table.is_empty() {
        return Err(CoreError::Usage("cannot fit the potential network to an empty table".into()));
    }
    let entries = table.entries();
    let m = minibatch.min(entries.len()).max(1);
    let mut total = 0.0f64;
    for _ in 0..steps {
        let picks: Vec<&TableEntry> =
            (0..m).map(|_| &entries[rng.gen_range(0..entries.len())]).collect();
        let zs: Vec<&[f32]> = picks.iter().map(|e| e.embedding.as_slice()).collect();
        let x = net.batch_tensor(&zs)?;
        let targets: Vec<f32> = picks.iter().map(|e| e.potential()).collect();

        net.net.zero_grad();
        let pred = net.net.forward_train(&x, rng)?;
        let mut loss = 0.0f64;
        let mut grad = vec![0.0f32; m];
        for i in 0..m {
            let d = pred.data()[i] - targets[i];
            loss += (d as f64) * (d as f64);
            grad[i] = 2.0 * d / m as f32;
        }
        total += loss / m as f64;
        let g = Tensor32::from_vec(&[m, 1], grad)?;
        net.net.backward(&g)?;
        optimizer.step(net.net.param_grad_pairs())?;
    }
    Ok(total / steps.max(1) as f64)
}

/// Number of minibatch steps that make one pass over the table.
pub fn one_pass_steps(table_len: usize, minibatch: usize) -> usize {
    table_len.div_ceil(minibatch.max(1)).max(1)
}

/// `F = gamma*phi(z') - phi(z)`; a terminal successor contributes zero
/// potential. Evaluation mode, so repeated calls agree bit-exactly.
pub fn shaping(
    net: &ApfNetwork,
    z: &[f32],
    z_next: &[f32],
    gamma: f32,
    done: bool,
) -> Result<f32> {
    let phi = net.potential(z)?;
    let phi_next = if done { 0.0 } else { net.potential(z_next)? };
    Ok(gamma * phi_next - phi)
}

/// Batched shaping terms for a transition minibatch.
pub fn shaping_batch(
    net: &ApfNetwork,
    z: &[&[f32]],
    z_next: &[&[f32]],
    gamma: f32,
    dones: &[bool],
) -> Result<Vec<f32>> {
    let phi = net.potentials(z)?;
    let phi_next = net.potentials(z_next)?;
    Ok(phi
        .iter()
        .zip(phi_next)
        .zip(dones)
        .map(|((&p, pn), &d)| gamma * if d { 0.0 } else { pn } - p)
        .collect())
}
