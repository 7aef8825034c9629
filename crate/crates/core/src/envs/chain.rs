//! Tabular chain MDP with an exact dynamic-programming oracle.
//!
//! States 0..n-1 on a line; action 0 moves left, action 1 moves right, and a
//! slip reverses the move with the configured probability. Entering the right
//! terminus pays +1 and ends the episode.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy)]
pub struct ChainMdp {
    pub n_states: usize,
    pub gamma: f64,
    pub slip: f64,
    /// Episode step cap for sampled rollouts.
    pub step_cap: usize,
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// `q[s][a]` table over the chain's two actions.
pub type QTable = Vec<[f64; 2]>;

impl ChainMdp {
    pub fn new(n_states: usize, gamma: f64, slip: f64) -> Result<Self> {
        if n_states < 2 {
            return Err(CoreError::Config("chain needs at least 2 states".into()));
        }
        if !(0.0..=1.0).contains(&slip) || !(0.0..=1.0).contains(&gamma) {
            return Err(CoreError::Config(format!(
                "gamma {gamma} and slip {slip} must lie in [0,1]"
            )));
        }
        Ok(Self {
            n_states,
            gamma,
            slip,
            step_cap: 100,
        })
    }

    pub fn terminal(&self) -> usize {
        self.n_states - 1
    }

    /// `(next_state, reward)` for a *realized* direction.
    fn apply(&self, state: usize, dir: isize) -> (usize, f64) {
        let next = (state as isize + dir).clamp(0, self.terminal() as isize) as usize;
        let reward = if next == self.terminal() { 1.0 } else { 0.0 };
        (next, reward)
    }

    /// Outcome distribution of `action` at `state`: `(probability, next, reward)`.
    pub fn outcomes(&self, state: usize, action: usize) -> Vec<(f64, usize, f64)> {
        let dir: isize = if action == RIGHT { 1 } else { -1 };
        let (n1, r1) = self.apply(state, dir);
        if self.slip == 0.0 {
            return vec![(1.0, n1, r1)];
        }
        let (n2, r2) = self.apply(state, -dir);
        vec![(1.0 - self.slip, n1, r1), (self.slip, n2, r2)]
    }

    /// Samples one transition.
    pub fn sample(&self, state: usize, action: usize, rng: &mut ChaCha8Rng) -> (usize, f64, bool) {
        let dir: isize = if action == RIGHT { 1 } else { -1 };
        let dir = if self.slip > 0.0 && rng.gen::<f64>() < self.slip {
            -dir
        } else {
            dir
        };
        let (next, reward) = self.apply(state, dir);
        (next, reward, next == self.terminal())
    }
}

/// Greedy policy of a Q-table; ties break toward the lower action index.
pub fn greedy_policy(q: &QTable) -> Vec<usize> {
    q.iter().map(|row| if row[1] > row[0] { RIGHT } else { LEFT }).collect()
}

/// Exact Q via Bellman-optimality sweeps until no entry moves more than
/// `tolerance`. Returns `(q, greedy policy)`.
pub fn value_iteration(mdp: &ChainMdp, tolerance: f64) -> Result<(QTable, Vec<usize>)> {
    if !(tolerance > 0.0) {
        return Err(CoreError::Config("tolerance must be positive".into()));
    }
    let t = mdp.terminal();
    let mut q: QTable = vec![[0.0; 2]; mdp.n_states];
    loop {
        let mut delta = 0.0f64;
        for s in 0..mdp.n_states {
            if s == t {
                continue;
            }
            for a in [LEFT, RIGHT] {
                let mut v = 0.0;
                for (p, next, r) in mdp.outcomes(s, a) {
                    let cont = if next == t { 0.0 } else { q[next][0].max(q[next][1]) };
                    v += p * (r + mdp.gamma * cont);
                }
                delta = delta.max((v - q[s][a]).abs());
                q[s][a] = v;
            }
        }
        if delta <= tolerance {
            break;
        }
    }
    let policy = greedy_policy(&q);
    Ok((q, policy))
}

/// Tabular Q-learning on the chain, optionally with potential-based shaping
/// `r' = r + gamma*phi(s') - phi(s)` (the potential of a terminal successor is
/// taken as zero). Uses a per-(s,a) harmonic step size and epsilon-greedy
/// exploration; episodes restart from state 0.
pub fn q_learning(
    mdp: &ChainMdp,
    total_steps: u64,
    epsilon: f64,
    seed: u64,
    potential: Option<&[f64]>,
) -> Result<QTable> {
    if let Some(phi) = potential {
        if phi.len() != mdp.n_states {
            return Err(CoreError::Usage(format!(
                "potential has {} entries for {} states",
                phi.len(),
                mdp.n_states
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = mdp.terminal();
    let mut q: QTable = vec![[0.0; 2]; mdp.n_states];
    let mut visits = vec![[0u64; 2]; mdp.n_states];
    let mut state = 0usize;
    let mut ep_steps = 0usize;
    for _ in 0..total_steps {
        let action = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..2)
        } else if q[state][1] > q[state][0] {
            RIGHT
        } else {
            LEFT
        };
        let (next, reward, done) = mdp.sample(state, action, &mut rng);
        let shaped = match potential {
            Some(phi) => {
                let phi_next = if done { 0.0 } else { phi[next] };
                reward + mdp.gamma * phi_next - phi[state]
            }
            None => reward,
        };
        visits[state][action] += 1;
        let alpha = 5.0 / (10.0 + visits[state][action] as f64);
        let cont = if done { 0.0 } else { q[next][0].max(q[next][1]) };
        q[state][action] += alpha * (shaped + mdp.gamma * cont - q[state][action]);
        ep_steps += 1;
        if done || ep_steps >= mdp.step_cap {
            state = 0;
            ep_steps = 0;
        } else {
            state = next;
        }
    }
    let _ = t;
    Ok(q)
}
