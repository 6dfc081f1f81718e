use crate::error::{Error, Result};

/// GAE(λ) over one environment's trajectory segment.
///
/// `dones[t]` marks that the episode terminated after step `t`; those steps
/// bootstrap with 0. The segment end bootstraps with `bootstrap`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::EmptyBuffer);
    }
    if values.len() != n || dones.len() != n {
        return Err(Error::ShapeMismatch {
            what: "GAE inputs",
            expected: n,
            got: values.len().min(dones.len()),
        });
    }
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 == n { bootstrap } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        gae = delta + gamma * lambda * live * gae;
        adv[t] = gae;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// A run of consecutive steps of one environment instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub env: usize,
    pub start: usize,
    pub len: usize,
}

/// Steps of one agent slot for `n_envs` instances × `horizon` steps,
/// stored env-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    pub chunk_length: usize,
    pub obs: Vec<Vec<f64>>,
    pub value_inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Training rewards (scaled, bonus included).
    pub rewards: Vec<f64>,
    /// Unscaled environment rewards under the training weights.
    pub raw_rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// The step opens an episode, so recurrent state is zero entering it.
    pub episode_start: Vec<bool>,
    /// Value head (opponent identity) used at each step.
    pub heads: Vec<usize>,
    /// Recurrent state entering each chunk, indexed by chunk id.
    pub chunk_hidden: Vec<Vec<f64>>,
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn idx(&self, env: usize, t: usize) -> usize {
        env * self.horizon + t
    }

    pub fn chunks_per_env(&self) -> usize {
        self.horizon / self.chunk_length
    }

    pub fn chunk_id(&self, c: &Chunk) -> usize {
        c.env * self.chunks_per_env() + c.start / self.chunk_length
    }

    pub fn chunks(&self) -> Vec<Chunk> {
        (0..self.n_envs)
            .flat_map(|env| {
                (0..self.chunks_per_env()).map(move |k| Chunk {
                    env,
                    start: k * self.chunk_length,
                    len: self.chunk_length,
                })
            })
            .collect()
    }

    /// Fill `advantages` and `returns` env by env.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for e in 0..self.n_envs {
            let r = self.idx(e, 0)..self.idx(e, 0) + self.horizon;
            let (adv, ret) = compute_gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r.clone()],
                self.last_values[e],
                gamma,
                lambda,
            )?;
            self.advantages[r.clone()].copy_from_slice(&adv);
            self.returns[r].copy_from_slice(&ret);
        }
        Ok(())
    }
}
