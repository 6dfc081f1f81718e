use rand::seq::SliceRandom;
use rand::Rng;

use super::agent::ActorCritic;
use super::buffer::{Chunk, RolloutBuffer};
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::{Categorical, RecurrentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Policy and value.
    Full,
    /// Value only; policy parameters are not touched.
    ValueOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

impl LossStats {
    fn add_scaled(&mut self, o: &LossStats, k: f64) {
        self.policy_loss += k * o.policy_loss;
        self.value_loss += k * o.value_loss;
        self.entropy += k * o.entropy;
        self.clip_fraction += k * o.clip_fraction;
        self.grad_norm += k * o.grad_norm;
    }
}

/// Total loss, its parts and gradients for one minibatch of chunks.
///
/// `loss = -E[min(ρA, clip(ρ)A)] + c_v E[(V-R)²] - c_e E[H]`; in value-only
/// mode the loss is just the value term and the policy gradient is empty.
pub fn ppo_loss_and_grad(
    ac: &ActorCritic,
    batch: &[(&RolloutBuffer, Chunk)],
    cfg: &PpoConfig,
    mode: UpdateMode,
) -> Result<(f64, LossStats, Vec<f64>, Vec<f64>)> {
    let m: usize = batch.iter().map(|(_, c)| c.len).sum();
    if m == 0 {
        return Err(Error::EmptyBuffer);
    }
    let mf = m as f64;
    let (adv_mean, adv_std) = if cfg.normalize_advantages {
        let adv = || {
            batch
                .iter()
                .flat_map(|(b, c)| (0..c.len).map(move |k| b.advantages[b.idx(c.env, c.start + k)]))
        };
        let mean = adv().sum::<f64>() / mf;
        let var = adv().map(|a| (a - mean) * (a - mean)).sum::<f64>() / mf;
        (mean, var.sqrt() + 1e-8)
    } else {
        (0.0, 1.0)
    };

    let mut g_pi = match mode {
        UpdateMode::Full => vec![0.0; ac.pi.len()],
        UpdateMode::ValueOnly => Vec::new(),
    };
    let mut g_v = vec![0.0; ac.v.len()];
    let mut stats = LossStats::default();
    let heads = ac.value.heads();

    for (buf, c) in batch {
        let range = buf.idx(c.env, c.start)..buf.idx(c.env, c.start) + c.len;

        let v_inputs = &buf.value_inputs[range.clone()];
        let v_trace = ac
            .value
            .net
            .forward_seq(&ac.v.data, v_inputs, None, &vec![false; c.len])?;
        let mut d_v = Vec::with_capacity(c.len);
        for (k, i) in range.clone().enumerate() {
            let head = buf.heads[i];
            ac.value.check_head(head)?;
            let err = v_trace.output(k)[head] - buf.returns[i];
            stats.value_loss += err * err / mf;
            let mut d = vec![0.0; heads];
            d[head] = cfg.value_loss_coeff * 2.0 * err / mf;
            d_v.push(d);
        }
        ac.value.net.backward_seq(&ac.v.data, &v_trace, &d_v, &mut g_v)?;

        if mode == UpdateMode::ValueOnly {
            continue;
        }
        let h0 = buf.chunk_hidden.get(buf.chunk_id(c)).filter(|h| !h.is_empty());
        let resets = &buf.episode_start[range.clone()];
        let p_trace = ac
            .policy
            .net
            .forward_seq(&ac.pi.data, &buf.obs[range.clone()], h0.map(Vec::as_slice), resets)?;
        let mut d_logits = Vec::with_capacity(c.len);
        for (k, i) in range.enumerate() {
            let dist = Categorical::from_logits(p_trace.output(k));
            let a = buf.actions[i];
            let ratio = (dist.log_prob(a) - buf.log_probs[i]).exp();
            let adv = (buf.advantages[i] - adv_mean) / adv_std;
            let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
            let unclipped_active = ratio * adv <= clipped * adv;
            stats.policy_loss -= (ratio * adv).min(clipped * adv) / mf;
            let h = dist.entropy();
            stats.entropy += h / mf;
            if !unclipped_active {
                stats.clip_fraction += 1.0 / mf;
            }
            let surrogate_scale = if unclipped_active { -adv * ratio / mf } else { 0.0 };
            let glp = dist.grad_log_prob(a);
            let gh = dist.grad_entropy();
            d_logits.push(
                glp.iter()
                    .zip(&gh)
                    .map(|(lp, he)| surrogate_scale * lp - cfg.entropy_coeff / mf * he)
                    .collect::<Vec<f64>>(),
            );
        }
        ac.policy
            .net
            .backward_seq(&ac.pi.data, &p_trace, &d_logits, &mut g_pi)?;
    }

    let loss = match mode {
        UpdateMode::Full => {
            stats.policy_loss + cfg.value_loss_coeff * stats.value_loss - cfg.entropy_coeff * stats.entropy
        }
        UpdateMode::ValueOnly => cfg.value_loss_coeff * stats.value_loss,
    };
    Ok((loss, stats, g_pi, g_v))
}

/// Recompute the recurrent state entering every chunk under the current policy.
fn refresh_hidden(ac: &ActorCritic, buf: &mut RolloutBuffer) -> Result<()> {
    if !ac.policy.net.is_recurrent() {
        return Ok(());
    }
    for e in 0..buf.n_envs {
        let first = buf.chunk_id(&Chunk {
            env: e,
            start: 0,
            len: buf.chunk_length,
        });
        let mut state = RecurrentState {
            hidden: buf.chunk_hidden[first].clone(),
        };
        for t in 0..buf.horizon {
            let i = buf.idx(e, t);
            if buf.episode_start[i] {
                state.reset();
            }
            if t % buf.chunk_length == 0 {
                buf.chunk_hidden[first + t / buf.chunk_length] = state.hidden.clone();
            }
            let (_, next) = ac.policy.forward_policy(&ac.pi.data, &buf.obs[i], &state)?;
            state = next;
        }
    }
    Ok(())
}

/// `ppo_epochs` passes of shuffled minibatch updates over the given buffers.
/// Recurrent chunk states are recomputed before every pass after the first.
pub fn ppo_update(
    ac: &mut ActorCritic,
    buffers: &mut [RolloutBuffer],
    cfg: &PpoConfig,
    lr: f64,
    mode: UpdateMode,
    rng: &mut impl Rng,
) -> Result<LossStats> {
    let mut all: Vec<(usize, Chunk)> = buffers
        .iter()
        .enumerate()
        .flat_map(|(b, buf)| buf.chunks().into_iter().map(move |c| (b, c)))
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut total = LossStats::default();
    let mut n_batches = 0usize;
    for epoch in 0..cfg.ppo_epochs {
        if epoch > 0 && mode == UpdateMode::Full {
            for buf in buffers.iter_mut() {
                refresh_hidden(ac, buf)?;
            }
        }
        all.shuffle(rng);
        for mb in all.chunks(cfg.minibatch_chunks) {
            let batch: Vec<(&RolloutBuffer, Chunk)> = mb.iter().map(|&(b, c)| (&buffers[b], c)).collect();
            let (_, mut stats, mut g_pi, mut g_v) = ppo_loss_and_grad(ac, &batch, cfg, mode)?;
            let norm = g_pi.iter().chain(&g_v).map(|g| g * g).sum::<f64>().sqrt();
            stats.grad_norm = norm;
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let k = cfg.grad_clip / norm;
                g_pi.iter_mut().chain(g_v.iter_mut()).for_each(|g| *g *= k);
            }
            if mode == UpdateMode::Full {
                ac.pi_opt.step(&mut ac.pi.data, &g_pi, lr);
            }
            ac.v_opt.step(&mut ac.v.data, &g_v, lr);
            total.add_scaled(&stats, 1.0);
            n_batches += 1;
        }
    }
    let mut mean = LossStats::default();
    mean.add_scaled(&total, 1.0 / n_batches as f64);
    Ok(mean)
}
