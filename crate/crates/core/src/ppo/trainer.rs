use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{value_input, ActorCritic};
use super::buffer::RolloutBuffer;
use super::count::VisitCounter;
use super::rollout::{choose_actions, Controllers, Slot};
use super::update::{ppo_update, LossStats, UpdateMode};
use super::{LinearSchedule, PpoConfig};
use crate::envs::{MarkovGame, RewardWeights};
use crate::error::{Error, Result};
use crate::stats::EpisodeStats;

/// How other agents' rewards enter a learner's training reward:
/// `r_i + other_weight · Σ_{j≠i} r_j`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardMix {
    pub other_weight: f64,
}

impl RewardMix {
    pub const SELFISH: RewardMix = RewardMix { other_weight: 0.0 };
    pub const SHARED: RewardMix = RewardMix { other_weight: 1.0 };

    pub fn apply(&self, rewards: &[f64], agent: usize) -> f64 {
        if self.other_weight == 0.0 {
            return rewards[agent];
        }
        let others: f64 = rewards
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .map(|(_, r)| r)
            .sum();
        rewards[agent] + self.other_weight * others
    }
}

/// Everything needed to build a [`Trainer`].
#[derive(Debug)]
pub struct TrainerSpec {
    pub env: Box<dyn MarkovGame>,
    pub slots: Vec<Slot>,
    pub train_w: RewardWeights,
    pub mix: RewardMix,
    pub cfg: PpoConfig,
    pub total_env_steps: u64,
    pub seed: u64,
    /// Feed the first pool slot's opponent identity to learners' critics and
    /// select the matching value head.
    pub identity_tag: bool,
}

/// Result of one collect-then-update cycle.
#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub update_index: u64,
    /// Joint environment steps after this update.
    pub env_steps: u64,
    pub lr: f64,
    pub episodes: Vec<EpisodeStats>,
    /// Per learner.
    pub losses: Vec<LossStats>,
}

#[derive(Debug)]
struct Worker {
    env: Box<dyn MarkovGame>,
    rng: ChaCha8Rng,
    obs: Vec<Vec<f64>>,
    ctl: Controllers,
    episode: EpisodeStats,
    starting: bool,
}

/// Per learner-slot record of one worker's segment.
#[derive(Debug, Default)]
struct SlotTrace {
    obs: Vec<Vec<f64>>,
    value_inputs: Vec<Vec<f64>>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    raw: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    starts: Vec<bool>,
    heads: Vec<usize>,
    chunk_hidden: Vec<Vec<f64>>,
    last_value: f64,
}

struct Ctx<'a> {
    slots: &'a [Slot],
    learners: &'a [ActorCritic],
    w: &'a RewardWeights,
    mix: RewardMix,
    horizon: usize,
    chunk: usize,
    use_tag: bool,
}

impl Worker {
    fn new(proto: &dyn MarkovGame, mut rng: ChaCha8Rng, slots: &[Slot], learners: &[ActorCritic]) -> Result<Self> {
        let mut env = proto.boxed_clone();
        env.reset(rng.next_u64());
        let ctl = Controllers::begin(slots, learners, &mut rng);
        Ok(Self {
            obs: env.observe_all()?,
            episode: EpisodeStats::new(env.event_names().to_vec().into(), env.n_agents()),
            env,
            rng,
            ctl,
            starting: true,
        })
    }

    fn collect(&mut self, cx: &Ctx<'_>) -> Result<(Vec<Option<SlotTrace>>, Vec<EpisodeStats>)> {
        let mut traces: Vec<Option<SlotTrace>> = cx
            .slots
            .iter()
            .map(|s| matches!(s, Slot::Learner(_)).then(SlotTrace::default))
            .collect();
        let mut finished = Vec::new();
        for t in 0..cx.horizon {
            let (actions, steps) = choose_actions(
                cx.slots,
                cx.learners,
                &mut self.ctl,
                &self.obs,
                cx.use_tag,
                true,
                &mut self.rng,
            )?;
            let res = self.env.step(&actions, cx.w)?;
            self.episode.record(&res.rewards, &res.events);
            for (i, (tr, st)) in traces.iter_mut().zip(steps).enumerate() {
                let (Some(tr), Some(st)) = (tr.as_mut(), st) else {
                    continue;
                };
                tr.obs.push(std::mem::take(&mut self.obs[i]));
                tr.value_inputs.push(st.value_input);
                tr.actions.push(actions[i]);
                tr.log_probs.push(st.log_prob);
                tr.raw.push(cx.mix.apply(&res.rewards, i));
                tr.values.push(st.value);
                tr.dones.push(res.done);
                tr.starts.push(self.starting);
                tr.heads.push(st.head);
                if t % cx.chunk == 0 {
                    tr.chunk_hidden.push(st.hidden_before);
                }
            }
            if res.done {
                let names = self.episode.names().to_vec().into();
                finished.push(std::mem::replace(
                    &mut self.episode,
                    EpisodeStats::new(names, self.env.n_agents()),
                ));
                self.env.reset(self.rng.next_u64());
                self.ctl = Controllers::begin(cx.slots, cx.learners, &mut self.rng);
                self.obs = self.env.observe_all()?;
                self.starting = true;
            } else {
                self.obs = res.observations;
                self.starting = false;
            }
        }
        let tag = if cx.use_tag { self.ctl.tag(cx.slots) } else { None };
        for (i, tr) in traces.iter_mut().enumerate() {
            if let (Some(tr), Slot::Learner(k)) = (tr.as_mut(), &cx.slots[i]) {
                let vin = value_input(&self.obs, i, tag);
                tr.last_value = cx.learners[*k].value_of(&vin, tag.map_or(0, |t| t.0))?;
            }
        }
        Ok((traces, finished))
    }
}

/// Worker-pool size from `RPG_LAB_WORKERS` (default 1: strict single thread).
pub fn worker_count() -> usize {
    std::env::var("RPG_LAB_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Collects rollouts with persistent environment instances and updates the
/// learners with PPO.
pub struct Trainer {
    pub cfg: PpoConfig,
    pub slots: Vec<Slot>,
    pub learners: Vec<ActorCritic>,
    pub train_w: RewardWeights,
    pub mix: RewardMix,
    pub identity_tag: bool,
    env_proto: Box<dyn MarkovGame>,
    workers: Vec<Worker>,
    counters: Vec<Option<VisitCounter>>,
    rng: ChaCha8Rng,
    env_steps: u64,
    updates: u64,
    schedule: LinearSchedule,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("env", &self.env_proto.kind())
            .field("learners", &self.learners.len())
            .field("env_steps", &self.env_steps)
            .finish()
    }
}

fn n_learners(slots: &[Slot]) -> usize {
    slots
        .iter()
        .filter_map(|s| match s {
            Slot::Learner(k) => Some(k + 1),
            Slot::Pool(_) => None,
        })
        .max()
        .unwrap_or(0)
}

fn tag_len(slots: &[Slot]) -> usize {
    slots
        .iter()
        .find_map(|s| match s {
            Slot::Pool(p) => Some(p.len()),
            Slot::Learner(_) => None,
        })
        .unwrap_or(0)
}

impl Trainer {
    /// Fresh learners initialized from `spec.seed`.
    pub fn new(spec: TrainerSpec) -> Result<Self> {
        let mut init = ChaCha8Rng::seed_from_u64(spec.seed);
        let env = spec.env.as_ref();
        let tags = if spec.identity_tag { tag_len(&spec.slots) } else { 0 };
        let value_dim = env.n_agents() * env.obs_dim() + tags;
        let learners = (0..n_learners(&spec.slots))
            .map(|_| {
                ActorCritic::new(
                    env.obs_dim(),
                    env.n_actions(),
                    value_dim,
                    tags.max(1),
                    &spec.cfg,
                    &mut init,
                )
            })
            .collect();
        Self::with_learners(spec, learners)
    }

    /// Continue training existing learners.
    pub fn with_learners(spec: TrainerSpec, learners: Vec<ActorCritic>) -> Result<Self> {
        spec.cfg.validate()?;
        let TrainerSpec {
            env,
            slots,
            train_w,
            mix,
            cfg,
            total_env_steps,
            seed,
            identity_tag,
        } = spec;
        if slots.len() != env.n_agents() {
            return Err(Error::ShapeMismatch {
                what: "slots",
                expected: env.n_agents(),
                got: slots.len(),
            });
        }
        if learners.len() != n_learners(&slots) {
            return Err(Error::ShapeMismatch {
                what: "learners",
                expected: n_learners(&slots),
                got: learners.len(),
            });
        }
        train_w.check_dim(env.feature_dim())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let workers = (0..cfg.parallel_threads)
            .map(|k| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1000 + k as u64);
                Worker::new(env.as_ref(), r, &slots, &learners)
            })
            .collect::<Result<Vec<_>>>()?;
        let counters = slots
            .iter()
            .map(|s| match (s, cfg.count_bonus) {
                (Slot::Learner(_), Some(a)) => Some(VisitCounter::new(a)),
                _ => None,
            })
            .collect();
        let threads = worker_count();
        let pool = (threads > 1)
            .then(|| rayon::ThreadPoolBuilder::new().num_threads(threads).build())
            .transpose()
            .map_err(|e| Error::Config(e.to_string()))?
            .map(Arc::new);
        Ok(Self {
            schedule: LinearSchedule {
                initial: cfg.learning_rate,
                total: total_env_steps,
            },
            cfg,
            slots,
            learners,
            train_w,
            mix,
            identity_tag,
            env_proto: env,
            workers,
            counters,
            rng,
            env_steps: 0,
            updates: 0,
            pool,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn total_env_steps(&self) -> u64 {
        self.schedule.total
    }

    pub fn env_proto(&self) -> &dyn MarkovGame {
        self.env_proto.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.schedule.total
    }

    pub fn current_lr(&self) -> f64 {
        if self.cfg.anneal_lr {
            self.schedule.at(self.env_steps)
        } else {
            self.cfg.learning_rate
        }
    }

    /// Gather one rollout per worker and assemble one buffer per learner slot.
    pub fn collect(&mut self) -> Result<(Vec<(usize, RolloutBuffer)>, Vec<EpisodeStats>)> {
        let cx = Ctx {
            slots: &self.slots,
            learners: &self.learners,
            w: &self.train_w,
            mix: self.mix,
            horizon: self.cfg.episode_length,
            chunk: self.cfg.chunk_length,
            use_tag: self.identity_tag,
        };
        let outs: Vec<Result<(Vec<Option<SlotTrace>>, Vec<EpisodeStats>)>> = match &self.pool {
            Some(pool) => pool.install(|| self.workers.par_iter_mut().map(|w| w.collect(&cx)).collect()),
            None => self.workers.iter_mut().map(|w| w.collect(&cx)).collect(),
        };
        let mut per_worker = Vec::with_capacity(outs.len());
        let mut episodes = Vec::new();
        for o in outs {
            let (traces, eps) = o?;
            per_worker.push(traces);
            episodes.extend(eps);
        }
        let horizon = self.cfg.episode_length;
        let n_envs = per_worker.len();
        let mut buffers = Vec::new();
        for (i, slot) in self.slots.iter().enumerate() {
            let Slot::Learner(k) = slot else { continue };
            // Count bonus in time-major order, as if all instances stepped in lockstep.
            let mut bonus = vec![0.0; n_envs * horizon];
            if let Some(counter) = self.counters[i].as_mut() {
                for t in 0..horizon {
                    for (e, traces) in per_worker.iter().enumerate() {
                        let tr = traces[i].as_ref().expect("learner slot trace");
                        bonus[e * horizon + t] = counter.bonus(&tr.obs[t]);
                    }
                }
            }
            let mut buf = RolloutBuffer {
                n_envs,
                horizon,
                chunk_length: self.cfg.chunk_length,
                ..RolloutBuffer::default()
            };
            for traces in per_worker.iter_mut() {
                let tr = traces[i].take().expect("learner slot trace");
                buf.obs.extend(tr.obs);
                buf.value_inputs.extend(tr.value_inputs);
                buf.actions.extend(tr.actions);
                buf.log_probs.extend(tr.log_probs);
                buf.raw_rewards.extend(tr.raw);
                buf.values.extend(tr.values);
                buf.dones.extend(tr.dones);
                buf.episode_start.extend(tr.starts);
                buf.heads.extend(tr.heads);
                buf.chunk_hidden.extend(tr.chunk_hidden);
                buf.last_values.push(tr.last_value);
            }
            buf.rewards = buf
                .raw_rewards
                .iter()
                .zip(&bonus)
                .map(|(r, b)| self.cfg.reward_scale * (r + b))
                .collect();
            buf.finish(self.cfg.gamma, self.cfg.gae_lambda)?;
            buffers.push((*k, buf));
        }
        Ok((buffers, episodes))
    }

    /// One collect-then-update cycle.
    pub fn step(&mut self, mode: UpdateMode) -> Result<UpdateReport> {
        let lr = self.current_lr();
        let (buffers, episodes) = self.collect()?;
        let mut losses = Vec::with_capacity(self.learners.len());
        for k in 0..self.learners.len() {
            let mut mine: Vec<RolloutBuffer> = buffers
                .iter()
                .filter(|(j, _)| *j == k)
                .map(|(_, b)| b.clone())
                .collect();
            losses.push(ppo_update(
                &mut self.learners[k],
                &mut mine,
                &self.cfg,
                lr,
                mode,
                &mut self.rng,
            )?);
        }
        self.env_steps += self.cfg.steps_per_rollout() as u64;
        self.updates += 1;
        Ok(UpdateReport {
            update_index: self.updates,
            env_steps: self.env_steps,
            lr,
            episodes,
            losses,
        })
    }

    /// Train until the step budget is spent, handing each report to `on_update`.
    pub fn run(&mut self, mut on_update: impl FnMut(&UpdateReport) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let report = self.step(UpdateMode::Full)?;
            on_update(&report)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_mix() {
        let r = [1.0, 2.0, 4.0];
        assert_eq!(RewardMix::SELFISH.apply(&r, 1), 2.0);
        assert_eq!(RewardMix::SHARED.apply(&r, 1), 7.0);
        assert_eq!(RewardMix { other_weight: 0.5 }.apply(&r, 0), 4.0);
    }
}
