use std::fmt::Debug;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::{value_input, ActorCritic};
use crate::envs::{MarkovGame, RewardWeights, Snapshot, StepResult};
use crate::error::{Error, Result};
use crate::nn::{ParamVector, PolicyNet, RecurrentState};
use crate::stats::EpisodeStats;

pub type OpponentState = RecurrentState;

/// A fixed (never trained) co-player.
pub trait Opponent: Send + Sync + Debug {
    fn label(&self) -> &str;

    fn initial_state(&self) -> OpponentState {
        OpponentState::default()
    }

    fn act(&self, obs: &[f64], state: &mut OpponentState, rng: &mut dyn RngCore) -> Result<usize>;

    /// Hash of whatever determines behaviour, for freeze checks.
    fn digest(&self) -> String;
}

/// A trained policy played as a frozen opponent.
#[derive(Debug, Clone)]
pub struct PolicyOpponent {
    pub label: String,
    pub policy: PolicyNet,
    pub params: ParamVector,
}

impl PolicyOpponent {
    pub fn from_agent(label: impl Into<String>, ac: &ActorCritic) -> Self {
        Self {
            label: label.into(),
            policy: ac.policy.clone(),
            params: ac.pi.clone(),
        }
    }
}

impl Opponent for PolicyOpponent {
    fn label(&self) -> &str {
        &self.label
    }

    fn initial_state(&self) -> OpponentState {
        self.policy.initial_state()
    }

    fn act(&self, obs: &[f64], state: &mut OpponentState, rng: &mut dyn RngCore) -> Result<usize> {
        let (dist, next) = self.policy.forward_policy(&self.params.data, obs, state)?;
        *state = next;
        Ok(dist.sample(rng))
    }

    fn digest(&self) -> String {
        self.params.digest()
    }
}

/// Opponents drawn uniformly at the start of each episode.
#[derive(Debug, Clone)]
pub struct OpponentPool {
    pub members: Vec<Arc<dyn Opponent>>,
}

impl OpponentPool {
    pub fn new(members: Vec<Arc<dyn Opponent>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyOpponentSet);
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> usize {
        (rng.next_u64() % self.members.len() as u64) as usize
    }

    pub fn labels(&self) -> Vec<String> {
        self.members.iter().map(|m| m.label().to_string()).collect()
    }
}

/// Who controls an agent index of the game.
#[derive(Debug, Clone)]
pub enum Slot {
    /// Trainable agent, index into the learner list.
    Learner(usize),
    Pool(Arc<OpponentPool>),
}

/// Every agent a learner: one learner per agent, or a single shared one.
pub fn self_play_slots(n_agents: usize, shared_params: bool) -> Vec<Slot> {
    (0..n_agents)
        .map(|i| Slot::Learner(if shared_params { 0 } else { i }))
        .collect()
}

/// Per-episode control state of every slot.
#[derive(Debug, Clone)]
pub(crate) struct Controllers {
    pub hidden: Vec<RecurrentState>,
    /// Opponent drawn for each pool slot (0 for learners).
    pub picks: Vec<usize>,
}

impl Controllers {
    pub fn begin(slots: &[Slot], learners: &[ActorCritic], rng: &mut dyn RngCore) -> Self {
        let mut picks = Vec::with_capacity(slots.len());
        let mut hidden = Vec::with_capacity(slots.len());
        for s in slots {
            match s {
                Slot::Learner(k) => {
                    picks.push(0);
                    hidden.push(learners[*k].initial_state());
                }
                Slot::Pool(pool) => {
                    let i = pool.sample(rng);
                    hidden.push(pool.members[i].initial_state());
                    picks.push(i);
                }
            }
        }
        Self { hidden, picks }
    }

    /// Identity tag seen by learners' critics: the first pool slot's pick.
    pub fn tag(&self, slots: &[Slot]) -> Option<(usize, usize)> {
        slots.iter().zip(&self.picks).find_map(|(s, &p)| match s {
            Slot::Pool(pool) => Some((p, pool.len())),
            Slot::Learner(_) => None,
        })
    }
}

/// What a learner slot did at one step.
#[derive(Debug, Clone)]
pub(crate) struct LearnerStep {
    pub log_prob: f64,
    pub value: f64,
    pub value_input: Vec<f64>,
    pub head: usize,
    pub hidden_before: Vec<f64>,
}

/// Choose every slot's action. Learner steps are returned for slots that are
/// learners (`None` otherwise).
pub(crate) fn choose_actions(
    slots: &[Slot],
    learners: &[ActorCritic],
    ctl: &mut Controllers,
    obs: &[Vec<f64>],
    use_tag: bool,
    with_values: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<Option<LearnerStep>>)> {
    let tag = if use_tag { ctl.tag(slots) } else { None };
    let head = tag.map_or(0, |t| t.0);
    let mut actions = Vec::with_capacity(slots.len());
    let mut steps = Vec::with_capacity(slots.len());
    for (i, s) in slots.iter().enumerate() {
        match s {
            Slot::Learner(k) => {
                let ac = &learners[*k];
                let hidden_before = ctl.hidden[i].hidden.clone();
                let (a, lp, next) = ac.act(&obs[i], &ctl.hidden[i], rng)?;
                ctl.hidden[i] = next;
                let (value, vin) = if with_values {
                    let vin = value_input(obs, i, tag);
                    (ac.value_of(&vin, head)?, vin)
                } else {
                    (0.0, Vec::new())
                };
                actions.push(a);
                steps.push(Some(LearnerStep {
                    log_prob: lp,
                    value,
                    value_input: vin,
                    head,
                    hidden_before,
                }));
            }
            Slot::Pool(pool) => {
                let a = pool.members[ctl.picks[i]].act(&obs[i], &mut ctl.hidden[i], rng)?;
                actions.push(a);
                steps.push(None);
            }
        }
    }
    Ok((actions, steps))
}

/// One recorded transition, used for trajectory files.
#[derive(Debug, Clone)]
pub struct RecordedStep {
    pub before: Snapshot,
    pub actions: Vec<usize>,
    pub result: StepResult,
}

/// Play one full episode from the env's current state.
pub fn play_episode(
    env: &mut dyn MarkovGame,
    slots: &[Slot],
    learners: &[ActorCritic],
    w: &RewardWeights,
    rng: &mut ChaCha8Rng,
    mut record: Option<&mut Vec<RecordedStep>>,
) -> Result<(EpisodeStats, Vec<usize>)> {
    let names: Arc<[String]> = env.event_names().to_vec().into();
    let mut stats = EpisodeStats::new(names, env.n_agents());
    let mut ctl = Controllers::begin(slots, learners, rng);
    let mut obs = env.observe_all()?;
    while !env.is_done() {
        let before = record.as_ref().map(|_| env.snapshot());
        let (actions, _) = choose_actions(slots, learners, &mut ctl, &obs, false, false, rng)?;
        let res = env.step(&actions, w)?;
        stats.record(&res.rewards, &res.events);
        obs = res.observations.clone();
        if let (Some(rec), Some(before)) = (record.as_deref_mut(), before) {
            rec.push(RecordedStep {
                before,
                actions,
                result: res,
            });
        }
    }
    Ok((stats, ctl.picks))
}

/// Evaluation episodes under `w` with stochastic policies. Episode `k` uses
/// its own stream `(seed, k)`, so results do not depend on scheduling.
/// Returns per-episode stats with the opponent drawn for each slot.
pub fn evaluate(
    env_proto: &dyn MarkovGame,
    slots: &[Slot],
    learners: &[ActorCritic],
    w: &RewardWeights,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(EpisodeStats, Vec<usize>)>> {
    if slots.len() != env_proto.n_agents() {
        return Err(Error::ShapeMismatch {
            what: "slots",
            expected: env_proto.n_agents(),
            got: slots.len(),
        });
    }
    (0..episodes)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut env = env_proto.boxed_clone();
            env.reset(rng.next_u64());
            play_episode(env.as_mut(), slots, learners, w, &mut rng, None)
        })
        .collect()
}
