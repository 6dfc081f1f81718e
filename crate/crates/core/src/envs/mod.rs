//! Trust-dilemma Markov games with feature-factored rewards.
//!
//! Every game reports, per agent and per step, an event feature vector φ.
//! Rewards are always `φᵀw` for the weights passed to [`MarkovGame::step`],
//! so an induced game is obtained by swapping `w` while dynamics and random
//! streams stay untouched.

mod escalation;
mod grid;
mod iterated;
mod monster_hunt;
pub mod render;
mod weights;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use escalation::Escalation;
pub use grid::{Move, Pos, GRID_SIZE};
pub use iterated::{IteratedAction, IteratedStagHunt, IteratedState};
pub use monster_hunt::MonsterHunt;
pub use weights::RewardWeights;

/// Gridworld episodes last 50 steps.
pub const GRID_EPISODE_LENGTH: usize = 50;
/// Iterated stag hunt plays 10 rounds.
pub const ITERATED_ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    MatrixStagHunt,
    IteratedStagHunt,
    MonsterHunt,
    Escalation,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [
        EnvKind::MatrixStagHunt,
        EnvKind::IteratedStagHunt,
        EnvKind::MonsterHunt,
        EnvKind::Escalation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::MatrixStagHunt => "matrix-stag-hunt",
            EnvKind::IteratedStagHunt => "iterated-stag-hunt",
            EnvKind::MonsterHunt => "monster-hunt",
            EnvKind::Escalation => "escalation",
        }
    }

    /// Reward weights of the unperturbed game.
    pub fn original_weights(self) -> RewardWeights {
        RewardWeights::unbounded(match self {
            EnvKind::MatrixStagHunt => vec![4.0, 3.0, -10.0, 1.0],
            EnvKind::IteratedStagHunt => vec![4.0, 3.0, -50.0, 1.0],
            EnvKind::MonsterHunt => vec![5.0, 2.0, -2.0],
            EnvKind::Escalation => vec![1.0, -0.9],
        })
    }

    pub fn feature_dim(self) -> usize {
        match self {
            EnvKind::MatrixStagHunt | EnvKind::IteratedStagHunt => 4,
            EnvKind::MonsterHunt => 3,
            EnvKind::Escalation => 2,
        }
    }

    pub fn is_grid(self) -> bool {
        matches!(self, EnvKind::MonsterHunt | EnvKind::Escalation)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unregistered {
                kind: "environment",
                name: s.to_string(),
            })
    }
}

/// Construction parameters shared by all games; each game reads what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    /// Monster-Hunt only.
    pub n_agents: usize,
    pub episode_length: Option<usize>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            n_agents: 2,
            episode_length: None,
        }
    }
}

/// Outcome of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    /// Counts aligned with [`MarkovGame::event_names`].
    pub events: Vec<f64>,
}

/// Renderable, serializable view of the world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Snapshot {
    Iterated {
        round: usize,
        last_actions: [i8; 2],
    },
    Grid {
        step: usize,
        agents: Vec<Pos>,
        monster: Option<Pos>,
        apples: Vec<Pos>,
        lit: Option<Pos>,
        streak: u32,
    },
}

/// A multi-agent game whose per-agent reward is `φ(s, a; i)ᵀ w`.
pub trait MarkovGame: Send + Sync {
    fn kind(&self) -> EnvKind;
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn feature_dim(&self) -> usize {
        self.kind().feature_dim()
    }
    fn episode_length(&self) -> usize;
    fn event_names(&self) -> &[String];

    /// Re-seed the private stream and draw a fresh initial state.
    fn reset(&mut self, seed: u64);
    fn observe(&self, agent: usize) -> Result<Vec<f64>>;
    fn step(&mut self, actions: &[usize], w: &RewardWeights) -> Result<StepResult>;
    fn is_done(&self) -> bool;
    fn snapshot(&self) -> Snapshot;
    fn boxed_clone(&self) -> Box<dyn MarkovGame>;

    fn observe_all(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n_agents()).map(|i| self.observe(i)).collect()
    }
}

impl fmt::Debug for dyn MarkovGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({} agents)", self.kind(), self.n_agents())
    }
}

impl Clone for Box<dyn MarkovGame> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

pub type EnvFactory = fn(&EnvParams) -> Result<Box<dyn MarkovGame>>;

/// Name → constructor table for games.
#[derive(Clone)]
pub struct EnvRegistry {
    factories: BTreeMap<String, EnvFactory>,
}

impl EnvRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(EnvKind::MatrixStagHunt.name(), |_| {
            Ok(Box::new(IteratedStagHunt::new(1)))
        });
        reg.register(EnvKind::IteratedStagHunt.name(), |p| {
            Ok(Box::new(IteratedStagHunt::new(
                p.episode_length.unwrap_or(ITERATED_ROUNDS),
            )))
        });
        reg.register(EnvKind::MonsterHunt.name(), |p| {
            Ok(Box::new(MonsterHunt::new(
                p.n_agents,
                p.episode_length.unwrap_or(GRID_EPISODE_LENGTH),
            )?))
        });
        reg.register(EnvKind::Escalation.name(), |p| {
            Ok(Box::new(Escalation::new(
                p.episode_length.unwrap_or(GRID_EPISODE_LENGTH),
            )))
        });
        reg
    }

    pub fn register(&mut self, name: &str, factory: EnvFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn make(&self, name: &str, params: &EnvParams) -> Result<Box<dyn MarkovGame>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::Unregistered {
            kind: "environment",
            name: name.to_string(),
        })?;
        factory(params)
    }
}

/// Build a builtin game.
pub fn make_env(kind: EnvKind, params: &EnvParams) -> Result<Box<dyn MarkovGame>> {
    EnvRegistry::builtin().make(kind.name(), params)
}

/// Build a builtin game and place its entities from `seed`.
pub fn reset(kind: EnvKind, params: &EnvParams, seed: u64) -> Result<Box<dyn MarkovGame>> {
    let mut env = make_env(kind, params)?;
    env.reset(seed);
    Ok(env)
}

fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n_agents {
        return Err(Error::ShapeMismatch {
            what: "joint action",
            expected: n_agents,
            got: actions.len(),
        });
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
        return Err(Error::InvalidAction { action: a, n_actions });
    }
    Ok(())
}

fn check_agent(agent: usize, n_agents: usize) -> Result<()> {
    if agent >= n_agents {
        return Err(Error::ShapeMismatch {
            what: "agent index",
            expected: n_agents,
            got: agent,
        });
    }
    Ok(())
}
