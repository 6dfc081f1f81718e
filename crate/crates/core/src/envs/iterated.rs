use serde::{Deserialize, Serialize};

use super::{check_actions, check_agent, EnvKind, MarkovGame, RewardWeights, Snapshot, StepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IteratedAction {
    Stag = 0,
    Hare = 1,
}

impl IteratedAction {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Self::Stag),
            1 => Ok(Self::Hare),
            _ => Err(Error::InvalidAction {
                action: i,
                n_actions: 2,
            }),
        }
    }
}

/// `last_actions` uses `-1` before the first round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IteratedState {
    pub round: usize,
    pub last_actions: [i8; 2],
}

impl Default for IteratedState {
    fn default() -> Self {
        Self {
            round: 0,
            last_actions: [-1, -1],
        }
    }
}

/// Repeated 2×2 stag hunt. With one round this is the matrix game.
///
/// Features are the one-hot joint outcome in payoff order `(a, b, c, d)`
/// from the acting agent's point of view: both Stag, own Hare against Stag,
/// own Stag against Hare, both Hare.
#[derive(Debug, Clone)]
pub struct IteratedStagHunt {
    rounds: usize,
    state: IteratedState,
    events: Vec<String>,
}

pub const ITERATED_EVENTS: [&str; 4] = ["stag_stag", "stag_hare", "hare_stag", "hare_hare"];

impl IteratedStagHunt {
    pub fn new(rounds: usize) -> Self {
        Self {
            rounds: rounds.max(1),
            state: IteratedState::default(),
            events: ITERATED_EVENTS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn state(&self) -> IteratedState {
        self.state
    }

    pub fn set_state(&mut self, state: IteratedState) {
        self.state = state;
    }

    fn outcome_index(own: usize, other: usize) -> usize {
        match (own, other) {
            (0, 0) => 0,
            (1, 0) => 1,
            (0, 1) => 2,
            _ => 3,
        }
    }
}

impl MarkovGame for IteratedStagHunt {
    fn kind(&self) -> EnvKind {
        if self.rounds == 1 {
            EnvKind::MatrixStagHunt
        } else {
            EnvKind::IteratedStagHunt
        }
    }

    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn episode_length(&self) -> usize {
        self.rounds
    }

    fn event_names(&self) -> &[String] {
        &self.events
    }

    fn reset(&mut self, _seed: u64) {
        self.state = IteratedState::default();
    }

    fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        check_agent(agent, 2)?;
        let [a0, a1] = self.state.last_actions;
        Ok(if agent == 0 {
            vec![a0 as f64, a1 as f64]
        } else {
            vec![a1 as f64, a0 as f64]
        })
    }

    fn step(&mut self, actions: &[usize], w: &RewardWeights) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        check_actions(actions, 2, 2)?;
        w.check_dim(4)?;
        let mut features = Vec::with_capacity(2);
        let mut rewards = Vec::with_capacity(2);
        for i in 0..2 {
            let mut phi = vec![0.0; 4];
            phi[Self::outcome_index(actions[i], actions[1 - i])] = 1.0;
            rewards.push(w.reward(&phi));
            features.push(phi);
        }
        let mut events = vec![0.0; 4];
        events[actions[0] * 2 + actions[1]] = 1.0;
        self.state.round += 1;
        self.state.last_actions = [actions[0] as i8, actions[1] as i8];
        Ok(StepResult {
            observations: self.observe_all()?,
            features,
            rewards,
            done: self.is_done(),
            events,
        })
    }

    fn is_done(&self) -> bool {
        self.state.round >= self.rounds
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::Iterated {
            round: self.state.round,
            last_actions: self.state.last_actions,
        }
    }

    fn boxed_clone(&self) -> Box<dyn MarkovGame> {
        Box::new(self.clone())
    }
}
