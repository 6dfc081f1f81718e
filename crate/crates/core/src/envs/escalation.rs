use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{distinct_cells, random_free_cell, Move, Pos};
use super::{check_actions, check_agent, EnvKind, MarkovGame, RewardWeights, Snapshot, StepResult};
use crate::error::{Error, Result};

/// Escalation: two agents follow a lit cell together on a 5×5 grid.
///
/// Per-agent features: `[both agents on the lit cell, L if left alone on it]`
/// where `L` is the current cooperation streak.
///
/// * both on the lit cell: `L += 1` and a random neighbouring cell lights up;
/// * one on the lit cell while `L > 0`: the other agent defected, the agent
///   left on the cell receives feature `L` and the episode ends;
/// * neither on the lit cell while `L > 0`: joint departure, no penalty,
///   `L` resets and a fresh random cell lights up;
/// * with `L = 0` there is no chain to break and nothing happens until both
///   agents arrive together.
#[derive(Debug, Clone)]
pub struct Escalation {
    episode_length: usize,
    agents: [Pos; 2],
    lit: Pos,
    streak: u32,
    step: usize,
    terminated: bool,
    rng: ChaCha8Rng,
    events: Vec<String>,
}

pub const ESCALATION_EVENTS: [&str; 3] = ["coop_steps", "defection", "joint_leave"];

impl Escalation {
    pub fn new(episode_length: usize) -> Self {
        let mut env = Self {
            episode_length,
            agents: [Pos::new(0, 0); 2],
            lit: Pos::new(0, 0),
            streak: 0,
            step: 0,
            terminated: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            events: ESCALATION_EVENTS.iter().map(|s| s.to_string()).collect(),
        };
        env.reset(0);
        env
    }

    pub fn streak(&self) -> u32 {
        self.streak
    }

    pub fn lit(&self) -> Pos {
        self.lit
    }

    pub fn agents(&self) -> [Pos; 2] {
        self.agents
    }

    pub fn set_positions(&mut self, agents: [Pos; 2], lit: Pos, streak: u32) {
        self.agents = agents;
        self.lit = lit;
        self.streak = streak;
        self.step = 0;
        self.terminated = false;
    }
}

impl MarkovGame for Escalation {
    fn kind(&self) -> EnvKind {
        EnvKind::Escalation
    }

    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn obs_dim(&self) -> usize {
        6
    }

    fn episode_length(&self) -> usize {
        self.episode_length
    }

    fn event_names(&self) -> &[String] {
        &self.events
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = distinct_cells(&mut self.rng, 3);
        self.agents = [cells[0], cells[1]];
        self.lit = cells[2];
        self.streak = 0;
        self.step = 0;
        self.terminated = false;
    }

    /// `[own, other, lit]`.
    fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        check_agent(agent, 2)?;
        let mut obs = Vec::with_capacity(6);
        obs.extend(self.agents[agent].as_features());
        obs.extend(self.agents[1 - agent].as_features());
        obs.extend(self.lit.as_features());
        Ok(obs)
    }

    fn step(&mut self, actions: &[usize], w: &RewardWeights) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        check_actions(actions, 2, 4)?;
        w.check_dim(2)?;
        for (pos, &a) in self.agents.iter_mut().zip(actions) {
            *pos = pos.apply(Move::from_index(a)?);
        }
        let on_lit = [self.agents[0] == self.lit, self.agents[1] == self.lit];
        let mut features = vec![vec![0.0; 2]; 2];
        let mut events = vec![0.0; 3];
        match on_lit {
            [true, true] => {
                features[0][0] = 1.0;
                features[1][0] = 1.0;
                events[0] = 1.0;
                self.streak += 1;
                let neighbors: Vec<Pos> = self.lit.neighbors().collect();
                self.lit = neighbors[self.rng.gen_range(0..neighbors.len())];
            }
            [true, false] | [false, true] if self.streak > 0 => {
                let stayer = usize::from(on_lit[1]);
                features[stayer][1] = self.streak as f64;
                events[1] = 1.0;
                self.terminated = true;
            }
            [false, false] if self.streak > 0 => {
                events[2] = 1.0;
                self.streak = 0;
                self.lit = random_free_cell(&mut self.rng, &self.agents);
            }
            _ => {}
        }
        self.step += 1;
        let rewards = features.iter().map(|phi| w.reward(phi)).collect();
        Ok(StepResult {
            observations: self.observe_all()?,
            features,
            rewards,
            done: self.is_done(),
            events,
        })
    }

    fn is_done(&self) -> bool {
        self.terminated || self.step >= self.episode_length
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::Grid {
            step: self.step,
            agents: self.agents.to_vec(),
            monster: None,
            apples: vec![],
            lit: Some(self.lit),
            streak: self.streak,
        }
    }

    fn boxed_clone(&self) -> Box<dyn MarkovGame> {
        Box::new(self.clone())
    }
}
