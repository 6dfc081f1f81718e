use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{distinct_cells, random_free_cell, Move, Pos};
use super::{check_actions, check_agent, EnvKind, MarkovGame, RewardWeights, Snapshot, StepResult};
use crate::error::{Error, Result};

const COOP: usize = 0;
const APPLE: usize = 1;
const ALONE: usize = 2;

/// Monster-Hunt on a 5×5 grid with `n ≥ 2` agents, one monster and two apples.
///
/// Per-agent features: `[caught monster with another agent, ate apple, met monster alone]`.
#[derive(Debug, Clone)]
pub struct MonsterHunt {
    n_agents: usize,
    episode_length: usize,
    agents: Vec<Pos>,
    monster: Pos,
    apples: [Pos; 2],
    step: usize,
    rng: ChaCha8Rng,
    events: Vec<String>,
}

impl MonsterHunt {
    pub fn new(n_agents: usize, episode_length: usize) -> Result<Self> {
        if n_agents < 2 {
            return Err(Error::Config("monster-hunt needs at least 2 agents".into()));
        }
        let mut events: Vec<String> = ["coop_hunt", "single_hunt", "apple", "monster_contact"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..n_agents {
            events.push(format!("coop_hunt_agent{i}"));
            events.push(format!("single_hunt_agent{i}"));
            events.push(format!("apple_agent{i}"));
        }
        let mut env = Self {
            n_agents,
            episode_length,
            agents: vec![],
            monster: Pos::new(0, 0),
            apples: [Pos::new(0, 0); 2],
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            events,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn agents(&self) -> &[Pos] {
        &self.agents
    }

    pub fn monster(&self) -> Pos {
        self.monster
    }

    pub fn apples(&self) -> [Pos; 2] {
        self.apples
    }

    /// Place entities explicitly; used by tests and trajectory tooling.
    pub fn set_positions(&mut self, agents: Vec<Pos>, monster: Pos, apples: [Pos; 2]) -> Result<()> {
        if agents.len() != self.n_agents {
            return Err(Error::ShapeMismatch {
                what: "agent positions",
                expected: self.n_agents,
                got: agents.len(),
            });
        }
        let all = agents.iter().chain(std::iter::once(&monster)).chain(apples.iter());
        if all.clone().any(|p| !p.in_grid()) {
            return Err(Error::Domain("position outside the grid".into()));
        }
        self.agents = agents;
        self.monster = monster;
        self.apples = apples;
        self.step = 0;
        Ok(())
    }

    /// One step of the monster towards its closest agent.
    ///
    /// Among moves that shorten the distance to some closest agent, prefer the
    /// axis with the larger remaining gap; remaining ties follow `Move::ALL` order.
    pub fn monster_step(monster: Pos, agents: &[Pos]) -> Pos {
        let closest = agents.iter().map(|a| monster.manhattan(*a)).min().unwrap_or(0);
        if closest == 0 {
            return monster;
        }
        let targets: Vec<Pos> = agents
            .iter()
            .copied()
            .filter(|a| monster.manhattan(*a) == closest)
            .collect();
        let mut best: Option<(usize, Pos)> = None;
        for mv in Move::ALL {
            let Some(next) = monster.try_apply(mv) else { continue };
            for t in &targets {
                if next.manhattan(*t) < closest {
                    let gap = if mv.is_vertical() {
                        monster.row.abs_diff(t.row)
                    } else {
                        monster.col.abs_diff(t.col)
                    };
                    if best.map_or(true, |(g, _)| gap > g) {
                        best = Some((gap, next));
                    }
                }
            }
        }
        best.map_or(monster, |(_, p)| p)
    }

    fn event_index(&self, name_base: usize, agent: usize) -> usize {
        4 + agent * 3 + name_base
    }
}

impl MarkovGame for MonsterHunt {
    fn kind(&self) -> EnvKind {
        EnvKind::MonsterHunt
    }

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn obs_dim(&self) -> usize {
        2 * self.n_agents + 6
    }

    fn episode_length(&self) -> usize {
        self.episode_length
    }

    fn event_names(&self) -> &[String] {
        &self.events
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = distinct_cells(&mut self.rng, self.n_agents + 3);
        self.agents = cells[..self.n_agents].to_vec();
        self.monster = cells[self.n_agents];
        self.apples = [cells[self.n_agents + 1], cells[self.n_agents + 2]];
        self.step = 0;
    }

    /// `[own, others in index order, monster, apples sorted row-major]`.
    fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        check_agent(agent, self.n_agents)?;
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend(self.agents[agent].as_features());
        for (j, p) in self.agents.iter().enumerate() {
            if j != agent {
                obs.extend(p.as_features());
            }
        }
        obs.extend(self.monster.as_features());
        let mut apples = self.apples;
        apples.sort();
        for a in apples {
            obs.extend(a.as_features());
        }
        Ok(obs)
    }

    fn step(&mut self, actions: &[usize], w: &RewardWeights) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        check_actions(actions, self.n_agents, 4)?;
        w.check_dim(3)?;
        for (pos, &a) in self.agents.iter_mut().zip(actions) {
            *pos = pos.apply(Move::from_index(a)?);
        }
        self.monster = Self::monster_step(self.monster, &self.agents);

        let mut features = vec![vec![0.0; 3]; self.n_agents];
        let mut events = vec![0.0; self.events.len()];

        let on_monster: Vec<usize> = (0..self.n_agents).filter(|&i| self.agents[i] == self.monster).collect();
        let monster_met = !on_monster.is_empty();
        if on_monster.len() >= 2 {
            events[0] += 1.0;
            for &i in &on_monster {
                features[i][COOP] = 1.0;
                events[self.event_index(0, i)] += 1.0;
            }
        } else if let [i] = on_monster[..] {
            events[1] += 1.0;
            features[i][ALONE] = 1.0;
            events[self.event_index(1, i)] += 1.0;
        }
        if monster_met {
            events[3] += 1.0;
        }

        let mut eaten = [false; 2];
        for (k, apple) in self.apples.iter().enumerate() {
            let contenders: Vec<usize> = (0..self.n_agents).filter(|&i| self.agents[i] == *apple).collect();
            let winner = match contenders.len() {
                0 => continue,
                1 => contenders[0],
                n => contenders[self.rng.gen_range(0..n)],
            };
            eaten[k] = true;
            features[winner][APPLE] = 1.0;
            events[2] += 1.0;
            events[self.event_index(2, winner)] += 1.0;
        }

        let mut occupied: Vec<Pos> = self.agents.clone();
        if !monster_met {
            occupied.push(self.monster);
        }
        for k in 0..2 {
            if !eaten[k] {
                occupied.push(self.apples[k]);
            }
        }
        if monster_met {
            self.monster = random_free_cell(&mut self.rng, &occupied);
            occupied.push(self.monster);
        }
        for k in 0..2 {
            if eaten[k] {
                self.apples[k] = random_free_cell(&mut self.rng, &occupied);
                occupied.push(self.apples[k]);
            }
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
        self.step >= self.episode_length
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::Grid {
            step: self.step,
            agents: self.agents.clone(),
            monster: Some(self.monster),
            apples: self.apples.to_vec(),
            lit: None,
            streak: 0,
        }
    }

    fn boxed_clone(&self) -> Box<dyn MarkovGame> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn original() -> RewardWeights {
        EnvKind::MonsterHunt.original_weights()
    }

    fn env_with(agents: Vec<Pos>, monster: Pos, apples: [Pos; 2]) -> MonsterHunt {
        let mut env = MonsterHunt::new(agents.len(), 50).unwrap();
        env.set_positions(agents, monster, apples).unwrap();
        env
    }

    #[test]
    fn observation_layout() {
        let env = env_with(
            vec![Pos::new(0, 0), Pos::new(4, 4)],
            Pos::new(2, 2),
            [Pos::new(3, 3), Pos::new(1, 1)],
        );
        assert_eq!(env.observe(0).unwrap(), vec![0., 0., 4., 4., 2., 2., 1., 1., 3., 3.]);
        assert_eq!(env.observe(1).unwrap()[..4], [4., 4., 0., 0.]);
    }

    #[test]
    fn cooperative_catch_pays_both() {
        // Both agents step next to the monster at (2,2) from opposite sides.
        let mut env = env_with(
            vec![Pos::new(2, 0), Pos::new(2, 4)],
            Pos::new(2, 2),
            [Pos::new(0, 0), Pos::new(4, 4)],
        );
        // Agents reach (2,1) and (2,3): monster equidistant, moves left onto (2,1).
        let r = env.step(&[3, 2], &original()).unwrap();
        assert_eq!(r.rewards, vec![-2.0, 0.0]);
        // Now stage a joint catch: both agents end on the monster cell.
        let mut env = env_with(
            vec![Pos::new(1, 2), Pos::new(3, 2)],
            Pos::new(2, 2),
            [Pos::new(0, 0), Pos::new(4, 4)],
        );
        let r = env.step(&[1, 0], &original()).unwrap();
        assert_eq!(r.features[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(r.rewards, vec![5.0, 5.0]);
        assert_eq!(r.events[0], 1.0);
        assert_ne!(env.monster(), Pos::new(2, 2));
    }

    #[test]
    fn apple_with_custom_weights() {
        let mut env = env_with(
            vec![Pos::new(0, 1), Pos::new(4, 4)],
            Pos::new(4, 0),
            [Pos::new(0, 0), Pos::new(2, 4)],
        );
        let w = RewardWeights::unbounded(vec![0.0, 5.0, 0.0]);
        let r = env.step(&[2, 0], &w).unwrap();
        assert_eq!(r.features[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(r.rewards[0], 5.0);
        assert_eq!(r.rewards[1], 0.0);
        let cells = [env.agents()[0], env.agents()[1], env.monster(), env.apples()[1]];
        assert!(!cells[..2].contains(&env.apples()[0]));
        assert_ne!(env.apples()[0], cells[2]);
        assert_ne!(env.apples()[0], cells[3]);
    }

    #[test]
    fn monster_tie_breaks() {
        // Larger gap axis first.
        assert_eq!(
            MonsterHunt::monster_step(Pos::new(0, 0), &[Pos::new(1, 3)]),
            Pos::new(0, 1)
        );
        // Equal gaps: row move first.
        assert_eq!(
            MonsterHunt::monster_step(Pos::new(2, 2), &[Pos::new(4, 4)]),
            Pos::new(3, 2)
        );
        // Equidistant agents in opposite directions: negative direction first.
        assert_eq!(
            MonsterHunt::monster_step(Pos::new(2, 2), &[Pos::new(2, 0), Pos::new(2, 4)]),
            Pos::new(2, 1)
        );
        assert_eq!(
            MonsterHunt::monster_step(Pos::new(2, 2), &[Pos::new(2, 2)]),
            Pos::new(2, 2)
        );
    }

    #[test]
    fn n_agent_cooperation() {
        let mut env = env_with(
            vec![Pos::new(1, 2), Pos::new(3, 2), Pos::new(0, 0)],
            Pos::new(2, 2),
            [Pos::new(0, 4), Pos::new(4, 4)],
        );
        assert_eq!(env.obs_dim(), 12);
        let r = env.step(&[1, 0, 1], &original()).unwrap();
        assert_eq!(r.rewards, vec![5.0, 5.0, 0.0]);
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = MonsterHunt::new(2, 50).unwrap();
        assert!(matches!(
            env.step(&[0, 7], &original()),
            Err(Error::InvalidAction { action: 7, .. })
        ));
    }
}
