//! Versioned plain-text trajectory files.
//!
//! ```text
//! rpg-trajectory v1
//! env monster-hunt
//! agents 2
//! events coop_hunt single_hunt apple monster_contact ...
//! steps 50
//! step 0
//! state {"Grid":{...}}
//! actions 1 3
//! rewards 0 -2
//! counts 0 1 0 1 ...
//! done 0
//! ...
//! final {"Grid":{...}}
//! ```
//!
//! Snapshots are JSON on a single line; rendering never re-simulates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::render::render;
use crate::envs::{EnvKind, Snapshot};
use crate::error::{Error, Result};
use crate::ppo::RecordedStep;

pub const TRAJECTORY_HEADER: &str = "rpg-trajectory v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub state: Snapshot,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub events: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub env: EnvKind,
    pub n_agents: usize,
    pub event_names: Vec<String>,
    pub steps: Vec<TrajectoryStep>,
    pub final_state: Snapshot,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

impl Trajectory {
    pub fn from_recording(
        env: EnvKind,
        n_agents: usize,
        event_names: &[String],
        rec: &[RecordedStep],
        final_state: Snapshot,
    ) -> Self {
        Self {
            env,
            n_agents,
            event_names: event_names.to_vec(),
            steps: rec
                .iter()
                .map(|r| TrajectoryStep {
                    state: r.before.clone(),
                    actions: r.actions.clone(),
                    rewards: r.result.rewards.clone(),
                    events: r.result.events.clone(),
                    done: r.result.done,
                })
                .collect(),
            final_state,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Event totals over the episode.
    pub fn event_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.event_names.len()];
        for s in &self.steps {
            for (a, e) in t.iter_mut().zip(&s.events) {
                *a += e;
            }
        }
        t
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{TRAJECTORY_HEADER}");
        let _ = writeln!(out, "env {}", self.env);
        let _ = writeln!(out, "agents {}", self.n_agents);
        let _ = writeln!(out, "events {}", self.event_names.join(" "));
        let _ = writeln!(out, "steps {}", self.steps.len());
        for (t, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "step {t}");
            let _ = writeln!(out, "state {}", serde_json::to_string(&s.state)?);
            let _ = writeln!(out, "actions {}", join(&s.actions));
            let _ = writeln!(out, "rewards {}", join(&s.rewards));
            let _ = writeln!(out, "counts {}", join(&s.events));
            let _ = writeln!(out, "done {}", u8::from(s.done));
        }
        let _ = writeln!(out, "final {}", serde_json::to_string(&self.final_state)?);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines().enumerate();
        let mut field = |key: &str| -> Result<String> {
            let (no, line) = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' ').or(r.is_empty().then_some("")))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("line {}: expected `{key}`", no + 1)))
        };
        let header = field("rpg-trajectory")?;
        if header != "v1" {
            return Err(bad(format!("unsupported version `{header}`")));
        }
        let env: EnvKind = field("env")?.parse()?;
        let n_agents: usize = field("agents")?.parse().map_err(|e| bad(format!("agents: {e}")))?;
        let event_names: Vec<String> = field("events")?.split_whitespace().map(String::from).collect();
        let n: usize = field("steps")?.parse().map_err(|e| bad(format!("steps: {e}")))?;
        let nums = |s: String, what: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| bad(format!("{what}: {e}"))))
                .collect()
        };
        let mut steps = Vec::with_capacity(n);
        for t in 0..n {
            let idx = field("step")?;
            if idx != t.to_string() {
                return Err(bad(format!("expected step {t}, found {idx}")));
            }
            let state: Snapshot = serde_json::from_str(&field("state")?)?;
            let actions = field("actions")?
                .split_whitespace()
                .map(|x| x.parse::<usize>().map_err(|e| bad(format!("actions: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let rewards = nums(field("rewards")?, "rewards")?;
            let events = nums(field("counts")?, "counts")?;
            let done = field("done")? == "1";
            if actions.len() != n_agents || rewards.len() != n_agents || events.len() != event_names.len() {
                return Err(bad(format!("step {t}: wrong number of entries")));
            }
            steps.push(TrajectoryStep {
                state,
                actions,
                rewards,
                events,
                done,
            });
        }
        let final_state: Snapshot = serde_json::from_str(&field("final")?)?;
        Ok(Self {
            env,
            n_agents,
            event_names,
            steps,
            final_state,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingTrajectory(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Text rendering of every recorded state followed by the final one.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (t, s) in self.steps.iter().enumerate() {
            out.push_str(&render(&s.state));
            let _ = writeln!(
                out,
                "t={t} actions [{}] rewards [{}]",
                join(&s.actions),
                join(&s.rewards)
            );
            out.push('\n');
        }
        out.push_str(&render(&self.final_state));
        out
    }
}

/// Path of episode `k`'s trajectory inside a run directory.
pub fn trajectory_path(run_dir: &Path, episode: usize) -> PathBuf {
    run_dir.join("trajectories").join(format!("episode_{episode}.txt"))
}

/// Load a recorded episode and render it. `target` is a trajectory file or
/// a run directory holding `trajectories/`.
pub fn replay(target: &Path, episode: usize) -> Result<(Trajectory, String)> {
    let path = if target.is_dir() {
        trajectory_path(target, episode)
    } else {
        target.to_path_buf()
    };
    let traj = Trajectory::load(&path)?;
    let text = traj.render();
    Ok((traj, text))
}
