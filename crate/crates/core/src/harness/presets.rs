//! Reproduction presets. Step budgets are the full-size ones; `scale`
//! multiplies them (0.1 gives the desk-sized runs).

use std::path::Path;

use super::{AdaptConfig, ExperimentConfig, FinetuneConfig, MatrixConfig};
use crate::adapt::ScriptedKind;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::rpg_pipeline::{EvaluationSpec, WeightSpaceSpec};

pub const DEFAULT_SCALE: f64 = 0.1;

pub const PRESETS: [&str; 11] = [
    "fig2",
    "matrix-ppo",
    "monster-hunt",
    "monster-hunt-pg",
    "monster-hunt-shared",
    "monster-hunt-pbt",
    "escalation",
    "escalation-pg",
    "iterated",
    "iterated-pg",
    "iterated-adapt",
];

pub const MONSTER_HUNT_WEIGHTS: [[f64; 3]; 4] = [[5.0, 1.0, -5.0], [4.0, 2.0, -2.0], [0.0, 5.0, 0.0], [5.0, 0.0, 5.0]];
pub const ESCALATION_WEIGHTS: [[f64; 2]; 2] = [[1.0, 0.0], [1.0, -0.9]];
pub const ITERATED_WEIGHTS: [[f64; 4]; 4] = [
    [4.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 4.0],
    [0.0, 4.0, 4.0, 0.0],
    [4.0, 1.0, 4.0, 0.0],
];

/// Batch settings for gridworld runs on a small machine.
pub fn grid_ppo() -> PpoConfig {
    PpoConfig {
        parallel_threads: 16,
        minibatch_chunks: 40,
        ..PpoConfig::default()
    }
}

/// One-shot matrix game: every step is an episode.
pub fn matrix_ppo() -> PpoConfig {
    PpoConfig {
        parallel_threads: 32,
        episode_length: 1,
        chunk_length: 1,
        minibatch_chunks: 32,
        random_initial_policy: true,
        ..PpoConfig::default()
    }
}

/// Ten-round iterated game: one chunk per episode.
pub fn iterated_ppo() -> PpoConfig {
    PpoConfig {
        parallel_threads: 32,
        episode_length: 10,
        chunk_length: 10,
        minibatch_chunks: 32,
        ..PpoConfig::default()
    }
}

fn explicit<const D: usize>(list: &[[f64; D]]) -> WeightSpaceSpec {
    WeightSpaceSpec::explicit(list.iter().map(|w| w.to_vec()).collect(), 5.0)
}

fn explicit_unbounded<const D: usize>(list: &[[f64; D]], c_max: f64) -> WeightSpaceSpec {
    WeightSpaceSpec::explicit(list.iter().map(|w| w.to_vec()).collect(), c_max)
}

/// Build a named preset writing under `out`.
pub fn preset(name: &str, scale: f64, out: &Path) -> Result<ExperimentConfig> {
    let dir = out.to_path_buf();
    let mut c = match name {
        "fig2" => {
            let mut c = ExperimentConfig::new(name, "verify_matrix", EnvKind::MatrixStagHunt, 0, dir);
            c.matrix = MatrixConfig {
                population_sizes: vec![1, 2, 3, 5, 8],
                ..MatrixConfig::default()
            };
            c
        }
        "matrix-ppo" => {
            let mut c = ExperimentConfig::new(name, "pg", EnvKind::MatrixStagHunt, 200_000, dir);
            c.ppo = matrix_ppo();
            c.seeds = (0..10).collect();
            c.original_weights = Some(vec![4.0, 3.0, -5.0, 1.0]);
            c.evaluation = EvaluationSpec {
                beta: 1.0,
                episodes: 100,
            };
            c.record_episodes = 1;
            c
        }
        "monster-hunt" | "monster-hunt-pg" | "monster-hunt-shared" | "monster-hunt-pbt" => {
            let algo = match name {
                "monster-hunt" => "rpg",
                "monster-hunt-pg" => "pg",
                "monster-hunt-shared" => "pg_shared",
                _ => "pbt",
            };
            let mut c = ExperimentConfig::new(name, algo, EnvKind::MonsterHunt, 6_000_000, dir);
            c.ppo = grid_ppo();
            c.seeds = vec![0, 1, 2];
            if algo == "rpg" {
                c.weights = Some(explicit(&MONSTER_HUNT_WEIGHTS));
                c.finetune = FinetuneConfig {
                    steps: 10_000_000,
                    ..FinetuneConfig::default()
                };
            } else if algo == "pbt" {
                c.weights = Some(WeightSpaceSpec::explicit(vec![vec![5.0, 2.0, -2.0]; 4], 5.0));
            } else {
                // Single runs get the budget of one population lineage.
                c.total_steps = 16_000_000;
            }
            c
        }
        "escalation" | "escalation-pg" => {
            let algo = if name == "escalation" { "rr" } else { "pg" };
            let mut c = ExperimentConfig::new(name, algo, EnvKind::Escalation, 4_000_000, dir);
            c.ppo = grid_ppo();
            c.seeds = vec![0, 1, 2];
            if algo == "rr" {
                c.weights = Some(explicit_unbounded(&ESCALATION_WEIGHTS, 5.0));
            }
            c
        }
        "iterated" | "iterated-pg" => {
            let algo = if name == "iterated" { "rr" } else { "pg" };
            let mut c = ExperimentConfig::new(name, algo, EnvKind::IteratedStagHunt, 1_000_000, dir);
            c.ppo = iterated_ppo();
            c.seeds = vec![0, 1, 2];
            if algo == "rr" {
                c.weights = Some(explicit(&ITERATED_WEIGHTS));
            }
            c
        }
        "iterated-adapt" => {
            let mut c = ExperimentConfig::new(name, "adapt", EnvKind::IteratedStagHunt, 3_000_000, dir);
            c.ppo = PpoConfig {
                recurrent: Some(crate::nn::HIDDEN_UNITS),
                ..iterated_ppo()
            };
            c.weights = Some(explicit(&ITERATED_WEIGHTS));
            c.adapt = AdaptConfig {
                scripted: ScriptedKind::ALL.to_vec(),
                opponent_steps: 1_000_000,
                ..AdaptConfig::default()
            };
            c
        }
        _ => {
            return Err(Error::Unregistered {
                kind: "preset",
                name: name.to_string(),
            })
        }
    };
    c.scale = scale;
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_and_roundtrips() {
        for name in PRESETS {
            let c = preset(name, DEFAULT_SCALE, Path::new("/tmp/x")).unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c, "{name}");
        }
        assert!(preset("nope", 0.1, Path::new("/tmp")).is_err());
    }
}
