//! Reward-randomized policy gradient workbench.
//!
//! * [`matrix_core`]: exact gradient dynamics on 2×2 stag hunts and Monte
//!   Carlo checks of the convergence bounds.
//! * [`envs`]: trust-dilemma games with rewards `φᵀw`.
//! * [`nn`], [`ppo`]: networks with manual backprop and a PPO trainer.
//! * [`rpg_pipeline`]: reward randomization, evaluation, selection, critic warm start
//!   and fine-tuning.
//! * [`adapt`]: adaptive policies trained against frozen opponent mixtures.
//! * [`harness`]: configs, algorithm registry, run directories, replay.

pub mod adapt;
pub mod envs;
pub mod error;
pub mod harness;
pub mod matrix_core;
pub mod nn;
pub mod ppo;
pub mod rpg_pipeline;
pub mod stats;

pub use error::{Error, Result};
