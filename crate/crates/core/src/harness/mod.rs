//! Experiment orchestration: TOML configs, a name-keyed algorithm registry,
//! run directories and trajectory replay.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/config.toml                 exact config of the run
//! <out>/manifest.json               one record per seed
//! <out>/seed_<s>/metrics.csv        per-update metrics (single runs)
//! <out>/seed_<s>/agent<i>.json      final checkpoints
//! <out>/seed_<s>/member_<k>/        population members (metrics + checkpoints)
//! <out>/seed_<s>/population.json    member weights, steps and scores
//! <out>/seed_<s>/final/             fine-tuned checkpoints (rpg)
//! <out>/seed_<s>/evaluation.json    evaluation on the original reward
//! <out>/seed_<s>/trajectories/      recorded evaluation episodes
//! ```

mod algorithms;
pub mod presets;
pub mod trajectory;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::ScriptedKind;
use crate::envs::{make_env, EnvKind, EnvParams, MarkovGame, RewardWeights};
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::rpg_pipeline::{EvaluationSpec, WeightSpaceSpec};

pub use algorithms::{
    default_count_alpha, evaluate_checkpoints, finetune_population, record_episodes, select_population, Adapt,
    MemberRecord, PbtBaseline, PolicyGradient, PopulationManifest, RewardRandomization, Rpg, VerifyMatrix,
};
pub use trajectory::{replay, trajectory_path, Trajectory, TrajectoryStep, TRAJECTORY_HEADER};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Fine-tuning phase lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: u64,
    /// Defaults to 5% of `steps`.
    pub warm_steps: Option<u64>,
    pub skip_warm_start: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            warm_steps: None,
            skip_warm_start: false,
        }
    }
}

/// Adaptive training inputs. Without an opponents manifest the opponents
/// come from a reward-randomized population trained first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub opponents: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
    pub scripted: Vec<ScriptedKind>,
    /// Game index of the adaptive agent.
    pub role: usize,
    pub episodes: usize,
    /// Steps per opponent-population member when opponents are trained here.
    pub opponent_steps: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            opponents: None,
            holdout: None,
            scripted: Vec::new(),
            role: 0,
            episodes: 100,
            opponent_steps: 0,
        }
    }
}

/// Payoff and Monte Carlo settings of the matrix-game bound checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub c_values: Vec<f64>,
    pub trials: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub tol: f64,
    /// Population sizes for the reward-randomization bound; empty skips it.
    pub population_sizes: Vec<usize>,
    pub population_trials: usize,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            a: 4.0,
            b: 3.0,
            d: 1.0,
            c_values: vec![-5.0, -20.0, -50.0, -100.0],
            trials: 10_000,
            learning_rate: 0.01,
            max_steps: 100_000,
            tol: 1e-3,
            population_sizes: Vec::new(),
            population_trials: 2_000,
        }
    }
}

/// One experiment: an algorithm run for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub algorithm: String,
    pub env: EnvKind,
    pub seeds: Vec<u64>,
    /// Steps of one training run (per member for populations), before scaling.
    pub total_steps: u64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    /// Replaces the game's original reward, e.g. a different `c` for the
    /// matrix game.
    #[serde(default)]
    pub original_weights: Option<Vec<f64>>,
    /// Reward a single run trains on; defaults to the original reward.
    #[serde(default)]
    pub train_weights: Option<Vec<f64>>,
    /// Episodes of the final policy written as trajectory files.
    #[serde(default = "default_recorded")]
    pub record_episodes: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub env_params: EnvParams,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub weights: Option<WeightSpaceSpec>,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub matrix: MatrixConfig,
}

fn unit_scale() -> f64 {
    1.0
}

fn default_recorded() -> usize {
    3
}

impl ExperimentConfig {
    pub fn new(name: &str, algorithm: &str, env: EnvKind, total_steps: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: name.to_string(),
            algorithm: algorithm.to_string(),
            env,
            seeds: vec![0],
            total_steps,
            scale: 1.0,
            original_weights: None,
            train_weights: None,
            record_episodes: default_recorded(),
            out_dir: out_dir.into(),
            env_params: EnvParams::default(),
            ppo: PpoConfig::default(),
            evaluation: EvaluationSpec::default(),
            weights: None,
            finetune: FinetuneConfig::default(),
            adapt: AdaptConfig::default(),
            matrix: MatrixConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config("scale must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.ppo.validate()?;
        self.evaluation.validate()?;
        let dim = self.env.feature_dim();
        for w in [&self.original_weights, &self.train_weights].into_iter().flatten() {
            RewardWeights::unbounded(w.clone()).check_dim(dim)?;
        }
        Ok(())
    }

    /// A step budget after applying `scale`; nonzero budgets stay nonzero.
    pub fn scaled(&self, steps: u64) -> u64 {
        if steps == 0 {
            return 0;
        }
        ((steps as f64 * self.scale).round() as u64).max(1)
    }

    pub fn original(&self) -> RewardWeights {
        match &self.original_weights {
            Some(w) => RewardWeights::unbounded(w.clone()),
            None => self.env.original_weights(),
        }
    }

    pub fn make_env(&self) -> Result<Box<dyn MarkovGame>> {
        make_env(self.env, &self.env_params)
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    /// Evaluation score on the original reward, when the algorithm has one.
    pub score: Option<f64>,
    pub env_steps: u64,
    pub dir: PathBuf,
    /// Algorithm-specific numbers, e.g. event means or bound checks.
    pub details: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn new(algorithm: &str, seed: u64, dir: &Path) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            seed,
            ok: true,
            error: None,
            score: None,
            env_steps: 0,
            dir: dir.to_path_buf(),
            details: BTreeMap::new(),
        }
    }
}

/// Everything an algorithm sees for one seed.
pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub dir: PathBuf,
    pub env: Box<dyn MarkovGame>,
    pub original: RewardWeights,
}

/// A training or analysis procedure runnable from a config.
pub trait Algorithm: Send + Sync {
    fn name(&self) -> &str;
    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord>;
}

/// Name → algorithm table.
#[derive(Clone)]
pub struct AlgorithmRegistry {
    entries: BTreeMap<String, Arc<dyn Algorithm>>,
}

impl AlgorithmRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(PolicyGradient::plain()));
        reg.register(Arc::new(PolicyGradient::shared()));
        reg.register(Arc::new(PolicyGradient::count()));
        reg.register(Arc::new(PbtBaseline));
        reg.register(Arc::new(RewardRandomization));
        reg.register(Arc::new(Rpg));
        reg.register(Arc::new(Adapt));
        reg.register(Arc::new(VerifyMatrix));
        reg
    }

    pub fn register(&mut self, algo: Arc<dyn Algorithm>) {
        self.entries.insert(algo.name().to_string(), algo);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Algorithm>> {
        self.entries.get(name).cloned().ok_or_else(|| Error::Unregistered {
            kind: "algorithm",
            name: name.to_string(),
        })
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub out_dir: PathBuf,
    pub runs: Vec<RunRecord>,
}

impl ExperimentSummary {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.ok)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.score).collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Run the configured algorithm once per seed with the builtin registry.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_with(&AlgorithmRegistry::builtin(), config)
}

/// Seeds run one after another; a failing seed is recorded and the others
/// still run. The config is written before anything else.
pub fn run_experiment_with(registry: &AlgorithmRegistry, config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let algo = registry.get(&config.algorithm)?;
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(config.out_dir.join("config.toml"), config.to_toml()?)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let dir = config.out_dir.join(format!("seed_{seed}"));
        let outcome = config.make_env().and_then(|env| {
            std::fs::create_dir_all(&dir)?;
            algo.run(&RunContext {
                config,
                seed,
                dir: dir.clone(),
                env,
                original: config.original(),
            })
        });
        runs.push(outcome.unwrap_or_else(|e| RunRecord {
            ok: false,
            error: Some(e.to_string()),
            ..RunRecord::new(algo.name(), seed, &dir)
        }));
    }
    let summary = ExperimentSummary {
        name: config.name.clone(),
        out_dir: config.out_dir.clone(),
        runs,
    };
    write_json(&config.out_dir.join("manifest.json"), &summary)?;
    Ok(summary)
}
