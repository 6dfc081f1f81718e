//! Reward-randomized policy gradient: train a population on perturbed
//! rewards, score every member on the original game, keep the best, warm up
//! its critic and fine-tune.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{MarkovGame, RewardWeights};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::ppo::{
    evaluate, self_play_slots, worker_count, ActorCritic, MetricsRow, MetricsWriter, PpoConfig, RewardMix, Trainer,
    TrainerSpec, UpdateMode, UpdateReport,
};
use crate::stats::{EpisodeStats, StatsSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    ExplicitList,
    UniformBox,
}

/// The search space of reward weights and the population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpaceSpec {
    pub mode: WeightMode,
    #[serde(default)]
    pub weights: Vec<Vec<f64>>,
    /// Per-dimension `[lo, hi]`, intersected with `[-c_max, c_max]`.
    #[serde(default)]
    pub bounds: Vec<[f64; 2]>,
    pub c_max: f64,
    pub population_size: usize,
}

impl WeightSpaceSpec {
    pub fn explicit(weights: Vec<Vec<f64>>, c_max: f64) -> Self {
        Self {
            mode: WeightMode::ExplicitList,
            population_size: weights.len(),
            weights,
            bounds: Vec::new(),
            c_max,
        }
    }

    /// Uniform over `[-c_max, c_max]^dim`.
    pub fn uniform(dim: usize, c_max: f64, population_size: usize) -> Self {
        Self {
            mode: WeightMode::UniformBox,
            weights: Vec::new(),
            bounds: vec![[-c_max, c_max]; dim],
            c_max,
            population_size,
        }
    }
}

/// Draw the population's reward weights. Explicit lists come back verbatim.
pub fn sample_weights(spec: &WeightSpaceSpec, seed: u64) -> Result<Vec<RewardWeights>> {
    match spec.mode {
        WeightMode::ExplicitList => {
            if spec.weights.len() != spec.population_size {
                return Err(Error::ListLength {
                    expected: spec.population_size,
                    got: spec.weights.len(),
                });
            }
            spec.weights
                .iter()
                .map(|w| RewardWeights::new(w.clone(), spec.c_max))
                .collect()
        }
        WeightMode::UniformBox => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bounds: Vec<(f64, f64)> = spec
                .bounds
                .iter()
                .map(|&[lo, hi]| (lo.max(-spec.c_max), hi.min(spec.c_max)))
                .collect();
            if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::Config("empty weight box".into()));
            }
            (0..spec.population_size)
                .map(|_| {
                    let w = bounds
                        .iter()
                        .map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
                        .collect();
                    RewardWeights::new(w, spec.c_max)
                })
                .collect()
        }
    }
}

/// How members are scored: `E = β U₁ + (1 − β) U₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    pub beta: f64,
    pub episodes: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            beta: 1.0,
            episodes: 100,
        }
    }
}

impl EvaluationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Domain(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.episodes == 0 {
            return Err(Error::Config("evaluation needs at least one episode".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    pub summary: StatsSummary,
}

/// Score a pair of learners (agent 0 and agent 1, or one shared learner) under `w` with stochastic
/// policies.
pub fn evaluate_pair(
    learners: &[ActorCritic],
    env: &dyn MarkovGame,
    w: &RewardWeights,
    spec: &EvaluationSpec,
    seed: u64,
) -> Result<Evaluation> {
    spec.validate()?;
    w.check_dim(env.feature_dim())?;
    if learners.len() != env.n_agents() && learners.len() != 1 {
        return Err(Error::ShapeMismatch {
            what: "learners",
            expected: env.n_agents(),
            got: learners.len(),
        });
    }
    for ac in learners {
        if ac.policy.net.spec().input != env.obs_dim() {
            return Err(Error::Mismatch(format!(
                "policy expects {} inputs, {} observes {}",
                ac.policy.net.spec().input,
                env.kind(),
                env.obs_dim()
            )));
        }
    }
    let slots = self_play_slots(env.n_agents(), learners.len() == 1);
    let episodes: Vec<EpisodeStats> = evaluate(env, &slots, learners, w, spec.episodes, seed)?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    let summary = StatsSummary::from_episodes(env.event_names(), env.n_agents(), &episodes);
    let u2 = summary.mean_returns.get(1).copied().unwrap_or(0.0);
    let score = spec.beta * summary.mean_returns[0] + (1.0 - spec.beta) * u2;
    Ok(Evaluation { score, summary })
}

/// Runs a trainer to completion, writing one metrics row per update.
/// Returns the last update's report.
pub fn run_phase(
    trainer: &mut Trainer,
    mode: UpdateMode,
    metrics: Option<&Path>,
    step_offset: u64,
) -> Result<Option<UpdateReport>> {
    let n_agents = trainer.env_proto().n_agents();
    let names = trainer.env_proto().event_names().to_vec();
    let mut writer = metrics
        .map(|p| MetricsWriter::create(p, n_agents, &names))
        .transpose()?;
    let mut last = None;
    while !trainer.is_finished() {
        let report = trainer.step(mode)?;
        if let Some(w) = writer.as_mut() {
            w.write(&MetricsRow::from_report(&report, n_agents, names.len(), step_offset))?;
        }
        last = Some(report);
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    Ok(last)
}

/// Save each learner as `agent{i}.json` under `dir`.
pub fn save_learners(dir: &Path, learners: &[ActorCritic], meta: &BTreeMap<String, String>) -> Result<Vec<PathBuf>> {
    learners
        .iter()
        .enumerate()
        .map(|(i, ac)| {
            let path = dir.join(format!("agent{i}.json"));
            ac.to_checkpoint(meta.clone()).save(&path)?;
            Ok(path)
        })
        .collect()
}

pub fn load_learners(paths: &[PathBuf], adam_epsilon: f64) -> Result<Vec<ActorCritic>> {
    paths
        .iter()
        .map(|p| ActorCritic::from_checkpoint(&Checkpoint::load(p)?, adam_epsilon))
        .collect()
}

/// Settings shared by every member of a population.
#[derive(Debug, Clone)]
pub struct PopulationConfig {
    pub cfg: PpoConfig,
    pub member_steps: u64,
    /// Member `i` trains with seed `seed + i`.
    pub seed: u64,
    pub mix: RewardMix,
    /// Per-member subdirectories are written here when set.
    pub out_dir: Option<PathBuf>,
}

/// One trained member of a population.
#[derive(Debug, Clone)]
pub struct PopulationMember {
    pub index: usize,
    pub w: RewardWeights,
    pub seed: u64,
    pub learners: Vec<ActorCritic>,
    pub env_steps: u64,
    /// Set only by [`score_population`] on the original reward.
    pub score: Option<f64>,
    pub evaluation: Option<StatsSummary>,
    /// Event means over the final training rollout.
    pub final_training: Option<StatsSummary>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// Hash of everything the member trained on. The original reward is not
    /// part of it.
    pub config_digest: String,
}

/// Digest of a member's training inputs.
pub fn member_digest(w: &RewardWeights, cfg: &PpoConfig, mix: RewardMix, steps: u64, seed: u64) -> String {
    let mut h = Sha256::new();
    for x in w.as_slice() {
        h.update(x.to_le_bytes());
    }
    h.update(serde_json::to_vec(cfg).unwrap_or_default());
    h.update(mix.other_weight.to_le_bytes());
    h.update(steps.to_le_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn train_member(
    index: usize,
    w: &RewardWeights,
    env: &dyn MarkovGame,
    pc: &PopulationConfig,
    step_offset: u64,
) -> Result<PopulationMember> {
    let seed = pc.seed.wrapping_add(index as u64);
    let n = env.n_agents();
    let mut trainer = Trainer::new(TrainerSpec {
        env: env.boxed_clone(),
        slots: self_play_slots(n, pc.cfg.shared_params),
        train_w: w.clone(),
        mix: pc.mix,
        cfg: pc.cfg.clone(),
        total_env_steps: pc.member_steps,
        seed,
        identity_tag: false,
    })?;
    let dir = pc.out_dir.as_ref().map(|d| d.join(format!("member_{index}")));
    let metrics_path = dir.as_ref().map(|d| d.join("metrics.csv"));
    let last = run_phase(&mut trainer, UpdateMode::Full, metrics_path.as_deref(), step_offset)?;
    let config_digest = member_digest(w, &pc.cfg, pc.mix, pc.member_steps, seed);
    let learners = std::mem::take(&mut trainer.learners);
    let checkpoints = match &dir {
        Some(d) => {
            let meta = BTreeMap::from([
                ("w".to_string(), w.to_string()),
                ("seed".to_string(), seed.to_string()),
                ("config_digest".to_string(), config_digest.clone()),
            ]);
            save_learners(d, &learners, &meta)?
        }
        None => Vec::new(),
    };
    Ok(PopulationMember {
        index,
        w: w.clone(),
        seed,
        learners,
        env_steps: trainer.env_steps(),
        score: None,
        evaluation: None,
        final_training: last.map(|r| StatsSummary::from_episodes(env.event_names(), n, &r.episodes)),
        checkpoints,
        metrics_path,
        config_digest,
    })
}

/// Train one independent PPO run per weight vector on the induced game.
/// A failing member leaves its siblings untouched.
pub fn train_population(
    weights: &[RewardWeights],
    env: &dyn MarkovGame,
    pc: &PopulationConfig,
) -> Vec<Result<PopulationMember>> {
    let offsets: Vec<u64> = (0..weights.len()).map(|i| i as u64 * pc.member_steps).collect();
    let run = |i: usize| train_member(i, &weights[i], env, pc, offsets[i]);
    let threads = worker_count();
    if threads > 1 && weights.len() > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| (0..weights.len()).into_par_iter().map(run).collect()),
            Err(e) => vec![Err(Error::Config(e.to_string()))],
        }
    } else {
        (0..weights.len()).map(run).collect()
    }
}

/// Total environment steps spent by a population.
pub fn population_steps(members: &[PopulationMember]) -> u64 {
    members.iter().map(|m| m.env_steps).sum()
}

/// Evaluate every member on the original reward and store its score.
pub fn score_population(
    members: &mut [PopulationMember],
    env: &dyn MarkovGame,
    original: &RewardWeights,
    spec: &EvaluationSpec,
    seed: u64,
) -> Result<()> {
    for m in members.iter_mut() {
        let ev = evaluate_pair(&m.learners, env, original, spec, seed)?;
        m.score = Some(ev.score);
        m.evaluation = Some(ev.summary);
    }
    Ok(())
}

/// Position of the highest score; ties go to the lowest member index.
/// Entries are `(member index, score)`; missing and NaN scores are skipped.
pub fn argmax_score(scores: impl IntoIterator<Item = (usize, Option<f64>)>) -> Result<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    for (pos, (index, score)) in scores.into_iter().enumerate() {
        let Some(s) = score.filter(|s| !s.is_nan()) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((_, bs, bi)) => s > bs || (s == bs && index < bi),
        };
        if better {
            best = Some((pos, s, index));
        }
    }
    best.map(|(pos, _, _)| pos).ok_or(Error::EmptyPopulation)
}

/// Position in `members` of the best-scoring member.
pub fn select_best(members: &[PopulationMember]) -> Result<usize> {
    argmax_score(members.iter().map(|m| (m.index, m.score)))
}

/// One training phase on the original game.
#[derive(Clone, Copy)]
pub struct PhaseSpec<'a> {
    pub env: &'a dyn MarkovGame,
    pub w: &'a RewardWeights,
    pub cfg: &'a PpoConfig,
    pub steps: u64,
    pub seed: u64,
    pub metrics: Option<&'a Path>,
    pub step_offset: u64,
}

fn continue_training(learners: Vec<ActorCritic>, phase: &PhaseSpec<'_>, mode: UpdateMode) -> Result<Vec<ActorCritic>> {
    if phase.steps == 0 {
        return Ok(learners);
    }
    let n = phase.env.n_agents();
    let mut trainer = Trainer::with_learners(
        TrainerSpec {
            env: phase.env.boxed_clone(),
            slots: self_play_slots(n, phase.cfg.shared_params),
            train_w: phase.w.clone(),
            mix: RewardMix::SELFISH,
            cfg: phase.cfg.clone(),
            total_env_steps: phase.steps,
            seed: phase.seed,
            identity_tag: false,
        },
        learners,
    )?;
    run_phase(&mut trainer, mode, phase.metrics, phase.step_offset)?;
    Ok(trainer.learners)
}

/// Train only the critics under the original reward; policies stay
/// bit-identical.
pub fn warm_start_critic(learners: Vec<ActorCritic>, phase: &PhaseSpec<'_>) -> Result<Vec<ActorCritic>> {
    continue_training(learners, phase, UpdateMode::ValueOnly)
}

/// Continue full PPO on the original reward. A zero budget returns the
/// learners untouched.
pub fn fine_tune(learners: Vec<ActorCritic>, phase: &PhaseSpec<'_>) -> Result<Vec<ActorCritic>> {
    continue_training(learners, phase, UpdateMode::Full)
}

/// End-to-end settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpgSpec {
    pub weights: WeightSpaceSpec,
    pub member_steps: u64,
    pub finetune_steps: u64,
    /// Critic warm-start length; defaults to 5% of the fine-tune budget.
    #[serde(default)]
    pub warm_steps: Option<u64>,
    #[serde(default)]
    pub skip_warm_start: bool,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
}

impl RpgSpec {
    pub fn warm_steps(&self) -> u64 {
        if self.skip_warm_start {
            return 0;
        }
        self.warm_steps.unwrap_or(self.finetune_steps / 20)
    }
}

#[derive(Debug, Clone)]
pub struct RpgOutcome {
    /// Members that trained successfully, scored on the original reward.
    pub members: Vec<PopulationMember>,
    /// Error text of members that failed.
    pub failures: Vec<(usize, String)>,
    /// Position in `members` of the selected one.
    pub selected: usize,
    pub learners: Vec<ActorCritic>,
    pub final_evaluation: Evaluation,
    /// Population plus warm start plus fine-tune.
    pub total_env_steps: u64,
}

/// Sample, train, score, select, warm-start, fine-tune, score again.
pub fn run_rpg(
    env: &dyn MarkovGame,
    original: &RewardWeights,
    cfg: &PpoConfig,
    spec: &RpgSpec,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RpgOutcome> {
    let weights = sample_weights(&spec.weights, seed)?;
    let pc = PopulationConfig {
        cfg: cfg.clone(),
        member_steps: spec.member_steps,
        seed,
        mix: RewardMix::SELFISH,
        out_dir: out_dir.map(Path::to_path_buf),
    };
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in train_population(&weights, env, &pc).into_iter().enumerate() {
        match r {
            Ok(m) => members.push(m),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let eval_seed = seed ^ 0x5eed_e7a1;
    score_population(&mut members, env, original, &spec.evaluation, eval_seed)?;
    let selected = select_best(&members)?;
    let pop_steps = population_steps(&members);
    let warm = spec.warm_steps();
    let metrics = |name: &str| out_dir.map(|d| d.join(name));
    let warm_metrics = metrics("warm_start.csv");
    let learners = warm_start_critic(
        members[selected].learners.clone(),
        &PhaseSpec {
            env,
            w: original,
            cfg,
            steps: warm,
            seed: seed.wrapping_add(10_000),
            metrics: warm_metrics.as_deref(),
            step_offset: pop_steps,
        },
    )?;
    let ft_metrics = metrics("finetune.csv");
    let learners = fine_tune(
        learners,
        &PhaseSpec {
            env,
            w: original,
            cfg,
            steps: spec.finetune_steps,
            seed: seed.wrapping_add(20_000),
            metrics: ft_metrics.as_deref(),
            step_offset: pop_steps + warm,
        },
    )?;
    let final_evaluation = evaluate_pair(&learners, env, original, &spec.evaluation, eval_seed)?;
    Ok(RpgOutcome {
        members,
        failures,
        selected,
        learners,
        final_evaluation,
        total_env_steps: pop_steps + warm + spec.finetune_steps,
    })
}
