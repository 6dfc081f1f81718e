use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::{trajectory_path, Trajectory};
use super::{write_json, Algorithm, RunContext, RunRecord};
use crate::adapt::{
    evaluate_adaptive, make_scripted, train_adaptive, write_stats_csv, AdaptSpec, OpponentEntry, OpponentManifest,
    MANIFEST_SCHEMA_VERSION,
};
use crate::envs::{EnvKind, MarkovGame, RewardWeights};
use crate::error::{Error, Result};
use crate::matrix_core::{verify_theorem1, verify_theorem2, BoundReport, DynamicsConfig, PayoffMatrix};
use crate::ppo::{
    play_episode, self_play_slots, ActorCritic, Opponent, PolicyOpponent, PpoConfig, RewardMix, Slot, Trainer,
    TrainerSpec, UpdateMode,
};
use crate::rpg_pipeline::{
    argmax_score, evaluate_pair, fine_tune, load_learners, population_steps, run_phase, run_rpg, sample_weights,
    save_learners, score_population, select_best, train_population, warm_start_critic, Evaluation, EvaluationSpec,
    PhaseSpec, PopulationConfig, PopulationMember, RpgSpec, WeightSpaceSpec,
};
use crate::stats::StatsSummary;

/// Play `n` stochastic episodes under `w` and write them as trajectory files.
/// Episode `k` uses the same stream as evaluation episode `k`.
pub fn record_episodes(
    env: &dyn MarkovGame,
    slots: &[Slot],
    learners: &[ActorCritic],
    w: &RewardWeights,
    n: usize,
    seed: u64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut e = env.boxed_clone();
            e.reset(rng.next_u64());
            let mut rec = Vec::new();
            play_episode(e.as_mut(), slots, learners, w, &mut rng, Some(&mut rec))?;
            let traj = Trajectory::from_recording(env.kind(), env.n_agents(), env.event_names(), &rec, e.snapshot());
            let path = trajectory_path(dir, k);
            traj.save(&path)?;
            Ok(path)
        })
        .collect()
}

fn event_details(summary: &StatsSummary, prefix: &str, out: &mut BTreeMap<String, f64>) {
    for (name, v) in summary.event_names.iter().zip(&summary.mean_events) {
        out.insert(format!("{prefix}{name}"), *v);
    }
    for (i, r) in summary.mean_returns.iter().enumerate() {
        out.insert(format!("{prefix}return_agent{i}"), *r);
    }
}

fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_e7a1
}

/// Evaluate, save and record a finished set of self-play learners.
fn finish_self_play(
    cx: &RunContext<'_>,
    learners: &[ActorCritic],
    dir: &Path,
    record: &mut RunRecord,
) -> Result<Evaluation> {
    let env = cx.env.as_ref();
    let ev = evaluate_pair(learners, env, &cx.original, &cx.config.evaluation, eval_seed(cx.seed))?;
    write_json(&dir.join("evaluation.json"), &ev)?;
    let slots = self_play_slots(env.n_agents(), learners.len() == 1);
    record_episodes(
        env,
        &slots,
        learners,
        &cx.original,
        cx.config.record_episodes,
        eval_seed(cx.seed),
        dir,
    )?;
    record.score = Some(ev.score);
    event_details(&ev.summary, "", &mut record.details);
    Ok(ev)
}

/// Count bonus scale used when a config enables the count baseline without
/// choosing one.
pub fn default_count_alpha(env: EnvKind) -> f64 {
    match env {
        EnvKind::Escalation => 1.0,
        _ => 0.3,
    }
}

/// Independent PPO learners on one reward: plain, shared-reward or with a
/// count bonus.
#[derive(Debug, Clone, Copy)]
pub struct PolicyGradient {
    name: &'static str,
    mix: RewardMix,
    count: bool,
}

impl PolicyGradient {
    pub fn plain() -> Self {
        Self {
            name: "pg",
            mix: RewardMix::SELFISH,
            count: false,
        }
    }

    pub fn shared() -> Self {
        Self {
            name: "pg_shared",
            mix: RewardMix::SHARED,
            count: false,
        }
    }

    pub fn count() -> Self {
        Self {
            name: "pg_count",
            mix: RewardMix::SELFISH,
            count: true,
        }
    }
}

impl Algorithm for PolicyGradient {
    fn name(&self) -> &str {
        self.name
    }

    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord> {
        let mut cfg = cx.config.ppo.clone();
        if self.count {
            cfg.count_bonus.get_or_insert(default_count_alpha(cx.config.env));
        }
        let train_w = match &cx.config.train_weights {
            Some(w) => RewardWeights::unbounded(w.clone()),
            None => cx.original.clone(),
        };
        let n = cx.env.n_agents();
        let mut trainer = Trainer::new(TrainerSpec {
            env: cx.env.boxed_clone(),
            slots: self_play_slots(n, cfg.shared_params),
            train_w,
            mix: self.mix,
            cfg,
            total_env_steps: cx.config.scaled(cx.config.total_steps),
            seed: cx.seed,
            identity_tag: false,
        })?;
        run_phase(&mut trainer, UpdateMode::Full, Some(&cx.dir.join("metrics.csv")), 0)?;
        let meta = BTreeMap::from([("algorithm".to_string(), self.name.to_string())]);
        save_learners(&cx.dir, &trainer.learners, &meta)?;
        let mut record = RunRecord::new(self.name, cx.seed, &cx.dir);
        record.env_steps = trainer.env_steps();
        finish_self_play(cx, &trainer.learners, &cx.dir, &mut record)?;
        Ok(record)
    }
}

/// Population manifest written next to the member directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationManifest {
    pub env: EnvKind,
    pub original_weights: Vec<f64>,
    pub members: Vec<MemberRecord>,
    pub failures: Vec<(usize, String)>,
    /// Member index of the selected member.
    pub selected: Option<usize>,
    /// Steps across all members.
    pub total_env_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub index: usize,
    pub w: Vec<f64>,
    pub seed: u64,
    pub env_steps: u64,
    pub score: Option<f64>,
    pub events: BTreeMap<String, f64>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub config_digest: String,
}

impl PopulationManifest {
    pub fn build(
        env: EnvKind,
        original: &RewardWeights,
        members: &[PopulationMember],
        failures: Vec<(usize, String)>,
        selected: Option<usize>,
    ) -> Self {
        Self {
            env,
            original_weights: original.as_slice().to_vec(),
            members: members
                .iter()
                .map(|m| {
                    let mut events = BTreeMap::new();
                    if let Some(s) = &m.evaluation {
                        event_details(s, "", &mut events);
                    }
                    MemberRecord {
                        index: m.index,
                        w: m.w.as_slice().to_vec(),
                        seed: m.seed,
                        env_steps: m.env_steps,
                        score: m.score,
                        events,
                        checkpoints: m.checkpoints.clone(),
                        metrics: m.metrics_path.clone(),
                        config_digest: m.config_digest.clone(),
                    }
                })
                .collect(),
            failures,
            selected,
            total_env_steps: population_steps(members),
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join("population.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
    }

    pub fn member(&self, index: usize) -> Result<&MemberRecord> {
        self.members
            .iter()
            .find(|m| m.index == index)
            .ok_or(Error::EmptyPopulation)
    }
}

fn split_results(results: Vec<Result<PopulationMember>>) -> (Vec<PopulationMember>, Vec<(usize, String)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => failed.push((i, e.to_string())),
        }
    }
    (ok, failed)
}

/// Train a population, score it on the original reward and write the
/// manifest. Returns the members and the selected position.
fn population_run(
    cx: &RunContext<'_>,
    weights: &[RewardWeights],
    mix: RewardMix,
) -> Result<(Vec<PopulationMember>, usize, RunRecord)> {
    let pc = PopulationConfig {
        cfg: cx.config.ppo.clone(),
        member_steps: cx.config.scaled(cx.config.total_steps),
        seed: cx.seed,
        mix,
        out_dir: Some(cx.dir.clone()),
    };
    let env = cx.env.as_ref();
    let (mut members, failures) = split_results(train_population(weights, env, &pc));
    score_population(
        &mut members,
        env,
        &cx.original,
        &cx.config.evaluation,
        eval_seed(cx.seed),
    )?;
    let selected = select_best(&members)?;
    let manifest = PopulationManifest::build(
        cx.config.env,
        &cx.original,
        &members,
        failures,
        Some(members[selected].index),
    );
    write_json(&PopulationManifest::path(&cx.dir), &manifest)?;
    let mut record = RunRecord::new(&cx.config.algorithm, cx.seed, &cx.dir);
    record.env_steps = manifest.total_env_steps;
    record.score = members[selected].score;
    for m in &members {
        if let Some(s) = m.score {
            record.details.insert(format!("member{}_score", m.index), s);
        }
    }
    record.details.insert("selected".into(), members[selected].index as f64);
    Ok((members, selected, record))
}

fn configured_weights(cx: &RunContext<'_>) -> Result<Vec<RewardWeights>> {
    let spec = cx
        .config
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("this algorithm needs a [weights] table".into()))?;
    sample_weights(spec, cx.seed)
}

/// Population of PPO runs on the original reward, selected by the same
/// evaluator as reward randomization.
#[derive(Debug, Clone, Copy)]
pub struct PbtBaseline;

impl Algorithm for PbtBaseline {
    fn name(&self) -> &str {
        "pbt"
    }

    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord> {
        let n = cx.config.weights.as_ref().map_or(4, |w| w.population_size);
        let weights = vec![cx.original.clone(); n];
        let (members, selected, record) = population_run(cx, &weights, RewardMix::SELFISH)?;
        let best = &members[selected];
        let env = cx.env.as_ref();
        let slots = self_play_slots(env.n_agents(), best.learners.len() == 1);
        record_episodes(
            env,
            &slots,
            &best.learners,
            &cx.original,
            cx.config.record_episodes,
            eval_seed(cx.seed),
            &cx.dir,
        )?;
        Ok(record)
    }
}

/// Reward-randomized population only: train, score, select. No fine-tuning.
#[derive(Debug, Clone, Copy)]
pub struct RewardRandomization;

impl Algorithm for RewardRandomization {
    fn name(&self) -> &str {
        "rr"
    }

    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord> {
        let weights = configured_weights(cx)?;
        let (_, _, record) = population_run(cx, &weights, RewardMix::SELFISH)?;
        Ok(record)
    }
}

/// The full pipeline: population, selection, critic warm start, fine-tune.
#[derive(Debug, Clone, Copy)]
pub struct Rpg;

impl Algorithm for Rpg {
    fn name(&self) -> &str {
        "rpg"
    }

    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord> {
        let c = cx.config;
        let weights: WeightSpaceSpec = c
            .weights
            .clone()
            .ok_or_else(|| Error::Config("rpg needs a [weights] table".into()))?;
        let spec = RpgSpec {
            weights,
            member_steps: c.scaled(c.total_steps),
            finetune_steps: c.scaled(c.finetune.steps),
            warm_steps: c.finetune.warm_steps.map(|w| c.scaled(w)),
            skip_warm_start: c.finetune.skip_warm_start,
            evaluation: c.evaluation,
        };
        let env = cx.env.as_ref();
        let out = run_rpg(env, &cx.original, &c.ppo, &spec, cx.seed, Some(&cx.dir))?;
        let selected = &out.members[out.selected];
        let manifest = PopulationManifest::build(
            c.env,
            &cx.original,
            &out.members,
            out.failures.clone(),
            Some(selected.index),
        );
        write_json(&PopulationManifest::path(&cx.dir), &manifest)?;
        let final_dir = cx.dir.join("final");
        let meta = BTreeMap::from([
            ("algorithm".to_string(), "rpg".to_string()),
            ("selected_w".to_string(), selected.w.to_string()),
        ]);
        save_learners(&final_dir, &out.learners, &meta)?;
        let mut record = RunRecord::new("rpg", cx.seed, &cx.dir);
        record.env_steps = out.total_env_steps;
        record.details.insert("selected".into(), selected.index as f64);
        if let Some(s) = selected.score {
            record.details.insert("selected_score".into(), s);
        }
        for m in &out.members {
            if let Some(s) = m.score {
                record.details.insert(format!("member{}_score", m.index), s);
            }
        }
        finish_self_play(cx, &out.learners, &cx.dir, &mut record)?;
        Ok(record)
    }
}

/// Label of a policy trained on `w`.
fn w_label(w: &RewardWeights) -> String {
    format!("w={w}")
}

/// Adaptive training against opponents from a manifest or, without one,
/// from a freshly trained reward-randomized population.
#[derive(Debug, Clone, Copy)]
pub struct Adapt;

impl Adapt {
    fn training_opponents(cx: &RunContext<'_>) -> Result<Vec<Arc<dyn Opponent>>> {
        let a = &cx.config.adapt;
        let env = cx.env.as_ref();
        if let Some(path) = &a.opponents {
            return OpponentManifest::load(path)?.build(env);
        }
        let weights = configured_weights(cx)?;
        let pc = PopulationConfig {
            cfg: PpoConfig {
                recurrent: None,
                ..cx.config.ppo.clone()
            },
            member_steps: cx.config.scaled(a.opponent_steps),
            seed: cx.seed,
            mix: RewardMix::SELFISH,
            out_dir: Some(cx.dir.join("opponents")),
        };
        let (members, failures) = split_results(train_population(&weights, env, &pc));
        if let Some((i, e)) = failures.first() {
            return Err(Error::Config(format!("opponent member {i} failed: {e}")));
        }
        let other = usize::from(a.role == 0);
        let mut entries = Vec::new();
        let mut opponents: Vec<Arc<dyn Opponent>> = Vec::new();
        for m in &members {
            let label = w_label(&m.w);
            opponents.push(Arc::new(PolicyOpponent::from_agent(label.clone(), &m.learners[other])));
            entries.push(OpponentEntry {
                label,
                checkpoint: m.checkpoints.get(other).map(|p| {
                    p.strip_prefix(&cx.dir)
                        .map(Path::to_path_buf)
                        .unwrap_or_else(|_| p.clone())
                }),
                scripted: None,
            });
        }
        OpponentManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            opponents: entries,
        }
        .save(&cx.dir.join("opponents.toml"))?;
        Ok(opponents)
    }
}

impl Algorithm for Adapt {
    fn name(&self) -> &str {
        "adapt"
    }

    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord> {
        let a = &cx.config.adapt;
        let env = cx.env.as_ref();
        let train = Self::training_opponents(cx)?;
        let out = train_adaptive(
            train.clone(),
            env,
            &cx.original,
            &AdaptSpec {
                cfg: cx.config.ppo.clone(),
                steps: cx.config.scaled(cx.config.total_steps),
                seed: cx.seed,
                role: a.role,
                metrics: Some(cx.dir.join("metrics.csv")),
            },
        )?;
        if out.digests_before != out.digests_after {
            return Err(Error::Mismatch("an opponent changed during adaptive training".into()));
        }
        out.learner
            .to_checkpoint(BTreeMap::from([("role".to_string(), a.role.to_string())]))
            .save(&cx.dir.join("adaptive.json"))?;
        let mut tests = train;
        if let Some(path) = &a.holdout {
            tests.extend(OpponentManifest::load(path)?.build(env)?);
        }
        for &k in &a.scripted {
            tests.push(make_scripted(k, env)?);
        }
        let stats = evaluate_adaptive(
            &out.learner,
            a.role,
            &tests,
            env,
            &cx.original,
            a.episodes,
            eval_seed(cx.seed),
        )?;
        write_stats_csv(&cx.dir.join("adapt_stats.csv"), &stats)?;
        write_json(&cx.dir.join("adapt_stats.json"), &stats)?;
        let mut record = RunRecord::new("adapt", cx.seed, &cx.dir);
        record.env_steps = out.env_steps;
        for s in &stats {
            event_details(&s.summary, &format!("{}.", s.label), &mut record.details);
        }
        Ok(record)
    }
}

/// Monte Carlo checks of the matrix-game bounds.
#[derive(Debug, Clone, Copy)]
pub struct VerifyMatrix;

impl VerifyMatrix {
    pub fn reports(m: &super::MatrixConfig, seed: u64) -> Result<Vec<BoundReport>> {
        let dynamics = DynamicsConfig {
            learning_rate: m.learning_rate,
            max_steps: m.max_steps,
            convergence_tol: m.tol,
        };
        let mut reports = Vec::new();
        for &c in &m.c_values {
            let payoff = PayoffMatrix::new(m.a, m.b, c, m.d)?;
            reports.push(verify_theorem1(&payoff, m.trials, &dynamics, seed)?);
        }
        for &n in &m.population_sizes {
            reports.push(verify_theorem2(n, m.population_trials, &dynamics, seed)?);
        }
        Ok(reports)
    }
}

impl Algorithm for VerifyMatrix {
    fn name(&self) -> &str {
        "verify_matrix"
    }

    fn run(&self, cx: &RunContext<'_>) -> Result<RunRecord> {
        let reports = Self::reports(&cx.config.matrix, cx.seed)?;
        write_json(&cx.dir.join("bound_reports.json"), &reports)?;
        let mut record = RunRecord::new("verify_matrix", cx.seed, &cx.dir);
        for (i, r) in reports.iter().enumerate() {
            record.details.insert(format!("report{i}_rate"), r.empirical_rate);
            record.details.insert(format!("report{i}_bound"), r.theoretical_bound);
            record
                .details
                .insert(format!("report{i}_pass"), f64::from(u8::from(r.passes())));
        }
        let all = reports.iter().all(BoundReport::passes);
        record.details.insert("all_pass".into(), f64::from(u8::from(all)));
        Ok(record)
    }
}

/// Pick the best member of a population directory and record it in the
/// manifest.
pub fn select_population(dir: &Path) -> Result<MemberRecord> {
    let mut manifest = PopulationManifest::load(dir)?;
    let pos = argmax_score(manifest.members.iter().map(|m| (m.index, m.score)))?;
    let chosen = manifest.members[pos].clone();
    manifest.selected = Some(chosen.index);
    write_json(&PopulationManifest::path(dir), &manifest)?;
    Ok(chosen)
}

/// Warm-start and fine-tune the selected member of a population directory
/// on the original reward; checkpoints go to `dir/final`.
pub fn finetune_population(dir: &Path, config: &super::ExperimentConfig, seed: u64) -> Result<Evaluation> {
    let manifest = PopulationManifest::load(dir)?;
    let index = match manifest.selected {
        Some(i) => i,
        None => select_population(dir)?.index,
    };
    let member = manifest.member(index)?;
    let learners = load_learners(&member.checkpoints, config.ppo.adam_epsilon)?;
    let env = config.make_env()?;
    let original = RewardWeights::unbounded(manifest.original_weights.clone());
    let ft = config.scaled(config.finetune.steps);
    let warm = if config.finetune.skip_warm_start {
        0
    } else {
        config.finetune.warm_steps.map_or(ft / 20, |w| config.scaled(w))
    };
    let warm_csv = dir.join("warm_start.csv");
    let ft_csv = dir.join("finetune.csv");
    let learners = warm_start_critic(
        learners,
        &PhaseSpec {
            env: env.as_ref(),
            w: &original,
            cfg: &config.ppo,
            steps: warm,
            seed: seed.wrapping_add(10_000),
            metrics: Some(&warm_csv),
            step_offset: manifest.total_env_steps,
        },
    )?;
    let learners = fine_tune(
        learners,
        &PhaseSpec {
            env: env.as_ref(),
            w: &original,
            cfg: &config.ppo,
            steps: ft,
            seed: seed.wrapping_add(20_000),
            metrics: Some(&ft_csv),
            step_offset: manifest.total_env_steps + warm,
        },
    )?;
    let meta = BTreeMap::from([("selected_member".to_string(), index.to_string())]);
    save_learners(&dir.join("final"), &learners, &meta)?;
    let ev = evaluate_pair(&learners, env.as_ref(), &original, &config.evaluation, eval_seed(seed))?;
    write_json(&dir.join("evaluation.json"), &ev)?;
    Ok(ev)
}

/// Evaluate saved checkpoints (one per agent, or one shared) on `w`.
pub fn evaluate_checkpoints(
    paths: &[PathBuf],
    env: &dyn MarkovGame,
    w: &RewardWeights,
    spec: &EvaluationSpec,
    seed: u64,
) -> Result<Evaluation> {
    let learners = load_learners(paths, PpoConfig::default().adam_epsilon)?;
    evaluate_pair(&learners, env, w, spec, seed)
}
