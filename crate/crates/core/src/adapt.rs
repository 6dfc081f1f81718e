//! Learning to adapt: a recurrent policy trained against a uniform mixture
//! of frozen opponents. Only the critic sees which opponent was drawn, and
//! it keeps one value head per opponent.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, IteratedAction, MarkovGame, RewardWeights};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, HIDDEN_UNITS};
use crate::ppo::{
    evaluate, ActorCritic, Opponent, OpponentPool, OpponentState, PolicyOpponent, PpoConfig, RewardMix, Slot, Trainer,
    TrainerSpec, UpdateMode,
};
use crate::rpg_pipeline::run_phase;
use crate::stats::{EpisodeStats, StatsSummary};

/// Hand-written opponents for the iterated stag hunt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedKind {
    StagAlways,
    HareAlways,
    TitForTat,
    RandomUniform,
}

impl ScriptedKind {
    pub const ALL: [ScriptedKind; 4] = [
        ScriptedKind::StagAlways,
        ScriptedKind::HareAlways,
        ScriptedKind::TitForTat,
        ScriptedKind::RandomUniform,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScriptedKind::StagAlways => "stag_always",
            ScriptedKind::HareAlways => "hare_always",
            ScriptedKind::TitForTat => "tit_for_tat",
            ScriptedKind::RandomUniform => "random_uniform",
        }
    }
}

impl std::str::FromStr for ScriptedKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScriptedKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Unregistered {
                kind: "scripted opponent",
                name: s.to_string(),
            })
    }
}

/// Reads the iterated game's observation `[own last, other's last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedOpponent {
    pub kind: ScriptedKind,
}

impl Opponent for ScriptedOpponent {
    fn label(&self) -> &str {
        self.kind.label()
    }

    fn act(&self, obs: &[f64], _state: &mut OpponentState, rng: &mut dyn RngCore) -> Result<usize> {
        let stag = IteratedAction::Stag as usize;
        let hare = IteratedAction::Hare as usize;
        Ok(match self.kind {
            ScriptedKind::StagAlways => stag,
            ScriptedKind::HareAlways => hare,
            ScriptedKind::TitForTat => match obs.get(1) {
                Some(&x) if x >= 0.0 => x as usize,
                Some(_) => stag,
                None => {
                    return Err(Error::ShapeMismatch {
                        what: "observation",
                        expected: 2,
                        got: obs.len(),
                    })
                }
            },
            ScriptedKind::RandomUniform => (rng.next_u64() >> 63) as usize,
        })
    }

    fn digest(&self) -> String {
        format!("scripted:{}", self.kind.label())
    }
}

/// A scripted opponent, valid for the iterated stag hunt and its one-round
/// matrix form.
pub fn make_scripted(kind: ScriptedKind, env: &dyn MarkovGame) -> Result<Arc<dyn Opponent>> {
    if !matches!(env.kind(), EnvKind::IteratedStagHunt | EnvKind::MatrixStagHunt) {
        return Err(Error::Mismatch(format!(
            "scripted opponent {} needs {}, got {}",
            kind.label(),
            EnvKind::IteratedStagHunt,
            env.kind()
        )));
    }
    Ok(Arc::new(ScriptedOpponent { kind }))
}

pub type OpponentFactory = fn(&dyn MarkovGame) -> Result<Arc<dyn Opponent>>;

/// Name → constructor table for non-learned opponents.
#[derive(Clone)]
pub struct OpponentRegistry {
    factories: BTreeMap<String, OpponentFactory>,
}

impl OpponentRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(ScriptedKind::StagAlways.label(), |env| {
            make_scripted(ScriptedKind::StagAlways, env)
        });
        reg.register(ScriptedKind::HareAlways.label(), |env| {
            make_scripted(ScriptedKind::HareAlways, env)
        });
        reg.register(ScriptedKind::TitForTat.label(), |env| {
            make_scripted(ScriptedKind::TitForTat, env)
        });
        reg.register(ScriptedKind::RandomUniform.label(), |env| {
            make_scripted(ScriptedKind::RandomUniform, env)
        });
        reg
    }

    pub fn register(&mut self, name: &str, factory: OpponentFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn make(&self, name: &str, env: &dyn MarkovGame) -> Result<Arc<dyn Opponent>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::Unregistered {
            kind: "opponent",
            name: name.to_string(),
        })?;
        factory(env)
    }
}

/// One entry of an opponents manifest: a checkpoint or a scripted kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpponentEntry {
    pub label: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub scripted: Option<ScriptedKind>,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// TOML list of opponents. Relative checkpoint paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpponentManifest {
    pub schema_version: u32,
    pub opponents: Vec<OpponentEntry>,
}

impl OpponentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!(
                    "manifest schema {} (expected {MANIFEST_SCHEMA_VERSION})",
                    m.schema_version
                ),
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self {
            opponents: m
                .opponents
                .into_iter()
                .map(|mut e| {
                    e.checkpoint = e.checkpoint.map(|p| if p.is_relative() { base.join(p) } else { p });
                    e
                })
                .collect(),
            ..m
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    /// Build the opponents, checking they fit `env`.
    pub fn build(&self, env: &dyn MarkovGame) -> Result<Vec<Arc<dyn Opponent>>> {
        self.opponents
            .iter()
            .map(|e| match (&e.checkpoint, e.scripted) {
                (Some(path), None) => {
                    let ck = Checkpoint::load(path)?;
                    let ac = ActorCritic::from_checkpoint(&ck, PpoConfig::default().adam_epsilon)?;
                    if ac.policy.net.spec().input != env.obs_dim() || ac.policy.net.spec().outputs != env.n_actions() {
                        return Err(Error::Mismatch(format!(
                            "{} does not fit {}",
                            path.display(),
                            env.kind()
                        )));
                    }
                    Ok(Arc::new(PolicyOpponent::from_agent(e.label.clone(), &ac)) as Arc<dyn Opponent>)
                }
                (None, Some(kind)) => make_scripted(kind, env).map(|o| {
                    Arc::new(Relabeled {
                        label: e.label.clone(),
                        inner: o,
                    }) as _
                }),
                _ => Err(Error::Config(format!(
                    "opponent `{}` needs exactly one of checkpoint or scripted",
                    e.label
                ))),
            })
            .collect()
    }
}

#[derive(Debug)]
struct Relabeled {
    label: String,
    inner: Arc<dyn Opponent>,
}

impl Opponent for Relabeled {
    fn label(&self) -> &str {
        &self.label
    }

    fn initial_state(&self) -> OpponentState {
        self.inner.initial_state()
    }

    fn act(&self, obs: &[f64], state: &mut OpponentState, rng: &mut dyn RngCore) -> Result<usize> {
        self.inner.act(obs, state, rng)
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

/// Settings of adaptive training.
#[derive(Debug, Clone)]
pub struct AdaptSpec {
    pub cfg: PpoConfig,
    pub steps: u64,
    pub seed: u64,
    /// Game index the adaptive agent plays (0 by default).
    pub role: usize,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub learner: ActorCritic,
    pub env_steps: u64,
    /// Opponent digests before and after training.
    pub digests_before: Vec<String>,
    pub digests_after: Vec<String>,
}

/// Slots with the adaptive learner at `role` and the pool elsewhere.
pub fn adaptive_slots(n_agents: usize, role: usize, pool: Arc<OpponentPool>) -> Result<Vec<Slot>> {
    if role >= n_agents {
        return Err(Error::ShapeMismatch {
            what: "role",
            expected: n_agents,
            got: role,
        });
    }
    Ok((0..n_agents)
        .map(|i| {
            if i == role {
                Slot::Learner(0)
            } else {
                Slot::Pool(pool.clone())
            }
        })
        .collect())
}

/// Train a recurrent adaptive policy against the opponent mixture. A
/// feed-forward config gets a GRU of the default width.
pub fn build_adaptive_trainer(
    opponents: Vec<Arc<dyn Opponent>>,
    env: &dyn MarkovGame,
    w: &RewardWeights,
    spec: &AdaptSpec,
) -> Result<Trainer> {
    let pool = Arc::new(OpponentPool::new(opponents)?);
    let mut cfg = spec.cfg.clone();
    cfg.recurrent.get_or_insert(HIDDEN_UNITS);
    Trainer::new(TrainerSpec {
        env: env.boxed_clone(),
        slots: adaptive_slots(env.n_agents(), spec.role, pool)?,
        train_w: w.clone(),
        mix: RewardMix::SELFISH,
        cfg,
        total_env_steps: spec.steps,
        seed: spec.seed,
        identity_tag: true,
    })
}

pub fn train_adaptive(
    opponents: Vec<Arc<dyn Opponent>>,
    env: &dyn MarkovGame,
    w: &RewardWeights,
    spec: &AdaptSpec,
) -> Result<AdaptOutcome> {
    let digests_before: Vec<String> = opponents.iter().map(|o| o.digest()).collect();
    let mut trainer = build_adaptive_trainer(opponents.clone(), env, w, spec)?;
    run_phase(&mut trainer, UpdateMode::Full, spec.metrics.as_deref(), 0)?;
    let env_steps = trainer.env_steps();
    Ok(AdaptOutcome {
        learner: trainer.learners.remove(0),
        env_steps,
        digests_before,
        digests_after: opponents.iter().map(|o| o.digest()).collect(),
    })
}

/// Evaluation of the adaptive agent against one opponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentStats {
    pub label: String,
    pub role: usize,
    pub summary: StatsSummary,
}

impl OpponentStats {
    /// Mean rounds per episode in which the adaptive agent hunted the stag.
    pub fn stag_count(&self) -> Result<f64> {
        let own = if self.role == 0 { "stag_hare" } else { "hare_stag" };
        Ok(self.summary.event("stag_stag")? + self.summary.event(own)?)
    }

    pub fn hare_count(&self) -> Result<f64> {
        let own = if self.role == 0 { "hare_stag" } else { "stag_hare" };
        Ok(self.summary.event("hare_hare")? + self.summary.event(own)?)
    }
}

/// Play `episodes` against each opponent separately.
pub fn evaluate_adaptive(
    learner: &ActorCritic,
    role: usize,
    opponents: &[Arc<dyn Opponent>],
    env: &dyn MarkovGame,
    w: &RewardWeights,
    episodes: usize,
    seed: u64,
) -> Result<Vec<OpponentStats>> {
    let learners = std::slice::from_ref(learner);
    opponents
        .iter()
        .map(|o| {
            let pool = Arc::new(OpponentPool::new(vec![o.clone()])?);
            let slots = adaptive_slots(env.n_agents(), role, pool)?;
            let eps: Vec<EpisodeStats> = evaluate(env, &slots, learners, w, episodes, seed)?
                .into_iter()
                .map(|(e, _)| e)
                .collect();
            Ok(OpponentStats {
                label: o.label().to_string(),
                role,
                summary: StatsSummary::from_episodes(env.event_names(), env.n_agents(), &eps),
            })
        })
        .collect()
}

/// Per-opponent table: label, episodes, adaptive and opponent return
/// (mean, std), then mean and std of every event counter.
pub fn write_stats_csv(path: &Path, stats: &[OpponentStats]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names = stats.first().map(|s| s.summary.event_names.clone()).unwrap_or_default();
    let mut header = vec![
        "label".to_string(),
        "episodes".into(),
        "adaptive_return_mean".into(),
        "adaptive_return_std".into(),
        "opponent_return_mean".into(),
        "opponent_return_std".into(),
    ];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    writeln!(out, "{}", header.join(","))?;
    for s in stats {
        let other = usize::from(s.role == 0);
        let mut row = vec![
            s.label.clone(),
            s.summary.episodes.to_string(),
            s.summary.mean_returns[s.role].to_string(),
            s.summary.std_returns[s.role].to_string(),
            s.summary.mean_returns[other].to_string(),
            s.summary.std_returns[other].to_string(),
        ];
        for (m, sd) in s.summary.mean_events.iter().zip(&s.summary.std_events) {
            row.push(m.to_string());
            row.push(sd.to_string());
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
