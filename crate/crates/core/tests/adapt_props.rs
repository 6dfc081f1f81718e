//! Adaptive training against an opponent mixture.

use std::sync::Arc;

use rpg_lab::adapt::{build_adaptive_trainer, make_scripted, train_adaptive, AdaptSpec, ScriptedKind};
use rpg_lab::envs::{make_env, EnvKind, EnvParams, IteratedAction, MarkovGame};
use rpg_lab::harness::presets::iterated_ppo;
use rpg_lab::ppo::{Opponent, PolicyOpponent, PpoConfig, RewardMix, Trainer, TrainerSpec};

fn iterated() -> Box<dyn MarkovGame> {
    make_env(EnvKind::IteratedStagHunt, &EnvParams::default()).unwrap()
}

fn cfg() -> PpoConfig {
    PpoConfig {
        parallel_threads: 8,
        minibatch_chunks: 8,
        ..iterated_ppo()
    }
}

fn spec(steps: u64, seed: u64) -> AdaptSpec {
    AdaptSpec {
        cfg: cfg(),
        steps,
        seed,
        role: 0,
        metrics: None,
    }
}

fn scripted(kinds: &[ScriptedKind], env: &dyn MarkovGame) -> Vec<Arc<dyn Opponent>> {
    kinds.iter().map(|k| make_scripted(*k, env).unwrap()).collect()
}

fn adaptive(kinds: &[ScriptedKind], seed: u64) -> Trainer {
    let env = iterated();
    let w = EnvKind::IteratedStagHunt.original_weights();
    build_adaptive_trainer(scripted(kinds, env.as_ref()), env.as_ref(), &w, &spec(1, seed)).unwrap()
}

#[test]
fn policy_input_does_not_grow_with_the_mixture() {
    let env = iterated();
    for n in 1..=4 {
        let tr = adaptive(&ScriptedKind::ALL[..n], 0);
        let ac = &tr.learners[0];
        assert_eq!(ac.policy.net.spec().input, env.obs_dim(), "|Π| = {n}");
        assert!(ac.policy.net.spec().gru.is_some());
        assert_eq!(ac.value.net.spec().input, 2 * env.obs_dim() + n);
        assert_eq!(ac.value.net.spec().outputs, n);
    }
}

#[test]
fn value_head_always_matches_the_drawn_opponent() {
    let pool = [ScriptedKind::StagAlways, ScriptedKind::HareAlways];
    let mut tr = adaptive(&pool, 3);
    let (stag, hare) = (
        IteratedAction::Stag as usize as f64,
        IteratedAction::Hare as usize as f64,
    );
    let mut steps = 0;
    for _ in 0..20 {
        let (bufs, _) = tr.collect().unwrap();
        for (_, b) in bufs {
            for t in 0..b.actions.len() {
                let x = &b.value_inputs[t];
                let tag = &x[x.len() - pool.len()..];
                let hot: Vec<usize> = (0..pool.len()).filter(|&k| tag[k] == 1.0).collect();
                assert_eq!(hot, vec![b.heads[t]]);
                assert_eq!(tag.iter().sum::<f64>(), 1.0);
                // The opponent's last move gives away who it is.
                if !b.episode_start[t] {
                    let expect = if b.heads[t] == 0 { stag } else { hare };
                    assert_eq!(b.obs[t][1], expect, "step {t}");
                }
                steps += 1;
            }
        }
    }
    assert!(steps >= 1000);
}

#[test]
fn opponents_are_drawn_uniformly_per_episode() {
    let mut tr = adaptive(&ScriptedKind::ALL, 9);
    let mut counts = [0usize; 4];
    let mut episodes = 0;
    while episodes < 10_000 {
        let (bufs, _) = tr.collect().unwrap();
        for (_, b) in bufs {
            for t in (0..b.actions.len()).filter(|&t| b.episode_start[t]) {
                counts[b.heads[t]] += 1;
                episodes += 1;
            }
        }
    }
    // Four standard deviations of a binomial(n, 1/4) count.
    let n = episodes as f64;
    let sd = (n * 0.25 * 0.75).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        assert!((c as f64 - n / 4.0).abs() < 4.0 * sd, "opponent {k}: {c} of {episodes}");
    }
}

#[test]
fn training_leaves_opponents_frozen() {
    let env = iterated();
    let w = EnvKind::IteratedStagHunt.original_weights();
    // A learned opponent from a short self-play run, plus a scripted one.
    let mut src = Trainer::new(TrainerSpec {
        env: env.boxed_clone(),
        slots: rpg_lab::ppo::self_play_slots(2, false),
        train_w: w.clone(),
        mix: RewardMix::SELFISH,
        cfg: cfg(),
        total_env_steps: 640,
        seed: 1,
        identity_tag: false,
    })
    .unwrap();
    src.run(|_| Ok(())).unwrap();
    let learned: Arc<dyn Opponent> = Arc::new(PolicyOpponent::from_agent("learned", &src.learners[1]));
    let mut opponents = scripted(&[ScriptedKind::TitForTat], env.as_ref());
    opponents.push(learned);

    let out = train_adaptive(opponents.clone(), env.as_ref(), &w, &spec(2000, 4)).unwrap();
    assert_eq!(out.digests_before, out.digests_after);
    assert_eq!(out.digests_before[1], opponents[1].digest());
    assert!(out.env_steps >= 2000);
}

#[test]
fn single_opponent_degenerates_to_plain_training() {
    let env = iterated();
    let w = EnvKind::IteratedStagHunt.original_weights();
    let mut tr = adaptive(&[ScriptedKind::StagAlways], 2);
    let (bufs, _) = tr.collect().unwrap();
    for (_, b) in &bufs {
        assert!(b.heads.iter().all(|&h| h == 0));
        assert!(b.value_inputs.iter().all(|x| x.last() == Some(&1.0)));
    }
    let out = train_adaptive(
        scripted(&[ScriptedKind::StagAlways], env.as_ref()),
        env.as_ref(),
        &w,
        &spec(640, 2),
    );
    assert!(out.is_ok());
    assert!(train_adaptive(Vec::new(), env.as_ref(), &w, &spec(640, 2)).is_err());
}
