//! PPO loss, GAE, update and rollout contracts.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpg_lab::adapt::{make_scripted, ScriptedKind};
use rpg_lab::envs::{make_env, EnvKind, EnvParams, IteratedAction};
use rpg_lab::nn::RecurrentState;
use rpg_lab::ppo::{
    compute_gae, ppo_loss_and_grad, ppo_update, ActorCritic, Chunk, LinearSchedule, OpponentPool, PpoConfig, RewardMix,
    RolloutBuffer, Slot, Trainer, TrainerSpec, UpdateMode,
};

const OBS: usize = 2;
const ACTIONS: usize = 3;
const VALUE_DIM: usize = 4;
const HEADS: usize = 2;

fn small_cfg(recurrent: Option<usize>) -> PpoConfig {
    PpoConfig {
        hidden: vec![5, 4],
        recurrent,
        ..PpoConfig::default()
    }
}

/// Buffer of one environment whose log-probs sit near the current policy.
fn toy_buffer(ac: &ActorCritic, horizon: usize, chunk_length: usize, rng: &mut ChaCha8Rng) -> RolloutBuffer {
    let obs: Vec<Vec<f64>> = (0..horizon)
        .map(|_| (0..OBS).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let episode_start: Vec<bool> = (0..horizon).map(|t| t == 0 || rng.gen_bool(0.15)).collect();
    let mut state = ac.initial_state();
    let mut actions = Vec::new();
    let mut log_probs = Vec::new();
    let mut chunk_hidden = Vec::new();
    for t in 0..horizon {
        if episode_start[t] {
            state.reset();
        }
        if t % chunk_length == 0 {
            chunk_hidden.push(state.hidden.clone());
        }
        let (dist, next) = ac.policy.forward_policy(&ac.pi.data, &obs[t], &state).unwrap();
        let a = rng.gen_range(0..ACTIONS);
        actions.push(a);
        log_probs.push(dist.log_prob(a) + rng.gen_range(-0.3..0.3));
        state = next;
    }
    let mut buf = RolloutBuffer {
        n_envs: 1,
        horizon,
        chunk_length,
        obs,
        value_inputs: (0..horizon)
            .map(|_| (0..VALUE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        actions,
        log_probs,
        rewards: (0..horizon).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        raw_rewards: vec![0.0; horizon],
        values: (0..horizon).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dones: (0..horizon).map(|_| rng.gen_bool(0.1)).collect(),
        episode_start,
        heads: (0..horizon).map(|_| rng.gen_range(0..HEADS)).collect(),
        chunk_hidden,
        last_values: vec![rng.gen_range(-1.0..1.0)],
        ..RolloutBuffer::default()
    };
    buf.finish(0.99, 0.95).unwrap();
    buf
}

fn new_agent(cfg: &PpoConfig, seed: u64) -> ActorCritic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ac = ActorCritic::new(OBS, ACTIONS, VALUE_DIM, HEADS, cfg, &mut rng);
    for x in ac.pi.data.iter_mut().chain(ac.v.data.iter_mut()) {
        *x += rng.gen_range(-0.2..0.2);
    }
    ac
}

fn loss_of(ac: &ActorCritic, buf: &RolloutBuffer, cfg: &PpoConfig) -> f64 {
    let batch: Vec<_> = buf.chunks().into_iter().map(|c| (buf, c)).collect();
    ppo_loss_and_grad(ac, &batch, cfg, UpdateMode::Full).unwrap().0
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    const H: f64 = 1e-5;
    for (seed, recurrent) in [(0, None), (1, Some(3)), (2, None), (3, Some(4))] {
        let cfg = small_cfg(recurrent);
        let mut ac = new_agent(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let buf = toy_buffer(&ac, 3, 3, &mut rng);
        let batch: Vec<_> = buf.chunks().into_iter().map(|c| (&buf, c)).collect();
        let (_, _, g_pi, g_v) = ppo_loss_and_grad(&ac, &batch, &cfg, UpdateMode::Full).unwrap();
        let check = |analytic: f64, up: f64, down: f64, what: &str| {
            let fd = (up - down) / (2.0 * H);
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-3);
            assert!(rel < 1e-3, "{what}: analytic {analytic} vs fd {fd}");
        };
        for i in 0..ac.pi.len() {
            let orig = ac.pi.data[i];
            ac.pi.data[i] = orig + H;
            let up = loss_of(&ac, &buf, &cfg);
            ac.pi.data[i] = orig - H;
            let down = loss_of(&ac, &buf, &cfg);
            ac.pi.data[i] = orig;
            check(g_pi[i], up, down, &format!("seed {seed} policy {i}"));
        }
        for i in 0..ac.v.len() {
            let orig = ac.v.data[i];
            ac.v.data[i] = orig + H;
            let up = loss_of(&ac, &buf, &cfg);
            ac.v.data[i] = orig - H;
            let down = loss_of(&ac, &buf, &cfg);
            ac.v.data[i] = orig;
            check(g_v[i], up, down, &format!("seed {seed} value {i}"));
        }
    }
}

/// Direct double loop over `Σ_k (γλ)^k δ_{t+k}`, stopping after a terminal.
fn gae_oracle(r: &[f64], v: &[f64], done: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next_value = |j: usize| if j + 1 == n { boot } else { v[j + 1] };
    let delta = |j: usize| r[j] + if done[j] { 0.0 } else { gamma * next_value(j) } - v[j];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for j in t..n {
                sum += w * delta(j);
                if done[j] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gae_matches_brute_force(
        steps in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, proptest::bool::weighted(0.2)), 1..16),
        boot in -5.0f64..5.0,
        gamma in 0.5f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda).unwrap();
        let oracle = gae_oracle(&r, &v, &d, boot, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - oracle[t]).abs() < 1e-10, "t={} {} vs {}", t, adv[t], oracle[t]);
            prop_assert_eq!(ret[t], adv[t] + v[t]);
        }
    }

    #[test]
    fn schedule_is_linear(lr in 1e-5f64..1e-1, total in 1u64..1_000_000, t in 0u64..2_000_000) {
        let s = LinearSchedule { initial: lr, total };
        let expect = lr * (1.0 - t.min(total) as f64 / total as f64);
        prop_assert!((s.at(t) - expect).abs() <= 1e-15);
        prop_assert_eq!(s.at(total), 0.0);
    }
}

#[test]
fn zero_advantages_leave_policy_unchanged() {
    let cfg = PpoConfig {
        entropy_coeff: 0.0,
        minibatch_chunks: 2,
        ..small_cfg(Some(3))
    };
    let mut ac = new_agent(&cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bufs: Vec<RolloutBuffer> = (0..3)
        .map(|_| {
            let mut b = toy_buffer(&ac, 10, 5, &mut rng);
            b.advantages.iter_mut().for_each(|a| *a = 0.0);
            b
        })
        .collect();
    let before_pi = ac.policy_digest();
    let before_v = ac.value_digest();
    ppo_update(&mut ac, &mut bufs, &cfg, 1e-3, UpdateMode::Full, &mut rng).unwrap();
    assert_eq!(ac.policy_digest(), before_pi);
    assert_ne!(ac.value_digest(), before_v);
}

#[test]
fn clipped_objective_caps_the_ratio() {
    let cfg = PpoConfig {
        entropy_coeff: 0.0,
        normalize_advantages: false,
        ..small_cfg(None)
    };
    let ac = new_agent(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut buf = toy_buffer(&ac, 1, 1, &mut rng);
    let (dist, _) = ac
        .policy
        .forward_policy(&ac.pi.data, &buf.obs[0], &RecurrentState::zeros(0))
        .unwrap();
    let a = buf.actions[0];
    buf.log_probs[0] = dist.log_prob(a) - 1.5f64.ln();
    buf.advantages[0] = 2.0;
    let batch = [(
        &buf,
        Chunk {
            env: 0,
            start: 0,
            len: 1,
        },
    )];
    let (_, stats, g_pi, _) = ppo_loss_and_grad(&ac, &batch, &cfg, UpdateMode::Full).unwrap();
    assert!(
        (stats.policy_loss - (-1.2 * 2.0)).abs() < 1e-12,
        "{}",
        stats.policy_loss
    );
    assert_eq!(stats.clip_fraction, 1.0);
    assert!(g_pi.iter().all(|&g| g == 0.0));

    // Negative advantage keeps the unclipped (pessimistic) term.
    buf.advantages[0] = -2.0;
    let batch = [(
        &buf,
        Chunk {
            env: 0,
            start: 0,
            len: 1,
        },
    )];
    let (_, stats, _, _) = ppo_loss_and_grad(&ac, &batch, &cfg, UpdateMode::Full).unwrap();
    assert!((stats.policy_loss - 1.5 * 2.0).abs() < 1e-12);
}

fn split_in_two(ac: &ActorCritic, whole: &RolloutBuffer) -> RolloutBuffer {
    let mut split = whole.clone();
    split.chunk_length = 5;
    let mut state = ac.initial_state();
    split.chunk_hidden.clear();
    for t in 0..10 {
        if split.episode_start[t] {
            state.reset();
        }
        if t % 5 == 0 {
            split.chunk_hidden.push(state.hidden.clone());
        }
        state = ac.policy.forward_policy(&ac.pi.data, &split.obs[t], &state).unwrap().1;
    }
    split
}

#[test]
fn chunked_and_monolithic_paths_agree() {
    let cfg = small_cfg(Some(4));
    let ac = new_agent(&cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut whole = toy_buffer(&ac, 10, 10, &mut rng);
    // Same data in two chunks, the second starting from the hidden state the
    // monolithic pass carries into it: forward values agree everywhere.
    let split = split_in_two(&ac, &whole);
    let b1: Vec<_> = whole.chunks().into_iter().map(|c| (&whole, c)).collect();
    let b2: Vec<_> = split.chunks().into_iter().map(|c| (&split, c)).collect();
    let (l1, s1, _, v1) = ppo_loss_and_grad(&ac, &b1, &cfg, UpdateMode::Full).unwrap();
    let (l2, s2, _, v2) = ppo_loss_and_grad(&ac, &b2, &cfg, UpdateMode::Full).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    assert!((s1.policy_loss - s2.policy_loss).abs() < 1e-12);
    for (a, b) in v1.iter().zip(&v2) {
        assert!((a - b).abs() < 1e-12);
    }

    // When chunks coincide with episodes, truncation at the boundary cuts
    // nothing and the policy gradients agree as well.
    whole.episode_start[5] = true;
    let split = split_in_two(&ac, &whole);
    let b1: Vec<_> = whole.chunks().into_iter().map(|c| (&whole, c)).collect();
    let b2: Vec<_> = split.chunks().into_iter().map(|c| (&split, c)).collect();
    let (l1, _, p1, v1) = ppo_loss_and_grad(&ac, &b1, &cfg, UpdateMode::Full).unwrap();
    let (l2, _, p2, v2) = ppo_loss_and_grad(&ac, &b2, &cfg, UpdateMode::Full).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in p1.iter().zip(&p2).chain(v1.iter().zip(&v2)) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn stag_bandit(seed: u64, total: u64) -> Trainer {
    let env = make_env(
        EnvKind::IteratedStagHunt,
        &EnvParams {
            episode_length: Some(1),
            ..EnvParams::default()
        },
    )
    .unwrap();
    let stag = make_scripted(ScriptedKind::StagAlways, env.as_ref()).unwrap();
    let pool = std::sync::Arc::new(OpponentPool::new(vec![stag]).unwrap());
    let cfg = PpoConfig {
        parallel_threads: 8,
        episode_length: 1,
        chunk_length: 1,
        minibatch_chunks: 8,
        ..PpoConfig::default()
    };
    Trainer::new(TrainerSpec {
        env,
        slots: vec![Slot::Learner(0), Slot::Pool(pool)],
        train_w: EnvKind::IteratedStagHunt.original_weights(),
        mix: RewardMix::SELFISH,
        cfg,
        total_env_steps: total,
        seed,
        identity_tag: false,
    })
    .unwrap()
}

#[test]
fn bandit_converges_to_the_better_arm() {
    // Against an always-Stag partner, Stag pays 4 and Hare pays 3.
    let mut tr = stag_bandit(5, 2000 * 8);
    let mut updates = 0;
    tr.run(|_| {
        updates += 1;
        Ok(())
    })
    .unwrap();
    assert!(updates <= 2000);
    let ac = &tr.learners[0];
    let (dist, _) = ac
        .policy
        .forward_policy(&ac.pi.data, &[-1.0, -1.0], &ac.initial_state())
        .unwrap();
    let p_stag = dist.probs()[IteratedAction::Stag as usize];
    assert!(p_stag > 0.95, "P(stag) = {p_stag}");
}

#[test]
fn buffer_rewards_are_scaled_env_rewards() {
    let mut tr = stag_bandit(9, 1000);
    let (bufs, _) = tr.collect().unwrap();
    let scale = PpoConfig::default().reward_scale;
    for (_, b) in &bufs {
        assert!(!b.is_empty());
        for (r, raw) in b.rewards.iter().zip(&b.raw_rewards) {
            assert_eq!(*r, scale * raw);
            assert!(*raw == 4.0 || *raw == 3.0);
        }
    }
}

#[test]
fn single_thread_collection_is_bit_identical() {
    let a = stag_bandit(13, 1000).collect().unwrap().0;
    let b = stag_bandit(13, 1000).collect().unwrap().0;
    assert_eq!(a.len(), b.len());
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        assert_eq!(x, y);
    }
}
