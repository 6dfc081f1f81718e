//! Environment invariants over random play.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpg_lab::envs::{make_env, reset, EnvKind, EnvParams, MarkovGame, MonsterHunt, Pos, RewardWeights, Snapshot};

fn random_weights(kind: EnvKind, rng: &mut impl Rng) -> RewardWeights {
    RewardWeights::unbounded((0..kind.feature_dim()).map(|_| rng.gen_range(-7.0..7.0)).collect())
}

/// Plays `steps` joint steps with random actions, resetting finished episodes.
fn random_play(kind: EnvKind, seed: u64, steps: usize, w: &RewardWeights) -> (Vec<Snapshot>, Vec<Vec<f64>>) {
    let mut env = reset(kind, &EnvParams::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut episode = 0;
    let mut states = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    for _ in 0..steps {
        if env.is_done() {
            episode += 1;
            env.reset(seed + episode);
        }
        let actions: Vec<usize> = (0..env.n_agents()).map(|_| rng.gen_range(0..env.n_actions())).collect();
        states.push(env.snapshot());
        let res = env.step(&actions, w).unwrap();
        for (r, phi) in res.rewards.iter().zip(&res.features) {
            assert_eq!(r.to_bits(), w.reward(phi).to_bits(), "{kind}: reward is not φᵀw");
        }
        rewards.push(res.rewards);
    }
    (states, rewards)
}

#[test]
fn rewards_are_bit_exact_feature_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in EnvKind::ALL {
        let w1 = random_weights(kind, &mut rng);
        let w2 = random_weights(kind, &mut rng);
        let (s1, r1) = random_play(kind, 42, 10_000, &w1);
        let (s2, r2) = random_play(kind, 42, 10_000, &w2);
        // Swapping w changes the rewards and nothing else.
        assert_eq!(s1, s2, "{kind}: trajectory depends on w");
        assert_ne!(r1, r2, "{kind}");
    }
}

#[test]
fn features_are_indicators_or_streaks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in EnvKind::ALL {
        let mut env = reset(kind, &EnvParams::default(), 3).unwrap();
        let w = kind.original_weights();
        for _ in 0..2000 {
            if env.is_done() {
                env.reset(rng.gen());
            }
            let a: Vec<usize> = (0..env.n_agents()).map(|_| rng.gen_range(0..env.n_actions())).collect();
            let res = env.step(&a, &w).unwrap();
            for phi in &res.features {
                assert_eq!(phi.len(), kind.feature_dim());
                for (k, &x) in phi.iter().enumerate() {
                    let streak = kind == EnvKind::Escalation && k == 1;
                    assert!(
                        x >= 0.0 && x.fract() == 0.0 && (streak || x <= 1.0),
                        "{kind} φ[{k}] = {x}"
                    );
                }
            }
        }
    }
}

fn pos() -> impl Strategy<Value = Pos> {
    (0usize..5, 0usize..5).prop_map(|(r, c)| Pos::new(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn monster_never_moves_away(monster in pos(), agents in proptest::collection::vec(pos(), 2..5)) {
        let closest = |m: Pos| agents.iter().map(|a| m.manhattan(*a)).min().unwrap();
        let before = closest(monster);
        let next = MonsterHunt::monster_step(monster, &agents);
        prop_assert!(next.in_grid());
        prop_assert!(monster.manhattan(next) <= 1);
        if before == 0 {
            prop_assert_eq!(next, monster);
        } else {
            prop_assert!(closest(next) < before, "{:?} -> {:?} vs {:?}", monster, next, agents);
        }
    }

    #[test]
    fn resets_place_distinct_cells(seed in any::<u64>()) {
        for kind in [EnvKind::MonsterHunt, EnvKind::Escalation] {
            let env = reset(kind, &EnvParams::default(), seed).unwrap();
            let Snapshot::Grid { agents, monster, apples, lit, .. } = env.snapshot() else { unreachable!() };
            let mut cells: Vec<Pos> = agents.clone();
            cells.extend(monster);
            cells.extend(apples);
            cells.extend(lit);
            prop_assert!(cells.iter().all(|p| p.in_grid()));
            let mut sorted = cells.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), cells.len());
            prop_assert_eq!(reset(kind, &EnvParams::default(), seed).unwrap().snapshot(), env.snapshot());
        }
    }
}

#[test]
fn monster_approaches_during_play() {
    let w = EnvKind::MonsterHunt.original_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut env = reset(EnvKind::MonsterHunt, &EnvParams::default(), 4).unwrap();
    let grid = |s: Snapshot| match s {
        Snapshot::Grid { agents, monster, .. } => (agents, monster.unwrap()),
        _ => unreachable!(),
    };
    for _ in 0..10_000 {
        if env.is_done() {
            env.reset(rng.gen());
        }
        let a: Vec<usize> = (0..2).map(|_| rng.gen_range(0..env.n_actions())).collect();
        let (_, m0) = grid(env.snapshot());
        let res = env.step(&a, &w).unwrap();
        let met = res.events[3] > 0.0;
        if met {
            // The monster respawned; its move is not observable.
            continue;
        }
        let (agents, m1) = grid(env.snapshot());
        let d = |m: Pos| agents.iter().map(|p| m.manhattan(*p)).min().unwrap();
        assert!(
            d(m1) <= d(m0),
            "monster moved away: {m0:?} -> {m1:?} with agents {agents:?}"
        );
        assert!(d(m1) < d(m0) || d(m0) == 0);
    }
}

#[test]
fn escalation_streak_counts_joint_steps() {
    let w = EnvKind::Escalation.original_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut env = reset(EnvKind::Escalation, &EnvParams::default(), 5).unwrap();
    let mut episodes = 0;
    let mut long_chains = 0;
    while episodes < 2000 {
        env.reset(rng.gen());
        let mut since_break = 0u32;
        let mut coop_total = 0u32;
        let mut breaks = 0;
        while !env.is_done() {
            // Follow the light most of the time so chains actually form.
            let Snapshot::Grid { agents, lit, .. } = env.snapshot() else {
                unreachable!()
            };
            let lit = lit.unwrap();
            let a: Vec<usize> = agents
                .iter()
                .map(|p| {
                    if rng.gen_bool(0.85) {
                        toward(*p, lit)
                    } else {
                        rng.gen_range(0..4)
                    }
                })
                .collect();
            let res = env.step(&a, &w).unwrap();
            let both_paid = res.rewards.iter().all(|&r| r == 1.0);
            if both_paid {
                since_break += 1;
                coop_total += 1;
            }
            if res.events[2] > 0.0 {
                since_break = 0;
                breaks += 1;
            }
            let Snapshot::Grid { streak, .. } = env.snapshot() else {
                unreachable!()
            };
            if res.events[1] == 0.0 {
                assert_eq!(streak, since_break);
            }
        }
        let Snapshot::Grid { streak, .. } = env.snapshot() else {
            unreachable!()
        };
        if breaks == 0 {
            // No joint departure: every (1,1) step of the episode is in L.
            assert_eq!(streak, coop_total);
        }
        if coop_total >= 3 {
            long_chains += 1;
        }
        episodes += 1;
    }
    assert!(long_chains > 100, "random play never formed chains ({long_chains})");
}

fn toward(from: Pos, to: Pos) -> usize {
    // Move::ALL order is up, down, left, right.
    if to.row < from.row {
        0
    } else if to.row > from.row {
        1
    } else if to.col < from.col {
        2
    } else if to.col > from.col {
        3
    } else {
        // Already there: bump into the wall or step aside.
        [0, 1, 2, 3][(from.row + from.col) % 4]
    }
}

#[test]
fn monster_contacts_split_into_coop_and_single() {
    let w = EnvKind::MonsterHunt.original_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut env = make_env(EnvKind::MonsterHunt, &EnvParams::default()).unwrap();
    for ep in 0..300 {
        env.reset(ep);
        let mut totals = vec![0.0; env.event_names().len()];
        while !env.is_done() {
            let a: Vec<usize> = (0..2).map(|_| rng.gen_range(0..env.n_actions())).collect();
            let res = env.step(&a, &w).unwrap();
            totals.iter_mut().zip(&res.events).for_each(|(t, e)| *t += e);
        }
        assert_eq!(totals[0] + totals[1], totals[3], "episode {ep}: {totals:?}");
    }
}

#[test]
fn always_hare_pays_ten() {
    let mut env = reset(EnvKind::IteratedStagHunt, &EnvParams::default(), 0).unwrap();
    assert_eq!(env.observe(0).unwrap(), vec![-1.0, -1.0]);
    let w = EnvKind::IteratedStagHunt.original_weights();
    let mut ret = [0.0; 2];
    while !env.is_done() {
        let res = env.step(&[1, 1], &w).unwrap();
        ret[0] += res.rewards[0];
        ret[1] += res.rewards[1];
    }
    assert_eq!(ret, [10.0, 10.0]);
}

#[test]
fn distinct_seeds_give_distinct_starts() {
    for kind in [EnvKind::MonsterHunt, EnvKind::Escalation] {
        let differ = (0..1000u64)
            .filter(|&s| {
                reset(kind, &EnvParams::default(), 2 * s).unwrap().snapshot()
                    != reset(kind, &EnvParams::default(), 2 * s + 1).unwrap().snapshot()
            })
            .count();
        assert!(differ > 900, "{kind}: {differ}");
    }
}

#[allow(dead_code)]
fn assert_object_safe(_: &dyn MarkovGame) {}
