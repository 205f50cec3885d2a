use eqdp::env::{make_random_tabular, RewardNoise, TabularPomdp, TabularSpec};
use eqdp::estimation::continuations;
use eqdp::oracle::{self, sequence_value};
use eqdp::{GroundTruth, Pomdp};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Best summed reward over every open-loop sequence, walking the transition
/// table directly.
fn brute_force<E: GroundTruth>(env: &E) -> f64 {
    continuations(env.action_count(), env.horizon())
        .iter()
        .map(|seq| {
            let mut s = env.initial_state();
            let mut total = 0.0;
            for (h, &a) in seq.iter().enumerate() {
                total += env.reward_mean(h, s, a);
                s = env.transition(h, s, a);
            }
            total
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn scaled(env: &TabularPomdp, c: f64) -> TabularPomdp {
    let levels = env.horizon() + env.extension_levels();
    TabularPomdp::new(
        (0..levels)
            .map(|h| env.transition_table(h).to_vec())
            .collect(),
        (0..levels)
            .map(|h| env.emission_matrix(h).clone())
            .collect(),
        (0..env.horizon())
            .map(|h| env.reward_table(h) * c)
            .collect(),
        env.reward_noise(),
    )
    .unwrap()
}

#[test]
fn four_state_example_matches_enumeration() {
    let spec = TabularSpec::new(4, 4, 2, 3).noise(RewardNoise::Deterministic);
    for seed in 0..10 {
        let env = make_random_tabular(&spec, seed).unwrap();
        let sol = oracle::solve(&env, 1);
        assert_eq!(continuations(2, 3).len(), 8);
        assert!(
            (sol.optimal_value() - brute_force(&env)).abs() <= 1e-12,
            "seed {seed}"
        );
    }
}

#[test]
fn enumeration_over_many_shapes() {
    for seed in 0..40u64 {
        let (s, a, h) = (
            1 + seed as usize % 4,
            2 + seed as usize % 3,
            1 + seed as usize % 5,
        );
        let spec = TabularSpec::new(s, s + 1, a, h).min_gap(0.05);
        let env = make_random_tabular(&spec, seed).unwrap();
        let sol = oracle::solve(&env, 1);
        assert!((sol.optimal_value() - brute_force(&env)).abs() <= 1e-12);
    }
}

#[test]
fn optimal_actions_replay_to_optimal_value() {
    for seed in 0..20 {
        let env = make_random_tabular(&TabularSpec::new(3, 5, 3, 4), seed).unwrap();
        let sol = oracle::solve(&env, 1);
        assert_eq!(sol.optimal_actions.level(), 4);
        assert_eq!(
            sequence_value(&env, sol.optimal_actions.as_slice()),
            sol.optimal_value()
        );
    }
}

#[test]
fn reward_scaling_is_equivariant() {
    for seed in 0..10 {
        let env = make_random_tabular(&TabularSpec::new(3, 4, 2, 3), seed).unwrap();
        let base = oracle::solve(&env, 1);
        // dyadic factors keep every product exact on the dyadic reward grid
        for c in [0.5, 0.75, 0.25] {
            let sol = oracle::solve(&scaled(&env, c), 1);
            assert_eq!(sol.optimal_actions, base.optimal_actions);
            assert_eq!(sol.gap, base.gap.map(|g| g * c));
            for h in 0..3 {
                assert_eq!(sol.values.q[h], &base.values.q[h] * c);
                assert_eq!(sol.values.v[h], &base.values.v[h] * c);
            }
            assert!((sol.weight_norm - c * base.weight_norm).abs() <= 1e-12 * base.weight_norm);
        }
    }
}

#[test]
fn tied_optimal_actions_keep_lowest_index() {
    let env = TabularPomdp::new(
        vec![vec![vec![0, 0, 0]]],
        vec![DMatrix::identity(1, 1)],
        vec![DMatrix::from_row_slice(1, 3, &[0.25, 0.75, 0.75])],
        RewardNoise::Deterministic,
    )
    .unwrap();
    let sol = oracle::solve(&env, 1);
    assert_eq!(sol.optimal_actions.as_slice(), &[1]);
    assert_eq!(sol.gap, Some(0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bellman_consistency(seed in 0u64..10_000, s in 1usize..5, a in 2usize..4, h in 1usize..5) {
        let env = make_random_tabular(&TabularSpec::new(s, s + 2, a, h).min_sigma(0.05), seed).unwrap();
        let sol = oracle::solve(&env, 1);
        for level in 0..h {
            for state in 0..s {
                let mut best = f64::NEG_INFINITY;
                for act in 0..a {
                    let next = if level + 1 < h {
                        sol.v_star(level + 1, env.transition(level, state, act))
                    } else {
                        0.0
                    };
                    let q = sol.q_star(level, state, act);
                    prop_assert!((q - env.reward_mean(level, state, act) - next).abs() <= 1e-12);
                    best = best.max(q);
                }
                prop_assert_eq!(sol.v_star(level, state), best);
            }
        }
        if let Some(gap) = sol.gap {
            prop_assert!(gap > 0.0);
        }
    }
}
