use eqdp::env::{
    make_overcomplete, make_random_tabular, Environment, OvercompleteSpec, RewardNoise,
    TabularPomdp, TabularSpec,
};
use eqdp::estimation::{
    continuations, estimate_feature, estimate_multistep_feature, estimate_reward, feature_charge,
    reward_charge,
};
use eqdp::{ActionSequence, GroundTruth, SampleAccess, Simulator};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Two states, three symbols, `p(s, a) = a`; reward mean 0.3 everywhere.
fn fixture() -> TabularPomdp {
    let g = DMatrix::from_column_slice(3, 2, &[0.5, 0.3, 0.2, 0.1, 0.1, 0.8]);
    TabularPomdp::new(
        vec![vec![vec![0, 1], vec![0, 1]]; 2],
        vec![g.clone(), g],
        vec![DMatrix::from_element(2, 2, 0.3); 2],
        RewardNoise::Bernoulli,
    )
    .unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn large_sample_feature_matches_emission_column() {
    let env = fixture();
    let sim = Simulator::new(&env, 11);
    let seq = ActionSequence::new(vec![1]);
    let x = estimate_feature(&sim, &seq, 100_000).unwrap();
    let truth = env.expected_feature(1).column(1).clone_owned();
    assert!((x.vector - truth).norm() <= 0.02);
}

#[test]
fn error_halves_when_samples_quadruple() {
    let env = fixture();
    let truth = env.expected_feature(0).column(0).clone_owned();
    let errors = |m: usize, offset: u64| -> Vec<f64> {
        (0..100)
            .map(|t| {
                let sim = Simulator::new(&env, offset + t);
                (estimate_feature(&sim, &ActionSequence::empty(), m)
                    .unwrap()
                    .vector
                    - &truth)
                    .norm()
            })
            .collect()
    };
    let ratio = median(errors(4000, 1000)) / median(errors(1000, 0));
    assert!((0.35..=0.65).contains(&ratio), "ratio {ratio}");
}

#[test]
fn estimator_is_unbiased() {
    let env = fixture();
    let sim = Simulator::new(&env, 5);
    let m = 1_000_000;
    let x = estimate_feature(&sim, &ActionSequence::empty(), m).unwrap();
    let truth = env.expected_feature(0).column(0).clone_owned();
    for i in 0..3 {
        let se = (truth[i] * (1.0 - truth[i]) / m as f64).sqrt();
        assert!((x.vector[i] - truth[i]).abs() <= 3.0 * se, "component {i}");
    }
}

#[test]
fn bernoulli_reward_concentrates() {
    let env = fixture();
    let inside = (0..200)
        .filter(|&t| {
            let sim = Simulator::new(&env, t);
            let r = estimate_reward(&sim, &ActionSequence::empty(), 0, 10_000).unwrap();
            assert!((0.0..=1.0).contains(&r));
            (r - 0.3).abs() <= 0.025
        })
        .count();
    assert!(inside >= 198, "{inside}/200");
}

#[test]
fn reward_past_horizon_is_rejected() {
    let env = fixture();
    let sim = Simulator::new(&env, 0);
    assert!(estimate_reward(&sim, &ActionSequence::new(vec![0, 1]), 0, 3).is_err());
}

#[test]
fn depth_one_is_the_plain_estimator() {
    let env = fixture();
    let (a, b) = (Simulator::new(&env, 3), Simulator::new(&env, 3));
    let seq = ActionSequence::new(vec![0]);
    let x = estimate_multistep_feature(&a, &seq, 1, 257).unwrap();
    let y = estimate_feature(&b, &seq, 257).unwrap();
    assert_eq!(x, y);
}

#[test]
fn stacked_dimension() {
    let env =
        Environment::from(make_overcomplete(&OvercompleteSpec::new(3, 2, 2, 3, 3), 1).unwrap());
    let sim = Simulator::new(&env, 0);
    let x = estimate_multistep_feature(&sim, &ActionSequence::empty(), 3, 4).unwrap();
    assert_eq!(sim.tuple_feature_dim(3), 8);
    assert_eq!(x.dim(), 8 * 4);
    assert_eq!(x.future_depth, 3);
}

#[test]
fn stacked_estimate_matches_exact_outcome_tensor() {
    let env =
        Environment::from(make_overcomplete(&OvercompleteSpec::new(3, 2, 2, 3, 2), 4).unwrap());
    let sim = Simulator::new(&env, 9);
    for seq in [vec![], vec![1], vec![0, 1]] {
        let seq = ActionSequence::new(seq);
        let state = sim.reach(&seq).unwrap().index;
        let x = estimate_multistep_feature(&sim, &seq, 2, 100_000).unwrap();
        let exact: Vec<f64> = continuations(2, 1)
            .iter()
            .flat_map(|c| {
                env.expected_tuple_feature(seq.level(), state, c)
                    .iter()
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();
        assert!((x.vector - DVector::from_vec(exact)).norm() <= 0.02);
    }
}

#[test]
fn ledger_delta_equals_declared_charge() {
    let env =
        Environment::from(make_overcomplete(&OvercompleteSpec::new(3, 2, 2, 3, 2), 2).unwrap());
    let sim = Simulator::new(&env, 0);
    for (level, depth, m) in [(0, 1, 7), (2, 2, 5), (1, 2, 3), (2, 1, 4)] {
        let seq = ActionSequence::new(vec![1; level]);
        let before = sim.ledger();
        estimate_multistep_feature(&sim, &seq, depth, m).unwrap();
        assert_eq!(
            sim.ledger().delta(&before),
            feature_charge(&sim, level, depth, m)
        );
        let before = sim.ledger();
        estimate_reward(&sim, &seq, 0, m).unwrap();
        assert_eq!(sim.ledger().delta(&before), reward_charge(level, m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimates_stay_in_the_feature_ball(seed in 0u64..1000, m in 1usize..50, depth in 1usize..4) {
        let env = Environment::from(make_overcomplete(&OvercompleteSpec::new(3, 2, 2, 2, 2), seed % 50).unwrap());
        let sim = Simulator::new(&env, seed);
        let x = estimate_multistep_feature(&sim, &ActionSequence::new(vec![1]), depth, m).unwrap();
        let blocks = 2f64.powi(depth as i32 - 1);
        prop_assert!(x.vector.norm() <= blocks.sqrt() + 1e-12);
        prop_assert_eq!(x.sample_count, m);
    }

    #[test]
    fn tabular_feature_is_a_distribution(seed in 0u64..1000, m in 1usize..200) {
        let env = make_random_tabular(&TabularSpec::new(2, 3, 2, 2), seed % 40).unwrap();
        let sim = Simulator::new(&env, seed);
        let x = estimate_feature(&sim, &ActionSequence::new(vec![0]), m).unwrap();
        prop_assert!((x.vector.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(x.vector.norm() <= 1.0 + 1e-12);
    }
}
