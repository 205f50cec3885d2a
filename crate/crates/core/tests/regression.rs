use eqdp::regression::{
    potential_slack, proven_potential_slack, BaseKernel, KernelState, RidgeState,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    gaussian_vector(rng, d).normalize()
}

/// Batch of `m` features in the unit ball, one per column.
fn batch(rng: &mut ChaCha8Rng, d: usize, m: usize) -> DMatrix<f64> {
    let mut z = DMatrix::from_fn(d, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in z.column_iter_mut() {
        let n = col.norm();
        col /= n.max(1.0);
    }
    z
}

#[test]
fn noiseless_interpolation_at_tiny_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 5;
    let theta = gaussian_vector(&mut rng, d);
    let mut st = RidgeState::new(d, 1, 1e-8).unwrap();
    for i in 0..d {
        let mut x = gaussian_vector(&mut rng, d) * 0.2;
        x[i] += 1.0;
        st.add_point(x.clone(), &[theta.dot(&x)]).unwrap();
    }
    assert!((st.fit_theta(0) - theta).norm() <= 1e-6);
}

#[test]
fn zero_point_changes_no_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut st = RidgeState::new(3, 2, 1.0).unwrap();
    for _ in 0..5 {
        st.add_point(unit_vector(&mut rng, 3), &[rng.random(), rng.random()])
            .unwrap();
    }
    let probe = unit_vector(&mut rng, 3);
    let before = st.predict_all(&probe).unwrap();
    st.add_point(DVector::zeros(3), &[5.0, -5.0]).unwrap();
    for (a, b) in before.iter().zip(st.predict_all(&probe).unwrap()) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn factor_tracks_recomputed_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 8;
    let mut st = RidgeState::new(d, 3, 1.0).unwrap();
    for n in 0..300 {
        st.add_point(unit_vector(&mut rng, d), &[0.0, 1.0, 2.0])
            .unwrap();
        assert!(st.factor_drift() <= 1e-10, "drift after {} points", n + 1);
    }
    let cov = st.covariance();
    assert!((cov - cov.transpose()).norm() <= 1e-12);
    assert!((cov - st.recompute_covariance()).norm() <= 1e-10);
    let shifted = cov - DMatrix::identity(d, d);
    assert!(shifted.symmetric_eigenvalues().min() >= -1e-10);
}

#[test]
fn kernel_prior_state() {
    let st = KernelState::new(BaseKernel::Rbf { bandwidth: None }, 2, 1.0).unwrap();
    let q = st.query(&DMatrix::from_element(3, 1, 0.2)).unwrap();
    assert_eq!(q.self_value, 1.0);
    assert_eq!(st.kernel_predict(1, &q), 0.0);
    assert_eq!(st.kernel_variance(&q).unwrap(), 1.0);
}

#[test]
fn linear_kernel_duality() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let d = 1 + trial % 8;
        let n = 5 + 9 * trial;
        let m = 1 + trial % 4;
        let mut primal = RidgeState::new(d, 2, 1.0).unwrap();
        let mut dual = KernelState::new(BaseKernel::Linear, 2, 1.0).unwrap();
        for _ in 0..n {
            let z = batch(&mut rng, d, m);
            let labels = [rng.random::<f64>(), rng.random::<f64>() * 3.0];
            let q = dual.query(&z).unwrap();
            dual.add_batch(q, &labels).unwrap();
            primal
                .add_point(z.column_sum() / m as f64, &labels)
                .unwrap();
        }
        let z = batch(&mut rng, d, m);
        let x = z.column_sum() / m as f64;
        let q = dual.query(&z).unwrap();
        let mu = dual.kernel_predict_all(&q);
        for (a, p) in primal.predict_all(&x).unwrap().into_iter().enumerate() {
            assert!((mu[a] - p).abs() <= 1e-8);
            assert!((dual.kernel_predict(a, &q) - p).abs() <= 1e-8);
        }
        let norm = primal.elliptical_norm(&x).unwrap();
        assert!((dual.kernel_variance(&q).unwrap() - norm * norm).abs() <= 1e-8);
        assert!((dual.log_det_gain() - primal.log_det_gain()).abs() <= 1e-8);
        assert!(dual.min_regularized_eigenvalue() >= 1.0 - 1e-10);
    }
}

#[test]
fn rbf_gram_stays_regularized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut st = KernelState::new(BaseKernel::Rbf { bandwidth: None }, 1, 1.0).unwrap();
    for _ in 0..40 {
        let q = st.query(&batch(&mut rng, 3, 6)).unwrap();
        st.add_batch(q, &[1.0]).unwrap();
    }
    let k = st.gram();
    assert!((k - k.transpose()).norm() == 0.0);
    assert!(st.min_regularized_eigenvalue() >= 1.0 - 1e-10);
    assert!(st.bandwidth().unwrap() > 0.0);
}

#[test]
fn factor_free_bound_fails_for_one_large_step() {
    // one unit vector in one dimension is uncovered at any eps < 1, but
    // eps * 1 > sqrt(ln 2) once eps > 0.833
    let mut st = RidgeState::new(1, 1, 1.0).unwrap();
    let x = DVector::from_element(1, 1.0);
    assert!(st.elliptical_norm(&x).unwrap() > 0.9);
    st.add_point(x.clone(), &[0.0]).unwrap();
    assert!(st.elliptical_norm(&x).unwrap() <= 0.9);
    assert!(potential_slack(0.9, st.len(), 1) < 0.0);
    assert!(proven_potential_slack(0.9, st.len(), 1) >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_never_grows_with_data(seed in 0u64..100_000, d in 1usize..7, n in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = RidgeState::new(d, 1, 1.0).unwrap();
        let probe = gaussian_vector(&mut rng, d);
        let mut last = st.elliptical_norm(&probe).unwrap();
        for _ in 0..n {
            st.add_point(gaussian_vector(&mut rng, d), &[0.0]).unwrap();
            let now = st.elliptical_norm(&probe).unwrap();
            prop_assert!(now <= last * (1.0 + 1e-12));
            last = now;
        }
    }

    #[test]
    fn gain_is_bounded_by_dimension(seed in 0u64..100_000, d in 1usize..9, n in 1usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = RidgeState::new(d, 1, 1.0).unwrap();
        for _ in 0..n {
            st.add_point(unit_vector(&mut rng, d), &[0.0]).unwrap();
        }
        let bound = d as f64 * (1.0 + n as f64 / d as f64).ln();
        prop_assert!(st.log_det_gain() >= 0.0);
        prop_assert!(st.log_det_gain() <= bound + 1e-9);
    }

    #[test]
    fn uncovered_stream_obeys_the_potential_lemma(seed in 0u64..100_000, d in 1usize..6, eps in 0.05f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = RidgeState::new(d, 1, 1.0).unwrap();
        for _ in 0..2000 {
            let x = unit_vector(&mut rng, d);
            if st.elliptical_norm(&x).unwrap() > eps {
                st.add_point(x, &[0.0]).unwrap();
            }
        }
        prop_assert!(proven_potential_slack(eps, st.len(), d) >= 0.0);
    }

    #[test]
    fn factor_free_bound_in_the_learning_regime(seed in 0u64..100_000, d in 1usize..9, eps in 0.05f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = RidgeState::new(d, 1, 1.0).unwrap();
        for _ in 0..4000 {
            let x = unit_vector(&mut rng, d);
            if st.elliptical_norm(&x).unwrap() > eps {
                st.add_point(x, &[0.0]).unwrap();
            }
        }
        prop_assert!(potential_slack(eps, st.len(), d) >= 0.0);
    }
}
