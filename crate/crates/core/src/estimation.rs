//! Monte-Carlo estimators used by the learner.
//!
//! Every sample comes from a fresh episode (`SampleAccess::fresh_stream`), so no
//! observation or reward is ever shared between two estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{ActionSequence, LedgerSnapshot, SampleAccess};

/// All action sequences of length `len` in lexicographic order (first action
/// most significant). `len == 0` yields the single empty continuation.
pub fn continuations(actions: usize, len: usize) -> Vec<Vec<usize>> {
    let count = actions.pow(len as u32);
    (0..count)
        .map(|mut i| {
            let mut c = vec![0; len];
            for slot in c.iter_mut().rev() {
                *slot = i % actions;
                i /= actions;
            }
            c
        })
        .collect()
}

/// Empirical mean feature at `source` with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatedFeature {
    pub vector: DVector<f64>,
    pub sample_count: usize,
    pub level: usize,
    pub source: ActionSequence,
    pub future_depth: usize,
}

impl EstimatedFeature {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

fn check_count(m: usize, name: &str) -> Result<()> {
    if m == 0 {
        Err(Error::invalid(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// `x_hat_h(seq) = (1/M) sum_i psi(o_i)` over `m` fresh episodes.
pub fn estimate_feature<S: SampleAccess + ?Sized>(
    access: &S,
    seq: &ActionSequence,
    m: usize,
) -> Result<EstimatedFeature> {
    check_count(m, "M")?;
    let d = access.feature_dim();
    let mut sum = DVector::zeros(d);
    let mut buf = vec![0.0; d];
    for _ in 0..m {
        let obs = access.sample_observation(seq, &access.fresh_stream())?;
        access.write_feature(&obs, &mut buf);
        for (acc, &v) in sum.iter_mut().zip(&buf) {
            *acc += v;
        }
    }
    Ok(EstimatedFeature {
        vector: sum / m as f64,
        sample_count: m,
        level: seq.level(),
        source: seq.clone(),
        future_depth: 1,
    })
}

/// Mean of `m_prime` fresh reward draws for `action` at `seq`.
pub fn estimate_reward<S: SampleAccess + ?Sized>(
    access: &S,
    seq: &ActionSequence,
    action: usize,
    m_prime: usize,
) -> Result<f64> {
    check_count(m_prime, "M'")?;
    let mut total = 0.0;
    for _ in 0..m_prime {
        total += access.sample_reward(seq, action, &access.fresh_stream())?;
    }
    Ok(total / m_prime as f64)
}

/// Length of the stacked `K`-step feature: `dim(psi_K) * A^(K-1)`.
pub fn stacked_feature_dim<S: SampleAccess + ?Sized>(env: &S, depth: usize) -> usize {
    if depth <= 1 {
        env.feature_dim()
    } else {
        env.tuple_feature_dim(depth) * env.action_count().pow(depth as u32 - 1)
    }
}

/// Stacked `K`-step feature: for each continuation of length `K - 1`
/// (lexicographic), the mean over `m` episodes of the tuple feature of the
/// `K` observations; blocks are concatenated. `K = 1` is [`estimate_feature`].
pub fn estimate_multistep_feature<S: SampleAccess + ?Sized>(
    access: &S,
    seq: &ActionSequence,
    depth: usize,
    m: usize,
) -> Result<EstimatedFeature> {
    if depth == 0 {
        return Err(Error::invalid("future depth must be at least 1"));
    }
    if depth == 1 {
        return estimate_feature(access, seq, m);
    }
    check_count(m, "M")?;
    if seq.level() >= access.horizon() {
        return Err(Error::HorizonExceeded {
            level: seq.level(),
            horizon: access.horizon(),
        });
    }
    let block = access.tuple_feature_dim(depth);
    let conts = continuations(access.action_count(), depth - 1);
    let mut vector = DVector::zeros(block * conts.len());
    let mut buf = vec![0.0; block];
    for (c, cont) in conts.iter().enumerate() {
        let mut sum = vec![0.0; block];
        for _ in 0..m {
            let obs = access.sample_future(seq, cont, &access.fresh_stream())?;
            access.write_tuple_feature(&obs, &mut buf);
            for (acc, &v) in sum.iter_mut().zip(&buf) {
                *acc += v;
            }
        }
        for (i, v) in sum.into_iter().enumerate() {
            vector[c * block + i] = v / m as f64;
        }
    }
    Ok(EstimatedFeature {
        vector,
        sample_count: m,
        level: seq.level(),
        source: seq.clone(),
        future_depth: depth,
    })
}

/// Ledger charge of one [`estimate_multistep_feature`] call at `level`.
pub fn feature_charge<S: SampleAccess + ?Sized>(
    access: &S,
    level: usize,
    depth: usize,
    m: usize,
) -> LedgerSnapshot {
    let conts = access.action_count().pow(depth as u32 - 1) as u64;
    let episodes = m as u64 * conts;
    let (steps, obs) = if depth == 1 {
        (level as u64, 1)
    } else {
        access.future_charge(level, depth)
    };
    LedgerSnapshot {
        episodes,
        steps: episodes * steps,
        obs_samples: episodes * obs,
        reward_samples: 0,
        clipped_features: 0,
    }
}

/// Ledger charge of one [`estimate_reward`] call at `level`.
pub fn reward_charge(level: usize, m_prime: usize) -> LedgerSnapshot {
    let n = m_prime as u64;
    LedgerSnapshot {
        episodes: n,
        steps: n * (level as u64 + 1),
        obs_samples: 0,
        reward_samples: n,
        clipped_features: 0,
    }
}

/// The `M` individual observation features at `seq`, one column each; the
/// kernel learner keeps these instead of only their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub samples: DMatrix<f64>,
    pub level: usize,
    pub source: ActionSequence,
}

impl FeatureBatch {
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn mean(&self) -> DVector<f64> {
        self.samples.column_sum() / self.len() as f64
    }

    pub fn to_estimate(&self) -> EstimatedFeature {
        EstimatedFeature {
            vector: self.mean(),
            sample_count: self.len(),
            level: self.level,
            source: self.source.clone(),
            future_depth: 1,
        }
    }
}

/// Draws `m` fresh observations at `seq` and keeps every feature. Consumes the
/// same streams and ledger charge as [`estimate_feature`].
pub fn collect_batch<S: SampleAccess + ?Sized>(
    access: &S,
    seq: &ActionSequence,
    m: usize,
) -> Result<FeatureBatch> {
    check_count(m, "M")?;
    let d = access.feature_dim();
    let mut samples = DMatrix::zeros(d, m);
    let mut buf = vec![0.0; d];
    for i in 0..m {
        let obs = access.sample_observation(seq, &access.fresh_stream())?;
        access.write_feature(&obs, &mut buf);
        samples.column_mut(i).copy_from_slice(&buf);
    }
    Ok(FeatureBatch {
        samples,
        level: seq.level(),
        source: seq.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::tests::XorChain;
    use crate::pomdp::Simulator;

    #[test]
    fn continuation_order_is_lexicographic() {
        assert_eq!(continuations(2, 0), vec![Vec::<usize>::new()]);
        assert_eq!(
            continuations(2, 2),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        assert_eq!(continuations(3, 1), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn deterministic_emission_is_exact() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 4);
        let x = estimate_feature(&sim, &ActionSequence::from(vec![1]), 17).unwrap();
        assert_eq!(x.vector.as_slice(), &[0.0, 1.0]);
        assert_eq!(x.sample_count, 17);
        assert_eq!(sim.ledger().episodes, 17);
    }

    #[test]
    fn zero_samples_rejected() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 4);
        assert!(estimate_feature(&sim, &ActionSequence::empty(), 0).is_err());
        assert!(estimate_reward(&sim, &ActionSequence::empty(), 0, 0).is_err());
    }

    #[test]
    fn deterministic_reward_single_draw() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 4);
        assert_eq!(
            estimate_reward(&sim, &ActionSequence::empty(), 1, 1).unwrap(),
            0.7
        );
    }

    #[test]
    fn multistep_layout_and_charge() {
        let env = XorChain { horizon: 3 };
        let sim = Simulator::new(&env, 4);
        let seq = ActionSequence::from(vec![1]);
        let x = estimate_multistep_feature(&sim, &seq, 2, 5).unwrap();
        // continuation [0]: (1, 1) -> index 3; continuation [1]: (1, 0) -> index 2
        assert_eq!(
            x.vector.as_slice(),
            &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(sim.ledger(), feature_charge(&sim, 1, 2, 5));
    }

    #[test]
    fn batch_mean_matches_estimate() {
        let env = XorChain { horizon: 3 };
        let a = Simulator::new(&env, 8);
        let b = Simulator::new(&env, 8);
        let seq = ActionSequence::from(vec![1, 0]);
        let batch = collect_batch(&a, &seq, 6).unwrap();
        let est = estimate_feature(&b, &seq, 6).unwrap();
        assert_eq!(batch.to_estimate(), est);
        assert_eq!(a.ledger(), b.ledger());
    }
}
