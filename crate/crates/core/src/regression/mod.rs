//! Ridge regression in primal form and kernel ridge regression in dual form,
//! with the elliptical uncertainty used to detect bad events.

mod kernel;
mod ridge;

pub use kernel::{median_bandwidth, BaseKernel, KernelQuery, KernelState, VARIANCE_ERROR};
pub use ridge::{argmax, RidgeState, REBUILD_INTERVAL};

/// Right-hand side minus left-hand side of the elliptical potential bound
/// `eps * N <= sqrt(N d ln(1 + N / d))`; negative means violated. This form
/// can fail for `eps^2 > ln 2` (one point in one dimension); see
/// [`proven_potential_slack`] for the bound that always holds.
pub fn potential_slack(epsilon: f64, count: usize, dim: usize) -> f64 {
    let n = count as f64;
    let d = dim as f64;
    (n * d * (1.0 + n / d).ln()).sqrt() - epsilon * n
}

/// Slack of `eps * N <= sqrt(2 N d ln(1 + N / d))`, which holds for every
/// stream of vectors with norm at most one added only while their
/// `Sigma^-1` norm exceeds `eps` (`lambda = 1`): each such `u = ||x||^2` lies
/// in `(eps^2, 1]` where `u <= 2 ln(1 + u)`, and the `ln(1 + u)` terms sum to
/// the log-determinant gain.
pub fn proven_potential_slack(epsilon: f64, count: usize, dim: usize) -> f64 {
    let n = count as f64;
    let d = dim as f64;
    (2.0 * n * d * (1.0 + n / d).ln()).sqrt() - epsilon * n
}

/// Largest `N` allowed by the elliptical potential bound for unit-norm data.
pub fn potential_max_count(epsilon: f64, dim: usize) -> usize {
    // the slack is nonnegative up to a single crossing point
    if potential_slack(epsilon, 1, dim) < 0.0 {
        return 0;
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while potential_slack(epsilon, hi, dim) >= 0.0 {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if potential_slack(epsilon, mid, dim) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
