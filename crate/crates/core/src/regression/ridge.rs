use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Rank-one updates between two full refactorizations of the covariance.
pub const REBUILD_INTERVAL: usize = 64;

/// Primal ridge state of one level: `Sigma = sum x x^T + lambda I`, one moment
/// vector `b_a = sum x y_a` per action, and the raw data.
///
/// The Cholesky factor of `Sigma` is kept current with rank-one updates and
/// rebuilt from the accumulated covariance every [`REBUILD_INTERVAL`] points.
#[derive(Clone, Debug)]
pub struct RidgeState {
    lambda: f64,
    cov: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    moments: Vec<DVector<f64>>,
    features: Vec<DVector<f64>>,
    labels: Vec<Vec<f64>>,
    updates_since_rebuild: usize,
}

impl RidgeState {
    pub fn new(dim: usize, actions: usize, lambda: f64) -> Result<Self> {
        if dim == 0 || actions == 0 {
            return Err(Error::invalid(
                "ridge state needs positive dimension and action count",
            ));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let cov = DMatrix::identity(dim, dim) * lambda;
        let factor = Cholesky::new(cov.clone()).expect("lambda I is positive definite");
        Ok(RidgeState {
            lambda,
            cov,
            factor,
            moments: vec![DVector::zeros(dim); actions],
            features: Vec::new(),
            labels: vec![Vec::new(); actions],
            updates_since_rebuild: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn action_count(&self) -> usize {
        self.moments.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of stored points `|D_h|`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    /// Labels `D_{a;h}` of `action`, aligned with [`features`](Self::features).
    pub fn labels(&self, action: usize) -> &[f64] {
        &self.labels[action]
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `theta_hat_a = Sigma^-1 b_a`.
    pub fn fit_theta(&self, action: usize) -> DVector<f64> {
        self.factor.solve(&self.moments[action])
    }

    pub fn predict(&self, action: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.fit_theta(action).dot(x))
    }

    /// `theta_hat_a^T x` for every action.
    pub fn predict_all(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        // x^T Sigma^-1 b_a = (Sigma^-1 x)^T b_a: one solve for all actions
        let w = self.factor.solve(x);
        Ok(self.moments.iter().map(|b| w.dot(b)).collect())
    }

    /// `sqrt(x^T Sigma^-1 x)`.
    pub fn elliptical_norm(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let mut y = x.clone();
        self.factor.l_dirty().solve_lower_triangular_mut(&mut y);
        Ok(y.norm())
    }

    /// Appends `x` to `D_h` and `labels[a]` to `D_{a;h}` for every action.
    pub fn add_point(&mut self, x: DVector<f64>, labels: &[f64]) -> Result<()> {
        self.check_dim(&x)?;
        if labels.len() != self.action_count() {
            return Err(Error::DimensionMismatch {
                expected: self.action_count(),
                found: labels.len(),
            });
        }
        self.cov.ger(1.0, &x, &x, 1.0);
        for ((b, list), &y) in self.moments.iter_mut().zip(&mut self.labels).zip(labels) {
            b.axpy(y, &x, 1.0);
            list.push(y);
        }
        self.updates_since_rebuild += 1;
        if self.updates_since_rebuild >= REBUILD_INTERVAL {
            self.rebuild();
        } else {
            self.factor.rank_one_update(&x, 1.0);
        }
        self.features.push(x);
        Ok(())
    }

    fn rebuild(&mut self) {
        self.factor = Cholesky::new(self.cov.clone()).expect("covariance stays positive definite");
        self.updates_since_rebuild = 0;
    }

    /// `lambda I + sum x x^T` accumulated from the stored features.
    pub fn recompute_covariance(&self) -> DMatrix<f64> {
        let mut cov = DMatrix::identity(self.dim(), self.dim()) * self.lambda;
        for x in &self.features {
            cov.ger(1.0, x, x, 1.0);
        }
        cov
    }

    /// Frobenius distance between `L L^T` and the accumulated covariance.
    pub fn factor_drift(&self) -> f64 {
        let l = self.factor.l();
        (&l * l.transpose() - self.recompute_covariance()).norm()
    }

    /// `ln det(Sigma / lambda)`.
    pub fn log_det_gain(&self) -> f64 {
        (self.factor.ln_determinant() - self.dim() as f64 * self.lambda.ln()).max(0.0)
    }
}

/// Index of the largest value, lowest index among exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
