use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variances below `-VARIANCE_ERROR` signal a broken Gram factorization;
/// smaller negative values are round-off and clamp to zero.
pub const VARIANCE_ERROR: f64 = 1e-9;

/// Kernel on observation features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseKernel {
    /// `<psi(o), psi(o')>`.
    Linear,
    /// `exp(-||psi(o) - psi(o')||^2 / (2 b^2))`; `b` defaults to the median
    /// pairwise distance inside the first stored batch.
    Rbf { bandwidth: Option<f64> },
}

/// Median pairwise distance between the columns of `batch` (1 if degenerate).
pub fn median_bandwidth(batch: &DMatrix<f64>) -> f64 {
    let n = batch.ncols();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push((batch.column(i) - batch.column(j)).norm());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn k_hat(
    kernel: BaseKernel,
    bandwidth: Option<f64>,
    a: &DMatrix<f64>,
    a_mean: &DVector<f64>,
    b: &DMatrix<f64>,
    b_mean: &DVector<f64>,
) -> f64 {
    match kernel {
        BaseKernel::Linear => a_mean.dot(b_mean),
        BaseKernel::Rbf { .. } => {
            let bw = bandwidth.expect("bandwidth resolved before use");
            let scale = -0.5 / (bw * bw);
            let mut total = 0.0;
            for z in a.column_iter() {
                for w in b.column_iter() {
                    total += (scale * (z - w).norm_squared()).exp();
                }
            }
            total / (a.ncols() * b.ncols()) as f64
        }
    }
}

/// A query batch with its kernel values against every stored batch.
#[derive(Clone, Debug)]
pub struct KernelQuery {
    /// `k_hat(Z_i, Z)` for every stored batch `i`.
    pub cross: DVector<f64>,
    /// `k_hat(Z, Z)`.
    pub self_value: f64,
    batch: DMatrix<f64>,
}

/// Dual (kernel ridge) state of one level. Each datum is a batch of `M`
/// observation features; the doubly empirical kernel between batches is
/// `k_hat(Z, Z') = (1/(M M')) sum_{z, z'} k(z, z')`.
#[derive(Clone, Debug)]
pub struct KernelState {
    kernel: BaseKernel,
    bandwidth: Option<f64>,
    lambda: f64,
    batches: Vec<DMatrix<f64>>,
    means: Vec<DVector<f64>>,
    gram: DMatrix<f64>,
    labels: Vec<Vec<f64>>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl KernelState {
    pub fn new(kernel: BaseKernel, actions: usize, lambda: f64) -> Result<Self> {
        if actions == 0 {
            return Err(Error::invalid("kernel state needs at least one action"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let bandwidth = match kernel {
            BaseKernel::Rbf { bandwidth: Some(b) } if !(b > 0.0) => {
                return Err(Error::invalid("RBF bandwidth must be positive"));
            }
            BaseKernel::Rbf { bandwidth } => bandwidth,
            BaseKernel::Linear => None,
        };
        Ok(KernelState {
            kernel,
            bandwidth,
            lambda,
            batches: Vec::new(),
            means: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            labels: vec![Vec::new(); actions],
            factor: None,
        })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn action_count(&self) -> usize {
        self.labels.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn labels(&self, action: usize) -> &[f64] {
        &self.labels[action]
    }

    /// Resolved RBF bandwidth (set once the first batch is stored).
    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    fn check_batch(&self, batch: &DMatrix<f64>) -> Result<()> {
        if batch.ncols() == 0 {
            return Err(Error::invalid("observation batch is empty"));
        }
        if let Some(first) = self.batches.first() {
            if first.nrows() != batch.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: first.nrows(),
                    found: batch.nrows(),
                });
            }
        }
        Ok(())
    }

    /// Kernel values of `batch` (features as columns) against the stored data.
    pub fn query(&self, batch: &DMatrix<f64>) -> Result<KernelQuery> {
        self.check_batch(batch)?;
        let mean = batch.column_sum() / batch.ncols() as f64;
        let bandwidth = self.resolved_bandwidth(batch);
        let cross = DVector::from_iterator(
            self.len(),
            self.batches
                .iter()
                .zip(&self.means)
                .map(|(z, m)| k_hat(self.kernel, bandwidth, z, m, batch, &mean)),
        );
        let self_value = k_hat(self.kernel, bandwidth, batch, &mean, batch, &mean);
        Ok(KernelQuery {
            cross,
            self_value,
            batch: batch.clone(),
        })
    }

    /// The stored bandwidth, or the median heuristic on `batch` if none is set yet.
    fn resolved_bandwidth(&self, batch: &DMatrix<f64>) -> Option<f64> {
        match self.kernel {
            BaseKernel::Rbf { .. } => {
                Some(self.bandwidth.unwrap_or_else(|| median_bandwidth(batch)))
            }
            BaseKernel::Linear => None,
        }
    }

    /// `mu_a = k_hat^T (K_hat + lambda I)^-1 Y_a`.
    pub fn kernel_predict(&self, action: usize, query: &KernelQuery) -> f64 {
        match &self.factor {
            None => 0.0,
            Some(f) => {
                let y = DVector::from_column_slice(&self.labels[action]);
                query.cross.dot(&f.solve(&y))
            }
        }
    }

    /// Predictions for every action from one solve.
    pub fn kernel_predict_all(&self, query: &KernelQuery) -> Vec<f64> {
        match &self.factor {
            None => vec![0.0; self.action_count()],
            Some(f) => {
                let w = f.solve(&query.cross);
                self.labels
                    .iter()
                    .map(|y| w.dot(&DVector::from_column_slice(y)))
                    .collect()
            }
        }
    }

    /// `sigma^2 = k_hat(Z, Z) - ||k_hat||^2_{(K_hat + lambda I)^-1}`, clamped at zero.
    pub fn kernel_variance(&self, query: &KernelQuery) -> Result<f64> {
        let reduction = match &self.factor {
            None => 0.0,
            Some(f) => {
                let mut y = query.cross.clone();
                f.l_dirty().solve_lower_triangular_mut(&mut y);
                y.norm_squared()
            }
        };
        let v = query.self_value - reduction;
        if v < -VARIANCE_ERROR {
            return Err(Error::NumericalDegeneracy(format!(
                "kernel posterior variance {v:e} is negative"
            )));
        }
        Ok(v.max(0.0))
    }

    pub fn kernel_sigma(&self, query: &KernelQuery) -> Result<f64> {
        self.kernel_variance(query).map(f64::sqrt)
    }

    /// Stores the query batch with one label per action.
    pub fn add_batch(&mut self, query: KernelQuery, labels: &[f64]) -> Result<()> {
        if labels.len() != self.action_count() {
            return Err(Error::DimensionMismatch {
                expected: self.action_count(),
                found: labels.len(),
            });
        }
        if query.cross.len() != self.len() {
            return Err(Error::invalid(
                "kernel query is stale: the state changed after it was made",
            ));
        }
        self.bandwidth = self.resolved_bandwidth(&query.batch);
        let n = self.len();
        let mut gram = DMatrix::zeros(n + 1, n + 1);
        gram.view_mut((0, 0), (n, n)).copy_from(&self.gram);
        for i in 0..n {
            gram[(i, n)] = query.cross[i];
            gram[(n, i)] = query.cross[i];
        }
        gram[(n, n)] = query.self_value;
        let mut column = DVector::zeros(n + 1);
        column.rows_mut(0, n).copy_from(&query.cross);
        column[n] = query.self_value + self.lambda;
        self.factor = Some(match self.factor.take() {
            None => Cholesky::new(DMatrix::from_element(1, 1, column[0])).ok_or_else(|| {
                Error::NumericalDegeneracy("K_hat + lambda I lost definiteness".into())
            })?,
            Some(f) => f.insert_column(n, column),
        });
        self.gram = gram;
        for (list, &y) in self.labels.iter_mut().zip(labels) {
            list.push(y);
        }
        self.means
            .push(query.batch.column_sum() / query.batch.ncols() as f64);
        self.batches.push(query.batch);
        Ok(())
    }

    /// `ln det(I + K_hat / lambda)`.
    pub fn log_det_gain(&self) -> f64 {
        match &self.factor {
            None => 0.0,
            Some(f) => (f.ln_determinant() - self.len() as f64 * self.lambda.ln()).max(0.0),
        }
    }

    /// Smallest eigenvalue of `K_hat + lambda I`.
    pub fn min_regularized_eigenvalue(&self) -> f64 {
        if self.is_empty() {
            return self.lambda;
        }
        let shifted = &self.gram + DMatrix::identity(self.len(), self.len()) * self.lambda;
        shifted.symmetric_eigenvalues().min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_state() {
        let st = KernelState::new(BaseKernel::Linear, 2, 1.0).unwrap();
        let z = DMatrix::from_element(1, 3, 1.0);
        let q = st.query(&z).unwrap();
        assert_eq!(q.self_value, 1.0);
        assert_eq!(st.kernel_predict(0, &q), 0.0);
        assert_eq!(st.kernel_variance(&q).unwrap(), 1.0);
        assert_eq!(st.log_det_gain(), 0.0);
    }

    #[test]
    fn rbf_self_kernel_of_a_point_is_one() {
        let st = KernelState::new(
            BaseKernel::Rbf {
                bandwidth: Some(0.5),
            },
            1,
            1.0,
        )
        .unwrap();
        let q = st.query(&DMatrix::from_element(2, 1, 0.3)).unwrap();
        assert!((q.self_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_bandwidth_of_a_line() {
        let z = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 3.0]);
        // distances 1, 3, 2
        assert_eq!(median_bandwidth(&z), 2.0);
        assert_eq!(median_bandwidth(&DMatrix::zeros(2, 4)), 1.0);
    }

    #[test]
    fn stale_query_is_rejected() {
        let mut st = KernelState::new(BaseKernel::Linear, 1, 1.0).unwrap();
        let z = DMatrix::from_element(2, 2, 0.5);
        let q = st.query(&z).unwrap();
        st.add_batch(q.clone(), &[1.0]).unwrap();
        assert!(st.add_batch(q, &[1.0]).is_err());
        assert!(st.min_regularized_eigenvalue() >= 1.0 - 1e-10);
    }
}
