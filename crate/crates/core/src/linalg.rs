use nalgebra::DMatrix;

/// Singular values below this are treated as zero when computing ranks.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Smallest singular value of `m` as a map on its columns; zero when `m` has
/// fewer rows than columns (it cannot be left invertible).
pub fn column_sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone()
        .singular_values()
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_min_of_diagonal() {
        let m = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert!((column_sigma_min(&m) - 0.5).abs() < 1e-14);
        assert_eq!(numerical_rank(&m), 2);
    }

    #[test]
    fn wide_matrix_is_not_left_invertible() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(column_sigma_min(&m), 0.0);
        assert_eq!(numerical_rank(&m), 1);
    }
}
