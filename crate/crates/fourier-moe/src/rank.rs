//! Numerical-rank diagnostics backed by a dense SVD.

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, RealMatrix};

/// Singular values of `w` in descending order.
pub fn singular_values(w: &RealMatrix) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Singular values of a complex matrix in descending order.
pub fn singular_values_complex(w: &ComplexMatrix) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Count of singular values exceeding `rel_tol` times the largest one;
/// zero for the zero matrix.
pub fn numerical_rank(w: &RealMatrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::Parameter(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    let sv = singular_values(w);
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return Ok(0);
    }
    let cutoff = rel_tol * largest;
    Ok(sv.iter().filter(|&&s| s > cutoff).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::FrequencyIndex;
    use crate::spectral::basis_kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_matrix_has_rank_zero() {
        assert_eq!(numerical_rank(&RealMatrix::zeros(4, 4), 1e-10).unwrap(), 0);
    }

    #[test]
    fn constant_matrix_has_rank_one() {
        let w = RealMatrix::from_vec(3, 5, vec![2.5; 15]);
        assert_eq!(numerical_rank(&w, 1e-10).unwrap(), 1);
    }

    #[test]
    fn rel_tol_must_be_in_unit_interval() {
        let w = RealMatrix::zeros(2, 2);
        assert!(numerical_rank(&w, 0.0).is_err());
        assert!(numerical_rank(&w, 1.0).is_err());
    }

    #[test]
    fn basis_kernels_have_numerical_rank_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let dims = (rng.gen_range(2..=8), rng.gen_range(2..=8));
            let idx = FrequencyIndex::new(rng.gen_range(0..dims.0), rng.gen_range(0..dims.1));
            let b = basis_kernel(idx, dims).unwrap();
            let sv = singular_values_complex(&b);
            assert!(sv[0] > 0.0);
            assert!(sv[1] <= 1e-10 * sv[0], "sv = {sv:?} at dims {dims:?}");
        }
    }
}
