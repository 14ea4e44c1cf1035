//! Moore–Penrose pseudoinverse of symmetric positive semidefinite matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Spectral pseudoinverse of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct SymPinv {
    sym: DMatrix<f64>,
    vectors: DMatrix<f64>,
    inv_values: DVector<f64>,
    rank: usize,
}

impl SymPinv {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        if n == 0 {
            return Self { sym: DMatrix::zeros(0, 0), vectors: DMatrix::zeros(0, 0), inv_values: DVector::zeros(0), rank: 0 };
        }
        // Symmetrize before decomposing; accumulated products are only
        // symmetric up to rounding.
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let cut = RANK_CUTOFF * max;
        let mut rank = 0;
        let inv_values = eig.eigenvalues.map(|l| {
            if max > 0.0 && l > cut {
                rank += 1;
                1.0 / l
            } else {
                0.0
            }
        });
        Self { sym, vectors: eig.eigenvectors, inv_values, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `A⁺ b`, the minimum-norm solution of `A x = b` for `b` in range(A),
    /// with one step of iterative refinement against `A`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        if self.inv_values.is_empty() {
            return DVector::zeros(0);
        }
        let x = self.apply(b);
        let r = b - &self.sym * &x;
        x + self.apply(&r)
    }

    fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut coef = self.vectors.tr_mul(b);
        coef.component_mul_assign(&self.inv_values);
        &self.vectors * coef
    }

    /// `bᵀ A⁺ b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        if self.inv_values.is_empty() {
            return 0.0;
        }
        let coef = self.vectors.tr_mul(b);
        coef.iter().zip(self.inv_values.iter()).map(|(c, l)| c * c * l).sum()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.inv_values);
        scaled * self.vectors.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_matches_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let p = SymPinv::new(&a);
        assert_eq!(p.rank(), 2);
        let inv = a.clone().try_inverse().unwrap();
        assert!((p.matrix() - inv).abs().max() < 1e-14);
    }

    #[test]
    fn rank_one_minimum_norm() {
        // A = v vᵀ with v = (1, 2); A⁺ = v vᵀ / |v|⁴.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let p = SymPinv::new(&a);
        assert_eq!(p.rank(), 1);
        let expected = &a / 25.0;
        assert!((p.matrix() - expected).abs().max() < 1e-14);
        // Penrose identities.
        let pm = p.matrix();
        assert!((&a * &pm * &a - &a).abs().max() < 1e-13);
        assert!((&pm * &a * &pm - &pm).abs().max() < 1e-13);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = p.solve(&b);
        assert!((x[0] - 0.2).abs() < 1e-14 && (x[1] - 0.4).abs() < 1e-14);
        assert!((p.quad_form(&b) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix() {
        let p = SymPinv::new(&DMatrix::zeros(3, 3));
        assert_eq!(p.rank(), 0);
        assert_eq!(p.solve(&DVector::from_vec(vec![1.0, 0.0, 0.0])).norm(), 0.0);
    }
}
