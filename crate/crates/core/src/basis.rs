//! Quadratic monomial feature basis for value-function approximation.
//!
//! Each feature is a product s_i·s_j of two transformed-state components,
//! so σ(0) = 0 and ∇σ(0) = 0 hold by construction and the Jacobian is
//! available analytically.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBasis {
    dim: usize,
    pairs: Vec<(usize, usize)>,
}

impl QuadraticBasis {
    pub fn new(dim: usize, pairs: Vec<(usize, usize)>) -> Self {
        assert!(
            pairs.iter().all(|&(i, j)| i < dim && j < dim),
            "feature index out of range"
        );
        Self { dim, pairs }
    }

    /// Number of features L.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// State dimension 2n the basis is defined over.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// σ(s) ∈ ℝᴸ.
    pub fn eval(&self, s: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(s.len(), self.dim);
        DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().map(|&(i, j)| s[i] * s[j]),
        )
    }

    /// ∇σ(s) ∈ ℝᴸˣ²ⁿ, row l = ∂σ_l/∂s.
    pub fn jacobian(&self, s: &DVector<f64>) -> DMatrix<f64> {
        debug_assert_eq!(s.len(), self.dim);
        let mut jac = DMatrix::zeros(self.pairs.len(), self.dim);
        for (l, &(i, j)) in self.pairs.iter().enumerate() {
            jac[(l, i)] += s[j];
            jac[(l, j)] += s[i];
        }
        jac
    }

    /// Columns of the Jacobian belonging to the s₂ block (n..2n).
    pub fn jacobian_s2(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim / 2;
        self.jacobian(s).columns(n, n).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state_basis() -> QuadraticBasis {
        QuadraticBasis::new(2, vec![(0, 0), (0, 1), (1, 1)])
    }

    #[test]
    fn vanishes_at_origin_with_zero_jacobian() {
        let b = two_state_basis();
        let zero = DVector::zeros(2);
        assert_eq!(b.eval(&zero).amax(), 0.0);
        assert_eq!(b.jacobian(&zero).amax(), 0.0);
    }

    #[test]
    fn two_state_features() {
        let b = two_state_basis();
        let s = DVector::from_vec(vec![1.0, 2.0]);
        let sigma = b.eval(&s);
        assert_eq!(sigma.as_slice(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn two_state_s2_gradient() {
        // σ = [s₁²; s₁s₂; s₂²] ⇒ ∇_{s₂}σ = [0; s₁; 2s₂]
        let b = two_state_basis();
        let s = DVector::from_vec(vec![1.0, 1.0]);
        let j2 = b.jacobian_s2(&s);
        assert_eq!(j2.as_slice(), &[0.0, 1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn jacobian_matches_central_differences(
            v in proptest::collection::vec(-3.0f64..3.0, 4)
        ) {
            let pairs = vec![(0, 2), (1, 3), (2, 1), (3, 0), (0, 1),
                             (3, 2), (0, 0), (1, 1), (2, 2), (3, 3)];
            let b = QuadraticBasis::new(4, pairs);
            let s = DVector::from_vec(v);
            let jac = b.jacobian(&s);
            let h = 1e-5;
            for c in 0..4 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[c] += h;
                sm[c] -= h;
                let fd = (b.eval(&sp) - b.eval(&sm)) / (2.0 * h);
                for l in 0..b.len() {
                    assert_relative_eq!(jac[(l, c)], fd[l], epsilon = 1e-6);
                }
            }
        }
    }
}
