//! Logarithmic barrier transform mapping a box interval (a, A) onto the
//! whole real line, together with its inverse and the rate factors that
//! appear in the transformed dynamics.

use nalgebra::DVector;
use thiserror::Error;

/// Inputs this close to a limit are rejected rather than mapped to ±∞,
/// so the run loop gets a clean divergence signal instead of NaNs.
pub const DOMAIN_MARGIN: f64 = 1e-12;

/// One (a, A) constraint pair with a < 0 < A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitPair {
    pub lower: f64,
    pub upper: f64,
}

impl LimitPair {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(
            lower < 0.0 && 0.0 < upper,
            "limit pair must satisfy a < 0 < A, got ({lower}, {upper})"
        );
        Self { lower, upper }
    }

    fn contains(&self, y: f64) -> bool {
        y > self.lower + DOMAIN_MARGIN && y < self.upper - DOMAIN_MARGIN
    }
}

/// Per-component constraint pairs for the full 2n-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierLimits {
    pairs: Vec<LimitPair>,
}

impl BarrierLimits {
    pub fn new(pairs: Vec<LimitPair>) -> Self {
        assert!(!pairs.is_empty(), "limits must not be empty");
        Self { pairs }
    }

    /// Builds limits from parallel lower/upper vectors.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self::new(
            lower
                .iter()
                .zip(upper)
                .map(|(&a, &b)| LimitPair::new(a, b))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, i: usize) -> LimitPair {
        self.pairs[i]
    }

    /// Limits for a contiguous slice of components (e.g. the x1 block).
    pub fn slice(&self, range: std::ops::Range<usize>) -> BarrierLimits {
        BarrierLimits::new(self.pairs[range].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarrierError {
    #[error("component {index}: value {value} outside barrier domain ({lower}, {upper})")]
    OutOfDomain {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
}

/// b(y) = log(A(a − y) / (a(A − y))), strictly increasing on (a, A) with b(0) = 0.
pub fn barrier(y: f64, lim: LimitPair) -> Result<f64, BarrierError> {
    if !lim.contains(y) || !y.is_finite() {
        return Err(BarrierError::OutOfDomain {
            index: 0,
            value: y,
            lower: lim.lower,
            upper: lim.upper,
        });
    }
    let (a, big_a) = (lim.lower, lim.upper);
    Ok(((big_a * (a - y)) / (a * (big_a - y))).ln())
}

/// b⁻¹(s) = aA(eˢ − 1) / (a eˢ − A), defined for all real s with range (a, A).
pub fn barrier_inverse(s: f64, lim: LimitPair) -> f64 {
    let (a, big_a) = (lim.lower, lim.upper);
    if s >= 0.0 {
        // exp(-s) form avoids overflow for large s
        let e = (-s).exp();
        a * big_a * (1.0 - e) / (a - big_a * e)
    } else {
        let e = s.exp();
        a * big_a * (e - 1.0) / (a * e - big_a)
    }
}

/// B(s) = (a²eˢ − 2aA + A²e⁻ˢ) / (Aa² − aA²); strictly positive, equals
/// the reciprocal of d b⁻¹/ds.
pub fn rate_factor(s: f64, lim: LimitPair) -> f64 {
    let (a, big_a) = (lim.lower, lim.upper);
    (a * a * s.exp() - 2.0 * a * big_a + big_a * big_a * (-s).exp())
        / (big_a * a * a - a * big_a * big_a)
}

/// d/ds of [`rate_factor`]: (a²eˢ − A²e⁻ˢ) / (Aa² − aA²).
pub fn rate_factor_derivative(s: f64, lim: LimitPair) -> f64 {
    let (a, big_a) = (lim.lower, lim.upper);
    (a * a * s.exp() - big_a * big_a * (-s).exp()) / (big_a * a * a - a * big_a * big_a)
}

/// Componentwise barrier transform with per-component limits.
pub fn vec_barrier(y: &DVector<f64>, lims: &BarrierLimits) -> Result<DVector<f64>, BarrierError> {
    assert_eq!(y.len(), lims.dim(), "state/limits dimension mismatch");
    let mut out = DVector::zeros(y.len());
    for i in 0..y.len() {
        out[i] = barrier(y[i], lims.pair(i)).map_err(|_| BarrierError::OutOfDomain {
            index: i,
            value: y[i],
            lower: lims.pair(i).lower,
            upper: lims.pair(i).upper,
        })?;
    }
    Ok(out)
}

/// Componentwise inverse transform; total on ℝ^dim.
pub fn vec_barrier_inverse(s: &DVector<f64>, lims: &BarrierLimits) -> DVector<f64> {
    assert_eq!(s.len(), lims.dim(), "state/limits dimension mismatch");
    DVector::from_fn(s.len(), |i, _| barrier_inverse(s[i], lims.pair(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const SYM: LimitPair = LimitPair {
        lower: -1.0,
        upper: 1.0,
    };
    const WIDE: LimitPair = LimitPair {
        lower: -7.0,
        upper: 5.0,
    };

    #[test]
    fn barrier_at_origin_is_zero() {
        assert_eq!(barrier(0.0, WIDE).unwrap(), 0.0);
    }

    #[test]
    fn barrier_symmetric_pair_closed_form() {
        // reduces to log((1+y)/(1-y)) for (a, A) = (-1, 1)
        assert_relative_eq!(
            barrier(0.5, SYM).unwrap(),
            3.0f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn barrier_near_lower_limit() {
        assert_relative_eq!(
            barrier(-6.0, WIDE).unwrap(),
            (5.0f64 / 77.0).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn barrier_rejects_out_of_domain() {
        assert!(barrier(-7.0, WIDE).is_err());
        assert!(barrier(5.0, WIDE).is_err());
        assert!(barrier(-7.5, WIDE).is_err());
        assert!(barrier(5.0 - 1e-13, WIDE).is_err());
        assert!(barrier(f64::NAN, WIDE).is_err());
    }

    #[test]
    fn inverse_at_zero() {
        assert_eq!(barrier_inverse(0.0, WIDE), 0.0);
    }

    #[test]
    fn inverse_recovers_half() {
        assert_relative_eq!(barrier_inverse(3.0f64.ln(), SYM), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn inverse_stays_in_range_for_large_arguments() {
        for &s in &[-50.0, -10.0, 10.0, 50.0, 700.0, -700.0] {
            let y = barrier_inverse(s, WIDE);
            // saturates toward (but never beyond) the limits, without
            // overflow even for huge arguments
            assert!(y >= WIDE.lower && y <= WIDE.upper, "s={s} gave y={y}");
            assert!(y.is_finite());
        }
        // strictly interior while f64 resolution allows
        for &s in &[-10.0, 10.0] {
            let y = barrier_inverse(s, WIDE);
            assert!(y > WIDE.lower && y < WIDE.upper, "s={s} gave y={y}");
        }
    }

    #[test]
    fn rate_factor_symmetric_at_zero() {
        assert_relative_eq!(rate_factor(0.0, SYM), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn rate_factor_unbounded_tail() {
        assert!(rate_factor(10.0, SYM) > rate_factor(0.0, SYM));
        assert!(rate_factor(0.0, SYM) > 0.0);
    }

    #[test]
    fn rate_factor_derivative_at_zero_symmetric() {
        assert_eq!(rate_factor_derivative(0.0, SYM), 0.0);
    }

    #[test]
    fn rate_factor_derivative_closed_form() {
        let expected = (49.0 * 1.0f64.exp() - 25.0 * (-1.0f64).exp()) / 420.0;
        assert_relative_eq!(
            rate_factor_derivative(1.0, WIDE),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rate_factor_reciprocal_of_inverse_slope() {
        // B(s) * (d b⁻¹/ds) = 1, slope by central difference
        let h = 1e-6;
        for &s in &[-3.0, -1.0, 0.0, 0.7, 2.5] {
            for &lim in &[SYM, WIDE] {
                let slope = (barrier_inverse(s + h, lim) - barrier_inverse(s - h, lim)) / (2.0 * h);
                assert_relative_eq!(rate_factor(s, lim) * slope, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn vec_barrier_two_state_initial_condition() {
        let lims = BarrierLimits::from_bounds(&[-7.0, -5.0], &[5.0, 7.0]);
        let y = DVector::from_vec(vec![-6.0, 6.0]);
        let s = vec_barrier(&y, &lims).unwrap();
        assert_relative_eq!(s[0], (5.0f64 / 77.0).ln(), max_relative = 1e-12);
        assert_relative_eq!(s[1], (77.0f64 / 5.0).ln(), max_relative = 1e-12);
    }

    #[test]
    fn vec_barrier_error_names_component() {
        let lims = BarrierLimits::from_bounds(&[-7.0, -5.0], &[5.0, 7.0]);
        let y = DVector::from_vec(vec![0.0, 7.1]);
        match vec_barrier(&y, &lims) {
            Err(BarrierError::OutOfDomain { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_both_directions(y in -0.999999f64..0.999999) {
            let s = barrier(y, SYM).unwrap();
            prop_assert!((barrier_inverse(s, SYM) - y).abs() < 1e-10);
        }

        #[test]
        fn round_trip_wide_limits(y in -6.999999f64..4.999999) {
            let s = barrier(y, WIDE).unwrap();
            prop_assert!((barrier_inverse(s, WIDE) - y).abs() < 1e-10);
        }

        #[test]
        // beyond |s| ≈ 12 the inverse sits within ~1e-5 of a limit and the
        // round trip loses digits to cancellation in (a − y), (A − y)
        fn inverse_then_barrier(s in -12.0f64..12.0) {
            let y = barrier_inverse(s, WIDE);
            let s2 = barrier(y, WIDE).unwrap();
            prop_assert!((s2 - s).abs() < 1e-9 * s.abs().max(1.0));
        }

        #[test]
        fn monotone_and_sign_preserving(y1 in -6.9f64..4.9, y2 in -6.9f64..4.9) {
            let b1 = barrier(y1, WIDE).unwrap();
            let b2 = barrier(y2, WIDE).unwrap();
            if y1 < y2 {
                prop_assert!(b1 < b2);
            }
            prop_assert_eq!(b1.signum(), y1.signum());
        }

        #[test]
        fn rate_factor_positive(s in -30.0f64..30.0) {
            prop_assert!(rate_factor(s, WIDE) > 0.0);
            prop_assert!(rate_factor(s, SYM) > 0.0);
        }

        #[test]
        fn rate_factor_derivative_matches_finite_difference(s in -3.0f64..3.0) {
            let h = 1e-5;
            let fd = (rate_factor(s + h, WIDE) - rate_factor(s - h, WIDE)) / (2.0 * h);
            prop_assert!((rate_factor_derivative(s, WIDE) - fd).abs() < 1e-6);
        }
    }
}
