//! Intensity matrices for homogeneous continuous-time Markov chains.
//!
//! An intensity matrix Q holds the instantaneous transition rate from state x
//! to x' in its off-diagonal entries; each diagonal entry is the negated row
//! sum, so the chain leaves state x after an Exp(-Q[x,x]) dwell.

use nalgebra::DMatrix;
use rand::Rng;

use super::expm::expm;
use crate::{Error, Result};

/// Relative slack allowed when validating row sums of a full matrix.
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    q: DMatrix<f64>,
}

impl IntensityMatrix {
    /// Build from off-diagonal rates; the diagonal of `rates` is ignored and
    /// recomputed as the negated row sum.
    pub fn from_rates(rates: DMatrix<f64>) -> Result<Self> {
        if rates.nrows() != rates.ncols() || rates.nrows() == 0 {
            return Err(Error::InvalidModel(format!(
                "intensity matrix must be square and nonempty, got {}x{}",
                rates.nrows(),
                rates.ncols()
            )));
        }
        let n = rates.nrows();
        let mut q = rates;
        for x in 0..n {
            let mut exit = 0.0;
            for y in 0..n {
                if y == x {
                    continue;
                }
                let r = q[(x, y)];
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "rate ({x} -> {y}) must be finite and nonnegative, got {r}"
                    )));
                }
                exit += r;
            }
            q[(x, x)] = -exit;
        }
        Ok(Self { q })
    }

    /// Build from a complete matrix, validating that each row sums to zero.
    pub fn try_from_matrix(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() == 0 {
            return Err(Error::InvalidModel(format!(
                "intensity matrix must be square and nonempty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        for x in 0..q.nrows() {
            let mut sum = 0.0;
            let mut scale = 1.0f64;
            for y in 0..q.ncols() {
                let r = q[(x, y)];
                if !r.is_finite() {
                    return Err(Error::InvalidModel(format!("non-finite entry at ({x},{y})")));
                }
                if y != x && r < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "rate ({x} -> {y}) must be nonnegative, got {r}"
                    )));
                }
                sum += r;
                scale = scale.max(r.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidModel(format!(
                    "row {x} sums to {sum}, expected zero"
                )));
            }
        }
        Self::from_rates(q)
    }

    /// Rates drawn log-uniformly from [lo, hi] for every off-diagonal entry.
    pub fn random_log_uniform<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!(
                "log-uniform range requires 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        let mut rates = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    let u: f64 = rng.gen();
                    rates[(x, y)] = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
                }
            }
        }
        Self::from_rates(rates)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// Transition rate x -> y. The diagonal returns the negated exit rate.
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.q[(x, y)]
    }

    /// Total rate of leaving state x.
    pub fn exit_rate(&self, x: usize) -> f64 {
        -self.q[(x, x)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// P(t) = exp(Q t): probability of being in column state after time t
    /// given the row state.
    pub fn transition_probabilities(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "elapsed time must be nonnegative, got {t}"
            )));
        }
        expm(&(&self.q * t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn symmetric_two_state(rate: f64) -> IntensityMatrix {
        IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, rate, rate, 0.0]))
            .unwrap()
    }

    #[test]
    fn symmetric_two_state_closed_form_at_unit_time() {
        let q = symmetric_two_state(1.0);
        let p = q.transition_probabilities(1.0).unwrap();
        let stay = 0.5 * (1.0 + (-2.0f64).exp());
        let flip = 0.5 * (1.0 - (-2.0f64).exp());
        assert_abs_diff_eq!(p[(0, 0)], stay, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(0, 1)], flip, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(1, 0)], flip, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(1, 1)], stay, epsilon = 1e-12);
    }

    #[test]
    fn zero_time_gives_identity() {
        let q = symmetric_two_state(3.0);
        let p = q.transition_probabilities(0.0).unwrap();
        assert_abs_diff_eq!(p, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn chapman_kolmogorov_composition() {
        let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 0.8, 0.2, 1.5, 0.0, 0.5, 0.1, 0.9, 0.0],
        ))
        .unwrap();
        let (s, t) = (0.7, 1.9);
        let p_st = q.transition_probabilities(s + t).unwrap();
        let composed = q.transition_probabilities(s).unwrap() * q.transition_probabilities(t).unwrap();
        assert_abs_diff_eq!(p_st, composed, epsilon = 1e-10);
    }

    #[test]
    fn negative_time_is_rejected() {
        let q = symmetric_two_state(1.0);
        assert!(q.transition_probabilities(-0.1).is_err());
    }

    #[test]
    fn negative_rate_is_rejected() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(IntensityMatrix::from_rates(r).is_err());
    }

    #[test]
    fn unbalanced_rows_are_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0]);
        assert!(IntensityMatrix::try_from_matrix(m).is_err());
    }

    #[test]
    fn log_uniform_rates_stay_in_range() {
        let mut rng = crate::rng::substream(5, "matrix-test");
        let q = IntensityMatrix::random_log_uniform(4, 0.1, 10.0, &mut rng).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                if x != y {
                    assert!(q.rate(x, y) >= 0.1 && q.rate(x, y) <= 10.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn transition_matrix_rows_are_distributions(
            rates in proptest::collection::vec(0.0f64..5.0, 9),
            t in 0.0f64..3.0,
        ) {
            let q = IntensityMatrix::from_rates(DMatrix::from_row_slice(3, 3, &rates)).unwrap();
            let p = q.transition_probabilities(t).unwrap();
            for x in 0..3 {
                let mut sum = 0.0;
                for y in 0..3 {
                    prop_assert!(p[(x, y)] >= -1e-12);
                    sum += p[(x, y)];
                }
                prop_assert!((sum - 1.0).abs() < 1e-9, "row {} sums to {}", x, sum);
            }
        }
    }
}
