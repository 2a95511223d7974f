//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the filters are generic over (`f32` or `f64`).
///
/// Transcendental functions come from [`RealField`]; literal and lossy
/// conversions come from `num-traits`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal must be representable")
}

/// Lossy conversion back to `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Pairwise (tree) summation. The reduction order depends only on the
/// slice length, never on how the values were produced.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().fold(T::zero(), |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `log Σ exp(v)`, stable against overflow. Returns `-inf` when every
/// entry is `-inf` (or the slice is empty).
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let neg_inf = lit::<T>(f64::NEG_INFINITY);
    let max = values
        .iter()
        .copied()
        .fold(neg_inf, |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<T> = values.iter().map(|&v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_and_large_inputs() {
        let small = [1.0_f64, 2.0, 3.5];
        assert_eq!(pairwise_sum(&small), 6.5);
        let large: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&large), 499_500.0);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0_f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = [-1e308_f64, 0.0];
        assert!(log_sum_exp(&v).abs() < 1e-12);
        let v = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(log_sum_exp(&v), f64::NEG_INFINITY);
    }

    #[test]
    fn works_in_single_precision() {
        let v = [0.0_f32, 0.0, 0.0, 0.0];
        assert!((log_sum_exp(&v) - 4f32.ln()).abs() < 1e-6);
        assert_eq!(lit::<f32>(0.5), 0.5);
    }
}
