//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Scoring, embeddings, clustering and the retrieval metrics are written
//! against [`Real`] so that callers can pick `f32` for memory-bound runs or
//! `f64` when comparing against reference values.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

/// Numerically stable `ln(Σ exp(x_i))`. Returns negative infinity for an
/// empty input or when every term is negative infinity.
pub fn log_sum_exp<F: Real>(values: impl IntoIterator<Item = F> + Clone) -> F {
    let max = values
        .clone()
        .into_iter()
        .fold(F::neg_infinity(), |m, v| if v > m { v } else { m });
    if max == F::neg_infinity() {
        return max;
    }
    let sum: F = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Total order used wherever scores are sorted: NaN compares equal so a
/// misbehaving scorer cannot poison a sort.
#[inline]
pub(crate) fn cmp_desc<F: Real>(a: F, b: F) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [-1.0f64, -2.0, -0.5];
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs.iter().copied()) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_all_neg_inf() {
        let xs = [f32::NEG_INFINITY, f32::NEG_INFINITY];
        assert_eq!(log_sum_exp(xs.iter().copied()), f32::NEG_INFINITY);
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
    }
}
