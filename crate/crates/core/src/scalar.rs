//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! All geometry, decoding and loss code is written once against [`Scalar`] and
//! instantiated for `f32` (inference-side tensors) and `f64` (fitting, gradient
//! checks and evaluation).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Converts between two scalar types (through `f64`).
    #[inline]
    fn cast<U: Scalar>(self) -> U {
        U::lit(self.as_f64())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie in (0, 1).
#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy `-y ln σ(t) - (1 - y) ln(1 - σ(t))` evaluated from the logit `t`.
#[inline]
pub fn bce_with_logit<T: Scalar>(t: T, target: T) -> T {
    softplus(t) - t * target
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_inverse() {
        for &p in &[1e-6, 0.1, 0.25, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
    }

    #[test]
    fn bce_from_logit_matches_probability_form() {
        for &t in &[-5.0f64, -0.3, 0.0, 1.7, 9.0] {
            let p = sigmoid(t);
            for &y in &[0.0, 1.0] {
                let direct = -y * p.ln() - (1.0 - y) * (1.0 - p).ln();
                assert!((bce_with_logit(t, y) - direct).abs() < 1e-10);
            }
        }
        // stays finite where the probability form would hit ln(0)
        assert!(bce_with_logit(-1000.0f64, 1.0).is_finite());
        assert_eq!(bce_with_logit(0.0f64, 1.0), std::f64::consts::LN_2);
    }

    #[test]
    fn generic_over_f32() {
        let v: f32 = sigmoid(0.0f32);
        assert_eq!(v, 0.5);
        assert_eq!(f32::lit(0.25).cast::<f64>(), 0.25);
    }
}
