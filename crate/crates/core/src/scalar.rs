//! Floating-point abstraction shared by the numeric layers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: f32 or f64.
///
/// Everything that touches model parameters or gradients is written against
/// this trait. The crate root exposes `f64` aliases, which is what the
/// pipeline and the command-line front end use.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or config value.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Mathematical sign with `sign(0) = 0`.
    fn signum0(self) -> Self {
        if self > Self::zero() {
            Self::one()
        } else if self < Self::zero() {
            -Self::one()
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(0.0f64.signum0(), 0.0);
        assert_eq!((-0.0f64).signum0(), 0.0);
        assert_eq!((-2.5f32).signum0(), -1.0);
        assert_eq!(1e-300f64.signum0(), 1.0);
    }
}
