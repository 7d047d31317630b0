//! Scalar abstraction for the numeric core.
//!
//! Everything numeric (tensors, the graph, the model, the trainer) is
//! generic over [`Scalar`] so the same code runs at f32 or f64. The
//! shipped tools use the f64 aliases from the crate root: checkpoints
//! and gradient checks want the full 64-bit precision.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar usable inside tensors and the computation graph.
///
/// `to_decimal` must render enough significant digits that
/// `from_decimal(to_decimal(x)) == x` bit-exactly; that is what keeps
/// checkpoints and score files lossless.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Decimal rendering that round-trips exactly through `from_decimal`.
    fn to_decimal(self) -> String;

    /// Parse a decimal rendering produced by `to_decimal` (or any plain
    /// float literal).
    fn from_decimal(text: &str) -> Option<Self>;
}

impl Scalar for f64 {
    fn to_decimal(self) -> String {
        // 17 significant digits uniquely identify an f64.
        format!("{:.16e}", self)
    }

    fn from_decimal(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}

impl Scalar for f32 {
    fn to_decimal(self) -> String {
        // 9 significant digits uniquely identify an f32.
        format!("{:.8e}", self)
    }

    fn from_decimal(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_decimal_round_trip_is_bit_exact() {
        for &x in &[
            0.0f64,
            -0.0,
            1.0,
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            -3.5e208,
            f64::MIN_POSITIVE,
        ] {
            let back = f64::from_decimal(&x.to_decimal()).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "failed for {x:e}");
        }
    }

    #[test]
    fn f32_decimal_round_trip_is_bit_exact() {
        for &x in &[0.0f32, 0.1, -2.0 / 7.0, 3.4e38, 1e-40] {
            let back = f32::from_decimal(&x.to_decimal()).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "failed for {x:e}");
        }
    }
}
