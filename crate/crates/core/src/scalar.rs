// SPDX-License-Identifier: MIT OR Apache-2.0

//! Floating-point scalar abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point: `f32` or `f64`.
///
/// Kernels are written once over this trait. Moment sums and dot products
/// accumulate in `f64` regardless of the storage type, so an `f32` dump and
/// its `f64` promotion give the same statistics up to input rounding.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Widen to `f64`. Infallible for the implementors.
    #[inline]
    fn widen(self) -> f64 {
        // ToPrimitive::to_f64 cannot fail for f32/f64.
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Narrow from `f64`, rounding to nearest.
    #[inline]
    fn narrow(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
