//! Scalar abstraction shared by the numerical kernels.
//!
//! Power flow, the MLP, the simplex routine and branch-and-bound are written
//! against [`Scalar`] so they run in `f32` or `f64`. Everything that touches
//! learning or the environment is instantiated at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable by every generic kernel in the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values, which never happens for `f32`/`f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Max-abs of a slice, `0` for empty input.
pub fn max_abs<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}
