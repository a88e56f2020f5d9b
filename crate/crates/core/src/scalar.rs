//! Scalar abstraction so the numeric core can run in either precision.
//!
//! Training normally runs in `f32`; gradient checking wants the headroom
//! of `f64`. Everything downstream is written against this trait.

use std::fmt;

use num_traits::{Float, NumAssignOps};

/// Element type for every tensor in this crate. Implemented for `f32` and
/// `f64`.
///
/// The conversions exist so generic code can fold counts and literal
/// hyperparameters into scalar arithmetic without unwrapping `T::from`
/// at every call site. `from_f64`/`from_usize` are lossy in the obvious
/// direction for `f32`.
pub trait Scalar:
    Float + NumAssignOps + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn from_usize(n: usize) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn from_usize(n: usize) -> Self {
        n as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn from_usize(n: usize) -> Self {
        n as f64
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
