//! Scalar abstraction shared by the plain `f64` simulation path and the
//! forward-mode dual-number path used for gradients.

use std::ops::{Add, Div, Mul, Sub};

use nalgebra::RealField;
use num_dual::DualSVec64;

/// A real scalar the dynamics can be evaluated in.
///
/// Branching decisions (relu kinks, contact culling, cone saturation) are
/// always taken on [`Real::re`], so the dual path follows exactly the same
/// branches as the `f64` path.
pub trait Real:
    RealField
    + Copy
    + Send
    + Sync
    + From<f64>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Real (primal) part.
    fn re(&self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
}

impl<const N: usize> Real for DualSVec64<N> {
    #[inline]
    fn re(&self) -> f64 {
        self.re
    }
}

/// `max(x, 0)` with derivative 0 at the kink.
#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x.re() > 0.0 {
        x
    } else {
        T::zero()
    }
}

/// Logistic function, evaluated in a form that does not overflow.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x.re() >= 0.0 {
        let e = (-x).exp();
        T::one() / (e + 1.0)
    } else {
        let e = x.exp();
        e / (e + 1.0)
    }
}

/// Lifts a real value into `T` as a constant.
#[inline]
pub fn lift<T: Real>(x: f64) -> T {
    T::from(x)
}
