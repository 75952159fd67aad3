//! Floating point abstraction shared by every numeric module.

use nalgebra::RealField;
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar used throughout the crate: `f32` or `f64`.
///
/// Arithmetic and transcendental functions come from [`RealField`]; the extra
/// methods cover literal conversion and the two random draws the samplers need.
pub trait Real:
    RealField + Copy + FromPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    fn of(x: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Standard normal draw.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn is_finite_value(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardNormal as Distribution<$t>>::sample(&StandardNormal, rng)
            }

            #[inline]
            fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }

            #[inline]
            fn is_finite_value(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// `ln(2π)`.
#[inline]
pub fn ln_two_pi<T: Real>() -> T {
    T::of(1.837_877_066_409_345_5)
}

/// Log-density of `N(x; mean, var)` in one dimension.
#[inline]
pub fn log_normal_1d<T: Real>(x: T, mean: T, var: T) -> T {
    let r = x - mean;
    -(r * r / var + var.ln() + ln_two_pi::<T>()) * T::of(0.5)
}

/// Log-density of the isotropic Gaussian `N(x; mean, var·I)`.
pub fn log_normal_iso<T: Real>(x: &[T], mean: &[T], var: T) -> T {
    debug_assert_eq!(x.len(), mean.len());
    let sq: T = x.iter().zip(mean).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let d = T::of(x.len() as f64);
    -(sq / var + d * (var.ln() + ln_two_pi::<T>())) * T::of(0.5)
}

/// Numerically stable `ln Σ exp(v_i)`. Returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::of(f64::NEG_INFINITY), |m, v| if v > m { v } else { m });
    if !max.is_finite_value() {
        return max;
    }
    let s: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == T::of(f64::NEG_INFINITY) {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Softmax of log-values in place; returns the log normalizer.
pub fn softmax_in_place<T: Real>(values: &mut [T]) -> T {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}
