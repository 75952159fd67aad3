//! Noise predictors consumed by the backward kernels.

use crate::schedule::DiffusionSchedule;
use crate::scalar::Real;
use nalgebra::DMatrix;

/// A noise-prediction function `ε(x, t)`.
///
/// Implementations must be pure: the samplers call them concurrently from
/// many threads and rely on identical inputs giving identical outputs.
pub trait NoisePredictor<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// Writes `ε(x, t)` into `out`, with `t` indexing `sched`.
    fn predict(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize, out: &mut [T]);
}

impl<T: Real, P: NoisePredictor<T> + ?Sized> NoisePredictor<T> for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize, out: &mut [T]) {
        (**self).predict(sched, x, t, out)
    }
}

/// Predictor that always returns zero.
#[derive(Clone, Copy, Debug)]
pub struct ZeroPredictor {
    pub dim: usize,
}

impl<T: Real> NoisePredictor<T> for ZeroPredictor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, _: &DiffusionSchedule<T>, _: &[T], _: usize, out: &mut [T]) {
        out.fill(T::zero());
    }
}

/// Expresses a predictor in an orthonormal basis: `ε'(z) = Vᵀ ε(V z)`.
///
/// Because the backward mean is affine in `(x, ε)`, this yields the kernels
/// `m'(z) = Vᵀ m(V z)`.
pub struct RotatedPredictor<'a, T: Real, P> {
    inner: &'a P,
    v: DMatrix<T>,
}

impl<'a, T: Real, P: NoisePredictor<T>> RotatedPredictor<'a, T, P> {
    pub fn new(inner: &'a P, v: DMatrix<T>) -> Self {
        assert_eq!(v.nrows(), inner.dim());
        assert!(v.is_square());
        Self { inner, v }
    }
}

impl<T: Real, P: NoisePredictor<T>> NoisePredictor<T> for RotatedPredictor<'_, T, P> {
    fn dim(&self) -> usize {
        self.v.nrows()
    }

    fn predict(&self, sched: &DiffusionSchedule<T>, z: &[T], t: usize, out: &mut [T]) {
        let d = self.dim();
        let mut x = vec![T::zero(); d];
        for (r, xr) in x.iter_mut().enumerate() {
            *xr = (0..d).map(|c| self.v[(r, c)] * z[c]).sum();
        }
        let mut eps = vec![T::zero(); d];
        self.inner.predict(sched, &x, t, &mut eps);
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|r| self.v[(r, c)] * eps[r]).sum();
        }
    }
}
