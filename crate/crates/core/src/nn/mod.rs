//! Hand-written layers with explicit forward and backward passes.
//!
//! Volumes are channels-last `[T, H, W, C]`. Every layer's gradient
//! accumulator is another instance of the same layer type, so parameter
//! updates can zip weights and gradients tensor by tensor.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::Conv3d;
pub use linear::Linear;
pub use norm::{BatchNorm1d, BatchNormCache, BatchStats, GroupNorm, GroupNormCache};
pub use pool::{avg_pool3d, avg_pool3d_backward, relu, relu_backward};

use rand::Rng;

use crate::scalar::Scalar;

/// Activation volume, channels-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Vol<T> {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Vol<T> {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            t,
            h,
            w,
            c,
            data: vec![T::zero(); t * h * w * c],
        }
    }

    pub fn voxels(&self) -> usize {
        self.t * self.h * self.w
    }
}

/// Uniform initialiser in `[-bound, bound]`.
pub(crate) fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect()
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
