//! Floating point element type and the inner kernels everything else calls.
//!
//! All matrix products reduce to `y += a * x` over contiguous rows, which
//! keeps the accumulation order fixed (left to right over the shared
//! dimension) no matter which instruction set ends up executing it. The
//! AVX2 variants are the same loop compiled with wider registers; IEEE
//! semantics forbid fusing the multiply and add, so results are bitwise
//! identical across code paths.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    const NAME: &'static str;

    /// `y[i] += alpha * x[i]` for every `i`.
    fn axpy(alpha: Self, x: &[Self], y: &mut [Self]);

    /// Lossless-enough conversion used at API boundaries.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

#[inline(always)]
fn axpy_plain<T: Copy + std::ops::Mul<Output = T> + std::ops::Add<Output = T>>(
    alpha: T,
    x: &[T],
    y: &mut [T],
) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    #[target_feature(enable = "avx2")]
    pub unsafe fn axpy_f64(alpha: f64, x: &[f64], y: &mut [f64]) {
        super::axpy_plain(alpha, x, y)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn axpy_f32(alpha: f32, x: &[f32], y: &mut [f32]) {
        super::axpy_plain(alpha, x, y)
    }

    pub fn has_avx2() -> bool {
        std::is_x86_feature_detected!("avx2")
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn axpy(alpha: Self, x: &[Self], y: &mut [Self]) {
        debug_assert_eq!(x.len(), y.len());
        #[cfg(target_arch = "x86_64")]
        if x86::has_avx2() {
            // SAFETY: guarded by runtime detection of the enabled feature.
            unsafe { x86::axpy_f64(alpha, x, y) };
            return;
        }
        axpy_plain(alpha, x, y)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn axpy(alpha: Self, x: &[Self], y: &mut [Self]) {
        debug_assert_eq!(x.len(), y.len());
        #[cfg(target_arch = "x86_64")]
        if x86::has_avx2() {
            // SAFETY: guarded by runtime detection of the enabled feature.
            unsafe { x86::axpy_f32(alpha, x, y) };
            return;
        }
        axpy_plain(alpha, x, y)
    }
}

/// Selects the element type at run time, for tools that take a `--precision` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => f.write_str("f32"),
            Precision::F64 => f.write_str("f64"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axpy_matches_plain_loop() {
        let x: Vec<f64> = (0..37).map(|i| i as f64 * 0.37 - 3.0).collect();
        let mut y: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let mut expected = y.clone();
        for (e, xi) in expected.iter_mut().zip(&x) {
            *e += 1.7 * xi;
        }
        f64::axpy(1.7, &x, &mut y);
        assert_eq!(y, expected);
    }

    #[test]
    fn axpy_f32_matches_plain_loop() {
        let x: Vec<f32> = (0..19).map(|i| i as f32 * 0.5).collect();
        let mut y = vec![1.0f32; 19];
        f32::axpy(-2.0, &x, &mut y);
        for (i, v) in y.iter().enumerate() {
            assert_eq!(*v, 1.0 - 2.0 * (i as f32 * 0.5));
        }
    }
}
