//! Scalar abstraction for the numeric kernel.
//!
//! All core math is generic over [`Real`] so the same kernel runs at f32 or
//! f64. The crate root exports f64 aliases, which is what the protocol layer
//! and the CLI use.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Floating-point scalar usable by the kernel: f32 or f64.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from [lo, hi).
    fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;

    /// Lossless-enough conversion for reporting; kernel math never uses it.
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new(lo, hi).expect("invalid uniform bounds").sample(rng)
    }

    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new(lo, hi).expect("invalid uniform bounds").sample(rng)
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Shorthand for converting an f64 constant into the active scalar type.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from(v).expect("constant not representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn both_scalar_types_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: f64 = Real::standard_normal(&mut rng);
        let b: f32 = Real::standard_normal(&mut rng);
        assert!(a.is_finite() && b.is_finite());
        let u: f64 = Real::uniform(&mut rng, -1.0, 1.0);
        assert!((-1.0..1.0).contains(&u));
    }
}
