//! Scalar abstraction: `f32` or `f64`.

use rand::distributions::uniform::SampleUniform;

/// Floating-point scalar the numeric kernels are generic over.
///
/// Constants written in source as `f64` literals are converted through
/// [`Scalar::from_f64`]; for `f64` this is the identity.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + SampleUniform
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 constant representable")
    }

    fn to_f64(self) -> f64 {
        num_traits::cast::<Self, f64>(self).expect("scalar fits in f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
