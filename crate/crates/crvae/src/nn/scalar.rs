use ndarray::LinalgScalar;
use num_traits::Float;

/// Scalar type the network runs on. Training uses `f32` (checkpoints store
/// parameters as 32-bit floats); gradient-checking oracles instantiate the
/// same code at `f64`.
pub trait Element:
    LinalgScalar + Float + PartialOrd + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}
