//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: eager forward evaluation onto a tape
//! ([`Graph`]), a fixed op set sized for the micro diffusion model, and a
//! reverse pass that walks the tape once. `f64` is the reference storage
//! mode; `f32` is an optimization toggle (see [`Scalar`]). Within one
//! storage mode every op is deterministic — fixed loop order, no atomics.

mod gradcheck;
mod graph;
mod kernels;
mod params;
#[cfg(test)]
mod tests;

pub use gradcheck::{
    compare_gradients, finite_diff_gradients, gradient_check, GradCheckReport, ParamError,
};
pub use graph::{Graph, Op, ValId};
pub use params::{merge_gradients, GradMap, ParamStore};

use std::sync::Arc;

/// Storage scalar for tensors. Implemented for `f32` and `f64`.
///
/// `f64` is the reference mode (required by gradient checks); `f32` halves
/// memory traffic and is validated against `f64` on the training loss.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Human-readable mode name ("f32" / "f64").
    const MODE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const MODE: &'static str = $name;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_scalar!(f32, "f32");
impl_scalar!(f64, "f64");

/// Dense row-major tensor. Cheap to clone (shared storage).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from raw row-major data. Panics if the length does
    /// not match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![T::ZERO; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::from_vec(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the storage if shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        if Arc::strong_count(&self.data) > 1 {
            self.data = Arc::new(self.data.as_ref().clone());
        }
        Arc::get_mut(&mut self.data).expect("unshared after clone-on-write")
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    /// Same storage, new shape (must preserve element count).
    pub fn reshaped(&self, shape: &[usize]) -> Self {
        assert_eq!(self.len(), shape.iter().product::<usize>());
        Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts storage mode element-wise.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_vec(&self.shape, self.data.iter().map(|v| U::from_f64(v.to_f64())).collect())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Maximum absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> Tensor<T> {
    /// I.i.d. samples from N(0, sigma^2). Draws are made in f64 so that the
    /// f32 and f64 modes see the same stream.
    pub fn randn(shape: &[usize], sigma: f64, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * sigma)
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Uniform samples in [lo, hi), drawn in f64.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect();
        Tensor::from_vec(shape, data)
    }
}
