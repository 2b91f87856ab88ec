use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type accepted by every matrix, tape, and model in
/// the crate. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion of an `f64` literal into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 literal fits every float type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float converts to f64")
    }

    /// `c = a·b` for an `m×k` by `k×n` product, with each operand addressed by
    /// (row stride, column stride). `c` is overwritten.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize), c: &mut [Self]);
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize), c: &mut [Self]) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c[..m * n].fill(0.0);
                    return;
                }
                let span = |rs: isize, cs: isize, r: usize, cl: usize| {
                    (r - 1) * rs.unsigned_abs() + (cl - 1) * cs.unsigned_abs() + 1
                };
                assert!(a.0.len() >= span(a.1, a.2, m, k) && b.0.len() >= span(b.1, b.2, k, n));
                // SAFETY: the asserts above keep every strided access in bounds,
                // and `c` cannot alias the shared inputs.
                unsafe {
                    $kernel(
                        m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, 0.0, c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
