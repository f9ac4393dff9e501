//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Images, tensors, losses and networks are generic over [`Scalar`], which
//! is implemented for `f32` (training and inference) and `f64` (gradient
//! checks and analytic tests).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use safetensors::Dtype;

/// A real floating-point scalar with a dense matrix-multiply kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// On-disk tensor dtype.
    const DTYPE: Dtype;
    /// Width in bytes.
    const BYTES: usize;

    /// `c = a · b (+ c if accumulate)` for row-major matrices, where `a` is
    /// `m×k` (or stored `k×m` when `trans_a`) and `b` is `k×n` (or stored
    /// `n×k` when `trans_b`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// Converts an `f64` constant. Never fails for the implemented types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Logical matrix is rows×cols; storage is transposed when `trans`.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: Dtype = $dtype;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs size");
                assert_eq!(b.len(), k * n, "gemm: rhs size");
                assert_eq!(c.len(), m * n, "gemm: output size");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c.iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the length assertions above guarantee every strided
                // access stays inside the three slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, Dtype::F32, matrixmultiply::sgemm);
impl_scalar!(f64, Dtype::F64, matrixmultiply::dgemm);
