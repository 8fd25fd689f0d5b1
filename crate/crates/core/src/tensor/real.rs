use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type: `f32` for training, `f64` for verification.
pub trait Real:
    Float + Sum + Debug + Display + Default + Send + Sync + 'static + std::ops::AddAssign
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`
    /// and `op(b)` of shape `k x n`. All buffers are dense row-major;
    /// `trans_*` selects a transposed view without copying.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // a logical (rows x cols) view over storage that is (rows x cols) or,
    // when transposed, (cols x rows)
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the asserts above bound every index the kernel touches
                // for the given dimensions and strides.
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
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
